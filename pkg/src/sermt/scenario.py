"""Scenario configuration and batch execution.

A scenario is a line-oriented `key = value` file with `[section]` headers
(stdlib configparser syntax): `[scenario]` holds the topology, node counts,
duration, mandatory seed, and the defense toggle; optional `[radio]`,
`[energy]`, and `[protocol]` sections override model constants; each
`[attack:<name>]` section declares one attack. `run_scenario` executes the
full pipeline deterministically; `sweep` runs a malicious-count or
attack-interval series with the defense both on and off.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields as dataclass_fields, replace
from pathlib import Path

from . import rng as rngmod
from .adversary import (AttackOutcomeLog, AttackSpec, apply_attacks,
                        confidentiality_scan)
from .entities import Network
from .grid import build_layout, load_grid_file
from .metrics import Metrics, SweepRow, collect_metrics
from .protocol import ProtocolConfig, ProtocolEngine
from .simcore import Channel, EnergyModel, EventQueue, RadioModel, Trace

DATA_DIR = Path(__file__).with_name("data")

MALICIOUS_COUNTS = (5, 10, 15, 20, 25, 30, 35)
ATTACK_INTERVALS = tuple(float(v) for v in range(1, 11))


class ConfigError(ValueError):
    """The scenario file is missing, malformed, or inconsistent."""


class SimulationFault(RuntimeError):
    """A run violated an internal invariant (e.g. the energy ledger)."""


@dataclass(frozen=True)
class ScenarioConfig:
    topology_path: Path
    radius_threshold: float
    n_nodes: int
    es_nodes: int
    duration: float
    seed: int
    defense: bool = True
    radio: RadioModel = field(default_factory=RadioModel)
    energy: EnergyModel = field(default_factory=EnergyModel)
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)
    attacks: tuple[AttackSpec, ...] = ()

    def __post_init__(self):
        if self.duration <= 0:
            raise ConfigError("duration must be positive")
        if self.n_nodes < 0 or self.es_nodes < 0:
            raise ConfigError("node counts must be non-negative")


def _parse_bool(raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _number_list(raw: str) -> list[str]:
    return [part for part in raw.replace(",", " ").split() if part]


def _build_model(cls, section, label: str):
    """Instantiate a defaults-complete dataclass from a config section,
    casting each value to the type of the field's default."""
    defaults = cls()
    known = {f.name: getattr(defaults, f.name) for f in dataclass_fields(cls)}
    values = {}
    for key, raw in section.items():
        if key not in known:
            raise ConfigError(f"[{label}] unknown key {key!r}")
        default = known[key]
        try:
            if isinstance(default, bool):
                values[key] = _parse_bool(raw)
            elif isinstance(default, int):
                values[key] = int(raw)
            elif isinstance(default, float):
                values[key] = float(raw)
            else:
                values[key] = raw
        except ValueError as exc:
            raise ConfigError(f"[{label}] bad value for {key}: {exc}") from exc
    return cls(**values)


_ATTACK_KEYS = ("kind", "targets", "count", "start_time", "attack_interval",
                "flood_rate", "personas", "drop_fraction", "corrupt_fraction",
                "foreign", "position")


def _parse_attack(label: str, section) -> AttackSpec:
    for key in section:
        if key not in _ATTACK_KEYS:
            raise ConfigError(f"[attack:{label}] unknown key {key!r}")
    if "kind" not in section:
        raise ConfigError(f"[attack:{label}] needs a kind")
    kwargs: dict = {"kind": section["kind"].strip().upper(), "name": label}
    try:
        if "targets" in section:
            kwargs["target_ids"] = tuple(int(x) for x in _number_list(section["targets"]))
        if "count" in section:
            kwargs["count"] = int(section["count"])
        for key in ("start_time", "attack_interval", "drop_fraction",
                    "corrupt_fraction"):
            if key in section:
                kwargs[key] = float(section[key])
        for key in ("flood_rate", "personas"):
            if key in section:
                kwargs[key] = int(section[key])
        if "foreign" in section:
            kwargs["foreign"] = _parse_bool(section["foreign"])
        if "position" in section:
            coords = [float(x) for x in _number_list(section["position"])]
            if len(coords) != 2:
                raise ValueError("position needs exactly two coordinates")
            kwargs["position"] = (coords[0], coords[1])
    except ValueError as exc:
        raise ConfigError(f"[attack:{label}] {exc}") from exc
    return AttackSpec(**kwargs)


def _resolve_topology(raw: str, config_dir: Path) -> Path:
    candidates = [Path(raw)]
    if not Path(raw).is_absolute():
        candidates = [config_dir / raw, DATA_DIR / raw]
    for candidate in candidates:
        if candidate.is_file():
            return candidate
    raise ConfigError(f"topology file {raw!r} not found "
                      f"(searched {', '.join(str(c) for c in candidates)})")


def load_config(path: Path | str, *, seed_override: int | None = None) -> ScenarioConfig:
    path = Path(path)
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"),
                                       interpolation=None)
    try:
        with open(path, encoding="utf-8") as handle:
            parser.read_file(handle)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc

    if "scenario" not in parser:
        raise ConfigError(f"{path}: missing [scenario] section")
    sect = parser["scenario"]
    for key in ("topology", "radius_threshold", "n_nodes", "es_nodes", "duration"):
        if key not in sect:
            raise ConfigError(f"[scenario] missing required key {key!r}")
    if seed_override is not None:
        seed = seed_override
    elif "seed" in sect:
        try:
            seed = int(sect["seed"])
        except ValueError as exc:
            raise ConfigError(f"[scenario] bad seed: {exc}") from exc
    else:
        raise ConfigError("[scenario] seed is required (runs must be reproducible)")

    defense_raw = sect.get("defense", "sermt").strip().lower()
    if defense_raw not in ("sermt", "baseline"):
        raise ConfigError("[scenario] defense must be 'sermt' or 'baseline'")
    defense = defense_raw == "sermt"

    known = {"topology", "radius_threshold", "n_nodes", "es_nodes", "duration",
             "seed", "defense"}
    for key in sect:
        if key not in known:
            raise ConfigError(f"[scenario] unknown key {key!r}")

    try:
        radius = float(sect["radius_threshold"])
        n_nodes = int(sect["n_nodes"])
        es_nodes = int(sect["es_nodes"])
        duration = float(sect["duration"])
    except ValueError as exc:
        raise ConfigError(f"[scenario] {exc}") from exc

    radio = (_build_model(RadioModel, parser["radio"], "radio")
             if "radio" in parser else RadioModel())
    energy = (_build_model(EnergyModel, parser["energy"], "energy")
              if "energy" in parser else EnergyModel())
    if "protocol" in parser:
        if "defense" in parser["protocol"]:
            raise ConfigError("defense belongs in [scenario], not [protocol]")
        protocol = _build_model(ProtocolConfig, parser["protocol"], "protocol")
    else:
        protocol = ProtocolConfig()

    attacks = []
    for name in parser.sections():
        if name in ("scenario", "radio", "energy", "protocol"):
            continue
        if not name.startswith("attack:"):
            raise ConfigError(f"unknown section [{name}]")
        attacks.append(_parse_attack(name[len("attack:"):], parser[name]))

    return ScenarioConfig(
        topology_path=_resolve_topology(sect["topology"], path.parent),
        radius_threshold=radius, n_nodes=n_nodes, es_nodes=es_nodes,
        duration=duration, seed=seed, defense=defense,
        radio=radio, energy=energy, protocol=protocol, attacks=tuple(attacks))


# -- execution --------------------------------------------------------------------

@dataclass
class ScenarioResult:
    config: ScenarioConfig
    metrics: Metrics
    trace: Trace
    attack_logs: list[AttackOutcomeLog]
    network: Network
    channel: Channel
    engine: ProtocolEngine

    def trace_export(self) -> str:
        """Full run record: the event trace plus one summary row per attack."""
        lines = list(self.trace.lines)
        for log in self.attack_logs:
            counters = " ".join(f"{key}={value}"
                                for key, value in sorted(log.counters().items()))
            targets = ",".join(str(t) for t in log.targets)
            lines.append(f"{self.config.duration:.6f} | attack | "
                         f"{log.name}:{log.kind} | targets:{targets} | {counters}")
        return "\n".join(lines) + "\n"


def run_scenario(config: ScenarioConfig) -> ScenarioResult:
    topology = load_grid_file(config.topology_path)
    substations, regions, deployment = build_layout(
        topology, config.radius_threshold,
        {"n_nodes": config.n_nodes, "es_nodes": config.es_nodes}, config.seed)
    network = Network(deployment, substations, regions, topology,
                      initial_battery=config.energy.initial_battery)
    queue, trace = EventQueue(), Trace()
    channel = Channel(network, config.radio, config.energy, trace, queue,
                      rngmod.substream(config.seed, "loss"))
    engine = ProtocolEngine(network, channel, queue, trace,
                            replace(config.protocol, defense=config.defense),
                            config.seed)
    engine.start()
    attack_logs = apply_attacks(list(config.attacks), network, channel, engine,
                                queue, config.seed)
    queue.run_until(config.duration)
    channel.finalize(config.duration)
    errors = channel.conservation_errors()
    if errors:
        raise SimulationFault("energy ledger check failed: " + "; ".join(errors[:3]))
    exposures = confidentiality_scan(channel, engine, attack_logs)
    metrics = collect_metrics(network, channel, engine, attack_logs,
                              config.duration, exposures)
    return ScenarioResult(config=config, metrics=metrics, trace=trace,
                          attack_logs=attack_logs, network=network,
                          channel=channel, engine=engine)


def _sweep_attacks(vary: str, value: float) -> tuple[AttackSpec, ...]:
    if vary == "malicious":
        count = int(value)
        sinkholes = count // 5          # mostly droppers, a sinkhole per five
        drops = count - sinkholes
        specs = []
        if drops:
            specs.append(AttackSpec(kind="DROP", name="sweep-drop", count=drops))
        if sinkholes:
            specs.append(AttackSpec(kind="SINKHOLE", name="sweep-sinkhole",
                                    count=sinkholes))
        return tuple(specs)
    return (AttackSpec(kind="FLOOD", name="sweep-flood", count=3,
                       attack_interval=float(value)),)


def sweep(config: ScenarioConfig, vary: str) -> tuple[list[SweepRow], list[ScenarioResult]]:
    """One run per sweep point per defense toggle, in sweep order."""
    if vary == "malicious":
        values: tuple = MALICIOUS_COUNTS
    elif vary == "interval":
        values = ATTACK_INTERVALS
    else:
        raise ConfigError(f"unknown sweep axis {vary!r} "
                          "(expected 'malicious' or 'interval')")
    rows: list[SweepRow] = []
    results: list[ScenarioResult] = []
    for value in values:
        for defense in (True, False):
            run_config = replace(config, defense=defense,
                                 attacks=_sweep_attacks(vary, value))
            result = run_scenario(run_config)
            rows.append(SweepRow.from_metrics(float(value), result.metrics))
            results.append(result)
    return rows, results
