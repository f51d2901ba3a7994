"""Attack injection: compromised or foreign nodes running hostile behaviors.

Each attack is declared as an `AttackSpec`, validated against the threat
model (substation gateways, servers, and metering units are out of reach),
and wired into a running simulation by `apply_attacks`. Behaviors hang off
`NodeState.behavior` and are consulted by the channel and the protocol
engine; scheduled attacks (flooding, forged broadcasts) are plain events in
the simulation queue. Every attack appends its effects to an
`AttackOutcomeLog` so runs can report per-attack outcome counters.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from fractions import Fraction

from . import rng as rngmod
from .crypto import CipherFormatError, generate_keypair, rc5_decrypt
from .entities import Network, NodeState, distance
from .protocol import SIM_CURVE, ProtocolEngine, unpack_records
from .simcore import Channel, EventQueue
from .wire import MsgType, make_frame

ATTACK_KINDS = ("DROP", "FLOOD", "SYBIL", "SINKHOLE", "WORMHOLE",
                "EAVESDROP", "FALSE_DATA")
COMPROMISABLE_KINDS = ("N", "ES", "PDC")

# frames an interceptor can profitably refuse to carry
INTERCEPTED_TYPES = (MsgType.TEST, MsgType.EMD, MsgType.DATA, MsgType.AGG_DATA)


class AttackConfigError(ValueError):
    """The spec steps outside the threat model or is internally invalid."""


@dataclass(frozen=True)
class AttackSpec:
    kind: str
    name: str = ""                          # config section label
    target_ids: tuple[int, ...] = ()
    count: int = 0                          # random targets when ids not given
    start_time: float = 0.0
    attack_interval: float = 1.0
    flood_rate: int = 10                    # bogus frames per burst
    personas: int = 3                       # fake identities per Sybil node
    drop_fraction: float = 0.7
    corrupt_fraction: float = 1.0
    foreign: bool = False                   # outside hardware, no group key
    position: tuple[float, float] | None = None

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise AttackConfigError(f"unknown attack kind {self.kind!r}")
        if self.start_time < 0:
            raise AttackConfigError("start_time must be >= 0")
        if self.attack_interval <= 0:
            raise AttackConfigError("attack_interval must be positive")
        if not 0 < self.drop_fraction <= 1:
            raise AttackConfigError("drop_fraction must be in (0, 1]")
        if not 0 < self.corrupt_fraction <= 1:
            raise AttackConfigError("corrupt_fraction must be in (0, 1]")
        if self.flood_rate < 1 or self.personas < 0:
            raise AttackConfigError("flood_rate/personas out of range")
        if self.kind == "WORMHOLE" and self.count == 0 and len(self.target_ids) != 2:
            raise AttackConfigError("a wormhole needs exactly two endpoint ids")
        if self.foreign and self.position is None:
            raise AttackConfigError("a foreign attacker needs a position")
        if not self.foreign and not self.target_ids and self.count < 1:
            raise AttackConfigError("give target_ids or a positive count")


@dataclass
class AttackOutcomeLog:
    name: str
    kind: str
    targets: tuple[int, ...] = ()
    bogus_frames_sent: int = 0
    frames_swallowed: int = 0
    fake_locations_advertised: int = 0
    frames_overheard: int = 0
    payloads_decrypted: int = 0
    readings_corrupted: int = 0

    def counters(self) -> dict[str, int]:
        return {
            "bogus_frames_sent": self.bogus_frames_sent,
            "frames_swallowed": self.frames_swallowed,
            "fake_locations_advertised": self.fake_locations_advertised,
            "frames_overheard": self.frames_overheard,
            "payloads_decrypted": self.payloads_decrypted,
            "readings_corrupted": self.readings_corrupted,
        }


def cyclic_pass_pattern(fraction: float) -> tuple[bool, ...]:
    """Minimal-period pass/drop pattern whose every full window drops exactly
    fraction of the frames (drops spread evenly, Bresenham style)."""
    frac = Fraction(fraction).limit_denominator(1000)
    num, den = frac.numerator, frac.denominator
    return tuple((k + 1) * num // den == k * num // den for k in range(den))


# -- behaviors -------------------------------------------------------------------
# Attached to NodeState.behavior; the channel consults accept_frame/on_overhear,
# the protocol engine consults fake_ack/personas/corrupt_payload.

class DropBehavior:
    """Swallows a deterministic cyclic fraction of probe and data frames."""

    def __init__(self, fraction: float, log: AttackOutcomeLog):
        self.pattern = cyclic_pass_pattern(fraction)
        self.log = log
        self._i = 0

    def accept_frame(self, receiver, sender_id, frame) -> bool:
        if MsgType(frame.msg_type) not in INTERCEPTED_TYPES:
            return True
        ok = self.pattern[self._i % len(self.pattern)]
        self._i += 1
        if not ok:
            self.log.frames_swallowed += 1
        return ok


class SinkholeBehavior:
    """Advertises an unbeatable forwarding score; behaves honestly until the
    lure lands (first data frame arrives), then swallows everything —
    including the next round's probes, which is how it gets caught."""

    def __init__(self, log: AttackOutcomeLog, inflated_bp: float,
                 inflated_connectivity: int = 64):
        self.log = log
        self.inflated_bp = inflated_bp
        self.inflated_connectivity = inflated_connectivity
        self.engaged = False

    def fake_ack(self, node: NodeState) -> tuple[float, int]:
        return self.inflated_bp, self.inflated_connectivity

    def accept_frame(self, receiver, sender_id, frame) -> bool:
        kind = MsgType(frame.msg_type)
        if not self.engaged:
            if kind in (MsgType.EMD, MsgType.DATA, MsgType.AGG_DATA):
                self.engaged = True
            else:
                return True
        if kind in INTERCEPTED_TYPES:
            self.log.frames_swallowed += 1
            return False
        return True


class SybilBehavior:
    """Carries a set of fake identities advertised during selection."""

    def __init__(self, personas: tuple[tuple[int, tuple[float, float]], ...],
                 log: AttackOutcomeLog):
        self.personas = personas
        self.log = log

    def accept_frame(self, receiver, sender_id, frame) -> bool:
        return True


class EavesdropBehavior:
    """Passive: records every frame its radio overhears."""

    def __init__(self, log: AttackOutcomeLog):
        self.log = log

    def accept_frame(self, receiver, sender_id, frame) -> bool:
        return True

    def on_overhear(self, observer, sender_id, frame) -> None:
        self.log.frames_overheard += 1


class FalseDataBehavior:
    """Corrupts a cyclic fraction of the data payloads it relays."""

    def __init__(self, fraction: float, log: AttackOutcomeLog):
        self.pattern = cyclic_pass_pattern(fraction)
        self.log = log
        self._i = 0

    def accept_frame(self, receiver, sender_id, frame) -> bool:
        return True

    def corrupt_payload(self, payload: bytes) -> bytes | None:
        # pattern says "pass" -> leave alone; "drop" slots corrupt instead
        ok = self.pattern[self._i % len(self.pattern)]
        self._i += 1
        if ok:
            return None
        self.log.readings_corrupted += 1
        return bytes([payload[0] ^ 0xFF]) + payload[1:] if payload else payload


# -- scheduled attacks --------------------------------------------------------------

class FloodAttack:
    """Periodic bursts of bogus control frames claiming a CC-gateway identity.

    Receivers spend receive energy and reject each frame (no valid chain
    key), so the only lasting effect is battery drain."""

    def __init__(self, node: NodeState, spec: AttackSpec, channel: Channel,
                 engine: ProtocolEngine, log: AttackOutcomeLog):
        self.node = node
        self.spec = spec
        self.channel = channel
        self.engine = engine
        self.log = log
        self._seq = 0

    def start(self, queue: EventQueue) -> None:
        queue.schedule(self.spec.start_time, self._burst)

    def _burst(self) -> None:
        queue = self.engine.queue
        impersonated = self.engine.network.cc_gateway(main=True).id
        for _ in range(self.spec.flood_rate):
            payload = struct.pack(">IH", self._seq, self.node.id & 0xFFFF)
            self._seq += 1
            gbk = self.engine.gbk if self.node.has_gbk else bytes(16)
            frame = make_frame(MsgType.BLOCKED_LIST, impersonated, payload, gbk=gbk)
            self.log.bogus_frames_sent += 1
            for victim_id in self.channel.broadcast(self.node, frame):
                victim = self.engine.network.nodes[victim_id]
                self.engine._accept_control(victim, impersonated, frame)
        if self.node.alive:    # flooding drains the attacker too; dead means done
            queue.schedule(queue.now + self.spec.attack_interval, self._burst)


class ForgedAnchorAttack:
    """Sinkhole side-channel: periodic fake key-chain anchors in the main
    server's name. Receivers reject them (candidate key never hashes onto
    their anchor), which is exactly what the hash chain is for."""

    def __init__(self, node: NodeState, spec: AttackSpec, channel: Channel,
                 engine: ProtocolEngine, log: AttackOutcomeLog, rng):
        self.node = node
        self.spec = spec
        self.channel = channel
        self.engine = engine
        self.log = log
        self.rng = rng

    def start(self, queue: EventQueue) -> None:
        queue.schedule(self.spec.start_time, self._forge)

    def _forge(self) -> None:
        queue = self.engine.queue
        server_id = self.engine.network.main_server
        gbk = self.engine.gbk if self.node.has_gbk else bytes(16)
        frame = make_frame(MsgType.ANCHOR_BCAST, server_id, self.rng.randbytes(20),
                           gbk=gbk, chain_key=self.rng.randbytes(20))
        self.log.bogus_frames_sent += 1
        for victim_id in self.channel.broadcast(self.node, frame):
            victim = self.engine.network.nodes[victim_id]
            self.engine._accept_control(victim, server_id, frame)
        if self.node.alive:
            queue.schedule(queue.now + self.spec.attack_interval, self._forge)


# -- wiring ---------------------------------------------------------------------

def _spawn_foreign(network: Network, channel: Channel,
                   position: tuple[float, float], rng) -> NodeState:
    """A planted device: real radio and its own keypair, but no group key,
    no pre-shared anchors, no server public keys. Joins the region of the
    nearest gateway so trust rounds will probe (and expose) it."""
    nearest_gw = min(network.members(kind="GW"),
                     key=lambda g: (distance(position, g.position), g.id))
    node = NodeState(id=network.allocate_id(), kind="N", position=position,
                     region_id=nearest_gw.region_id, has_gbk=False)
    node.keypair = generate_keypair(SIM_CURVE, rng)
    network.nodes[node.id] = node
    channel.initial_battery[node.id] = node.battery_mah
    return node


def resolve_targets(spec: AttackSpec, network: Network, rng) -> tuple[int, ...]:
    if spec.target_ids:
        for node_id in spec.target_ids:
            node = network.nodes.get(node_id)
            if node is None:
                raise AttackConfigError(f"target {node_id} does not exist")
            if node.kind not in COMPROMISABLE_KINDS:
                raise AttackConfigError(
                    f"target {node_id} is a {node.kind}: substation gateways, "
                    "servers, and metering units cannot be compromised")
        return tuple(spec.target_ids)
    pool = [n.id for n in network.members(kind=None)
            if n.kind in ("N", "ES") and n.behavior is None]
    if spec.count > len(pool):
        raise AttackConfigError(
            f"cannot compromise {spec.count} nodes: only {len(pool)} eligible")
    return tuple(sorted(rng.sample(pool, spec.count)))


def apply_attacks(specs: list[AttackSpec], network: Network, channel: Channel,
                  engine: ProtocolEngine, queue: EventQueue,
                  seed: int) -> list[AttackOutcomeLog]:
    """Install every attack; call after engine.start() so attack events at
    equal times queue behind the protocol's bootstrap events. Returns one
    outcome log per spec; raises AttackConfigError on any threat-model
    violation."""
    logs: list[AttackOutcomeLog] = []
    max_initial_bp = max((n.battery_mah for n in network.nodes.values()), default=150.0)

    for index, spec in enumerate(specs):
        label = spec.name or f"{spec.kind.lower()}-{index}"
        rng = rngmod.substream(seed, f"attack:{label}")
        if spec.foreign:
            targets = (_spawn_foreign(network, channel, spec.position, rng).id,)
        else:
            targets = resolve_targets(spec, network, rng)
        log = AttackOutcomeLog(name=label, kind=spec.kind, targets=targets)
        logs.append(log)

        for node_id in targets:
            node = network.nodes[node_id]
            # assumption guard, re-checked at install time
            assert node.kind in COMPROMISABLE_KINDS, node.kind
            if node.behavior is not None:
                raise AttackConfigError(f"node {node_id} already compromised")

            if spec.kind == "DROP":
                node.behavior = DropBehavior(spec.drop_fraction, log)
            elif spec.kind == "SINKHOLE":
                node.behavior = SinkholeBehavior(log, inflated_bp=10 * max_initial_bp)
                ForgedAnchorAttack(node, spec, channel, engine, log, rng).start(queue)
            elif spec.kind == "FLOOD":
                FloodAttack(node, spec, channel, engine, log).start(queue)
            elif spec.kind == "SYBIL":
                personas = tuple(
                    (network.allocate_id(),
                     (node.position[0] + rng.uniform(-100, 100),
                      node.position[1] + rng.uniform(-100, 100)))
                    for _ in range(spec.personas))
                node.behavior = SybilBehavior(personas, log)
            elif spec.kind == "EAVESDROP":
                node.behavior = EavesdropBehavior(log)
                channel.eavesdroppers = sorted(set(channel.eavesdroppers) | {node_id})
            elif spec.kind == "FALSE_DATA":
                node.behavior = FalseDataBehavior(spec.corrupt_fraction, log)

        if spec.kind == "WORMHOLE":
            channel.wormholes.append((targets[0], targets[1]))

    return logs


def confidentiality_scan(channel: Channel, engine: ProtocolEngine,
                         logs: list[AttackOutcomeLog]) -> int:
    """Post-run audit. Counts, per attack, the observed data payloads the
    attacker could actually decrypt with keys it holds (never assumed zero),
    and returns the number of plaintext exposures: raw reading markers seen
    over the air by key-less observers."""
    attacker_of: dict[int, AttackOutcomeLog] = {}
    for log in logs:
        for node_id in log.targets:
            attacker_of[node_id] = log

    keyring: dict[int, list[bytes]] = {}
    for (a, b), key in engine.sessions.items():
        keyring.setdefault(a, []).append(key)
        keyring.setdefault(b, []).append(key)

    markers = set(engine.delivery._marker_bytes.values())
    exposures = 0
    for obs in channel.observations:
        log = attacker_of.get(obs.observer_id)
        if log is None:
            continue
        if obs.frame.msg_type not in (MsgType.EMD, MsgType.DATA, MsgType.AGG_DATA):
            continue
        payload = obs.frame.payload
        if any(marker in payload for marker in markers):
            exposures += 1
        for key in keyring.get(obs.observer_id, ()):
            try:
                unpack_records(rc5_decrypt(key, payload))
            except (CipherFormatError, ValueError, struct.error):
                continue
            log.payloads_decrypted += 1
            break
    return exposures
