"""Deterministic discrete-event engine: clock, radio, energy, trace.

The Channel is the only place energy moves and frames travel.  Every
battery change goes through one accumulation point and is recorded in an
in-memory ledger, so the conservation check can re-fold the same floats
in the same order and demand bit-exact equality.
"""

from __future__ import annotations

import hashlib
import heapq
import itertools
from dataclasses import dataclass, field

from .entities import Network, NodeState, distance
from .wire import Frame, MsgType


class SchedulingFault(RuntimeError):
    """An event was scheduled in the past — a logic error, not an outcome."""


@dataclass(frozen=True)
class RadioModel:
    range_n: float = 250.0
    range_es: float = 350.0
    range_pdc: float = 500.0      # PDCs are long-range hardware
    range_mu: float = 150.0
    range_gw: float = 300.0
    range_server: float = 300.0
    loss_probability: float = 0.0

    def range_of(self, kind: str) -> float:
        return {
            "N": self.range_n, "ES": self.range_es, "PDC": self.range_pdc,
            "MU": self.range_mu, "PMU": self.range_mu,
            "GW": self.range_gw, "SERVER": self.range_server,
        }[kind]


@dataclass(frozen=True)
class EnergyModel:
    e_amp: float = 100e-12        # J/bit/m^2, power-amplifier term
    e_baseband: float = 50e-9     # J/bit
    e_frontend: float = 50e-9     # J/bit
    e_lna: float = 50e-9          # J/bit
    volts: float = 3.0
    recharge_rate: float = 0.01   # mAh/s for harvesting kinds
    battery_capacity_es: float = 2000.0
    initial_battery: float = 150.0

    def energy_tx(self, bits: int, dist: float) -> float:
        return bits * (self.e_amp * dist * dist + self.e_baseband + self.e_frontend)

    def energy_rx(self, bits: int) -> float:
        return bits * (self.e_baseband + self.e_frontend + self.e_lna)

    def to_mah(self, joules: float) -> float:
        return joules / (self.volts * 3.6)


class EventQueue:
    def __init__(self):
        self._heap: list = []
        self._seq = itertools.count()
        self.now = 0.0

    def schedule(self, at_time: float, action, *args) -> None:
        if at_time < self.now:
            raise SchedulingFault(f"schedule at t={at_time} but clock is {self.now}")
        heapq.heappush(self._heap, (at_time, next(self._seq), action, args))

    def run_until(self, t_end: float) -> None:
        while self._heap and self._heap[0][0] <= t_end:
            at_time, _, action, args = heapq.heappop(self._heap)
            self.now = at_time
            action(*args)
        self.now = max(self.now, t_end)

    @property
    def pending(self) -> int:
        return len(self._heap)


class Trace:
    """Text event log; the run hash is the SHA-1 of its lines."""

    def __init__(self):
        self.lines: list[str] = []

    def log(self, t: float, kind: str, ids: str, outcome: str, joules: float = 0.0):
        self.lines.append(f"{t:.6f} | {kind} | {ids} | {outcome} | {joules:.12g}")

    def digest(self) -> str:
        h = hashlib.sha1()
        for line in self.lines:
            h.update(line.encode("utf-8"))
            h.update(b"\n")
        return h.hexdigest()


@dataclass
class Observation:
    """One entity seeing one frame (receiver, broadcast listener, eavesdropper)."""
    t: float
    observer_id: int
    sender_id: int
    frame: Frame


DELIVERED = "delivered"


def dropped(reason: str) -> str:
    return f"dropped({reason})"


class Channel:
    """Unit-disk radio with Bernoulli loss and first-order energy accounting.

    `control=True` models the protocol's logical control plane (probe and
    report flows that in reality ride multi-hop forwarding): delivery is not
    range-limited, but the sender still pays full-range transmit energy and
    the receiver pays receive energy, and loss/behaviours apply as usual.
    """

    def __init__(self, network: Network, radio: RadioModel, energy: EnergyModel,
                 trace: Trace, queue: EventQueue, loss_rng):
        self.network = network
        self.radio = radio
        self.energy = energy
        self.trace = trace
        self.queue = queue
        self.loss_rng = loss_rng
        self.ledger: list[tuple[int, float]] = []       # (node_id, effective mAh delta)
        self.initial_battery: dict[int, float] = {
            n.id: n.battery_mah for n in network.nodes.values()
        }
        self._last_recharge: dict[int, float] = {}
        self.observations: list[Observation] = []
        self.eavesdroppers: list[int] = []              # sorted on registration
        self.wormholes: list[tuple[int, int]] = []
        self.drop_counts: dict[str, int] = {}

    # -- energy -----------------------------------------------------------

    def apply_energy(self, node: NodeState, delta_mah: float) -> None:
        """The single battery accumulation point (ledger replay relies on it)."""
        if node.mains_powered or delta_mah == 0.0:
            return
        if delta_mah < 0:
            effective = -min(-delta_mah, node.battery_mah)
            node.debited_mah += -effective
        else:
            cap = self.energy.battery_capacity_es if node.rechargeable else self.energy.initial_battery
            effective = min(delta_mah, cap - node.battery_mah)
            node.recharged_mah += effective
        node.battery_mah += effective
        self.ledger.append((node.id, effective))
        if node.kind == "N" and node.battery_mah == 0.0 and node.alive:
            node.alive = False
            self.trace.log(self.queue.now, "death", str(node.id), "battery_exhausted")

    def _recharge_to_now(self, node: NodeState) -> None:
        if not node.rechargeable:
            return
        last = self._last_recharge.get(node.id, 0.0)
        dt = self.queue.now - last
        self._last_recharge[node.id] = self.queue.now
        if dt > 0:
            self.apply_energy(node, self.energy.recharge_rate * dt)

    def debit(self, node: NodeState, joules: float) -> None:
        self._recharge_to_now(node)
        self.apply_energy(node, -self.energy.to_mah(joules))

    def finalize(self, t_end: float) -> None:
        """Bring all harvesting batteries up to date at the end of a run."""
        assert self.queue.now == t_end
        for node_id in sorted(self.network.nodes):
            self._recharge_to_now(self.network.nodes[node_id])

    # -- frame movement ----------------------------------------------------

    def _observe(self, observer: NodeState, sender_id: int, frame: Frame) -> None:
        self.observations.append(Observation(self.queue.now, observer.id, sender_id, frame))
        behavior = observer.behavior
        if behavior is not None and hasattr(behavior, "on_overhear"):
            behavior.on_overhear(observer, sender_id, frame)

    def _eavesdrop_sweep(self, sender: NodeState, receiver_id: int, frame: Frame,
                         screened: tuple[str, ...] | None = None) -> None:
        """`screened`: a broadcast's kind filter — spies matching it already
        hear the frame as ordinary receivers, not here."""
        for node_id in self.eavesdroppers:
            spy = self.network.nodes[node_id]
            if spy.id in (sender.id, receiver_id) or not spy.alive:
                continue
            if screened is not None and spy.kind in screened:
                continue
            if distance(spy.position, sender.position) <= self.radio.range_of(sender.kind):
                rx_joules = self.energy.energy_rx(frame.wire_bits)
                self.debit(spy, rx_joules)
                self.trace.log(self.queue.now, "rx",
                               f"{spy.id}<-{sender.id}:{MsgType(frame.msg_type).name}",
                               "overheard", rx_joules)
                self._observe(spy, sender.id, frame)

    def _count_drop(self, reason: str) -> None:
        self.drop_counts[reason] = self.drop_counts.get(reason, 0) + 1

    def transmit(self, sender: NodeState, receiver: NodeState, frame: Frame,
                 control: bool = False) -> str:
        ids = f"{sender.id}->{receiver.id}:{MsgType(frame.msg_type).name}"
        if not sender.alive:
            self.trace.log(self.queue.now, "drop", ids, dropped("dead_sender"))
            self._count_drop("dead_sender")
            return dropped("dead_sender")
        sender_range = self.radio.range_of(sender.kind)
        dist = distance(sender.position, receiver.position)
        tx_joules = self.energy.energy_tx(
            frame.wire_bits, sender_range if control else min(dist, sender_range))
        self.debit(sender, tx_joules)
        self._eavesdrop_sweep(sender, receiver.id, frame)
        outcome = self._receive_leg(sender, receiver, frame, dist, sender_range, control)
        self.trace.log(self.queue.now, "tx", ids, outcome, tx_joules)
        if outcome != DELIVERED:
            self._count_drop(outcome[len("dropped("):-1])
        return outcome

    def _receive_leg(self, sender: NodeState, receiver: NodeState, frame: Frame,
                     dist: float, sender_range: float, control: bool) -> str:
        if not control and dist > sender_range:
            return dropped("range")
        if not receiver.alive:
            return dropped("dead_receiver")
        if self.loss_rng.random() < self.radio.loss_probability:
            return dropped("loss")
        rx_joules = self.energy.energy_rx(frame.wire_bits)
        self.debit(receiver, rx_joules)
        self.trace.log(self.queue.now, "rx",
                       f"{receiver.id}<-{sender.id}:{MsgType(frame.msg_type).name}",
                       "received", rx_joules)
        self._observe(receiver, sender.id, frame)
        behavior = receiver.behavior
        if behavior is not None and not behavior.accept_frame(receiver, sender.id, frame):
            return dropped("adversarial")
        return DELIVERED

    def broadcast(self, sender: NodeState, frame: Frame, control: bool = False,
                  kinds: tuple[str, ...] | None = None, _tunneled: bool = False) -> list[int]:
        """One transmit burst to every in-range listener; returns delivered IDs."""
        ids = f"{sender.id}->*:{MsgType(frame.msg_type).name}"
        if not sender.alive:
            self.trace.log(self.queue.now, "drop", ids, dropped("dead_sender"))
            self._count_drop("dead_sender")
            return []
        sender_range = self.radio.range_of(sender.kind)
        tx_joules = self.energy.energy_tx(frame.wire_bits, sender_range)
        self.debit(sender, tx_joules)
        self.trace.log(self.queue.now, "tx", ids, "broadcast", tx_joules)
        if kinds is not None:
            self._eavesdrop_sweep(sender, -1, frame, screened=kinds)
        delivered = []
        for node_id in sorted(self.network.nodes):
            receiver = self.network.nodes[node_id]
            if receiver.id == sender.id:
                continue
            if kinds is not None and receiver.kind not in kinds:
                continue
            dist = distance(sender.position, receiver.position)
            if not control and dist > sender_range:
                continue
            outcome = self._receive_leg(sender, receiver, frame, dist, sender_range, control)
            if outcome == DELIVERED:
                delivered.append(receiver.id)
            else:
                self._count_drop(outcome[len("dropped("):-1])
                self.trace.log(self.queue.now, "drop",
                               f"{sender.id}->{receiver.id}:{MsgType(frame.msg_type).name}",
                               outcome)
        if not _tunneled:
            delivered.extend(self._wormhole_relay(sender, frame, control, kinds, delivered))
        return delivered

    def _wormhole_relay(self, sender: NodeState, frame: Frame, control: bool,
                        kinds, already: list[int]) -> list[int]:
        """Re-emit an overheard broadcast at the far end of each wormhole."""
        extra: list[int] = []
        for end_a, end_b in self.wormholes:
            for near, far in ((end_a, end_b), (end_b, end_a)):
                near_node = self.network.nodes[near]
                far_node = self.network.nodes[far]
                if sender.id in (near, far) or not near_node.alive or not far_node.alive:
                    continue
                in_range = distance(near_node.position, sender.position) <= self.radio.range_of(sender.kind)
                if not (control or in_range):
                    continue
                far_range = self.radio.range_of(far_node.kind)
                far_tx = self.energy.energy_tx(frame.wire_bits, far_range)
                self.debit(far_node, far_tx)
                self.trace.log(self.queue.now, "wormhole",
                               f"{near}=>{far}:{MsgType(frame.msg_type).name}",
                               "tunneled", far_tx)
                for node_id in sorted(self.network.nodes):
                    receiver = self.network.nodes[node_id]
                    if receiver.id in (sender.id, near, far) or node_id in already:
                        continue
                    if kinds is not None and receiver.kind not in kinds:
                        continue
                    if distance(far_node.position, receiver.position) > far_range:
                        continue
                    outcome = self._receive_leg(far_node, receiver, frame,
                                                0.0, far_range, control)
                    # frames appear to come from the original sender
                    if outcome == DELIVERED:
                        extra.append(receiver.id)
        return extra

    # -- checks ------------------------------------------------------------

    def conservation_errors(self) -> list[int]:
        """Node IDs whose ledger replay does not reproduce the final battery."""
        folded = dict(self.initial_battery)
        for node_id, delta in self.ledger:
            folded[node_id] += delta
        bad = []
        for node_id, node in self.network.nodes.items():
            if folded[node_id] != node.battery_mah:
                bad.append(node_id)
        return sorted(bad)


def neighbors(node: NodeState, population: list[NodeState], radio: RadioModel) -> list[NodeState]:
    """Alive nodes within the closed ball of the node's own kind range."""
    reach = radio.range_of(node.kind)
    return [
        other for other in population
        if other.id != node.id and other.alive
        and distance(node.position, other.position) <= reach
    ]


def connectivity_counts(node: NodeState, population: list[NodeState],
                        radio: RadioModel) -> tuple[int, int]:
    """(same-region count C, other-region count Cn) over radio neighbours."""
    same = adj = 0
    for other in neighbors(node, population, radio):
        if other.region_id == node.region_id:
            same += 1
        else:
            adj += 1
    return same, adj
