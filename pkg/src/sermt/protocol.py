"""SERMT protocol engine.

Orchestrates the defended monitoring pipeline over byte-exact frames:
periodic trust rounds that score every sensor-tier entity and block the
untrustworthy, gateway forwarder selection by battery x trust x
connectivity, cluster formation and head election around data-carrying
nodes, trust/energy-weighted shortest-path routing to the control-center
gateways, and PDC stand-in election when a concentrator fails.

A `defense=False` engine runs the undefended baseline: no trust rounds or
probes (trust pinned at 100), no MAC or chain-key verification, plain
distance-weighted routing, but the same selection cadence and traffic
pattern, so paired runs differ only in protocol behavior.
"""

from __future__ import annotations

import itertools
import math
import struct
from dataclasses import dataclass, field

from . import rng as rngmod
from .crypto import (
    SIM_CURVE,
    AuthenticationError,
    ChainAnchorState,
    CipherFormatError,
    HashChain,
    InvalidKeyError,
    cipher_key,
    decode_point,
    derive_shared_secret,
    ecc_decrypt,
    ecc_encrypt,
    encode_point,
    generate_keypair,
    rc5_decrypt,
    rc5_encrypt,
)
from .entities import Network, NodeState, distance
from .routing import build_adjacency, dijkstra, route_weight
from .simcore import Channel, DELIVERED, EventQueue, Trace, connectivity_counts
from .wire import Frame, MsgType, make_frame, verify_frame

TRUST_THRESHOLD = 40.0          # trusted means strictly above
MARKER_MAGIC = b"\xa5\x3c\x96\x5a"
MARKER_LEN = 16                 # magic(4) + counter(4) + nonce(8)


class UndefinedTrustError(ValueError):
    """Trust is undefined before any test message has been sent."""


# -- scores ------------------------------------------------------------------

def compute_trust(delivered: int, sent: int) -> float:
    """Delivery ratio as a percentage."""
    if sent < 1:
        raise UndefinedTrustError("no test messages sent yet")
    if not 0 <= delivered <= sent:
        raise ValueError("delivered count out of range")
    return 100.0 * delivered / sent


def is_trusted(tv: float) -> bool:
    return tv > TRUST_THRESHOLD


def compute_forwarding_score(bp: float, tv: float, c: int) -> float:
    """Gateway forwarder preference; only comparisons matter."""
    if bp < 0 or tv < 0 or c < 0:
        raise ValueError("score inputs must be nonnegative")
    return bp * tv * c


def candidate_score(bp: float, tv: float, cn: int) -> float:
    """Cluster-head preference; weighs cross-region connectivity."""
    if bp < 0 or tv < 0 or cn < 0:
        raise ValueError("score inputs must be nonnegative")
    return bp * tv * cn


# -- trust table ---------------------------------------------------------------

@dataclass
class TrustTable:
    """One server's view after a round; serialization is canonical so the
    two servers can be compared byte for byte."""

    timestamp: float = 0.0
    records: dict[int, float] = field(default_factory=dict)
    stale_regions: set[int] = field(default_factory=set)

    def record(self, entity_id: int, tv: float) -> None:
        self.records[entity_id] = tv

    def tv(self, entity_id: int, default: float = 100.0) -> float:
        return self.records.get(entity_id, default)

    def trusted(self, entity_id: int) -> bool:
        return is_trusted(self.tv(entity_id))

    @property
    def threat_list(self) -> set[int]:
        return {i for i, tv in self.records.items() if tv <= TRUST_THRESHOLD}

    def serialize(self) -> bytes:
        body = [struct.pack(">dI", self.timestamp, len(self.records))]
        for entity_id in sorted(self.records):
            body.append(struct.pack(">Id", entity_id, self.records[entity_id]))
        body.append(struct.pack(">H", len(self.stale_regions)))
        for region_id in sorted(self.stale_regions):
            body.append(struct.pack(">H", region_id))
        return b"".join(body)

    @classmethod
    def deserialize(cls, blob: bytes) -> "TrustTable":
        timestamp, count = struct.unpack_from(">dI", blob, 0)
        offset = 12
        records = {}
        for _ in range(count):
            entity_id, tv = struct.unpack_from(">Id", blob, offset)
            records[entity_id] = tv
            offset += 12
        (stale_count,) = struct.unpack_from(">H", blob, offset)
        offset += 2
        stale = set()
        for _ in range(stale_count):
            (region_id,) = struct.unpack_from(">H", blob, offset)
            stale.add(region_id)
            offset += 2
        return cls(timestamp, records, stale)


@dataclass(frozen=True)
class ClusterId:
    """Region, trust-round timestamp, and the region's substations."""

    region_id: int
    trust_timestamp: float
    substation_ids: tuple[int, ...]

    def encode(self) -> bytes:
        head = struct.pack(">Hd H", self.region_id, self.trust_timestamp,
                           len(self.substation_ids))
        return head + b"".join(struct.pack(">H", s) for s in self.substation_ids)

    @classmethod
    def decode(cls, blob: bytes) -> "ClusterId":
        region_id, timestamp, count = struct.unpack_from(">HdH", blob, 0)
        subs = struct.unpack_from(f">{count}H", blob, 12)
        return cls(region_id, timestamp, tuple(subs))


# -- reading records -----------------------------------------------------------

def pack_records(records: list[tuple[int, bytes]]) -> bytes:
    out = [struct.pack(">H", len(records))]
    for source_id, reading in records:
        out.append(struct.pack(">IH", source_id, len(reading)))
        out.append(reading)
    return b"".join(out)


def unpack_records(blob: bytes) -> list[tuple[int, bytes]]:
    (count,) = struct.unpack_from(">H", blob, 0)
    offset = 2
    records = []
    for _ in range(count):
        source_id, size = struct.unpack_from(">IH", blob, offset)
        offset += 6
        reading = blob[offset:offset + size]
        if len(reading) != size:
            raise ValueError("truncated record")
        records.append((source_id, reading))
        offset += size
    if offset != len(blob):
        raise ValueError("trailing bytes after records")
    return records


# -- control-message authentication ---------------------------------------------

def authenticate_control_message(frame: Frame, anchor_state: ChainAnchorState,
                                 gbk: bytes) -> bool:
    """A control broadcast is genuine iff its HMAC verifies and its chain key
    hashes onto the receiver's anchor; acceptance consumes the key."""
    if not frame.chain_key:
        return False
    if not verify_frame(frame, gbk=gbk):
        return False
    return anchor_state.accept(frame.chain_key)


# -- configuration / bookkeeping -------------------------------------------------

@dataclass(frozen=True)
class ProtocolConfig:
    trust_round_interval: float = 200.0
    test_messages: int = 10
    round_active_window: float = 5.0      # modeled round duration; probes defer
    round_trigger_holdoff: float = 30.0   # min gap before a shortfall re-round
    gw_probe_interval: float = 60.0
    mu_interval: float = 15.0
    pmu_interval: float = 15.0
    mu_reading_bytes: int = 64
    pmu_reading_bytes: int = 128
    chain_length: int = 1024
    chain_low_water: int = 4
    defense: bool = True


@dataclass
class DeliveryLog:
    sent: int = 0
    delivered: int = 0
    payload_bits_delivered: int = 0
    isolation_alarms: int = 0        # gateway found nothing to forward through
    undeliverable_alarms: int = 0    # no route to a control center
    auth_rejects: int = 0            # failed MAC / chain-key checks
    tamper_detected: int = 0         # ciphertext rejected at decryption
    forged_accepts: int = 0          # accepted control key never issued (must stay 0)
    stale_regions: int = 0
    _marker_bits: dict[int, int] = field(default_factory=dict)
    _marker_bytes: dict[int, bytes] = field(default_factory=dict)
    _delivered_ids: set[int] = field(default_factory=set)

    def emit(self, counter: int, marker: bytes, bits: int) -> None:
        self.sent += 1
        self._marker_bits[counter] = bits
        self._marker_bytes[counter] = marker

    def deliver(self, counter: int) -> bool:
        if counter in self._marker_bits and counter not in self._delivered_ids:
            self._delivered_ids.add(counter)
            self.delivered += 1
            self.payload_bits_delivered += self._marker_bits[counter]
            return True
        return False

    def marker_issued(self, counter: int, marker: bytes) -> bool:
        return self._marker_bytes.get(counter) == marker


DATA_TYPES = (MsgType.EMD, MsgType.DATA, MsgType.AGG_DATA)


class ProtocolEngine:
    """Event-driven protocol state machine bound to one simulation world."""

    def __init__(self, network: Network, channel: Channel, queue: EventQueue,
                 trace: Trace, config: ProtocolConfig, seed: int):
        self.network = network
        self.channel = channel
        self.queue = queue
        self.trace = trace
        self.config = config
        self.defense = config.defense
        self.rng = rngmod.substream(seed, "protocol")
        self.delivery = DeliveryLog()

        self.gbk = self.rng.randbytes(16)
        self.sessions: dict[tuple[int, int], bytes] = {}
        self.tables: dict[int, TrustTable] = {}
        self.gateway_tables: dict[int, TrustTable] = {}
        self.server_chains: dict[int, HashChain] = {}
        self.server_key_history: dict[int, list] = {}
        self.released_keys: set[bytes] = set()

        self.forwarder_of: dict[int, int | None] = {}   # gateway -> N (or persona)
        self.es_choice: dict[int, int | None] = {}      # gateway -> ES
        self.clusters: dict[int, list[int]] = {}        # solicitor -> member ids
        self.cluster_head: dict[int, int] = {}          # solicitor -> head id
        self.route_cache: dict[tuple[int, bool], tuple[int, ...] | None] = {}
        self.pdc_routes: dict[tuple[int, bool], tuple[int, ...] | None] = {}
        self.acting_pdc: dict[int, int] = {}            # region -> stand-in node id
        self.known_personas: dict[int, tuple[int, tuple[float, float]]] = {}
        self.gw_queue: dict[int, list[tuple[int, bytes]]] = {}

        self.round_index = 0
        self.last_round_start = -math.inf
        self._trigger_pending = False
        self._trigger_backoff = config.round_trigger_holdoff
        self._marker_seq = itertools.count()

    # -- setup -------------------------------------------------------------

    def install_keys(self) -> None:
        """Pre-deployment provisioning: everyone gets a keypair and, unless
        foreign, the group key; servers get hash chains whose anchors and
        public keys are preloaded on every node."""
        for node_id in sorted(self.network.nodes):
            node = self.network.nodes[node_id]
            node.keypair = generate_keypair(SIM_CURVE, self.rng)
        for server_id in (self.network.main_server, self.network.backup_server):
            server = self.network.nodes[server_id]
            chain = HashChain(self.rng.randbytes(20), self.config.chain_length)
            self.server_chains[server_id] = chain
            self.server_key_history[server_id] = [server.keypair]
            self.tables[server_id] = TrustTable()
            for node in self.network.nodes.values():
                node.server_pubkeys[server_id] = server.keypair.public
                node.chain_state[server_id] = ChainAnchorState(chain.anchor)

    def start(self) -> None:
        self.install_keys()
        if self.defense:
            self.queue.schedule(0.0, self._trust_round_event)
            self.queue.schedule(0.0, self._gw_probe_event)
        else:
            self.queue.schedule(0.0, self._reselect_event)
        self.queue.schedule(self.config.mu_interval, self._mu_data_event)
        self.queue.schedule(self.config.pmu_interval, self._pmu_data_event)

    # -- small helpers -----------------------------------------------------

    def _gbk_frame(self, msg_type: MsgType, sender: NodeState, payload: bytes,
                   session_key: bytes | None = None, chain_key: bytes = b"") -> Frame:
        # foreign hardware does not know the group key; its MACs cannot verify
        key = self.gbk if sender.has_gbk else bytes(16)
        return make_frame(msg_type, sender.id, payload, gbk=key,
                          session_key=session_key, chain_key=chain_key)

    def current_table(self) -> TrustTable:
        if not self.defense:
            return TrustTable()
        return self.tables[self.network.main_server]

    def _tv(self, entity_id: int) -> float:
        if not self.defense:
            return 100.0
        return self.current_table().tv(entity_id)

    def _trusted(self, entity_id: int) -> bool:
        return (not self.defense) or is_trusted(self._tv(entity_id))

    def round_active(self, t: float) -> bool:
        return (self.defense and self.last_round_start <= t
                < self.last_round_start + self.config.round_active_window)

    def _alive_population(self) -> list[NodeState]:
        return [self.network.nodes[i] for i in sorted(self.network.nodes)
                if self.network.nodes[i].alive]

    def _connectivity(self, node: NodeState) -> tuple[int, int]:
        return connectivity_counts(node, self._alive_population(), self.channel.radio)

    def _accept_control(self, receiver: NodeState, claimed_server: int,
                        frame: Frame) -> bool:
        state = receiver.chain_state.get(claimed_server)
        if state is None:
            self.delivery.auth_rejects += 1
            return False
        ok = authenticate_control_message(frame, state, self.gbk)
        if ok:
            if frame.chain_key not in self.released_keys:
                self.delivery.forged_accepts += 1    # ground-truth cross-check
        else:
            self.delivery.auth_rejects += 1
        return ok

    def _next_chain_key(self, server_id: int) -> bytes:
        key = self.server_chains[server_id].next_key()
        self.released_keys.add(key)
        return key

    # -- probing -----------------------------------------------------------

    def _probe(self, prober: NodeState, target: NodeState) -> float:
        """Send test messages and count authenticated echoes."""
        sent = self.config.test_messages
        got = 0
        for i in range(sent):
            test = self._gbk_frame(MsgType.TEST, prober,
                                   struct.pack(">HH", self.round_index & 0xFFFF, i))
            if self.channel.transmit(prober, target, test, control=True) != DELIVERED:
                continue
            echo = self._gbk_frame(MsgType.ACK, target, test.payload)
            if self.channel.transmit(target, prober, echo, control=True) != DELIVERED:
                continue
            if self.defense and not verify_frame(echo, gbk=self.gbk):
                continue
            got += 1
        return compute_trust(got, sent)

    def _probe_phantom(self, prober: NodeState, persona_id: int) -> float:
        """A fake identity never answers; the prober still pays to ask."""
        for i in range(self.config.test_messages):
            test = self._gbk_frame(MsgType.TEST, prober, struct.pack(">HH", 0, i))
            joules = self.channel.energy.energy_tx(
                test.wire_bits, self.channel.radio.range_of(prober.kind))
            self.channel.debit(prober, joules)
            self.trace.log(self.queue.now, "tx",
                           f"{prober.id}->{persona_id}:TEST", "dropped(phantom)", joules)
        return 0.0

    def _personas_in_region(self, region_id: int) -> list[int]:
        out = []
        for pid in sorted(self.known_personas):
            host_id, _pos = self.known_personas[pid]
            host = self.network.nodes.get(host_id)
            if host is not None and host.region_id == region_id:
                out.append(pid)
        return out

    # -- trust rounds --------------------------------------------------------

    def _trust_round_event(self) -> None:
        t = self.queue.now
        initiator_id = (self.network.main_server if self.round_index % 2 == 0
                        else self.network.backup_server)
        self.run_trust_round(self.network.nodes[initiator_id])
        self.last_round_start = t
        self._reselect()
        self.queue.schedule(t + self.config.trust_round_interval, self._trust_round_event)

    def _audit_tick(self, sent_before: int, delivered_before: int) -> None:
        """Servers expect every reading each cadence; a shortfall means some
        path swallowed data, so they bring the next evaluation forward."""
        if not self.defense or self._trigger_pending:
            return
        emitted = self.delivery.sent - sent_before
        landed = self.delivery.delivered - delivered_before
        if landed >= emitted:
            return
        self._trigger_pending = True
        self.queue.schedule(self.queue.now + 1.0, self._triggered_round_event)

    def _triggered_round_event(self) -> None:
        # out-of-cadence re-evaluation; the periodic chain is untouched, and
        # fruitless triggers back off so a starved network cannot thrash
        self._trigger_pending = False
        t = self.queue.now
        if t - self.last_round_start < self._trigger_backoff:
            return
        threats_before = len(self.current_table().threat_list)
        initiator_id = (self.network.main_server if self.round_index % 2 == 0
                        else self.network.backup_server)
        self.run_trust_round(self.network.nodes[initiator_id])
        self.last_round_start = t
        self._reselect()
        if len(self.current_table().threat_list) > threats_before:
            self._trigger_backoff = self.config.round_trigger_holdoff
        else:
            self._trigger_backoff = min(self._trigger_backoff * 2,
                                        self.config.trust_round_interval)

    def run_trust_round(self, initiator: NodeState) -> TrustTable:
        t = self.queue.now
        net = self.network
        table = TrustTable(timestamp=t)
        previous = self.tables[initiator.id]
        home_region = net.region_of_substation[initiator.substation_id]
        self.trace.log(t, "round", f"server:{initiator.id}", f"begin:{self.round_index}")

        # the initiating server sweeps its own region itself
        table.records.update(self._evaluate_region(initiator, home_region, set()))

        visited = {home_region}
        frontier = [home_region]
        while frontier:
            current = frontier.pop(0)
            relay = self._pick_relay(current, table)
            for adjacent in net.adjacent_regions[current]:
                if adjacent in visited:
                    continue
                visited.add(adjacent)
                evaluator, probed = (None, {}) if relay is None else \
                    self._handoff(relay, adjacent, table, initiator)
                if evaluator is None:
                    table.stale_regions.add(adjacent)
                    self.delivery.stale_regions += 1
                    self.trace.log(t, "round", f"region:{adjacent}", "stale")
                    continue
                sweep = self._evaluate_region(evaluator, adjacent,
                                              set(probed) | {evaluator.id})
                if self._report_blocked_list(evaluator, initiator, sweep):
                    table.records.update(sweep)
                    frontier.append(adjacent)
                else:
                    table.stale_regions.add(adjacent)
                    self.delivery.stale_regions += 1
                    self.trace.log(t, "round", f"region:{adjacent}", "stale")

        # stale regions keep their last-known scores
        for region_id in table.stale_regions:
            for node in net.region_trust_targets(region_id):
                if node.id not in table.records and node.id in previous.records:
                    table.record(node.id, previous.records[node.id])

        self.tables[initiator.id] = table
        for entity_id, tv in table.records.items():
            if entity_id in net.nodes:
                net.nodes[entity_id].trust = tv
        self._sync_peer_server(initiator, table)
        self._push_gateway_tables(initiator, table)
        self._regenerate_server_keys()
        self.round_index += 1
        self.trace.log(t, "round", f"server:{initiator.id}",
                       f"complete threats={len(table.threat_list)}")
        return table

    def _evaluate_region(self, prober: NodeState, region_id: int,
                         skip: set[int]) -> dict[int, float]:
        records: dict[int, float] = {}
        for target in self.network.region_trust_targets(region_id):
            if target.id in skip or target.id == prober.id:
                continue
            records[target.id] = self._probe(prober, target)
        for persona_id in self._personas_in_region(region_id):
            if persona_id not in skip:
                records[persona_id] = self._probe_phantom(prober, persona_id)
        return records

    def _pick_relay(self, region_id: int, table: TrustTable) -> NodeState | None:
        candidates = [
            n for n in self.network.region_trust_targets(region_id)
            if n.alive and n.id in table.records and is_trusted(table.records[n.id])
        ]
        if not candidates:
            return None
        return max(candidates, key=lambda n: (table.records[n.id], -n.id))

    def _handoff(self, relay: NodeState, region_id: int, table: TrustTable,
                 initiator: NodeState) -> tuple[NodeState | None, dict[int, float]]:
        """Probe the region's nodes nearest the relay until one proves
        trustworthy, then delegate the region sweep to it."""
        candidates = sorted(
            self.network.region_trust_targets(region_id),
            key=lambda n: (distance(relay.position, n.position), n.id))
        probed: dict[int, float] = {}
        evaluator = None
        for candidate in candidates:
            tv = self._probe(relay, candidate)
            probed[candidate.id] = tv
            if not is_trusted(tv):
                continue
            rqm = self._gbk_frame(MsgType.RQM, relay, struct.pack(">H", region_id))
            if self.channel.transmit(relay, candidate, rqm, control=True) == DELIVERED:
                evaluator = candidate
                break
        if probed:
            if self._report_blocked_list(relay, initiator, probed):
                table.records.update(probed)
        return evaluator, probed

    def _report_blocked_list(self, reporter: NodeState, server: NodeState,
                             records: dict[int, float]) -> bool:
        slice_table = TrustTable(timestamp=self.queue.now, records=dict(records))
        frame = self._gbk_frame(MsgType.BLOCKED_LIST, reporter, slice_table.serialize())
        for _attempt in range(2):
            if self.channel.transmit(reporter, server, frame, control=True) == DELIVERED:
                return (not self.defense) or verify_frame(frame, gbk=self.gbk)
        return False

    def _sync_peer_server(self, initiator: NodeState, table: TrustTable) -> None:
        peer_id = (self.network.backup_server
                   if initiator.id == self.network.main_server
                   else self.network.main_server)
        peer = self.network.nodes[peer_id]
        frame = self._gbk_frame(MsgType.BLOCKED_LIST, initiator, table.serialize())
        if self.channel.transmit(initiator, peer, frame, control=True) == DELIVERED:
            self.tables[peer_id] = TrustTable.deserialize(frame.payload)
        else:
            self.trace.log(self.queue.now, "round", f"sync:{initiator.id}->{peer_id}",
                           "failed")

    def _push_gateway_tables(self, initiator: NodeState, table: TrustTable) -> None:
        frame = make_frame(MsgType.BLOCKED_LIST, initiator.id, table.serialize(),
                           gbk=self.gbk, chain_key=self._next_chain_key(initiator.id))
        for gw_id in self.channel.broadcast(initiator, frame, control=True, kinds=("GW",)):
            if self._accept_control(self.network.nodes[gw_id], initiator.id, frame):
                self.gateway_tables[gw_id] = table

    def _regenerate_server_keys(self) -> None:
        for server_id in (self.network.main_server, self.network.backup_server):
            server = self.network.nodes[server_id]
            server.keypair = generate_keypair(SIM_CURVE, self.rng)
            self.server_key_history[server_id].append(server.keypair)
            server.server_pubkeys[server_id] = server.keypair.public
            payload = encode_point(server.keypair.public, SIM_CURVE)
            frame = make_frame(MsgType.PUBKEY, server_id, payload, gbk=self.gbk,
                               chain_key=self._next_chain_key(server_id))
            for node_id in self.channel.broadcast(server, frame, control=True):
                node = self.network.nodes[node_id]
                if self._accept_control(node, server_id, frame):
                    node.server_pubkeys[server_id] = decode_point(payload, SIM_CURVE)
            self._maybe_rotate_chain(server)

    def _maybe_rotate_chain(self, server: NodeState) -> None:
        chain = self.server_chains[server.id]
        if chain.remaining > self.config.chain_low_water:
            return
        fresh = HashChain(self.rng.randbytes(20), self.config.chain_length)
        frame = make_frame(MsgType.ANCHOR_BCAST, server.id, fresh.anchor,
                           gbk=self.gbk, chain_key=self._next_chain_key(server.id))
        for node_id in self.channel.broadcast(server, frame, control=True):
            node = self.network.nodes[node_id]
            if self._accept_control(node, server.id, frame):
                node.chain_state[server.id] = ChainAnchorState(fresh.anchor)
        server.chain_state[server.id] = ChainAnchorState(fresh.anchor)
        self.server_chains[server.id] = fresh

    # -- selection / clustering ----------------------------------------------

    def _reselect_event(self) -> None:
        t = self.queue.now
        self._reselect()
        if not self.defense:
            self._select_es()
        self.queue.schedule(t + self.config.trust_round_interval, self._reselect_event)

    def _reselect(self) -> None:
        self.route_cache.clear()
        self._select_forwarders()
        self._form_clusters()
        if self.defense:
            self._check_pdc_failover()

    def _select_forwarders(self) -> None:
        net, channel = self.network, self.channel
        gateways = net.members(kind="GW")
        heard: dict[int, list[NodeState]] = {}
        for gw in gateways:
            solicit = self._gbk_frame(MsgType.FORW_RQM, gw, b"")
            for node_id in channel.broadcast(gw, solicit, kinds=("N",)):
                heard.setdefault(node_id, []).append(gw)

        # (node_id, bp, c, position) per gateway, from ACKs it can verify
        acks: dict[int, list[tuple[int, float, int, tuple[float, float]]]] = {}
        for node_id in sorted(heard):
            node = net.nodes[node_id]
            closest = min(heard[node_id],
                          key=lambda g: (distance(node.position, g.position), g.id))
            bp, c = node.battery_mah, self._connectivity(node)[0]
            fake = getattr(node.behavior, "fake_ack", None)
            if fake is not None:
                bp, c = fake(node)
            ack = self._gbk_frame(MsgType.ACK, node,
                                  struct.pack(">dHdd", bp, c, *node.position))
            if channel.transmit(node, closest, ack) != DELIVERED:
                continue
            if self.defense and not verify_frame(ack, gbk=self.gbk):
                continue
            acks.setdefault(closest.id, []).append((node_id, bp, c, node.position))
            self._advertise_personas(node, gateways, acks)

        table = self.current_table()
        for gw in gateways:
            candidates = acks.get(gw.id, [])
            if self.defense:
                candidates = [c for c in candidates if table.trusted(c[0])]
            if not candidates:
                self.forwarder_of[gw.id] = None
                self.delivery.isolation_alarms += 1
                continue
            best = max(candidates,
                       key=lambda c: (compute_forwarding_score(c[1], self._tv(c[0]), c[2]),
                                      -c[0]))
            self.forwarder_of[gw.id] = best[0]
            if best[0] in net.nodes:
                self._ensure_session(gw, net.nodes[best[0]])

    def _advertise_personas(self, host: NodeState, gateways: list[NodeState],
                            acks: dict) -> None:
        personas = getattr(host.behavior, "personas", ())
        for persona_id, fake_pos in personas:
            self.known_personas[persona_id] = (host.id, fake_pos)
            closest = min(gateways,
                          key=lambda g: (distance(fake_pos, g.position), g.id))
            payload = struct.pack(">dHdd", host.battery_mah, 8, *fake_pos)
            # the host's radio carries the lie; the MAC is valid (it has GBK)
            fake_ack = make_frame(MsgType.ACK, persona_id, payload, gbk=self.gbk)
            outcome = self.channel.transmit(host, closest, fake_ack)
            log = getattr(host.behavior, "log", None)
            if log is not None:
                log.fake_locations_advertised += 1
            if outcome != DELIVERED:
                continue
            if self.defense and not self.current_table().trusted(persona_id):
                continue
            acks.setdefault(closest.id, []).append(
                (persona_id, host.battery_mah, 8, fake_pos))

    def _form_clusters(self) -> None:
        net, channel = self.network, self.channel
        for node in net.nodes.values():
            node.is_cluster_head = False
            node.cluster_key = None
        self.clusters, self.cluster_head = {}, {}
        carriers = sorted({f for f in self.forwarder_of.values()
                           if f is not None and f in net.nodes})
        if not carriers:
            return
        table = self.current_table()

        heard: dict[int, list[int]] = {}
        for carrier_id in carriers:
            carrier = net.nodes[carrier_id]
            solicit = self._gbk_frame(MsgType.JOIN_RQM, carrier,
                                      struct.pack(">H", carrier.region_id))
            for node_id in channel.broadcast(carrier, solicit, kinds=("N",)):
                if node_id not in carriers:
                    heard.setdefault(node_id, []).append(carrier_id)

        members: dict[int, list[int]] = {c: [c] for c in carriers}
        for node_id in sorted(heard):
            node = net.nodes[node_id]
            solicitor_id = min(heard[node_id])      # lowest-ID solicitor wins
            join = self._gbk_frame(MsgType.ACK, node, struct.pack(">I", solicitor_id))
            if channel.transmit(node, net.nodes[solicitor_id], join) != DELIVERED:
                continue
            if self.defense and not verify_frame(join, gbk=self.gbk):
                continue                            # no group key, cannot join
            if self.defense and not table.trusted(node_id):
                continue
            members[solicitor_id].append(node_id)

        for solicitor_id in carriers:
            cluster = sorted(members[solicitor_id])
            solicitor = net.nodes[solicitor_id]
            region = net.regions[solicitor.region_id]
            cluster_id = ClusterId(region.id, table.timestamp,
                                   tuple(region.substation_ids))
            announce = self._gbk_frame(MsgType.CLUSTER_ID, solicitor,
                                       cluster_id.encode())
            channel.broadcast(solicitor, announce, kinds=("N",))
            head_id = max(
                cluster,
                key=lambda i: (candidate_score(net.nodes[i].battery_mah, self._tv(i),
                                               self._connectivity(net.nodes[i])[1]),
                               -i))
            self.clusters[solicitor_id] = cluster
            self.cluster_head[solicitor_id] = head_id
            head = net.nodes[head_id]
            head.is_cluster_head = True
            for member_id in cluster:
                net.nodes[member_id].cluster_key = cluster_id.encode()
                if member_id != head_id and member_id in set(carriers):
                    self._ensure_session(net.nodes[member_id], head)

    # -- sessions ------------------------------------------------------------

    def session_key(self, a_id: int, b_id: int) -> bytes | None:
        return self.sessions.get((min(a_id, b_id), max(a_id, b_id)))

    def _ensure_session(self, a: NodeState, b: NodeState,
                        path: tuple[int, ...] | None = None) -> bytes | None:
        pair = (min(a.id, b.id), max(a.id, b.id))
        if pair in self.sessions:
            return self.sessions[pair]
        hops = path if path is not None else (a.id, b.id)
        there = self._relay_chain(hops, MsgType.PUBKEY,
                                  encode_point(a.keypair.public, SIM_CURVE), a)
        if there is None:
            return None
        back = self._relay_chain(tuple(reversed(hops)), MsgType.PUBKEY,
                                 encode_point(b.keypair.public, SIM_CURVE), b)
        if back is None:
            return None
        if self.defense and not (a.has_gbk and b.has_gbk):
            self.delivery.auth_rejects += 1
            return None
        secret = derive_shared_secret(a.keypair.private, b.keypair.public, SIM_CURVE)
        self.sessions[pair] = cipher_key(secret)
        return self.sessions[pair]

    def _relay_chain(self, hops: tuple[int, ...], msg_type: MsgType,
                     payload: bytes, origin: NodeState,
                     session_key: bytes | None = None) -> Frame | None:
        """Carry a frame hop by hop; a corrupting relay swaps the payload
        mid-path. Returns the frame as it arrived (its MAC may no longer
        match), or None if any hop dropped it."""
        frame = self._gbk_frame(msg_type, origin, payload, session_key=session_key)
        for u_id, v_id in zip(hops, hops[1:]):
            u, v = self.network.nodes[u_id], self.network.nodes[v_id]
            if u_id != origin.id and msg_type in DATA_TYPES:
                corrupt = getattr(u.behavior, "corrupt_payload", None)
                if corrupt is not None:
                    tampered = corrupt(frame.payload)
                    if tampered is not None:
                        if msg_type in (MsgType.EMD, MsgType.DATA):
                            # cannot recompute the end-to-end MAC without x_k
                            frame = Frame(frame.msg_type, frame.sender_id, tampered,
                                          frame.chain_key, frame.mac)
                        else:
                            frame = make_frame(msg_type, frame.sender_id, tampered,
                                               gbk=self.gbk)
            if self.channel.transmit(u, v, frame) != DELIVERED:
                return None
            if self.defense and msg_type not in (MsgType.EMD, MsgType.DATA):
                if not verify_frame(frame, gbk=self.gbk):
                    self.delivery.auth_rejects += 1
                    return None
        return frame

    # -- gateway-local ES selection --------------------------------------------

    def _gw_probe_event(self) -> None:
        t = self.queue.now
        if self.round_active(t) and t != self.last_round_start:
            self.queue.schedule(self.last_round_start + self.config.round_active_window,
                                self._gw_probe_event)
            return
        self._select_es(probe=True)
        self.queue.schedule(t + self.config.gw_probe_interval, self._gw_probe_event)

    def _pmu_substations(self) -> list[int]:
        return sorted({n.substation_id for n in self.network.members(kind="PMU",
                                                                     alive_only=False)})

    def _select_es(self, probe: bool = False) -> None:
        net = self.network
        for substation_id in self._pmu_substations():
            if substation_id in (net.main_cc, net.backup_cc):
                continue                      # monitored locally, no WSN leg
            gw = net.nodes[net.gateway_of_substation[substation_id]]
            reach = self.channel.radio.range_of(gw.kind)
            candidates = [es for es in net.members(kind="ES")
                          if distance(gw.position, es.position) <= reach]
            scored = []
            for es in candidates:
                tv = self._probe(gw, es) if probe else self._tv(es.id)
                if is_trusted(tv):
                    scored.append((tv, -es.id, es))
            if not scored:
                self.es_choice[gw.id] = None
                self.delivery.isolation_alarms += 1
                continue
            best = max(scored)[2]
            self.es_choice[gw.id] = best.id
            self._ensure_session(gw, best)

    # -- readings ---------------------------------------------------------------

    def _new_reading(self, size: int) -> tuple[int, bytes]:
        counter = next(self._marker_seq)
        marker = MARKER_MAGIC + struct.pack(">I", counter) + self.rng.randbytes(8)
        reading = marker + self.rng.randbytes(size - MARKER_LEN)
        self.delivery.emit(counter, marker, len(reading) * 8)
        self.trace.log(self.queue.now, "emit", f"reading:{counter}",
                       f"bits:{len(reading) * 8}")
        return counter, reading

    def ingest_reading(self, reading: bytes) -> None:
        if reading[:4] != MARKER_MAGIC or len(reading) < MARKER_LEN:
            return
        (counter,) = struct.unpack_from(">I", reading, 4)
        if self.delivery.marker_issued(counter, reading[:MARKER_LEN]):
            if self.delivery.deliver(counter):
                self.trace.log(self.queue.now, "deliver", f"reading:{counter}", "ok")

    def _server_ingest(self, server: NodeState, blob: bytes) -> None:
        plain = None
        for keypair in reversed(self.server_key_history[server.id]):
            try:
                if self.defense:
                    plain = ecc_decrypt(keypair.private, blob, SIM_CURVE)
                else:
                    plain = _lenient_ecc_decrypt(keypair.private, blob)
                break
            except (AuthenticationError, CipherFormatError, InvalidKeyError,
                    ValueError):
                continue
        if plain is None:
            self.delivery.tamper_detected += 1
            return
        try:
            records = unpack_records(plain)
        except (ValueError, struct.error):
            self.delivery.tamper_detected += 1
            return
        for _source, reading in records:
            self.ingest_reading(reading)

    # -- MU data path -------------------------------------------------------------

    def _mu_data_event(self) -> None:
        t = self.queue.now
        net = self.network
        sent_before, delivered_before = self.delivery.sent, self.delivery.delivered
        carry: dict[int, list[tuple[int, bytes]]] = {}

        for gw in net.members(kind="GW"):
            queue = self.gw_queue.setdefault(gw.id, [])
            for mu in net.members(kind="MU"):
                if mu.substation_id != gw.substation_id:
                    continue
                counter, reading = self._new_reading(self.config.mu_reading_bytes)
                if gw.substation_id in (net.main_cc, net.backup_cc):
                    self.ingest_reading(reading)   # same site as the server
                else:
                    queue.append((mu.id, reading))
            self._flush_gateway(gw, queue, carry)

        self._flush_clusters(carry)
        self._audit_tick(sent_before, delivered_before)
        self.queue.schedule(t + self.config.mu_interval, self._mu_data_event)

    def _flush_gateway(self, gw: NodeState, queue: list[tuple[int, bytes]],
                       carry: dict[int, list[tuple[int, bytes]]]) -> None:
        if not queue:
            return
        forwarder_id = self.forwarder_of.get(gw.id)
        if forwarder_id is None:
            self.delivery.isolation_alarms += 1
            return
        if forwarder_id not in self.network.nodes:
            # a phantom: frames vanish toward the advertised location
            _host, fake_pos = self.known_personas[forwarder_id]
            reach = self.channel.radio.range_of(gw.kind)
            for source_id, reading in queue:
                husk = Frame(MsgType.EMD, gw.id,
                             rc5_encrypt(bytes(16), pack_records([(source_id, reading)])))
                joules = self.channel.energy.energy_tx(
                    husk.wire_bits, min(distance(gw.position, fake_pos), reach))
                self.channel.debit(gw, joules)
                self.trace.log(self.queue.now, "tx",
                               f"{gw.id}->{forwarder_id}:EMD", "dropped(phantom)", joules)
            queue.clear()
            return
        forwarder = self.network.nodes[forwarder_id]
        key = self._ensure_session(gw, forwarder)
        if key is None:
            self.delivery.isolation_alarms += 1
            return
        for source_id, reading in queue:
            payload = rc5_encrypt(key, pack_records([(source_id, reading)]))
            frame = self._gbk_frame(MsgType.EMD, gw, payload, session_key=key)
            if self.channel.transmit(gw, forwarder, frame) != DELIVERED:
                continue
            if self.defense and not verify_frame(frame, gbk=self.gbk, session_key=key):
                self.delivery.auth_rejects += 1
                continue
            try:
                records = unpack_records(rc5_decrypt(key, frame.payload))
            except (CipherFormatError, ValueError, struct.error):
                self.delivery.tamper_detected += 1
                continue
            carry.setdefault(forwarder_id, []).extend(records)
        queue.clear()

    def _flush_clusters(self, carry: dict[int, list[tuple[int, bytes]]]) -> None:
        net = self.network
        routed_by_head: dict[int, list[tuple[int, bytes]]] = {}
        for solicitor_id in sorted(self.clusters):
            head_id = self.cluster_head[solicitor_id]
            head = net.nodes[head_id]
            for member_id in self.clusters[solicitor_id]:
                records = carry.pop(member_id, [])
                if not records:
                    continue
                if member_id == head_id:
                    routed_by_head.setdefault(head_id, []).extend(records)
                    continue
                member = net.nodes[member_id]
                key = self._ensure_session(member, head)
                if key is None:
                    continue
                payload = rc5_encrypt(key, pack_records(records))
                arrived = self._relay_chain((member_id, head_id), MsgType.DATA,
                                            payload, member, session_key=key)
                if arrived is None:
                    continue
                if self.defense and not verify_frame(arrived, gbk=self.gbk,
                                                     session_key=key):
                    self.delivery.auth_rejects += 1
                    continue
                try:
                    routed_by_head.setdefault(head_id, []).extend(
                        unpack_records(rc5_decrypt(key, arrived.payload)))
                except (CipherFormatError, ValueError, struct.error):
                    self.delivery.tamper_detected += 1
        # forwarders outside any cluster still deliver what they carry
        for node_id in sorted(carry):
            if carry[node_id]:
                routed_by_head.setdefault(node_id, []).extend(carry[node_id])
        for head_id in sorted(routed_by_head):
            self._send_aggregate(net.nodes[head_id], routed_by_head[head_id])

    def _send_aggregate(self, head: NodeState, records: list[tuple[int, bytes]]) -> None:
        # heads prefer the main control center; a severed relay graph falls
        # back to the backup center rather than stranding the whole cluster
        net = self.network
        for main in (True, False):
            path = self._route_to_cc(head, main=main)
            if path is None:
                continue
            server = net.nodes[net.main_server if main else net.backup_server]
            blob = ecc_encrypt(head.server_pubkeys[server.id],
                               pack_records(sorted(records)), SIM_CURVE, self.rng)
            arrived = self._relay_chain(path, MsgType.AGG_DATA, blob, head)
            if arrived is not None:
                self._server_ingest(server, arrived.payload)
            return
        self.delivery.undeliverable_alarms += 1

    def _route_to_cc(self, source: NodeState, main: bool) -> tuple[int, ...] | None:
        key = (source.id, main)
        if key in self.route_cache:
            return self.route_cache[key]
        net = self.network
        cc_gw = net.cc_gateway(main)
        reach = self.channel.radio.range_of(source.kind)
        if (source.region_id == cc_gw.region_id
                and distance(source.position, cc_gw.position) <= reach):
            path: tuple[int, ...] | None = (source.id, cc_gw.id)
        else:
            relays = [n for n in net.members(kind="N")
                      if self._trusted(n.id) or n.id == source.id]
            path = self._graph_path(relays + [cc_gw], source.id, cc_gw.id)
            if path is None:
                # threat exclusions can sever the sensor tier; storage nodes
                # and concentrators then relay as a last resort
                extended = relays + [
                    n for n in net.members(kind="ES") if self._trusted(n.id)
                ] + [
                    p for p in net.members(kind="PDC")
                    if p.alive and self._trusted(p.id)
                ]
                path = self._graph_path(extended + [cc_gw], source.id, cc_gw.id)
        self.route_cache[key] = path
        return path

    def _graph_path(self, pool: list[NodeState], src_id: int,
                    dst_id: int) -> tuple[int, ...] | None:
        adjacency = build_adjacency(
            pool,
            reach=lambda u: self.channel.radio.range_of(u.kind),
            weight_of=self._link_weight)
        found = dijkstra(adjacency, src_id, {dst_id})
        return tuple(found[1]) if found else None

    def _link_weight(self, u: NodeState, v: NodeState, dist: float) -> float:
        if not self.defense:
            return dist
        return route_weight(dist, v.battery_mah, self._tv(v.id))

    # -- PMU data path -------------------------------------------------------------

    def _pmu_data_event(self) -> None:
        t = self.queue.now
        net = self.network
        sent_before, delivered_before = self.delivery.sent, self.delivery.delivered
        pdc_inbox: dict[int, list[tuple[int, bytes]]] = {}

        for substation_id in self._pmu_substations():
            gw = net.nodes[net.gateway_of_substation[substation_id]]
            pmus = [n for n in net.members(kind="PMU")
                    if n.substation_id == substation_id]
            readings = []
            for pmu in pmus:
                counter, reading = self._new_reading(self.config.pmu_reading_bytes)
                if substation_id in (net.main_cc, net.backup_cc):
                    self.ingest_reading(reading)
                else:
                    readings.append((pmu.id, reading))
            if not readings:
                continue
            es_id = self.es_choice.get(gw.id)
            if es_id is None or not net.nodes[es_id].alive:
                self.delivery.isolation_alarms += 1
                continue
            es = net.nodes[es_id]
            key = self._ensure_session(gw, es)
            if key is None:
                self.delivery.isolation_alarms += 1
                continue
            payload = rc5_encrypt(key, pack_records(readings))
            frame = self._gbk_frame(MsgType.EMD, gw, payload, session_key=key)
            if self.channel.transmit(gw, es, frame) != DELIVERED:
                continue
            if self.defense and not verify_frame(frame, gbk=self.gbk, session_key=key):
                self.delivery.auth_rejects += 1
                continue
            try:
                records = unpack_records(rc5_decrypt(key, frame.payload))
            except (CipherFormatError, ValueError, struct.error):
                self.delivery.tamper_detected += 1
                continue
            self._es_to_pdc(es, records, pdc_inbox)

        for pdc_id in sorted(pdc_inbox):
            self._pdc_dispatch(net.nodes[pdc_id], pdc_inbox[pdc_id])
        self._audit_tick(sent_before, delivered_before)
        self.queue.schedule(t + self.config.pmu_interval, self._pmu_data_event)

    def _region_pdc(self, region_id: int) -> NodeState | None:
        acting = self.acting_pdc.get(region_id)
        if acting is not None:
            return self.network.nodes[acting]
        pdcs = self.network.members(kind="PDC", region=region_id, alive_only=False)
        return pdcs[0] if pdcs else None

    def _es_to_pdc(self, es: NodeState, records: list[tuple[int, bytes]],
                   pdc_inbox: dict[int, list[tuple[int, bytes]]]) -> None:
        net = self.network
        pdc = self._region_pdc(es.region_id)
        if pdc is None:
            self.delivery.undeliverable_alarms += 1
            return
        if pdc.id == es.id:
            pdc_inbox.setdefault(pdc.id, []).extend(records)
            return
        reach = self.channel.radio.range_of(es.kind)
        if distance(es.position, pdc.position) <= reach:
            path: tuple[int, ...] | None = (es.id, pdc.id)
        else:
            relays = [n for n in net.members(kind="ES")
                      if self._trusted(n.id) or n.id == es.id]
            adjacency = build_adjacency(
                relays + ([pdc] if pdc.id not in {r.id for r in relays} else []),
                reach=lambda u: self.channel.radio.range_of(u.kind),
                weight_of=self._link_weight)
            found = dijkstra(adjacency, es.id, {pdc.id})
            path = tuple(found[1]) if found else None
        if path is None:
            self.delivery.undeliverable_alarms += 1
            return
        key = self._ensure_session(es, pdc, path)
        if key is None:
            return
        payload = rc5_encrypt(key, pack_records(records))
        arrived = self._relay_chain(path, MsgType.DATA, payload, es, session_key=key)
        if arrived is None:
            return
        if self.defense and not verify_frame(arrived, gbk=self.gbk, session_key=key):
            self.delivery.auth_rejects += 1
            return
        try:
            pdc_inbox.setdefault(pdc.id, []).extend(
                unpack_records(rc5_decrypt(key, arrived.payload)))
        except (CipherFormatError, ValueError, struct.error):
            self.delivery.tamper_detected += 1

    def _pdc_dispatch(self, pdc: NodeState, records: list[tuple[int, bytes]]) -> None:
        """Aggregate and deliver to both control centers over the static
        concentrator overlay."""
        net = self.network
        for main in (True, False):
            server = net.nodes[net.main_server if main else net.backup_server]
            blob = ecc_encrypt(pdc.server_pubkeys[server.id],
                               pack_records(sorted(records)), SIM_CURVE, self.rng)
            path = self._pdc_route(pdc, main)
            if path is None:
                self.delivery.undeliverable_alarms += 1
                continue
            arrived = self._relay_chain(path, MsgType.AGG_DATA, blob, pdc)
            if arrived is not None:
                self._server_ingest(server, arrived.payload)

    def _pdc_route(self, pdc: NodeState, main: bool) -> tuple[int, ...] | None:
        key = (pdc.id, main)
        if key in self.pdc_routes:
            return self.pdc_routes[key]
        net = self.network
        cc_gw = net.cc_gateway(main)
        overlay = [node for rid in sorted(net.regions)
                   if (node := self._region_pdc(rid)) is not None and node.alive]
        adjacency = build_adjacency(
            overlay + [cc_gw],
            reach=lambda u: self.channel.radio.range_of(u.kind),
            weight_of=self._link_weight)
        found = dijkstra(adjacency, pdc.id, {cc_gw.id})
        if found is None:
            # concentrators too sparse: fall back to the trusted relay tier
            relays = [n for n in net.members(kind="ES") if self._trusted(n.id)]
            adjacency = build_adjacency(
                [pdc] + relays + [cc_gw],
                reach=lambda u: self.channel.radio.range_of(u.kind),
                weight_of=self._link_weight)
            found = dijkstra(adjacency, pdc.id, {cc_gw.id})
        path = tuple(found[1]) if found else None
        self.pdc_routes[key] = path
        return path

    # -- PDC failover ---------------------------------------------------------------

    def _check_pdc_failover(self) -> None:
        table = self.current_table()
        for region_id in sorted(self.network.regions):
            current = self._region_pdc(region_id)
            if current is None:
                continue
            failed = ((not current.alive) or current.battery_mah <= 0.0
                      or not table.trusted(current.id))
            if failed:
                self.pdc_failover(region_id)

    def pdc_failover(self, region_id: int) -> int | None:
        """Promote the most trusted ES of the region to acting concentrator."""
        net = self.network
        table = self.current_table()
        old = self._region_pdc(region_id)
        candidates = [es for es in net.members(kind="ES", region=region_id)
                      if table.trusted(es.id) and (old is None or es.id != old.id)]
        previous = self.acting_pdc.get(region_id)
        if previous is not None:
            net.nodes[previous].acting_pdc_for = None
        if not candidates:
            self.acting_pdc.pop(region_id, None)
            self.delivery.undeliverable_alarms += 1
            self.pdc_routes.clear()
            return None
        chosen = max(candidates, key=lambda es: (table.tv(es.id), -es.id))
        self.acting_pdc[region_id] = chosen.id
        chosen.acting_pdc_for = region_id
        self.pdc_routes.clear()
        self.trace.log(self.queue.now, "failover", f"region:{region_id}",
                       f"acting_pdc:{chosen.id}")
        return chosen.id

    def restore_pdc(self, region_id: int) -> None:
        """Operator action: the original concentrator is back in service."""
        previous = self.acting_pdc.pop(region_id, None)
        if previous is not None:
            self.network.nodes[previous].acting_pdc_for = None
        self.pdc_routes.clear()
        self.trace.log(self.queue.now, "failover", f"region:{region_id}", "restored")


def _lenient_ecc_decrypt(private: int, blob: bytes) -> bytes:
    """Baseline decryption: parses and decrypts but never checks the tag."""
    coord = SIM_CURVE.coord_bytes
    header = 2 * coord
    if len(blob) < header + 20:
        raise CipherFormatError("short ciphertext")
    ephemeral = decode_point(blob[:header], SIM_CURVE)
    body = blob[header:-20]
    key = cipher_key(derive_shared_secret(private, ephemeral, SIM_CURVE))
    return rc5_decrypt(key, body)
