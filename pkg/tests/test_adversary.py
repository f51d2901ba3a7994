"""Attack wiring: spec validation, per-attack effects, and the post-run
confidentiality audit."""

import random

import pytest

from sermt import rng as rngmod
from sermt.adversary import (
    AttackConfigError,
    AttackSpec,
    apply_attacks,
    confidentiality_scan,
    cyclic_pass_pattern,
    resolve_targets,
)
from sermt.entities import Network
from sermt.grid import Branch, Deployment, EntitySeed, GridTopology, Region, Substation
from sermt.protocol import ProtocolConfig, ProtocolEngine
from sermt.simcore import Channel, EnergyModel, EventQueue, RadioModel, Trace

from test_protocol import make_sim, mini_world


def attacked_sim(world, specs, *, defense=True, seed=11, **overrides):
    net, chan, queue, trace, eng = make_sim(world, defense=defense, seed=seed,
                                            **overrides)
    eng.start()
    logs = apply_attacks(specs, net, chan, eng, queue, seed)
    return net, chan, queue, trace, eng, logs


def worm_world():
    """Two far-apart CC substations; a tunnel can make region-1's carrier
    audible in region 2 even though no radio crosses the gap."""
    pos = {1: (0, 0), 2: (20, 0), 3: (1000, 0), 4: (1020, 0)}
    branches = (Branch(1, 2, True), Branch(3, 4, True), Branch(2, 3, False))
    topo = GridTopology(pos, branches)
    subs = [Substation(1, frozenset({1, 2}), (10, 0), 1),
            Substation(2, frozenset({3, 4}), (1010, 0), 1)]
    regions = [Region(1, (1,), 1, (10, 0)), Region(2, (2,), 2, (1010, 0))]
    rows = [
        ("N", 1, (60, 0), 1),                        # region-1 carrier
        ("N", 2, (1060, 0), 2),                      # region-2 carrier
        ("N", 3, (1100, 40), 2),                     # the lured victim
        ("N", 4, (120, 0), 1), ("N", 6, (940, 0), 2),  # tunnel endpoints
        ("PDC", 11, (0, 10), 1), ("PDC", 12, (1010, 10), 2),
        ("MU", 13, (0, 0), 1, 1, 1), ("MU", 14, (20, 0), 1, 1, 2),
        ("MU", 15, (1000, 0), 2, 2, 3), ("MU", 16, (1020, 0), 2, 2, 4),
        ("GW", 7, (10, 0), 1, 1), ("GW", 8, (1010, 0), 2, 2),
        ("SERVER", 9, (10, 0), 1, 1), ("SERVER", 10, (1010, 0), 2, 2),
    ]
    dep = Deployment(tuple(EntitySeed(*r) for r in rows), main_cc=1, backup_cc=2)
    return topo, subs, regions, dep


# -- spec validation ----------------------------------------------------------------

def test_specs_rejected_outside_threat_model():
    net, chan, queue, trace, eng = make_sim(mini_world)
    with pytest.raises(AttackConfigError):
        AttackSpec(kind="JAM", target_ids=(7,))
    with pytest.raises(AttackConfigError):
        AttackSpec(kind="DROP", target_ids=(7,), attack_interval=0.0)
    with pytest.raises(AttackConfigError):
        AttackSpec(kind="WORMHOLE", target_ids=(7,))         # needs two ends
    with pytest.raises(AttackConfigError):
        AttackSpec(kind="EAVESDROP", foreign=True)           # needs a position
    with pytest.raises(AttackConfigError):
        AttackSpec(kind="DROP")                              # no targets at all
    # gateways, servers, and metering units are beyond the attacker's reach
    for protected in (23, 26, 16, 22):
        spec = AttackSpec(kind="DROP", target_ids=(protected,))
        with pytest.raises(AttackConfigError):
            apply_attacks([spec], net, chan, eng, queue, seed=1)
    with pytest.raises(AttackConfigError):
        apply_attacks([AttackSpec(kind="DROP", target_ids=(999,))],
                      net, chan, eng, queue, seed=1)


def test_random_target_selection_is_seeded_and_bounded():
    net, chan, queue, trace, eng = make_sim(mini_world)
    spec = AttackSpec(kind="DROP", count=5)
    rng_a = rngmod.substream(3, "attack:x")
    rng_b = rngmod.substream(3, "attack:x")
    picked_a = resolve_targets(spec, net, rng_a)
    picked_b = resolve_targets(spec, net, rng_b)
    assert picked_a == picked_b and len(picked_a) == 5
    assert all(net.nodes[i].kind in ("N", "ES") for i in picked_a)
    with pytest.raises(AttackConfigError):
        resolve_targets(AttackSpec(kind="DROP", count=999), net, rng_a)

    # two specs cannot stack behaviors on one node
    net2, chan2, queue2, trace2, eng2 = make_sim(mini_world)
    with pytest.raises(AttackConfigError):
        apply_attacks([AttackSpec(kind="DROP", target_ids=(7,)),
                       AttackSpec(kind="SINKHOLE", target_ids=(7,))],
                      net2, chan2, eng2, queue2, seed=1)


def test_empty_spec_list_matches_clean_trace():
    net, chan, queue, trace, eng, logs = attacked_sim(mini_world, [])
    queue.run_until(121.0)
    clean_net, clean_chan, clean_queue, clean_trace, clean_eng = make_sim(mini_world)
    clean_eng.start()
    clean_queue.run_until(121.0)
    assert logs == []
    assert trace.digest() == clean_trace.digest()


# -- drop ---------------------------------------------------------------------------

def test_cyclic_pattern_is_exact_in_every_window():
    rng = random.Random(0xD20)
    for num in range(1, 11):
        pattern = cyclic_pass_pattern(num / 10)
        assert len(pattern) in (1, 2, 5, 10)
        drops = [not ok for ok in pattern]
        assert sum(drops) / len(drops) == num / 10
        # every window spanning whole periods drops exactly the fraction
        for _ in range(20):
            start = rng.randrange(0, 50)
            window = [drops[(start + k) % len(drops)] for k in range(len(drops) * 3)]
            assert sum(window) == 3 * sum(drops)


def test_drop_attack_scores_thirty_and_gets_blocked():
    spec = AttackSpec(kind="DROP", target_ids=(7,), drop_fraction=0.7)
    net, chan, queue, trace, eng, logs = attacked_sim(mini_world, [spec])
    queue.run_until(61.0)
    table = eng.tables[net.main_server]
    assert table.records[7] == 30.0
    assert table.threat_list == {7}
    assert eng.forwarder_of[25] == 8
    assert logs[0].frames_swallowed >= 7
    assert eng.delivery.sent == eng.delivery.delivered  # routed around it


# -- flood --------------------------------------------------------------------------

def test_flood_drains_victims_but_corrupts_nothing():
    spec = AttackSpec(kind="FLOOD", target_ids=(1,), attack_interval=1.0,
                      flood_rate=10)
    net, chan, queue, trace, eng, logs = attacked_sim(mini_world, [spec])
    queue.run_until(60.0)
    clean_net, clean_chan, clean_queue, clean_trace, clean_eng = make_sim(mini_world)
    clean_eng.start()
    clean_queue.run_until(60.0)

    assert logs[0].bogus_frames_sent == 61 * 10          # bursts at t = 0..60
    assert eng.delivery.auth_rejects > clean_eng.delivery.auth_rejects
    assert eng.delivery.forged_accepts == 0
    # trust state is untouched: flooding only costs energy
    assert eng.tables[net.main_server].serialize() == \
        clean_eng.tables[clean_net.main_server].serialize()
    assert eng.forwarder_of == clean_eng.forwarder_of
    assert eng.delivery.sent == eng.delivery.delivered

    # an in-range battery victim pays at least the receive energy per frame
    bogus_bits = (7 + 6 + 1 + 20) * 8
    floor_mah = 61 * 10 * chan.energy.to_mah(chan.energy.energy_rx(bogus_bits))
    for victim in (2, 3):                                # N nodes near the flooder
        extra = net.nodes[victim].debited_mah - clean_net.nodes[victim].debited_mah
        assert extra >= floor_mah * 0.999


# -- sybil --------------------------------------------------------------------------

def test_sybil_personas_enter_candidates_and_land_on_threat_list():
    spec = AttackSpec(kind="SYBIL", target_ids=(8,), personas=3)
    net, chan, queue, trace, eng, logs = attacked_sim(mini_world, [spec])
    queue.run_until(1.0)
    assert len(eng.known_personas) == 3
    assert all(host == 8 for host, _pos in eng.known_personas.values())
    assert logs[0].fake_locations_advertised >= 3

    queue.run_until(201.0)                 # next round probes the phantoms
    table = eng.tables[net.main_server]
    for persona_id in eng.known_personas:
        assert table.records[persona_id] == 0.0
        assert persona_id in table.threat_list


def test_selected_phantom_swallows_gateway_traffic():
    net, chan, queue, trace, eng = make_sim(mini_world)
    eng.start()
    queue.run_until(1.0)
    persona_id = net.allocate_id()
    eng.known_personas[persona_id] = (8, (860.0, 40.0))
    eng.forwarder_of[25] = persona_id      # as if selection had been fooled
    sent_before = eng.delivery.sent
    debited_before = net.nodes[25].debited_mah
    queue.run_until(16.0)                  # one data tick
    assert eng.delivery.sent > sent_before
    assert eng.delivery.delivered < eng.delivery.sent
    assert any("dropped(phantom)" in line for line in trace.lines)
    assert net.nodes[25].debited_mah == debited_before  # gateways are mains-powered


# -- sinkhole -----------------------------------------------------------------------

def test_sinkhole_wins_selection_then_gets_exposed():
    spec = AttackSpec(kind="SINKHOLE", target_ids=(7,), attack_interval=30.0)
    net, chan, queue, trace, eng, logs = attacked_sim(mini_world, [spec])
    queue.run_until(1.0)
    # inflated battery/connectivity wins the selection argmax outright
    assert eng.forwarder_of[25] == 7
    sent_at_round_zero = eng.delivery.sent

    queue.run_until(199.0)
    assert logs[0].frames_swallowed > 0
    assert eng.delivery.delivered < eng.delivery.sent   # swallowed MU frames

    queue.run_until(201.0)                 # trust round exposes the sinkhole
    table = eng.tables[net.main_server]
    assert 7 in table.threat_list
    assert eng.forwarder_of[25] == 8

    delivered_before = eng.delivery.delivered
    sent_before = eng.delivery.sent
    queue.run_until(231.0)                 # traffic flows around it again
    assert eng.delivery.delivered - delivered_before == \
        eng.delivery.sent - sent_before

    # forged anchors were broadcast and every receiver rejected them
    assert logs[0].bogus_frames_sent >= 7
    assert eng.delivery.forged_accepts == 0


# -- wormhole -----------------------------------------------------------------------

def test_wormhole_lures_acks_out_of_radio_range():
    spec = AttackSpec(kind="WORMHOLE", target_ids=(4, 6))
    net, chan, queue, trace, eng, logs = attacked_sim(worm_world, [spec])
    queue.run_until(1.0)
    # the tunnel replays region-2's join solicitation into region 1; node 1
    # picks the lower-id (but unreachable) solicitor and its join is lost
    assert any("ACK | dropped(range)" in line for line in trace.lines)
    assert chan.drop_counts.get("range", 0) >= 1
    assert all(1 not in members for members in eng.clusters.values())

    clean_net, clean_chan, clean_queue, clean_trace, clean_eng = make_sim(worm_world)
    clean_eng.start()
    clean_queue.run_until(1.0)
    assert any(1 in members for members in clean_eng.clusters.values())
    assert clean_chan.drop_counts.get("range", 0) == 0


# -- eavesdropping / confidentiality ---------------------------------------------------

def test_foreign_eavesdropper_hears_everything_decrypts_nothing():
    spec = AttackSpec(kind="EAVESDROP", foreign=True, position=(810.0, 30.0))
    net, chan, queue, trace, eng, logs = attacked_sim(mini_world, [spec])
    queue.run_until(121.0)
    exposures = confidentiality_scan(chan, eng, logs)
    assert logs[0].frames_overheard > 100
    assert logs[0].payloads_decrypted == 0
    assert exposures == 0
    spy = net.nodes[logs[0].targets[0]]
    assert not spy.has_gbk
    # the defense also flags the mute planted device at the next round
    queue.run_until(201.0)
    assert spy.id in eng.tables[net.main_server].threat_list


def test_insider_eavesdropper_decrypts_only_its_own_sessions():
    spec = AttackSpec(kind="EAVESDROP", target_ids=(9,))    # the chosen ES
    net, chan, queue, trace, eng, logs = attacked_sim(mini_world, [spec])
    queue.run_until(121.0)
    exposures = confidentiality_scan(chan, eng, logs)
    assert exposures == 0                  # everything on the air is encrypted
    assert logs[0].payloads_decrypted > 0  # but its own session traffic opens
    own_keys = {key for pair, key in eng.sessions.items() if 9 in pair}
    assert own_keys                        # sanity: it really holds keys


# -- false data --------------------------------------------------------------------

def test_false_data_detected_by_mac_at_decrypting_hop():
    spec = AttackSpec(kind="FALSE_DATA", target_ids=(6,), corrupt_fraction=1.0)
    net, chan, queue, trace, eng, logs = attacked_sim(mini_world, [spec])
    queue.run_until(121.0)
    assert logs[0].readings_corrupted > 0
    assert eng.delivery.tamper_detected > 0
    assert eng.delivery.delivered < eng.delivery.sent
    assert eng.delivery.forged_accepts == 0


# -- determinism ---------------------------------------------------------------------

def test_attacked_runs_reproduce_bit_for_bit():
    digests = set()
    for _ in range(2):
        specs = [AttackSpec(kind="DROP", count=3),
                 AttackSpec(kind="FLOOD", target_ids=(1,), attack_interval=5.0)]
        net, chan, queue, trace, eng, logs = attacked_sim(mini_world, specs, seed=31)
        queue.run_until(121.0)
        digests.add(trace.digest())
        assert chan.conservation_errors() == []
    assert len(digests) == 1
