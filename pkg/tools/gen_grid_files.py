#!/usr/bin/env python3
"""Regenerate the shipped .grid data files.

Coordinates are synthetic: a force-directed layout over the bus graph,
normalized and scaled so the default region radius (400 m) produces the
documented region count for each file (4 regions for the 14-bus system,
8 for the 118-bus system).  Branch multiplicities encode parallel
circuits and are calibrated so connectivity ranking reproduces the
documented control-center selections; see each file's header and the
project notes.

The layout seed is scanned until structural constraints hold:
  * 14-bus: substation S4 lies on the hull of substation centroids while
    S1/S2 do not (so region seeding starts at S4), and the region graph
    is connected.
  * 118-bus: region graph connected at the calibrated scale.

Run from the repository root after `pip install -e .`:
    python3 tools/gen_grid_files.py
"""

import math
import os
import sys

import networkx as nx

from sermt import grid

OUT_DIR = os.path.join(os.path.dirname(__file__), "..", "src", "sermt", "data")
RADIUS = 400.0

# ---------------------------------------------------------------------------
# 14-bus system: 3 transformer branches -> 11 substations.
# Parallel-circuit multiplicities on 1-2, 1-5, 7-8 and 9-10 rank S1 and S2
# as the two control centers with S4 next (region seed).

IEEE14_LINES = [
    (1, 2), (1, 2), (1, 2), (1, 2), (1, 2),
    (1, 5), (1, 5), (1, 5),
    (2, 3), (2, 4), (2, 5), (3, 4), (4, 5),
    (6, 11), (6, 12), (6, 13),
    (7, 8), (7, 8), (7, 9),
    (9, 10), (9, 10), (9, 14),
    (10, 11), (12, 13), (13, 14),
]
IEEE14_TRANSFORMERS = [(4, 7), (4, 9), (5, 6)]

# ---------------------------------------------------------------------------
# 118-bus system: the standard 186-branch list (natural parallel circuits
# included) plus ten calibration circuits, 11 transformer branches ->
# 107 substations with {68,69,116} as main CC and {17,30} as backup.

IEEE118_BASE = [
    (1, 2), (1, 3), (4, 5), (3, 5), (5, 6), (6, 7), (8, 9), (9, 10),
    (4, 11), (5, 11), (11, 12), (2, 12), (3, 12), (7, 12), (11, 13),
    (12, 14), (13, 15), (14, 15), (12, 16), (15, 17), (16, 17), (17, 18),
    (18, 19), (19, 20), (15, 19), (20, 21), (21, 22), (22, 23), (23, 24),
    (23, 25), (25, 27), (27, 28), (28, 29), (8, 30), (26, 30), (17, 31),
    (29, 31), (23, 32), (31, 32), (27, 32), (15, 33), (19, 34), (35, 36),
    (35, 37), (33, 37), (34, 36), (34, 37), (37, 39), (37, 40), (30, 38),
    (39, 40), (40, 41), (40, 42), (41, 42), (43, 44), (34, 43), (44, 45),
    (45, 46), (46, 47), (46, 48), (47, 49), (42, 49), (42, 49), (45, 49),
    (48, 49), (49, 50), (49, 51), (51, 52), (52, 53), (53, 54), (49, 54),
    (49, 54), (54, 55), (54, 56), (55, 56), (56, 57), (50, 57), (56, 58),
    (51, 58), (54, 59), (56, 59), (56, 59), (55, 59), (59, 60), (59, 61),
    (60, 61), (60, 62), (61, 62), (63, 64), (38, 65), (64, 65), (49, 66),
    (49, 66), (62, 66), (62, 67), (66, 67), (65, 68), (47, 69), (49, 69),
    (69, 70), (24, 70), (70, 71), (24, 72), (71, 72), (71, 73), (70, 74),
    (70, 75), (69, 75), (74, 75), (76, 77), (69, 77), (75, 77), (77, 78),
    (78, 79), (77, 80), (77, 80), (79, 80), (68, 81), (77, 82), (82, 83),
    (83, 84), (83, 85), (84, 85), (85, 86), (85, 88), (85, 89), (88, 89),
    (89, 90), (89, 90), (90, 91), (89, 92), (89, 92), (91, 92), (92, 93),
    (92, 94), (93, 94), (94, 95), (80, 96), (82, 96), (94, 96), (80, 97),
    (80, 98), (80, 99), (92, 100), (94, 100), (95, 96), (96, 97), (98, 100),
    (99, 100), (100, 101), (92, 102), (101, 102), (100, 103), (100, 104),
    (103, 104), (103, 105), (100, 106), (104, 105), (105, 106), (105, 107),
    (105, 108), (106, 107), (108, 109), (103, 110), (109, 110), (110, 111),
    (110, 112), (17, 113), (32, 113), (32, 114), (27, 115), (114, 115),
    (68, 116), (12, 117), (75, 118), (76, 118),
]
IEEE118_EXTRA = [
    (65, 68), (68, 81), (47, 69), (69, 70), (69, 75), (69, 77),   # main CC
    (15, 17), (16, 17), (17, 18), (17, 113),                       # backup CC
]
IEEE118_TRANSFORMERS = [
    (8, 5), (26, 25), (30, 17), (38, 37), (63, 59), (64, 61),
    (65, 66), (68, 69), (81, 80), (68, 116), (86, 87),
]


# Hand-placed 14-bus coordinates (unit-ish scale): the two control-center
# buses 1 and 2 sit centrally, substation {4,7,9} spreads along the eastern
# edge so its centroid lies on the hull of substation centroids.
IEEE14_POSITIONS = {
    1: (450, 480), 2: (560, 520), 3: (620, 300), 4: (940, 600),
    5: (350, 560), 6: (280, 640), 7: (1020, 700), 8: (1000, 430),
    9: (1070, 620), 10: (600, 760), 11: (300, 780), 12: (160, 720),
    13: (260, 880), 14: (560, 900),
}


def build_graph(n_buses, lines, transformers):
    g = nx.Graph()
    g.add_nodes_from(range(1, n_buses + 1))
    for a, b in lines + transformers:
        if g.has_edge(a, b):
            g[a][b]["weight"] += 1.0
        else:
            g.add_edge(a, b, weight=1.0)
    return g


def normalize(pos):
    xs = [p[0] for p in pos.values()]
    ys = [p[1] for p in pos.values()]
    span = max(max(xs) - min(xs), max(ys) - min(ys))
    return {bus: ((p[0] - min(xs)) / span, (p[1] - min(ys)) / span) for bus, p in pos.items()}


def spring_positions(g, seed):
    return normalize(nx.spring_layout(g, seed=seed, iterations=300))


def topology_at_scale(unit_pos, lines, transformers, scale):
    text = grid_text(unit_pos, lines, transformers, scale, header="")
    return grid.load_topology(text)


def grid_text(unit_pos, lines, transformers, scale, header):
    out = [header] if header else []
    for bus in sorted(unit_pos):
        x, y = unit_pos[bus]
        out.append(f"BUS {bus} {x * scale:.2f} {y * scale:.2f}")
    for a, b in transformers:
        out.append(f"BRANCH {a} {b} T")
    for a, b in lines:
        out.append(f"BRANCH {a} {b} L")
    return "\n".join(out) + "\n"


def region_graph_connected(topology, substations, regions):
    sub_of = {bus: s.id for s in substations for bus in s.bus_ids}
    region_of = {sid: r.id for r in regions for sid in r.substation_ids}
    rg = nx.Graph()
    rg.add_nodes_from(r.id for r in regions)
    for br in topology.branches:
        ra, rb = region_of[sub_of[br.from_bus]], region_of[sub_of[br.to_bus]]
        if ra != rb:
            rg.add_edge(ra, rb)
    return nx.is_connected(rg) if len(rg) else True


def calibrate_scale(unit_pos, lines, transformers, target_regions):
    """Return a scale (meters) whose region count equals the target, taken
    from the middle of the widest matching scale interval for robustness."""
    lo, hi, steps = 200.0, 6000.0, 400
    matches = []
    for i in range(steps + 1):
        scale = lo + (hi - lo) * i / steps
        topo = topology_at_scale(unit_pos, lines, transformers, scale)
        subs = grid.partition_substations(topo)
        regions = grid.divide_regions(subs, RADIUS)
        if len(regions) == target_regions:
            matches.append(scale)
    if not matches:
        return None
    # widest contiguous run of matching scales
    runs, run = [], [matches[0]]
    for s in matches[1:]:
        if s - run[-1] <= (hi - lo) / steps * 1.5:
            run.append(s)
        else:
            runs.append(run)
            run = [s]
    runs.append(run)
    best = max(runs, key=len)
    return best[len(best) // 2]


def check_ieee14(topology):
    subs = grid.partition_substations(topology)
    assert len(subs) == 11, len(subs)
    main, backup = grid.select_control_centers(subs)
    if (main, backup) != (1, 2):
        return False, "cc"
    hull = grid.convex_hull_ids([(s.id, s.position) for s in subs])
    if 1 in hull or 2 in hull or 4 not in hull:
        return False, f"hull {sorted(hull)}"
    regions = grid.divide_regions(subs, RADIUS)
    if len(regions) != 4 or regions[0].seed_substation != 4:
        return False, f"regions {len(regions)} seed {regions[0].seed_substation}"
    if not region_graph_connected(topology, subs, regions):
        return False, "region graph"
    return True, ""


def check_ieee118(topology):
    subs = grid.partition_substations(topology)
    assert len(subs) == 107, len(subs)
    by_id = {s.id: s for s in subs}
    main, backup = grid.select_control_centers(subs)
    if by_id[main].bus_ids != frozenset({68, 69, 116}):
        return False, f"main {sorted(by_id[main].bus_ids)}"
    if by_id[backup].bus_ids != frozenset({17, 30}):
        return False, f"backup {sorted(by_id[backup].bus_ids)}"
    regions = grid.divide_regions(subs, RADIUS)
    if len(regions) != 8:
        return False, f"regions {len(regions)}"
    if not region_graph_connected(topology, subs, regions):
        return False, "region graph"
    return True, ""


def try_write(name, unit_pos, lines, transformers, target_regions, checker, header):
    scale = calibrate_scale(unit_pos, lines, transformers, target_regions)
    if scale is None:
        return False, "no scale hit the target region count"
    text = grid_text(unit_pos, lines, transformers, scale, header)
    topo = grid.load_topology(text)   # re-parse: constraints must hold after rounding
    ok, why = checker(topo)
    if not ok:
        return False, why
    with open(os.path.join(OUT_DIR, name), "w") as f:
        f.write(text)
    print(f"{name}: scale {scale:.1f} m -> OK")
    return True, ""


def generate_spring(name, n_buses, lines, transformers, target_regions, checker, header):
    g = build_graph(n_buses, lines, transformers)
    for seed in range(200):
        ok, why = try_write(name, spring_positions(g, seed), lines, transformers,
                            target_regions, checker, header)
        if ok:
            print(f"{name}: layout seed {seed}")
            return
        print(f"{name}: seed {seed} rejected ({why})")
    sys.exit(f"no layout seed satisfied the constraints for {name}")


HEADER14 = """\
# 14-bus transmission system, synthetic hand-placed coordinates (hub buses
# central, substation {4,7,9} on the eastern hull), scaled so the default
# 400 m region radius yields 4 regions seeded from S4.  Parallel circuits on
# 1-2, 1-5, 7-8, 9-10 calibrate control-center ranking (main S1, backup S2).
# Regenerate with tools/gen_grid_files.py."""

HEADER118 = """\
# 118-bus transmission system, synthetic coordinates (force-directed layout,
# scaled so the default 400 m region radius yields 8 regions).  Standard
# 186-branch list plus ten calibration circuits around buses 68/69 and 17 so
# connectivity ranking selects {68,69,116} as main CC and {17,30} as backup.
# Regenerate with tools/gen_grid_files.py."""


def main():
    os.makedirs(OUT_DIR, exist_ok=True)
    ok, why = try_write("ieee14.grid", normalize(IEEE14_POSITIONS), IEEE14_LINES,
                        IEEE14_TRANSFORMERS, 4, check_ieee14, HEADER14)
    if not ok:
        sys.exit(f"hand layout for ieee14.grid failed: {why}")
    generate_spring("ieee118.grid", 118, IEEE118_BASE + IEEE118_EXTRA, IEEE118_TRANSFORMERS, 8,
                    check_ieee118, HEADER118)


if __name__ == "__main__":
    main()
