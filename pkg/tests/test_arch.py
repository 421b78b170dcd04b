"""Fabric model: construction, distances, routing, state, files.

The routing oracle is a 2x3 mesh small enough to enumerate shortest
paths by hand; mesh/hexamesh structural properties are then checked on
the built-in systems.
"""

from collections import deque

import pytest

from pimsched.arch import (
    KIB,
    Chiplet,
    Link,
    PimType,
    SystemGraph,
    build_hexamesh,
    build_mesh,
    desk_mesh,
    load_topology_file,
    full_mesh,
    toy_mesh,
    write_topology_file,
)
from pimsched.errors import FormatError, TopologyError


def small_mesh():
    """2x3 mesh, 4 standard chiplets, I/O at cells (0,1) and (1,1).

    Ids row-major: 0=std(0,0) 1=io(0,1) 2=std(0,2) 3=std(1,0)
    4=io(1,1) 5=std(1,2).
    """
    return build_mesh(2, 3, [(PimType.STANDARD, 4)], n_io=2)


def test_small_mesh_layout_as_drawn():
    g = small_mesh()
    kinds = ["std", "io", "std", "std", "io", "std"]
    assert ["io" if c.is_io else "std" for c in g.chiplets] == kinds
    pairs = {(min(l.a, l.b), max(l.a, l.b)) for l in g.links}
    assert pairs == {(0, 1), (1, 2), (0, 3), (1, 4), (2, 5), (3, 4), (4, 5)}


def test_small_mesh_hand_counted_distances():
    g = small_mesh()
    assert g.hop_distances(0) == [0, 1, 2, 1, 2, 3]
    assert g.hop_distances(2) == [2, 1, 0, 3, 2, 1]
    assert g.hop_distance(3, 2) == 3


def test_small_mesh_route_prefers_lexicographic_tie():
    g = small_mesh()
    # three shortest 0->5 paths exist; smallest id sequence is via 1 then 2
    assert g.route(0, 5) == (0, 1, 2, 5)
    assert g.route(5, 0) == (5, 2, 1, 0)
    assert g.route(4, 4) == (4,)


def _bfs_oracle(g, src):
    dist = {src: 0}
    q = deque([src])
    while q:
        u = q.popleft()
        for v in g.neighbors[u]:
            if v not in dist:
                dist[v] = dist[u] + 1
                q.append(v)
    return [dist[i] for i in range(len(g.chiplets))]


def test_desk_mesh_distances_match_bfs_oracle():
    g = desk_mesh()
    for src in range(len(g.chiplets)):
        assert g.hop_distances(src) == _bfs_oracle(g, src)


def test_desk_mesh_routes_are_shortest_and_linked():
    g = desk_mesh()
    pairs = {(l.a, l.b) for l in g.links} | {(l.b, l.a) for l in g.links}
    for src in range(len(g.chiplets)):
        for dst in range(len(g.chiplets)):
            path = g.route(src, dst)
            assert len(path) == g.hop_distance(src, dst) + 1
            assert all(p in pairs for p in zip(path, path[1:]))


def test_desk_mesh_composition():
    g = desk_mesh()
    assert len(g.chiplets) == 14
    assert len(g.io_ids) == 4
    by_type = {t: len(g.members(t)) for t in PimType}
    assert by_type == {
        PimType.STANDARD: 3,
        PimType.SHARED_ADC: 3,
        PimType.ACCUMULATOR: 2,
        PimType.ADC_LESS: 2,
    }
    for c in g.chiplets:
        if c.is_io:
            assert c.mem_cap == 0 and not c.can_accept_weights()
        else:
            assert c.mem_avail == c.mem_cap > 0
            assert c.can_accept_weights()


def test_memory_capacities_and_thermal_limits():
    g = desk_mesh()
    cap = {t: g.chiplets[g.members(t)[0]].mem_cap for t in PimType}
    assert cap[PimType.STANDARD] == 9568 * KIB
    assert cap[PimType.SHARED_ADC] == 9792 * KIB
    assert cap[PimType.ACCUMULATOR] == 19200 * KIB
    assert cap[PimType.ADC_LESS] == 2416 * KIB
    tmax = {t: g.chiplets[g.members(t)[0]].t_max for t in PimType}
    # ReRAM-based crossbars cap at 330 K, SRAM-based at 358 K
    assert tmax[PimType.STANDARD] == 330.0
    assert tmax[PimType.ACCUMULATOR] == 330.0
    assert tmax[PimType.SHARED_ADC] == 358.0
    assert tmax[PimType.ADC_LESS] == 358.0


def test_full_mesh_composition():
    g = full_mesh()
    assert len(g.compute_ids) == 78
    assert len(g.members(PimType.STANDARD)) == 25
    assert len(g.members(PimType.SHARED_ADC)) == 28
    assert len(g.members(PimType.ACCUMULATOR)) == 10
    assert len(g.members(PimType.ADC_LESS)) == 15


def test_toy_mesh_is_symmetric_about_io():
    g = toy_mesh()
    assert len(g.compute_ids) == 2
    a, b = g.compute_ids
    assert g.chiplets[a].pim_type is PimType.SHARED_ADC
    assert g.chiplets[b].pim_type is PimType.ADC_LESS
    assert g.nearest_io_distance(a) == g.nearest_io_distance(b) == 1


def test_hexamesh_interior_degree_is_six():
    g = build_hexamesh(4, 4, [(PimType.STANDARD, 16)], n_io=0)
    degrees = [len(g.neighbors[i]) for i in range(16)]
    assert max(degrees) == 6
    # id 5 sits at grid cell (1,1), fully interior
    assert len(g.neighbors[5]) == 6


def test_mesh_rejects_overfull_grid():
    with pytest.raises(TopologyError):
        build_mesh(2, 2, [(PimType.STANDARD, 4)], n_io=2)


def test_boundary_supports_at_most_eight_io():
    with pytest.raises(TopologyError):
        build_mesh(8, 8, [(PimType.STANDARD, 4)], n_io=9)


def test_graph_validation_rejects_bad_links():
    c = [Chiplet(0, PimType.STANDARD, 0, 0, 4.0, 8, 8),
         Chiplet(1, PimType.STANDARD, 1, 0, 4.0, 8, 8)]
    with pytest.raises(TopologyError):
        SystemGraph(list(c), [Link(0, 0)])
    with pytest.raises(TopologyError):
        SystemGraph(list(c), [Link(0, 1), Link(1, 0)])
    with pytest.raises(TopologyError):
        SystemGraph(list(c), [Link(0, 2)])


def test_graph_rejects_disconnected_fabric():
    c = [Chiplet(i, PimType.STANDARD, i, 0, 4.0, 8, 8) for i in range(4)]
    with pytest.raises(TopologyError):
        SystemGraph(c, [Link(0, 1), Link(2, 3)])


def test_clone_isolates_mutable_state():
    g = desk_mesh()
    g2 = g.clone()
    cid = g.compute_ids[0]
    g2.chiplets[cid].mem_avail = 0
    g2.chiplets[cid].temp_k = 400.0
    g2.chiplets[cid].throttled = True
    assert g.chiplets[cid].mem_avail == g.chiplets[cid].mem_cap
    assert g.chiplets[cid].temp_k == 298.0
    assert not g.chiplets[cid].throttled


def test_cluster_state_aggregates_and_open_flag():
    g = desk_mesh()
    t = PimType.ADC_LESS
    ids = g.members(t)
    st = g.cluster_state()[t]
    assert st.member_ids == ids
    assert st.mem_cap == st.mem_avail == 2 * 2416 * KIB
    assert st.any_open
    for i in ids:
        g.chiplets[i].mem_avail = 0
    assert not g.cluster_state()[t].any_open
    g.chiplets[ids[0]].mem_avail = 1
    assert g.cluster_state()[t].any_open
    g.chiplets[ids[0]].throttled = True
    assert not g.cluster_state()[t].any_open


def test_topology_file_round_trip(tmp_path):
    g = desk_mesh()
    path = tmp_path / "sys.json"
    write_topology_file(g, path)
    g2 = load_topology_file(path)
    assert [(c.id, c.pim_type, c.x_mm, c.y_mm, c.mem_cap, c.t_max)
            for c in g2.chiplets] == [
        (c.id, c.pim_type, c.x_mm, c.y_mm, c.mem_cap, c.t_max) for c in g.chiplets
    ]
    for src in range(len(g.chiplets)):
        assert g2.hop_distances(src) == g.hop_distances(src)
    assert not g2.has_link_overrides


def test_link_overrides_round_trip(tmp_path):
    c = [Chiplet(0, PimType.STANDARD, 0, 0, 4.0, 8, 8),
         Chiplet(1, PimType.STANDARD, 1, 0, 4.0, 8, 8)]
    g = SystemGraph(c, [Link(0, 1, latency_s=2e-9, energy_pj_per_bit=0.7)])
    path = tmp_path / "ovr.json"
    write_topology_file(g, path)
    g2 = load_topology_file(path)
    assert g2.has_link_overrides
    ln = g2.route_links(0, 1)[0]
    assert ln.latency_s == 2e-9
    assert ln.energy_pj_per_bit == 0.7


def test_load_rejects_unknown_pim_type(tmp_path):
    path = tmp_path / "sys.json"
    write_topology_file(desk_mesh(), path)
    path.write_text(path.read_text().replace('"standard"', '"quantum"'))
    with pytest.raises(FormatError):
        load_topology_file(path)


def test_load_rejects_wrong_version(tmp_path):
    path = tmp_path / "sys.json"
    write_topology_file(desk_mesh(), path)
    path.write_text(path.read_text().replace('"version": 1', '"version": 99'))
    with pytest.raises(FormatError):
        load_topology_file(path)
