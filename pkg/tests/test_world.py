import itertools

import pytest

from carsense.rng import substream
from carsense.world import (
    DamageProcess,
    GroundTruthEvent,
    ScenarioError,
    astar_path,
    build_grid,
    shortest_distance,
    step_damage,
)


def corridor(n):
    return build_grid(width=n, height=1)


def all_simple_paths(grid, start, goal, avoid):
    """Exhaustive path enumeration on tiny graphs; the oracle for reachability."""
    paths = []

    def walk(path):
        here = path[-1]
        if here == goal:
            paths.append(list(path))
            return
        for nxt in grid.neighbors(here):
            if nxt in path or nxt in avoid:
                continue
            path.append(nxt)
            walk(path)
            path.pop()

    walk([start])
    return paths


class TestGrid:
    def test_four_connected_adjacency(self):
        g = build_grid(3, 3)
        assert set(g.neighbors(4)) == {1, 3, 5, 7}
        assert set(g.neighbors(0)) == {1, 3}

    def test_blocked_cells_have_no_edges(self):
        g = build_grid(3, 3, blocked={4})
        assert 4 not in g.adjacency
        assert all(4 not in nbrs for nbrs in g.adjacency.values())

    def test_adjacency_symmetric(self):
        g = build_grid(4, 4, blocked={5}, removed_edges=[(0, 1)])
        for a, nbrs in g.adjacency.items():
            for b in nbrs:
                assert a in g.adjacency[b]

    def test_invalid_added_edge_rejected(self):
        with pytest.raises(ScenarioError):
            build_grid(3, 3, blocked={4}, added_edges=[(4, 0)])

    def test_event_validation(self):
        g = build_grid(3, 3, blocked={4})
        GroundTruthEvent(cycle=1, cell=0, state=1, deadline_min=30).validate(g)
        with pytest.raises(ScenarioError):
            GroundTruthEvent(cycle=1, cell=4, state=1, deadline_min=30).validate(g)
        with pytest.raises(ScenarioError):
            GroundTruthEvent(cycle=1, cell=0, state=1, deadline_min=0).validate(g)


class TestStepDamage:
    def test_zero_probability_identity(self):
        g = build_grid(3, 3)
        proc = DamageProcess(appearance_prob=0.0, repair_prob=0.0)
        for cycle in range(1, 5):
            g = step_damage(g, proc, rng_seed=7, cycle=cycle)
        assert g.damaged == frozenset()

    def test_schedule_override(self):
        g = build_grid(3, 3)
        proc = DamageProcess(appearance_prob=0.0, schedule={2: frozenset({5})})
        g1 = step_damage(g, proc, rng_seed=7, cycle=1)
        assert g1.damaged == frozenset()
        g2 = step_damage(g1, proc, rng_seed=7, cycle=2)
        assert g2.damaged == frozenset({5})
        g3 = step_damage(g2, proc, rng_seed=7, cycle=3)
        assert g3.damaged == frozenset()  # schedule gone, appearance 0, repair applies

    def test_probability_one_damages_everything(self):
        g = build_grid(3, 1)
        proc = DamageProcess(appearance_prob=1.0, repair_prob=0.0)
        g = step_damage(g, proc, rng_seed=1, cycle=1)
        assert g.damaged == frozenset({0, 1, 2})

    def test_deterministic_given_seed(self):
        g = build_grid(6, 6, blocked={7, 8})
        proc = DamageProcess(appearance_prob=0.3, repair_prob=0.2)
        a = b = g
        for cycle in range(1, 10):
            a = step_damage(a, proc, rng_seed=42, cycle=cycle)
            b = step_damage(b, proc, rng_seed=42, cycle=cycle)
            assert a.damaged == b.damaged

    def test_redamage_can_be_disabled(self):
        g = build_grid(2, 1)
        proc = DamageProcess(appearance_prob=1.0, repair_prob=1.0, allow_redamage=False)
        g1 = step_damage(g, proc, rng_seed=1, cycle=1)
        assert g1.damaged == frozenset({0, 1})
        g2 = step_damage(g1, proc, rng_seed=1, cycle=2, ever_damaged=g1.damaged)
        assert g2.damaged == frozenset()
        g3 = step_damage(g2, proc, rng_seed=1, cycle=3, ever_damaged=g1.damaged)
        assert g3.damaged == frozenset()


class TestShortestDistance:
    def test_identity(self):
        g = corridor(3)
        assert shortest_distance(g, 1, 1) == 0

    def test_line_graph(self):
        g = corridor(3)
        assert shortest_distance(g, 0, 2) == 2

    def test_damaged_middle_unreachable(self):
        # Oracle: exhaustive enumeration of simple paths on the corridor.
        g = corridor(3)
        avoid = {1}
        assert all_simple_paths(g, 0, 2, avoid) == []
        assert shortest_distance(g, 0, 2, avoid=avoid) is None

    def test_unreachable_is_not_zero(self):
        g = corridor(3)
        assert shortest_distance(g, 0, 2, avoid={1}) != 0

    def test_goal_in_avoid_unreachable(self):
        g = corridor(3)
        assert shortest_distance(g, 0, 2, avoid={2}) is None

    def test_triangle_inequality(self):
        g = build_grid(5, 5, blocked={6, 12})
        cells = g.cells()
        rng = substream(3, "tri")
        for _ in range(60):
            a, b, c = rng.sample(cells, 3)
            dab = shortest_distance(g, a, b)
            dbc = shortest_distance(g, b, c)
            dac = shortest_distance(g, a, c)
            if None in (dab, dbc, dac):
                continue
            assert dac <= dab + dbc

    def test_matches_exhaustive_on_small_grids(self):
        g = build_grid(3, 3, blocked={4})
        for a, b in itertools.combinations(g.cells(), 2):
            paths = all_simple_paths(g, a, b, avoid=set())
            oracle = min((len(p) - 1 for p in paths), default=None)
            assert shortest_distance(g, a, b) == oracle


class TestAstar:
    def test_path_endpoints_and_adjacency(self):
        g = build_grid(5, 5, blocked={7, 11})
        path = astar_path(g, 0, 24)
        assert path[0] == 0 and path[-1] == 24
        for a, b in zip(path, path[1:]):
            assert b in g.neighbors(a)

    def test_blocked_cells_never_on_path(self):
        g = build_grid(5, 5, blocked={2, 7, 12})
        for goal in (20, 24, 4):
            path = astar_path(g, 0, goal)
            if path is not None:
                assert not set(path) & g.blocked

    def test_avoid_respected(self):
        g = build_grid(3, 1)
        assert astar_path(g, 0, 2, avoid={1}) is None

    def test_optimal_length(self):
        g = build_grid(6, 6, blocked={8, 9, 10})
        for goal in g.cells():
            p = astar_path(g, 0, goal)
            d = shortest_distance(g, 0, goal)
            assert (p is None) == (d is None)
            if p is not None:
                assert len(p) - 1 == d
