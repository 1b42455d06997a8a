"""Road damage discovery: scout selection, coverage walks, accessibility updates.

A share of willing cars scout the road graph each cycle instead of
verifying events. Each scout walks from its current cell toward a far
target, greedily preferring edges the fleet has covered least, and
records the damage state of every cell it traverses or sees next to it.
Observed cells move their accessibility index up or down by the cycle's
penalty step, which itself tracks the sliding-window correlation between
detected damages and reported events.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

from carsense.rng import substream
from carsense.world import Grid


@dataclass
class AccessibilityMap:
    """Per-cell belief in [0, 1] that a cell is passable.

    Cells keep their value until a scout observes them; the per-cycle
    visit log records when that happened.
    """

    initial: float = 0.5
    values: dict[int, float] = field(default_factory=dict)
    last_visited_cycle: dict[int, int] = field(default_factory=dict)

    def get(self, cell: int) -> float:
        return self.values.get(cell, self.initial)

    def apply(self, cell: int, damaged: bool, kappa: float, cycle: int) -> None:
        delta = -kappa if damaged else kappa
        self.values[cell] = min(1.0, max(0.0, self.get(cell) + delta))
        self.last_visited_cycle[cell] = cycle


@dataclass
class KappaWindow:
    """Sliding window of (damages detected, events reported) per cycle."""

    length: int = 5
    default: float = 0.65
    floor: float = 0.05
    damages: deque = field(default_factory=deque)
    events: deque = field(default_factory=deque)
    current: float = 0.65

    def __post_init__(self):
        self.damages = deque(self.damages, maxlen=self.length)
        self.events = deque(self.events, maxlen=self.length)


def update_kappa(kw: KappaWindow, d_total: int, n_events: int) -> float:
    """Push this cycle's totals and recompute the accessibility penalty.

    The penalty is the Pearson correlation of the two series over the
    window, clamped into [floor, 1]; a window shorter than two cycles or
    one with zero variance falls back to the tuned default. A negative
    raw correlation would invert the accessibility update's meaning, so
    the floor keeps the step positive.
    """
    kw.damages.append(float(d_total))
    kw.events.append(float(n_events))
    n = len(kw.damages)
    if n < 2:
        kw.current = kw.default
        return kw.current
    d_mean = sum(kw.damages) / n
    e_mean = sum(kw.events) / n
    cov = sum((d - d_mean) * (e - e_mean) for d, e in zip(kw.damages, kw.events))
    d_var = sum((d - d_mean) ** 2 for d in kw.damages)
    e_var = sum((e - e_mean) ** 2 for e in kw.events)
    if d_var == 0.0 or e_var == 0.0:
        kw.current = kw.default
        return kw.current
    raw = cov / (d_var * e_var) ** 0.5
    kw.current = min(1.0, max(kw.floor, raw))
    return kw.current


def select_scouts(willing_cars: list[str], q_percent: float, seed: int, cycle: int) -> list[str]:
    """Choose floor(Q% of willing cars) as scouts for this cycle."""
    if not 0 <= q_percent <= 100:
        raise ValueError("scout percentage must lie in [0, 100]")
    count = int(len(willing_cars) * q_percent / 100)
    if count == 0:
        return []
    rng = substream(seed, "scouts", cycle)
    return sorted(rng.sample(sorted(willing_cars), count))


@dataclass(frozen=True)
class ScoutPlan:
    routes: dict[str, list[int]]  # scout id -> ordered cells, starting at its position
    edges_planned: int


def _far_target(grid: Grid, start: int, avoid: frozenset[int]) -> int:
    """BFS-farthest traversable cell from start (one double-sweep leg)."""
    far = start
    dist = {start: 0}
    queue = deque([start])
    while queue:
        cell = queue.popleft()
        for nxt in grid.neighbors(cell):
            if nxt in dist or nxt in avoid:
                continue
            dist[nxt] = dist[cell] + 1
            if dist[nxt] > dist[far] or (dist[nxt] == dist[far] and nxt < far):
                far = nxt
            queue.append(nxt)
    return far


def _dist_map(grid: Grid, goal: int, avoid: frozenset[int]) -> dict[int, int]:
    dist = {goal: 0}
    queue = deque([goal])
    while queue:
        cell = queue.popleft()
        for nxt in grid.neighbors(cell):
            if nxt in dist or nxt in avoid:
                continue
            dist[nxt] = dist[cell] + 1
            queue.append(nxt)
    return dist


def plan_coverage(
    grid: Grid,
    scout_positions: dict[str, int],
    per_scout_budget: int,
    edge_visits: dict[tuple[int, int], int] | None = None,
    avoid: frozenset[int] = frozenset(),
) -> ScoutPlan:
    """Plan one maximum-coverage walk per scout.

    Each scout aims at the farthest reachable cell from its position and
    extends greedily: among incident edges it has not used itself this
    walk, take the one the fleet has covered least, breaking ties toward
    the target and then by cell index. ``edge_visits`` carries coverage
    counts from prior cycles so patrols rotate; ``avoid`` excludes cells
    already known to be damaged. Scouts in separate graph components
    plan within their own component.
    """
    if per_scout_budget < 1:
        raise ValueError("per-scout budget must be at least one cell")
    visits: dict[tuple[int, int], int] = dict(edge_visits or {})
    routes: dict[str, list[int]] = {}
    planned_edges: set[tuple[int, int]] = set()

    for scout in sorted(scout_positions):
        start = scout_positions[scout]
        target = _far_target(grid, start, avoid)
        dist = _dist_map(grid, target, avoid)
        route = [start]
        used: set[tuple[int, int]] = set()
        while len(route) < per_scout_budget:
            here = route[-1]
            best = None
            for nxt in grid.neighbors(here):
                if nxt in avoid:
                    continue
                edge = (min(here, nxt), max(here, nxt))
                if edge in used:
                    continue
                key = (visits.get(edge, 0), dist.get(nxt, len(dist) + grid.n_cells), nxt)
                if best is None or key < best[0]:
                    best = (key, nxt, edge)
            if best is None:
                break
            _, nxt, edge = best
            used.add(edge)
            visits[edge] = visits.get(edge, 0) + 1
            planned_edges.add(edge)
            route.append(nxt)
        routes[scout] = route
    return ScoutPlan(routes=routes, edges_planned=len(planned_edges))


@dataclass(frozen=True)
class DamageObservation:
    cycle: int
    cell: int
    damaged: int
    observer: str


def observe_and_update(
    plan: ScoutPlan,
    grid: Grid,
    access: AccessibilityMap,
    kw: KappaWindow,
    cycle: int,
    n_events: int,
    observation_radius: int = 1,
    believed_damaged: frozenset[int] = frozenset(),
) -> tuple[list[DamageObservation], dict[str, int]]:
    """Execute scout routes against the true damage state and update beliefs.

    Scouts traverse their planned cells until blocked by damage; a
    blocked scout records the damaged cell and continues greedily on
    undamaged neighbors with whatever budget remains. Damage within the
    observation radius is read exactly; so is the repair of a cell the
    fleet believed damaged (a known collapse site is checked in passing,
    a new road is only trusted once driven). After the traversals, the
    penalty step for this cycle is recomputed from the (damage, event)
    window and every observed cell's accessibility moves by it, once per
    cell; unobserved cells are untouched.

    Returns the observation log and the scouts' final positions.
    """
    observed: dict[int, int] = {}
    log: list[DamageObservation] = []
    final_pos: dict[str, int] = {}

    def note(cell: int, damaged: bool, observer: str) -> None:
        state = 1 if damaged else 0
        if cell not in observed:
            observed[cell] = state
            log.append(DamageObservation(cycle, cell, state, observer))

    def sense_around(cell: int, observer: str) -> None:
        if observation_radius <= 0:
            return
        frontier = {cell}
        seen = {cell}
        for _ in range(observation_radius):
            nxt_frontier = set()
            for c in frontier:
                for nxt in grid.neighbors(c):
                    if nxt not in seen:
                        seen.add(nxt)
                        nxt_frontier.add(nxt)
                        if nxt in grid.damaged:
                            note(nxt, True, observer)
                        elif nxt in believed_damaged:
                            note(nxt, False, observer)
            frontier = nxt_frontier

    for scout in sorted(plan.routes):
        route = plan.routes[scout]
        if not route:
            continue
        pos = route[0]
        budget = len(route) - 1
        note(pos, pos in grid.damaged, scout)
        sense_around(pos, scout)
        used_edges: set[tuple[int, int]] = set()
        pending = deque(route[1:])
        while budget > 0:
            nxt = pending.popleft() if pending else None
            if nxt is None or nxt in grid.damaged or nxt not in grid.neighbors(pos):
                if nxt is not None and nxt in grid.damaged:
                    note(nxt, True, scout)
                # reroute: greedy novel-edge step over undamaged neighbors
                pending.clear()
                best = None
                for cand in grid.neighbors(pos):
                    if cand in grid.damaged:
                        note(cand, True, scout)
                        continue
                    edge = (min(pos, cand), max(pos, cand))
                    if edge in used_edges:
                        continue
                    if best is None or cand < best:
                        best = cand
                if best is None:
                    break
                nxt = best
            used_edges.add((min(pos, nxt), max(pos, nxt)))
            pos = nxt
            budget -= 1
            note(pos, False, scout)
            sense_around(pos, scout)
        final_pos[scout] = pos

    d_total = sum(observed.values())
    kappa = update_kappa(kw, d_total, n_events)
    for cell in sorted(observed):
        access.apply(cell, damaged=bool(observed[cell]), kappa=kappa, cycle=cycle)
    return log, final_pos
