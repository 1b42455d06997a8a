"""Route learning over source-destination states.

For each (source, destination) pair the table enumerates up to K
shortest simple paths on the static road graph. Route weights multiply
the accessibility of every cell on the route, scaled by a global penalty
differential that falls when the fleet's observed route damage rises
cycle over cycle. Selection is epsilon-greedy with an initial
exploration phase that works through unexplored routes first.
"""

from __future__ import annotations

import heapq
import random
from collections import deque
from dataclasses import dataclass, field

from carsense.scouting import AccessibilityMap
from carsense.world import Grid


@dataclass(frozen=True)
class MdpState:
    source: int
    destination: int


@dataclass
class RouteAction:
    cells: tuple[int, ...]

    @property
    def length(self) -> int:
        return len(self.cells) - 1


def _bfs_path(
    adjacency: dict[int, tuple[int, ...]],
    start: int,
    goal: int,
    banned_cells: set[int],
    banned_edges: set[tuple[int, int]],
) -> list[int] | None:
    """Shortest path avoiding the given cells/edges; neighbors scanned in
    ascending order so equal-length paths resolve deterministically."""
    if start == goal:
        return [start]
    parent = {start: -1}
    queue = deque([start])
    while queue:
        cell = queue.popleft()
        for nxt in adjacency.get(cell, ()):
            if nxt in parent or nxt in banned_cells:
                continue
            if (cell, nxt) in banned_edges:
                continue
            parent[nxt] = cell
            if nxt == goal:
                path = [nxt]
                while path[-1] != start:
                    path.append(parent[path[-1]])
                path.reverse()
                return path
            queue.append(nxt)
    return None


def k_shortest_paths(grid: Grid, source: int, destination: int, k: int) -> list[list[int]]:
    """Up to k loopless shortest paths, ordered by (length, cells).

    Yen's algorithm over the unweighted road graph: each new path is the
    best spur off an already-found path with the shared prefix's next
    edges banned.
    """
    if k < 1:
        return []
    first = _bfs_path(grid.adjacency, source, destination, set(), set())
    if first is None:
        return []
    paths = [first]
    candidates: list[tuple[int, list[int]]] = []
    seen = {tuple(first)}
    while len(paths) < k:
        prev = paths[-1]
        for i in range(len(prev) - 1):
            spur = prev[i]
            root = prev[: i + 1]
            banned_edges = set()
            for p in paths:
                if p[: i + 1] == root and len(p) > i + 1:
                    banned_edges.add((p[i], p[i + 1]))
            banned_cells = set(root[:-1])
            tail = _bfs_path(grid.adjacency, spur, destination, banned_cells, banned_edges)
            if tail is None:
                continue
            candidate = root[:-1] + tail
            key = tuple(candidate)
            if key in seen:
                continue
            seen.add(key)
            heapq.heappush(candidates, (len(candidate), candidate))
        if not candidates:
            break
        _, best = heapq.heappop(candidates)
        paths.append(best)
    return paths


@dataclass
class StateEntry:
    actions: list[RouteAction]
    explored: set[int] = field(default_factory=set)  # action indices tried at least once


@dataclass
class MdpTable:
    """Per-state route actions plus the shared learning state."""

    k_routes: int = 8
    exploration_cycles: int = 9
    epsilon: float = 0.1
    sigma: float = 1.0
    sigma_floor: float = 0.01
    sigma_cap: float = 10.0
    sigma_cap_hits: int = 0
    prev_penalty_sum: float = 0.0
    states: dict[tuple[int, int], StateEntry] = field(default_factory=dict)

    def entry(self, grid: Grid, state: MdpState) -> StateEntry:
        key = (state.source, state.destination)
        if key not in self.states:
            paths = k_shortest_paths(grid, state.source, state.destination, self.k_routes)
            self.states[key] = StateEntry([RouteAction(tuple(p)) for p in paths])
        return self.states[key]


def enumerate_actions(
    grid: Grid,
    state: MdpState,
    deadline_budget_min: float,
    k: int,
    travel_min_per_cell: float = 2.0,
    table: MdpTable | None = None,
) -> list[RouteAction]:
    """Routes for a state whose travel time fits the deadline budget.

    Paths are cached in the table when one is supplied, since the static
    topology never changes within a run. Unreachable pairs yield an
    empty list for the caller to mark infeasible.
    """
    if table is not None:
        actions = table.entry(grid, state).actions
    else:
        actions = [RouteAction(tuple(p)) for p in k_shortest_paths(grid, state.source, state.destination, k)]
    return [a for a in actions if a.length * travel_min_per_cell <= deadline_budget_min]


def action_probabilities(
    actions: list[RouteAction], access: AccessibilityMap, sigma: float
) -> tuple[list[float], list[float]]:
    """Raw route weights and their normalized sampling distribution.

    A route's raw weight is sigma times the product of the accessibility
    of every cell on it. When all weights vanish (saturated damage
    beliefs) the distribution falls back to uniform.
    """
    if not actions:
        raise ValueError("state has no actions")
    raw = []
    for a in actions:
        w = sigma
        for cell in a.cells:
            w *= access.get(cell)
        raw.append(w)
    total = sum(raw)
    if total <= 0.0:
        return raw, [1.0 / len(actions)] * len(actions)
    return raw, [w / total for w in raw]


def select_action(
    table: MdpTable,
    grid: Grid,
    state: MdpState,
    actions: list[RouteAction],
    access: AccessibilityMap,
    cycle: int,
    rng: random.Random,
) -> RouteAction:
    """Pick a route for the state under the exploration schedule.

    During the exploration phase, not-yet-tried routes are sampled by
    their weights; once all are tried (or the phase ends), the choice is
    greedy on normalized weight with probability 1 - epsilon and sampled
    from the distribution otherwise.
    """
    if not actions:
        raise ValueError("cannot select from an empty action set")
    entry = table.entry(grid, state)
    index_of = {a.cells: i for i, a in enumerate(entry.actions)}
    _, probs = action_probabilities(actions, access, table.sigma)

    def draw(indices: list[int], weights: list[float]) -> int:
        total = sum(weights)
        if total <= 0.0:
            weights = [1.0] * len(indices)
            total = float(len(indices))
        x = rng.random() * total
        acc = 0.0
        for i, w in zip(indices, weights):
            acc += w
            if x < acc:
                return i
        return indices[-1]

    exploring = cycle <= table.exploration_cycles
    if exploring:
        unexplored = [
            i for i, a in enumerate(actions) if index_of[a.cells] not in entry.explored
        ]
        if unexplored:
            pick = draw(unexplored, [probs[i] for i in unexplored])
        else:
            pick = draw(list(range(len(actions))), probs)
    else:
        if table.epsilon > 0.0 and rng.random() < table.epsilon:
            pick = draw(list(range(len(actions))), probs)
        else:
            best = max(probs)
            pick = probs.index(best)
    entry.explored.add(index_of[actions[pick].cells])
    return actions[pick]


def observe_penalty(
    action: RouteAction, prior_damage: dict[int, int], observed: dict[int, int]
) -> int:
    """Believed damage along an executed route.

    Prior knowledge carries over unless this cycle's fleet observations
    contradict it: a fresh discovery marks a cell damaged, a traversal
    of a cell previously believed damaged marks it repaired.
    """
    total = 0
    for cell in action.cells:
        state = observed.get(cell, prior_damage.get(cell, 0))
        total += state
    return total


def update_sigma(table: MdpTable, penalty_sum: float, prev_penalty_sum: float | None = None) -> float:
    """Move the penalty differential by the normalized damage trend.

    Rising observed damage lowers sigma, falling damage raises it; two
    damage-free cycles leave it alone. The value is floored so route
    weights stay positive and capped so a long damage decline cannot run
    away (cap hits are counted, not hidden).
    """
    prev = table.prev_penalty_sum if prev_penalty_sum is None else prev_penalty_sum
    denom = penalty_sum + prev
    if denom > 0.0:
        table.sigma = table.sigma - (penalty_sum - prev) / denom
    if table.sigma > table.sigma_cap:
        table.sigma = table.sigma_cap
        table.sigma_cap_hits += 1
    table.sigma = max(table.sigma, table.sigma_floor)
    table.prev_penalty_sum = penalty_sum
    return table.sigma
