"""Grid world: sensing cells, road graph, and the ground-truth damage process.

Cells are indexed row-major on a width x height lattice. The road graph
is 4-connected by default; scenarios may remove or add edges. Blocked
cells are permanently unreachable and never appear in the graph. Damage
is a binary per-cell state that changes only at cycle boundaries via
``step_damage``; a damaged cell cannot be entered by any car.
"""

from __future__ import annotations

import heapq
from collections import deque
from dataclasses import dataclass, field, replace

from carsense.rng import substream


class ScenarioError(ValueError):
    """Raised when a grid or scenario description is inconsistent."""


@dataclass(frozen=True)
class Grid:
    """Static road topology plus the current binary damage state."""

    width: int
    height: int
    blocked: frozenset[int] = frozenset()
    adjacency: dict[int, tuple[int, ...]] = field(default_factory=dict)
    damaged: frozenset[int] = frozenset()

    @property
    def n_cells(self) -> int:
        return self.width * self.height

    def cells(self) -> list[int]:
        """All traversable (non-blocked) cell indices, ascending."""
        return [c for c in range(self.n_cells) if c not in self.blocked]

    def coords(self, cell: int) -> tuple[int, int]:
        return cell % self.width, cell // self.width

    def contains(self, cell: int) -> bool:
        return 0 <= cell < self.n_cells and cell not in self.blocked

    def neighbors(self, cell: int) -> tuple[int, ...]:
        return self.adjacency.get(cell, ())

    def validate(self) -> None:
        for a, nbrs in self.adjacency.items():
            if not self.contains(a):
                raise ScenarioError(f"adjacency references invalid cell {a}")
            for b in nbrs:
                if not self.contains(b):
                    raise ScenarioError(f"adjacency references invalid cell {b}")
                if a not in self.adjacency.get(b, ()):
                    raise ScenarioError(f"adjacency not symmetric for edge ({a}, {b})")
        for c in self.damaged:
            if not self.contains(c):
                raise ScenarioError(f"damaged cell {c} is blocked or out of range")


def build_grid(
    width: int,
    height: int,
    blocked: set[int] | frozenset[int] = frozenset(),
    removed_edges: list[tuple[int, int]] | None = None,
    added_edges: list[tuple[int, int]] | None = None,
    damaged: set[int] | frozenset[int] = frozenset(),
) -> Grid:
    """Construct a 4-connected grid, apply edge overrides, and validate."""
    if width < 1 or height < 1:
        raise ScenarioError("grid dimensions must be positive")
    blocked = frozenset(blocked)
    n = width * height
    for c in blocked:
        if not 0 <= c < n:
            raise ScenarioError(f"blocked cell {c} out of range")

    edges: set[tuple[int, int]] = set()
    for y in range(height):
        for x in range(width):
            c = y * width + x
            if c in blocked:
                continue
            if x + 1 < width and (c + 1) not in blocked:
                edges.add((c, c + 1))
            if y + 1 < height and (c + width) not in blocked:
                edges.add((c, c + width))
    for a, b in removed_edges or []:
        edges.discard((min(a, b), max(a, b)))
    for a, b in added_edges or []:
        if a in blocked or b in blocked or not (0 <= a < n and 0 <= b < n) or a == b:
            raise ScenarioError(f"added edge ({a}, {b}) references an invalid cell")
        edges.add((min(a, b), max(a, b)))

    adj: dict[int, list[int]] = {c: [] for c in range(n) if c not in blocked}
    for a, b in edges:
        adj[a].append(b)
        adj[b].append(a)
    adjacency = {c: tuple(sorted(nbrs)) for c, nbrs in adj.items()}

    grid = Grid(
        width=width,
        height=height,
        blocked=blocked,
        adjacency=adjacency,
        damaged=frozenset(damaged),
    )
    grid.validate()
    return grid


@dataclass(frozen=True)
class DamageProcess:
    """Stochastic appearance/repair of per-cell damage, plus overrides.

    ``schedule`` forces the exact damaged set for given cycles. Whether a
    repaired cell may be damaged again is configurable since real
    disasters differ on this.
    """

    appearance_prob: float = 0.0
    repair_prob: float = 0.0
    per_cell_appearance: dict[int, float] = field(default_factory=dict)
    per_cell_repair: dict[int, float] = field(default_factory=dict)
    schedule: dict[int, frozenset[int]] = field(default_factory=dict)
    allow_redamage: bool = True

    def validate(self, grid: Grid) -> None:
        probs = [self.appearance_prob, self.repair_prob]
        probs += list(self.per_cell_appearance.values())
        probs += list(self.per_cell_repair.values())
        if any(not 0.0 <= p <= 1.0 for p in probs):
            raise ScenarioError("damage probabilities must lie in [0, 1]")
        for cycle, cells in self.schedule.items():
            for c in cells:
                if not grid.contains(c):
                    raise ScenarioError(f"damage schedule at cycle {cycle} references invalid cell {c}")


@dataclass(frozen=True)
class GroundTruthEvent:
    """The true state of a reported event, scored against at run end."""

    cycle: int
    cell: int
    state: int
    deadline_min: float

    def validate(self, grid: Grid) -> None:
        if self.state not in (0, 1):
            raise ScenarioError(f"event state must be 0 or 1, got {self.state}")
        if self.deadline_min <= 0:
            raise ScenarioError("event deadline must be positive")
        if not grid.contains(self.cell):
            raise ScenarioError(f"event cell {self.cell} is blocked or out of range")


def step_damage(
    grid: Grid,
    process: DamageProcess,
    rng_seed: int,
    cycle: int,
    ever_damaged: frozenset[int] = frozenset(),
) -> Grid:
    """Advance the damage state by one cycle.

    A fixed schedule entry for the cycle replaces the damaged set
    outright for exactly that cycle; once the scheduled cycle passes,
    cells it forced revert unless re-scheduled or re-sampled. On
    unscheduled cycles each undamaged cell becomes damaged with its
    appearance probability and each damaged cell is repaired with its
    repair probability. Deterministic given (rng_seed, cycle).
    """
    if cycle in process.schedule:
        return replace(grid, damaged=frozenset(process.schedule[cycle]))

    rng = substream(rng_seed, "damage", cycle)
    damaged = set(grid.damaged) - set(process.schedule.get(cycle - 1, frozenset()))
    for c in grid.cells():  # ascending order keeps the draw sequence stable
        if c in damaged:
            p = process.per_cell_repair.get(c, process.repair_prob)
            if rng.random() < p:
                damaged.discard(c)
        else:
            if not process.allow_redamage and c in ever_damaged:
                continue
            p = process.per_cell_appearance.get(c, process.appearance_prob)
            if rng.random() < p:
                damaged.add(c)
    return replace(grid, damaged=frozenset(damaged))


def shortest_distance(
    grid: Grid, start: int, goal: int, avoid: frozenset[int] | set[int] = frozenset()
) -> int | None:
    """Minimum hop count from start to goal, or None if unreachable.

    ``avoid`` holds cells believed damaged; they cannot be entered, the
    goal included. The start is never excluded (a car already there can
    still drive out).
    """
    if not grid.contains(start) or not grid.contains(goal):
        raise ScenarioError(f"shortest_distance endpoints must be valid cells ({start}, {goal})")
    if start == goal:
        return 0
    if goal in avoid:
        return None
    seen = {start}
    queue = deque([(start, 0)])
    while queue:
        cell, d = queue.popleft()
        for nxt in grid.neighbors(cell):
            if nxt in seen or nxt in avoid:
                continue
            if nxt == goal:
                return d + 1
            seen.add(nxt)
            queue.append((nxt, d + 1))
    return None


def astar_path(
    grid: Grid, start: int, goal: int, avoid: frozenset[int] | set[int] = frozenset()
) -> list[int] | None:
    """A* over the road graph with a Manhattan heuristic.

    Returns the cell list including both endpoints, or None. Ties are
    broken by cell index so results are deterministic.
    """
    if start == goal:
        return [start]
    if goal in avoid:
        return None
    sx, sy = grid.coords(goal)

    def h(cell: int) -> int:
        x, y = grid.coords(cell)
        return abs(x - sx) + abs(y - sy)

    open_heap: list[tuple[int, int, int]] = [(h(start), 0, start)]
    g_cost = {start: 0}
    parent: dict[int, int] = {}
    while open_heap:
        f, g, cell = heapq.heappop(open_heap)
        if cell == goal:
            path = [cell]
            while cell in parent:
                cell = parent[cell]
                path.append(cell)
            path.reverse()
            return path
        if g > g_cost.get(cell, g):
            continue
        for nxt in grid.neighbors(cell):
            if nxt in avoid:
                continue
            ng = g + 1
            if ng < g_cost.get(nxt, ng + 1):
                g_cost[nxt] = ng
                parent[nxt] = cell
                heapq.heappush(open_heap, (ng + h(nxt), ng, nxt))
    return None
