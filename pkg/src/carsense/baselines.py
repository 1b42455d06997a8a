"""Allocation and routing rules for the comparison schemes.

The full scheme (DASC) and its two social variants share the congestion
game; the five fleet baselines here assign tasks by simpler rules:
random choice, patrol loops over a near-Hamiltonian tour, nearest-first
matching, reputation-sorted matching against deadline-sorted tasks, and
deadline-rank rewards with greedy picking.
"""

from __future__ import annotations

import random
from collections import deque

from carsense.allocation import Reputation, Task
from carsense.scouting import AccessibilityMap
from carsense.world import Grid

SCHEMES = (
    "DASC",
    "DASC_no_MDP",
    "SocialCar",
    "Random",
    "FixedRoute",
    "ShortestDistance",
    "ReputationBased",
    "IncentiveBased",
)

BGT_SCHEMES = ("DASC", "DASC_no_MDP", "SocialCar")
SCOUTING_SCHEMES = ("DASC", "DASC_no_MDP")
# schemes whose cars record any event they happen to drive past; the
# directed schemes sense at their assigned destinations
OPPORTUNISTIC_SCHEMES = ("Random", "FixedRoute")
DAMAGE_AWARE_SCHEMES = (
    "DASC",
    "DASC_no_MDP",
    "Random",
    "FixedRoute",
    "ShortestDistance",
    "ReputationBased",
    "IncentiveBased",
)  # SocialCar routes and reroutes as if roads were intact


def run_baseline_allocation(
    scheme: str,
    cars: list[str],
    tasks: list[Task],
    distances: dict[tuple[str, str], float | None],
    reputation: Reputation,
    rng: random.Random,
    elapsed_min: float = 0.0,
) -> dict[str, str]:
    """Assign cars to tasks by the named baseline rule.

    Returns car -> task_id. FixedRoute assigns nothing (its cars patrol
    and verify opportunistically).
    """
    open_tasks = [t for t in tasks if t.remaining_min(elapsed_min) > 0.0]
    if scheme == "FixedRoute" or not open_tasks or not cars:
        return {}
    ordered_cars = sorted(cars)

    if scheme == "Random":
        return {car: rng.choice(open_tasks).task_id for car in ordered_cars}

    if scheme == "ShortestDistance":
        pairs = sorted(
            (
                (distances.get((car, t.task_id)), car, t.task_id)
                for car in ordered_cars
                for t in open_tasks
                if distances.get((car, t.task_id)) is not None
            ),
        )
        assignment: dict[str, str] = {}
        covered: set[str] = set()
        for dist, car, task_id in pairs:
            if car in assignment or task_id in covered:
                continue
            assignment[car] = task_id
            covered.add(task_id)
        for car in ordered_cars:
            if car in assignment:
                continue
            best = min(
                (t for t in open_tasks if distances.get((car, t.task_id)) is not None),
                key=lambda t: (distances[(car, t.task_id)], t.task_id),
                default=None,
            )
            if best is not None:
                assignment[car] = best.task_id
        return assignment

    if scheme == "ReputationBased":
        by_deadline = sorted(open_tasks, key=lambda t: (t.deadline_min, t.task_id))
        by_reputation = sorted(ordered_cars, key=lambda c: (-reputation.get(c), c))
        assignment = {}
        for i, car in enumerate(by_reputation):
            task = by_deadline[i % len(by_deadline)]
            assignment[car] = task.task_id
        return assignment

    if scheme == "IncentiveBased":
        # Shortest deadline earns the largest reward, then cars greedily
        # chase rewards, spreading out only until every task is taken.
        by_deadline = sorted(open_tasks, key=lambda t: (t.deadline_min, t.task_id))
        n = len(by_deadline)
        for rank, task in enumerate(by_deadline):
            task.reward = task.reward * (1.0 + (n - rank) / n)
        assignment = {}
        taken: set[str] = set()
        for car in ordered_cars:
            pool = [t for t in by_deadline if t.task_id not in taken] or by_deadline
            best = max(pool, key=lambda t: (t.reward, t.task_id))
            assignment[car] = best.task_id
            taken.add(best.task_id)
        return assignment

    raise ValueError(f"unknown baseline scheme {scheme!r}")


def nearest_neighbor_tour(grid: Grid) -> list[int]:
    """Closed patrol tour touching every reachable cell at least once.

    Nearest-neighbor approximation of a Hamiltonian cycle on the static
    graph: repeatedly hop to the closest unvisited cell, stitching legs
    together with shortest paths, then return to the start. Cells in
    other components are skipped.
    """
    cells = grid.cells()
    if not cells:
        return []
    start = cells[0]
    tour = [start]
    unvisited = set(cells) - {start}
    here = start
    while unvisited:
        dist, parent = _bfs_tree(grid, here)
        candidates = [c for c in unvisited if c in dist]
        if not candidates:
            break
        nxt = min(candidates, key=lambda c: (dist[c], c))
        leg = _path_from_tree(parent, here, nxt)
        tour.extend(leg[1:])
        unvisited -= set(leg)
        here = nxt
    dist, parent = _bfs_tree(grid, here)
    if start in dist and here != start:
        tour.extend(_path_from_tree(parent, here, start)[1:])
    return tour


def _bfs_tree(grid: Grid, start: int) -> tuple[dict[int, int], dict[int, int]]:
    dist = {start: 0}
    parent: dict[int, int] = {}
    q = deque([start])
    while q:
        cell = q.popleft()
        for nxt in grid.neighbors(cell):
            if nxt not in dist:
                dist[nxt] = dist[cell] + 1
                parent[nxt] = cell
                q.append(nxt)
    return dist, parent


def _path_from_tree(parent: dict[int, int], start: int, goal: int) -> list[int]:
    path = [goal]
    while path[-1] != start:
        path.append(parent[path[-1]])
    path.reverse()
    return path


def greedy_access_route(
    grid: Grid,
    access: AccessibilityMap,
    start: int,
    goal: int,
    max_steps: int,
    avoid: frozenset[int] = frozenset(),
) -> list[int]:
    """Walk toward the goal by always entering the most accessible neighbor.

    The naive no-learning router: step onto the unvisited neighbor with
    the highest accessibility index, breaking ties toward the goal and
    then by cell index. Stops at the goal, at a dead end, or at the step
    cap; the returned route may fall short of the goal.
    """
    dist_to_goal, _ = _bfs_tree(grid, goal)
    far = grid.n_cells * 2
    route = [start]
    visited = {start}
    here = start
    for _ in range(max_steps):
        if here == goal:
            break
        best = None
        for nxt in grid.neighbors(here):
            if nxt in visited or nxt in avoid:
                continue
            key = (-access.get(nxt), dist_to_goal.get(nxt, far), nxt)
            if best is None or key < best[0]:
                best = (key, nxt)
        if best is None:
            break
        here = best[1]
        visited.add(here)
        route.append(here)
    return route
