"""Task allocation as a singleton weighted congestion game.

Each willing car picks one verification task. A car's utility for a task
scales with the task reward and a weighted mix of proximity, urgency,
and event uncertainty, discounted by a reputation-weighted congestion
rate over the other cars already on that task. Allocation runs
best-response dynamics: a first phase spreads cars so every open task
gets at least one picker, then cars switch freely until no one can
improve, which is a pure-strategy equilibrium.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

from carsense.rng import substream

UNREACHABLE = math.inf


@dataclass
class Reputation:
    """Per-car reliability score in [0, 1], driven by task outcomes."""

    coefficient: float = 0.1
    initial: float = 0.5
    scores: dict[str, float] = field(default_factory=dict)
    successes: dict[str, int] = field(default_factory=dict)
    failures: dict[str, int] = field(default_factory=dict)

    def get(self, car: str) -> float:
        return self.scores.get(car, self.initial)

    def record(self, car: str, successes: int, failures: int) -> float:
        """Apply one cycle's outcome counts to a car's score."""
        if successes < 0 or failures < 0:
            raise ValueError("outcome counts must be non-negative")
        self.successes[car] = self.successes.get(car, 0) + successes
        self.failures[car] = self.failures.get(car, 0) + failures
        new = self.get(car) + self.coefficient * (successes - failures)
        self.scores[car] = min(1.0, max(0.0, new))
        return self.scores[car]


def update_reputation(rep: Reputation, car: str, successes: int, failures: int) -> float:
    return rep.record(car, successes, failures)


@dataclass
class Task:
    """One verification task on the board."""

    task_id: str
    cell: int
    deadline_min: float
    reward: float
    confidence: float  # estimation confidence of the underlying event
    picks: list[str] = field(default_factory=list)

    def remaining_min(self, elapsed_min: float) -> float:
        return max(self.deadline_min - elapsed_min, 0.0)


@dataclass(frozen=True)
class UtilityParams:
    lambda1: float = 0.82
    lambda2: float = 0.58
    lambda3: float = 0.49
    congestion_k: int = 2
    congestion_floor: float = 0.01
    congestion_default: float = 1.0
    congestion_recentered: bool = True  # count-monotone congestion in the game
    cycle_length_min: float = 100.0
    travel_min_per_cell: float = 2.0
    literal_factors: bool = False  # raw distance/remaining-time instead of normalized

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0 or self.lambda3 < 0:
            raise ValueError("factor weights must be non-negative")
        if self.congestion_k < 1 or self.congestion_k != int(self.congestion_k):
            raise ValueError("congestion exponent must be an integer >= 1")
        if self.congestion_floor <= 0:
            raise ValueError("congestion floor must be positive")


def congestion_rate(
    car: str,
    picks: list[str],
    reputation: Reputation,
    k: int = 2,
    floor: float = 0.01,
    default: float = 1.0,
) -> float:
    """Reputation-weighted contention on a task, from the picker's view.

    Sums S * (pi_m - pi_p)^k over the other cars p on the task, with
    S = sgn(pi_m - pi_p) for even k and 1 otherwise. An empty sum falls
    back to the default so the utility denominator exists before anyone
    picks; so does an exactly-zero sum (equal reputations carry no
    differential, and flooring it to epsilon would make joining an
    equal's task near-infinitely attractive). A negative sum is floored
    to stay positive.
    """
    pi_m = reputation.get(car)
    total = 0.0
    others = 0
    for p in picks:
        if p == car:
            continue
        others += 1
        total += _signed_diff_term(pi_m, reputation.get(p), k)
    if others == 0 or total == 0.0:
        return default
    return max(total, floor)


def _signed_diff_term(pi_m: float, pi_p: float, k: int) -> float:
    diff = pi_m - pi_p
    term = diff**k
    if k % 2 == 0:
        sign = 0.0 if diff == 0 else math.copysign(1.0, diff)
        term = sign * abs(term)
    return term


def recentered_congestion_rate(
    car: str,
    picks: list[str],
    reputation: Reputation,
    k: int = 2,
    default: float = 1.0,
) -> float:
    """Count-monotone variant of the congestion rate, used by the game.

    The literal signed sum shrinks (or goes negative) when the other
    pickers outrank the car, which under the utility's division turns a
    crowded task into a magnet instead of a deterrent. Here every other
    picker contributes 1 minus the signed reputation-difference term, so
    congestion strictly grows with the pick count and grows fastest when
    the existing pickers are stronger: exactly the dissuasion the
    allocation loop needs for coverage to survive free switching.
    """
    pi_m = reputation.get(car)
    total = default
    for p in picks:
        if p == car:
            continue
        total += 1.0 - _signed_diff_term(pi_m, reputation.get(p), k)
    return total


def priority_score(
    reward: float,
    proximity: float,
    urgency: float,
    uncertainty: float,
    gamma: float,
    params: UtilityParams,
) -> float:
    """The utility of a task given its already-normalized factors."""
    return (
        reward
        * (params.lambda1 * proximity + params.lambda2 * urgency + params.lambda3 * uncertainty)
        / gamma
    )


def utility(
    car: str,
    task: Task,
    distance_cells: float | None,
    elapsed_min: float,
    reputation: Reputation,
    params: UtilityParams,
    omega_max: float = 1.0,
    picks: list[str] | None = None,
) -> float:
    """Full utility of a task for a car at the current instant.

    Zero when the task's time is up, the task is unreachable, or the car
    provably cannot arrive before the deadline. Otherwise the reward,
    weighted factor mix, and congestion discount combine as in
    ``priority_score``.
    """
    remaining = task.remaining_min(elapsed_min)
    if remaining <= 0.0:
        return 0.0
    if distance_cells is None:
        return 0.0
    if distance_cells * params.travel_min_per_cell > remaining:
        return 0.0
    on_task = picks if picks is not None else task.picks
    if params.congestion_recentered:
        gamma = recentered_congestion_rate(
            car, on_task, reputation,
            k=params.congestion_k, default=params.congestion_default,
        )
    else:
        gamma = congestion_rate(
            car, on_task, reputation,
            k=params.congestion_k,
            floor=params.congestion_floor,
            default=params.congestion_default,
        )
    uncertainty = 1.0 - task.confidence
    if params.literal_factors:
        mix = (
            params.lambda1 * distance_cells
            + params.lambda2 * remaining
            + params.lambda3 * uncertainty
        )
        return task.reward * mix / gamma
    proximity = max(0.0, 1.0 - distance_cells / max(omega_max, 1.0))
    urgency = max(0.0, 1.0 - remaining / params.cycle_length_min)
    return priority_score(task.reward, proximity, urgency, uncertainty, gamma, params)


@dataclass(frozen=True)
class AllocationResult:
    assignment: dict[str, str]  # car -> task_id
    pick_lists: dict[str, list[str]]  # task_id -> cars
    phase1_pick_lists: dict[str, list[str]]  # coverage snapshot before free switching
    utilities: dict[str, float]  # car -> utility of its pick
    best_deviation: dict[str, float]  # car -> best utility over all tasks
    certified: bool
    passes: int


def best_response_allocate(
    cars: list[str],
    tasks: list[Task],
    distances: dict[tuple[str, str], float | None],
    elapsed_min: float,
    reputation: Reputation,
    params: UtilityParams,
    seed: int,
    cycle: int,
    max_pass_factor: int = 100,
) -> AllocationResult:
    """Assign every car a task via two-phase best-response dynamics.

    Phase 1 has cars, in a seeded round-robin order, pick their best
    still-unpicked task until all tasks are covered or cars run out.
    Phase 2 iterates best responses over all tasks until a full pass
    makes no switch; the singleton weighted congestion game guarantees
    that fixed point exists. If the pass cap is hit first the profile is
    returned uncertified.

    ``distances`` maps (car, task_id) to hop distance (None when
    unreachable). The result carries each car's utility and its best
    achievable deviation so equilibrium can be checked directly.
    """
    open_tasks = [t for t in tasks if t.remaining_min(elapsed_min) > 0.0]
    if not cars or not open_tasks:
        empty = {t.task_id: [] for t in tasks}
        return AllocationResult({}, empty, dict(empty), {}, {}, True, 0)

    order = sorted(cars)
    substream(seed, "allocation-order", cycle).shuffle(order)
    omega_max = max(
        [d for d in distances.values() if d is not None and math.isfinite(d)] or [1.0]
    )
    picks: dict[str, list[str]] = {t.task_id: [] for t in tasks}
    assignment: dict[str, str] = {}
    by_id = {t.task_id: t for t in open_tasks}

    def u(car: str, task: Task) -> float:
        return utility(
            car,
            task,
            distances.get((car, task.task_id)),
            elapsed_min,
            reputation,
            params,
            omega_max=omega_max,
            picks=picks[task.task_id],
        )

    def best_of(car: str, candidates: list[Task]) -> Task:
        # highest utility, ties to the earliest task id
        return min(candidates, key=lambda t: (-u(car, t), t.task_id))

    # Phase 1: cover every open task before anyone doubles up.
    unassigned = deque(order)
    while unassigned and any(not picks[t.task_id] for t in open_tasks):
        car = unassigned.popleft()
        best = best_of(car, [t for t in open_tasks if not picks[t.task_id]])
        picks[best.task_id].append(car)
        assignment[car] = best.task_id

    for car in unassigned:
        best = best_of(car, open_tasks)
        picks[best.task_id].append(car)
        assignment[car] = best.task_id

    phase1_snapshot = {tid: list(cars_on) for tid, cars_on in picks.items()}

    # Phase 2: free best responses until a pass makes no switch.
    max_passes = max_pass_factor * len(order)
    passes = 0
    certified = False
    while passes < max_passes:
        passes += 1
        switched = False
        for car in order:
            current_id = assignment[car]
            current_u = u(car, by_id[current_id])
            best_task, best_u = current_id, current_u
            for t in open_tasks:
                if t.task_id == current_id:
                    continue
                alt = u(car, t)
                if alt > best_u + 1e-12:
                    best_task, best_u = t.task_id, alt
            if best_task != current_id:
                picks[current_id].remove(car)
                picks[best_task].append(car)
                assignment[car] = best_task
                switched = True
        if not switched:
            certified = True
            break

    utilities = {car: u(car, by_id[assignment[car]]) for car in order}
    best_dev = {
        car: max(u(car, t) for t in open_tasks) for car in order
    }
    return AllocationResult(
        assignment, picks, phase1_snapshot, utilities, best_dev, certified, passes
    )


class UnknownAssignmentError(KeyError):
    """An outcome was reported for a (car, task) pair that is not assigned."""


def mark_outcome(
    tasks_by_id: dict[str, Task],
    reputation: Reputation,
    car: str,
    task_id: str,
    outcome: str,
) -> float:
    """Record a task outcome for a car and update its reputation.

    ``completed`` counts a success; ``missed_deadline`` and ``dropped``
    count failures. A drop also removes the car from the task's pick
    list so churn accounting sees the vacancy.
    """
    task = tasks_by_id.get(task_id)
    if task is None or car not in task.picks:
        raise UnknownAssignmentError(f"car {car!r} is not assigned to task {task_id!r}")
    if outcome == "completed":
        return reputation.record(car, 1, 0)
    if outcome in ("missed_deadline", "dropped"):
        if outcome == "dropped":
            task.picks.remove(car)
        return reputation.record(car, 0, 1)
    raise ValueError(f"unknown outcome {outcome!r}")
