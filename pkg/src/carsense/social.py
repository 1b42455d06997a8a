"""Social-report distillation: claim grouping, truth estimation, and dispatch gating.

Reports arrive pre-clustered as structured claims (source, cell, claimed
state). Each cycle they are grouped per cell, a weighted-voting truth
estimator produces an event veracity score and a confidence score, and
confident events are concluded directly while doubtful ones become
verification tasks for the fleet.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from carsense.world import Grid

VERACITY_FLOOR = 1e-9
WEIGHT_FLOOR = 1e-3


@dataclass(frozen=True)
class SocialReport:
    source_id: str
    cell: int
    state: int
    timestamp_min: float
    deadline_min: float


@dataclass(frozen=True)
class ClaimGroup:
    """All reports about one cell in one cycle, split by claimed state."""

    event_id: tuple[int, int]
    cell: int
    supporters: tuple[str, ...]
    opponents: tuple[str, ...]
    deadline_min: float


@dataclass(frozen=True)
class EventEstimate:
    event_id: tuple[int, int]
    cell: int
    veracity: float
    confidence: float
    deadline_min: float
    needs_dispatch: bool


@dataclass(frozen=True)
class RejectedReport:
    report: SocialReport
    reason: str


@dataclass
class TruthEstimator:
    """Iterative weighted voting with source-reliability re-estimation.

    Per-source weights live in (0, 1] and persist across cycles through
    Laplace-smoothed agreement counters: a source that keeps siding with
    eventual minority verdicts loses weight. Within one cycle, weights
    and veracities are alternated until the largest weight change drops
    below ``tol`` or ``max_iterations`` passes.
    """

    tol: float = 1e-6
    max_iterations: int = 100
    agree_mass: dict[str, float] = field(default_factory=dict)
    total_mass: dict[str, float] = field(default_factory=dict)

    def weight(self, source: str) -> float:
        # Laplace prior (1, 2) puts unknown sources at 0.5.
        agree = self.agree_mass.get(source, 0.0) + 1.0
        total = self.total_mass.get(source, 0.0) + 2.0
        return min(1.0, max(WEIGHT_FLOOR, agree / total))


def ingest_cycle(
    reports: list[SocialReport], cycle: int, grid: Grid, cycle_length_min: float
) -> tuple[list[ClaimGroup], list[RejectedReport]]:
    """Group one cycle's reports by cell into claim groups.

    Reports at blocked or out-of-range cells are rejected individually;
    the run continues. Each group's deadline is the tightest hint among
    its reports. Event ids number groups by first appearance.
    """
    window_start = (cycle - 1) * cycle_length_min
    window_end = cycle * cycle_length_min
    by_cell: dict[int, dict[str, list[str]]] = {}
    deadlines: dict[int, float] = {}
    order: list[int] = []
    rejected: list[RejectedReport] = []
    for rep in reports:
        if not grid.contains(rep.cell):
            rejected.append(RejectedReport(rep, f"cell {rep.cell} is blocked or out of range"))
            continue
        if rep.timestamp_min < 0 or not (window_start <= rep.timestamp_min < window_end):
            rejected.append(
                RejectedReport(rep, f"timestamp {rep.timestamp_min} outside cycle {cycle} window")
            )
            continue
        if rep.cell not in by_cell:
            by_cell[rep.cell] = {"support": [], "oppose": []}
            deadlines[rep.cell] = rep.deadline_min
            order.append(rep.cell)
        side = "support" if rep.state == 1 else "oppose"
        by_cell[rep.cell][side].append(rep.source_id)
        deadlines[rep.cell] = min(deadlines[rep.cell], rep.deadline_min)

    groups = [
        ClaimGroup(
            event_id=(cycle, n),
            cell=cell,
            supporters=tuple(by_cell[cell]["support"]),
            opponents=tuple(by_cell[cell]["oppose"]),
            deadline_min=deadlines[cell],
        )
        for n, cell in enumerate(order)
    ]
    return groups, rejected


def estimate_truth(
    groups: list[ClaimGroup], estimator: TruthEstimator, ec_scale: float = 2.0
) -> list[EventEstimate]:
    """Run the estimator on one cycle's claim groups.

    Veracity is the supporting fraction of source reliability mass;
    sources are re-weighted by agreement with the current veracities and
    the loop repeats to convergence. Groups with zero total mass get the
    maximally uncertain (0.5, confidence 0) estimate. The converged
    batch is folded into the estimator's cross-cycle counters.
    """
    if not groups:
        return []

    sources = sorted({s for g in groups for s in (*g.supporters, *g.opponents)})
    weights = {s: estimator.weight(s) for s in sources}

    def veracities(w: dict[str, float]) -> dict[tuple[int, int], float]:
        out = {}
        for g in groups:
            support = sum(w[s] for s in g.supporters)
            total = support + sum(w[s] for s in g.opponents)
            out[g.event_id] = support / total if total > 0 else 0.5
        return out

    lam = veracities(weights)
    for _ in range(estimator.max_iterations):
        # Agreement of a source with the current estimates, batch-blended
        # with its history so one cycle cannot swing an established weight.
        new_weights = {}
        for s in sources:
            agree = estimator.agree_mass.get(s, 0.0) + 1.0
            total = estimator.total_mass.get(s, 0.0) + 2.0
            for g in groups:
                if s in g.supporters:
                    agree += lam[g.event_id]
                    total += 1.0
                elif s in g.opponents:
                    agree += 1.0 - lam[g.event_id]
                    total += 1.0
            new_weights[s] = min(1.0, max(WEIGHT_FLOOR, agree / total))
        delta = max(abs(new_weights[s] - weights[s]) for s in sources)
        weights = new_weights
        lam = veracities(weights)
        if delta < estimator.tol:
            break

    for s in sources:
        for g in groups:
            if s in g.supporters:
                estimator.agree_mass[s] = estimator.agree_mass.get(s, 0.0) + lam[g.event_id]
                estimator.total_mass[s] = estimator.total_mass.get(s, 0.0) + 1.0
            elif s in g.opponents:
                estimator.agree_mass[s] = estimator.agree_mass.get(s, 0.0) + 1.0 - lam[g.event_id]
                estimator.total_mass[s] = estimator.total_mass.get(s, 0.0) + 1.0

    estimates = []
    for g in groups:
        v = max(VERACITY_FLOOR, lam[g.event_id])
        ec = confidence_from_veracity(v, ec_scale)
        estimates.append(
            EventEstimate(
                event_id=g.event_id,
                cell=g.cell,
                veracity=v,
                confidence=ec,
                deadline_min=g.deadline_min,
                needs_dispatch=False,
            )
        )
    return estimates


def confidence_from_veracity(veracity: float, scale: float = 2.0) -> float:
    """Distance of the veracity from the neutral midpoint, scaled into [0, 1].

    The raw |v - 0.5| tops out at 0.5, so the default scale of 2 maps it
    onto the full unit range; scale 1 keeps the raw distance.
    """
    return min(1.0, max(0.0, scale * abs(veracity - 0.5)))


@dataclass(frozen=True)
class SubEvent:
    """One slice of an event whose deadline exceeded the cycle length."""

    parent_id: tuple[int, int]
    index: int
    release_offset: int  # cycles after the parent's report cycle
    estimate: EventEstimate


def split_event(event: EventEstimate, cycle_length_min: float) -> list[SubEvent]:
    """Split an event into per-cycle slices when its deadline spans cycles.

    A deadline within one cycle length passes through unchanged. Longer
    deadlines yield ceil(deadline / cycle) slices of equal duration, one
    per consecutive cycle, each inheriting the parent's veracity and
    confidence so urgency ranking is preserved. The slice durations sum
    exactly to the original deadline.
    """
    if event.deadline_min <= 0:
        raise ValueError("event deadline must be positive")
    if event.deadline_min <= cycle_length_min:
        return [SubEvent(event.event_id, 0, 0, event)]
    n = int(-(-event.deadline_min // cycle_length_min))
    slice_deadline = event.deadline_min / n
    return [
        SubEvent(
            parent_id=event.event_id,
            index=k,
            release_offset=k,
            estimate=EventEstimate(
                event_id=event.event_id,
                cell=event.cell,
                veracity=event.veracity,
                confidence=event.confidence,
                deadline_min=slice_deadline,
                needs_dispatch=event.needs_dispatch,
            ),
        )
        for k in range(n)
    ]


def gate_dispatch(
    estimates: list[EventEstimate], threshold: float
) -> tuple[list[EventEstimate], list[EventEstimate]]:
    """Partition estimates into (concluded, tasks) by confidence.

    Estimates at or above the threshold are trusted as-is; the rest are
    handed to the allocation layer for physical verification.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("confidence threshold must lie in [0, 1]")
    concluded = []
    tasks = []
    for est in estimates:
        if est.confidence >= threshold:
            concluded.append(
                EventEstimate(
                    est.event_id, est.cell, est.veracity, est.confidence,
                    est.deadline_min, needs_dispatch=False,
                )
            )
        else:
            tasks.append(
                EventEstimate(
                    est.event_id, est.cell, est.veracity, est.confidence,
                    est.deadline_min, needs_dispatch=True,
                )
            )
    return concluded, tasks


def concluded_state(estimate: EventEstimate) -> int:
    """The binary verdict implied by a veracity score."""
    return 1 if estimate.veracity > 0.5 else 0
