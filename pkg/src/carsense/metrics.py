"""Run scoring: confusion counts, deadline accounting, and the metrics document."""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass
class Confusion:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def add(self, truth: int, predicted: int) -> None:
        if truth == 1:
            if predicted == 1:
                self.tp += 1
            else:
                self.fn += 1
        else:
            if predicted == 1:
                self.fp += 1
            else:
                self.tn += 1

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def rates(self) -> tuple[dict[str, float], list[str]]:
        """(accuracy/precision/recall/f1, flags for ratios with empty denominators)."""
        flags = []
        total = self.total
        accuracy = (self.tp + self.tn) / total if total else 0.0
        if not total:
            flags.append("accuracy_undefined")
        if self.tp + self.fp:
            precision = self.tp / (self.tp + self.fp)
        else:
            precision = 0.0
            flags.append("precision_undefined")
        if self.tp + self.fn:
            recall = self.tp / (self.tp + self.fn)
        else:
            recall = 0.0
            flags.append("recall_undefined")
        if precision + recall > 0:
            f1 = 2 * precision * recall / (precision + recall)
        else:
            f1 = 0.0
            flags.append("f1_undefined")
        return (
            {"accuracy": accuracy, "precision": precision, "recall": recall, "f1": f1},
            flags,
        )


@dataclass
class EventOutcome:
    """Final bookkeeping for one reported event."""

    event_key: tuple[int, int]  # (report cycle, cell)
    truth: int
    veracity: float
    confidence: float
    final: int | None = None
    resolved_by: str | None = None  # "gate" | "car"


@dataclass
class TaskOutcome:
    task_id: str
    event_key: tuple[int, int]
    accepted: bool
    status: str  # verified | deadline_missed | unresolved
    verified_min: float | None = None


@dataclass
class RunTally:
    """Accumulates outcomes across the run and renders the summary."""

    events: dict = field(default_factory=dict)  # event_key -> EventOutcome
    tasks: list = field(default_factory=list)  # TaskOutcome
    per_cycle: list = field(default_factory=list)
    drops: int = 0
    churn_reallocations: int = 0

    def summary(self) -> dict:
        confusion = Confusion()
        unresolved_events = 0
        gate_events = 0
        car_events = 0
        for ev in self.events.values():
            if ev.final is None:
                # An event the system never settled scores as a miss
                # against its true state; abstention is not free.
                unresolved_events += 1
                confusion.add(ev.truth, 1 - ev.truth)
            else:
                confusion.add(ev.truth, ev.final)
                if ev.resolved_by == "gate":
                    gate_events += 1
                else:
                    car_events += 1
        rates, flags = confusion.rates()

        accepted = sum(1 for t in self.tasks if t.accepted)
        hits = sum(1 for t in self.tasks if t.accepted and t.status == "verified")
        if accepted:
            hit_rate = hits / accepted
        else:
            hit_rate = 0.0
            flags.append("deadline_hit_rate_undefined")

        by_status: dict[str, int] = {"verified": 0, "deadline_missed": 0, "unresolved": 0}
        for t in self.tasks:
            by_status[t.status] += 1

        return {
            "events_total": len(self.events),
            "events_concluded_by_gate": gate_events,
            "events_verified_by_car": car_events,
            "events_unresolved": unresolved_events,
            "tp": confusion.tp,
            "fp": confusion.fp,
            "tn": confusion.tn,
            "fn": confusion.fn,
            "accuracy": rates["accuracy"],
            "precision": rates["precision"],
            "recall": rates["recall"],
            "f1": rates["f1"],
            "tasks_total": len(self.tasks),
            "tasks_accepted": accepted,
            "tasks_verified": by_status["verified"],
            "tasks_deadline_missed": by_status["deadline_missed"],
            "tasks_unresolved": by_status["unresolved"],
            "deadline_hits": hits,
            "deadline_hit_rate": hit_rate,
            "drops": self.drops,
            "churn_reallocations": self.churn_reallocations,
            "undefined_metric_flags": flags,
        }
