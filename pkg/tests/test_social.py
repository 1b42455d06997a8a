import pytest

from carsense.social import (
    EventEstimate,
    SocialReport,
    TruthEstimator,
    confidence_from_veracity,
    concluded_state,
    estimate_truth,
    gate_dispatch,
    ingest_cycle,
    split_event,
)
from carsense.world import build_grid


def rep(source, cell, state, ts=0.0, deadline=60.0):
    return SocialReport(source, cell, state, ts, deadline)


def make_estimate(veracity, confidence, deadline=60.0, cell=0, event=(1, 0)):
    return EventEstimate(event, cell, veracity, confidence, deadline, needs_dispatch=False)


class TestIngest:
    def setup_method(self):
        self.grid = build_grid(3, 3, blocked={4})

    def test_empty(self):
        groups, rejected = ingest_cycle([], 1, self.grid, 100.0)
        assert groups == [] and rejected == []

    def test_counts_support_and_oppose(self):
        groups, _ = ingest_cycle(
            [rep("a", 2, 1), rep("b", 2, 1), rep("c", 2, 0)], 1, self.grid, 100.0
        )
        assert len(groups) == 1
        g = groups[0]
        assert g.supporters == ("a", "b") and g.opponents == ("c",)

    def test_distinct_cells_distinct_groups(self):
        groups, _ = ingest_cycle([rep("a", 2, 1), rep("b", 3, 1)], 1, self.grid, 100.0)
        assert len(groups) == 2
        assert {g.cell for g in groups} == {2, 3}

    def test_blocked_cell_rejected_run_continues(self):
        groups, rejected = ingest_cycle([rep("a", 4, 1), rep("b", 2, 1)], 1, self.grid, 100.0)
        assert len(groups) == 1 and groups[0].cell == 2
        assert len(rejected) == 1 and "blocked" in rejected[0].reason

    def test_timestamp_outside_window_rejected(self):
        groups, rejected = ingest_cycle([rep("a", 2, 1, ts=150.0)], 1, self.grid, 100.0)
        assert groups == [] and len(rejected) == 1

    def test_group_deadline_is_tightest_hint(self):
        groups, _ = ingest_cycle(
            [rep("a", 2, 1, deadline=80.0), rep("b", 2, 1, deadline=40.0)], 1, self.grid, 100.0
        )
        assert groups[0].deadline_min == 40.0


class TestEstimateTruth:
    def setup_method(self):
        self.grid = build_grid(3, 3)

    def estimates_for(self, reports, estimator=None, cycle=1):
        estimator = estimator or TruthEstimator()
        groups, _ = ingest_cycle(reports, cycle, self.grid, 100.0)
        return estimate_truth(groups, estimator), estimator

    def test_unanimous_support_exceeds_midpoint(self):
        ests, _ = self.estimates_for([rep("a", 0, 1), rep("b", 0, 1), rep("c", 0, 1)])
        assert ests[0].veracity > 0.5
        assert ests[0].confidence > 0.0

    def test_balanced_is_maximally_uncertain(self):
        ests, _ = self.estimates_for([rep("a", 0, 1), rep("b", 0, 0)])
        assert ests[0].veracity == pytest.approx(0.5)
        assert ests[0].confidence == pytest.approx(0.0)

    def test_empty_groups(self):
        assert estimate_truth([], TruthEstimator()) == []

    def test_persistent_contradictor_loses_weight(self):
        # Five sources; "e" opposes a four-source majority on every event
        # across three cycles. The iterative update must push e's weight
        # strictly below every majority source's weight.
        estimator = TruthEstimator()
        for cycle in (1, 2, 3):
            ts = (cycle - 1) * 100.0
            reports = [rep(s, c, 1, ts=ts) for s in "abcd" for c in (0, 1, 2)]
            reports += [rep("e", c, 0, ts=ts) for c in (0, 1, 2)]
            self.estimates_for(reports, estimator, cycle=cycle)
        w_e = estimator.weight("e")
        for s in "abcd":
            assert w_e < estimator.weight(s)
        assert w_e < 0.5

    def test_veracity_floor_applied(self):
        # Heavy opposition cannot drive veracity to exactly zero.
        reports = [rep(s, 0, 0) for s in "abcdefgh"]
        ests, _ = self.estimates_for(reports)
        assert 0.0 < ests[0].veracity


class TestConfidence:
    def test_symmetric_about_midpoint(self):
        for i in range(51):
            x = i / 100.0
            lo = confidence_from_veracity(0.5 - x)
            hi = confidence_from_veracity(0.5 + x)
            assert lo == pytest.approx(hi)

    def test_scale_two_fills_unit_range(self):
        assert confidence_from_veracity(1.0) == pytest.approx(1.0)
        assert confidence_from_veracity(0.5) == pytest.approx(0.0)

    def test_scale_one_keeps_raw_distance(self):
        assert confidence_from_veracity(1.0, scale=1.0) == pytest.approx(0.5)


class TestSplitEvent:
    def test_no_split_when_within_cycle(self):
        subs = split_event(make_estimate(0.8, 0.6, deadline=60.0), 100.0)
        assert len(subs) == 1
        assert subs[0].estimate.deadline_min == 60.0

    def test_split_into_equal_slices(self):
        # ceil(250 / 100) = 3 slices of 250/3 minutes each.
        subs = split_event(make_estimate(0.8, 0.6, deadline=250.0), 100.0)
        assert len(subs) == 3
        for k, sub in enumerate(subs):
            assert sub.release_offset == k
            assert sub.estimate.deadline_min == pytest.approx(250.0 / 3)
            assert sub.estimate.veracity == 0.8
            assert sub.estimate.confidence == 0.6

    def test_boundary_equality_does_not_split(self):
        subs = split_event(make_estimate(0.8, 0.6, deadline=100.0), 100.0)
        assert len(subs) == 1

    def test_slices_cover_exactly_the_original_window(self):
        for deadline in (30.0, 100.0, 101.0, 250.0, 999.0):
            subs = split_event(make_estimate(0.7, 0.4, deadline=deadline), 100.0)
            total = sum(s.estimate.deadline_min for s in subs)
            assert total == pytest.approx(deadline)
            assert all(s.estimate.deadline_min <= 100.0 + 1e-9 for s in subs)


class TestGateDispatch:
    def test_confident_concluded(self):
        concluded, tasks = gate_dispatch([make_estimate(0.8, 0.9)], 0.5)
        assert len(concluded) == 1 and not tasks
        assert concluded_state(concluded[0]) == 1

    def test_doubtful_becomes_task(self):
        concluded, tasks = gate_dispatch([make_estimate(0.55, 0.1)], 0.5)
        assert not concluded and len(tasks) == 1
        assert tasks[0].needs_dispatch

    def test_zero_threshold_concludes_everything(self):
        ests = [make_estimate(0.5, 0.0), make_estimate(0.9, 0.8)]
        concluded, tasks = gate_dispatch(ests, 0.0)
        assert len(concluded) == 2 and not tasks

    def test_partitions_input(self):
        ests = [make_estimate(0.5 + i / 40.0, i / 20.0, event=(1, i)) for i in range(10)]
        concluded, tasks = gate_dispatch(ests, 0.3)
        assert len(concluded) + len(tasks) == len(ests)
        ids = [e.event_id for e in concluded] + [e.event_id for e in tasks]
        assert len(set(ids)) == len(ests)

    def test_threshold_validation(self):
        with pytest.raises(ValueError):
            gate_dispatch([], 1.5)
