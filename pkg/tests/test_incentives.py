import pytest

from carsense.allocation import Reputation, Task
from carsense.incentives import ChurnMonitor, PidState, aggregate_reputation, churn_trigger, pid_step


def make_task(picks):
    t = Task(task_id="t0", cell=0, deadline_min=60.0, reward=1.0, confidence=0.2)
    t.picks.extend(picks)
    return t


def make_rep(scores):
    rep = Reputation()
    rep.scores.update(scores)
    return rep


class TestAggregateReputation:
    def test_sum(self):
        rep = make_rep({"a": 0.6, "b": 0.3})
        assert aggregate_reputation(make_task(["a", "b"]), rep) == pytest.approx(0.9)

    def test_empty_picks(self):
        assert aggregate_reputation(make_task([]), make_rep({})) == 0.0

    def test_single_perfect_picker(self):
        rep = make_rep({"a": 1.0})
        assert aggregate_reputation(make_task(["a"]), rep) == pytest.approx(1.0)


class TestPidStep:
    def gains(self):
        return dict(kp=0.11, ki=0.67, kd=0.38, set_point=1.0, initial_reward=1.0)

    def test_first_step_hand_evaluated(self):
        pid = PidState(**self.gains())
        q, reward = pid_step(pid, 0.9)
        # err 0.1: P 0.011 + I 0.067 + D 0.038 (prev error starts at 0)
        assert q == pytest.approx(0.116)
        assert reward == pytest.approx(1.116)

    def test_zero_error_zero_adjustment(self):
        pid = PidState(**self.gains())
        q, reward = pid_step(pid, 1.0)
        assert q == 0.0
        assert reward == pid.initial_reward

    def test_integral_ramp_until_windup(self):
        # With Kp = Kd = 0 the adjustment is a pure integral ramp of
        # Ki * err per cycle, saturating at the anti-windup bound.
        err = 0.1
        ki = 0.67
        bound = 2.0
        pid = PidState(kp=0.0, ki=ki, kd=0.0, set_point=1.0, windup_bound=bound)
        prev_q = 0.0
        for step in range(1, 60):
            q, _ = pid_step(pid, 1.0 - err)
            expected_integral = min(step * err, bound)
            assert q == pytest.approx(ki * expected_integral, abs=1e-12)
            assert q >= prev_q
            prev_q = q
        assert prev_q == pytest.approx(ki * bound)

    def test_pure_proportional(self):
        pid = PidState(kp=0.5, ki=0.0, kd=0.0, set_point=1.0)
        for e in (0.9, 0.4, 1.3):
            q, _ = pid_step(pid, e)
            assert q == pytest.approx(0.5 * (1.0 - e))

    def test_reward_floor(self):
        pid = PidState(kp=5.0, ki=0.0, kd=0.0, set_point=0.0, initial_reward=1.0,
                       reward_floor=0.1)
        q, reward = pid_step(pid, 10.0)  # large negative error
        assert q < 0
        assert reward == pytest.approx(0.1)

    def test_overperforming_task_reward_decreases(self):
        pid = PidState(**self.gains())
        rewards = []
        for _ in range(5):
            _, r = pid_step(pid, 1.5)  # aggregate above set point
            rewards.append(r)
        assert rewards == sorted(rewards, reverse=True)
        assert rewards[-1] < pid.initial_reward


class TestChurn:
    def test_six_of_ten_below_threshold(self):
        mon = ChurnMonitor(threshold=0.62)
        fired = [churn_trigger(mon, 10) for _ in range(6)]
        assert not any(fired)  # 0.6 <= 0.62

    def test_seven_of_ten_fires(self):
        mon = ChurnMonitor(threshold=0.62)
        fired = [churn_trigger(mon, 10) for _ in range(7)]
        assert fired == [False] * 6 + [True]  # 0.7 > 0.62

    def test_zero_drops_never_fires(self):
        mon = ChurnMonitor(threshold=0.62)
        assert mon.drops == 0
        assert not mon.fired_count

    def test_count_resets_after_firing(self):
        mon = ChurnMonitor(threshold=0.5)
        assert not churn_trigger(mon, 2)
        assert churn_trigger(mon, 2)  # 2/2 > 0.5 fires
        assert mon.drops == 0
        assert not churn_trigger(mon, 2)  # counting starts over

    def test_reset_at_cycle_start(self):
        mon = ChurnMonitor(threshold=0.9)
        churn_trigger(mon, 10)
        mon.reset()
        assert mon.drops == 0
