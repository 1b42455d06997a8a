"""Reward feedback control.

Every task carries a PID controller whose process variable is the
aggregate reputation of the cars picking the task and whose set point is
the configured worst-case acceptable aggregate. Under-picked tasks see
their reward pushed up, over-picked ones drift back down. A churn
monitor counts dropped tasks within the cycle and, past a threshold
fraction, tells the engine to recompute rewards and redo allocation.
"""

from __future__ import annotations

from dataclasses import dataclass

from carsense.allocation import Reputation, Task


def aggregate_reputation(task: Task, reputation: Reputation) -> float:
    """Sum of the reputations of all cars currently picking the task."""
    return sum(reputation.get(car) for car in task.picks)


@dataclass
class PidState:
    """One task's reward controller."""

    kp: float = 0.11
    ki: float = 0.67
    kd: float = 0.38
    set_point: float = 1.0
    initial_reward: float = 1.0
    reward_floor: float = 0.1
    windup_bound: float = 10.0
    integral: float = 0.0
    prev_error: float = 0.0

    def __post_init__(self):
        if self.kp < 0 or self.ki < 0 or self.kd < 0:
            raise ValueError("gains must be non-negative")


def pid_step(pid: PidState, aggregate: float, dt: float = 1.0) -> tuple[float, float]:
    """Advance the controller one step; returns (adjustment, new reward).

    error = set point - aggregate reputation. The integral is clamped to
    the anti-windup bound so a long churn burst cannot store an
    unbounded correction, and the derivative is a backward difference.
    The adjusted reward is floored to stay positive.
    """
    err = pid.set_point - aggregate
    pid.integral = min(pid.windup_bound, max(-pid.windup_bound, pid.integral + err * dt))
    derivative = (err - pid.prev_error) / dt
    q = pid.kp * err + pid.ki * pid.integral + pid.kd * derivative
    pid.prev_error = err
    reward = max(pid.initial_reward + q, pid.reward_floor)
    return q, reward


@dataclass
class ChurnMonitor:
    """Dropped-task counter with a fractional trigger threshold."""

    threshold: float = 0.62
    drops: int = 0
    fired_count: int = 0

    def reset(self) -> None:
        self.drops = 0

    def record_drop(self, active_tasks: int) -> bool:
        """Count one drop; True when the drop fraction now exceeds the
        threshold (the count resets so one burst fires once)."""
        self.drops += 1
        if active_tasks <= 0:
            return False
        if self.drops / active_tasks > self.threshold:
            self.drops = 0
            self.fired_count += 1
            return True
        return False


def churn_trigger(monitor: ChurnMonitor, active_tasks: int) -> bool:
    return monitor.record_drop(active_tasks)
