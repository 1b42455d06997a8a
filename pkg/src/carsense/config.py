"""Run configuration: every tunable in one place, with its shipped default."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace

from carsense.allocation import UtilityParams


@dataclass(frozen=True)
class Params:
    """All tunables of a run.

    Fields defaulting to None fall back to the scenario file (horizon,
    cycle length, fleet composition); everything else carries the tuned
    operating point the system ships with.
    """

    # utility weights and congestion game
    lambda1: float = 0.82
    lambda2: float = 0.58
    lambda3: float = 0.49
    congestion_k: int = 2
    congestion_floor: float = 0.01
    congestion_default: float = 1.0
    literal_congestion: bool = False  # signed-sum congestion instead of count-monotone
    literal_utility_factors: bool = False

    # reputation
    eta: float = 0.1
    initial_reputation: float = 0.5

    # reward controller
    kp: float = 0.11
    ki: float = 0.67
    kd: float = 0.38
    psi: float = 0.62
    base_reputation_set_point: float = 1.0
    initial_reward: float = 1.0
    reward_floor_frac: float = 0.1
    windup_factor: float = 10.0

    # scouting and accessibility
    scout_percent: float = 20.0
    kappa_default: float = 0.65
    kappa_floor: float = 0.05
    kappa_window: int = 5
    x0: float = 0.5
    observation_radius: int = 1
    scout_budget_cells: int | None = None

    # route learning
    k_routes: int = 8
    epsilon_greedy: float = 0.1
    exploration_cycles: int | None = None
    sigma_initial: float = 1.0
    sigma_floor: float = 0.01
    sigma_cap: float = 10.0

    # signal gating
    ec_threshold: float = 0.5
    ec_scale: float = 2.0

    # world / fleet overrides (None -> use the scenario's values)
    cycle_length_min: float | None = None
    cycles: int | None = None
    completers: int | None = None
    aborters: int | None = None
    refusers: int | None = None
    abort_prob: float | None = None
    travel_min_per_cell: float = 2.0
    turnaround_quanta: int = 2  # extra quanta lost after driving into damage
    redispatch_waves: int = 1  # mid-cycle re-allocations of idle cars (game schemes)

    def with_overrides(self, **overrides) -> "Params":
        known = {f.name for f in fields(self)}
        bad = set(overrides) - known
        if bad:
            raise KeyError(f"unknown parameter(s): {sorted(bad)}")
        return replace(self, **overrides)

    def resolved_exploration_cycles(self, total_cycles: int) -> int:
        if self.exploration_cycles is not None:
            return self.exploration_cycles
        return max(1, math.ceil(total_cycles / 4))

    def utility_params(self, cycle_length_min: float) -> UtilityParams:
        return UtilityParams(
            lambda1=self.lambda1,
            lambda2=self.lambda2,
            lambda3=self.lambda3,
            congestion_k=self.congestion_k,
            congestion_floor=self.congestion_floor,
            congestion_default=self.congestion_default,
            congestion_recentered=not self.literal_congestion,
            cycle_length_min=cycle_length_min,
            travel_min_per_cell=self.travel_min_per_cell,
            literal_factors=self.literal_utility_factors,
        )

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class RunConfig:
    scenario_path: str
    scheme: str = "DASC"
    seed: int = 0
    params: Params = field(default_factory=Params)


@dataclass(frozen=True)
class TuneConfig:
    """Parameter search setup: maximize F1 over the opening quarter of the run."""

    seed: int = 0
    segments: int = 3
    max_evals_per_segment: int = 40
    simplex_step: float = 0.1
    tolerance: float = 1e-3
    # name -> (low, high); searched coordinates start at 1.0 like the rest
    bounds: dict = field(
        default_factory=lambda: {
            "lambda1": (0.0, 1.0),
            "lambda2": (0.0, 1.0),
            "lambda3": (0.0, 1.0),
            "kp": (0.0, 1.0),
            "ki": (0.0, 1.0),
            "kd": (0.0, 1.0),
            "psi": (0.0, 1.0),
            "kappa_default": (0.05, 1.0),
        }
    )
