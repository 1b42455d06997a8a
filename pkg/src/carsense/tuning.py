"""Derivative-free parameter search.

The search maximizes F1 on a truncated run (the opening quarter of the
horizon), working through the training window in three equal segments
and keeping each segment's improvement only if it holds up. The simplex
search is a standard Nelder-Mead with reflection 1, expansion 2,
contraction 0.5, and shrink 0.5, clipped to per-parameter bounds. A
separate linear search calibrates the initial accessibility index
against realized damage.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from carsense.config import Params, TuneConfig
from carsense.engine import Simulation
from carsense.scenario import Scenario


@dataclass
class NelderMeadResult:
    x: np.ndarray
    value: float
    evaluations: int
    converged: bool


def nelder_mead(
    func,
    x0,
    bounds,
    step: float = 0.1,
    max_evals: int = 200,
    tolerance: float = 1e-6,
) -> NelderMeadResult:
    """Minimize func over a box via the Nelder-Mead simplex.

    Points are clipped into bounds before evaluation. Stops when the
    simplex's value spread falls below the tolerance or the evaluation
    budget runs out (converged=False in that case).
    """
    x0 = np.asarray(x0, dtype=float)
    lo = np.array([b[0] for b in bounds], dtype=float)
    hi = np.array([b[1] for b in bounds], dtype=float)
    n = len(x0)

    def clip(x):
        return np.minimum(np.maximum(x, lo), hi)

    evals = 0

    def f(x):
        nonlocal evals
        evals += 1
        return func(clip(x))

    simplex = [clip(x0)]
    for i in range(n):
        v = x0.copy()
        v[i] = v[i] + step if v[i] + step <= hi[i] else v[i] - step
        simplex.append(clip(v))
    values = [f(v) for v in simplex]

    alpha, gamma, rho, sigma = 1.0, 2.0, 0.5, 0.5
    converged = False
    while evals < max_evals:
        order = sorted(range(len(simplex)), key=lambda i: values[i])
        simplex = [simplex[i] for i in order]
        values = [values[i] for i in order]
        if abs(values[-1] - values[0]) < tolerance:
            converged = True
            break

        centroid = np.mean(simplex[:-1], axis=0)
        reflected = clip(centroid + alpha * (centroid - simplex[-1]))
        fr = f(reflected)
        if values[0] <= fr < values[-2]:
            simplex[-1], values[-1] = reflected, fr
            continue
        if fr < values[0]:
            expanded = clip(centroid + gamma * (centroid - simplex[-1]))
            fe = f(expanded)
            if fe < fr:
                simplex[-1], values[-1] = expanded, fe
            else:
                simplex[-1], values[-1] = reflected, fr
            continue
        contracted = clip(centroid + rho * (simplex[-1] - centroid))
        fc = f(contracted)
        if fc < values[-1]:
            simplex[-1], values[-1] = contracted, fc
            continue
        best = simplex[0]
        simplex = [best] + [clip(best + sigma * (v - best)) for v in simplex[1:]]
        values = [values[0]] + [f(v) for v in simplex[1:]]

    order = sorted(range(len(simplex)), key=lambda i: values[i])
    return NelderMeadResult(
        x=simplex[order[0]],
        value=values[order[0]],
        evaluations=evals,
        converged=converged,
    )


@dataclass
class TuneResult:
    params: Params
    tuned_values: dict[str, float]
    f1: float
    evaluations: int
    converged: bool


def _f1_over_horizon(scenario: Scenario, scheme: str, seed: int, params: Params,
                     horizon_cycles: int) -> float:
    truncated = params.with_overrides(cycles=horizon_cycles)
    sim = Simulation(scenario, scheme, seed=seed, params=truncated, collect_trace=False)
    doc = sim.run()
    return doc["summary"]["f1"]


def tune(scenario: Scenario, base: Params, tc: TuneConfig, scheme: str = "DASC") -> TuneResult:
    """Search the controller and priority weights for the best training F1.

    All searched coordinates start at 1.0. The training window is the
    first quarter of the horizon, split into three equal segments; each
    segment's simplex result is retained only when it does not lose F1
    over the full window.
    """
    names = list(tc.bounds.keys())
    bounds = [tc.bounds[n] for n in names]
    total_cycles = base.cycles if base.cycles is not None else scenario.cycles
    horizon = max(tc.segments, total_cycles // 4)
    seg_edges = [max(1, (horizon * (i + 1)) // tc.segments) for i in range(tc.segments)]

    def objective_for(cycles_used: int):
        def obj(x) -> float:
            trial = base.with_overrides(**{n: float(v) for n, v in zip(names, x)})
            return -_f1_over_horizon(scenario, scheme, tc.seed, trial, cycles_used)
        return obj

    current = np.ones(len(names))
    best_full = -objective_for(horizon)(current)
    evaluations = 0
    converged = True
    for edge in seg_edges:
        result = nelder_mead(
            objective_for(edge),
            current,
            bounds,
            step=tc.simplex_step,
            max_evals=tc.max_evals_per_segment,
            tolerance=tc.tolerance,
        )
        evaluations += result.evaluations
        converged = converged and result.converged
        candidate_full = -objective_for(horizon)(result.x)
        evaluations += 1
        if candidate_full >= best_full:
            current = result.x
            best_full = candidate_full

    tuned_values = {n: float(v) for n, v in zip(names, current)}
    tuned_params = base.with_overrides(**tuned_values)
    return TuneResult(
        params=tuned_params,
        tuned_values=tuned_values,
        f1=best_full,
        evaluations=evaluations,
        converged=converged,
    )


@dataclass
class X0Result:
    x0: float
    mean_error: float
    errors_by_value: dict[float, float]


def tune_x0(scenario: Scenario, base: Params, seed: int = 0, scheme: str = "DASC",
            grid_step: float = 0.05, calibration_cycles: int | None = None) -> X0Result:
    """Linear search for the initial accessibility index.

    Runs a calibration pass per candidate value and scores the mean
    absolute gap between the accessibility map and the true damage state
    over all cells and cycles.
    """
    total_cycles = base.cycles if base.cycles is not None else scenario.cycles
    cycles = calibration_cycles or max(1, total_cycles // 4)
    candidates = [round(grid_step * i, 10) for i in range(int(1.0 / grid_step) + 1)]
    errors: dict[float, float] = {}
    for x0 in candidates:
        params = base.with_overrides(x0=x0, cycles=cycles)
        sim = Simulation(scenario, scheme, seed=seed, params=params, collect_trace=False)
        gap_sum = 0.0
        gap_n = 0
        for t in range(1, cycles + 1):
            sim.run_cycle(t)
            damaged = sim.grid.damaged
            for cell in sim.grid.cells():
                truth = 1.0 if cell in damaged else 0.0
                # accessibility 1 means confidently passable
                gap_sum += abs((1.0 - sim.access.get(cell)) - truth)
                gap_n += 1
        errors[x0] = gap_sum / gap_n if gap_n else 0.0
    best = min(errors, key=lambda k: (errors[k], k))
    return X0Result(x0=best, mean_error=errors[best], errors_by_value=errors)
