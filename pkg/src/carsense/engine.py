"""The closed-loop simulation: one deterministic run of a dispatch scheme.

Each response cycle: the damage process steps, the cycle's reports are
distilled and gated, long events are sliced, scouts sweep the grid and
update accessibility beliefs, rewards are controlled, cars are allocated
and routed per the active scheme, and movement plays out in fixed time
quanta with aborts, blocking, discovery, and deadline checks. Every
random draw comes from a labeled substream of the run seed, so a run is
a pure function of (scenario, scheme, seed, params).
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

from carsense import allocation as alloc
from carsense import baselines, routing, scouting, social
from carsense.config import Params
from carsense.incentives import ChurnMonitor, PidState, aggregate_reputation, pid_step
from carsense.metrics import Confusion, EventOutcome, RunTally, TaskOutcome
from carsense.rng import substream
from carsense.scenario import Scenario
from carsense.world import Grid, astar_path, step_damage


@dataclass
class Driver:
    car_id: str
    kind: str  # completer | aborter | refuser
    position: int
    abort_prob: float = 0.0
    task_id: str | None = None
    route: list[int] | None = None
    route_idx: int = 0
    personal_blocked: set[int] = field(default_factory=set)
    aborted_this_cycle: bool = False
    assigned_this_cycle: bool = False
    tour_idx: int = 0
    cooldown: int = 0  # quanta lost to stopping and turning around at a block

    @property
    def willing(self) -> bool:
        return self.kind != "refuser"


@dataclass
class ActiveTask:
    task: alloc.Task
    event_key: tuple[int, int]  # (report cycle, cell)
    created_cycle: int
    pid: PidState
    verified: bool = False
    verified_min: float | None = None
    verified_by: str | None = None
    status: str = "open"
    accepted: bool = False
    outcome_by_car: dict[str, str] = field(default_factory=dict)


class Simulation:
    """One seeded run of a scheme over a scenario."""

    def __init__(self, scenario: Scenario, scheme: str, seed: int, params: Params | None = None,
                 collect_trace: bool = True):
        if scheme not in baselines.SCHEMES:
            raise ValueError(f"unknown scheme {scheme!r}; expected one of {baselines.SCHEMES}")
        self.scenario = scenario
        self.scheme = scheme
        self.seed = seed
        self.params = params or Params()
        self.collect_trace = collect_trace

        p = self.params
        self.cycle_length = p.cycle_length_min if p.cycle_length_min is not None else scenario.cycle_length_min
        self.total_cycles = p.cycles if p.cycles is not None else scenario.cycles
        self.travel_quantum = p.travel_min_per_cell
        self.substeps = max(1, int(self.cycle_length // self.travel_quantum))
        self.uparams = p.utility_params(self.cycle_length)

        self.grid: Grid = scenario.grid
        self.ever_damaged: frozenset[int] = frozenset(scenario.grid.damaged)
        self.knowledge: dict[int, int] = {}  # believed damage, shared fleet memory
        self.truths = scenario.truth_map()

        self.estimator = social.TruthEstimator()
        self.access = scouting.AccessibilityMap(initial=p.x0)
        self.kappa_window = scouting.KappaWindow(
            length=p.kappa_window, default=p.kappa_default, floor=p.kappa_floor,
        )
        self.mdp = routing.MdpTable(
            k_routes=p.k_routes,
            exploration_cycles=p.resolved_exploration_cycles(self.total_cycles),
            epsilon=p.epsilon_greedy,
            sigma=p.sigma_initial,
            sigma_floor=p.sigma_floor,
            sigma_cap=p.sigma_cap,
        )
        self.reputation = alloc.Reputation(coefficient=p.eta, initial=p.initial_reputation)
        self.churn = ChurnMonitor(threshold=p.psi)
        self.edge_visits: dict[tuple[int, int], int] = {}

        self.drivers = self._make_drivers()
        self.tour = baselines.nearest_neighbor_tour(self.grid) if scheme == "FixedRoute" else []
        if self.tour:
            patrol = sorted(d.car_id for d in self.drivers.values() if d.willing)
            for i, car in enumerate(patrol):
                d = self.drivers[car]
                d.tour_idx = (i * len(self.tour)) // max(len(patrol), 1)
                d.position = self.tour[d.tour_idx]

        self.active_tasks: dict[str, ActiveTask] = {}
        self.pending_slices: dict[int, list[social.SubEvent]] = {}
        self.tally = RunTally()
        self.trace: dict[str, list[dict]] = {
            "allocation": [], "mdp": [], "incentive": [], "observations": [],
        }
        # per-cycle working state
        self._executed_routes: list[tuple[routing.MdpState, routing.RouteAction]] = []
        self._cycle_pool: set[str] = set()
        self._cycle_confusion = Confusion()
        self._cycle_counts: dict[str, int] = {}
        self._observed_now: dict[int, int] = {}

    # ------------------------------------------------------------------ setup

    def _make_drivers(self) -> dict[str, Driver]:
        p = self.params
        counts = {
            "completer": p.completers if p.completers is not None else self.scenario.driver_counts.get("completer", 0),
            "aborter": p.aborters if p.aborters is not None else self.scenario.driver_counts.get("aborter", 0),
            "refuser": p.refusers if p.refusers is not None else self.scenario.driver_counts.get("refuser", 0),
        }
        abort_prob = p.abort_prob if p.abort_prob is not None else self.scenario.abort_prob
        cells = self.grid.cells()
        drivers = {}
        for kind in ("completer", "aborter", "refuser"):
            for i in range(counts[kind]):
                car_id = f"{kind}-{i:03d}"
                if car_id in self.scenario.driver_positions:
                    pos = self.scenario.driver_positions[car_id]
                else:
                    pos = substream(self.seed, "pos", car_id).choice(cells)
                drivers[car_id] = Driver(
                    car_id=car_id,
                    kind=kind,
                    position=pos,
                    abort_prob=abort_prob if kind == "aborter" else 0.0,
                )
        return drivers

    # ------------------------------------------------------------- main loop

    def run(self) -> dict:
        for t in range(1, self.total_cycles + 1):
            self.run_cycle(t)
        summary = self.tally.summary()
        summary["sigma_cap_hits"] = self.mdp.sigma_cap_hits
        return {
            "schema_version": 1,
            "scheme": self.scheme,
            "seed": self.seed,
            "scenario": self.scenario.name,
            "params": self.params.to_dict(),
            "cycles": self.tally.per_cycle,
            "summary": summary,
        }

    def run_cycle(self, t: int) -> None:
        p = self.params
        self.grid = step_damage(self.grid, self.scenario.damage, self.seed, t, self.ever_damaged)
        self.ever_damaged = self.ever_damaged | self.grid.damaged

        knowledge_prior = dict(self.knowledge)
        self._observed_now = {}
        self._executed_routes = []
        self._cycle_confusion = Confusion()
        self._cycle_counts = {"drops": 0, "reallocations": 0, "verified": 0, "missed": 0}
        self.churn.reset()
        for d in self.drivers.values():
            d.task_id = None
            d.route = None
            d.route_idx = 0
            d.personal_blocked = set()
            d.aborted_this_cycle = False
            d.assigned_this_cycle = False
            d.cooldown = 0

        # --- social signal distillation
        reports = self.scenario.reports_for_cycle(t)
        groups, rejected = social.ingest_cycle(reports, t, self.grid, self.cycle_length)
        estimates = social.estimate_truth(groups, self.estimator, ec_scale=p.ec_scale)
        concluded, dispatch = social.gate_dispatch(estimates, p.ec_threshold)

        for est in estimates:
            key = (t, est.cell)
            if key not in self.tally.events:
                self.tally.events[key] = EventOutcome(
                    event_key=key,
                    truth=self.truths.get(key, 0),
                    veracity=est.veracity,
                    confidence=est.confidence,
                )
        gate_concluded = 0
        for est in concluded:
            ev = self.tally.events[(t, est.cell)]
            if ev.final is None:
                ev.final = social.concluded_state(est)
                ev.resolved_by = "gate"
                self._cycle_confusion.add(ev.truth, ev.final)
                gate_concluded += 1

        # --- event splitting and task creation
        new_tasks: list[ActiveTask] = []
        for est in dispatch:
            for sub in social.split_event(est, self.cycle_length):
                if sub.release_offset == 0:
                    new_tasks.append(self._make_task(sub, t))
                else:
                    self.pending_slices.setdefault(t + sub.release_offset, []).append(sub)
        for sub in self.pending_slices.pop(t, []):
            ev = self.tally.events.get((sub.parent_id[0], sub.estimate.cell))
            if ev is not None and ev.final is not None:
                continue  # settled meanwhile; the remaining slices are moot
            new_tasks.append(self._make_task(sub, t))
        for at in new_tasks:
            self.active_tasks[at.task.task_id] = at

        # --- road damage discovery
        scouts: list[str] = []
        willing = sorted(d.car_id for d in self.drivers.values() if d.willing)
        if self.scheme in baselines.SCOUTING_SCHEMES:
            scouts = scouting.select_scouts(willing, p.scout_percent, self.seed, t)
            positions = {s: self.drivers[s].position for s in scouts}
            budget = p.scout_budget_cells or self.substeps
            known_damaged = frozenset(c for c, v in self.knowledge.items() if v == 1)
            plan = scouting.plan_coverage(
                self.grid, positions, budget, edge_visits=self.edge_visits, avoid=known_damaged
            )
            for route in plan.routes.values():
                for a, b in zip(route, route[1:]):
                    e = (min(a, b), max(a, b))
                    self.edge_visits[e] = self.edge_visits.get(e, 0) + 1
            log, final_pos = scouting.observe_and_update(
                plan, self.grid, self.access, self.kappa_window, t,
                n_events=len(groups), observation_radius=p.observation_radius,
                believed_damaged=known_damaged,
            )
            for obs in log:
                self.knowledge[obs.cell] = obs.damaged
                self._observed_now[obs.cell] = obs.damaged
                if self.collect_trace:
                    self.trace["observations"].append(
                        {"cycle": t, "cell": obs.cell, "observed": obs.damaged,
                         "observer": obs.observer}
                    )
            for s, pos in final_pos.items():
                self.drivers[s].position = pos

        # --- allocation, incentives, routing, movement
        pool = [c for c in willing if c not in scouts]
        self._cycle_pool = set(pool)
        self._allocate_and_route(pool, self._open_tasks(0.0), elapsed=0.0, cycle=t)
        self._run_movement(t, pool)
        self._expire_open_tasks(self.cycle_length, final=True)

        # --- route-penalty learning
        if self.scheme == "DASC":
            penalty_sum = 0.0
            for state, action in self._executed_routes:
                r = routing.observe_penalty(action, knowledge_prior, self._observed_now)
                penalty_sum += r
                if self.collect_trace:
                    self.trace["mdp"].append(
                        {"cycle": t, "source": state.source, "destination": state.destination,
                         "route": list(action.cells), "penalty": r}
                    )
            routing.update_sigma(self.mdp, penalty_sum)

        # --- retire the cycle's tasks and accrue metrics
        for at in self.active_tasks.values():
            self.tally.tasks.append(
                TaskOutcome(
                    task_id=at.task.task_id,
                    event_key=at.event_key,
                    accepted=at.accepted,
                    status=at.status if at.status != "open" else "unresolved",
                    verified_min=at.verified_min,
                )
            )
        self.active_tasks.clear()

        self.tally.per_cycle.append({
            "cycle": t,
            "damaged_cells": len(self.grid.damaged),
            "reports": len(reports),
            "reports_rejected": len(rejected),
            "events": len(estimates),
            "concluded_by_gate": gate_concluded,
            "tasks_created": len(new_tasks),
            "tasks_verified": self._cycle_counts["verified"],
            "tasks_missed": self._cycle_counts["missed"],
            "drops": self._cycle_counts["drops"],
            "churn_reallocations": self._cycle_counts["reallocations"],
            "kappa": self.kappa_window.current,
            "sigma": self.mdp.sigma,
            "tp": self._cycle_confusion.tp,
            "fp": self._cycle_confusion.fp,
            "tn": self._cycle_confusion.tn,
            "fn": self._cycle_confusion.fn,
        })

    # ------------------------------------------------------------ task setup

    def _make_task(self, sub: social.SubEvent, cycle: int) -> ActiveTask:
        p = self.params
        parent_cycle, parent_n = sub.parent_id
        suffix = f"s{sub.index}" if sub.index else ""
        task = alloc.Task(
            task_id=f"v{parent_cycle}-{parent_n}{suffix}",
            cell=sub.estimate.cell,
            deadline_min=min(sub.estimate.deadline_min, self.cycle_length),
            reward=p.initial_reward,
            confidence=sub.estimate.confidence,
        )
        pid = PidState(
            kp=p.kp, ki=p.ki, kd=p.kd,
            set_point=p.base_reputation_set_point,
            initial_reward=p.initial_reward,
            reward_floor=p.reward_floor_frac * p.initial_reward,
            windup_bound=p.windup_factor * p.base_reputation_set_point,
        )
        return ActiveTask(
            task=task,
            event_key=(parent_cycle, sub.estimate.cell),
            created_cycle=cycle,
            pid=pid,
        )

    def _open_tasks(self, elapsed: float) -> list[ActiveTask]:
        return [
            at for at in self.active_tasks.values()
            if at.status == "open" and not at.verified and at.task.remaining_min(elapsed) > 0.0
        ]

    # ---------------------------------------------------------- dispatching

    def _avoid_set(self) -> frozenset[int]:
        if self.scheme in baselines.DAMAGE_AWARE_SCHEMES:
            return frozenset(c for c, v in self.knowledge.items() if v == 1)
        return frozenset()

    def _dist_from(self, cell: int, avoid: frozenset[int]) -> dict[int, int]:
        if cell in avoid:
            # a task on a believed-damaged cell is unreachable until the
            # belief is revised
            return {}
        dist = {cell: 0}
        q = deque([cell])
        while q:
            here = q.popleft()
            for nxt in self.grid.neighbors(here):
                if nxt in dist or nxt in avoid:
                    continue
                dist[nxt] = dist[here] + 1
                q.append(nxt)
        return dist

    def _distances(self, pool: list[str], tasks: list[ActiveTask]) -> dict[tuple[str, str], float | None]:
        """Car-task hop distances over the believed-undamaged graph."""
        avoid = self._avoid_set()
        out: dict[tuple[str, str], float | None] = {}
        for at in tasks:
            dist_map = self._dist_from(at.task.cell, avoid)
            for car in pool:
                d = dist_map.get(self.drivers[car].position)
                out[(car, at.task.task_id)] = float(d) if d is not None else None
        return out

    def _allocate_and_route(self, pool: list[str], open_tasks: list[ActiveTask],
                            elapsed: float, cycle: int) -> None:
        if self.scheme == "FixedRoute":
            for at in open_tasks:
                at.accepted = True  # the patrol implicitly takes every task
            return
        if not pool or not open_tasks:
            return
        tasks = [at.task for at in open_tasks]
        by_id = {at.task.task_id: at for at in open_tasks}
        # reruns within a cycle get their own shuffle stream
        alloc_label = cycle if elapsed == 0.0 else cycle * 10_000 + int(elapsed)

        if self.scheme in baselines.BGT_SCHEMES:
            distances = self._distances(pool, open_tasks)
            result = alloc.best_response_allocate(
                pool, tasks, distances, elapsed, self.reputation, self.uparams,
                seed=self.seed, cycle=alloc_label,
            )
            assignment = {
                car: tid for car, tid in result.assignment.items()
                if result.utilities.get(car, 0.0) > 0.0
            }
            if self.collect_trace:
                for tid in sorted(result.pick_lists):
                    dispatched = [c for c in result.pick_lists[tid] if assignment.get(c) == tid]
                    self.trace["allocation"].append({
                        "cycle": cycle, "elapsed_min": elapsed, "task": tid,
                        "reward": by_id[tid].task.reward,
                        "picks": dispatched,
                        "utilities": {c: result.utilities[c] for c in dispatched},
                        "certified": result.certified,
                    })
        else:
            distances = self._distances(pool, open_tasks)
            rng = substream(self.seed, "baseline", alloc_label)
            assignment = baselines.run_baseline_allocation(
                self.scheme, pool, tasks, distances, self.reputation, rng, elapsed
            )

        for car, tid in sorted(assignment.items()):
            at = by_id[tid]
            if car not in at.task.picks:
                at.task.picks.append(car)
            at.accepted = True
            self.drivers[car].task_id = tid
            self.drivers[car].assigned_this_cycle = True

        if self.scheme in baselines.BGT_SCHEMES:
            for at in open_tasks:
                e = aggregate_reputation(at.task, self.reputation)
                q, reward = pid_step(at.pid, e)
                at.task.reward = reward
                if self.collect_trace:
                    self.trace["incentive"].append({
                        "cycle": cycle, "elapsed_min": elapsed, "task": at.task.task_id,
                        "aggregate_reputation": e, "error": at.pid.prev_error,
                        "adjustment": q, "reward": reward,
                    })

        for car in sorted(assignment):
            self._route_driver(self.drivers[car], by_id[assignment[car]], elapsed, cycle)

    def _route_driver(self, driver: Driver, at: ActiveTask, elapsed: float, cycle: int) -> None:
        remaining = at.task.remaining_min(elapsed)
        budget_cells = int(remaining // self.travel_quantum)
        avoid = self._avoid_set() | driver.personal_blocked
        driver.route_idx = 0
        if self.scheme == "DASC":
            state = routing.MdpState(driver.position, at.task.cell)
            actions = routing.enumerate_actions(
                self.grid, state, remaining, self.params.k_routes,
                travel_min_per_cell=self.travel_quantum, table=self.mdp,
            )
            if actions:
                rng = substream(self.seed, "route", cycle, driver.car_id)
                action = routing.select_action(
                    self.mdp, self.grid, state, actions, self.access, cycle, rng
                )
                driver.route = list(action.cells)
                self._executed_routes.append((state, action))
            else:
                driver.route = None
        elif self.scheme == "DASC_no_MDP":
            # the naive router trusts the accessibility map alone
            route = baselines.greedy_access_route(
                self.grid, self.access, driver.position, at.task.cell, budget_cells,
                avoid=frozenset(driver.personal_blocked),
            )
            driver.route = route
        elif self.scheme == "SocialCar":
            driver.route = astar_path(self.grid, driver.position, at.task.cell,
                                      avoid=frozenset(driver.personal_blocked))
        else:
            driver.route = astar_path(self.grid, driver.position, at.task.cell, avoid=avoid)

    # -------------------------------------------------------------- movement

    def _run_movement(self, t: int, pool: list[str]) -> None:
        self._tasks_by_cell: dict[int, list[ActiveTask]] = {}
        for at in self.active_tasks.values():
            self._tasks_by_cell.setdefault(at.task.cell, []).append(at)
        abort_rng = {
            car: substream(self.seed, "abort", car, t)
            for car in pool
            if self.drivers[car].kind == "aborter"
        }

        for step in range(1, self.substeps + 1):
            tau = step * self.travel_quantum
            self._expire_open_tasks(tau)
            if self.scheme == "FixedRoute":
                for car in pool:
                    self._patrol_step(self.drivers[car], tau, t)
                continue
            for car in pool:
                driver = self.drivers[car]
                if driver.task_id is None:
                    continue
                at = self.active_tasks.get(driver.task_id)
                if at is None or at.status != "open":
                    driver.task_id = None
                    driver.route = None
                    continue
                if driver.kind == "aborter" and abort_rng[car].random() < driver.abort_prob:
                    self._handle_drop(driver, at, tau, t)
                    continue
                self._advance_driver(driver, at, tau, t)

    def _advance_driver(self, driver: Driver, at: ActiveTask, tau: float, t: int) -> None:
        if driver.cooldown > 0:
            driver.cooldown -= 1
            return
        if driver.route is None or driver.route_idx + 1 >= len(driver.route):
            if driver.position == at.task.cell:
                self._handle_arrival(driver, at, tau)
            return
        nxt = driver.route[driver.route_idx + 1]
        if nxt in self.grid.damaged:
            self._record_block(driver, nxt, t)
            driver.cooldown = self.params.turnaround_quanta
            self._replan_after_block(driver, at, tau)
            return
        driver.position = nxt
        driver.route_idx += 1
        if self.knowledge.get(nxt) == 1:
            self.knowledge[nxt] = 0  # repaired: the car just drove through it
            self._observed_now[nxt] = 0
        self._recheck_neighbors(nxt)
        if self.scheme in baselines.OPPORTUNISTIC_SCHEMES:
            self._verify_cell(driver, nxt, tau)
        if driver.position == at.task.cell:
            self._handle_arrival(driver, at, tau)

    def _record_block(self, driver: Driver, cell: int, t: int) -> None:
        self.knowledge[cell] = 1
        self._observed_now[cell] = 1
        driver.personal_blocked.add(cell)
        if self.collect_trace:
            self.trace["observations"].append(
                {"cycle": t, "cell": cell, "observed": 1, "observer": driver.car_id}
            )

    def _recheck_neighbors(self, cell: int) -> None:
        # Any car driving past a known collapse site re-reads it; a repair
        # is noticed without having to drive the cell itself.
        for nb in self.grid.neighbors(cell):
            if self.knowledge.get(nb) == 1 and nb not in self.grid.damaged:
                self.knowledge[nb] = 0
                self._observed_now[nb] = 0

    def _replan_after_block(self, driver: Driver, at: ActiveTask, tau: float) -> None:
        if self.scheme == "SocialCar":
            avoid = frozenset(driver.personal_blocked)
        else:
            avoid = self._avoid_set() | driver.personal_blocked
        path = astar_path(self.grid, driver.position, at.task.cell, avoid=avoid)
        remaining = at.task.remaining_min(tau)
        if path is None or (len(path) - 1) * self.travel_quantum > remaining:
            self._mark_missed(driver, at)
            driver.task_id = None
            driver.route = None
            return
        driver.route = path
        driver.route_idx = 0

    def _verify_cell(self, driver: Driver, cell: int, tau: float) -> None:
        for other in self._tasks_by_cell.get(cell, []):
            if other.verified or other.status != "open":
                continue
            if other.task.remaining_min(tau) <= 0:
                continue
            other.verified = True
            other.verified_min = tau
            other.verified_by = driver.car_id
            other.status = "verified"
            self._cycle_counts["verified"] += 1
            ev = self.tally.events[other.event_key]
            if ev.final is None:
                ev.final = ev.truth  # on-site sensing reads the ground truth
                ev.resolved_by = "car"
                self._cycle_confusion.add(ev.truth, ev.final)

    def _handle_arrival(self, driver: Driver, at: ActiveTask, tau: float) -> None:
        self._verify_cell(driver, at.task.cell, tau)
        if driver.car_id not in at.outcome_by_car and driver.car_id in at.task.picks:
            alloc.mark_outcome({at.task.task_id: at.task}, self.reputation,
                               driver.car_id, at.task.task_id, "completed")
            at.outcome_by_car[driver.car_id] = "completed"
        driver.task_id = None
        driver.route = None

    def _handle_drop(self, driver: Driver, at: ActiveTask, tau: float, t: int) -> None:
        alloc.mark_outcome({at.task.task_id: at.task}, self.reputation,
                           driver.car_id, at.task.task_id, "dropped")
        at.outcome_by_car[driver.car_id] = "dropped"
        driver.task_id = None
        driver.route = None
        driver.aborted_this_cycle = True
        self.tally.drops += 1
        self._cycle_counts["drops"] += 1
        if self.scheme not in baselines.BGT_SCHEMES:
            return
        open_now = self._open_tasks(tau)
        if self.churn.record_drop(len(open_now)):
            self._cycle_counts["reallocations"] += 1
            self.tally.churn_reallocations += 1
            # one task per car per cycle: only spares that never took a
            # task this cycle can replace the lost capacity
            idle = [
                car for car in sorted(self._cycle_pool)
                if self.drivers[car].task_id is None
                and not self.drivers[car].assigned_this_cycle
                and not self.drivers[car].aborted_this_cycle
            ]
            self._allocate_and_route(idle, open_now, elapsed=tau, cycle=t)

    def _patrol_step(self, driver: Driver, tau: float, t: int) -> None:
        if not self.tour:
            return
        if driver.cooldown > 0:
            driver.cooldown -= 1
            return
        on_detour = driver.route is not None and driver.route_idx + 1 < len(driver.route)
        if on_detour:
            nxt = driver.route[driver.route_idx + 1]
        else:
            driver.route = None
            nxt = self.tour[(driver.tour_idx + 1) % len(self.tour)]
            if nxt == driver.position:
                driver.tour_idx = (driver.tour_idx + 1) % len(self.tour)
                return
        if nxt in self.grid.damaged:
            self._record_block(driver, nxt, t)
            driver.cooldown = self.params.turnaround_quanta
            self._patrol_detour(driver)
            return
        if nxt not in self.grid.neighbors(driver.position):
            driver.route = None  # stale detour; resync on the next quantum
            return
        driver.position = nxt
        if on_detour:
            driver.route_idx += 1
            if driver.route_idx + 1 >= len(driver.route):
                driver.route = None
        else:
            driver.tour_idx = (driver.tour_idx + 1) % len(self.tour)
        if self.knowledge.get(nxt) == 1:
            self.knowledge[nxt] = 0
            self._observed_now[nxt] = 0
        self._recheck_neighbors(nxt)
        self._verify_cell(driver, nxt, tau)

    def _patrol_detour(self, driver: Driver) -> None:
        avoid = self._avoid_set() | driver.personal_blocked
        for skip in range(2, min(len(self.tour), 12)):
            target_idx = (driver.tour_idx + skip) % len(self.tour)
            target = self.tour[target_idx]
            if target in avoid or target == driver.position:
                continue
            path = astar_path(self.grid, driver.position, target, avoid=avoid)
            if path is not None and len(path) > 1:
                driver.route = path
                driver.route_idx = 0
                driver.tour_idx = target_idx
                return
        # boxed in: wait this quantum

    # ------------------------------------------------------------- outcomes

    def _mark_missed(self, driver: Driver, at: ActiveTask) -> None:
        if driver.car_id in at.outcome_by_car or driver.car_id not in at.task.picks:
            return
        alloc.mark_outcome({at.task.task_id: at.task}, self.reputation,
                           driver.car_id, at.task.task_id, "missed_deadline")
        at.outcome_by_car[driver.car_id] = "missed_deadline"

    def _expire_open_tasks(self, tau: float, final: bool = False) -> None:
        for at in self.active_tasks.values():
            if at.status != "open":
                continue
            if at.task.deadline_min < tau or final:
                at.status = "deadline_missed"
                self._cycle_counts["missed"] += 1
                for car_id in list(at.task.picks):
                    driver = self.drivers[car_id]
                    self._mark_missed(driver, at)
                    if driver.task_id == at.task.task_id:
                        driver.task_id = None
                        driver.route = None
