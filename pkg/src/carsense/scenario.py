"""Scenario files: schema, validation, loading, and synthetic generation.

A scenario is a JSON document (schema_version 1) describing the grid,
the damage process, the driver population, the ground-truth events, and
the social reports. Reports may be inline or in a sibling JSONL file
(one record per line with source_id, cell, state, timestamp_min,
deadline_min). The synthesizer builds seeded scenarios in the same
format so sweeps and tests need no hand-written fixtures.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from carsense.rng import substream
from carsense.social import SocialReport
from carsense.world import (
    DamageProcess,
    GroundTruthEvent,
    Grid,
    ScenarioError,
    build_grid,
)

SCHEMA_VERSION = 1
DRIVER_KINDS = ("completer", "aborter", "refuser")


@dataclass
class Scenario:
    grid: Grid
    damage: DamageProcess
    cycles: int
    cycle_length_min: float
    driver_counts: dict[str, int]
    abort_prob: float
    events: list[GroundTruthEvent]
    reports: list[SocialReport]
    driver_positions: dict[str, int] = field(default_factory=dict)
    name: str = "scenario"

    def truth_map(self) -> dict[tuple[int, int], int]:
        return {(e.cycle, e.cell): e.state for e in self.events}

    def reports_for_cycle(self, cycle: int) -> list[SocialReport]:
        lo = (cycle - 1) * self.cycle_length_min
        hi = cycle * self.cycle_length_min
        return [r for r in self.reports if lo <= r.timestamp_min < hi]


def _require(cond: bool, where: str, message: str) -> None:
    if not cond:
        raise ScenarioError(f"{where}: {message}")


def scenario_from_dict(doc: dict, base_dir: Path | None = None, name: str = "scenario") -> Scenario:
    _require(isinstance(doc, dict), "document", "scenario must be a JSON object")
    version = doc.get("schema_version")
    _require(version == SCHEMA_VERSION, "schema_version", f"expected {SCHEMA_VERSION}, got {version!r}")

    g = doc.get("grid")
    _require(isinstance(g, dict), "grid", "missing grid section")
    grid = build_grid(
        width=int(g.get("width", 0)),
        height=int(g.get("height", 0)),
        blocked=set(g.get("blocked", [])),
        removed_edges=[tuple(e) for e in g.get("removed_edges", [])],
        added_edges=[tuple(e) for e in g.get("added_edges", [])],
        damaged=set(g.get("initial_damage", [])),
    )

    d = doc.get("damage", {})
    damage = DamageProcess(
        appearance_prob=float(d.get("appearance_prob", 0.0)),
        repair_prob=float(d.get("repair_prob", 0.0)),
        per_cell_appearance={int(k): float(v) for k, v in d.get("per_cell_appearance", {}).items()},
        per_cell_repair={int(k): float(v) for k, v in d.get("per_cell_repair", {}).items()},
        schedule={int(k): frozenset(v) for k, v in d.get("schedule", {}).items()},
        allow_redamage=bool(d.get("allow_redamage", True)),
    )
    damage.validate(grid)

    cycles = int(doc.get("cycles", 0))
    _require(cycles >= 1, "cycles", "must be at least 1")
    cycle_length = float(doc.get("cycle_length_min", 0.0))
    _require(cycle_length > 0, "cycle_length_min", "must be positive")

    drv = doc.get("drivers", {})
    counts = {kind: int(drv.get(f"{kind}s", 0)) for kind in DRIVER_KINDS}
    _require(all(v >= 0 for v in counts.values()), "drivers", "counts must be non-negative")
    abort_prob = float(drv.get("abort_prob", 0.05))
    _require(0.0 <= abort_prob <= 1.0, "drivers.abort_prob", "must lie in [0, 1]")
    positions = {str(k): int(v) for k, v in drv.get("positions", {}).items()}
    for car, cell in positions.items():
        _require(grid.contains(cell), f"drivers.positions[{car}]", f"cell {cell} invalid")

    events = []
    for i, e in enumerate(doc.get("events", [])):
        ev = GroundTruthEvent(
            cycle=int(e.get("cycle", 0)),
            cell=int(e.get("cell", -1)),
            state=int(e.get("state", -1)),
            deadline_min=float(e.get("deadline_min", 0.0)),
        )
        try:
            ev.validate(grid)
        except ScenarioError as err:
            raise ScenarioError(f"events[{i}]: {err}") from err
        _require(1 <= ev.cycle <= cycles, f"events[{i}].cycle", "outside the run horizon")
        events.append(ev)

    reports = [
        SocialReport(
            source_id=str(r.get("source_id", "")),
            cell=int(r.get("cell", -1)),
            state=int(r.get("state", 0)),
            timestamp_min=float(r.get("timestamp_min", -1.0)),
            deadline_min=float(r.get("deadline_min", 0.0)),
        )
        for r in doc.get("reports", [])
    ]
    reports_path = doc.get("reports_path")
    if reports_path:
        path = Path(reports_path)
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        _require(path.exists(), "reports_path", f"no such file: {path}")
        reports.extend(load_reports_jsonl(path))
    for i, r in enumerate(reports):
        _require(r.timestamp_min >= 0, f"reports[{i}].timestamp_min", "must be non-negative")
        _require(r.deadline_min > 0, f"reports[{i}].deadline_min", "must be positive")

    return Scenario(
        grid=grid,
        damage=damage,
        cycles=cycles,
        cycle_length_min=cycle_length,
        driver_counts=counts,
        abort_prob=abort_prob,
        events=events,
        reports=reports,
        driver_positions=positions,
        name=name,
    )


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    if not path.exists():
        raise ScenarioError(f"scenario file not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as err:
        raise ScenarioError(f"{path}:{err.lineno}:{err.colno}: invalid JSON ({err.msg})") from err
    return scenario_from_dict(doc, base_dir=path.parent, name=path.stem)


def load_reports_jsonl(path: str | Path) -> list[SocialReport]:
    reports = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as err:
                raise ScenarioError(f"{path}:{lineno}: invalid JSON ({err.msg})") from err
            try:
                reports.append(
                    SocialReport(
                        source_id=str(rec["source_id"]),
                        cell=int(rec["cell"]),
                        state=int(rec["state"]),
                        timestamp_min=float(rec["timestamp_min"]),
                        deadline_min=float(rec["deadline_min"]),
                    )
                )
            except KeyError as err:
                raise ScenarioError(f"{path}:{lineno}: missing field {err}") from err
    return reports


def scenario_to_dict(sc: Scenario) -> dict:
    # reconstruct edge overrides relative to the plain 4-connected lattice
    lattice = build_grid(sc.grid.width, sc.grid.height, blocked=sc.grid.blocked)
    lattice_edges = {
        (a, b) for a, nbrs in lattice.adjacency.items() for b in nbrs if a < b
    }
    actual_edges = {
        (a, b) for a, nbrs in sc.grid.adjacency.items() for b in nbrs if a < b
    }
    return {
        "schema_version": SCHEMA_VERSION,
        "grid": {
            "width": sc.grid.width,
            "height": sc.grid.height,
            "blocked": sorted(sc.grid.blocked),
            "removed_edges": sorted(lattice_edges - actual_edges),
            "added_edges": sorted(actual_edges - lattice_edges),
            "initial_damage": sorted(sc.grid.damaged),
        },
        "damage": {
            "appearance_prob": sc.damage.appearance_prob,
            "repair_prob": sc.damage.repair_prob,
            "per_cell_appearance": {str(k): v for k, v in sorted(sc.damage.per_cell_appearance.items())},
            "per_cell_repair": {str(k): v for k, v in sorted(sc.damage.per_cell_repair.items())},
            "schedule": {str(k): sorted(v) for k, v in sorted(sc.damage.schedule.items())},
            "allow_redamage": sc.damage.allow_redamage,
        },
        "cycles": sc.cycles,
        "cycle_length_min": sc.cycle_length_min,
        "drivers": {
            "completers": sc.driver_counts.get("completer", 0),
            "aborters": sc.driver_counts.get("aborter", 0),
            "refusers": sc.driver_counts.get("refuser", 0),
            "abort_prob": sc.abort_prob,
            "positions": dict(sorted(sc.driver_positions.items())),
        },
        "events": [
            {"cycle": e.cycle, "cell": e.cell, "state": e.state, "deadline_min": e.deadline_min}
            for e in sc.events
        ],
        "reports": [
            {
                "source_id": r.source_id,
                "cell": r.cell,
                "state": r.state,
                "timestamp_min": r.timestamp_min,
                "deadline_min": r.deadline_min,
            }
            for r in sc.reports
        ],
    }


def save_scenario(sc: Scenario, path: str | Path) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(sc), indent=2) + "\n", encoding="utf-8")


def synthesize_scenario(
    seed: int,
    width: int = 10,
    height: int = 10,
    cycles: int = 36,
    cycle_length_min: float = 100.0,
    completers: int = 30,
    aborters: int = 30,
    refusers: int = 30,
    abort_prob: float = 0.05,
    blocked_frac: float = 0.06,
    appearance_prob: float = 0.012,
    repair_prob: float = 0.05,
    initial_damage_frac: float = 0.10,
    events_per_cycle: int = 6,
    event_true_prob: float = 0.55,
    n_sources: int = 40,
    reliable_frac: float = 0.7,
    reliable_accuracy: float = 0.9,
    unreliable_accuracy: float = 0.35,
    reports_per_event: tuple[int, int] = (3, 6),
    deadline_range_min: tuple[float, float] = (40.0, 95.0),
    long_deadline_prob: float = 0.08,
    edge_keep_frac: float = 1.0,
    name: str = "synthetic",
) -> Scenario:
    """Build a seeded scenario with noisy crowd reports over a damaged grid.

    Sources split into a reliable majority and an unreliable tail; each
    event draws a handful of reporters who claim the true state with
    their source's accuracy. A small fraction of deadlines exceed the
    cycle length to exercise event splitting.
    """
    rng = substream(seed, "scenario")
    n = width * height
    blocked = set()
    while len(blocked) < int(blocked_frac * n):
        c = rng.randrange(n)
        blocked.add(c)
    grid = build_grid(width, height, blocked=blocked)

    # Real road networks are sparser than a full lattice: thin out edges
    # while preserving connectivity (non-spanning-tree edges only), so
    # damage can actually sever routes instead of shifting them one block.
    removed_edges: list[tuple[int, int]] = []
    if edge_keep_frac < 1.0:
        tree: set[tuple[int, int]] = set()
        seen = set()
        for start in grid.cells():
            if start in seen:
                continue
            seen.add(start)
            stack = [start]
            while stack:
                here = stack.pop()
                nbrs = list(grid.neighbors(here))
                rng.shuffle(nbrs)
                for nxt in nbrs:
                    if nxt in seen:
                        continue
                    seen.add(nxt)
                    tree.add((min(here, nxt), max(here, nxt)))
                    stack.append(nxt)
        all_edges = {
            (min(a, b), max(a, b))
            for a, nbrs in grid.adjacency.items()
            for b in nbrs
        }
        optional = sorted(all_edges - tree)
        rng.shuffle(optional)
        drop = int(len(all_edges) * (1.0 - edge_keep_frac))
        removed_edges = optional[:drop]
        grid = build_grid(width, height, blocked=blocked, removed_edges=removed_edges)
    cells = grid.cells()

    # Disaster damage is spatially correlated: it follows streets, so the
    # field is drawn as wall segments with gaps rather than i.i.d. cells.
    # Walls create pockets that blind routing dives into and informed
    # routing detours around.
    target = int(initial_damage_frac * len(cells))
    initial_damage: set[int] = set()
    guard = 0
    while len(initial_damage) < target and guard < 500:
        guard += 1
        start = rng.choice(cells)
        horizontal = rng.random() < 0.5
        length = rng.randint(3, max(4, (width + height) // 3))
        x, y = start % width, start // width
        for i in range(length):
            cx = x + i if horizontal else x
            cy = y if horizontal else y + i
            if cx >= width or cy >= height:
                break
            c = cy * width + cx
            if c in blocked:
                continue
            initial_damage.add(c)
            if len(initial_damage) >= target:
                break
    grid = build_grid(width, height, blocked=blocked, removed_edges=removed_edges,
                      damaged=initial_damage)

    # New damage keeps appearing near the existing scars.
    near_damage = set(initial_damage)
    for c in initial_damage:
        near_damage.update(grid.neighbors(c))
    per_cell_appearance = {
        c: appearance_prob * 4.0 for c in sorted(near_damage) if grid.contains(c)
    }

    sources = [f"src-{i:03d}" for i in range(n_sources)]
    n_reliable = int(reliable_frac * n_sources)
    accuracy = {
        s: (reliable_accuracy if i < n_reliable else unreliable_accuracy)
        for i, s in enumerate(sources)
    }

    events: list[GroundTruthEvent] = []
    reports: list[SocialReport] = []
    # events land on cells that start out passable; reports about cells
    # inside the damage field would be unverifiable for every scheme
    event_cells = [c for c in cells if c not in initial_damage] or cells
    for t in range(1, cycles + 1):
        window_start = (t - 1) * cycle_length_min
        chosen_cells = rng.sample(event_cells, min(events_per_cycle, len(event_cells)))
        for cell in chosen_cells:
            state = 1 if rng.random() < event_true_prob else 0
            if rng.random() < long_deadline_prob:
                deadline = rng.uniform(cycle_length_min * 1.2, cycle_length_min * 2.5)
            else:
                deadline = rng.uniform(*deadline_range_min)
            events.append(GroundTruthEvent(cycle=t, cell=cell, state=state, deadline_min=deadline))
            k = rng.randint(*reports_per_event)
            for s in rng.sample(sources, k):
                claim = state if rng.random() < accuracy[s] else 1 - state
                reports.append(
                    SocialReport(
                        source_id=s,
                        cell=cell,
                        state=claim,
                        timestamp_min=window_start + rng.uniform(0.0, cycle_length_min * 0.3),
                        deadline_min=deadline,
                    )
                )

    return Scenario(
        grid=grid,
        damage=DamageProcess(
            appearance_prob=appearance_prob,
            repair_prob=repair_prob,
            per_cell_appearance=per_cell_appearance,
        ),
        cycles=cycles,
        cycle_length_min=cycle_length_min,
        driver_counts={"completer": completers, "aborter": aborters, "refuser": refusers},
        abort_prob=abort_prob,
        events=events,
        reports=reports,
        name=name,
    )
