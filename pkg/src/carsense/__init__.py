"""Deterministic car-sensing dispatch simulator.

A seedable grid-world simulation of a disaster-response sensing fleet:
crowd reports are distilled into candidate events, scout cars map road
damage, a congestion game assigns verification tasks to drivers, a
learned route table steers cars around damaged cells, and a feedback
controller adjusts task rewards when drivers drop out.
"""

__version__ = "0.1.0"

from carsense.world import Grid, DamageProcess, GroundTruthEvent, step_damage, shortest_distance

__all__ = [
    "Grid",
    "DamageProcess",
    "GroundTruthEvent",
    "step_damage",
    "shortest_distance",
]
