"""Baseline scheduling heuristics (SJF, FCFS, QoS, HVF).

Each heuristic looks at the ready pool, keeps the jobs that fit the free
capacity of the current timestep, and schedules the best one under its key.
Ties go to the lowest ready-pool index. Heuristics never suspend.
"""

from __future__ import annotations

import enum

import numpy as np

from .sim import DatacenterState, free_capacity, noop_action

__all__ = [
    "HeuristicKind",
    "select_action",
    "HEURISTICS",
    "parse_heuristic",
    "heuristic_controller",
    "RandomController",
    "noop_controller",
    "baseline_controller",
]


class HeuristicKind(str, enum.Enum):
    SJF = "sjf"
    FCFS = "fcfs"
    QOS = "qos"
    HVF = "hvf"


HEURISTICS = tuple(HeuristicKind)

# smaller key wins
_KEYS = {
    HeuristicKind.SJF: lambda job: job.duration,
    HeuristicKind.FCFS: lambda job: job.arrival_time,
    HeuristicKind.QOS: lambda job: -job.qos,
    HeuristicKind.HVF: lambda job: -job.value,
}


def parse_heuristic(name) -> HeuristicKind:
    if isinstance(name, HeuristicKind):
        return name
    try:
        return HeuristicKind(str(name).lower())
    except ValueError:
        choices = "|".join(k.value for k in HeuristicKind)
        raise ValueError(f"unknown heuristic {name!r}; expected one of {choices}") from None


def select_action(kind, state: DatacenterState) -> int:
    key = _KEYS[parse_heuristic(kind)]
    capacity = free_capacity(state)
    best, best_key = None, None
    for i, job in enumerate(state.ready_pool[: state.config.n]):
        if job.resource_req > capacity:
            continue
        k = key(job)
        if best is None or k < best_key:
            best, best_key = i, k
    return noop_action(state.config.n) if best is None else best


def heuristic_controller(kind):
    """Wrap a heuristic as a ``(state, obs) -> action`` controller."""
    kind = parse_heuristic(kind)

    def controller(state, obs=None):
        return select_action(kind, state)

    controller.name = kind.value
    return controller


class RandomController:
    """Uniform over all ``n + 2`` actions; reseeded per rollout for determinism."""

    name = "random"

    def __init__(self, seed: int = 0):
        self.rng = np.random.default_rng(seed)

    def reseed(self, seed: int) -> None:
        self.rng = np.random.default_rng([seed, 7])

    def __call__(self, state, obs=None) -> int:
        return int(self.rng.integers(state.config.n_actions))


def noop_controller(state, obs=None) -> int:
    return noop_action(state.config.n)


noop_controller.name = "noop"


def baseline_controller(name):
    """Controller for a heuristic name, ``"random"`` or ``"noop"``."""
    low = str(getattr(name, "value", name)).lower()
    if low == "random":
        return RandomController()
    if low == "noop":
        return noop_controller
    return heuristic_controller(low)
