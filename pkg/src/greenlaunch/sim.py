"""Green datacenter simulator.

A pool of ``R_max`` resource units whose powered-on size follows a power
trace, a wait pool and a bounded ready pool of jobs, and an ``n + 2`` action
interface (schedule ready job ``i``, suspend, no-op).  Every call to
:func:`step` advances the clock by one timestep.

The simulator state is a plain mutable object; :func:`reset` builds one and
:func:`step` advances it in place.  :class:`GreenDatacenterEnv` wraps both
behind a gym-like ``reset``/``step`` that returns encoded observations.
"""

from __future__ import annotations

import csv
import dataclasses
import enum
import heapq
import hashlib
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "ConfigError",
    "Lifecycle",
    "Job",
    "PowerTrace",
    "SimConfig",
    "DatacenterState",
    "StepInfo",
    "GreenDatacenterEnv",
    "qos_violation_time",
    "generate_arrivals",
    "arrival_rate",
    "synthetic_power_trace",
    "load_power_trace",
    "reset",
    "step",
    "submit",
    "encode_observation",
    "free_capacity",
    "JOB_FEATURES",
    "noop_action",
    "suspend_action",
]

JOB_FEATURES = 6


class ConfigError(ValueError):
    """Raised for invalid simulator configuration."""


class Lifecycle(str, enum.Enum):
    WAITING = "waiting"
    READY = "ready"
    RUNNING = "running"
    SUSPENDED = "suspended"
    FINISHED = "finished"
    EXPIRED = "expired"


_ALLOWED = {
    Lifecycle.WAITING: {Lifecycle.READY, Lifecycle.EXPIRED},
    Lifecycle.READY: {Lifecycle.RUNNING, Lifecycle.EXPIRED},
    Lifecycle.RUNNING: {Lifecycle.SUSPENDED, Lifecycle.FINISHED, Lifecycle.EXPIRED},
    Lifecycle.SUSPENDED: {Lifecycle.RUNNING, Lifecycle.EXPIRED},
    Lifecycle.FINISHED: set(),
    Lifecycle.EXPIRED: set(),
}


def qos_violation_time(job_or_finish, qos: Optional[float] = None) -> int:
    """Deadline after which a job lingering in the system is penalised.

    Accepts a :class:`Job` or an ``(expected_finish_time, qos)`` pair and
    returns ``ceil(expected_finish_time / qos)``.  The division is done in
    exact rational arithmetic so float rounding can never shift the ceiling.
    """
    if isinstance(job_or_finish, Job):
        finish, q = job_or_finish.expected_finish_time, job_or_finish.qos
    else:
        finish, q = job_or_finish, qos
    if q is None or not q > 0:
        raise ValueError(f"qos must be in (0, 1], got {q!r}")
    if q > 1:
        raise ValueError(f"qos must be in (0, 1], got {q!r}")
    return math.ceil(Fraction(int(finish)) / Fraction(q))


@dataclass
class Job:
    id: int
    value: float
    qos: float
    resource_req: int
    duration: int
    arrival_time: int
    remaining_work: int = -1
    lifecycle: Lifecycle = Lifecycle.WAITING
    columns: tuple[int, ...] = ()
    finish_time: Optional[int] = None

    def __post_init__(self):
        if self.remaining_work < 0:
            self.remaining_work = self.duration
        self.expected_finish_time = self.arrival_time + self.duration
        self.qos_violation_time = qos_violation_time(self)

    def move(self, new: Lifecycle) -> None:
        if new not in _ALLOWED[self.lifecycle]:
            raise RuntimeError(f"job {self.id}: illegal transition {self.lifecycle.value} -> {new.value}")
        self.lifecycle = new


@dataclass
class PowerTrace:
    available_resources: np.ndarray
    source: str = "synthetic"

    def __post_init__(self):
        self.available_resources = np.asarray(self.available_resources, dtype=np.int64)

    def at(self, t: int) -> int:
        # traces shorter than the episode wrap around
        return int(self.available_resources[t % len(self.available_resources)])

    def window(self, t: int, length: int) -> np.ndarray:
        idx = np.arange(t, t + length) % len(self.available_resources)
        return self.available_resources[idx]


@dataclass
class SimConfig:
    """All knobs of one simulated datacenter.

    Duration, value and qos fields describe the synthetic workload;
    ``power_*`` fields the synthetic power model.  ``power_trace_file`` overrides the synthetic
    model with a CSV ``timestep,available_resources`` trace.
    """

    R_max: int = 10
    n: int = 10
    T_horizon: int = 16
    lambda_load: float = 1.2
    episode_len: int = 2000
    seed: int = 0
    short_duration: tuple[int, int] = (1, 3)
    long_duration: tuple[int, int] = (10, 15)
    long_fraction: float = 0.2
    value_multiplier: tuple[float, float] = (0.5, 2.0)
    qos_choices: tuple[float, ...] = (0.25, 0.5, 0.75, 1.0)
    qos_penalty_coeff: float = 0.1
    expire_factor: float = 2.0
    power_base: float = 0.7
    power_amplitude: float = 0.3
    power_noise: float = 0.05
    day_len: int = 100
    R_min: Optional[int] = None
    power_trace_file: Optional[str] = None

    def __post_init__(self):
        for name in ("short_duration", "long_duration", "value_multiplier", "qos_choices"):
            setattr(self, name, tuple(getattr(self, name)))
        self.validate()

    def validate(self) -> None:
        for name in ("R_max", "n", "T_horizon", "episode_len", "day_len"):
            if int(getattr(self, name)) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)!r}")
        if self.lambda_load < 0:
            raise ConfigError(f"lambda_load must be >= 0, got {self.lambda_load!r}")
        lo, hi = self.short_duration
        lo2, hi2 = self.long_duration
        if not (1 <= lo <= hi and 1 <= lo2 <= hi2):
            raise ConfigError("duration ranges must be positive (lo <= hi)")
        if not 0.0 <= self.long_fraction <= 1.0:
            raise ConfigError("long_fraction must be in [0, 1]")
        if not 0 < self.value_multiplier[0] <= self.value_multiplier[1]:
            raise ConfigError("value_multiplier must satisfy 0 < lo <= hi")
        if not self.qos_choices or any(not 0 < q <= 1 for q in self.qos_choices):
            raise ConfigError("qos_choices must be non-empty and within (0, 1]")
        if self.qos_penalty_coeff < 0 or self.expire_factor < 1:
            raise ConfigError("qos_penalty_coeff must be >= 0 and expire_factor >= 1")
        if self.R_min is not None and not 0 <= self.R_min <= self.R_max:
            raise ConfigError("R_min must lie in [0, R_max]")

    @property
    def n_actions(self) -> int:
        return self.n + 2

    @property
    def max_req(self) -> int:
        return max(1, self.R_max // 5)

    @property
    def max_duration(self) -> int:
        return max(self.short_duration[1], self.long_duration[1])

    @property
    def max_value(self) -> float:
        return float(self.max_duration * self.max_req * self.value_multiplier[1])

    @property
    def r_min(self) -> int:
        return self.R_max // 2 if self.R_min is None else self.R_min

    def mean_job_work(self) -> float:
        """Expected ``resource_req * duration`` of one generated job."""
        mean_req = (1 + self.max_req) / 2
        mean_short = sum(self.short_duration) / 2
        mean_long = sum(self.long_duration) / 2
        mean_dur = (1 - self.long_fraction) * mean_short + self.long_fraction * mean_long
        return mean_req * mean_dur

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=list).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def replace(self, **changes) -> "SimConfig":
        return dataclasses.replace(self, **changes)


def synthetic_power_trace(config: SimConfig, length: int, rng: np.random.Generator) -> PowerTrace:
    t = np.arange(length)
    level = config.power_base + config.power_amplitude * np.sin(2 * np.pi * t / config.day_len)
    level = level + rng.normal(0.0, config.power_noise, size=length)
    avail = np.clip(np.round(config.R_max * level), config.r_min, config.R_max).astype(np.int64)
    return PowerTrace(avail, source="synthetic")


def load_power_trace(path, R_max: int) -> PowerTrace:
    """Read a ``timestep,available_resources`` CSV, clamped to ``[0, R_max]``."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for row in reader:
            if not row or row[0].strip().startswith("#"):
                continue
            if row[0].strip() == "timestep":
                continue
            rows.append((int(row[0]), int(float(row[1]))))
    if not rows:
        raise ConfigError(f"power trace {path} is empty")
    rows.sort()
    avail = np.clip(np.array([r[1] for r in rows], dtype=np.int64), 0, R_max)
    return PowerTrace(avail, source="file")


def arrival_rate(config: SimConfig, mean_capacity: float) -> float:
    """Poisson job rate giving offered work ``lambda_load * mean_capacity``."""
    return config.lambda_load * mean_capacity / config.mean_job_work()


def generate_arrivals(
    rng: np.random.Generator,
    config: SimConfig,
    clock: int = 0,
    mean_capacity: Optional[float] = None,
    next_id: int = 0,
) -> list[Job]:
    if mean_capacity is None:
        mean_capacity = config.R_max * min(1.0, config.power_base)
    rate = arrival_rate(config, mean_capacity)
    count = int(rng.poisson(rate)) if rate > 0 else 0
    jobs = []
    for k in range(count):
        if rng.random() < config.long_fraction:
            lo, hi = config.long_duration
        else:
            lo, hi = config.short_duration
        duration = int(rng.integers(lo, hi + 1))
        req = int(rng.integers(1, config.max_req + 1))
        value = duration * req * float(rng.uniform(*config.value_multiplier))
        qos = float(config.qos_choices[int(rng.integers(len(config.qos_choices)))])
        jobs.append(Job(next_id + k, value, qos, req, duration, clock))
    return jobs


@dataclass
class StepInfo:
    invalid_action: bool = False
    scheduled: Optional[int] = None
    suspended: Optional[int] = None
    completed_value: float = 0.0
    penalty: float = 0.0
    finished: list = field(default_factory=list)
    expired: list = field(default_factory=list)
    preempted: list = field(default_factory=list)
    time_limit: bool = False


@dataclass
class DatacenterState:
    config: SimConfig
    power: PowerTrace
    rng: np.random.Generator
    clock: int = 0
    wait_pool: list = field(default_factory=list)
    ready_pool: list = field(default_factory=list)
    running: list = field(default_factory=list)
    finished: list = field(default_factory=list)
    expired: list = field(default_factory=list)
    next_id: int = 0
    mean_capacity: float = 0.0
    done: bool = False
    deadlines: list = field(default_factory=list)
    overdue: list = field(default_factory=list)

    @property
    def available(self) -> int:
        return self.power.at(self.clock)

    @property
    def used(self) -> int:
        return sum(j.resource_req for j in self.running)

    @property
    def resource_image(self) -> np.ndarray:
        return encode_observation(self)[0]

    @property
    def ready_array(self) -> np.ndarray:
        return encode_observation(self)[1].reshape(self.config.n, JOB_FEATURES)

    def jobs_in_system(self):
        yield from self.wait_pool
        yield from self.ready_pool
        yield from self.running

    def signature(self) -> tuple:
        """Hashable summary used for determinism checks."""
        def jt(j):
            return (j.id, j.value, j.qos, j.resource_req, j.duration, j.arrival_time,
                    j.remaining_work, j.lifecycle.value, j.columns)

        return (
            self.clock,
            tuple(jt(j) for j in self.wait_pool),
            tuple(jt(j) for j in self.ready_pool),
            tuple(jt(j) for j in self.running),
            tuple(j.id for j in self.finished),
            tuple(j.id for j in self.expired),
            self.next_id,
        )


def free_capacity(state: DatacenterState) -> int:
    return state.available - state.used


def noop_action(n: int) -> int:
    return n + 1


def suspend_action(n: int) -> int:
    return n


def reset(config: SimConfig, seed: Optional[int] = None, power: Optional[PowerTrace] = None) -> DatacenterState:
    config.validate()
    seed = config.seed if seed is None else seed
    power_seq, job_seq = np.random.SeedSequence(int(seed)).spawn(2)
    if power is None:
        if config.power_trace_file:
            power = load_power_trace(config.power_trace_file, config.R_max)
        else:
            length = config.episode_len + config.T_horizon + 1
            power = synthetic_power_trace(config, length, np.random.default_rng(power_seq))
    state = DatacenterState(config=config, power=power, rng=np.random.default_rng(job_seq))
    horizon = power.window(0, config.episode_len)
    state.mean_capacity = float(horizon.mean())
    _arrive(state)
    return state


def submit(state: DatacenterState, job: Job) -> None:
    """Queue an externally built job (ids must be unique) and admit it if a ready slot is free."""
    state.next_id = max(state.next_id, job.id + 1)
    _admit(state, [job])


def _arrive(state: DatacenterState) -> None:
    jobs = generate_arrivals(state.rng, state.config, state.clock, state.mean_capacity, state.next_id)
    state.next_id += len(jobs)
    _admit(state, jobs)


def _admit(state: DatacenterState, jobs: list) -> None:
    cfg = state.config
    for job in jobs:
        heapq.heappush(state.deadlines, (job.qos_violation_time, job.id, job))
    state.wait_pool.extend(jobs)
    while state.wait_pool and len(state.ready_pool) < cfg.n:
        job = state.wait_pool.pop(0)
        if job.lifecycle is Lifecycle.WAITING:
            job.move(Lifecycle.READY)
        state.ready_pool.append(job)


def _expire(state: DatacenterState, job: Job) -> None:
    if job.lifecycle is Lifecycle.RUNNING:
        state.running.remove(job)
    elif job in state.ready_pool:
        state.ready_pool.remove(job)
    else:
        state.wait_pool.remove(job)
    job.columns = ()
    job.move(Lifecycle.EXPIRED)
    state.expired.append(job)


def _place(state: DatacenterState, job: Job) -> None:
    taken = {c for j in state.running for c in j.columns}
    free = [c for c in range(state.available) if c not in taken]
    job.columns = tuple(free[: job.resource_req])
    job.move(Lifecycle.RUNNING)
    state.running.append(job)


def _unplace(state: DatacenterState, job: Job) -> None:
    state.running.remove(job)
    job.columns = ()
    job.move(Lifecycle.SUSPENDED)
    if len(state.ready_pool) < state.config.n:
        state.ready_pool.append(job)
    else:
        state.wait_pool.insert(0, job)


def _apply_power(state: DatacenterState, info: StepInfo) -> None:
    avail = state.available
    while state.used > avail:
        victim = min(state.running, key=lambda j: (j.value, -j.id))
        _unplace(state, victim)
        info.preempted.append(victim.id)
    stranded = [j for j in state.running if any(c >= avail for c in j.columns)]
    if stranded:
        for j in stranded:
            j.columns = ()
        taken = {c for j in state.running for c in j.columns}
        free = [c for c in range(avail) if c not in taken]
        for j in stranded:
            j.columns, free = tuple(free[: j.resource_req]), free[j.resource_req:]


def step(state: DatacenterState, action: int) -> tuple[DatacenterState, float, bool, StepInfo]:
    """Advance the datacenter by one timestep under ``action``."""
    if state.done:
        raise RuntimeError("step() called on a terminated episode; call reset()")
    cfg = state.config
    n = cfg.n
    info = StepInfo()
    action = int(action)
    if not 0 <= action < n + 2:
        info.invalid_action = True
    elif action < n:
        if action < len(state.ready_pool) and state.ready_pool[action].resource_req <= free_capacity(state):
            job = state.ready_pool.pop(action)
            _place(state, job)
            info.scheduled = job.id
        else:
            info.invalid_action = True
    elif action == n:
        if state.running and state.ready_pool:
            victim = min(state.running, key=lambda j: (j.value, -j.id))
            best_ready = max(j.value for j in state.ready_pool)
            if best_ready > victim.value:
                _unplace(state, victim)
                info.suspended = victim.id
            else:
                info.invalid_action = True
        else:
            info.invalid_action = True

    for job in list(state.running):
        job.remaining_work -= 1
        if job.remaining_work == 0:
            state.running.remove(job)
            job.columns = ()
            job.move(Lifecycle.FINISHED)
            job.finish_time = state.clock + 1
            state.finished.append(job)
            info.finished.append(job.id)
            info.completed_value += job.value
    state.clock += 1

    now = state.clock
    while state.deadlines and state.deadlines[0][0] < now:
        _, _, job = heapq.heappop(state.deadlines)
        state.overdue.append(job)
    still_overdue = []
    for job in state.overdue:
        if job.lifecycle in (Lifecycle.FINISHED, Lifecycle.EXPIRED):
            continue
        info.penalty += cfg.qos_penalty_coeff * job.value
        if now > cfg.expire_factor * job.qos_violation_time:
            _expire(state, job)
            info.expired.append(job.id)
        else:
            still_overdue.append(job)
    state.overdue = still_overdue
    reward = info.completed_value - info.penalty

    _arrive(state)
    _apply_power(state, info)
    if state.clock >= cfg.episode_len:
        state.done = True
        info.time_limit = True
    return state, reward, state.done, info


def encode_observation(state: DatacenterState) -> tuple[np.ndarray, np.ndarray]:
    """Resource image ``(T_horizon, R_max)`` and flat ready-pool array ``(n * JOB_FEATURES,)``.

    Image cells: 0 free, -1 powered off, otherwise occupant value / max value.
    Job slot fields: value, qos, resource_req, duration, time to violation and
    a 0/1 flag for "fits the free capacity now", each scaled into [-1, 1];
    empty slots are all zero.
    """
    cfg = state.config
    T, R = cfg.T_horizon, cfg.R_max
    image = np.zeros((T, R), dtype=np.float32)
    vmax = cfg.max_value
    for job in state.running:
        rows = min(job.remaining_work, T)
        image[:rows, list(job.columns)] = min(job.value / vmax, 1.0)
    avail = state.power.window(state.clock, T)
    image[np.arange(R)[None, :] >= avail[:, None]] = -1.0

    jobs = np.zeros((cfg.n, JOB_FEATURES), dtype=np.float32)
    slack_scale = cfg.max_duration / min(cfg.qos_choices)
    free = free_capacity(state)
    for i, job in enumerate(state.ready_pool[: cfg.n]):
        jobs[i] = (
            min(job.value / vmax, 1.0),
            job.qos,
            min(job.resource_req / R, 1.0),
            min(job.duration / cfg.max_duration, 1.0),
            np.clip((job.qos_violation_time - state.clock) / slack_scale, -1.0, 1.0),
            float(job.resource_req <= free),
        )
    return image, jobs.reshape(-1)


class GreenDatacenterEnv:
    """Gym-style wrapper: ``reset(seed) -> obs`` and ``step(a) -> obs, r, done, info``.

    ``obs`` is the ``(image, job_array)`` pair from :func:`encode_observation`;
    the raw simulator state stays available as ``env.state`` for heuristics.
    """

    def __init__(self, config: Optional[SimConfig] = None, power: Optional[PowerTrace] = None):
        self.config = config or SimConfig()
        self.power = power
        self.state: Optional[DatacenterState] = None

    @property
    def n_actions(self) -> int:
        return self.config.n_actions

    @property
    def observation_shapes(self) -> tuple[tuple[int, int], int]:
        return (self.config.T_horizon, self.config.R_max), self.config.n * JOB_FEATURES

    def reset(self, seed: Optional[int] = None):
        self.state = reset(self.config, seed, self.power)
        return encode_observation(self.state)

    def step(self, action: int):
        _, reward, done, info = step(self.state, action)
        return encode_observation(self.state), reward, done, info


def config_from_mapping(values: dict, base: Optional[SimConfig] = None) -> SimConfig:
    """Build a :class:`SimConfig` from string or typed key/value pairs."""
    base = base or SimConfig()
    types = {f.name: f.type for f in dataclasses.fields(SimConfig)}
    current = base.to_dict()
    for key, raw in values.items():
        if key not in types:
            raise ConfigError(f"unknown sim config key {key!r}")
        current[key] = _coerce(key, raw, current[key])
    return SimConfig(**current)


def _coerce(key: str, raw, default):
    if not isinstance(raw, str):
        return raw
    raw = raw.strip()
    if key in ("R_min", "power_trace_file") and raw.lower() in ("", "none"):
        return None
    if key == "power_trace_file":
        return raw
    if isinstance(default, tuple) or key in ("short_duration", "long_duration", "value_multiplier", "qos_choices"):
        parts = [p for p in raw.replace("(", "").replace(")", "").split(",") if p.strip()]
        conv = int if key.endswith("duration") else float
        return tuple(conv(p) for p in parts)
    if key in ("lambda_load", "long_fraction", "qos_penalty_coeff", "expire_factor",
               "power_base", "power_amplitude", "power_noise"):
        return float(raw)
    try:
        return int(raw)
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {raw!r}") from exc


def config_keys() -> Sequence[str]:
    return [f.name for f in dataclasses.fields(SimConfig)]


def write_power_trace(path, trace: PowerTrace) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["timestep", "available_resources"])
        for t, a in enumerate(trace.available_resources):
            w.writerow([t, int(a)])
