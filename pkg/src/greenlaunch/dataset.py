"""Transitions, replay buffer, heuristic rollouts, dataset mixing and I/O."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

from .container import (
    ContainerError,
    ShapeMismatchError,
    TruncatedFileError,
    read_container,
    write_container,
)
from .heuristics import HeuristicKind, baseline_controller
from .sim import JOB_FEATURES, GreenDatacenterEnv, SimConfig

__all__ = [
    "Transition",
    "Batch",
    "Dataset",
    "ReplayBuffer",
    "InsufficientDataError",
    "collect_rollouts",
    "mix_datasets",
    "largest_remainder_counts",
    "sample_batch",
    "save",
    "load",
]

log = logging.getLogger(__name__)

MAGIC = b"GLDS"


class InsufficientDataError(ValueError):
    pass


@dataclass
class Transition:
    obs: tuple[np.ndarray, np.ndarray]
    action: int
    reward: float
    next_obs: tuple[np.ndarray, np.ndarray]
    done: bool
    behavior_tag: str = ""


@dataclass
class Batch:
    images: np.ndarray
    jobs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_images: np.ndarray
    next_jobs: np.ndarray
    dones: np.ndarray
    tags: list = field(default_factory=list)

    def __len__(self):
        return len(self.actions)

    def __iter__(self) -> Iterator[Transition]:
        for i in range(len(self)):
            yield Transition((self.images[i], self.jobs[i]), int(self.actions[i]), float(self.rewards[i]),
                             (self.next_images[i], self.next_jobs[i]), bool(self.dones[i]),
                             self.tags[i] if self.tags else "")


_COLUMNS = ("images", "jobs", "actions", "rewards", "next_images", "next_jobs", "dones", "tags")


class Dataset:
    """Columnar store of transitions.

    ``tags`` holds integer codes into ``tag_names``; ``behavior_tag`` of a
    transition is ``tag_names[tags[i]]``.
    """

    def __init__(self, images, jobs, actions, rewards, next_images, next_jobs, dones, tags=None,
                 tag_names: Sequence[str] = (), config_hash: str = "", n_actions: Optional[int] = None):
        self.images = np.asarray(images, dtype=np.float32)
        self.jobs = np.asarray(jobs, dtype=np.float32)
        self.actions = np.asarray(actions, dtype=np.int32)
        self.rewards = np.asarray(rewards, dtype=np.float64)
        self.next_images = np.asarray(next_images, dtype=np.float32)
        self.next_jobs = np.asarray(next_jobs, dtype=np.float32)
        self.dones = np.asarray(dones, dtype=bool)
        self.tags = np.zeros(len(self.actions), np.uint16) if tags is None else np.asarray(tags, np.uint16)
        self.tag_names = list(tag_names)
        self.config_hash = config_hash
        self.n_actions = n_actions
        self.warnings: list[str] = []
        n = len(self.actions)
        for name in _COLUMNS:
            if len(getattr(self, name)) != n:
                raise ShapeMismatchError(f"column {name} has {len(getattr(self, name))} rows, expected {n}")

    @classmethod
    def empty(cls, image_shape, job_dim, n_actions=None, config_hash="") -> "Dataset":
        T, R = image_shape
        return cls(np.zeros((0, T, R)), np.zeros((0, job_dim)), [], [], np.zeros((0, T, R)),
                   np.zeros((0, job_dim)), [], [], (), config_hash, n_actions)

    def __len__(self) -> int:
        return len(self.actions)

    @property
    def image_shape(self) -> tuple[int, int]:
        return tuple(self.images.shape[1:])

    @property
    def job_dim(self) -> int:
        return self.jobs.shape[1]

    def behavior_tags(self) -> list[str]:
        return [self.tag_names[t] for t in self.tags]

    def tag_counts(self) -> dict[str, int]:
        codes, counts = np.unique(self.tags, return_counts=True)
        return {self.tag_names[c]: int(k) for c, k in zip(codes, counts)}

    def __getitem__(self, i: int) -> Transition:
        return Transition((self.images[i], self.jobs[i]), int(self.actions[i]), float(self.rewards[i]),
                          (self.next_images[i], self.next_jobs[i]), bool(self.dones[i]),
                          self.tag_names[self.tags[i]] if self.tag_names else "")

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def batch(self, idx) -> Batch:
        tags = [self.tag_names[t] for t in self.tags[idx]] if self.tag_names else []
        return Batch(self.images[idx], self.jobs[idx], self.actions[idx], self.rewards[idx],
                     self.next_images[idx], self.next_jobs[idx], self.dones[idx], tags)

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        if len(self) == 0:
            raise ValueError("cannot sample from an empty dataset")
        return self.batch(rng.integers(0, len(self), size=batch_size))

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.images[idx], self.jobs[idx], self.actions[idx], self.rewards[idx],
                       self.next_images[idx], self.next_jobs[idx], self.dones[idx], self.tags[idx],
                       self.tag_names, self.config_hash, self.n_actions)

    @classmethod
    def concatenate(cls, parts: Sequence["Dataset"]) -> "Dataset":
        parts = [p for p in parts if p is not None]
        if not parts:
            raise ValueError("nothing to concatenate")
        names: list[str] = []
        recoded = []
        for p in parts:
            lut = []
            for name in p.tag_names:
                if name not in names:
                    names.append(name)
                lut.append(names.index(name))
            lut = np.asarray(lut or [0], dtype=np.uint16)
            recoded.append(lut[p.tags] if len(p) else p.tags)
        if not names:
            names = []
        hashes = {p.config_hash for p in parts}
        cat = lambda attr: np.concatenate([getattr(p, attr) for p in parts])
        return cls(cat("images"), cat("jobs"), cat("actions"), cat("rewards"), cat("next_images"),
                   cat("next_jobs"), cat("dones"), np.concatenate(recoded), names,
                   hashes.pop() if len(hashes) == 1 else "mixed", parts[0].n_actions)

    def equals(self, other: "Dataset") -> bool:
        if len(self) != len(other) or self.behavior_tags() != other.behavior_tags():
            return False
        return all(np.array_equal(getattr(self, c), getattr(other, c)) for c in _COLUMNS[:-1])


class ReplayBuffer:
    """Fixed-capacity FIFO ring of transitions with uniform sampling."""

    def __init__(self, capacity: int, image_shape, job_dim: int):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self.image_shape, self.job_dim = tuple(image_shape), job_dim
        T, R = self.image_shape
        self.images = np.zeros((capacity, T, R), np.float32)
        self.next_images = np.zeros((capacity, T, R), np.float32)
        self.jobs = np.zeros((capacity, job_dim), np.float32)
        self.next_jobs = np.zeros((capacity, job_dim), np.float32)
        self.actions = np.zeros(capacity, np.int32)
        self.rewards = np.zeros(capacity, np.float64)
        self.dones = np.zeros(capacity, bool)
        self.tags: list = [""] * capacity
        self.size = 0
        self.ptr = 0

    def __len__(self):
        return self.size

    def add(self, obs, action, reward, next_obs, done, tag: str = "") -> None:
        i = self.ptr
        self.images[i], self.jobs[i] = obs
        self.next_images[i], self.next_jobs[i] = next_obs
        self.actions[i], self.rewards[i], self.dones[i] = action, reward, done
        self.tags[i] = tag
        self.ptr = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def add_transition(self, t: Transition) -> None:
        self.add(t.obs, t.action, t.reward, t.next_obs, t.done, t.behavior_tag)

    def add_dataset(self, ds: Dataset) -> None:
        start = max(0, len(ds) - self.capacity)
        n = len(ds) - start
        idx = (self.ptr + np.arange(n)) % self.capacity
        src = slice(start, len(ds))
        self.images[idx], self.jobs[idx] = ds.images[src], ds.jobs[src]
        self.next_images[idx], self.next_jobs[idx] = ds.next_images[src], ds.next_jobs[src]
        self.actions[idx], self.rewards[idx], self.dones[idx] = ds.actions[src], ds.rewards[src], ds.dones[src]
        names = ds.tag_names
        for j, code in zip(idx, ds.tags[src]):
            self.tags[j] = names[code] if names else ""
        self.ptr = int((self.ptr + n) % self.capacity)
        self.size = min(self.size + n, self.capacity)

    def _order(self) -> np.ndarray:
        if self.size < self.capacity:
            return np.arange(self.size)
        return (self.ptr + np.arange(self.capacity)) % self.capacity

    def items(self) -> list[Transition]:
        """Stored transitions, oldest first."""
        b = self._batch(self._order())
        return list(b)

    def _batch(self, idx) -> Batch:
        return Batch(self.images[idx], self.jobs[idx], self.actions[idx], self.rewards[idx],
                     self.next_images[idx], self.next_jobs[idx], self.dones[idx],
                     [self.tags[i] for i in idx])

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        if self.size == 0:
            raise ValueError("cannot sample from an empty replay buffer")
        return self._batch(rng.integers(0, self.size, size=batch_size))


def sample_batch(buffer, batch_size: int, rng: np.random.Generator) -> Batch:
    """Uniform draws with replacement from a :class:`ReplayBuffer` or :class:`Dataset`."""
    return buffer.sample(batch_size, rng)


def _controller_for(policy) -> tuple[Callable, str]:
    if isinstance(policy, (str, HeuristicKind)):
        ctrl = baseline_controller(policy)
        return ctrl, ctrl.name
    return policy, getattr(policy, "name", type(policy).__name__)


def rollout_seeds(seed: int, n: int) -> list[int]:
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(int(seed)).spawn(n)]


def collect_rollouts(policy, env_config: SimConfig, n_rollouts: int, steps_per_rollout: int,
                     seed: int = 0, tag: Optional[str] = None) -> Dataset:
    """Run ``policy`` for ``n_rollouts`` fresh episodes and record every transition.

    ``policy`` is a heuristic name or a ``(state, obs) -> action`` callable.
    Episode ends are time limits, so stored ``done`` flags stay False.
    """
    ctrl, name = _controller_for(policy)
    tag = tag or name
    cfg = env_config.replace(episode_len=steps_per_rollout) if steps_per_rollout > 0 else env_config
    T, R = cfg.T_horizon, cfg.R_max
    J = cfg.n * JOB_FEATURES
    N = n_rollouts * steps_per_rollout
    images = np.zeros((N, T, R), np.float32)
    jobs = np.zeros((N, J), np.float32)
    next_images = np.zeros((N, T, R), np.float32)
    next_jobs = np.zeros((N, J), np.float32)
    actions = np.zeros(N, np.int32)
    rewards = np.zeros(N, np.float64)
    dones = np.zeros(N, bool)
    env = GreenDatacenterEnv(cfg)
    i = 0
    for rseed in rollout_seeds(seed, n_rollouts):
        if hasattr(ctrl, "reseed"):
            ctrl.reseed(rseed)
        obs = env.reset(rseed)
        for _ in range(steps_per_rollout):
            a = int(ctrl(env.state, obs))
            nxt, r, done, info = env.step(a)
            images[i], jobs[i] = obs
            next_images[i], next_jobs[i] = nxt
            actions[i], rewards[i] = a, r
            dones[i] = done and not info.time_limit
            i += 1
            obs = nxt
            if done:
                break
    ds = Dataset(images[:i], jobs[:i], actions[:i], rewards[:i], next_images[:i], next_jobs[:i], dones[:i],
                 np.zeros(i, np.uint16), [tag], env_config.config_hash(),
                 cfg.n_actions)
    return ds


def largest_remainder_counts(fractions: Sequence[float], total: int) -> list[int]:
    quotas = [f * total for f in fractions]
    counts = [int(np.floor(q)) for q in quotas]
    short = total - sum(counts)
    # stable sort: equal remainders go to the earlier part
    order = sorted(range(len(quotas)), key=lambda i: -(quotas[i] - counts[i]))
    for i in order[:short]:
        counts[i] += 1
    return counts


def mix_datasets(parts: Sequence[tuple[Dataset, float]], total: int, seed: int = 0) -> Dataset:
    """Draw exact per-part counts (largest remainder), subsample each part
    uniformly without replacement, then shuffle the union."""
    if not parts:
        raise ValueError("mix_datasets needs at least one part")
    fractions = [float(f) for _, f in parts]
    if any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must be non-negative and sum to 1, got {fractions}")
    counts = largest_remainder_counts(fractions, total)
    rng = np.random.default_rng(seed)
    pieces = []
    for k, ((ds, _), c) in enumerate(zip(parts, counts)):
        if c > len(ds):
            label = ",".join(ds.tag_names) or f"part {k}"
            raise InsufficientDataError(f"part {k} ({label}) has {len(ds)} transitions, {c} requested")
        pieces.append(ds.subset(np.sort(rng.choice(len(ds), size=c, replace=False))))
    mixed = Dataset.concatenate(pieces)
    return mixed.subset(rng.permutation(len(mixed)))


def _record_dtype(image_shape, job_dim) -> np.dtype:
    T, R = image_shape
    return np.dtype([
        ("length", "<u4"),
        ("image", "<f4", (T, R)),
        ("jobs", "<f4", (job_dim,)),
        ("action", "<i4"),
        ("reward", "<f8"),
        ("next_image", "<f4", (T, R)),
        ("next_jobs", "<f4", (job_dim,)),
        ("done", "u1"),
        ("tag", "<u2"),
    ])


def save(dataset: Dataset, path) -> None:
    dt = _record_dtype(dataset.image_shape, dataset.job_dim)
    rec = np.zeros(len(dataset), dtype=dt)
    rec["length"] = dt.itemsize - 4
    rec["image"], rec["jobs"] = dataset.images, dataset.jobs
    rec["action"], rec["reward"] = dataset.actions, dataset.rewards
    rec["next_image"], rec["next_jobs"] = dataset.next_images, dataset.next_jobs
    rec["done"], rec["tag"] = dataset.dones, dataset.tags
    header = {
        "kind": "dataset",
        "config_hash": dataset.config_hash,
        "count": len(dataset),
        "image_shape": list(dataset.image_shape),
        "job_dim": dataset.job_dim,
        "n_actions": dataset.n_actions,
        "record_bytes": dt.itemsize - 4,
        "tag_names": dataset.tag_names,
    }
    write_container(path, MAGIC, header, rec.tobytes())


def load(path, expected_config_hash: Optional[str] = None) -> Dataset:
    """Read a dataset file.

    Raises :class:`SchemaVersionError`, :class:`TruncatedFileError` or
    :class:`ShapeMismatchError`.  A config-hash mismatch against
    ``expected_config_hash`` is not fatal: it is recorded in
    ``dataset.warnings`` and emitted as a :class:`UserWarning`.
    """
    header, body = read_container(path, MAGIC)
    if header.get("kind") != "dataset":
        raise ContainerError(f"{path}: not a dataset file (kind={header.get('kind')!r})")
    dt = _record_dtype(header["image_shape"], header["job_dim"])
    if header["record_bytes"] != dt.itemsize - 4:
        raise ShapeMismatchError(f"{path}: header says {header['record_bytes']} bytes/record, "
                                 f"shapes imply {dt.itemsize - 4}")
    count = header["count"]
    if len(body) < count * dt.itemsize:
        raise TruncatedFileError(f"{path}: expected {count} records, file holds {len(body) // dt.itemsize}")
    if len(body) > count * dt.itemsize:
        raise ShapeMismatchError(f"{path}: {len(body) - count * dt.itemsize} trailing bytes")
    rec = np.frombuffer(body, dtype=dt, count=count)
    if count and np.any(rec["length"] != dt.itemsize - 4):
        raise ShapeMismatchError(f"{path}: record length prefix disagrees with header shapes")
    ds = Dataset(rec["image"].copy(), rec["jobs"].copy(), rec["action"], rec["reward"], rec["next_image"].copy(),
                 rec["next_jobs"].copy(), rec["done"].astype(bool), rec["tag"], header["tag_names"],
                 header["config_hash"], header.get("n_actions"))
    if expected_config_hash is not None and expected_config_hash != ds.config_hash:
        msg = f"{path}: config hash {ds.config_hash} differs from expected {expected_config_hash}"
        ds.warnings.append(msg)
        warnings.warn(msg, stacklevel=2)
    return ds
