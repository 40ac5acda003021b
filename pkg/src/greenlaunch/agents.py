"""Behavior cloning, offline RL, online RL and offline-pretrained online RL.

All four share one actor-critic network (shared encoder, actor head, critic
ensemble with target copies and PopArt-normalised outputs).  They differ in
the actor update:

* offline: filtered log-likelihood ``-(1/B) sum f(A_i) log pi(a_i|s_i)``;
  the uniform filter is plain behavior cloning, the binary filter keeps only
  samples with positive estimated advantage;
* online: ``(1/B) sum_a pi(a|s) (alpha log pi(a|s) - Q(s, a))`` computed
  exactly over the discrete action set.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .container import ContainerError, ShapeMismatchError, TruncatedFileError, read_container, write_container
from .dataset import Batch, Dataset, ReplayBuffer
from .nn import ActorCritic, Adam, log_softmax, popart_rescale_head, softmax
from .validation import check_dataset, check_observations

__all__ = [
    "AgentConfig",
    "Policy",
    "FILTERS",
    "filter_value",
    "filter_weights",
    "estimate_advantage",
    "offline_actor_loss",
    "online_actor_loss",
    "critic_loss",
    "bellman_targets",
    "train_offline",
    "train_online",
    "epsilon_at",
    "BCAgent",
    "OfflineRLAgent",
    "OnlineRLAgent",
    "OfflineOnlineAgent",
    "save_policy",
    "load_policy",
]

log = logging.getLogger(__name__)

FILTERS = ("uniform", "binary", "exp")
TELEMETRY_FIELDS = ("step", "actor_loss", "critic_loss", "eval_value", "agreement", "epsilon")


@dataclass
class AgentConfig:
    gamma: float = 0.99
    lr: float = 3e-4
    batch_size: int = 64
    advantage_samples: int = 4
    advantage_mode: str = "sample"
    filter: str = "binary"
    exp_beta: float = 1.0
    exp_max_weight: float = 20.0
    n_critics: int = 2
    tau: float = 0.005
    alpha_ent: float = 0.01
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_steps: Optional[int] = None
    offline_steps: int = 50_000
    online_steps: int = 200_000
    train_critic: bool = True
    actor_trains_encoder_online: bool = False
    learning_starts: int = 0
    buffer_capacity: int = 1_000_000
    grad_clip: Optional[float] = 10.0
    eval_every: int = 0
    seed: int = 0
    dtype: str = "float32"
    conv_channels: tuple = (8, 16)
    conv_strides: tuple = (1, 2)
    job_hidden: int = 64
    merge_hidden: int = 128
    state_dim: int = 64
    head_hidden: int = 64
    popart_beta: float = 3e-4
    sigma_min: float = 1e-4

    def __post_init__(self):
        self.conv_channels = tuple(self.conv_channels)
        self.conv_strides = tuple(self.conv_strides)
        self.validate()

    def validate(self):
        if not 0 <= self.gamma < 1:
            raise ValueError(f"gamma must be in [0, 1), got {self.gamma}")
        if self.lr <= 0 or self.batch_size < 1 or self.advantage_samples < 1:
            raise ValueError("lr, batch_size and advantage_samples must be positive")
        if self.filter not in FILTERS:
            raise ValueError(f"filter must be one of {FILTERS}, got {self.filter!r}")
        if self.advantage_mode not in ("sample", "exact"):
            raise ValueError("advantage_mode must be 'sample' or 'exact'")
        if self.n_critics < 1 or not 0 < self.tau <= 1 or self.alpha_ent < 0:
            raise ValueError("n_critics >= 1, tau in (0, 1] and alpha_ent >= 0 required")
        if not 0 <= self.epsilon_end <= 1 or not 0 <= self.epsilon_start <= 1:
            raise ValueError("epsilon values must be in [0, 1]")
        if self.offline_steps < 0 or self.online_steps < 0:
            raise ValueError("step budgets must be >= 0")

    def replace(self, **changes) -> "AgentConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def paper_scale(cls, **changes) -> "AgentConfig":
        """Step budgets reported for the full-size runs (500k offline, 1M online)."""
        return cls(offline_steps=500_000, online_steps=1_000_000, **changes)

    def network_kwargs(self) -> dict:
        return dict(conv_channels=self.conv_channels, conv_strides=self.conv_strides,
                    job_hidden=self.job_hidden, merge_hidden=self.merge_hidden, state_dim=self.state_dim)


# ---------------------------------------------------------------------------
# losses and estimators

def filter_value(kind: str, advantage: float, beta: float = 1.0, w_max: float = 20.0) -> float:
    return float(filter_weights(kind, np.asarray([advantage], dtype=np.float64), beta, w_max)[0])


def filter_weights(kind: str, advantages: np.ndarray, beta: float = 1.0, w_max: float = 20.0) -> np.ndarray:
    adv = np.asarray(advantages)
    if kind == "uniform":
        return np.ones_like(adv)
    if kind == "binary":
        return (adv > 0).astype(adv.dtype)
    if kind == "exp":
        # clip the exponent first so large advantages cannot overflow
        return np.where(adv / beta >= np.log(w_max), w_max, np.exp(np.minimum(adv / beta, np.log(w_max))))
    raise ValueError(f"unknown filter {kind!r}")


def estimate_advantage(q: np.ndarray, probs: np.ndarray, actions: np.ndarray, k: int = 4,
                       rng: Optional[np.random.Generator] = None, exact: bool = False) -> np.ndarray:
    """``Q(s, a) - mean_j Q(s, a_j)`` with ``a_j ~ pi(s)``; ``exact`` uses ``sum_a pi(a) Q(s, a)``."""
    q = np.atleast_2d(q)
    probs = np.atleast_2d(probs)
    actions = np.atleast_1d(actions)
    rows = np.arange(len(actions))
    q_taken = q[rows, actions]
    if exact:
        return q_taken - np.sum(probs * q, axis=1)
    if k < 1:
        raise ValueError("k must be >= 1")
    rng = rng if rng is not None else np.random.default_rng()
    cdf = np.cumsum(probs, axis=1)
    u = rng.random((len(actions), k)) * cdf[:, -1:]
    sampled = np.minimum((u[:, :, None] > cdf[:, None, :]).sum(axis=2), q.shape[1] - 1)
    return q_taken - q[rows[:, None], sampled].mean(axis=1)


def offline_actor_loss(logits: np.ndarray, actions: np.ndarray, weights: np.ndarray):
    """Filtered negative log-likelihood and its gradient w.r.t. the logits."""
    B = len(actions)
    rows = np.arange(B)
    logp = log_softmax(logits)
    loss = -float(np.mean(weights * logp[rows, actions]))
    probs = softmax(logits)
    onehot = np.zeros_like(probs)
    onehot[rows, actions] = 1.0
    dlogits = weights[:, None] * (probs - onehot) / B
    return loss, dlogits


def online_actor_loss(logits: np.ndarray, q: np.ndarray, alpha: float):
    """``mean_i sum_a pi(a|s_i) (alpha log pi(a|s_i) - Q(s_i, a))`` and d/dlogits.

    The gradient per row is ``pi_b (g_b - sum_a pi_a g_a)`` with
    ``g = alpha log pi - Q``; the entropy's own derivative term cancels.
    """
    B = logits.shape[0]
    logp = log_softmax(logits)
    probs = np.exp(logp)
    g = alpha * logp - q
    per_row = np.sum(probs * g, axis=1)
    loss = float(np.mean(per_row))
    dlogits = probs * (g - per_row[:, None]) / B
    return loss, dlogits


def bellman_targets(rewards, dones, gamma: float, next_probs, next_q_min) -> np.ndarray:
    """``r + gamma (1 - done) sum_a' pi(a'|s') min_e Q_target(s', a')``."""
    v_next = np.sum(next_probs * next_q_min, axis=1)
    return np.asarray(rewards, dtype=np.float64) + gamma * (1.0 - np.asarray(dones, dtype=np.float64)) * v_next


def critic_loss(q_preds: Sequence[np.ndarray], actions: np.ndarray, targets: np.ndarray):
    """Sum over ensemble members of the mean squared Bellman error.

    Returns the loss and per-member gradients w.r.t. the full Q-vectors.
    """
    B = len(actions)
    rows = np.arange(B)
    loss = 0.0
    grads = []
    for q in q_preds:
        err = q[rows, actions] - targets
        loss += float(np.mean(err ** 2))
        dq = np.zeros_like(q)
        dq[rows, actions] = 2.0 * err / B
        grads.append(dq)
    return loss, grads


def epsilon_at(step: int, config: AgentConfig, total_steps: Optional[int] = None) -> float:
    total = total_steps if total_steps is not None else config.online_steps
    decay = config.epsilon_decay_steps
    if decay is None:
        decay = max(1, int(0.1 * total))
    if decay <= 0:
        return config.epsilon_end
    frac = min(1.0, step / decay)
    return config.epsilon_start + frac * (config.epsilon_end - config.epsilon_start)


# ---------------------------------------------------------------------------
# policy

class Policy:
    """Encoder + actor (+ critics) with greedy / sample / epsilon-greedy action selection."""

    def __init__(self, nets: ActorCritic, name: str = "policy"):
        self.nets = nets
        self.name = name
        self.history: list[dict] = []

    @property
    def n_actions(self) -> int:
        return self.nets.n_actions

    @property
    def image_shape(self):
        return self.nets.encoder.image_shape

    @property
    def job_dim(self):
        return self.nets.encoder.job_dim

    def logits(self, obs) -> np.ndarray:
        images, jobs = check_observations(obs, self.image_shape, self.job_dim, self.nets.dtype)
        return self.nets.policy_logits(images, jobs)

    def action_probabilities(self, obs) -> np.ndarray:
        return softmax(self.logits(obs).astype(np.float64))

    def select_action(self, obs, mode: str = "greedy", epsilon: float = 0.0,
                      rng: Optional[np.random.Generator] = None) -> int:
        logits = self.logits(obs)[0]
        if mode == "greedy":
            return int(np.argmax(logits))
        rng = rng if rng is not None else np.random.default_rng()
        if mode == "sample":
            p = softmax(logits.astype(np.float64))
            return int(rng.choice(len(p), p=p))
        if mode in ("epsilon", "epsilon-greedy", "epsilon_greedy"):
            if rng.random() < epsilon:
                return int(rng.integers(self.n_actions))
            return int(np.argmax(logits))
        raise ValueError(f"unknown action mode {mode!r}")

    def __call__(self, state, obs) -> int:
        return self.select_action(obs, "greedy")

    def snapshot(self) -> "Policy":
        nets = ActorCritic.from_spec(self.nets.spec())
        nets.copy_from(self.nets)
        return Policy(nets, self.name)


CKPT_MAGIC = b"GLCK"


def save_policy(policy: Policy, path, extra: Optional[dict] = None) -> None:
    arrays = policy.nets.all_arrays()
    header = {
        "kind": "checkpoint",
        "name": policy.name,
        "spec": policy.nets.spec(),
        "popart": policy.nets.popart.state_dict(),
        "arrays": [{"name": n, "shape": list(a.shape)} for n, a in arrays],
        "extra": extra or {},
    }
    body = bytearray()
    for _, a in arrays:
        payload = np.ascontiguousarray(a, dtype="<f8").tobytes()
        body += len(payload).to_bytes(4, "little") + payload
    write_container(path, CKPT_MAGIC, header, bytes(body))


def load_policy(path, image_shape=None, job_dim=None, n_actions=None) -> Policy:
    """Load a checkpoint; optional shapes are checked against the stored network."""
    header, body = read_container(path, CKPT_MAGIC)
    if header.get("kind") != "checkpoint":
        raise ContainerError(f"{path}: not a checkpoint")
    spec = header["spec"]
    enc = spec["encoder"]
    if image_shape is not None and tuple(enc["image_shape"]) != tuple(image_shape):
        raise ShapeMismatchError(f"checkpoint image shape {enc['image_shape']} != env {tuple(image_shape)}")
    if job_dim is not None and enc["job_dim"] != job_dim:
        raise ShapeMismatchError(f"checkpoint job width {enc['job_dim']} != env {job_dim}")
    if n_actions is not None and spec["n_actions"] != n_actions:
        raise ShapeMismatchError(f"checkpoint has {spec['n_actions']} actions, env has {n_actions}")
    nets = ActorCritic.from_spec(spec)
    targets = nets.all_arrays()
    if [t[0] for t in targets] != [a["name"] for a in header["arrays"]]:
        raise ShapeMismatchError(f"{path}: parameter layout differs from layer specs")
    off = 0
    mv = body
    for (_, arr), meta in zip(targets, header["arrays"]):
        if off + 4 > len(mv):
            raise TruncatedFileError(f"{path}: truncated at {meta['name']}")
        length = int.from_bytes(mv[off:off + 4], "little")
        off += 4
        if off + length > len(mv):
            raise TruncatedFileError(f"{path}: truncated at {meta['name']}")
        if length != arr.size * 8 or list(arr.shape) != meta["shape"]:
            raise ShapeMismatchError(f"{path}: {meta['name']} has wrong size")
        arr[...] = np.frombuffer(mv[off:off + length], dtype="<f8").reshape(arr.shape)
        off += length
    nets.popart.load_state_dict(header["popart"])
    pol = Policy(nets, header.get("name", "policy"))
    return pol


# ---------------------------------------------------------------------------
# learner

class Learner:
    """One optimizer over all trainable parameters plus the update rules."""

    def __init__(self, nets: ActorCritic, config: AgentConfig, rng: np.random.Generator):
        self.nets, self.config, self.rng = nets, config, rng
        params = list(nets.encoder_parameters()) + list(nets.actor_parameters()) + list(nets.critic_parameters())
        self.opt = Adam(params, lr=config.lr, grad_clip=config.grad_clip)
        self.last_zero_weight_batches = 0

    def _targets(self, batch: Batch, dtype) -> np.ndarray:
        nets, cfg = self.nets, self.config
        ni = batch.next_images.astype(dtype, copy=False)
        nj = batch.next_jobs.astype(dtype, copy=False)
        zn = nets.encoder.forward(ni, nj, keep=False)
        pn = softmax(nets.actor.forward(zn, keep=False).astype(np.float64))
        qt = nets.q_values(ni, nj, target=True).min(axis=0).astype(np.float64)
        return bellman_targets(batch.rewards, batch.dones, cfg.gamma, pn, qt)

    def update(self, batch: Batch, mode: str) -> dict:
        """One gradient step.  ``mode`` is ``'bc'`` (actor only), ``'offline'`` or ``'online'``."""
        nets, cfg = self.nets, self.config
        dtype = nets.dtype
        images = batch.images.astype(dtype, copy=False)
        jobs = batch.jobs.astype(dtype, copy=False)
        actions = batch.actions
        with_critic = mode != "bc"
        nets.zero_grad()
        stats = {"actor_loss": float("nan"), "critic_loss": float("nan")}

        if with_critic:
            y = self._targets(batch, dtype)
            old = nets.popart.update(y)

            new = (nets.popart.mu, nets.popart.sigma)
            for head in nets.heads_last_layers():
                popart_rescale_head(head, old, new)
            y_norm = nets.popart.normalize(y).astype(dtype)

        z = nets.encoder.forward(images, jobs, keep=True)
        dz = np.zeros_like(z)

        if with_critic:
            q_norm = [c.forward(z, keep=True) for c in nets.critics]
            c_loss, dqs = critic_loss(q_norm, actions, y_norm)
            for c, dq in zip(nets.critics, dqs):
                dz += c.backward(dq.astype(dtype))
            stats["critic_loss"] = c_loss
            q_min_norm = np.min(np.stack(q_norm), axis=0).astype(np.float64)

        logits = nets.actor.forward(z, keep=True).astype(np.float64)
        if mode == "online":
            a_loss, dlogits = online_actor_loss(logits, q_min_norm, cfg.alpha_ent)
        else:
            if mode == "bc" or cfg.filter == "uniform":
                weights = np.ones(len(actions))
            else:
                q_unnorm = nets.popart.denormalize(q_min_norm)
                probs = softmax(logits)
                adv = estimate_advantage(q_unnorm, probs, actions, cfg.advantage_samples, self.rng,
                                         exact=cfg.advantage_mode == "exact")
                weights = filter_weights(cfg.filter, adv, cfg.exp_beta, cfg.exp_max_weight)
                stats["kept_fraction"] = float(np.mean(weights > 0))
                if not np.any(weights):
                    self.last_zero_weight_batches += 1
                    log.debug("all filter weights zero in this batch; actor gradient is zero")
            a_loss, dlogits = offline_actor_loss(logits, actions, weights)
        stats["actor_loss"] = a_loss
        dz_actor = nets.actor.backward(dlogits.astype(dtype))
        if mode != "online" or cfg.actor_trains_encoder_online:
            dz += dz_actor
        nets.encoder.backward(dz)
        self.opt.step()
        if with_critic:
            nets.soft_update(cfg.tau)
        return stats


def _new_nets(image_shape, job_dim, n_actions, config: AgentConfig) -> ActorCritic:
    return ActorCritic(image_shape, job_dim, n_actions, seed=config.seed, dtype=config.dtype,
                       n_critics=config.n_critics, head_hidden=config.head_hidden,
                       popart_beta=config.popart_beta, sigma_min=config.sigma_min, **config.network_kwargs())


class Telemetry:
    def __init__(self, path=None):
        self.rows: list[dict] = []
        self.path = path
        if path is not None:
            with open(path, "w", newline="") as fh:
                csv.writer(fh).writerow(TELEMETRY_FIELDS)

    def log(self, **row):
        full = {k: row.get(k, "") for k in TELEMETRY_FIELDS}
        self.rows.append(full)
        if self.path is not None:
            with open(self.path, "a", newline="") as fh:
                csv.writer(fh).writerow([full[k] for k in TELEMETRY_FIELDS])


def train_offline(dataset: Dataset, config: AgentConfig, policy: Optional[Policy] = None,
                  n_actions: Optional[int] = None, telemetry_path=None,
                  eval_fn: Optional[Callable[[Policy], dict]] = None, log_every: int = 1000) -> Policy:
    """Train from a fixed dataset; no environment is ever touched.

    BC is ``filter='uniform'`` with ``train_critic=False``.
    """
    check_dataset(dataset, n_actions)
    n_actions = n_actions or dataset.n_actions or int(dataset.actions.max()) + 1
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 1]))
    if policy is None:
        nets = _new_nets(dataset.image_shape, dataset.job_dim, n_actions, config)
        policy = Policy(nets, "bc" if (config.filter == "uniform" and not config.train_critic) else "offline")
    learner = Learner(policy.nets, config, rng)
    mode = "offline" if config.train_critic else "bc"
    tel = Telemetry(telemetry_path)
    for t in range(config.offline_steps):
        stats = learner.update(dataset.sample(config.batch_size, rng), mode)
        if config.eval_every and eval_fn is not None and (t + 1) % config.eval_every == 0:
            ev = eval_fn(policy)
            policy.history.append({"step": t + 1, **ev})
            tel.log(step=t + 1, **stats, **ev)
        elif log_every and (t + 1) % log_every == 0:
            tel.log(step=t + 1, **stats)
    policy.telemetry = tel.rows
    return policy


def _info_flag(info, key):
    if isinstance(info, dict):
        return bool(info.get(key, False))
    return bool(getattr(info, key, False))


def train_online(env, config: AgentConfig, warm_start=None, telemetry_path=None,
                 eval_fn: Optional[Callable[[Policy], dict]] = None, log_every: int = 1000,
                 pretrain_steps: int = 0) -> Policy:
    """Interact with ``env`` for ``config.online_steps`` steps, one gradient step each.

    ``warm_start`` is ``(policy, dataset)`` with either part optional: the
    policy's parameters seed the networks and the dataset pre-fills the
    replay buffer.  With a dataset and ``pretrain_steps > 0`` the agent
    first runs that many offline updates on the dataset.
    """
    policy, offline_data = warm_start if warm_start is not None else (None, None)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 2]))
    image_shape, job_dim = env.observation_shapes
    n_actions = env.n_actions
    if policy is None:
        policy = Policy(_new_nets(image_shape, job_dim, n_actions, config), "online")
    else:
        policy = policy.snapshot()
        policy.name = "offline-online"
    if offline_data is not None and pretrain_steps > 0:
        policy = train_offline(offline_data, config.replace(offline_steps=pretrain_steps), policy, n_actions)
        policy.name = "offline-online"
    buffer = ReplayBuffer(min(config.buffer_capacity, max(config.online_steps + (len(offline_data) if offline_data is not None else 0), 1)),
                          image_shape, job_dim)
    if offline_data is not None:
        buffer.add_dataset(offline_data)
    learner = Learner(policy.nets, config, rng)
    tel = Telemetry(telemetry_path)
    episode_seeds = np.random.SeedSequence([config.seed, 3])
    n_episode = 0

    def new_episode():
        nonlocal n_episode
        s = int(episode_seeds.spawn(1)[0].generate_state(1)[0])
        n_episode += 1
        return env.reset(s)

    obs = new_episode()
    if config.eval_every and eval_fn is not None:
        ev = eval_fn(policy)
        policy.history.append({"step": 0, **ev})
        tel.log(step=0, epsilon=epsilon_at(0, config), **ev)
    for t in range(config.online_steps):
        eps = epsilon_at(t, config)
        a = policy.select_action(obs, "epsilon-greedy", eps, rng)
        nxt, r, done, info = env.step(a)
        terminal = done and not _info_flag(info, "time_limit")
        buffer.add(obs, a, r, nxt, terminal, "online")
        obs = new_episode() if done else nxt
        stats = {}
        if len(buffer) >= max(config.learning_starts, 1):
            stats = learner.update(buffer.sample(config.batch_size, rng), "online")
        if config.eval_every and eval_fn is not None and (t + 1) % config.eval_every == 0:
            ev = eval_fn(policy)
            policy.history.append({"step": t + 1, **ev})
            tel.log(step=t + 1, epsilon=eps, **stats, **ev)
        elif log_every and (t + 1) % log_every == 0:
            tel.log(step=t + 1, epsilon=eps, **stats)
    policy.telemetry = tel.rows
    return policy


# ---------------------------------------------------------------------------
# estimators

class _AgentBase(BaseEstimator):
    """Common ``predict`` / ``predict_proba`` over encoded observations."""

    _config_fields: tuple = ()

    def _make_config(self, **overrides) -> AgentConfig:
        base = self.config if getattr(self, "config", None) is not None else AgentConfig()
        values = {f: getattr(self, f) for f in self._config_fields}
        values.update(overrides)
        return base.replace(**values)

    def predict_proba(self, X) -> np.ndarray:
        check_is_fitted(self, "policy_")
        return self.policy_.action_probabilities(X)

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "policy_")
        return np.argmax(self.policy_.logits(X), axis=1)

    def act(self, obs, mode="greedy", epsilon=0.0, rng=None) -> int:
        check_is_fitted(self, "policy_")
        return self.policy_.select_action(obs, mode, epsilon, rng)

    def __call__(self, state, obs) -> int:
        return self.act(obs)

    def save(self, path) -> None:
        check_is_fitted(self, "policy_")
        save_policy(self.policy_, path, {"estimator": type(self).__name__, "params": _jsonable(self.get_params())})


def _jsonable(params: dict) -> dict:
    out = {}
    for k, v in params.items():
        if isinstance(v, AgentConfig):
            v = v.to_dict()
        out[k] = v if isinstance(v, (int, float, str, bool, type(None), dict, list, tuple)) else repr(v)
    return out


class BCAgent(_AgentBase):
    """Behavior cloning: cross-entropy on logged actions, no critic."""

    _config_fields = ("lr", "batch_size", "seed")

    def __init__(self, n_steps=50_000, lr=3e-4, batch_size=64, seed=0, config=None):
        self.n_steps = n_steps
        self.lr = lr
        self.batch_size = batch_size
        self.seed = seed
        self.config = config

    def fit(self, dataset, y=None):
        cfg = self._make_config(offline_steps=self.n_steps, filter="uniform", train_critic=False)
        self.policy_ = train_offline(dataset, cfg)
        self.policy_.name = "bc"
        self.n_actions_ = self.policy_.n_actions
        return self


class OfflineRLAgent(_AgentBase):
    """Critic-filtered regression on a fixed dataset."""

    _config_fields = ("gamma", "lr", "batch_size", "advantage_samples", "filter", "seed")

    def __init__(self, filter="binary", n_steps=50_000, gamma=0.99, lr=3e-4, batch_size=64,
                 advantage_samples=4, seed=0, config=None):
        self.filter = filter
        self.n_steps = n_steps
        self.gamma = gamma
        self.lr = lr
        self.batch_size = batch_size
        self.advantage_samples = advantage_samples
        self.seed = seed
        self.config = config

    def fit(self, dataset, y=None):
        cfg = self._make_config(offline_steps=self.n_steps, train_critic=True)
        self.policy_ = train_offline(dataset, cfg)
        self.n_actions_ = self.policy_.n_actions
        return self


class OnlineRLAgent(_AgentBase):
    """Actor-critic trained from scratch by interacting with an environment."""

    _config_fields = ("gamma", "lr", "batch_size", "alpha_ent", "seed")

    def __init__(self, n_steps=200_000, gamma=0.99, lr=3e-4, batch_size=64, alpha_ent=0.01,
                 seed=0, config=None):
        self.n_steps = n_steps
        self.gamma = gamma
        self.lr = lr
        self.batch_size = batch_size
        self.alpha_ent = alpha_ent
        self.seed = seed
        self.config = config

    def fit(self, env, y=None, eval_fn=None):
        cfg = self._make_config(online_steps=self.n_steps)
        self.policy_ = train_online(env, cfg, eval_fn=eval_fn)
        self.history_ = self.policy_.history
        self.n_actions_ = self.policy_.n_actions
        return self


class OfflineOnlineAgent(_AgentBase):
    """Offline pretraining on logged data, then online fine-tuning.

    ``init_from_offline`` keeps the pretrained weights; ``preload_buffer``
    seeds the online replay buffer with the logged transitions.
    """

    _config_fields = ("gamma", "lr", "batch_size", "alpha_ent", "filter", "seed")

    def __init__(self, pretrain_steps=5_000, online_steps=100_000, filter="binary", gamma=0.99,
                 lr=3e-4, batch_size=64, alpha_ent=0.01, init_from_offline=True, preload_buffer=True,
                 seed=0, config=None):
        self.pretrain_steps = pretrain_steps
        self.online_steps = online_steps
        self.filter = filter
        self.gamma = gamma
        self.lr = lr
        self.batch_size = batch_size
        self.alpha_ent = alpha_ent
        self.init_from_offline = init_from_offline
        self.preload_buffer = preload_buffer
        self.seed = seed
        self.config = config

    def fit(self, dataset, env=None, eval_fn=None):
        if env is None:
            raise ValueError("OfflineOnlineAgent.fit needs an environment for the online phase")
        cfg = self._make_config(offline_steps=self.pretrain_steps, online_steps=self.online_steps)
        pre = None
        if self.init_from_offline and self.pretrain_steps > 0:
            pre = train_offline(dataset, cfg.replace(train_critic=True), n_actions=env.n_actions)
        self.pretrained_ = pre
        data = dataset if self.preload_buffer else None
        self.policy_ = train_online(env, cfg, warm_start=(pre, data), eval_fn=eval_fn)
        self.policy_.name = "offline-online"
        self.history_ = self.policy_.history
        self.n_actions_ = self.policy_.n_actions
        return self
