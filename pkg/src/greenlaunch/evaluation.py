"""Policy evaluation: total job value and action agreement with a heuristic."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .dataset import rollout_seeds
from .container import ShapeMismatchError
from .heuristics import HeuristicKind, baseline_controller, heuristic_controller, parse_heuristic
from .sim import GreenDatacenterEnv, SimConfig

__all__ = [
    "EvalReport",
    "evaluate",
    "action_agreement",
    "as_controller",
    "run_episode",
]

VERSION = "greenlaunch-0.1.0"


@dataclass
class EvalReport:
    mean_value: float
    values: list
    ci95: float
    action_agreement: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)
    rewards: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "mean_value": self.mean_value,
            "values": list(self.values),
            "ci95": self.ci95,
            "action_agreement": dict(self.action_agreement),
            "metadata": dict(self.metadata),
        }


def as_controller(policy) -> Callable:
    """Turn a heuristic name, :class:`Policy`, fitted estimator or callable into a controller."""
    if isinstance(policy, (str, HeuristicKind)):
        return baseline_controller(policy)
    if callable(policy):
        return policy
    raise TypeError(f"cannot use {policy!r} as a policy")


def run_episode(controller, env: GreenDatacenterEnv, seed: int, steps: int,
                reference: Optional[Callable] = None) -> dict:
    """One rollout.  With ``reference`` set, the reference drives the env and
    ``controller`` is only queried for agreement counting."""
    if hasattr(controller, "reseed"):
        controller.reseed(seed)
    obs = env.reset(seed)
    value = reward_sum = penalty = 0.0
    matches = 0
    t = 0
    for t in range(1, steps + 1):
        a = int(controller(env.state, obs))
        if reference is not None:
            ref = int(reference(env.state, obs))
            matches += a == ref
            a = ref
        obs, r, done, info = env.step(a)
        value += info.completed_value
        penalty += info.penalty
        reward_sum += r
        if done:
            break
    finished_value = sum(j.value for j in env.state.finished)
    return {"value": value, "reward": reward_sum, "penalty": penalty, "steps": t,
            "matches": matches, "finished_value": finished_value}


def _seed_list(seeds, n_rollouts) -> list[int]:
    if seeds is None:
        seeds = [0]
    if isinstance(seeds, (int, np.integer)):
        seeds = [int(seeds)]
    out = []
    for s in seeds:
        out.extend(rollout_seeds(10_000 + int(s), n_rollouts))
    return out


def evaluate(policy, env_config: SimConfig, n_rollouts: int = 10, steps: int = 2000,
             seeds: Union[int, Sequence[int], None] = 0) -> EvalReport:
    """Greedy rollouts on fresh seeded environments; reports total job value.

    ``n_rollouts`` episodes are run for each entry of ``seeds``.
    """
    controller = as_controller(policy)
    _check_shapes(policy, env_config)
    cfg = env_config.replace(episode_len=steps)
    env = GreenDatacenterEnv(cfg)
    values, rewards = [], []
    for s in _seed_list(seeds, n_rollouts):
        out = run_episode(controller, env, s, steps)
        values.append(out["value"])
        rewards.append(out["reward"])
    mean = float(np.mean(values)) if values else 0.0
    ci = 1.96 * float(np.std(values, ddof=1)) / math.sqrt(len(values)) if len(values) > 1 else 0.0
    meta = {
        "config_hash": env_config.config_hash(),
        "seeds": list(seeds) if isinstance(seeds, (list, tuple)) else seeds,
        "n_rollouts": n_rollouts,
        "steps": steps,
        "version": VERSION,
        "policy": getattr(controller, "name", type(controller).__name__),
    }
    return EvalReport(mean, values, ci, {}, meta, rewards)


def _check_shapes(policy, env_config: SimConfig) -> None:
    pol = getattr(policy, "policy_", policy)
    if hasattr(pol, "image_shape") and hasattr(pol, "n_actions"):
        if tuple(pol.image_shape) != (env_config.T_horizon, env_config.R_max) or pol.n_actions != env_config.n_actions:
            raise ShapeMismatchError(
                f"policy expects image {tuple(pol.image_shape)} / {pol.n_actions} actions; env gives "
                f"{(env_config.T_horizon, env_config.R_max)} / {env_config.n_actions}")


def action_agreement(policy, heuristic, env_config: SimConfig, n_rollouts: int = 10, steps: int = 2000,
                     seed: int = 0) -> float:
    """Fraction of steps on heuristic-controlled rollouts where ``policy`` picks the heuristic's action."""
    controller = as_controller(policy)
    _check_shapes(policy, env_config)
    ref = heuristic_controller(parse_heuristic(heuristic))
    cfg = env_config.replace(episode_len=steps)
    env = GreenDatacenterEnv(cfg)
    matches = total = 0
    for s in _seed_list(seed, n_rollouts):
        out = run_episode(controller, env, s, steps, reference=ref)
        matches += out["matches"]
        total += out["steps"]
    return matches / total if total else 0.0
