"""Experiment suites: dataset recipes, agent cells, results CSV and SVG plots.

A run is a grid of independent cells ``(agent, resources, seed)``.  Cells run
in a process pool capped by ``GREENLAUNCH_THREADS``; the parent process is
the only writer of ``results.csv`` and writes rows in grid order, so reruns
with the same spec produce byte-identical files.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import os
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import dataset as ds_mod
from .agents import AgentConfig, BCAgent, OfflineOnlineAgent, OfflineRLAgent, OnlineRLAgent
from .config import agent_config_from_mapping, read_ini
from .dataset import Dataset, collect_rollouts, mix_datasets
from .evaluation import action_agreement, evaluate
from .heuristics import HEURISTICS
from .plots import bar_chart_svg, line_chart_svg
from .sim import ConfigError, GreenDatacenterEnv, SimConfig, config_from_mapping

__all__ = [
    "EXPERIMENT_IDS",
    "ExperimentSpec",
    "AgentSpec",
    "load_spec",
    "run_experiment",
    "ExperimentResult",
    "RESULT_FIELDS",
    "parse_recipe",
    "worker_count",
]

log = logging.getLogger(__name__)

EXPERIMENT_IDS = ("bc_quality", "offline_vs_bc", "online_scaling", "launchpad", "agreement")
RESULT_FIELDS = ("experiment", "agent", "resources", "seed", "metric", "value")
ALGOS = ("bc", "offline", "online", "offline-online", "heuristic")

# named dataset recipes: heuristic -> fraction.  "best" resolves per resource size.
RECIPES = {
    "combo": {"sjf": 0.25, "fcfs": 0.25, "qos": 0.25, "hvf": 0.25},
    "qos_sjf": {"qos": 0.5, "sjf": 0.5},
}

DEFAULT_AGENTS = {
    "bc_quality": ("bc:best", "bc:qos_sjf", "bc:combo", "heuristic:best"),
    "offline_vs_bc": ("bc:combo", "offline:combo"),
    "online_scaling": ("online", "bc:best", "offline:combo"),
    "launchpad": ("offline:qos", "online", "offline-online:qos"),
    "agreement": ("bc:qos", "bc:qos_sjf", "bc:combo", "offline:qos", "offline:qos_sjf", "offline:combo",
                  "offline-online:qos", "offline-online:qos_sjf", "offline-online:combo"),
}


def parse_recipe(text: str) -> dict[str, float]:
    """``"qos"``, ``"combo"``, ``"best"`` or an explicit ``"qos:0.5+sjf:0.5"`` mix."""
    text = text.strip().lower()
    if text in RECIPES:
        return dict(RECIPES[text])
    if text == "best" or text in {h.value for h in HEURISTICS} or text == "random":
        return {text: 1.0}
    out = {}
    for part in text.split("+"):
        name, _, frac = part.partition(":")
        if not frac:
            raise ConfigError(f"bad dataset recipe {text!r}")
        name = name.strip()
        if name not in {h.value for h in HEURISTICS} | {"random", "best"}:
            raise ConfigError(f"unknown behavior policy {name!r} in recipe {text!r}")
        out[name] = float(frac)
    if abs(sum(out.values()) - 1.0) > 1e-9:
        raise ConfigError(f"recipe fractions must sum to 1: {text!r}")
    return out


@dataclass(frozen=True)
class AgentSpec:
    algo: str
    data: Optional[str] = None

    @classmethod
    def parse(cls, token: str) -> "AgentSpec":
        algo, _, data = token.strip().partition(":")
        algo = algo.strip().lower()
        if algo not in ALGOS:
            raise ConfigError(f"unknown algorithm {algo!r} in agent {token!r}; expected one of {ALGOS}")
        data = data.strip() or None
        if algo in ("bc", "offline", "offline-online", "heuristic") and data is None:
            raise ConfigError(f"agent {token!r} needs a dataset or heuristic after ':'")
        if data is not None and algo != "heuristic":
            parse_recipe(data)
        return cls(algo, data)

    @property
    def name(self) -> str:
        if self.algo == "heuristic":
            return self.data
        return self.algo if self.data is None else f"{self.algo}_{self.data}"


@dataclass
class ExperimentSpec:
    experiment: str
    resources: tuple = (10, 20, 50)
    seeds: tuple = (0, 1, 2, 3, 4)
    agents: tuple = ()
    output_dir: str = "results"
    data_seed: int = 0
    dataset_rollouts: int = 20
    dataset_steps: int = 1000
    dataset_size: int = 0  # 0 means as many transitions as one heuristic produces
    eval_rollouts: int = 10
    eval_steps: int = 2000
    eval_seed: int = 0
    agreement_heuristic: str = "qos"
    agreement_rollouts: int = 5
    agreement_steps: int = 500
    bc_steps: int = 10_000
    offline_steps: int = 10_000
    online_steps: int = 20_000
    pretrain_steps: int = 2_000
    curve_every: int = 0
    curve_rollouts: int = 3
    curve_steps: int = 1000
    train_episode_len: int = 1000
    sim: SimConfig = field(default_factory=SimConfig)
    agent: AgentConfig = field(default_factory=lambda: AgentConfig(lr=1e-3))

    def __post_init__(self):
        if self.experiment not in EXPERIMENT_IDS:
            raise ConfigError(f"unknown experiment id {self.experiment!r}; expected one of {EXPERIMENT_IDS}")
        self.resources = tuple(int(r) for r in self.resources)
        self.seeds = tuple(int(s) for s in self.seeds)
        if not self.seeds:
            raise ConfigError("an experiment needs at least one seed")
        if not self.resources or any(r <= 0 for r in self.resources):
            raise ConfigError("resources must be a non-empty list of positive sizes")
        if not self.agents:
            self.agents = DEFAULT_AGENTS[self.experiment]
        self.agents = tuple(self.agents)
        self.agent_specs = [AgentSpec.parse(a) for a in self.agents]

    def paper_scale(self) -> "ExperimentSpec":
        """Full-size budgets: 100k-step evaluation and a 100-resource datacenter."""
        res = tuple(sorted(set(self.resources) | {100}))
        return dataclasses.replace(self, resources=res, eval_steps=100_000, eval_rollouts=10,
                                   bc_steps=500_000, offline_steps=500_000, online_steps=1_000_000,
                                   pretrain_steps=50_000, agents=self.agents)

    def recipes(self) -> list[str]:
        out = []
        for a in self.agent_specs:
            if a.data is not None and a.algo != "heuristic" and a.data not in out:
                out.append(a.data)
        return out


def _split_list(raw: str) -> list[str]:
    return [p.strip() for p in raw.replace("\n", ",").split(",") if p.strip()]


def load_spec(path) -> ExperimentSpec:
    sections = read_ini(path)
    exp = dict(sections.get("experiment", {}))
    if "id" not in exp:
        raise ConfigError(f"{path}: [experiment] needs an id")
    kw: dict = {"experiment": exp.pop("id").strip()}
    fields = {f.name: f for f in dataclasses.fields(ExperimentSpec)}
    for key, raw in exp.items():
        if key in ("resources", "seeds"):
            kw[key] = tuple(int(x) for x in _split_list(raw))
        elif key == "agents":
            kw[key] = tuple(_split_list(raw))
        elif key in ("output_dir", "agreement_heuristic"):
            kw[key] = raw.strip()
        elif key in fields and key not in ("sim", "agent", "experiment"):
            try:
                kw[key] = int(raw)
            except ValueError as exc:
                raise ConfigError(f"{path}: {key} must be an integer") from exc
        else:
            raise ConfigError(f"{path}: unknown experiment key {key!r}")
    kw["sim"] = config_from_mapping(sections.get("sim", {}))
    kw["agent"] = agent_config_from_mapping(sections.get("agent", {}), AgentConfig(lr=1e-3))
    out = kw.get("output_dir")
    if out is not None and not os.path.isabs(out):
        kw["output_dir"] = str(Path(path).resolve().parent / out)
    return ExperimentSpec(**kw)


def worker_count(n_cells: int) -> int:
    raw = os.environ.get("GREENLAUNCH_THREADS")
    cap = os.cpu_count() or 1
    if raw:
        try:
            cap = max(1, int(raw))
        except ValueError:
            log.warning("ignoring non-integer GREENLAUNCH_THREADS=%r", raw)
    return max(1, min(cap, n_cells))


# ---------------------------------------------------------------------------
# datasets

def _sim_for(spec: ExperimentSpec, resources: int) -> SimConfig:
    return spec.sim.replace(R_max=resources)


def best_heuristic(spec: ExperimentSpec, resources: int) -> str:
    """Heuristic with the highest mean evaluation value at this size (ties: list order)."""
    cfg = _sim_for(spec, resources)
    scores = [(evaluate(h.value, cfg, spec.eval_rollouts, spec.eval_steps, spec.eval_seed).mean_value, -i, h.value)
              for i, h in enumerate(HEURISTICS)]
    return max(scores)[2]


def build_datasets(spec: ExperimentSpec, resources: int, data_dir: Path, best: Optional[str] = None) -> dict[str, Path]:
    """Collect one dataset per heuristic once, mix per recipe, save to ``data_dir``."""
    cfg = _sim_for(spec, resources)
    data_dir.mkdir(parents=True, exist_ok=True)
    recipes = {name: parse_recipe(name) for name in spec.recipes()}
    if any("best" in r for r in recipes.values()):
        best = best or best_heuristic(spec, resources)
        recipes = {k: {(best if h == "best" else h): f for h, f in r.items()} for k, r in recipes.items()}
    needed = sorted({h for r in recipes.values() for h in r})
    order = [h.value for h in HEURISTICS] + ["random"]
    raw: dict[str, Dataset] = {}
    for h in needed:
        seed = spec.data_seed * 1000 + order.index(h) if h in order else spec.data_seed
        raw[h] = collect_rollouts(h, cfg, spec.dataset_rollouts, spec.dataset_steps, seed=seed)
    total = spec.dataset_size or spec.dataset_rollouts * spec.dataset_steps
    paths = {}
    for name, recipe in recipes.items():
        parts = [(raw[h], f) for h, f in recipe.items()]
        mixed = parts[0][0] if len(parts) == 1 and total >= len(parts[0][0]) else mix_datasets(parts, total, spec.data_seed)
        path = data_dir / f"R{resources}_{name}.bin"
        ds_mod.save(mixed, path)
        paths[name] = path
    return paths


# ---------------------------------------------------------------------------
# cells

@dataclass
class Cell:
    agent: AgentSpec
    resources: int
    seed: int
    data_path: Optional[str]
    best: Optional[str]


def _agent_config(spec: ExperimentSpec, seed: int) -> AgentConfig:
    return spec.agent.replace(seed=seed, eval_every=spec.curve_every)


def _curve_fn(spec: ExperimentSpec, cfg: SimConfig):
    def fn(policy):
        rep = evaluate(policy, cfg, spec.curve_rollouts, spec.curve_steps, spec.eval_seed)
        return {"eval_value": rep.mean_value}

    return fn


def run_cell(spec: ExperimentSpec, cell: Cell) -> list[tuple[str, float]]:
    """Train and evaluate one ``(agent, resources, seed)`` cell; returns ``(metric, value)`` pairs."""
    a = cell.agent
    cfg = _sim_for(spec, cell.resources)
    acfg = _agent_config(spec, cell.seed)
    metrics: list[tuple[str, float]] = []
    train_env = GreenDatacenterEnv(cfg.replace(episode_len=spec.train_episode_len))
    curve = _curve_fn(spec, cfg) if spec.curve_every else None
    dataset = ds_mod.load(cell.data_path) if cell.data_path else None

    if a.algo == "heuristic":
        policy = cell.best if a.data == "best" else a.data
    elif a.algo == "bc":
        policy = BCAgent(n_steps=spec.bc_steps, lr=acfg.lr, batch_size=acfg.batch_size, seed=cell.seed,
                         config=acfg).fit(dataset)
    elif a.algo == "offline":
        est = OfflineRLAgent(filter=acfg.filter, n_steps=spec.offline_steps, gamma=acfg.gamma, lr=acfg.lr,
                             batch_size=acfg.batch_size, advantage_samples=acfg.advantage_samples,
                             seed=cell.seed, config=acfg)
        policy = est.fit(dataset)
    elif a.algo == "online":
        est = OnlineRLAgent(n_steps=spec.online_steps, gamma=acfg.gamma, lr=acfg.lr, batch_size=acfg.batch_size,
                            alpha_ent=acfg.alpha_ent, seed=cell.seed, config=acfg)
        policy = est.fit(train_env, eval_fn=curve)
        metrics += _curve_metrics(est.history_)
    else:
        est = OfflineOnlineAgent(pretrain_steps=spec.pretrain_steps, online_steps=spec.online_steps,
                                 filter=acfg.filter, gamma=acfg.gamma, lr=acfg.lr, batch_size=acfg.batch_size,
                                 alpha_ent=acfg.alpha_ent, seed=cell.seed, config=acfg)
        policy = est.fit(dataset, train_env, eval_fn=curve)
        metrics += _curve_metrics(est.history_)

    if spec.experiment == "agreement":
        agree = action_agreement(policy, spec.agreement_heuristic, cfg, spec.agreement_rollouts,
                                 spec.agreement_steps, spec.eval_seed)
        metrics.append((f"agreement_{spec.agreement_heuristic}", agree))
    else:
        rep = evaluate(policy, cfg, spec.eval_rollouts, spec.eval_steps, spec.eval_seed)
        metrics.append(("total_job_value", rep.mean_value))
        metrics.append(("total_job_value_ci95", rep.ci95))
    return metrics


def _curve_metrics(history: Sequence[dict]) -> list[tuple[str, float]]:
    return [(f"value@{h['step']}", float(h["eval_value"])) for h in history if "eval_value" in h]


def _run_cell_safe(args):
    spec, cell = args
    try:
        return cell, run_cell(spec, cell), None
    except Exception as exc:  # recorded per cell; the run continues
        return cell, [], f"{type(exc).__name__}: {exc}\n{traceback.format_exc()}"


# ---------------------------------------------------------------------------
# run

@dataclass
class ExperimentResult:
    rows: list
    failures: list
    csv_path: Path
    plots: list

    @property
    def complete(self) -> bool:
        return not self.failures


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(float(np.float64(value)))
    return str(value)


def run_experiment(spec: ExperimentSpec, workers: Optional[int] = None) -> ExperimentResult:
    """Build datasets, run every cell, write ``results.csv``, summary rows and plots."""
    out = Path(spec.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    started = time.time()
    data_paths: dict[int, dict[str, Path]] = {}
    best: dict[int, Optional[str]] = {}
    needs_best = any(a.data == "best" for a in spec.agent_specs)
    for r in spec.resources:
        best[r] = best_heuristic(spec, r) if needs_best else None
        data_paths[r] = build_datasets(spec, r, out / "data", best[r]) if spec.recipes() else {}

    cells = [Cell(a, r, s, str(data_paths[r][a.data]) if a.data in data_paths[r] else None, best[r])
             for r in spec.resources for a in spec.agent_specs for s in spec.seeds]
    n_workers = workers or worker_count(len(cells))
    if n_workers == 1:
        outcomes = [_run_cell_safe((spec, c)) for c in cells]
    else:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            outcomes = list(pool.map(_run_cell_safe, [(spec, c) for c in cells]))

    rows, failures = [], []
    csv_path = out / "results.csv"
    with csv_path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_FIELDS)
        for cell, metrics, err in outcomes:
            name = _display_name(cell)
            if err is not None:
                failures.append({"agent": name, "resources": cell.resources, "seed": cell.seed, "error": err})
                metrics = [("error", float("nan"))]
            for metric, value in metrics:
                row = (spec.experiment, name, cell.resources, cell.seed, metric, value)
                rows.append(row)
                w.writerow([_fmt(v) for v in row])
                fh.flush()
        for row in _summary_rows(rows):
            rows.append(row)
            w.writerow([_fmt(v) for v in row])

    plots = _write_plots(spec, rows, out)
    meta = {
        "experiment": spec.experiment,
        "started": started,
        "finished": time.time(),
        "workers": n_workers,
        "best_heuristic": {str(k): v for k, v in best.items()},
        "failures": failures,
    }
    (out / "run.json").write_text(json.dumps(meta, indent=2))
    return ExperimentResult(rows, failures, csv_path, plots)


def _display_name(cell: Cell) -> str:
    a = cell.agent
    if a.data == "best":
        return a.name.replace("best", f"best-{cell.best}") if a.algo != "heuristic" else f"best-{cell.best}"
    return a.name


def _summary_rows(rows: list) -> list:
    """Mean over seeds of every per-seed metric, tagged ``seed=mean``."""
    groups: dict = {}
    for exp, agent, res, seed, metric, value in rows:
        if metric == "error":
            continue
        groups.setdefault((exp, agent, res, metric), []).append(value)
    return [(exp, agent, res, "mean", metric, float(np.mean(vals)))
            for (exp, agent, res, metric), vals in groups.items()]


def read_results(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _write_plots(spec: ExperimentSpec, rows: list, out: Path) -> list[Path]:
    means = [r for r in rows if r[3] == "mean"]
    paths = []
    if spec.experiment == "agreement":
        metric = f"agreement_{spec.agreement_heuristic}"
        bars = [(agent, value) for _, agent, res, _, m, value in means if m == metric and res == spec.resources[0]]
        p = out / "agreement.svg"
        p.write_text(bar_chart_svg(bars, title=f"Action agreement with {spec.agreement_heuristic}",
                                   ylabel="agreement", ymax=1.0))
        paths.append(p)
        return paths
    series: dict[str, list] = {}
    for _, agent, res, _, m, value in means:
        if m == "total_job_value":
            series.setdefault(agent, []).append((res, value))
    p = out / "value_vs_resources.svg"
    p.write_text(line_chart_svg(series, title=f"{spec.experiment}: total job value",
                                xlabel="resources", ylabel="total job value"))
    paths.append(p)
    curves: dict[str, list] = {}
    for _, agent, res, _, m, value in means:
        if m.startswith("value@") and res == spec.resources[0]:
            curves.setdefault(agent, []).append((int(m[6:]), value))
    if curves:
        p = out / "value_vs_steps.svg"
        p.write_text(line_chart_svg(curves, title=f"{spec.experiment}: evaluation value during training",
                                    xlabel="online steps", ylabel="total job value"))
        paths.append(p)
    return paths
