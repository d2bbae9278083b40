"""Run manifests, seeded sub-streams, evaluation loops and sweeps.

A run manifest is a JSON object; relative file paths inside it resolve
against the manifest's own directory.  Every random choice in a run is
drawn from a named sub-stream of the single run seed, so changing, for
instance, the number of evaluation repeats does not perturb the weights
a pre-training run produces.
"""

from __future__ import annotations

import csv
import json
import zlib
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .data import Task, load_task_csv, split_support_query
from .metrics import accuracy, auc, mean_stderr
from .model import DenModel, ModelConfig, build_model, den_forward
from .simulate import (
    PRIOR_GRID,
    DistortionSpec,
    ScorerSpec,
    apply_heterogeneity,
    bayes_auc_oracle,
    sample_subtask,
    simulate_task_family,
)
from .trainer import TrainConfig, direct_baseline_linear, direct_baseline_mlp, finetune, pretrain


class ManifestError(ValueError):
    """The run manifest is malformed or refers to unusable inputs."""


def stream_seed(seed: int, name: str) -> int:
    """A 32-bit seed for the sub-stream ``name`` of run seed ``seed``."""
    ss = np.random.SeedSequence([int(seed), zlib.crc32(name.encode())])
    return int(ss.generate_state(1)[0])


# ---------------------------------------------------------------- simulation


@dataclass
class SimulationSpec:
    """A family of scorer tasks, optionally warped and split into sub-tasks.

    ``pi=None`` draws each family's prior from {0.1, ..., 0.9}.
    ``subtasks`` extra tasks per family keep a uniformly sized random
    subset of its columns.
    """

    families: int = 3
    count_range: tuple[int, int] = (3, 8)
    n: int = 2000
    strength_range: tuple[float, float] = (0.18, 1.65)
    noise: float = 1.0
    pi: float | None = None
    heterogeneity: bool = False
    subtasks: int = 0
    prefix: str = "family"

    def __post_init__(self):
        self.count_range = tuple(int(c) for c in self.count_range)
        self.strength_range = tuple(float(s) for s in self.strength_range)
        lo, hi = self.count_range
        if self.families < 1 or self.n < 2 or self.subtasks < 0:
            raise ValueError("families >= 1, n >= 2 and subtasks >= 0 are required")
        if not 1 <= lo <= hi:
            raise ValueError(f"count_range must satisfy 1 <= lo <= hi, got {self.count_range}")
        if self.pi is not None and not 0.0 < self.pi < 1.0:
            raise ValueError(f"pi must lie in (0, 1), got {self.pi}")

    def generate(self, seed: int) -> list[Task]:
        tasks = []
        for i, child in enumerate(np.random.SeedSequence(seed).spawn(self.families)):
            rng = np.random.default_rng(child)
            count = int(rng.integers(self.count_range[0], self.count_range[1] + 1))
            pi = float(rng.choice(PRIOR_GRID)) if self.pi is None else self.pi
            spec = ScorerSpec(count, self.strength_range, self.noise, pi)
            tid = f"{self.prefix}{i:03d}"
            task = simulate_task_family(spec, self.n, rng, tid)
            if self.heterogeneity:
                task = apply_heterogeneity(task, DistortionSpec.random(count, rng))
            tasks.append(task)
            for j in range(self.subtasks):
                C = int(rng.integers(1, count + 1))
                sub = sample_subtask(task, C, rng)
                sub.task_id = f"{tid}_sub{j:02d}"
                tasks.append(sub)
        return tasks


class OracleTask(NamedTuple):
    task: Task
    spec: ScorerSpec
    oracle_auc: float


def oracle_band_suite(n_tasks: int, seed: int, band=(0.90, 0.97), count_range=(3, 8),
                      n: int = 1000, n_mc: int = 20000, noise: float = 1.0,
                      max_draws: int = 10_000, prefix: str = "heldout") -> list[OracleTask]:
    """Homogeneous scorer tasks whose Bayes AUC falls inside ``band``.

    Candidates are drawn one at a time from independent child streams and
    kept in order until ``n_tasks`` qualify.
    """
    found: list[OracleTask] = []
    for i, child in enumerate(np.random.SeedSequence(seed).spawn(max_draws)):
        s_spec, s_oracle, s_data = child.spawn(3)
        rng = np.random.default_rng(s_spec)
        count = int(rng.integers(count_range[0], count_range[1] + 1))
        spec = ScorerSpec(count, noise=noise, pi=float(rng.choice(PRIOR_GRID))).realize(rng)
        a, _ = bayes_auc_oracle(spec, n_mc, s_oracle)
        if band[0] <= a <= band[1]:
            task = simulate_task_family(spec, n, s_data, f"{prefix}{i:04d}")
            found.append(OracleTask(task, spec, a))
            if len(found) == n_tasks:
                return found
    raise RuntimeError(f"only {len(found)} of {n_tasks} candidate tasks fell in {band}")


# ---------------------------------------------------------------- evaluation


class MetricRow(NamedTuple):
    task_id: str
    repeat: int | str
    method: str
    metric: str
    value: float
    stderr: float | None = None


METRIC_FIELDS = list(MetricRow._fields)
BASELINES = ("linear", "mlp")


def _score(task_L: int, scores: np.ndarray, y: np.ndarray) -> tuple[str, float]:
    if task_L == 2:
        s = scores if scores.ndim == 1 else scores[:, 1]
        return "auc", auc(s, y)
    return "accuracy", accuracy(np.asarray(scores).argmax(axis=1), y)


def den_scores(model: DenModel, support: Task, query: Task, config: TrainConfig,
               tune: bool, seed: int) -> np.ndarray:
    """Scores of a freshly fit (and optionally fine-tuned) model on ``query``."""
    cfg = config if tune else TrainConfig(**{**config.to_dict(), "finetune_epochs": 0})
    tuned = finetune(model, support, cfg, seed=seed)
    return den_forward(tuned, support, query.X)


def evaluate(methods: dict[str, tuple[DenModel, bool]], tasks: list[Task], n_support: int,
             repeats: int, config: TrainConfig, seed: int,
             baselines=()) -> list[MetricRow]:
    """Per-repeat query metrics for every method on shared support/query splits.

    ``methods`` maps a method name to ``(model, fine_tune?)``.  Repeat ``j``
    of task ``i`` uses the same split for every method.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    for b in baselines:
        if b not in BASELINES:
            raise ValueError(f"unknown baseline {b!r}; choose from {BASELINES}")
    rows = []
    for i, task in enumerate(tasks):
        for rep in range(repeats):
            split_seed = np.random.SeedSequence([stream_seed(seed, "splits"), i, rep])
            support, query = split_support_query(task, n_support, np.random.default_rng(split_seed))
            ft_seed = stream_seed(seed, f"finetune/{i}/{rep}")
            for name, (model, tune) in methods.items():
                metric, value = _score(task.L, den_scores(model, support, query, config, tune, ft_seed),
                                       query.y)
                rows.append(MetricRow(task.task_id, rep, name, metric, value))
            base_cfg = TrainConfig(seed=stream_seed(seed, f"baseline/{i}/{rep}"))
            for b in baselines:
                if b == "linear":
                    s = direct_baseline_linear(support, query.X, base_cfg)
                else:
                    s = direct_baseline_mlp(support, query.X, [8], base_cfg)
                metric, value = _score(task.L, s, query.y)
                rows.append(MetricRow(task.task_id, rep, b, metric, value))
    return rows


def summarize(rows: list[MetricRow]) -> list[MetricRow]:
    """One ``repeat="summary"`` row (mean and SE over repeats) per task and method."""
    groups: dict[tuple[str, str, str], list[float]] = {}
    for r in rows:
        groups.setdefault((r.task_id, r.method, r.metric), []).append(r.value)
    out = []
    for (tid, method, metric), vals in groups.items():
        if len(vals) >= 2:
            m, se = mean_stderr(vals)
        else:
            m, se = float(vals[0]), None
        out.append(MetricRow(tid, "summary", method, metric, m, se))
    return out


def method_means(rows: list[MetricRow]) -> dict[str, float]:
    """Mean per-repeat value of each method, pooled over tasks."""
    vals: dict[str, list[float]] = {}
    for r in rows:
        if r.repeat != "summary":
            vals.setdefault(r.method, []).append(r.value)
    return {k: float(np.mean(v)) for k, v in vals.items()}


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(path, header: list[str], rows) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def write_metrics_csv(rows: list[MetricRow], path) -> None:
    write_csv(path, METRIC_FIELDS, list(rows) + summarize(rows))


def read_metrics_csv(path) -> list[MetricRow]:
    out = []
    with Path(path).open(newline="") as fh:
        for rec in csv.DictReader(fh):
            rep = rec["repeat"] if rec["repeat"] == "summary" else int(rec["repeat"])
            se = float(rec["stderr"]) if rec["stderr"] else None
            out.append(MetricRow(rec["task_id"], rep, rec["method"], rec["metric"], float(rec["value"]), se))
    return out


# ---------------------------------------------------------------- manifests


def _from_dict(cls, obj, where: str):
    if not isinstance(obj, dict):
        raise ManifestError(f"'{where}' must be an object")
    known = {f.name for f in fields(cls)}
    extra = set(obj) - known
    if extra:
        raise ManifestError(f"unknown key(s) in '{where}': {sorted(extra)}")
    try:
        return cls(**obj)
    except (TypeError, ValueError) as err:
        raise ManifestError(f"invalid '{where}': {err}") from None


@dataclass
class TaskRef:
    csv: Path
    manifest: dict
    task_id: str | None = None

    def load(self) -> Task:
        return load_task_csv(self.csv, self.manifest, self.task_id)


@dataclass
class TaskSource:
    """Either explicit task files or a simulation spec (seeded by the run)."""

    refs: list[TaskRef] = field(default_factory=list)
    simulation: SimulationSpec | None = None

    def load(self, seed: int, stream: str) -> list[Task]:
        if self.simulation is not None:
            return self.simulation.generate(stream_seed(seed, stream))
        return [ref.load() for ref in self.refs]


@dataclass
class RunSpec:
    mode: str
    model: ModelConfig
    train: TrainConfig
    seed: int
    tasks: TaskSource | None = None
    target: TaskSource | None = None
    checkpoint: Path | None = None
    support: int = 50
    repeats: int = 20
    baselines: list[str] = field(default_factory=list)
    sweep: dict[str, list] = field(default_factory=dict)
    simulation: SimulationSpec | None = None
    path: Path | None = None

    def without_plf(self) -> RunSpec:
        spec = RunSpec(**{f.name: getattr(self, f.name) for f in fields(self)})
        spec.model = ModelConfig(**{**spec.model.to_dict(), "use_plf": False})
        return spec


TOP_KEYS = {"mode", "model", "train", "seed", "tasks", "simulation", "target", "checkpoint",
            "evaluation", "sweep"}


def _task_refs(items, base: Path, where: str) -> list[TaskRef]:
    if not isinstance(items, list) or not items:
        raise ManifestError(f"'{where}' must be a nonempty list of task entries")
    refs = []
    for k, item in enumerate(items):
        if not isinstance(item, dict) or "csv" not in item or "manifest" not in item:
            raise ManifestError(f"{where}[{k}] needs 'csv' and 'manifest'")
        man = item["manifest"]
        if isinstance(man, str):
            mpath = base / man
            try:
                man = json.loads(mpath.read_text())
            except (OSError, json.JSONDecodeError) as err:
                raise ManifestError(f"{where}[{k}]: cannot read task manifest {mpath}: {err}") from None
        if not isinstance(man, dict):
            raise ManifestError(f"{where}[{k}]: task manifest must be an object")
        csv_path = base / item["csv"]
        if not csv_path.is_file():
            raise ManifestError(f"{where}[{k}]: task file {csv_path} not found")
        refs.append(TaskRef(csv_path, man, item.get("task_id")))
    return refs


def _task_source(obj, base: Path, where: str) -> TaskSource:
    if isinstance(obj, list):
        return TaskSource(refs=_task_refs(obj, base, where))
    if isinstance(obj, dict) and set(obj) <= {"tasks", "simulation"} and len(obj) == 1:
        if "tasks" in obj:
            return TaskSource(refs=_task_refs(obj["tasks"], base, f"{where}.tasks"))
        return TaskSource(simulation=_from_dict(SimulationSpec, obj["simulation"], f"{where}.simulation"))
    raise ManifestError(f"'{where}' must be a task list or an object with exactly one of 'tasks'/'simulation'")


def parse_manifest(obj: dict, base: Path = Path("."), path: Path | None = None,
                   seed: int | None = None) -> RunSpec:
    """Validate a manifest object; ``seed`` overrides the manifest's own seed."""
    if not isinstance(obj, dict):
        raise ManifestError("manifest must be a JSON object")
    extra = set(obj) - TOP_KEYS
    if extra:
        raise ManifestError(f"unknown top-level key(s): {sorted(extra)}")
    if seed is None:
        seed = obj.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ManifestError("'seed' must be a nonnegative integer")
    mode = obj.get("mode", "binary")
    model_obj = dict(obj.get("model", {}))
    model_obj.setdefault("policy_seed", stream_seed(seed, "index-sets"))
    model = _from_dict(ModelConfig, {**model_obj, "mode": mode}, "model")
    train_obj = dict(obj.get("train", {}))
    if "seed" in train_obj:
        raise ManifestError("'train.seed' is derived from the run seed; set the top-level 'seed'")
    train = _from_dict(TrainConfig, {**train_obj, "seed": stream_seed(seed, "train")}, "train")
    spec = RunSpec(mode, model, train, seed, path=path)
    if "tasks" in obj and "simulation" in obj:
        raise ManifestError("give either 'tasks' or 'simulation' for the training tasks, not both")
    if "tasks" in obj:
        spec.tasks = TaskSource(refs=_task_refs(obj["tasks"], base, "tasks"))
    if "simulation" in obj:
        sim = _from_dict(SimulationSpec, obj["simulation"], "simulation")
        spec.tasks = TaskSource(simulation=sim)
        spec.simulation = sim
    if "target" in obj:
        spec.target = _task_source(obj["target"], base, "target")
    if "checkpoint" in obj:
        if not isinstance(obj["checkpoint"], str):
            raise ManifestError("'checkpoint' must be a path string")
        spec.checkpoint = base / obj["checkpoint"]
    ev = obj.get("evaluation", {})
    if not isinstance(ev, dict) or set(ev) - {"support", "repeats", "baselines"}:
        raise ManifestError("'evaluation' accepts only 'support', 'repeats' and 'baselines'")
    spec.support = ev.get("support", 50)
    spec.repeats = ev.get("repeats", 20)
    if not all(isinstance(v, int) and not isinstance(v, bool) for v in (spec.support, spec.repeats)):
        raise ManifestError("'evaluation.support' and 'evaluation.repeats' must be integers")
    if not isinstance(ev.get("baselines", []), list):
        raise ManifestError("'evaluation.baselines' must be a list")
    spec.baselines = list(ev.get("baselines", []))
    bad = [b for b in spec.baselines if b not in BASELINES]
    if bad:
        raise ManifestError(f"unknown baseline(s) {bad}; choose from {list(BASELINES)}")
    if spec.repeats < 1 or spec.support < 2:
        raise ManifestError("evaluation needs repeats >= 1 and support >= 2")
    sweep = obj.get("sweep", {})
    if not isinstance(sweep, dict) or set(sweep) - {"r", "K"}:
        raise ManifestError("'sweep' accepts only 'r' and 'K' lists")
    for key, vals in sweep.items():
        if not isinstance(vals, list) or not all(isinstance(v, int) and v >= 1 for v in vals):
            raise ManifestError(f"sweep '{key}' must be a list of positive integers")
    spec.sweep = {k: list(v) for k, v in sweep.items()}
    return spec


def load_manifest(path, seed: int | None = None) -> RunSpec:
    path = Path(path)
    try:
        obj = json.loads(path.read_text())
    except OSError as err:
        raise ManifestError(f"cannot read manifest {path}: {err.strerror}") from None
    except json.JSONDecodeError as err:
        raise ManifestError(f"{path}: malformed JSON at line {err.lineno}: {err.msg}") from None
    try:
        return parse_manifest(obj, path.parent, path, seed)
    except ManifestError as err:
        raise ManifestError(f"{path}: {err}") from None


# ---------------------------------------------------------------- training


def train_model(spec: RunSpec, tasks: list[Task]):
    """Build from the ``init`` sub-stream and pre-train; returns ``(model, history)``."""
    model = build_model(spec.model, stream_seed(spec.seed, "init"))
    return pretrain(model, tasks, spec.train)


class SweepRow(NamedTuple):
    setting: str
    mean_auc: float
    se: float


def sweep_settings(sweep: dict[str, list]) -> list[tuple[str, dict]]:
    """``(label, ModelConfig overrides)`` for every swept value, r first."""
    out = []
    for key in ("r", "K"):
        for val in sweep.get(key, []):
            out.append((f"{key}={val}", {key: int(val)}))
    return out


def run_setting(spec: RunSpec, overrides: dict, train_tasks: list[Task],
                target_tasks: list[Task]) -> tuple[SweepRow, list[MetricRow]]:
    """Pre-train one swept configuration and evaluate it with fine-tuning."""
    cfg = ModelConfig(**{**spec.model.to_dict(), **overrides})
    setting_spec = RunSpec(**{**{f.name: getattr(spec, f.name) for f in fields(spec)}, "model": cfg})
    model, _ = train_model(setting_spec, train_tasks)
    name = "den" if cfg.use_plf else "den_noplf"
    rows = evaluate({name: (model, cfg.use_plf)}, target_tasks, spec.support, spec.repeats,
                    spec.train, spec.seed)
    vals = [r.value for r in rows]
    m, se = mean_stderr(vals) if len(vals) >= 2 else (float(vals[0]), float("nan"))
    return SweepRow(", ".join(f"{k}={v}" for k, v in overrides.items()), m, se), rows
