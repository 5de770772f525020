"""Experiment configuration, sweeps and result aggregation."""
from __future__ import annotations

import csv
import io
import itertools
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from importlib import resources

import numpy as np

from .exceptions import ValidationError
from .gridworld import GridSpec, Gridworld, collect_demos, train_expert
from .learners.training import RunRecord, TrainConfig, train

SUMMARY_HEADER = ("cell", "algorithm", "mean", "std", "n_seeds")
GAP_HEADER = ("cell", "gap_gail_gaifo", "gap_gail_iddm")
SWEEP_AXES = ("k_choices", "lambda_p", "lambda_s", "demo_pairs")


class ConfigError(ValidationError):
    """Malformed experiment config; ``path`` names the offending field."""

    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}")


def _section(cls, data, path):
    if not isinstance(data, dict):
        raise ConfigError(path, f"expected an object, got {type(data).__name__}")
    known = {f.name for f in fields(cls)} | ({"maze"} if cls is GridSpec else set())
    for key in data:
        if key not in known:
            raise ConfigError(f"{path}.{key}", "unknown field")
    try:
        return cls.from_dict(data)
    except ConfigError:
        raise
    except (ValidationError, TypeError, ValueError) as exc:
        # name the field when the message mentions one
        hit = next((k for k in sorted(data, key=len, reverse=True) if k in str(exc)), None)
        raise ConfigError(f"{path}.{hit}" if hit else path, str(exc)) from None


@dataclass
class ExperimentConfig:
    grid: GridSpec = field(default_factory=GridSpec.reference)
    train: TrainConfig = field(default_factory=TrainConfig)
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    eval_rollouts: int = 50
    algorithms: list = field(default_factory=lambda: ["GAIL", "GAIfO", "IDDM"])
    expert_temperature: float = 0.05
    demo_pairs: int = 1000
    sweep: dict = field(default_factory=dict)
    verify: dict = field(default_factory=lambda: {"seed": 0, "n_random": 50})
    curve: dict = field(default_factory=lambda: {"k_values": list(range(1, 12)), "n_samples": 10_000,
                                                 "seed": 0})

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not isinstance(self.seeds, list) or not self.seeds:
            raise ConfigError("seeds", "must be a non-empty list of integers")
        for i, s in enumerate(self.seeds):
            if not isinstance(s, int) or isinstance(s, bool) or s < 0:
                raise ConfigError(f"seeds[{i}]", f"must be a non-negative integer, got {s!r}")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds", "duplicate seeds")
        if not isinstance(self.eval_rollouts, int) or self.eval_rollouts < 1:
            raise ConfigError("eval_rollouts", "must be an integer >= 1")
        if not isinstance(self.demo_pairs, int) or self.demo_pairs < 1:
            raise ConfigError("demo_pairs", "must be an integer >= 1")
        if not isinstance(self.expert_temperature, (int, float)) or self.expert_temperature <= 0:
            raise ConfigError("expert_temperature", "must be > 0")
        if not self.algorithms:
            raise ConfigError("algorithms", "must be non-empty")
        for i, a in enumerate(self.algorithms):
            try:
                TrainConfig(algorithm=a)
            except ValidationError as exc:
                raise ConfigError(f"algorithms[{i}]", str(exc)) from None
        if len(set(self.algorithms)) != len(self.algorithms):
            raise ConfigError("algorithms", "duplicate algorithms")
        if not isinstance(self.sweep, dict):
            raise ConfigError("sweep", "expected an object")
        for axis, values in self.sweep.items():
            if axis not in SWEEP_AXES:
                raise ConfigError(f"sweep.{axis}", f"unknown axis; expected one of {SWEEP_AXES}")
            if not isinstance(values, list) or not values:
                raise ConfigError(f"sweep.{axis}", "must be a non-empty list")
            if len(set(values)) != len(values):
                raise ConfigError(f"sweep.{axis}", "duplicate values")
            for i, v in enumerate(values):
                try:
                    _cell_setup(self, {axis: v})
                except ValidationError as exc:
                    raise ConfigError(f"sweep.{axis}[{i}]", str(exc)) from None
        for key in self.verify:
            if key not in ("seed", "n_random"):
                raise ConfigError(f"verify.{key}", "unknown field")
        for key in self.curve:
            if key not in ("k_values", "n_samples", "seed"):
                raise ConfigError(f"curve.{key}", "unknown field")

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict):
            raise ConfigError("<root>", "config must be a JSON object")
        known = {f.name for f in fields(cls)}
        for key in data:
            if key not in known:
                raise ConfigError(key, "unknown field")
        kw = dict(data)
        if "grid" in kw:
            kw["grid"] = _section(GridSpec, kw["grid"], "grid")
        if "train" in kw:
            kw["train"] = _section(TrainConfig, kw["train"], "train")
        return cls(**kw)

    def to_dict(self):
        return {
            "grid": self.grid.to_dict(),
            "train": self.train.to_dict(),
            "seeds": list(self.seeds),
            "eval_rollouts": self.eval_rollouts,
            "algorithms": list(self.algorithms),
            "expert_temperature": self.expert_temperature,
            "demo_pairs": self.demo_pairs,
            "sweep": {k: list(v) for k, v in self.sweep.items()},
            "verify": dict(self.verify),
            "curve": dict(self.curve),
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError("<root>", f"invalid JSON: {exc}") from None
        return cls.from_dict(data)

    @classmethod
    def load(cls, path):
        """Read a config file; a bare name of a shipped config (e.g. ``default.json``) also works."""
        if not os.path.exists(path) and os.path.basename(path) == path:
            shipped = resources.files("iddm") / "configs" / path
            if shipped.is_file():
                return cls.from_json(shipped.read_text(encoding="utf-8"))
        with open(path, encoding="utf-8") as f:
            return cls.from_json(f.read())

    def cells(self):
        """Cross product of the sweep axes as ``(label, overrides)`` pairs, in a fixed order."""
        axes = [a for a in SWEEP_AXES if a in self.sweep]
        if not axes:
            return [("base", {})]
        out = []
        for combo in itertools.product(*(self.sweep[a] for a in axes)):
            ov = dict(zip(axes, combo))
            out.append((";".join(f"{a}={v}" for a, v in ov.items()), ov))
        return out


def _cell_setup(cfg: ExperimentConfig, overrides):
    grid = cfg.grid
    if "k_choices" in overrides:
        grid = GridSpec.from_dict({**grid.to_dict(), "k_choices": overrides["k_choices"]})
    train_kw = {k: overrides[k] for k in ("lambda_p", "lambda_s") if k in overrides}
    tcfg = TrainConfig.from_dict({**cfg.train.to_dict(), **train_kw}) if train_kw else cfg.train
    pairs = overrides.get("demo_pairs", cfg.demo_pairs)
    if not isinstance(pairs, int) or pairs < 1:
        raise ValidationError("demo_pairs must be an integer >= 1")
    return grid, tcfg, pairs


@dataclass
class RunResult:
    cell: str
    algorithm: str
    seed: int
    summary: dict
    record: RunRecord


def run_one(cfg: ExperimentConfig, algorithm, seed, overrides=None, cell="base") -> RunResult:
    """Expert, demonstrations and one training run; everything is derived from ``seed``."""
    grid, tcfg, pairs = _cell_setup(cfg, overrides or {})
    world = Gridworld(grid)
    expert = train_expert(world.mdp, cfg.expert_temperature)
    demos = collect_demos(world.mdp, expert, pairs, include_actions=(algorithm == "GAIL"), seed=seed,
                          max_steps=grid.max_steps, fingerprint=grid.fingerprint())
    tcfg = TrainConfig.from_dict({**tcfg.to_dict(), "algorithm": algorithm, "seed": seed})
    _, record = train(algorithm, world, demos, tcfg, expert=expert, eval_rollouts=cfg.eval_rollouts)
    return RunResult(cell, algorithm, seed, record.summary, record)


def _task(args):
    cfg_dict, algorithm, seed, overrides, cell = args
    return run_one(ExperimentConfig.from_dict(cfg_dict), algorithm, seed, overrides, cell)


def run_sweep(cfg: ExperimentConfig, jobs=None, algorithms=None):
    """Every (cell, algorithm, seed) as an independent task; results in a fixed order."""
    algorithms = list(algorithms or cfg.algorithms)
    tasks = [(cfg.to_dict(), algo, seed, ov, label)
             for label, ov in cfg.cells() for algo in algorithms for seed in cfg.seeds]
    jobs = max(1, min(jobs or os.cpu_count() or 1, len(tasks)))
    if jobs == 1:
        return [_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_task, tasks))


def summarize(results, eval_rollouts=None):
    """Mean and population std of per-seed evaluation means for each (cell, algorithm).

    Returns ``(rows, gaps)``; ``gaps`` has GAIL - GAIfO and GAIL - IDDM per
    cell where both sides are present (``nan`` otherwise).
    """
    if not results:
        raise ValidationError("no runs to summarize")
    groups: dict = {}
    for r in results:
        if eval_rollouts is not None and r.summary.get("n") != eval_rollouts:
            raise ValidationError(f"run {r.cell}/{r.algorithm}/seed {r.seed} used "
                                  f"{r.summary.get('n')} evaluation rollouts, expected {eval_rollouts}")
        groups.setdefault((r.cell, r.algorithm), []).append(r.summary["mean"])
    cells = list(dict.fromkeys(c for c, _ in groups))
    algos = list(dict.fromkeys(a for _, a in groups))
    missing = [(c, a) for c in cells for a in algos if (c, a) not in groups]
    if missing:
        raise ValidationError(f"missing sweep cells: {missing}")
    rows = []
    for (cell, algo), vals in groups.items():
        v = np.asarray(vals, dtype=np.float64)
        rows.append({"cell": cell, "algorithm": algo, "mean": float(v.mean()), "std": float(v.std()),
                     "n_seeds": len(v)})
    means = {(r["cell"], r["algorithm"]): r["mean"] for r in rows}
    gaps = []
    for cell in cells:
        g = means.get((cell, "GAIL"), np.nan)
        gaps.append({"cell": cell,
                     "gap_gail_gaifo": g - means.get((cell, "GAIfO"), np.nan),
                     "gap_gail_iddm": g - means.get((cell, "IDDM"), np.nan)})
    return rows, gaps


def rows_to_csv(rows, header):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(r[h]) if isinstance(r[h], float) else r[h] for h in header])
    return buf.getvalue()


def read_summary_csv(text):
    rows = list(csv.DictReader(io.StringIO(text)))
    for r in rows:
        r["mean"], r["std"], r["n_seeds"] = float(r["mean"]), float(r["std"]), int(r["n_seeds"])
    return rows
