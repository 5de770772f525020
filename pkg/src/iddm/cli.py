"""``iddm`` command line: verify, expert, demos, run, sweep, curve."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .exceptions import IDDMError, ValidationError
from .experiment import GAP_HEADER, SUMMARY_HEADER, ExperimentConfig, rows_to_csv, run_one, run_sweep, \
    summarize
from .learners.training import TrainConfig

EXIT_OK, EXIT_INVALID, EXIT_FAILED = 0, 1, 2
COMMANDS = ("verify", "expert", "demos", "run", "sweep", "curve")


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def build_parser():
    p = _Parser(prog="iddm", description="Occupancy-measure checks and imitation-from-observation runs.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", default="default.json",
                   help="experiment JSON; bare names resolve to the shipped configs")
    p.add_argument("--out", default="results", help="output directory")
    p.add_argument("--seed", type=int, default=None, help="override the config seed(s)")
    p.add_argument("--jobs", type=int, default=None, help="parallel sweep workers (default: all cores)")
    p.add_argument("--algo", default=None, help="algorithm for run/demos/sweep")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _write(out, name, text):
    path = os.path.join(out, name)
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(text)
    return path


def _verify(cfg, args):
    from .theory import run_verification_suite

    seed = cfg.verify.get("seed", 0) if args.seed is None else args.seed
    try:
        reports = list(run_verification_suite(seed=seed, n_random=cfg.verify.get("n_random", 50)))
    except IDDMError as exc:
        print(f"verification aborted: {exc}", file=sys.stderr)
        return EXIT_FAILED
    _write(args.out, "verify.jsonl", "".join(r.to_json() + "\n" for r in reports))
    failed = [r.name for r in reports if not r.passed]
    print(f"{len(reports) - len(failed)}/{len(reports)} reports passed")
    for name in failed:
        print(f"FAILED {name}")
    return EXIT_FAILED if failed else EXIT_OK


def _expert(cfg, args):
    from .gridworld import Gridworld, train_expert

    world = Gridworld(cfg.grid)
    expert = train_expert(world.mdp, cfg.expert_temperature)
    doc = {"env_fingerprint": cfg.grid.fingerprint(), "temperature": cfg.expert_temperature,
           **expert.to_dict()}
    print(_write(args.out, "expert.json", json.dumps(doc) + "\n"))
    return EXIT_OK


def _demos(cfg, args):
    from .gridworld import Gridworld, collect_demos, train_expert

    algo = args.algo or cfg.train.algorithm
    seed = cfg.seeds[0] if args.seed is None else args.seed
    world = Gridworld(cfg.grid)
    expert = train_expert(world.mdp, cfg.expert_temperature)
    demos = collect_demos(world.mdp, expert, cfg.demo_pairs, include_actions=(algo == "GAIL"), seed=seed,
                          max_steps=cfg.grid.max_steps, fingerprint=cfg.grid.fingerprint())
    print(_write(args.out, "demos.jsonl", demos.to_jsonl()))
    return EXIT_OK


def _run(cfg, args):
    algo = args.algo or cfg.train.algorithm
    seed = cfg.seeds[0] if args.seed is None else args.seed
    res = run_one(cfg, algo, seed)
    _write(args.out, "run.csv", res.record.to_csv())
    _write(args.out, "summary.json", json.dumps({"algorithm": algo, "seed": seed, **res.summary},
                                               sort_keys=True) + "\n")
    print(f"{algo} seed {seed}: mean return {res.summary['mean']:.2f} (std {res.summary['std']:.2f})")
    return EXIT_OK


def _sweep(cfg, args):
    algos = [args.algo] if args.algo else None
    results = run_sweep(cfg, jobs=args.jobs, algorithms=algos)
    os.makedirs(os.path.join(args.out, "runs"), exist_ok=True)
    labels = {label: f"cell{i}" for i, (label, _) in enumerate(cfg.cells())}
    for r in results:
        _write(args.out, os.path.join("runs", f"{labels[r.cell]}_{r.algorithm}_seed{r.seed}.csv"),
               r.record.to_csv())
    rows, gaps = summarize(results, cfg.eval_rollouts)
    _write(args.out, "summary.csv", rows_to_csv(rows, SUMMARY_HEADER))
    _write(args.out, "gaps.csv", rows_to_csv(gaps, GAP_HEADER))
    for r in rows:
        print(f"{r['cell']:>24} {r['algorithm']:>8} {r['mean']:8.2f} ± {r['std']:.2f}")
    return EXIT_OK


def _curve(cfg, args):
    from .theory import approx_idd_curve_with_se

    c = cfg.curve
    seed = c.get("seed", 0) if args.seed is None else args.seed
    ks = c.get("k_values", list(range(1, 12)))
    means, ses = approx_idd_curve_with_se(ks, c.get("n_samples", 10_000), seed)
    lines = ["k,approx_idd,se"] + [f"{k},{m!r},{s!r}" for k, m, s in zip(ks, means, ses)]
    print(_write(args.out, "curve.csv", "\n".join(lines) + "\n"))
    return EXIT_OK


HANDLERS = {"verify": _verify, "expert": _expert, "demos": _demos, "run": _run, "sweep": _sweep,
            "curve": _curve}


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except _UsageError as exc:
        print(f"iddm: {exc}", file=sys.stderr)
        return EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = ExperimentConfig.load(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise ValidationError("--seed must be non-negative")
            cfg.seeds = [args.seed]
        if args.jobs is not None and args.jobs < 1:
            raise ValidationError("--jobs must be >= 1")
        if args.algo is not None:
            TrainConfig(algorithm=args.algo)
        os.makedirs(args.out, exist_ok=True)
        return HANDLERS[args.command](cfg, args)
    except (ValidationError, OSError) as exc:
        print(f"iddm: error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
