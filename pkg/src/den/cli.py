"""Batch entry point: ``den {pretrain,finetune-eval,simulate,ablate}``.

Exit codes: 0 on success, 1 when the run itself fails, 2 for usage or
manifest errors.  Apart from ``ablate``, which keeps the settings it
finished, a failed command leaves no output files behind.
"""

from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
import tempfile
from contextlib import contextmanager
from pathlib import Path

from .checkpoint import CheckpointError, atomic_write_text, load_checkpoint, save_checkpoint
from .data import TaskFormatError, save_task_csv
from .experiments import (
    BASELINES,
    ManifestError,
    RunSpec,
    evaluate,
    load_manifest,
    run_setting,
    stream_seed,
    sweep_settings,
    train_model,
    write_csv,
    write_metrics_csv,
)

log = logging.getLogger("den")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


@contextmanager
def staged_output(out: Path):
    """Yield a scratch directory whose files move into ``out`` only on success."""
    created = not out.exists()
    out.mkdir(parents=True, exist_ok=True)
    stage = Path(tempfile.mkdtemp(prefix=".staging-", dir=out))
    ok = False
    try:
        yield stage
        for f in sorted(stage.iterdir()):
            f.replace(out / f.name)
        ok = True
    finally:
        shutil.rmtree(stage, ignore_errors=True)
        if created and not ok and not any(out.iterdir()):
            out.rmdir()


def _run_info(spec: RunSpec, command: str) -> str:
    info = {
        "command": command,
        "seed": spec.seed,
        "mode": spec.mode,
        "model": spec.model.to_dict(),
        "train": spec.train.to_dict(),
    }
    return json.dumps(info, indent=2, sort_keys=True) + "\n"


def _spec(args) -> RunSpec:
    spec = load_manifest(args.manifest, seed=args.seed)
    return spec.without_plf() if getattr(args, "no_plf", False) else spec


def _train_tasks(spec: RunSpec):
    if spec.tasks is None:
        raise UsageError("manifest lists no training tasks ('tasks' or 'simulation')")
    return spec.tasks.load(spec.seed, "train-tasks")


def _target_tasks(spec: RunSpec):
    if spec.target is None:
        raise UsageError("manifest has no 'target' tasks")
    return spec.target.load(spec.seed, "target-tasks")


def cmd_pretrain(args) -> int:
    spec = _spec(args)
    tasks = _train_tasks(spec)
    with staged_output(args.out) as stage:
        model, history = train_model(spec, tasks)
        save_checkpoint(model, stage / "checkpoint.json")
        write_csv(stage / "loss_history.csv", ["step", "task_id", "loss"], history)
        atomic_write_text(stage / "run.json", _run_info(spec, "pretrain"))
    log.info("pre-trained %d steps on %d tasks; final loss %.4f", len(history), len(tasks), history[-1].loss)
    return EXIT_OK


def cmd_finetune_eval(args) -> int:
    spec = _spec(args)
    if spec.checkpoint is None:
        raise UsageError("manifest needs a 'checkpoint' path for finetune-eval")
    if not spec.checkpoint.is_file():
        raise UsageError(f"checkpoint {spec.checkpoint} not found")
    model = load_checkpoint(spec.checkpoint)
    if args.no_plf and model.config.use_plf:
        raise UsageError("checkpoint was trained with a PLF block; pre-train with --no-plf instead")
    tasks = _target_tasks(spec)
    if not model.config.use_plf:
        name, tune = "den_noplf", False
    elif args.no_finetune:
        name, tune = "den_noft", False
    else:
        name, tune = "den", True
    baselines = spec.baselines or (list(BASELINES) if args.baselines else [])
    with staged_output(args.out) as stage:
        rows = evaluate({name: (model, tune)}, tasks, spec.support, spec.repeats, spec.train,
                        spec.seed, baselines)
        write_metrics_csv(rows, stage / "metrics.csv")
    log.info("evaluated %d tasks x %d repeats", len(tasks), spec.repeats)
    return EXIT_OK


def cmd_simulate(args) -> int:
    spec = _spec(args)
    if spec.simulation is None:
        raise UsageError("manifest has no 'simulation' spec")
    tasks = spec.simulation.generate(stream_seed(spec.seed, "train-tasks"))
    with staged_output(args.out) as stage:
        for t in tasks:
            save_task_csv(t, stage / f"{t.task_id}.csv", stage / f"{t.task_id}.json")
    log.info("wrote %d tasks", len(tasks))
    return EXIT_OK


def cmd_ablate(args) -> int:
    spec = _spec(args)
    settings = sweep_settings(spec.sweep)
    if not settings:
        raise UsageError("sweep lists are empty; give 'sweep': {'r': [...]} and/or {'K': [...]}")
    train_tasks = _train_tasks(spec)
    target_tasks = _target_tasks(spec)
    args.out.mkdir(parents=True, exist_ok=True)
    done = []
    for label, overrides in settings:
        log.info("setting %s", label)
        row, _ = run_setting(spec, overrides, train_tasks, target_tasks)
        done.append(row)
        # rewritten after each setting so finished ones survive a later failure
        buf = args.out / ".sweep.csv.tmp"
        write_csv(buf, ["setting", "mean_auc", "se"], done)
        buf.replace(args.out / "sweep.csv")
    return EXIT_OK


COMMANDS = {
    "pretrain": cmd_pretrain,
    "finetune-eval": cmd_finetune_eval,
    "simulate": cmd_simulate,
    "ablate": cmd_ablate,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="den", description="Few-shot classification for tabular tasks of any width.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--manifest", type=Path, required=True, help="run manifest (JSON)")
        sp.add_argument("--out", type=Path, required=True, help="output directory")
        sp.add_argument("--seed", type=int, default=None, help="override the manifest seed")
        if name in ("pretrain", "finetune-eval", "ablate"):
            sp.add_argument("--no-plf", action="store_true", help="omit the per-covariate PLF block")
        if name == "finetune-eval":
            sp.add_argument("--no-finetune", action="store_true", help="evaluate with freshly fit PLFs")
            sp.add_argument("--baselines", action="store_true", help="also run the direct baselines")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if args.seed is not None and args.seed < 0:
        print("den: --seed must be nonnegative", file=sys.stderr)
        return EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ManifestError, TaskFormatError, CheckpointError) as err:
        print(f"den {args.command}: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (Exception, KeyboardInterrupt) as err:  # any run failure maps to exit 1
        print(f"den {args.command}: failed: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
