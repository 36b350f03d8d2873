"""Command-line interface: ``saot <command> [options]``.

Exit codes: 0 success, 2 invalid input (config, files, shapes), 3 numeric
failure (divergence, solver non-convergence).
"""
from __future__ import annotations

import argparse
import contextlib
import csv
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .analysis import (
    SPECTRUM_NORM,
    SweepReport,
    bench_mixers,
    high_shell_energy_ratio,
    spectra,
)
from .config import RunConfig, load_config
from .darcy import generate_samples, stack_samples
from .errors import DeterminismError, NumericError, SAOTError, ValidationError
from .io import dataset_checksum, read_dataset, write_dataset, write_sidecar
from .model import VARIANTS
from .training import (
    METRIC_COLUMNS,
    evaluate,
    load_checkpoint,
    save_checkpoint,
    train,
)

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 2, 3
DATASET_SUFFIX = ".saotds"
CHECKPOINT_SUFFIX = ".saotck"
log = logging.getLogger("saot")


def data_root(arg) -> Path:
    return Path(arg if arg is not None else os.environ.get("SAOT_DATA_DIR", "data"))


def dataset_path(root, split: str, resolution: int) -> Path:
    return Path(root) / f"{split}_{int(resolution)}{DATASET_SUFFIX}"


def _run_config(args, **extra) -> RunConfig:
    overrides = {"seed": args.seed, **extra}
    if getattr(args, "variant", None):
        overrides["variant"] = args.variant
    return load_config(args.config, overrides)


def _write_csv(path, header, rows, comments=()) -> None:
    with open(path, "w", newline="") as fh:
        for c in comments:
            fh.write(f"# {c}\n")
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _write_json(path, payload) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _out_dir(args) -> Path:
    out = Path(args.out if args.out is not None else ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_arrays(path):
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"dataset {path} does not exist")
    samples = read_dataset(path)
    if not samples:
        raise ValidationError(f"dataset {path} is empty")
    return stack_samples(samples)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_generate(args) -> int:
    cfg = _run_config(args).data
    cfg.validate()
    out = _out_dir(args)
    resolutions = sorted({cfg.resolution, *cfg.test_resolutions})
    residuals: list[float] = []
    by_res = generate_samples(
        cfg.n_train + cfg.n_test, cfg.seed, resolutions, cfg.reference_resolution,
        cfg.smoothness, cfg.n_modes, (cfg.lo, cfg.hi), cfg.threshold, cfg.forcing,
        residuals=residuals,
    )
    checksums = {}
    path = dataset_path(out, "train", cfg.resolution)
    checksums[path.name] = write_dataset(by_res[cfg.resolution][:cfg.n_train], path)
    for r in cfg.test_resolutions:
        path = dataset_path(out, "test", r)
        checksums[path.name] = write_dataset(by_res[r][cfg.n_train:], path)
    write_sidecar(out / "generate.cfg", _run_config(args).to_flat())
    for name, digest in checksums.items():
        print(f"{name} sha256={digest}")
    if residuals:
        print(f"max solver residual {max(residuals):.3e} over {len(residuals)} reference solves")
    return EXIT_OK


def _train_variant(run: RunConfig, variant: str, data_dir: Path, out: Path) -> dict:
    model_cfg = replace(run.model, variant=variant)
    res = run.data.resolution
    tr = _load_arrays(dataset_path(data_dir, "train", res))
    test_path = dataset_path(data_dir, "test", res)
    te = _load_arrays(test_path) if test_path.is_file() else None
    result = train(tr, te, model_cfg, run.train,
                   log=lambda row: log.info("%s epoch %d train %.4g test %.4g", variant,
                                            row["epoch"], row["train_rel_l2"],
                                            row["test_rel_l2"]))
    ckpt_path = out / f"model_{variant}{CHECKPOINT_SUFFIX}"
    save_checkpoint(result.checkpoint, ckpt_path)
    _write_csv(out / f"metrics_{variant}.csv", METRIC_COLUMNS,
               [[row[c] for c in METRIC_COLUMNS] for row in result.history])
    write_sidecar(out / f"train_{variant}.cfg", {**run.to_flat(), "variant": variant})
    best_test = min((r["test_rel_l2"] for r in result.history), default=float("nan"))
    return {
        "variant": variant,
        "parameters": result.model.num_parameters(),
        "initial_train_rel_l2": result.initial_train_rel_l2,
        "final_train_rel_l2": result.final_train_rel_l2,
        "best_test_rel_l2": best_test,
        "checkpoint": str(ckpt_path),
    }


def cmd_train(args) -> int:
    run = _run_config(args)
    summary = _train_variant(run, run.model.variant, data_root(args.data), _out_dir(args))
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_ablation(args) -> int:
    run = _run_config(args)
    out = _out_dir(args)
    rows = [_train_variant(run, v, data_root(args.data), out) for v in args.variants]
    header = ["variant", "parameters", "final_train_rel_l2", "best_test_rel_l2"]
    table = [[r[h] for h in header] for r in rows]
    _write_csv(out / "ablation.csv", header, table)
    print(",".join(header))
    for r in table:
        print(",".join(str(v) for v in r))
    return EXIT_OK


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    a, u = _load_arrays(args.dataset)
    model = ckpt.build_model()
    errs = evaluate(model, a, u)
    payload = {
        "checkpoint": str(args.checkpoint),
        "dataset": str(args.dataset),
        "dataset_sha256": dataset_checksum(args.dataset),
        "n_samples": int(len(errs)),
        "resolution": list(a.shape[1:3]),
        "mean_rel_l2": float(np.mean(errs)),
        "per_sample_rel_l2": [float(e) for e in errs],
        "model_config": ckpt.model_config.to_dict(),
        "train_config": ckpt.train_config.to_dict() if ckpt.train_config else None,
    }
    if args.out is not None:
        _write_json(args.out, payload)
    print(json.dumps({"mean_rel_l2": payload["mean_rel_l2"], "n_samples": payload["n_samples"]}))
    return EXIT_OK


def cmd_spectrum(args) -> int:
    ckpts = [load_checkpoint(p) for p in args.checkpoint]
    if len(ckpts) > 2:
        raise ValidationError("give one checkpoint, or two for the FA/WA comparison")
    a, u = _load_arrays(args.dataset)
    if not 0 <= args.index < len(a):
        raise ValidationError(f"sample index {args.index} out of range for {len(a)} samples")
    a_i, u_i = a[args.index:args.index + 1], u[args.index]
    if len(ckpts) == 1:
        labels = ["pred"]
    else:
        labels = [c.model_config.variant for c in ckpts]
        if labels[0] == labels[1]:
            labels = [f"{labels[0]}_1", f"{labels[1]}_2"]
    fields = {"gt": u_i}
    for label, ckpt in zip(labels, ckpts):
        fields[label] = ckpt.build_model().predict(a_i)[0]
    report = spectra(fields)
    stats = {
        "grid": list(report.grid),
        "norm": report.norm,
        "parseval_residual": {k: report.parseval_residual(k) for k in report.series},
        "high_shell_energy_ratio": {k: high_shell_energy_ratio(report, k) for k in labels},
        "high_shell_k_min": max(1, min(report.grid) // 4),
    }
    out = Path(args.out if args.out is not None else "spectrum.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    comments = [
        f"E(k) = sum of |c|^2 over modes with round(|k'|) = k; {SPECTRUM_NORM}-normalized DFT, "
        "so each column sums to sum(x^2)",
        f"sample {args.index} of {args.dataset}",
    ]
    _write_csv(out, ["k"] + [f"E_{s}" for s in report.series], report.rows(), comments)
    _write_json(out.with_suffix(".json"), stats)
    print(json.dumps(stats["high_shell_energy_ratio"], sort_keys=True))
    return EXIT_OK


def cmd_sweep(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    root = data_root(args.data)
    resolutions = sorted(args.resolutions) if args.resolutions else sorted(
        int(p.stem.split("_")[1]) for p in root.glob(f"test_*{DATASET_SUFFIX}")
    )
    if not resolutions:
        raise ValidationError(f"no test datasets found in {root}")
    missing = [str(dataset_path(root, "test", r)) for r in resolutions
               if not dataset_path(root, "test", r).is_file()]
    if missing:
        raise ValidationError(f"missing resolution files: {', '.join(missing)}")
    model = ckpt.build_model()
    errors = []
    for r in resolutions:
        a, u = _load_arrays(dataset_path(root, "test", r))
        errors.append(float(np.mean(evaluate(model, a, u))))
    train_res = ckpt.extra.get("train_resolution")
    report = SweepReport(resolutions, errors, int(train_res[0]) if train_res else None)
    out = Path(args.out if args.out is not None else "sweep.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    comments = [f"checkpoint {args.checkpoint}", f"data {root}",
                f"train_resolution {report.train_resolution}", f"threads {args.threads}"]
    _write_csv(out, ["resolution", "mean_rel_l2", "is_training_resolution"], report.rows(),
               comments)
    for row in report.rows():
        print(",".join(str(v) for v in row))
    return EXIT_OK


def cmd_bench(args) -> int:
    results = bench_mixers(args.n, args.width, args.repeats, args.seed or 0)
    rows = [[t.name, n, s] for t in results for n, s in zip(t.n, t.seconds)]
    out = Path(args.out if args.out is not None else "bench.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    comments = [f"width {args.width}", f"repeats {args.repeats} (median of runs of >= 50 ms, cache evicted per call)",
                f"seed {args.seed or 0}", f"threads {args.threads}",
                "fourier_attention grid 32 x n/32"]
    _write_csv(out, ["mixer", "n", "seconds"], rows, comments)
    for t in results:
        ratios = ", ".join(f"{r:.2f}" for r in t.doubling_ratios())
        print(f"{t.name}: doubling ratios {ratios}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value settings file")
    common.add_argument("--seed", type=int, help="overrides the config seed")
    common.add_argument("--out", help="output directory or file")
    common.add_argument("--variant", choices=VARIANTS, help="token mixer")
    common.add_argument("--threads", choices=("1", "auto"), default="1",
                        help="BLAS threads; 1 gives bit-exact replay")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    parser = argparse.ArgumentParser(prog="saot", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common], help="write Darcy datasets")
    p.set_defaults(func=cmd_generate)

    data_help = "dataset directory (default: $SAOT_DATA_DIR or ./data)"
    p = sub.add_parser("train", parents=[common], help="train one model")
    p.add_argument("--data", help=data_help)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("ablation", parents=[common], help="train each variant and tabulate")
    p.add_argument("--data", help=data_help)
    p.add_argument("--variants", nargs="+", choices=VARIANTS, default=list(VARIANTS))
    p.set_defaults(func=cmd_ablation)

    p = sub.add_parser("eval", parents=[common], help="relative L2 of a checkpoint on a dataset")
    p.add_argument("checkpoint")
    p.add_argument("dataset")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("spectrum", parents=[common], help="energy spectra of GT and predictions")
    p.add_argument("dataset")
    p.add_argument("--checkpoint", action="append", required=True,
                   help="model checkpoint; give twice (FA then WA) for three series")
    p.add_argument("--index", type=int, default=0, help="sample index")
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("sweep", parents=[common], help="error across test resolutions")
    p.add_argument("checkpoint")
    p.add_argument("--data", help=data_help)
    p.add_argument("--resolutions", type=int, nargs="+")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("bench", parents=[common], help="mixer timing versus token count")
    p.add_argument("--n", type=int, nargs="+", default=[1024, 2048, 4096, 8192])
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--repeats", type=int, default=5)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    limit = threadpool_limits(1) if args.threads == "1" else contextlib.nullcontext()
    try:
        with limit:
            return args.func(args)
    except (NumericError, DeterminismError) as exc:
        print(f"saot {args.command}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (SAOTError, ValueError, OSError) as exc:
        print(f"saot {args.command}: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
