"""Command-line interface: gen-data / train / eval.

Exit code 0 on success; on any error a single diagnostic line goes to
stderr and the exit code is nonzero. Existing bundles, checkpoints, metrics
files, and error-field dumps are never overwritten without --force.
"""
from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from .datasets import DatasetBundle, default_problem_spec
from .estimators import estimator_for_model, load_fitted
from .tensor_io import load_checkpoint, save_checkpoint, save_tensor

_DEFAULT_MODES = {"burgers": 16, "darcy": 12, "ns": 12}


def _fail(msg: str) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return 1


def _require_writable(path: Path, force: bool, what: str) -> None:
    if path.exists() and not force:
        raise FileExistsError(f"{what} already exists at {path} (use --force to overwrite)")


# ----------------------------------------------------------------- gen-data


def _cmd_gen_data(args) -> int:
    spec = default_problem_spec(
        args.problem, args.n_train, args.n_test, resolution=args.resolution,
        solve_resolution=args.solve_resolution, base_seed=args.seed,
        viscosity=args.viscosity, dt=args.dt,
    )
    bundle = None
    try:
        from .datasets import build_dataset

        bundle = build_dataset(spec, args.out, force=args.force)
    except FileExistsError as exc:
        raise
    print(f"bundle written to {args.out}")
    print(f"  problem={spec.problem} solve={spec.solve_resolution} output={spec.resolution}")
    print(f"  a_train {bundle.a_train.shape}  u_train {bundle.u_train.shape}")
    print(f"  a_test  {bundle.a_test.shape}  u_test  {bundle.u_test.shape}")
    return 0


# -------------------------------------------------------------------- train


def _estimator_overrides(args, problem: str) -> dict:
    over = {
        "epochs": args.epochs, "lr": args.lr, "batch_size": args.batch_size,
        "test_every": args.test_every, "weight_decay": args.weight_decay,
        "seed": args.seed, "precision": args.precision,
        "lr_decay_every": args.lr_decay_every, "lr_decay_rate": args.lr_decay_rate,
    }
    if args.model in ("fno", "dp-fno"):
        over["width"] = args.width
        over["modes"] = args.modes if args.modes is not None else _DEFAULT_MODES[problem]
        if args.model == "fno":
            over["depth"] = args.depth
    else:
        over["hidden"] = args.hidden
        over["basis"] = args.basis
        over["depth"] = args.depth
    if args.model in ("dp-fno", "dp-deeponet"):
        over["res_blocks"] = args.res_blocks
        over["dense_blocks"] = args.dense_blocks
        over["merge_hidden"] = args.merge_hidden
        over["merge_mode"] = args.merge_mode
    return over


def _cmd_train(args) -> int:
    bundle = DatasetBundle.load(args.data)
    out_path = Path(args.out)
    _require_writable(out_path, args.force, "checkpoint")
    if args.metrics:
        _require_writable(Path(args.metrics), args.force, "metrics file")
    over = _estimator_overrides(args, bundle.problem)
    est = estimator_for_model(args.model, grid_mode=bundle.grid_mode, **over)
    eval_set = (bundle.a_test, bundle.u_test) if bundle.a_test.shape[0] else None
    est.fit(bundle.a_train, bundle.u_train, eval_set=eval_set,
            metrics_path=args.metrics, verbose=args.verbose)
    save_checkpoint(out_path, est.state_arrays(), est.checkpoint_config())
    final_train = est.history_["train_rel_l2"][-1]
    print(f"checkpoint written to {out_path}")
    print(f"final train relative L2: {final_train:.6g}")
    tests = est.history_["test_rel_l2"]
    if tests:
        last_epoch = max(tests)
        print(f"final test relative L2:  {tests[last_epoch]:.6g} (epoch {last_epoch})")
    return 0


# --------------------------------------------------------------------- eval


def _per_sample_rel_l2(pred: np.ndarray, true: np.ndarray) -> np.ndarray:
    p = pred.reshape(pred.shape[0], -1).astype(np.float64)
    t = true.reshape(true.shape[0], -1).astype(np.float64)
    tn = np.linalg.norm(t, axis=1)
    if np.any(tn == 0):
        raise ValueError("target sample with zero norm")
    return np.linalg.norm(p - t, axis=1) / tn


def _cmd_eval(args) -> int:
    arrays, config = load_checkpoint(args.checkpoint)
    est = load_fitted(arrays, config)
    bundle = DatasetBundle.load(args.data)
    if args.split == "test":
        a, u = bundle.a_test, bundle.u_test
    else:
        a, u = bundle.a_train, bundle.u_train
    if a.shape[0] == 0:
        return _fail(f"bundle has no {args.split} samples")
    preds = []
    bs = max(1, int(est.batch_size))
    for lo in range(0, a.shape[0], bs):
        preds.append(est.predict(a[lo : lo + bs]))
    pred = np.concatenate(preds)
    errs = _per_sample_rel_l2(pred, u)
    print(f"samples: {len(errs)} ({args.split} split)")
    print(f"mean relative L2: {errs.mean():.8g}")
    if args.dump_error_fields:
        out = Path(args.dump_error_fields)
        _require_writable(out / "manifest.csv", args.force, "error-field dump")
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "manifest.csv", "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(["sample", "file", "rel_l2"])
            for i in range(pred.shape[0]):
                name = f"error_{i:04d}.dpno"
                save_tensor(out / name, np.abs(pred[i] - u[i]))
                writer.writerow([i, name, f"{errs[i]:.10g}"])
        print(f"error fields written to {out}")
    return 0


# ------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="dpno",
        description="Dual-path neural operators: data generation, training, evaluation",
    )
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a PDE dataset bundle")
    g.add_argument("--problem", required=True, choices=["burgers", "darcy", "ns"])
    g.add_argument("--n-train", type=int, required=True)
    g.add_argument("--n-test", type=int, required=True)
    g.add_argument("--resolution", type=int, default=None,
                   help="output grid (power of two; default per problem)")
    g.add_argument("--solve-resolution", type=int, default=None,
                   help="solver grid (power of two multiple of the output grid)")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--viscosity", type=float, default=None)
    g.add_argument("--dt", type=float, default=None)
    g.add_argument("--out", required=True)
    g.add_argument("--force", action="store_true")
    g.set_defaults(fn=_cmd_gen_data)

    t = sub.add_parser("train", help="train a model on a bundle")
    t.add_argument("--data", required=True, help="bundle directory")
    t.add_argument("--model", required=True,
                   choices=["fno", "deeponet", "dp-fno", "dp-deeponet"])
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--metrics", default=None, help="metrics CSV path")
    t.add_argument("--epochs", type=int, default=1000)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--batch-size", type=int, default=20)
    t.add_argument("--test-every", type=int, default=20)
    t.add_argument("--weight-decay", type=float, default=1e-4)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--precision", choices=["f32", "f64"], default="f64")
    t.add_argument("--width", type=int, default=32, help="fno channel width")
    t.add_argument("--modes", type=int, default=None,
                   help="retained modes per axis (default 16 burgers, 12 darcy/ns)")
    t.add_argument("--depth", type=int, default=4)
    t.add_argument("--hidden", type=int, default=128, help="deeponet layer width")
    t.add_argument("--basis", type=int, default=128, help="deeponet basis count")
    t.add_argument("--res-blocks", type=int, default=4)
    t.add_argument("--dense-blocks", type=int, default=3)
    t.add_argument("--merge-hidden", type=int, default=128)
    t.add_argument("--merge-mode", choices=["full", "last"], default="full")
    t.add_argument("--lr-decay-every", type=int, default=0)
    t.add_argument("--lr-decay-rate", type=float, default=1.0)
    t.add_argument("--force", action="store_true")
    t.add_argument("--verbose", action="store_true")
    t.set_defaults(fn=_cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a bundle")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", choices=["test", "train"], default="test")
    e.add_argument("--dump-error-fields", default=None,
                   help="directory for per-sample |pred - true| fields + manifest")
    e.add_argument("--force", action="store_true")
    e.set_defaults(fn=_cmd_eval)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, FileExistsError, FileNotFoundError, RuntimeError) as exc:
        return _fail(str(exc))


if __name__ == "__main__":
    sys.exit(main())
