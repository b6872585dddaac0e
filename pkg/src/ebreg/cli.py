"""Command-line experiment runner.

Subcommands: gen-demos, train, eval-policy, fit-function,
compare-variants, sparsity. Every command writes result.json (full
resolved spec + metrics) into --out; re-running the same spec and seed
reproduces the metrics bit-exactly. Exits nonzero with a one-line
reason on any error.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from .bundles import load_policy, save_policy
from .data import load_trajectories, save_trajectories
from .envs import FUNCTION_KINDS, ParticleEnv, make_function_task
from .harness import (
    EBM_VARIANTS,
    METHODS,
    ResultRecord,
    demos_to_dataset,
    evaluate_function_fit,
    evaluate_policy,
    generate_demos,
    make_estimator,
    sparsity_analysis,
    variant_comparison,
    write_csv,
)


def _add_env_args(p):
    p.add_argument("--n", type=int, required=True, help="particle dimensionality N")
    p.add_argument("--dt", type=float, default=0.05)
    p.add_argument("--k-p", type=float, default=10.0)
    p.add_argument("--k-d", type=float, default=None)
    p.add_argument("--radius", type=float, default=0.05)
    p.add_argument("--horizon", type=int, default=200)


def _env_from(args) -> ParticleEnv:
    return ParticleEnv(args.n, dt=args.dt, k_p=args.k_p, k_d=args.k_d,
                       radius=args.radius, horizon=args.horizon)


def _load_overrides(path):
    if path is None:
        return {}
    with open(path) as fh:
        return json.load(fh)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _emit(out: Path, spec: dict, metrics: dict, started: float, per_seed=None):
    record = ResultRecord(
        spec=spec, metrics=metrics, per_seed=per_seed or [],
        wall_clock_s=time.time() - started,
    )
    (out / "result.json").write_text(record.to_json())


def cmd_gen_demos(args):
    started = time.time()
    out = _out_dir(args)
    env = _env_from(args)
    demos = generate_demos(env, args.n_demos, args.seed)
    save_trajectories(out / "demos.jsonl", demos)
    metrics = {
        "n_demos": len(demos),
        "all_success": bool(all(t.success for t in demos)),
        "mean_length": float(np.mean([len(t) for t in demos])),
    }
    spec = {"command": "gen-demos", "env": env.config_dict(),
            "n_demos": args.n_demos, "seed": args.seed}
    _emit(out, spec, metrics, started)
    print(f"wrote {len(demos)} demos to {out / 'demos.jsonl'}")


def cmd_train(args):
    started = time.time()
    out = _out_dir(args)
    overrides = _load_overrides(args.train_config)
    demos = load_trajectories(args.demos)
    dataset = demos_to_dataset(demos, history=args.history,
                               rwr_fraction=args.rwr_fraction)
    est = make_estimator(args.method, args.variant, overrides, random_state=args.seed)
    if hasattr(est, "env_limits") and args.env_limits is not None:
        n = dataset.y_dim
        est.env_limits = (np.full(n, args.env_limits[0]), np.full(n, args.env_limits[1]))
    est.fit(dataset.x, dataset.y)
    save_policy(out / "policy.json", est, args.method, history=args.history,
                demos_path=args.demos, rwr_fraction=args.rwr_fraction)
    loss_trace = getattr(est, "loss_trace_", None)
    metrics = {
        "n_train_samples": dataset.n_samples,
        "final_loss": float(np.asarray(loss_trace).ravel()[-1]) if loss_trace is not None and np.asarray(loss_trace).size else None,
    }
    spec = {
        "command": "train", "method": args.method, "variant": args.variant,
        "demos": str(args.demos), "history": args.history,
        "rwr_fraction": args.rwr_fraction, "seed": args.seed,
        "env_limits": args.env_limits, "overrides": overrides,
    }
    _emit(out, spec, metrics, started)
    print(f"trained {args.method} policy -> {out / 'policy.json'}")


def cmd_eval_policy(args):
    started = time.time()
    out = _out_dir(args)
    est, method, history = load_policy(args.policy, demos_path=args.demos)
    env = _env_from(args)
    if args.episodes < 1:
        raise ValueError("--episodes must be >= 1")
    metrics = evaluate_policy(est, env, args.episodes, args.seed, history=history)
    spec = {"command": "eval-policy", "policy": str(args.policy), "method": method,
            "env": env.config_dict(), "episodes": args.episodes, "seed": args.seed}
    _emit(out, spec, metrics, started)
    write_csv(out / "metrics.csv",
              [{"episode": i, "success": s, "steps": st}
               for i, (s, st) in enumerate(zip(metrics["episode_success"], metrics["episode_steps"]))],
              ["episode", "success", "steps"])
    print(f"success_rate={metrics['success_rate']:.3f} over {args.episodes} episodes")


def cmd_fit_function(args):
    started = time.time()
    out = _out_dir(args)
    overrides = _load_overrides(args.train_config)
    task = make_function_task(args.kind, args.n_points, seed=args.seed)
    dataset = task.sample_dataset(args.n_points, seed=args.seed)
    defaults = dict(width=64, depth=4, train_iterations=2000, batch_size=64,
                    learning_rate=5e-3, train_counter_examples=128, n_samples=1024)
    if args.method != "ebm":
        defaults = {k: v for k, v in defaults.items()
                    if k in ("width", "depth", "train_iterations", "batch_size")}
    if args.method == "nn":
        defaults = {}
    est = make_estimator(args.method, args.variant, overrides,
                         defaults=defaults, random_state=args.seed)
    est.fit(dataset.x, dataset.y)
    grid = np.linspace(args.grid_lo, args.grid_hi, args.grid_points)
    result = evaluate_function_fit(est, task, grid, tol=args.sharpness_tol)
    preds = result.pop("predictions")
    spec = {
        "command": "fit-function", "kind": args.kind, "method": args.method,
        "variant": args.variant, "n_points": args.n_points, "seed": args.seed,
        "grid": [args.grid_lo, args.grid_hi, args.grid_points],
        "sharpness_tol": args.sharpness_tol, "overrides": overrides,
    }
    _emit(out, spec, result, started)
    write_csv(out / "predictions.csv",
              [{"x": x, "prediction": p} for x, p in zip(grid, preds)],
              ["x", "prediction"])
    write_csv(out / "metrics.csv", [result],
              ["test_mse", "sharpness", "graph_distance_p95"])
    print(f"{args.kind}/{args.method}: sharpness={result['sharpness']:.3f} "
          f"mse={result['test_mse']:.5f} graph_p95={result['graph_distance_p95']:.4f}")


def cmd_compare_variants(args):
    started = time.time()
    out = _out_dir(args)
    overrides = _load_overrides(args.train_config)
    n_list = [int(v) for v in args.n_list.split(",") if v]
    methods = [m for m in args.methods.split(",") if m]
    for m in methods:
        if m not in EBM_VARIANTS and m not in METHODS:
            raise ValueError(f"unknown method {m!r}")
    rows = variant_comparison(n_list, args.n_demos, methods, args.seed,
                              n_episodes=args.episodes, overrides=overrides or None)
    write_csv(out / "metrics.csv", rows, ["n", "method", "success_rate", "n_demos", "seed"])
    spec = {"command": "compare-variants", "n_list": n_list, "methods": methods,
            "n_demos": args.n_demos, "episodes": args.episodes, "seed": args.seed,
            "overrides": overrides}
    metrics = {f"{row['method']}@n{row['n']}": row["success_rate"] for row in rows}
    _emit(out, spec, metrics, started)
    for row in rows:
        print(f"n={row['n']} {row['method']}: {row['success_rate']:.3f}")


def cmd_sparsity(args):
    started = time.time()
    out = _out_dir(args)
    n_list = [int(v) for v in args.n_list.split(",") if v]
    rows = sparsity_analysis(n_list, args.n_demos, args.seed, n_eval=args.n_eval)
    write_csv(out / "metrics.csv", rows,
              ["n", "mean_min_distance", "n_demos", "n_eval", "seed"])
    spec = {"command": "sparsity", "n_list": n_list, "n_demos": args.n_demos,
            "n_eval": args.n_eval, "seed": args.seed}
    metrics = {f"n{row['n']}": row["mean_min_distance"] for row in rows}
    _emit(out, spec, metrics, started)
    for row in rows:
        print(f"n={row['n']}: mean min distance {row['mean_min_distance']:.4f}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ebreg",
        description="energy-based regression / behavioral cloning experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-demos", help="generate scripted-oracle demonstrations")
    _add_env_args(p)
    p.add_argument("--n-demos", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_demos)

    p = sub.add_parser("train", help="train a policy on a demos file")
    p.add_argument("--demos", required=True)
    p.add_argument("--method", choices=METHODS, required=True)
    p.add_argument("--variant", choices=EBM_VARIANTS, default=None)
    p.add_argument("--train-config", default=None, help="JSON file of estimator overrides")
    p.add_argument("--history", type=int, default=1)
    p.add_argument("--rwr-fraction", type=float, default=None,
                   help="keep only the top fraction of demos by return")
    p.add_argument("--env-limits", type=float, nargs=2, default=None,
                   metavar=("LO", "HI"), help="clip target bounds to this range")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval-policy", help="closed-loop evaluation of a saved policy")
    p.add_argument("--policy", required=True)
    p.add_argument("--demos", default=None, help="demos file for nearest-neighbor bundles")
    _add_env_args(p)
    p.add_argument("--episodes", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval_policy)

    p = sub.add_parser("fit-function", help="train and evaluate on a 1-D function suite")
    p.add_argument("--kind", choices=FUNCTION_KINDS, required=True)
    p.add_argument("--method", choices=METHODS, required=True)
    p.add_argument("--variant", choices=EBM_VARIANTS, default="dfo")
    p.add_argument("--n-points", type=int, default=200)
    p.add_argument("--grid-lo", type=float, default=-0.1)
    p.add_argument("--grid-hi", type=float, default=1.1)
    p.add_argument("--grid-points", type=int, default=1000)
    p.add_argument("--sharpness-tol", type=float, default=0.05)
    p.add_argument("--train-config", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit_function)

    p = sub.add_parser("compare-variants", help="success-rate grid over N and methods")
    p.add_argument("--n-list", required=True, help="comma-separated dims, e.g. 1,2,4")
    p.add_argument("--methods", required=True,
                   help="comma-separated: dfo,autoregressive_dfo,langevin,mse,mdn,nn")
    p.add_argument("--n-demos", type=int, default=2000)
    p.add_argument("--episodes", type=int, default=100)
    p.add_argument("--train-config", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compare_variants)

    p = sub.add_parser("sparsity", help="distance from eval starts to the demo set")
    p.add_argument("--n-list", required=True)
    p.add_argument("--n-demos", type=int, default=2000)
    p.add_argument("--n-eval", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sparsity)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except Exception as exc:  # one-line reason, nonzero exit
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
