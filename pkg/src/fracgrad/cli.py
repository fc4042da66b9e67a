"""Command-line front end.

Subcommands:

* ``bench``      -- convergence-rate protocol over a set of optimizers
* ``fns list``   -- registered objectives
* ``gridfig``    -- fractional-Jacobian grid transform as CSV
* ``meta-train`` -- train the learned optimizer and save a checkpoint
* ``lorenz``     -- Lorenz parameter recovery loss curves as CSV
* ``landscape``  -- hyperparameter sweep over the chaotic 1D loss as CSV

Exit codes: 0 on success, 2 on configuration errors, 3 on checkpoint
errors.
"""

from __future__ import annotations

import argparse
import math
import os
import sys

import numpy as np

from .bench import (BenchConfig, ConfigError, DEFAULT_LR_GRID, emit_report,
                    run_benchmark)
from .chaotic_lab import LorenzOptConfig, landscape_sweep, optimize_lorenz
from .frac_calculus import grid_transform
from .ioutil import write_csv
from .meta_optimizer import (CheckpointError, MetaTrainConfig, meta_train,
                             save_checkpoint)
from .objectives import lookup, registry

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CHECKPOINT = 3


def _build_parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(prog="fracgrad",
                                  description=__doc__.splitlines()[0])
    sub = top.add_subparsers(dest="command", required=True)

    b = sub.add_parser("bench", help="run the convergence-rate benchmark")
    b.add_argument("--config", help="key = value config file (see README)")
    b.add_argument("--fn", help="target objective name")
    b.add_argument("--opt", help="comma list of optimizer specs, e.g. "
                                 "gd,adam,fracgd,meta:ckpt.json")
    b.add_argument("--n-starts", type=int)
    b.add_argument("--horizon", type=int)
    b.add_argument("--eps", type=float)
    b.add_argument("--lr-grid", help="comma list of learning rates")
    b.add_argument("--seed", type=int)
    b.add_argument("--out", help="output directory")

    f = sub.add_parser("fns", help="objective registry")
    f.add_argument("action", choices=["list"])

    g = sub.add_parser("gridfig", help="fractional-Jacobian grid transform")
    g.add_argument("--alpha", type=float, required=True)
    g.add_argument("--grid-min", type=float, required=True)
    g.add_argument("--grid-max", type=float, required=True)
    g.add_argument("--grid-n", type=int, required=True)
    g.add_argument("--out", required=True)

    m = sub.add_parser("meta-train", help="train the learned optimizer")
    m.add_argument("--regime", choices=["with", "without"], required=True)
    m.add_argument("--target", required=True)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--out", required=True)
    m.add_argument("--outer-steps", type=int, default=2000)
    m.add_argument("--inner-steps", type=int, default=20)
    m.add_argument("--batch", type=int, default=64)

    lz = sub.add_parser("lorenz", help="Lorenz parameter recovery")
    lz.add_argument("--update", choices=["gd", "fgf"], required=True)
    lz.add_argument("--estimator", choices=["tbtt", "es"], required=True)
    lz.add_argument("--alpha", type=float, default=0.95)
    lz.add_argument("--lr", type=float, default=0.006)
    lz.add_argument("--iters", type=int, default=100)
    lz.add_argument("--seed", type=int, default=0)
    lz.add_argument("--out", required=True)

    ls = sub.add_parser("landscape", help="hyperparameter sweep on chaotic1d")
    ls.add_argument("--method", choices=["momentum", "fgf"], required=True)
    ls.add_argument("--axis1", required=True,
                    help="name:lo:hi:n[:log], e.g. momentum:0:0.984375:64")
    ls.add_argument("--axis2", required=True,
                    help="name:lo:hi:n[:log], e.g. lr:-3:0:64:log")
    ls.add_argument("--horizon", type=int, default=300)
    ls.add_argument("--x0", type=float, default=2.0)
    ls.add_argument("--out", required=True)
    return top


def _parse_axis(spec: str):
    parts = spec.split(":")
    if len(parts) not in (4, 5):
        raise ConfigError(f"axis spec {spec!r} is not name:lo:hi:n[:log]")
    name, lo, hi, n = parts[0], float(parts[1]), float(parts[2]), int(parts[3])
    if n < 1:
        raise ConfigError(f"axis {spec!r} needs at least one value")
    if len(parts) == 5:
        if parts[4] != "log":
            raise ConfigError(f"unknown axis scale {parts[4]!r}")
        values = np.logspace(lo, hi, n)
    else:
        values = np.linspace(lo, hi, n)
    return name, values


def _read_config_file(path: str) -> dict:
    """Flat ``key = value`` lines; '#' starts a comment."""
    out = {}
    try:
        with open(path) as fh:
            for lineno, raw in enumerate(fh, 1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                key, eq, val = line.partition("=")
                if not eq:
                    raise ConfigError(f"{path}:{lineno}: expected key = value")
                out[key.strip()] = val.strip()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return out


def _bench_config(args) -> tuple[BenchConfig, str]:
    raw: dict = {}
    if args.config:
        raw.update(_read_config_file(args.config))
    if args.fn:
        raw["fn"] = args.fn
    if args.opt:
        raw["optimizers"] = args.opt
    if args.n_starts is not None:
        raw["n_starts"] = str(args.n_starts)
    if args.horizon is not None:
        raw["horizon"] = str(args.horizon)
    if args.eps is not None:
        raw["eps"] = str(args.eps)
    if args.lr_grid:
        raw["lr_grid"] = args.lr_grid
    if args.seed is not None:
        raw["seed"] = str(args.seed)
    if args.out:
        raw["out"] = args.out

    if "fn" not in raw:
        raise ConfigError("no target function (--fn or fn = ... in config)")
    if "out" not in raw:
        raise ConfigError("no output directory (--out or out = ... in config)")
    try:
        lookup(raw["fn"])
    except KeyError as exc:
        raise ConfigError(str(exc)) from exc

    def _num(key, cast, default):
        if key not in raw:
            return default
        try:
            return cast(raw[key])
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {raw[key]!r}") from exc

    lr_grid = DEFAULT_LR_GRID
    if "lr_grid" in raw:
        try:
            lr_grid = tuple(float(v) for v in raw["lr_grid"].split(",") if v.strip())
        except ValueError as exc:
            raise ConfigError(f"bad lr_grid {raw['lr_grid']!r}") from exc
    optimizers = tuple(s.strip() for s in raw.get("optimizers", "gd").split(",")
                       if s.strip())
    cfg = BenchConfig(
        target_fn=raw["fn"],
        optimizers=optimizers,
        n_starts=_num("n_starts", int, 1000),
        horizon=_num("horizon", int, 1000),
        eps=_num("eps", float, 1e-3),
        lr_grid=lr_grid,
        seed=_num("seed", int, 0),
    )
    return cfg, raw["out"]


def _cmd_bench(args) -> int:
    cfg, out_dir = _bench_config(args)
    report = run_benchmark(cfg)
    paths = emit_report(report, out_dir)
    for r in report.results:
        lr = "-" if r.best_lr is None else f"{r.best_lr:g}"
        print(f"{r.label}: rate {100 * r.convergence_rate:.2f}%  "
              f"mean length {r.mean_truncated_length:.3f}  lr {lr}")
    print(f"wrote {paths['summary']}, {paths['trajectories']}, {paths['report']}")
    return EXIT_OK


def _cmd_fns(args) -> int:
    rows = []
    for fn in registry():
        box = "; ".join(f"[{lo:g}, {hi:g}]" for lo, hi in fn.domain)
        mins = ", ".join("(" + ", ".join(f"{c:g}" for c in p) + ")"
                         for p in fn.global_min_points)
        rows.append((fn.name, fn.dim, box, fn.global_min_value, mins))
    widths = [max(len(str(r[i])) for r in rows + [("name", "dim", "domain",
                                                   "f*", "argmin")])
              for i in range(5)]
    header = ("name", "dim", "domain", "f*", "argmin")
    print("  ".join(str(h).ljust(w) for h, w in zip(header, widths)))
    for r in rows:
        print("  ".join(str(c).ljust(w) for c, w in zip(r, widths)))
    return EXIT_OK


def _cmd_gridfig(args) -> int:
    if args.grid_min <= 0:
        raise ConfigError("grid must lie in the positive quadrant")
    if args.grid_n < 1:
        raise ConfigError("grid-n must be >= 1")
    pairs = grid_transform((args.grid_min, args.grid_max, args.grid_n),
                           args.alpha)
    write_csv(args.out, ["in_x", "in_y", "out_x", "out_y"],
              [(ix, iy, ox, oy) for (ix, iy), (ox, oy) in pairs])
    print(f"wrote {len(pairs)} grid points to {args.out}")
    return EXIT_OK


def _cmd_meta_train(args) -> int:
    regime = "with_supervision" if args.regime == "with" else "without_supervision"
    try:
        target = lookup(args.target)
    except KeyError as exc:
        raise ConfigError(str(exc)) from exc
    cfg = MetaTrainConfig(regime=regime, target_fn=args.target,
                          outer_steps=args.outer_steps,
                          inner_steps=args.inner_steps,
                          batch_starts=args.batch, seed=args.seed)
    # "with supervision" trains on the target function itself; "without"
    # trains on every other registered function of the same dimension
    pool = [target] if regime == "with_supervision" else registry()
    net, record = meta_train(cfg, pool)
    save_checkpoint(net, args.out, train_config=record["config"])
    final = record["meta_loss_curve"][-1] if record["meta_loss_curve"] else float("nan")
    print(f"trained {cfg.outer_steps} outer steps on "
          f"{', '.join(record['batch_functions'])}; final mean step loss "
          f"{final:.4f}")
    print(f"wrote checkpoint to {args.out}")
    return EXIT_OK


def _cmd_lorenz(args) -> int:
    cfg = LorenzOptConfig(update=args.update, estimator=args.estimator,
                          alpha=args.alpha, lr=args.lr, iters=args.iters,
                          seed=args.seed)
    result = optimize_lorenz(cfg)
    write_csv(args.out, ["iter", "loss", "log_sigma", "log_rho"],
              [(int(it), result.losses[i], result.params[i, 0],
                result.params[i, 1])
               for i, it in enumerate(result.iters)])
    tag = "diverged at iter %d" % result.diverged_at \
        if result.diverged_at is not None else "completed"
    est = args.estimator if args.estimator != "es" else "es (NRES stand-in)"
    print(f"{args.update}+{est}: {tag}; final loss "
          f"{result.losses[-1]:.6g}")
    print(f"wrote {args.out}")
    return EXIT_OK


def _cmd_landscape(args) -> int:
    axis1 = _parse_axis(args.axis1)
    axis2 = _parse_axis(args.axis2)
    grid = landscape_sweep(lookup("chaotic1d"), axis1, axis2, args.horizon,
                           method=args.method, x0=args.x0)
    rows = []
    for i, v1 in enumerate(grid.axis1[1]):
        for j, v2 in enumerate(grid.axis2[1]):
            rows.append((v1, v2, grid.final_f[i, j], int(grid.diverged[i, j])))
    write_csv(args.out, [grid.axis1[0], grid.axis2[0], "final_f", "diverged"],
              rows)
    print(f"wrote {len(rows)} cells to {args.out}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "bench": _cmd_bench,
        "fns": _cmd_fns,
        "gridfig": _cmd_gridfig,
        "meta-train": _cmd_meta_train,
        "lorenz": _cmd_lorenz,
        "landscape": _cmd_landscape,
    }
    try:
        return handlers[args.command](args)
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except (ConfigError, ValueError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
