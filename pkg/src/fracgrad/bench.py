"""Convergence-rate benchmark harness.

Protocol: sample ``n_starts`` start points from the objective's domain,
run each optimizer for up to ``horizon`` steps, and call a trajectory
converged once the objective value sits within ``eps`` of the global
minimum.  Learning-rate methods are swept over a log grid and the best
run is reported (highest convergence rate; ties fall to shorter mean
trajectory, then smaller lr).  Start points are shared across all
optimizers of a run so that comparisons are paired.

The truncated trajectory length of a run is the first step index at
which the convergence test holds (states X_0..X_H are tested, 0-based)
or the horizon H if it never does; the report metadata states this.

Everything is deterministic in the config seed: per-trajectory start
points come from spawned child streams, trajectory stepping has no
randomness, and aggregation order is fixed.  ``FRACGRAD_THREADS`` caps
the worker threads used for sweeping the lr grid; results are identical
under any thread count.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .ioutil import dumps_json, write_csv
from .meta_optimizer import MetaNet, load_checkpoint, meta_step_batch
from .objectives import ObjectiveFn, lookup, sample_start
from .optimizers import (BASELINE_KINDS, baseline_step, frac_gd_step,
                         fgf_step, make_state, subset_state)
from .frac_calculus import FracConfig

__all__ = [
    "BenchConfig",
    "OptimizerResult",
    "RunReport",
    "ConfigError",
    "DEFAULT_LR_GRID",
    "converged",
    "parse_optimizer_spec",
    "run_benchmark",
    "emit_report",
    "worker_count",
]

DEFAULT_LR_GRID = (1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6)

LR_BASED_KINDS = BASELINE_KINDS + ("frac_gd", "fgf")


class ConfigError(ValueError):
    """Benchmark configuration is malformed."""


@dataclass(frozen=True)
class BenchConfig:
    target_fn: str
    optimizers: tuple = ("gd",)
    n_starts: int = 1000
    horizon: int = 1000
    eps: float = 1e-3
    lr_grid: tuple = DEFAULT_LR_GRID
    seed: int = 0

    def __post_init__(self):
        if self.n_starts < 1:
            raise ConfigError(f"n_starts must be >= 1, got {self.n_starts}")
        if self.eps <= 0:
            raise ConfigError(f"eps must be > 0, got {self.eps}")
        if self.horizon < 0:
            raise ConfigError(f"horizon must be >= 0, got {self.horizon}")
        if not self.optimizers:
            pass  # an empty optimizer list is allowed; reports are header-only
        if not self.lr_grid and any(
                parse_optimizer_spec(s)[0] in LR_BASED_KINDS
                for s in self.optimizers):
            raise ConfigError("lr_grid must be nonempty for lr-based methods")


def worker_count() -> int:
    """Worker cap from FRACGRAD_THREADS (default 1)."""
    raw = os.environ.get("FRACGRAD_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _parallel_map(fn, items):
    workers = worker_count()
    items = list(items)
    if workers == 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def converged(f_val, f_min: float, eps: float):
    """|f - f*| <= eps, boundary inclusive; False for nan/inf values."""
    with np.errstate(invalid="ignore"):
        return np.abs(np.asarray(f_val) - f_min) <= eps


# ---------------------------------------------------------------------------
# optimizer specs:  "adam", "fracgd:alpha=0.5", "meta:/path/to/ckpt.json"
# ---------------------------------------------------------------------------

_SPEC_ALIASES = {"fracgd": "frac_gd", "momentum": "momentum_gd"}


def parse_optimizer_spec(spec: str):
    """Split an optimizer spec string into (kind, params).

    ``meta:<path>`` carries the checkpoint path in params["checkpoint"];
    other kinds accept comma-separated key=value overrides after a colon.
    """
    spec = spec.strip()
    if spec.startswith("meta"):
        rest = spec[4:]
        path = rest[1:] if rest.startswith(":") else None
        return "meta", {"checkpoint": path}
    name, _, tail = spec.partition(":")
    kind = _SPEC_ALIASES.get(name, name)
    from .optimizers import KINDS
    if kind not in KINDS:
        raise ConfigError(f"unknown optimizer spec {spec!r}")
    params = {}
    if tail:
        for piece in tail.split(","):
            key, eq, val = piece.partition("=")
            if not eq:
                raise ConfigError(f"malformed optimizer parameter {piece!r} "
                                  f"in {spec!r}")
            try:
                params[key.strip()] = float(val)
            except ValueError as exc:
                raise ConfigError(f"bad value in optimizer spec {spec!r}") from exc
    return kind, params


# ---------------------------------------------------------------------------
# vectorized trajectory engine
# ---------------------------------------------------------------------------

class _BaselineStepper:
    def __init__(self, kind: str, hyper: dict):
        self.kind = kind
        self.hyper = hyper

    def init(self, x0):
        return make_state(self.kind, x0, **self.hyper)

    @staticmethod
    def iterate(state):
        return state.iterate

    def step(self, state, f_val, grad):
        if self.kind == "frac_gd":
            return frac_gd_step(state, f_val, grad)
        if self.kind == "fgf":
            return fgf_step(state, grad)
        return baseline_step(state, grad)

    @staticmethod
    def subset(state, keep):
        return subset_state(state, keep)


class _MetaStepper:
    def __init__(self, net: MetaNet, fn: ObjectiveFn):
        self.net = net
        self.fn = fn

    def init(self, x0):
        return np.array(x0, dtype=float)

    @staticmethod
    def iterate(state):
        return state

    def step(self, state, f_val, grad):
        x_next, _, _ = meta_step_batch(self.net, self.fn, state,
                                       f_val=f_val, grad=grad)
        return x_next

    @staticmethod
    def subset(state, keep):
        return state[keep]


def _run_trajectories(fn: ObjectiveFn, stepper, starts: np.ndarray,
                      horizon: int, eps: float):
    n = starts.shape[0]
    conv_at = np.full(n, horizon, dtype=int)
    hit_flag = np.zeros(n, dtype=bool)
    final_f = np.full(n, np.nan)
    active = np.arange(n)
    state = stepper.init(starts)

    with np.errstate(all="ignore"):
        for t in range(horizon + 1):
            f_val = fn.eval(stepper.iterate(state))
            hit = converged(f_val, fn.global_min_value, eps)
            if hit.any():
                done = active[hit]
                conv_at[done] = t
                hit_flag[done] = True
                final_f[done] = f_val[hit]
                keep = ~hit
                active = active[keep]
                state = stepper.subset(state, keep)
                f_val = f_val[keep]
            if active.size == 0:
                break
            if t == horizon:
                final_f[active] = f_val
                break
            grad = fn.grad(stepper.iterate(state))
            state = stepper.step(state, f_val, grad)
    return conv_at, hit_flag, final_f


# ---------------------------------------------------------------------------
# report types and the protocol driver
# ---------------------------------------------------------------------------

@dataclass
class OptimizerResult:
    label: str
    kind: str
    best_lr: float | None
    convergence_rate: float
    mean_truncated_length: float
    converged_at: np.ndarray
    converged: np.ndarray
    final_f: np.ndarray


@dataclass
class RunReport:
    target_fn: str
    starts: np.ndarray
    results: list
    config: dict = field(default_factory=dict)
    version: str = __version__


def _make_stepper(kind, params, fn, lr, meta_net):
    if kind == "meta":
        return _MetaStepper(meta_net, fn)
    hyper = dict(params)
    if kind == "frac_gd":
        alpha = hyper.pop("alpha", 0.5)
        taylor_dx = hyper.pop("taylor_dx", 1.0)
        hyper["frac"] = FracConfig(alpha=alpha, taylor_dx=taylor_dx)
    hyper["lr"] = lr
    return _BaselineStepper(kind, hyper)


def run_benchmark(cfg: BenchConfig, meta_checkpoint: MetaNet | None = None) -> RunReport:
    """Full protocol over cfg.optimizers; returns the aggregated report.

    ``meta_checkpoint`` supplies the network for bare "meta" specs;
    "meta:<path>" specs load their own checkpoint file.
    """
    fn = lookup(cfg.target_fn)
    streams = np.random.SeedSequence(cfg.seed).spawn(cfg.n_starts)
    starts = np.stack([sample_start(fn, np.random.default_rng(s))
                       for s in streams])

    parsed = [(spec, *parse_optimizer_spec(spec)) for spec in cfg.optimizers]

    results = []
    for spec, kind, params in parsed:
        if kind == "meta":
            path = params.get("checkpoint")
            if path is not None:
                net = load_checkpoint(path)
            elif meta_checkpoint is not None:
                net = meta_checkpoint
            else:
                raise ConfigError(f"optimizer {spec!r} needs a checkpoint")
            if net.dim != fn.dim:
                raise ConfigError(f"checkpoint dim {net.dim} does not match "
                                  f"{fn.name} dim {fn.dim}")
            stepper = _MetaStepper(net, fn)
            conv_at, flags, final_f = _run_trajectories(
                fn, stepper, starts, cfg.horizon, cfg.eps)
            results.append(OptimizerResult(
                label=spec, kind=kind, best_lr=None,
                convergence_rate=float(flags.mean()),
                mean_truncated_length=float(conv_at.mean()),
                converged_at=conv_at, converged=flags, final_f=final_f))
            continue

        def one_lr(lr, kind=kind, params=params):
            stepper = _make_stepper(kind, params, fn, lr, None)
            return _run_trajectories(fn, stepper, starts, cfg.horizon, cfg.eps)

        sweeps = _parallel_map(one_lr, cfg.lr_grid)
        ranked = []
        for lr, (conv_at, flags, final_f) in zip(cfg.lr_grid, sweeps):
            ranked.append((-flags.mean(), conv_at.mean(), lr,
                           (conv_at, flags, final_f)))
        ranked.sort(key=lambda r: r[:3])
        neg_rate, mean_len, best_lr, (conv_at, flags, final_f) = ranked[0]
        results.append(OptimizerResult(
            label=spec, kind=kind, best_lr=best_lr,
            convergence_rate=-neg_rate,
            mean_truncated_length=mean_len,
            converged_at=conv_at, converged=flags, final_f=final_f))

    config_echo = {
        "target_fn": cfg.target_fn,
        "optimizers": list(cfg.optimizers),
        "n_starts": cfg.n_starts,
        "horizon": cfg.horizon,
        "eps": cfg.eps,
        "lr_grid": list(cfg.lr_grid),
        "seed": cfg.seed,
        "truncated_length_definition":
            "first step index t in [0, horizon] with |f(X_t) - f*| <= eps, "
            "else horizon",
    }
    return RunReport(target_fn=cfg.target_fn, starts=starts, results=results,
                     config=config_echo)


def emit_report(report: RunReport, out_dir) -> dict:
    """Write summary.csv, trajectories.csv and report.json under out_dir.

    Returns the paths written.  Output is byte-deterministic: fixed row
    order (optimizer config order, then trajectory index) and floats at
    17 significant digits.
    """
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "summary": os.path.join(out_dir, "summary.csv"),
        "trajectories": os.path.join(out_dir, "trajectories.csv"),
        "report": os.path.join(out_dir, "report.json"),
    }

    write_csv(paths["summary"],
              ["optimizer", "best_lr", "convergence_rate",
               "mean_truncated_length"],
              [(r.label, r.best_lr, r.convergence_rate,
                r.mean_truncated_length) for r in report.results])

    dim = report.starts.shape[1] if report.starts.size else 0
    start_cols = [f"start_{i}" for i in range(dim)]
    rows = []
    for r in report.results:
        for i in range(report.starts.shape[0]):
            rows.append((r.label, i,
                         *[report.starts[i, j] for j in range(dim)],
                         r.converged_at[i], int(r.converged[i]),
                         r.final_f[i]))
    write_csv(paths["trajectories"],
              ["optimizer", "trajectory", *start_cols, "converged_at",
               "converged", "final_f"],
              rows)

    doc = {
        "version": report.version,
        "target_fn": report.target_fn,
        "config": report.config,
        "summary": [
            {
                "optimizer": r.label,
                "kind": r.kind,
                "best_lr": r.best_lr,
                "convergence_rate": r.convergence_rate,
                "mean_truncated_length": r.mean_truncated_length,
            }
            for r in report.results
        ],
    }
    with open(paths["report"], "w", newline="\n") as fh:
        fh.write(dumps_json(doc) + "\n")
    return paths
