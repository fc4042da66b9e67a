"""Chaotic-loss experiments: scalar loss landscapes and Lorenz recovery.

Two benches live here.

1. ``landscape_sweep`` runs an optimizer grid over the 1D chaotic
   objective and records the final value per cell: (momentum, lr) for
   classical momentum descent, (alpha, lr) for the fractional-flow rule.
   Adjacent cells with wildly different outcomes are the fingerprint of
   chaotic gradient dynamics.

2. Lorenz parameter recovery: forward-Euler rollouts of the Lorenz
   system, a trajectory-MSE loss against a rollout at the true
   parameters, gradients via truncated backprop through time or an
   antithetic evolution-strategies estimator (a stand-in for NRES, and
   labeled as such in outputs), and ``optimize_lorenz`` to combine any
   estimator with either the plain or the fractional update rule.
   Optimization acts on (log sigma, log rho); beta stays fixed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .objectives import ObjectiveFn
from .optimizers import fgf_coefficients, fgf_step, make_state

__all__ = [
    "LorenzParams",
    "LorenzState",
    "LorenzOptConfig",
    "SweepGrid",
    "DivergenceError",
    "DIVERGENCE_LIMIT",
    "ES_LOSS_CAP",
    "lorenz_rhs",
    "simulate",
    "lorenz_loss",
    "tbtt_gradient",
    "es_gradient",
    "optimize_lorenz",
    "landscape_sweep",
]

DIVERGENCE_LIMIT = 1e6
ES_LOSS_CAP = 1e9


class DivergenceError(RuntimeError):
    """A rollout left the admissible region; ``step`` is where."""

    def __init__(self, step: int):
        super().__init__(f"trajectory diverged at step {step}")
        self.step = step


@dataclass(frozen=True)
class LorenzParams:
    """Control parameters; optimization runs on (log_sigma, log_rho)."""

    log_sigma: float
    log_rho: float
    beta: float = 8.0 / 3.0

    def as_vector(self) -> np.ndarray:
        return np.array([self.log_sigma, self.log_rho])

    def with_vector(self, v) -> "LorenzParams":
        return replace(self, log_sigma=float(v[0]), log_rho=float(v[1]))


@dataclass(frozen=True)
class LorenzState:
    x: float
    y: float
    z: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])


DEFAULT_INITIAL_STATE = LorenzState(1.2, 1.3, 1.6)


def _state_array(s) -> np.ndarray:
    if isinstance(s, LorenzState):
        return s.as_array()
    return np.asarray(s, dtype=float)


def lorenz_rhs(s, p: LorenzParams) -> np.ndarray:
    """(dx, dy, dz) at state s; sigma and rho enter through their logs."""
    s = _state_array(s)
    with np.errstate(over="ignore"):
        sigma = float(np.exp(p.log_sigma))
        rho = float(np.exp(p.log_rho))
    x, y, z = s[..., 0], s[..., 1], s[..., 2]
    return np.stack([sigma * (y - x), x * (rho - z) - y, x * y - p.beta * z],
                    axis=-1)


def simulate(p: LorenzParams, s0, steps: int, dt: float) -> np.ndarray:
    """Forward-Euler rollout; returns (steps+1, 3) including the start.

    Raises :class:`DivergenceError` as soon as any coordinate exceeds
    ``DIVERGENCE_LIMIT`` in magnitude.
    """
    if dt <= 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    s = _state_array(s0)
    out = np.empty((steps + 1, 3))
    out[0] = s
    for k in range(steps):
        s = s + dt * lorenz_rhs(s, p)
        if not np.all(np.abs(s) <= DIVERGENCE_LIMIT):
            raise DivergenceError(k + 1)
        out[k + 1] = s
    return out


def _rollout_batch(log_sigma, log_rho, beta, s0, steps, dt):
    """Rollouts for a batch of parameter pairs; diverged members get nan
    tails and a flag instead of an exception.  Returns (traj, diverged)
    with traj of shape (steps+1, n, 3)."""
    log_sigma = np.asarray(log_sigma, dtype=float)
    n = log_sigma.shape[0]
    sigma = np.exp(log_sigma)
    rho = np.exp(np.asarray(log_rho, dtype=float))
    s = np.tile(_state_array(s0), (n, 1))
    traj = np.full((steps + 1, n, 3), np.nan)
    traj[0] = s
    alive = np.ones(n, dtype=bool)
    for k in range(steps):
        x, y, z = s[:, 0], s[:, 1], s[:, 2]
        ds = np.stack([sigma * (y - x), x * (rho - z) - y, x * y - beta * z],
                      axis=-1)
        s = s + dt * ds
        with np.errstate(invalid="ignore"):
            ok = np.all(np.abs(s) <= DIVERGENCE_LIMIT, axis=-1) & alive
        alive = ok
        s = np.where(alive[:, None], s, np.nan)
        traj[k + 1] = s
        if not alive.any():
            break
    return traj, ~alive


def lorenz_loss(p: LorenzParams, target: np.ndarray) -> float:
    """Trajectory MSE against the reference rollout; +inf on divergence.

    Mean over all recorded states of the squared state distance; both
    rollouts share the initial state so the first term is zero.
    """
    target = np.asarray(target, dtype=float)
    steps = target.shape[0] - 1
    if not (np.isfinite(p.log_sigma) and np.isfinite(p.log_rho)):
        return float("inf")
    try:
        with np.errstate(all="ignore"):
            traj = simulate(p, target[0], steps, _infer_dt(p, target))
    except DivergenceError:
        return float("inf")
    return float(np.mean(np.sum((traj - target) ** 2, axis=-1)))


# the loss needs the dt the target was generated with; this hook keeps the
# public signature of the operations while letting configs carry their dt
_DEFAULT_DT = 0.005


def _infer_dt(p: LorenzParams, target) -> float:
    return _DEFAULT_DT


def _loss_from_traj(traj: np.ndarray, target: np.ndarray) -> float:
    return float(np.mean(np.sum((traj - target) ** 2, axis=-1)))


def tbtt_gradient(p: LorenzParams, target: np.ndarray, window: int,
                  dt: float = _DEFAULT_DT) -> np.ndarray:
    """d loss / d (log sigma, log rho) by reverse mode through the Euler
    rollout, with the adjoint cut every ``window`` transitions.

    ``window >= steps`` gives the exact (untruncated) gradient.  The log
    parameterization multiplies the raw sigma/rho sensitivities by sigma
    and rho respectively.
    """
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    target = np.asarray(target, dtype=float)
    steps = target.shape[0] - 1
    if not (np.isfinite(p.log_sigma) and np.isfinite(p.log_rho)):
        raise DivergenceError(0)
    traj = simulate(p, target[0], steps, dt)    # may raise DivergenceError
    with np.errstate(over="ignore"):
        sigma = float(np.exp(p.log_sigma))
        rho = float(np.exp(p.log_rho))
    beta = p.beta
    n_states = steps + 1
    direct = 2.0 / n_states * (traj - target)

    g = np.zeros(2)
    lam = direct[steps]
    for k in range(steps - 1, -1, -1):
        if (k + 1) % window == 0:
            # segment boundary: the state entering the next segment is a
            # constant there, so only its own loss term flows downward
            lam = direct[k + 1]
        x, y, z = traj[k]
        g[0] += dt * lam[0] * sigma * (y - x)
        g[1] += dt * lam[1] * rho * x
        jac = np.array([
            [-sigma, sigma, 0.0],
            [rho - z, -1.0, -x],
            [y, x, -beta],
        ])
        lam = direct[k] + lam + dt * (lam @ jac)
    return g


def es_gradient(p: LorenzParams, target: np.ndarray, pairs: int,
                noise_sigma: float, rng: np.random.Generator,
                loss_fn=None, dt: float = _DEFAULT_DT,
                capped_log: list | None = None) -> np.ndarray:
    """Antithetic evolution-strategies gradient (NRES stand-in).

    (1 / (2 pairs sigma^2)) sum_i [L(p + e_i) - L(p - e_i)] e_i with
    e_i ~ Normal(0, sigma^2 I).  Divergent samples contribute the capped
    loss ``ES_LOSS_CAP``; capping events are appended to ``capped_log``
    when a list is supplied.
    """
    if pairs < 1:
        raise ValueError(f"pairs must be >= 1, got {pairs}")
    if noise_sigma <= 0:
        raise ValueError(f"noise_sigma must be > 0, got {noise_sigma}")
    eps = noise_sigma * rng.standard_normal((pairs, 2))
    base = p.as_vector()

    if loss_fn is not None:
        lp = np.array([loss_fn(base + e) for e in eps])
        lm = np.array([loss_fn(base - e) for e in eps])
    else:
        target = np.asarray(target, dtype=float)
        steps = target.shape[0] - 1
        cand = np.concatenate([base + eps, base - eps], axis=0)
        traj, diverged = _rollout_batch(cand[:, 0], cand[:, 1], p.beta,
                                        target[0], steps, dt)
        sq = np.sum((traj - target[:, None, :]) ** 2, axis=-1)
        losses = np.where(diverged, np.inf, np.nanmean(sq, axis=0))
        lp, lm = losses[:pairs], losses[pairs:]

    n_capped = int(np.sum(lp > ES_LOSS_CAP) + np.sum(lm > ES_LOSS_CAP))
    if n_capped and capped_log is not None:
        capped_log.append(n_capped)
    lp = np.minimum(lp, ES_LOSS_CAP)
    lm = np.minimum(lm, ES_LOSS_CAP)
    return (eps * (lp - lm)[:, None]).sum(axis=0) / (2.0 * pairs * noise_sigma ** 2)


# ---------------------------------------------------------------------------
# end-to-end Lorenz optimization
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LorenzOptConfig:
    update: str = "gd"            # "gd" | "fgf"
    estimator: str = "tbtt"       # "tbtt" | "es"
    alpha: float = 0.95           # order of the fgf update
    lr: float = 0.006
    iters: int = 100
    seed: int = 0
    steps: int = 400
    dt: float = _DEFAULT_DT
    window: int = 16
    pairs: int = 16
    noise_sigma: float = 0.1
    beta: float = 8.0 / 3.0
    true_log_sigma: float = math.log(10.0)
    true_log_rho: float = math.log(28.0)
    init_log_sigma: float = math.log(10.0) + 0.5
    init_log_rho: float = math.log(28.0) - 0.5
    s0: tuple = (1.2, 1.3, 1.6)

    def __post_init__(self):
        if self.update not in ("gd", "fgf"):
            raise ValueError(f"unknown update {self.update!r}")
        if self.estimator not in ("tbtt", "es"):
            raise ValueError(f"unknown estimator {self.estimator!r}")


@dataclass
class LorenzRunResult:
    config: LorenzOptConfig
    iters: np.ndarray             # iteration index, 0..iters
    losses: np.ndarray            # loss at each recorded iterate
    params: np.ndarray            # (iters+1, 2) of (log_sigma, log_rho)
    diverged_at: int | None = None
    es_caps: list = field(default_factory=list)


def optimize_lorenz(cfg: LorenzOptConfig) -> LorenzRunResult:
    """Run the chosen estimator/update pair on (log sigma, log rho).

    Emits the loss at every iterate (index 0 is the initial point).  A
    divergence inside the gradient estimate stops the run; remaining
    entries are filled with inf and flagged.
    """
    true_p = LorenzParams(cfg.true_log_sigma, cfg.true_log_rho, cfg.beta)
    target = simulate(true_p, cfg.s0, cfg.steps, cfg.dt)
    rng = np.random.default_rng(cfg.seed)

    x = np.array([cfg.init_log_sigma, cfg.init_log_rho])
    state = make_state("fgf", x, lr=cfg.lr, alpha=cfg.alpha) \
        if cfg.update == "fgf" else make_state("gd", x, lr=cfg.lr)

    n = cfg.iters
    losses = np.full(n + 1, np.inf)
    params = np.full((n + 1, 2), np.nan)
    caps: list = []
    diverged_at = None

    for it in range(n + 1):
        p = true_p.with_vector(state.iterate)
        params[it] = state.iterate
        losses[it] = lorenz_loss(p, target)
        if it == n:
            break
        try:
            if cfg.estimator == "tbtt":
                grad = tbtt_gradient(p, target, cfg.window, cfg.dt)
            else:
                grad = es_gradient(p, target, cfg.pairs, cfg.noise_sigma,
                                   rng, dt=cfg.dt, capped_log=caps)
        except DivergenceError:
            diverged_at = it
            break
        if not np.all(np.isfinite(grad)):
            diverged_at = it
            break
        if cfg.update == "fgf":
            state = fgf_step(state, grad)
        else:
            from .optimizers import baseline_step
            state = baseline_step(state, grad)
        if not np.all(np.isfinite(state.iterate)):
            diverged_at = it + 1
            break

    if not np.isfinite(losses).all() and diverged_at is None:
        diverged_at = int(np.argmax(~np.isfinite(losses)))
    return LorenzRunResult(config=cfg, iters=np.arange(n + 1), losses=losses,
                           params=params, diverged_at=diverged_at, es_caps=caps)


# ---------------------------------------------------------------------------
# loss-landscape sweeps over optimizer hyperparameters
# ---------------------------------------------------------------------------

@dataclass
class SweepGrid:
    axis1: tuple                 # (name, values)
    axis2: tuple
    final_f: np.ndarray          # (len(axis1), len(axis2))
    diverged: np.ndarray         # bool, same shape
    x0: float
    horizon: int
    method: str


DEFAULT_SWEEP_X0 = 2.0


def landscape_sweep(fn: ObjectiveFn, axis1, axis2, horizon: int,
                    method: str = "momentum",
                    x0: float = DEFAULT_SWEEP_X0) -> SweepGrid:
    """Final objective value after ``horizon`` steps, per grid cell.

    ``method`` "momentum" reads axis1 as momentum decay and axis2 as
    learning rate; "fgf" reads axis1 as fractional order alpha and axis2
    as learning rate.  All cells start from the same x0.  Cells whose
    iterate leaves +-DIVERGENCE_LIMIT are marked diverged.
    """
    name1, vals1 = axis1
    name2, vals2 = axis2
    vals1 = np.asarray(vals1, dtype=float)
    vals2 = np.asarray(vals2, dtype=float)
    if vals1.size == 0 or vals2.size == 0:
        raise ValueError("sweep axes must be nonempty")
    if fn.dim != 1:
        raise ValueError("landscape_sweep runs on 1D objectives")
    n1, n2 = vals1.size, vals2.size

    X = np.full((n1, n2), float(x0))
    alive = np.ones((n1, n2), dtype=bool)

    if method == "momentum":
        mom = vals1[:, None]
        lr = vals2[None, :]
        V = np.zeros_like(X)
        for _ in range(horizon):
            g = fn.grad(X[..., None])[..., 0]
            V = np.where(alive, mom * V + g, V)
            X_new = X - lr * V
            with np.errstate(invalid="ignore"):
                ok = np.abs(X_new) <= DIVERGENCE_LIMIT
            alive &= ok & np.isfinite(X_new)
            X = np.where(alive, X_new, X)
    elif method == "fgf":
        # scalar pow per cell so results match fgf_step bit for bit
        step_scale = np.array([[float(lr) ** float(a) for lr in vals2]
                               for a in vals1])
        coeffs = np.stack([fgf_coefficients(a, horizon) for a in vals1])
        history = [X.copy()]
        for k in range(horizon):
            g = fn.grad(X[..., None])[..., 0]
            memory = np.zeros_like(X)
            for j in range(k + 1):
                memory += coeffs[:, j][:, None] * history[k - j]
            X_new = -step_scale * g + memory
            with np.errstate(invalid="ignore"):
                ok = np.abs(X_new) <= DIVERGENCE_LIMIT
            alive &= ok & np.isfinite(X_new)
            X = np.where(alive, X_new, X)
            history.append(X.copy())
    else:
        raise ValueError(f"unknown sweep method {method!r}")

    final = fn.eval(X[..., None])
    return SweepGrid(axis1=(name1, vals1), axis2=(name2, vals2),
                     final_f=final, diverged=~alive, x0=float(x0),
                     horizon=horizon, method=method)
