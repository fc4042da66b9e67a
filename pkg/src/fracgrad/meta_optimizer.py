"""Learned optimizer: a small MLP that picks the derivative order and
step size for every update.

The network sees the current iterate, the normalized gradient, the
gradient magnitude and a Fourier encoding of the iterate, and emits
(alpha_t, eta_t).  The iterate then moves along the first-order
surrogate of the order-alpha derivative:

    X_{t+1} = X_t - eta_t * (f(X_t)/Gamma(1-alpha_t)
                             + alpha_t dx grad f(X_t)/Gamma(alpha_t))

Meta-training minimizes the per-step log ratio
log f(X_{t+1}) - log f(X_t) with AdamW on the network parameters.  The
meta-gradient is fully analytic (no autodiff dependency): the chain runs
through the update step via digamma terms, then back through the MLP.
X_t itself is treated as a constant at every step (one-step truncation),
which matches the per-step loss and sidesteps unstable long backprop
through the unroll.

Two training regimes are supported through the function pool handed to
:func:`meta_train`: "with_supervision" trains on the pool as given
(typically just the target function), "without_supervision" removes the
target from the pool so the target is never seen during training.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .frac_calculus import digamma_fn, recip_gamma
from .ioutil import dumps_json
from .objectives import ObjectiveFn, lookup, shifted_gap

__all__ = [
    "MetaNet",
    "MetaTrainConfig",
    "CheckpointError",
    "init_net",
    "fourier_features",
    "forward",
    "forward_batch",
    "meta_step_batch",
    "meta_loss",
    "meta_gradient",
    "unrolled_gradient",
    "meta_train",
    "save_checkpoint",
    "load_checkpoint",
]

HIDDEN_WIDTH = 64
FREQ_PER_DIM = 16
FOURIER_SCALE = 1.0
ETA_MAX = 1.0
# head bias at init: alpha starts at 0.5, eta starts small so the first
# outer steps do not fling iterates out of the domain
_INIT_ETA_BIAS = -6.0
# training-rollout hygiene: iterates this many domain-widths out are
# treated as dead, and per-sample loss derivatives are norm-capped
_TRAIN_ESCAPE_FACTOR = 100.0
_DXN_CAP = 1e3


class CheckpointError(RuntimeError):
    """Checkpoint file missing, unparseable, or structurally wrong."""


@dataclass
class MetaNet:
    """Fourier frequency matrix plus MLP parameters.

    ``fourier_b`` is frozen: it is drawn once at init and never trained.
    ``weights[i]`` has shape (fan_in, fan_out); two tanh hidden layers
    feed a 2-unit head, squashed to alpha in (0, 1) and
    eta in (0, eta_max) by logistics.
    """

    fourier_b: np.ndarray
    weights: list
    biases: list
    eta_max: float = ETA_MAX
    taylor_dx: float = 1.0

    @property
    def dim(self) -> int:
        return self.fourier_b.shape[1]

    def params(self) -> list:
        return list(self.weights) + list(self.biases)

    def copy(self) -> "MetaNet":
        return MetaNet(self.fourier_b.copy(),
                       [w.copy() for w in self.weights],
                       [b.copy() for b in self.biases],
                       self.eta_max, self.taylor_dx)


@dataclass(frozen=True)
class MetaTrainConfig:
    regime: str                      # "with_supervision" | "without_supervision"
    target_fn: str
    inner_steps: int = 20
    batch_starts: int = 64
    outer_steps: int = 2000
    adamw_lr: float = 1e-3
    adamw_beta1: float = 0.9
    adamw_beta2: float = 0.999
    adamw_weight_decay: float = 1e-4
    grad_clip: float = 10.0
    unroll_window: int = 0        # 0: flow through the whole inner unroll;
                                  # 1: one-step truncation (iterate detached)
    persistent_starts: bool = True  # carry optimizee iterates across outer
                                    # steps so training sees the same
                                    # late-horizon states evaluation does
    reset_prob: float = 0.02
    reset_gap: float = 1e-9
    head_noise: float = 0.0       # exploration noise on head pre-activations
                                  # during training rollouts, annealed to 0
    snapshot_every: int = 0       # 0: return the final net; otherwise keep
                                  # the snapshot with the best validation
                                  # convergence (pool functions only)
    snapshot_horizon: int = 300
    snapshot_starts: int = 64
    bc_steps: int = 0             # lookahead-teacher bootstrap iterations
                                  # before the meta-loss phase (0: off)
    bc_unroll: int = 20
    seed: int = 0
    eta_max: float = ETA_MAX
    taylor_dx: float = 1.0

    def __post_init__(self):
        if self.regime not in ("with_supervision", "without_supervision"):
            raise ValueError(f"unknown regime {self.regime!r}")
        if self.inner_steps < 1 or self.batch_starts < 1 or self.outer_steps < 0:
            raise ValueError("inner_steps and batch_starts must be >= 1, "
                             "outer_steps >= 0")
        if self.unroll_window < 0:
            raise ValueError("unroll_window must be >= 0")


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def init_net(dim: int, rng: np.random.Generator, hidden: int = HIDDEN_WIDTH,
             freq_per_dim: int = FREQ_PER_DIM, eta_max: float = ETA_MAX,
             taylor_dx: float = 1.0,
             fourier_scale: float = FOURIER_SCALE) -> MetaNet:
    """Fresh network for iterates of dimension ``dim``.

    Hidden layers get scaled-normal init; the output head starts at zero
    weights with the eta bias pushed low, so every input initially maps
    to alpha = 0.5 and a small eta.  ``fourier_scale`` is the standard
    deviation of the frozen frequencies: larger values let the policy
    resolve finer spatial structure in the iterate.
    """
    m = freq_per_dim * dim
    fourier_b = fourier_scale * rng.standard_normal((m, dim))
    n_in = 2 * dim + 1 + 2 * m
    sizes = [n_in, hidden, hidden, 2]
    weights, biases = [], []
    for i in range(3):
        fan_in, fan_out = sizes[i], sizes[i + 1]
        if i < 2:
            w = rng.standard_normal((fan_in, fan_out)) / math.sqrt(fan_in)
        else:
            w = np.zeros((fan_in, fan_out))
        weights.append(w)
        biases.append(np.zeros(fan_out))
    biases[2][1] = _INIT_ETA_BIAS
    return MetaNet(fourier_b, weights, biases, eta_max, taylor_dx)


def fourier_features(x, fourier_b: np.ndarray) -> np.ndarray:
    """[sin(2 pi B x), cos(2 pi B x)] for x of shape (..., d)."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != fourier_b.shape[1]:
        raise ValueError(f"x has dim {x.shape[-1]}, frequency matrix expects "
                         f"{fourier_b.shape[1]}")
    phase = 2.0 * np.pi * (x @ fourier_b.T)
    return np.concatenate([np.sin(phase), np.cos(phase)], axis=-1)


def _assemble_input(net: MetaNet, x: np.ndarray, grad: np.ndarray) -> np.ndarray:
    gnorm = np.linalg.norm(grad, axis=-1, keepdims=True)
    # direction of a vanishing gradient is defined as the zero vector
    safe = np.where(gnorm > 1e-12, gnorm, 1.0)
    ghat = np.where(gnorm > 1e-12, grad / safe, 0.0)
    return np.concatenate([x, ghat, gnorm, fourier_features(x, net.fourier_b)],
                          axis=-1)


def forward_batch(net: MetaNet, x, grad, z_noise=None):
    """(alpha, eta, cache) for a batch of iterates/gradients (n, d).

    ``z_noise`` (n, 2), when given, is added to the head pre-activations;
    training rollouts use it for exploration.  Gradients stay exact for
    the realized noise since it enters as an additive constant.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    grad = np.atleast_2d(np.asarray(grad, dtype=float))
    u = _assemble_input(net, x, grad)
    w1, w2, w3 = net.weights
    b1, b2, b3 = net.biases
    h1 = np.tanh(u @ w1 + b1)
    h2 = np.tanh(h1 @ w2 + b2)
    # cap the head pre-activations: the logistic must stay strictly inside
    # (0, 1) in floating point, and gamma/digamma of 1 - alpha must not hit
    # the pole at exactly 0
    z_raw = h2 @ w3 + b3
    if z_noise is not None:
        z_raw = z_raw + z_noise
    z = np.clip(z_raw, -30.0, 30.0)
    alpha = _sigmoid(z[:, 0])
    eta = net.eta_max * _sigmoid(z[:, 1])
    cache = {"u": u, "h1": h1, "h2": h2, "alpha": alpha, "eta": eta,
             "unclipped": np.abs(z_raw) < 30.0}
    return alpha, eta, cache


def forward(net: MetaNet, x, grad) -> tuple[float, float]:
    """Per-step prediction (alpha_t, eta_t) for a single iterate."""
    alpha, eta, _ = forward_batch(net, np.asarray(x)[None, :],
                                  np.asarray(grad)[None, :])
    return float(alpha[0]), float(eta[0])


def _surrogate_step(net: MetaNet, fn: ObjectiveFn, x, f_val, grad, alpha, eta):
    # X' = X - eta * (rg(1-a) f + a dx rg(a) grad), batched over rows
    ra1 = recip_gamma(1.0 - alpha)
    ra = recip_gamma(alpha)
    direction = (ra1 * f_val)[:, None] + (alpha * ra * net.taylor_dx)[:, None] * grad
    return x - eta[:, None] * direction, direction


def meta_step_batch(net: MetaNet, fn: ObjectiveFn, x, f_val=None, grad=None):
    """Apply the learned update to a batch of iterates; returns (x_next,
    alpha, eta).  Used both by training unrolls and benchmark rollouts;
    callers that already hold f(x) and grad f(x) can pass them in."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    f_val = fn.eval(x) if f_val is None else np.asarray(f_val, dtype=float)
    grad = fn.grad(x) if grad is None else np.asarray(grad, dtype=float)
    alpha, eta, _ = forward_batch(net, x, grad)
    x_next, _ = _surrogate_step(net, fn, x, f_val, grad, alpha, eta)
    return x_next, alpha, eta


def meta_loss(fn: ObjectiveFn, x_t, alpha: float, eta: float,
              taylor_dx: float = 1.0) -> float:
    """Per-step log ratio log f(X_{t+1}) - log f(X_t), gap-shifted.

    Gaps to the global minimum are floored at a tiny constant before the
    log since most registered minima are exactly zero.
    """
    x_t = np.asarray(x_t, dtype=float)
    f_t = float(fn.eval(x_t))
    grad = fn.grad(x_t)
    ra1 = recip_gamma(1.0 - alpha)
    ra = recip_gamma(alpha)
    direction = ra1 * f_t + alpha * ra * taylor_dx * grad
    x_next = x_t - eta * direction
    f_next = float(fn.eval(x_next))
    return float(np.log(shifted_gap(fn, f_next)) - np.log(shifted_gap(fn, f_t)))


def _zero_grads(net: MetaNet) -> list:
    return [np.zeros_like(p) for p in net.params()]


def _backward_batch(net: MetaNet, fn: ObjectiveFn, x, cache,
                    f_val=None, grad=None):
    """Summed parameter gradient of the per-step meta-loss over a batch.

    Returns (grads, losses, x_next).  Rows whose update lands on a
    non-finite value (or exactly on the gap floor) contribute zero
    gradient; their loss is reported as nan.
    """
    w1, w2, w3 = net.weights
    alpha, eta = cache["alpha"], cache["eta"]
    u, h1, h2 = cache["u"], cache["h1"], cache["h2"]

    with np.errstate(all="ignore"):
        f_val = fn.eval(x) if f_val is None else f_val
        grad = fn.grad(x) if grad is None else grad
        x_next, direction = _surrogate_step(net, fn, x, f_val, grad, alpha, eta)

        f_next = fn.eval(np.where(np.isfinite(x_next), x_next, 0.0))
        finite = np.isfinite(f_next) & np.all(np.isfinite(x_next), axis=-1)
        gap_next = shifted_gap(fn, np.where(finite, f_next, 1.0))
        gap_now = shifted_gap(fn, f_val)
        losses = np.where(finite, np.log(gap_next) - np.log(gap_now), np.nan)

        # dL/dX_{t+1} = grad f(X_{t+1}) / gap;  zero where the gap clamps
        grad_next = fn.grad(np.where(np.isfinite(x_next), x_next, 0.0))
        live = finite & (f_next - fn.global_min_value > 0.0) \
            & np.all(np.isfinite(grad_next), axis=-1)
        dxn = np.where(live[:, None], grad_next / gap_next[:, None], 0.0)
        # cap the per-sample upstream derivative so one pathological step
        # cannot swamp the batch gradient
        norms = np.linalg.norm(dxn, axis=-1, keepdims=True)
        dxn = np.where(norms > _DXN_CAP, dxn * (_DXN_CAP / norms), dxn)

    # heads: dL/deta and dL/dalpha through the update step
    dl_deta = -np.sum(dxn * direction, axis=-1)
    ra1 = recip_gamma(1.0 - alpha)
    ra = recip_gamma(alpha)
    psi1 = digamma_fn(1.0 - alpha)
    psi = digamma_fn(alpha)
    ddir_dalpha = (f_val * psi1 * ra1)[:, None] \
        + (net.taylor_dx * ra * (1.0 - alpha * psi))[:, None] * grad
    dl_dalpha = -eta * np.sum(dxn * ddir_dalpha, axis=-1)

    dz = _head_seed(net, alpha, eta, dl_dalpha, dl_deta, cache["unclipped"])
    grads = _mlp_param_grads(net, cache, dz)
    return grads, losses, x_next


def _head_seed(net, alpha, eta, dl_dalpha, dl_deta, unclipped):
    # logistic heads; the pre-activation clip is flat, so saturated rows
    # pass no gradient
    dz = np.empty((alpha.shape[0], 2))
    dz[:, 0] = dl_dalpha * alpha * (1.0 - alpha)
    s2 = eta / net.eta_max
    dz[:, 1] = dl_deta * net.eta_max * s2 * (1.0 - s2)
    dz *= unclipped
    return dz


def _mlp_param_grads(net, cache, dz):
    """Parameter gradients for a batch of head seeds dz (n, 2), summed."""
    w1, w2, w3 = net.weights
    u, h1, h2 = cache["u"], cache["h1"], cache["h2"]
    dw3 = h2.T @ dz
    db3 = dz.sum(axis=0)
    dh2 = (dz @ w3.T) * (1.0 - h2 * h2)
    dw2 = h1.T @ dh2
    db2 = dh2.sum(axis=0)
    dh1 = (dh2 @ w2.T) * (1.0 - h1 * h1)
    dw1 = u.T @ dh1
    db1 = dh1.sum(axis=0)
    return [dw1, dw2, dw3, db1, db2, db3]


def _mlp_input_grads(net, cache):
    """Per-sample gradients of the two head pre-activations w.r.t. the
    input vector: a pair of (n, n_in) arrays (z1 = alpha head, z2 = eta
    head), honoring the head clip."""
    w1, w2, w3 = net.weights
    h1, h2 = cache["h1"], cache["h2"]
    unclipped = cache["unclipped"]
    out = []
    for k in range(2):
        dz = np.zeros((h1.shape[0], 2))
        dz[:, k] = unclipped[:, k].astype(float)
        dh2 = (dz @ w3.T) * (1.0 - h2 * h2)
        dh1 = (dh2 @ w2.T) * (1.0 - h1 * h1)
        out.append(dh1 @ w1.T)
    return out


def _input_jacobian(net, x, grad, hess):
    """d(input vector)/d(iterate): (n, n_in, d).

    Blocks: identity for the raw iterate, the normalized-gradient and
    magnitude blocks run through the objective Hessian, and the Fourier
    block differentiates the sinusoids.  Rows with a vanishing gradient
    treat the normalized-gradient/magnitude inputs as constant.
    """
    n, d = x.shape
    m = net.fourier_b.shape[0]
    n_in = 2 * d + 1 + 2 * m
    jac = np.zeros((n, n_in, d))
    jac[:, :d, :] = np.eye(d)

    gnorm = np.linalg.norm(grad, axis=-1)
    ok = gnorm > 1e-12
    safe = np.where(ok, gnorm, 1.0)
    gg = grad[:, :, None] * grad[:, None, :]
    proj = np.eye(d)[None] / safe[:, None, None] - gg / safe[:, None, None] ** 3
    jac[:, d:2 * d, :] = np.where(ok[:, None, None],
                                  np.einsum("nij,njk->nik", proj, hess), 0.0)
    hg = np.einsum("nij,nj->ni", hess, grad)
    jac[:, 2 * d, :] = np.where(ok[:, None], hg / safe[:, None], 0.0)

    phase = 2.0 * np.pi * (x @ net.fourier_b.T)
    jac[:, 2 * d + 1:2 * d + 1 + m, :] = \
        2.0 * np.pi * np.cos(phase)[:, :, None] * net.fourier_b[None, :, :]
    jac[:, 2 * d + 1 + m:, :] = \
        -2.0 * np.pi * np.sin(phase)[:, :, None] * net.fourier_b[None, :, :]
    return jac


# ---------------------------------------------------------------------------
# lookahead teacher: per-state (alpha, eta) chosen by a short search
# ---------------------------------------------------------------------------

TEACHER_ALPHAS = np.linspace(0.05, 0.999, 24)
TEACHER_ETAS = np.logspace(-4.0, np.log10(0.999), 28)
_TEACHER_TOPK = 12


def lookahead_teacher(fn: ObjectiveFn, x, eta_max: float = ETA_MAX,
                      taylor_dx: float = 1.0):
    """Two-step-lookahead action search over an (alpha, eta) grid.

    For each row of ``x``, scores every grid action by the best objective
    value reachable after one follow-up grid action (keeping the top
    one-step candidates only) and returns the winning (alpha, eta) per
    row.  Pure objective evaluations; used to bootstrap meta-training
    past the myopic plateau that one-step signals cannot leave.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n, d = x.shape
    alphas = TEACHER_ALPHAS
    etas = eta_max * TEACHER_ETAS
    ra1 = recip_gamma(1.0 - alphas)
    rab = alphas * recip_gamma(alphas)
    n_act = alphas.size * etas.size

    def candidates(states):
        # all grid actions applied to each state: (m, n_act, d)
        with np.errstate(all="ignore"):
            f_val = fn.eval(states)
            grad = fn.grad(states)
            direction = ra1[:, None, None] * f_val[None, :, None] \
                + (rab * taylor_dx)[:, None, None] * grad[None, :, :]
            cand = states[None, None, :, :] \
                - etas[None, :, None, None] * direction[:, None, :, :]
        return np.moveaxis(cand.reshape(alphas.size * etas.size, -1, d),
                           0, 1)

    with np.errstate(all="ignore"):
        f0 = fn.eval(x)
        c1 = candidates(x)                              # (n, n_act, d)
        f1 = fn.eval(c1)
        f1 = np.where(np.isfinite(f1), f1, np.inf)
        top = np.argsort(f1, axis=1)[:, :_TEACHER_TOPK]  # (n, topk)
        states2 = np.take_along_axis(c1, top[:, :, None], axis=1)
        flat2 = states2.reshape(-1, d)
        c2 = candidates(flat2)
        f2 = fn.eval(c2)
        f2 = np.where(np.isfinite(f2), f2, np.inf)
        best2 = f2.min(axis=1).reshape(n, _TEACHER_TOPK)
        f1_top = np.take_along_axis(f1, top, axis=1)
        value = np.minimum(best2, f1_top)
        # near-ties in the lookahead value are everywhere; resolving the
        # argmin toward the largest step keeps the action field smooth
        # enough for a network to imitate
        v_best = value.min(axis=1, keepdims=True)
        slack = v_best + 0.05 * np.maximum(f0[:, None] - v_best, 0.0) + 1e-12
        _, e_of_top = np.unravel_index(top, (alphas.size, etas.size))
        eta_score = np.where(value <= slack, etas[e_of_top], -1.0)
        choice = np.argmax(eta_score, axis=1)
        pick = np.take_along_axis(top, choice[:, None], axis=1)[:, 0]
    a_idx, e_idx = np.unravel_index(pick, (alphas.size, etas.size))
    return alphas[a_idx], etas[e_idx]


def _logit(p):
    return np.log(p) - np.log1p(-p)


_BC_BUFFER_CAP = 60_000
_BC_MINIBATCH = 512
_BC_UPDATES_PER_ITER = 8


def _bootstrap_clone(net: MetaNet, pool, cfg, rng, params, mstate, vstate):
    """DAgger-style cloning of the lookahead teacher.

    Rolls the current policy, labels the visited states with the teacher,
    and regresses the head pre-activations onto the teacher's actions in
    logit space.  Labeled states accumulate in a replay buffer so each
    (expensive) labeling pass funds several regression updates.  Returns
    the number of AdamW updates applied.
    """
    updates = 0
    target_dim = pool[0].dim
    escapes = [(_TRAIN_ESCAPE_FACTOR * float(np.max(np.abs(f.domain))))
               for f in pool]
    buf_x = np.empty((0, target_dim))
    buf_g = np.empty((0, target_dim))
    buf_z = np.empty((0, 2))
    for it in range(cfg.bc_steps):
        fn_idx = rng.integers(0, len(pool), size=cfg.batch_starts)
        starts = np.empty((cfg.batch_starts, target_dim))
        for i, j in enumerate(fn_idx):
            dom = pool[j].domain
            starts[i] = rng.uniform(dom[:, 0], dom[:, 1])
        for j in range(len(pool)):
            rows = np.nonzero(fn_idx == j)[0]
            if rows.size == 0:
                continue
            fn = pool[j]
            x = starts[rows]
            # half the rows follow the current policy (corrective labels on
            # its own visits), half follow the teacher (coverage of the
            # states good play actually reaches)
            as_teacher = np.zeros(x.shape[0], dtype=bool)
            as_teacher[::2] = True
            states = [x.copy()]
            with np.errstate(all="ignore"):
                for _ in range(cfg.bc_unroll - 1):
                    x_next, _, _ = meta_step_batch(net, fn, x)
                    a_t, e_t = lookahead_teacher(fn, x, net.eta_max,
                                                 net.taylor_dx)
                    ra1 = recip_gamma(1.0 - a_t)
                    rab = a_t * recip_gamma(a_t)
                    d_t = (ra1 * fn.eval(x))[:, None] \
                        + (rab * net.taylor_dx)[:, None] * fn.grad(x)
                    x_teach = x - e_t[:, None] * d_t
                    x_next = np.where(as_teacher[:, None], x_teach, x_next)
                    ok = np.all(np.isfinite(x_next), axis=-1) \
                        & np.all(np.abs(x_next) <= escapes[j], axis=-1)
                    x = np.where(ok[:, None], x_next, x)
                    states.append(x.copy())
            # label a strided subsample of the visited states
            batch = np.concatenate(states[::2], axis=0)
            a_star, e_star = lookahead_teacher(fn, batch, net.eta_max,
                                               net.taylor_dx)
            z_target = np.stack([_logit(a_star),
                                 _logit(e_star / net.eta_max)], axis=1)
            with np.errstate(all="ignore"):
                f_val = fn.eval(batch)
                grad = fn.grad(batch)
            keep = np.isfinite(f_val) & np.all(np.isfinite(grad), axis=-1)
            buf_x = np.concatenate([buf_x, batch[keep]])[-_BC_BUFFER_CAP:]
            buf_g = np.concatenate([buf_g, grad[keep]])[-_BC_BUFFER_CAP:]
            buf_z = np.concatenate([buf_z, z_target[keep]])[-_BC_BUFFER_CAP:]
        if buf_x.shape[0] == 0:
            continue
        for _ in range(_BC_UPDATES_PER_ITER):
            take = rng.integers(0, buf_x.shape[0],
                                size=min(_BC_MINIBATCH, buf_x.shape[0]))
            _, _, cache = forward_batch(net, buf_x[take], buf_g[take])
            z_raw = cache["h2"] @ net.weights[2] + net.biases[2]
            dz = (z_raw - buf_z[take]) / take.size
            grads = _mlp_param_grads(net, cache, dz)
            updates += 1
            _adamw_update(params, grads, mstate, vstate, updates, cfg)
    return updates


def meta_gradient(net: MetaNet, fn: ObjectiveFn, x_t) -> list:
    """Analytic gradient of the per-step meta-loss at x_t w.r.t. all
    network parameters, ordered as ``net.params()``.

    This is the one-step form: the iterate is a constant and only the
    (alpha, eta) prediction carries the gradient.  Training additionally
    propagates through the iterate across steps; see
    :func:`unrolled_gradient`.
    """
    x = np.asarray(x_t, dtype=float)[None, :]
    _, _, cache = forward_batch(net, x, fn.grad(x))
    grads, _, _ = _backward_batch(net, fn, x, cache)
    return grads


def _segment_roll(net: MetaNet, fn: ObjectiveFn, x0, steps: int, escape: float,
                  z_noise=None):
    """Unroll ``steps`` learned updates with a tape for reverse mode.

    Rows whose iterate leaves the escape region (or hits a non-finite
    value/gradient) freeze in place and stop contributing.  ``z_noise``
    (n, 2) is a per-trajectory head offset held fixed across the steps,
    so exploration perturbs the policy coherently along a rollout.
    Returns (tape, x_final, losses) where losses is (n, steps) with nan
    entries for frozen rows.
    """
    n = x0.shape[0]
    x = np.array(x0, dtype=float)
    act_prev = np.ones(n, dtype=bool)
    tape = []
    losses = np.full((n, steps), np.nan)
    for t in range(steps):
        with np.errstate(all="ignore"):
            f_val = fn.eval(x)
            grad = fn.grad(x)
            act = act_prev & np.isfinite(f_val) \
                & np.all(np.isfinite(grad), axis=-1) \
                & np.all(np.abs(x) <= escape, axis=-1)
            safe_x = np.where(act[:, None], x, 0.0)
            f_safe = np.where(act, f_val, 1.0)
            g_safe = np.where(act[:, None], grad, 0.0)
            alpha, eta, cache = forward_batch(net, safe_x, g_safe, z_noise)
            x_next, direction = _surrogate_step(net, fn, safe_x, f_safe,
                                                g_safe, alpha, eta)
            f_next = fn.eval(np.where(np.isfinite(x_next), x_next, 0.0))
            ok = act & np.isfinite(f_next) & np.all(np.isfinite(x_next), axis=-1)
            losses[ok, t] = (np.log(shifted_gap(fn, f_next))
                             - np.log(shifted_gap(fn, f_safe)))[ok]
        tape.append({"x": safe_x, "f": f_safe, "g": g_safe, "alpha": alpha,
                     "eta": eta, "cache": cache, "direction": direction,
                     "act": ok})
        x = np.where(ok[:, None], x_next, x)
        act_prev = act_prev & ok
    return tape, x, losses


def _segment_backward(net: MetaNet, fn: ObjectiveFn, tape, x_end):
    """Reverse pass over one segment tape.

    The sum of per-step log-ratio losses over a segment telescopes to
    log gap(X_end) - log gap(X_start); with the segment start detached
    the adjoint seeds at the final iterate and flows back through every
    update, including the dependence of (alpha, eta) on the iterate.
    Returns the summed parameter gradients.
    """
    grads = _zero_grads(net)
    n, d = x_end.shape
    with np.errstate(all="ignore"):
        f_end = fn.eval(x_end)
        g_end = fn.grad(x_end)
        gap_end = shifted_gap(fn, np.where(np.isfinite(f_end), f_end, 1.0))
        live = np.isfinite(f_end) & (f_end - fn.global_min_value > 0.0) \
            & np.all(np.isfinite(g_end), axis=-1)
        lam = np.where(live[:, None], g_end / gap_end[:, None], 0.0)
        lam = _cap_rows(lam, _DXN_CAP)

        for rec in reversed(tape):
            act = rec["act"]
            if not act.any():
                continue
            x, f_val, grad = rec["x"], rec["f"], rec["g"]
            alpha, eta = rec["alpha"], rec["eta"]
            cache, direction = rec["cache"], rec["direction"]
            lam_act = np.where(act[:, None], lam, 0.0)

            ra1 = recip_gamma(1.0 - alpha)
            ra = recip_gamma(alpha)
            psi1 = digamma_fn(1.0 - alpha)
            psi = digamma_fn(alpha)
            ddir_dalpha = (f_val * psi1 * ra1)[:, None] \
                + (net.taylor_dx * ra * (1.0 - alpha * psi))[:, None] * grad

            dl_deta = -np.sum(lam_act * direction, axis=-1)
            dl_dalpha = -eta * np.sum(lam_act * ddir_dalpha, axis=-1)
            dz = _head_seed(net, alpha, eta, dl_dalpha, dl_deta,
                            cache["unclipped"])
            for acc, g in zip(grads, _mlp_param_grads(net, cache, dz)):
                acc += g

            # adjoint through the iterate: X' = X - eta * D(X, alpha(X))
            hess = fn.hess(x)
            lam_sum = np.sum(lam_act, axis=-1)
            lam_ddx = ra1[:, None] * lam_sum[:, None] * grad \
                + (alpha * ra * net.taylor_dx)[:, None] \
                * np.einsum("nij,ni->nj", hess, lam_act)
            du_dx = _input_jacobian(net, x, grad, hess)
            du_alpha, du_eta = _mlp_input_grads(net, cache)
            dalpha_dx = (alpha * (1.0 - alpha))[:, None] \
                * np.einsum("ni,nid->nd", du_alpha, du_dx)
            s2 = eta / net.eta_max
            deta_dx = (net.eta_max * s2 * (1.0 - s2))[:, None] \
                * np.einsum("ni,nid->nd", du_eta, du_dx)
            lam_dot_d = np.sum(lam_act * direction, axis=-1)
            lam_dot_da = np.sum(lam_act * ddir_dalpha, axis=-1)
            lam_new = lam - (lam_dot_d[:, None] * deta_dx
                             + eta[:, None] * lam_ddx
                             + (eta * lam_dot_da)[:, None] * dalpha_dx)
            lam = np.where(act[:, None], lam_new, lam)
            lam = _cap_rows(lam, _DXN_CAP)
    return grads


def _cap_rows(v, cap):
    norms = np.linalg.norm(v, axis=-1, keepdims=True)
    with np.errstate(invalid="ignore"):
        v = np.where(norms > cap, v * (cap / norms), v)
    return np.where(np.isfinite(v), v, 0.0)


def unrolled_gradient(net: MetaNet, fn: ObjectiveFn, x0, steps: int,
                      window: int, escape: float = np.inf, z_noise=None):
    """Parameter gradient of the summed per-step meta-losses over an
    unroll, with gradient flow through the iterate cut every ``window``
    steps.  window=1 reduces to accumulated one-step gradients; larger
    windows credit updates for payoff further down the trajectory.

    Returns (grads, losses, x_final); gradients are sums over rows and
    steps, losses (n, steps).
    """
    x = np.atleast_2d(np.asarray(x0, dtype=float))
    grads = _zero_grads(net)
    losses = np.empty((x.shape[0], 0))
    done = 0
    while done < steps:
        w = min(window, steps - done)
        tape, x, seg_losses = _segment_roll(net, fn, x, w, escape, z_noise)
        seg = _segment_backward(net, fn, tape, x)
        for acc, g in zip(grads, seg):
            acc += g
        losses = np.concatenate([losses, seg_losses], axis=1)
        done += w
    return grads, losses, x


def _rollout_metric(net: MetaNet, pool, starts_by_fn, horizon: int,
                    eps: float = 1e-3):
    """Validation score of bare learned-update rollouts over fixed
    per-function start sets: (mean convergence rate, -mean truncated
    length, -mean log gap at stop).  The log-gap term keeps the score
    discriminative when few rollouts fully converge."""
    rates, lengths, gaps = [], [], []
    with np.errstate(all="ignore"):
        for fn, starts in zip(pool, starts_by_fn):
            x = starts.copy()
            n = x.shape[0]
            conv = np.full(n, horizon, dtype=float)
            done = np.zeros(n, dtype=bool)
            for t in range(horizon):
                f_val = fn.eval(x)
                hit = ~done & (np.abs(f_val - fn.global_min_value) <= eps)
                conv[hit] = t
                done |= hit
                if done.all():
                    break
                x_next, _, _ = meta_step_batch(net, fn, x)
                keep = done[:, None] | ~np.isfinite(x_next)
                x = np.where(keep, x, x_next)
            f_val = fn.eval(x)
            ok = np.isfinite(f_val)
            log_gap = np.where(ok, np.log(shifted_gap(fn, np.where(ok, f_val,
                                                                   1.0))),
                               np.log(1e30))
            rates.append(done.mean())
            lengths.append(conv.mean())
            gaps.append(log_gap.mean())
    return (float(np.mean(rates)), -float(np.mean(lengths)),
            -float(np.mean(gaps)))


def _adamw_update(params, grads, mstate, vstate, t, cfg: MetaTrainConfig):
    b1, b2 = cfg.adamw_beta1, cfg.adamw_beta2
    for p, g, m, v in zip(params, grads, mstate, vstate):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        p *= 1.0 - cfg.adamw_lr * cfg.adamw_weight_decay
        p -= cfg.adamw_lr * m_hat / (np.sqrt(v_hat) + 1e-8)


def meta_train(cfg: MetaTrainConfig, pool: list[ObjectiveFn]):
    """Train a network over the function pool; returns (net, record).

    Every outer step samples ``batch_starts`` (function, start) pairs
    from the pool, unrolls ``inner_steps`` learned updates, accumulates
    the analytic per-step loss gradients (iterates detached), and applies
    one AdamW update.  Single-threaded and bitwise deterministic in the
    seed.

    ``record`` carries the mean-loss curve, the set of function names
    that ever appeared in a batch, and an echo of the configuration.
    """
    target = lookup(cfg.target_fn)
    pool = [fn for fn in pool if fn.dim == target.dim]
    if cfg.regime == "without_supervision":
        pool = [fn for fn in pool if fn.name != cfg.target_fn]
        if len(pool) < 1:
            raise ValueError("without_supervision needs at least one "
                             "non-target function in the pool")
    if not pool:
        raise ValueError("empty training pool")

    rng = np.random.default_rng(cfg.seed)
    net = init_net(target.dim, rng, eta_max=cfg.eta_max, taylor_dx=cfg.taylor_dx)
    params = net.params()
    mstate = [np.zeros_like(p) for p in params]
    vstate = [np.zeros_like(p) for p in params]

    loss_curve = []
    seen_functions: set[str] = set()
    dead_total = 0
    escapes = np.array([_TRAIN_ESCAPE_FACTOR * float(np.max(np.abs(f.domain)))
                        for f in pool])
    window = cfg.unroll_window or cfg.inner_steps

    fn_idx = np.zeros(cfg.batch_starts, dtype=int)
    batch_x = np.zeros((cfg.batch_starts, target.dim))
    need_reset = np.ones(cfg.batch_starts, dtype=bool)

    # validation starts for snapshot selection come from a stream separate
    # from training so the training draw sequence is unaffected
    best_net = None
    best_score = None
    best_at = None
    if cfg.snapshot_every > 0:
        val_rng = np.random.default_rng(np.random.SeedSequence(
            entropy=cfg.seed, spawn_key=(0x5E1EC7,)))
        val_starts = [val_rng.uniform(f.domain[:, 0], f.domain[:, 1],
                                      size=(cfg.snapshot_starts, f.dim))
                      for f in pool]

    bc_updates = 0
    if cfg.bc_steps > 0:
        bc_updates = _bootstrap_clone(net, pool, cfg, rng, params, mstate,
                                      vstate)
        seen_functions.update(f.name for f in pool)
        # the moment buffers served the regression loss; the meta phase
        # starts its own
        for m, v in zip(mstate, vstate):
            m[:] = 0.0
            v[:] = 0.0
        if cfg.snapshot_every > 0:
            best_score = _rollout_metric(net, pool, val_starts,
                                         cfg.snapshot_horizon)
            best_net = net.copy()
            best_at = 0

    for outer in range(cfg.outer_steps):
        # fixed per-step rng consumption keeps the stream deterministic
        fresh_fn = rng.integers(0, len(pool), size=cfg.batch_starts)
        fresh_unit = rng.random((cfg.batch_starts, target.dim))
        reset_draw = rng.random(cfg.batch_starts)
        if cfg.persistent_starts:
            need_reset |= reset_draw < cfg.reset_prob
        else:
            need_reset[:] = True
        fn_idx = np.where(need_reset, fresh_fn, fn_idx)
        for j in range(len(pool)):
            rows = need_reset & (fn_idx == j)
            if rows.any():
                dom = pool[j].domain
                batch_x[rows] = dom[:, 0] + fresh_unit[rows] * (dom[:, 1]
                                                                - dom[:, 0])

        total = _zero_grads(net)
        loss_sum = 0.0
        loss_n = 0
        denom = cfg.batch_starts * cfg.inner_steps
        need_reset = np.zeros(cfg.batch_starts, dtype=bool)

        noise = cfg.head_noise * max(0.0, 1.0 - outer
                                     / max(1, int(0.8 * cfg.outer_steps)))
        # one head offset per trajectory, held over the unroll, so an
        # exploration draw perturbs the policy coherently
        z_noise_all = noise * rng.standard_normal((cfg.batch_starts, 2)) \
            if cfg.head_noise > 0.0 else None
        for j in range(len(pool)):
            rows = np.nonzero(fn_idx == j)[0]
            if rows.size == 0:
                continue
            fn = pool[j]
            seen_functions.add(fn.name)
            z_noise = None if z_noise_all is None or noise == 0.0 \
                else z_noise_all[rows]
            grads, losses, x_end = unrolled_gradient(net, fn, batch_x[rows],
                                                     cfg.inner_steps, window,
                                                     escapes[j],
                                                     z_noise=z_noise)
            for acc, g in zip(total, grads):
                acc += g
            ok = np.isfinite(losses)
            loss_sum += float(np.sum(losses[ok]))
            loss_n += int(np.sum(ok))
            dead_total += int(np.sum(~ok))
            batch_x[rows] = x_end
            # retire trajectories that died or finished
            with np.errstate(all="ignore"):
                f_end = fn.eval(x_end)
                solved = shifted_gap(fn, np.where(np.isfinite(f_end), f_end,
                                                  1.0)) <= cfg.reset_gap
            dead = ~np.isfinite(f_end) | ~np.all(np.isfinite(x_end), axis=-1) \
                | np.any(np.abs(x_end) > escapes[j], axis=-1)
            need_reset[rows] = solved | dead

        for acc in total:
            acc /= denom
        gnorm = math.sqrt(sum(float(np.sum(g * g)) for g in total))
        if cfg.grad_clip > 0 and gnorm > cfg.grad_clip:
            for acc in total:
                acc *= cfg.grad_clip / gnorm
        _adamw_update(params, total, mstate, vstate, outer + 1, cfg)
        loss_curve.append(loss_sum / max(loss_n, 1))

        if cfg.snapshot_every > 0 and (outer + 1) % cfg.snapshot_every == 0:
            score = _rollout_metric(net, pool, val_starts,
                                    cfg.snapshot_horizon)
            if best_score is None or score > best_score:
                best_score = score
                best_net = net.copy()
                best_at = outer + 1

    if best_net is not None:
        final_score = _rollout_metric(net, pool, val_starts,
                                      cfg.snapshot_horizon)
        if final_score > best_score:
            best_net, best_score, best_at = net, final_score, cfg.outer_steps
        net = best_net

    record = {
        "meta_loss_curve": loss_curve,
        "batch_functions": sorted(seen_functions),
        "dead_rollout_steps": dead_total,
        "bc_updates": bc_updates,
        "selected_outer_step": best_at,
        "selected_score": None if best_score is None else list(best_score),
        "config": {
            "regime": cfg.regime,
            "target_fn": cfg.target_fn,
            "inner_steps": cfg.inner_steps,
            "batch_starts": cfg.batch_starts,
            "outer_steps": cfg.outer_steps,
            "adamw_lr": cfg.adamw_lr,
            "adamw_beta1": cfg.adamw_beta1,
            "adamw_beta2": cfg.adamw_beta2,
            "adamw_weight_decay": cfg.adamw_weight_decay,
            "grad_clip": cfg.grad_clip,
            "unroll_window": cfg.unroll_window,
            "persistent_starts": cfg.persistent_starts,
            "reset_prob": cfg.reset_prob,
            "head_noise": cfg.head_noise,
            "snapshot_every": cfg.snapshot_every,
            "bc_steps": cfg.bc_steps,
            "bc_unroll": cfg.bc_unroll,
            "seed": cfg.seed,
            "eta_max": cfg.eta_max,
            "taylor_dx": cfg.taylor_dx,
            "pool": [fn.name for fn in pool],
        },
    }
    return net, record


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_VERSION = 1


def save_checkpoint(net: MetaNet, path, train_config: dict | None = None) -> None:
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "package_version": __version__,
        "dim": net.dim,
        "eta_max": net.eta_max,
        "taylor_dx": net.taylor_dx,
        "fourier_b": net.fourier_b,
        "weights": [w for w in net.weights],
        "biases": [b for b in net.biases],
        "train_config": train_config or {},
    }
    with open(path, "w", newline="\n") as fh:
        fh.write(dumps_json(doc) + "\n")


def load_checkpoint(path) -> MetaNet:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"checkpoint {path} is not valid JSON: {exc}") from exc
    try:
        if doc["format_version"] != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version "
                                  f"{doc['format_version']}")
        net = MetaNet(
            fourier_b=np.asarray(doc["fourier_b"], dtype=float),
            weights=[np.asarray(w, dtype=float) for w in doc["weights"]],
            biases=[np.asarray(b, dtype=float) for b in doc["biases"]],
            eta_max=float(doc["eta_max"]),
            taylor_dx=float(doc["taylor_dx"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"checkpoint {path} is malformed: {exc}") from exc
    if len(net.weights) != 3 or len(net.biases) != 3:
        raise CheckpointError(f"checkpoint {path} has wrong layer count")
    return net
