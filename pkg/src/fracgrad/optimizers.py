"""First-order optimizers behind one functional stepping interface.

A step takes an :class:`OptimizerState` and a gradient and returns a new
state; nothing is mutated, so trajectories can be run concurrently with
shared inputs.  The iterate may be a single point of shape (d,) or a
batch of shape (n, d) -- every update rule is elementwise over the batch
(Adafactor treats each row as its own 1 x d matrix).

Besides the standard baselines this module carries two fractional rules:

* ``frac_gd_step`` -- descent along the first-order surrogate of the
  order-alpha derivative (drift + scaled gradient).
* ``fgf_step`` -- the discretized fractional gradient flow, whose update
  replaces the bare previous iterate with a binomially-weighted sum over
  the *entire* history:

      X_{k+1} = -lr^alpha grad + sum_{j=0}^{k} c_j X_{k-j},
      c_j = (-1)^j binom(alpha, j+1)

  At alpha = 1 the weights collapse to (1, 0, 0, ...) and the rule is
  exactly plain gradient descent.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .frac_calculus import FracConfig, frac_taylor_direction, gen_binomial

__all__ = [
    "OptimizerState",
    "BASELINE_KINDS",
    "KINDS",
    "make_state",
    "baseline_step",
    "frac_gd_step",
    "fgf_coefficients",
    "fgf_step",
    "subset_state",
]

BASELINE_KINDS = ("gd", "momentum_gd", "adam", "adamw", "rmsprop",
                  "adagrad", "adafactor")
KINDS = BASELINE_KINDS + ("frac_gd", "fgf")

_DEFAULT_HYPER = {
    "gd": {"lr": 0.01},
    "momentum_gd": {"lr": 0.01, "momentum": 0.9},
    "adam": {"lr": 0.001, "beta1": 0.9, "beta2": 0.999, "eps": 1e-8},
    "adamw": {"lr": 0.001, "beta1": 0.9, "beta2": 0.999, "eps": 1e-8,
              "weight_decay": 0.01},
    "rmsprop": {"lr": 0.01, "decay": 0.99, "eps": 1e-8},
    "adagrad": {"lr": 0.01, "eps": 1e-10},
    "adafactor": {"lr": 0.01, "decay_exp": 0.8, "eps1": 1e-30,
                  "clip_threshold": 1.0},
    "frac_gd": {"lr": 0.01, "frac": None},
    "fgf": {"lr": 0.01, "alpha": 1.0, "window": None},
}


@dataclass(frozen=True)
class OptimizerState:
    kind: str
    iterate: np.ndarray
    aux: dict = field(default_factory=dict)
    hyper: dict = field(default_factory=dict)
    step_count: int = 0


def make_state(kind: str, x0, **hyper) -> OptimizerState:
    """Fresh state at x0; unspecified hyperparameters take standard defaults."""
    if kind not in KINDS:
        raise ValueError(f"unknown optimizer kind {kind!r}; known: {KINDS}")
    x = np.array(x0, dtype=float)
    h = dict(_DEFAULT_HYPER[kind])
    for key, val in hyper.items():
        if key not in h:
            raise ValueError(f"{kind} does not take hyperparameter {key!r}")
        h[key] = val
    if kind == "frac_gd" and h["frac"] is None:
        h["frac"] = FracConfig(alpha=1.0)
    aux: dict = {}
    if kind == "momentum_gd":
        aux["velocity"] = np.zeros_like(x)
    elif kind in ("adam", "adamw"):
        aux["m"] = np.zeros_like(x)
        aux["v"] = np.zeros_like(x)
    elif kind == "rmsprop":
        aux["v"] = np.zeros_like(x)
    elif kind == "adagrad":
        aux["accum"] = np.zeros_like(x)
    elif kind == "adafactor":
        aux["row"] = np.zeros(x.shape[:-1] + (1,))
        aux["col"] = np.zeros_like(x)
    elif kind == "fgf":
        aux["history"] = [x.copy()]
        aux["coeffs"] = fgf_coefficients(h["alpha"], 0)
    return OptimizerState(kind=kind, iterate=x, aux=aux, hyper=h)


def _check_grad(state: OptimizerState, grad) -> np.ndarray:
    g = np.asarray(grad, dtype=float)
    if g.shape != state.iterate.shape:
        raise ValueError(f"gradient shape {g.shape} does not match iterate "
                         f"shape {state.iterate.shape}")
    return g


def baseline_step(state: OptimizerState, grad) -> OptimizerState:
    """One update of a standard first-order rule; returns the new state."""
    if state.kind not in BASELINE_KINDS:
        raise ValueError(f"{state.kind!r} is not a baseline kind")
    g = _check_grad(state, grad)
    x = state.iterate
    h = state.hyper
    t = state.step_count + 1
    aux = dict(state.aux)

    if state.kind == "gd":
        x_new = x - h["lr"] * g

    elif state.kind == "momentum_gd":
        v = h["momentum"] * aux["velocity"] + g
        aux["velocity"] = v
        x_new = x - h["lr"] * v

    elif state.kind in ("adam", "adamw"):
        m = h["beta1"] * aux["m"] + (1.0 - h["beta1"]) * g
        v = h["beta2"] * aux["v"] + (1.0 - h["beta2"]) * g * g
        aux["m"], aux["v"] = m, v
        m_hat = m / (1.0 - h["beta1"] ** t)
        v_hat = v / (1.0 - h["beta2"] ** t)
        x_new = x
        if state.kind == "adamw":
            x_new = x_new * (1.0 - h["lr"] * h["weight_decay"])
        x_new = x_new - h["lr"] * m_hat / (np.sqrt(v_hat) + h["eps"])

    elif state.kind == "rmsprop":
        v = h["decay"] * aux["v"] + (1.0 - h["decay"]) * g * g
        aux["v"] = v
        x_new = x - h["lr"] * g / (np.sqrt(v) + h["eps"])

    elif state.kind == "adagrad":
        accum = aux["accum"] + g * g
        aux["accum"] = accum
        x_new = x - h["lr"] * g / np.sqrt(accum + h["eps"])

    else:  # adafactor, parameter viewed as a 1 x d matrix per row
        beta = 1.0 - t ** (-h["decay_exp"])
        g2 = g * g + h["eps1"]
        row = beta * aux["row"] + (1.0 - beta) * np.mean(g2, axis=-1, keepdims=True)
        col = beta * aux["col"] + (1.0 - beta) * g2
        aux["row"], aux["col"] = row, col
        # factored second moment (row x col) / mean(row); with a single row
        # this collapses to col
        v_hat = col * (row / row)
        u = g / np.sqrt(v_hat)
        rms_u = np.sqrt(np.mean(u * u, axis=-1, keepdims=True))
        u = u / np.maximum(1.0, rms_u / h["clip_threshold"])
        x_new = x - h["lr"] * u

    return replace(state, iterate=x_new, aux=aux, step_count=t)


def frac_gd_step(state: OptimizerState, f_val, grad) -> OptimizerState:
    """Descent step along the order-alpha surrogate direction."""
    if state.kind != "frac_gd":
        raise ValueError(f"frac_gd_step needs a frac_gd state, got {state.kind!r}")
    g = _check_grad(state, grad)
    cfg: FracConfig = state.hyper["frac"]
    direction = frac_taylor_direction(f_val, g, cfg, x=state.iterate)
    x_new = state.iterate - state.hyper["lr"] * direction
    return replace(state, iterate=x_new, step_count=state.step_count + 1)


def fgf_coefficients(alpha: float, k: int) -> np.ndarray:
    """Memory weights c_j = (-1)^j binom(alpha, j+1) for j = 0..k.

    c_0 = alpha, and c_{j+1} = c_j (j + 1 - alpha) / (j + 2); for
    alpha in (0, 1) every weight is positive and the series sums to 1.
    """
    if k < 0:
        raise ValueError("k must be a nonnegative integer")
    c = np.empty(k + 1)
    c[0] = alpha
    if k > 0:
        j = np.arange(k, dtype=float)
        c[1:] = alpha * np.cumprod((j + 1.0 - alpha) / (j + 2.0))
    return c


def fgf_step(state: OptimizerState, grad) -> OptimizerState:
    """One step of the discretized fractional gradient flow."""
    if state.kind != "fgf":
        raise ValueError(f"fgf_step needs an fgf state, got {state.kind!r}")
    g = _check_grad(state, grad)
    h = state.hyper
    history = state.aux["history"]
    if not history:
        raise ValueError("fgf state has an empty history")
    k = state.step_count
    coeffs = state.aux["coeffs"]
    if len(coeffs) < k + 1:
        coeffs = fgf_coefficients(h["alpha"], k)
    window = h["window"]
    m = k + 1 if window is None else min(k + 1, int(window))
    memory = np.zeros_like(state.iterate)
    for j in range(m):
        memory = memory + coeffs[j] * history[-(j + 1)]
    x_new = -(h["lr"] ** h["alpha"]) * g + memory
    aux = dict(state.aux)
    aux["history"] = history + [x_new]
    aux["coeffs"] = coeffs
    return replace(state, iterate=x_new, aux=aux, step_count=k + 1)


def subset_state(state: OptimizerState, idx) -> OptimizerState:
    """Restrict a batched state (iterate (n, d)) to the rows in idx.

    Keeps per-row aux arrays and history entries aligned with the
    surviving trajectories; row-independent aux (fgf coefficients) is
    shared untouched.
    """
    idx = np.asarray(idx)
    aux = {}
    for key, val in state.aux.items():
        if key == "history":
            aux[key] = [entry[idx] for entry in val]
        elif key == "coeffs":
            aux[key] = val
        else:
            aux[key] = val[idx]
    return replace(state, iterate=state.iterate[idx], aux=aux)
