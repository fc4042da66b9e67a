"""Fractional derivative kernels.

Everything here evaluates non-integer-order derivatives of scalar
functions, in four flavors:

* ``gl_derivative`` -- Grunwald-Letnikov weighted backward-difference sum,
  the cheap production path.
* ``rl_quadrature`` -- Riemann-Liouville form (differentiate a fractional
  integral), evaluated by product integration on a graded mesh.  Slow and
  accurate; used as the reference for testing the GL path.
* ``caputo_quadrature`` -- fractional integral of an ordinary derivative.
  Unlike RL/GL it annihilates constants.
* ``frac_taylor_direction`` -- first-order truncated expansion of the
  operator, cheap enough to sit inside an optimizer update.

The module also carries the 2x2 fractional Jacobian of the worked map
f(x, y) = (x^2 - y^2, 3xy), used to visualise how a non-integer order
bends the induced grid transform away from a linear map.

Gamma, reciprocal gamma and digamma are implemented locally (Lanczos,
g = 7) so that the reciprocal is *exactly* zero at the poles of gamma;
several formulas below divide by gamma at pole locations where the
correct limit of the whole term is zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "FracConfig",
    "FracJacobian2x2",
    "PoleError",
    "gamma_fn",
    "recip_gamma",
    "digamma_fn",
    "gen_binomial",
    "gl_weights",
    "gl_derivative",
    "rl_quadrature",
    "caputo_quadrature",
    "power_rule",
    "frac_taylor_direction",
    "taylor_direction",
    "frac_jacobian_example",
    "grid_transform",
]


class PoleError(ValueError):
    """Gamma evaluated at a non-positive integer."""


@dataclass(frozen=True)
class FracConfig:
    """Parameters of a fractional-derivative evaluation.

    alpha       -- derivative order (0 <= alpha <= 1 for optimizer use;
                   Jacobian demos may exceed 1).
    terminal_a  -- lower limit of the underlying fractional integral.
                   Derivatives are nonlocal with respect to it.
    step_h      -- GL mesh width.
    taylor_dx   -- expansion displacement of the first-order surrogate.
    taylor_dx_mode -- "fixed": the displacement is the scalar taylor_dx
                   for every coordinate (default; reduces exactly to the
                   plain gradient at alpha = 1).  "coordinate": the
                   displacement is x - terminal_a per coordinate.
    """

    alpha: float
    terminal_a: float = 0.0
    step_h: float = 1e-4
    taylor_dx: float = 1.0
    taylor_dx_mode: str = "fixed"

    def __post_init__(self):
        if not math.isfinite(self.alpha):
            raise ValueError(f"alpha must be finite, got {self.alpha}")
        if self.step_h <= 0:
            raise ValueError(f"step_h must be > 0, got {self.step_h}")
        if self.taylor_dx <= 0:
            raise ValueError(f"taylor_dx must be > 0, got {self.taylor_dx}")
        if self.taylor_dx_mode not in ("fixed", "coordinate"):
            raise ValueError(f"unknown taylor_dx_mode {self.taylor_dx_mode!r}")


@dataclass(frozen=True)
class FracJacobian2x2:
    """Order-alpha Jacobian of f(x, y) = (x^2 - y^2, 3xy) at one point."""

    entries: np.ndarray
    alpha: float
    at_point: tuple[float, float]


# ---------------------------------------------------------------------------
# Gamma family (Lanczos approximation, g = 7, 9 coefficients)
# ---------------------------------------------------------------------------

_LANCZOS_G = 7.0
_LANCZOS_C = np.array([
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
])


def _is_nonpositive_int(x: float) -> bool:
    return math.isfinite(x) and x == math.floor(x) and x <= 0.0


def gamma_fn(x: float) -> float:
    """Gamma(x) for real x, raising :class:`PoleError` at 0, -1, -2, ...

    Positive integers take an exact factorial path so that identities like
    Gamma(1) = 1 hold bitwise (the alpha = 1 reduction of the optimizer
    surrogate depends on this).  Non-finite input propagates as nan.
    """
    x = float(x)
    if not math.isfinite(x):
        return math.nan
    if x == math.floor(x):
        if x <= 0.0:
            raise PoleError(f"gamma pole at {x}")
        if x <= 171.0:
            return float(math.factorial(int(x) - 1))
    if x < 0.5:
        # reflection: Gamma(x) Gamma(1-x) = pi / sin(pi x)
        return math.pi / (math.sin(math.pi * x) * gamma_fn(1.0 - x))
    z = x - 1.0
    a = _LANCZOS_C[0]
    for i in range(1, 9):
        a += _LANCZOS_C[i] / (z + i)
    t = z + _LANCZOS_G + 0.5
    return math.sqrt(2.0 * math.pi) * t ** (z + 0.5) * math.exp(-t) * a


def recip_gamma(x):
    """1 / Gamma(x), defined as exactly 0 at the poles of Gamma.

    Accepts scalars or arrays.  The zero-at-pole convention implements the
    correct limit of terms of the form g(x)/Gamma(x) when g stays bounded.
    """
    if np.ndim(x) == 0:
        xf = float(x)
        if _is_nonpositive_int(xf):
            return 0.0
        return 1.0 / gamma_fn(xf)
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    flat = x.ravel()
    of = out.ravel()
    for i, v in enumerate(flat):
        of[i] = 0.0 if _is_nonpositive_int(v) else 1.0 / gamma_fn(v)
    return out


def digamma_fn(x):
    """psi(x) = d/dx log Gamma(x), by differentiating the Lanczos form.

    Scalar or array input; poles coincide with gamma's and raise.
    """
    if np.ndim(x) != 0:
        x = np.asarray(x, dtype=float)
        return np.array([digamma_fn(v) for v in x.ravel()]).reshape(x.shape)
    x = float(x)
    if not math.isfinite(x):
        return math.nan
    if _is_nonpositive_int(x):
        raise PoleError(f"digamma pole at {x}")
    if x < 0.5:
        return digamma_fn(1.0 - x) - math.pi / math.tan(math.pi * x)
    z = x - 1.0
    a = _LANCZOS_C[0]
    da = 0.0
    for i in range(1, 9):
        a += _LANCZOS_C[i] / (z + i)
        da -= _LANCZOS_C[i] / (z + i) ** 2
    t = z + _LANCZOS_G + 0.5
    return math.log(t) + (z + 0.5) / t - 1.0 + da / a


# ---------------------------------------------------------------------------
# Generalized binomial coefficients and GL weights
# ---------------------------------------------------------------------------

def gen_binomial(alpha: float, k: int) -> float:
    """binom(alpha, k) = prod_{j<k} (alpha - j) / k!, by stable recurrence."""
    if k < 0:
        raise ValueError("k must be a nonnegative integer")
    b = 1.0
    for j in range(int(k)):
        b *= (alpha - j) / (j + 1)
    return b


def gl_weights(alpha: float, n: int) -> np.ndarray:
    """Weights w_k = (-1)^k binom(alpha, k) for k = 0..n.

    Uses the ratio w_k = w_{k-1} (k - 1 - alpha) / k, which keeps integer
    alpha truncation exact (weights past k = alpha are exactly 0).
    """
    w = np.empty(n + 1)
    w[0] = 1.0
    if n > 0:
        k = np.arange(1, n + 1, dtype=float)
        w[1:] = np.cumprod((k - 1.0 - alpha) / k)
    return w


def gl_derivative(f, x: float, cfg: FracConfig) -> float:
    """Grunwald-Letnikov derivative of order cfg.alpha at x.

    (1/h^alpha) * sum_{k=0}^{floor((x-a)/h)} (-1)^k binom(alpha, k) f(x - kh)

    The window is anchored at the terminal, so the sum reaches back to
    cfg.terminal_a.  ``f`` must accept ndarray input.
    """
    a, h, alpha = cfg.terminal_a, cfg.step_h, cfg.alpha
    if x <= a:
        raise ValueError(f"x must exceed the terminal {a}, got {x}")
    if h > x - a:
        raise ValueError(f"step_h {h} exceeds the window x - a = {x - a}")
    # absorb a couple of ulps so windows like (1 - 0)/1e-4 land on 10000
    n = int(math.floor((x - a) / h + 1e-9))
    w = gl_weights(alpha, n)
    pts = x - h * np.arange(n + 1)
    vals = np.asarray(f(pts), dtype=float)
    return float(w @ vals) / h ** alpha


# ---------------------------------------------------------------------------
# Riemann-Liouville / Caputo quadrature (test oracles)
# ---------------------------------------------------------------------------

def _graded_kernel_integral(f, xi: float, alpha: float, a: float,
                            nodes: int, p: float) -> float:
    # int_a^xi (xi - t)^(-alpha) f(t) dt / Gamma(1 - alpha), with mesh points
    # t_i = xi - (xi - a) (1 - i/n)^p clustered at the singular end t -> xi.
    # On each cell f is linearized and the kernel moments are integrated
    # exactly, so the singularity never meets the quadrature error.
    i = np.arange(nodes + 1)
    s = (xi - a) * (1.0 - i / nodes) ** p      # s = xi - t, decreasing
    t = xi - s
    fv = np.asarray(f(t), dtype=float)
    s0, s1 = s[:-1], s[1:]
    f0, f1 = fv[:-1], fv[1:]
    m0 = (s0 ** (1.0 - alpha) - s1 ** (1.0 - alpha)) / (1.0 - alpha)
    m1 = (s0 ** (2.0 - alpha) - s1 ** (2.0 - alpha)) / (2.0 - alpha)
    dt = t[1:] - t[:-1]
    # cells collapsed by the grading contribute nothing
    safe = np.where(dt > 0.0, dt, 1.0)
    slope = np.where(dt > 0.0, (f1 - f0) / safe, 0.0)
    val = float(np.sum(f0 * m0 + slope * (s0 * m0 - m1)))
    return val * recip_gamma(1.0 - alpha)


def _grading_exponent(alpha: float) -> float:
    return min(2.0 / (1.0 - alpha), 50.0)


def rl_quadrature(f, x: float, cfg: FracConfig, nodes: int = 4096) -> float:
    """Riemann-Liouville derivative for 0 < alpha < 1 (reference path).

    Differentiates the fractional integral numerically: a central
    difference in x of the graded-mesh quadrature.  Intended as a test
    oracle, not for hot loops.
    """
    alpha, a = cfg.alpha, cfg.terminal_a
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"rl_quadrature requires 0 < alpha < 1, got {alpha}")
    if x <= a:
        raise ValueError(f"x must exceed the terminal {a}, got {x}")
    p = _grading_exponent(alpha)
    d = 1e-5 * max(1.0, abs(x - a))
    hi = _graded_kernel_integral(f, x + d, alpha, a, nodes, p)
    lo = _graded_kernel_integral(f, x - d, alpha, a, nodes, p)
    return (hi - lo) / (2.0 * d)


def caputo_quadrature(f_prime, x: float, cfg: FracConfig,
                      nodes: int = 4096) -> float:
    """Derivative-then-integrate composition for 0 < alpha < 1.

    Fractional integral (order 1 - alpha) of the ordinary derivative
    ``f_prime``.  Zero on constants, unlike the RL/GL forms.
    """
    alpha, a = cfg.alpha, cfg.terminal_a
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"caputo_quadrature requires 0 < alpha < 1, got {alpha}")
    if x <= a:
        raise ValueError(f"x must exceed the terminal {a}, got {x}")
    return _graded_kernel_integral(f_prime, x, alpha, a, nodes,
                                   _grading_exponent(alpha))


def power_rule(n: float, alpha: float, x: float) -> float:
    """Closed form D^alpha x^n = Gamma(n+1)/Gamma(n+1-alpha) x^(n-alpha)."""
    return gamma_fn(n + 1.0) * recip_gamma(n + 1.0 - alpha) * x ** (n - alpha)


# ---------------------------------------------------------------------------
# First-order surrogate used inside optimizer updates
# ---------------------------------------------------------------------------

def taylor_direction(f_val, grad, alpha, taylor_dx):
    """Core of the surrogate: recip_gamma(1-a) f + a dx grad recip_gamma(a).

    Broadcasts: ``alpha`` and ``f_val`` may be scalars or arrays of leading
    batch shape, ``grad`` an (..., d) array; ``taylor_dx`` a scalar or a
    per-coordinate array.
    """
    g = np.asarray(grad, dtype=float)
    fv = np.asarray(f_val, dtype=float)
    drift = recip_gamma(1.0 - np.asarray(alpha)) * fv
    slope = np.asarray(alpha) * recip_gamma(np.asarray(alpha))
    if g.ndim > np.ndim(drift):
        drift = np.asarray(drift)[..., None]
        slope = np.asarray(slope)[..., None]
    return drift + slope * taylor_dx * g


def frac_taylor_direction(f_val: float, grad, cfg: FracConfig, x=None):
    """Surrogate D^alpha direction for the fractional descent update.

    Component i is recip_gamma(1-alpha) f_val
    + alpha * dx_i * grad_i * recip_gamma(alpha), where dx_i is
    cfg.taylor_dx ("fixed" mode) or x_i - terminal_a ("coordinate" mode).
    At alpha = 1 the drift dies (pole of gamma) and the result is exactly
    the gradient scaled by dx.
    """
    if not 0.0 <= cfg.alpha <= 1.0:
        raise ValueError(f"surrogate requires alpha in [0, 1], got {cfg.alpha}")
    if cfg.taylor_dx_mode == "coordinate":
        if x is None:
            raise ValueError("coordinate taylor_dx_mode needs the iterate x")
        dx = np.asarray(x, dtype=float) - cfg.terminal_a
    else:
        dx = cfg.taylor_dx
    return taylor_direction(f_val, grad, cfg.alpha, dx)


# ---------------------------------------------------------------------------
# Fractional Jacobian of f(x, y) = (x^2 - y^2, 3xy) and its grid action
# ---------------------------------------------------------------------------

def frac_jacobian_example(x: float, y: float, alpha: float) -> FracJacobian2x2:
    """Order-alpha Jacobian of the worked 2D map at (x, y), x, y > 0.

    Entry by entry:

        [ x^-a (2x^2/G(3-a) - y^2/G(1-a)) ,  y^-a (x^2/G(1-a) - 2y^2/G(3-a)) ]
        [ 3y x^(1-a) / G(2-a)             ,  3x y^(1-a) / G(2-a)             ]

    Reduces to the classical Jacobian [[2x, -2y], [3y, 3x]] at alpha = 1,
    where 1/G(0) contributes exactly 0.
    """
    if x <= 0.0 or y <= 0.0:
        raise ValueError(f"point must lie in the positive quadrant, got ({x}, {y})")
    r3 = recip_gamma(3.0 - alpha)
    r1 = recip_gamma(1.0 - alpha)
    r2 = recip_gamma(2.0 - alpha)
    entries = np.array([
        [x ** -alpha * (2.0 * x * x * r3 - y * y * r1),
         y ** -alpha * (x * x * r1 - 2.0 * y * y * r3)],
        [3.0 * y * x ** (1.0 - alpha) * r2,
         3.0 * x * y ** (1.0 - alpha) * r2],
    ])
    return FracJacobian2x2(entries=entries, alpha=alpha, at_point=(x, y))


def grid_transform(grid, alpha: float):
    """Apply p -> J^alpha(p) p to every point of a rectangular lattice.

    ``grid`` is (lo, hi, n): n points per axis, the same range on both,
    all strictly positive.  Returns a list of ((in_x, in_y),
    (out_x, out_y)) pairs in row-major order (x index outer).
    """
    lo, hi, n = grid
    if n < 1:
        raise ValueError("lattice needs at least one point per axis")
    axis = np.linspace(lo, hi, int(n)) if n > 1 else np.array([float(lo)])
    pairs = []
    for x in axis:
        for y in axis:
            jac = frac_jacobian_example(float(x), float(y), alpha)
            out = jac.entries @ np.array([x, y])
            pairs.append(((float(x), float(y)), (float(out[0]), float(out[1]))))
    return pairs
