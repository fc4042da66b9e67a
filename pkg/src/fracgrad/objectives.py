"""Benchmark objective functions with analytic gradients.

Each entry carries a vectorized value/gradient pair, a sampling box for
drawing start points, and the known global minimum.  Values and
gradients accept arrays of shape (..., dim) and return (...,) and
(..., dim) respectively.

The 1D ``chaotic1d`` entry, f(x) = log(x^2 + 1 + sin(3x)) + 1.5, turns
plain gradient descent chaotic for aggressive step sizes: tiny changes
in learning rate or momentum flip which basin the iterate lands in.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["ObjectiveFn", "LOG_SHIFT", "registry", "lookup", "sample_start",
           "shifted_gap"]

# shift applied before taking logs of objective gaps: most minima are
# exactly 0 and log 0 is undefined
LOG_SHIFT = 1e-12


@dataclass(frozen=True)
class ObjectiveFn:
    name: str
    dim: int
    eval_fn: callable
    grad_fn: callable
    domain: np.ndarray            # (dim, 2) per-coordinate [lo, hi]
    global_min_value: float
    global_min_points: tuple = field(default=())
    hess_fn: callable = None      # (..., dim) -> (..., dim, dim)

    def eval(self, x) -> np.ndarray:
        return self.eval_fn(np.asarray(x, dtype=float))

    def grad(self, x) -> np.ndarray:
        return self.grad_fn(np.asarray(x, dtype=float))

    def hess(self, x) -> np.ndarray:
        if self.hess_fn is None:
            raise NotImplementedError(f"{self.name} has no Hessian")
        return self.hess_fn(np.asarray(x, dtype=float))


def shifted_gap(fn: ObjectiveFn, values):
    """max(f - f*, 0) + LOG_SHIFT, the positive gap safe to take logs of."""
    gap = np.asarray(values, dtype=float) - fn.global_min_value
    return np.maximum(gap + LOG_SHIFT, LOG_SHIFT)


# ---------------------------------------------------------------------------
# function bodies (x = X[..., 0], y = X[..., 1])
# ---------------------------------------------------------------------------

def _rosenbrock(X):
    x, y = X[..., 0], X[..., 1]
    return (1.0 - x) ** 2 + 100.0 * (y - x * x) ** 2


def _rosenbrock_grad(X):
    x, y = X[..., 0], X[..., 1]
    gx = -2.0 * (1.0 - x) - 400.0 * x * (y - x * x)
    gy = 200.0 * (y - x * x)
    return np.stack([gx, gy], axis=-1)


def _sphere(X):
    return np.sum(X * X, axis=-1)


def _sphere_grad(X):
    return 2.0 * X


def _booth(X):
    x, y = X[..., 0], X[..., 1]
    return (x + 2.0 * y - 7.0) ** 2 + (2.0 * x + y - 5.0) ** 2


def _booth_grad(X):
    x, y = X[..., 0], X[..., 1]
    u = x + 2.0 * y - 7.0
    v = 2.0 * x + y - 5.0
    return np.stack([2.0 * u + 4.0 * v, 4.0 * u + 2.0 * v], axis=-1)


def _beale(X):
    x, y = X[..., 0], X[..., 1]
    t1 = 1.5 - x + x * y
    t2 = 2.25 - x + x * y * y
    t3 = 2.625 - x + x * y ** 3
    return t1 * t1 + t2 * t2 + t3 * t3


def _beale_grad(X):
    x, y = X[..., 0], X[..., 1]
    t1 = 1.5 - x + x * y
    t2 = 2.25 - x + x * y * y
    t3 = 2.625 - x + x * y ** 3
    gx = 2.0 * t1 * (y - 1.0) + 2.0 * t2 * (y * y - 1.0) + 2.0 * t3 * (y ** 3 - 1.0)
    gy = 2.0 * t1 * x + 4.0 * t2 * x * y + 6.0 * t3 * x * y * y
    return np.stack([gx, gy], axis=-1)


def _himmelblau(X):
    x, y = X[..., 0], X[..., 1]
    return (x * x + y - 11.0) ** 2 + (x + y * y - 7.0) ** 2


def _himmelblau_grad(X):
    x, y = X[..., 0], X[..., 1]
    u = x * x + y - 11.0
    v = x + y * y - 7.0
    return np.stack([4.0 * x * u + 2.0 * v, 2.0 * u + 4.0 * y * v], axis=-1)


def _rastrigin(X):
    return 10.0 * X.shape[-1] + np.sum(X * X - 10.0 * np.cos(2.0 * np.pi * X), axis=-1)


def _rastrigin_grad(X):
    return 2.0 * X + 20.0 * np.pi * np.sin(2.0 * np.pi * X)


def _ackley(X):
    d = X.shape[-1]
    s1 = np.sum(X * X, axis=-1) / d
    s2 = np.sum(np.cos(2.0 * np.pi * X), axis=-1) / d
    return -20.0 * np.exp(-0.2 * np.sqrt(s1)) - np.exp(s2) + 20.0 + np.e


def _ackley_grad(X):
    d = X.shape[-1]
    s1 = np.sum(X * X, axis=-1) / d
    r = np.sqrt(s1)
    s2 = np.sum(np.cos(2.0 * np.pi * X), axis=-1) / d
    # first term is 0/0 at the origin; the true limit is 0
    safe_r = np.where(r > 0.0, r, 1.0)
    coef = np.where(r > 0.0, 4.0 * np.exp(-0.2 * r) / (d * safe_r), 0.0)
    g1 = coef[..., None] * X
    g2 = (np.exp(s2) * 2.0 * np.pi / d)[..., None] * np.sin(2.0 * np.pi * X)
    return g1 + g2


def _chaotic1d(X):
    x = X[..., 0]
    return np.log(x * x + 1.0 + np.sin(3.0 * x)) + 1.5


def _chaotic1d_grad(X):
    x = X[..., 0]
    return ((2.0 * x + 3.0 * np.cos(3.0 * x)) / (x * x + 1.0 + np.sin(3.0 * x)))[..., None]


# ---------------------------------------------------------------------------
# analytic Hessians (needed by backprop through optimizer unrolls)
# ---------------------------------------------------------------------------

def _pack_h(hxx, hxy, hyy):
    row1 = np.stack([hxx, hxy], axis=-1)
    row2 = np.stack([hxy, hyy], axis=-1)
    return np.stack([row1, row2], axis=-2)


def _rosenbrock_hess(X):
    x, y = X[..., 0], X[..., 1]
    return _pack_h(2.0 - 400.0 * (y - x * x) + 800.0 * x * x,
                   -400.0 * x, np.full_like(x, 200.0))


def _sphere_hess(X):
    shape = X.shape[:-1] + (X.shape[-1], X.shape[-1])
    return np.broadcast_to(2.0 * np.eye(X.shape[-1]), shape).copy()


def _booth_hess(X):
    x = X[..., 0]
    return _pack_h(np.full_like(x, 10.0), np.full_like(x, 8.0),
                   np.full_like(x, 10.0))


def _beale_hess(X):
    x, y = X[..., 0], X[..., 1]
    t1 = 1.5 - x + x * y
    t2 = 2.25 - x + x * y * y
    t3 = 2.625 - x + x * y ** 3
    hxx = 2.0 * ((y - 1.0) ** 2 + (y * y - 1.0) ** 2 + (y ** 3 - 1.0) ** 2)
    hxy = 2.0 * (t1 + x * (y - 1.0) + 2.0 * x * y * (y * y - 1.0) + 2.0 * y * t2
                 + 3.0 * x * y * y * (y ** 3 - 1.0) + 3.0 * y * y * t3)
    hyy = 2.0 * (x * x + 2.0 * x * t2 + 4.0 * x * x * y * y + 6.0 * x * y * t3
                 + 9.0 * x * x * y ** 4)
    return _pack_h(hxx, hxy, hyy)


def _himmelblau_hess(X):
    x, y = X[..., 0], X[..., 1]
    u = x * x + y - 11.0
    v = x + y * y - 7.0
    return _pack_h(4.0 * u + 8.0 * x * x + 2.0, 4.0 * x + 4.0 * y,
                   2.0 + 4.0 * v + 8.0 * y * y)


def _rastrigin_hess(X):
    d = X.shape[-1]
    diag = 2.0 + 40.0 * np.pi ** 2 * np.cos(2.0 * np.pi * X)
    out = np.zeros(X.shape[:-1] + (d, d))
    for i in range(d):
        out[..., i, i] = diag[..., i]
    return out


def _ackley_hess(X):
    d = X.shape[-1]
    s1 = np.sum(X * X, axis=-1) / d
    r = np.sqrt(s1)
    safe_r = np.where(r > 1e-12, r, 1.0)
    e1 = np.exp(-0.2 * r)
    s2 = np.sum(np.cos(2.0 * np.pi * X), axis=-1) / d
    e2 = np.exp(s2)
    sin_x = np.sin(2.0 * np.pi * X)
    cos_x = np.cos(2.0 * np.pi * X)
    # first term: e^{-0.2 r} [ (4/(d r)) I - x x^T (0.8/(d^2 r^2) + 4/(d^2 r^3)) ]
    eye = np.eye(d)
    coef_d = np.where(r > 1e-12, 4.0 * e1 / (d * safe_r), 0.0)
    coef_o = np.where(r > 1e-12,
                      e1 * (0.8 / (d * d * safe_r ** 2)
                            + 4.0 / (d * d * safe_r ** 3)), 0.0)
    h1 = coef_d[..., None, None] * eye \
        - coef_o[..., None, None] * (X[..., :, None] * X[..., None, :])
    # second term: (2 pi/d) e^{s2} [2 pi cos(2 pi x_i) delta_ij
    #                               - (2 pi/d) sin(2 pi x_i) sin(2 pi x_j)]
    w = 2.0 * np.pi / d
    h2 = -w * w * e2[..., None, None] * (sin_x[..., :, None] * sin_x[..., None, :])
    h2d = w * 2.0 * np.pi * e2[..., None] * cos_x
    for i in range(d):
        h2[..., i, i] += h2d[..., i]
    return h1 + h2


def _chaotic1d_hess(X):
    x = X[..., 0]
    g = x * x + 1.0 + np.sin(3.0 * x)
    g1 = 2.0 * x + 3.0 * np.cos(3.0 * x)
    g2 = 2.0 - 9.0 * np.sin(3.0 * x)
    return (g2 / g - (g1 / g) ** 2)[..., None, None]


# global minimum of chaotic1d on [-4, 4], refined to double precision from
# the stationarity condition 2x + 3 cos(3x) = 0
_CHAOTIC1D_ARGMIN = -0.42730784687523011
_CHAOTIC1D_MIN = 0.004008623210298865

_HIMMELBLAU_MINIMA = (
    (3.0, 2.0),
    (-2.805118086952745, 3.131312518250573),
    (-3.779310253377747, -3.2831859912861696),
    (3.5844283403304917, -1.8481265269644034),
)


def _box(lo, hi, dim=2):
    return np.array([[lo, hi]] * dim, dtype=float)


_REGISTRY: tuple[ObjectiveFn, ...] = (
    ObjectiveFn("rosenbrock2d", 2, _rosenbrock, _rosenbrock_grad,
                _box(-2.0, 2.0), 0.0, ((1.0, 1.0),), _rosenbrock_hess),
    ObjectiveFn("sphere2d", 2, _sphere, _sphere_grad,
                _box(-5.0, 5.0), 0.0, ((0.0, 0.0),), _sphere_hess),
    ObjectiveFn("booth", 2, _booth, _booth_grad,
                _box(-10.0, 10.0), 0.0, ((1.0, 3.0),), _booth_hess),
    ObjectiveFn("beale", 2, _beale, _beale_grad,
                _box(-4.5, 4.5), 0.0, ((3.0, 0.5),), _beale_hess),
    ObjectiveFn("himmelblau", 2, _himmelblau, _himmelblau_grad,
                _box(-5.0, 5.0), 0.0, _HIMMELBLAU_MINIMA, _himmelblau_hess),
    ObjectiveFn("rastrigin2d", 2, _rastrigin, _rastrigin_grad,
                _box(-5.0, 5.0), 0.0, ((0.0, 0.0),), _rastrigin_hess),
    ObjectiveFn("ackley2d", 2, _ackley, _ackley_grad,
                _box(-5.0, 5.0), 0.0, ((0.0, 0.0),), _ackley_hess),
    ObjectiveFn("chaotic1d", 1, _chaotic1d, _chaotic1d_grad,
                _box(-4.0, 4.0, dim=1), _CHAOTIC1D_MIN, ((_CHAOTIC1D_ARGMIN,),),
                _chaotic1d_hess),
)


def registry() -> list[ObjectiveFn]:
    """All registered objectives, in stable order."""
    return list(_REGISTRY)


def lookup(name: str) -> ObjectiveFn:
    for fn in _REGISTRY:
        if fn.name == name:
            return fn
    raise KeyError(f"unknown objective {name!r}; known: "
                   f"{', '.join(f.name for f in _REGISTRY)}")


def sample_start(fn: ObjectiveFn, rng: np.random.Generator) -> np.ndarray:
    """Uniform start point inside the sampling box, one draw per coordinate."""
    return rng.uniform(fn.domain[:, 0], fn.domain[:, 1])
