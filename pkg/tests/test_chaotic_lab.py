import math

import numpy as np
import pytest

from fracgrad.chaotic_lab import (DivergenceError, LorenzOptConfig,
                                  LorenzParams, LorenzState, es_gradient,
                                  landscape_sweep, lorenz_loss, lorenz_rhs,
                                  optimize_lorenz, simulate, tbtt_gradient)
from fracgrad.objectives import lookup
from fracgrad.optimizers import fgf_step, make_state

TRUE_P = LorenzParams(math.log(10.0), math.log(28.0))
S0 = np.array([1.2, 1.3, 1.6])


class TestLorenzRHS:
    def test_reference_point(self):
        np.testing.assert_allclose(lorenz_rhs(S0, TRUE_P),
                                   [1.0, 30.38, -2.70666666666666666],
                                   rtol=1e-12)

    def test_origin_is_fixed_point(self):
        np.testing.assert_array_equal(lorenz_rhs([0.0, 0.0, 0.0], TRUE_P),
                                      [0.0, 0.0, 0.0])

    def test_equal_xy_kills_dx(self):
        out = lorenz_rhs([2.5, 2.5, 1.0], TRUE_P)
        assert out[0] == 0.0

    def test_accepts_state_dataclass(self):
        out = lorenz_rhs(LorenzState(1.2, 1.3, 1.6), TRUE_P)
        assert out[0] == pytest.approx(1.0)


class TestSimulate:
    def test_zero_steps_returns_start_only(self):
        traj = simulate(TRUE_P, S0, 0, 0.005)
        assert traj.shape == (1, 3)
        np.testing.assert_array_equal(traj[0], S0)

    def test_single_euler_step(self):
        traj = simulate(TRUE_P, S0, 1, 0.005)
        np.testing.assert_allclose(traj[1], [1.205, 1.4519, 1.5864666666666667],
                                   rtol=1e-12)

    def test_tiny_parameters_contract(self):
        p = LorenzParams(-10.0, -10.0)
        traj = simulate(p, S0, 2000, 0.005)
        assert np.linalg.norm(traj[-1, 1:]) < np.linalg.norm(traj[0, 1:])
        assert abs(traj[-1, 0] - S0[0]) < 0.05

    def test_divergence_raises_with_step(self):
        p = LorenzParams(8.0, 8.0)  # sigma, rho ~ 3000: Euler blows up
        with pytest.raises(DivergenceError) as err:
            simulate(p, S0, 10_000, 0.005)
        assert err.value.step >= 1

    def test_rejects_nonpositive_dt(self):
        with pytest.raises(ValueError):
            simulate(TRUE_P, S0, 10, 0.0)


class TestLorenzLoss:
    def test_true_params_zero(self):
        target = simulate(TRUE_P, S0, 200, 0.005)
        assert lorenz_loss(TRUE_P, target) == 0.0

    def test_nonnegative(self):
        target = simulate(TRUE_P, S0, 100, 0.005)
        rng = np.random.default_rng(0)
        for _ in range(10):
            p = LorenzParams(TRUE_P.log_sigma + rng.normal(0, 0.2),
                             TRUE_P.log_rho + rng.normal(0, 0.2))
            assert lorenz_loss(p, target) >= 0.0

    def test_perturbed_rho_dual_implementation(self):
        # independent replay: rollout + mean of squared distances
        target = simulate(TRUE_P, S0, 150, 0.005)
        p = LorenzParams(TRUE_P.log_sigma, TRUE_P.log_rho + 0.1)
        traj = simulate(p, S0, 150, 0.005)
        expected = float(np.mean(np.sum((traj - target) ** 2, axis=1)))
        assert expected > 0.0
        assert lorenz_loss(p, target) == pytest.approx(expected, rel=1e-14)

    def test_divergence_maps_to_inf(self):
        target = simulate(TRUE_P, S0, 400, 0.005)
        assert lorenz_loss(LorenzParams(8.0, 8.0), target) == float("inf")


class TestTBTTGradient:
    def test_zero_at_true_parameters(self):
        target = simulate(TRUE_P, S0, 200, 0.005)
        g = tbtt_gradient(TRUE_P, target, window=10 ** 9)
        assert np.max(np.abs(g)) <= 1e-9

    def test_matches_finite_differences_untruncated(self):
        target = simulate(TRUE_P, S0, 200, 0.005)
        rng = np.random.default_rng(1)
        h = 1e-6
        for _ in range(5):
            p = LorenzParams(TRUE_P.log_sigma + rng.normal(0, 0.05),
                             TRUE_P.log_rho + rng.normal(0, 0.05))
            g = tbtt_gradient(p, target, window=10 ** 9)
            fd = np.empty(2)
            for j, (ds, dr) in enumerate([(h, 0.0), (0.0, h)]):
                lp = lorenz_loss(LorenzParams(p.log_sigma + ds,
                                              p.log_rho + dr), target)
                lm = lorenz_loss(LorenzParams(p.log_sigma - ds,
                                              p.log_rho - dr), target)
                fd[j] = (lp - lm) / (2 * h)
            assert np.linalg.norm(g - fd) / np.linalg.norm(fd) < 1e-4

    def test_truncation_changes_gradient(self):
        target = simulate(TRUE_P, S0, 400, 0.005)
        p = LorenzParams(TRUE_P.log_sigma + 0.3, TRUE_P.log_rho - 0.3)
        g_full = tbtt_gradient(p, target, window=10 ** 9)
        g_one = tbtt_gradient(p, target, window=1)
        assert np.max(np.abs(g_full - g_one)) > 1e-6

    def test_rejects_bad_window(self):
        target = simulate(TRUE_P, S0, 10, 0.005)
        with pytest.raises(ValueError):
            tbtt_gradient(TRUE_P, target, window=0)


class TestESGradient:
    def test_quadratic_unbiasedness(self):
        rng = np.random.default_rng(7)
        p = LorenzParams(0.7, -0.3)
        loss = lambda v: float(v @ v)
        g = es_gradient(p, None, pairs=10_000, noise_sigma=0.05, rng=rng,
                        loss_fn=loss)
        expected = 2.0 * p.as_vector()
        assert np.linalg.norm(g - expected) / np.linalg.norm(expected) < 0.05

    def test_deterministic_for_fixed_seed(self):
        target = simulate(TRUE_P, S0, 50, 0.005)
        p = LorenzParams(TRUE_P.log_sigma + 0.2, TRUE_P.log_rho - 0.2)
        g1 = es_gradient(p, target, pairs=1, noise_sigma=0.1,
                         rng=np.random.default_rng(3))
        g2 = es_gradient(p, target, pairs=1, noise_sigma=0.1,
                         rng=np.random.default_rng(3))
        np.testing.assert_array_equal(g1, g2)

    def test_small_noise_approaches_tbtt(self):
        target = simulate(TRUE_P, S0, 50, 0.005)
        p = LorenzParams(TRUE_P.log_sigma + 0.1, TRUE_P.log_rho - 0.1)
        exact = tbtt_gradient(p, target, window=10 ** 9)
        g = es_gradient(p, target, pairs=4096, noise_sigma=1e-4,
                        rng=np.random.default_rng(5))
        assert np.linalg.norm(g - exact) / np.linalg.norm(exact) < 0.1

    def test_capping_recorded(self):
        target = simulate(TRUE_P, S0, 400, 0.005)
        p = LorenzParams(7.5, 7.5)  # all perturbations diverge
        log = []
        es_gradient(p, target, pairs=4, noise_sigma=0.05,
                    rng=np.random.default_rng(0), capped_log=log)
        assert log and log[0] > 0

    def test_rejects_bad_arguments(self):
        target = simulate(TRUE_P, S0, 10, 0.005)
        with pytest.raises(ValueError):
            es_gradient(TRUE_P, target, pairs=0, noise_sigma=0.1,
                        rng=np.random.default_rng(0))
        with pytest.raises(ValueError):
            es_gradient(TRUE_P, target, pairs=1, noise_sigma=0.0,
                        rng=np.random.default_rng(0))


class TestOptimizeLorenz:
    def test_true_initialization_stays_flat(self):
        cfg = LorenzOptConfig(update="gd", estimator="tbtt", lr=1e-3, iters=5,
                              init_log_sigma=TRUE_P.log_sigma,
                              init_log_rho=TRUE_P.log_rho, steps=100)
        res = optimize_lorenz(cfg)
        np.testing.assert_allclose(res.losses, 0.0, atol=1e-20)

    def test_fgf_alpha_one_equals_gd(self):
        kwargs = dict(estimator="tbtt", lr=5e-4, iters=20, steps=100, seed=0)
        res_gd = optimize_lorenz(LorenzOptConfig(update="gd", **kwargs))
        res_fgf = optimize_lorenz(LorenzOptConfig(update="fgf", alpha=1.0,
                                                  **kwargs))
        np.testing.assert_allclose(res_fgf.losses, res_gd.losses, atol=1e-10)

    def test_loss_curve_shape_and_params_recorded(self):
        cfg = LorenzOptConfig(update="fgf", estimator="es", alpha=0.7,
                              lr=1e-3, iters=8, steps=60, pairs=4, seed=2)
        res = optimize_lorenz(cfg)
        assert res.losses.shape == (9,)
        assert res.params.shape == (9, 2)
        assert np.all(np.isfinite(res.params[0]))

    def test_rejects_unknown_choices(self):
        with pytest.raises(ValueError):
            LorenzOptConfig(update="newton")
        with pytest.raises(ValueError):
            LorenzOptConfig(estimator="exact")


class TestLandscapeSweep:
    def test_single_cell_zero_lr_stays_put(self):
        fn = lookup("chaotic1d")
        x0 = 2.0
        grid = landscape_sweep(fn, ("momentum", [0.0]), ("lr", [0.0]),
                               horizon=50, method="momentum", x0=x0)
        assert grid.final_f.shape == (1, 1)
        assert grid.final_f[0, 0] == pytest.approx(float(fn.eval([x0])))
        assert not grid.diverged.any()

    def test_fgf_grid_matches_stepwise_reference(self):
        # vectorized sweep must agree with running fgf_step cell by cell
        fn = lookup("chaotic1d")
        alphas = [0.3, 0.6, 1.0]
        lrs = [0.01, 0.1, 0.3]
        horizon = 25
        grid = landscape_sweep(fn, ("alpha", alphas), ("lr", lrs),
                               horizon=horizon, method="fgf", x0=1.5)
        for i, a in enumerate(alphas):
            for j, lr in enumerate(lrs):
                s = make_state("fgf", [1.5], lr=lr, alpha=a)
                for _ in range(horizon):
                    s = fgf_step(s, fn.grad(s.iterate))
                assert grid.final_f[i, j] == pytest.approx(
                    float(fn.eval(s.iterate)), rel=1e-10), (a, lr)

    def test_momentum_grid_matches_stepwise_reference(self):
        fn = lookup("chaotic1d")
        moms = [0.0, 0.5]
        lrs = [0.05, 0.2]
        horizon = 30
        grid = landscape_sweep(fn, ("momentum", moms), ("lr", lrs),
                               horizon=horizon, method="momentum", x0=2.0)
        for i, m in enumerate(moms):
            for j, lr in enumerate(lrs):
                s = make_state("momentum_gd", [2.0], lr=lr, momentum=m)
                from fracgrad.optimizers import baseline_step
                for _ in range(horizon):
                    s = baseline_step(s, fn.grad(s.iterate))
                assert grid.final_f[i, j] == pytest.approx(
                    float(fn.eval(s.iterate)), rel=1e-10), (m, lr)

    def test_empty_axis_rejected(self):
        fn = lookup("chaotic1d")
        with pytest.raises(ValueError):
            landscape_sweep(fn, ("momentum", []), ("lr", [0.1]), 10)

    def test_determinism(self):
        fn = lookup("chaotic1d")
        kw = dict(axis1=("momentum", np.linspace(0, 0.9, 8)),
                  axis2=("lr", np.logspace(-3, 0, 8)),
                  horizon=40, method="momentum", x0=2.0)
        g1 = landscape_sweep(fn, **kw)
        g2 = landscape_sweep(fn, **kw)
        np.testing.assert_array_equal(g1.final_f, g2.final_f)
        np.testing.assert_array_equal(g1.diverged, g2.diverged)
