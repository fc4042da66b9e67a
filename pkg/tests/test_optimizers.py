import numpy as np
import pytest

from fracgrad.frac_calculus import FracConfig, gen_binomial
from fracgrad.objectives import lookup
from fracgrad.optimizers import (BASELINE_KINDS, baseline_step,
                                 fgf_coefficients, fgf_step, frac_gd_step,
                                 make_state, subset_state)


def run_trajectory(kind, x0, grad_fn, steps, f_fn=None, **hyper):
    state = make_state(kind, x0, **hyper)
    traj = [state.iterate.copy()]
    for _ in range(steps):
        g = grad_fn(state.iterate)
        if kind == "frac_gd":
            state = frac_gd_step(state, f_fn(state.iterate), g)
        elif kind == "fgf":
            state = fgf_step(state, g)
        else:
            state = baseline_step(state, g)
        traj.append(state.iterate.copy())
    return np.stack(traj)


class TestBaselines:
    def test_gd_step(self):
        s = make_state("gd", [1.0, 1.0], lr=0.1)
        s = baseline_step(s, np.array([2.0, -4.0]))
        np.testing.assert_allclose(s.iterate, [0.8, 1.4], rtol=1e-15)

    def test_adam_zero_gradient_fixed_point(self):
        s = make_state("adam", [3.0, -2.0], lr=0.5)
        for _ in range(5):
            s = baseline_step(s, np.zeros(2))
        np.testing.assert_array_equal(s.iterate, [3.0, -2.0])

    def test_adagrad_two_steps(self):
        # hand-rolled accumulator recurrence: x2 = -1 - 3/sqrt(9 + 9 + eps)
        s = make_state("adagrad", [0.0], lr=1.0)
        s = baseline_step(s, np.array([3.0]))
        s = baseline_step(s, np.array([3.0]))
        assert s.iterate[0] == pytest.approx(-1.7071067811790277, abs=1e-12)

    def test_dimension_mismatch_raises(self):
        s = make_state("gd", [0.0, 0.0])
        with pytest.raises(ValueError):
            baseline_step(s, np.zeros(3))

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            make_state("newton", [0.0])

    def test_unknown_hyper_rejected(self):
        with pytest.raises(ValueError):
            make_state("gd", [0.0], beta=0.5)

    def test_momentum_accumulates_velocity(self):
        s = make_state("momentum_gd", [0.0], lr=1.0, momentum=0.5)
        s = baseline_step(s, np.array([1.0]))
        s = baseline_step(s, np.array([1.0]))
        # v1 = 1, v2 = 1.5; x = -(1 + 1.5)
        assert s.iterate[0] == pytest.approx(-2.5, rel=1e-15)

    def test_step_count_advances(self):
        s = make_state("rmsprop", [0.0])
        s = baseline_step(s, np.array([1.0]))
        assert s.step_count == 1

    @pytest.mark.parametrize("kind", BASELINE_KINDS)
    def test_permutation_equivariance(self, kind):
        rng = np.random.default_rng(11)
        x0 = rng.standard_normal(4)
        grads = rng.standard_normal((20, 4))
        perm = np.array([2, 0, 3, 1])

        s1 = make_state(kind, x0)
        s2 = make_state(kind, x0[perm])
        for g in grads:
            s1 = baseline_step(s1, g)
            s2 = baseline_step(s2, g[perm])
        np.testing.assert_allclose(s2.iterate, s1.iterate[perm], rtol=1e-12)

    @pytest.mark.parametrize("kind", BASELINE_KINDS)
    def test_batched_rows_equal_independent_runs(self, kind):
        # a batched state (n, d) must evolve each row exactly as a
        # standalone (d,) state would
        rng = np.random.default_rng(5)
        x0 = rng.standard_normal((3, 2))
        grads = rng.standard_normal((10, 3, 2))
        batched = make_state(kind, x0)
        singles = [make_state(kind, x0[i]) for i in range(3)]
        for g in grads:
            batched = baseline_step(batched, g)
            singles = [baseline_step(s, g[i]) for i, s in enumerate(singles)]
        for i in range(3):
            np.testing.assert_allclose(batched.iterate[i], singles[i].iterate,
                                       rtol=1e-12, atol=1e-15)


class TestFracGD:
    def test_alpha_one_identical_to_gd(self):
        rng = np.random.default_rng(0)
        cfg = FracConfig(alpha=1.0, taylor_dx=1.0)
        for _ in range(100):
            x0 = rng.standard_normal(2)
            g = rng.standard_normal(2)
            f_val = float(rng.uniform(0, 10))
            lr = float(rng.uniform(0.001, 0.5))
            s_frac = frac_gd_step(make_state("frac_gd", x0, lr=lr, frac=cfg),
                                  f_val, g)
            s_gd = baseline_step(make_state("gd", x0, lr=lr), g)
            assert np.max(np.abs(s_frac.iterate - s_gd.iterate)) <= 1e-12

    def test_half_order_step_value(self):
        cfg = FracConfig(alpha=0.5, taylor_dx=1.0)
        s = make_state("frac_gd", [0.0], lr=1.0, frac=cfg)
        s = frac_gd_step(s, 1.0, np.array([1.0]))
        assert s.iterate[0] == pytest.approx(-0.8462843753216345, abs=1e-9)

    def test_alpha_zero_pure_drift(self):
        cfg = FracConfig(alpha=0.0)
        s = make_state("frac_gd", [5.0, 5.0], lr=1.0, frac=cfg)
        s = frac_gd_step(s, 2.0, np.array([123.0, -9.0]))
        np.testing.assert_allclose(s.iterate, [3.0, 3.0], rtol=1e-15)


class TestFGFCoefficients:
    def test_integer_order_truncates(self):
        np.testing.assert_array_equal(fgf_coefficients(1.0, 3), [1, 0, 0, 0])

    def test_half_order_values(self):
        np.testing.assert_allclose(fgf_coefficients(0.5, 2),
                                   [0.5, 0.125, 0.0625], rtol=1e-14)

    def test_k_zero(self):
        np.testing.assert_allclose(fgf_coefficients(0.5, 0), [0.5])

    def test_matches_generalized_binomials(self):
        for alpha in (0.1, 0.5, 0.9):
            c = fgf_coefficients(alpha, 40)
            for j in range(41):
                expected = (-1.0) ** j * gen_binomial(alpha, j + 1)
                assert c[j] == pytest.approx(expected, rel=1e-12, abs=1e-300)

    @pytest.mark.parametrize("alpha", [0.1, 0.3, 0.5, 0.7, 0.9])
    def test_partial_sums_monotone_and_bounded(self, alpha):
        c = fgf_coefficients(alpha, 1000)
        assert np.all(c > 0.0)
        partial = np.cumsum(c)
        assert np.all(np.diff(partial) > 0.0)
        assert partial[-1] <= 1.0


class TestFGFStep:
    def test_alpha_one_trajectory_equals_gd_on_rosenbrock(self):
        fn = lookup("rosenbrock2d")
        x0 = np.array([-1.2, 1.0])
        t_fgf = run_trajectory("fgf", x0, fn.grad, 100, lr=1e-3, alpha=1.0)
        t_gd = run_trajectory("gd", x0, fn.grad, 100, lr=1e-3)
        assert np.max(np.abs(t_fgf - t_gd)) <= 1e-10

    def test_single_step_hand_value(self):
        s = make_state("fgf", [1.0], lr=0.01, alpha=0.5)
        s = fgf_step(s, np.array([2.0]))
        assert s.iterate[0] == pytest.approx(0.3, abs=1e-15)

    def test_two_steps_brute_force_oracle(self):
        # f(x) = x^2/2, grad = x; recurrence replayed by hand
        s = make_state("fgf", [1.0], lr=0.01, alpha=0.5)
        s = fgf_step(s, s.iterate.copy())
        s = fgf_step(s, s.iterate.copy())
        c = [0.5, 0.125]
        x0, eta = 1.0, 0.01
        x1 = -eta ** 0.5 * x0 + c[0] * x0
        x2 = -eta ** 0.5 * x1 + c[0] * x1 + c[1] * x0
        assert x1 == pytest.approx(0.4)
        assert x2 == pytest.approx(0.285)
        assert s.iterate[0] == pytest.approx(x2, rel=1e-14)

    def test_full_window_equals_unbounded(self):
        fn = lookup("sphere2d")
        x0 = np.array([2.0, -3.0])
        steps = 30
        t_inf = run_trajectory("fgf", x0, fn.grad, steps, lr=0.05, alpha=0.6,
                               window=None)
        t_full = run_trajectory("fgf", x0, fn.grad, steps, lr=0.05, alpha=0.6,
                                window=steps + 1)
        np.testing.assert_array_equal(t_inf, t_full)

    def test_history_length_tracks_steps(self):
        s = make_state("fgf", [1.0, 1.0], lr=0.01, alpha=0.5)
        for k in range(5):
            assert len(s.aux["history"]) == s.step_count + 1
            s = fgf_step(s, np.zeros(2))
        assert len(s.aux["history"]) == 6


def test_subset_state_keeps_rows_aligned():
    s = make_state("fgf", np.arange(8.0).reshape(4, 2), lr=0.1, alpha=0.5)
    s = fgf_step(s, np.ones((4, 2)))
    sub = subset_state(s, np.array([0, 2]))
    assert sub.iterate.shape == (2, 2)
    assert all(h.shape == (2, 2) for h in sub.aux["history"])
    np.testing.assert_array_equal(sub.aux["coeffs"], s.aux["coeffs"])
    np.testing.assert_array_equal(sub.iterate, s.iterate[[0, 2]])
