import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from singdrift.counterexample import (
    CeParams,
    attempt_solve,
    bad_drift_alpha,
    ce_drift,
    ce_sweep,
    construct_bad_drift,
    escape_inequality_check,
    exact_lp_norm,
    grid_lp_norms,
    k_min,
    required_k_exponent,
)
from singdrift.errors import DomainError, RegimeError
from singdrift.fbm import TimeGrid, sample_fbm, sample_fbm_array
from singdrift.mollify import unit_ball_volume


class TestDrift:
    def test_two_dimensional_example(self):
        assert np.allclose(ce_drift([0.3, -0.4], 2.0, d=2), [-4.0, 4.0])

    def test_zero_outside_unit_ball(self):
        assert np.all(ce_drift(np.array([[1.0], [-2.0]]), 0.5) == 0)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-1.5, 1.5).filter(lambda v: abs(v) > 1e-6), min_size=2, max_size=2), st.floats(0.1, 3))
    def test_odd_and_restoring(self, x, alpha):
        x = np.array(x)
        b = ce_drift(x, alpha, d=2)
        assert np.allclose(ce_drift(-x, alpha, d=2), -b)
        assert np.all(b * x <= 0)

    def test_singular_point(self, caplog):
        with pytest.raises(DomainError):
            ce_drift([0.0], 0.5)
        with caplog.at_level(logging.INFO):
            assert ce_drift([0.0], 0.5, floor=1e-6)[0] == 0.0

    def test_dimension_check(self):
        with pytest.raises(DomainError):
            ce_drift([0.1, 0.2], 0.5, d=3)


class TestEscapeInequality:
    @pytest.mark.parametrize("gamma,alpha,d", [(0.55, 1.0, 1), (0.3, 4.0, 2), (0.8, 0.1, 3)])
    def test_k_min_exponent(self, gamma, alpha, d):
        eps = np.array([2.0**-4, 2.0**-12])
        slope = np.diff(np.log(k_min(eps, gamma, alpha, d)))[0] / np.diff(np.log(eps))[0]
        assert slope == pytest.approx(1 - gamma - alpha * gamma, abs=1e-9)
        assert required_k_exponent(gamma, alpha) == pytest.approx(1 - gamma - alpha * gamma)

    @settings(max_examples=60, deadline=None)
    @given(st.floats(1e-4, 0.2), st.floats(0.1, 0.9), st.floats(0.05, 5), st.integers(1, 3))
    def test_threshold_is_k_min(self, eps, gamma, alpha, d):
        km = escape_inequality_check(eps, gamma, alpha, d, 1.0).k_min
        assert escape_inequality_check(eps, gamma, alpha, d, km * (1 + 1e-6)).holds
        assert not escape_inequality_check(eps, gamma, alpha, d, km * (1 - 1e-6)).holds

    def test_supercritical_blows_up(self):
        p = CeParams(0.55, 1.0)
        assert p.supercritical
        assert k_min(1e-8, p.gamma, p.alpha) > k_min(1e-2, p.gamma, p.alpha)

    def test_subcritical_vanishes(self):
        p = CeParams(0.55, 0.5)
        assert not p.supercritical
        assert k_min(1e-8, p.gamma, p.alpha) < k_min(1e-2, p.gamma, p.alpha)

    @pytest.mark.parametrize("args", [(0.0, 0.5, 1, 1, 1.0), (0.6, 0.5, 1, 2, 1.0), (0.1, 1.0, 1, 1, 1.0),
                                      (0.1, 0.5, 1, 1, -1.0)])
    def test_domain(self, args):
        eps, gamma, alpha, d, K = args
        with pytest.raises(DomainError):
            escape_inequality_check(eps, gamma, alpha, d, K)

    def test_params_domain(self):
        for bad in [(1.0, 1.0), (0.5, 0.0), (0.5, 1.0, 0)]:
            with pytest.raises(DomainError):
                CeParams(*bad)


class TestAttemptSolve:
    def test_zero_forcing_degenerate(self):
        rep = attempt_solve(np.zeros(1025), CeParams(0.55, 1.0))
        assert rep.degenerate
        assert set(rep.verdicts.values()) == {"degenerate"}
        assert not any(rep.strictly_increasing.values())

    def test_k_hat_not_below_k_min(self):
        f = sample_fbm_array(0.6, TimeGrid(4096), 1, 1, seed=1)[0]
        p = CeParams(0.55, 1.0)
        eps = [2.0**-j for j in range(2, 6)]
        rep = attempt_solve(f, p, eps_list=eps)
        assert np.all(rep.k_hat(2.0**-20) >= k_min(np.array(eps), p.gamma, p.alpha) * (1 - 1e-12))

    def test_supercritical_signature(self):
        out = ce_sweep(0.6, CeParams(0.55, 1.0), 30, 8192, seed=3, floors=(2.0**-20, 2.0**-10))
        print(out["fraction_increasing"])
        assert all(v >= 0.9 for v in out["fraction_increasing"].values())
        assert out["reports"][0].meta["gamma_declared"] == 0.55

    def test_subcritical_control(self):
        out = ce_sweep(0.6, CeParams(0.55, 0.5), 30, 8192, seed=3)
        print(out["fraction_increasing"])
        assert out["fraction_increasing"][2.0**-20] < 0.5

    def test_forcing_too_short(self):
        with pytest.raises(DomainError):
            attempt_solve(sample_fbm(0.6, TimeGrid(64, 0.5), 1)[0], CeParams(0.55, 1.0))

    @pytest.mark.parametrize("kw", [{"floors": (0.0,)}, {"eps_list": [1.5]}])
    def test_bad_options(self, kw):
        with pytest.raises(DomainError):
            attempt_solve(sample_fbm_array(0.6, TimeGrid(64), 1, 1)[0], CeParams(0.55, 1.0), **kw)

    def test_nonzero_start(self):
        with pytest.raises(DomainError):
            attempt_solve(np.ones(65), CeParams(0.55, 1.0))

    def test_csv(self):
        rep = attempt_solve(sample_fbm_array(0.6, TimeGrid(512), 1, 1)[0], CeParams(0.55, 1.0))
        lines = rep.to_csv().splitlines()
        assert lines[0] == "# gamma=0.55"
        assert "K_hat" in [ln for ln in lines if not ln.startswith("#")][0]


class TestBadDrift:
    @pytest.mark.parametrize("h,d,p", [(0.75, 1, 2), (0.9, 3, 3), (0.6, 2, 1.5)])
    def test_alpha_strictly_inside(self, h, d, p):
        b = construct_bad_drift(h, d, p)
        assert 1 / h - 1 < b.alpha < d / p
        assert b.alpha == pytest.approx(bad_drift_alpha(h, d, p))
        assert b.p == p

    def test_example_value(self):
        assert construct_bad_drift(0.75, 1, 2).alpha == pytest.approx(5 / 12)

    @pytest.mark.parametrize("h,d,p", [(0.25, 1, 1), (0.5, 1, 1)])
    def test_refusal(self, h, d, p):
        with pytest.raises(RegimeError) as info:
            construct_bad_drift(h, d, p)
        assert info.value.classification is not None

    def test_exact_norm(self):
        assert exact_lp_norm(0.25, 1, 2) == pytest.approx(2.0)
        assert exact_lp_norm(0.5, 2, 2) == pytest.approx(math.sqrt(2 * math.pi))
        assert exact_lp_norm(1.0, 1, 2) == math.inf
        assert exact_lp_norm(0.3, 3, 1) == pytest.approx(3 * unit_ball_volume(3) / 2.7)

    def test_grid_norms_increase_towards_exact(self):
        b = construct_bad_drift(0.75, 1, 2)
        norms = grid_lp_norms(b, 2, [32, 64, 128])
        exact = exact_lp_norm(b.alpha, 1, 2)
        print(norms, exact)
        assert np.all(np.diff(norms) > 0)
        assert norms[-1] <= exact

    def test_vector_magnitude(self):
        # every coordinate has size |x|^-alpha, so |b| = sqrt(d) |x|^-alpha
        b = construct_bad_drift(0.75, 2, 2)
        norms = grid_lp_norms(b, 2, [32, 64])
        exact = math.sqrt(2) * exact_lp_norm(b.alpha, 2, 2)
        print(norms, exact)
        assert np.all(np.diff(norms) > 0)
        assert norms[-1] <= exact
