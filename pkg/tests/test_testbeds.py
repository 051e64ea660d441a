import math
import os
import subprocess
import sys

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal
from scipy import linalg, stats

from mrsur import testbeds
from mrsur.models import UnknownLevel
from mrsur.testbeds import (AllZeroTrajectory, CostModel, OscillatorConfig, cost_eval,
                            exp_euler_trajectory, expm_2x2, forrester_hf, forrester_lf,
                            oscillator_response, oscillator_responses, toy_gp_sampler)


def free_response(omega0, zeta, t):
    """Displacement of x'' + 2 zeta w x' + w^2 x = 0 from x(0) = 1, x'(0) = 0."""
    zw = zeta * omega0
    if zeta < 1:
        wd = omega0 * math.sqrt(1 - zeta ** 2)
        return np.exp(-zw * t) * (np.cos(wd * t) + zw / wd * np.sin(wd * t))
    if zeta == 1:
        return np.exp(-omega0 * t) * (1 + omega0 * t)
    wh = omega0 * math.sqrt(zeta ** 2 - 1)
    return np.exp(-zw * t) * (np.cosh(wh * t) + zw / wh * np.sinh(wh * t))


class TestForrester:
    def test_values(self):
        assert forrester_lf(1 / 3) == pytest.approx(-5 / 3, abs=1e-14)
        assert forrester_lf(0.0) == pytest.approx(2 * math.sin(-4) - 5, abs=1e-14)
        assert forrester_lf(0.5) == pytest.approx(0.5 * math.sin(2), abs=1e-14)
        assert forrester_hf(1 / 3) == pytest.approx(10.0, abs=1e-14)
        assert forrester_hf(0.0) == pytest.approx(4 * math.sin(-4) + 10, abs=1e-14)

    def test_autoregressive_identity(self):
        u = np.linspace(0, 1, 101)
        assert np.max(np.abs(forrester_hf(u) - (2 * forrester_lf(u) - 20 * (u - 1)))) <= 1e-12


class TestMatrixExponential:
    @pytest.mark.parametrize("omega0,zeta,delta", [
        (1.0, 0.0, 0.3), (2.0, 0.1, 0.05), (1.0, 1.0, 0.2), (3.0, 2.5, 0.1), (0.5, 0.5, 1.0)])
    def test_matches_scipy(self, omega0, zeta, delta):
        A = np.array([[0.0, 1.0], [-omega0 ** 2, -2 * zeta * omega0]])
        assert_allclose(expm_2x2(omega0, zeta, delta), linalg.expm(A * delta), atol=1e-14)


class TestIntegrator:
    @pytest.mark.parametrize("zeta", [0.0, 0.1, 0.5, 1.0, 2.0])
    def test_analytic_free_response(self, zeta):
        cfg = OscillatorConfig(1.0, zeta, 0.01, S=0.0)
        traj = exp_euler_trajectory(cfg, seed=0, x0=(1.0, 0.0))
        t = 0.01 * np.arange(cfg.n_steps + 1)
        assert np.max(np.abs(traj[:, 0] - free_response(1.0, zeta, t))) <= 1e-8

    def test_undamped_period(self):
        for delta in (0.5, 0.25, 0.1, 0.01):
            cfg = OscillatorConfig(2 * math.pi, 0.0, delta, t_end=1.0, S=0.0)
            traj = exp_euler_trajectory(cfg, x0=(1.0, 0.0))
            assert traj[-1, 0] == pytest.approx(1.0, abs=1e-9)

    def test_flow_composition(self):
        fine = exp_euler_trajectory(OscillatorConfig(1.0, 0.1, 0.01, S=0.0), x0=(1.0, 0.0))
        coarse = exp_euler_trajectory(OscillatorConfig(1.0, 0.1, 0.5, S=0.0), x0=(1.0, 0.0))
        assert_allclose(fine[::50], coarse, atol=1e-9)

    def test_zero_noise_from_rest(self):
        traj = exp_euler_trajectory(OscillatorConfig(3.0, 0.05, 0.1, S=0.0), seed=1)
        assert np.all(traj == 0.0)

    def test_step_count(self):
        assert OscillatorConfig(1.0, 0.1, 1 / 3).n_steps == 90
        assert OscillatorConfig(1.0, 0.1, 0.51).n_steps == 58
        assert exp_euler_trajectory(OscillatorConfig(1.0, 0.1, 0.2), seed=0).shape == (151, 2)

    def test_noise_increment(self):
        # the first state is exp(A delta) (0, sqrt(2 pi S delta) U)
        cfg = OscillatorConfig(3.0, 0.05, 0.1, S=2.0)
        u = np.random.default_rng(5).standard_normal(cfg.n_steps)[0]
        traj = exp_euler_trajectory(cfg, seed=5)
        ref = expm_2x2(3.0, 0.05, 0.1) @ [0.0, math.sqrt(2 * math.pi * 2.0 * 0.1) * u]
        assert_allclose(traj[1], ref, atol=1e-15)

    def test_batch_matches_single_path(self):
        cfg = OscillatorConfig(3.0, 0.05, 0.05, S=0.3)
        traj = exp_euler_trajectory(cfg, seed=11)
        with np.errstate(divide="ignore"):
            ref = np.log(np.abs(traj[:, 0])).max()
        assert oscillator_response(cfg, seed=11) == pytest.approx(ref, abs=1e-12)

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            OscillatorConfig(0.0, 0.1, 0.1)
        with pytest.raises(ValueError):
            OscillatorConfig(1.0, -0.1, 0.1)
        with pytest.raises(ValueError):
            OscillatorConfig(1.0, 0.1, 0.0)


class TestResponse:
    def test_all_zero(self):
        with pytest.raises(AllZeroTrajectory):
            oscillator_response(OscillatorConfig(3.0, 0.05, 0.1, S=0.0), seed=0)

    def test_log_shift(self):
        base = OscillatorConfig(3.0, 0.05, 0.05, S=0.7)
        for c in (0.1, 2.0, 13.0):
            scaled = OscillatorConfig(3.0, 0.05, 0.05, S=0.7 * c ** 2)
            diff = oscillator_responses(scaled, 20, seed=4) - oscillator_responses(base, 20, seed=4)
            assert_allclose(diff, math.log(c), atol=1e-12)

    def test_reproducible_median(self):
        cfg = OscillatorConfig(3.0, 0.05, 0.01)
        a = np.median(oscillator_responses(cfg, 200, seed=np.random.SeedSequence(8)))
        b = np.median(oscillator_responses(cfg, 200, seed=np.random.SeedSequence(8)))
        assert abs(a - b) <= 1e-12

    def test_batch_is_independent_paths(self):
        cfg = OscillatorConfig(2.0, 0.1, 0.1)
        z = oscillator_responses(cfg, 300, seed=3)
        assert z.shape == (300,)
        assert np.unique(z).size == 300

    def test_coarse_level_has_larger_variance(self):
        coarse = oscillator_responses(OscillatorConfig(3.0, 0.05, 1.0), 500, seed=1)
        fine = oscillator_responses(OscillatorConfig(3.0, 0.05, 0.01), 500, seed=2)
        ratio = coarse.var(ddof=1) / fine.var(ddof=1)
        assert stats.f.sf(ratio, 499, 499) < 0.01

    def test_kernels_agree(self):
        cfg = OscillatorConfig(3.0, 0.05, 0.05)
        E = expm_2x2(3.0, 0.05, 0.05)
        noise = np.random.default_rng(0).standard_normal((20, cfg.n_steps))
        assert_array_equal(testbeds._trajectories_nb(E, noise, 0.0, 0.0),
                           testbeds._trajectories_np(E, noise, 0.0, 0.0))


class TestCosts:
    def test_affine_table_values(self):
        cm = CostModel.affine(0.0098, 0.0208)
        assert cost_eval(cm, 1.0) == pytest.approx(0.0306, abs=1e-12)
        assert 1 / cost_eval(cm, 1.0) == pytest.approx(32.7, abs=0.1)
        assert 1 / cost_eval(cm, 0.2) == pytest.approx(14.3, abs=0.1)

    def test_forrester_ratio(self):
        cm = CostModel.from_table({1.0: 0.25, 2.0: 1.0})
        assert cost_eval(cm, 1.0) == 0.25
        assert cost_eval(cm, 2.0) / cost_eval(cm, 1.0) == 4.0

    def test_vectorised(self):
        cm = CostModel.from_table({1.0: 0.25, 2.0: 1.0})
        assert_array_equal(cm(np.array([1.0, 2.0, 1.0])), [0.25, 1.0, 0.25])

    def test_errors(self):
        with pytest.raises(UnknownLevel):
            cost_eval(CostModel.from_table({1.0: 0.25}), 0.5)
        with pytest.raises(ValueError):
            CostModel.from_table({1.0: 0.0})
        with pytest.raises(ValueError):
            CostModel.affine(-1.0, 0.1)
        with pytest.raises(ValueError):
            cost_eval(CostModel.affine(0.1, 0.1), 0.0)


class TestToySampler:
    def test_deterministic(self):
        a = toy_gp_sampler(5)
        b = toy_gp_sampler(5)
        assert_array_equal(a.values, b.values)
        assert_array_equal(a.observe([0.1], 1.0), b.observe([0.1], 1.0))

    def test_variances(self):
        rng = np.random.default_rng(123)
        draws = np.array([toy_gp_sampler(rng, n_u=11).xi([0.0, 0.0], [1.0, 0.0])
                          for _ in range(5000)])
        v = draws.var(axis=0, ddof=1)
        assert v[0] == pytest.approx(5.0, rel=0.05)
        assert v[1] == pytest.approx(1.0, rel=0.05)

    def test_observer_noise(self):
        prob = toy_gp_sampler(0, n_u=11)
        obs = prob.observe(np.zeros(4000), 0.5)
        assert obs.std(ddof=1) == pytest.approx(0.4, rel=0.05)
        assert obs.mean() == pytest.approx(prob.xi([0.0], 0.5)[0], abs=0.03)

    def test_truth_indicator(self):
        prob = toy_gp_sampler(1)
        assert_array_equal(prob.truth(), (prob.xi(prob.u_grid, 0.0) > 0).astype(float))


def test_numpy_fallback_subprocess():
    env = dict(os.environ, MRSUR_DISABLE_NUMBA="1")
    code = ("from mrsur import _accel, testbeds as t; assert not _accel.USE_NUMBA; "
            "print(repr(t.oscillator_response(t.OscillatorConfig(3.0, 0.05, 0.05), seed=1)))")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True,
                         text=True, check=True).stdout.strip()
    assert float(out) == oscillator_response(OscillatorConfig(3.0, 0.05, 0.05), seed=1)
