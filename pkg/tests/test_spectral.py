import json
import math

import numpy as np
import pytest

from mvstable.core import (DegenerateDirectionError, StableModelParams,
                           simulate_mvstable)
from mvstable.spectral import (CFSystem, DiscreteMeasure, NormalMeasureApprox,
                               beta_from_cf, build_cf_system,
                               build_scale_system, draw_gamma_truncated,
                               measure_from_json, measure_to_json,
                               sigma_beta_cloud_batch, sigma_beta_discrete,
                               sigma_beta_discrete_batch, sigma_beta_normal,
                               sample_normal_cloud, solve_gamma)
from mvstable.sphere import gaussian_normalized_grid, uniform_sphere


def random_measure(rng, j=5, d=2):
    atoms = rng.standard_normal((j, d))
    atoms /= np.linalg.norm(atoms, axis=1, keepdims=True)
    return DiscreteMeasure(atoms, rng.uniform(0.1, 1.0, j))


class TestSigmaBetaDiscrete:
    def test_single_atom(self):
        s0 = np.array([0.6, 0.8])
        m = DiscreteMeasure(s0[None, :], np.array([0.7]))
        s = np.array([1.0, 0.0])
        pf = sigma_beta_discrete(s, m, 1.5)
        assert pf.sigma ** 1.5 == pytest.approx(0.7 * 0.6 ** 1.5, rel=1e-12)
        assert pf.beta == pytest.approx(1.0)

    def test_symmetric_measure_beta_zero(self):
        rng = np.random.default_rng(1)
        half = rng.standard_normal((3, 2))
        half /= np.linalg.norm(half, axis=1, keepdims=True)
        atoms = np.vstack([half, -half])
        w = np.tile(rng.uniform(0.2, 1.0, 3), 2)
        m = DiscreteMeasure(atoms, w)
        for _ in range(10):
            s = rng.standard_normal(2)
            s /= np.linalg.norm(s)
            assert sigma_beta_discrete(s, m, 1.3).beta \
                == pytest.approx(0.0, abs=1e-12)

    def test_orthogonal_atom_drops_out(self):
        m = DiscreteMeasure(np.array([[1.0, 0.0], [0.0, 1.0]]),
                            np.array([1.0, 1.0]))
        pf = sigma_beta_discrete(np.array([1.0, 0.0]), m, 1.5)
        assert pf.sigma == pytest.approx(1.0)
        assert pf.beta == pytest.approx(1.0)

    def test_degenerate(self):
        m = DiscreteMeasure(np.array([[1.0, 0.0]]), np.array([1.0]))
        with pytest.raises(DegenerateDirectionError):
            sigma_beta_discrete(np.array([0.0, 1.0]), m, 1.5)

    def test_beta_in_range_batch(self):
        rng = np.random.default_rng(2)
        m = random_measure(rng, 6, 3)
        s = uniform_sphere(3, 200, rng).points
        sig_a, beta = sigma_beta_discrete_batch(s, m.atoms, m.weights, 0.9)
        assert np.all(sig_a > 0)
        assert np.all(np.abs(beta) <= 1.0)


class TestSigmaBetaNormal:
    def test_deterministic_under_seed(self):
        m = NormalMeasureApprox(0.3, 0.8, mc_size=500)
        s = np.array([0.0, 1.0, 0.0])
        a = sigma_beta_normal(s, m, 1.5, seed=4)
        b = sigma_beta_normal(s, m, 1.5, seed=4)
        assert a == b

    def test_symmetric_beta_small(self):
        m = NormalMeasureApprox(0.0, 1.0, mc_size=10 ** 5)
        s = np.array([1.0, 0.0])
        pf = sigma_beta_normal(s, m, 1.5, seed=5)
        assert abs(pf.beta) < 0.02

    def test_mc_convergence_rate(self):
        # errors against an M=10^6 reference shrink at the sqrt rate
        rng = np.random.default_rng(6)
        d, alpha = 5, 1.5
        dirs = uniform_sphere(d, 200, rng).points
        ref_cloud = sample_normal_cloud(
            NormalMeasureApprox(0.0, 1.0, mc_size=10 ** 6), d, rng)
        ref, _ = sigma_beta_cloud_batch(dirs, ref_cloud, alpha)
        errs = {}
        for m_size in (2000, 8000):
            vals = []
            for rep in range(6):
                cloud = sample_normal_cloud(
                    NormalMeasureApprox(0.0, 1.0, mc_size=m_size), d, rng)
                est, _ = sigma_beta_cloud_batch(dirs, cloud, alpha)
                vals.append(np.median(np.abs(est - ref)))
            errs[m_size] = float(np.mean(vals))
        ratio = errs[8000] / errs[2000]
        assert 0.35 <= ratio <= 0.7


class TestBetaFromCF:
    def test_symmetric_zero(self):
        rng = np.random.default_rng(7)
        half = rng.standard_normal((2, 2))
        half /= np.linalg.norm(half, axis=1, keepdims=True)
        m = DiscreteMeasure(np.vstack([half, -half]),
                            np.tile(rng.uniform(0.2, 1.0, 2), 2))
        s = np.array([1.0, 0.0])
        pf = sigma_beta_discrete(s, m, 1.4)
        assert beta_from_cf(s, m, 1.4, pf.sigma) == pytest.approx(0.0,
                                                                  abs=1e-14)

    def test_single_atom_sign(self):
        s0 = np.array([0.6, 0.8])
        m = DiscreteMeasure(s0[None, :], np.array([0.9]))
        for s in (np.array([1.0, 0.0]), np.array([-1.0, 0.0])):
            pf = sigma_beta_discrete(s, m, 1.3)
            assert beta_from_cf(s, m, 1.3, pf.sigma) \
                == pytest.approx(pf.beta, abs=1e-12)

    def test_alpha2_returns_zero(self):
        m = random_measure(np.random.default_rng(8))
        assert beta_from_cf(np.array([1.0, 0.0]), m, 2.0, 1.0) == 0.0

    @pytest.mark.parametrize("alpha", [0.8, 1.3, 1.9])
    def test_identity_with_direct_sum(self, alpha):
        rng = np.random.default_rng(9)
        for _ in range(100):
            m = random_measure(rng, 5, 2)
            s = rng.standard_normal(2)
            s /= np.linalg.norm(s)
            pf = sigma_beta_discrete(s, m, alpha)
            assert beta_from_cf(s, m, alpha, pf.sigma) \
                == pytest.approx(pf.beta, abs=1e-10)


class TestCFSystem:
    def test_model_mode_exact(self):
        rng = np.random.default_rng(10)
        m = random_measure(rng, 4, 2)
        tau = gaussian_normalized_grid(2, 40, rng).points
        system = build_cf_system(m.atoms, tau, 1.5, ridge=1e-8,
                                 model_measure=m)
        resid = system.response - system.design @ m.weights
        assert float(np.max(np.abs(resid))) < 1e-12

    def test_alpha2_imaginary_block_zero(self):
        rng = np.random.default_rng(11)
        m = random_measure(rng, 3, 2)
        tau = gaussian_normalized_grid(2, 30, rng).points
        system = build_cf_system(m.atoms, tau, 2.0, ridge=1e-8,
                                 model_measure=m)
        k = tau.shape[0]
        assert np.all(system.design[k:] == 0.0)

    def test_empirical_recovery(self):
        atoms = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
        m = DiscreteMeasure(atoms, np.array([0.3, 0.3, 0.2, 0.2]))
        x = simulate_mvstable(StableModelParams(1.5, np.zeros(2), m),
                              10 ** 5, seed=12)
        tau = gaussian_normalized_grid(2, 40, 13).points
        system = build_cf_system(atoms, tau, 1.5, ridge=0.01, data=x,
                                 rescale=False)
        gamma_true = m.weights
        resid = system.response - system.design @ gamma_true
        rel = np.linalg.norm(resid) / np.linalg.norm(system.response)
        assert rel < 0.05

    def test_exact_recovery_solve(self):
        rng = np.random.default_rng(14)
        m = random_measure(rng, 4, 2)
        tau = gaussian_normalized_grid(2, 40, rng).points
        system = build_cf_system(m.atoms, tau, 1.5, ridge=1e-8,
                                 model_measure=m)
        gamma_hat, cov = solve_gamma(system)
        assert np.allclose(gamma_hat, m.weights, atol=1e-3)
        assert cov.shape == (4, 4)

    def test_zero_response(self):
        rng = np.random.default_rng(15)
        m = random_measure(rng, 3, 2)
        tau = gaussian_normalized_grid(2, 30, rng).points
        system = build_cf_system(m.atoms, tau, 1.5, ridge=0.1,
                                 model_measure=m)
        system.response = np.zeros_like(system.response)
        gamma_hat, _ = solve_gamma(system)
        assert np.allclose(gamma_hat, 0.0)

    def test_ridge_limit_shrinks(self):
        rng = np.random.default_rng(16)
        m = random_measure(rng, 3, 2)
        tau = gaussian_normalized_grid(2, 30, rng).points
        norms = []
        for ridge in (1e-6, 1e-2, 1e2, 1e6):
            system = build_cf_system(m.atoms, tau, 1.5, ridge=ridge,
                                     model_measure=m)
            gamma_hat, _ = solve_gamma(system)
            norms.append(np.linalg.norm(gamma_hat))
        assert all(a >= b for a, b in zip(norms[:-1], norms[1:]))
        assert norms[-1] < 1e-3

    def test_scale_factor_recorded(self):
        rng = np.random.default_rng(17)
        x = rng.standard_normal((500, 2)) * 3.0
        tau = gaussian_normalized_grid(2, 20, rng).points
        atoms = uniform_sphere(2, 2, rng).points
        system = build_cf_system(atoms, tau, 1.5, ridge=0.01, data=x)
        assert system.scale_factor == pytest.approx(
            float(np.median(np.linalg.norm(x, axis=1))))

    def test_low_modulus_rows_dropped(self):
        rng = np.random.default_rng(18)
        x = rng.standard_normal((200, 2)) * 60.0  # CF dies fast in tau
        tau = gaussian_normalized_grid(2, 20, rng).points
        atoms = uniform_sphere(2, 2, rng).points
        with pytest.warns(UserWarning):
            system = build_cf_system(atoms, tau, 1.9, ridge=0.01, data=x,
                                     rescale=False)
        assert system.n_dropped > 0


class TestTruncatedGamma:
    def test_nonnegative_always(self):
        rng = np.random.default_rng(19)
        gamma_hat = np.array([0.5, -0.2, 0.1])
        cov = np.diag([0.04, 0.04, 0.01])
        for _ in range(200):
            g = draw_gamma_truncated(gamma_hat, cov, rng,
                                     max_rejections=10)
            assert np.all(g >= 0.0)

    def test_moments_match_rejection(self):
        # Gibbs fallback should agree with plain rejection sampling
        rng = np.random.default_rng(20)
        gamma_hat = np.array([0.3, 0.1])
        cov = np.array([[0.04, 0.01], [0.01, 0.02]])
        direct = np.array([draw_gamma_truncated(gamma_hat, cov, rng)
                           for _ in range(4000)])
        gibbs = np.array([draw_gamma_truncated(gamma_hat, cov, rng,
                                               max_rejections=0)
                          for _ in range(4000)])
        assert np.allclose(direct.mean(0), gibbs.mean(0), atol=0.02)
        assert np.allclose(direct.std(0), gibbs.std(0), atol=0.02)


class TestScaleSystem:
    def test_single_atom_recovery(self):
        rng = np.random.default_rng(21)
        atom = np.array([[0.6, 0.8]])
        gamma_true = np.array([0.7])
        t_grid = uniform_sphere(2, 10, rng).points
        alpha = 1.5
        sig = (np.abs(t_grid @ atom.T) ** alpha @ gamma_true) ** (1 / alpha)
        a_mat, b_vec = build_scale_system(t_grid, atom, alpha, sig)
        system = CFSystem(design=a_mat, response=b_vec, ridge=1e-10,
                          noise_scale=None, tau_grid=t_grid)
        gamma_hat, _ = solve_gamma(system)
        assert gamma_hat[0] == pytest.approx(0.7, abs=1e-6)

    def test_entries_bounded(self):
        rng = np.random.default_rng(22)
        t_grid = uniform_sphere(3, 30, rng).points
        atoms = uniform_sphere(3, 5, rng).points
        a_mat, _ = build_scale_system(t_grid, atoms, 1.2,
                                      np.ones(30))
        assert np.all(a_mat >= 0.0) and np.all(a_mat <= 1.0)

    def test_linearity_in_scale(self):
        rng = np.random.default_rng(23)
        atoms = uniform_sphere(2, 3, rng).points
        t_grid = uniform_sphere(2, 30, rng).points
        gamma_true = np.array([0.5, 0.2, 0.8])
        alpha = 1.4
        sig_a = np.abs(t_grid @ atoms.T) ** alpha @ gamma_true
        sig = sig_a ** (1 / alpha)
        c = 3.0
        a1, b1 = build_scale_system(t_grid, atoms, alpha, sig)
        a2, b2 = build_scale_system(t_grid, atoms, alpha,
                                    (c * sig_a) ** (1 / alpha))
        s1 = CFSystem(a1, b1, 1e-10, None, t_grid)
        s2 = CFSystem(a2, b2, 1e-10, None, t_grid)
        g1, _ = solve_gamma(s1)
        g2, _ = solve_gamma(s2)
        assert np.allclose(g2, c * g1, rtol=1e-8)


class TestSerialization:
    def test_discrete_round_trip(self):
        m = random_measure(np.random.default_rng(24), 4, 3)
        back = measure_from_json(measure_to_json(m))
        assert np.allclose(back.atoms, m.atoms)
        assert np.allclose(back.weights, m.weights)

    def test_normal_round_trip(self):
        m = NormalMeasureApprox(0.4, 1.2, mc_size=777, mass=2.0)
        back = measure_from_json(measure_to_json(m))
        assert back == m

    def test_schema_fields(self):
        m = NormalMeasureApprox(0.1, 0.9, mc_size=100)
        obj = json.loads(measure_to_json(m))
        assert obj["type"] == "normal"
        assert set(obj) == {"type", "mu", "omega", "M", "mass"}

    def test_total_mass_consistency(self):
        rng = np.random.default_rng(25)
        m = random_measure(rng, 4, 2)
        tau = gaussian_normalized_grid(2, 40, rng).points
        system = build_cf_system(m.atoms, tau, 1.5, ridge=1e-8,
                                 model_measure=m)
        gamma_hat, _ = solve_gamma(system)
        assert float(np.sum(gamma_hat)) == pytest.approx(
            m.total_mass(), abs=1e-3)
