import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cvqkd.fock import FockOracle, evm_from_source
from cvqkd.params import ParameterError, source_overlap
from cvqkd.stokes import StokesMoments
from cvqkd.witness import (
    DEFAULT_FEASIBILITY_TOL,
    EvmInstance,
    evm_from_moments,
    feasibility_residual,
    partial_transpose,
    separability_feasible,
    symmetric_noise_instance,
    tolerable_variance_threshold,
)


def random_hermitian(rng, n=6):
    a = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    return 0.5 * (a + a.conj().T)


def oracle_min_residual(inst, n_samples=50_000, n_refine=8, seed=0):
    """Independent residual search: random completion sampling plus local
    polish, sharing no code with the projection solver."""
    from scipy.optimize import minimize

    rng = np.random.default_rng(seed)

    def g(x):
        z = x[:6] + 1j * x[6:]
        chi = inst.chi(z)
        pt = partial_transpose(chi)
        return max(0.0, -np.linalg.eigvalsh(chi)[0],
                   -np.linalg.eigvalsh(pt)[0])

    scale = max(1.0, float(np.max(np.abs(inst.fixed))))
    samples = rng.normal(0.0, scale, size=(n_samples, 12))
    samples[0] = 0.0
    vals = np.array([g(x) for x in samples[: n_samples // 10]])
    # cheap pre-screen on a tenth, then dense sampling near the best decile
    order = np.argsort(vals)
    best = vals[order[0]]
    starts = [samples[i] for i in order[:n_refine]]
    for x0 in starts:
        res = minimize(g, x0, method="Powell",
                       options={"maxiter": 2000, "xtol": 1e-8})
        best = min(best, float(res.fun))
    return best


class TestEvmLayout:
    def test_chi_completion_structure(self):
        inst = symmetric_noise_instance(0.3, 0.7, 1.2)
        z = np.arange(1.0, 7.0) + 0.1j * np.arange(6.0)
        chi = inst.chi(z)
        assert np.max(np.abs(chi - chi.conj().T)) < 1e-12
        # fixed entries untouched by the completion
        assert chi[0, 3] == inst.fixed[0, 3]
        np.testing.assert_allclose(chi[0:3, 0:3], inst.fixed[0:3, 0:3])
        np.testing.assert_allclose(chi[3:6, 3:6], inst.fixed[3:6, 3:6])
        assert chi[0, 4] == z[0]
        assert chi[1, 3] == z[0]
        assert chi[1, 5] == z[4] + 1j * z[5]

    def test_non_hermitian_template_rejected(self):
        f = np.zeros((6, 6), dtype=complex)
        f[0, 1] = 1.0
        with pytest.raises(ParameterError):
            EvmInstance(fixed=f, n_lo=1e8)

    def test_matches_exact_source_matrix(self):
        # reconstruct the template from the exact two-mode matrix and check
        # that a completion reproduces it entry for entry
        alpha, eta, n_lo = 0.3, 0.64, 25.0
        true_chi = evm_from_source(alpha, eta, n_lo=n_lo)

        states = []
        for k in (0, 1):
            blk = 2.0 * true_chi[3 * k:3 * k + 3, 3 * k:3 * k + 3]
            states.append(StokesMoments(
                mean_s2=blk[0, 1].real, mean_s3=blk[0, 2].real,
                second_s2=blk[1, 1].real, second_s3=blk[2, 2].real,
                cross_sym=blk[1, 2].real, s1_lower_norm=blk[1, 2].imag))
        inst = evm_from_moments(states[0], states[1],
                                source_overlap(alpha), n_lo)
        np.testing.assert_allclose(inst.fixed[0:3, 0:3],
                                   true_chi[0:3, 0:3], atol=1e-8)
        np.testing.assert_allclose(inst.fixed[3:6, 3:6],
                                   true_chi[3:6, 3:6], atol=1e-8)
        assert inst.fixed[0, 3] == pytest.approx(true_chi[0, 3], abs=1e-6)

        u = true_chi[0:3, 3:6]
        z = np.array([u[0, 1], u[0, 2], u[1, 1], u[2, 2],
                      0.5 * (u[1, 2] + u[2, 1]),
                      (u[1, 2] - u[2, 1]) / 2j])
        np.testing.assert_allclose(inst.chi(z), true_chi, atol=1e-6)

    def test_symmetric_instance_validation(self):
        with pytest.raises(ParameterError):
            symmetric_noise_instance(0.3, 0.0, 1.0)
        with pytest.raises(ParameterError):
            symmetric_noise_instance(0.3, 0.7, -0.5)


class TestPartialTranspose:
    def test_block_swap(self):
        rng = np.random.default_rng(1)
        chi = random_hermitian(rng)
        pt = partial_transpose(chi)
        np.testing.assert_allclose(pt[0:3, 3:6], chi[3:6, 0:3])
        np.testing.assert_allclose(pt[0:3, 0:3], chi[0:3, 0:3])

    @given(st.integers(min_value=0, max_value=2 ** 32 - 1))
    @settings(max_examples=30)
    def test_involution_trace_hermiticity(self, seed):
        chi = random_hermitian(np.random.default_rng(seed))
        pt = partial_transpose(chi)
        np.testing.assert_allclose(partial_transpose(pt), chi, atol=1e-12)
        assert np.trace(pt) == pytest.approx(np.trace(chi))
        assert np.max(np.abs(pt - pt.conj().T)) < 1e-12

    def test_rejects_non_hermitian(self):
        m = np.zeros((6, 6), dtype=complex)
        m[0, 1] = 1.0
        with pytest.raises(ParameterError):
            partial_transpose(m)

    def test_rejects_wrong_shape(self):
        with pytest.raises(ParameterError):
            partial_transpose(np.eye(4))


class TestFeasibility:
    def test_identical_states_feasible(self):
        # alpha = 0: both signal states coincide, trivially separable
        inst = symmetric_noise_instance(0.0, 0.7, 1.0)
        feasible, res = separability_feasible(inst)
        assert feasible
        assert res <= DEFAULT_FEASIBILITY_TOL

    def test_orthogonal_states_feasible_at_zero(self):
        # zero overlap with shot-noise data: block-diagonal completion works
        inst = symmetric_noise_instance(0.5, 0.7, 1.1)
        fixed = inst.fixed.copy()
        fixed[0, 3] = 0.0
        fixed[3, 0] = 0.0
        zeroed = EvmInstance(fixed=fixed, n_lo=inst.n_lo)
        assert feasibility_residual(zeroed, np.zeros(6)) <= 1e-9
        feasible, _ = separability_feasible(zeroed)
        assert feasible

    @pytest.mark.parametrize("alpha,eta", [
        (0.2, 0.7), (0.3, 0.7), (0.5, 0.7), (0.3, 1.0), (0.4, 0.448),
    ])
    def test_pure_coherent_data_infeasible(self, alpha, eta):
        inst = symmetric_noise_instance(alpha, eta, 1.0)
        feasible, res = separability_feasible(inst)
        assert not feasible
        assert res > 0.01

    def test_noisy_data_feasible(self):
        # far above any threshold the symmetric model is separable
        inst = symmetric_noise_instance(0.3, 0.7, 3.0)
        feasible, res = separability_feasible(inst)
        assert feasible
        assert res <= DEFAULT_FEASIBILITY_TOL

    def test_found_completion_verified_independently(self):
        # the solver's completion must pass a plain-numpy eigenvalue check
        inst = symmetric_noise_instance(0.3, 0.7, 2.0)
        feasible, res, z = separability_feasible(inst, return_z=True)
        assert feasible
        assert feasibility_residual(inst, z) <= DEFAULT_FEASIBILITY_TOL

    def test_infeasibility_confirmed_by_random_search(self):
        # independent oracle: extensive random + local search cannot get the
        # residual anywhere near zero for pure coherent data
        inst = symmetric_noise_instance(0.3, 1.0, 1.0)
        _, res = separability_feasible(inst)
        best = oracle_min_residual(inst, seed=3)
        assert best > 0.05
        assert res > 0.05

    def test_feasibility_monotone_in_variance(self):
        # threshold at (0.3, 0.7) sits near 1.332
        results = {}
        for v in (1.0, 1.30, 1.36, 2.0):
            feasible, _ = separability_feasible(
                symmetric_noise_instance(0.3, 0.7, v))
            results[v] = feasible
        assert results == {1.0: False, 1.30: False, 1.36: True, 2.0: True}

    def test_tol_validation(self):
        with pytest.raises(ParameterError):
            separability_feasible(symmetric_noise_instance(0.3, 0.7, 1.0),
                                  tol=0.0)


class TestVarianceThreshold:
    @pytest.mark.parametrize("alpha,eta,expected", [
        (0.2, 0.7, 1.3737),
        (0.3, 0.7, 1.3322),
        (0.5, 0.7, 1.2242),
        (0.4, 0.448, 1.1726),
        (0.3, 1.0, 1.4982),
    ])
    def test_anchor_values(self, alpha, eta, expected):
        assert tolerable_variance_threshold(alpha, eta) == pytest.approx(
            expected, abs=2e-3)

    def test_monotone_in_eta(self):
        t_low = tolerable_variance_threshold(0.3, 0.448)
        t_mid = tolerable_variance_threshold(0.3, 0.7)
        t_high = tolerable_variance_threshold(0.3, 1.0)
        assert t_low < t_mid < t_high

    def test_lo_power_independence(self):
        # strong-LO regime: the threshold is insensitive to the exact power
        a = tolerable_variance_threshold(0.3, 0.7, n_lo=1e6)
        b = tolerable_variance_threshold(0.3, 0.7, n_lo=1e8)
        assert a == pytest.approx(b, abs=2e-3)

    def test_agrees_with_local_scan(self):
        # step through V at the bisection resolution around the reported
        # threshold: feasibility must flip exactly once, at the threshold
        alpha, eta = 0.4, 0.7
        t = tolerable_variance_threshold(alpha, eta, width=1e-4)
        vs = t + np.arange(-5, 6) * 1e-3
        flags = []
        for v in vs:
            feasible, _ = separability_feasible(
                symmetric_noise_instance(alpha, eta, float(v)))
            flags.append(feasible)
        assert flags == sorted(flags)          # single False -> True flip
        flip = flags.index(True)
        assert abs(float(vs[flip]) - t) <= 1.5e-3

    def test_invalid_alpha(self):
        with pytest.raises(ParameterError):
            tolerable_variance_threshold(0.0, 0.7)
