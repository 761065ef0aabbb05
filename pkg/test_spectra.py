"""
Tests for Gram matrices, top-k eigenvalues and the off-diagonal diagnostics.
"""

import itertools

import numpy as np
import pytest
from hypothesis import given, settings as hyp_settings, strategies as st
from scipy import linalg

from app.models.errors import SolverConvergenceError
from app.models.schemas import MA1Profile, NoiseFamily, TailModel, iid_profile
from app.services.noise_service import noise_service
from app.services.spectra_service import spectra_service


class TestGramMatrix:
    def test_small_cases(self):
        np.testing.assert_array_equal(spectra_service.gram_matrix(np.eye(2)), np.eye(2))
        X = np.array([[1.0, 0.0], [1.0, 0.0]])
        np.testing.assert_array_equal(spectra_service.gram_matrix(X), [[1.0, 1.0], [1.0, 1.0]])

    def test_against_triple_loop(self, rng):
        X = rng.standard_normal((5, 7))
        naive = np.zeros((5, 5))
        for i, j, t in itertools.product(range(5), range(5), range(7)):
            naive[i, j] += X[i, t] * X[j, t]
        A = spectra_service.gram_matrix(X)
        np.testing.assert_allclose(A, naive, rtol=1e-12, atol=1e-12)
        np.testing.assert_array_equal(A, A.T)


class TestTopK:
    def test_small_cases(self):
        np.testing.assert_allclose(spectra_service.top_k_eigenvalues(np.eye(3), 2), [1.0, 1.0])
        np.testing.assert_allclose(
            spectra_service.top_k_eigenvalues(np.array([[2.0, 1.0], [1.0, 2.0]]), 2), [3.0, 1.0]
        )

    def test_against_full_decomposition(self, rng):
        for _ in range(100):
            A = spectra_service.gram_matrix(rng.standard_normal((20, 30)))
            full = np.sort(linalg.eigvalsh(A))[::-1]
            top = spectra_service.top_k_eigenvalues(A, 5)
            np.testing.assert_allclose(top, full[:5], rtol=1e-10)
            assert full.sum() == pytest.approx(np.trace(A), rel=1e-8)

    def test_lanczos_path(self, rng):
        A = spectra_service.gram_matrix(rng.standard_normal((60, 80)))
        full = np.sort(linalg.eigvalsh(A))[::-1]
        top = spectra_service.top_k_eigenvalues(A, 3, dense_threshold=10)
        np.testing.assert_allclose(top, full[:3], rtol=1e-9)

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            spectra_service.top_k_eigenvalues(np.array([[1.0, 2.0], [0.0, 1.0]]), 1)
        with pytest.raises(ValueError):
            spectra_service.top_k_eigenvalues(np.eye(3), 4)

    def test_row_permutation_invariance(self, rng):
        X = rng.standard_normal((30, 40))
        permuted = X[rng.permutation(30)]
        top = spectra_service.top_k_eigenvalues(spectra_service.gram_matrix(X), 5)
        shuffled = spectra_service.top_k_eigenvalues(spectra_service.gram_matrix(permuted), 5)
        np.testing.assert_allclose(shuffled, top, rtol=1e-10)

    @hyp_settings(max_examples=25, deadline=None)
    @given(seed=st.integers(min_value=0, max_value=2**32 - 1))
    def test_psd_floor_on_rank_deficient_gram(self, seed):
        # p > n leaves p - n zero eigenvalues that rounding may push below 0
        model = TailModel(alpha=0.8, family=NoiseFamily.SYMMETRIC_PARETO)
        X = noise_service.sample_noise_array(model, (12, 4), np.random.default_rng(seed))
        sample = spectra_service.spectral_sample(X, 12)
        assert np.all(sample.eigen_topk >= -1e-8 * sample.trace)

    def test_psd_floor_violation_raises(self, monkeypatch):
        monkeypatch.setattr(spectra_service, "top_k_eigenvalues", lambda A, k: np.array([1.0, -1.0]))
        with pytest.raises(SolverConvergenceError):
            spectra_service.spectral_sample(np.eye(2), 2)


class TestDiagnostics:
    def test_diag_order_stats(self, rng):
        np.testing.assert_array_equal(spectra_service.diag_order_stats(np.eye(3), 3), [1.0, 1.0, 1.0])
        np.testing.assert_array_equal(spectra_service.diag_order_stats(np.diag([5.0, 2.0, 9.0]), 2), [9.0, 5.0])
        A = spectra_service.gram_matrix(rng.standard_normal((12, 4)))
        np.testing.assert_array_equal(spectra_service.diag_order_stats(A, 4), np.sort(np.diag(A))[::-1][:4])

    def test_offdiag_infinity_norm(self, rng):
        assert spectra_service.offdiag_infinity_norm(np.diag([3.0, 1.0])) == 0.0
        assert spectra_service.offdiag_infinity_norm(np.ones((2, 2))) == 1.0
        A = spectra_service.gram_matrix(rng.standard_normal((6, 6)))
        brute = max(sum(abs(A[i, j]) for j in range(6) if j != i) for i in range(6))
        assert spectra_service.offdiag_infinity_norm(A) == pytest.approx(brute, rel=1e-12)

    def test_spectral_norm_bounded_by_infinity_norm(self, rng):
        A = spectra_service.gram_matrix(rng.standard_normal((8, 10)))
        assert spectra_service.offdiag_spectral_norm(A) <= spectra_service.offdiag_infinity_norm(A) + 1e-12

    def test_cross_product_max(self, rng):
        disjoint = np.array([[1.0, 0.0, 0.0], [0.0, 2.0, 0.0]])
        assert spectra_service.cross_product_max(disjoint) == 0.0
        r = np.array([1.0, -2.0, 3.0])
        assert spectra_service.cross_product_max(np.vstack([r, r])) == 14.0
        X = rng.standard_normal((4, 5))
        brute = max(np.sum(np.abs(X[i] * X[j])) for i in range(4) for j in range(i + 1, 4))
        assert spectra_service.cross_product_max(X) == pytest.approx(brute, rel=1e-12)

    def test_cross_product_max_across_blocks(self, rng):
        X = rng.standard_normal((300, 3))
        X[7] = 0.0
        X[290] = 0.0
        X[7, 0] = X[290, 0] = 100.0
        assert spectra_service.cross_product_max(X) == pytest.approx(1e4, rel=1e-3)

    @hyp_settings(max_examples=25, deadline=None)
    @given(seed=st.integers(min_value=0, max_value=2**32 - 1), k=st.integers(min_value=1, max_value=5))
    def test_weyl_coupling(self, seed, k):
        model = TailModel(alpha=0.8, family=NoiseFamily.SYMMETRIC_PARETO)
        X = noise_service.sample_noise_array(model, (10, 15), np.random.default_rng(seed))
        sample = spectra_service.spectral_sample(X, k)
        assert sample.weyl_gap <= sample.offdiag_inf_norm + 1e-8 * sample.trace


class TestCentering:
    def test_zero_below_two(self):
        model = TailModel(alpha=1.5)
        assert spectra_service.centering_mu(model, MA1Profile(theta=1.0), 100, 10) == 0.0

    def test_finite_variance(self):
        model = TailModel(alpha=3.0, family=NoiseFamily.SYMMETRIC_PARETO, center_mean=True)
        assert spectra_service.centering_mu(model, iid_profile(), 100, 10) == pytest.approx(3.0, rel=1e-12)
        assert spectra_service.centering_mu(model, MA1Profile(theta=1.0), 100, 10) == pytest.approx(6.0, rel=1e-12)

    def test_truncated_at_alpha_two(self, sym_pareto_2):
        # E Z^2 1{Z^2 <= a_np^2} = 2 ln a_np = ln(n p) for the symmetric Pareto law
        mu = spectra_service.centering_mu(sym_pareto_2, iid_profile(), 10, 10)
        assert mu == pytest.approx(np.log(100.0), rel=1e-10)

    def test_center_scale(self):
        values = np.array([1.5, -2.0])
        np.testing.assert_array_equal(spectra_service.center_scale(values, 5, 0.0, 1.0), values)
        np.testing.assert_array_equal(spectra_service.center_scale([10.0], 2, 3.0, 2.0), [1.0])
