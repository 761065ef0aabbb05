"""
Spectral service for sample covariance matrices.
Builds XX^T, extracts the top-k eigenvalues and diagonal order statistics,
and computes the off-diagonal diagnostics that couple the two.
"""

import math
from typing import Optional

import numpy as np
from loguru import logger
from scipy import linalg
from scipy.sparse.linalg import ArpackNoConvergence, eigsh

from app.config import settings
from app.models.errors import SolverConvergenceError
from app.models.schemas import CoefficientProfile, SpectralSample, TailModel
from app.services.linproc_service import linproc_service
from app.services.noise_service import noise_service

# Rows per block in cross-product reductions; fixed so results are bit-stable.
ROW_BLOCK = 256


class SpectraService:
    """Service for spectra of XX^T and their diagnostics."""

    def gram_matrix(self, X: np.ndarray) -> np.ndarray:
        """Symmetric p x p product XX^T, upper triangle mirrored."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        A = X @ X.T
        upper = np.triu(A)
        return upper + np.triu(upper, 1).T

    def top_k_eigenvalues(self, A: np.ndarray, k: int, dense_threshold: Optional[int] = None) -> np.ndarray:
        """
        The k algebraically largest eigenvalues, descending.

        Args:
            A: Symmetric p x p matrix
            k: Number of eigenvalues (1..p)
            dense_threshold: Full decomposition at or below this p (settings default)

        Returns:
            Descending array of length k
        """
        p = A.shape[0]
        if A.shape != (p, p):
            raise ValueError(f"matrix must be square, got {A.shape}")
        if not 1 <= k <= p:
            raise ValueError(f"k must lie in 1..{p}, got {k}")
        scale = max(1.0, float(np.max(np.abs(A)))) if A.size else 1.0
        if np.max(np.abs(A - A.T)) > 1e-10 * scale:
            raise ValueError("matrix is not symmetric within 1e-10 relative")
        threshold = settings.dense_eigen_threshold if dense_threshold is None else dense_threshold
        if p <= threshold or k >= p - 1:
            values = linalg.eigh(A, eigvals_only=True, subset_by_index=[p - k, p - 1])
        else:
            values = self._lanczos_top_k(A, k)
        return np.sort(values)[::-1]

    def _lanczos_top_k(self, A: np.ndarray, k: int) -> np.ndarray:
        p = A.shape[0]
        # deterministic start vector keeps the solver bit-stable across runs
        v0 = np.full(p, 1.0 / math.sqrt(p))
        try:
            values, vectors = eigsh(A, k=k, which="LA", v0=v0, tol=0.0, maxiter=max(1000, 20 * p))
        except ArpackNoConvergence as e:
            residuals = []
            if e.eigenvectors is not None and len(e.eigenvalues):
                residuals = np.linalg.norm(A @ e.eigenvectors - e.eigenvectors * e.eigenvalues, axis=0)
            logger.error(f"Lanczos top-{k} did not converge: {len(e.eigenvalues)} of {k} values")
            raise SolverConvergenceError(
                f"Lanczos top-{k} solve on a {p}x{p} matrix did not converge", residuals=list(residuals)
            ) from e
        return values

    def diag_order_stats(self, A: np.ndarray, k: int) -> np.ndarray:
        """Top-k diagonal entries S_(1) >= ... >= S_(k)."""
        diag = np.diag(A)
        if not 1 <= k <= diag.size:
            raise ValueError(f"k must lie in 1..{diag.size}, got {k}")
        top = np.partition(diag, diag.size - k)[diag.size - k:]
        return np.sort(top)[::-1]

    def offdiag_infinity_norm(self, A: np.ndarray) -> float:
        """max_i sum_{j != i} |A_ij|."""
        row_sums = np.sum(np.abs(A), axis=1) - np.abs(np.diag(A))
        return float(max(0.0, np.max(row_sums)))

    def offdiag_spectral_norm(self, A: np.ndarray) -> float:
        """||A - diag(A)||_2 by full decomposition; meant for small p."""
        off = A - np.diag(np.diag(A))
        values = linalg.eigvalsh(off)
        return float(np.max(np.abs(values)))

    def cross_product_max(self, X: np.ndarray) -> float:
        """
        max_{i<j} sum_t |X_it X_jt|.

        Args:
            X: p x n matrix with p >= 2

        Returns:
            Largest absolute cross product over unordered row pairs
        """
        X = np.atleast_2d(X)
        p = X.shape[0]
        if p < 2:
            raise ValueError("cross products need at least two rows")
        absX = np.abs(X)
        best = 0.0
        for start in range(0, p, ROW_BLOCK):
            stop = min(start + ROW_BLOCK, p)
            # only columns j > i are needed, so the block pairs with rows start+1..p
            block = absX[start:stop] @ absX[start + 1:].T
            rows = np.arange(start, stop)[:, None]
            cols = np.arange(start + 1, p)[None, :]
            block = np.where(cols > rows, block, -np.inf)
            if block.size:
                best = max(best, float(np.max(block)))
        return best

    def spectral_sample(self, X: np.ndarray, k: int, with_cross: bool = True) -> SpectralSample:
        """
        Spectral summary of one data matrix.

        Raises:
            SolverConvergenceError: an eigenvalue falls below -psd_floor * trace
        """
        A = self.gram_matrix(X)
        trace = float(np.trace(A))
        eigen = self.top_k_eigenvalues(A, k)
        floor = -settings.psd_floor * trace
        if eigen[-1] < floor:
            logger.error(f"Eigenvalue {eigen[-1]:.6g} of a Gram matrix is below the PSD floor {floor:.3g}")
            raise SolverConvergenceError(f"eigenvalue {eigen[-1]:.6g} below PSD floor {floor:.3g}")
        return SpectralSample(
            eigen_topk=eigen,
            diag_topk=self.diag_order_stats(A, k),
            offdiag_inf_norm=self.offdiag_infinity_norm(A),
            cross_max=self.cross_product_max(X) if with_cross and A.shape[0] >= 2 else 0.0,
            trace=trace,
        )

    def centering_mu(self, model: TailModel, profile: CoefficientProfile, n: int, p: int) -> float:
        """
        Centering constant mu_{X,alpha}.

        Args:
            model: Noise law
            profile: Coefficient profile
            n: Sample size
            p: Dimension

        Returns:
            0 for alpha < 2, truncated second moment times sum c_j^2 at alpha = 2
            with infinite variance, E[Z^2] times sum c_j^2 otherwise
        """
        return self.noise_second_moment(model, n, p) * linproc_service.sum_squared(profile)

    def noise_second_moment(self, model: TailModel, n: int, p: int) -> float:
        """Noise factor of the centering constant."""
        if model.alpha < 2.0:
            return 0.0
        second = noise_service.second_moment(model)
        if math.isinf(second):
            a_np = noise_service.norming_constant(model, n * p)
            return noise_service.truncated_second_moment(model, a_np**2)
        return second

    def center_scale(self, values: np.ndarray, n: int, mu: float, a_np: float) -> np.ndarray:
        """(v - n mu) / a_np^2, elementwise."""
        if not a_np > 0:
            raise ValueError(f"a_np must be > 0, got {a_np}")
        return (np.asarray(values, dtype=float) - n * mu) / a_np**2


# Global spectra service instance
spectra_service = SpectraService()
