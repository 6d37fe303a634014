"""Metric operator, global norms, and regularized symmetric solves.

The whole library works with a fixed symmetric positive-definite operator B
that defines the primal norm ``||h|| = <Bh, h>^{1/2}`` and the dual norm
``||s||_* = <s, B^{-1}s>^{1/2}``.  Vectors are plain 1-d float ndarrays;
Hessians are plain symmetric 2-d ndarrays.  Everything here is dense and
factorization based.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg


class SingularSystemError(np.linalg.LinAlgError):
    """A regularized system stayed unsolvable after the jitter ladder."""


def symmetrize(a: np.ndarray) -> np.ndarray:
    """Return (A + A^T)/2; oracle outputs may drift off symmetric in float."""
    return 0.5 * (a + a.T)


def _as_matrix(a, name: str) -> np.ndarray:
    m = np.asarray(a, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"{name} must be a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} contains non-finite entries")
    return m


class Metric:
    """SPD operator defining the primal and dual norms; owns its factorization.

    Immutable after construction: the Cholesky factor is computed once and the
    stored matrix is write-protected, so instances are safe to share.
    """

    def __init__(self, matrix) -> None:
        m = _as_matrix(matrix, "metric")
        scale = np.abs(m).max()
        if scale > 0 and np.abs(m - m.T).max() > 1e-12 * scale:
            raise ValueError("metric operator must be symmetric (1e-12 relative)")
        m = symmetrize(m)
        try:
            self._chol = scipy.linalg.cho_factor(m, lower=True)
        except scipy.linalg.LinAlgError as exc:
            raise SingularSystemError("metric operator is not positive definite") from exc
        m.setflags(write=False)
        self._matrix = m

    @classmethod
    def identity(cls, dim: int) -> "Metric":
        return cls(np.eye(dim))

    @property
    def matrix(self) -> np.ndarray:
        return self._matrix

    @property
    def dim(self) -> int:
        return self._matrix.shape[0]

    @property
    def min_eigenvalue(self) -> float:
        """Smallest eigenvalue of B, computed once on first use."""
        lam = getattr(self, "_min_eig", None)
        if lam is None:
            lam = float(scipy.linalg.eigvalsh(np.array(self._matrix))[0])
            self._min_eig = lam
        return lam

    def apply(self, h: np.ndarray) -> np.ndarray:
        """B h, mapping a primal vector to a dual vector."""
        return self._matrix @ h

    def solve(self, s: np.ndarray) -> np.ndarray:
        """B^{-1} s via the cached Cholesky factor (never an explicit inverse)."""
        return scipy.linalg.cho_solve(self._chol, s)

    def primal_norm(self, h: np.ndarray) -> float:
        h = np.asarray(h, dtype=float)
        if h.shape != (self.dim,):
            raise ValueError(f"vector of shape {h.shape} does not match metric dim {self.dim}")
        q = float(h @ self._matrix @ h)
        return np.sqrt(max(q, 0.0))

    def dual_norm(self, s: np.ndarray) -> float:
        s = np.asarray(s, dtype=float)
        if s.shape != (self.dim,):
            raise ValueError(f"vector of shape {s.shape} does not match metric dim {self.dim}")
        q = float(s @ self.solve(s))
        return np.sqrt(max(q, 0.0))

    def __repr__(self) -> str:  # pragma: no cover
        return f"Metric(dim={self.dim})"


def local_norm(h: np.ndarray, hessian: np.ndarray) -> float:
    """Hessian-induced seminorm <Hh, h>^{1/2}; defined (possibly 0) for PSD H."""
    h = np.asarray(h, dtype=float)
    hess = np.asarray(hessian, dtype=float)
    if hess.shape != (h.shape[0], h.shape[0]):
        raise ValueError(f"hessian shape {hess.shape} does not match vector length {h.shape[0]}")
    q = float(h @ hess @ h)
    # PSD up to roundoff: tiny negative quadratic forms are clamped to zero.
    return np.sqrt(max(q, 0.0))


def regularized_solve(
    hessian: np.ndarray,
    metric: Metric,
    beta: float,
    rhs: np.ndarray,
    max_jitter_retries: int = 6,
) -> np.ndarray:
    """Solve (H + beta*B) d = rhs by symmetric factorization.

    H is symmetrized first.  If the factorization fails, or the residual of
    the *unjittered* system exceeds ``1e-10 * (||rhs|| + 1)``, a jitter ladder
    adds ``delta * B`` with delta = 1e-12, growing tenfold per retry, for at
    most `max_jitter_retries` retries before raising `SingularSystemError`.
    One step of iterative refinement is applied after each solve.
    """
    if beta < 0:
        raise ValueError(f"beta must be nonnegative, got {beta}")
    rhs = np.asarray(rhs, dtype=float)
    h = symmetrize(np.asarray(hessian, dtype=float))
    if h.shape != (metric.dim, metric.dim) or rhs.shape != (metric.dim,):
        raise ValueError("dimension mismatch between hessian, metric, and rhs")
    system = h + beta * metric.matrix
    tol = 1e-10 * (np.linalg.norm(rhs) + 1.0)
    delta = 0.0
    for _ in range(max_jitter_retries + 1):
        shifted = system if delta == 0.0 else system + delta * metric.matrix
        try:
            factor = scipy.linalg.cho_factor(shifted, lower=True)
        except scipy.linalg.LinAlgError:
            delta = 1e-12 if delta == 0.0 else delta * 10.0
            continue
        d = scipy.linalg.cho_solve(factor, rhs)
        # one refinement step against the shifted system, then check the
        # residual of the system we are contracted to solve
        d += scipy.linalg.cho_solve(factor, rhs - shifted @ d)
        if np.linalg.norm(system @ d - rhs) <= tol:
            return d
        delta = 1e-12 if delta == 0.0 else delta * 10.0
    raise SingularSystemError(
        f"system H + {beta:g}*B not solvable to tolerance after jitter ladder"
    )


def min_generalized_eigenvalue(hessian: np.ndarray, metric: Metric) -> float:
    """Smallest eigenvalue of H relative to B, clamped at zero.

    Computed as the smallest eigenvalue of the pencil (H, B); invariant under
    simultaneous congruence transformations of H and B.  Values within
    ``-1e-10 * (1 + ||H||)`` of zero are clamped to 0; more negative values
    mean the input was not PSD and raise.
    """
    h = symmetrize(np.asarray(hessian, dtype=float))
    if h.shape != (metric.dim, metric.dim):
        raise ValueError("hessian dimension does not match metric")
    lam = float(
        scipy.linalg.eigh(
            h, np.array(metric.matrix), eigvals_only=True, subset_by_index=[0, 0]
        )[0]
    )
    if lam >= 0.0:
        return lam
    tol = 1e-10 * (1.0 + np.linalg.norm(h, "fro"))
    if lam >= -tol:
        return 0.0
    raise ValueError(f"hessian is not positive semidefinite: min eigenvalue {lam:g}")
