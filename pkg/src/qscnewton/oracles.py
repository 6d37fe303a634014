"""Smooth oracle contract, oracle combinators, and numeric smoothness checks.

A smooth oracle evaluates a convex function together with its gradient and
Hessian, carries the metric it is measured against, and declares a certified
bound M on its quasi-self-concordance, i.e. a constant with

    D^3 f(x)[u, u, v]  <=  M * <H(x)u, u> * ||v||        for all u, v.

The checkers in this module certify such declarations by finite differences:
the declared M is validated as an upper bound, not as the minimal constant.
"""

from __future__ import annotations

import abc
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .metric import Metric, local_norm, symmetrize

_PHI_SERIES_CUTOFF = 1e-4


def phi(t):
    """(e^t - t - 1) / t^2, the profile of the second-order global models.

    Convex, positive, and monotone increasing, with phi(0) = 1/2 by the
    removable singularity.  Below |t| = 1e-4 the direct formula cancels
    catastrophically, so a 4-term series 1/2 + t/6 + t^2/24 + t^3/120 is used.
    Accepts scalars or arrays.
    """
    arr = np.asarray(t, dtype=float)
    small = np.abs(arr) < _PHI_SERIES_CUTOFF
    safe = np.where(small, 1.0, arr)
    direct = (np.expm1(safe) - safe) / safe**2
    series = 0.5 + arr / 6.0 + arr**2 / 24.0 + arr**3 / 120.0
    out = np.where(small, series, direct)
    return float(out) if np.isscalar(t) or arr.ndim == 0 else out


class SmoothOracle(abc.ABC):
    """Evaluation contract for the smooth component of a composite problem."""

    def __init__(self, metric: Metric, qsc_constant: float) -> None:
        if qsc_constant < 0:
            raise ValueError("qsc constant must be nonnegative")
        self._metric = metric
        self._qsc_constant = float(qsc_constant)

    @property
    def metric(self) -> Metric:
        return self._metric

    @property
    def dim(self) -> int:
        return self._metric.dim

    @property
    def qsc_constant(self) -> float:
        """Certified (not necessarily minimal) quasi-self-concordance bound."""
        return self._qsc_constant

    @abc.abstractmethod
    def value(self, x: np.ndarray) -> float:
        ...

    @abc.abstractmethod
    def gradient(self, x: np.ndarray) -> np.ndarray:
        ...

    @abc.abstractmethod
    def hessian(self, x: np.ndarray) -> np.ndarray:
        ...


class _ScaledOracle(SmoothOracle):
    def __init__(self, base: SmoothOracle, factor: float) -> None:
        # positive rescaling leaves the qsc constant unchanged
        super().__init__(base.metric, base.qsc_constant)
        self._base = base
        self._factor = float(factor)

    def value(self, x):
        return self._factor * self._base.value(x)

    def gradient(self, x):
        return self._factor * self._base.gradient(x)

    def hessian(self, x):
        return self._factor * self._base.hessian(x)


def scale_oracle(oracle: SmoothOracle, factor: float) -> SmoothOracle:
    """Multiply an oracle by a positive constant; the qsc constant is unchanged."""
    if factor <= 0:
        raise ValueError(f"scale factor must be positive, got {factor}")
    return _ScaledOracle(oracle, factor)


class _AffineOracle(SmoothOracle):
    def __init__(self, base, transform, offset, metric, qsc_constant):
        super().__init__(metric, qsc_constant)
        self._base = base
        self._a = transform
        self._b = offset

    def _inner(self, x):
        return self._a @ x - self._b

    def value(self, x):
        return self._base.value(self._inner(x))

    def gradient(self, x):
        return self._a.T @ self._base.gradient(self._inner(x))

    def hessian(self, x):
        return self._a.T @ self._base.hessian(self._inner(x)) @ self._a


def affine_substitute(
    oracle: SmoothOracle,
    transform,
    offset=None,
    new_metric: Metric | None = None,
    norm_bound: float | None = None,
) -> SmoothOracle:
    """Compose an oracle with x -> Ax - b.

    With the induced metric A^T B A (the default) the qsc constant carries
    over unchanged.  A caller may instead supply any PD `new_metric` together
    with `norm_bound` kappa such that ``||.||_{A^T B A} <= kappa ||.||_new``;
    the stored constant then becomes ``M * kappa``.
    """
    a = np.asarray(transform, dtype=float)
    if a.ndim != 2 or a.shape[0] != oracle.dim:
        raise ValueError(
            f"transform shape {a.shape} incompatible with oracle dimension {oracle.dim}"
        )
    b = np.zeros(oracle.dim) if offset is None else np.asarray(offset, dtype=float)
    if b.shape != (oracle.dim,):
        raise ValueError("offset dimension does not match oracle dimension")
    if new_metric is None:
        induced = a.T @ oracle.metric.matrix @ a
        return _AffineOracle(oracle, a, b, Metric(induced), oracle.qsc_constant)
    if new_metric.dim != a.shape[1]:
        raise ValueError("new metric dimension does not match transform domain")
    if norm_bound is None:
        raise ValueError("norm_bound is required when overriding the induced metric")
    return _AffineOracle(oracle, a, b, new_metric, oracle.qsc_constant * norm_bound)


class _ContractedOracle(SmoothOracle):
    """scale * f(gamma*x + (1-gamma)*anchor), used by the accelerated outer loop."""

    def __init__(self, base: SmoothOracle, gamma: float, anchor: np.ndarray, scale: float):
        # contraction by gamma shrinks the qsc constant to gamma*M; the
        # positive scale factor leaves it unchanged
        super().__init__(base.metric, gamma * base.qsc_constant)
        self._base = base
        self._gamma = float(gamma)
        self._anchor = np.array(anchor, dtype=float)
        self._scale = float(scale)

    def _inner(self, x):
        return self._gamma * x + (1.0 - self._gamma) * self._anchor

    def value(self, x):
        return self._scale * self._base.value(self._inner(x))

    def gradient(self, x):
        return self._scale * self._gamma * self._base.gradient(self._inner(x))

    def hessian(self, x):
        return self._scale * self._gamma**2 * self._base.hessian(self._inner(x))


def contract_oracle(
    oracle: SmoothOracle, gamma: float, anchor: np.ndarray, scale: float
) -> SmoothOracle:
    """Build scale * f(gamma*x + (1-gamma)*anchor) with qsc constant gamma*M."""
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"contraction factor must lie in (0, 1), got {gamma}")
    if scale <= 0:
        raise ValueError(f"scale must be positive, got {scale}")
    return _ContractedOracle(oracle, gamma, anchor, scale)


class _SumOracle(SmoothOracle):
    def __init__(self, first: SmoothOracle, second: SmoothOracle):
        if first.metric is not second.metric and not np.allclose(
            first.metric.matrix, second.metric.matrix
        ):
            raise ValueError("summed oracles must share the same metric")
        super().__init__(first.metric, max(first.qsc_constant, second.qsc_constant))
        self._first = first
        self._second = second

    def value(self, x):
        return self._first.value(x) + self._second.value(x)

    def gradient(self, x):
        return self._first.gradient(x) + self._second.gradient(x)

    def hessian(self, x):
        return self._first.hessian(x) + self._second.hessian(x)


def add_oracles(first: SmoothOracle, second: SmoothOracle) -> SmoothOracle:
    """Sum of two oracles over the same metric; qsc constant is max(M1, M2)."""
    return _SumOracle(first, second)


class _DeclaredQscOracle(SmoothOracle):
    def __init__(self, base: SmoothOracle, qsc_constant: float):
        super().__init__(base.metric, qsc_constant)
        self._base = base

    def value(self, x):
        return self._base.value(x)

    def gradient(self, x):
        return self._base.gradient(x)

    def hessian(self, x):
        return self._base.hessian(x)


def with_qsc_constant(oracle: SmoothOracle, qsc_constant: float) -> SmoothOracle:
    """Same oracle with a different declared constant (e.g. to probe the
    checkers with a deliberately undersized bound)."""
    return _DeclaredQscOracle(oracle, qsc_constant)


# ---------------------------------------------------------------------------
# finite-difference verifiers
# ---------------------------------------------------------------------------


def check_gradient(oracle: SmoothOracle, x: np.ndarray, step: float = 1e-5) -> float:
    """Max per-coordinate relative error of the analytic gradient vs central differences."""
    if step <= 0:
        raise ValueError("step must be positive")
    x = np.asarray(x, dtype=float)
    grad = oracle.gradient(x)
    worst = 0.0
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = step
        fd = (oracle.value(x + e) - oracle.value(x - e)) / (2.0 * step)
        worst = max(worst, abs(fd - grad[i]) / (1.0 + abs(grad[i])))
    return worst


def check_hessian(oracle: SmoothOracle, x: np.ndarray, step: float = 1e-5) -> float:
    """Max entrywise relative error of the analytic Hessian vs FD of the gradient."""
    if step <= 0:
        raise ValueError("step must be positive")
    x = np.asarray(x, dtype=float)
    hess = symmetrize(oracle.hessian(x))
    worst = 0.0
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = step
        fd_col = (oracle.gradient(x + e) - oracle.gradient(x - e)) / (2.0 * step)
        worst = max(worst, float(np.max(np.abs(fd_col - hess[:, i]) / (1.0 + np.abs(hess[:, i])))))
    return worst


def _fd_step(oracle: SmoothOracle, x: np.ndarray) -> float:
    # balances truncation against roundoff at double precision
    return 1e-4 * (1.0 + oracle.metric.primal_norm(x))


def third_derivative_estimate(
    oracle: SmoothOracle, x: np.ndarray, u: np.ndarray, v: np.ndarray
) -> float:
    """Central-difference estimate of D^3 f(x)[u, u, v] from two Hessians."""
    t = _fd_step(oracle, x)
    diff = oracle.hessian(x + t * v) - oracle.hessian(x - t * v)
    return float(u @ diff @ u) / (2.0 * t)


def _third_derivative_slice(oracle, x, u):
    """FD estimate of the dual vector D^3 f(x)[u, u, .] (differencing along u)."""
    t = _fd_step(oracle, x)
    diff = oracle.hessian(x + t * u) - oracle.hessian(x - t * u)
    return (diff @ u) / (2.0 * t)


@dataclass
class QscCheckReport:
    """Outcome of a sampled certification of the declared qsc constant."""

    samples: int
    max_violation: float
    worst_triple: tuple
    tolerance: float
    passed: bool

    def __str__(self) -> str:  # pragma: no cover
        tag = "pass" if self.passed else "FAIL"
        return (
            f"qsc check [{tag}]: {self.samples} samples, "
            f"max violation {self.max_violation:.3e} vs tolerance {self.tolerance:.3e}"
        )


def check_qsc(
    oracle: SmoothOracle,
    seed: int = 0,
    num_samples: int = 1000,
    x_scale: float = 1.0,
    refine_top: int = 5,
    refine_rounds: int = 3,
) -> QscCheckReport:
    """Sample-based certificate of the third-derivative bound at the declared M.

    Each sample draws (x, u, v) with v normalized to unit primal norm, and
    estimates D^3 f(x)[u,u,v] by central differences of Hessians along v.
    The sample violates if the estimate exceeds ``M ||u||_x^2`` by more than
    ``1e-4 * (1 + M ||u||_x^2)``.  A handful of the worst triples are refined
    by alternately choosing v as the steepest direction of the tensor slice
    D^3 f(x)[u,u,.] and u as the leading eigenvector of the slice along v,
    which makes undersized declared constants reliably detectable.
    """
    rng = np.random.default_rng(seed)
    n = oracle.dim
    metric = oracle.metric
    m_const = oracle.qsc_constant

    def evaluate(x, u, v):
        est = third_derivative_estimate(oracle, x, u, v)
        unorm2 = local_norm(u, oracle.hessian(x)) ** 2
        tol = 1e-4 * (1.0 + m_const * unorm2)
        return est - m_const * unorm2, tol

    worst: list[tuple[float, float, tuple]] = []  # (excess, violation, triple)
    max_violation = -np.inf
    tol_at_worst = np.nan
    worst_triple = None
    evaluated = 0

    def record(x, u, v):
        nonlocal max_violation, tol_at_worst, worst_triple, evaluated
        violation, tol = evaluate(x, u, v)
        evaluated += 1
        excess = violation - tol
        if worst_triple is None or excess > max_violation - tol_at_worst:
            max_violation, tol_at_worst, worst_triple = violation, tol, (x, u, v)
        worst.append((excess, violation, (x, u, v)))
        worst.sort(key=lambda w: -w[0])
        del worst[max(refine_top, 1):]

    for _ in range(num_samples):
        x = x_scale * rng.standard_normal(n)
        u = rng.standard_normal(n)
        v = rng.standard_normal(n)
        v = v / max(metric.primal_norm(v), 1e-300)
        record(x, u, v)

    for _, _, (x, u, v) in list(worst):
        for _ in range(refine_rounds):
            slice_vec = _third_derivative_slice(oracle, x, u)
            snorm = metric.dual_norm(slice_vec)
            if snorm < 1e-14:
                break
            v = metric.solve(slice_vec)
            v = v / max(metric.primal_norm(v), 1e-300)
            t = _fd_step(oracle, x)
            form = symmetrize(
                (oracle.hessian(x + t * v) - oracle.hessian(x - t * v)) / (2.0 * t)
            )
            hx = symmetrize(oracle.hessian(x))
            shift = 1e-10 * (1.0 + np.abs(hx).max())
            try:
                _, vecs = scipy.linalg.eigh(
                    form, hx + shift * np.eye(n), subset_by_index=[n - 1, n - 1]
                )
                u = vecs[:, 0]
            except scipy.linalg.LinAlgError:
                break
        record(x, u, v)

    return QscCheckReport(
        samples=evaluated,
        max_violation=float(max_violation),
        worst_triple=worst_triple,
        tolerance=float(tol_at_worst),
        passed=bool(max_violation <= tol_at_worst),
    )


def check_hessian_stability(
    oracle: SmoothOracle, x: np.ndarray, y: np.ndarray
) -> tuple[bool, float]:
    """Two-sided Hessian stability between x and y.

    Verifies ``exp(-Mr) H(x) <= H(y) <= exp(Mr) H(x)`` with r = ||y - x||,
    through the extreme generalized eigenvalues of the pencil
    (H(y) + dI, H(x) + dI).  The same tiny shift d is applied on both sides so
    that directions of identically-zero curvature (present e.g. for the matrix
    problems) contribute the benign ratio 1.  Returns (passed, margin) where
    margin is the slack left in the exponent, negative on failure.
    """
    hx = symmetrize(oracle.hessian(x))
    hy = symmetrize(oracle.hessian(y))
    scale = max(np.abs(hx).max(), np.abs(hy).max(), 1.0)
    shift = 1e-12 * scale * np.eye(oracle.dim)
    eigs = scipy.linalg.eigh(hy + shift, hx + shift, eigvals_only=True)
    lam_min, lam_max = float(eigs[0]), float(eigs[-1])
    if lam_min <= 0:
        return False, -np.inf
    r = oracle.metric.primal_norm(np.asarray(y, float) - np.asarray(x, float))
    bound = oracle.qsc_constant * r
    margin = bound - max(np.log(lam_max), -np.log(lam_min))
    return bool(margin >= -1e-7 * (1.0 + bound)), float(margin)


def check_gradient_bound(
    oracle: SmoothOracle, x: np.ndarray, y: np.ndarray, slack: float = 1e-8
) -> tuple[bool, float]:
    """Gradient linearization-error bound between x and y.

    Verifies ``||g(y) - g(x) - H(x)(y-x)||_* <= M r_x^2 phi(M r) + slack``
    with r = ||y - x|| and r_x the local norm of the displacement at x.
    """
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    d = y - x
    hx = oracle.hessian(x)
    lhs = oracle.metric.dual_norm(oracle.gradient(y) - oracle.gradient(x) - hx @ d)
    m = oracle.qsc_constant
    r = oracle.metric.primal_norm(d)
    rhs = m * local_norm(d, hx) ** 2 * phi(m * r) + slack
    return bool(lhs <= rhs), float(rhs - lhs)


def check_function_bounds(
    oracle: SmoothOracle, x: np.ndarray, y: np.ndarray, slack: float = 1e-8
) -> tuple[bool, float]:
    """Two-sided second-order model bounds on f(y) around x.

    Verifies ``r_x^2 phi(-Mr) - slack <= f(y) - f(x) - <g(x), y-x> <=
    r_x^2 phi(Mr) + slack``.
    """
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    d = y - x
    gap = oracle.value(y) - oracle.value(x) - float(oracle.gradient(x) @ d)
    m = oracle.qsc_constant
    r = oracle.metric.primal_norm(d)
    rx2 = local_norm(d, oracle.hessian(x)) ** 2
    lower = rx2 * phi(-m * r) - slack
    upper = rx2 * phi(m * r) + slack
    margin = min(gap - lower, upper - gap)
    return bool(lower <= gap <= upper), float(margin)
