"""Concrete smooth objectives with analytic derivatives and declared qsc constants.

The zoo covers the four families the solvers are exercised on:

* quadratics (constant zero qsc bound),
* soft maximum of linear forms with smoothing mu (bound 2/mu),
* separable losses over a design matrix, logistic or exponential (bound 1),
* matrix scaling / balancing exponential sums (bound sqrt(2), identity metric).

Soft-max and separable objectives default to the Gram metric sum_i a_i a_i^T
of their rows; the declared constants are only valid under these metrics.
"""

from __future__ import annotations

import hashlib
import warnings

import numpy as np
import scipy.special

from .metric import Metric, symmetrize
from .oracles import SmoothOracle

_EXP_CLAMP = 700.0  # exp argument above which float64 overflows


class ParseError(ValueError):
    """Malformed data file; carries the offending line number when known."""


class DimensionError(ValueError):
    """Ragged or incompatibly shaped input data."""


class EvaluationOverflowWarning(RuntimeWarning):
    """An exponential argument was clamped to keep the evaluation finite."""


def gram_metric(rows: np.ndarray) -> tuple[Metric, float]:
    """Metric sum_i a_i a_i^T from design rows, ridged if rank deficient.

    Returns the metric and the ridge actually added (0.0 when the raw Gram
    matrix factorizes).  The ridge is 1e-10 * trace(B)/n and is recorded so
    reports can surface the perturbation.
    """
    rows = np.asarray(rows, dtype=float)
    gram = rows.T @ rows
    try:
        return Metric(gram), 0.0
    except np.linalg.LinAlgError:
        ridge = 1e-10 * np.trace(gram) / gram.shape[0]
        if ridge <= 0:
            ridge = 1e-10
        return Metric(gram + ridge * np.eye(gram.shape[0])), ridge


def _hash_arrays(tag: str, *parts) -> str:
    digest = hashlib.sha256(tag.encode())
    for part in parts:
        if isinstance(part, np.ndarray):
            digest.update(np.ascontiguousarray(part, dtype=float).tobytes())
        else:
            digest.update(repr(part).encode())
    return digest.hexdigest()


class QuadraticObjective(SmoothOracle):
    """f(x) = 1/2 <Ax, x> - <b, x> with PSD A; qsc constant 0."""

    def __init__(self, quad, offset, metric: Metric | None = None) -> None:
        a = symmetrize(np.asarray(quad, dtype=float))
        b = np.asarray(offset, dtype=float)
        if a.shape != (b.size, b.size):
            raise DimensionError("quadratic term and offset dimensions disagree")
        super().__init__(metric if metric is not None else Metric.identity(b.size), 0.0)
        if self.metric.dim != b.size:
            raise DimensionError("metric dimension does not match problem dimension")
        a.setflags(write=False)
        b.setflags(write=False)
        self._a = a
        self._b = b

    def value(self, x):
        return 0.5 * float(x @ self._a @ x) - float(self._b @ x)

    def gradient(self, x):
        return self._a @ x - self._b

    def hessian(self, x):
        return self._a

    def content_hash(self) -> str:
        return _hash_arrays("quadratic", self._a, self._b, self.metric.matrix)


class SoftMaxObjective(SmoothOracle):
    """Smoothed maximum mu * log sum_i exp((<a_i, x> - b_i)/mu); qsc constant 2/mu.

    Computed with the max-subtraction trick, so evaluation never overflows for
    finite inputs.  The default metric is the Gram matrix of the rows.
    """

    def __init__(self, rows, offsets, smoothing: float, metric: Metric | None = None):
        rows = np.asarray(rows, dtype=float)
        offsets = np.asarray(offsets, dtype=float)
        if rows.ndim != 2 or offsets.shape != (rows.shape[0],):
            raise DimensionError("rows must be (m, n) with one offset per row")
        if smoothing <= 0:
            raise ValueError("smoothing parameter must be positive")
        self.metric_ridge = 0.0
        if metric is None:
            metric, self.metric_ridge = gram_metric(rows)
        super().__init__(metric, 2.0 / smoothing)
        rows.setflags(write=False)
        offsets.setflags(write=False)
        self._rows = rows
        self._offsets = offsets
        self._mu = float(smoothing)

    @property
    def rows(self):
        return self._rows

    @property
    def smoothing(self):
        return self._mu

    def _weights(self, x):
        margins = (self._rows @ x - self._offsets) / self._mu
        top = margins.max()
        w = np.exp(margins - top)
        total = w.sum()
        return w / total, top + np.log(total)

    def value(self, x):
        _, logsum = self._weights(x)
        return self._mu * float(logsum)

    def gradient(self, x):
        pi, _ = self._weights(x)
        return self._rows.T @ pi

    def hessian(self, x):
        pi, _ = self._weights(x)
        g = self._rows.T @ pi
        h = (self._rows.T * pi) @ self._rows - np.outer(g, g)
        return symmetrize(h) / self._mu

    def content_hash(self) -> str:
        return _hash_arrays(
            "softmax", self._rows, self._offsets, self._mu, self.metric.matrix
        )


class SeparableObjective(SmoothOracle):
    """(1/m) sum_i loss(<a_i, x> - b_i) for a logistic or exponential loss.

    Both shipped losses have |loss'''| <= loss'', hence qsc constant 1 under
    the Gram metric of the rows.  The exponential loss clamps its argument at
    700 and emits `EvaluationOverflowWarning` when the clamp engages.
    """

    LOSSES = ("logistic", "exponential")

    def __init__(self, rows, offsets, loss: str = "logistic", metric: Metric | None = None):
        rows = np.asarray(rows, dtype=float)
        offsets = np.asarray(offsets, dtype=float)
        if rows.ndim != 2 or offsets.shape != (rows.shape[0],):
            raise DimensionError("rows must be (m, n) with one offset per row")
        if loss not in self.LOSSES:
            raise ValueError(f"unknown loss {loss!r}; expected one of {self.LOSSES}")
        self.metric_ridge = 0.0
        if metric is None:
            metric, self.metric_ridge = gram_metric(rows)
        super().__init__(metric, 1.0)
        rows.setflags(write=False)
        offsets.setflags(write=False)
        self._rows = rows
        self._offsets = offsets
        self._loss = loss

    @property
    def rows(self):
        return self._rows

    @property
    def loss(self):
        return self._loss

    def _margins(self, x):
        t = self._rows @ x - self._offsets
        if self._loss == "exponential" and np.any(t > _EXP_CLAMP):
            warnings.warn(
                "exponential loss argument clamped at 700",
                EvaluationOverflowWarning,
                stacklevel=3,
            )
            t = np.minimum(t, _EXP_CLAMP)
        return t

    def value(self, x):
        t = self._margins(x)
        if self._loss == "logistic":
            return float(np.logaddexp(0.0, t).mean())
        return float(np.exp(t).mean())

    def _second(self, t):
        if self._loss == "logistic":
            p = scipy.special.expit(t)
            return p * (1.0 - p)
        return np.exp(t)

    def gradient(self, x):
        t = self._margins(x)
        if self._loss == "logistic":
            first = scipy.special.expit(t)
        else:
            first = np.exp(t)
        return self._rows.T @ first / t.size

    def hessian(self, x):
        t = self._margins(x)
        w = self._second(t) / t.size
        return symmetrize((self._rows.T * w) @ self._rows)

    def content_hash(self) -> str:
        return _hash_arrays(
            "separable", self._rows, self._offsets, self._loss, self.metric.matrix
        )


def _clamped_exp_weights(mass: np.ndarray, exponents: np.ndarray) -> np.ndarray:
    # zero-mass entries contribute nothing, even where the exponent is huge
    if np.any((mass > 0) & (exponents > _EXP_CLAMP)):
        warnings.warn(
            "exponential sum argument clamped at 700",
            EvaluationOverflowWarning,
            stacklevel=3,
        )
    safe = np.minimum(exponents, _EXP_CLAMP)
    return np.where(mass > 0, mass * np.exp(safe), 0.0)


class MatrixScalingObjective(SmoothOracle):
    """sum_ij A_ij exp(x_i - y_j) over (x, y) in R^{2n}; identity metric, M = sqrt(2).

    The objective is invariant under the joint shift (x, y) -> (x+c, y+c), so
    the Hessian has that direction in its kernel at every point; solvers rely
    on quadratic regularization there.
    """

    def __init__(self, matrix) -> None:
        a = np.asarray(matrix, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise DimensionError("scaling data must be a square matrix")
        if np.any(a < 0):
            raise ValueError("scaling data must be nonnegative")
        n = a.shape[0]
        super().__init__(Metric.identity(2 * n), np.sqrt(2.0))
        a.setflags(write=False)
        self._a = a
        self._n = n

    def _weights(self, z):
        n = self._n
        return _clamped_exp_weights(self._a, z[:n, None] - z[n:][None, :])

    def value(self, z):
        return float(self._weights(z).sum())

    def gradient(self, z):
        w = self._weights(z)
        return np.concatenate([w.sum(axis=1), -w.sum(axis=0)])

    def hessian(self, z):
        w = self._weights(z)
        r = w.sum(axis=1)
        c = w.sum(axis=0)
        top = np.concatenate([np.diag(r), -w], axis=1)
        bottom = np.concatenate([-w.T, np.diag(c)], axis=1)
        return np.concatenate([top, bottom], axis=0)

    def content_hash(self) -> str:
        return _hash_arrays("matrix_scaling", self._a)


class MatrixBalancingObjective(SmoothOracle):
    """sum_ij A_ij exp(x_i - x_j) over R^n; identity metric, M = sqrt(2).

    Diagonal entries have zero exponent and contribute constants; the all-ones
    direction is in the kernel of the Hessian everywhere.
    """

    def __init__(self, matrix) -> None:
        a = np.asarray(matrix, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise DimensionError("balancing data must be a square matrix")
        if np.any(a < 0):
            raise ValueError("balancing data must be nonnegative")
        super().__init__(Metric.identity(a.shape[0]), np.sqrt(2.0))
        a.setflags(write=False)
        self._a = a

    def _weights(self, x):
        return _clamped_exp_weights(self._a, x[:, None] - x[None, :])

    def value(self, x):
        return float(self._weights(x).sum())

    def gradient(self, x):
        w = self._weights(x)
        return w.sum(axis=1) - w.sum(axis=0)

    def hessian(self, x):
        w = self._weights(x)
        h = np.diag(w.sum(axis=1) + w.sum(axis=0)) - (w + w.T)
        return h

    def content_hash(self) -> str:
        return _hash_arrays("matrix_balancing", self._a)


# ---------------------------------------------------------------------------
# data ingestion
# ---------------------------------------------------------------------------


def _parse_numeric_rows(path) -> list[tuple[int, list[float]]]:
    rows: list[tuple[int, list[float]]] = []
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            values = []
            for token in line.split(","):
                try:
                    value = float(token)
                except ValueError as exc:
                    raise ParseError(f"line {lineno}: cannot parse {token.strip()!r}") from exc
                if not np.isfinite(value):
                    raise ParseError(f"line {lineno}: non-finite value {token.strip()!r}")
                values.append(value)
            rows.append((lineno, values))
    if not rows:
        raise ParseError(f"{path}: no data rows")
    return rows


def load_design_matrix(path) -> tuple[np.ndarray, np.ndarray]:
    """Load a CSV design matrix: one sample per line, last column is the offset."""
    rows = _parse_numeric_rows(path)
    width = len(rows[0][1])
    if width < 2:
        raise DimensionError(f"line {rows[0][0]}: need at least one feature plus an offset")
    for lineno, values in rows:
        if len(values) != width:
            raise DimensionError(f"line {lineno}: expected {width} columns, got {len(values)}")
    data = np.array([values for _, values in rows])
    return data[:, :-1], data[:, -1]


def load_matrix(path) -> np.ndarray:
    """Load a dense square nonnegative matrix from CSV."""
    rows = _parse_numeric_rows(path)
    n = len(rows)
    for lineno, values in rows:
        if len(values) != n:
            raise DimensionError(f"line {lineno}: expected {n} columns for a square matrix")
    a = np.array([values for _, values in rows])
    if np.any(a < 0):
        raise ParseError("matrix entries must be nonnegative")
    return a


# ---------------------------------------------------------------------------
# seeded generators
# ---------------------------------------------------------------------------

KINDS = (
    "quadratic",
    "softmax",
    "logistic",
    "exponential",
    "matrix_scaling",
    "matrix_balancing",
)


def generate_synthetic(
    kind: str,
    n: int = 10,
    m: int = 40,
    seed: int = 0,
    *,
    cond: float = 10.0,
    smoothing: float = 1.0,
    separable: bool = False,
    spread: float = 0.0,
    zero_fraction: float = 0.0,
) -> SmoothOracle:
    """Deterministic synthetic instance of the requested kind.

    `cond` shapes the quadratic spectrum; `smoothing` is the soft-max mu;
    `separable` aligns the rows of a logistic instance into a halfspace so the
    infimum is not attained; `spread` multiplies matrix rows/columns by random
    powers of ten to widen the mass imbalance; `zero_fraction` sparsifies the
    matrix instances.  The same seed always reproduces the same instance.
    """
    if n < 1 or m < 1:
        raise ValueError("dimensions must be at least 1")
    rng = np.random.default_rng(seed)
    if kind == "quadratic":
        q, _ = np.linalg.qr(rng.standard_normal((n, n)))
        eigs = np.logspace(0.0, -np.log10(cond), n) if cond > 1 else np.ones(n)
        a = q @ np.diag(eigs) @ q.T
        b = rng.standard_normal(n)
        return QuadraticObjective(a, b)
    if kind in ("softmax", "logistic", "exponential"):
        # redraw until the Gram metric factorizes without a ridge
        for _ in range(10):
            rows = rng.standard_normal((m, n)) / np.sqrt(n)
            if separable:
                anchor = rng.standard_normal(n)
                anchor /= np.linalg.norm(anchor)
                rows = rows + 1.5 * anchor
            planted = rng.standard_normal(n)
            noise = rng.standard_normal(m)
            try:
                metric, ridge = gram_metric(rows)
            except np.linalg.LinAlgError:  # pragma: no cover - extremely unlikely
                continue
            if ridge == 0.0:
                break
        else:  # pragma: no cover
            raise np.linalg.LinAlgError("could not draw rows with a PD Gram matrix")
        if kind == "softmax":
            offsets = noise
            return SoftMaxObjective(rows, offsets, smoothing, metric=metric)
        offsets = rows @ planted + noise
        loss = "logistic" if kind == "logistic" else "exponential"
        return SeparableObjective(rows, offsets, loss, metric=metric)
    if kind in ("matrix_scaling", "matrix_balancing"):
        a = rng.uniform(0.1, 1.0, size=(n, n))
        if spread != 0.0:
            a = a * 10.0 ** (spread * rng.uniform(-1.0, 1.0, size=(n, 1)))
            a = a * 10.0 ** (spread * rng.uniform(-1.0, 1.0, size=(1, n)))
        if zero_fraction > 0.0:
            mask = rng.random((n, n)) < zero_fraction
            a = np.where(mask, 0.0, a)
        if kind == "matrix_scaling":
            return MatrixScalingObjective(a)
        return MatrixBalancingObjective(a)
    raise ValueError(f"unknown instance kind {kind!r}; expected one of {KINDS}")
