"""Newton method with gradient regularization: beta_k = sigma_k * ||F'(x_k)||_*.

Supports a constant regularization weight (defaulting to the oracle's declared
qsc constant) and the doubling/halving adaptive search that accepts sigma_k
once the step's progress condition

    <F'(x_{k+1}), x_k - x_{k+1}>  >=  g_{k+1}^2 / (2 sigma_k g_k)

holds.  Per-iterate diagnostics (minimal generalized Hessian eigenvalue and
the scale-invariant measure eta = g / lambda) are recorded on request and
drive the local quadratic-convergence check.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .composite import CompositeTerm, MaxInnerIterationsError, newton_step
from .metric import SingularSystemError, min_generalized_eigenvalue
from .oracles import SmoothOracle, phi


class PrimalStatus(Enum):
    GRAD_TOL_REACHED = "grad_tol_reached"
    TARGET_GAP_REACHED = "target_gap_reached"
    MAX_ITERS = "max_iters"
    SINGULAR_SYSTEM = "singular_system"
    ADAPTIVE_FAILURE = "adaptive_failure"
    INNER_SOLVER_FAILURE = "inner_solver_failure"


class AdaptiveSearchError(RuntimeError):
    """The doubling search exhausted its retry budget without progress."""


@dataclass
class PrimalConfig:
    """Configuration for `solve_primal`.

    With `adaptive` False the constant weight `sigma` is used (the oracle's
    declared qsc constant when None).  The target-gap stop needs an external
    reference value `f_star_ref`; the solver itself never estimates it.
    """

    sigma: float | None = None
    adaptive: bool = False
    sigma0: float = 1.0
    sigma_min: float = 1e-12
    grad_tol: float = 1e-9
    max_iters: int = 1000
    f_star_ref: float | None = None
    rel_accuracy: float | None = None
    record_diagnostics: bool = False

    def __post_init__(self):
        if self.grad_tol <= 0:
            raise ValueError("grad_tol must be positive")
        if self.sigma is not None and self.sigma < 0:
            raise ValueError("sigma must be nonnegative")
        if self.adaptive and self.sigma0 <= 0:
            raise ValueError("adaptive search needs a positive sigma0")


@dataclass
class PrimalTraceRow:
    """State at iterate k plus the step taken from it (NaN step fields on the
    final row, which only records the terminal iterate)."""

    k: int
    f_value: float
    grad_norm: float
    sigma: float = math.nan
    beta: float = math.nan
    step_length: float = math.nan
    progress: float = math.nan
    retries: int = 0
    lam: float = math.nan
    eta: float = math.nan
    x: np.ndarray | None = None  # kept in memory, not serialized


_CSV_COLUMNS = ("k", "F", "g", "sigma", "beta", "step_len", "progress", "retries", "lambda", "eta")


@dataclass
class PrimalResult:
    x: np.ndarray
    trace: list[PrimalTraceRow]
    status: PrimalStatus
    iterations: int
    step_computations: int
    final_grad_norm: float

    @property
    def f_values(self) -> np.ndarray:
        return np.array([row.f_value for row in self.trace])


def write_primal_trace(trace: list[PrimalTraceRow], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(_CSV_COLUMNS)
        for row in trace:
            writer.writerow(
                [row.k]
                + [
                    f"{v:.17g}"
                    for v in (
                        row.f_value,
                        row.grad_norm,
                        row.sigma,
                        row.beta,
                        row.step_length,
                        row.progress,
                    )
                ]
                + [row.retries, f"{row.lam:.17g}", f"{row.eta:.17g}"]
            )


def read_primal_trace(path) -> list[PrimalTraceRow]:
    rows = []
    with open(path, "r", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        for rec in reader:
            rows.append(
                PrimalTraceRow(
                    k=int(rec["k"]),
                    f_value=float(rec["F"]),
                    grad_norm=float(rec["g"]),
                    sigma=float(rec["sigma"]),
                    beta=float(rec["beta"]),
                    step_length=float(rec["step_len"]),
                    progress=float(rec["progress"]),
                    retries=int(rec["retries"]),
                    lam=float(rec["lambda"]),
                    eta=float(rec["eta"]),
                )
            )
    return rows


def initial_subgradient(oracle: SmoothOracle, psi: CompositeTerm, x: np.ndarray) -> np.ndarray:
    """A valid subgradient of F at a feasible x: the smooth gradient plus the
    gradient of psi's quadratic part (0 is always in the box normal cone)."""
    return oracle.gradient(x) + psi.quad_gradient(x, oracle.metric)


def _progress_condition(progress, g_next, sigma, g) -> bool:
    rhs = g_next**2 / (2.0 * sigma * g)
    return progress >= rhs - 1e-12 * (1.0 + abs(rhs))


def adaptive_sigma_search(
    oracle: SmoothOracle,
    psi: CompositeTerm,
    x: np.ndarray,
    grad_norm: float,
    sigma_start: float,
    max_doublings: int = 60,
):
    """Double sigma from `sigma_start` until the progress condition holds.

    Returns (accepted sigma, StepResult, retries).  The caller should start
    the next iteration from half the accepted value.
    """
    if grad_norm <= 0 or sigma_start <= 0:
        raise ValueError("adaptive search needs positive gradient norm and sigma_start")
    sigma = sigma_start
    for retries in range(max_doublings + 1):
        step = newton_step(oracle, psi, x, sigma * grad_norm)
        g_next = oracle.metric.dual_norm(step.subgradient)
        progress = float(step.subgradient @ (x - step.x_plus))
        if _progress_condition(progress, g_next, sigma, grad_norm):
            return sigma, step, retries
        sigma *= 2.0
    raise AdaptiveSearchError(
        f"progress condition still failing after {max_doublings} doublings"
    )


def solve_primal(
    oracle: SmoothOracle,
    psi: CompositeTerm,
    x0: np.ndarray,
    config: PrimalConfig,
) -> PrimalResult:
    """Run the gradient-regularized Newton iteration from x0."""
    x = psi.project(np.asarray(x0, dtype=float))
    if not psi.contains(x0):
        raise ValueError("x0 must be feasible for the composite term")
    metric = oracle.metric
    f_prime = initial_subgradient(oracle, psi, x)
    g = metric.dual_norm(f_prime)

    gap0 = None
    if config.f_star_ref is not None and config.rel_accuracy is not None:
        gap0 = oracle.value(x) + psi.value(x, metric) - config.f_star_ref

    trace: list[PrimalTraceRow] = []
    step_computations = 0
    sigma_next = config.sigma0
    status = PrimalStatus.MAX_ITERS

    def diagnostics(point, grad_norm):
        if not config.record_diagnostics:
            return math.nan, math.nan
        lam = min_generalized_eigenvalue(oracle.hessian(point), metric)
        if lam > 0:
            return lam, grad_norm / lam
        return lam, (0.0 if grad_norm == 0 else math.inf)

    for k in range(config.max_iters):
        f_val = oracle.value(x) + psi.value(x, metric)
        lam, eta = diagnostics(x, g)
        if g <= config.grad_tol:
            status = PrimalStatus.GRAD_TOL_REACHED
            trace.append(PrimalTraceRow(k, f_val, g, lam=lam, eta=eta, x=x.copy()))
            break
        if gap0 is not None and gap0 > 0 and f_val - config.f_star_ref <= config.rel_accuracy * gap0:
            status = PrimalStatus.TARGET_GAP_REACHED
            trace.append(PrimalTraceRow(k, f_val, g, lam=lam, eta=eta, x=x.copy()))
            break

        try:
            if config.adaptive:
                sigma_k, step, retries = adaptive_sigma_search(
                    oracle, psi, x, g, max(sigma_next, config.sigma_min)
                )
                sigma_next = max(sigma_k / 2.0, config.sigma_min)
            else:
                sigma_k = config.sigma if config.sigma is not None else oracle.qsc_constant
                step = newton_step(oracle, psi, x, sigma_k * g)
                retries = 0
        except SingularSystemError:
            status = PrimalStatus.SINGULAR_SYSTEM
            trace.append(PrimalTraceRow(k, f_val, g, lam=lam, eta=eta, x=x.copy()))
            break
        except AdaptiveSearchError:
            status = PrimalStatus.ADAPTIVE_FAILURE
            trace.append(PrimalTraceRow(k, f_val, g, lam=lam, eta=eta, x=x.copy()))
            break
        except MaxInnerIterationsError:
            status = PrimalStatus.INNER_SOLVER_FAILURE
            trace.append(PrimalTraceRow(k, f_val, g, lam=lam, eta=eta, x=x.copy()))
            break
        step_computations += retries + 1

        g_next = metric.dual_norm(step.subgradient)
        progress = float(step.subgradient @ (x - step.x_plus))
        trace.append(
            PrimalTraceRow(
                k=k,
                f_value=f_val,
                grad_norm=g,
                sigma=sigma_k,
                beta=step.beta,
                step_length=step.step_length,
                progress=progress,
                retries=retries,
                lam=lam,
                eta=eta,
                x=x.copy(),
            )
        )
        x = step.x_plus
        g = g_next
    else:
        f_val = oracle.value(x) + psi.value(x, metric)
        lam, eta = diagnostics(x, g)
        trace.append(
            PrimalTraceRow(config.max_iters, f_val, g, lam=lam, eta=eta, x=x.copy())
        )

    return PrimalResult(
        x=x,
        trace=trace,
        status=status,
        iterations=sum(1 for row in trace if not math.isnan(row.sigma)),
        step_computations=step_computations,
        final_grad_norm=g,
    )


def eta_measure(
    oracle: SmoothOracle, psi: CompositeTerm, x: np.ndarray, f_prime: np.ndarray
) -> float:
    """Scale-invariant convergence measure ||F'(x)||_* / lambda(x).

    Returns +inf when the Hessian has a zero generalized eigenvalue and the
    point is not stationary, and 0 at stationary points.
    """
    g = oracle.metric.dual_norm(f_prime)
    if g == 0.0:
        return 0.0
    lam = min_generalized_eigenvalue(oracle.hessian(x), oracle.metric)
    return g / lam if lam > 0 else math.inf


@dataclass
class LocalQuadraticReport:
    entered: bool
    entry_index: int | None
    passed: bool
    worst_slack: float
    checked_pairs: int = 0

    @property
    def not_entered(self) -> bool:
        return not self.entered


def check_local_quadratic(
    trace: list[PrimalTraceRow], qsc_constant: float, slack: float = 1e-12
) -> LocalQuadraticReport:
    """Verify the per-step quadratic contraction of eta after entering the
    local region eta <= 1/(18 M).

    Each consecutive pair after entry must satisfy
    ``eta_{k+1} <= e * (phi(1) * M + sigma_k) * eta_k^2 + slack``.  A trace
    that never enters the region passes vacuously with `entered` False.
    """
    threshold = math.inf if qsc_constant == 0 else 1.0 / (18.0 * qsc_constant)
    rows = [r for r in trace if not math.isnan(r.eta)]
    entry = None
    for i, row in enumerate(rows):
        if row.eta <= threshold:
            entry = i
            break
    if entry is None:
        return LocalQuadraticReport(False, None, True, math.inf)
    passed = True
    worst = math.inf
    checked = 0
    for i in range(entry, len(rows) - 1):
        row, nxt = rows[i], rows[i + 1]
        if math.isnan(row.sigma):
            continue
        bound = math.e * (phi(1.0) * qsc_constant + row.sigma) * row.eta**2 + slack
        checked += 1
        gap = bound - nxt.eta
        worst = min(worst, gap)
        if nxt.eta > bound:
            passed = False
    return LocalQuadraticReport(True, entry, passed, worst, checked)
