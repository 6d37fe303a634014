"""Accelerated Newton scheme: contracting proximal-point outer loop.

Keeps a main sequence x_k and a proximal sequence v_k.  Outer iteration k
minimizes, via the dual Newton method started at v_k,

    A_{k+1} f(gamma*y + (1-gamma)*x_k)  +  a_{k+1} psi(y)  +  1/2 ||y - v_k||^2

to subgradient tolerance nu_{k+1} = R / (k+1)^2, then sets
``x_{k+1} = gamma v_{k+1} + (1-gamma) x_k``.  With the parameter rules

    R >= max(||x_0 - x*||, 2^{3/2}/M),   A_0 = c^2 R^2 / (2 (F(x_0) - F*)),
    gamma = (M R)^{-2/3},

the gap contracts geometrically at rate exp(-gamma k) with a (1 + 5/c)^2
prefactor.  Scaling the box/zero composite by a_{k+1} is a no-op (indicators
are invariant under positive scaling), so only the quadratic is attached.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .composite import CompositeTerm
from .dual import DualConfig, DualStatus, solve_dual
from .oracles import SmoothOracle, contract_oracle


class ParameterError(ValueError):
    """A parameter precondition failed in strict mode."""


class AccelStatus(Enum):
    TARGET_GAP_REACHED = "target_gap_reached"
    MAX_OUTER = "max_outer"
    INNER_FAILURE = "inner_failure"
    ALREADY_CONVERGED = "already_converged"


@dataclass
class AccelConfig:
    """Parameters of the accelerated scheme.

    `distance_bound` is the estimate R; `f_star_ref` is required to set the
    initial scale A_0 per the parameter rule unless `a0` overrides it.
    `gamma` None applies the rule (M R)^{-2/3}, clamped at 1/2 (the clamp only
    engages for degenerate M, e.g. quadratics).
    """

    distance_bound: float
    f_star_ref: float | None = None
    c: float = 1.0
    gamma: float | None = None
    a0: float | None = None
    rel_accuracy: float = 1e-6
    max_outer: int = 500
    strict: bool = False
    dual_max_outer: int = 200
    dual_max_inner: int = 50

    def __post_init__(self):
        if self.distance_bound <= 0:
            raise ValueError("distance bound R must be positive")
        if self.c <= 0:
            raise ValueError("c must be positive")
        if self.gamma is not None and not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma override must lie in (0, 1)")


@dataclass
class AccelTraceRow:
    k: int
    a_cumulative: float  # A_k
    a_increment: float  # a_k (NaN on the k=0 row)
    nu: float  # inner tolerance used to obtain v_k (NaN at k=0)
    dual_outer: int
    dual_inner_total: int
    f_value: float  # F(x_k)
    v_step_sq: float  # ||v_k - v_{k-1}||^2 (0 at k=0)
    v: np.ndarray | None = None
    x: np.ndarray | None = None


@dataclass
class AccelResult:
    x: np.ndarray
    trace: list[AccelTraceRow]
    status: AccelStatus
    gamma: float
    gamma_clamped: bool
    a0: float
    distance_bound: float
    c: float
    f_star_ref: float | None
    outer_iterations: int
    total_dual_outer: int
    total_dual_inner: int
    metric: object = None


def write_accel_trace(trace: list[AccelTraceRow], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["k", "A", "a", "nu", "dual_outer", "dual_inner", "F", "v_step_sq"])
        for row in trace:
            writer.writerow(
                [row.k]
                + [f"{v:.17g}" for v in (row.a_cumulative, row.a_increment, row.nu)]
                + [row.dual_outer, row.dual_inner_total]
                + [f"{v:.17g}" for v in (row.f_value, row.v_step_sq)]
            )


def solve_accelerated(
    oracle: SmoothOracle,
    psi: CompositeTerm,
    x0: np.ndarray,
    config: AccelConfig,
) -> AccelResult:
    """Run the contracting proximal-point scheme from x0."""
    metric = oracle.metric
    x0 = np.asarray(x0, dtype=float)
    if not psi.contains(x0):
        raise ValueError("x0 must be feasible for the composite term")
    m_const = oracle.qsc_constant
    r = config.distance_bound

    if m_const > 0 and r < 2.0**1.5 / m_const:
        message = (
            f"distance bound R={r:g} is below 2^(3/2)/M={2.0 ** 1.5 / m_const:g}; "
            "the contraction rule is not certified"
        )
        if config.strict:
            raise ParameterError(message)

    gamma_clamped = False
    if config.gamma is not None:
        gamma = config.gamma
    else:
        scale = (m_const * r) ** (2.0 / 3.0)
        gamma = 1.0 / scale if scale > 0 else math.inf
        if gamma > 0.5:
            gamma = 0.5
            gamma_clamped = True

    def full_value(point):
        return oracle.value(point) + psi.value(point, metric)

    f0 = full_value(x0)
    if config.a0 is not None:
        a_cum = config.a0
        gap0 = None if config.f_star_ref is None else f0 - config.f_star_ref
    else:
        if config.f_star_ref is None:
            raise ValueError("f_star_ref is required unless a0 is overridden")
        gap0 = f0 - config.f_star_ref
        if gap0 <= 0:
            return AccelResult(
                x=x0,
                trace=[AccelTraceRow(0, math.nan, math.nan, math.nan, 0, 0, f0, 0.0, x0.copy(), x0.copy())],
                status=AccelStatus.ALREADY_CONVERGED,
                gamma=gamma,
                gamma_clamped=gamma_clamped,
                a0=math.nan,
                distance_bound=r,
                c=config.c,
                f_star_ref=config.f_star_ref,
                outer_iterations=0,
                total_dual_outer=0,
                total_dual_inner=0,
                metric=metric,
            )
        a_cum = config.c**2 * r**2 / (2.0 * gap0)
    a0 = a_cum

    x = x0.copy()
    v = x0.copy()
    trace = [AccelTraceRow(0, a_cum, math.nan, math.nan, 0, 0, f0, 0.0, v.copy(), x.copy())]
    status = AccelStatus.MAX_OUTER
    total_dual_outer = 0
    total_dual_inner = 0

    for k in range(config.max_outer):
        f_now = full_value(x)
        if gap0 is not None and f_now - config.f_star_ref <= config.rel_accuracy * gap0:
            status = AccelStatus.TARGET_GAP_REACHED
            break
        a_next_cum = a_cum / (1.0 - gamma)
        a_incr = gamma * a_cum / (1.0 - gamma)
        nu_next = r / (k + 1) ** 2

        contracted = contract_oracle(oracle, gamma, x, a_next_cum)
        augmented = psi.with_quadratic(v, 0.5)
        inner = solve_dual(
            contracted,
            augmented,
            v,
            DualConfig(
                qsc_constant=max(gamma * m_const, 1e-12),
                grad_tol=nu_next,
                max_outer=config.dual_max_outer,
                max_inner=config.dual_max_inner,
            ),
        )
        total_dual_outer += inner.outer_iterations
        total_dual_inner += inner.total_inner
        if inner.status is not DualStatus.GRAD_TOL_REACHED:
            status = AccelStatus.INNER_FAILURE
            break
        v_next = inner.x
        x = gamma * v_next + (1.0 - gamma) * x
        step_sq = metric.primal_norm(v_next - v) ** 2
        v = v_next
        a_cum = a_next_cum
        trace.append(
            AccelTraceRow(
                k=k + 1,
                a_cumulative=a_cum,
                a_increment=a_incr,
                nu=nu_next,
                dual_outer=inner.outer_iterations,
                dual_inner_total=inner.total_inner,
                f_value=full_value(x),
                v_step_sq=step_sq,
                v=v.copy(),
                x=x.copy(),
            )
        )

    return AccelResult(
        x=x,
        trace=trace,
        status=status,
        gamma=gamma,
        gamma_clamped=gamma_clamped,
        a0=a0,
        distance_bound=r,
        c=config.c,
        f_star_ref=config.f_star_ref,
        outer_iterations=len(trace) - 1,
        total_dual_outer=total_dual_outer,
        total_dual_inner=total_dual_inner,
        metric=metric,
    )


# ---------------------------------------------------------------------------
# trace verification
# ---------------------------------------------------------------------------


@dataclass
class AccelPotentialReport:
    passed: bool
    worst_slack: float
    rhs: float
    rule_rhs: float  # (5 + c)^2 R^2 / 2, the bound under the parameter rules
    rule_passed: bool


def verify_accel_potential(
    result: AccelResult, x_star: np.ndarray, f_star: float
) -> AccelPotentialReport:
    """Check the potential inequality at every recorded k:

    ``A_k (F(x_k) - F*) + 1/2 ||v_k - x*||^2 + 1/2 sum_i ||v_i - v_{i-1}||^2
        <= 1/2 (||x_0 - x*|| + sqrt(2 A_0 (F_0 - F*)) + 4R)^2``

    and, under the parameter rules, against ``(5 + c)^2 R^2 / 2``.
    """
    x_star = np.asarray(x_star, dtype=float)
    metric = result.metric
    first = result.trace[0]
    gap0 = first.f_value - f_star
    dist0 = metric.primal_norm(np.asarray(first.x, float) - x_star)
    rhs = 0.5 * (dist0 + math.sqrt(max(2.0 * result.a0 * gap0, 0.0)) + 4.0 * result.distance_bound) ** 2
    rule_rhs = 0.5 * (5.0 + result.c) ** 2 * result.distance_bound**2
    passed = True
    rule_passed = True
    worst = math.inf
    cum_steps = 0.0
    for row in result.trace:
        cum_steps += row.v_step_sq
        lhs = (
            row.a_cumulative * (row.f_value - f_star)
            + 0.5 * metric.primal_norm(np.asarray(row.v, float) - x_star) ** 2
            + 0.5 * cum_steps
        )
        worst = min(worst, rhs * (1.0 + 1e-6) - lhs)
        if lhs > rhs * (1.0 + 1e-6):
            passed = False
        if lhs > rule_rhs * (1.0 + 1e-6):
            rule_passed = False
    return AccelPotentialReport(
        passed=passed, worst_slack=worst, rhs=rhs, rule_rhs=rule_rhs, rule_passed=rule_passed
    )


@dataclass
class AccelRateReport:
    passed: bool
    worst_slack: float
    bounded_v_passed: bool
    bounded_x_passed: bool


def verify_accel_rate(
    result: AccelResult, f_star: float, x_star: np.ndarray | None = None
) -> AccelRateReport:
    """Check the predefined geometric envelope and sequence boundedness:

    ``F(x_k) - F* <= exp(-gamma k) (1 + 5/c)^2 (F_0 - F*)`` for k >= 1 and,
    when a reference point is supplied, ``||v_k - x*|| <= (5 + c) R`` and the
    same bound for x_k.
    """
    gap0 = result.trace[0].f_value - f_star
    prefactor = (1.0 + 5.0 / result.c) ** 2
    passed = True
    worst = math.inf
    for row in result.trace[1:]:
        bound = math.exp(-result.gamma * row.k) * prefactor * gap0 * (1.0 + 1e-6)
        slack = bound - (row.f_value - f_star)
        worst = min(worst, slack)
        if slack < 0:
            passed = False
    bounded_v = bounded_x = True
    if x_star is not None:
        x_star = np.asarray(x_star, dtype=float)
        radius = (5.0 + result.c) * result.distance_bound * (1.0 + 1e-6)
        metric = result.metric
        for row in result.trace:
            if metric.primal_norm(np.asarray(row.v, float) - x_star) > radius:
                bounded_v = False
            if metric.primal_norm(np.asarray(row.x, float) - x_star) > radius:
                bounded_x = False
    return AccelRateReport(
        passed=passed, worst_slack=worst, bounded_v_passed=bounded_v, bounded_x_passed=bounded_x
    )
