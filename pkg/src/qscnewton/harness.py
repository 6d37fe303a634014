"""Experiment harness: configs, reference solutions, verification suites, reports.

A run is described by a versioned JSON config (schema below, unknown keys
rejected).  The harness builds the instance, computes a cached reference
solution when one is needed, runs the requested solver, executes the enabled
verification checks, and persists a trace CSV plus a self-contained JSON
report.  Reference solutions are content-addressed by the problem section of
the config; the cache directory honors the ``QSC_CACHE_DIR`` environment
variable.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import time
from dataclasses import dataclass
from pathlib import Path

import jsonschema
import numpy as np

from . import accelerated as accel_mod
from . import dual as dual_mod
from . import primal as primal_mod
from .composite import CompositeTerm
from .metric import Metric
from .oracles import (
    SmoothOracle,
    check_gradient,
    check_hessian,
    check_function_bounds,
    check_gradient_bound,
    check_hessian_stability,
    check_qsc,
    with_qsc_constant,
)
from .problems import (
    MatrixBalancingObjective,
    MatrixScalingObjective,
    QuadraticObjective,
    SeparableObjective,
    SoftMaxObjective,
    generate_synthetic,
    load_design_matrix,
    load_matrix,
)


class RunConfigError(ValueError):
    """Config file is malformed or violates the schema."""


class ReferenceNotConvergedError(RuntimeError):
    """The reference solve stopped above its gradient tolerance."""

    def __init__(self, grad_norm: float):
        super().__init__(f"reference solve stalled at gradient norm {grad_norm:.3e}")
        self.grad_norm = grad_norm


class InsufficientDataError(ValueError):
    """Too few usable iterations for a rate fit."""


_SOLVER_PARAMS = {
    "sigma": {"type": "number", "minimum": 0},
    "adaptive": {"type": "boolean"},
    "sigma0": {"type": "number", "exclusiveMinimum": 0},
    "sigma_min": {"type": "number", "minimum": 0},
    "grad_tol": {"type": "number", "exclusiveMinimum": 0},
    "max_iters": {"type": "integer", "minimum": 1},
    "rel_accuracy": {"type": "number", "exclusiveMinimum": 0},
    "record_diagnostics": {"type": "boolean"},
    "qsc_constant": {"type": "number", "exclusiveMinimum": 0},
    "max_outer": {"type": "integer", "minimum": 1},
    "max_inner": {"type": "integer", "minimum": 1},
    "distance_bound": {"type": "number", "exclusiveMinimum": 0},
    "c": {"type": "number", "exclusiveMinimum": 0},
    "gamma": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
    "a0": {"type": "number", "exclusiveMinimum": 0},
    "dual_max_outer": {"type": "integer", "minimum": 1},
    "dual_max_inner": {"type": "integer", "minimum": 1},
}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["schema_version", "problem"],
    "properties": {
        "schema_version": {"const": 1},
        "problem": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {
                    "enum": [
                        "quadratic",
                        "softmax",
                        "logistic",
                        "exponential",
                        "matrix_scaling",
                        "matrix_balancing",
                    ]
                },
                "n": {"type": "integer", "minimum": 1},
                "m": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer"},
                "smoothing": {"type": "number", "exclusiveMinimum": 0},
                "cond": {"type": "number", "minimum": 1},
                "separable": {"type": "boolean"},
                "spread": {"type": "number"},
                "zero_fraction": {"type": "number", "minimum": 0, "maximum": 1},
                "data_path": {"type": "string"},
                "qsc_override": {"type": "number", "minimum": 0},
                "quad_regularization": {"type": "number", "minimum": 0},
            },
        },
        "composite": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["zero", "box"]},
                "lower": {"type": ["number", "array"]},
                "upper": {"type": ["number", "array"]},
            },
        },
        "x0": {"type": ["string", "array"]},
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "required": ["name"],
            "properties": {
                "name": {"enum": ["primal", "pure_newton_local", "dual", "accelerated"]},
                **_SOLVER_PARAMS,
            },
        },
        "reference": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "auto": {"type": "boolean"},
                "grad_tol": {"type": "number", "exclusiveMinimum": 0},
                "max_iters": {"type": "integer", "minimum": 1},
            },
        },
        "verify": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "per_step": {"type": "boolean"},
                "rate_fit": {"type": "boolean"},
                "local_quadratic": {"type": "boolean"},
                "dual_guarantee": {"type": "boolean"},
                "dual_rate": {"type": "boolean"},
                "inner_quadratic": {"type": "boolean"},
                "accel_potential": {"type": "boolean"},
                "accel_rate": {"type": "boolean"},
            },
        },
        "instance_checks": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "seed": {"type": "integer"},
                "samples": {"type": "integer", "minimum": 1},
                "pairs": {"type": "integer", "minimum": 1},
                "x_scale": {"type": "number", "exclusiveMinimum": 0},
                "pair_radius": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "trace": {"type": "string"},
                "report": {"type": "string"},
            },
        },
    },
}


def load_config(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            config = json.load(handle)
    except (OSError, json.JSONDecodeError) as exc:
        raise RunConfigError(f"cannot read config {path}: {exc}") from exc
    validate_config(config)
    return config


def validate_config(config: dict) -> None:
    try:
        jsonschema.validate(config, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise RunConfigError(f"invalid config: {exc.message}") from exc


def build_problem(problem_cfg: dict) -> SmoothOracle:
    """Instantiate the oracle described by the config's problem section."""
    kind = problem_cfg["kind"]
    data_path = problem_cfg.get("data_path")
    if data_path is not None:
        if kind in ("logistic", "exponential"):
            rows, offsets = load_design_matrix(data_path)
            oracle = SeparableObjective(rows, offsets, kind)
        elif kind == "softmax":
            rows, offsets = load_design_matrix(data_path)
            oracle = SoftMaxObjective(rows, offsets, problem_cfg.get("smoothing", 1.0))
        elif kind == "matrix_scaling":
            oracle = MatrixScalingObjective(load_matrix(data_path))
        elif kind == "matrix_balancing":
            oracle = MatrixBalancingObjective(load_matrix(data_path))
        else:
            raise RunConfigError(f"kind {kind!r} does not support data_path")
    else:
        knobs = {}
        for key in ("cond", "smoothing", "separable", "spread", "zero_fraction"):
            if key in problem_cfg:
                knobs[key] = problem_cfg[key]
        oracle = generate_synthetic(
            kind,
            n=problem_cfg.get("n", 10),
            m=problem_cfg.get("m", 40),
            seed=problem_cfg.get("seed", 0),
            **knobs,
        )
    reg = problem_cfg.get("quad_regularization", 0.0)
    if reg > 0:
        from .oracles import add_oracles

        bump = QuadraticObjective(
            reg * oracle.metric.matrix, np.zeros(oracle.dim), metric=oracle.metric
        )
        oracle = add_oracles(oracle, bump)
    if "qsc_override" in problem_cfg:
        oracle = with_qsc_constant(oracle, problem_cfg["qsc_override"])
    return oracle


def build_composite(composite_cfg: dict | None, dim: int) -> CompositeTerm:
    if composite_cfg is None or composite_cfg["kind"] == "zero":
        return CompositeTerm.zero()
    lower = composite_cfg.get("lower", -np.inf)
    upper = composite_cfg.get("upper", np.inf)
    lower = np.full(dim, lower, dtype=float) if np.isscalar(lower) else np.asarray(lower, float)
    upper = np.full(dim, upper, dtype=float) if np.isscalar(upper) else np.asarray(upper, float)
    return CompositeTerm.box(lower, upper)


def build_x0(x0_cfg, dim: int, psi: CompositeTerm) -> np.ndarray:
    if x0_cfg is None or x0_cfg == "zeros":
        x0 = np.zeros(dim)
    else:
        x0 = np.asarray(x0_cfg, dtype=float)
        if x0.shape != (dim,):
            raise RunConfigError(f"x0 has dimension {x0.shape}, problem has {dim}")
    return psi.project(x0)


class CountingOracle(SmoothOracle):
    """Delegating wrapper that counts value/gradient/hessian calls."""

    def __init__(self, base: SmoothOracle):
        super().__init__(base.metric, base.qsc_constant)
        self._base = base
        self.calls = {"value": 0, "gradient": 0, "hessian": 0}

    def value(self, x):
        self.calls["value"] += 1
        return self._base.value(x)

    def gradient(self, x):
        self.calls["gradient"] += 1
        return self._base.gradient(x)

    def hessian(self, x):
        self.calls["hessian"] += 1
        return self._base.hessian(x)


# ---------------------------------------------------------------------------
# reference solutions
# ---------------------------------------------------------------------------


@dataclass
class ReferenceSolution:
    x: np.ndarray
    f_value: float
    grad_norm: float
    iterations: int
    from_cache: bool


def _cache_dir() -> Path:
    override = os.environ.get("QSC_CACHE_DIR")
    if override:
        return Path(override)
    return Path.home() / ".cache" / "qscnewton"


def reference_cache_key(problem_cfg: dict, composite_cfg, x0_cfg, grad_tol, max_iters) -> str:
    payload = json.dumps(
        {
            "problem": problem_cfg,
            "composite": composite_cfg,
            "x0": x0_cfg if isinstance(x0_cfg, (str, type(None))) else list(x0_cfg),
            "grad_tol": grad_tol,
            "max_iters": max_iters,
        },
        sort_keys=True,
    )
    return hashlib.sha256(payload.encode()).hexdigest()


def compute_reference(
    oracle: SmoothOracle,
    psi: CompositeTerm,
    x0: np.ndarray,
    grad_tol: float = 1e-12,
    max_iters: int = 10_000,
    cache_key: str | None = None,
) -> ReferenceSolution:
    """High-accuracy solve by adaptive primal Newton, cached when keyed.

    Raises `ReferenceNotConvergedError` when the gradient norm stays above
    `grad_tol` within the iteration budget.
    """
    if cache_key is not None:
        path = _cache_dir() / f"{cache_key}.npz"
        if path.exists():
            data = np.load(path)
            return ReferenceSolution(
                x=data["x"],
                f_value=float(data["f_value"]),
                grad_norm=float(data["grad_norm"]),
                iterations=int(data["iterations"]),
                from_cache=True,
            )
    config = primal_mod.PrimalConfig(
        adaptive=True, sigma0=1.0, grad_tol=grad_tol, max_iters=max_iters
    )
    result = primal_mod.solve_primal(oracle, psi, x0, config)
    if result.status is not primal_mod.PrimalStatus.GRAD_TOL_REACHED:
        raise ReferenceNotConvergedError(result.final_grad_norm)
    reference = ReferenceSolution(
        x=result.x,
        f_value=oracle.value(result.x) + psi.value(result.x, oracle.metric),
        grad_norm=result.final_grad_norm,
        iterations=result.iterations,
        from_cache=False,
    )
    if cache_key is not None:
        directory = _cache_dir()
        directory.mkdir(parents=True, exist_ok=True)
        # write-then-rename so concurrent benchmark cells never see a torn file
        tmp = directory / f"{cache_key}.{os.getpid()}.tmp.npz"
        np.savez(
            tmp,
            x=reference.x,
            f_value=reference.f_value,
            grad_norm=reference.grad_norm,
            iterations=reference.iterations,
        )
        os.replace(tmp, directory / f"{cache_key}.npz")
    return reference


# ---------------------------------------------------------------------------
# trace analysis
# ---------------------------------------------------------------------------


@dataclass
class RateFit:
    slope: float  # of ln(F_k - F*) against k over the linear window
    r_squared: float
    implied_factor: float  # -1/slope, iterations per e-fold of the gap
    window: int


def fit_linear_rate(f_values, f_star: float, min_points: int = 10) -> RateFit:
    """Least-squares slope of the log-gap over the linear regime.

    The final quadratic burst (successive gap ratio below 0.1) and any
    non-positive gaps are excluded from the window.
    """
    gaps = np.asarray(f_values, dtype=float) - f_star
    window = len(gaps)
    for i in range(len(gaps)):
        if gaps[i] <= 0:
            window = i
            break
        if i + 1 < len(gaps) and gaps[i + 1] > 0 and gaps[i + 1] / gaps[i] < 0.1:
            window = i + 1
            break
    if window < min_points:
        raise InsufficientDataError(
            f"only {window} usable iterations in the linear window, need {min_points}"
        )
    ks = np.arange(window, dtype=float)
    ys = np.log(gaps[:window])
    slope, intercept = np.polyfit(ks, ys, 1)
    fitted = slope * ks + intercept
    ss_res = float(np.sum((ys - fitted) ** 2))
    ss_tot = float(np.sum((ys - ys.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return RateFit(
        slope=float(slope),
        r_squared=r2,
        implied_factor=float(-1.0 / slope) if slope < 0 else math.inf,
        window=window,
    )


def observed_diameter(points, metric: Metric, extra=None) -> float:
    """Max pairwise metric distance among recorded iterates (plus an optional
    reference point).  A lower estimate of the sublevel-set diameter."""
    pts = [np.asarray(p, dtype=float) for p in points]
    if extra is not None:
        pts.append(np.asarray(extra, dtype=float))
    stack = np.stack(pts)
    gram = stack @ metric.matrix @ stack.T
    diag = np.diag(gram)
    sq = diag[:, None] + diag[None, :] - 2.0 * gram
    return float(np.sqrt(max(sq.max(), 0.0)))


@dataclass
class RateEnvelopeReport:
    """Advisory check of the two-term geometric envelope on the gaps.

    The true sublevel diameter is not computable, so the check runs with the
    observed-iterate lower estimate and is a warning signal, never a hard
    failure: `holds` False with `advisory` True means the trace outran the
    estimate, not that the method misbehaved.
    """

    holds: bool
    advisory: bool
    worst_slack: float
    diameter_estimate: float


def check_primal_rate_envelope(
    trace, f_star: float, g0: float, qsc_constant: float, diameter: float
) -> RateEnvelopeReport:
    """Check ``gap_k <= exp(-k/(8 M D^)) gap_0 + exp(-k/4) g_0 D^`` per iterate."""
    gap0 = trace[0].f_value - f_star
    holds = True
    worst = math.inf
    for k, row in enumerate(trace):
        if qsc_constant > 0 and diameter > 0:
            first = math.exp(-k / (8.0 * qsc_constant * diameter)) * gap0
        else:
            first = gap0
        bound = first + math.exp(-k / 4.0) * g0 * diameter
        slack = bound * (1.0 + 1e-9) - (row.f_value - f_star)
        worst = min(worst, slack)
        if slack < 0:
            holds = False
    return RateEnvelopeReport(
        holds=holds, advisory=True, worst_slack=worst, diameter_estimate=diameter
    )


@dataclass
class PerStepReport:
    passed: bool
    steps: int
    monotone: bool
    progress_violations: int
    step_bound_violations: int
    worst_progress_slack: float
    worst_step_slack: float


def check_primal_trace(trace, slack: float = 1e-8) -> PerStepReport:
    """Scalar per-step guarantee checks on a primal trace (recomputable from CSV).

    Checks, for every completed step k: monotone F (1e-10 slack), the progress
    inequality ``progress_k >= g_{k+1}^2 / (2 beta_k)``, and the step-length
    bound ``||x_{k+1} - x_k|| <= g_k / beta_k`` (both vacuous at beta = 0,
    where the step is exact and the new subgradient must vanish instead).
    """
    monotone = True
    progress_bad = 0
    step_bad = 0
    worst_progress = math.inf
    worst_step = math.inf
    steps = 0
    for row, nxt in zip(trace, trace[1:]):
        if math.isnan(row.sigma):
            continue
        steps += 1
        if nxt.f_value > row.f_value + 1e-10:
            monotone = False
        g_next = nxt.grad_norm
        if row.beta > 0:
            rhs = g_next**2 / (2.0 * row.beta)
            worst_progress = min(worst_progress, row.progress - rhs + slack)
            if row.progress < rhs - slack:
                progress_bad += 1
            bound = row.grad_norm / row.beta
            worst_step = min(worst_step, bound - row.step_length + slack)
            if row.step_length > bound + slack:
                step_bad += 1
        else:
            if g_next > slack * (1.0 + trace[0].grad_norm):
                progress_bad += 1
    return PerStepReport(
        passed=monotone and progress_bad == 0 and step_bad == 0,
        steps=steps,
        monotone=monotone,
        progress_violations=progress_bad,
        step_bound_violations=step_bad,
        worst_progress_slack=worst_progress,
        worst_step_slack=worst_step,
    )


# ---------------------------------------------------------------------------
# instance verification suite
# ---------------------------------------------------------------------------


def sample_pairs(oracle: SmoothOracle, rng, radius: float, x_scale: float = 1.0):
    n = oracle.dim
    x = x_scale * rng.standard_normal(n)
    direction = rng.standard_normal(n)
    direction /= max(oracle.metric.primal_norm(direction), 1e-300)
    y = x + rng.uniform(0.0, radius) * direction
    return x, y


def run_instance_checks(
    oracle: SmoothOracle,
    seed: int = 0,
    samples: int = 1000,
    pairs: int = 200,
    x_scale: float = 1.0,
    pair_radius: float = 2.0,
) -> dict:
    """Full oracle verification: FD derivative checks, the sampled
    third-derivative certificate, and the three smoothness-bound checks.

    Returns a dict of named results, each with a ``passed`` flag and details.
    """
    rng = np.random.default_rng(seed)
    results: dict[str, dict] = {}

    grad_err = 0.0
    hess_err = 0.0
    for _ in range(5):
        x = x_scale * rng.standard_normal(oracle.dim)
        grad_err = max(grad_err, check_gradient(oracle, x))
        hess_err = max(hess_err, check_hessian(oracle, x))
    results["gradient_fd"] = {"passed": grad_err <= 1e-6, "max_rel_error": grad_err}
    results["hessian_fd"] = {"passed": hess_err <= 1e-5, "max_rel_error": hess_err}

    report = check_qsc(oracle, seed=seed, num_samples=samples, x_scale=x_scale)
    results["qsc"] = {
        "passed": report.passed,
        "samples": report.samples,
        "max_violation": report.max_violation,
        "tolerance": report.tolerance,
    }

    stability_ok = True
    grad_bound_ok = True
    func_bound_ok = True
    worst = {"hessian_stability": math.inf, "gradient_bound": math.inf, "function_bounds": math.inf}
    for _ in range(pairs):
        x, y = sample_pairs(oracle, rng, pair_radius, x_scale)
        ok, margin = check_hessian_stability(oracle, x, y)
        stability_ok &= ok
        worst["hessian_stability"] = min(worst["hessian_stability"], margin)
        ok, margin = check_gradient_bound(oracle, x, y)
        grad_bound_ok &= ok
        worst["gradient_bound"] = min(worst["gradient_bound"], margin)
        ok, margin = check_function_bounds(oracle, x, y)
        func_bound_ok &= ok
        worst["function_bounds"] = min(worst["function_bounds"], margin)
    results["hessian_stability"] = {
        "passed": bool(stability_ok),
        "pairs": pairs,
        "worst_margin": worst["hessian_stability"],
    }
    results["gradient_bound"] = {
        "passed": bool(grad_bound_ok),
        "pairs": pairs,
        "worst_margin": worst["gradient_bound"],
    }
    results["function_bounds"] = {
        "passed": bool(func_bound_ok),
        "pairs": pairs,
        "worst_margin": worst["function_bounds"],
    }
    return results


# ---------------------------------------------------------------------------
# config-driven runs
# ---------------------------------------------------------------------------


def _solver_config(solver_cfg: dict, oracle: SmoothOracle):
    name = solver_cfg["name"]
    params = {k: v for k, v in solver_cfg.items() if k != "name"}
    if name in ("primal", "pure_newton_local"):
        if name == "pure_newton_local":
            params.setdefault("sigma", 0.0)
        allowed = (
            "sigma",
            "adaptive",
            "sigma0",
            "sigma_min",
            "grad_tol",
            "max_iters",
            "rel_accuracy",
            "record_diagnostics",
        )
        params = {k: v for k, v in params.items() if k in allowed}
        return primal_mod.PrimalConfig(**params)
    if name == "dual":
        params.setdefault("qsc_constant", max(oracle.qsc_constant, 1e-12))
        params.setdefault("grad_tol", 1e-8)
        allowed = ("qsc_constant", "grad_tol", "max_outer", "max_inner")
        params = {k: v for k, v in params.items() if k in allowed}
        return dual_mod.DualConfig(**params)
    if name == "accelerated":
        allowed = (
            "distance_bound",
            "c",
            "gamma",
            "a0",
            "rel_accuracy",
            "max_outer",
            "dual_max_outer",
            "dual_max_inner",
        )
        params = {k: v for k, v in params.items() if k in allowed}
        return params  # completed later once the reference is known
    raise RunConfigError(f"unknown solver {name!r}")


def _json_safe(value):
    if isinstance(value, dict):
        return {k: _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, float)):
        v = float(value)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.bool_,)):
        return bool(value)
    return value


def run_solve(config: dict, out_dir, strict: bool = False) -> dict:
    """Execute a solve config; writes trace + report into `out_dir`.

    Returns the report dict; the `success` field drives the CLI exit code.
    """
    validate_config(config)
    if "solver" not in config:
        raise RunConfigError("solve runs need a 'solver' section")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()

    oracle = build_problem(config["problem"])
    psi = build_composite(config.get("composite"), oracle.dim)
    x0 = build_x0(config.get("x0"), oracle.dim, psi)
    counting = CountingOracle(oracle)
    solver_name = config["solver"]["name"]
    verify_cfg = config.get("verify", {})
    reference_cfg = config.get("reference", {})

    needs_reference = (
        reference_cfg.get("auto", False)
        or solver_name == "accelerated"  # A_0 rule and the stopping test need F*
        or ("rel_accuracy" in config["solver"] and solver_name in ("primal", "pure_newton_local"))
        or any(
            verify_cfg.get(flag)
            for flag in ("rate_fit", "dual_guarantee", "dual_rate", "accel_potential", "accel_rate")
        )
    )
    reference = None
    if needs_reference:
        ref_tol = reference_cfg.get("grad_tol", 1e-12)
        ref_iters = reference_cfg.get("max_iters", 10_000)
        key = reference_cache_key(
            config["problem"], config.get("composite"), config.get("x0"), ref_tol, ref_iters
        )
        reference = compute_reference(
            oracle, psi, x0, grad_tol=ref_tol, max_iters=ref_iters, cache_key=key
        )

    verification: dict[str, dict] = {}
    trace_path = out_dir / config.get("output", {}).get("trace", "trace.csv")
    report_path = out_dir / config.get("output", {}).get("report", "report.json")

    if solver_name in ("primal", "pure_newton_local"):
        solver_config = _solver_config(config["solver"], oracle)
        if solver_config.rel_accuracy is not None and reference is not None:
            solver_config.f_star_ref = reference.f_value
        if verify_cfg.get("local_quadratic", False):
            solver_config.record_diagnostics = True  # the check needs eta per row
        result = primal_mod.solve_primal(counting, psi, x0, solver_config)
        success = result.status in (
            primal_mod.PrimalStatus.GRAD_TOL_REACHED,
            primal_mod.PrimalStatus.TARGET_GAP_REACHED,
        )
        primal_mod.write_primal_trace(result.trace, trace_path)
        iterations = result.iterations
        final_g = result.final_grad_norm
        final_f = result.trace[-1].f_value
        diameter = observed_diameter(
            [row.x for row in result.trace if row.x is not None],
            oracle.metric,
            extra=None if reference is None else reference.x,
        )
        extras = {
            "step_computations": result.step_computations,
            "observed_diameter": {
                "value": diameter,
                "caveat": "lower estimate of the sublevel-set diameter from observed iterates",
            },
        }
        if verify_cfg.get("per_step", True):
            report = check_primal_trace(result.trace)
            verification["per_step"] = _json_safe(report.__dict__)
        if verify_cfg.get("rate_fit", False) and reference is not None:
            envelope = check_primal_rate_envelope(
                result.trace,
                reference.f_value,
                result.trace[0].grad_norm,
                oracle.qsc_constant,
                diameter,
            )
            try:
                fit = fit_linear_rate(result.f_values, reference.f_value)
                bound = 8.0 * oracle.qsc_constant * diameter
                verification["rate_fit"] = _json_safe(
                    {
                        **fit.__dict__,
                        "bound_8MD": bound,
                        # advisory: the diameter is only a lower estimate
                        "within_bound": bool(fit.implied_factor <= bound) if bound > 0 else True,
                        "envelope": envelope.__dict__,
                        "policy": "warn",
                    }
                )
            except InsufficientDataError as exc:
                verification["rate_fit"] = {
                    "passed": None,
                    "skipped": str(exc),
                    "envelope": _json_safe(envelope.__dict__),
                }
        if verify_cfg.get("local_quadratic", False):
            report = primal_mod.check_local_quadratic(result.trace, oracle.qsc_constant)
            verification["local_quadratic"] = _json_safe(report.__dict__)
    elif solver_name == "dual":
        solver_config = _solver_config(config["solver"], oracle)
        result = dual_mod.solve_dual(counting, psi, x0, solver_config)
        success = result.status is dual_mod.DualStatus.GRAD_TOL_REACHED
        dual_mod.write_dual_trace(result.trace, trace_path)
        iterations = result.outer_iterations
        final_g = result.final_grad_norm
        final_f = result.trace[-1].f_next if result.trace else oracle.value(x0) + psi.value(x0, oracle.metric)
        extras = {"total_inner": result.total_inner, "qsc_used": result.qsc_used}
        if reference is not None and result.trace:
            if verify_cfg.get("dual_guarantee", False):
                rep = dual_mod.verify_dual_guarantee(result, reference.x, reference.f_value)
                verification["dual_guarantee"] = _json_safe(rep.__dict__)
            if verify_cfg.get("dual_rate", False) and len(result.trace) >= 3:
                rep = dual_mod.verify_dual_rate(result, reference.x)
                verification["dual_rate"] = _json_safe(rep.__dict__)
        if verify_cfg.get("inner_quadratic", False) and result.trace:
            rep = dual_mod.check_inner_quadratic(result)
            verification["inner_quadratic"] = _json_safe(rep.__dict__)
    elif solver_name == "accelerated":
        params = _solver_config(config["solver"], oracle)
        if "distance_bound" not in params:
            if reference is None:
                raise RunConfigError("accelerated runs need a distance_bound or auto reference")
            dist = oracle.metric.primal_norm(x0 - reference.x)
            floor = 2.0**1.5 / oracle.qsc_constant if oracle.qsc_constant > 0 else 0.0
            params["distance_bound"] = max(dist, floor, 1e-8)
        accel_config = accel_mod.AccelConfig(
            f_star_ref=None if reference is None else reference.f_value,
            strict=strict,
            **params,
        )
        result = accel_mod.solve_accelerated(counting, psi, x0, accel_config)
        success = result.status in (
            accel_mod.AccelStatus.TARGET_GAP_REACHED,
            accel_mod.AccelStatus.ALREADY_CONVERGED,
        )
        accel_mod.write_accel_trace(result.trace, trace_path)
        iterations = result.outer_iterations
        final_f = result.trace[-1].f_value
        final_g = math.nan
        extras = {
            "gamma": result.gamma,
            "gamma_clamped": result.gamma_clamped,
            "a0": result.a0,
            "distance_bound": result.distance_bound,
            "total_dual_outer": result.total_dual_outer,
            "total_dual_inner": result.total_dual_inner,
        }
        if reference is not None:
            if verify_cfg.get("accel_potential", False):
                rep = accel_mod.verify_accel_potential(result, reference.x, reference.f_value)
                verification["accel_potential"] = _json_safe(rep.__dict__)
            if verify_cfg.get("accel_rate", False):
                rep = accel_mod.verify_accel_rate(result, reference.f_value, reference.x)
                verification["accel_rate"] = _json_safe(rep.__dict__)
    else:  # pragma: no cover - schema forbids
        raise RunConfigError(f"unknown solver {solver_name!r}")

    report = {
        "schema_version": 1,
        "config": config,
        "status": result.status.value,
        "success": bool(success),
        "iterations": iterations,
        "oracle_calls": counting.calls,
        "final_grad_norm": _json_safe(final_g),
        "final_f": _json_safe(final_f),
        "reference": None
        if reference is None
        else {
            "f_star": reference.f_value,
            "grad_norm": reference.grad_norm,
            "iterations": reference.iterations,
            "from_cache": reference.from_cache,
        },
        "final_gap": None if reference is None else _json_safe(final_f - reference.f_value),
        "verification": verification,
        "wall_time_s": time.perf_counter() - started,
        **_json_safe(extras),
    }
    with open(report_path, "w", encoding="utf-8") as handle:
        json.dump(_json_safe(report), handle, indent=2)
    return report


def run_verify(config: dict, out_dir) -> dict:
    """Execute the instance verification suite; returns the report dict."""
    validate_config(config)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()
    oracle = build_problem(config["problem"])
    checks_cfg = config.get("instance_checks", {})
    results = run_instance_checks(
        oracle,
        seed=checks_cfg.get("seed", 0),
        samples=checks_cfg.get("samples", 1000),
        pairs=checks_cfg.get("pairs", 200),
        x_scale=checks_cfg.get("x_scale", 1.0),
        pair_radius=checks_cfg.get("pair_radius", 2.0),
    )
    failing = sorted(name for name, res in results.items() if not res["passed"])
    report = {
        "schema_version": 1,
        "config": config,
        "qsc_constant": oracle.qsc_constant,
        "checks": _json_safe(results),
        "failing": failing,
        "all_passed": not failing,
        "wall_time_s": time.perf_counter() - started,
    }
    report_path = out_dir / config.get("output", {}).get("report", "verify_report.json")
    with open(report_path, "w", encoding="utf-8") as handle:
        json.dump(_json_safe(report), handle, indent=2)
    return report


def run_reference(config: dict, out_dir) -> dict:
    """Compute (and cache) the reference solution for a config."""
    validate_config(config)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    oracle = build_problem(config["problem"])
    psi = build_composite(config.get("composite"), oracle.dim)
    x0 = build_x0(config.get("x0"), oracle.dim, psi)
    reference_cfg = config.get("reference", {})
    ref_tol = reference_cfg.get("grad_tol", 1e-12)
    ref_iters = reference_cfg.get("max_iters", 10_000)
    key = reference_cache_key(
        config["problem"], config.get("composite"), config.get("x0"), ref_tol, ref_iters
    )
    reference = compute_reference(
        oracle, psi, x0, grad_tol=ref_tol, max_iters=ref_iters, cache_key=key
    )
    report = {
        "schema_version": 1,
        "config": config,
        "f_star": reference.f_value,
        "grad_norm": reference.grad_norm,
        "iterations": reference.iterations,
        "from_cache": reference.from_cache,
        "cache_key": key,
    }
    with open(out_dir / "reference.json", "w", encoding="utf-8") as handle:
        json.dump(_json_safe(report), handle, indent=2)
    return report


# ---------------------------------------------------------------------------
# benchmark grid
# ---------------------------------------------------------------------------

BENCHMARK_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["schema_version", "problems", "solvers"],
    "properties": {
        "schema_version": {"const": 1},
        "problems": {"type": "array", "minItems": 1, "items": CONFIG_SCHEMA["properties"]["problem"]},
        "solvers": {"type": "array", "minItems": 1, "items": CONFIG_SCHEMA["properties"]["solver"]},
        "composite": CONFIG_SCHEMA["properties"]["composite"],
        "x0": CONFIG_SCHEMA["properties"]["x0"],
        "reference": CONFIG_SCHEMA["properties"]["reference"],
        "verify": CONFIG_SCHEMA["properties"]["verify"],
    },
}

_TABLE_COLUMNS = ("problem", "solver", "status", "iterations", "grad_calls", "hess_calls", "final_gap")


def _benchmark_cell(args):
    cell_config, out_dir, strict = args
    try:
        report = run_solve(cell_config, out_dir, strict=strict)
        return {"ok": True, "report": report}
    except Exception as exc:  # noqa: BLE001 - cell failures are recorded, not raised
        return {"ok": False, "error": f"{type(exc).__name__}: {exc}"}


def run_benchmark(suite: dict, out_dir, jobs: int = 1, strict: bool = False) -> dict:
    """Run every problem x solver cell; emit table.csv and table.txt.

    Cells are independent and deterministic, so optional process parallelism
    cannot change any numeric output.  Exit is successful if every cell
    produced a report, even if some solves did not converge.
    """
    try:
        jsonschema.validate(suite, BENCHMARK_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise RunConfigError(f"invalid benchmark suite: {exc.message}") from exc
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    cells = []
    for pi, problem in enumerate(suite["problems"]):
        for si, solver in enumerate(suite["solvers"]):
            config = {
                "schema_version": 1,
                "problem": problem,
                "solver": solver,
                "reference": suite.get("reference", {"auto": True}),
            }
            if "composite" in suite:
                config["composite"] = suite["composite"]
            if "x0" in suite:
                config["x0"] = suite["x0"]
            if "verify" in suite:
                config["verify"] = suite["verify"]
            cells.append((config, out_dir / f"cell_{pi}_{si}", strict))

    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_benchmark_cell, cells))
    else:
        outcomes = [_benchmark_cell(cell) for cell in cells]

    rows = []
    for (config, cell_dir, _), outcome in zip(cells, outcomes):
        label = config["problem"]["kind"]
        if "smoothing" in config["problem"]:
            label += f"(mu={config['problem']['smoothing']})"
        if outcome["ok"]:
            rep = outcome["report"]
            rows.append(
                {
                    "problem": label,
                    "solver": config["solver"]["name"],
                    "status": rep["status"],
                    "iterations": rep["iterations"],
                    "grad_calls": rep["oracle_calls"]["gradient"],
                    "hess_calls": rep["oracle_calls"]["hessian"],
                    "final_gap": rep["final_gap"],
                }
            )
        else:
            rows.append(
                {
                    "problem": label,
                    "solver": config["solver"]["name"],
                    "status": f"error: {outcome['error']}",
                    "iterations": "",
                    "grad_calls": "",
                    "hess_calls": "",
                    "final_gap": "",
                }
            )

    import csv as _csv

    with open(out_dir / "table.csv", "w", newline="", encoding="utf-8") as handle:
        writer = _csv.DictWriter(handle, fieldnames=_TABLE_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)
    widths = {
        c: max(len(c), *(len(str(r[c])) for r in rows)) for c in _TABLE_COLUMNS
    }
    lines = ["  ".join(c.ljust(widths[c]) for c in _TABLE_COLUMNS)]
    lines.append("  ".join("-" * widths[c] for c in _TABLE_COLUMNS))
    for r in rows:
        lines.append("  ".join(str(r[c]).ljust(widths[c]) for c in _TABLE_COLUMNS))
    (out_dir / "table.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")

    return {
        "cells": len(cells),
        "completed": sum(1 for o in outcomes if o["ok"]),
        "all_reported": all(o["ok"] for o in outcomes),
        "rows": rows,
    }
