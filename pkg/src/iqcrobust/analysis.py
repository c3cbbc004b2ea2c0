"""Robustness verdicts built on the LMI layer, with frequency-domain oracles."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import minimize_scalar

from . import matops, sdp
from .lmi import (
    Affine,
    LmiProblem,
    PerformanceSpec,
    assemble_dissipation,
    assemble_robust_performance,
    assemble_robust_stability,
    stability_block_from_performance,
)
from .lti import (
    PartitionedPlant,
    PoleOnAxisError,
    StateSpace,
    controllability_rank,
    diag_augment,
    freq_response,
    imaginary_axis_poles,
    is_hurwitz,
)
from .multiplier import MultiplierClass, SupplyRateMatrix, sector

FDI_TOL = 1e-9
BORDERLINE = 1e-6
GRID = np.concatenate([[0.0], np.logspace(-4, 4, 400), [np.inf]])


class MarginError(ValueError):
    pass


class NonMonotoneWarning(UserWarning):
    pass


@dataclass
class AnalysisResult:
    verdict: str  # robustly_stable | robust_performance | inconclusive
    chosen_p: np.ndarray | None = None
    terminal_z: np.ndarray | None = None
    storage_x: np.ndarray | None = None
    bound: float | None = None
    gamma: float | None = None
    assignment: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.verdict != "inconclusive"


# frequency-domain oracle


def _as_p(p) -> np.ndarray:
    return np.asarray(p.p if isinstance(p, SupplyRateMatrix) else p, dtype=float)


def fdi_value(sys: StateSpace, p, omega: float) -> float:
    """Largest eigenvalue of [G; I]^* P [G; I] at one frequency."""
    g = freq_response(sys, omega).value
    outer = np.vstack([g, np.eye(sys.inputs)])
    herm = outer.conj().T @ _as_p(p) @ outer
    return float(np.linalg.eigvalsh(0.5 * (herm + herm.conj().T))[-1])


@dataclass(frozen=True)
class FdiResult:
    holds: bool
    min_margin: float
    argmin_omega: float
    omegas: np.ndarray
    margins: np.ndarray


def fdi_grid_check(sys: StateSpace, p) -> FdiResult:
    """Check [G; I]^* P [G; I] < 0 on a refined frequency grid including 0 and inf.

    The margin at a frequency is minus the largest eigenvalue; the grid is
    refined once around cells where the margin comes within a factor two of
    its minimum, and the worst cell gets a bounded scalar search.
    """
    if imaginary_axis_poles(sys):
        raise PoleOnAxisError("state matrix has eigenvalues on the imaginary axis")
    margin = lambda w: -fdi_value(sys, p, w)  # noqa: E731
    omegas = list(GRID)
    vals = [margin(w) for w in omegas]
    worst = min(vals)
    near = worst + max(abs(worst), 1e-12)
    extra = []
    finite = GRID[1:-1]
    for i in range(len(finite) - 1):
        j = i + 1  # index into omegas (shifted by the leading 0)
        if vals[j] <= near or vals[j + 1] <= near:
            extra.append(np.sqrt(finite[i] * finite[i + 1]))
    for w in extra:
        omegas.append(w)
        vals.append(margin(w))
    order = np.argsort(omegas)
    omegas = np.asarray(omegas)[order]
    vals = np.asarray(vals)[order]
    k = int(np.argmin(vals))
    if 0 < k < len(omegas) - 1 and np.isfinite(omegas[k + 1]):
        lo, hi = omegas[k - 1], omegas[k + 1]
        res = minimize_scalar(margin, bounds=(lo, hi), method="bounded", options={"xatol": 1e-10 * (1 + hi)})
        if res.fun < vals[k]:
            omegas = np.append(omegas, res.x)
            vals = np.append(vals, res.fun)
            order = np.argsort(omegas)
            omegas, vals = omegas[order], vals[order]
            k = int(np.argmin(vals))
    return FdiResult(bool(vals[k] > FDI_TOL), float(vals[k]), float(omegas[k]), omegas, vals)


@dataclass
class KypReport:
    fdi: FdiResult
    lmi: sdp.SolveOutcome
    strict: bool
    agree: bool
    borderline: bool
    hypothesis_ok: bool
    note: str = ""

    @property
    def hard_failure(self) -> bool:
        return not self.agree and not self.borderline and self.hypothesis_ok


def kyp_equivalence(sys: StateSpace, p, strict: bool = True, solver: str = "reference") -> KypReport:
    """Compare the frequency-domain verdict with feasibility of the dissipation LMI.

    The non-strict branch needs controllability; when it fails the report is
    flagged rather than counted as a disagreement.
    """
    note = ""
    hypothesis_ok = True
    if not strict and controllability_rank(sys) < sys.n:
        hypothesis_ok = False
        note = "system not controllable: non-strict equivalence not guaranteed"
    fdi = fdi_grid_check(sys, p)
    prob = assemble_dissipation(sys, _as_p(p), strict=strict)
    out = sdp.solve_feasibility(prob, solver)
    if strict:
        lmi_ok = out.status == "strictly_feasible"
        fdi_ok = fdi.holds
    else:
        lmi_ok = out.phase1_t is not None and out.phase1_t <= 10 * sdp.EPS_DECIDE
        fdi_ok = fdi.min_margin >= -FDI_TOL
    borderline = abs(fdi.min_margin) < BORDERLINE
    return KypReport(fdi, out, strict, lmi_ok == fdi_ok, borderline, hypothesis_ok, note)


# verdicts


def _nominal_closed_loop(plant: StateSpace, delta0) -> np.ndarray:
    m, k = plant.inputs, plant.outputs
    delta0 = np.zeros((m, k)) if delta0 is None else np.atleast_2d(np.asarray(delta0, float))
    loop = np.eye(k) - plant.d @ delta0
    if abs(np.linalg.det(loop)) < 1e-12:
        raise matops.SingularityError("I - D Delta0 is singular")
    return plant.a + plant.b @ delta0 @ np.linalg.solve(loop, plant.c)


def circle_test(plant: StateSpace, l, m_low, delta0=None, solver: str = "reference") -> AnalysisResult:
    """Absolute stability for nonlinearities in the sector between L z and M z."""
    srm = sector(l, m_low)
    k, m = plant.outputs, plant.inputs
    if (srm.k, srm.m) != (k, m):
        raise ValueError("sector dimensions do not match the plant")
    if imaginary_axis_poles(plant):
        raise PoleOnAxisError("plant has eigenvalues on the imaginary axis")
    d0 = np.zeros((m, k)) if delta0 is None else np.atleast_2d(np.asarray(delta0, float))
    nominal = np.vstack([np.eye(k), d0])
    if matops.min_eig(nominal.T @ srm.p @ nominal) < -1e-12:
        return AnalysisResult("inconclusive", diagnostics={"reason": "nominal map not inside the sector"})
    try:
        a0 = _nominal_closed_loop(plant, d0)
    except matops.SingularityError as exc:
        return AnalysisResult("inconclusive", diagnostics={"reason": str(exc)})
    if not is_hurwitz(a0):
        return AnalysisResult("inconclusive", diagnostics={"reason": "nominal loop is not Hurwitz"})
    prob = assemble_dissipation(plant, srm.p)
    x = prob.var("X")
    prob.add_lmi(Affine.variable(x), "X>0")
    out = sdp.solve_feasibility(prob, solver)
    diag = {"status": out.status, "phase1_t": out.phase1_t, "solve_ms": out.solve_ms, "iterations": out.iterations}
    if out.status != "strictly_feasible":
        return AnalysisResult("inconclusive", diagnostics=diag)
    return AnalysisResult(
        "robustly_stable", chosen_p=srm.p, storage_x=out.assignment["X"], assignment=out.assignment, diagnostics=diag
    )


def _replay(prob: LmiProblem, theta) -> dict:
    rep = prob.check(theta)
    return {"replay_passed": rep.passed, "replay_min_margin": rep.min_margin, "epsilon": prob.epsilon}


def robust_stability(plant: StateSpace, mclass: MultiplierClass, solver: str = "reference") -> AnalysisResult:
    """Feasibility of the filtered dissipation LMI with terminal-cost coupling."""
    if plant.inputs == 0 or plant.outputs == 0:
        verdict = "robustly_stable" if is_hurwitz(plant) else "inconclusive"
        return AnalysisResult(verdict, diagnostics={"reason": "no uncertainty channels: Hurwitz check"})
    parts = assemble_robust_stability(plant, mclass, parts=True)
    prob = parts.problem
    out = sdp.solve_feasibility(prob, solver)
    diag = {"status": out.status, "phase1_t": out.phase1_t, "solve_ms": out.solve_ms,
            "iterations": out.iterations, "message": out.message}
    if out.status != "strictly_feasible":
        return AnalysisResult("inconclusive", diagnostics=diag)
    p_val = prob.evaluate(parts.p, out.theta)
    z_val = prob.evaluate(parts.z, out.theta)
    x_val = prob.evaluate(parts.x, out.theta)
    diag.update(_replay(prob, out.theta))
    coupled = x_val.copy()
    coupled[: parts.n_filter, : parts.n_filter] += z_val
    # the proof's energy bound: int(|x|^2 + |w|^2) <= gamma^2 |x0|^2
    gamma = float(np.sqrt(matops.max_eig(coupled) / prob.epsilon))
    return AnalysisResult("robustly_stable", p_val, z_val, x_val, gamma=gamma, assignment=out.assignment, diagnostics=diag)


def _performance_level(perf: PerformanceSpec) -> float | None:
    r = perf.pp[perf.ne :, perf.ne :]
    if r.size and np.allclose(r, r[0, 0] * np.eye(r.shape[0])) and r[0, 0] < 0:
        return float(np.sqrt(-r[0, 0]))
    return None


def robust_performance(
    plant4: PartitionedPlant,
    mclass: MultiplierClass,
    perf: PerformanceSpec | None = None,
    invariance: bool = True,
    minimize: bool = True,
    solver: str = "reference",
) -> AnalysisResult:
    """Robust quadratic performance; with invariance, sqrt(trace Y) bounds the peak of e."""
    perf = perf or PerformanceSpec.amplitude(plant4.ne, plant4.nd)
    parts = assemble_robust_performance(plant4, mclass, perf, invariance=invariance, parts=True)
    prob = parts.problem
    if invariance and minimize:
        out = sdp.solve_min(prob, solver)
        good = out.status == "objective_optimal"
    else:
        out = sdp.solve_feasibility(prob, solver)
        good = out.status == "strictly_feasible"
    diag = {"status": out.status, "phase1_t": out.phase1_t, "solve_ms": out.solve_ms,
            "iterations": out.iterations, "message": out.message}
    if not good:
        return AnalysisResult("inconclusive", gamma=_performance_level(perf), diagnostics=diag)
    p_val = prob.evaluate(parts.p, out.theta)
    z_val = prob.evaluate(parts.z, out.theta)
    x_val = prob.evaluate(parts.x, out.theta)
    diag.update(_replay(prob, out.theta))
    nf = parts.n_filter
    x1, x12, x2 = x_val[:nf, :nf], x_val[:nf, nf:], x_val[nf:, nf:]
    e_mat = x2 - x12.T @ np.linalg.solve(x1 + z_val, x12) if nf else x2
    diag["e_min_eig"] = matops.min_eig(e_mat)
    stab = stability_block_from_performance(plant4, mclass, p_val, x_val)
    diag["containment_margin"] = matops.min_eig(stab)
    bound = None
    if parts.y is not None:
        y_val = prob.evaluate(parts.y, out.theta)
        bound = float(np.sqrt(max(np.trace(y_val), 0.0)))
        diag["ellipsoid_y"] = y_val
    return AnalysisResult(
        "robust_performance", p_val, z_val, x_val, bound=bound, gamma=_performance_level(perf),
        assignment=out.assignment, diagnostics=diag,
    )


def performance_containment_ok(plant4: PartitionedPlant, mclass: MultiplierClass, res: AnalysisResult,
                               scale: float = 1.0) -> bool:
    """A performance certificate also certifies the d-free stability LMI."""
    stab = stability_block_from_performance(plant4, mclass, res.chosen_p, res.storage_x)
    return matops.min_eig(stab) >= -1e-8 * scale


# margins


@dataclass
class MarginResult:
    value: float
    saturated: bool
    evaluations: list
    warnings: list


def stability_margin(
    family: Callable[[float], StateSpace],
    mclass: MultiplierClass,
    lo: float,
    hi: float,
    tol: float = 1e-3,
    solver: str = "reference",
    feasible: Callable[[float], bool] | None = None,
    scan: int = 3,
) -> MarginResult:
    """Largest parameter in [lo, hi] with a robust-stability certificate, by bisection.

    ``scan`` evenly spaced interior points are probed first; bisection then
    brackets the first feasible-to-infeasible transition, and any certified
    point above it is reported as non-monotone. ``feasible`` overrides the
    default test ``robust_stability(family(v), mclass)``.
    """
    if feasible is None:
        def feasible(v):
            return robust_stability(family(v), mclass, solver).ok

    evals = []

    def probe(v):
        ok = bool(feasible(v))
        evals.append((float(v), ok))
        return ok

    if not probe(lo):
        raise MarginError(f"no certificate at the lower end {lo}")
    if probe(hi):
        return MarginResult(float(hi), True, evals, [])
    grid = [(v, probe(v)) for v in np.linspace(lo, hi, scan + 2)[1:-1]] + [(hi, False)]
    a = lo
    for v, ok in grid:
        if not ok:
            b = v
            break
        a = v
    while b - a > tol:
        mid = 0.5 * (a + b)
        if probe(mid):
            a = mid
        else:
            b = mid
    notes = []
    above = [v for v, ok in evals if ok and v > b]
    if above:
        msg = f"non-monotone feasibility: infeasible at {b}, feasible at {min(above)}"
        notes.append(msg)
        warnings.warn(msg, NonMonotoneWarning, stacklevel=2)
    return MarginResult(float(a), False, evals, notes)


# terminal cost


def stabilizing_terminal_cost(psi: StateSpace, p) -> np.ndarray:
    """Stabilizing solution of the filter Riccati equation for psi and middle matrix p."""
    p = np.asarray(p, dtype=float)
    if psi.n == 0:
        return np.zeros((0, 0))
    q = -psi.c.T @ p @ psi.c
    s = -psi.c.T @ p @ psi.d
    r = psi.d.T @ p @ psi.d
    return matops.solve_are_stabilizing(psi.a, psi.b, q, s, r)


def terminal_riccati_data(psi: StateSpace, p):
    """(a, b, q, s, r) of the filter Riccati equation, for residual checks."""
    p = np.asarray(p, dtype=float)
    return psi.a, psi.b, -psi.c.T @ p @ psi.c, -psi.c.T @ p @ psi.d, psi.d.T @ p @ psi.d


@dataclass(frozen=True)
class TerminalComparison:
    literal_min_eig: float  # lambda_min(P0 kron K - Z_are)
    k_gap_min_eig: float  # lambda_min(K - K_are) at basis level
    k_are: np.ndarray
    scale: float


def compare_terminal_cost(psi_basis: StateSpace, p0, m_val, k_val) -> TerminalComparison:
    """Compare an LMI terminal cost P0 kron K with the Riccati solution."""
    p0 = np.asarray(p0, float)
    k_are = stabilizing_terminal_cost(psi_basis, m_val)
    z_are = stabilizing_terminal_cost(diag_augment([psi_basis, psi_basis]), np.kron(p0, m_val))
    lit = matops.min_eig(np.kron(p0, k_val) - z_are)
    gap = matops.min_eig(k_val - k_are)
    scale = 1.0 + max(np.max(np.abs(k_val)), np.max(np.abs(k_are)))
    return TerminalComparison(lit, gap, k_are, scale)
