"""Sweeps and Monte-Carlo suites behind the figure subcommands and the self-test.

Everything here is deterministic given the seed. Sweep points run through
``parallel_map``, which keeps input order so merged output does not depend on
scheduling.
"""

from __future__ import annotations

import csv
import io
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path

import numpy as np

from . import analysis, matops, multiplier as mu, sdp, sim, systems
from .config import PointResult, build_multiplier, rebuild_problem, recipe_for, run_point
from .lmi import stability_block_from_performance
from .lti import StateSpace

FIG4_ALPHAS = tuple(float(v) for v in np.linspace(5.0, 50.0, 10))
FIG5_ALPHAS = (0.90, 0.92, 0.94, 0.96, 0.98, 1.00)

EX1_COLUMNS = {
    "bound_static": [{"type": "sector", "l": 1.0, "m": 0.0}],
    "bound_dynamic": [{"type": "zames_falb", "a": 10.0}],
    "bound_dynamic_a100": [{"type": "zames_falb", "a": 100.0}],
}
ERS_COLUMNS = {
    "bound_static": [{"type": "static_scaled", "p": systems.UNIT_DISK.tolist()}],
    "bound_dynamic": [{"type": "repeated_dynamic", "basis": "ers"}],
    "bound_M_pos_K0": [{"type": "repeated_dynamic", "basis": "ers", "restricted": True}],
}
EXAMPLE_COLUMNS = {"ex1": EX1_COLUMNS, "ers": ERS_COLUMNS}


def column_config(example: str, multipliers: list) -> dict:
    return {
        "schema": 1,
        "plant": {"builtin": example},
        "multipliers": multipliers,
        "performance": {"kind": "amplitude"},
    }


def parallel_map(fn, items, workers: int = 1) -> list:
    """Order-preserving map, in worker processes when ``workers > 1``."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# figure sweeps


@dataclass
class FigureTable:
    columns: list
    rows: list  # dicts keyed by column
    certificates: list = field(default_factory=list)
    margins: list = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.columns)
        for row in self.rows:
            writer.writerow([format_number(row[c]) for c in self.columns])
        return buf.getvalue()


def format_number(v) -> str:
    if v is None or (isinstance(v, float) and np.isnan(v)):
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".10g")
    return str(v)


def _figure_point(example: str, solver: str, alpha: float) -> tuple:
    row = {"alpha": alpha, "bound_nominal": systems.nominal_peak_bound(systems.BUILTIN[example](alpha))}
    certs = []
    for col, decls in EXAMPLE_COLUMNS[example].items():
        res = run_point(column_config(example, decls), alpha, solver)
        row[col] = res.bound if res.bound is not None else np.nan
        if res.certificate is not None:
            certs.append(res.certificate)
    return row, certs


def figure_table(example: str, alphas, solver: str = "reference", workers: int = 1) -> FigureTable:
    cols = ["alpha", "bound_nominal"] + list(EXAMPLE_COLUMNS[example])
    out = parallel_map(partial(_figure_point, example, solver), alphas, workers)
    table = FigureTable(cols, [r for r, _ in out])
    for _, certs in out:
        table.certificates += certs
    return table


def _ex1_stability(v: float) -> StateSpace:
    return systems.ex1(v).uncertainty_channel()


@dataclass
class MarginRow:
    name: str
    margin: analysis.MarginResult
    certificate: dict | None


def _margin_for(name_decls, lo: float, hi: float, tol: float, solver: str) -> MarginRow:
    name, decls = name_decls
    cfg = {"schema": 1, "plant": {"builtin": "ex1"}, "multipliers": decls}
    certs = {}

    def feasible(v):
        res = run_point(cfg, v, solver)
        certs[float(v)] = res.certificate
        return res.verdict == "robustly_stable"

    margin = analysis.stability_margin(_ex1_stability, build_multiplier(decls), lo, hi, tol, solver, feasible)
    return MarginRow(name, margin, certs.get(margin.value))


def ex1_margins(lo: float = 5.0, hi: float = 50.0, tol: float = 1e-3, solver: str = "reference",
                workers: int = 1) -> list:
    items = [(name.replace("bound_", ""), decls) for name, decls in EX1_COLUMNS.items()]
    return parallel_map(partial(_margin_for, lo=lo, hi=hi, tol=tol, solver=solver), items, workers)


def margins_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["multiplier", "margin", "saturated", "evaluations"])
    for r in rows:
        writer.writerow([r.name, format_number(r.margin.value), format_number(r.margin.saturated),
                         len(r.margin.evaluations)])
    return buf.getvalue()


def fig4(solver: str = "reference", workers: int = 1, alphas=FIG4_ALPHAS) -> FigureTable:
    table = figure_table("ex1", alphas, solver, workers)
    table.margins = ex1_margins(solver=solver, workers=workers)
    table.certificates += [m.certificate for m in table.margins if m.certificate is not None]
    return table


def fig5(solver: str = "reference", workers: int = 1, alphas=FIG5_ALPHAS) -> FigureTable:
    return figure_table("ers", alphas, solver, workers)


def ordering_violations(table: FigureTable, chain: list, rel: float = 1e-6) -> list:
    """Rows where chain[i] <= chain[i+1] fails by more than ``rel`` relative, among fully feasible rows."""
    bad = []
    for row in table.rows:
        vals = [row[c] for c in chain]
        if any(np.isnan(v) for v in vals):
            continue
        for (ca, va), (cb, vb) in zip(zip(chain, vals), zip(chain[1:], vals[1:])):
            if va > vb + rel * max(abs(vb), 1.0):
                bad.append((row["alpha"], ca, va, cb, vb))
    return bad


# KYP batch


def random_kyp_instance(rng, max_states: int = 6):
    """Random stable system (n <= max_states) with a random supply matrix.

    The lower-right block of P is shifted by a random amount so that both
    verdicts of the frequency test occur with comparable frequency.
    """
    n = int(rng.integers(1, max_states + 1))
    m = int(rng.integers(1, 4))
    k = int(rng.integers(1, 4))
    a = rng.standard_normal((n, n))
    a -= (np.max(np.linalg.eigvals(a).real) + rng.uniform(0.1, 1.0)) * np.eye(n)
    sys = StateSpace(a, rng.standard_normal((n, m)), rng.standard_normal((k, n)), rng.standard_normal((k, m)))
    q = rng.standard_normal((k + m, k + m))
    p = q + q.T
    p[k:, k:] -= rng.uniform(0.0, 8.0) * np.eye(m)
    return sys, p


@dataclass
class KypSummary:
    reports: list
    seconds: float

    @property
    def decided(self) -> list:
        return [r for r in self.reports if not r.borderline]

    @property
    def agreement(self) -> float:
        dec = self.decided
        return sum(r.agree for r in dec) / len(dec) if dec else 1.0

    @property
    def passed(self) -> bool:
        return all(r.agree for r in self.decided)


def kyp_batch(seed: int = 0, count: int = 100, solver: str = "reference") -> KypSummary:
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    reports = [analysis.kyp_equivalence(*random_kyp_instance(rng), strict=True, solver=solver) for _ in range(count)]
    return KypSummary(reports, time.perf_counter() - t0)


# terminal-cost IQC Monte-Carlo


@dataclass
class IqcSummary:
    worst_relative_slack: float  # min over runs of slack / energy
    violations: int  # runs with slack < -tol * energy
    control_violations: int  # same count for the over-gain negative control
    runs: int
    seconds: float
    tol: float
    certificate: dict | None = field(default=None, repr=False)

    @property
    def passed(self) -> bool:
        return self.violations == 0 and self.control_violations > 0


def ers_terminal_certificate(alpha: float = 0.94, solver: str = "reference"):
    """(mclass, result) of the free-K dynamic performance solve for example ers."""
    mclass = mu.repeated_dynamic(systems.ers_basis(), systems.UNIT_DISK)
    res = analysis.robust_performance(systems.ers(alpha), mclass, solver=solver)
    if not res.ok:
        raise RuntimeError(f"no certificate for ers at alpha={alpha}")
    return mclass, res


def _as_certificate(cfg: dict, alpha: float, assignment: dict) -> dict:
    return {"recipe": recipe_for(cfg, alpha), "assignment": {k: np.asarray(v).tolist() for k, v in assignment.items()}}


def iqc_monte_carlo(seed: int = 0, deltas: int = 50, inputs: int = 20, horizon: float = 30.0,
                    tol: float = 1e-5, alpha: float = 0.94, control_gain: float = 1.2,
                    control_deltas: int = 10, solver: str = "reference") -> IqcSummary:
    """Check the terminal-cost IQC of LMI-produced (M, K) on random admissible deltas."""
    t0 = time.perf_counter()
    mclass, res = ers_terminal_certificate(alpha, solver)
    p, z = mclass.evaluate(mu.values_for(mclass, res.assignment))
    rng = np.random.default_rng(seed)

    def count(batch):
        u = sim.make_unit_energy_disturbance(rng.integers(2**31), horizon=horizon, runs=len(batch) * inputs)
        traj = sim.drive_uncertainty([d for d in batch for _ in range(inputs)], u, mclass.psi, horizon)
        slack, _, energy = sim.verify_iqc(traj, p, z)
        return slack / energy, int(np.sum(slack < -tol * energy))

    good = [sim.random_stable_delta(rng) for _ in range(deltas)]
    rel, bad = count(good)
    over = [sim.random_stable_delta(rng, gain=control_gain) for _ in range(control_deltas)]
    _, ctrl = count(over)
    cert = _as_certificate(column_config("ers", ERS_COLUMNS["bound_dynamic"]), alpha, res.assignment)
    return IqcSummary(float(np.min(rel)), bad, ctrl, deltas * inputs, time.perf_counter() - t0, tol, cert)


# bound dominance


@dataclass
class DominancePoint:
    example: str
    alpha: float
    bound: float
    column: str
    peak: float
    runs: int
    certificate: dict | None = field(default=None, repr=False)

    @property
    def ratio(self) -> float:
        return self.peak / self.bound

    @property
    def passed(self) -> bool:
        return self.peak <= self.bound * (1 + 1e-3)


DOMINANCE_ALPHAS = {"ex1": (5.0, 10.0, 15.0, 20.0, 30.0), "ers": (0.90, 0.92, 0.94, 0.96, 0.98)}


def _disturbances(plant4, seed: int, runs: int, horizon: float) -> sim.Signal:
    """Random unit-energy signals plus the nominal worst case in run 0."""
    worst = sim.worst_case_disturbance(plant4.a, plant4.bd, plant4.ce, min(20.0, horizon / 2))
    rest = sim.make_unit_energy_disturbance(seed, horizon=horizon, runs=runs - 1)
    return sim.stack_signals([worst, rest])


def dominance_point(example: str, alpha: float, runs: int = 200, seed: int = 0, horizon: float = sim.HORIZON,
                    solver: str = "reference") -> DominancePoint:
    """Monte-Carlo peak of e against the tightest certified bound at one sweep value."""
    bounds, certs = {}, {}
    for col, decls in EXAMPLE_COLUMNS[example].items():
        res = run_point(column_config(example, decls), alpha, solver)
        if res.bound is not None:
            bounds[col], certs[col] = res.bound, res.certificate
    if not bounds:
        raise RuntimeError(f"no certified bound for {example} at alpha={alpha}")
    column = min(bounds, key=bounds.get)
    plant4 = systems.BUILTIN[example](alpha)
    rng = np.random.default_rng([seed, int(round(1e6 * alpha))])
    d = _disturbances(plant4, int(rng.integers(2**31)), runs, horizon)
    if example == "ex1":
        unc = sim.stack_maps([sim.saturation()] + [sim.random_sector_map(rng) for _ in range(runs - 1)])
    else:
        unc = [sim.random_stable_delta(rng) for _ in range(runs)]
    traj = sim.simulate_lure(plant4, unc, d, horizon=horizon)
    return DominancePoint(example, alpha, bounds[column], column, float(np.max(sim.peak_output(traj))), runs,
                          certs[column])


def bound_dominance(seed: int = 0, runs: int = 200, points: dict | None = None, solver: str = "reference",
                    workers: int = 1) -> list:
    points = points or DOMINANCE_ALPHAS
    items = [(ex, a) for ex, alphas in points.items() for a in alphas]
    fn = partial(_dominance_item, runs=runs, seed=seed, solver=solver)
    return parallel_map(fn, items, workers)


def _dominance_item(item, runs, seed, solver):
    return dominance_point(item[0], item[1], runs, seed, solver=solver)


# Riccati terminal cost


def random_are_instance(rng, max_states: int = 3, tries: int = 100):
    """Random stable basis psi = col(1, psi_2) and M with psi^* M psi > 0 on the axis."""
    grid = np.concatenate([[0.0], np.logspace(-3, 3, 300)])
    for _ in range(tries):
        n = int(rng.integers(1, max_states + 1))
        num = rng.standard_normal(n + 1)
        den = np.poly(-rng.uniform(0.2, 5.0, n))
        second = StateSpace.from_tf(num, den)
        psi = StateSpace(second.a, second.b, np.vstack([np.zeros((1, n)), second.c]),
                         np.vstack([[1.0], second.d]))
        g = rng.standard_normal((2, 2))
        m = g @ g.T * rng.uniform(0.1, 2.0) - rng.uniform(0.0, 1.0) * np.diag([0.0, 1.0])
        resp = np.array([np.linalg.solve(1j * w * np.eye(n) - psi.a, psi.b) for w in grid])[:, :, 0]
        vals = resp @ psi.c.T + psi.d[:, 0]
        herm = np.einsum("ti,ij,tj->t", vals.conj(), m, vals).real
        far = float(psi.d[:, 0] @ m @ psi.d[:, 0])
        if min(herm.min(), far) > 1e-3:
            return psi, m
    raise RuntimeError("no admissible Riccati instance found")


@dataclass
class AreSummary:
    max_relative_residual: float
    all_hurwitz: bool
    count: int

    @property
    def passed(self) -> bool:
        return self.all_hurwitz and self.max_relative_residual <= 1e-8


def are_suite(seed: int = 0, count: int = 50) -> AreSummary:
    rng = np.random.default_rng(seed)
    worst, hurwitz = 0.0, True
    for _ in range(count):
        psi, m = random_are_instance(rng)
        k = analysis.stabilizing_terminal_cost(psi, m)
        a, b, q, s, r = analysis.terminal_riccati_data(psi, m)
        res = matops.are_residual(a, b, q, s, r, k)
        scale = 1.0 + max(np.max(np.abs(q)), np.max(np.abs(k)))
        worst = max(worst, float(np.max(np.abs(res))) / scale)
        hurwitz &= bool(np.all(np.linalg.eigvals(matops.are_closed_loop(a, b, s, r, k)).real < 0))
    return AreSummary(worst, hurwitz, count)


def ers_terminal_comparisons(alphas=(0.90, 0.92, 0.94, 0.96, 0.98), solver: str = "reference") -> list:
    """(alpha, TerminalComparison) for near-optimal free-K solves of example ers."""
    out = []
    basis = systems.ers_basis()
    for alpha in alphas:
        mclass, res = ers_terminal_certificate(alpha, solver)
        vals = mu.values_for(mclass, res.assignment)
        out.append((alpha, analysis.compare_terminal_cost(basis, systems.UNIT_DISK, vals["M"], vals["K"])))
    return out


# certificate replay


@dataclass
class ReplayResult:
    recipe: dict
    blocks_ok: bool
    min_margin: float
    scale: float
    containment_ok: bool | None


def replay_certificate(cert: dict) -> ReplayResult:
    """Rebuild the LMI from the recipe and check every block by eigenvalues."""
    recipe = cert["recipe"]
    parts, plant4, mclass = rebuild_problem(recipe)
    prob = parts.problem
    theta = prob.theta_from_assignment({k: np.asarray(v, float) for k, v in cert["assignment"].items()})
    scale = prob.scale
    tol = 1e-8 * scale
    margins = [matops.min_eig(v) for v in prob.block_values(theta)]
    blocks_ok = bool(all(lam >= -tol for lam in margins))
    containment = None
    if "performance" in recipe:
        stab = stability_block_from_performance(plant4, mclass, prob.evaluate(parts.p, theta),
                                                prob.evaluate(parts.x, theta))
        containment = bool(matops.min_eig(stab) >= -tol)
    return ReplayResult(recipe, blocks_ok, min(margins, default=np.inf), scale, containment)


def replay_certificates(certs) -> list:
    return [replay_certificate(c) for c in certs]


# external cross-check on exported problems


@dataclass
class CrossCheck:
    label: str
    reference: float
    external: float

    @property
    def relative(self) -> float:
        return abs(self.external - self.reference) / max(abs(self.reference), 1e-12)


@dataclass
class Exported:
    label: str
    path: object
    reference_objective: float  # trace(Y) at the reference optimum
    recipe: dict


def export_sdpa(cfgs, out_dir, solver: str = "reference") -> list:
    """Write the performance problems of the given (label, config, alpha) triples as SDPA files.

    Only instances the reference solver certified are written.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for label, cfg, alpha in cfgs:
        res = run_point(cfg, alpha, solver)
        if res.bound is None:
            continue
        recipe = recipe_for(cfg, alpha)
        prob = rebuild_problem(recipe)[0].problem
        path = out_dir / f"{label}.dat-s"
        sdp.write_sdpa(prob, path, comment=label)
        written.append(Exported(label, path, res.bound**2, recipe))
    return written


def sweep_instances() -> list:
    """(label, config, alpha) for every column and point of both figure sweeps."""
    out = []
    for example, alphas in (("ex1", FIG4_ALPHAS), ("ers", FIG5_ALPHAS)):
        for col, decls in EXAMPLE_COLUMNS[example].items():
            for a in alphas:
                out.append((f"{example}_{col}_{a:g}", column_config(example, decls), a))
    return out


def cross_check(exported) -> list:
    """Solve each exported file with the external solver and compare trace(Y)."""
    out = []
    for item in exported:
        c, blocks, offset = sdp.read_sdpa(item.path)
        _, obj = sdp.solve_standard(c, blocks, "external")
        out.append(CrossCheck(item.label, item.reference_objective, obj + offset))
    return out


def results_csv(points: list) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    cols = ["alpha", "verdict", "bound", "margin_note", "solve_ms", "iterations"]
    writer.writerow(cols)
    for pt in points:
        row = pt.row() if isinstance(pt, PointResult) else pt
        writer.writerow([format_number(row[c]) for c in cols])
    return buf.getvalue()
