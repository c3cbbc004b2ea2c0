"""Dense primal-dual interior-point solver for :class:`~iqcrobust.lmi.LmiProblem`.

Problems are reduced to the form

    minimize  c^T x   subject to   F0_j + sum_i x_i F_j[i]  >= 0   (all j)

with dual  maximize -sum_j <F0_j, Z_j>  s.t.  sum_j <F_j[i], Z_j> = c_i, Z_j >= 0.
The iteration is an infeasible-start path-following method with
Nesterov-Todd scaling and Mehrotra's predictor-corrector.

Phase I minimizes a uniform shift t with every block + t I >= 0 and t >= -1.
Phase II minimizes the problem objective from the phase-I point.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from . import matops

EPS_DECIDE = 1e-9
MAX_ITER = 200
SHIFT_CAP = 1.0
EXTERNAL_RADIUS = 1e6


class SolverError(RuntimeError):
    pass


@dataclass
class SolveOutcome:
    status: str
    assignment: dict
    theta: np.ndarray
    phase1_t: float | None = None
    gap: float = np.nan
    iterations: int = 0
    objective: float | None = None
    certificate_residual: float | None = None
    message: str = ""
    solve_ms: float = 0.0
    diagnostics: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status in ("strictly_feasible", "objective_optimal")


@dataclass
class _CoreResult:
    status: str  # optimal | stalled | unbounded | max_iter | early
    x: np.ndarray
    z: list
    iterations: int
    gap: float
    pres: float
    dres: float


# reduction of an LmiProblem to the standard form


@dataclass
class Reduced:
    c: np.ndarray
    c0: float
    blocks: list
    theta0: np.ndarray
    basis: np.ndarray
    names: list

    def theta(self, x):
        return self.theta0 + self.basis @ x


def reduce_problem(prob) -> Reduced:
    """Eliminate equality constraints and tighten strict blocks by epsilon."""
    c, blocks, eq = prob.standard_form()
    p = len(c)
    theta0, basis = np.zeros(p), np.eye(p)
    if eq is not None:
        a, b = eq
        theta0, *_ = np.linalg.lstsq(a, b, rcond=None)
        if np.linalg.norm(a @ theta0 - b) > 1e-9 * (1 + np.linalg.norm(b)):
            raise SolverError("equality constraints are inconsistent")
        _, sv, vt = np.linalg.svd(a)
        rank = int(np.sum(sv > 1e-10 * (sv[0] if sv.size else 1.0)))
        basis = vt[rank:].T
    red_blocks = []
    for f0, f in blocks:
        f0r = f0 + np.tensordot(theta0, f, axes=1)
        fr = np.tensordot(basis.T, f, axes=1)
        red_blocks.append((matops.sym(f0r), fr))
    return Reduced(basis.T @ c, float(c @ theta0), red_blocks, theta0, basis, [b.name for b in prob.blocks])


# reference interior-point core


def _apply(x, blocks):
    return [f0 + np.tensordot(x, f, axes=1) for f0, f in blocks]


def _adjoint(zs, blocks, p):
    out = np.zeros(p)
    for z, (_, f) in zip(zs, blocks):
        out += np.einsum("pij,ij->p", f, z)
    return out


def _nt_scaling(s, z):
    """R, R^{-1}, lambda with R^{-1} S R^{-T} = R^T Z R = diag(lambda)."""
    ls = np.linalg.cholesky(s)
    lz = np.linalg.cholesky(z)
    u, sig, vt = np.linalg.svd(lz.T @ ls)
    r = ls @ vt.T / np.sqrt(sig)
    rinv = (u.T @ lz.T) / np.sqrt(sig)[:, None]
    return r, rinv, sig


def _jordan_solve(lam, b):
    """Solve lam o u = b for symmetric u (lam diagonal)."""
    return 2.0 * b / (lam[:, None] + lam[None, :])


def _jordan(a, b):
    return 0.5 * (a @ b + b @ a)


def _max_step(lam, d):
    """Largest alpha with diag(lam) + alpha d >= 0."""
    isq = 1.0 / np.sqrt(lam)
    m = matops.sym(isq[:, None] * d * isq[None, :])
    lmin = np.linalg.eigvalsh(m)[0]
    return np.inf if lmin >= 0 else -1.0 / lmin


def _shift_pd(mats, floor=0.0):
    """Add a common multiple of I so that every matrix is positive definite
    with smallest eigenvalue at least ``floor``."""
    lmin = min(matops.min_eig(m) for m in mats)
    if lmin > max(floor, 1e-8 * max(1.0, max(np.linalg.norm(m) for m in mats))):
        return mats
    shift = max(1.0, floor) - min(lmin, 0.0)
    return [m + shift * np.eye(m.shape[0]) for m in mats]


def _is_chol(m) -> bool:
    try:
        np.linalg.cholesky(m)
        return True
    except np.linalg.LinAlgError:
        return False


def _normal_solve(r, rhs):
    """Solve R^T R x = rhs for an upper-triangular R, least squares if singular."""
    d = np.abs(np.diag(r))
    if d.min() > 1e-14 * d.max():
        y = sla.solve_triangular(r, rhs, trans="T", check_finite=False)
        return sla.solve_triangular(r, y, check_finite=False)
    return np.linalg.lstsq(r.T @ r, rhs, rcond=1e-14)[0]


def interior_point(c, blocks, x0=None, early_stop=None, dual_stop=None, max_iter=MAX_ITER,
                   feastol=1e-9, gaptol=1e-9, min_start=0.0, log=None):
    """Solve min c^T x s.t. F0_j + sum x_i F_j[i] >= 0. Returns a _CoreResult.

    ``early_stop(x)`` ends the run at a primal feasible x; ``dual_stop`` is a
    threshold on the dual objective that ends the run once a dual feasible
    point certifies the optimum lies above it.
    """
    c = np.asarray(c, dtype=float)
    p = len(c)
    nu = float(sum(f0.shape[0] for f0, _ in blocks))
    f0norm = 1.0 + max(np.linalg.norm(f0) for f0, _ in blocks)
    cnorm = 1.0 + np.linalg.norm(c)
    gram = sum(np.einsum("pij,qij->pq", f, f) for _, f in blocks)

    if x0 is None:
        rhs = -_adjoint([f0 for f0, _ in blocks], blocks, p)
        x = np.linalg.lstsq(gram, rhs, rcond=None)[0] if p else np.zeros(0)
    else:
        x = np.asarray(x0, dtype=float).copy()
    s = _shift_pd([matops.sym(m) for m in _apply(x, blocks)], min_start)
    y = np.linalg.lstsq(gram, c, rcond=None)[0] if p else np.zeros(0)
    z = _shift_pd([matops.sym(np.tensordot(y, f, axes=1)) for _, f in blocks], min_start)
    xnorm0 = 1.0 + np.linalg.norm(x)

    best, best_merit, since_best = None, np.inf, 0
    rp0 = [a - b for a, b in zip(_apply(x, blocks), s)]
    shrink = 1.0
    it = 0
    pres = dres = gap = np.inf
    status = "failed"
    for it in range(1, max_iter + 1):
        fx = _apply(x, blocks)
        rp = [a - b for a, b in zip(fx, s)]
        rd = c - _adjoint(z, blocks, p)
        gap = sum(float(np.sum(a * b)) for a, b in zip(s, z))
        pobj = float(c @ x)
        dobj = -sum(float(np.sum(f0 * zi)) for (f0, _), zi in zip(blocks, z))
        pres = max(np.linalg.norm(r) for r in rp) / f0norm
        dres = np.linalg.norm(rd) / cnorm
        relgap = gap / (1.0 + min(abs(pobj), abs(dobj)))
        mu = gap / nu
        if early_stop is not None and pres <= feastol and early_stop(x):
            return _CoreResult("early", x, z, it, gap, pres, dres)
        if dual_stop is not None and dres <= feastol and dobj > dual_stop:
            return _CoreResult("early_dual", x, z, it, gap, pres, dres)
        if pres <= feastol and dres <= feastol and relgap <= gaptol:
            return _CoreResult("optimal", x, z, it, gap, pres, dres)
        if pres <= feastol and np.linalg.norm(x) > 1e10 * xnorm0:
            return _CoreResult("unbounded", x, z, it, gap, pres, dres)
        merit = max(pres, dres, relgap)
        since_best = 0 if merit < 0.5 * best_merit else since_best + 1
        if merit < best_merit:
            best, best_merit = (x.copy(), [m.copy() for m in z], gap, pres, dres), merit
        # residuals that stop improving near the optimum only get worse
        if best_merit <= 1e-7 and since_best >= 8:
            break

        try:
            scal = [_nt_scaling(si, zi) for si, zi in zip(s, z)]
        except np.linalg.LinAlgError:
            break
        ft = [np.matmul(np.matmul(rinv, f), rinv.T) for (_, rinv, _), (_, f) in zip(scal, blocks)]
        # the Newton matrix is A^T A for the stacked scaled constraints; a QR
        # factor of A avoids squaring its condition number
        qr_r = sla.qr(np.vstack([a.reshape(p, -1).T for a in ft]), mode="r", check_finite=False)[0][:p] if p else None
        rpt = [rinv @ r @ rinv.T for (_, rinv, _), r in zip(scal, rp)]

        def direction(bs):
            u = [_jordan_solve(lam, b) for (_, _, lam), b in zip(scal, bs)]
            rhs = sum(np.einsum("pij,ij->p", a, ui - ri) for a, ui, ri in zip(ft, u, rpt)) - rd
            dx = _normal_solve(qr_r, rhs) if p else np.zeros(0)
            ds = [np.tensordot(dx, a, axes=1) + ri for a, ri in zip(ft, rpt)]
            dz = [ui - dsi for ui, dsi in zip(u, ds)]
            return dx, ds, dz

        def steps(ds, dz):
            ap = min(_max_step(lam, d) for (_, _, lam), d in zip(scal, ds))
            ad = min(_max_step(lam, d) for (_, _, lam), d in zip(scal, dz))
            return min(1.0, ap), min(1.0, ad)

        lam2 = [np.diag(lam * lam) for _, _, lam in scal]
        dx_a, ds_a, dz_a = direction([-m for m in lam2])
        ap, ad = steps(ds_a, dz_a)
        mu_a = sum(
            float(np.sum((np.diag(lam) + ap * a) * (np.diag(lam) + ad * b)))
            for (_, _, lam), a, b in zip(scal, ds_a, dz_a)
        ) / nu
        sigma = min(1.0, max(0.0, mu_a / mu)) ** 3 if mu > 0 else 0.0
        bs = [
            sigma * mu * np.eye(len(lam)) - l2 - _jordan(a, b)
            for (_, _, lam), l2, a, b in zip(scal, lam2, ds_a, dz_a)
        ]
        dx, ds, dz = direction(bs)
        ap, ad = steps(ds, dz)
        ap, ad = min(1.0, 0.99 * ap), min(1.0, 0.99 * ad)
        if log is not None:
            log.append((it, pobj, pres, dres, gap, sigma, ap, ad))
        if max(ap, ad) < 1e-12:
            break
        # S is rebuilt from x so the primal residual stays exact; when roundoff
        # near the boundary costs definiteness the primal step is shortened
        for _ in range(30):
            s_x = [matops.sym(f - shrink * (1.0 - ap) * r0) for f, r0 in zip(_apply(x + ap * dx, blocks), rp0)]
            if all(_is_chol(m) for m in s_x):
                break
            ap *= 0.5
        else:
            break
        x = x + ap * dx
        shrink *= 1.0 - ap
        s = s_x
        # roundoff in the back-transform leaks into the dual residual; a
        # correction Z F(w) Z removes it, with the dual step shortened if the
        # corrected Z loses definiteness
        dz_orig = [rinv.T @ d @ rinv for (_, rinv, _), d in zip(scal, dz)]
        for _ in range(30):
            z_try = [matops.sym(zi + ad * d) for zi, d in zip(z, dz_orig)]
            for _ in range(2 if p else 0):
                err = (1.0 - ad) * rd - (c - _adjoint(z_try, blocks, p))
                zfz = [np.matmul(np.matmul(zi, f), zi) for zi, (_, f) in zip(z_try, blocks)]
                hz = sum(np.einsum("pij,qij->pq", f, m) for (_, f), m in zip(blocks, zfz))
                w = np.linalg.lstsq(hz, -err, rcond=1e-15)[0]
                z_try = [matops.sym(zi + np.tensordot(w, m, axes=1)) for zi, m in zip(z_try, zfz)]
            if all(_is_chol(m) for m in z_try):
                break
            ad *= 0.5
        else:
            break
        z = z_try
    else:
        status = "max_iter"
    if best is not None and best_merit <= 1e-7:
        bx, bz, bgap, bp, bd = best
        return _CoreResult("stalled", bx, bz, it, bgap, bp, bd)
    return _CoreResult(status, x, z, it, gap, pres, dres)


# external route (cvxopt) behind the same core interface


def external_point(c, blocks, x0=None, early_stop=None, dual_stop=None, max_iter=MAX_ITER, feastol=1e-9,
                   gaptol=1e-9):
    import cvxopt
    from cvxopt import solvers

    p = len(c)
    # cvxopt breaks down on unbounded optimal faces; a large ball keeps them compact
    radius = EXTERNAL_RADIUS * (1.0 + (np.linalg.norm(x0) if x0 is not None else 0.0))
    ball = np.zeros((p, p + 1, p + 1))
    for i in range(p):
        ball[i, 0, i + 1] = ball[i, i + 1, 0] = 1.0
    blocks = list(blocks) + [(radius * np.eye(p + 1), ball)]
    gs = [cvxopt.matrix(-f.reshape(p, -1).T.copy()) for _, f in blocks]
    hs = [cvxopt.matrix(f0.copy()) for f0, _ in blocks]
    sol = None
    # the default KKT solver divides by zero on some degenerate faces; LDL copes
    for kkt, tol in ((None, 1e-9), (None, 1e-7), ("ldl", 1e-9), ("ldl", 1e-7), (None, 1e-6), ("ldl", 1e-6)):
        opts = {"show_progress": False, "maxiters": max_iter, "abstol": tol, "reltol": tol, "feastol": tol}
        try:
            trial = solvers.sdp(cvxopt.matrix(np.asarray(c, float)), Gs=gs, hs=hs, kktsolver=kkt, options=opts)
        except (ZeroDivisionError, ArithmeticError, ValueError):
            continue
        sol = trial
        if trial["status"] == "optimal":
            break
    if sol is None:
        return _CoreResult("failed", np.zeros(p), [], 0, np.nan, np.inf, np.inf)
    x = np.array(sol["x"]).ravel() if sol["x"] is not None else np.zeros(p)
    zs = [np.array(zz) for zz in sol["zs"]][:-1] if sol["zs"] is not None else []
    status = {"optimal": "optimal", "unknown": "stalled"}.get(sol["status"], sol["status"])
    if status == "dual infeasible":
        status = "unbounded"
    return _CoreResult(status, x, zs, int(sol["iterations"]), float(sol["gap"] or np.nan),
                       float(sol["primal infeasibility"] or 0.0), float(sol["dual infeasibility"] or 0.0))


CORES = {"reference": interior_point, "external": external_point}


# phases


def _phase1_blocks(blocks):
    out = []
    for f0, f in blocks:
        n = f0.shape[0]
        ft = np.concatenate([f, np.eye(n)[None]], axis=0)
        out.append((f0, ft))
    p = blocks[0][1].shape[0] if blocks else 0
    cap = np.zeros((p + 1, 1, 1))
    cap[-1] = 1.0
    out.append((np.array([[SHIFT_CAP]]), cap))
    return out


def _phase1(red: Reduced, core, x0=None):
    p = len(red.c)
    blocks = red.blocks
    if not blocks:
        return 0.0 - SHIFT_CAP, np.zeros(p), 0, None, "optimal", 0.0
    if x0 is None:
        x0 = np.zeros(p)
    t0 = max(0.0, -min(matops.min_eig(m) for m in _apply(x0, blocks))) + 1.0
    pb = _phase1_blocks(blocks)
    c = np.zeros(p + 1)
    c[-1] = 1.0
    stop = lambda xt: xt[-1] <= -0.5 * SHIFT_CAP  # noqa: E731
    res = core(c, pb, x0=np.append(x0, t0), early_stop=stop, dual_stop=EPS_DECIDE)
    x, t = res.x[:-1], float(res.x[-1])
    if res.status == "early_dual":
        # a dual feasible point bounds the optimal shift from below
        t = -sum(float(np.sum(f0 * zj)) for (f0, _), zj in zip(pb, res.z))
    # the exact shift needed by the returned point, independent of the solver
    t_true = -min(matops.min_eig(m) for m in _apply(x, blocks))
    cert_res = None
    if res.z:
        zs = res.z[: len(blocks)]
        tr = sum(np.trace(zj) for zj in zs)
        if tr > 0:
            cert_res = float(np.linalg.norm(_adjoint(zs, blocks, p)) / tr)
    if res.status in ("optimal", "early", "stalled"):
        t = min(t, t_true)
    elif res.status != "early_dual":
        t = t_true
    return t, x, res.iterations, cert_res, res.status, res.gap


def solve_feasibility(prob, solver: str = "reference") -> SolveOutcome:
    """Phase I: decide strict feasibility of every block (strict ones tightened by epsilon)."""
    start = time.perf_counter()
    core = CORES[solver]
    red = reduce_problem(prob)
    t, x, iters, cert_res, core_status, gap = _phase1(red, core)
    theta = red.theta(x)
    if t < -EPS_DECIDE:
        status = "strictly_feasible"
        msg = ""
    elif t > EPS_DECIDE and cert_res is not None and cert_res <= 1e-6:
        status = "infeasible"
        msg = f"dual certificate residual {cert_res:.2e}"
    else:
        status = "numerical_failure"
        msg = f"phase I ended at t={t:.3e} ({core_status}); certificate residual {cert_res}"
    return SolveOutcome(
        status, prob.assignment(theta), theta, phase1_t=t, gap=gap, iterations=iters,
        certificate_residual=cert_res, message=msg,
        solve_ms=1e3 * (time.perf_counter() - start),
        diagnostics={"core_status": core_status},
    )


def solve_min(prob, solver: str = "reference", start: SolveOutcome | None = None) -> SolveOutcome:
    """Phase II: minimize the problem objective; runs phase I first unless given."""
    t0 = time.perf_counter()
    if prob.objective is None:
        raise SolverError("problem has no objective")
    core = CORES[solver]
    red = reduce_problem(prob)
    if start is None:
        start = solve_feasibility(prob, solver)
    if start.status != "strictly_feasible":
        start.solve_ms = 1e3 * (time.perf_counter() - t0)
        return start
    x0 = np.linalg.lstsq(red.basis, start.theta - red.theta0, rcond=None)[0]
    res = core(red.c, red.blocks, x0=x0)
    theta = red.theta(res.x)
    obj = float(red.c @ res.x + red.c0)
    iters = start.iterations + res.iterations
    if res.status in ("optimal", "stalled"):
        # reject a final point that left the feasible set
        worst = min(matops.min_eig(m) for m in _apply(res.x, red.blocks))
        if worst >= -1e-8 * prob.scale:
            return SolveOutcome(
                "objective_optimal", prob.assignment(theta), theta, start.phase1_t, res.gap, iters, obj,
                message=res.status, solve_ms=1e3 * (time.perf_counter() - t0),
                diagnostics={"pres": res.pres, "dres": res.dres},
            )
    status = "unbounded" if res.status == "unbounded" else "numerical_failure"
    return SolveOutcome(
        status, prob.assignment(theta), theta, start.phase1_t, res.gap, iters, obj,
        message=f"phase II ended with {res.status}", solve_ms=1e3 * (time.perf_counter() - t0),
    )


# SDPA sparse format


def write_sdpa(prob_or_reduced, path, comment: str = "") -> Reduced:
    """Write the reduced problem; SDPA reads  min c^T x  s.t.  sum F_i x_i - F_0 >= 0."""
    red = prob_or_reduced if isinstance(prob_or_reduced, Reduced) else reduce_problem(prob_or_reduced)
    p = len(red.c)
    lines = [f'"{comment} offset={red.c0!r}']
    lines.append(str(p))
    lines.append(str(len(red.blocks)))
    lines.append(" ".join(str(f0.shape[0]) for f0, _ in red.blocks))
    lines.append(" ".join(repr(float(v)) for v in red.c))
    for bno, (f0, f) in enumerate(red.blocks, start=1):
        mats = [-f0] + list(f)
        for mno, mat in enumerate(mats):
            ii, jj = np.nonzero(np.triu(mat))
            for i, j in zip(ii, jj):
                lines.append(f"{mno} {bno} {i + 1} {j + 1} {float(mat[i, j])!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return red


def read_sdpa(path):
    """Parse a sparse SDPA file into (c, blocks, offset) in this module's form."""
    offset = 0.0
    body = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line[0] in '"*':
                if "offset=" in line:
                    offset = float(line.split("offset=")[1].split()[0])
                continue
            body.append(line.replace(",", " ").replace("{", " ").replace("}", " ").replace("(", " ").replace(")", " "))
    p = int(body[0].split()[0])
    nblocks = int(body[1].split()[0])
    sizes = [abs(int(v)) for v in body[2].split()[:nblocks]]
    c = np.array([float(v) for v in body[3].split()[:p]])
    mats = [[np.zeros((n, n)) for n in sizes] for _ in range(p + 1)]
    for line in body[4:]:
        mno, bno, i, j, val = line.split()[:5]
        mno, bno, i, j = int(mno), int(bno) - 1, int(i) - 1, int(j) - 1
        mats[mno][bno][i, j] = float(val)
        mats[mno][bno][j, i] = float(val)
    blocks = []
    for b in range(nblocks):
        f0 = -mats[0][b]
        f = np.array([mats[i][b] for i in range(1, p + 1)]).reshape(p, sizes[b], sizes[b])
        blocks.append((f0, f))
    return c, blocks, offset


def solve_standard(c, blocks, solver: str = "external"):
    """Minimize a standard-form problem directly (used on parsed SDPA files)."""
    core = CORES[solver]
    res = core(np.asarray(c, float), blocks)
    return res, float(np.asarray(c) @ res.x)
