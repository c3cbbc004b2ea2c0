"""Structured LMI problems and the dissipation-LMI assemblers.

The modeling layer is deliberately small: a :class:`Var` is a structured
matrix variable parameterized by its free entries, an :class:`Affine` is a
constant matrix plus linear terms in those entries, and an
:class:`LmiProblem` collects affine blocks that must be positive
semidefinite (or positive definite, via the strictness margin).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import count

import numpy as np

from . import matops
from .lti import DimensionError, PartitionedPlant, StateSpace, is_hurwitz, series_filter_plant

_ids = count()


def _basis(kind: str, n: int) -> np.ndarray:
    if kind in ("symmetric", "psd"):
        mats = []
        for i in range(n):
            for j in range(i, n):
                e = np.zeros((n, n))
                e[i, j] = e[j, i] = 1.0
                mats.append(e)
    elif kind == "skew":
        mats = []
        for i in range(n):
            for j in range(i + 1, n):
                e = np.zeros((n, n))
                e[i, j], e[j, i] = 1.0, -1.0
                mats.append(e)
    elif kind == "diagonal":
        mats = []
        for i in range(n):
            e = np.zeros((n, n))
            e[i, i] = 1.0
            mats.append(e)
    elif kind in ("scalar", "nonneg"):
        if n != 1:
            raise ValueError("scalar variables are 1x1")
        mats = [np.ones((1, 1))]
    else:
        raise ValueError(f"unknown variable kind {kind!r}")
    if not mats:
        return np.zeros((0, n, n))
    return np.array(mats)


class Var:
    """Structured matrix variable: symmetric, skew, diagonal, scalar or nonneg."""

    def __init__(self, name: str, dim: int, kind: str = "symmetric"):
        self.name = name
        self.dim = dim
        self.kind = kind
        self.basis = _basis(kind, dim)
        self.uid = next(_ids)

    @property
    def nparams(self) -> int:
        return self.basis.shape[0]

    def matrix(self, params) -> np.ndarray:
        params = np.asarray(params, dtype=float)
        if self.nparams == 0:
            return np.zeros((self.dim, self.dim))
        return np.tensordot(params, self.basis, axes=1)

    def params_of(self, mat) -> np.ndarray:
        """Inverse of :meth:`matrix` (least squares on the basis)."""
        if self.nparams == 0:
            return np.zeros(0)
        flat = self.basis.reshape(self.nparams, -1).T
        sol, *_ = np.linalg.lstsq(flat, np.asarray(mat, float).ravel(), rcond=None)
        return sol

    def __repr__(self):
        return f"Var({self.name!r}, {self.dim}, {self.kind!r})"


class Affine:
    """Matrix-valued affine expression ``const + sum_v sum_i theta_{v,i} coef_{v,i}``."""

    __array_ufunc__ = None

    def __init__(self, const, terms=None):
        self.const = np.atleast_2d(np.asarray(const, dtype=float))
        self.terms: dict[Var, np.ndarray] = dict(terms or {})

    @classmethod
    def of(cls, x) -> "Affine":
        return x if isinstance(x, Affine) else cls(x)

    @classmethod
    def variable(cls, var: Var) -> "Affine":
        return cls(np.zeros((var.dim, var.dim)), {var: var.basis.copy()})

    @property
    def shape(self):
        return self.const.shape

    def _combine(self, other, sign):
        other = Affine.of(other)
        if other.shape != self.shape:
            raise DimensionError(f"shape mismatch {self.shape} vs {other.shape}")
        terms = dict(self.terms)
        for v, c in other.terms.items():
            terms[v] = terms[v] + sign * c if v in terms else sign * c
        return Affine(self.const + sign * other.const, terms)

    def __add__(self, other):
        return self._combine(other, 1.0)

    __radd__ = __add__

    def __sub__(self, other):
        return self._combine(other, -1.0)

    def __rsub__(self, other):
        return (-self)._combine(other, 1.0)

    def __neg__(self):
        return Affine(-self.const, {v: -c for v, c in self.terms.items()})

    def __mul__(self, s):
        s = float(s)
        return Affine(s * self.const, {v: s * c for v, c in self.terms.items()})

    __rmul__ = __mul__

    def __matmul__(self, m):
        m = np.atleast_2d(np.asarray(m, dtype=float))
        return Affine(self.const @ m, {v: c @ m for v, c in self.terms.items()})

    def __rmatmul__(self, m):
        m = np.atleast_2d(np.asarray(m, dtype=float))
        return Affine(m @ self.const, {v: m @ c for v, c in self.terms.items()})

    @property
    def T(self):
        return Affine(self.const.T, {v: c.transpose(0, 2, 1) for v, c in self.terms.items()})

    def __getitem__(self, idx):
        return Affine(self.const[idx], {v: c[(slice(None),) + _as_tuple(idx)] for v, c in self.terms.items()})

    def value(self, values: dict) -> np.ndarray:
        """Evaluate given a mapping Var -> parameter vector."""
        out = self.const.copy()
        for v, c in self.terms.items():
            out += np.tensordot(values[v], c, axes=1)
        return out

    def variables(self):
        return list(self.terms)


def _as_tuple(idx):
    return idx if isinstance(idx, tuple) else (idx,)


def zeros(rows: int, cols: int) -> Affine:
    return Affine(np.zeros((rows, cols)))


def bmat(rows) -> Affine:
    """Block matrix from a nested list of Affine/ndarray/None (None = zeros)."""
    heights = []
    widths = [None] * len(rows[0])
    for row in rows:
        h = None
        for j, blk in enumerate(row):
            if blk is None:
                continue
            shp = np.atleast_2d(blk).shape if not isinstance(blk, Affine) else blk.shape
            h = shp[0]
            widths[j] = shp[1]
        heights.append(h)
    if any(h is None for h in heights) or any(w is None for w in widths):
        raise DimensionError("cannot infer block sizes")
    out_rows = []
    for row, h in zip(rows, heights):
        out_rows.append([Affine.of(np.zeros((h, w))) if b is None else Affine.of(b) for b, w in zip(row, widths)])
    const = np.block([[b.const for b in row] for row in out_rows])
    variables = {v for row in out_rows for b in row for v in b.terms}
    terms = {}
    for v in variables:
        terms[v] = np.concatenate(
            [
                np.concatenate(
                    [b.terms.get(v, np.zeros((v.nparams,) + b.shape)) for b in row], axis=2
                )
                for row in out_rows
            ],
            axis=1,
        )
    return Affine(const, terms)


def blockdiag(blocks) -> Affine:
    blocks = [Affine.of(b) for b in blocks]
    n = len(blocks)
    rows = []
    for i, bi in enumerate(blocks):
        row = []
        for j, bj in enumerate(blocks):
            row.append(bi if i == j else np.zeros((bi.shape[0], bj.shape[1])))
        rows.append(row)
    if n == 0:
        return Affine(np.zeros((0, 0)))
    return bmat(rows)


def kron_const(a, expr) -> Affine:
    """a (constant) Kronecker expr (affine)."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    expr = Affine.of(expr)
    r, c = expr.shape
    shape = (a.shape[0] * r, a.shape[1] * c)
    return Affine(
        np.kron(a, expr.const),
        {
            v: np.array([np.kron(a, ci) for ci in coef]).reshape((coef.shape[0],) + shape)
            for v, coef in expr.terms.items()
        },
    )


def trace(expr: Affine) -> Affine:
    return Affine(
        np.trace(expr.const).reshape(1, 1),
        {v: np.trace(c, axis1=1, axis2=2).reshape(-1, 1, 1) for v, c in expr.terms.items()},
    )


def symmetrize(expr: Affine) -> Affine:
    return 0.5 * (expr + expr.T)


@dataclass
class LmiBlock:
    name: str
    expr: Affine
    strict: bool


@dataclass
class LmiProblem:
    """Structured SDP: find variables with every block PSD (or PD)."""

    name: str = ""
    variables: list = field(default_factory=list)
    blocks: list = field(default_factory=list)
    equalities: list = field(default_factory=list)
    objective: Affine | None = None
    epsilon_override: float | None = None

    def variable(self, name: str, dim: int, kind: str = "symmetric") -> Affine:
        if any(v.name == name for v in self.variables):
            raise ValueError(f"duplicate variable name {name!r}")
        var = Var(name, dim, kind)
        self.variables.append(var)
        expr = Affine.variable(var)
        if kind == "nonneg":
            self.add_lmi(expr, f"{name}>=0", strict=False)
        elif kind == "psd":
            self.add_lmi(expr, f"{name}>=0", strict=False)
        return expr

    def var(self, name: str) -> Var:
        for v in self.variables:
            if v.name == name:
                return v
        raise KeyError(name)

    def add_lmi(self, expr, name: str, strict: bool = True):
        expr = Affine.of(expr)
        if expr.shape[0] != expr.shape[1]:
            raise DimensionError(f"block {name} is not square")
        for v in expr.terms:
            if v not in self.variables:
                raise ValueError(f"block {name} references undeclared variable {v.name}")
        expr = symmetrize(expr)
        if expr.shape[0] > 0:
            self.blocks.append(LmiBlock(name, expr, strict))

    def add_equality(self, expr, name: str):
        self.equalities.append((name, Affine.of(expr)))

    def minimize(self, expr):
        expr = Affine.of(expr)
        if expr.shape != (1, 1):
            raise DimensionError("objective must be scalar")
        self.objective = expr

    # numeric views

    @property
    def nparams(self) -> int:
        return sum(v.nparams for v in self.variables)

    @property
    def has_strict(self) -> bool:
        return any(b.strict for b in self.blocks)

    @property
    def scale(self) -> float:
        consts = [np.max(np.abs(b.expr.const)) for b in self.blocks if b.expr.const.size]
        return 1.0 + (max(consts) if consts else 0.0)

    @property
    def epsilon(self) -> float:
        if self.epsilon_override is not None:
            return self.epsilon_override
        return 1e-7 * self.scale if self.has_strict else 0.0

    def offsets(self) -> dict:
        off, out = 0, {}
        for v in self.variables:
            out[v] = (off, off + v.nparams)
            off += v.nparams
        return out

    def _coeffs(self, expr: Affine) -> np.ndarray:
        """Coefficient stack of shape (nparams, rows, cols)."""
        out = np.zeros((self.nparams,) + expr.shape)
        offs = self.offsets()
        for v, c in expr.terms.items():
            lo, hi = offs[v]
            out[lo:hi] += c
        return out

    def standard_form(self):
        """Blocks as (F0, F) with F0 already tightened by epsilon for strict blocks.

        Block j is ``F0_j + sum_i theta_i F_j[i] >= 0``.
        """
        eps = self.epsilon
        out = []
        for b in self.blocks:
            f0 = matops.sym(b.expr.const)
            if b.strict:
                f0 = f0 - eps * np.eye(f0.shape[0])
            f = self._coeffs(b.expr)
            f = 0.5 * (f + f.transpose(0, 2, 1))
            out.append((f0, f))
        c = np.zeros(self.nparams)
        if self.objective is not None:
            c = self._coeffs(self.objective)[:, 0, 0]
        eq = None
        if self.equalities:
            rows_a, rows_b = [], []
            for _, e in self.equalities:
                coef = self._coeffs(e).reshape(self.nparams, -1).T
                rows_a.append(coef)
                rows_b.append(-e.const.ravel())
            eq = (np.vstack(rows_a), np.concatenate(rows_b))
        return c, out, eq

    def split(self, theta) -> dict:
        """Map a flat parameter vector to {Var: params}."""
        theta = np.asarray(theta, dtype=float)
        return {v: theta[lo:hi] for v, (lo, hi) in self.offsets().items()}

    def assignment(self, theta) -> dict:
        """Named matrix values for a flat parameter vector."""
        return {v.name: v.matrix(p) for v, p in self.split(theta).items()}

    def theta_from_assignment(self, named: dict) -> np.ndarray:
        parts = [v.params_of(np.asarray(named[v.name], float)) for v in self.variables]
        return np.concatenate(parts) if parts else np.zeros(0)

    def block_values(self, theta) -> list:
        values = self.split(theta)
        return [matops.sym(b.expr.value(values)) for b in self.blocks]

    def evaluate(self, expr: Affine, theta) -> np.ndarray:
        return Affine.of(expr).value(self.split(theta))

    def check(self, theta, tol: float | None = None) -> "BlockReport":
        """Independent eigenvalue replay of every block at ``theta``."""
        scale = self.scale
        if tol is None:
            tol = 1e-8 * scale
        eps = self.epsilon
        margins = []
        ok = True
        for b, val in zip(self.blocks, self.block_values(theta)):
            lam = matops.min_eig(val)
            need = (eps if b.strict else 0.0) - tol
            margins.append((b.name, lam, b.strict))
            ok &= lam >= need
        eq_res = 0.0
        values = self.split(theta)
        for _, e in self.equalities:
            eq_res = max(eq_res, float(np.max(np.abs(e.value(values)))) if e.const.size else 0.0)
        ok &= eq_res <= tol
        return BlockReport(bool(ok), margins, eq_res, eps, scale)


@dataclass
class BlockReport:
    passed: bool
    margins: list
    equality_residual: float
    epsilon: float
    scale: float

    @property
    def min_margin(self) -> float:
        return min((lam for _, lam, _ in self.margins), default=np.inf)


# dissipation-LMI assembly


def _storage_term(x: Affine, a, b) -> Affine:
    """[A B; I 0]^T [[0, X], [X, 0]] [A B; I 0] = U^T X V + V^T X U."""
    n = a.shape[0]
    u = np.hstack([a, b])
    v = np.hstack([np.eye(n), np.zeros_like(b)])
    t = u.T @ x @ v
    return t + t.T


def _supply_term(p, outer) -> Affine:
    return outer.T @ Affine.of(p) @ outer


def assemble_dissipation(sys: StateSpace, p, strict: bool = True) -> LmiProblem:
    """LMI in X whose feasibility certifies  [G; I]^* P [G; I] < 0.

    The single block is the negation of
    ``[A B; I 0]^T [[0,X],[X,0]] [A B; I 0] + [C D; 0 I]^T P [C D; 0 I]``.
    """
    p = matops.check_symmetric(p, "p")
    k, m = sys.outputs, sys.inputs
    if p.shape != (k + m, k + m):
        raise DimensionError(f"P is {p.shape}, expected {(k + m, k + m)}")
    prob = LmiProblem("dissipation")
    x = prob.variable("X", sys.n)
    outer = np.block([[sys.c, sys.d], [np.zeros((m, sys.n)), np.eye(m)]])
    lhs = _storage_term(x, sys.a, sys.b) + _supply_term(p, outer)
    prob.add_lmi(-lhs, "dissipation", strict=strict)
    return prob


@dataclass
class RobustStabilityParts:
    """Handles into an assembled robust-stability/performance problem."""

    problem: LmiProblem
    p: Affine
    z: Affine
    x: Affine
    filtered: StateSpace
    n_filter: int
    y: Affine | None = None
    performance_rows: np.ndarray | None = None


def assemble_robust_stability(plant: StateSpace, mclass, parts: bool = False):
    """Filtered dissipation LMI plus the storage/terminal-cost coupling."""
    k, m = plant.outputs, plant.inputs
    if (mclass.k, mclass.m) != (k, m):
        raise DimensionError(
            f"multiplier split {(mclass.k, mclass.m)} does not match plant {(k, m)}"
        )
    if not is_hurwitz(mclass.psi):
        raise ValueError("multiplier filter must be Hurwitz")
    prob = LmiProblem("robust_stability")
    p, z = mclass.instantiate(prob)
    filt = series_filter_plant(mclass.psi, plant)
    nf, npsi = filt.n, mclass.psi.n
    x = prob.variable("X", nf)
    outer = np.hstack([filt.c, filt.d])
    prob.add_lmi(-(_storage_term(x, filt.a, filt.b) + _supply_term(p, outer)), "filtered_dissipation")
    prob.add_lmi(x + _pad_terminal(z, npsi, nf), "coupling")
    if parts:
        return RobustStabilityParts(prob, p, z, x, filt, npsi)
    return prob


def _pad_terminal(z: Affine, npsi: int, nf: int) -> Affine:
    return bmat([[z, None], [None, np.zeros((nf - npsi, nf - npsi))]]) if nf > npsi else z


@dataclass(frozen=True)
class PerformanceSpec:
    """Quadratic performance index on (e, d) with middle matrix pp, e first."""

    pp: np.ndarray
    ne: int

    def __post_init__(self):
        pp = matops.check_symmetric(self.pp, "pp")
        object.__setattr__(self, "pp", pp)
        qp = pp[: self.ne, : self.ne]
        if qp.size and matops.min_eig(qp) < -1e-12 * (1 + np.max(np.abs(qp))):
            raise ValueError("performance block Q_p must be positive semidefinite")

    @property
    def nd(self) -> int:
        return self.pp.shape[0] - self.ne

    @classmethod
    def amplitude(cls, ne: int, nd: int, gamma: float = 1.0) -> "PerformanceSpec":
        """Q_p = 0, S_p = 0, R_p = -gamma^2 I: the invariance/amplitude setup."""
        pp = np.zeros((ne + nd, ne + nd))
        pp[ne:, ne:] = -gamma**2 * np.eye(nd)
        return cls(pp, ne)

    @classmethod
    def energy_gain(cls, ne: int, nd: int, gamma: float) -> "PerformanceSpec":
        pp = np.zeros((ne + nd, ne + nd))
        pp[:ne, :ne] = np.eye(ne)
        pp[ne:, ne:] = -gamma**2 * np.eye(nd)
        return cls(pp, ne)


def filtered_performance_system(plant4: PartitionedPlant, psi: StateSpace):
    """State matrices of the filtered loop with inputs (w, d), state (xi, x)."""
    a_p, b1, b2 = psi.a, psi.b[:, : plant4.nz], psi.b[:, plant4.nz :]
    c_p, d1, d2 = psi.c, psi.d[:, : plant4.nz], psi.d[:, plant4.nz :]
    n, npsi = plant4.sys.n, psi.n
    a = np.block([[a_p, b1 @ plant4.cz], [np.zeros((n, npsi)), plant4.a]])
    bw = np.vstack([b1 @ plant4.dzw + b2, plant4.bw])
    bd = np.vstack([b1 @ plant4.dzd, plant4.bd])
    c = np.hstack([c_p, d1 @ plant4.cz])
    dw = d1 @ plant4.dzw + d2
    dd = d1 @ plant4.dzd
    return a, bw, bd, c, dw, dd


def assemble_robust_performance(
    plant4: PartitionedPlant,
    mclass,
    perf: PerformanceSpec,
    invariance: bool = True,
    invariance_rows=None,
    parts: bool = False,
):
    """Robust quadratic performance LMI, coupling, and optional invariance LMI.

    With ``invariance`` the objective is trace(Y) and sqrt(trace Y) bounds the
    peak of the selected performance outputs for unit-energy disturbances.
    """
    if (mclass.k, mclass.m) != (plant4.nz, plant4.nw):
        raise DimensionError("multiplier split does not match the uncertainty channels")
    if perf.ne != plant4.ne or perf.nd != plant4.nd:
        raise DimensionError("performance spec does not match (e, d) channels")
    if not is_hurwitz(mclass.psi):
        raise ValueError("multiplier filter must be Hurwitz")
    prob = LmiProblem("robust_performance")
    p, z = mclass.instantiate(prob)
    a, bw, bd, c, dw, dd = filtered_performance_system(plant4, mclass.psi)
    nf, npsi, nw, nd = a.shape[0], mclass.psi.n, plant4.nw, plant4.nd
    x = prob.variable("X", nf)
    b = np.hstack([bw, bd])
    outer = np.hstack([c, dw, dd])
    perf_outer = np.block(
        [
            [np.zeros((plant4.ne, npsi)), plant4.ce, plant4.dew, plant4.ded],
            [np.zeros((nd, nf + nw)), np.eye(nd)],
        ]
    )
    lhs = _storage_term(x, a, b) + _supply_term(p, outer) + _supply_term(perf.pp, perf_outer)
    prob.add_lmi(-lhs, "filtered_performance")
    coupled = x + _pad_terminal(z, npsi, nf)
    prob.add_lmi(coupled, "coupling")
    y = None
    rows = None
    if invariance:
        rows = np.arange(plant4.ne) if invariance_rows is None else np.asarray(invariance_rows)
        if np.any(plant4.dew[rows]) or np.any(plant4.ded[rows]):
            raise ValueError("invariance bound needs e = C_e x on the selected rows")
        ce = np.hstack([np.zeros((len(rows), npsi)), plant4.ce[rows]])
        y = prob.variable("Y", len(rows))
        prob.add_lmi(bmat([[y, ce], [ce.T, coupled]]), "invariance")
        prob.minimize(trace(y))
    if parts:
        out = RobustStabilityParts(prob, p, z, x, None, npsi, y, rows)
        return out
    return prob


def stability_block_from_performance(plant4: PartitionedPlant, mclass, p_val, x_val):
    """Filtered stability LMI value (negated) at given P, X: the d-free slice."""
    a, bw, _, c, dw, _ = filtered_performance_system(plant4, mclass.psi)
    u = np.hstack([a, bw])
    v = np.hstack([np.eye(a.shape[0]), np.zeros_like(bw)])
    outer = np.hstack([c, dw])
    t = u.T @ x_val @ v
    return -(t + t.T + outer.T @ p_val @ outer)
