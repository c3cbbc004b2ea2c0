"""Multiplier classes: a stable filter and a convex cone of middle matrices.

A :class:`ParamCone` describes its variables declaratively and builds the
middle matrix P (and side constraints) inside a given :class:`LmiProblem`,
so the same cone can be instantiated in any number of problems.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product
from typing import Callable

import numpy as np

from . import matops
from .lmi import Affine, LmiProblem, blockdiag, bmat, kron_const
from .lti import DimensionError, StateSpace, channel_permutation, diag_augment, is_hurwitz


@dataclass(frozen=True, eq=False)
class SupplyRateMatrix:
    """Symmetric middle matrix over (output, input), output channels first."""

    p: np.ndarray
    k: int
    m: int

    def __post_init__(self):
        p = matops.check_symmetric(self.p, "supply-rate matrix")
        if p.shape != (self.k + self.m,) * 2:
            raise DimensionError("partition does not match matrix size")
        object.__setattr__(self, "p", p)

    @property
    def q(self):
        return self.p[: self.k, : self.k]

    @property
    def s(self):
        return self.p[: self.k, self.k :]

    @property
    def r(self):
        return self.p[self.k :, self.k :]

    def __array__(self, dtype=None, copy=None):
        return self.p if dtype is None else self.p.astype(dtype)

    def supply(self, y, u) -> float:
        yu = np.concatenate([np.ravel(y), np.ravel(u)])
        return float(yu @ self.p @ yu)


def bounded_real(k: int, m: int, gamma: float = 1.0) -> SupplyRateMatrix:
    """diag(I_k, -gamma^2 I_m)."""
    return SupplyRateMatrix(np.diag([1.0] * k + [-(gamma**2)] * m), k, m)


def positive_real(k: int) -> SupplyRateMatrix:
    p = np.zeros((2 * k, 2 * k))
    p[:k, k:] = p[k:, :k] = 0.5 * np.eye(k)
    return SupplyRateMatrix(p, k, k)


def sector(l, m_low) -> SupplyRateMatrix:
    """Sector matrix [[-L^T M - M^T L, L^T + M^T], [L + M, -2I]]."""
    l = np.atleast_2d(np.asarray(l, dtype=float))
    mm = np.atleast_2d(np.asarray(m_low, dtype=float))
    if l.shape != mm.shape:
        raise DimensionError("sector bounds must have equal shapes")
    m, k = l.shape
    p = np.block([[-l.T @ mm - mm.T @ l, l.T + mm.T], [l + mm, -2.0 * np.eye(m)]])
    return SupplyRateMatrix(matops.sym(p), k, m)


@dataclass(frozen=True)
class VarSpec:
    name: str
    dim: int
    kind: str


@dataclass(frozen=True, eq=False)
class ParamCone:
    """Convex cone of middle matrices.

    ``assembly`` and ``side_constraints`` receive a dict of variable name to
    :class:`Affine`; side constraints are (name, expression, strict) triples
    meaning ``expression >= 0`` (or ``> 0``).
    """

    variables: tuple
    assembly: Callable
    side_constraints: Callable = field(default=lambda v: [])
    size: int = 0
    interior: dict = field(default_factory=dict)

    def instantiate(self, prob: LmiProblem, prefix: str = ""):
        handles = {s.name: prob.variable(prefix + s.name, s.dim, s.kind) for s in self.variables}
        for name, expr, strict in self.side_constraints(handles):
            prob.add_lmi(expr, prefix + name, strict=strict)
        return self.assembly(handles), handles

    def evaluate(self, values: dict) -> np.ndarray:
        """Middle matrix for numeric variable values given by name."""
        handles = {s.name: Affine(np.asarray(values[s.name], float).reshape(s.dim, s.dim)) for s in self.variables}
        return self.assembly(handles).const

    def side_margins(self, values: dict) -> list:
        """Smallest eigenvalue of each side constraint at numeric values."""
        handles = {s.name: Affine(np.asarray(values[s.name], float).reshape(s.dim, s.dim)) for s in self.variables}
        out = [(name, matops.min_eig(e.const), strict) for name, e, strict in self.side_constraints(handles)]
        for s in self.variables:
            if s.kind in ("nonneg", "psd"):
                out.append((s.name, matops.min_eig(handles[s.name].const), False))
        return out


def _zero_terminal(n: int):
    return lambda handles: Affine(np.zeros((n, n)))


@dataclass(frozen=True, eq=False)
class MultiplierClass:
    """Filter psi = [psi_1 psi_2] (inputs z then w), cone for P, terminal map for Z."""

    psi: StateSpace
    cone: ParamCone
    k: int
    m: int
    terminal: Callable | None = None
    perm: tuple = ()
    name: str = "multiplier"

    def __post_init__(self):
        if self.psi.inputs != self.k + self.m:
            raise DimensionError("filter inputs do not match the channel split")
        if self.cone.size and self.cone.size != self.psi.outputs:
            raise DimensionError("cone size does not match filter outputs")
        if not is_hurwitz(self.psi):
            raise ValueError("multiplier filter must be Hurwitz")

    @property
    def n_filter(self) -> int:
        return self.psi.n

    def terminal_expr(self, handles) -> Affine:
        fn = self.terminal or _zero_terminal(self.psi.n)
        return fn(handles)

    def instantiate(self, prob: LmiProblem, prefix: str = ""):
        """Create the cone variables in ``prob``; return (P, Z) expressions."""
        p, handles = self.cone.instantiate(prob, prefix)
        return p, self.terminal_expr(handles)

    def evaluate(self, values: dict):
        """Numeric (P, Z) for variable values keyed by (unprefixed) name."""
        handles = {
            s.name: Affine(np.asarray(values[s.name], float).reshape(s.dim, s.dim))
            for s in self.cone.variables
        }
        return self.cone.assembly(handles).const, self.terminal_expr(handles).const


def values_for(mclass: MultiplierClass, assignment: dict, prefix: str = "") -> dict:
    """Pick a class's variable values out of a solved problem's assignment."""
    return {s.name: assignment[prefix + s.name] for s in mclass.cone.variables}


def static_class(cone: ParamCone, k: int, m: int, name: str = "static") -> MultiplierClass:
    """Trivial filter psi = I with the given cone."""
    return MultiplierClass(StateSpace.gain(np.eye(k + m)), cone, k, m, name=name)


def scaled_cone(p_fixed) -> ParamCone:
    """{lambda * P_fixed : lambda >= 0}."""
    p_fixed = np.asarray(p_fixed, dtype=float)
    return ParamCone(
        (VarSpec("lam", 1, "nonneg"),),
        lambda h: kron_const(p_fixed, h["lam"]),
        size=p_fixed.shape[0],
        interior={"lam": np.ones((1, 1))},
    )


def sector_class(l, m_low) -> MultiplierClass:
    srm = sector(l, m_low)
    return static_class(scaled_cone(srm.p), srm.k, srm.m, name="sector")


MAX_VERTEX_CHANNELS = 12


def repeated_sat_cone(variant: str, m: int) -> ParamCone:
    """Cones for repeated saturation-like nonlinearities on m channels.

    ``P0``: multiples of the diagonal sector matrix; ``P1``: one nonnegative
    weight per channel; ``P2``: free P with R <= 0 and one constraint per
    vertex of {0,1}^m.
    """
    if m < 1:
        raise ValueError("need at least one channel")
    eye = np.eye(m)
    if variant == "P0":
        return scaled_cone(sector(eye, np.zeros((m, m))).p)
    if variant == "P1":
        def assemble(h):
            terms = []
            for j in range(m):
                e = np.zeros((m, m))
                e[j, j] = 1.0
                gen = np.block([[np.zeros((m, m)), e], [e, -2.0 * e]])
                terms.append(kron_const(gen, h[f"lam{j}"]))
            out = terms[0]
            for t in terms[1:]:
                out = out + t
            return out

        return ParamCone(
            tuple(VarSpec(f"lam{j}", 1, "nonneg") for j in range(m)),
            assemble,
            size=2 * m,
            interior={f"lam{j}": np.ones((1, 1)) for j in range(m)},
        )
    if variant == "P2":
        if m > MAX_VERTEX_CHANNELS:
            raise ValueError(f"P2 needs 2^{m} vertex constraints; limit is m <= {MAX_VERTEX_CHANNELS}")

        def side(h):
            p = h["P"]
            out = [("R<=0", -p[m:, m:], False)]
            for delta in product((0.0, 1.0), repeat=m):
                stack = np.vstack([eye, np.diag(delta)])
                out.append((f"vertex{''.join(str(int(d)) for d in delta)}", stack.T @ p @ stack, False))
            return out

        return ParamCone(
            (VarSpec("P", 2 * m, "symmetric"),),
            lambda h: h["P"],
            side,
            size=2 * m,
            interior={"P": sector(eye, np.zeros((m, m))).p},
        )
    raise ValueError(f"unknown variant {variant!r}")


def vertex_member(p, m: int, tol: float = 1e-9) -> bool:
    """Direct membership test for the vertex cone of :func:`repeated_sat_cone`."""
    p = matops.sym(p)
    if matops.max_eig(p[m:, m:]) > tol:
        return False
    eye = np.eye(m)
    for delta in product((0.0, 1.0), repeat=m):
        stack = np.vstack([eye, np.diag(delta)])
        if matops.min_eig(stack.T @ p @ stack) < -tol:
            return False
    return True


def zames_falb_filter(a: float, combine_static: bool = True) -> StateSpace:
    """Filter producing (z, w, z - h*z, w) with h(t) = a exp(-a t)."""
    if combine_static:
        return StateSpace(
            [[-a]],
            [[a, 0.0]],
            [[0.0], [0.0], [-1.0], [0.0]],
            [[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.0, 1.0]],
        )
    return StateSpace([[-a]], [[a, 0.0]], [[-1.0], [0.0]], [[1.0, 0.0], [0.0, 1.0]])


def zames_falb(a: float, combine_static: bool = True) -> MultiplierClass:
    """First-order Zames-Falb class for a monotone, slope-in-[0,1] nonlinearity."""
    if not a > 0:
        raise ValueError("Zames-Falb pole must be positive")
    psi = zames_falb_filter(a, combine_static)
    p01 = sector(1.0, 0.0).p
    ppr = positive_real(1).p
    if combine_static:
        specs = (VarSpec("lam_sector", 1, "nonneg"), VarSpec("lam_zf", 1, "nonneg"))

        def assemble(h):
            return blockdiag([kron_const(p01, h["lam_sector"]), kron_const(ppr, h["lam_zf"])])

        interior = {"lam_sector": np.ones((1, 1)), "lam_zf": np.ones((1, 1))}
    else:
        specs = (VarSpec("lam_zf", 1, "nonneg"),)

        def assemble(h):
            return kron_const(ppr, h["lam_zf"])

        interior = {"lam_zf": np.ones((1, 1))}
    cone = ParamCone(specs, assemble, size=psi.outputs, interior=interior)
    return MultiplierClass(psi, cone, 1, 1, _zero_terminal(1), name=f"zames_falb(a={a:g})")


def parametric_cone(kind: str, k: int = 1, r: float = 1.0) -> ParamCone:
    """Cones for a repeated real parameter delta*I_k with |delta| <= r.

    ``time_varying``: [[r^2 Q, r S], [r S^T, -Q]] with Q >= 0 and S skew.
    ``constant_real``: lambda * diag(r^2 I, -I) with lambda >= 0.
    """
    if not r > 0:
        raise ValueError("radius must be positive")
    if kind == "time_varying":
        specs = (VarSpec("Q", k, "psd"), VarSpec("S", k, "skew"))

        def assemble(h):
            return bmat([[r * r * h["Q"], r * h["S"]], [r * h["S"].T, -h["Q"]]])

        return ParamCone(specs, assemble, size=2 * k, interior={"Q": np.eye(k), "S": np.zeros((k, k))})
    if kind == "constant_real":
        return scaled_cone(np.diag([r * r] * k + [-1.0] * k))
    raise ValueError(f"unknown parametric kind {kind!r}")


def parametric_class(kind: str, k: int = 1, r: float = 1.0) -> MultiplierClass:
    return static_class(parametric_cone(kind, k, r), k, k, name=f"parametric_{kind}")


def lmik_expression(psi_basis: StateSpace, m_expr: Affine, k_expr: Affine) -> Affine:
    """[C D]^T M [C D] - [[A^T K + K A, K B], [B^T K, 0]] (must be > 0)."""
    a, b, c, d = psi_basis.a, psi_basis.b, psi_basis.c, psi_basis.d
    n = a.shape[0]
    cd = np.hstack([c, d])
    out = cd.T @ m_expr @ cd
    if n:
        u = np.hstack([a, b])
        v = np.hstack([np.eye(n), np.zeros_like(b)])
        t = v.T @ k_expr @ u
        out = out - (t + t.T)
    return out


def repeated_dynamic(psi_basis: StateSpace, p0, restricted: bool = False) -> MultiplierClass:
    """Class for w = delta z with delta a stable LTI system obeying the disk
    condition [1; delta]^* P0 [1; delta] > 0 on the imaginary axis.

    Filter diag(psi, psi), P = P0 kron M, Z = P0 kron K, with (M, K) linked by
    the strict dissipation LMI of ``lmik_expression``. With ``restricted`` the
    terminal cost is dropped (K = 0) and M > 0 is imposed instead.
    """
    p0 = matops.check_symmetric(np.asarray(p0, float), "p0")
    if p0.shape != (2, 2):
        raise DimensionError("p0 must be 2x2")
    if p0[1, 1] > 0:
        raise ValueError("p0 must have a nonpositive lower-right entry")
    if psi_basis.inputs != 1:
        raise DimensionError("basis filter must have one input")
    if not is_hurwitz(psi_basis):
        raise ValueError("basis filter must be Hurwitz")
    ell, npsi = psi_basis.outputs, psi_basis.n
    psi = diag_augment([psi_basis, psi_basis])

    if restricted:
        specs = (VarSpec("M", ell, "symmetric"),)

        def side(h):
            return [("M>0", h["M"], True)]

        def terminal(h):
            return Affine(np.zeros((2 * npsi, 2 * npsi)))

        interior = {"M": np.eye(ell)}
    else:
        specs = (VarSpec("M", ell, "symmetric"),) + ((VarSpec("K", npsi, "symmetric"),) if npsi else ())

        def k_of(h):
            return h["K"] if npsi else Affine(np.zeros((0, 0)))

        def side(h):
            return [("lmiK", lmik_expression(psi_basis, h["M"], k_of(h)), True)]

        def terminal(h):
            return kron_const(p0, k_of(h))

        interior = {"M": np.eye(ell)}
        if npsi:
            interior["K"] = _interior_k(psi_basis)

    cone = ParamCone(specs, lambda h: kron_const(p0, h["M"]), side, size=2 * ell, interior=interior)
    name = "repeated_dynamic_restricted" if restricted else "repeated_dynamic"
    return MultiplierClass(psi, cone, 1, 1, terminal, name=name)


def _interior_k(psi_basis: StateSpace) -> np.ndarray:
    """K = eta X_L with a^T X_L + X_L a = -I, eta shrunk until lmiK(M=I) > 0."""
    xl = matops.solve_lyapunov(psi_basis.a, np.eye(psi_basis.n))
    eta = 1.0
    for _ in range(60):
        val = lmik_expression(psi_basis, Affine(np.eye(psi_basis.outputs)), Affine(eta * xl)).const
        if matops.min_eig(val) > 0:
            return eta * xl
        eta *= 0.5
    return np.zeros_like(xl)


def combine(classes) -> MultiplierClass:
    """Block-diagonal combination; inputs re-ordered to (all z, all w)."""
    classes = list(classes)
    if len(classes) == 1:
        return classes[0]
    splits = [(c.k, c.m) for c in classes]
    psi = diag_augment([c.psi for c in classes], splits=splits)
    prefixes = [f"b{i}_" for i in range(len(classes))]
    specs = tuple(
        VarSpec(pre + s.name, s.dim, s.kind) for pre, c in zip(prefixes, classes) for s in c.cone.variables
    )

    def sub(h, pre):
        return {name[len(pre):]: val for name, val in h.items() if name.startswith(pre)}

    def assemble(h):
        return blockdiag([c.cone.assembly(sub(h, pre)) for pre, c in zip(prefixes, classes)])

    def side(h):
        out = []
        for pre, c in zip(prefixes, classes):
            out += [(pre + n, e, s) for n, e, s in c.cone.side_constraints(sub(h, pre))]
        return out

    def terminal(h):
        return blockdiag([c.terminal_expr(sub(h, pre)) for pre, c in zip(prefixes, classes)])

    interior = {pre + k: v for pre, c in zip(prefixes, classes) for k, v in c.cone.interior.items()}
    cone = ParamCone(specs, assemble, side, size=psi.outputs, interior=interior)
    return MultiplierClass(
        psi,
        cone,
        sum(k for k, _ in splits),
        sum(m for _, m in splits),
        terminal,
        perm=tuple(int(i) for i in channel_permutation(splits)),
        name="combined(" + ", ".join(c.name for c in classes) + ")",
    )
