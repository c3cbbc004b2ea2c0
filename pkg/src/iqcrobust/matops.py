"""Dense linear-algebra helpers shared by every other module.

Everything here is a pure function of numpy arrays. Symmetric outputs are
explicitly symmetrized so that downstream definiteness tests do not pick up
round-off asymmetry.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla


class SymmetryError(ValueError):
    """Raised when a matrix that must be symmetric is not."""


class SingularityError(np.linalg.LinAlgError):
    """Raised when a block that must be invertible is (numerically) singular."""


class NoStabilizingSolutionError(np.linalg.LinAlgError):
    """Raised when a Riccati equation has no stabilizing solution."""


def sym(m):
    """Return the symmetric part (M + M^T)/2."""
    m = np.asarray(m, dtype=float)
    return 0.5 * (m + m.T)


def default_margin(m) -> float:
    """Definiteness gap used when callers do not supply one: 1e-9*(1+||M||)."""
    m = np.asarray(m)
    return 1e-9 * (1.0 + (np.linalg.norm(m, 2) if m.size else 0.0))


def check_symmetric(m, name: str = "matrix") -> np.ndarray:
    """Validate squareness and symmetry; return the symmetrized array."""
    m = np.atleast_2d(np.asarray(m, dtype=float))
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise SymmetryError(f"{name} must be square, got shape {m.shape}")
    scale = 1.0 + (np.max(np.abs(m)) if m.size else 0.0)
    if m.size and np.max(np.abs(m - m.T)) > 1e-12 * scale:
        raise SymmetryError(f"{name} is not symmetric")
    return sym(m)


def sym_eig(m):
    """Eigen-decomposition of a symmetric matrix.

    Returns ``(lam, V)`` with eigenvalues ascending and ``m = V diag(lam) V^T``.
    """
    m = check_symmetric(m)
    lam, v = np.linalg.eigh(m)
    return lam, v


def min_eig(m) -> float:
    """Smallest eigenvalue of a symmetric matrix (+inf for an empty one)."""
    m = sym(np.atleast_2d(m))
    if m.size == 0:
        return np.inf
    return float(np.linalg.eigvalsh(m)[0])


def max_eig(m) -> float:
    m = sym(np.atleast_2d(m))
    if m.size == 0:
        return -np.inf
    return float(np.linalg.eigvalsh(m)[-1])


def is_posdef(m, margin: float | None = None) -> bool:
    """True iff the smallest eigenvalue exceeds ``margin`` (default 0)."""
    m = check_symmetric(m)
    if margin is None:
        margin = 0.0
    return min_eig(m) > margin


def kron(a, b):
    return np.kron(np.atleast_2d(a), np.atleast_2d(b))


def schur_complement(p, k: int):
    """Complement P2 - P12^T P1^{-1} P12 of the leading k x k block P1."""
    p = check_symmetric(p)
    p1, p12, p2 = p[:k, :k], p[:k, k:], p[k:, k:]
    if k == 0:
        return p2
    if np.linalg.cond(p1) > 1e12:
        raise SingularityError("leading block is singular")
    return sym(p2 - p12.T @ np.linalg.solve(p1, p12))


def solve_lyapunov(a, q):
    """Solve a^T X + X a + q = 0 for symmetric X."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    q = check_symmetric(q, "q")
    n = a.shape[0]
    if n == 0:
        return np.zeros((0, 0))
    ev = np.linalg.eigvals(a)
    # a^T X + X a = -q is singular iff lambda_i + lambda_j = 0 for some pair
    sums = ev[:, None] + ev[None, :]
    if np.min(np.abs(sums)) < 1e-10 * (1.0 + np.max(np.abs(ev))):
        raise SingularityError("a and -a share an eigenvalue; solution not unique")
    # scipy solves A X + X A^H = Q
    x = sla.solve_continuous_lyapunov(a.T, -q)
    return sym(x)


def are_residual(a, b, q, s, r, z):
    """Residual of a^T Z + Z a + q + (Z b + s) r^{-1} (b^T Z + s^T)."""
    zb_s = z @ b + s
    return sym(a.T @ z + z @ a + q + zb_s @ np.linalg.solve(r, zb_s.T))


def are_closed_loop(a, b, s, r, z):
    """Closed-loop matrix a + b r^{-1} (b^T Z + s^T) of the Riccati equation."""
    return a + b @ np.linalg.solve(r, b.T @ z + s.T)


def solve_are_stabilizing(a, b, q, s, r):
    """Stabilizing solution of a^T Z + Z a + q + (Z b + s) r^{-1} (b^T Z + s^T) = 0.

    Stabilizing means ``a + b r^{-1}(b^T Z + s^T)`` is Hurwitz. The solution is
    read off the stable invariant subspace of the Hamiltonian matrix, computed
    with an ordered real Schur form.

    For the filter equation with data (A, B, C, D, P) pass
    ``q = -C^T P C``, ``s = -C^T P D`` and ``r = D^T P D``.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    n = a.shape[0]
    if n == 0:
        return np.zeros((0, 0))
    b = np.asarray(b, dtype=float).reshape(n, -1)
    q = sym(q)
    s = np.asarray(s, dtype=float).reshape(n, -1)
    r = sym(r)
    if np.linalg.cond(r) > 1e12:
        raise SingularityError("r must be invertible")
    r_inv_st = np.linalg.solve(r, s.T)
    f = a + b @ r_inv_st
    g = b @ np.linalg.solve(r, b.T)
    qt = q + s @ r_inv_st
    ham = np.block([[f, g], [-qt, -f.T]])
    ev = np.linalg.eigvals(ham)
    scale = 1.0 + np.max(np.abs(ev))
    if np.min(np.abs(ev.real)) < 1e-9 * scale:
        raise NoStabilizingSolutionError("Hamiltonian has imaginary-axis eigenvalues")
    t, u, sdim = sla.schur(ham, output="real", sort="lhp")
    if sdim != n:
        raise NoStabilizingSolutionError("stable subspace has wrong dimension")
    u1, u2 = u[:n, :n], u[n:, :n]
    if np.linalg.cond(u1) > 1e12:
        raise NoStabilizingSolutionError("stable subspace is not a graph")
    z = sym(np.linalg.solve(u1.T, u2.T).T)
    return z
