import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import quad_vec
from scipy.linalg import expm

from iqcrobust import matops
from strategies import hurwitz_matrix, seeds


def test_sym_eig_diagonal_and_swap():
    lam, v = matops.sym_eig(np.diag([3.0, 1.0]))
    assert np.allclose(lam, [1, 3])
    assert np.allclose(np.abs(v), [[0, 1], [1, 0]])
    lam, _ = matops.sym_eig([[0.0, 1.0], [1.0, 0.0]])
    assert np.allclose(lam, [-1, 1])


def test_sym_eig_matches_companion_roots(rng):
    m = rng.standard_normal((6, 6))
    m = m + m.T
    lam, v = matops.sym_eig(m)
    assert np.max(np.abs(v @ np.diag(lam) @ v.T - m)) < 1e-9
    # roots of the characteristic polynomial via its companion matrix
    roots = np.sort(np.linalg.eigvals(np.diag(np.ones(5), -1) - np.outer(np.eye(6)[0], np.poly(m)[1:])).real)
    assert np.allclose(lam, roots, atol=1e-7)


def test_sym_eig_rejects_bad_input():
    with pytest.raises(matops.SymmetryError):
        matops.sym_eig([[1.0, 2.0], [0.0, 1.0]])
    with pytest.raises(matops.SymmetryError):
        matops.sym_eig(np.ones((2, 3)))


@given(seeds, st.integers(1, 30))
def test_sym_eig_reconstruction(seed, n):
    rng = np.random.default_rng(seed)
    m = rng.standard_normal((n, n))
    m = m + m.T
    lam, v = matops.sym_eig(m)
    assert np.all(np.diff(lam) >= 0)
    assert np.max(np.abs(v.T @ v - np.eye(n))) < 1e-10
    assert np.max(np.abs(v @ np.diag(lam) @ v.T - m)) < 1e-9


def test_is_posdef_cases():
    assert matops.is_posdef(np.eye(3), 0.0)
    assert not matops.is_posdef(np.zeros((2, 2)), 0.0)
    assert not matops.is_posdef(np.diag([2.0, -1e-3]), 0.0)
    assert not matops.is_posdef(np.eye(2), 1.0)


def test_kron_blocks():
    k = np.array([[2.0, 1.0], [1.0, 3.0]])
    assert np.allclose(matops.kron(np.eye(2), [[5.0]]), np.diag([5.0, 5.0]))
    out = matops.kron(np.diag([1.0, -1.0]), k)
    assert np.allclose(out[:2, :2], k) and np.allclose(out[2:, 2:], -k)
    assert np.allclose(out[:2, 2:], 0)


@given(seeds)
def test_kron_quadratic_form_factorizes(seed):
    rng = np.random.default_rng(seed)
    x, u = rng.standard_normal(2), rng.standard_normal(3)
    p0, m = rng.standard_normal((2, 2)), rng.standard_normal((3, 3))
    p0, m = p0 + p0.T, m + m.T
    xu = np.kron(x, u)
    assert np.isclose(xu @ matops.kron(p0, m) @ xu, (x @ p0 @ x) * (u @ m @ u))


@given(seeds)
def test_kron_mixed_product(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((2, 3)), rng.standard_normal((4, 2))
    c, d = rng.standard_normal((3, 2)), rng.standard_normal((2, 5))
    lhs = matops.kron(a, b) @ matops.kron(c, d)
    assert np.max(np.abs(lhs - matops.kron(a @ c, b @ d))) <= 1e-10 * (1 + np.max(np.abs(lhs)))


def test_schur_complement_cases():
    assert np.allclose(matops.schur_complement(-np.eye(2), 1), [[-1.0]])
    comp = matops.schur_complement(np.array([[-1.0, 1.0], [1.0, 0.0]]), 1)
    assert np.allclose(comp, [[1.0]])
    with pytest.raises(matops.SingularityError):
        matops.schur_complement(np.array([[0.0, 1.0], [1.0, 1.0]]), 1)


@given(seeds)
def test_schur_lemma(seed):
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((4, 4))
    full = g + g.T
    h = rng.standard_normal((2, 2))
    full[:2, :2] = -(h @ h.T + 0.5 * np.eye(2))
    full[2:, 2:] -= rng.uniform(0, 6) * np.eye(2)
    comp = matops.schur_complement(full, 2)
    assert matops.is_posdef(-full) == matops.is_posdef(-comp)


def test_lyapunov_oracles():
    assert np.allclose(matops.solve_lyapunov(-np.eye(2), 2 * np.eye(2)), np.eye(2))
    a = np.array([[-3.0, -2.0], [1.0, 0.0]])
    b = np.array([[1.0], [0.0]])
    # the controllability gramian solves a W + W a^T + b b^T = 0, i.e. the transposed call
    w = matops.solve_lyapunov(a.T, b @ b.T)
    assert np.allclose(w, [[1 / 6, 0.0], [0.0, 1 / 12]], atol=1e-12)


def test_lyapunov_matches_quadrature(rng):
    a = hurwitz_matrix(rng, 3, margin=0.5)
    q = rng.standard_normal((3, 3))
    q = q @ q.T
    x = matops.solve_lyapunov(a, q)
    integral, _ = quad_vec(lambda t: expm(a.T * t) @ q @ expm(a * t), 0, np.inf, epsabs=1e-11)
    assert np.max(np.abs(x - integral)) < 1e-6


def test_lyapunov_collision():
    with pytest.raises(matops.SingularityError):
        matops.solve_lyapunov(np.diag([1.0, -1.0]), np.eye(2))


@given(seeds, st.integers(1, 6))
def test_lyapunov_residual_and_sign(seed, n):
    rng = np.random.default_rng(seed)
    a = hurwitz_matrix(rng, n)
    g = rng.standard_normal((n, n))
    q = g @ g.T
    x = matops.solve_lyapunov(a, q)
    assert np.max(np.abs(a.T @ x + x @ a + q)) <= 1e-10 * max(np.linalg.norm(q), 1.0) * (1 + np.linalg.norm(x))
    assert matops.min_eig(x) >= -1e-10 * (1 + np.linalg.norm(x))


def test_are_scalar_root_selection():
    # -2z + z^2 = 0 has roots 0 and 2; only z = 0 gives a Hurwitz closed loop
    z = matops.solve_are_stabilizing([[-1.0]], [[1.0]], [[0.0]], [[0.0]], [[1.0]])
    assert np.allclose(z, 0.0)


def test_are_errors():
    with pytest.raises(matops.SingularityError):
        matops.solve_are_stabilizing([[-1.0]], [[1.0]], [[0.0]], [[0.0]], [[0.0]])
    # a = 0, b = 0: the Hamiltonian has a double eigenvalue at the origin
    with pytest.raises(matops.NoStabilizingSolutionError):
        matops.solve_are_stabilizing([[0.0]], [[0.0]], [[1.0]], [[0.0]], [[1.0]])


@given(seeds, st.integers(1, 4))
def test_are_residual_and_stability(seed, n):
    rng = np.random.default_rng(seed)
    a = hurwitz_matrix(rng, n)
    b = rng.standard_normal((n, 1))
    g = rng.standard_normal((n, n))
    q = -(g @ g.T)  # makes the Hamiltonian dichotomic for r > 0
    s = np.zeros((n, 1))
    r = np.array([[rng.uniform(0.5, 2.0)]])
    z = matops.solve_are_stabilizing(a, b, q, s, r)
    scale = 1 + np.max(np.abs(z)) + np.max(np.abs(q))
    assert np.max(np.abs(matops.are_residual(a, b, q, s, r, z))) <= 1e-8 * scale
    assert np.max(np.linalg.eigvals(matops.are_closed_loop(a, b, s, r, z)).real) < 0
