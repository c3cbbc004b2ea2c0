import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from iqcrobust import analysis, lmi, matops, sdp, systems
from iqcrobust import multiplier as mu
from iqcrobust.lti import DimensionError, PartitionedPlant, StateSpace, is_hurwitz
from iqcrobust.sim import hinf_norm_grid
from strategies import hurwitz_matrix, seeds

FIRST_ORDER = StateSpace([[-1.0]], [[1.0]], [[1.0]], [[0.0]])


def hinf_hamiltonian(sys, rel=1e-10):
    """H-infinity norm of a strictly proper system by Hamiltonian bisection."""
    lo, hi = 0.0, 1.0

    def above(g):
        h = np.block([[sys.a, sys.b @ sys.b.T / g**2], [-sys.c.T @ sys.c, -sys.a.T]])
        return not np.any(np.abs(np.linalg.eigvals(h).real) < 1e-9)

    while not above(hi):
        hi *= 2
    while hi - lo > rel * hi:
        mid = 0.5 * (lo + hi)
        lo, hi = (lo, mid) if above(mid) else (mid, hi)
    return hi


def hinf_grid(sys):
    return hinf_norm_grid(sys, np.concatenate([[0.0], np.logspace(-3, 3, 3000)]))


def test_dissipation_bounded_real_feasible():
    prob = lmi.assemble_dissipation(FIRST_ORDER, np.diag([1.0, -4.0]))
    assert sdp.solve_feasibility(prob).status == "strictly_feasible"
    # X = 1 gives the block [[1, -1], [-1, 4]]
    assert prob.check(prob.theta_from_assignment({"X": [[1.0]]})).passed


def test_dissipation_below_norm_infeasible():
    prob = lmi.assemble_dissipation(FIRST_ORDER, np.diag([1.0, -0.25]))
    assert sdp.solve_feasibility(prob).status == "infeasible"


def test_dissipation_zero_supply_nonstrict():
    prob = lmi.assemble_dissipation(FIRST_ORDER, np.zeros((2, 2)), strict=False)
    assert prob.epsilon == 0.0
    assert prob.check(prob.theta_from_assignment({"X": [[0.0]]})).passed


def test_dissipation_dimension_error():
    with pytest.raises(DimensionError):
        lmi.assemble_dissipation(FIRST_ORDER, np.eye(3))


def test_circle_example_feasible():
    plant = StateSpace([[-1.0]], [[1.0]], [[-1.0]], [[0.0]])
    prob = lmi.assemble_robust_stability(plant, mu.sector_class(1.0, 0.0))
    assert sdp.solve_feasibility(prob).status == "strictly_feasible"


def test_static_cone_beyond_margin_infeasible():
    prob = lmi.assemble_robust_stability(systems.ex1(25.0).uncertainty_channel(), mu.sector_class(1.0, 0.0))
    assert sdp.solve_feasibility(prob).status == "infeasible"


def test_zero_terminal_coupling_is_storage():
    parts = lmi.assemble_robust_stability(systems.ex1(5.0).uncertainty_channel(), mu.zames_falb(10.0), parts=True)
    coupling = next(b for b in parts.problem.blocks if b.name == "coupling")
    theta = np.random.default_rng(0).standard_normal(parts.problem.nparams)
    assert np.allclose(parts.problem.evaluate(coupling.expr, theta), parts.problem.evaluate(parts.x, theta))


def test_channel_mismatch():
    with pytest.raises(DimensionError):
        lmi.assemble_robust_stability(StateSpace.gain(np.eye(2)), mu.sector_class(1.0, 0.0))


def test_ex1_amplitude_bound():
    res = analysis.robust_performance(systems.ex1(5.0), mu.zames_falb(10.0))
    assert res.verdict == "robust_performance"
    assert np.isclose(res.bound, np.sqrt(np.trace(res.diagnostics["ellipsoid_y"])))
    assert res.bound >= 5.0 / np.sqrt(12.0)


def test_dropping_disturbance_columns():
    plant4 = systems.ers(0.9)
    mclass = mu.repeated_dynamic(systems.ers_basis(), systems.UNIT_DISK)
    perf = lmi.assemble_robust_performance(plant4, mclass, lmi.PerformanceSpec.amplitude(1, 1), parts=True)
    stab = lmi.assemble_robust_stability(plant4.uncertainty_channel(), mclass, parts=True)
    rng = np.random.default_rng(1)
    vals = {v.name: v.matrix(rng.standard_normal(v.nparams)) for v in perf.problem.variables}
    pp, sp = perf.problem, stab.problem
    full = next(b for b in pp.blocks if b.name == "filtered_performance").expr
    reduced = next(b for b in sp.blocks if b.name == "filtered_dissipation").expr
    keep = np.arange(stab.filtered.n + plant4.nw)
    sliced = pp.evaluate(full, pp.theta_from_assignment(vals))[np.ix_(keep, keep)]
    direct = sp.evaluate(reduced, sp.theta_from_assignment({k: vals[k] for k in ("M", "K", "X")}))
    assert np.allclose(sliced, direct)
    p_val, x_val = pp.evaluate(perf.p, pp.theta_from_assignment(vals)), vals["X"]
    assert np.allclose(lmi.stability_block_from_performance(plant4, mclass, p_val, x_val), direct)


def test_performance_spec_requires_psd_qp():
    with pytest.raises(ValueError, match="positive semidefinite"):
        lmi.PerformanceSpec(np.diag([-1.0, -1.0]), 1)


def _no_uncertainty(sys):
    plant4 = PartitionedPlant(sys, nw=0, nd=sys.inputs, nz=0, ne=sys.outputs)
    return plant4, mu.static_class(mu.scaled_cone(np.zeros((0, 0))), 0, 0)


def _well_conditioned(a, b, c):
    """Rescale the state so |B| = |C| and the output so the H-inf norm is 1.

    The strictness margin is 1e-7*(1 + largest constant entry), so a 0.5% gap is
    only resolvable when neither tiny gains nor lopsided realizations dominate.
    """
    s = np.sqrt(np.linalg.norm(c) / np.linalg.norm(b))
    sys = StateSpace(a, s * b, c / s, np.zeros((c.shape[0], b.shape[1])))
    return StateSpace(a, sys.b, sys.c / hinf_hamiltonian(sys), sys.d)


def test_gain_resolution_limited_by_conditioning():
    a, b, c = np.array([[-1.016]]), np.array([[-8.05e-4]]), np.array([[-1.131]])
    raw = StateSpace(a, b, c, np.zeros((1, 1)))
    lopsided = StateSpace(a, b, c / hinf_hamiltonian(raw), raw.d)
    for sys, expect in ((raw, False), (lopsided, False), (_well_conditioned(a, b, c), True)):
        spec = lmi.PerformanceSpec.energy_gain(1, 1, 1.005 * hinf_hamiltonian(sys))
        assert analysis.robust_performance(*_no_uncertainty(sys), spec, invariance=False).ok is expect


@given(seeds, st.integers(1, 4))
def test_energy_gain_matches_hinf(seed, n):
    rng = np.random.default_rng(seed)
    sys = _well_conditioned(hurwitz_matrix(rng, n), rng.standard_normal((n, 1)), rng.standard_normal((1, n)))
    norm = hinf_hamiltonian(sys)
    plant4, mclass = _no_uncertainty(sys)
    for factor, expect in ((1.005, True), (0.995, False)):
        spec = lmi.PerformanceSpec.energy_gain(1, 1, factor * norm)
        res = analysis.robust_performance(plant4, mclass, spec, invariance=False)
        assert res.ok is expect


def test_performance_solution_certifies_stability():
    plant4 = systems.ex1(10.0)
    mclass = mu.zames_falb(10.0)
    res = analysis.robust_performance(plant4, mclass)
    stab = lmi.stability_block_from_performance(plant4, mclass, res.chosen_p, res.storage_x)
    assert matops.min_eig(stab) >= 0.0


@given(seeds)
def test_blocks_symmetric_and_affine(seed):
    rng = np.random.default_rng(seed)
    prob = lmi.assemble_robust_performance(systems.ers(0.9), mu.repeated_dynamic(systems.ers_basis(), systems.UNIT_DISK),
                                           lmi.PerformanceSpec.amplitude(1, 1))
    t1, t2 = rng.standard_normal((2, prob.nparams))
    zero = prob.block_values(np.zeros(prob.nparams))
    for b, v1, v2, v12, c in zip(prob.blocks, prob.block_values(t1), prob.block_values(t2),
                                 prob.block_values(t1 + t2), zero):
        raw = b.expr.value(prob.split(t1))
        assert np.max(np.abs(raw - raw.T)) <= 1e-12 * (1 + np.max(np.abs(raw)))
        assert np.allclose(v12, v1 + v2 - c, atol=1e-10)


@given(seeds, st.integers(1, 4), st.integers(1, 2), st.integers(1, 2))
def test_feasible_storage_is_positive(seed, n, m, k):
    # the supply is negative on (0, u), so a strict certificate forces X > 0
    rng = np.random.default_rng(seed)
    sys = StateSpace(hurwitz_matrix(rng, n), rng.standard_normal((n, m)), rng.standard_normal((k, n)),
                     0.3 * rng.standard_normal((k, m)))
    gamma = 1.1 * max(hinf_grid(sys), 1e-3)
    prob = lmi.assemble_dissipation(sys, mu.bounded_real(k, m, gamma).p)
    out = sdp.solve_feasibility(prob)
    assert out.status == "strictly_feasible"
    assert matops.min_eig(out.assignment["X"]) > 0


def test_terminal_coupling_and_hurwitz():
    # positive coupled storage goes with Hurwitz plant and filter
    mclass = mu.repeated_dynamic(systems.ers_basis(), systems.UNIT_DISK)
    res = analysis.robust_stability(systems.ers(0.95).uncertainty_channel(), mclass)
    assert res.verdict == "robustly_stable"
    x = res.storage_x.copy()
    npsi = mclass.psi.n
    x[:npsi, :npsi] += res.terminal_z
    assert matops.min_eig(x) > 0
    assert is_hurwitz(systems.ers(0.95).a) and is_hurwitz(mclass.psi)


def test_problem_rejects_foreign_variables():
    other = lmi.LmiProblem()
    x = other.variable("X", 2)
    prob = lmi.LmiProblem()
    with pytest.raises(ValueError, match="undeclared"):
        prob.add_lmi(x, "foreign")
    with pytest.raises(ValueError, match="duplicate"):
        other.variable("X", 1)
