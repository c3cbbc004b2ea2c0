import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iqcrobust import analysis, lmi, lti, matops, sim, systems
from iqcrobust import multiplier as mu
from iqcrobust.experiments import random_are_instance
from iqcrobust.lti import StateSpace
from strategies import hurwitz_matrix, seeds

P01 = mu.sector(1.0, 0.0)
# Re G(iw) peaks at w^2 = 2 + 3 sqrt(2) with value alpha * PEAK
W_PEAK = np.sqrt(2 + 3 * np.sqrt(2))
PEAK = (W_PEAK**2 - 2) / ((1 + W_PEAK**2) * (4 + W_PEAK**2))
STATIC_MARGIN = 1 / PEAK


def g_alpha(alpha):
    return systems.ex1(alpha).uncertainty_channel()


def test_analytic_margin_value():
    assert abs(STATIC_MARGIN - 17.485) < 0.01


def test_fdi_holds_inside_margin():
    assert analysis.fdi_grid_check(g_alpha(10.0), P01).holds


def test_fdi_fails_beyond_margin_at_peak():
    res = analysis.fdi_grid_check(g_alpha(20.0), P01)
    assert not res.holds
    assert abs(res.argmin_omega - W_PEAK) < 1e-3
    # margin is 2 - 2 Re G at the peak
    assert np.isclose(res.min_margin, 2 - 2 * 20.0 * PEAK, atol=1e-8)


@given(seeds)
def test_negative_identity_always_holds(seed):
    rng = np.random.default_rng(seed)
    sys = StateSpace(hurwitz_matrix(rng, 3), rng.standard_normal((3, 2)), rng.standard_normal((2, 3)),
                     rng.standard_normal((2, 2)))
    assert analysis.fdi_grid_check(sys, -np.eye(4)).holds


def test_fdi_rejects_axis_poles():
    osc = StateSpace([[0.0, 1.0], [-1.0, 0.0]], [[0.0], [1.0]], [[1.0, 0.0]], [[0.0]])
    with pytest.raises(lti.PoleOnAxisError):
        analysis.fdi_grid_check(osc, P01)


def _random_stable(rng, n=3, m=2, k=2):
    return StateSpace(hurwitz_matrix(rng, n), rng.standard_normal((n, m)), rng.standard_normal((k, n)),
                      0.3 * rng.standard_normal((k, m)))


def test_kyp_bounded_real_around_norm(rng):
    sys = _random_stable(rng)
    norm = sim.hinf_norm_grid(sys, np.concatenate([[0.0], np.logspace(-3, 3, 20000)]))
    above = analysis.kyp_equivalence(sys, mu.bounded_real(2, 2, 1.01 * norm))
    below = analysis.kyp_equivalence(sys, mu.bounded_real(2, 2, 0.99 * norm))
    assert above.fdi.holds and above.lmi.status == "strictly_feasible" and above.agree
    assert not below.fdi.holds and below.lmi.status == "infeasible" and below.agree


@settings(max_examples=15)
@given(seeds, st.integers(1, 4), st.integers(1, 2), st.integers(1, 2))
def test_kyp_agreement_random(seed, n, m, k):
    rng = np.random.default_rng(seed)
    sys = _random_stable(rng, n, m, k)
    h = rng.standard_normal((k + m, k + m))
    p = h + h.T
    p[k:, k:] -= rng.uniform(0, 8) * np.eye(m)
    rep = analysis.kyp_equivalence(sys, p)
    assert not rep.hard_failure


def test_kyp_flags_uncontrollable_nonstrict():
    sys = StateSpace([[-1.0, 0.0], [0.0, -2.0]], [[1.0], [0.0]], [[1.0, 1.0]], [[0.0]])
    rep = analysis.kyp_equivalence(sys, mu.bounded_real(1, 1, 2.0), strict=False)
    assert not rep.hypothesis_ok and not rep.hard_failure


def test_circle_inside_and_outside_margin():
    assert analysis.circle_test(g_alpha(10.0), 1.0, 0.0).verdict == "robustly_stable"
    assert analysis.circle_test(g_alpha(20.0), 1.0, 0.0).verdict == "inconclusive"


def test_circle_zero_sector_is_hurwitz_check(rng):
    res = analysis.circle_test(_random_stable(rng, 3, 1, 1), 0.0, 0.0)
    assert res.verdict == "robustly_stable"
    assert matops.min_eig(res.storage_x) > 0


def test_circle_nominal_checks():
    # a nominal gain outside the sector and an unstable nominal loop are both reported
    bad = analysis.circle_test(g_alpha(10.0), 1.0, 0.0, delta0=2.0)
    assert bad.verdict == "inconclusive" and "sector" in bad.diagnostics["reason"]
    unstable = StateSpace([[1.0]], [[1.0]], [[1.0]], [[0.0]])
    res = analysis.circle_test(unstable, 1.0, 0.0)
    assert "Hurwitz" in res.diagnostics["reason"]
    # every gain in [-3, -1.5] stabilizes it; -1 would leave a pole at 0
    assert analysis.circle_test(unstable, -1.5, -3.0, delta0=-2.0).verdict == "robustly_stable"
    assert analysis.circle_test(unstable, -1.0, -3.0, delta0=-2.0).verdict == "inconclusive"


def test_zames_falb_beats_static_at_twenty():
    assert analysis.robust_stability(g_alpha(20.0), mu.sector_class(1.0, 0.0)).verdict == "inconclusive"
    res = analysis.robust_stability(g_alpha(20.0), mu.zames_falb(10.0))
    assert res.verdict == "robustly_stable"
    assert res.diagnostics["replay_passed"]


def test_no_channels_reduces_to_hurwitz():
    sys = StateSpace([[-1.0]], np.zeros((1, 0)), np.zeros((0, 1)), np.zeros((0, 0)))
    assert analysis.robust_stability(sys, mu.zames_falb(1.0)).verdict == "robustly_stable"
    unstable = StateSpace([[1.0]], np.zeros((1, 0)), np.zeros((0, 1)), np.zeros((0, 0)))
    assert analysis.robust_stability(unstable, mu.zames_falb(1.0)).verdict == "inconclusive"


def test_ers_dynamic_stable():
    mclass = mu.repeated_dynamic(systems.ers_basis(), systems.UNIT_DISK)
    res = analysis.robust_stability(systems.ers(0.95).uncertainty_channel(), mclass)
    assert res.verdict == "robustly_stable"
    static = mu.static_class(mu.scaled_cone(systems.UNIT_DISK), 1, 1)
    assert analysis.robust_stability(systems.ers(0.95).uncertainty_channel(), static).ok


def test_performance_ordering_at_five():
    plant4 = systems.ex1(5.0)
    b_static = analysis.robust_performance(plant4, mu.sector_class(1.0, 0.0)).bound
    b10 = analysis.robust_performance(plant4, mu.zames_falb(10.0)).bound
    b100 = analysis.robust_performance(plant4, mu.zames_falb(100.0)).bound
    assert abs(b_static - 1.566432192) < 1e-6
    assert b10 <= b_static * (1 + 1e-6) and b100 <= b10 * (1 + 1e-6)
    assert min(b_static, b10, b100) >= 5.0 / np.sqrt(12.0)


def test_nominal_bound_gramian():
    assert np.isclose(systems.nominal_peak_bound(systems.ex1(12.0)), 12.0 / np.sqrt(12.0))


def test_performance_reports_ellipsoid():
    res = analysis.robust_performance(systems.ers(0.9), mu.repeated_dynamic(systems.ers_basis(), systems.UNIT_DISK))
    assert res.verdict == "robust_performance"
    assert res.diagnostics["e_min_eig"] > 0 and res.diagnostics["containment_margin"] >= 0
    assert res.diagnostics["replay_passed"]


def test_restricted_class_is_more_conservative():
    plant4 = systems.ers(0.94)
    free = analysis.robust_performance(plant4, mu.repeated_dynamic(systems.ers_basis(), systems.UNIT_DISK))
    fixed = analysis.robust_performance(
        plant4, mu.repeated_dynamic(systems.ers_basis(), systems.UNIT_DISK, restricted=True))
    assert free.bound <= fixed.bound * (1 + 1e-6)


def test_static_margin_matches_analytic():
    res = analysis.stability_margin(g_alpha, mu.sector_class(1.0, 0.0), 5.0, 50.0)
    assert abs(res.value - STATIC_MARGIN) < 0.05 and not res.saturated


def test_zames_falb_margin_exceeds_static():
    res = analysis.stability_margin(g_alpha, mu.zames_falb(10.0), 5.0, 50.0)
    assert res.value > STATIC_MARGIN + 2


def test_margin_contract():
    sat = analysis.stability_margin(g_alpha, mu.sector_class(1.0, 0.0), 5.0, 10.0)
    assert sat.saturated and sat.value == 10.0
    with pytest.raises(analysis.MarginError):
        analysis.stability_margin(g_alpha, mu.sector_class(1.0, 0.0), 20.0, 50.0)


def test_margin_reports_non_monotone():
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        res = analysis.stability_margin(None, None, 0.0, 10.0, tol=0.5, feasible=lambda v: v < 3 or 6 < v < 8)
    assert res.value < 3
    assert res.warnings and any(issubclass(w.category, analysis.NonMonotoneWarning) for w in caught)


def test_terminal_cost_trivial_filter():
    assert analysis.stabilizing_terminal_cost(StateSpace.gain(np.eye(2)), np.diag([1.0, -1.0])).shape == (0, 0)


@given(seeds)
def test_terminal_cost_residual(seed):
    psi, m = random_are_instance(np.random.default_rng(seed))
    z = analysis.stabilizing_terminal_cost(psi, m)
    a, b = psi.a, psi.b
    q, s, r = -psi.c.T @ m @ psi.c, -psi.c.T @ m @ psi.d, psi.d.T @ m @ psi.d
    zb = z @ b + s
    res = a.T @ z + z @ a + q + zb @ np.linalg.solve(r, zb.T)
    assert np.max(np.abs(res)) <= 1e-8 * (1 + np.max(np.abs(z)))
    closed = a + b @ np.linalg.solve(r, b.T @ z + s.T)
    assert np.max(np.linalg.eigvals(closed).real) < 0


def test_ers_terminal_cost_against_riccati():
    mclass = mu.repeated_dynamic(systems.ers_basis(), systems.UNIT_DISK)
    res = analysis.robust_performance(systems.ers(0.9), mclass)
    m, k = res.assignment["M"], res.assignment["K"]
    cmp = analysis.compare_terminal_cost(systems.ers_basis(), systems.UNIT_DISK, m, k)
    # the Riccati solution for diag(psi, psi) and P0 kron M is P0 kron K_are
    z_are = analysis.stabilizing_terminal_cost(mclass.psi, np.kron(systems.UNIT_DISK, m))
    assert np.allclose(z_are, np.kron(systems.UNIT_DISK, cmp.k_are), atol=1e-8 * cmp.scale)
    # LMI terminal costs dominate the Riccati one at the basis level
    assert cmp.k_gap_min_eig >= -1e-6 * cmp.scale
    assert np.isclose(cmp.literal_min_eig, -np.max(np.linalg.eigvalsh(k - cmp.k_are)), atol=1e-6 * cmp.scale)


def test_certificate_replay_independent():
    plant4 = systems.ex1(10.0)
    mclass = mu.zames_falb(10.0)
    res = analysis.robust_performance(plant4, mclass)
    prob = lmi.assemble_robust_performance(plant4, mclass, lmi.PerformanceSpec.amplitude(1, 1))
    theta = prob.theta_from_assignment(res.assignment)
    for val in prob.block_values(theta):
        assert np.min(np.linalg.eigvalsh(val)) >= -1e-8 * prob.scale
