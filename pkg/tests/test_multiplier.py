import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import quad
from scipy.linalg import block_diag

from iqcrobust import lti, matops, sim, systems
from iqcrobust.experiments import ers_terminal_certificate
from iqcrobust import multiplier as mu
from iqcrobust.lmi import LmiProblem
from iqcrobust.lti import StateSpace
from strategies import seeds


def test_sector_examples():
    assert np.array_equal(mu.sector(1.0, 0.0).p, [[0, 1], [1, -2]])
    assert np.array_equal(mu.sector(0.0, 0.0).p, [[0, 0], [0, -2]])
    assert np.array_equal(mu.sector(1.0, -1.0).p, [[2, 0], [0, -2]])


def test_sector_shape_mismatch():
    with pytest.raises(lti.DimensionError):
        mu.sector(np.ones((1, 2)), np.ones((2, 1)))


@given(seeds, st.floats(-2, 2), st.floats(0, 3))
def test_sector_supply_sign(seed, lo, width):
    # w between lo*z and (lo+width)*z gives a nonnegative supply
    rng = np.random.default_rng(seed)
    srm = mu.sector(lo + width, lo)
    z = rng.standard_normal()
    w = rng.uniform(lo, lo + width) * z
    assert srm.supply(z, w) >= -1e-12 * (1 + z * z * (1 + abs(lo) + width) ** 2)


def test_supply_rate_partition():
    srm = mu.bounded_real(2, 1, gamma=3.0)
    assert np.array_equal(srm.q, np.eye(2)) and srm.s.shape == (2, 1) and srm.r[0, 0] == -9.0
    with pytest.raises(lti.DimensionError):
        mu.SupplyRateMatrix(np.eye(3), 1, 1)
    with pytest.raises(matops.SymmetryError):
        mu.SupplyRateMatrix(np.array([[0.0, 1.0], [0.0, 0.0]]), 1, 1)


def test_p1_single_generator():
    cone = mu.repeated_sat_cone("P1", 1)
    assert np.array_equal(cone.evaluate({"lam0": [[1.0]]}), mu.sector(1.0, 0.0).p)


def test_p2_vertex_membership():
    assert mu.vertex_member(mu.sector(1.0, 0.0).p, 1)
    assert not mu.vertex_member(np.diag([1.0, 1.0]), 1)
    cone = mu.repeated_sat_cone("P2", 1)
    margins = cone.side_margins({"P": mu.sector(1.0, 0.0).p})
    assert all(lam >= 0 for _, lam, _ in margins)


def test_p2_vertex_count():
    prob = LmiProblem()
    mu.repeated_sat_cone("P2", 2).instantiate(prob)
    assert sum(b.name.startswith("vertex") for b in prob.blocks) == 4


def test_p2_channel_limit():
    with pytest.raises(ValueError, match="vertex"):
        mu.repeated_sat_cone("P2", mu.MAX_VERTEX_CHANNELS + 1)


def test_p1_inside_p2(rng):
    m = 3
    cone = mu.repeated_sat_cone("P1", m)
    for _ in range(1000):
        lam = rng.exponential(size=m)
        p = cone.evaluate({f"lam{j}": [[lam[j]]] for j in range(m)})
        assert mu.vertex_member(p, m, tol=1e-12)


def test_zames_falb_realization():
    mc = mu.zames_falb(10.0)
    psi = mc.psi
    assert (psi.n, psi.outputs, psi.inputs) == (1, 4, 2)
    assert psi.a[0, 0] == -10.0
    # third output at DC: 1 - a/(0 + a) on the z channel
    assert np.isclose(lti.freq_response(psi, 0.0).value[2, 0], 0.0)
    assert mu.zames_falb(10.0, combine_static=False).psi.outputs == 2
    with pytest.raises(ValueError):
        mu.zames_falb(0.0)


def test_zames_falb_kernel_mass():
    a = 7.0
    mass, _ = quad(lambda t: a * np.exp(-a * t), 0, np.inf)
    assert np.isclose(mass, 1.0)


def test_parametric_examples():
    cone = mu.parametric_cone("time_varying", k=2, r=1.0)
    p = cone.evaluate({"Q": np.eye(2), "S": np.zeros((2, 2))})
    assert np.array_equal(p, np.diag([1.0, 1.0, -1.0, -1.0]))
    p = mu.parametric_cone("constant_real", k=1).evaluate({"lam": [[1.0]]})
    assert np.array_equal(p, np.diag([1.0, -1.0]))


@given(seeds, st.integers(1, 3), st.floats(0.1, 5))
def test_time_varying_cone_is_valid(seed, k, r):
    rng = np.random.default_rng(seed)
    h = rng.standard_normal((k, k))
    s = rng.standard_normal((k, k))
    cone = mu.parametric_cone("time_varying", k=k, r=r)
    p = cone.evaluate({"Q": h @ h.T, "S": s - s.T})
    delta = rng.uniform(-r, r)
    stack = np.vstack([np.eye(k), delta * np.eye(k)])  # w = delta z
    assert matops.min_eig(stack.T @ p @ stack) >= -1e-9 * (1 + np.max(np.abs(p)))


def test_repeated_dynamic_static_basis():
    mc = mu.repeated_dynamic(StateSpace.gain([[1.0]]), systems.UNIT_DISK)
    p, z = mc.evaluate({"M": [[2.0]]})
    assert np.array_equal(p, np.diag([2.0, -2.0]))
    assert z.shape == (0, 0)


def test_repeated_dynamic_dimensions():
    mc = mu.repeated_dynamic(systems.ers_basis(), systems.UNIT_DISK)
    assert mc.psi.n == 4 and mc.cone.size == 4
    p, z = mc.evaluate({"M": np.eye(2), "K": np.eye(2)})
    assert p.shape == (4, 4) and z.shape == (4, 4)


def test_repeated_dynamic_interior_point():
    basis = systems.ers_basis()
    mc = mu.repeated_dynamic(basis, systems.UNIT_DISK)
    margins = mc.cone.side_margins(mc.cone.interior)
    assert all(lam > 0 for _, lam, _ in margins)


def test_restricted_variant_drops_terminal():
    mc = mu.repeated_dynamic(systems.ers_basis(), systems.UNIT_DISK, restricted=True)
    assert [s.name for s in mc.cone.variables] == ["M"]
    _, z = mc.evaluate({"M": np.eye(2)})
    assert not np.any(z)


def test_repeated_dynamic_preconditions():
    unstable = StateSpace([[1.0]], [[1.0]], [[1.0]], [[1.0]])
    with pytest.raises(ValueError, match="Hurwitz"):
        mu.repeated_dynamic(unstable, systems.UNIT_DISK)
    with pytest.raises(ValueError, match="nonpositive"):
        mu.repeated_dynamic(systems.ers_basis(), np.eye(2))


def test_combine_single_is_identity():
    mc = mu.zames_falb(5.0)
    assert mu.combine([mc]) is mc


def test_combine_structured_example():
    a = 4.0
    parts = [mu.parametric_class("time_varying", k=2), mu.parametric_class("constant_real"), mu.zames_falb(a)]
    mc = mu.combine(parts)
    assert (mc.k, mc.m) == (4, 4)
    assert mc.psi.outputs == 10 and mc.psi.n == 1
    w = 1.3
    resp = lti.freq_response(mc.psi, w).value
    row = np.zeros(8, complex)
    row[3] = 1 - a / (1j * w + a)  # z of the third block
    assert np.allclose(resp[8], row)
    assert np.allclose(resp[:4, :], np.eye(8)[[0, 1, 4, 5]])


def test_combined_terminal_blocks(rng):
    basis = systems.ers_basis()
    parts = [mu.repeated_dynamic(basis, systems.UNIT_DISK), mu.zames_falb(3.0)]
    mc = mu.combine(parts)
    k = rng.standard_normal((2, 2))
    vals = {"b0_M": np.eye(2), "b0_K": k + k.T, "b1_lam_sector": [[1.0]], "b1_lam_zf": [[2.0]]}
    _, z = mc.evaluate(vals)
    za = parts[0].evaluate({"M": np.eye(2), "K": k + k.T})[1]
    assert np.array_equal(z, block_diag(za, np.zeros((1, 1))))


@pytest.mark.parametrize("make", [
    lambda: mu.sector_class(1.0, 0.0),
    lambda: mu.zames_falb(10.0),
    lambda: mu.repeated_dynamic(systems.ers_basis(), systems.UNIT_DISK),
    lambda: mu.combine([mu.parametric_class("time_varying", k=2), mu.zames_falb(1.0)]),
])
def test_filters_are_hurwitz(make):
    assert lti.is_hurwitz(make().psi)


def _static_supply(p, z, w):
    v = np.concatenate([z, w], axis=-1)
    return np.einsum("...i,ij,...j->...", v, p, v)


def test_sampled_iqc_static_cones(rng):
    """Pointwise supply of the static classes for admissible samples."""
    t = sim.time_grid(30.0, 0.01)
    u = sim.make_unit_energy_disturbance(1, horizon=30.0, runs=20)
    z = np.moveaxis(u.sample(t), 0, 1)
    psec = mu.sector(1.0, 0.0).p
    w = np.stack([sim.random_sector_map(rng).phi(z[r]) for r in range(20)])
    assert np.min(_static_supply(psec, z, w)) >= -1e-12
    pb = mu.parametric_cone("constant_real").evaluate({"lam": [[1.0]]})
    w = rng.uniform(-1, 1, (20, 1, 1)) * z
    assert np.min(_static_supply(pb, z, w)) >= -1e-12
    r = 2.0
    h = rng.standard_normal((1, 1))
    pa = mu.parametric_cone("time_varying", r=r).evaluate({"Q": h @ h.T, "S": [[0.0]]})
    w = r * np.sin(rng.uniform(0, 5, (20, 1, 1)) * t[None, :, None]) * z
    assert np.min(_static_supply(pa, z, w)) >= -1e-12


def test_sampled_iqc_zames_falb_saturation():
    mc = mu.zames_falb(10.0)
    p, zt = mc.evaluate({"lam_sector": [[0.0]], "lam_zf": [[1.0]]})
    u = sim.make_unit_energy_disturbance(3, horizon=30.0, runs=20).scaled(5.0)
    traj = sim.drive_uncertainty(sim.saturation(0.5), u, mc.psi, horizon=30.0)
    slack, _, _ = sim.verify_iqc(traj, p, zt)
    assert np.min(slack) >= -1e-6


def test_sampled_iqc_repeated_dynamic():
    mc, res = ers_terminal_certificate(0.94)
    p, zt = mc.evaluate(mu.values_for(mc, res.assignment))
    rng = np.random.default_rng(5)
    deltas = [sim.random_stable_delta(rng) for _ in range(4)]
    u = sim.make_unit_energy_disturbance(7, horizon=30.0, runs=20)
    traj = sim.drive_uncertainty([d for d in deltas for _ in range(5)], u, mc.psi, horizon=30.0)
    slack, _, energy = sim.verify_iqc(traj, p, zt)
    assert np.min(slack) >= -1e-6 * max(1.0, np.max(energy))


def test_feasible_lmik_gives_positive_fdi():
    mc, res = ers_terminal_certificate(0.94)
    basis = systems.ers_basis()
    m = res.assignment["M"]
    for w in np.concatenate([[0.0], np.logspace(-3, 3, 200), [np.inf]]):
        g = lti.freq_response(basis, w).value
        assert np.real(g.conj().T @ m @ g)[0, 0] > 0
