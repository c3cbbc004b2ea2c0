"""Time-domain oracle: batched RK4 simulation of uncertain loops and IQC checks.

Every routine works on a batch of runs at once; arrays carry the run index
first, so ``x`` has shape (runs, steps + 1, n).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.linalg import expm

from .lti import PartitionedPlant, StateSpace, is_hurwitz

STEP = 1e-3
HORIZON = 60.0
CHUNK = 1000  # time samples of a drive signal evaluated at once


class AlgebraicLoopError(ValueError):
    pass


# signals


class Signal:
    """Vector signal on [0, inf) evaluated for a batch: __call__(t) -> (runs, dim)."""

    runs: int
    dim: int

    def __call__(self, t: float) -> np.ndarray:
        raise NotImplementedError

    def sample(self, times) -> np.ndarray:
        """Values at several times, shape (len(times), runs, dim)."""
        return np.stack([self(t) for t in times])


@dataclass
class DampedSines(Signal):
    """Sum of exponentially damped sinusoids, one parameter set per run."""

    amp: np.ndarray  # (runs, dim, terms)
    decay: np.ndarray
    freq: np.ndarray
    phase: np.ndarray

    @property
    def runs(self):
        return self.amp.shape[0]

    @property
    def dim(self):
        return self.amp.shape[1]

    def __call__(self, t):
        return np.sum(self.amp * np.exp(-self.decay * t) * np.sin(self.freq * t + self.phase), axis=-1)

    def sample(self, times):
        tt = np.asarray(times, float)
        arg = np.exp(-self.decay[..., None] * tt) * np.sin(self.freq[..., None] * tt + self.phase[..., None])
        return np.moveaxis(np.einsum("rdk,rdkt->rdt", self.amp, arg), -1, 0)

    def scaled(self, factor) -> "DampedSines":
        factor = np.asarray(factor, float).reshape(-1, 1, 1)
        return DampedSines(self.amp * factor, self.decay, self.freq, self.phase)


@dataclass
class SampledSignal(Signal):
    """Piecewise-linear interpolation of samples (runs, len(t), dim); zero after the last sample."""

    t: np.ndarray
    values: np.ndarray

    @property
    def runs(self):
        return self.values.shape[0]

    @property
    def dim(self):
        return self.values.shape[2]

    def __call__(self, t):
        grid = self.t
        if t > grid[-1] + 1e-12 or t < grid[0]:
            return np.zeros((self.runs, self.dim))
        k = min(int(np.searchsorted(grid, t, side="right")) - 1, len(grid) - 2)
        k = max(k, 0)
        lam = (t - grid[k]) / (grid[k + 1] - grid[k])
        return (1 - lam) * self.values[:, k] + lam * self.values[:, k + 1]

    def sample(self, times):
        tt = np.asarray(times, float)
        flat = self.values.reshape(self.runs, len(self.t), -1)
        out = np.empty((len(tt), self.runs, self.dim))
        for r in range(self.runs):
            for i in range(self.dim):
                out[:, r, i] = np.interp(tt, self.t, flat[r, :, i], left=0.0, right=0.0)
        return out


@dataclass
class ZeroSignal(Signal):
    runs: int
    dim: int

    def __call__(self, t):
        return np.zeros((self.runs, self.dim))

    def sample(self, times):
        return np.zeros((len(times), self.runs, self.dim))


def stack_signals(signals) -> Signal:
    """Concatenate single-run signals of the same kind along the run axis."""
    signals = list(signals)
    if all(isinstance(s, DampedSines) for s in signals):
        return DampedSines(*(np.concatenate([getattr(s, f) for s in signals]) for f in ("amp", "decay", "freq", "phase")))
    if all(isinstance(s, SampledSignal) for s in signals) and all(np.array_equal(s.t, signals[0].t) for s in signals):
        return SampledSignal(signals[0].t, np.concatenate([s.values for s in signals]))
    return _Stacked(signals)


@dataclass
class _Stacked(Signal):
    parts: list

    @property
    def runs(self):
        return sum(p.runs for p in self.parts)

    @property
    def dim(self):
        return self.parts[0].dim

    def __call__(self, t):
        return np.concatenate([p(t) for p in self.parts])

    def sample(self, times):
        return np.concatenate([p.sample(times) for p in self.parts], axis=1)


def signal_energy(sig: Signal, horizon: float, step: float = STEP) -> np.ndarray:
    """Trapezoidal L2 norm squared on [0, horizon], per run."""
    t = time_grid(horizon, step)
    vals = np.concatenate([sig.sample(t[i : i + CHUNK]) for i in range(0, len(t), CHUNK)])
    vals = np.moveaxis(vals, 0, 1)
    return np.trapezoid(np.sum(vals**2, axis=-1), dx=step, axis=1)


def time_grid(horizon: float, step: float) -> np.ndarray:
    n = int(round(horizon / step))
    return np.arange(n + 1) * step


def make_unit_energy_disturbance(seed, horizon: float = HORIZON, dim: int = 1, terms: int = 8,
                                 step: float = STEP, runs: int = 1) -> DampedSines:
    """Random damped sinusoids rescaled to L2 norm 1 - 1e-9 on [0, horizon]."""
    rng = np.random.default_rng(seed)
    shape = (runs, dim, terms)
    while True:
        amp = rng.standard_normal(shape)
        decay = rng.uniform(0.05, 2.0, shape)
        freq = rng.uniform(0.0, 5.0, shape)
        phase = rng.uniform(0.0, 2 * np.pi, shape)
        sig = DampedSines(amp, decay, freq, phase)
        energy = signal_energy(sig, horizon, step)
        if np.all(energy > 1e-12):
            break
    return sig.scaled((1.0 - 1e-9) / np.sqrt(energy))


def worst_case_disturbance(a, b, c, t_peak: float, horizon: float = HORIZON, step: float = STEP) -> SampledSignal:
    """Unit-energy input on [0, t_peak] maximizing |c x(t_peak)| for x' = a x + b d.

    It is the time-reversed impulse response, d(t) = b^T e^{a^T (t_peak - t)} c^T,
    normalized; for several outputs the worst output direction is used.
    """
    a, b, c = (np.atleast_2d(np.asarray(m, float)) for m in (a, b, c))
    t = time_grid(t_peak, step)
    phi = expm(a.T * step)
    vals = np.empty((len(t), a.shape[0], c.shape[0]))
    cur = c.T.copy()
    for k in range(len(t) - 1, -1, -1):
        vals[k] = cur
        cur = phi @ cur
    resp = np.einsum("ni,tnk->tik", b, vals)  # (time, inputs, outputs)
    gram = np.einsum("tik,til->kl", resp, resp) * step
    w, v = np.linalg.eigh(gram)
    u = np.einsum("tik,k->ti", resp, v[:, -1])
    energy = np.trapezoid(np.sum(u**2, axis=1), dx=step)
    u = u * (1.0 - 1e-9) / np.sqrt(energy)
    return SampledSignal(t, u[None])


# uncertainty samples


@dataclass
class StaticMap:
    """Memoryless uncertainty w = phi(z), vectorized over runs: (runs, k) -> (runs, m)."""

    phi: Callable
    name: str = "static"
    params: dict = field(default_factory=dict)


def piecewise_linear(knots, slopes, name: str = "piecewise_linear") -> StaticMap:
    """phi(z) = int_0^z slope(s) ds, slopes[j] on the j-th interval cut by sorted ``knots``."""
    knots = np.sort(np.asarray(knots, float))
    slopes = np.asarray(slopes, float)
    if len(slopes) != len(knots) + 1:
        raise ValueError("need one slope per interval")
    edges = np.concatenate([[-np.inf], knots, [np.inf]])

    def phi(z):
        z = np.asarray(z, float)
        out = np.zeros_like(z)
        for lo, hi, k in zip(edges[:-1], edges[1:], slopes):
            out += k * (np.clip(z, lo, hi) - np.clip(0.0, lo, hi))
        return out

    return StaticMap(phi, name, {"knots": knots.tolist(), "slopes": slopes.tolist()})


def saturation(level: float = 1.0) -> StaticMap:
    return piecewise_linear([-level, level], [0.0, 1.0, 0.0], f"sat({level:g})")


def scaled_saturation(gain: float, level: float = 1.0) -> StaticMap:
    """gain * sat(z) with 0 <= gain <= 1."""
    return piecewise_linear([-level, level], [0.0, gain, 0.0], f"{gain:g}*sat({level:g})")


def slope_map(rng, pieces: int = 4, zmax: float = 5.0) -> StaticMap:
    """Random monotone map with piecewise-constant slopes in [0, 1]."""
    return piecewise_linear(rng.uniform(-zmax, zmax, pieces - 1), rng.uniform(0.0, 1.0, pieces), "random_slopes")


def stack_maps(maps) -> StaticMap:
    """One scalar piecewise-linear map per run, applied row-wise to z of shape (runs, 1)."""
    maps = list(maps)
    width = max(len(m.params["slopes"]) for m in maps)
    lo = np.full((len(maps), width), 0.0)
    hi = np.full((len(maps), width), 0.0)
    k = np.zeros((len(maps), width))
    for r, m in enumerate(maps):
        edges = np.concatenate([[-np.inf], m.params["knots"], [np.inf]])
        n = len(m.params["slopes"])
        lo[r, :n], hi[r, :n], k[r, :n] = edges[:-1], edges[1:], m.params["slopes"]
    offset = np.clip(0.0, lo, hi)

    def phi(z):
        z = np.asarray(z, float)
        return np.sum(k * (np.clip(z, lo, hi) - offset), axis=1, keepdims=True)

    return StaticMap(phi, "stacked", {"names": [m.name for m in maps]})


def random_sector_map(rng) -> StaticMap:
    """Saturation, a scaled saturation or a random slope map, with equal odds."""
    pick = rng.integers(3)
    if pick == 0:
        return saturation(rng.uniform(0.2, 2.0))
    if pick == 1:
        return scaled_saturation(rng.uniform(0.0, 1.0), rng.uniform(0.2, 2.0))
    return slope_map(rng)


@dataclass
class DynamicUncertainty:
    """Stable LTI uncertainty w = delta z."""

    sys: StateSpace
    name: str = "dynamic"


def hinf_norm_grid(sys: StateSpace, omegas=None) -> float:
    """Peak gain over a frequency grid (and at infinity), evaluated in one batch."""
    omegas = np.concatenate([[0.0], np.logspace(-4, 4, 2000)]) if omegas is None else np.asarray(omegas, float)
    peak = np.linalg.norm(sys.d, 2)
    if sys.n:
        pencil = 1j * omegas[:, None, None] * np.eye(sys.n) - sys.a
        resp = sys.c @ np.linalg.solve(pencil, np.broadcast_to(sys.b, (len(omegas),) + sys.b.shape)) + sys.d
        peak = max(peak, np.max(np.linalg.norm(resp, 2, axis=(1, 2))))
    return float(peak)


def random_stable_delta(rng, gain: float | None = None, bound: float = 1.0, max_tries: int = 200) -> DynamicUncertainty:
    """Random first/second-order stable SISO system.

    With ``gain`` the system is rescaled to that peak gain; otherwise it is
    drawn and rejected unless its grid peak gain is below ``bound``.
    """
    for _ in range(max_tries):
        if rng.uniform() < 0.5:
            p = rng.uniform(0.2, 5.0)
            z = rng.uniform(-5.0, 5.0)
            # (s - z)/(s + p) style, all-pass when z = p
            sys = StateSpace([[-p]], [[1.0]], [[-(z + p)]], [[1.0]])
        else:
            wn = rng.uniform(0.3, 4.0)
            zeta = rng.uniform(0.1, 1.0)
            b1, b0 = rng.uniform(-2 * wn, 2 * wn), rng.uniform(-wn**2, wn**2)
            sys = StateSpace([[0.0, 1.0], [-(wn**2), -2 * zeta * wn]], [[0.0], [1.0]],
                             [[b0 - wn**2, b1 - 2 * zeta * wn]], [[1.0]])
        peak = hinf_norm_grid(sys)
        if peak < 1e-9 or not is_hurwitz(sys):
            continue
        if gain is not None:
            s = gain / peak
            return DynamicUncertainty(StateSpace(sys.a, sys.b, s * sys.c, s * sys.d), f"delta(gain={gain:g})")
        scale = rng.uniform(0.3, 0.999) * bound / peak
        cand = StateSpace(sys.a, sys.b, scale * sys.c, scale * sys.d)
        if hinf_norm_grid(cand) < bound:
            return DynamicUncertainty(cand, "delta")
    raise RuntimeError("could not draw an admissible uncertainty")


# trajectories


@dataclass
class LoopTrajectory:
    t: np.ndarray
    x: np.ndarray
    w: np.ndarray
    z: np.ndarray
    d: np.ndarray
    e: np.ndarray
    xi: np.ndarray | None = None
    v: np.ndarray | None = None

    @property
    def runs(self) -> int:
        return self.z.shape[0]

    @property
    def step(self) -> float:
        return float(self.t[1] - self.t[0])

    def to_csv(self, path, run: int = 0):
        cols = [("t", self.t[:, None])]
        for name in ("x", "z", "w", "d", "e"):
            arr = getattr(self, name)[run]
            cols += [(f"{name}{i}", arr[:, i : i + 1]) for i in range(arr.shape[1])]
        header = ",".join(n for n, _ in cols)
        np.savetxt(path, np.hstack([c for _, c in cols]), delimiter=",", header=header, comments="")


def _rk4(f, y0, t, step, drive: Signal):
    """Classical RK4 over grid ``t``; f(y, u) returns (dy, outputs) for drive value u.

    The drive is sampled on the half-step grid in chunks rather than per stage.
    """
    ys = np.empty((len(t),) + y0.shape)
    ys[0] = y0
    y = y0
    outs = []
    half = 0.5 * step
    for start in range(0, len(t) - 1, CHUNK):
        stop = min(start + CHUNK, len(t) - 1)
        tt = np.linspace(t[start], t[stop], 2 * (stop - start) + 1)
        u = drive.sample(tt)
        for j, k in enumerate(range(start, stop)):
            k1, o = f(y, u[2 * j])
            outs.append(o)
            k2, _ = f(y + half * k1, u[2 * j + 1])
            k3, _ = f(y + half * k2, u[2 * j + 1])
            k4, _ = f(y + step * k3, u[2 * j + 2])
            y = y + (step / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            ys[k + 1] = y
    outs.append(f(y, drive(t[-1]))[1])
    return ys, outs


def _batched_rk4(a, b, c, d, u: Signal, x0, t, step):
    """RK4 for x' = A_r x + B_r u, y = C_r x + D_r u with one matrix set per run.

    Matrices are stacked along a leading run axis; returns (x, y) with time first.
    """
    xs = np.empty((len(t),) + x0.shape)
    ys = np.empty((len(t), x0.shape[0], c.shape[1]))
    x = x0
    xs[0] = x0
    half = 0.5 * step

    def f(x, uv):
        return np.einsum("rij,rj->ri", a, x) + np.einsum("rij,rj->ri", b, uv)

    for start in range(0, len(t) - 1, CHUNK):
        stop = min(start + CHUNK, len(t) - 1)
        uu = u.sample(np.linspace(t[start], t[stop], 2 * (stop - start) + 1))
        for j, k in enumerate(range(start, stop)):
            k1 = f(x, uu[2 * j])
            k2 = f(x + half * k1, uu[2 * j + 1])
            k3 = f(x + half * k2, uu[2 * j + 1])
            k4 = f(x + step * k3, uu[2 * j + 2])
            x = x + (step / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            xs[k + 1] = x
    us = np.concatenate([u.sample(t[i : i + CHUNK]) for i in range(0, len(t), CHUNK)])
    ys = np.einsum("rij,trj->tri", c, xs) + np.einsum("rij,trj->tri", d, us)
    return xs, ys


def _stack_systems(systems, n: int):
    """Per-run (A, B, C, D), each padded to n states with decoupled stable modes."""
    out = [[], [], [], []]
    for sys in systems:
        pad = n - sys.n
        a = np.zeros((n, n))
        a[: sys.n, : sys.n] = sys.a
        a[sys.n :, sys.n :] = -np.eye(pad)
        b = np.zeros((n, sys.inputs))
        b[: sys.n] = sys.b
        c = np.zeros((sys.outputs, n))
        c[:, : sys.n] = sys.c
        for lst, m in zip(out, (a, b, c, sys.d)):
            lst.append(m)
    return [np.stack(lst) for lst in out]


def _with_filter(core: StateSpace, zw_rows: np.ndarray, psi: StateSpace | None) -> StateSpace:
    """Append filter states driven by the outputs ``zw_rows @ y`` of ``core``; add v as outputs."""
    if psi is None:
        return core
    cz, dz = zw_rows @ core.c, zw_rows @ core.d
    a = np.block([[core.a, np.zeros((core.n, psi.n))], [psi.b @ cz, psi.a]])
    b = np.vstack([core.b, psi.b @ dz])
    c = np.block([[core.c, np.zeros((core.outputs, psi.n))], [psi.d @ cz, psi.c]])
    d = np.vstack([core.d, psi.d @ dz])
    return StateSpace(a, b, c, d)


def lure_lti(plant4: PartitionedPlant, delta: StateSpace, psi: StateSpace | None = None) -> StateSpace:
    """Closed loop with an LTI uncertainty: input d, outputs (z, w, e[, v]), states (x, x_delta[, xi])."""
    nz, nw = plant4.nz, plant4.nw
    if (delta.inputs, delta.outputs) != (nz, nw):
        raise ValueError("uncertainty dimensions do not match the channels")
    loop = plant4.dzw @ delta.d
    if loop.size and np.max(np.abs(np.linalg.eigvals(loop))) >= 1:
        raise AlgebraicLoopError("algebraic loop D_zw D_delta is not contractive")
    inv = np.linalg.inv(np.eye(nz) - loop)
    n, nd = plant4.sys.n, delta.n
    # z = Zs s + Zd d and w = Ws s + Wd d over s = (x, x_delta)
    zs = inv @ np.hstack([plant4.cz, plant4.dzw @ delta.c])
    zd = inv @ plant4.dzd
    ws = np.hstack([np.zeros((nw, n)), delta.c]) + delta.d @ zs
    wd = delta.d @ zd
    a = np.block([[plant4.a, np.zeros((n, nd))], [np.zeros((nd, n)), delta.a]])
    a = a + np.vstack([plant4.bw @ ws, delta.b @ zs])
    b = np.vstack([plant4.bd + plant4.bw @ wd, delta.b @ zd])
    es = np.hstack([plant4.ce, np.zeros((plant4.ne, nd))]) + plant4.dew @ ws
    ed = plant4.ded + plant4.dew @ wd
    core = StateSpace(a, b, np.vstack([zs, ws, es]), np.vstack([zd, wd, ed]))
    return _with_filter(core, np.eye(nz + nw, core.outputs), psi)


def uncertainty_lti(delta: StateSpace, psi: StateSpace | None = None) -> StateSpace:
    """Open-loop uncertainty: input z, outputs (z, w[, v]), states (x_delta[, xi])."""
    k = delta.inputs
    core = StateSpace(delta.a, delta.b, np.vstack([np.zeros((k, delta.n)), delta.c]),
                      np.vstack([np.eye(k), delta.d]))
    return _with_filter(core, np.eye(core.outputs), psi)


def _per_run(uncertainty, runs: int) -> list:
    items = list(uncertainty) if isinstance(uncertainty, (list, tuple)) else [uncertainty]
    if len(items) == 1:
        items = items * runs
    if len(items) != runs:
        raise ValueError("need one uncertainty per run")
    return [u.sys if isinstance(u, DynamicUncertainty) else u for u in items]


def simulate_lure(
    plant4: PartitionedPlant,
    uncertainty,
    d: Signal | None = None,
    x0=None,
    horizon: float = HORIZON,
    step: float = STEP,
    psi: StateSpace | None = None,
    runs: int | None = None,
) -> LoopTrajectory:
    """Integrate the plant in feedback with a static map or stable LTI uncertainties.

    ``uncertainty`` is a StaticMap, a DynamicUncertainty, or a list with one
    DynamicUncertainty per run. ``d`` and ``x0`` may carry several runs; a
    filter ``psi`` driven by (z, w) is integrated alongside with zero initial state.
    """
    n, nw, nd, nz, ne = plant4.sys.n, plant4.nw, plant4.nd, plant4.nz, plant4.ne
    if runs is None:
        runs = d.runs if d is not None else (np.atleast_2d(x0).shape[0] if x0 is not None else 1)
    d = d or ZeroSignal(runs, nd)
    x0 = np.zeros((runs, n)) if x0 is None else np.broadcast_to(np.atleast_2d(np.asarray(x0, float)), (runs, n)).copy()
    t = time_grid(horizon, step)

    if not isinstance(uncertainty, StaticMap):
        loops = [lure_lti(plant4, ds, psi) for ds in _per_run(uncertainty, runs)]
        width = max(s.n for s in loops)
        mats = _stack_systems(loops, width)
        s0 = np.zeros((runs, width))
        s0[:, :n] = x0
        xs, ys = _batched_rk4(*mats, d, s0, t, step)
        xs, ys = np.moveaxis(xs, 0, 1), np.moveaxis(ys, 0, 1)
        us = np.moveaxis(np.concatenate([d.sample(t[i : i + CHUNK]) for i in range(0, len(t), CHUNK)]), 0, 1)
        traj = LoopTrajectory(t, xs[:, :, :n], ys[:, :, nz : nz + nw], ys[:, :, :nz], us,
                              ys[:, :, nz + nw : nz + nw + ne])
        if psi is not None:
            starts = [s.n - psi.n for s in loops]
            traj.xi = np.stack([xs[r, :, k : k + psi.n] for r, k in enumerate(starts)])
            traj.v = ys[:, :, nz + nw + ne :]
        return traj

    if np.any(plant4.dzw):
        raise AlgebraicLoopError("static uncertainty needs D_zw = 0")
    npsi = psi.n if psi is not None else 0
    a, bw, bd, cz, ce = plant4.a, plant4.bw, plant4.bd, plant4.cz, plant4.ce
    dzd, dew, ded = plant4.dzd, plant4.dew, plant4.ded

    def f(y, dv):
        x = y[:, :n]
        z = x @ cz.T + dv @ dzd.T
        w = uncertainty.phi(z)
        dy = x @ a.T + w @ bw.T + dv @ bd.T
        out = (z, w, dv, x @ ce.T + w @ dew.T + dv @ ded.T)
        if npsi:
            zw = np.hstack([z, w])
            xi = y[:, n:]
            dy = np.hstack([dy, xi @ psi.a.T + zw @ psi.b.T])
            out = out + (xi @ psi.c.T + zw @ psi.d.T,)
        return dy, out

    y0 = np.hstack([x0, np.zeros((runs, npsi))])
    ys, outs = _rk4(f, y0, t, step, d)
    stack = [np.stack(o, axis=1) for o in zip(*outs)]
    traj = LoopTrajectory(t, np.moveaxis(ys[:, :, :n], 0, 1), stack[1], stack[0], stack[2], stack[3])
    if npsi:
        traj.xi = np.moveaxis(ys[:, :, n:], 0, 1)
        traj.v = stack[4]
    return traj


def drive_uncertainty(uncertainty, z: Signal, psi: StateSpace, horizon: float = 30.0, step: float = STEP) -> LoopTrajectory:
    """Open-loop response w of uncertainties to inputs z, with the filter psi on (z, w).

    ``uncertainty`` is a StaticMap, a DynamicUncertainty, or one DynamicUncertainty per run.
    """
    runs, k = z.runs, z.dim
    t = time_grid(horizon, step)
    empty = np.zeros((runs, len(t), 0))

    if not isinstance(uncertainty, StaticMap):
        maps = [uncertainty_lti(ds, psi) for ds in _per_run(uncertainty, runs)]
        width = max(s.n for s in maps)
        xs, ys = _batched_rk4(*_stack_systems(maps, width), z, np.zeros((runs, width)), t, step)
        xs, ys = np.moveaxis(xs, 0, 1), np.moveaxis(ys, 0, 1)
        nw = maps[0].outputs - k - psi.outputs
        xi = np.stack([xs[r, :, m.n - psi.n : m.n] for r, m in enumerate(maps)])
        return LoopTrajectory(t, empty, ys[:, :, k : k + nw], ys[:, :, :k], empty, empty, xi, ys[:, :, k + nw :])

    def f(xi, zv):
        w = uncertainty.phi(zv)
        zw = np.hstack([zv, w])
        return xi @ psi.a.T + zw @ psi.b.T, (zv, w, xi @ psi.c.T + zw @ psi.d.T)

    ys, outs = _rk4(f, np.zeros((runs, psi.n)), t, step, z)
    zs, ws, vs = (np.stack(o, axis=1) for o in zip(*outs))
    return LoopTrajectory(t, empty, ws, zs, empty, empty, np.moveaxis(ys, 0, 1), vs)


def simulate_lti(sys: StateSpace, u: Signal, x0=None, horizon: float = HORIZON, step: float = STEP) -> LoopTrajectory:
    """Plain LTI response; the input is stored as ``d`` and the output as ``e``."""
    runs = u.runs
    x0 = np.zeros((runs, sys.n)) if x0 is None else np.broadcast_to(np.atleast_2d(x0), (runs, sys.n)).copy()

    def f(x, uv):
        return x @ sys.a.T + uv @ sys.b.T, (uv, x @ sys.c.T + uv @ sys.d.T)

    t = time_grid(horizon, step)
    ys, outs = _rk4(f, x0, t, step, u)
    us, es = (np.stack(o, axis=1) for o in zip(*outs))
    empty = np.zeros((runs, len(t), 0))
    return LoopTrajectory(t, np.moveaxis(ys, 0, 1), empty, empty, us, es)


# checks


def _cumtrapz(vals, step):
    return cumulative_trapezoid(vals, dx=step, axis=-1, initial=0.0)


def verify_iqc(traj: LoopTrajectory, p, z_term) -> tuple:
    """min over T of int_0^T v^T P v - xi(T)^T Z xi(T), per run, with the argmin T.

    Returns (slack, argmin_t, energy) arrays over runs; ``energy`` is int |v|^2.
    """
    if traj.v is None:
        raise ValueError("trajectory has no filter signals")
    p = np.asarray(p, float)
    z_term = np.asarray(z_term, float)
    integrand = np.einsum("rti,ij,rtj->rt", traj.v, p, traj.v)
    integral = _cumtrapz(integrand, traj.step)
    term = np.einsum("rti,ij,rtj->rt", traj.xi, z_term, traj.xi) if z_term.size else 0.0
    slack = integral - term
    k = np.argmin(slack, axis=1)
    energy = np.trapezoid(np.sum(traj.v**2, axis=-1), dx=traj.step, axis=1)
    return slack[np.arange(traj.runs), k], traj.t[k], energy


def verify_dissipation(traj: LoopTrajectory, sys: StateSpace, p, x_cert, eps: float, tol: float | None = None,
                       state=None, inputs=None) -> np.ndarray:
    """Check V(x(t2)) + int_{t1}^{t2} (s_P + eps(|x|^2 + |u|^2)) <= V(x(t1)) + tol for all t1 <= t2.

    ``state`` and ``inputs`` default to the trajectory's x and d. Returns a
    boolean per run.
    """
    xs = traj.x if state is None else state
    us = traj.d if inputs is None else inputs
    ys = xs @ sys.c.T + us @ sys.d.T
    yu = np.concatenate([ys, us], axis=-1)
    supply = np.einsum("rti,ij,rtj->rt", yu, np.asarray(p, float), yu)
    supply += eps * (np.sum(xs**2, axis=-1) + np.sum(us**2, axis=-1))
    v = np.einsum("rti,ij,rtj->rt", xs, np.asarray(x_cert, float), xs)
    f = v + _cumtrapz(supply, traj.step)
    rise = f - np.minimum.accumulate(f, axis=1)
    if tol is None:
        tol = 1e-6 * (1.0 + np.max(np.abs(f), axis=1))
    return np.max(rise, axis=1) <= tol


def peak_output(traj_or_e, step: float | None = None) -> np.ndarray:
    """Peak of |e(t)| per run, refined by a parabola through the grid maximum."""
    e = traj_or_e.e if isinstance(traj_or_e, LoopTrajectory) else np.asarray(traj_or_e, float)
    if e.ndim == 2:
        e = e[None]
    mag = np.linalg.norm(e, axis=-1)
    out = np.empty(mag.shape[0])
    for r, m in enumerate(mag):
        k = int(np.argmax(m))
        best = m[k]
        if 0 < k < len(m) - 1:
            y0, y1, y2 = m[k - 1], m[k], m[k + 1]
            curv = y0 - 2 * y1 + y2
            if curv < 0:
                best = max(best, y1 - (y0 - y2) ** 2 / (8 * curv))
        out[r] = best
    return out


def stability_energy(traj: LoopTrajectory) -> np.ndarray:
    """int (|x|^2 + |w|^2) per run, the quantity bounded by gamma^2 |x0|^2."""
    integrand = np.sum(traj.x**2, axis=-1) + np.sum(traj.w**2, axis=-1)
    return np.trapezoid(integrand, dx=traj.step, axis=1)
