"""State-space realizations, frequency responses and interconnections."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.signal

POLE_TOL = 1e-9


class DimensionError(ValueError):
    pass


class PoleOnAxisError(ValueError):
    pass


def _mat(x, rows=None, cols=None) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1, 1)
    if x.size == 0:
        return np.zeros((rows or 0, cols or 0))
    return np.atleast_2d(x)


@dataclass(frozen=True, eq=False)
class StateSpace:
    """LTI system  x' = a x + b u,  y = c x + d u."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray

    def __post_init__(self):
        d = _mat(self.d)
        a = _mat(self.a)
        n = a.shape[0]
        b = _mat(self.b, n, d.shape[1])
        c = _mat(self.c, d.shape[0], n)
        if a.shape != (n, n):
            raise DimensionError(f"a must be square, got {a.shape}")
        if b.shape[0] != n or c.shape[1] != n or d.shape != (c.shape[0], b.shape[1]):
            raise DimensionError(
                f"incompatible shapes a{a.shape} b{b.shape} c{c.shape} d{d.shape}"
            )
        for name, val in zip("abcd", (a, b, c, d)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    @property
    def n(self) -> int:
        return self.a.shape[0]

    @property
    def inputs(self) -> int:
        return self.b.shape[1]

    @property
    def outputs(self) -> int:
        return self.c.shape[0]

    @classmethod
    def gain(cls, d) -> "StateSpace":
        d = _mat(d)
        return cls(np.zeros((0, 0)), np.zeros((0, d.shape[1])), np.zeros((d.shape[0], 0)), d)

    @classmethod
    def from_tf(cls, num, den) -> "StateSpace":
        """Realization of a SISO rational transfer function (coefficients high to low)."""
        a, b, c, d = scipy.signal.tf2ss(num, den)
        return cls(a, b, c, d)

    def to_json(self) -> dict:
        return {k: getattr(self, k).tolist() for k in "abcd"}

    @classmethod
    def from_json(cls, obj: dict) -> "StateSpace":
        d = _mat(obj["d"])
        a = _mat(obj.get("a", []))
        n = a.shape[0]
        return cls(a, _mat(obj.get("b", []), n, d.shape[1]), _mat(obj.get("c", []), d.shape[0], n), d)

    def __repr__(self):
        return f"StateSpace(n={self.n}, inputs={self.inputs}, outputs={self.outputs})"


@dataclass(frozen=True)
class FreqPoint:
    omega: float
    value: np.ndarray


def freq_response(sys: StateSpace, omega: float) -> FreqPoint:
    """G(i omega) = c (i omega I - a)^{-1} b + d; d itself at omega = inf."""
    if np.isinf(omega):
        return FreqPoint(np.inf, sys.d.astype(complex))
    if sys.n == 0:
        return FreqPoint(float(omega), sys.d.astype(complex))
    ev = np.linalg.eigvals(sys.a)
    if np.min(np.abs(ev - 1j * omega)) < POLE_TOL:
        raise PoleOnAxisError(f"i*{omega} is (numerically) a pole")
    res = np.linalg.solve(1j * omega * np.eye(sys.n) - sys.a, sys.b)
    return FreqPoint(float(omega), sys.c @ res + sys.d)


def freq_response_grid(sys: StateSpace, omegas) -> np.ndarray:
    """Stacked responses, shape (len(omegas), outputs, inputs)."""
    return np.array([freq_response(sys, w).value for w in omegas])


def imaginary_axis_poles(sys: StateSpace) -> bool:
    if sys.n == 0:
        return False
    return bool(np.min(np.abs(np.linalg.eigvals(sys.a).real)) < POLE_TOL)


def series(second: StateSpace, first: StateSpace) -> StateSpace:
    """Cascade: the output of ``first`` drives ``second``."""
    if second.inputs != first.outputs:
        raise DimensionError("series: dimension mismatch")
    n1, n2 = first.n, second.n
    a = np.block(
        [[first.a, np.zeros((n1, n2))], [second.b @ first.c, second.a]]
    )
    b = np.vstack([first.b, second.b @ first.d])
    c = np.hstack([second.d @ first.c, second.c])
    return StateSpace(a, b, c, second.d @ first.d)


def series_filter_plant(psi: StateSpace, plant: StateSpace) -> StateSpace:
    """Realization of psi * col(G, I) with the filter state listed first.

    ``psi`` has k + m inputs: the first k are fed by the plant output, the
    last m by the plant input.
    """
    k, m = plant.outputs, plant.inputs
    if psi.inputs != k + m:
        raise DimensionError(
            f"filter has {psi.inputs} inputs, plant needs {k}+{m}"
        )
    b1, b2 = psi.b[:, :k], psi.b[:, k:]
    d1, d2 = psi.d[:, :k], psi.d[:, k:]
    a = np.block(
        [[psi.a, b1 @ plant.c], [np.zeros((plant.n, psi.n)), plant.a]]
    )
    b = np.vstack([b1 @ plant.d + b2, plant.b])
    c = np.hstack([psi.c, d1 @ plant.c])
    d = d1 @ plant.d + d2
    return StateSpace(a, b, c, d)


def channel_permutation(splits) -> np.ndarray:
    """Column order putting every block's z-channels before all w-channels.

    ``splits`` lists (k_i, m_i) per block in block-diagonal order; entry j of
    the result is the block-diagonal column that becomes column j.
    """
    offsets = np.cumsum([0] + [k + m for k, m in splits])
    z_cols = [offsets[i] + j for i, (k, _) in enumerate(splits) for j in range(k)]
    w_cols = [offsets[i] + k + j for i, (k, m) in enumerate(splits) for j in range(m)]
    return np.array(z_cols + w_cols, dtype=int)


def diag_augment(sys_list, splits=None) -> StateSpace:
    """Block-diagonal stacking; with ``splits`` the inputs are re-ordered so
    that all z-channels precede all w-channels."""
    a = _blockdiag([s.a for s in sys_list])
    b = _blockdiag([s.b for s in sys_list])
    c = _blockdiag([s.c for s in sys_list])
    d = _blockdiag([s.d for s in sys_list])
    if splits is not None:
        perm = channel_permutation(splits)
        b, d = b[:, perm], d[:, perm]
    return StateSpace(a, b, c, d)


def _blockdiag(mats):
    rows = sum(m.shape[0] for m in mats)
    cols = sum(m.shape[1] for m in mats)
    out = np.zeros((rows, cols))
    i = j = 0
    for m in mats:
        out[i : i + m.shape[0], j : j + m.shape[1]] = m
        i += m.shape[0]
        j += m.shape[1]
    return out


def is_hurwitz(sys_or_a) -> bool:
    a = sys_or_a.a if isinstance(sys_or_a, StateSpace) else np.atleast_2d(sys_or_a)
    if a.size == 0:
        return True
    return bool(np.max(np.linalg.eigvals(a).real) < -1e-9)


def controllability_rank(sys: StateSpace) -> int:
    n = sys.n
    if n == 0 or sys.inputs == 0:
        return 0
    blocks = [sys.b]
    for _ in range(n - 1):
        blocks.append(sys.a @ blocks[-1])
    sv = np.linalg.svd(np.hstack(blocks), compute_uv=False)
    if sv[0] == 0:
        return 0
    return int(np.sum(sv > 1e-9 * sv[0]))


@dataclass(frozen=True, eq=False)
class PartitionedPlant:
    """Plant with inputs (w, d) and outputs (z, e).

    w/z are the uncertainty channels, d/e the disturbance and performance
    channels. Input columns are ordered w then d; output rows z then e.
    """

    sys: StateSpace
    nw: int
    nd: int
    nz: int
    ne: int

    def __post_init__(self):
        if self.sys.inputs != self.nw + self.nd or self.sys.outputs != self.nz + self.ne:
            raise DimensionError("channel split does not match the realization")

    @property
    def a(self):
        return self.sys.a

    @property
    def bw(self):
        return self.sys.b[:, : self.nw]

    @property
    def bd(self):
        return self.sys.b[:, self.nw :]

    @property
    def cz(self):
        return self.sys.c[: self.nz]

    @property
    def ce(self):
        return self.sys.c[self.nz :]

    @property
    def dzw(self):
        return self.sys.d[: self.nz, : self.nw]

    @property
    def dzd(self):
        return self.sys.d[: self.nz, self.nw :]

    @property
    def dew(self):
        return self.sys.d[self.nz :, : self.nw]

    @property
    def ded(self):
        return self.sys.d[self.nz :, self.nw :]

    def uncertainty_channel(self) -> StateSpace:
        """The w -> z subsystem used for stability analysis."""
        return StateSpace(self.a, self.bw, self.cz, self.dzw)

    def disturbance_channel(self) -> StateSpace:
        """The nominal d -> e subsystem (w = 0)."""
        return StateSpace(self.a, self.bd, self.ce, self.ded)
