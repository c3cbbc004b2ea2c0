"""Builtin example loops used by the experiments and the CLI."""

from __future__ import annotations

import numpy as np

from .lti import PartitionedPlant, StateSpace
from .matops import solve_lyapunov

EX1_A = np.array([[-3.0, -2.0], [1.0, 0.0]])
ERS_A = np.array([[-1.0, 1.0], [0.0, -1.0]])
UNIT_DISK = np.diag([1.0, -1.0])


def ex1(alpha: float) -> PartitionedPlant:
    """Second-order plant -alpha/((s+1)(s+2)) in feedback with a saturation.

    Disturbance enters like the saturation output; the performance output is
    the saturation input.
    """
    b = np.array([[alpha], [0.0]])
    c = np.array([[0.0, -1.0]])
    sys = StateSpace(EX1_A, np.hstack([b, b]), np.vstack([c, c]), np.zeros((2, 2)))
    return PartitionedPlant(sys, nw=1, nd=1, nz=1, ne=1)


def ers(alpha: float) -> PartitionedPlant:
    """Plant alpha (s-1)/(s+1)^2 in feedback with a scalar dynamic uncertainty.

    The disturbance is added to the uncertainty output and the performance
    output equals the plant output.
    """
    b = np.array([[0.0], [alpha]])
    c = np.array([[-2.0, 1.0]])
    sys = StateSpace(ERS_A, np.hstack([b, b]), np.vstack([c, c]), np.zeros((2, 2)))
    return PartitionedPlant(sys, nw=1, nd=1, nz=1, ne=1)


def ers_basis() -> StateSpace:
    """psi(s) = col(1, (s+0.9)^2/(s+1)^2)."""
    second = StateSpace.from_tf([1.0, 1.8, 0.81], [1.0, 2.0, 1.0])
    return StateSpace(second.a, second.b, np.vstack([np.zeros((1, second.n)), second.c]), np.vstack([[1.0], second.d]))


BUILTIN = {"ex1": ex1, "ers": ers}


def nominal_peak_bound(plant4: PartitionedPlant) -> float:
    """Exact peak of e for unit-energy d with the uncertainty switched off."""
    dist = plant4.disturbance_channel()
    w = solve_lyapunov(dist.a.T, dist.b @ dist.b.T)
    return float(np.sqrt(np.max(np.linalg.eigvalsh(dist.c @ w @ dist.c.T))))
