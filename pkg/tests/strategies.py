"""Hypothesis strategies shared by the test modules."""

import numpy as np
from hypothesis import strategies as st

seeds = st.integers(min_value=0, max_value=2**32 - 1)


def symmetric(n, scale=1.0):
    return seeds.map(lambda s: _sym(np.random.default_rng(s), n, scale))


def _sym(rng, n, scale):
    m = rng.standard_normal((n, n)) * scale
    return m + m.T


def hurwitz_matrix(rng, n, margin=0.1):
    a = rng.standard_normal((n, n))
    return a - (np.max(np.linalg.eigvals(a).real) + margin + rng.uniform(0, 1)) * np.eye(n)
