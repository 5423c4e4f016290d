"""Small numerical helpers: snapped fractional parts, compensated sums, quadrature nodes."""

import numpy as np

# Fractional parts within this distance of an integer are treated as exact.
# The stratum bookkeeping is discontinuous at integers, so boundary values
# produced by float cancellation must land deterministically.
SNAP_TOL = 1e-12


def snapped_frac(x):
    """Fractional part with values within SNAP_TOL of an integer snapped to 0."""
    x = np.asarray(x, dtype=float)
    f = x - np.floor(x)
    f = np.where((f > 1.0 - SNAP_TOL) | (f < SNAP_TOL), 0.0, f)
    return f if f.shape else float(f)


def kahan_cumsum(values):
    """Compensated running sum; error stays O(eps) independent of length."""
    values = np.asarray(values, dtype=float)
    out = np.empty_like(values)
    s = 0.0
    c = 0.0
    for i, v in enumerate(values):
        y = v - c
        t = s + y
        c = (t - s) - y
        s = t
        out[i] = s
    return out


_GL_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def gauss_legendre(n):
    """Nodes and weights on [0, 1], cached."""
    if n not in _GL_CACHE:
        x, w = np.polynomial.legendre.leggauss(n)
        _GL_CACHE[n] = ((x + 1.0) / 2.0, w / 2.0)
    return _GL_CACHE[n]
