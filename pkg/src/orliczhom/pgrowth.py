"""Closed-form p-power counterparts of the Orlicz routines.

For ``Phi(t) = t**p / p`` every Orlicz quantity has an elementary
expression. These functions never touch :class:`YoungFunction` and serve
as an independent code path for regression comparisons.
"""
from __future__ import annotations

import numpy as np

from .integrand import Integrand, make_integrand

__all__ = [
    "conjugate_exponent",
    "conjugate",
    "doubling_constant",
    "nabla2_constant",
    "lp_luxemburg",
    "power_moment",
    "power_integrand",
]


def conjugate_exponent(p: float) -> float:
    if not p > 1:
        raise ValueError("p must exceed 1")
    return p / (p - 1.0)


def conjugate(p: float, s):
    """``s**q / q`` with ``1/p + 1/q = 1``."""
    q = conjugate_exponent(p)
    return np.asarray(s, float) ** q / q


def doubling_constant(p: float) -> float:
    """``sup Phi(2t)/Phi(t) = 2**p``."""
    return 2.0**p


def nabla2_constant(p: float, steps_per_octave: int = 64) -> float:
    """Smallest ``2**(k/steps)`` with ``beta**(p-1) >= 2``."""
    k = int(np.ceil(steps_per_octave / (p - 1.0) - 1e-9))
    return 2.0 ** (k / steps_per_octave)


def lp_luxemburg(values, p: float, measure: float = 1.0) -> float:
    """``p**(-1/p) * ||u||_p`` for equally weighted samples on a domain of
    the given measure."""
    v = np.asarray(values, float)
    if v.ndim > 1:
        v = np.linalg.norm(v.reshape(v.shape[0], -1), axis=1)
    top = float(np.max(np.abs(v), initial=0.0))
    if top == 0.0:
        return 0.0
    # scaled by the largest value so tiny fields do not underflow
    return top * float((measure * np.mean((np.abs(v) / top) ** p) / p) ** (1.0 / p))


def power_moment(reps, weights, p: float) -> np.ndarray:
    """``sum_k w_k |rep_k|**p / p`` per entry group (returns per-entry terms)."""
    r = np.linalg.norm(np.asarray(reps, float).reshape(len(reps), -1), axis=1)
    return np.asarray(weights, float) * r**p / p


def power_integrand(p: float, d: int = 1, N: int = 1, coeff: dict | None = None, center=None) -> Integrand:
    """``a(y) |xi - center|**p / p`` built without a Young function."""
    shape = {"kind": "power_radial", "p": float(p)}
    if center is not None:
        shape["center"] = np.asarray(center, float).tolist()
    return make_integrand({"kind": "product", "coeff": coeff, "shape": shape, "name": f"power{p:g}"}, None, d, N)
