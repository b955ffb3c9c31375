"""Young functions: evaluation, complementary functions, inverses, growth
constants and Luxemburg norms of sampled fields.

Young functions form a closed family (``power``, ``power_log`` and
``piecewise_convex`` tables) so that every derived quantity stays testable.
All evaluations are vectorized over numpy arrays.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Callable

import numpy as np

__all__ = [
    "YoungFunction",
    "Delta2Nabla2Certificate",
    "ConjugateSearchError",
    "power",
    "power_log",
    "piecewise_convex",
    "phi_eval",
    "phi_conjugate",
    "conjugate_function",
    "sup_transform",
    "phi_inverse",
    "delta2_nabla2",
    "luxemburg_norm",
]

KINDS = ("power", "power_log", "piecewise_convex")

# geometric probe ratio for growth certificates, <= 1.05 and exact in binary
PROBE_RATIO = 2.0 ** (1.0 / 16.0)
# beta candidates are 2**(k/64); powers of two are hit exactly
BETA_STEPS_PER_OCTAVE = 64


class ConjugateSearchError(ArithmeticError):
    """Raised when the bracket for a sup-transform cannot be closed."""


@dataclass(frozen=True)
class YoungFunction:
    """A Young function from the supported parametric family.

    Parameters
    ----------
    kind : str
        One of ``"power"``, ``"power_log"``, ``"piecewise_convex"``.
    params : tuple of (name, value) pairs
        Kind-specific parameters. Use the factory functions rather than
        building this by hand.
    t0 : float
        Threshold from which the doubling conditions are probed.
    """

    kind: str
    params: tuple
    t0: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown Young function kind {self.kind!r}")
        if self.t0 < 0:
            raise ValueError("t0 must be nonnegative")
        p = self.param_dict
        if self.kind in ("power", "power_log") and not p["p"] > 1:
            raise ValueError("exponent p must be > 1")
        if self.kind == "power_log" and p["shift"] < math.e:
            raise ValueError("shift must be >= e")
        if self.kind == "piecewise_convex":
            _check_knots(p["knots"])

    @property
    def param_dict(self) -> dict:
        return dict(self.params)

    # -- evaluation -----------------------------------------------------
    def __call__(self, t):
        return phi_eval(self, t)

    def derivative(self, t):
        """Right derivative of the Young function (vectorized)."""
        t = np.asarray(t, dtype=float)
        p = self.param_dict
        if self.kind == "power":
            return t ** (p["p"] - 1.0)
        if self.kind == "power_log":
            q, c = p["p"], p["shift"]
            return q * t ** (q - 1.0) * np.log(c + t) + t**q / (c + t)
        return _piecewise_derivative(p["knots"], t)

    @property
    def closed_form_conjugate(self) -> Callable | None:
        if self.kind == "power":
            q = self.param_dict["p"] / (self.param_dict["p"] - 1.0)
            return lambda s: np.asarray(s, dtype=float) ** q / q
        return None

    # -- serialization --------------------------------------------------
    def to_dict(self) -> dict:
        p = self.param_dict
        if self.kind == "piecewise_convex":
            p = {"knots": [list(k) for k in p["knots"]]}
        return {"kind": self.kind, "params": p, "t0": self.t0}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "YoungFunction":
        kind = data["kind"]
        params = dict(data.get("params", {}))
        t0 = float(data.get("t0", 1.0))
        if kind == "power":
            return power(params["p"], t0=t0)
        if kind == "power_log":
            return power_log(params["p"], params.get("shift", math.e), t0=t0)
        if kind == "piecewise_convex":
            return piecewise_convex(params["knots"], t0=t0)
        raise ValueError(f"unknown Young function kind {kind!r}")

    @classmethod
    def from_json(cls, text: str) -> "YoungFunction":
        return cls.from_dict(json.loads(text))


def power(p: float, t0: float = 1.0) -> YoungFunction:
    """``t**p / p``."""
    return YoungFunction("power", (("p", float(p)),), t0)


def power_log(p: float, shift: float = math.e, t0: float = 1.0) -> YoungFunction:
    """``t**p * log(shift + t)``; satisfies both doubling conditions."""
    return YoungFunction("power_log", (("p", float(p)), ("shift", float(shift))), t0)


def piecewise_convex(knots, t0: float = 1.0) -> YoungFunction:
    """Young function interpolating ``(t, Phi(t))`` knots.

    The table is extended by a quadratic ``Phi(t1) (t/t1)**2`` on ``[0, t1]``,
    linearly between knots, and by a quadratic matching value and slope past
    the last knot, so that the result is superlinear at both ends.
    """
    ks = tuple((float(a), float(b)) for a, b in knots)
    return YoungFunction("piecewise_convex", (("knots", ks),), t0)


def _check_knots(knots):
    if len(knots) < 2:
        raise ValueError("piecewise_convex needs at least two knots")
    t = np.array([k[0] for k in knots])
    v = np.array([k[1] for k in knots])
    if t[0] <= 0 or np.any(np.diff(t) <= 0):
        raise ValueError("knot abscissae must be positive and increasing")
    if np.any(v <= 0):
        raise ValueError("knot values must be positive")
    slopes = np.concatenate([[2.0 * v[0] / t[0]], np.diff(v) / np.diff(t)])
    if np.any(np.diff(slopes) < -1e-12 * (1.0 + np.abs(slopes[1:]))):
        raise ValueError("knots do not describe a convex function")


def _piecewise_parts(knots):
    t = np.array([k[0] for k in knots])
    v = np.array([k[1] for k in knots])
    s_last = (v[-1] - v[-2]) / (t[-1] - t[-2])
    return t, v, s_last, s_last / (2.0 * t[-1])


def _piecewise_eval(knots, t):
    tk, vk, s_last, c = _piecewise_parts(knots)
    out = np.interp(t, tk, vk)
    head = t < tk[0]
    out = np.where(head, vk[0] * (t / tk[0]) ** 2, out)
    dt = t - tk[-1]
    return np.where(dt > 0, vk[-1] + s_last * dt + c * dt**2, out)


def _piecewise_derivative(knots, t):
    tk, vk, s_last, c = _piecewise_parts(knots)
    slopes = np.diff(vk) / np.diff(tk)
    idx = np.clip(np.searchsorted(tk, t, side="right") - 1, 0, len(slopes) - 1)
    out = slopes[idx]
    out = np.where(t < tk[0], 2.0 * vk[0] * t / tk[0] ** 2, out)
    dt = t - tk[-1]
    return np.where(dt > 0, s_last + 2.0 * c * dt, out)


def phi_eval(phi: YoungFunction, t):
    """Evaluate ``phi`` at ``t >= 0`` (scalar or array)."""
    arr = np.asarray(t, dtype=float)
    if np.any(arr < 0) or np.any(np.isnan(arr)):
        raise ValueError("Young functions are defined on t >= 0")
    p = phi.param_dict
    if phi.kind == "power":
        out = arr ** p["p"] / p["p"]
    elif phi.kind == "power_log":
        out = arr ** p["p"] * np.log(p["shift"] + arr)
    else:
        out = _piecewise_eval(p["knots"], arr)
    return float(out) if np.ndim(out) == 0 else out


def sup_transform(func: Callable, s, max_doublings: int = 1000, rtol: float = 1e-9):
    """``sup_{t >= 0} (s t - func(t))`` for convex ``func`` with ``func(0)=0``.

    The inner objective is concave, so the bracket ``[0, 2h]`` contains the
    maximizer as soon as ``g(2h) <= g(h)``; ``h`` starts at 1 and doubles.
    The bracket is then shrunk by golden-section search, vectorized over ``s``.
    """
    s = np.atleast_1d(np.asarray(s, dtype=float))
    if np.any(s < 0):
        raise ValueError("conjugates are evaluated at s >= 0")

    def g(t):
        return s * t - func(t)

    hi = np.ones_like(s)
    active = s > 0
    for _ in range(max_doublings):
        if not active.any():
            break
        grow = active & (g(2.0 * hi) > g(hi))
        hi = np.where(grow, 2.0 * hi, hi)
        active = grow
    else:
        bad = np.flatnonzero(active)
        raise ConjugateSearchError(
            f"bracket still growing after {max_doublings} doublings at "
            f"s={s[bad[:3]].tolist()}, last bracket end {hi[bad[:3]].tolist()}"
        )

    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a = np.zeros_like(s)
    b = 2.0 * hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    gc, gd = g(c), g(d)
    while np.any(b - a > rtol * (1.0 + b)):
        left = gc > gd
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        d_new = np.where(left, c, a + invphi * (b - a))
        c_new = np.where(left, b - invphi * (b - a), d)
        g_new = g(np.where(left, c_new, d_new))
        gc, gd = np.where(left, g_new, gd), np.where(left, gc, g_new)
        c, d = c_new, d_new
    t_star = 0.5 * (a + b)
    val = np.maximum(g(t_star), 0.0)
    return np.where(s > 0, val, 0.0), np.where(s > 0, t_star, 0.0)


def phi_conjugate(phi: YoungFunction, s, method: str = "auto"):
    """Complementary Young function ``sup_{t>=0} (s t - phi(t))``.

    ``method="auto"`` uses a closed form when the family has one, otherwise
    golden-section search; ``method="numeric"`` always searches.
    """
    scalar = np.ndim(s) == 0
    s_arr = np.asarray(s, dtype=float)
    if np.any(s_arr < 0):
        raise ValueError("conjugates are evaluated at s >= 0")
    closed = phi.closed_form_conjugate if method == "auto" else None
    if method not in ("auto", "numeric"):
        raise ValueError(f"unknown method {method!r}")
    if closed is not None:
        out = closed(s_arr)
    else:
        out, _ = sup_transform(lambda t: phi_eval(phi, t), s_arr)
    return float(np.reshape(out, -1)[0]) if scalar else np.reshape(out, s_arr.shape)


def conjugate_function(phi: YoungFunction, method: str = "auto") -> Callable:
    """Return ``s -> phi_conjugate(phi, s)`` as a vectorized callable."""

    def conj(s):
        return phi_conjugate(phi, np.asarray(s, dtype=float), method=method)

    return conj


def phi_inverse(phi: YoungFunction, v, atol: float = 1e-12):
    """Unique ``t >= 0`` with ``phi(t) == v``, by monotone bisection."""
    scalar = np.ndim(v) == 0
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if np.any(v < 0):
        raise ValueError("phi_inverse needs v >= 0")
    lo = np.zeros_like(v)
    hi = np.ones_like(v)
    while True:
        short = phi_eval(phi, hi) < v
        if not short.any():
            break
        hi = np.where(short, 2.0 * hi, hi)
    for _ in range(2000):
        tol = np.maximum(atol, 4.0 * np.spacing(hi))
        if np.all(hi - lo <= tol):
            break
        mid = 0.5 * (lo + hi)
        below = phi_eval(phi, mid) < v
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    out = np.where(v == 0, 0.0, 0.5 * (lo + hi))
    return float(out[0]) if scalar else out


@dataclass
class Delta2Nabla2Certificate:
    """Doubling constants of a Young function, certified on a probe grid."""

    alpha: float
    beta: float
    t0: float
    probe_max: float
    status: str
    violation_at: float | None = None
    probe_ratio: float = PROBE_RATIO
    n_probes: int = 0
    alpha_argmax: float | None = None
    phi: dict = field(default_factory=dict)

    @property
    def certified(self) -> bool:
        return self.status == "certified_on_probe"

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def probe_grid(t0: float, probe_max: float, ratio: float = PROBE_RATIO) -> np.ndarray:
    start = t0 if t0 > 0 else probe_max * 1e-9
    n = int(math.floor(math.log(probe_max / start) / math.log(ratio) + 1e-9)) + 1
    return start * ratio ** np.arange(n)


def delta2_nabla2(
    phi: YoungFunction,
    t0: float | None = None,
    probe_max: float = 1e6,
    beta_max: float = 1024.0,
) -> Delta2Nabla2Certificate:
    """Probe ``Phi(2t) <= alpha Phi(t)`` and ``Phi(t) <= Phi(beta t)/(2 beta)``.

    ``alpha`` is the largest observed doubling ratio; ``beta`` the smallest
    value of the grid ``2**(k/64)`` that satisfies the second inequality at
    every probe ``t >= t0``.
    """
    t0 = phi.t0 if t0 is None else float(t0)
    if not probe_max > t0 >= 0:
        raise ValueError("need probe_max > t0 >= 0")
    t = probe_grid(t0, probe_max)
    ft = phi_eval(phi, t)
    ratios = phi_eval(phi, 2.0 * t) / ft
    k = int(np.argmax(ratios))
    alpha = float(ratios[k])

    n_beta = int(round(math.log2(beta_max) * BETA_STEPS_PER_OCTAVE))
    bs = 2.0 ** (np.arange(n_beta + 1) / BETA_STEPS_PER_OCTAVE)
    slack = phi_eval(phi, bs[:, None] * t[None, :]) / (2.0 * bs[:, None] * ft[None, :])
    ok = np.all(slack >= 1.0 - 1e-12, axis=1)
    cert = dict(
        alpha=alpha,
        t0=t0,
        probe_max=probe_max,
        n_probes=int(t.size),
        alpha_argmax=float(t[k]),
        phi=phi.to_dict(),
    )
    if ok.any():
        return Delta2Nabla2Certificate(beta=float(bs[np.argmax(ok)]), status="certified_on_probe", **cert)
    worst = int(np.argmin(slack[-1]))
    return Delta2Nabla2Certificate(
        beta=float("inf"), status="violated", violation_at=float(t[worst]), **cert
    )


def _pointwise_magnitude(field: Any) -> tuple[np.ndarray, float]:
    if hasattr(field, "pointwise_norm"):
        return np.asarray(field.pointwise_norm(), dtype=float), float(field.grid.measure)
    arr = np.asarray(field, dtype=float)
    if arr.ndim > 1:
        arr = np.linalg.norm(arr.reshape(arr.shape[0], -1), axis=1)
    return np.abs(arr), 1.0


def luxemburg_norm(field: Any, phi: YoungFunction, measure: float | None = None, rtol: float = 1e-13) -> float:
    """``inf{k > 0 : |domain| * mean Phi(|u|/k) <= 1}`` for a sampled field.

    ``field`` is a :class:`~orliczhom.fields.TorusField` (its grid declares
    the domain measure) or a plain array of samples, in which case
    ``measure`` defaults to 1. Vector values enter through their Euclidean
    norm.
    """
    r, grid_measure = _pointwise_magnitude(field)
    if measure is None:
        measure = grid_measure
    if not np.all(np.isfinite(r)):
        raise ValueError("field has non-finite values")
    top = float(r.max(initial=0.0))
    if top == 0.0:
        return 0.0
    # the norm is positively homogeneous; bisect on the field scaled to max 1
    r = r / top

    def modular(k):
        return measure * float(np.mean(phi_eval(phi, r / k)))

    lo = hi = 1.0
    while modular(hi) > 1.0:
        hi *= 2.0
    while modular(lo) <= 1.0:
        lo *= 0.5
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        if modular(mid) > 1.0:
            lo = mid
        else:
            hi = mid
    return top * hi
