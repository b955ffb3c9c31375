"""Quasiconvex envelopes and homogenized densities.

``quasiconvexify`` and ``cell_fhom`` minimize averaged energies over
piecewise-affine test fields vanishing on the cell boundary.
``convex_envelope_1d`` and ``lamination_bound`` are independent
low-dimensional cross-checks.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .discrete import DiscreteEnergy, MinimizerConfig, minimize_restarts
from .errors import ConfigurationError
from .fields import TorusGrid, t_cell
from .integrand import Integrand

__all__ = [
    "MinimizerConfig",
    "CellProblemResult",
    "PiecewiseLinear",
    "LaminationConfig",
    "quasiconvexify",
    "quasiconvexify_detailed",
    "convex_envelope_1d",
    "lamination_bound",
    "cell_fhom",
    "extrapolate",
    "resolution_study",
]


def _as_matrix(xi, f: Integrand) -> np.ndarray:
    return np.asarray(xi, dtype=float).reshape(f.d, f.N)


def quasiconvexify_detailed(f: Integrand, xi, cfg: MinimizerConfig | None = None, y=None):
    """Like :func:`quasiconvexify` but returns ``(value, best, all_results)``."""
    cfg = cfg or MinimizerConfig()
    xi = _as_matrix(xi, f)
    grid = TorusGrid((cfg.resolution,) * f.N, (1.0,) * f.N, "unit_cell")
    y_pts = np.zeros(f.N) if y is None else np.asarray(y, float).reshape(f.N)
    energy = DiscreteEnergy(grid, f, xi, y_points=y_pts, periodic=cfg.boundary == "periodic")
    best, results = minimize_restarts(energy, cfg, amplitude=1.0 + float(np.linalg.norm(xi)))
    return best.value, best, results


def quasiconvexify(f: Integrand, xi, cfg: MinimizerConfig | None = None, y=None) -> float:
    """Upper estimate of the quasiconvex envelope ``Qf(xi)``.

    Minimizes the unit-cell average of ``f(xi + grad phi)`` over test fields
    vanishing on the boundary. ``phi = 0`` is restart 0, so the result never
    exceeds ``f(xi)``. For integrands depending on ``y`` the fast variable
    is frozen at ``y`` (default the origin).
    """
    return quasiconvexify_detailed(f, xi, cfg, y)[0]


@dataclass
class PiecewiseLinear:
    """Piecewise-linear function through ``knots`` (constant extension is
    not used: evaluation outside the knot range raises)."""

    t: np.ndarray
    v: np.ndarray

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        if np.any(s < self.t[0] - 1e-12) or np.any(s > self.t[-1] + 1e-12):
            raise ValueError("evaluation outside the sampled range")
        out = np.interp(s, self.t, self.v)
        return float(out) if out.ndim == 0 else out


def convex_envelope_1d(t, v=None) -> PiecewiseLinear:
    """Lower convex hull of sampled points (monotone chain).

    Accepts ``(t, v)`` arrays or a single sequence of ``(t, v)`` pairs.
    """
    if v is None:
        pts = np.asarray(t, dtype=float)
        t, v = pts[:, 0], pts[:, 1]
    t = np.asarray(t, dtype=float)
    v = np.asarray(v, dtype=float)
    if t.size < 2 or t.size != v.size:
        raise ValueError("need at least two samples")
    if np.any(np.diff(t) <= 0):
        raise ValueError("samples must be sorted by strictly increasing t")
    hull: list[int] = []
    for i in range(t.size):
        while len(hull) >= 2:
            a, b = hull[-2], hull[-1]
            cross = (t[b] - t[a]) * (v[i] - v[a]) - (v[b] - v[a]) * (t[i] - t[a])
            if cross <= 0:
                hull.pop()
            else:
                break
        hull.append(i)
    idx = np.array(hull)
    return PiecewiseLinear(t[idx], v[idx])


@dataclass(frozen=True)
class LaminationConfig:
    n_angles: int = 8
    n_t: int = 41
    t_max: float = 2.0


def _sphere_dirs(k: int, n_angles: int) -> np.ndarray:
    if k == 1:
        return np.ones((1, 1))
    if k == 2:
        th = np.pi * np.arange(n_angles) / n_angles
        return np.stack([np.cos(th), np.sin(th)], axis=1)
    # golden-spiral points on the upper half sphere
    i = np.arange(n_angles) + 0.5
    z = i / n_angles
    r = np.sqrt(1.0 - z * z)
    th = np.pi * (1.0 + 5.0**0.5) * i
    return np.stack([r * np.cos(th), r * np.sin(th), z], axis=1)


def rank_one_directions(d: int, N: int, n_angles: int = 8) -> np.ndarray:
    """Unit rank-one matrices ``a (x) n`` on a finite angle grid."""
    A = _sphere_dirs(d, n_angles)
    Ns = _sphere_dirs(N, n_angles)
    return np.array([np.outer(a, n) for a in A for n in Ns])


def lamination_bound(f: Integrand, xi, depth: int = 1, cfg: LaminationConfig | None = None, y=None) -> float:
    """Value of a depth-limited laminate at ``xi``.

    Level ``k`` splits every point along each rank-one direction into two
    points of the line ``xi + t D`` and keeps the cheapest convex
    combination with barycenter ``xi``, evaluated with level ``k - 1``.
    Each laminate is a gradient Young measure, so the value bounds ``Qf``
    from above; it is nonincreasing in ``depth`` because ``t = 0`` is
    always a candidate.
    """
    if depth < 1:
        raise ConfigurationError("depth must be >= 1")
    cfg = cfg or LaminationConfig()
    xi = _as_matrix(xi, f)
    dirs = rank_one_directions(f.d, f.N, cfg.n_angles)
    n_t = cfg.n_t | 1
    R = cfg.t_max * max(1.0, float(np.linalg.norm(xi)))
    ts = np.linspace(-R, R, n_t)
    neg = np.flatnonzero(ts < 0)
    pos = np.flatnonzero(ts > 0)
    zero = n_t // 2
    ti, tj = ts[neg][:, None], ts[pos][None, :]
    y_pt = None if y is None else np.asarray(y, float).reshape(1, f.N)

    def level(points, k):
        if k == 0:
            return f(None, y_pt, points)
        P = points.shape[0]
        line = points[:, None, None] + ts[None, None, :, None, None] * dirs[None, :, None]
        vals = level(line.reshape(-1, f.d, f.N), k - 1).reshape(P, len(dirs), n_t)
        vi = vals[:, :, neg][:, :, :, None]
        vj = vals[:, :, pos][:, :, None, :]
        chord = (tj * vi - ti * vj) / (tj - ti)
        best = np.minimum(chord.min(axis=(2, 3)), vals[:, :, zero])
        return best.min(axis=1)

    return float(level(xi[None], depth)[0])


@dataclass
class CellRow:
    T: int
    min_value: float
    restarts_used: int
    best_restart: int
    iterations: int
    converged: bool
    best_energy_trace: list = field(default_factory=list)


@dataclass
class CellProblemResult:
    """Per-T minima of the averaged cell energy and the extrapolated limit."""

    xi: np.ndarray
    per_T: list
    extrapolated: float
    extrapolation_model: str
    warnings: list = field(default_factory=list)
    fit: dict = field(default_factory=dict)
    minimizers: dict = field(default_factory=dict, repr=False)
    config: dict = field(default_factory=dict)

    @property
    def values(self) -> np.ndarray:
        return np.array([r.min_value for r in self.per_T])

    def to_dict(self) -> dict:
        return {
            "xi": np.asarray(self.xi).tolist(),
            "per_T": [r.__dict__ for r in self.per_T],
            "extrapolated": self.extrapolated,
            "extrapolation_model": self.extrapolation_model,
            "warnings": list(self.warnings),
            "fit": self.fit,
            "config": self.config,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def csv_rows(self) -> list:
        xi = ";".join(repr(float(v)) for v in np.ravel(self.xi))
        return [(xi, r.T, r.min_value, self.extrapolated) for r in self.per_T]


def extrapolate(Ts: Sequence[int], values: Sequence[float]) -> tuple[float, str, dict]:
    """Least-squares fit ``c + a/T``; fall back to the last value when the
    fit residual exceeds 10% of the value spread or the slope is negative."""
    Ts = np.asarray(Ts, float)
    v = np.asarray(values, float)
    if v.size < 2:
        return float(v[-1]), "last_value", {}
    A = np.stack([np.ones_like(Ts), 1.0 / Ts], axis=1)
    (c, a), *_ = np.linalg.lstsq(A, v, rcond=None)
    resid = float(np.max(np.abs(A @ np.array([c, a]) - v)))
    spread = float(v.max() - v.min())
    info = {"c": float(c), "a": float(a), "residual": resid, "spread": spread}
    if spread == 0.0:
        return float(v[-1]), "fit c+a/T", info
    if resid > 0.1 * spread or a < 0:
        return float(v[-1]), "last_value", info
    return float(c), "fit c+a/T", info


def cell_fhom(
    f: Integrand,
    xi,
    T_list: Sequence[int] = (1, 2, 4),
    cfg: MinimizerConfig | None = None,
    keep_minimizers: bool = False,
    x=None,
) -> CellProblemResult:
    """Homogenized density by the cell formula on ``(0, T)^N``.

    The periodic coefficient is sampled exactly at ``<y>`` of every
    simplex barycenter; test fields vanish on the cube boundary. For
    x-dependent integrands the slow variable is frozen at ``x``.
    """
    cfg = cfg or MinimizerConfig()
    xi = _as_matrix(xi, f)
    T_list = [int(T) for T in T_list]
    if not T_list or any(T < 1 for T in T_list) or any(b <= a for a, b in zip(T_list, T_list[1:])):
        raise ConfigurationError("T_list must be increasing positive integers")
    rows, minimizers, warnings = [], {}, []
    amp = 1.0 + float(np.linalg.norm(xi))
    for T in T_list:
        grid = t_cell(T, cfg.resolution, f.N)
        x_pts = None if x is None else np.asarray(x, float).reshape(1, f.N)
        energy = DiscreteEnergy(grid, f, xi, x_points=x_pts, periodic=cfg.boundary == "periodic")
        best, results = minimize_restarts(energy, cfg, amplitude=amp)
        rows.append(CellRow(T, best.value, len(results), best.restart, best.iterations, best.converged, best.trace))
        if keep_minimizers:
            minimizers[T] = energy.embed(best.x)
        if not best.converged:
            warnings.append(f"T={T}: optimizer stopped at max_iters")
    vals = [r.min_value for r in rows]
    for (Ta, va), (Tb, vb) in zip(zip(T_list, vals), zip(T_list[1:], vals[1:])):
        if vb > va + 1e-6 * (1.0 + abs(va)):
            warnings.append(f"per-T minima increase from T={Ta} ({va:.6g}) to T={Tb} ({vb:.6g})")
    value, model, fit = extrapolate(T_list, vals)
    return CellProblemResult(xi, rows, value, model, warnings, fit, minimizers, cfg.to_dict())


def resolution_study(fn, cfg: MinimizerConfig, levels: int = 3) -> dict:
    """Evaluate ``fn(cfg)`` at resolutions ``r, 2r, 4r, ...``.

    Returns the values, successive differences and a discretization
    estimate for the finest level, ``|v_k - v_{k-1}|`` times the observed
    contraction ratio (ratio test; 1 if the ratio cannot be formed).
    """
    from dataclasses import replace

    vals = [fn(replace(cfg, resolution=cfg.resolution * 2**k)) for k in range(levels)]
    diffs = [abs(b - a) for a, b in zip(vals, vals[1:])]
    ratio = 1.0
    if len(diffs) >= 2 and diffs[-2] > 0:
        ratio = min(1.0, diffs[-1] / diffs[-2])
    estimate = diffs[-1] * ratio / max(1e-300, 1.0 - min(ratio, 0.5)) if diffs else math.inf
    return {"values": vals, "diffs": diffs, "ratio": ratio, "estimate": estimate}
