"""Uniform box and torus grids, sampled fields, finite-difference gradients
and the explicit oscillating sequences used to generate Young measures.

Grid convention: ``resolution[k]`` is the number of intervals along axis
``k``. Periodic fields store ``resolution[k]`` nodes per axis (the last node
is the wrap of the first); all other boundary kinds store
``resolution[k] + 1`` nodes including both faces. Forward-difference
gradients therefore always live on ``prod(resolution)`` cells.
"""
from __future__ import annotations

import io
import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigurationError

__all__ = [
    "TorusGrid",
    "TorusField",
    "GradientField",
    "Corrector",
    "TrigCorrector",
    "GridCorrector",
    "FunctionCorrector",
    "ZeroCorrector",
    "unit_cell",
    "t_cell",
    "box",
    "discrete_gradient",
    "sawtooth",
    "sawtooth_sequence",
    "laminate_field",
    "affine_field",
    "oscillating_sequence",
    "check_commensurate",
    "admissible_epsilons",
    "frac",
    "save_field",
    "load_field",
    "field_to_csv",
]

BOUNDARIES = ("periodic", "zero_dirichlet", "affine", "free")
_MAGIC = b"OHF1"


def frac(x):
    """Componentwise fractional part, in ``[0, 1)``."""
    x = np.asarray(x, dtype=float)
    out = x - np.floor(x)
    # x - floor(x) can round up to exactly 1.0 for tiny negative x
    return np.where(out >= 1.0, 0.0, out)


@dataclass(frozen=True)
class TorusGrid:
    """Uniform tensor grid on ``prod_k (0, period[k])``."""

    resolution: tuple
    period: tuple
    domain_kind: str = "omega_box"
    T: float | None = None

    def __post_init__(self):
        if len(self.resolution) != len(self.period) or not self.resolution:
            raise ConfigurationError("resolution and period must have the same positive length")
        if any(int(n) < 2 for n in self.resolution):
            raise ConfigurationError("resolution must be >= 2 per axis")
        if any(not float(p) > 0 for p in self.period):
            raise ConfigurationError("period must be > 0 per axis")
        if self.domain_kind not in ("omega_box", "unit_cell", "T_cell"):
            raise ConfigurationError(f"unknown domain kind {self.domain_kind!r}")
        object.__setattr__(self, "resolution", tuple(int(n) for n in self.resolution))
        object.__setattr__(self, "period", tuple(float(p) for p in self.period))

    @property
    def dim(self) -> int:
        return len(self.resolution)

    @property
    def spacing(self) -> np.ndarray:
        return np.array(self.period) / np.array(self.resolution)

    @property
    def measure(self) -> float:
        return float(np.prod(self.period))

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.resolution))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def node_shape(self, boundary: str = "free") -> tuple:
        if boundary == "periodic":
            return self.resolution
        return tuple(n + 1 for n in self.resolution)

    def node_coords(self, boundary: str = "free") -> np.ndarray:
        """Array of shape ``(*node_shape, N)``."""
        axes = [np.arange(m) * h for m, h in zip(self.node_shape(boundary), self.spacing)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def cell_centers(self) -> np.ndarray:
        """Array of shape ``(*resolution, N)``."""
        axes = [(np.arange(n) + 0.5) * h for n, h in zip(self.resolution, self.spacing)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def to_dict(self) -> dict:
        return {
            "resolution": list(self.resolution),
            "period": list(self.period),
            "domain_kind": self.domain_kind,
            "T": self.T,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TorusGrid":
        return cls(tuple(data["resolution"]), tuple(data["period"]), data.get("domain_kind", "omega_box"), data.get("T"))


def unit_cell(resolution: int, N: int) -> TorusGrid:
    return TorusGrid((resolution,) * N, (1.0,) * N, "unit_cell")


def t_cell(T: int, resolution_per_unit: int, N: int) -> TorusGrid:
    return TorusGrid((int(T) * resolution_per_unit,) * N, (float(T),) * N, "T_cell", float(T))


def box(resolution, lengths) -> TorusGrid:
    return TorusGrid(tuple(resolution), tuple(lengths), "omega_box")


@dataclass(frozen=True, eq=False)
class TorusField:
    """Samples of ``u: domain -> R^d`` on grid nodes.

    ``values`` has shape ``(*grid.node_shape(boundary), d)``.
    """

    grid: TorusGrid
    values: np.ndarray
    boundary: str = "free"
    F: np.ndarray | None = None

    def __post_init__(self):
        if self.boundary not in BOUNDARIES:
            raise ConfigurationError(f"unknown boundary kind {self.boundary!r}")
        vals = np.array(self.values, dtype=float)
        shape = self.grid.node_shape(self.boundary)
        if vals.shape[:-1] != shape:
            raise ConfigurationError(f"values shape {vals.shape} does not match nodes {shape} + (d,)")
        if not np.all(np.isfinite(vals)):
            raise ConfigurationError("field values must be finite")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        if self.boundary == "zero_dirichlet":
            if np.max(np.abs(_boundary_layer(vals, self.grid.dim)), initial=0.0) > 1e-12:
                raise ConfigurationError("zero_dirichlet field does not vanish on the boundary")
        if self.boundary == "affine":
            if self.F is None:
                raise ConfigurationError("affine boundary needs F")
            F = np.array(self.F, dtype=float).reshape(self.d, self.grid.dim)
            object.__setattr__(self, "F", F)
            target = self.grid.node_coords(self.boundary) @ F.T
            gap = _boundary_layer(vals - target, self.grid.dim)
            if np.max(np.abs(gap), initial=0.0) > 1e-9 * (1.0 + np.abs(F).max()):
                raise ConfigurationError("affine field does not match F.x on the boundary")

    @property
    def d(self) -> int:
        return self.values.shape[-1]

    @property
    def samples(self) -> np.ndarray:
        return self.values.reshape(-1, self.d)

    def pointwise_norm(self) -> np.ndarray:
        return np.linalg.norm(self.samples, axis=1)

    def coords(self) -> np.ndarray:
        return self.grid.node_coords(self.boundary)

    @classmethod
    def from_function(cls, grid: TorusGrid, fn: Callable, d: int = 1, boundary: str = "free", F=None) -> "TorusField":
        X = grid.node_coords(boundary)
        vals = np.asarray(fn(X.reshape(-1, grid.dim)), dtype=float).reshape(X.shape[:-1] + (d,))
        return cls(grid, vals, boundary, F)


def _boundary_layer(vals: np.ndarray, N: int) -> np.ndarray:
    parts = []
    for k in range(N):
        parts.append(np.take(vals, 0, axis=k).ravel())
        parts.append(np.take(vals, -1, axis=k).ravel())
    return np.concatenate(parts)


def affine_field(grid: TorusGrid, F) -> TorusField:
    F = np.atleast_2d(np.asarray(F, dtype=float))
    X = grid.node_coords("affine")
    return TorusField(grid, X @ F.T, "affine", F)


@dataclass(frozen=True, eq=False)
class GradientField:
    """Discrete gradient samples of shape ``(*sample_shape, d, N)``."""

    grid: TorusGrid
    values: np.ndarray
    scheme: str
    location: str  # "cells" (forward), "nodes" (centered) or "simplices"
    boundary: str = "free"
    sample_points: np.ndarray | None = None

    @property
    def samples(self) -> np.ndarray:
        d, N = self.values.shape[-2:]
        return self.values.reshape(-1, d, N)

    def points(self) -> np.ndarray:
        if self.sample_points is not None:
            return self.sample_points
        if self.location == "cells":
            return self.grid.cell_centers().reshape(-1, self.grid.dim)
        return self.grid.node_coords(self.boundary).reshape(-1, self.grid.dim)

    def weights(self) -> np.ndarray:
        """Quadrature weights of the samples, summing to the domain measure."""
        n = self.samples.shape[0]
        return np.full(n, self.grid.measure / n)


def discrete_gradient(u: TorusField, scheme: str = "forward") -> GradientField:
    """Finite-difference gradient honoring the field's boundary kind.

    ``forward`` differences live on cells (periodic fields wrap); ``centered``
    differences live on nodes and fall back to one-sided differences on the
    boundary layer of non-periodic fields.
    """
    g, N, v = u.grid, u.grid.dim, u.values
    h = g.spacing
    periodic = u.boundary == "periodic"
    if scheme == "forward":
        comps = []
        for k in range(N):
            if periodic:
                dk = (np.roll(v, -1, axis=k) - v) / h[k]
            else:
                dk = np.diff(v, axis=k) / h[k]
                for j in range(N):
                    if j != k:
                        dk = np.take(dk, np.arange(g.resolution[j]), axis=j)
            comps.append(dk)
        return GradientField(g, np.stack(comps, axis=-1), scheme, "cells", u.boundary)
    if scheme == "centered":
        if min(g.resolution) < 3:
            raise ConfigurationError("centered differences need resolution >= 3")
        comps = []
        for k in range(N):
            if periodic:
                comps.append((np.roll(v, -1, axis=k) - np.roll(v, 1, axis=k)) / (2.0 * h[k]))
            else:
                comps.append(np.gradient(v, h[k], axis=k, edge_order=1))
        return GradientField(g, np.stack(comps, axis=-1), scheme, "nodes", u.boundary)
    raise ConfigurationError(f"unknown scheme {scheme!r}")


def sawtooth(t):
    """2-periodic hat: ``t`` on ``[0, 1]``, ``2 - t`` on ``[1, 2]``."""
    m = np.mod(np.asarray(t, dtype=float), 2.0)
    out = np.where(m <= 1.0, m, 2.0 - m)
    return float(out) if out.ndim == 0 else out


# -- correctors --------------------------------------------------------------


class Corrector:
    """Fine-scale profile ``u1(x, y)``, ``Y``-periodic in ``y``.

    Subclasses implement ``__call__(x, y) -> (M, d)``; gradients default to
    central differences.
    """

    d: int = 1
    N: int = 1
    fd_step: float = 1e-6

    def __call__(self, x, y, z=None):
        raise NotImplementedError

    def grad_y(self, x, y, z=None):
        return self._fd(x, y, z, which=1)

    def grad_x(self, x, y, z=None):
        return self._fd(x, y, z, which=0)

    def grad_z(self, x, y, z):
        return self._fd(x, y, z, which=2)

    def _fd(self, x, y, z, which):
        args = [np.asarray(x, float), np.asarray(y, float), None if z is None else np.asarray(z, float)]
        M = args[1].shape[0]
        out = np.zeros((M, self.d, self.N))
        for k in range(self.N):
            hi = [a if a is None else a.copy() for a in args]
            lo = [a if a is None else a.copy() for a in args]
            hi[which][:, k] += self.fd_step
            lo[which][:, k] -= self.fd_step
            out[:, :, k] = (self(*hi) - self(*lo)) / (2.0 * self.fd_step)
        return out

    def sup_norm(self, n: int = 16) -> float:
        """Sup of ``|u1|`` over a tensor sample of ``Y`` at ``x = 0``."""
        axes = [np.arange(n) / n] * self.N
        y = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, self.N)
        return float(np.max(np.abs(self(np.zeros_like(y), y))))

    def to_dict(self) -> dict | None:
        return None


class ZeroCorrector(Corrector):
    def __init__(self, d: int, N: int):
        self.d, self.N = d, N

    def __call__(self, x, y, z=None):
        return np.zeros((np.shape(y)[0], self.d))

    def grad_y(self, x, y, z=None):
        return np.zeros((np.shape(y)[0], self.d, self.N))

    grad_x = grad_y

    def grad_z(self, x, y, z):
        return np.zeros((np.shape(y)[0], self.d, self.N))

    def to_dict(self):
        return {"kind": "zero", "d": self.d, "N": self.N}


_TRIG = {
    "sin": (np.sin, np.cos),
    "cos": (np.cos, lambda t: -np.sin(t)),
}


class TrigCorrector(Corrector):
    """Sum of separable trigonometric terms.

    Each term is a dict with ``component`` (output index), ``amp``,
    optional ``x_slope`` (length-N list, multiplies by ``1 + x_slope . x``)
    and ``factors``: a list of ``[var, axis, "sin"|"cos", mode]`` with
    ``var`` in ``{"y", "z"}``. A term evaluates to
    ``amp (1 + x_slope.x) prod trig(2 pi mode var[axis])``.
    Every term needs a factor with nonzero mode so that ``u1`` has zero
    cell mean in ``y`` (or ``z``).
    """

    def __init__(self, terms: Sequence[dict], d: int, N: int):
        self.d, self.N = int(d), int(N)
        self.terms = [self._normalize(t) for t in terms]

    def _normalize(self, t: dict) -> dict:
        factors = [(str(v), int(a), str(f), int(m)) for v, a, f, m in t["factors"]]
        if not any(m != 0 for _, _, _, m in factors):
            raise ConfigurationError("each corrector term needs a factor with nonzero mode")
        for v, a, f, _ in factors:
            if v not in ("y", "z") or not 0 <= a < self.N or f not in _TRIG:
                raise ConfigurationError(f"bad corrector factor {(v, a, f)}")
        if len({(v, a) for v, a, _, _ in factors}) != len(factors):
            raise ConfigurationError("corrector factors must use distinct (var, axis) pairs")
        slope = np.zeros(self.N) if t.get("x_slope") is None else np.asarray(t["x_slope"], float)
        return {"component": int(t.get("component", 0)), "amp": float(t["amp"]), "x_slope": slope, "factors": factors}

    @property
    def uses_z(self) -> bool:
        return any(v == "z" for t in self.terms for v, *_ in t["factors"])

    def _eval(self, x, y, z, dvar=None, daxis=None):
        y = np.asarray(y, float)
        M = y.shape[0]
        x = np.zeros((M, self.N)) if x is None else np.asarray(x, float)
        vars_ = {"y": y, "z": z}
        out = np.zeros((M, self.d))
        for t in self.terms:
            mod = 1.0 + x @ t["x_slope"]
            if dvar == "x":
                mod = np.full(M, t["x_slope"][daxis])
            prod = t["amp"] * mod
            hit = dvar in (None, "x")
            for v, a, f, m in t["factors"]:
                arg = 2.0 * np.pi * m * vars_[v][:, a]
                if v == dvar and a == daxis and not hit:
                    prod = prod * _TRIG[f][1](arg) * 2.0 * np.pi * m
                    hit = True
                else:
                    prod = prod * _TRIG[f][0](arg)
            if hit:
                out[:, t["component"]] += prod
        return out

    def __call__(self, x, y, z=None):
        return self._eval(x, y, z)

    def _grad(self, x, y, z, var):
        return np.stack([self._eval(x, y, z, var, k) for k in range(self.N)], axis=-1)

    def grad_y(self, x, y, z=None):
        return self._grad(x, y, z, "y")

    def grad_z(self, x, y, z):
        return self._grad(x, y, z, "z")

    def grad_x(self, x, y, z=None):
        return self._grad(x, y, z, "x")

    def to_dict(self):
        terms = [
            {"component": t["component"], "amp": t["amp"], "x_slope": t["x_slope"].tolist(), "factors": [list(f) for f in t["factors"]]}
            for t in self.terms
        ]
        return {"kind": "trig", "d": self.d, "N": self.N, "terms": terms}


class GridCorrector(Corrector):
    """x-independent corrector stored on a periodic ``Y`` grid.

    ``values`` has shape ``(*y_resolution, d)``; evaluation is periodic
    multilinear interpolation, whose gradient is exact on the grid cells.
    """

    def __init__(self, values: np.ndarray):
        self.values = np.asarray(values, dtype=float)
        self.N = self.values.ndim - 1
        self.d = self.values.shape[-1]
        self.res = np.array(self.values.shape[:-1])

    def _corners(self, y):
        s = frac(y) * self.res
        i0 = np.floor(s).astype(int) % self.res
        t = s - np.floor(s)
        return i0, t

    def __call__(self, x, y, z=None):
        y = np.asarray(y, float)
        i0, t = self._corners(y)
        out = np.zeros((y.shape[0], self.d))
        for corner in np.ndindex(*(2,) * self.N):
            c = np.array(corner)
            idx = tuple(((i0 + c) % self.res).T)
            w = np.prod(np.where(c == 1, t, 1.0 - t), axis=1)
            out += w[:, None] * self.values[idx]
        return out

    def grad_y(self, x, y, z=None):
        y = np.asarray(y, float)
        i0, t = self._corners(y)
        out = np.zeros((y.shape[0], self.d, self.N))
        for corner in np.ndindex(*(2,) * self.N):
            c = np.array(corner)
            idx = tuple(((i0 + c) % self.res).T)
            vals = self.values[idx]
            for k in range(self.N):
                w = np.ones(y.shape[0]) * (1.0 if c[k] else -1.0) * self.res[k]
                for j in range(self.N):
                    if j != k:
                        w = w * np.where(c[j] == 1, t[:, j], 1.0 - t[:, j])
                out[:, :, k] += w[:, None] * vals
        return out

    def grad_x(self, x, y, z=None):
        return np.zeros((np.shape(y)[0], self.d, self.N))


class FunctionCorrector(Corrector):
    """Wrap a plain callable ``fn(x, y) -> (M, d)`` (not serializable)."""

    def __init__(self, fn: Callable, d: int, N: int, grad_y: Callable | None = None):
        self.fn, self.d, self.N = fn, d, N
        self._grad_y = grad_y

    def __call__(self, x, y, z=None):
        return np.asarray(self.fn(x, y) if z is None else self.fn(x, y, z), dtype=float).reshape(-1, self.d)

    def grad_y(self, x, y, z=None):
        if self._grad_y is not None:
            return self._grad_y(x, y)
        return super().grad_y(x, y, z)


def corrector_from_dict(data: dict | None, d: int, N: int) -> Corrector:
    if not data or data.get("kind") == "zero":
        return ZeroCorrector(d, N)
    if data["kind"] == "trig":
        return TrigCorrector(data["terms"], data.get("d", d), data.get("N", N))
    raise ConfigurationError(f"unknown corrector kind {data['kind']!r}")


# -- oscillating sequences ----------------------------------------------------


def admissible_epsilons(grid: TorusGrid) -> list[float]:
    """Values ``eps`` with ``period/eps`` and ``eps/h`` integers on every axis."""
    out = None
    for n, p in zip(grid.resolution, grid.period):
        cands = {p / m for m in range(1, n + 1) if n % m == 0}
        out = cands if out is None else {e for e in out if any(math.isclose(e, c, rel_tol=1e-12) for c in cands)}
    return sorted(out)


def check_commensurate(grid: TorusGrid, eps: float, what: str = "epsilon") -> None:
    """Raise unless every axis holds an integer number of periods of
    integer length in grid steps."""
    if not eps > 0:
        raise ConfigurationError(f"{what} must be positive")
    for n, p in zip(grid.resolution, grid.period):
        periods = p / eps
        steps = eps * n / p
        if abs(periods - round(periods)) > 1e-9 * max(1.0, periods) or abs(steps - round(steps)) > 1e-9 * max(1.0, steps) or round(steps) < 1:
            cands = admissible_epsilons(grid)
            nearest = min(cands, key=lambda c: abs(c - eps)) if cands else None
            raise ConfigurationError(
                f"{what}={eps!r} is incommensurate with grid resolution {grid.resolution} "
                f"and period {grid.period}; nearest admissible {what} is {nearest!r}"
            )


def oscillating_sequence(
    u: TorusField,
    u1: Corrector,
    epsilons: Sequence[float],
    scales: str = "one_scale",
) -> list[TorusField]:
    """``u + eps u1(x, x/eps)`` (one scale) or
    ``u + eps**2 u1(x, x/eps, x/eps**2)`` (two scales), sampled on u's nodes."""
    if scales not in ("one_scale", "two_scale"):
        raise ConfigurationError(f"unknown scales {scales!r}")
    X = u.coords().reshape(-1, u.grid.dim)
    out = []
    for eps in epsilons:
        check_commensurate(u.grid, eps)
        if scales == "one_scale":
            pert = eps * u1(X, frac(X / eps))
        else:
            check_commensurate(u.grid, eps**2, "epsilon**2")
            pert = eps**2 * u1(X, frac(X / eps), frac(X / eps**2))
        vals = u.values + pert.reshape(u.values.shape)
        boundary = u.boundary
        if boundary != "periodic" and np.max(np.abs(_boundary_layer(pert.reshape(u.values.shape), u.grid.dim)), initial=0.0) > 1e-12:
            boundary = "free"
        out.append(TorusField(u.grid, vals, boundary, u.F if boundary == "affine" else None))
    return out


def sawtooth_sequence(grid: TorusGrid, eps: float) -> TorusField:
    """``u(x1, x2) = eps * sawtooth(x1/eps) * x2`` on a 2-D box (d=1)."""
    if grid.dim != 2:
        raise ConfigurationError("the sawtooth construction lives in N=2")
    check_commensurate(grid, eps)
    X = grid.node_coords("free")
    vals = eps * sawtooth(X[..., 0] / eps) * X[..., 1]
    return TorusField(grid, vals[..., None], "free")


def laminate_field(grid: TorusGrid, F, a, axis: int, eps: float, theta: float, amplitude: float = 1.0) -> TorusField:
    """Simple laminate ``F.x + eps * amplitude * psi(x_axis/eps) * a``.

    ``psi`` is 1-periodic with slope ``1 - theta`` on ``[0, theta)`` and
    ``-theta`` on ``[theta, 1)``, so the gradients take the values
    ``F + amplitude (1-theta) a (x) e_axis`` (volume fraction ``theta``) and
    ``F - amplitude theta a (x) e_axis``; their average is ``F``.
    """
    check_commensurate(grid, eps)
    F = np.atleast_2d(np.asarray(F, float))
    a = np.asarray(a, float).reshape(-1)
    steps = theta * eps / grid.spacing[axis]
    if abs(steps - round(steps)) > 1e-9:
        raise ConfigurationError("theta * eps must be a whole number of grid steps")
    X = grid.node_coords("free")
    s = frac(X[..., axis] / eps)
    psi = np.where(s < theta, (1.0 - theta) * s, theta * (1.0 - s))
    vals = X @ F.T + eps * amplitude * psi[..., None] * a
    return TorusField(grid, vals, "free")


# -- serialization ------------------------------------------------------------


def save_field(u: TorusField, path) -> None:
    """Binary layout: magic, uint32 header length, JSON header, float64 LE samples."""
    header = {
        "grid": u.grid.to_dict(),
        "components": u.d,
        "boundary": u.boundary,
        "F": None if u.F is None else np.asarray(u.F).tolist(),
        "shape": list(u.values.shape),
        "dtype": "<f8",
        "order": "C",
    }
    blob = json.dumps(header, sort_keys=True).encode()
    buf = io.BytesIO()
    buf.write(_MAGIC)
    buf.write(struct.pack("<I", len(blob)))
    buf.write(blob)
    buf.write(np.ascontiguousarray(u.values, dtype="<f8").tobytes())
    Path(path).write_bytes(buf.getvalue())


def load_field(path) -> TorusField:
    raw = Path(path).read_bytes()
    if raw[:4] != _MAGIC:
        raise ConfigurationError(f"{path}: not a field file")
    (n,) = struct.unpack("<I", raw[4:8])
    header = json.loads(raw[8 : 8 + n])
    vals = np.frombuffer(raw[8 + n :], dtype="<f8").reshape(header["shape"])
    return TorusField(TorusGrid.from_dict(header["grid"]), vals.copy(), header["boundary"], header["F"])


def field_to_csv(u: TorusField, path, slice_index: int = 0) -> None:
    """CSV of node coordinates and components; grids with N > 2 are sliced
    at ``slice_index`` along the trailing axes."""
    X, V = u.coords(), u.values
    while X.ndim - 1 > 2:
        X, V = X[..., slice_index, :], V[..., slice_index, :]
    keep = X.shape[-1] if X.ndim - 1 == X.shape[-1] else X.ndim - 1
    X = X[..., :keep].reshape(-1, keep)
    V = V.reshape(-1, u.d)
    cols = [f"x{k + 1}" for k in range(keep)] + [f"u{k + 1}" for k in range(u.d)]
    lines = [",".join(cols)]
    lines += [",".join(repr(float(v)) for v in row) for row in np.hstack([X, V])]
    Path(path).write_text("\n".join(lines) + "\n")
