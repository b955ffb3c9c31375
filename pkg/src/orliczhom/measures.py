"""Empirical Young measures as sparse histograms.

A measure is stored as triplets ``(x_cell, y_cell, bin, weight, rep)``
where ``rep`` is the centroid of the gradient samples that fell into that
histogram entry. Weights of every ``(x_cell, y_cell)`` pair sum to one;
the overflow bin has id ``-1``.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigurationError, EstimationError, PairingError
from .fields import GradientField, TorusField, check_commensurate, discrete_gradient, frac
from .young import YoungFunction, phi_eval

__all__ = [
    "BinSpec",
    "EmpiricalYoungMeasure",
    "GradientYoungMeasure",
    "PhiMoment",
    "histogram_from_samples",
    "estimate_two_scale_ym",
    "estimate_gradient_ym",
    "pairing",
    "barycenter",
    "phi_moment",
    "y_marginalize",
    "average_x",
    "pairing_series",
    "y_uniformity",
    "OVERFLOW_THRESHOLD",
]

OVERFLOW_THRESHOLD = 1e-3
MAX_ACTIVE = 4


@dataclass(frozen=True)
class BinSpec:
    """Partition of ``Omega``, of ``Y`` and of a window in matrix space.

    ``window`` is ``None`` (sized from the samples with ``margin`` on both
    sides) or one ``(lo, hi)`` pair per active entry. ``active`` lists the
    ``(i, j)`` matrix entries that are binned; default all, at most four.
    """

    x_cells: tuple = (4,)
    y_cells: tuple = (4,)
    nbins: int = 32
    window: tuple | None = None
    margin: float = 0.1
    active: tuple | None = None

    def __post_init__(self):
        if self.nbins < 1:
            raise ConfigurationError("nbins must be >= 1")
        if any(int(c) < 1 for c in tuple(self.x_cells) + tuple(self.y_cells)):
            raise ConfigurationError("cell counts must be >= 1")

    @classmethod
    def from_dict(cls, data: dict) -> "BinSpec":
        data = dict(data)
        for key in ("x_cells", "y_cells"):
            if key in data:
                data[key] = tuple(int(v) for v in np.atleast_1d(data[key]))
        if data.get("window") is not None:
            data["window"] = tuple(tuple(float(v) for v in w) for w in data["window"])
        if data.get("active") is not None:
            data["active"] = tuple(tuple(int(v) for v in a) for a in data["active"])
        return cls(**data)

    def to_dict(self) -> dict:
        return {
            "x_cells": list(self.x_cells),
            "y_cells": list(self.y_cells),
            "nbins": self.nbins,
            "window": None if self.window is None else [list(w) for w in self.window],
            "margin": self.margin,
            "active": None if self.active is None else [list(a) for a in self.active],
        }


def _cells_of(points: np.ndarray, lengths: np.ndarray, counts: tuple) -> np.ndarray:
    counts = np.asarray(counts, dtype=int)
    idx = np.floor(points / lengths * counts).astype(int)
    idx = np.clip(idx, 0, counts - 1)
    return np.ravel_multi_index(tuple(idx.T), tuple(counts))


def _group(keys: np.ndarray, weights: np.ndarray, reps: np.ndarray):
    """Sum weights and weight-average reps over equal key rows."""
    uniq, inv = np.unique(keys, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    w = np.bincount(inv, weights=weights, minlength=len(uniq))
    flat = reps.reshape(len(reps), -1)
    acc = np.zeros((len(uniq), flat.shape[1]))
    np.add.at(acc, inv, weights[:, None] * flat)
    safe = np.where(w > 0, w, 1.0)
    return uniq, w, (acc / safe[:, None]).reshape((len(uniq),) + reps.shape[1:])


@dataclass
class EmpiricalYoungMeasure:
    """Histogram of ``(x, <x/eps>, grad u)`` samples.

    Attributes
    ----------
    cx, cy, bins : int arrays
        Flat x-cell index, flat y-cell index and flat bin index (-1 overflow).
    weights : ndarray
        Probability weights; they sum to 1 for each ``(cx, cy)``.
    reps : ndarray, shape (K, d, N)
        Sample centroid of every entry.
    counts : ndarray, shape (n_x, n_y)
        Raw number of samples per cell pair.
    """

    spec: BinSpec
    lengths: np.ndarray
    window: np.ndarray
    active: tuple
    cx: np.ndarray
    cy: np.ndarray
    bins: np.ndarray
    weights: np.ndarray
    reps: np.ndarray
    counts: np.ndarray
    provenance: dict = field(default_factory=dict)

    @property
    def d(self) -> int:
        return self.reps.shape[1]

    @property
    def N(self) -> int:
        return self.reps.shape[2]

    @property
    def n_x(self) -> int:
        return int(np.prod(self.spec.x_cells))

    @property
    def n_y(self) -> int:
        return int(np.prod(self.spec.y_cells))

    @property
    def x_cell_measure(self) -> float:
        return float(np.prod(self.lengths)) / self.n_x

    @property
    def y_cell_measure(self) -> float:
        return 1.0 / self.n_y

    @property
    def bin_width(self) -> np.ndarray:
        return (self.window[:, 1] - self.window[:, 0]) / self.spec.nbins

    def x_centers(self) -> np.ndarray:
        return _centers(self.spec.x_cells, self.lengths)

    def y_centers(self) -> np.ndarray:
        return _centers(self.spec.y_cells, np.ones(len(self.spec.y_cells)))

    def overflow_mass(self) -> float:
        """Overflow mass as a fraction of the total."""
        m = self.x_cell_measure * self.y_cell_measure
        total = m * self.n_x * self.n_y
        return float(np.sum(self.weights[self.bins < 0]) * m / total)

    def cell_sums(self) -> np.ndarray:
        out = np.zeros((self.n_x, self.n_y))
        np.add.at(out, (self.cx, self.cy), self.weights)
        return out

    def header(self) -> dict:
        return {
            "bins": self.spec.to_dict(),
            "lengths": self.lengths.tolist(),
            "window": self.window.tolist(),
            "active": [list(a) for a in self.active],
            "d": self.d,
            "N": self.N,
            "counts": self.counts.tolist(),
            "provenance": self.provenance,
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["x_cell", "y_cell", "bin", "weight"] + [f"rep_{i}{j}" for i in range(self.d) for j in range(self.N)])
        for k in range(len(self.weights)):
            w.writerow([int(self.cx[k]), int(self.cy[k]), int(self.bins[k]), repr(float(self.weights[k]))]
                       + [repr(float(v)) for v in self.reps[k].ravel()])
        return buf.getvalue()

    def save(self, csv_path) -> None:
        """Write triplet CSV plus a JSON header next to it (``.json``)."""
        from pathlib import Path

        p = Path(csv_path)
        p.write_text(self.to_csv())
        p.with_suffix(".json").write_text(json.dumps(self.header(), sort_keys=True, indent=1))

    @classmethod
    def load(cls, csv_path) -> "EmpiricalYoungMeasure":
        from pathlib import Path

        p = Path(csv_path)
        head = json.loads(p.with_suffix(".json").read_text())
        rows = list(csv.reader(io.StringIO(p.read_text())))[1:]
        d, N = head["d"], head["N"]
        arr = np.array([[float(v) for v in r] for r in rows]).reshape(-1, 4 + d * N)
        return cls(
            BinSpec.from_dict(head["bins"]), np.array(head["lengths"]), np.array(head["window"]),
            tuple(tuple(a) for a in head["active"]), arr[:, 0].astype(int), arr[:, 1].astype(int),
            arr[:, 2].astype(int), arr[:, 3], arr[:, 4:].reshape(-1, d, N), np.array(head["counts"]),
            head.get("provenance", {}),
        )


@dataclass
class GradientYoungMeasure:
    """Histogram over ``(x_cell, bin)``; weights sum to one per x cell."""

    spec: BinSpec
    lengths: np.ndarray
    window: np.ndarray
    cx: np.ndarray
    bins: np.ndarray
    weights: np.ndarray
    reps: np.ndarray

    @property
    def n_x(self) -> int:
        return int(np.prod(self.spec.x_cells))

    @property
    def x_cell_measure(self) -> float:
        return float(np.prod(self.lengths)) / self.n_x

    @property
    def bin_width(self) -> np.ndarray:
        return (self.window[:, 1] - self.window[:, 0]) / self.spec.nbins

    def x_centers(self) -> np.ndarray:
        return _centers(self.spec.x_cells, self.lengths)

    def overflow_mass(self) -> float:
        return float(np.sum(self.weights[self.bins < 0]) / self.n_x)

    def barycenter(self) -> np.ndarray:
        out = np.zeros((self.n_x,) + self.reps.shape[1:])
        np.add.at(out, self.cx, self.weights[:, None, None] * self.reps)
        return out

    def pairing(self, z: Callable | None, varphi: Callable, bounded: bool = False) -> float:
        _check_overflow(self.weights, self.bins, bounded)
        zc = _z_values(z, self.x_centers())
        return float(np.sum(zc[self.cx] * varphi(self.reps) * self.weights) * self.x_cell_measure)


@dataclass
class PhiMoment:
    cells: np.ndarray
    total: float


def _centers(counts, lengths) -> np.ndarray:
    axes = [(np.arange(c) + 0.5) * L / c for c, L in zip(counts, lengths)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(counts))


def _active_entries(d: int, N: int, spec: BinSpec) -> tuple:
    if spec.active is not None:
        act = tuple(tuple(a) for a in spec.active)
    else:
        act = tuple((i, j) for i in range(d) for j in range(N))
    if len(act) > MAX_ACTIVE:
        raise ConfigurationError(f"{len(act)} active matrix entries; at most {MAX_ACTIVE} can be binned, set bins.active")
    return act


def histogram_from_samples(points, y, xi, sample_weights, spec: BinSpec, lengths, provenance=None) -> EmpiricalYoungMeasure:
    """Bin samples ``(x, y, xi)`` with quadrature weights."""
    points = np.asarray(points, float)
    y = np.asarray(y, float)
    xi = np.asarray(xi, float)
    M, d, N = xi.shape
    lengths = np.asarray(lengths, float)
    if len(spec.x_cells) != points.shape[1] or len(spec.y_cells) != y.shape[1]:
        raise ConfigurationError(f"x_cells/y_cells need {points.shape[1]}/{y.shape[1]} entries")
    act = _active_entries(d, N, spec)
    vals = np.stack([xi[:, i, j] for i, j in act], axis=1)
    if spec.window is None:
        lo, hi = vals.min(axis=0), vals.max(axis=0)
        spread = hi - lo
        # entries that are constant up to rounding get a window of their own scale
        flat = spread <= 1e-9 * (1.0 + np.abs(lo) + np.abs(hi))
        pad = np.where(flat, spec.margin * (1.0 + np.abs(lo)), spec.margin * spread)
        window = np.stack([lo - pad, hi + pad], axis=1)
    else:
        window = np.asarray(spec.window, float).reshape(len(act), 2)
    width = (window[:, 1] - window[:, 0]) / spec.nbins
    idx = np.floor((vals - window[:, 0]) / width).astype(int)
    over = np.any((idx < 0) | (idx >= spec.nbins), axis=1)
    flat = np.ravel_multi_index(tuple(np.clip(idx, 0, spec.nbins - 1).T), (spec.nbins,) * len(act))
    flat = np.where(over, -1, flat)

    cx = _cells_of(points, lengths, spec.x_cells)
    cy = _cells_of(y, np.ones(y.shape[1]), spec.y_cells)
    n_x, n_y = int(np.prod(spec.x_cells)), int(np.prod(spec.y_cells))
    counts = np.zeros((n_x, n_y), dtype=int)
    np.add.at(counts, (cx, cy), 1)
    empty = np.argwhere(counts == 0)
    if len(empty):
        ix, iy = empty[0]
        raise EstimationError(
            f"{len(empty)} (x_cell, y_cell) pairs have no samples (first: x_cell {ix}, y_cell {iy}); "
            "use coarser y_cells/x_cells or a smaller epsilon"
        )
    wts = np.asarray(sample_weights, float)
    keys = np.stack([cx, cy, flat], axis=1)
    uniq, w, reps = _group(keys, wts, xi)
    mass = np.zeros((n_x, n_y))
    np.add.at(mass, (uniq[:, 0], uniq[:, 1]), w)
    w = w / mass[uniq[:, 0], uniq[:, 1]]
    return EmpiricalYoungMeasure(spec, lengths, window, act, uniq[:, 0], uniq[:, 1], uniq[:, 2], w, reps, counts, dict(provenance or {}))


def _gradient_samples(u, scheme: str) -> GradientField:
    if isinstance(u, GradientField):
        return u
    if scheme == "p1":
        from .discrete import p1_gradient

        return p1_gradient(u)
    return discrete_gradient(u, scheme)


def estimate_two_scale_ym(
    us: Sequence[TorusField],
    epsilons: Sequence[float],
    bins: BinSpec | dict,
    index: int = -1,
    scheme: str = "p1",
    provenance: dict | None = None,
) -> EmpiricalYoungMeasure:
    """Histogram of ``(x, <x/eps_n>, grad u_n(x))`` for one member of the sequence.

    The default member is the last (smallest epsilon) one. With the default
    ``scheme="p1"`` the samples are the exact gradients of the piecewise
    affine interpolant on each simplex; ``"forward"`` and ``"centered"`` use
    finite differences.
    """
    if len(us) == 0 or len(us) != len(epsilons):
        raise ConfigurationError("need a nonempty list of fields with matching epsilons")
    spec = bins if isinstance(bins, BinSpec) else BinSpec.from_dict(bins)
    u, eps = us[index], float(epsilons[index])
    if isinstance(u, TorusField):
        check_commensurate(u.grid, eps)
    g = _gradient_samples(u, scheme)
    pts = g.points()
    prov = {"epsilon": eps, "index": index % len(us), "scheme": scheme}
    prov.update(provenance or {})
    return histogram_from_samples(pts, frac(pts / eps), g.samples, g.weights(), spec, g.grid.period, prov)


def estimate_gradient_ym(us: Sequence[TorusField], bins: BinSpec | dict, index: int = -1, scheme: str = "p1") -> GradientYoungMeasure:
    """Histogram of ``(x, grad u_n(x))`` (one y cell)."""
    spec = bins if isinstance(bins, BinSpec) else BinSpec.from_dict(bins)
    u = us[index]
    g = _gradient_samples(u, scheme)
    pts = g.points()
    spec1 = BinSpec(spec.x_cells, (1,) * pts.shape[1], spec.nbins, spec.window, spec.margin, spec.active)
    nu = histogram_from_samples(pts, np.zeros_like(pts), g.samples, g.weights(), spec1, g.grid.period)
    return y_marginalize(nu)


def _check_overflow(weights, bins, bounded: bool):
    if not bounded and np.any(weights[bins < 0] > 0):
        raise PairingError("overflow bin carries mass; pass bounded=True only for bounded test functions")


def _z_values(z, centers) -> np.ndarray:
    if z is None:
        return np.ones(len(centers))
    return np.broadcast_to(np.asarray(z(centers), float), (len(centers),))


def pairing(nu: EmpiricalYoungMeasure, z: Callable | None, varphi: Callable, bounded: bool = False) -> float:
    """``sum z(x_c) varphi(y_c, rep) w |x cell| |y cell|`` over all entries.

    ``z(x)`` takes points of shape ``(M, N)``; ``varphi(y, xi)`` takes
    ``(M, N)`` and ``(M, d, N)`` arrays. ``z=None`` means ``z = 1``.
    """
    _check_overflow(nu.weights, nu.bins, bounded)
    zc = _z_values(z, nu.x_centers())
    yc = nu.y_centers()
    vals = np.asarray(varphi(yc[nu.cy], nu.reps), float)
    return float(np.sum(zc[nu.cx] * vals * nu.weights) * nu.x_cell_measure * nu.y_cell_measure)


def barycenter(nu: EmpiricalYoungMeasure) -> np.ndarray:
    """Mean of each ``nu_(x, y)``, shape ``(n_x, n_y, d, N)``."""
    if nu.overflow_mass() > OVERFLOW_THRESHOLD:
        raise EstimationError(f"overflow mass {nu.overflow_mass():.3g} exceeds {OVERFLOW_THRESHOLD}")
    out = np.zeros((nu.n_x, nu.n_y, nu.d, nu.N))
    np.add.at(out, (nu.cx, nu.cy), nu.weights[:, None, None] * nu.reps)
    return out


def phi_moment(nu: EmpiricalYoungMeasure, phi: YoungFunction) -> PhiMoment:
    """Per-cell ``int Phi(|xi|) dnu_(x,y)`` and its integral over ``Omega x Y``."""
    vals = phi_eval(phi, np.linalg.norm(nu.reps.reshape(len(nu.reps), -1), axis=1))
    cells = np.zeros((nu.n_x, nu.n_y))
    np.add.at(cells, (nu.cx, nu.cy), nu.weights * vals)
    return PhiMoment(cells, float(cells.sum() * nu.x_cell_measure * nu.y_cell_measure))


def y_marginalize(nu: EmpiricalYoungMeasure) -> GradientYoungMeasure:
    """Mix the ``nu_(x, y)`` over y cells with equal (cell measure) weights."""
    w = nu.weights * nu.y_cell_measure
    uniq, w, reps = _group(np.stack([nu.cx, nu.bins], axis=1), w, nu.reps)
    return GradientYoungMeasure(nu.spec, nu.lengths, nu.window, uniq[:, 0], uniq[:, 1], w, reps)


def average_x(nu: EmpiricalYoungMeasure) -> EmpiricalYoungMeasure:
    """x-average of the family: a measure with a single x cell."""
    w = nu.weights / nu.n_x
    uniq, w, reps = _group(np.stack([np.zeros_like(nu.cx), nu.cy, nu.bins], axis=1), w, nu.reps)
    spec = BinSpec((1,) * len(nu.spec.x_cells), nu.spec.y_cells, nu.spec.nbins, nu.spec.window, nu.spec.margin, nu.spec.active)
    counts = nu.counts.sum(axis=0, keepdims=True)
    return EmpiricalYoungMeasure(spec, nu.lengths, nu.window, nu.active, uniq[:, 0], uniq[:, 1], uniq[:, 2], w, reps, counts, dict(nu.provenance))


def pairing_series(us, epsilons, bins, z, varphi, bounded: bool = False) -> list:
    """Pairing of the measure estimated from each member of the sequence."""
    return [pairing(estimate_two_scale_ym(us, epsilons, bins, index=k), z, varphi, bounded) for k in range(len(us))]


def y_uniformity(nu: EmpiricalYoungMeasure) -> tuple[float, float]:
    """Largest relative deviation of the y-cell sample fractions from uniform,
    and the sampling bound ``2 / sqrt(samples per cell)``."""
    c = nu.counts.astype(float)
    per_x = c.sum(axis=1, keepdims=True)
    dev = float(np.max(np.abs(c / per_x * nu.n_y - 1.0)))
    return dev, float(2.0 / np.sqrt(c.min()))
