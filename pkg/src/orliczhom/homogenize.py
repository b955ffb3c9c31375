"""Gamma-limit experiments for oscillating integral functionals.

``minimize_F_eps`` minimizes ``int_Omega f(x, <x/eps>, grad u) dx`` with a
Dirichlet datum; ``gamma_table`` compares the minima along a sequence of
epsilons with ``int_Omega f_hom(grad u) dx``; ``fhom_min_over_measures``
evaluates the homogenized density as a minimum over constructed
homogeneous two-scale measures.
"""
from __future__ import annotations

import csv
import io
import json
import warnings as _warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .characterize import cell_average_gradient
from .discrete import DiscreteEnergy, MinimizationResult, MinimizerConfig, minimize_restarts, p1_gradient
from .envelopes import cell_fhom
from .errors import ConfigurationError
from .fields import (
    GridCorrector,
    TorusField,
    TorusGrid,
    affine_field,
    box,
    check_commensurate,
    frac,
    laminate_field,
    oscillating_sequence,
)
from .integrand import Integrand
from .measures import BinSpec, EmpiricalYoungMeasure, average_x, estimate_two_scale_ym
from .young import YoungFunction, phi_eval

__all__ = [
    "FEpsResult",
    "GammaExperiment",
    "minimize_F_eps",
    "gamma_table",
    "fhom_min_over_measures",
    "corrector_candidate",
    "laminate_candidate",
    "dirac_candidate",
    "tail_mass",
]


@dataclass
class FEpsResult:
    eps: float
    value: float
    minimizer: TorusField
    result: MinimizationResult

    def row(self) -> dict:
        return {"eps": self.eps, "value": self.value, "iterations": self.result.iterations,
                "converged": self.result.converged, "restart": self.result.restart}


def _datum_grid(datum, N: int, cfg: MinimizerConfig, lengths) -> TorusGrid:
    if isinstance(datum, TorusField):
        return datum.grid
    lengths = tuple(float(v) for v in (lengths or (1.0,) * N))
    res = tuple(int(round(cfg.resolution * L)) for L in lengths)
    return box(res, lengths)


def minimize_F_eps(
    f: Integrand,
    phi: YoungFunction | None,
    eps: float,
    boundary,
    cfg: MinimizerConfig | None = None,
    lengths=None,
) -> FEpsResult:
    """Discrete minimum of ``F_eps`` over fields equal to the datum on the boundary.

    Parameters
    ----------
    boundary
        An affine gradient ``F`` (array-like of shape ``(d, N)``) or a
        :class:`TorusField` whose boundary values are kept.
    lengths
        Box side lengths for an affine datum (default unit cube);
        ``cfg.resolution`` counts intervals per unit length.
    """
    cfg = cfg or MinimizerConfig()
    grid = _datum_grid(boundary, f.N, cfg, lengths)
    check_commensurate(grid, eps)
    if isinstance(boundary, TorusField):
        if boundary.boundary == "periodic":
            raise ConfigurationError("the boundary datum must carry boundary values (not periodic)")
        datum = boundary
        base = p1_gradient(datum).samples
    else:
        F = np.asarray(boundary, float).reshape(f.d, f.N)
        datum = affine_field(grid, F)
        base = F
    energy = DiscreteEnergy(grid, f, base)
    energy.y = frac(energy.x / eps)
    amp = 1.0 + float(np.max(np.linalg.norm(np.reshape(base, (-1, f.d * f.N)), axis=1)))
    best, _ = minimize_restarts(energy, cfg, amplitude=amp)
    vals = datum.values + energy.embed(best.x)
    u = TorusField(grid, vals, datum.boundary, datum.F if datum.boundary == "affine" else None)
    return FEpsResult(float(eps), best.value * grid.measure, u, best)


@dataclass
class GammaExperiment:
    integrand: dict
    phi: dict | None
    boundary: object
    epsilon_list: list
    per_eps: list
    reference: float
    cell_values: list
    measure_reference: float | None = None
    minimizers: list = field(default_factory=list, repr=False)

    @property
    def values(self) -> np.ndarray:
        return np.array([r["value"] for r in self.per_eps])

    @property
    def gaps(self) -> np.ndarray:
        return np.abs(self.values - self.reference)

    @property
    def relative_gaps(self) -> np.ndarray:
        return self.gaps / max(abs(self.reference), 1e-300)

    def to_dict(self) -> dict:
        b = self.boundary
        return {
            "integrand": self.integrand,
            "phi": self.phi,
            "boundary": np.asarray(b).tolist() if not isinstance(b, TorusField) else "field",
            "epsilon_list": list(self.epsilon_list),
            "per_eps": self.per_eps,
            "reference": self.reference,
            "cell_values": self.cell_values,
            "gaps": self.gaps.tolist(),
            "measure_reference": self.measure_reference,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["eps", "minF_eps", "reference", "gap"])
        for r, gap in zip(self.per_eps, self.gaps):
            w.writerow([repr(r["eps"]), repr(r["value"]), repr(self.reference), repr(float(gap))])
        return buf.getvalue()


def gamma_table(
    f: Integrand,
    phi: YoungFunction | None,
    boundary,
    epsilon_list: Sequence[float],
    cfg: MinimizerConfig | None = None,
    cell_cfg: MinimizerConfig | None = None,
    T_list: Sequence[int] = (1, 2, 4),
    x_cells=None,
    lengths=None,
) -> GammaExperiment:
    """Minima of ``F_eps`` along ``epsilon_list`` and the homogenized reference.

    The reference integrates ``f_hom`` of the datum's gradient with one
    cell problem per x cell (gradient and slow variable frozen at the cell
    mean and center). Affine data need a single cell problem.
    """
    cfg = cfg or MinimizerConfig()
    cell_cfg = cell_cfg or cfg
    eps = [float(e) for e in epsilon_list]
    if not eps or any(b >= a for a, b in zip(eps, eps[1:])):
        raise ConfigurationError("epsilon_list must be nonempty and strictly decreasing")
    grid = _datum_grid(boundary, f.N, cfg, lengths)
    for e in eps:
        check_commensurate(grid, e)

    if isinstance(boundary, TorusField):
        x_cells = tuple(x_cells or (1,) * f.N)
        grads = cell_average_gradient(boundary, x_cells, grid.period)
    else:
        x_cells = tuple(x_cells or (1,) * f.N)
        F = np.asarray(boundary, float).reshape(f.d, f.N)
        grads = np.broadcast_to(F, (int(np.prod(x_cells)), f.d, f.N))
    centers = _cell_centers(x_cells, grid.period)
    cache: dict = {}
    cell_values = []
    for g, xc in zip(grads, centers):
        key = (g.tobytes(), xc.tobytes() if f.depends_x else b"")
        if key not in cache:
            cache[key] = cell_fhom(f, g, T_list, cell_cfg, x=xc if f.depends_x else None).extrapolated
        cell_values.append(cache[key])
    reference = float(np.sum(cell_values) * grid.measure / len(cell_values))

    per_eps, mins = [], []
    for e in eps:
        r = minimize_F_eps(f, phi, e, boundary, cfg, lengths)
        per_eps.append(r.row())
        mins.append(r.minimizer)
    return GammaExperiment(
        f.to_dict() if f.recipe is not None else {"name": f.name},
        phi.to_dict() if phi is not None else None,
        boundary, eps, per_eps, reference, [float(v) for v in cell_values], None, mins,
    )


def _cell_centers(counts, lengths) -> np.ndarray:
    axes = [(np.arange(c) + 0.5) * L / c for c, L in zip(counts, lengths)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, len(counts))


def _barycenter_mean(nu: EmpiricalYoungMeasure) -> np.ndarray:
    out = np.einsum("k,kij->ij", nu.weights, nu.reps)
    return out / (nu.n_x * nu.n_y)


def fhom_min_over_measures(
    f: Integrand,
    phi: YoungFunction | None,
    F,
    candidates: Sequence[EmpiricalYoungMeasure],
    tol: float = 1e-2,
) -> tuple[float, list]:
    """Minimum of ``int_Y <nu_y, f(y, .)> dy`` over admissible candidates.

    A candidate is admissible when its mean barycenter over ``(y, xi)``
    is within ``tol`` of ``F``; others are skipped with a warning. Returns
    ``(value, per-candidate rows)``.
    """
    F = np.asarray(F, float).reshape(f.d, f.N)
    if len(candidates) == 0:
        raise ConfigurationError("no candidate measures given")
    rows, best = [], np.inf
    for k, nu in enumerate(candidates):
        if nu.n_x != 1:
            nu = average_x(nu)
        miss = float(np.linalg.norm(_barycenter_mean(nu) - F))
        yc = nu.y_centers()
        value = float(np.sum(nu.weights * f(None, yc[nu.cy], nu.reps)) * nu.y_cell_measure)
        ok = miss <= tol
        rows.append({"candidate": k, "value": value, "barycenter_miss": miss, "admissible": ok,
                     "label": nu.provenance.get("label", f"candidate_{k}")})
        if ok:
            best = min(best, value)
        else:
            _warnings.warn(f"candidate {k} excluded: barycenter misses F by {miss:.3g}")
    if not np.isfinite(best):
        raise ConfigurationError("no admissible candidate (all barycenters miss F)")
    return best, rows


def _candidate_bins(N: int, y_cells: int, nbins: int) -> BinSpec:
    return BinSpec((1,) * N, (y_cells,) * N, nbins)


def dirac_candidate(F, N: int, eps: float = 1 / 8, resolution: int = 64, y_cells: int = 4, nbins: int = 32) -> EmpiricalYoungMeasure:
    """Measure generated by the constant sequence ``u_n = F x``."""
    F = np.asarray(F, float)
    grid = box((resolution,) * N, (1.0,) * N)
    u = affine_field(grid, F.reshape(-1, N))
    nu = average_x(estimate_two_scale_ym([u], [eps], _candidate_bins(N, y_cells, nbins)))
    nu.provenance["label"] = "dirac"
    return nu


def corrector_candidate(
    f: Integrand,
    F,
    cfg: MinimizerConfig | None = None,
    eps: float = 1 / 8,
    periods_resolution: int | None = None,
    y_cells: int = 16,
    nbins: int = 32,
) -> EmpiricalYoungMeasure:
    """Measure generated by ``F x + eps chi(x/eps)`` with ``chi`` the
    unit-cell minimizer (zero on the cell boundary, hence periodic)."""
    cfg = cfg or MinimizerConfig()
    F = np.asarray(F, float).reshape(f.d, f.N)
    res = cell_fhom(f, F, (1,), cfg, keep_minimizers=True)
    chi = res.minimizers[1][tuple(slice(0, -1) for _ in range(f.N))]
    u1 = GridCorrector(chi)
    n = periods_resolution or cfg.resolution
    m = int(round(n / eps))
    grid = box((m,) * f.N, (1.0,) * f.N)
    u = affine_field(grid, F)
    (un,) = oscillating_sequence(u, u1, [eps])
    nu = average_x(estimate_two_scale_ym([un], [eps], _candidate_bins(f.N, y_cells, nbins)))
    nu.provenance.update(label="corrector", cell_value=res.per_T[0].min_value)
    return nu


def laminate_candidate(
    F,
    a,
    axis: int,
    theta: float,
    amplitude: float = 1.0,
    eps: float = 1 / 8,
    resolution: int = 256,
    y_cells: int = 16,
    nbins: int = 32,
) -> EmpiricalYoungMeasure:
    """Measure generated by a simple laminate with normal ``e_axis``."""
    F = np.asarray(F, float)
    a = np.atleast_1d(np.asarray(a, float))
    N = F.reshape(a.size, -1).shape[1]
    grid = box((resolution,) * N, (1.0,) * N)
    u = laminate_field(grid, F.reshape(a.size, N), a, axis, eps, theta, amplitude)
    nu = average_x(estimate_two_scale_ym([u], [eps], _candidate_bins(N, y_cells, nbins)))
    nu.provenance["label"] = f"laminate(theta={theta}, amplitude={amplitude})"
    return nu


def tail_mass(us: Sequence[TorusField], phi: YoungFunction, levels: Sequence[float]) -> list:
    """``sup_n int_{Phi(|grad u_n|) > M} Phi(|grad u_n|) dx`` for every ``M``."""
    rows = []
    dens = []
    for u in us:
        g = p1_gradient(u)
        v = phi_eval(phi, np.linalg.norm(g.samples.reshape(len(g.samples), -1), axis=1))
        dens.append((v, g.weights()))
    for M in levels:
        rows.append({"M": float(M), "tail": float(max(np.sum(w[v > M] * v[v > M]) for v, w in dens))})
    return rows
