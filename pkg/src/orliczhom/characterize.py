"""Checks of the three characterization conditions on empirical measures.

Condition (i) compares barycenters with the underlying gradient, condition
(ii) compares battery pairings with the relaxed density (``Qf`` for
gradient measures, ``f_hom`` for two-scale measures), condition (iii)
checks the Phi-moment and the overflow mass. A passing report means
"consistent at these tolerances", nothing stronger.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .discrete import MinimizerConfig, p1_gradient
from .envelopes import LaminationConfig, cell_fhom, lamination_bound, quasiconvexify
from .errors import ConfigurationError
from .fields import Corrector, TorusField, ZeroCorrector
from .integrand import Integrand, TestBattery
from .measures import (
    OVERFLOW_THRESHOLD,
    EmpiricalYoungMeasure,
    GradientYoungMeasure,
    _cells_of,
    barycenter,
    phi_moment,
)
from .young import YoungFunction, phi_eval

__all__ = [
    "CheckConfig",
    "CharacterizationReport",
    "RelaxationCache",
    "check_gradient_ym",
    "check_two_scale_ym",
    "cell_average_gradient",
    "offset_measure",
]


@dataclass(frozen=True)
class CheckConfig:
    """Tolerances and solver settings for a check.

    ``tol`` is the relative margin tolerance of condition (ii);
    ``tol_residual`` (default ``tol``) bounds the condition (i) residual.
    ``quantum`` rounds macroscopic gradients before relaxed densities are
    computed (default: smallest bin width / 64).
    """

    tol: float = 5e-2
    tol_residual: float | None = None
    overflow_limit: float = OVERFLOW_THRESHOLD
    minimizer: MinimizerConfig = MinimizerConfig(resolution=16, restarts=4, max_iters=1500, grad_tol=1e-8)
    T_list: tuple = (1, 2)
    lamination_depth: int = 1
    quantum: float | None = None
    n_quad_x: int = 4
    n_quad_y: int = 8

    @property
    def residual_tol(self) -> float:
        return self.tol if self.tol_residual is None else self.tol_residual

    def to_dict(self) -> dict:
        out = {k: v for k, v in self.__dict__.items() if k != "minimizer"}
        out["T_list"] = list(self.T_list)
        out["minimizer"] = self.minimizer.to_dict()
        return out


@dataclass
class CharacterizationReport:
    kind: str
    condition_i: dict
    condition_ii: list
    condition_iii: dict
    verdict: str
    witness: dict | None
    tolerances: dict
    battery: dict = field(default_factory=dict)

    @property
    def consistent(self) -> bool:
        return self.verdict == "consistent"

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "condition_i": self.condition_i,
            "condition_ii": self.condition_ii,
            "condition_iii": self.condition_iii,
            "verdict": self.verdict,
            "witness": self.witness,
            "tolerances": self.tolerances,
            "battery": self.battery,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    def table(self) -> str:
        ci = self.condition_i
        lines = [
            f"{self.kind} report: {self.verdict}",
            f"(i)   barycenter residual {ci['residual']:.3e}  tol {ci['tol']:.1e}  {'pass' if ci['pass'] else 'FAIL'}",
            f"(ii)  {'member':<16} {'lhs':>12} {'rhs':>12} {'margin':>12}",
        ]
        for row in self.condition_ii:
            flag = "" if row["pass"] else "  FAIL"
            lines.append(f"      {row['id']:<16} {row['lhs']:12.5g} {row['rhs']:12.5g} {row['margin']:12.3e}{flag}")
        c3 = self.condition_iii
        lines.append(f"(iii) Phi-moment {c3['total']:.5g}  overflow {c3['overflow']:.2e}  {'pass' if c3['pass'] else 'FAIL'}")
        return "\n".join(lines)


class RelaxationCache:
    """Memoized ``Qf`` / ``f_hom`` values keyed by member and quantized xi."""

    def __init__(self, cfg: CheckConfig):
        self.cfg = cfg
        self.store: dict = {}

    def _key(self, mid: str, xi: np.ndarray, kind: str, quantum: float):
        q = np.round(xi / quantum).astype(np.int64) if quantum > 0 else xi
        return kind, mid, q.tobytes(), (q * quantum if quantum > 0 else xi)

    def qf(self, mid: str, f: Integrand, xi: np.ndarray, quantum: float) -> float:
        kind, mid, kb, xq = self._key(mid, xi, "qf", quantum)
        if (kind, mid, kb) not in self.store:
            lam = LaminationConfig()
            v = quasiconvexify(f, xq, self.cfg.minimizer)
            v = min(v, lamination_bound(f, xq, self.cfg.lamination_depth, lam))
            self.store[(kind, mid, kb)] = v
        return self.store[(kind, mid, kb)]

    def fhom(self, mid: str, f: Integrand, xi: np.ndarray, quantum: float) -> float:
        if not f.depends_y:
            return self.qf(mid, f, xi, quantum)
        kind, mid, kb, xq = self._key(mid, xi, "fhom", quantum)
        if (kind, mid, kb) not in self.store:
            self.store[(kind, mid, kb)] = cell_fhom(f, xq, self.cfg.T_list, self.cfg.minimizer).extrapolated
        return self.store[(kind, mid, kb)]


def cell_average_gradient(u: TorusField, x_cells, lengths) -> np.ndarray:
    """Mean of the exact interpolant gradient over each x cell, ``(n_x, d, N)``."""
    g = p1_gradient(u)
    cx = _cells_of(g.points(), np.asarray(lengths, float), tuple(x_cells))
    n_x = int(np.prod(x_cells))
    s = g.samples
    out = np.zeros((n_x,) + s.shape[1:])
    np.add.at(out, cx, s)
    cnt = np.bincount(cx, minlength=n_x)
    if np.any(cnt == 0):
        raise ConfigurationError("some x cells contain no gradient samples of u; use coarser x_cells")
    return out / cnt[:, None, None]


def _corrector_average(u1: Corrector, x_cells, y_cells, lengths, nqx: int, nqy: int) -> np.ndarray:
    """``mean grad_y u1`` over every ``x cell x y cell``, ``(n_x, n_y, d, N)``."""
    N = len(x_cells)
    lengths = np.asarray(lengths, float)
    ox = ((np.stack(np.meshgrid(*[np.arange(nqx)] * N, indexing="ij"), -1).reshape(-1, N) + 0.5) / nqx)
    oy = ((np.stack(np.meshgrid(*[np.arange(nqy)] * N, indexing="ij"), -1).reshape(-1, N) + 0.5) / nqy)
    cxs = np.stack(np.meshgrid(*[np.arange(c) for c in x_cells], indexing="ij"), -1).reshape(-1, N)
    cys = np.stack(np.meshgrid(*[np.arange(c) for c in y_cells], indexing="ij"), -1).reshape(-1, N)
    hx = lengths / np.asarray(x_cells)
    hy = 1.0 / np.asarray(y_cells)
    xs = (cxs[:, None, :] + ox[None]) * hx  # (n_x, qx, N)
    ys = (cys[:, None, :] + oy[None]) * hy  # (n_y, qy, N)
    n_x, n_y = len(cxs), len(cys)
    out = np.zeros((n_x, n_y, u1.d, N))
    Y = ys.reshape(-1, N)
    for i in range(n_x):
        X = np.repeat(xs[i], len(Y), axis=0)
        YY = np.tile(Y, (len(xs[i]), 1))
        g = u1.grad_y(X, YY).reshape(len(xs[i]), n_y, -1, u1.d, N)
        out[i] = g.mean(axis=(0, 2))
    return out


def _margin_ok(margin: float, lhs: float, rhs: float, tol: float) -> bool:
    return margin >= -tol * max(1.0, abs(lhs), abs(rhs))


def _condition_iii(moment_total: float, overflow: float, cfg: CheckConfig) -> dict:
    finite = bool(np.isfinite(moment_total))
    return {"total": moment_total, "finite": finite, "overflow": overflow, "overflow_limit": cfg.overflow_limit,
            "pass": finite and overflow <= cfg.overflow_limit}


def _verdict(ci: dict, cii: list, ciii: dict):
    if not ci["pass"]:
        return "violated", {"condition": "i", "cell": ci["argmax"], "residual": ci["residual"]}
    for row in cii:
        if not row["pass"]:
            return "violated", {"condition": "ii", "member": row["id"], "x_cell": row["x_cell"], "margin": row["margin"]}
    if not ciii["pass"]:
        return "violated", {"condition": "iii", "total": ciii["total"], "overflow": ciii["overflow"]}
    return "consistent", None


def _quantum(cfg: CheckConfig, bin_width) -> float:
    return float(np.min(bin_width)) / 64.0 if cfg.quantum is None else float(cfg.quantum)


def check_gradient_ym(
    lam: GradientYoungMeasure,
    u: TorusField,
    phi: YoungFunction,
    battery: TestBattery,
    tol: float | None = None,
    cfg: CheckConfig | None = None,
    cache: RelaxationCache | None = None,
) -> CharacterizationReport:
    """Check a gradient Young measure against ``u`` and a xi-only battery."""
    cfg = cfg or CheckConfig()
    if tol is not None:
        cfg = CheckConfig(**{**cfg.__dict__, "tol": tol})
    for m in battery:
        if m.integrand.depends_y or m.integrand.depends_x:
            raise ConfigurationError(f"battery member {m.id!r} depends on x or y; gradient checks need xi-only members")
    cache = cache or RelaxationCache(cfg)
    grad_u = cell_average_gradient(u, lam.spec.x_cells, lam.lengths)
    bary = lam.barycenter()
    res = np.linalg.norm((bary - grad_u).reshape(lam.n_x, -1), axis=1)
    ci = {"residual": float(res.max()), "argmax": int(res.argmax()), "tol": cfg.residual_tol,
          "pass": bool(res.max() <= cfg.residual_tol)}

    quantum = _quantum(cfg, lam.bin_width)
    cii = []
    for m in battery:
        f = m.integrand
        vals = f(None, None, lam.reps)
        lhs = np.zeros(lam.n_x)
        np.add.at(lhs, lam.cx, lam.weights * vals)
        rhs = np.array([cache.qf(m.id, f, grad_u[k], quantum) for k in range(lam.n_x)])
        cii.append(_member_row(m.id, lhs, rhs, cfg.tol))

    ext = np.linalg.norm(lam.reps.reshape(len(lam.reps), -1), axis=1)
    mom = np.zeros(lam.n_x)
    np.add.at(mom, lam.cx, lam.weights * phi_eval(phi, ext))
    ciii = _condition_iii(float(mom.sum() * lam.x_cell_measure), lam.overflow_mass(), cfg)
    verdict, witness = _verdict(ci, cii, ciii)
    return CharacterizationReport("gradient", ci, cii, ciii, verdict, witness, cfg.to_dict(), battery.recipe)


def _member_row(mid: str, lhs: np.ndarray, rhs: np.ndarray, tol: float) -> dict:
    margin = lhs - rhs
    rel = margin / np.maximum(1.0, np.maximum(np.abs(lhs), np.abs(rhs)))
    k = int(np.argmin(rel))
    return {"id": mid, "x_cell": k, "lhs": float(lhs[k]), "rhs": float(rhs[k]), "margin": float(margin[k]),
            "pass": _margin_ok(float(margin[k]), float(lhs[k]), float(rhs[k]), tol)}


def check_two_scale_ym(
    nu: EmpiricalYoungMeasure,
    u: TorusField,
    u1: Corrector | None,
    phi: YoungFunction,
    battery: TestBattery,
    tol: float | None = None,
    cfg: CheckConfig | None = None,
    cache: RelaxationCache | None = None,
) -> CharacterizationReport:
    """Check a two-scale measure against ``u``, the corrector ``u1`` and a battery.

    A missing corrector is treated as zero, so y-oscillating barycenters
    show up as a condition (i) failure.
    """
    cfg = cfg or CheckConfig()
    if tol is not None:
        cfg = CheckConfig(**{**cfg.__dict__, "tol": tol})
    cache = cache or RelaxationCache(cfg)
    u1 = u1 if u1 is not None else ZeroCorrector(nu.d, nu.N)
    grad_u = cell_average_gradient(u, nu.spec.x_cells, nu.lengths)
    target = grad_u[:, None] + _corrector_average(u1, nu.spec.x_cells, nu.spec.y_cells, nu.lengths, cfg.n_quad_x, cfg.n_quad_y)
    bary = barycenter(nu) if nu.overflow_mass() <= cfg.overflow_limit else _raw_barycenter(nu)
    res = np.linalg.norm((bary - target).reshape(nu.n_x * nu.n_y, -1), axis=1)
    k = int(res.argmax())
    ci = {"residual": float(res[k]), "argmax": [k // nu.n_y, k % nu.n_y], "tol": cfg.residual_tol,
          "pass": bool(res[k] <= cfg.residual_tol)}

    quantum = _quantum(cfg, nu.bin_width)
    yc = nu.y_centers()
    cii = []
    for m in battery:
        f = m.integrand
        if f.depends_x:
            raise ConfigurationError(f"battery member {m.id!r} depends on x")
        vals = f(None, yc[nu.cy], nu.reps)
        lhs = np.zeros(nu.n_x)
        np.add.at(lhs, nu.cx, nu.weights * vals * nu.y_cell_measure)
        rhs = np.array([cache.fhom(m.id, f, grad_u[i], quantum) for i in range(nu.n_x)])
        cii.append(_member_row(m.id, lhs, rhs, cfg.tol))

    mom = phi_moment(nu, phi)
    ciii = _condition_iii(mom.total, nu.overflow_mass(), cfg)
    verdict, witness = _verdict(ci, cii, ciii)
    return CharacterizationReport("two_scale", ci, cii, ciii, verdict, witness, cfg.to_dict(), battery.recipe)


def _raw_barycenter(nu: EmpiricalYoungMeasure) -> np.ndarray:
    out = np.zeros((nu.n_x, nu.n_y, nu.d, nu.N))
    np.add.at(out, (nu.cx, nu.cy), nu.weights[:, None, None] * nu.reps)
    return out


def offset_measure(nu: EmpiricalYoungMeasure, offset) -> EmpiricalYoungMeasure:
    """Copy of ``nu`` with every representative shifted by ``offset``
    (a measure whose barycenter deliberately misses the gradient)."""
    from dataclasses import replace

    off = np.asarray(offset, float).reshape(nu.d, nu.N)
    return replace(nu, reps=nu.reps + off, provenance=dict(nu.provenance, offset=off.tolist()))
