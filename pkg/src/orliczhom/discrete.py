"""Discrete energies on box grids and their minimization.

Fields are continuous piecewise-affine on the Kuhn triangulation of the
grid (each cube split into ``N!`` simplices), so a discrete test field is a
genuine Lipschitz competitor and discrete minima are upper bounds of the
continuous infima for xi-only integrands. On every simplex the gradient is
a chain of forward differences along a permutation of the axes.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigurationError, NumericError
from .fields import GradientField, TorusField, TorusGrid, frac
from .integrand import Integrand

__all__ = ["MinimizerConfig", "SimplexGradient", "p1_gradient", "DiscreteEnergy", "MinimizationResult", "lbfgs", "minimize_restarts"]


@dataclass(frozen=True)
class MinimizerConfig:
    """Settings for the descent solver.

    ``resolution`` counts grid intervals per unit length. ``boundary`` is
    ``"dirichlet"`` (test fields vanish on the boundary) or ``"periodic"``
    (diagnostics only). ``precondition`` seeds the quasi-Newton inverse
    Hessian with the inverse grid Laplacian.
    """

    resolution: int = 64
    max_iters: int = 4000
    grad_tol: float = 1e-9
    ftol: float = 1e-14
    restarts: int = 8
    seed: int = 0
    memory: int = 12
    boundary: str = "dirichlet"
    init_terms: int = 12
    trace_len: int = 200
    precondition: bool = True

    def __post_init__(self):
        if self.restarts < 1:
            raise ConfigurationError("restarts must be >= 1")
        if not self.grad_tol > 0:
            raise ConfigurationError("grad_tol must be > 0")
        if self.resolution < 2:
            raise ConfigurationError("resolution must be >= 2")
        if self.boundary not in ("dirichlet", "periodic"):
            raise ConfigurationError(f"unknown boundary {self.boundary!r}")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


class SimplexGradient:
    """Gradient operator from nodal values to per-simplex gradients."""

    def __init__(self, grid: TorusGrid, periodic: bool = False):
        self.grid = grid
        self.N = grid.dim
        self.n = grid.resolution
        self.h = grid.spacing
        self.periodic = periodic
        self.perms = list(itertools.permutations(range(self.N)))
        # vertex offsets along each Kuhn path
        self.paths = []
        for perm in self.perms:
            off = [np.zeros(self.N, dtype=int)]
            for ax in perm:
                nxt = off[-1].copy()
                nxt[ax] = 1
                off.append(nxt)
            self.paths.append(off)
        self.n_simplices = len(self.perms) * grid.n_cells
        self.weights = np.full(self.n_simplices, grid.cell_volume / len(self.perms))

    def _sl(self, off):
        return tuple(slice(o, o + m) for o, m in zip(off, self.n))

    def full_shape(self, d):
        return tuple(m + 1 for m in self.n) + (d,)

    def pad(self, U):
        """Periodic nodal array (n^N) -> padded (n+1)^N."""
        for k in range(self.N):
            U = np.concatenate([U, np.take(U, [0], axis=k)], axis=k)
        return U

    def fold(self, G):
        """Adjoint of :meth:`pad`."""
        for k in reversed(range(self.N)):
            first = np.take(G, [0], axis=k)
            last = np.take(G, [G.shape[k] - 1], axis=k)
            G = np.take(G, np.arange(G.shape[k] - 1), axis=k)
            idx = [slice(None)] * G.ndim
            idx[k] = slice(0, 1)
            G[tuple(idx)] = first + last
        return G

    def apply(self, U):
        """``U`` of shape ``((n+1)^N, d)`` -> gradients ``(n_simplices, d, N)``."""
        d = U.shape[-1]
        out = np.empty((len(self.perms),) + tuple(self.n) + (d, self.N))
        for s, (perm, path) in enumerate(zip(self.perms, self.paths)):
            for k, ax in enumerate(perm):
                out[s, ..., ax] = (U[self._sl(path[k + 1])] - U[self._sl(path[k])]) / self.h[ax]
        return out.reshape(-1, d, self.N)

    def adjoint(self, S, d):
        """Transpose of :meth:`apply`."""
        S = S.reshape((len(self.perms),) + tuple(self.n) + (d, self.N))
        G = np.zeros(self.full_shape(d))
        for s, (perm, path) in enumerate(zip(self.perms, self.paths)):
            for k, ax in enumerate(perm):
                v = S[s, ..., ax] / self.h[ax]
                G[self._sl(path[k + 1])] += v
                G[self._sl(path[k])] -= v
        return G

    def quadrature_points(self, origin=None):
        """Simplex barycenters, shape ``(n_simplices, N)``."""
        origin = np.zeros(self.N) if origin is None else np.asarray(origin, float)
        corners = self.grid.node_coords("free")[tuple(slice(0, m) for m in self.n)]
        pts = []
        for path in self.paths:
            bary = np.mean(np.array(path), axis=0) * self.h
            pts.append(corners + bary)
        return np.stack(pts).reshape(-1, self.N) + origin


def p1_gradient(u: TorusField) -> GradientField:
    """Exact gradients of the piecewise-affine interpolant of ``u``, one per
    simplex, located at simplex barycenters."""
    periodic = u.boundary == "periodic"
    op = SimplexGradient(u.grid, periodic)
    U = op.pad(u.values) if periodic else u.values
    return GradientField(u.grid, op.apply(U), "p1", "simplices", u.boundary, op.quadrature_points())


class DiscreteEnergy:
    """``E(phi) = (1/|D|) sum_q w_q f(x_q, y_q, B_q + (grad phi)_q)``.

    ``base`` gives the per-simplex background gradient (a constant matrix or
    an array). ``y_of_x`` maps quadrature points to fast-variable samples.
    Unknowns are interior nodal values (Dirichlet) or all nodes (periodic).
    """

    def __init__(self, grid: TorusGrid, f: Integrand, base, y_points=None, x_points=None, periodic=False, normalize=True):
        self.grid, self.f = grid, f
        self.d = f.d
        self.op = SimplexGradient(grid, periodic)
        self.periodic = periodic
        M = self.op.n_simplices
        q = self.op.quadrature_points()
        self.x = q if x_points is None else np.broadcast_to(np.asarray(x_points, float), (M, grid.dim))
        self.y = frac(q) if y_points is None else np.broadcast_to(np.asarray(y_points, float), (M, grid.dim))
        base = np.asarray(base, dtype=float)
        self.base = np.broadcast_to(base.reshape((-1, f.d, grid.dim)) if base.ndim == 3 else base.reshape(f.d, grid.dim), (M, f.d, grid.dim))
        self.scale = 1.0 / grid.measure if normalize else 1.0
        self.w = self.op.weights * self.scale
        if periodic:
            self.shape = tuple(grid.resolution) + (self.d,)
        else:
            self.shape = tuple(m - 1 for m in grid.resolution) + (self.d,)
        self.size = int(np.prod(self.shape))

    def embed(self, v):
        v = v.reshape(self.shape)
        if self.periodic:
            return self.op.pad(v)
        U = np.zeros(self.op.full_shape(self.d))
        U[tuple(slice(1, m) for m in self.grid.resolution)] = v
        return U

    def restrict(self, G):
        if self.periodic:
            return self.op.fold(G).reshape(-1)
        return G[tuple(slice(1, m) for m in self.grid.resolution)].reshape(-1)

    def gradients(self, v):
        return self.base + self.op.apply(self.embed(v))

    def value(self, v):
        return float(np.dot(self.w, self.f(self.x, self.y, self.gradients(v))))

    def value_and_grad(self, v):
        xi = self.gradients(v)
        vals = self.f(self.x, self.y, xi)
        E = float(np.dot(self.w, vals))
        sigma = self.w[:, None, None] * self.f.dxi(self.x, self.y, xi)
        return E, self.restrict(self.op.adjoint(sigma, self.d))

    def laplace_inverse(self, r):
        """Solve ``K z = r`` with ``K`` the stiffness of ``E`` for ``f = |xi|^2 / 2``.

        On the Kuhn triangulation ``K`` is the standard ``2N + 1`` point
        difference Laplacian times the cell weight, which sine transforms
        (Dirichlet) or Fourier transforms (periodic) diagonalize.
        """
        z = np.asarray(r, float).reshape(self.shape)
        if z.size == 0:
            return z.reshape(-1)
        axes = tuple(range(self.grid.dim))
        lam = np.zeros(self.shape[:-1])
        for ax, (n, h) in enumerate(zip(self.grid.resolution, self.grid.spacing)):
            k = np.arange(n) if self.periodic else np.arange(1, n)
            theta = (2.0 if self.periodic else 1.0) * np.pi * k / n
            shape = [1] * self.grid.dim
            shape[ax] = -1
            lam = lam + ((2.0 - 2.0 * np.cos(theta)) / h**2).reshape(shape)
        if self.periodic:
            lam.flat[0] = 1.0  # constants do not change the energy
            z = np.real(np.fft.ifftn(np.fft.fftn(z, axes=axes) / lam[..., None], axes=axes))
        else:
            for ax in axes:
                z = _dst1(z, ax)
            z = z / lam[..., None]
            for ax in axes:
                z = _dst1(z, ax) * (2.0 / self.grid.resolution[ax])
        return z.reshape(-1) / (self.grid.cell_volume * self.scale)

    def random_start(self, rng, amplitude, n_terms):
        """Random trigonometric field with gradient amplitude ``~ amplitude``."""
        n = self.grid.resolution
        L = np.array(self.grid.period)
        axes = [np.arange(m + 1) * h for m, h in zip(n, self.grid.spacing)]
        X = np.meshgrid(*axes, indexing="ij")
        U = np.zeros(self.op.full_shape(self.d))
        kmax = [max(1, m // 4) for m in n]
        for _ in range(n_terms):
            k = np.array([rng.integers(1, km + 1) for km in kmax])
            c = rng.standard_normal(self.d)
            wave = np.ones_like(X[0])
            for j in range(self.grid.dim):
                if self.periodic:
                    wave = wave * np.cos(2.0 * np.pi * k[j] * X[j] / L[j] + rng.uniform(0, 2 * np.pi))
                else:
                    wave = wave * np.sin(np.pi * k[j] * X[j] / L[j])
            kn = np.linalg.norm(np.pi * k / L)
            U = U + (amplitude / (kn * math.sqrt(n_terms))) * wave[..., None] * c
        if self.periodic:
            return U[tuple(slice(0, m) for m in n)].reshape(-1)
        return U[tuple(slice(1, m) for m in n)].reshape(-1)


def _dst1(x, axis):
    """Type-I discrete sine transform along ``axis`` (its own inverse up to ``2 / n``)."""
    x = np.moveaxis(x, axis, 0)
    z = np.zeros((1,) + x.shape[1:])
    y = np.concatenate([z, x, z, -x[::-1]], axis=0)
    out = -np.fft.fft(y, axis=0).imag[1 : x.shape[0] + 1] / 2.0
    return np.moveaxis(out, 0, axis)


@dataclass
class MinimizationResult:
    value: float
    x: np.ndarray
    iterations: int
    converged: bool
    trace: list = field(default_factory=list)
    restart: int = 0


def _decimate(trace, n):
    if len(trace) <= n:
        return list(trace)
    idx = np.unique(np.linspace(0, len(trace) - 1, n).astype(int))
    return [trace[i] for i in idx]


def lbfgs(fun: Callable, x0: np.ndarray, cfg: MinimizerConfig, grad_scale: float = 1.0,
          precond: Callable | None = None) -> MinimizationResult:
    """Limited-memory quasi-Newton descent with Armijo backtracking.

    ``fun(x) -> (value, gradient)``. ``precond``, when given, is a symmetric
    positive definite approximate inverse Hessian used as the initial
    matrix of the two-loop recursion. Stops when the scaled gradient
    sup-norm drops below ``grad_tol``, when a quasi-Newton step predicts a
    decrease below the floating point resolution of the energy, when the
    energy stalls (relative decrease below ``ftol`` for 10 consecutive
    steps) or after ``max_iters`` iterations.
    """
    x = np.array(x0, dtype=float)
    E, g = fun(x)
    trace = [E]
    if not np.isfinite(E) or not np.all(np.isfinite(g)):
        raise NumericError("non-finite energy at the initial point", trace)
    S, Yk = [], []
    stall = 0
    converged = False
    it = 0
    for it in range(1, cfg.max_iters + 1):
        if np.max(np.abs(g), initial=0.0) * grad_scale <= cfg.grad_tol:
            converged = True
            break
        q = g.copy()
        alphas = []
        for s, y in zip(reversed(S), reversed(Yk)):
            rho = 1.0 / np.dot(y, s)
            a = rho * np.dot(s, q)
            alphas.append((rho, a))
            q -= a * y
        if precond is not None:
            q = precond(q)
            if S:
                q *= np.dot(S[-1], Yk[-1]) / np.dot(Yk[-1], precond(Yk[-1]))
        elif S:
            q *= np.dot(S[-1], Yk[-1]) / np.dot(Yk[-1], Yk[-1])
        else:
            q *= 1.0 / max(np.max(np.abs(g)) * grad_scale, 1e-300) * 1e-2 * grad_scale
        for (rho, a), s, y in zip(reversed(alphas), S, Yk):
            b = rho * np.dot(y, q)
            q += (a - b) * s
        p = -q
        slope = float(np.dot(g, p))
        if not slope < 0:
            S.clear()
            Yk.clear()
            p = -precond(g) if precond is not None else -g * (1e-2 / max(np.max(np.abs(g)), 1e-300))
            slope = float(np.dot(g, p))
        if (precond is not None or S) and -slope <= 1e-15 * max(1.0, abs(E)):
            converged = True  # predicted decrease is below the resolution of E
            break
        t = 1.0
        for _ in range(60):
            x_new = x + t * p
            E_new, g_new = fun(x_new)
            if np.isfinite(E_new) and E_new <= E + 1e-4 * t * slope:
                break
            t *= 0.5
        else:
            converged = True  # no decrease possible at machine precision
            break
        if not np.isfinite(E_new) or not np.all(np.isfinite(g_new)):
            raise NumericError("non-finite energy during descent", _decimate(trace, cfg.trace_len))
        s, y = x_new - x, g_new - g
        if np.dot(s, y) > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            S.append(s)
            Yk.append(y)
            if len(S) > cfg.memory:
                S.pop(0)
                Yk.pop(0)
        dec = E - E_new
        x, E, g = x_new, E_new, g_new
        trace.append(E)
        stall = stall + 1 if dec <= cfg.ftol * max(1.0, abs(E)) else 0
        if stall >= 10:
            converged = True
            break
    return MinimizationResult(E, x, it, converged, _decimate(trace, cfg.trace_len))


def minimize_restarts(energy: DiscreteEnergy, cfg: MinimizerConfig, amplitude: float = 1.0) -> tuple[MinimizationResult, list]:
    """Best of ``cfg.restarts`` descents; restart 0 starts from ``phi = 0``.

    Restart ``r`` draws its initial field from the substream ``(seed, r)``, so
    results do not depend on evaluation order. Ties within ``1e-12`` go to
    the lowest restart index.
    """
    # gradient scale: per-node weight so the test is mesh independent
    grad_scale = 1.0 / (energy.grid.cell_volume * energy.scale)
    results = []
    for r in range(cfg.restarts):
        if r == 0:
            x0 = np.zeros(energy.size)
        else:
            rng = np.random.default_rng([cfg.seed, r])
            x0 = energy.random_start(rng, amplitude, cfg.init_terms)
        res = lbfgs(energy.value_and_grad, x0, cfg, grad_scale, energy.laplace_inverse if cfg.precondition else None)
        res.restart = r
        results.append(res)
    best = results[0]
    for res in results[1:]:
        if res.value < best.value - 1e-12:
            best = res
    return best, results
