"""Stored-energy densities ``f(x, y, xi)`` built from JSON recipes, probes of
the growth/recession behaviour that defines the test spaces, growth
certificates, and the deterministic test battery used by the checkers.

Arrays follow one convention throughout: ``xi`` has shape ``(M, d, N)``,
``x`` and ``y`` have shape ``(M, N)``; evaluators return ``(M,)``.
"""
from __future__ import annotations

import copy
import itertools
import json
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .errors import CertificationError, ConfigurationError
from .young import YoungFunction, phi_eval

__all__ = [
    "Integrand",
    "GrowthCertificate",
    "ProbeSpec",
    "NormEstimate",
    "RecessionProfile",
    "BatteryMember",
    "TestBattery",
    "make_integrand",
    "from_callable",
    "ephi_norm_estimate",
    "recession_profile",
    "growth_constants",
    "default_battery",
]


def _fro(xi):
    return np.sqrt(np.sum(xi * xi, axis=(-2, -1)))


# -- shapes g(xi): (value, derivative) ----------------------------------------


def _shape(spec: dict, phi: YoungFunction, d: int, N: int):
    kind = spec["kind"]
    A = np.zeros((d, N)) if spec.get("center") is None else np.asarray(spec["center"], float).reshape(d, N)

    if kind == "phi_radial":
        s = float(spec.get("scale", 1.0))

        def val(xi):
            return phi_eval(phi, s * _fro(xi - A))

        def der(xi):
            z = xi - A
            r = _fro(z)
            safe = np.where(r > 0, r, 1.0)
            return (s * phi.derivative(s * r) / safe)[:, None, None] * z

        return val, der

    if kind == "power_radial":
        p = float(spec["p"])

        def val(xi):
            return _fro(xi - A) ** p / p

        def der(xi):
            z = xi - A
            r = _fro(z)
            return (r ** (p - 2.0) if p >= 2 else np.where(r > 0, r, 1.0) ** (p - 2.0))[:, None, None] * z

        return val, der

    if kind == "quadratic":
        return (lambda xi: np.sum((xi - A) ** 2, axis=(1, 2))), (lambda xi: 2.0 * (xi - A))

    if kind == "coordinate":
        i, j = int(spec["i"]), int(spec["j"])
        E = np.zeros((d, N))
        E[i, j] = 1.0
        return (lambda xi: xi[:, i, j]), (lambda xi: np.broadcast_to(E, xi.shape).copy())

    if kind == "linear":
        B = np.asarray(spec["matrix"], float).reshape(d, N)
        return (lambda xi: np.sum(xi * B, axis=(1, 2))), (lambda xi: np.broadcast_to(B, xi.shape).copy())

    if kind == "const":
        c = float(spec["value"])
        return (lambda xi: np.full(xi.shape[0], c)), (lambda xi: np.zeros_like(xi))

    if kind == "double_well":
        r2 = float(spec.get("radius", 1.0)) ** 2

        def val(xi):
            return (np.sum(xi * xi, axis=(1, 2)) - r2) ** 2

        def der(xi):
            return 4.0 * (np.sum(xi * xi, axis=(1, 2)) - r2)[:, None, None] * xi

        return val, der

    if kind == "clamped_double_well":
        r2 = float(spec.get("radius", 1.0)) ** 2
        c = float(spec.get("clamp", 1.0))

        def parts(xi):
            s2 = np.sum(xi * xi, axis=(1, 2))
            return (s2 - r2) ** 2, c * (1.0 + phi_eval(phi, np.sqrt(s2)))

        def val(xi):
            w, cap = parts(xi)
            return np.minimum(w, cap)

        def der(xi):
            w, cap = parts(xi)
            s2 = np.sum(xi * xi, axis=(1, 2))
            r = np.sqrt(s2)
            dw = 4.0 * (s2 - r2)[:, None, None] * xi
            dcap = (c * phi.derivative(r) / np.where(r > 0, r, 1.0))[:, None, None] * xi
            return np.where((w <= cap)[:, None, None], dw, dcap)

        return val, der

    if kind == "pl_two_well":
        wells = np.asarray(spec["wells"], float).reshape(-1, d, N)

        def dists(xi):
            return np.stack([np.sum(np.abs(xi - W), axis=(1, 2)) for W in wells], axis=1)

        def val(xi):
            return dists(xi).min(axis=1)

        def der(xi):
            k = np.argmin(dists(xi), axis=1)
            return np.sign(xi - wells[k])

        return val, der

    if kind == "det":
        if d != 2 or N != 2:
            raise ConfigurationError("det shape needs d = N = 2")

        def val(xi):
            return xi[:, 0, 0] * xi[:, 1, 1] - xi[:, 0, 1] * xi[:, 1, 0]

        def der(xi):
            out = np.empty_like(xi)
            out[:, 0, 0], out[:, 1, 1] = xi[:, 1, 1], xi[:, 0, 0]
            out[:, 0, 1], out[:, 1, 0] = -xi[:, 1, 0], -xi[:, 0, 1]
            return out

        return val, der

    raise ConfigurationError(f"unknown shape kind {kind!r}")


# -- coefficients a(x, y) -----------------------------------------------------


def _coefficient(spec: dict | None, N: int):
    """Return ``(fn(x, y) -> (M,), depends_x, depends_y)``."""
    if spec is None or spec.get("kind", "const") == "const":
        c = 1.0 if spec is None else float(spec.get("value", 1.0))
        return (lambda x, y: np.full(y.shape[0], c)), False, False
    kind = spec["kind"]
    if kind == "trig":
        mean, amp = float(spec.get("mean", 1.0)), float(spec.get("amp", 1.0))
        mode = np.zeros(N) if spec.get("mode") is None else np.atleast_1d(np.asarray(spec["mode"], float))
        if mode.shape != (N,):
            raise ConfigurationError(f"trig coefficient mode needs {N} entries, got {mode.tolist()}")
        trig = {"cos": np.cos, "sin": np.sin}[spec.get("fn", "cos")]
        return (lambda x, y: mean + amp * trig(2.0 * np.pi * (y @ mode))), False, True
    if kind == "x_affine":
        base = float(spec.get("base", 1.0))
        slope = np.asarray(spec["slope"], float)
        return (lambda x, y: base + x @ slope), True, False
    if kind == "product":
        parts = [_coefficient(s, N) for s in spec["factors"]]

        def fn(x, y):
            out = np.ones(y.shape[0])
            for p, _, _ in parts:
                out = out * p(x, y)
            return out

        return fn, any(p[1] for p in parts), any(p[2] for p in parts)
    raise ConfigurationError(f"unknown coefficient kind {kind!r}")


_SHORTHAND_SHAPES = {
    "phi_radial", "power_radial", "quadratic", "coordinate", "linear", "const",
    "double_well", "clamped_double_well", "pl_two_well", "det",
}


@dataclass(frozen=True, eq=False)
class Integrand:
    """Evaluable density ``f(x, y, xi)``, Y-periodic in ``y``."""

    evaluator: Callable
    d: int
    N: int
    depends_x: bool = False
    depends_y: bool = False
    depends_xi: bool = True
    derivative: Callable | None = None
    recipe: dict | None = None
    name: str = ""
    growth: "GrowthCertificate | None" = None
    phi: YoungFunction | None = None

    def _args(self, x, y, xi):
        xi = np.asarray(xi, dtype=float)
        if xi.ndim == 2:
            xi = xi[None]
        M = xi.shape[0]
        x = np.zeros((M, self.N)) if x is None else np.broadcast_to(np.asarray(x, float).reshape(-1, self.N), (M, self.N))
        y = np.zeros((M, self.N)) if y is None else np.broadcast_to(np.asarray(y, float).reshape(-1, self.N), (M, self.N))
        return x, y, xi

    def __call__(self, x, y, xi):
        x, y, xi = self._args(x, y, xi)
        return np.asarray(self.evaluator(x, y, xi), dtype=float).reshape(xi.shape[0])

    def dxi(self, x, y, xi):
        """``d f / d xi``; analytic when available, else central differences
        with step ``1e-5 (1 + |xi|)``."""
        x, y, xi = self._args(x, y, xi)
        if self.derivative is not None:
            return np.asarray(self.derivative(x, y, xi), dtype=float)
        step = 1e-5 * (1.0 + _fro(xi))
        out = np.empty_like(xi)
        for i in range(self.d):
            for j in range(self.N):
                e = np.zeros((self.d, self.N))
                e[i, j] = 1.0
                hi = self.evaluator(x, y, xi + step[:, None, None] * e)
                lo = self.evaluator(x, y, xi - step[:, None, None] * e)
                out[:, i, j] = (hi - lo) / (2.0 * step)
        return out

    def plus_constant(self, c: float) -> "Integrand":
        ev, c = self.evaluator, float(c)
        recipe = None
        if self.recipe is not None:
            recipe = copy.deepcopy(self.recipe)
            recipe["offset"] = float(recipe.get("offset", 0.0)) + c
        return replace(self, evaluator=lambda x, y, xi: ev(x, y, xi) + c, recipe=recipe, growth=None)

    def with_growth(self, cert: "GrowthCertificate") -> "Integrand":
        return replace(self, growth=cert)

    def to_dict(self) -> dict:
        if self.recipe is None:
            raise ConfigurationError(f"integrand {self.name!r} was built from a closure and has no recipe")
        return copy.deepcopy(self.recipe)


def from_callable(fn: Callable, d: int, N: int, depends_x=False, depends_y=False, derivative=None, name="callable", phi=None) -> Integrand:
    """Wrap a closure ``fn(x, y, xi)``. Such integrands cannot be serialized."""
    return Integrand(fn, d, N, depends_x, depends_y, True, derivative, None, name, None, phi)


def make_integrand(recipe: dict, phi: YoungFunction, d: int, N: int) -> Integrand:
    """Build an :class:`Integrand` from a JSON-able recipe.

    Recipes are ``{"kind": "product", "coeff": {...}, "shape": {...},
    "offset": c, "scale": s}`` meaning ``offset + scale a(x, y) g(xi)``,
    ``{"kind": "sum", "terms": [...]}``, or any shape kind used directly
    (e.g. ``{"kind": "phi_radial"}``).
    """
    recipe = copy.deepcopy(recipe)
    kind = recipe.get("kind")
    if kind in _SHORTHAND_SHAPES:
        shape = {k: v for k, v in recipe.items() if k not in ("offset", "scale", "name", "coeff")}
        recipe = {"kind": "product", "coeff": recipe.get("coeff"), "shape": shape,
                  "offset": recipe.get("offset", 0.0), "scale": recipe.get("scale", 1.0), "name": recipe.get("name")}
        kind = "product"
    name = recipe.get("name") or kind
    if kind == "product":
        a, dep_x, dep_y = _coefficient(recipe.get("coeff"), N)
        g, dg = _shape(recipe["shape"], phi, d, N)
        off, sc = float(recipe.get("offset", 0.0)), float(recipe.get("scale", 1.0))
        is_const = recipe["shape"]["kind"] == "const"

        def ev(x, y, xi):
            return off + sc * a(x, y) * g(xi)

        def der(x, y, xi):
            return (sc * a(x, y))[:, None, None] * dg(xi)

        return Integrand(ev, d, N, dep_x, dep_y, not is_const, der, recipe, name, None, phi)
    if kind == "sum":
        terms = [make_integrand(t, phi, d, N) for t in recipe["terms"]]
        off = float(recipe.get("offset", 0.0))

        def ev(x, y, xi):
            return off + sum(t.evaluator(x, y, xi) for t in terms)

        def der(x, y, xi):
            return sum(t.dxi(x, y, xi) for t in terms)

        return Integrand(ev, d, N, any(t.depends_x for t in terms), any(t.depends_y for t in terms),
                         any(t.depends_xi for t in terms), der, recipe, name, None, phi)
    raise ConfigurationError(f"unknown integrand kind {kind!r}")


# -- probing ------------------------------------------------------------------


@dataclass(frozen=True)
class ProbeSpec:
    """Deterministic (y, xi) probe set: radii in ``[0, radius]`` times
    directions (coordinate axes plus seeded random unit matrices) times a
    tensor grid of ``y`` values."""

    radius: float = 1e3
    n_radii: int = 64
    n_random_dirs: int = 16
    n_y: int = 8
    seed: int = 0

    def radii(self) -> np.ndarray:
        lin = np.linspace(0.0, min(self.radius, 4.0), self.n_radii // 2)
        geo = np.geomspace(1e-2, self.radius, self.n_radii - self.n_radii // 2)
        return np.unique(np.concatenate([lin, geo, [self.radius]]))

    def directions(self, d: int, N: int) -> np.ndarray:
        dirs = []
        for i in range(d):
            for j in range(N):
                e = np.zeros((d, N))
                e[i, j] = 1.0
                dirs += [e, -e]
        if 1 < d * N <= 4:
            for signs in itertools.product((1.0, -1.0), repeat=d * N):
                dirs.append(np.reshape(signs, (d, N)) / np.sqrt(d * N))
        rng = np.random.default_rng(self.seed)
        for _ in range(self.n_random_dirs):
            m = rng.standard_normal((d, N))
            dirs.append(m / np.linalg.norm(m))
        return np.array(dirs)

    def y_grid(self, N: int, depends_y: bool = True) -> np.ndarray:
        if not depends_y:
            return np.zeros((1, N))
        axes = [np.arange(self.n_y) / self.n_y] * N
        return np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, N)

    def probes(self, d: int, N: int, depends_y: bool = True):
        """Return ``(y, xi)`` arrays covering the product set."""
        r = self.radii()
        dirs = self.directions(d, N)
        xi = (r[:, None, None, None] * dirs[None]).reshape(-1, d, N)
        yy = self.y_grid(N, depends_y)
        Y = np.repeat(yy, xi.shape[0], axis=0)
        XI = np.tile(xi, (yy.shape[0], 1, 1))
        return Y, XI

    def to_dict(self) -> dict:
        return dict(radius=self.radius, n_radii=self.n_radii, n_random_dirs=self.n_random_dirs, n_y=self.n_y, seed=self.seed)


@dataclass(frozen=True)
class NormEstimate:
    value: float
    y: np.ndarray
    xi: np.ndarray

    def __float__(self):
        return self.value


def _resolve_probes(f: Integrand, samples):
    if samples is None:
        samples = ProbeSpec()
    if isinstance(samples, ProbeSpec):
        return samples.probes(f.d, f.N, f.depends_y), samples.to_dict()
    y, xi = samples
    return (np.asarray(y, float).reshape(-1, f.N), np.asarray(xi, float).reshape(-1, f.d, f.N)), {"explicit": int(np.shape(y)[0])}


def _norm_ratio(f: Integrand, phi: YoungFunction, y, xi):
    return np.abs(f(None, y, xi)) / (1.0 + phi_eval(phi, _fro(xi)))


def _pattern_search(f: Integrand, phi: YoungFunction, radius: float, y, xi, max_iter: int = 400):
    """Coordinate pattern search maximizing the norm ratio from several
    starts at once; ``xi`` stays in the ball of the given radius and ``y``
    moves only when ``f`` depends on it."""
    K, d, N = xi.shape
    ny = N if f.depends_y else 0
    m = ny + d * N
    pos = np.hstack([y[:, :ny], xi.reshape(K, -1)])
    best = _norm_ratio(f, phi, y, xi)
    step = np.where(np.arange(m) < ny, 0.125, 0.25 * (1.0 + _fro(xi)).max())
    step = np.broadcast_to(step, (K, m)).copy()
    moves = np.vstack([np.eye(m), -np.eye(m)])

    def unpack(P):
        yy = np.zeros((P.shape[0], N)) if ny == 0 else P[:, :ny]
        xx = P[:, ny:].reshape(-1, d, N)
        r = _fro(xx)
        over = r > radius
        xx[over] *= (radius / r[over])[:, None, None]
        return yy, xx

    for _ in range(max_iter):
        cand = pos[:, None, :] + moves[None] * step[:, None, :]
        yy, xx = unpack(cand.reshape(-1, m).copy())
        vals = _norm_ratio(f, phi, yy, xx).reshape(K, 2 * m)
        j = np.argmax(vals, axis=1)
        gain = vals[np.arange(K), j] > best
        if gain.any():
            P = np.hstack([yy[:, :ny], xx.reshape(len(xx), -1)]).reshape(K, 2 * m, m)
            pos[gain] = P[gain, j[gain]]
            best[gain] = vals[gain, j[gain]]
        step[~gain] *= 0.5
        if np.all(step[:, ny:] < 1e-10 * (1.0 + radius)) and (ny == 0 or np.all(step[:, :ny] < 1e-12)):
            break
    yy, xx = unpack(pos.copy())
    return best, yy, xx


def ephi_norm_estimate(f: Integrand, phi: YoungFunction, radius: float = 1e3, samples: ProbeSpec | None = None,
                       refine: int = 8) -> NormEstimate:
    """``sup |f(y, xi)| / (1 + Phi(|xi|))`` over ``|xi| <= radius``.

    The probe set gives starting points; the ``refine`` best probes are
    then improved by a local pattern search so that the estimate is close
    to the true supremum rather than to the grid maximum.
    """
    if not radius > 0:
        raise ConfigurationError("radius must be positive")
    spec = replace(samples or ProbeSpec(), radius=float(radius))
    y, xi = spec.probes(f.d, f.N, f.depends_y)
    ratio = _norm_ratio(f, phi, y, xi)
    if not np.all(np.isfinite(ratio)):
        raise CertificationError("integrand is not finite on the probes")
    k = int(np.argmax(ratio))
    value, y_best, xi_best = float(ratio[k]), y[k].copy(), xi[k].copy()
    if refine > 0:
        top = np.argsort(-ratio, kind="stable")[:refine]
        vals, yy, xx = _pattern_search(f, phi, float(radius), y[top].copy(), xi[top].copy())
        j = int(np.argmax(vals))
        if vals[j] > value:
            value, y_best, xi_best = float(vals[j]), yy[j], xx[j]
    return NormEstimate(value, y_best, xi_best)


@dataclass
class RecessionProfile:
    table: np.ndarray  # (n_y, n_rays, n_radii)
    radii: np.ndarray
    uniformity_gap: float
    y: np.ndarray

    def limits(self) -> np.ndarray:
        return self.table[:, :, -1]


def recession_profile(f: Integrand, phi: YoungFunction, rays: np.ndarray, radii: Sequence[float], y_samples: np.ndarray | None = None) -> RecessionProfile:
    """``f(y, r eta) / (1 + Phi(r))`` per (y, ray, radius).

    ``uniformity_gap`` is the largest spread, over ``y``, of the profile
    across all rays and the last two radii: it vanishes when the recession
    limit exists and is independent of the direction.
    """
    radii = np.asarray(radii, float)
    if radii.size < 2 or np.any(np.diff(radii) <= 0):
        raise ConfigurationError("radii must be increasing with at least two entries")
    rays = np.asarray(rays, float).reshape(-1, f.d, f.N)
    rays = rays / _fro(rays)[:, None, None]
    ys = np.zeros((1, f.N)) if y_samples is None else np.asarray(y_samples, float).reshape(-1, f.N)
    ny, nr, nk = ys.shape[0], rays.shape[0], radii.size
    xi = radii[None, :, None, None] * rays[:, None]  # (nr, nk, d, N)
    XI = np.tile(xi.reshape(-1, f.d, f.N), (ny, 1, 1))
    Y = np.repeat(ys, nr * nk, axis=0)
    vals = f(None, Y, XI).reshape(ny, nr, nk)
    table = vals / (1.0 + phi_eval(phi, radii))[None, None, :]
    tail = table[:, :, -2:].reshape(ny, -1)
    gap = float(np.max(tail.max(axis=1) - tail.min(axis=1)))
    return RecessionProfile(table, radii, gap, ys)


@dataclass
class GrowthCertificate:
    """``alpha Phi(|xi|) <= f <= beta (1 + Phi(|xi|))`` on the probes."""

    phi: YoungFunction
    alpha_growth: float
    beta_growth: float
    probe_spec: dict = field(default_factory=dict)
    alpha_witness: np.ndarray | None = None
    beta_witness: np.ndarray | None = None

    def to_dict(self) -> dict:
        return {"phi": self.phi.to_dict(), "alpha_growth": self.alpha_growth, "beta_growth": self.beta_growth, "probe_spec": self.probe_spec}


def growth_constants(f: Integrand, phi: YoungFunction, samples=None) -> GrowthCertificate:
    """Tightest growth constants on the probes.

    ``samples`` is a :class:`ProbeSpec` or an explicit ``(y, xi)`` pair.
    """
    (y, xi), meta = _resolve_probes(f, samples)
    vals = f(None, y, xi)
    if not np.all(np.isfinite(vals)):
        raise CertificationError("integrand is not finite on the probes")
    if np.any(vals < 0):
        k = int(np.argmin(vals))
        raise CertificationError(f"f is negative ({vals[k]:.3g}) at y={y[k].tolist()}, xi={xi[k].tolist()}", probe=(y[k], xi[k]))
    ph = phi_eval(phi, _fro(xi))
    upper = vals / (1.0 + ph)
    pos = ph > 0
    if not pos.any():
        raise CertificationError("probe set has no xi with Phi(|xi|) > 0")
    lower = np.where(pos, vals / np.where(pos, ph, 1.0), np.inf)
    ka, kb = int(np.argmin(lower)), int(np.argmax(upper))
    alpha = float(lower[ka])
    if not alpha > 0:
        raise CertificationError(f"no positive alpha: f vanishes at y={y[ka].tolist()}, xi={xi[ka].tolist()}", probe=(y[ka], xi[ka]))
    return GrowthCertificate(phi, alpha, float(upper[kb]), meta, xi[ka].copy(), xi[kb].copy())


# -- battery ------------------------------------------------------------------


@dataclass
class BatteryMember:
    id: str
    integrand: Integrand
    norm: float


@dataclass
class TestBattery:
    """Finite family of test integrands with estimated norms.

    Replayable from ``recipe`` = (phi, counts, seed, d, N).
    """

    __test__ = False  # not a pytest class

    members: list
    recipe: dict

    def __len__(self):
        return len(self.members)

    def __iter__(self):
        return iter(self.members)

    def xi_only(self) -> "TestBattery":
        return TestBattery([m for m in self.members if not m.integrand.depends_y], dict(self.recipe, subset="xi_only"))

    def to_dict(self) -> dict:
        return {
            "recipe": self.recipe,
            "members": [{"id": m.id, "norm": m.norm, "integrand": m.integrand.to_dict()} for m in self.members],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_recipe(cls, recipe: dict) -> "TestBattery":
        r = dict(recipe)
        return default_battery(YoungFunction.from_dict(r["phi"]), r["n_y_modes"], r["n_xi_shapes"], r["seed"],
                               r["d"], r["N"], r.get("include_constant_mode", False), r.get("radius", 1e3))


def _unit(rng, d, N, scale=1.0):
    m = rng.standard_normal((d, N))
    return (scale * m / np.linalg.norm(m)).tolist()


def _battery_shape(j: int, rng, d: int, N: int) -> dict:
    family, level = j % 3, j // 3
    if family == 0:
        return {"kind": "phi_radial", "center": _unit(rng, d, N, 0.5)}
    if family == 1:
        A = np.asarray(_unit(rng, d, N, 1.0 + 0.25 * level))
        return {"kind": "pl_two_well", "wells": [A.tolist(), (-A).tolist()]}
    return {"kind": "clamped_double_well", "radius": 1.0 + 0.25 * level, "clamp": 1.0}


def default_battery(
    phi: YoungFunction,
    n_y_modes: int,
    n_xi_shapes: int,
    seed: int = 0,
    d: int = 1,
    N: int = 1,
    include_constant_mode: bool = False,
    radius: float = 1e3,
) -> TestBattery:
    """``{Phi(|xi|)} + {xi_ij} + {a_k(y) g_j(xi)}``.

    ``a_k(y) = 1 + cos(2 pi k y_axis)`` cycles through the axes; shapes cycle
    through convex radial Phi-growth, piecewise-linear two-well and clamped
    double-well families, with centers/wells drawn from ``seed``.
    ``include_constant_mode`` adds ``a_0 = 1`` (y-independent) members.
    """
    if n_y_modes < 0 or n_xi_shapes < 1:
        raise ConfigurationError("need n_y_modes >= 0 and n_xi_shapes >= 1")
    rng = np.random.default_rng(seed)
    recipes = [("phi", {"kind": "phi_radial", "name": "phi"})]
    for i in range(d):
        for j in range(N):
            recipes.append((f"xi_{i + 1}{j + 1}", {"kind": "coordinate", "i": i, "j": j, "name": f"xi_{i + 1}{j + 1}"}))
    shapes = [_battery_shape(j, rng, d, N) for j in range(n_xi_shapes)]
    modes = range(0 if include_constant_mode else 1, n_y_modes + 1) if n_y_modes > 0 or include_constant_mode else []
    for k in modes:
        if k == 0:
            coeff = None
        else:
            mode = [0] * N
            mode[(k - 1) % N] = k
            coeff = {"kind": "trig", "mean": 1.0, "amp": 1.0, "mode": mode, "fn": "cos"}
        for j, sh in enumerate(shapes):
            mid = f"a{k}*g{j + 1}"
            recipes.append((mid, {"kind": "product", "coeff": coeff, "shape": sh, "name": mid}))
    probe = ProbeSpec(radius=radius, n_y=8, seed=seed)
    members = []
    for mid, rec in recipes:
        f = make_integrand(rec, phi, d, N)
        members.append(BatteryMember(mid, f, ephi_norm_estimate(f, phi, radius, probe).value))
    recipe = dict(phi=phi.to_dict(), n_y_modes=n_y_modes, n_xi_shapes=n_xi_shapes, seed=seed, d=d, N=N,
                  include_constant_mode=include_constant_mode, radius=radius)
    return TestBattery(members, recipe)
