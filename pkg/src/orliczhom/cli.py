"""Command-line entry point: ``orliczhom <command> --config FILE``.

Every command reads one YAML file, runs deterministically from its seed,
and writes its results atomically into ``--out``. CSV files start with a
``#`` manifest line carrying the config hash and seed; JSON files carry
the same data under ``"manifest"``. Wall-clock timestamps appear only in
``manifest.json``.
"""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import io
import json
import os
import platform
import sys
import tempfile
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from . import __version__
from .characterize import CheckConfig, check_gradient_ym, check_two_scale_ym, offset_measure
from .discrete import MinimizerConfig
from .envelopes import LaminationConfig, cell_fhom, lamination_bound, quasiconvexify
from .errors import ConfigurationError
from .fields import (
    TorusField,
    affine_field,
    box,
    corrector_from_dict,
    laminate_field,
    oscillating_sequence,
    sawtooth_sequence,
)
from .homogenize import gamma_table
from .integrand import default_battery, make_integrand
from .measures import barycenter, estimate_two_scale_ym, phi_moment, y_marginalize, y_uniformity
from .young import (
    YoungFunction,
    conjugate_function,
    delta2_nabla2,
    phi_conjugate,
    phi_eval,
    sup_transform,
)

COMMANDS = ("young", "qenv", "cellprob", "ymeasure", "check", "gamma")
EXIT_OK, EXIT_ERROR, EXIT_VIOLATED = 0, 1, 2


# -- configuration ------------------------------------------------------------


class Config:
    """Parsed YAML with dotted-path access and line-pointing errors."""

    def __init__(self, text: str, source: str):
        self.source = source
        self.text = text
        try:
            node = yaml.compose(text)
            self.data = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            where = f"{source}:{mark.line + 1}:{mark.column + 1}" if mark else source
            raise ConfigurationError(f"{where}: malformed YAML: {getattr(exc, 'problem', exc)}") from None
        if not isinstance(self.data, dict):
            raise ConfigurationError(f"{source}:1: top level must be a mapping")
        self.lines: dict = {}
        self._index(node, "")

    def _index(self, node, path):
        if node is None:
            return
        self.lines[path] = node.start_mark.line + 1
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                self._index(v, f"{path}.{k.value}" if path else str(k.value))
        elif isinstance(node, yaml.SequenceNode):
            for i, v in enumerate(node.value):
                self._index(v, f"{path}[{i}]")

    def error(self, path: str, message: str) -> ConfigurationError:
        p = path
        while p and p not in self.lines:
            p = p.rsplit(".", 1)[0] if "." in p else ""
        line = self.lines.get(p, 1)
        return ConfigurationError(f"{self.source}:{line}: key '{path}': {message}")

    def get(self, path: str, default: Any = ..., kind: type | tuple | None = None):
        cur: Any = self.data
        for part in path.split("."):
            if not isinstance(cur, dict) or part not in cur:
                if default is ...:
                    raise self.error(path, "required key is missing")
                return default
            cur = cur[part]
        if kind is not None and not isinstance(cur, kind):
            names = kind.__name__ if isinstance(kind, type) else "/".join(k.__name__ for k in kind)
            raise self.error(path, f"expected {names}, got {type(cur).__name__}")
        return cur

    def sha256(self) -> str:
        return hashlib.sha256(self.text.encode()).hexdigest()


def resolve_config(name_or_path: str) -> tuple[str, str]:
    """Return ``(text, source)`` for a file path or a shipped recipe name."""
    p = Path(name_or_path)
    if p.is_file():
        return p.read_text(), str(p)
    stem = name_or_path[:-5] if name_or_path.endswith(".yaml") else name_or_path
    res = resources.files("orliczhom") / "recipes" / f"{stem}.yaml"
    if res.is_file():
        return res.read_text(), f"recipe:{stem}"
    raise ConfigurationError(f"config {name_or_path!r} is neither a file nor a shipped recipe (see --list-recipes)")


def list_recipes() -> list[str]:
    root = resources.files("orliczhom") / "recipes"
    return sorted(f.name[:-5] for f in root.iterdir() if f.name.endswith(".yaml"))


def _phi(cfg: Config, path: str = "phi", spec: dict | None = None) -> YoungFunction:
    spec = cfg.get(path, kind=dict) if spec is None else spec
    if not isinstance(spec, dict):
        raise cfg.error(path, "expected a mapping")
    try:
        if "params" in spec:
            return YoungFunction.from_dict(spec)
        params = {k: v for k, v in spec.items() if k not in ("kind", "t0")}
        return YoungFunction.from_dict({"kind": spec.get("kind"), "params": params, "t0": spec.get("t0", 1.0)})
    except (KeyError, ValueError, TypeError) as exc:
        raise cfg.error(path, f"invalid Young function: {exc}") from None


def _dims(cfg: Config) -> tuple[int, int]:
    return int(cfg.get("dim.d", 1, int)), int(cfg.get("dim.N", 1, int))


def _minimizer(cfg: Config, path: str, seed: int, defaults: dict | None = None) -> MinimizerConfig:
    spec = dict(defaults or {})
    spec.update(cfg.get(path, {}, dict))
    spec["seed"] = seed
    try:
        return MinimizerConfig(**spec)
    except TypeError as exc:
        raise cfg.error(path, str(exc)) from None
    except ConfigurationError as exc:
        raise cfg.error(path, str(exc)) from None


def _integrand(cfg: Config, phi: YoungFunction, d: int, N: int, path: str = "integrand"):
    try:
        return make_integrand(cfg.get(path, kind=dict), phi, d, N)
    except (KeyError, ValueError, TypeError) as exc:
        raise cfg.error(path, f"invalid integrand: {exc}") from None


def _matrices(cfg: Config, path: str, d: int, N: int) -> list[np.ndarray]:
    raw = cfg.get(path, kind=list)
    try:
        return [np.asarray(m, float).reshape(d, N) for m in raw]
    except (ValueError, TypeError) as exc:
        raise cfg.error(path, f"expected a list of {d}x{N} matrices ({exc})") from None


def _linspace(cfg: Config, path: str) -> np.ndarray:
    spec = cfg.get(path, kind=dict)
    try:
        return np.linspace(float(spec["start"]), float(spec["stop"]), int(spec["num"]))
    except (KeyError, ValueError, TypeError) as exc:
        raise cfg.error(path, f"expected start/stop/num ({exc})") from None


# -- output -------------------------------------------------------------------


class Writer:
    """Atomic file writer that stamps every output with the manifest."""

    def __init__(self, out: Path, manifest: dict, formats: set):
        self.out = out
        self.manifest = manifest
        self.formats = formats
        self.files: list[str] = []
        out.mkdir(parents=True, exist_ok=True)

    def _atomic(self, name: str, text: str) -> None:
        fd, tmp = tempfile.mkstemp(dir=self.out, prefix=f".{name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "w", newline="") as fh:
                fh.write(text)
            os.replace(tmp, self.out / name)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        self.files.append(name)

    def manifest_line(self) -> str:
        m = self.manifest
        return f"# orliczhom {m['version']} command={m['command']} config_sha256={m['config_sha256']} seed={m['seed']}\n"

    def csv(self, name: str, header: list, rows: list, force: bool = False) -> None:
        if "csv" not in self.formats and not force:
            return
        buf = io.StringIO()
        buf.write(self.manifest_line())
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
        self._atomic(name, buf.getvalue())

    def raw(self, name: str, text: str) -> None:
        self._atomic(name, self.manifest_line() + text)

    def json(self, name: str, payload: Any, force: bool = False) -> None:
        if "json" not in self.formats and not force:
            return
        doc = {"manifest": self.manifest, "result": payload}
        self._atomic(name, json.dumps(_jsonable(doc), sort_keys=True, indent=1) + "\n")

    def finish(self) -> None:
        files = {}
        for name in sorted(set(self.files)):
            files[name] = hashlib.sha256((self.out / name).read_bytes()).hexdigest()
        doc = dict(self.manifest)
        doc.update(
            files=files,
            timestamp=_dt.datetime.now(_dt.timezone.utc).isoformat(),
            python=platform.python_version(),
            numpy=np.__version__,
            yaml=yaml.__version__,
        )
        self._atomic("manifest.json", json.dumps(doc, sort_keys=True, indent=1) + "\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, float) and not np.isfinite(obj):
        return repr(obj)
    return obj


def _mat_str(m) -> str:
    return ";".join(repr(float(v)) for v in np.ravel(m))


# -- commands -----------------------------------------------------------------


def cmd_young(cfg: Config, seed: int, w: Writer) -> int:
    phis = cfg.get("phis", kind=list)
    s = _linspace(cfg, "s")
    probe_max = float(cfg.get("certificates.probe_max", 1e6))
    rows, certs = [], []
    for i, spec in enumerate(phis):
        phi = _phi(cfg, f"phis[{i}]", spec)
        label = json.dumps(phi.to_dict(), sort_keys=True)
        numeric = phi_conjugate(phi, s, method="numeric")
        conj = conjugate_function(phi, "numeric")
        double, _ = sup_transform(conj, s)
        closed = phi.closed_form_conjugate
        cf = closed(s) if closed is not None else [None] * len(s)
        for k in range(len(s)):
            rows.append([label, float(s[k]), float(phi_eval(phi, s[k])), float(numeric[k]),
                         "" if cf[k] is None else float(cf[k]), float(double[k])])
        cert = delta2_nabla2(phi, probe_max=probe_max)
        certs.append(cert.to_dict())
    w.csv("young.csv", ["phi", "s", "phi_value", "conjugate_numeric", "conjugate_closed_form", "double_conjugate"], rows)
    w.csv("certificates.csv", ["phi", "alpha", "beta", "t0", "probe_max", "status"],
          [[json.dumps(c["phi"], sort_keys=True), c["alpha"], c["beta"], c["t0"], c["probe_max"], c["status"]] for c in certs])
    w.json("young.json", {"rows": rows, "certificates": certs})
    return EXIT_OK


def cmd_qenv(cfg: Config, seed: int, w: Writer) -> int:
    phi = _phi(cfg)
    d, N = _dims(cfg)
    f = _integrand(cfg, phi, d, N)
    if "xi_range" in cfg.data:
        if (d, N) != (1, 1):
            raise cfg.error("xi_range", "xi_range needs d = N = 1; list matrices under 'xi'")
        xis = [np.array([[v]]) for v in _linspace(cfg, "xi_range")]
    else:
        xis = _matrices(cfg, "xi", d, N)
    mcfg = _minimizer(cfg, "minimizer", seed, {"resolution": 64})
    depth = int(cfg.get("lamination.depth", 1, int))
    ld = LaminationConfig()
    lam = LaminationConfig(int(cfg.get("lamination.n_angles", ld.n_angles, int)), int(cfg.get("lamination.n_t", ld.n_t, int)),
                           float(cfg.get("lamination.t_max", ld.t_max)))
    rows = []
    for xi in xis:
        fv = float(f(None, None, xi[None])[0])
        rows.append([_mat_str(xi), fv, quasiconvexify(f, xi, mcfg), lamination_bound(f, xi, depth, lam)])
    w.csv("qenv.csv", ["xi", "f", "qf", "lamination"], rows)
    w.json("qenv.json", {"rows": rows, "minimizer": mcfg.to_dict(), "lamination_depth": depth})
    return EXIT_OK


def cmd_cellprob(cfg: Config, seed: int, w: Writer) -> int:
    phi = _phi(cfg)
    d, N = _dims(cfg)
    f = _integrand(cfg, phi, d, N)
    xis = _matrices(cfg, "xi", d, N)
    T_list = [int(t) for t in cfg.get("T_list", [1, 2, 4], list)]
    mcfg = _minimizer(cfg, "minimizer", seed)
    results = [cell_fhom(f, xi, T_list, mcfg) for xi in xis]
    rows = [r for res in results for r in res.csv_rows()]
    w.csv("cellprob.csv", ["xi", "T", "value", "extrapolated"], rows)
    w.json("cellprob.json", [r.to_dict() for r in results])
    return EXIT_OK


def build_sequence(cfg: Config, path: str = "generator"):
    """Generator spec -> ``(fields, epsilons, u, u1)``."""
    gen = cfg.get(path, kind=dict)
    kind = gen.get("kind")
    try:
        res = [int(v) for v in gen["grid"]["resolution"]]
        lengths = [float(v) for v in gen["grid"].get("lengths", [1.0] * len(res))]
        grid = box(tuple(res), tuple(lengths))
        eps = [float(e) for e in gen["epsilons"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise cfg.error(path, f"generator needs grid.resolution and epsilons ({exc})") from None
    N = grid.dim
    if kind == "sawtooth":
        us = [sawtooth_sequence(grid, e) for e in eps]
        u = TorusField(grid, np.zeros(grid.node_shape("free") + (1,)), "free")
        return us, eps, u, None
    F = np.atleast_2d(np.asarray(gen.get("F", np.zeros((1, N))), float))
    d = F.shape[0]
    if F.shape[1] != N:
        raise cfg.error(f"{path}.F", f"F must have {N} columns")
    u = affine_field(grid, F)
    if kind == "affine":
        return [u for _ in eps], eps, u, None
    if kind == "oscillating":
        u1 = corrector_from_dict(gen.get("corrector"), d, N)
        return oscillating_sequence(u, u1, eps, gen.get("scales", "one_scale")), eps, u, u1
    if kind == "laminate":
        try:
            us = [laminate_field(grid, F, gen["a"], int(gen.get("axis", 0)), e, float(gen["theta"]), float(gen.get("amplitude", 1.0)))
                  for e in eps]
        except KeyError as exc:
            raise cfg.error(path, f"laminate generator needs {exc}") from None
        return us, eps, u, None
    raise cfg.error(f"{path}.kind", f"unknown generator kind {kind!r} (sawtooth, affine, oscillating, laminate)")


def cmd_ymeasure(cfg: Config, seed: int, w: Writer) -> int:
    us, eps, u, _ = build_sequence(cfg)
    bins = cfg.get("bins", kind=dict)
    nu = estimate_two_scale_ym(us, eps, bins, int(cfg.get("index", -1, int)), cfg.get("scheme", "p1", str),
                               {"config_sha256": w.manifest["config_sha256"], "seed": seed})
    phi = _phi(cfg) if "phi" in cfg.data else None
    dev, bound = y_uniformity(nu)
    summary = {
        "entries": int(len(nu.weights)),
        "overflow": nu.overflow_mass(),
        "bin_width": nu.bin_width,
        "barycenter": barycenter(nu),
        "y_uniformity": {"deviation": dev, "bound": bound},
    }
    if phi is not None:
        summary["phi_moment_total"] = phi_moment(nu, phi).total
    if "csv" in w.formats:
        w.raw("measure.csv", nu.to_csv())
    w.json("measure.json", {"header": nu.header(), "summary": summary}, force=True)
    return EXIT_OK


def cmd_check(cfg: Config, seed: int, w: Writer) -> int:
    phi = _phi(cfg)
    us, eps, u, u1 = build_sequence(cfg)
    nu = estimate_two_scale_ym(us, eps, cfg.get("bins", kind=dict))
    kind = cfg.get("check.kind", "two_scale", str)
    if "check.offset" in cfg.lines:
        nu = offset_measure(nu, cfg.get("check.offset"))
    bat = cfg.get("check.battery", {}, dict)
    battery = default_battery(phi, int(bat.get("n_y_modes", 1)), int(bat.get("n_xi_shapes", 3)),
                              int(bat.get("seed", seed)), nu.d, nu.N, bool(bat.get("include_constant_mode", False)))
    defaults = CheckConfig()
    ccfg = CheckConfig(
        tol=float(cfg.get("check.tol", defaults.tol)),
        tol_residual=cfg.get("check.tol_residual", None),
        minimizer=_minimizer(cfg, "check.minimizer", seed, defaults.minimizer.to_dict()),
        T_list=tuple(int(t) for t in cfg.get("check.T_list", list(defaults.T_list), list)),
    )
    if kind == "two_scale":
        report = check_two_scale_ym(nu, u, u1, phi, battery, cfg=ccfg)
    elif kind == "gradient":
        report = check_gradient_ym(y_marginalize(nu), u, phi, battery.xi_only(), cfg=ccfg)
    else:
        raise cfg.error("check.kind", "expected two_scale or gradient")
    w.json("report.json", report.to_dict(), force=True)
    w.raw("report.txt", report.table() + "\n")
    print(report.table())
    return EXIT_OK if report.consistent else EXIT_VIOLATED


def cmd_gamma(cfg: Config, seed: int, w: Writer) -> int:
    phi = _phi(cfg)
    d, N = _dims(cfg)
    f = _integrand(cfg, phi, d, N)
    try:
        F = np.asarray(cfg.get("boundary.F"), float).reshape(d, N)
    except (ValueError, TypeError):
        raise cfg.error("boundary.F", f"expected a {d}x{N} matrix") from None
    eps = [float(e) for e in cfg.get("epsilons", kind=list)]
    mcfg = _minimizer(cfg, "minimizer", seed)
    ccfg = _minimizer(cfg, "cell_minimizer", seed, mcfg.to_dict()) if "cell_minimizer" in cfg.data else mcfg
    T_list = [int(t) for t in cfg.get("T_list", [1, 2, 4], list)]
    lengths = cfg.get("lengths", None)
    ex = gamma_table(f, phi, F, eps, mcfg, ccfg, T_list, lengths=lengths)
    rows = [[r["eps"], r["value"], ex.reference, float(g)] for r, g in zip(ex.per_eps, ex.gaps)]
    w.csv("gamma.csv", ["eps", "minF_eps", "reference", "gap"], rows, force=True)
    w.json("gamma.json", ex.to_dict())
    return EXIT_OK


HANDLERS = {
    "young": cmd_young,
    "qenv": cmd_qenv,
    "cellprob": cmd_cellprob,
    "ymeasure": cmd_ymeasure,
    "check": cmd_check,
    "gamma": cmd_gamma,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="orliczhom", description="Orlicz-growth homogenization experiments")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--list-recipes", action="store_true", help="list shipped recipe names and exit")
    sub = parser.add_subparsers(dest="command")
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="YAML file or shipped recipe name")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help="output directory (default: ./out/<command>)")
        p.add_argument("--format", default="csv,json", help="comma list of csv,json")
    return parser


def run(command: str, config: str, seed: int | None = None, out: str | None = None, formats: str = "csv,json") -> int:
    text, source = resolve_config(config)
    cfg = Config(text, source)
    declared = cfg.get("command", command, str)
    if declared != command:
        raise cfg.error("command", f"config is for {declared!r}, not {command!r}")
    seed = int(cfg.get("seed", 0, int)) if seed is None else int(seed)
    fmts = {f.strip() for f in formats.split(",") if f.strip()}
    if not fmts <= {"csv", "json"}:
        raise ConfigurationError(f"--format accepts csv and json, got {formats!r}")
    manifest = {"version": __version__, "command": command, "config_sha256": cfg.sha256(), "seed": seed,
                "config_source": source}
    writer = Writer(Path(out or Path("out") / command), manifest, fmts)
    status = HANDLERS[command](cfg, seed, writer)
    writer.finish()
    return status


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.list_recipes:
        print("\n".join(list_recipes()))
        return EXIT_OK
    if args.command is None:
        parser.print_help()
        return EXIT_ERROR
    try:
        return run(args.command, args.config, args.seed, args.out, args.format)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except Exception as exc:  # noqa: BLE001 - reported as exit status 1
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
