"""Command-line front end.

Scenarios are configured by an INI file (one section per verb plus
``[domain]``, ``[h]`` and ``[run]``); a handful of flags override it.  Every
run writes its outputs atomically and a ``manifest.json`` listing them, also
when the run fails.  Exit status: 0 ok, 2 configuration error, 3 numeric
failure.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import json
import logging
import os
import sys
import time
import traceback
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .blowup import (RESCALE, ConfigurationNotFound, ConstructionError, PositivityError, RadialFamilyParams,
                     TwoBubbleFamily, balance_configuration, family_grid, instability_sweep, radial_residual,
                     residual_potential)
from .bubbles import BubbleConfiguration, extract_concentration_points, standard_bubble
from .elliptic import SolverError, find_radial_solution
from .fields import CoefficientH, ScalarField3D, ScalarFieldRadial, parse_number, read_field_csv, write_field_csv
from .geometry import Domain, GeometryError, Grid3D, RadialGrid
from .green import ExpansionError, extract_expansion, solve_green
from .pohozaev import (PreconditionError, evaluate_identity_P1, evaluate_identity_P3, evaluate_identity_P4,
                       green_pohozaev_sum, write_reports_csv)

log = logging.getLogger("pohozaev_lab")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
VERBS = ("green", "pohozaev", "radial-solve", "extract", "construct", "sweep", "report")
CONVENTIONS = ["analyst-laplacian", "scaled-green"]


class ConfigError(ValueError):
    pass


class AssertionFailure(RuntimeError):
    pass


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------

def _floats(text: str) -> list:
    try:
        return [parse_number(t.strip()) for t in text.replace(";", ",").split(",") if t.strip()]
    except (ValueError, SyntaxError) as exc:
        raise ConfigError(f"cannot parse numbers from {text!r}: {exc}") from None


def _points(text: str) -> np.ndarray:
    pts = [_floats(p) for p in text.split(";") if p.strip()]
    if not pts or any(len(p) != 3 for p in pts):
        raise ConfigError(f"expected ';'-separated triples, got {text!r}")
    return np.array(pts)


@dataclass
class RunConfig:
    scenario: str
    out: Path
    seed: int = 0
    domain: Domain = field(default_factory=Domain.unit_ball)
    h: CoefficientH = field(default_factory=lambda: CoefficientH.constant(0.0))
    sections: dict = field(default_factory=dict)
    eps: list = field(default_factory=list)
    mode: str = "radial"

    def get(self, section: str, key: str, default=None):
        return self.sections.get(section, {}).get(key, default)

    def number(self, section: str, key: str, default: float) -> float:
        v = self.get(section, key)
        if v is None:
            return default
        try:
            x = parse_number(v.strip())
        except (ValueError, SyntaxError) as exc:
            raise ConfigError(f"[{section}] {key}: {exc}") from None
        return x

    def positive(self, section: str, key: str, default: float) -> float:
        x = self.number(section, key, default)
        if not x > 0:
            raise ConfigError(f"[{section}] {key} must be positive")
        return x

    def echo(self) -> dict:
        return {"scenario": self.scenario, "seed": self.seed, "h": self.h.describe(), "eps": self.eps,
                "mode": self.mode, **self.domain.to_config(), "sections": self.sections}


def _parse_domain(sec: dict) -> Domain:
    kind = sec.get("kind", "unit_ball").strip()
    if kind == "unit_ball":
        return Domain.unit_ball()
    if kind != "star_shaped":
        raise ConfigError(f"unknown domain kind {kind!r}")
    coeffs = {}
    for item in sec.get("coefficients", "").split(";"):
        if not item.strip():
            continue
        lm, c = item.split(":")
        l, m = (int(s) for s in lm.split(","))
        coeffs[(l, m)] = parse_number(c)
    if not coeffs:
        raise ConfigError("[domain] star_shaped needs coefficients 'l,m:c; ...'")
    return Domain.from_coefficients(coeffs)


def load_config(verb: str, args) -> RunConfig:
    """Parse and validate everything a scenario needs before any compute."""
    parser = configparser.ConfigParser(interpolation=None)
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise ConfigError(f"config file {path} not found")
        try:
            parser.read(path, encoding="utf-8")
        except configparser.Error as exc:
            raise ConfigError(str(exc)) from None
    sections = {s: dict(parser[s]) for s in parser.sections()}
    run = sections.get("run", {})
    try:
        domain = _parse_domain(sections.get("domain", {}))
        h = CoefficientH.parse(sections.get("h", {}).get("spec", "0"))
        seed = int(args.seed if args.seed is not None else run.get("seed", 0))
    except (ValueError, SyntaxError, GeometryError) as exc:
        raise ConfigError(str(exc)) from None
    out = Path(args.out or run.get("out", "out"))
    sec = sections.get(verb, {})
    mode = (args.mode or sec.get("mode", "radial")).replace("_", "-")
    if mode not in ("radial", "two-bubble"):
        raise ConfigError(f"mode must be radial or two-bubble, got {mode!r}")
    eps_text = args.eps or sec.get("eps")
    eps = []
    if eps_text:
        eps = _floats(eps_text)
    cfg = RunConfig(verb, out, seed, domain, h, sections, eps, mode)
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig):
    v = cfg.scenario
    if any(not 0 < e < 0.1 for e in cfg.eps):
        raise ConfigError("eps values must lie in (0, 0.1)")
    if v == "sweep":
        if len(cfg.eps) < 2:
            raise ConfigError("sweep needs an eps list with at least two values (--eps or [sweep] eps)")
        if any(b >= a for a, b in zip(cfg.eps, cfg.eps[1:])):
            raise ConfigError("eps list must be strictly decreasing")
    if v == "construct" and len(cfg.eps) != 1:
        raise ConfigError("construct needs exactly one eps value")
    if v == "green":
        src = _points(cfg.get("green", "source", "0,0,0"))
        if not cfg.domain.contains(src).all():
            raise ConfigError("green source outside the domain")
        cfg.positive("green", "spacing", 1 / 32)
    if v == "extract":
        cfg.positive("extract", "threshold", 1.0)
        cfg.positive("extract", "spacing", 1 / 64)
        if cfg.get("extract", "field", "synthetic") == "synthetic":
            cfg.positive("extract", "mu", 1e-2)
            _points(cfg.get("extract", "centers", "0.4,0,0; -0.4,0,0"))
    if v == "pohozaev":
        ids = [s.strip() for s in cfg.get("pohozaev", "identities", "P1,P3,P4").split(",")]
        if not set(ids) <= {"P1", "P2", "P3", "P4"}:
            raise ConfigError(f"unknown identities {ids}")
        if cfg.get("pohozaev", "form", "corrected") not in ("corrected", "alternate"):
            raise ConfigError("[pohozaev] form must be corrected or alternate")
    for key in ("rtol", "fit_tol"):
        if cfg.get("tolerances", key) is not None:
            cfg.positive("tolerances", key, 1.0)


# --------------------------------------------------------------------------
# outputs and manifest
# --------------------------------------------------------------------------

@dataclass
class RunManifest:
    config: dict
    version: str = __version__
    conventions: list = field(default_factory=lambda: list(CONVENTIONS))
    stages: dict = field(default_factory=dict)
    files: list = field(default_factory=list)
    results: dict = field(default_factory=dict)
    status: int = EXIT_OK
    error: dict | None = None


class Outputs:
    """Atomic writers into one directory; remembers every file it emits."""

    def __init__(self, root: Path, manifest: RunManifest):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.manifest = manifest

    def _commit(self, tmp: Path, name: str) -> Path:
        final = self.root / name
        os.replace(tmp, final)
        if name not in self.manifest.files:
            self.manifest.files.append(name)
        return final

    def text(self, name: str, content: str) -> Path:
        tmp = self.root / f".{name}.tmp"
        tmp.write_text(content, encoding="utf-8")
        return self._commit(tmp, name)

    def json(self, name: str, obj) -> Path:
        return self.text(name, json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")

    def table(self, name: str, header, rows) -> Path:
        tmp = self.root / f".{name}.tmp"
        with open(tmp, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for row in rows:
                w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
        return self._commit(tmp, name)

    def field(self, name: str, fld, tolerances=None) -> Path:
        stem = Path(name).stem
        tmp_csv, tmp_json = write_field_csv(fld, self.root / f".tmp-{stem}.csv", tolerances)
        self._commit(tmp_json, f"{stem}.json")
        return self._commit(tmp_csv, name)

    def via(self, name: str, writer) -> Path:
        tmp = self.root / f".{name}.tmp"
        writer(tmp)
        return self._commit(tmp, name)

    def finish(self) -> Path:
        if "manifest.json" not in self.manifest.files:
            self.manifest.files.append("manifest.json")
        return self.json("manifest.json", asdict(self.manifest))


def _jsonable(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    return repr(obj)


class _Stage:
    def __init__(self, manifest: RunManifest, name: str):
        self.manifest, self.name = manifest, name

    def __enter__(self):
        self.t0 = time.perf_counter()

    def __exit__(self, *exc):
        self.manifest.stages[self.name] = round(time.perf_counter() - self.t0, 6)
        return False


# --------------------------------------------------------------------------
# scenarios
# --------------------------------------------------------------------------

def _green(cfg: RunConfig, out: Outputs, man: RunManifest):
    src = _points(cfg.get("green", "source", "0,0,0"))[0]
    spacing = cfg.positive("green", "spacing", 1 / 32)
    with _Stage(man, "solve"):
        gf = solve_green(cfg.h, src, cfg.domain, spacing=spacing, method=cfg.get("green", "method", "auto"),
                         split=cfg.get("green", "split"), rtol=cfg.number("tolerances", "rtol", 1e-10))
    with _Stage(man, "expansion"):
        exp = gf.exact_expansion() or extract_expansion(gf, cfg.h, fit_tol=cfg.number("tolerances", "fit_tol", 1e-2))
    man.results["expansion"] = json.loads(exp.to_json())
    out.text("expansion.json", exp.to_json() + "\n")
    reach = float(cfg.domain.boundary_radius(np.array([[1.0, 0.0, 0.0]]))[0])
    t = np.linspace(-reach, reach, 401)[1:-1]
    line = np.column_stack([t, np.zeros_like(t), np.zeros_like(t)]) + np.array([0.0, src[1], src[2]])
    keep = np.linalg.norm(line - src, axis=1) > 2 * spacing
    keep &= cfg.domain.contains(line)
    vals = gf(line[keep])
    out.table("green_line.csv", ["x", "y", "z", "G"], ([*p, v] for p, v in zip(line[keep], vals)))
    pts_text = cfg.get("green", "points")
    if pts_text:
        pts = _points(pts_text)
        weights = _floats(cfg.get("green", "weights", ",".join(["1"] * len(pts))))
        conf = BubbleConfiguration(pts, weights)
        with _Stage(man, "green_pohozaev_sum"):
            fields, exps = [], []
            for p in pts:
                g = solve_green(cfg.h, p, cfg.domain, spacing=spacing)
                fields.append(g)
                exps.append(g.exact_expansion() or extract_expansion(g, cfg.h))
            total = green_pohozaev_sum(conf, exps, fields)
        man.results["green_pohozaev_sum"] = total
        if not total < 0:
            raise AssertionFailure(f"green_pohozaev_sum = {total:.6g} is not negative")


def _load_field(spec: str, cfg: RunConfig):
    if spec == "zero":
        if not cfg.domain.is_unit_ball:
            grid3 = Grid3D(cfg.domain, 1 / 16)
            return ScalarField3D(grid3, np.zeros(grid3.shape))
        grid = RadialGrid.graded(1.0, 2001)
        return ScalarFieldRadial(grid, np.zeros(len(grid)))
    if spec == "radial-solution":
        if not cfg.domain.is_unit_ball:
            raise ConfigError("radial solutions live on the unit ball")
        sol = find_radial_solution(cfg.h)
        if not sol:
            raise SolverError(f"no positive radial solution: {sol.reason}")
        return sol.profile
    path = Path(spec)
    if not path.is_file():
        raise ConfigError(f"field file {path} not found")
    return read_field_csv(path)


def _pohozaev(cfg: RunConfig, out: Outputs, man: RunManifest):
    ids = [s.strip() for s in cfg.get("pohozaev", "identities", "P1,P3,P4").split(",")]
    form = cfg.get("pohozaev", "form", "corrected")
    with _Stage(man, "load"):
        u = _load_field(cfg.get("pohozaev", "field", "zero"), cfg)
    reports = []
    with _Stage(man, "identities"):
        for ident in ids:
            if ident in ("P1", "P2"):
                reports.append(evaluate_identity_P1(u, cfg.h, cfg.domain, boundary_vanishing=ident == "P2", form=form))
            elif ident == "P3":
                reports.append(evaluate_identity_P3(u, cfg.h, cfg.domain, form=form))
            else:
                reports.append(evaluate_identity_P4(u, cfg.h, cfg.domain, form=form))
    out.via("pohozaev.csv", lambda p: write_reports_csv(reports, p))
    man.results["identities"] = {r.identity_id: {"residual": r.identity_residual, **{
        k: v for k, v in r.extras.items() if isinstance(v, (int, float, str, bool))}} for r in reports}


def _radial_solve(cfg: RunConfig, out: Outputs, man: RunManifest):
    nodes = int(cfg.number("radial-solve", "nodes", 10001))
    with _Stage(man, "shoot"):
        res = find_radial_solution(cfg.h, a_min=cfg.positive("radial-solve", "a_min", 1e-2),
                                   a_max=cfg.positive("radial-solve", "a_max", 1e3),
                                   n_probes=int(cfg.number("radial-solve", "n_probes", 200)),
                                   grid=RadialGrid.graded(1.0, nodes))
    out.table("shooting.csv", ["a", "shooting_value", "stayed_positive", "diverged"],
              ([s["a"], s["value"], int(s["stayed_positive"]), int(s["diverged"])] for s in res.sweep))
    if res:
        man.results.update(found=True, a=res.a, endpoint_value=res.endpoint_value, endpoint_slope=res.endpoint_slope)
        out.field("radial_solution.csv", res.profile)
    else:
        man.results.update(found=False, reason=res.reason)


def _synthetic_field(cfg: RunConfig) -> ScalarField3D:
    mu = cfg.positive("extract", "mu", 1e-2)
    centers = _points(cfg.get("extract", "centers", "0.4,0,0; -0.4,0,0"))
    grid = Grid3D(cfg.domain, cfg.positive("extract", "spacing", 1 / 64))
    vals = sum(standard_bubble(grid.points, c, mu) for c in centers)
    return ScalarField3D(grid, np.where(grid.interior, vals, 0.0))


def _extract(cfg: RunConfig, out: Outputs, man: RunManifest):
    spec = cfg.get("extract", "field", "synthetic")
    with _Stage(man, "load"):
        u = _synthetic_field(cfg) if spec == "synthetic" else _load_field(spec, cfg)
    if not isinstance(u, ScalarField3D):
        raise ConfigError("extraction needs a Cartesian field")
    with _Stage(man, "extract"):
        res = extract_concentration_points(u, cfg.domain, cfg.positive("extract", "threshold", 1.0))
    out.text("extraction.json", res.to_json() + "\n")
    out.table("points.csv", ["x", "y", "z", "height"], ([*p, v] for p, v in zip(res.points, res.heights)))
    man.results.update(n_points=len(res.points), separation_ok=res.separation_ok(cfg.domain),
                       covering_margin=res.covering_margin)


def _construct(cfg: RunConfig, out: Outputs, man: RunManifest):
    eps = cfg.eps[0]
    if cfg.mode == "radial":
        with _Stage(man, "build"):
            params = RadialFamilyParams.build(cfg.h, eps)
            grid = family_grid(eps)
            res = radial_residual(params, grid)
        rows = zip(grid.nodes, res.u, RESCALE * res.u, res.h_tilde)
        out.table("family.csv", ["r", "u", "u_rescaled", "h_tilde"], rows)
        man.results.update(mass=params.mass, l3_norm=res.l3_norm, linf_norm=res.linf_norm, min_u=res.min_u)
        return
    with _Stage(man, "balance"):
        params = balance_configuration(cfg.h, cfg.domain, eps, spacing=cfg.number("construct", "spacing", 1 / 32))
    with _Stage(man, "evaluate"):
        x1, x2 = np.array(params.x1), np.array(params.x2)
        t = np.linspace(-1.0, 1.0, 2001)
        axis = (x2 - x1) / np.linalg.norm(x2 - x1)
        reach = float(cfg.domain.boundary_radius(axis[None, :])[0])
        line = np.outer(t * reach * (1 - 1e-9), axis)
        near = np.min([np.linalg.norm(line - x1, axis=1), np.linalg.norm(line - x2, axis=1)], axis=0) > 1e-12
        line = line[near]
        jet = TwoBubbleFamily(params).jet(line)
        res = residual_potential(jet, cfg.h, line)
    out.table("family_line.csv", ["x", "y", "z", "u", "u_rescaled", "h_tilde"],
              ([*p, a, RESCALE * a, b] for p, a, b in zip(line, res.u, res.h_tilde)))
    out.json("configuration.json", params.describe())
    man.results.update(balance_residuals=list(params.balance_residuals()), linf_norm_line=res.linf_norm,
                       min_u=res.min_u)


def _sweep(cfg: RunConfig, out: Outputs, man: RunManifest):
    mode = cfg.mode.replace("-", "_")
    with _Stage(man, "sweep"):
        sw = instability_sweep(mode, cfg.h, cfg.eps, cfg.domain,
                               n_samples=int(cfg.number("sweep", "n_samples", 100_000)), seed=cfg.seed)
    out.via("sweep.csv", sw.write_csv)
    out.text("sweep.json", sw.to_json() + "\n")
    man.results.update(mode=mode, l3_norms=sw.l3_norms, linf_norms=sw.linf_norms, positivity_ok=sw.positivity_ok)
    if not all(sw.positivity_ok):
        raise AssertionFailure("u_eps is not positive for every eps")


SCENARIOS = {"green": _green, "pohozaev": _pohozaev, "radial-solve": _radial_solve, "extract": _extract,
             "construct": _construct, "sweep": _sweep}


def run(cfg: RunConfig) -> tuple[int, RunManifest]:
    man = RunManifest(cfg.echo())
    out = Outputs(cfg.out, man)
    try:
        SCENARIOS[cfg.scenario](cfg, out, man)
    except ConfigError as exc:
        man.status, man.error = EXIT_CONFIG, {"type": "ConfigError", "message": str(exc)}
    except (AssertionFailure, SolverError, ExpansionError, PreconditionError, ConstructionError, PositivityError,
            ConfigurationNotFound, GeometryError, ArithmeticError, np.linalg.LinAlgError, ValueError) as exc:
        man.status = EXIT_NUMERIC
        man.error = {"type": type(exc).__name__, "message": str(exc),
                     "traceback": traceback.format_exc(limit=4)}
    out.finish()
    return man.status, man


# --------------------------------------------------------------------------
# report
# --------------------------------------------------------------------------

def fit_rate(eps, norms):
    """Least-squares ``C`` in ``norm ~ C / ln(1/eps)`` and the per-eps residuals."""
    ell = 1.0 / np.log(1.0 / np.asarray(eps, dtype=float))
    n = np.asarray(norms, dtype=float)
    C = float(ell @ n / (ell @ ell))
    return C, (n - C * ell).tolist()


def report(paths, out_dir: Path) -> tuple[int, str]:
    if not paths:
        raise ConfigError("report needs at least one manifest path")
    columns = []
    for p in paths:
        p = Path(p)
        if not p.is_file():
            raise ConfigError(f"manifest {p} not found")
        man = json.loads(p.read_text(encoding="utf-8"))
        if man.get("config", {}).get("scenario") != "sweep" or "sweep.csv" not in man.get("files", []):
            raise ConfigError(f"{p}: only sweep manifests can be reported")
        data = np.loadtxt(p.parent / "sweep.csv", delimiter=",", skiprows=1, ndmin=2)
        mode = man["results"].get("mode", "radial")
        key = 1 if mode == "radial" else 2  # L^3 for radial, sampled sup for two-bubble
        C, resid = fit_rate(data[:, 0], data[:, key])
        columns.append({"label": f"{p.parent.name}:{mode}", "eps": data[:, 0].tolist(),
                        "norm": data[:, key].tolist(), "C": C, "fit_residual": resid,
                        "norm_kind": "l3" if key == 1 else "linf_sampled"})
    all_eps = sorted({e for c in columns for e in c["eps"]}, reverse=True)
    header = ["eps"]
    for c in columns:
        header += [f"{c['label']}:{c['norm_kind']}", f"{c['label']}:fit_residual"]
    rows = []
    for e in all_eps:
        row = [e]
        for c in columns:
            if e in c["eps"]:
                k = c["eps"].index(e)
                row += [c["norm"][k], c["fit_residual"][k]]
            else:
                row += ["", ""]
        rows.append(row)
    man = RunManifest({"scenario": "report", "inputs": [str(p) for p in paths]})
    out = Outputs(out_dir, man)
    out.table("report.csv", header, rows)
    lines = [f"{'eps':>12}" + "".join(f"{c['label'][:22]:>24}" for c in columns)]
    for e in all_eps:
        cells = []
        for c in columns:
            cells.append(f"{c['norm'][c['eps'].index(e)]:>24.6g}" if e in c["eps"] else " " * 24)
        lines.append(f"{e:>12.4g}" + "".join(cells))
    lines.append(f"{'C':>12}" + "".join(f"{c['C']:>24.6g}" for c in columns))
    text = "\n".join(lines) + "\n"
    out.text("report.txt", text)
    man.results = {c["label"]: {"C": c["C"], "fit_residual": c["fit_residual"]} for c in columns}
    out.finish()
    return EXIT_OK, text


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pohozaev-lab", description="Critical-exponent elliptic toolkit.")
    p.add_argument("verb", choices=VERBS)
    p.add_argument("manifests", nargs="*", help="manifest paths (report only)")
    p.add_argument("--config", help="INI configuration file")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--eps", help="comma-separated eps list")
    p.add_argument("--mode", choices=("radial", "two-bubble"))
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.verb == "report":
            status, text = report(args.manifests, Path(args.out or "report"))
            sys.stdout.write(text)
            return status
        if args.manifests:
            raise ConfigError("positional arguments are only accepted by report")
        cfg = load_config(args.verb, args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        if args.verb != "report" and args.out:
            man = RunManifest({"scenario": args.verb}, status=EXIT_CONFIG,
                              error={"type": "ConfigError", "message": str(exc)})
            Outputs(Path(args.out), man).finish()
        return EXIT_CONFIG
    status, man = run(cfg)
    summary = {"status": status, "out": str(cfg.out), "results": man.results}
    if man.error:
        summary["error"] = man.error["message"]
        print(f"{man.error['type']}: {man.error['message']}", file=sys.stderr)
    print(json.dumps(summary, default=_jsonable, sort_keys=True))
    return status


if __name__ == "__main__":
    raise SystemExit(main())
