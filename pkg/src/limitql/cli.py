"""Command-line front end.

``limitql run`` drives the adaptive loop on a built-in benchmark or an
inline domain, ``limitql export`` converts a mesh JSON file to VTK and
``limitql solve-conic`` solves a conic program stored as JSON.

Exit codes: 0 success, 2 invalid configuration or arguments, 3 solver
failure (partial artifacts are kept).
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys

import jsonschema
import numpy as np

from . import __version__, adapt, bench
from . import io as lio
from . import problem as lp
from . import socp
from .mesh import DomainSpec, MeshError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3

LOG_LEVELS = {"quiet": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}
BENCHMARKS = {"footing": bench.footing, "slope": bench.slope, "two_holes": bench.two_holes}

_vec2 = {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2}
_vec2_opt = {"type": "array", "items": {"type": ["number", "null"]}, "minItems": 2, "maxItems": 2}

RUN_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "benchmark": {
            "type": "object",
            "additionalProperties": False,
            "required": ["name"],
            "properties": {
                "name": {"enum": sorted(BENCHMARKS)},
                "phi_degrees": {"type": "number"},
                "options": {"type": "object"},
            },
        },
        "domain": {
            "type": "object",
            "additionalProperties": False,
            "required": ["nodes", "quads", "boundary"],
            "properties": {
                "nodes": {"type": "array", "items": _vec2, "minItems": 3},
                "quads": {"type": "array", "minItems": 1,
                          "items": {"type": "array", "items": {"type": "integer", "minimum": 0},
                                    "minItems": 4, "maxItems": 4}},
                "boundary": {"type": "object", "additionalProperties": {
                    "type": "array", "items": {"type": "array", "items": {"type": "integer"},
                                               "minItems": 2, "maxItems": 2}}},
                "circles": {"type": "object", "additionalProperties": {
                    "type": "object", "additionalProperties": False, "required": ["center", "radius"],
                    "properties": {"center": _vec2, "radius": {"type": "number"}}}},
                "tractions": {"type": "object", "additionalProperties": _vec2},
                "body_force": _vec2,
                "dirichlet": {"type": "object", "additionalProperties": _vec2_opt},
            },
        },
        "material": {
            "oneOf": [
                {"type": "object", "additionalProperties": False, "required": ["c"],
                 "properties": {"c": {"type": "number"}, "phi_degrees": {"type": "number"}}},
                {"type": "object", "additionalProperties": False, "required": ["sigma_y"],
                 "properties": {"sigma_y": {"type": "number"}}},
            ]
        },
        "theta": {"type": "number"},
        "n_iter": {"type": "integer"},
        "strategy": {"enum": ["adaptive", "uniform"]},
        "early_stop": {"type": ["number", "null"]},
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "feas_tol": {"type": "number"},
                "gap_tol": {"type": "number"},
                "max_iter": {"type": "integer"},
            },
        },
        "output_dir": {"type": "string"},
        "export": {
            "type": "object",
            "additionalProperties": False,
            "properties": {k: {"type": "boolean"} for k in ("mesh_json", "vtk", "csv", "dissipation")},
        },
    },
}

DEFAULTS = {
    "theta": adapt.DEFAULT_THETA,
    "n_iter": 5,
    "strategy": "adaptive",
    "early_stop": None,
    "solver": {},
    "output_dir": "limitql-out",
    "export": {"mesh_json": True, "vtk": True, "csv": True, "dissipation": True},
}

log = logging.getLogger("limitql")


class ConfigError(ValueError):
    pass


def configure_logging():
    name = os.environ.get("LIMITQL_LOG", "info").strip().lower()
    level = LOG_LEVELS.get(name)
    logging.basicConfig(level=level or logging.INFO, format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr, force=True)
    if level is None:
        log.warning("LIMITQL_LOG=%r is not one of %s; using info", name, sorted(LOG_LEVELS))
    return level or logging.INFO


def load_config(path):
    """Parse a JSON config file, reporting syntax errors with line and column."""
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc


def validate_config(cfg):
    """Schema and range checks; returns the config merged with defaults."""
    validator = jsonschema.Draft202012Validator(RUN_SCHEMA)
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        lines = []
        for err in errors:
            field = "/".join(str(p) for p in err.absolute_path) or "<root>"
            lines.append(f"{field}: {err.message}")
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(lines))
    out = {**DEFAULTS, **cfg}
    out["export"] = {**DEFAULTS["export"], **cfg.get("export", {})}
    if ("benchmark" in out) == ("domain" in out):
        raise ConfigError("exactly one of 'benchmark' or 'domain' must be given")
    if "domain" in out and "material" not in out:
        raise ConfigError("material: required for an inline domain")
    theta = out["theta"]
    if not (isinstance(theta, (int, float)) and 0.0 < theta < 1.0):
        raise ConfigError(f"theta: theta must be in (0,1), got {theta}")
    if out["n_iter"] < 1:
        raise ConfigError(f"n_iter: must be at least 1, got {out['n_iter']}")
    if out["early_stop"] is not None and not out["early_stop"] > 0.0:
        raise ConfigError("early_stop: must be positive")
    for key in ("feas_tol", "gap_tol"):
        v = out["solver"].get(key)
        if v is not None and not (0.0 < v < 1.0):
            raise ConfigError(f"solver/{key}: must be in (0,1), got {v}")
    if out["solver"].get("max_iter", 1) < 1:
        raise ConfigError("solver/max_iter: must be at least 1")
    mat = out.get("material")
    if mat is not None:
        if "c" in mat and not mat["c"] > 0.0:
            raise ConfigError("material/c: cohesion must be positive")
        if not 0.0 <= mat.get("phi_degrees", 0.0) < 90.0:
            raise ConfigError("material/phi_degrees: must be in [0, 90)")
        if "sigma_y" in mat and not mat["sigma_y"] > 0.0:
            raise ConfigError("material/sigma_y: must be positive")
    return out


def _material(mat):
    if "sigma_y" in mat:
        return lp.MaterialModel.von_mises(mat["sigma_y"])
    return lp.MaterialModel.mohr_coulomb(mat["c"], mat.get("phi_degrees", 0.0))


def build_benchmark(cfg):
    """Turn a validated config into a :class:`bench.Benchmark`."""
    if "benchmark" in cfg:
        spec = cfg["benchmark"]
        kwargs = dict(spec.get("options", {}))
        if "phi_degrees" in spec:
            kwargs["phi_degrees"] = spec["phi_degrees"]
        if "material" in cfg and "c" in cfg["material"]:
            kwargs.setdefault("phi_degrees", cfg["material"].get("phi_degrees", 0.0))
            kwargs["c"] = cfg["material"]["c"]
        try:
            b = BENCHMARKS[spec["name"]](**kwargs)
        except TypeError as exc:
            raise ConfigError(f"benchmark/options: {exc}") from exc
        if "material" in cfg and "sigma_y" in cfg["material"]:
            b.material = _material(cfg["material"])
        return b
    d = cfg["domain"]
    from .mesh import Circle
    domain = DomainSpec(np.asarray(d["nodes"], dtype=float), np.asarray(d["quads"], dtype=int),
                        {k: [tuple(p) for p in v] for k, v in d["boundary"].items()},
                        snap={k: Circle(tuple(v["center"]), v["radius"]) for k, v in d.get("circles", {}).items()})
    load = lp.LoadCase(tractions={k: tuple(v) for k, v in d.get("tractions", {}).items()},
                       body_force=None if d.get("body_force") is None else tuple(d["body_force"]),
                       dirichlet={k: tuple(v) for k, v in d.get("dirichlet", {}).items()})
    return bench.Benchmark(name="inline", domain=domain, material=_material(cfg["material"]), load=load)


def _summary(b, run, cfg):
    final = run.final
    alpha = final.alpha_plus if final else None
    refs = [r.to_dict() for r in b.references]
    primary = b.primary_reference
    rel = primary.relative_error(alpha) if (primary is not None and final) else None
    return {
        "benchmark": b.name,
        "notes": b.notes,
        "status": run.status,
        "alpha_plus": alpha,
        "iterations": len(run.records),
        "final_N_var": final.n_var if final else None,
        "alpha_history": [r.alpha_plus for r in run.records],
        "N_var_history": [r.n_var for r in run.records],
        "references": refs,
        "relative_error_vs_reference": None if rel is None or math.isnan(rel) else rel,
        "theta": cfg["theta"],
        "strategy": cfg["strategy"],
        "solver_message": run.failure.message if run.failure is not None else "",
        "version": __version__,
    }


def execute_run(cfg):
    """Run a validated configuration; returns ``(exit_code, summary)``."""
    try:
        b = build_benchmark(cfg)
    except (MeshError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    out = cfg["output_dir"]
    os.makedirs(out, exist_ok=True)
    exp = cfg["export"]
    opts = socp.SolveOptions(**cfg["solver"])

    def on_record(rec):
        tag = f"iter_{rec.iteration:03d}"
        if exp["mesh_json"]:
            lio.write_mesh_json(rec.mesh, os.path.join(out, f"mesh_{tag}.json"))
        if exp["vtk"]:
            lio.write_mesh_vtk(rec.mesh, os.path.join(out, f"mesh_{tag}.vtk"),
                               {"indicator": rec.element_theta})

    try:
        run = adapt.adaptive_loop(b, cfg["n_iter"], theta=cfg["theta"], solver_opts=opts,
                                  strategy=cfg["strategy"], early_stop=cfg["early_stop"],
                                  keep_meshes=False, callback=on_record)
    except (MeshError, lp.ZeroWorkError) as exc:
        raise ConfigError(str(exc)) from exc
    if exp["csv"]:
        with lio.atomic_write(os.path.join(out, "iterations.csv")) as fh:
            adapt.write_csv(run.records, fh)
    final = run.final
    if exp["dissipation"] and final is not None:
        lio.write_dissipation_vtk(final.mesh, final.result.dissipation, os.path.join(out, "dissipation.vtk"))
    summary = _summary(b, run, cfg)
    lio.write_json(summary, os.path.join(out, "summary.json"))
    if not run.ok:
        log.error("solver failed at iteration %d: %s", len(run.records) + 1, run.status)
        return EXIT_SOLVER, summary
    log.info("alpha+ = %.6f after %d iterations (N_var %d)", summary["alpha_plus"],
             summary["iterations"], summary["final_N_var"])
    return EXIT_OK, summary


def cmd_run(args):
    cfg = load_config(args.config) if args.config else {}
    if not isinstance(cfg, dict):
        raise ConfigError("configuration must be a JSON object")
    if args.benchmark is not None:
        cfg.pop("domain", None)
        cfg["benchmark"] = {**cfg.get("benchmark", {}), "name": args.benchmark}
    if args.phi is not None:
        if "benchmark" in cfg:
            cfg["benchmark"]["phi_degrees"] = args.phi
        else:
            cfg.setdefault("material", {"c": 1.0})["phi_degrees"] = args.phi
    for flag, key in ((args.iters, "n_iter"), (args.theta, "theta"), (args.out, "output_dir")):
        if flag is not None:
            cfg[key] = flag
    if args.tol is not None:
        cfg.setdefault("solver", {}).update(feas_tol=args.tol, gap_tol=args.tol)
    cfg = validate_config(cfg)
    code, summary = execute_run(cfg)
    print(json.dumps({k: summary[k] for k in ("status", "alpha_plus", "iterations", "final_N_var",
                                               "relative_error_vs_reference")}))
    return code


def cmd_export(args):
    try:
        mesh = lio.read_mesh_json(args.mesh)
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"{args.mesh}: {exc}") from exc
    lio.write_mesh_vtk(mesh, args.vtk)
    log.info("wrote %d polygons to %s", mesh.n_elements, args.vtk)
    return EXIT_OK


def cmd_solve_conic(args):
    try:
        prog = lio.read_program_json(args.input)
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"{args.input}: {exc}") from exc
    opts = socp.SolveOptions(verbose=logging.getLogger().level <= logging.DEBUG)
    if args.tol is not None:
        opts.feas_tol = opts.gap_tol = args.tol
    rep = socp.solve(prog, opts)
    out = {"status": rep.status, "primal_objective": rep.primal_objective,
           "dual_objective": rep.dual_objective, "iterations": rep.iterations,
           "rel_gap": rep.rel_gap, "message": rep.message}
    if args.out:
        lio.write_json({**out, "x": rep.x, "y": rep.y}, args.out)
    print(json.dumps(out, default=lio._json_default))
    failed = rep.status in (socp.MAX_ITER, socp.NUMERICAL)
    return EXIT_SOLVER if failed else EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="limitql", description="Adaptive kinematic limit analysis")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run the adaptive loop")
    r.add_argument("--config", help="JSON run configuration")
    r.add_argument("--benchmark", choices=sorted(BENCHMARKS))
    r.add_argument("--phi", type=float, help="friction angle in degrees")
    r.add_argument("--iters", type=int, help="number of solves")
    r.add_argument("--theta", type=float, help="marking fraction in (0,1)")
    r.add_argument("--tol", type=float, help="solver feasibility and gap tolerance")
    r.add_argument("--out", help="output directory")
    r.set_defaults(func=cmd_run)

    e = sub.add_parser("export", help="convert a mesh JSON file to legacy VTK")
    e.add_argument("--mesh", required=True)
    e.add_argument("--vtk", required=True)
    e.set_defaults(func=cmd_export)

    s = sub.add_parser("solve-conic", help="solve a conic program stored as JSON")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", help="write the solution vectors here")
    s.add_argument("--tol", type=float)
    s.set_defaults(func=cmd_solve_conic)
    return p


def main(argv=None):
    configure_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"limitql: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
