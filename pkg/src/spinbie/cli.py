"""Command line front end.

Subcommands ``selftest``, ``solve``, ``verify``, ``resonance-scan`` and
``compare-classical``; exit codes 0 (ok), 1 (selftest failure), 2 (bad
configuration), 3 (solve or evaluation failure), 4 (tolerance not met).
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import warnings
from contextlib import nullcontext
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import geometry as geo
from . import operators as op
from . import scattering as sc
from .kernels import fibonacci_sphere
from .selftest import corrupted_table, run_selftest
from .solve import ConvergenceError, SingularMatrixError

log = logging.getLogger("spinbie")

EXIT_OK, EXIT_SELFTEST, EXIT_CONFIG, EXIT_SOLVE, EXIT_TOLERANCE = 0, 1, 2, 3, 4

MV_COLUMNS = ["alpha", "a1", "a2", "a3", "b1", "b2", "b3", "beta"]

BLOCK_OPERATORS = {
    ("u1", "u1"): "Dl",
    ("v", "u1"): "Dl_prime",
    ("v", "v"): "Mdip",
    ("u2", "u1"): "Dl_doubleprime",
    ("u2", "v"): "M_prime",
    ("u2", "u2"): "-Dl_adjoint",
}


class ConfigError(Exception):
    pass


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------


def load_schema() -> dict:
    return json.loads(resources.files("spinbie").joinpath("config.schema.json").read_text())


def load_config(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from exc
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: malformed JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    validator = jsonschema.Draft202012Validator(load_schema())
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        where = "/".join(str(p) for p in err.absolute_path) or "<root>"
        raise ConfigError(f"{path}: invalid config at {where}: {err.message}")
    cfg["_base"] = str(path.resolve().parent)
    return cfg


def parse_complex(v) -> complex:
    if isinstance(v, (int, float)):
        return complex(v)
    if isinstance(v, list):
        return complex(v[0], v[1])
    return complex(v["re"], v.get("im", 0.0))


def _require(cfg: dict, *keys):
    for key in keys:
        if key not in cfg:
            raise ConfigError(f"config is missing required key {key!r} for this command")


def build_surface(cfg: dict) -> geo.QuadratureSurface:
    _require(cfg, "geometry")
    g = cfg["geometry"]
    try:
        if g["type"] == "icosphere":
            mesh = geo.icosphere(g.get("subdivisions", 2), g.get("radius", 1.0), g.get("center", (0.0, 0.0, 0.0)))
        elif g["type"] == "ellipsoid":
            mesh = geo.ellipsoid(g.get("subdivisions", 2), g["semiaxes"], g.get("center", (0.0, 0.0, 0.0)))
        else:
            p = Path(g["path"])
            if not p.is_absolute():
                p = Path(cfg.get("_base", ".")) / p
            mesh = geo.load_obj(p)
        return geo.quadrature_from_mesh(mesh)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"geometry: {exc}") from exc


def build_near(cfg: dict) -> op.NearField:
    q = cfg.get("quadrature", {})
    return op.NearField(
        r_factor=q.get("r_factor", 3.0),
        levels=q.get("levels", 3),
        self_order=q.get("self_order", 8),
        curved=q.get("curved", False),
        density=q.get("density", "linear"),
    )


def build_solver(cfg: dict) -> sc.SolverSettings:
    s = cfg.get("solver", {})
    return sc.SolverSettings(
        method=s.get("method", "direct"),
        tol=s.get("tol", 1e-8),
        restart=s.get("restart", 80),
        max_iters=s.get("max_iters", 2000),
        system=s.get("system", "spin"),
    )


def build_incident(cfg: dict):
    _require(cfg, "incident")
    inc = cfg["incident"]
    if inc["type"] == "plane_wave":
        d = np.asarray(inc["direction"], dtype=float)
        nd = np.linalg.norm(d)
        if nd == 0:
            raise ConfigError("incident: plane-wave direction must be non-zero")
        pol = inc.get("polarization")
        return sc.PlaneWave(tuple(d / nd), None if pol is None else tuple(parse_complex(c) for c in pol))
    if inc["type"] == "point_source":
        return sc.PointSource(tuple(inc["position"]))
    return sc.Dipole(tuple(inc["position"]), tuple(parse_complex(c) for c in inc["moment"]))


def build_problem(cfg: dict, surface=None) -> sc.ScatteringProblem:
    _require(cfg, "kind", "k", "incident")
    surface = surface if surface is not None else build_surface(cfg)
    try:
        return sc.ScatteringProblem(
            cfg["kind"], parse_complex(cfg["k"]), build_incident(cfg), surface, build_solver(cfg), build_near(cfg)
        )
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc


def evaluation_points(cfg: dict) -> np.ndarray:
    ev = cfg.get("evaluation", {"standard_probes": True})
    parts = []
    if ev.get("standard_probes", False):
        parts.append(sc.standard_probes())
    if ev.get("points"):
        parts.append(np.asarray(ev["points"], dtype=float))
    for sph in ev.get("spheres", []):
        parts.append(fibonacci_sphere(sph["count"], sph["radius"], sph.get("center", (0.0, 0.0, 0.0))))
    if not parts:
        raise ConfigError("evaluation: no points requested")
    return np.concatenate(parts)


# --------------------------------------------------------------------------
# output helpers
# --------------------------------------------------------------------------


def fmt(x: float) -> str:
    return "%.17g" % x


def write_csv(path: Path, header: list[str], rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in r])
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(buf.getvalue())


def _complex_cols(names):
    out = []
    for n in names:
        out += [f"re_{n}", f"im_{n}"]
    return out


def _split(values: np.ndarray):
    """Interleave real and imaginary parts of a ``(P, m)`` complex table."""
    v = np.asarray(values, dtype=complex)
    out = np.empty((v.shape[0], 2 * v.shape[1]))
    out[:, 0::2] = v.real
    out[:, 1::2] = v.imag
    return out


def field_table(kind: str, k: complex, pts: np.ndarray, F: np.ndarray):
    extra = sc.decoded_columns(kind, F, k)
    header = ["x", "y", "z"] + _complex_cols(MV_COLUMNS) + _complex_cols(list(extra))
    body = np.hstack([pts, _split(F), _split(np.stack(list(extra.values()), axis=1))])
    return header, [[float(v) for v in row] for row in body]


def _out(args, cfg: dict, key: str, default: str) -> Path:
    name = cfg.get("output", {}).get(key, default)
    p = Path(name)
    return p if p.is_absolute() else Path(args.out_dir) / p


def _dump_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, complex):
        return {"re": o.real, "im": o.imag}
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serialisable: {type(o)}")


def mesh_stats(surface: geo.QuadratureSurface) -> dict:
    m = surface.mesh
    return {
        "triangles": int(len(m.triangles)),
        "vertices": int(len(m.vertices)),
        "area": float(m.area()),
        "volume": float(m.signed_volume()),
        "max_panel_diameter": float(surface.panel_diam.max()),
    }


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_selftest(args) -> int:
    table = corrupted_table() if args.corrupt_structure_table else None
    checks = run_selftest(table)
    failed = [c for c in checks if not c.ok]
    summary = {"passed": len(checks) - len(failed), "failed": len(failed), "checks": [c.as_dict() for c in checks]}
    print(json.dumps(summary, indent=2, default=_json_default))
    if failed:
        for c in failed:
            print(f"selftest failed: {c.name} (error {c.error:.3e} > {c.tol:.1e})", file=sys.stderr)
        return EXIT_SELFTEST
    return EXIT_OK


def cmd_solve(args) -> int:
    cfg = load_config(args.config)
    prob = build_problem(cfg)
    pts = evaluation_points(cfg)
    try:
        pts = sc.check_exterior_points(prob.surface, pts)
    except sc.ExteriorPointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVE
    h, rep = sc.spin_solve(prob)
    F = op.field_eval_RkOmega(prob.surface, prob.k, h, pts)
    header, rows = field_table(prob.kind, prob.k, pts, F)
    write_csv(_out(args, cfg, "fields_csv", "fields.csv"), header, rows)
    report = {
        "kind": prob.kind,
        "k": prob.k,
        "solve": rep.as_dict(),
        "mesh": mesh_stats(prob.surface),
        "boundary_data_normal_part": float(np.abs(
            sc.cl.project_N_minus(sc.build_boundary_data(prob), prob.surface.normals)).max()),
    }
    if cfg.get("evaluation", {}).get("diagnostics", True):
        report["constraint_residuals"] = sc.constraint_residuals(prob, h, pts)
    _dump_json(_out(args, cfg, "report_json", "report.json"), report)
    print(f"solved {prob.kind} problem on {prob.surface.size} panels: residual {rep.residual_norm:.3e}")
    return EXIT_OK


def cmd_verify(args) -> int:
    cfg = load_config(args.config)
    prob = build_problem(cfg)
    inc = prob.incident
    if isinstance(inc, sc.PlaneWave):
        raise ConfigError("verify needs an interior point_source or dipole incident field")
    pts = evaluation_points(cfg)
    try:
        pts = sc.check_exterior_points(prob.surface, pts)
    except sc.ExteriorPointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVE
    threshold = cfg.get("verify", {}).get("threshold", 5e-2)
    rep = sc.verify_interior_source(
        prob.kind, prob.surface, prob.k, inc.position,
        getattr(inc, "moment", None), prob.solver, prob.near, pts,
    )
    computed = sc.decoded_columns(prob.kind, rep.computed, prob.k)
    exact = sc.decoded_columns(prob.kind, rep.exact, prob.k)
    header = ["x", "y", "z", "rel_error"] + _complex_cols(list(computed)) + _complex_cols(["exact_" + c for c in exact])
    body = np.hstack([
        pts, rep.errors[:, None],
        _split(np.stack(list(computed.values()), axis=1)),
        _split(np.stack(list(exact.values()), axis=1)),
    ])
    write_csv(_out(args, cfg, "errors_csv", "errors.csv"), header, [[float(v) for v in r] for r in body])
    summary = {
        "kind": prob.kind, "k": prob.k, "max_error": rep.max_error, "rms_error": rep.rms_error,
        "kind_constraint": float(sc.kind_defect(prob.kind, rep.computed).max()),
        "threshold": threshold, "solve": rep.solve.as_dict(), "mesh": mesh_stats(prob.surface),
    }
    _dump_json(_out(args, cfg, "report_json", "verify.json"), summary)
    if rep.max_error > threshold:
        print(f"tolerance not met: max relative error {rep.max_error:.4e} > threshold {threshold:.1e}", file=sys.stderr)
        return EXIT_TOLERANCE
    print(f"verified {prob.kind}: max relative error {rep.max_error:.4e} (threshold {threshold:.1e})")
    return EXIT_OK


def cmd_resonance_scan(args) -> int:
    cfg = load_config(args.config)
    _require(cfg, "scan")
    try:
        ks = [sc.kn.check_wavenumber(parse_complex(v)) for v in cfg["scan"]["k_values"]]
    except ValueError as exc:
        raise ConfigError(f"scan: {exc}") from exc
    surface = build_surface(cfg)
    rows = sc.resonance_scan(surface, ks, build_near(cfg), cfg["scan"].get("method", "auto"), cfg["scan"].get("tol", 1e-6))
    write_csv(
        _out(args, cfg, "scan_csv", "scan.csv"),
        ["re_k", "im_k", "sigma_min_spin", "sigma_min_rotation"],
        [[float(r["k"].real), float(r["k"].imag), float(r["sigma_min_spin"]), float(r["sigma_min_rotation"])] for r in rows],
    )
    for r in rows:
        print(f"k = {r['k']}: sigma_min spin {r['sigma_min_spin']:.6e}  rotation {r['sigma_min_rotation']:.6e}")
    return EXIT_OK


def compare_classical(surface, k, near) -> dict:
    """Per-block deviations between the compression of ``C_k`` and the classical operators."""
    Ck = op.assemble_Ck(surface, k, near)
    blocks = op.proposition_blocks(Ck)
    ref = op.classical_blocks(op.assemble_classical(surface, k, near))
    total = float(np.sqrt(sum(np.linalg.norm(b) ** 2 for b in blocks.values())))
    out = []
    for row in op.BLOCK_LABELS:
        for col in op.BLOCK_LABELS:
            b = blocks[(row, col)]
            if (row, col) in ref:
                r = ref[(row, col)]
                dev = float(np.linalg.norm(b - r) / np.linalg.norm(r))
                out.append({"row": row, "col": col, "operator": BLOCK_OPERATORS[(row, col)], "relative_deviation": dev})
            else:
                out.append({"row": row, "col": col, "operator": "0", "scaled_norm": float(np.linalg.norm(b) / total)})
    return {
        "blocks": out,
        "max_relative_deviation": max(b["relative_deviation"] for b in out if "relative_deviation" in b),
        "max_zero_block": max(b["scaled_norm"] for b in out if "scaled_norm" in b),
    }


def cmd_compare_classical(args) -> int:
    cfg = load_config(args.config)
    _require(cfg, "k")
    k = parse_complex(cfg["k"])
    surface = build_surface(cfg)
    res = compare_classical(surface, k, build_near(cfg))
    threshold = cfg.get("compare", {}).get("threshold", 5e-2)
    res.update({"k": k, "threshold": threshold, "mesh": mesh_stats(surface)})
    _dump_json(_out(args, cfg, "compare_json", "compare.json"), res)
    print(json.dumps(res, indent=2, sort_keys=True, default=_json_default))
    if max(res["max_relative_deviation"], res["max_zero_block"]) > threshold:
        print("tolerance not met: block deviation above threshold", file=sys.stderr)
        return EXIT_TOLERANCE
    return EXIT_OK


COMMANDS = {
    "selftest": cmd_selftest,
    "solve": cmd_solve,
    "verify": cmd_verify,
    "resonance-scan": cmd_resonance_scan,
    "compare-classical": cmd_compare_classical,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spinbie", description="Spin integral equation solver for Maxwell and Helmholtz scattering.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=name != "selftest", help="JSON run configuration")
        s.add_argument("--threads", type=int, default=0, help="BLAS threads (0 = library default)")
        s.add_argument("--out-dir", default=".", help="directory for output files")
        if name == "selftest":
            s.add_argument("--corrupt-structure-table", action="store_true", help=argparse.SUPPRESS)
    return p


def _thread_limit(n: int):
    if n and n > 0:
        from threadpoolctl import threadpool_limits

        return threadpool_limits(limits=n)
    return nullcontext()


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads < 0:
        print("error: --threads must be >= 0", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    with _thread_limit(args.threads):
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("always", sc.NearBoundaryWarning)
                return COMMANDS[args.command](args)
        except ConfigError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        except (SingularMatrixError, ConvergenceError, FloatingPointError, sc.ExteriorPointError, geo.MeshError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_SOLVE


def main_exit() -> None:
    sys.exit(main())


if __name__ == "__main__":  # pragma: no cover
    main_exit()
