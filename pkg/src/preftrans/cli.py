"""Deterministic command-line front end.

Every output file starts with a header recording the tool version, a hash
of the resolved configuration and the RNG seed; identical config and seed
produce byte-identical outputs. Exit codes: 0 success, 1 error, 2
validation failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .cost import CostParams
from .errors import PrefTransError
from .mapping import build_d_gamma, domain_bounds, forward_batch, inverse_batch
from .mtw import GridSpec, csc_value, f11_profile, mtw_scan
from .optics import ReflectorSurface, SceneConfig, export_mesh, path_length, recover_r1, recover_r2, to_optics_gauge
from .sphere import random_tangent, random_unit, tangent_basis
from .transport import (
    DiscreteMeasure,
    Potentials,
    TransportPlan,
    cost_matrix,
    generalized_solution_check,
    measure_from_csv,
    measure_from_json_dict,
    measure_to_json_dict,
    plan_from_csv,
    plan_to_csv,
    solve_lp,
    solve_sinkhorn,
    support_ball_check,
)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_VALIDATION = 2


@dataclass
class RunConfig:
    """Resolved run settings; hashed into every output header."""

    L: float = 2.0
    l: float = 1.0
    e_hat: list = field(default_factory=lambda: [0.0, 0.0, 1.0])
    grid_n: int = 64
    seed: int = 0
    samples: int = 1000
    tol: float = 1e-9
    out_dir: str = "."

    def params(self) -> CostParams:
        return CostParams(L=self.L, l=self.l, e_hat=np.asarray(self.e_hat, float))

    def as_dict(self) -> dict:
        return {
            "L": self.L, "l": self.l, "e_hat": list(self.e_hat),
            "grid_n": self.grid_n, "seed": self.seed,
            "samples": self.samples, "tol": self.tol,
        }

    def hash(self) -> str:
        text = json.dumps(self.as_dict(), sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()[:12]


def _header_line(cfg: RunConfig) -> str:
    return f"# preftrans {__version__} config={cfg.hash()} seed={cfg.seed}"


def _header_dict(cfg: RunConfig) -> dict:
    return {"tool": f"preftrans {__version__}", "config_hash": cfg.hash(), "seed": cfg.seed}


def _write_json(path: Path, cfg: RunConfig, payload: dict) -> None:
    doc = {"header": _header_dict(cfg)}
    doc.update(payload)
    path.write_text(json.dumps(doc, indent=2, sort_keys=False) + "\n")


def _write_csv(path: Path, cfg: RunConfig, columns, rows) -> None:
    lines = [_header_line(cfg), ",".join(columns)]
    for row in rows:
        lines.append(",".join(repr(float(v)) if isinstance(v, (float, np.floating)) else str(v) for v in row))
    path.write_text("\n".join(lines) + "\n")


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise PrefTransError(
            f"config parse error in {path}: line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from exc


def _config_from_args(args) -> RunConfig:
    raw = _load_config(getattr(args, "config", None))
    known = {f: raw[f] for f in raw if f in RunConfig.__dataclass_fields__}
    unknown = set(raw) - set(known)
    if unknown:
        raise PrefTransError(f"config fields not recognized: {sorted(unknown)}")
    cfg = RunConfig(**known)
    for name in ("L", "l", "grid_n", "seed", "samples", "tol", "out_dir"):
        v = getattr(args, name.replace("-", "_"), None)
        if v is not None:
            setattr(cfg, name, v)
    if getattr(args, "a", None) is not None:
        cfg.L, cfg.l = 1.0, float(args.a)
    if cfg.tol <= 0:
        raise PrefTransError("tolerances must be positive")
    return cfg


def _out(cfg: RunConfig, name: str) -> Path:
    d = Path(cfg.out_dir)
    d.mkdir(parents=True, exist_ok=True)
    return d / name


def cmd_domain_bounds(args) -> int:
    cfg = _config_from_args(args)
    b = domain_bounds(cfg.params(), grid_n=cfg.grid_n)
    _write_json(_out(cfg, "domain_bounds.json"), cfg, {"domain_bounds": b.to_json_dict()})
    if args.d_gamma is not None:
        table = build_d_gamma(cfg.params(), args.d_gamma, grid_n=cfg.grid_n)
        _write_csv(_out(cfg, "d_gamma.csv"), cfg,
                   ("x_theta", "x_phi", "phat_angle", "radius_rad"), table.rows())
    return EXIT_OK


def cmd_map_roundtrip(args) -> int:
    cfg = _config_from_args(args)
    params = cfg.params()
    b = domain_bounds(params, grid_n=cfg.grid_n)
    rng = np.random.default_rng(cfg.seed)
    X = random_unit(rng, cfg.samples)
    P = np.stack([random_tangent(x, rng, scale=0.9 * b.p_star) for x in X])
    Y = forward_batch(params, X, P)
    P_back = inverse_batch(params, X, Y)
    err = np.linalg.norm(P_back - P, axis=1)
    rows = [(i, float(np.linalg.norm(P[i])), float(err[i])) for i in range(cfg.samples)]
    _write_csv(_out(cfg, "map_roundtrip.csv"), cfg, ("i", "p_norm", "roundtrip_err"), rows)
    if float(err.max()) > cfg.tol:
        print(f"roundtrip max error {err.max():.3e} exceeds tol {cfg.tol:.1e}", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


def cmd_mtw_report(args) -> int:
    cfg = _config_from_args(args)
    params = cfg.params()
    b = domain_bounds(params, grid_n=cfg.grid_n)
    gamma = args.gamma if args.gamma is not None else args.gamma_frac * b.p_star
    spec = GridSpec(n_x=args.nx, n_dir=args.ndir, n_mag=args.nmag, n_pairs=args.npairs)
    rep = mtw_scan(params, gamma, spec)
    _write_json(_out(cfg, "mtw_report.json"), cfg, {"mtw": rep.to_json_dict()})
    return EXIT_OK


def cmd_f11_profile(args) -> int:
    cfg = _config_from_args(args)
    a = args.a if args.a is not None else cfg.l / cfg.L
    pn, values = f11_profile(a, args.n)
    rows = list(zip(map(float, pn), map(float, values)))
    _write_csv(_out(cfg, f"f11_profile_a{a!r}.csv"), cfg, ("p_norm", "f11"), rows)
    return EXIT_OK


def cmd_csc_scan(args) -> int:
    cfg = _config_from_args(args)
    params = cfg.params()
    b = domain_bounds(params, grid_n=cfg.grid_n)
    gamma = args.gamma if args.gamma is not None else args.gamma_frac * b.p_star
    e = params.e_hat
    e_perp = tangent_basis(e)[0]
    rows = []
    for th in np.linspace(0.0, np.pi, args.nx):
        x = np.cos(th) * e + np.sin(th) * e_perp
        x /= np.linalg.norm(x)
        t1, t2 = tangent_basis(x)
        for psi in np.linspace(0.0, 2.0 * np.pi, args.ndir, endpoint=False):
            d = np.cos(psi) * t1 + np.sin(psi) * t2
            for pn in np.linspace(gamma / args.nmag, gamma, args.nmag):
                for ang in np.pi * (np.arange(args.npairs) + 0.5) / args.npairs:
                    xiv = np.cos(ang) * t1 + np.sin(ang) * t2
                    etav = -np.sin(ang) * t1 + np.cos(ang) * t2
                    val = csc_value(x, pn * d, xiv, etav, params)
                    rows.append((float(th), float(psi), float(pn), float(ang), float(val)))
    _write_csv(_out(cfg, "csc_scan.csv"), cfg,
               ("x_theta", "phat_angle", "p_norm", "pair_angle", "value"), rows)
    return EXIT_OK


def _read_measure(path: str) -> DiscreteMeasure:
    text = Path(path).read_text()
    if path.endswith(".json"):
        return measure_from_json_dict(json.loads(text))
    return measure_from_csv(text)


def cmd_solve(args) -> int:
    cfg = _config_from_args(args)
    params = cfg.params()
    mu = _read_measure(args.source)
    nu = _read_measure(args.target)
    if args.center is not None:
        x0 = np.asarray([float(c) for c in args.center.split(",")], float)
        x0 /= np.linalg.norm(x0)
    else:
        x0 = params.e_hat
    b = domain_bounds(params, grid_n=cfg.grid_n)
    if not support_ball_check(mu, nu, x0, params, bounds=b):
        if not args.force:
            print(
                "support check failed: atoms outside the geodesic ball of radius "
                f"arccos(xi_star)/2 = {b.support_ball_radius:.6f} about the center; "
                "pass --force to solve anyway",
                file=sys.stderr,
            )
            return EXIT_VALIDATION
        warnings.warn("solving outside the support ball (--force)")
    C = cost_matrix(params, mu, nu)
    if args.method == "lp":
        plan, pots = solve_lp(mu, nu, params, cost_mat=C)
        info = {"method": "lp"}
    else:
        plan, pots, sink_info = solve_sinkhorn(
            mu, nu, params, epsilon=args.epsilon, max_iter=args.max_iter,
            tol=args.tol if args.tol is not None else cfg.tol, cost_mat=C,
        )
        info = {"method": "sinkhorn", **sink_info}
    plan_path = _out(cfg, "plan.csv")
    plan_path.write_text(plan_to_csv(plan, header=_header_line(cfg)))
    obj = plan.objective(C)
    _write_json(_out(cfg, "solved.json"), cfg, {
        "params": params.to_json_dict(),
        "center": [float(c) for c in x0],
        "source": measure_to_json_dict(mu),
        "target": measure_to_json_dict(nu),
        "potentials": {"u": pots.u.tolist(), "v": pots.v.tolist()},
        "objective": obj,
        "solver": info,
        "plan_file": plan_path.name,
    })
    return EXIT_OK


def _load_solved(path: str):
    doc = json.loads(Path(path).read_text())
    params = CostParams.from_json_dict(doc["params"])
    mu = measure_from_json_dict(doc["source"])
    nu = measure_from_json_dict(doc["target"])
    pots = Potentials(u=np.asarray(doc["potentials"]["u"], float),
                      v=np.asarray(doc["potentials"]["v"], float))
    plan_path = Path(path).parent / doc["plan_file"]
    plan = plan_from_csv(plan_path.read_text(), mu, nu)
    return doc, params, mu, nu, pots, plan


def cmd_reflectors(args) -> int:
    cfg = _config_from_args(args)
    _, params, mu, nu, pots, plan = _load_solved(args.instance)
    scene = SceneConfig(params)
    u_opt, v_opt = to_optics_gauge(pots.u, pots.v, params)
    r1 = recover_r1(u_opt, mu.points, scene)
    r2 = recover_r2(v_opt, nu.points, scene)
    export_mesh(r1, _out(cfg, "r1.obj"))
    export_mesh(r2, _out(cfg, "r2.obj"))
    m = plan.entries
    rows = []
    for i, j, w in zip(m.row, m.col, m.data):
        if w <= 0:
            continue
        pl = path_length(mu.points[i], nu.points[j], r1, r2, scene)
        rows.append((int(i), int(j), float(pl)))
    rows.sort()
    _write_csv(_out(cfg, "path_validation.csv"), cfg, ("x_idx", "y_idx", "path_length"), rows)
    return EXIT_OK


def cmd_validate(args) -> int:
    cfg = _config_from_args(args)
    _, params, mu, nu, pots, plan = _load_solved(args.instance)
    C = cost_matrix(params, mu, nu)
    row_res, col_res = plan.marginal_residuals()
    slack = C - pots.u[:, None] - pots.v[None, :]
    feas = float(slack.min())
    rep = generalized_solution_check(plan, pots, params, tol=args.contact_tol, cost_mat=C)
    dual_obj = float(pots.u @ mu.weights + pots.v @ nu.weights)
    gap = abs(plan.objective(C) - dual_obj)
    checks = {
        "marginal_row_residual": float(row_res),
        "marginal_col_residual": float(col_res),
        "dual_feasibility_min_slack": feas,
        "duality_gap": gap,
        "contact_violations": len(rep.support_violations),
        "pushforward_residual": rep.pushforward_residual,
    }
    ok = (row_res < 1e-9 and col_res < 1e-9 and feas > -1e-9
          and gap < 1e-8 and rep.ok)
    scene_ok = True
    if args.paths:
        scene = SceneConfig(params)
        u_opt, v_opt = to_optics_gauge(pots.u, pots.v, params)
        r1 = recover_r1(u_opt, mu.points, scene)
        r2 = recover_r2(v_opt, nu.points, scene)
        m = plan.entries
        lengths = [path_length(mu.points[i], nu.points[j], r1, r2, scene)
                   for i, j, w in zip(m.row, m.col, m.data) if w > 0]
        lengths = np.asarray(lengths)
        checks["path_mean_rel_err"] = float(abs(lengths.mean() - scene.path_constant) / scene.path_constant)
        checks["path_std_rel"] = float(lengths.std() / scene.path_constant)
        scene_ok = checks["path_mean_rel_err"] < 1e-5 and checks["path_std_rel"] < 1e-5
    checks["ok"] = bool(ok and scene_ok)
    _write_json(_out(cfg, "validation.json"), cfg, {"checks": checks})
    return EXIT_OK if checks["ok"] else EXIT_VALIDATION


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="preftrans", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--out-dir", dest="out_dir", help="output directory")
        p.add_argument("--seed", type=int)
        p.add_argument("--grid-n", dest="grid_n", type=int)
        p.add_argument("--L", type=float)
        p.add_argument("--l", type=float)
        p.add_argument("--a", type=float, help="shorthand for L=1, l=a")

    p = sub.add_parser("domain-bounds", help="emit the p/x.y bound table as JSON")
    common(p)
    p.add_argument("--d-gamma", type=float, default=None, help="also emit the reach table at this gamma")
    p.set_defaults(fn=cmd_domain_bounds)

    p = sub.add_parser("map-roundtrip", help="random forward/inverse roundtrip residuals")
    common(p)
    p.add_argument("--samples", type=int)
    p.add_argument("--tol", type=float)
    p.set_defaults(fn=cmd_map_roundtrip)

    p = sub.add_parser("mtw-report", help="A1/A2/Aw scan report as JSON")
    common(p)
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--gamma-frac", type=float, default=0.5)
    p.add_argument("--nx", type=int, default=16)
    p.add_argument("--ndir", type=int, default=16)
    p.add_argument("--nmag", type=int, default=16)
    p.add_argument("--npairs", type=int, default=4)
    p.set_defaults(fn=cmd_mtw_report)

    p = sub.add_parser("f11-profile", help="closed-form f11 curve at x.e = -1 as CSV")
    common(p)
    p.add_argument("--n", type=int, default=100)
    p.set_defaults(fn=cmd_f11_profile)

    p = sub.add_parser("csc-scan", help="curvature contraction samples as CSV")
    common(p)
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--gamma-frac", type=float, default=0.5)
    p.add_argument("--nx", type=int, default=8)
    p.add_argument("--ndir", type=int, default=4)
    p.add_argument("--nmag", type=int, default=4)
    p.add_argument("--npairs", type=int, default=2)
    p.set_defaults(fn=cmd_csc_scan)

    p = sub.add_parser("solve", help="solve a desk-scale transport instance")
    common(p)
    p.add_argument("--source", required=True, help="source measure CSV/JSON")
    p.add_argument("--target", required=True, help="target measure CSV/JSON")
    p.add_argument("--method", choices=("lp", "sinkhorn"), default="lp")
    p.add_argument("--epsilon", type=float, default=1e-3)
    p.add_argument("--max-iter", dest="max_iter", type=int, default=20000)
    p.add_argument("--tol", type=float)
    p.add_argument("--center", help="ball center as 'x,y,z' (default e_hat)")
    p.add_argument("--force", action="store_true", help="solve even outside the support ball")
    p.set_defaults(fn=cmd_solve)

    p = sub.add_parser("reflectors", help="recover reflector meshes from a solved instance")
    common(p)
    p.add_argument("--instance", required=True, help="solved.json from the solve subcommand")
    p.set_defaults(fn=cmd_reflectors)

    p = sub.add_parser("validate", help="re-check a solved instance")
    common(p)
    p.add_argument("--instance", required=True)
    p.add_argument("--contact-tol", dest="contact_tol", type=float, default=1e-7)
    p.add_argument("--paths", action="store_true", help="also validate path-length constancy")
    p.set_defaults(fn=cmd_validate)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        # argparse uses exit code 2 for usage errors; the contract reserves
        # 2 for validation failures, so usage problems map to 1.
        return EXIT_OK if exc.code in (0, None) else EXIT_ERROR
    try:
        return args.fn(args)
    except PrefTransError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
