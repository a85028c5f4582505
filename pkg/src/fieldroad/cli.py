"""Command-line entry point: ``fieldroad <subcommand> [--config PATH] [--out DIR] [--seed N]``."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import os
import sys

import numpy as np

from . import __version__, analysis, certificates, dispersion, solver
from .config import Config, ConfigError, parse_config
from .geometry import by_name

SUBCOMMANDS = ("dispersion", "simulate", "speed", "certify-super", "certify-sub",
               "mass-check", "properties")


def _header(cfg: Config, command: str) -> list[str]:
    return [f"fieldroad {__version__}", f"command = {command}"] + cfg.lines()


def _write_text(path: str, header: list[str], body: str) -> None:
    with open(path, "w") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        fh.write(body)


def _write_rows(path: str, header: list[str], columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        wr = csv.writer(fh)
        wr.writerow(columns)
        for row in rows:
            wr.writerow([c if isinstance(c, str) else repr(c) for c in row])


def cmd_dispersion(cfg: Config, out: str) -> int:
    p = cfg.params()
    ck = dispersion.c_kpp(p)
    cb = dispersion.c_brr(p, cfg.tol)
    rows = []
    base = dispersion.intersection_witness(cb + 2 * cfg.tol, 0.0, 0.0, p) if p.D > 2 * p.d else None
    if base is not None:
        rows.append((cb, base.alpha, base.beta, base.gamma, 0.0, 0.0, base.residual))
    for c in cfg.speeds:
        w = dispersion.intersection_witness(c, cfg.eta, 0.0, p)
        if w is not None:
            rows.append((c, w.alpha, w.beta, w.gamma, cfg.eta, 0.0, w.residual))
    head = _header(cfg, "dispersion")
    _write_rows(os.path.join(out, "dispersion.csv"), head,
                ("c", "alpha", "beta", "gamma", "eta", "eps", "residual"), rows)
    speeds = [("c_kpp", ck), ("c_brr", cb)]
    if p.D > 2 * p.d:
        for L in cfg.L_values:
            speeds.append((f"c_L({L:g})", dispersion.c_L(L, p, cfg.tol)))
    _write_rows(os.path.join(out, "speeds.csv"), head, ("quantity", "value"), speeds)
    for name, val in speeds:
        print(f"{name} = {val:.10f}")
    return 0


def _run_config(cfg: Config, params=None) -> solver.RunConfig:
    p = cfg.params() if params is None else params
    geo = cfg.geometry_obj()
    datum = solver.compact_datum(cfg.datum_radius, cfg.datum_level, 0.0, p, geo)
    return solver.RunConfig(p, geo, cfg.grid(), datum, cfg.t_final, cfg.safety, cfg.store_field)


def cmd_simulate(cfg: Config, out: str) -> int:
    rc = _run_config(cfg)
    traj = solver.run(rc)
    head = _header(cfg, "simulate")
    solver.write_road_csv(os.path.join(out, "road.csv"), traj, head)
    solver.write_diagnostics_csv(os.path.join(out, "diagnostics.csv"), traj, head)
    if cfg.store_field:
        solver.write_field_csv(os.path.join(out, "field.csv"), traj, head)
    last = traj.diagnostics[-1]
    print(f"t = {last[0]:.4f}  dt = {traj.dt:.6g}  mass = {last[1]:.6g}  "
          f"min_u = {last[2]:.3g}  min_v = {last[3]:.3g}  max_v = {last[4]:.6g}  "
          f"steady_residual = {last[5]:.3g}")
    return 0


def cmd_speed(cfg: Config, out: str) -> int:
    p = cfg.params()
    geos = [(f"{k}", by_name(k, a)) for k, a in cfg.geometries]
    rep = analysis.speed_report(p, geos, cfg.grid(), cfg.t_final, cfg.datum_radius,
                                cfg.datum_level, cfg.threshold_factor, cfg.window_fraction,
                                cfg.t_min, cfg.safety)
    rep.write_csv(os.path.join(out, "speeds.csv"), _header(cfg, "speed"))
    for r in rep.rows:
        print(f"{r.geometry:>11s} a={r.a:g} {r.side:>5s}: speed {r.speed:.4f} +- {r.stderr:.1e}"
              f"  c_brr {r.c_brr:.4f}  ratio {r.ratio:.4f}")
    return 0


def cmd_certify_super(cfg: Config, out: str) -> int:
    p = cfg.params()
    if cfg.kind == "radial":
        c = cfg.c if cfg.c > 0 else cfg.c_factor * dispersion.c_kpp(p)
        cert = certificates.radial_supersolution(c, p)
    else:
        c = cfg.c if cfg.c > 0 else cfg.c_factor * dispersion.c_brr(p)
        geo = cfg.geometry_obj()
        if cfg.kind == "conical":
            th = cfg.theta0 if cfg.theta0 > 0 else geo.theta0
            cert = certificates.conical_supersolution(c, th, p)
        else:
            cert = certificates.asymptotic_supersolution(c, geo, p)
    head = _header(cfg, "certify-super")
    _write_text(os.path.join(out, "certificate.txt"), head, cert.to_text())
    _write_text(os.path.join(out, "margins.csv"), head, cert.margins_csv())
    print(f"{cert.kind} supersolution at c = {cert.c:.8f}: "
          f"{'valid' if cert.valid else 'INVALID'}{' (' + cert.reason + ')' if cert.reason else ''}")
    return 0 if cert.valid else 1


def cmd_certify_sub(cfg: Config, out: str) -> int:
    p = cfg.params()
    geo = cfg.geometry_obj()
    cl = dispersion.c_L(cfg.L, p, cfg.tol)
    c = cfg.c if cfg.c > 0 else cfg.c_factor * cl
    cert = certificates.build_subsolution(c, cfg.L, p, geo, cfg.kappa)
    if cert.valid or not cert.reason:
        cert = certificates.verify_subsolution(cert, geo, cfg.Lambda_init)
    head = _header(cfg, "certify-sub")
    _write_text(os.path.join(out, "certificate.txt"), head, cert.to_text())
    _write_text(os.path.join(out, "margins.csv"), head, cert.margins_csv())
    print(f"subsolution at c = {c:.8f} (c_L = {cl:.8f}), Lambda = {cert.Lambda:g}: "
          f"{'valid' if cert.valid else 'INVALID'}{' (' + cert.reason + ')' if cert.reason else ''}")
    return 0 if cert.valid else 1


def cmd_mass_check(cfg: Config, out: str) -> int:
    p = cfg.params().without_reaction()
    grid = dataclasses.replace(cfg.grid(), outer_bc="reflecting")
    rc = dataclasses.replace(_run_config(cfg, p), grid=grid)
    st = solver.discretize(rc.geometry, p, grid, rc.datum)
    dt = solver.cfl_dt(st, p, cfg.safety)
    rc = dataclasses.replace(rc, t_final=cfg.n_steps * dt)
    traj = solver.run(rc)
    masses = np.array([row[1] for row in traj.diagnostics])
    drift = float(np.max(np.abs(masses - masses[0])) / masses[0])
    solver.write_diagnostics_csv(os.path.join(out, "mass.csv"), traj, _header(cfg, "mass-check"))
    ok = drift <= 1e-6
    print(f"relative mass drift over {cfg.n_steps} steps: {drift:.3e} ({'ok' if ok else 'FAIL'})")
    return 0 if ok else 1


def cmd_properties(cfg: Config, out: str) -> int:
    p = cfg.params()
    rows = []
    for kind, a in (("exact_cone", 0.0), ("exact_cone", 1.0), ("hyperbola", 1.0), ("bump", 0.0)):
        geo = by_name(kind, a)
        name = f"{kind}:{a:g}"
        eq = solver.equilibrium_residual(geo, p)
        rows.append(("equilibrium", name, 1, int(eq <= 1e-13), eq))
        drift = solver.mass_drift(geo, p, 10_000, seed=cfg.seed)
        rows.append(("mass_drift", name, 1, int(drift <= 1e-6), drift))
        passed = solver.ordering_trials(geo, p, cfg.trials, cfg.n_steps, cfg.seed)
        rows.append(("ordering", name, cfg.trials, passed, float(cfg.trials - passed)))
    _write_rows(os.path.join(out, "properties.csv"), _header(cfg, "properties"),
                ("property", "geometry", "trials", "passed", "worst"), rows)
    ok = True
    for prop, name, n, k, worst in rows:
        ok &= k == n
        print(f"{prop:>12s} {name:>14s}: {k}/{n} passed (worst {worst:.3g})")
    return 0 if ok else 1


HANDLERS = {
    "dispersion": cmd_dispersion, "simulate": cmd_simulate, "speed": cmd_speed,
    "certify-super": cmd_certify_super, "certify-sub": cmd_certify_sub,
    "mass-check": cmd_mass_check, "properties": cmd_properties,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fieldroad", description=__doc__)
    ap.add_argument("--version", action="version", version=f"fieldroad {__version__}")
    ap.add_argument("command", choices=SUBCOMMANDS)
    ap.add_argument("--config", help="flat key = value configuration file")
    ap.add_argument("--out", default=".", help="output directory (created if missing)")
    ap.add_argument("--seed", type=int, help="random seed (overrides the config)")
    return ap


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 2
    try:
        cfg = parse_config(args.config) if args.config else Config()
        if args.seed is not None:
            cfg = dataclasses.replace(cfg, seed=args.seed)
        os.makedirs(args.out, exist_ok=True)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        return HANDLERS[args.command](cfg, args.out)
    except dispersion.DispersionError as exc:
        print(f"failed: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
