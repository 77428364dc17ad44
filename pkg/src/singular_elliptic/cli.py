"""Command-line driver: audit | verify | minimize | probe | report.

Every run serializes its configuration into the output directory, writes CSV
artifacts with 17 significant digits (round-trip exact), and returns a
conventional exit code:

    0   success, all checks passed
    2   a numeric check failed (the offending row is printed)
    3   a nonlinear solver failed to converge
    64  usage error (bad flags or out-of-range parameters)
    66  a required input file is missing

SINGELL_THREADS caps BLAS/worker parallelism (via threadpoolctl when
available); results are bit-identical for identical configs and seeds.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import audit as audit_mod
from . import fem, probes, quadrature
from .integrand import make_params
from .singular import (
    du_sing,
    p_harmonic_residual,
    strong_divergence_residual,
    flux_sing,
    w1p_seminorm_sing,
)
from .tensor import fro_norm

EXIT_OK = 0
EXIT_CHECK_FAILED = 2
EXIT_SOLVER_FAILED = 3
EXIT_USAGE = 64
EXIT_NO_INPUT = 66


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _prepare_outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    config = {k: v for k, v in vars(args).items() if k != "func"}
    config["threads_cap"] = os.environ.get("SINGELL_THREADS")
    (out / "config.json").write_text(json.dumps(config, indent=2, sort_keys=True) + "\n")
    return out


def _thread_cap():
    """Apply SINGELL_THREADS to the BLAS pools when threadpoolctl is present."""
    cap = os.environ.get("SINGELL_THREADS")
    if not cap:
        return contextlib.nullcontext()
    try:
        from threadpoolctl import threadpool_limits

        return threadpool_limits(limits=int(cap))
    except (ImportError, ValueError):
        return contextlib.nullcontext()


def _check_p(p: float) -> None:
    if not (1.0 < p < 2.0):
        raise UsageError(f"exponent p must lie in (1, 2), got {p}")


# --- audit -------------------------------------------------------------------

def cmd_audit(args) -> int:
    if (args.p is None) == (args.p_grid is None):
        raise UsageError("specify exactly one of --p or --p-grid")
    grid = [args.p] if args.p is not None else [float(t) for t in args.p_grid.split(",")]
    for p in grid:
        _check_p(p)
    out = _prepare_outdir(args)
    cloud = audit_mod.SampleCloud(
        n_samples=args.samples, u_max=args.u_max, z_max=args.z_max, seed=args.seed
    )
    rows, summaries, all_passed = [], [], True
    for p in grid:
        params = make_params(p, fixture_path=out / f"params_p{p:g}.json")
        for rep in (
            audit_mod.audit_integrand(params, cloud),
            audit_mod.audit_coefficients(params, cloud),
        ):
            rows.extend(rep.csv_rows())
            summaries.append(rep.summary_text())
            if not rep.passed:
                all_passed = False
                for c in rep.conditions:
                    if not c.passed:
                        print(f"FAIL p={p} {rep.target}: {c.name} margin={c.margin}")
    _write_csv(
        out / "audit.csv",
        ["target", "p", "condition", "sense", "quotient_min", "quotient_median",
         "quotient_max", "margin", "status"],
        rows,
    )
    curve = audit_mod.ratio_curve(grid, cloud)
    _write_csv(out / "ratio_curve.csv", ["p", "nu_hat", "L_hat", "ratio"], curve.rows())
    tail_ok = curve.tail_increasing
    summaries.append(
        f"ratio curve tail increasing: {tail_ok}"
        + ("" if len(grid) >= 3 else " (grid too short to assert)")
    )
    (out / "summary.txt").write_text("\n\n".join(summaries) + "\n")
    if not all_passed or (len(grid) >= 3 and not tail_ok):
        return EXIT_CHECK_FAILED
    return EXIT_OK


# --- verify ------------------------------------------------------------------

def cmd_verify(args) -> int:
    _check_p(args.p)
    out = _prepare_outdir(args)
    params = make_params(args.p, fixture_path=out / f"params_p{args.p:g}.json")
    family = quadrature.default_test_family()
    if args.skip_origin_bumps:
        family = [phi for phi in family if not phi.covers_origin]
    if not family:
        raise UsageError("the test family is empty")

    rule_avoid = quadrature.build_rule(args.n_r, args.n_theta, args.gamma)
    rule_cover = quadrature.build_rule(args.cover_n_r, args.n_theta, 4.0)
    flux_avoid = quadrature.singular_coeff_field(params, rule_avoid)
    flux_cover = quadrature.singular_coeff_field(params, rule_cover)

    ok = True
    weak_rows = []
    for phi in family:
        covers = phi.covers_origin
        rule = rule_cover if covers else rule_avoid
        flux = flux_cover if covers else flux_avoid
        res = quadrature.weak_residual(params, rule, phi, flux_values=flux)
        sup = phi.dphi_sup()
        bound = (1e-5 if covers else 1e-8) * sup
        passed = abs(res) <= bound
        ok &= passed
        weak_rows.append(
            [phi.name, int(covers), res, sup, bound, "pass" if passed else "FAIL"]
        )
        if not passed:
            print(f"FAIL weak residual {phi.name}: |{res}| > {bound}")
    _write_csv(
        out / "weak_residuals.csv",
        ["test_function", "covers_origin", "residual", "dphi_sup", "bound", "status"],
        weak_rows,
    )

    rng = np.random.default_rng(args.seed)
    strong_rows = []
    for _ in range(args.strong_samples):
        r = rng.uniform(0.05, 0.95)
        th = rng.uniform(0.0, 2.0 * np.pi)
        x = np.array([r * np.cos(th), r * np.sin(th)])
        h = min(1e-4, r / 8.0)
        res = strong_divergence_residual(params, x, h)
        res_norm = float(np.linalg.norm(res))
        bound = 1e-5 * float(fro_norm(flux_sing(params, x))) / r
        passed = res_norm <= bound
        ok &= passed
        strong_rows.append([x[0], x[1], h, res_norm, bound, "pass" if passed else "FAIL"])
        if not passed:
            print(f"FAIL strong residual at {x}: {res_norm} > {bound}")
    _write_csv(
        out / "strong_residuals.csv",
        ["x1", "x2", "h", "residual_norm", "bound", "status"],
        strong_rows,
    )

    ph_rows = []
    ph_rule = rule_cover
    for phi in family:
        lhs, rhs = _p_harmonic_parts(args.p, phi, ph_rule)
        res = lhs - rhs
        bound = 1e-6 * (abs(lhs) + abs(rhs) + 1.0)
        passed = abs(res) <= bound
        ok &= passed
        ph_rows.append([phi.name, lhs, rhs, res, bound, "pass" if passed else "FAIL"])
        if not passed:
            print(f"FAIL p-harmonic identity {phi.name}: |{res}| > {bound}")
    _write_csv(
        out / "pharmonic.csv",
        ["test_function", "lhs", "rhs", "residual", "bound", "status"],
        ph_rows,
    )

    r = np.linalg.norm(rule_cover.nodes, axis=-1)
    seminorm = float(np.sum(rule_cover.weights * r ** (-args.p)))
    exact = w1p_seminorm_sing(args.p)
    sem_rel = abs(seminorm - exact) / exact
    sem_ok = sem_rel <= 1e-6
    ok &= sem_ok
    lines = [
        f"p = {args.p}",
        f"seminorm quadrature = {seminorm:.17g}",
        f"seminorm exact      = {exact:.17g}",
        f"seminorm rel error  = {sem_rel:.3e}  [{'PASS' if sem_ok else 'FAIL'}]",
        f"weak residuals: {sum(1 for r_ in weak_rows if r_[-1] == 'pass')}/{len(weak_rows)} pass",
        f"strong residuals: {sum(1 for r_ in strong_rows if r_[-1] == 'pass')}/{len(strong_rows)} pass",
        f"p-harmonic identity: {sum(1 for r_ in ph_rows if r_[-1] == 'pass')}/{len(ph_rows)} pass",
    ]
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def _p_harmonic_parts(p, phi, rule):
    x = rule.nodes
    w = rule.weights
    r = np.linalg.norm(x, axis=-1)
    from .singular import u_sing
    from .tensor import fro_dot

    lhs = float(np.sum(w * r ** (2.0 - p) * fro_dot(du_sing(x), phi.dphi(x))))
    rhs = float(np.sum(w * r**-p * np.sum(u_sing(x) * phi.phi(x), axis=-1)))
    return lhs, rhs


# --- minimize ----------------------------------------------------------------

def cmd_minimize(args) -> int:
    _check_p(args.p)
    out = _prepare_outdir(args)
    params = make_params(args.p, fixture_path=out / f"params_p{args.p:g}.json")
    try:
        mesh = fem.mesh_disk(args.h, origin_node=not args.no_origin_node)
    except (ValueError, MemoryError) as exc:
        raise UsageError(str(exc)) from exc
    try:
        sol, log = fem.minimize(params, mesh, tol=args.tol, max_iter=args.max_iter)
    except fem.ConvergenceError as exc:
        print(f"solver failed: {exc}")
        if exc.log is not None:
            _write_csv(
                out / "solve_log.csv",
                ["iter", "energy", "grad_norm", "step", "cg_iters"],
                exc.log.rows(),
            )
        return EXIT_SOLVER_FAILED
    fem.save_mesh(mesh, out / "mesh.txt")
    fem.save_field(sol, out / "field.txt")
    _write_csv(
        out / "field_nodal.csv",
        ["x", "y", "w1", "w2"],
        [
            [nx, ny, v1, v2]
            for (nx, ny), (v1, v2) in zip(mesh.nodes, sol.values)
        ],
    )
    _write_csv(
        out / "solve_log.csv",
        ["iter", "energy", "grad_norm", "step", "cg_iters"],
        log.rows(),
    )
    E_min = log.energies[-1]
    E_interp = fem.energy(params, mesh, fem.interpolate_singular(mesh))
    target = (2.0 * params.m_g) ** (args.p / 2.0) * 2.0 * np.pi / (2.0 - args.p)
    (out / "summary.txt").write_text(
        "\n".join(
            [
                f"p = {args.p}, h = {args.h}, nodes = {mesh.n_nodes}",
                f"newton iterations = {log.iters[-1]}",
                f"discrete minimum energy = {E_min:.17g}",
                f"interpolant energy      = {E_interp:.17g}",
                f"continuum energy        = {target:.17g}",
                f"final gradient norm     = {log.grad_norms[-1]:.3e}",
            ]
        )
        + "\n"
    )
    return EXIT_OK


# --- probe -------------------------------------------------------------------

def cmd_probe(args) -> int:
    _check_p(args.p)
    out = _prepare_outdir(args)
    center = np.array([float(t) for t in args.center.split(",")])
    if center.shape != (2,):
        raise UsageError("--center must be 'x,y'")
    discrete = args.field != "singular"
    if not discrete:
        sampler = probes.singular_sampler()
    else:
        field_path = Path(args.field)
        mesh_path = Path(args.mesh) if args.mesh else field_path.parent / "mesh.txt"
        if not field_path.exists() or not mesh_path.exists():
            print(f"missing input: {field_path} or {mesh_path}")
            return EXIT_NO_INPUT
        mesh = fem.load_mesh(mesh_path)
        sampler = probes.p1_sampler(fem.load_field(mesh, field_path))
    if args.radii:
        radii = np.array([float(t) for t in args.radii.split(",")])
    elif discrete:
        # balls below the mesh size only see the P1 interpolation cone
        r_min = max(0.1, mesh.h)
        radii = np.geomspace(0.8, r_min, 4)
    else:
        radii = probes.geometric_radii(args.r_max, args.n_radii)
    quantities = (
        ["morrey", "excess", "osc"] if args.quantity == "all" else [args.quantity]
    )
    for q in quantities:
        if q == "morrey":
            table = probes.morrey_decay(sampler, center, radii, args.p)
        elif q == "excess":
            table = probes.excess_decay(sampler, center, radii, args.p)
        elif q == "osc":
            table = probes.oscillation_probe(sampler, center, radii)
        else:
            raise UsageError(f"unknown quantity {q}")
        table.to_csv(out / f"decay_{q}.csv")
        line = f"{q}: slope = {table.slope:.6g}, fit residual = {table.fit_residual:.3e}"
        if table.verdict:
            line += f", verdict = {table.verdict}"
        print(line)
    return EXIT_OK


# --- report ------------------------------------------------------------------

def cmd_report(args) -> int:
    out = Path(args.out)
    known = [
        "audit.csv",
        "ratio_curve.csv",
        "weak_residuals.csv",
        "strong_residuals.csv",
        "pharmonic.csv",
        "solve_log.csv",
        "decay_morrey.csv",
        "decay_excess.csv",
        "decay_osc.csv",
    ]
    found = [name for name in known if (out / name).exists()]
    if not found:
        print(f"no prior run artifacts in {out}")
        return EXIT_NO_INPUT
    lines = ["run report", "=========="]
    for name in found:
        lines.append("")
        lines.append(f"--- {name} ---")
        text = (out / name).read_text().strip().splitlines()
        lines.extend(text)
        statuses = [row.rsplit(",", 1)[-1] for row in text[1:]]
        n_fail = sum(1 for s in statuses if s == "FAIL")
        if any(s in ("pass", "FAIL") for s in statuses):
            lines.append(f"[{'FAIL' if n_fail else 'PASS'}] {name}: {n_fail} failing rows")
    (out / "report.txt").write_text("\n".join(lines) + "\n")
    print(f"wrote {out / 'report.txt'} ({len(found)} artifact files)")
    return EXIT_OK


# --- entry point ---------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="singular-elliptic", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    pa = sub.add_parser("audit", help="certify the structure conditions by sampling")
    pa.add_argument("--p", type=float, default=None)
    pa.add_argument("--p-grid", type=str, default=None)
    pa.add_argument("--samples", type=int, default=100_000)
    pa.add_argument("--u-max", type=float, default=3.0)
    pa.add_argument("--z-max", type=float, default=50.0)
    pa.add_argument("--seed", type=int, default=20240613)
    pa.add_argument("--out", type=str, default="out/audit")
    pa.set_defaults(func=cmd_audit)

    pv = sub.add_parser("verify", help="weak/strong verification of the singular map")
    pv.add_argument("--p", type=float, default=1.5)
    pv.add_argument("--n-r", type=int, default=400)
    pv.add_argument("--n-theta", type=int, default=128)
    pv.add_argument("--gamma", type=float, default=3.0)
    pv.add_argument("--cover-n-r", type=int, default=800)
    pv.add_argument("--strong-samples", type=int, default=200)
    pv.add_argument("--seed", type=int, default=20240613)
    pv.add_argument("--skip-origin-bumps", action="store_true")
    pv.add_argument("--out", type=str, default="out/verify")
    pv.set_defaults(func=cmd_verify)

    pm = sub.add_parser("minimize", help="P1 Newton minimization of the energy")
    pm.add_argument("--p", type=float, default=1.5)
    pm.add_argument("--h", type=float, default=0.1)
    pm.add_argument("--tol", type=float, default=1e-8)
    pm.add_argument("--max-iter", type=int, default=60)
    pm.add_argument("--no-origin-node", action="store_true")
    pm.add_argument("--out", type=str, default="out/minimize")
    pm.set_defaults(func=cmd_minimize)

    pp = sub.add_parser("probe", help="decay/oscillation probes of a field")
    pp.add_argument("--field", type=str, required=True,
                    help="'singular' or a saved nodal field file")
    pp.add_argument("--mesh", type=str, default=None)
    pp.add_argument("--center", type=str, default="0,0")
    pp.add_argument("--quantity", type=str, default="all",
                    choices=["morrey", "excess", "osc", "all"])
    pp.add_argument("--radii", type=str, default=None)
    pp.add_argument("--r-max", type=float, default=0.125)
    pp.add_argument("--n-radii", type=int, default=6)
    pp.add_argument("--p", type=float, default=1.5)
    pp.add_argument("--out", type=str, default="out/probe")
    pp.set_defaults(func=cmd_probe)

    pr = sub.add_parser("report", help="concatenate prior CSVs into report.txt")
    pr.add_argument("--out", type=str, default="out")
    pr.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        with _thread_cap():
            return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
