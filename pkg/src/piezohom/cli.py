"""Batch front end: ``piezohom <subcommand> --config run.yaml --out DIR``.

Subcommands
-----------
mesh        write the RVE mesh as text and VTK
solve       run one load case and export its fields
homogenize  secant matrix at one amplitude, coefficient CSV, shell report
shell       thickness-integrate a 9x9 matrix (from CSV or a fresh run)
sweep       secant matrices along the amplitude schedule
check       quick invariant suite
"""

from __future__ import annotations

import argparse
import os
import sys
import traceback

import numpy as np

from . import config as cfgmod
from . import export
from .constraints import LOAD_TABLE
from .contact import PenaltyParams
from .element import gauss_fields
from .homogenize import (
    HomogenizationSetup,
    build_secant_matrix,
    coefficient_rows,
    sweep_amplitudes,
)
from .material import PiezoMaterial
from .mesh import MeshParams, generate_fiber_rve
from .shell import format_report, integrate_shell_matrix, write_shell_csv
from .solver import SolverOptions

FAILED_MARKER = "FAILED"


class PipelineError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# builders


def build_mesh(cfg):
    m = dict(cfg["mesh"])
    m["divisions"] = tuple(m["divisions"])
    m["grid"] = tuple(m["grid"])
    return generate_fiber_rve(MeshParams(**m))


def build_material(cfg) -> PiezoMaterial:
    m = cfg["material"]
    return PiezoMaterial.from_si(m["lambda"], m["mu"], m["d31"], m["d32"], m["d33"], m["perm_rel"])


def build_setup(cfg, mesh=None, keep_solutions=False) -> HomogenizationSetup:
    mesh = build_mesh(cfg) if mesh is None else mesh
    mat = build_material(cfg)
    pen = cfg["penalty"]
    penalty = PenaltyParams.default(mat, mesh.char_length, pen["factor"])
    if pen["rho_mech"] is not None or pen["rho_el"] is not None:
        penalty = PenaltyParams(
            pen["rho_mech"] if pen["rho_mech"] is not None else penalty.rho_mech,
            pen["rho_el"] if pen["rho_el"] is not None else penalty.rho_el,
        )
    h = cfg["homogenization"]
    return HomogenizationSetup(
        mesh,
        mat,
        mode=h["mode"],
        contact=h["contact"],
        penalty=penalty,
        options=SolverOptions(**cfg["solver"]),
        beta=h["beta"],
        field_amplitude=h["field_amplitude"],
        keep_solutions=keep_solutions,
    )


def element_stress(setup: HomogenizationSetup, q) -> np.ndarray:
    """Element means of the Gauss-point generalized stress, (ne, 9)."""
    mesh = setup.mesh
    _, stress, dv = gauss_fields(mesh.element_coords(), q[mesh.elements].reshape(mesh.n_elements, -1), setup.D)
    return np.einsum("egi,eg->ei", stress, dv) / dv.sum(axis=1)[:, None]


# ---------------------------------------------------------------------------
# stages


def stage_mesh(cfg, out, artifacts, mesh=None):
    mesh = build_mesh(cfg) if mesh is None else mesh
    export.write_mesh(mesh, os.path.join(out, "mesh.txt"))
    export.write_vtk(os.path.join(out, "mesh.vtk"), mesh, title="piezohom mesh")
    artifacts["mesh"] = ["mesh.txt", "mesh.vtk"]
    return mesh


def stage_solve(cfg, out, artifacts, case_name, amplitude, setup=None):
    if case_name not in LOAD_TABLE:
        raise PipelineError(f"unknown load case {case_name!r}; expected one of {sorted(LOAD_TABLE)}")
    setup = build_setup(cfg, keep_solutions=True) if setup is None else setup
    res = setup.run_case(case_name, amplitude)
    if not res.converged:
        raise PipelineError(f"load case {case_name} did not converge ({res.solution.report.message})")
    name = f"fields_{case_name}_{amplitude:+.6g}.vtk"
    q = res.solution.q
    export.write_vtk(os.path.join(out, name), setup.mesh, q, element_stress(setup, q), title=case_name)
    artifacts.setdefault("fields", []).append(name)
    return res


def stage_homogenize(cfg, out, artifacts, threads, setup=None, write_fields=False):
    setup = build_setup(cfg, keep_solutions=write_fields) if setup is None else setup
    amp = float(cfg["homogenization"]["amplitude"])
    M = build_secant_matrix(setup, amp, cfgmod.case_names(cfg), threads)
    bad = [n for n, r in M.cases.items() if not r.converged]
    export.write_coefficient_csv(os.path.join(out, "coefficients.csv"), coefficient_rows(M))
    np.savetxt(os.path.join(out, "effective_matrix.csv"), M.D, delimiter=",", fmt="%.17g")
    artifacts["coefficients"] = "coefficients.csv"
    artifacts["effective_matrix"] = "effective_matrix.csv"
    if write_fields:
        for name, res in M.cases.items():
            fname = f"fields_{name}_{res.amplitude:+.6g}.vtk"
            q = res.solution.q
            export.write_vtk(os.path.join(out, fname), setup.mesh, q, element_stress(setup, q), title=name)
            artifacts.setdefault("fields", []).append(fname)
    if bad:
        raise PipelineError(f"load cases did not converge: {', '.join(bad)}")
    if M.partial:
        raise PipelineError("secant matrix is incomplete: " + ", ".join(sorted(set(LOAD_TABLE) - set(M.coefficients))))
    return M


def stage_shell(cfg, out, artifacts, D):
    s = cfg["shell"]
    shell = integrate_shell_matrix(D, s["thickness"], s["n_gauss"], s["mu_bar"])
    write_shell_csv(shell, os.path.join(out, "shell_matrix.csv"))
    with open(os.path.join(out, "shell_report.txt"), "w") as fh:
        fh.write(format_report(shell))
    artifacts["shell"] = ["shell_matrix.csv", "shell_report.txt"]
    return shell


def stage_sweep(cfg, out, artifacts, threads):
    setup = build_setup(cfg)
    res = sweep_amplitudes(setup, cfgmod.schedule_from(cfg), cfgmod.case_names(cfg), threads)
    rows = [r for m in res["matrices"] for r in coefficient_rows(m)]
    export.write_coefficient_csv(os.path.join(out, "sweep.csv"), rows)
    artifacts["sweep"] = "sweep.csv"
    bad = [(m.amplitude, n) for m in res["matrices"] for n, r in m.cases.items() if not r.converged]
    if bad:
        raise PipelineError(f"{len(bad)} sweep solves did not converge, first at amplitude {bad[0][0]} ({bad[0][1]})")
    return res


# ---------------------------------------------------------------------------
# invariant suite


def run_checks(cfg) -> list:
    """Fast invariant checks; returns ``[(name, passed, detail)]``."""
    from .bezier import build_bezier9, surface_eval
    from .element import ElementState, element_integrate
    from .homogenize import _tetragonal_matrix
    from .material import micro_constitutive_matrix
    from .shell import build_A

    out = []
    mat = build_material(cfg)
    D = micro_constitutive_matrix(mat).D

    # homogenization identity on a homogeneous block
    solid = cfgmod.validate({"mesh": {"layout": "solid", "divisions": [2, 2, 2]}, "homogenization": {"contact": False}})
    solid["material"] = cfg["material"]
    setup = build_setup(solid)
    M = build_secant_matrix(setup, 1e-3)
    expect = {
        "C11bar": D[0, 0], "C12bar": D[0, 1], "C22bar": D[1, 1], "C13bar": D[0, 2], "C33bar": D[2, 2],
        "C44bar": D[3, 3], "C66bar": D[5, 5], "e13bar": D[8, 0], "e33bar": D[8, 2], "e15bar": D[6, 4],
        "eps11bar": D[6, 6], "eps33bar": D[8, 8],
    }  # fmt: skip
    err = max(abs(M[k] - v) / max(abs(v), np.max(np.abs(D)) * 1e-12) for k, v in expect.items())
    out.append(("homogenization identity", err < 1e-6, f"max rel err {err:.2e}"))

    # flat Bezier patch
    g = np.linspace(0, 1, 3)
    X = np.array([[[a, b, 0.3 * a - 0.2 * b] for b in g] for a in g])
    patch = build_bezier9(X)
    dev = 0.0
    for z in np.random.default_rng(0).random((50, 2)):
        x, *_ = surface_eval(patch, z)
        dev = max(dev, abs(x[2] - (0.3 * x[0] - 0.2 * x[1])))
    out.append(("planar Bezier patch", dev < 1e-12, f"max deviation {dev:.2e}"))

    # element residual consistency
    rng = np.random.default_rng(1)
    coords = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0], [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1]], float)
    coords += 0.1 * rng.standard_normal(coords.shape)
    worst = 0.0
    for _ in range(5):
        st = ElementState(coords, 1e-3 * rng.standard_normal((8, 3)), 1e-2 * rng.standard_normal(8))
        r = element_integrate(st, mat)
        q = st.dofs
        dq = rng.standard_normal(32)
        h = 1e-6 * np.linalg.norm(q) / np.linalg.norm(dq)
        e = lambda v: 0.5 * v @ r.K @ v  # noqa: E731
        fd = (e(q + h * dq) - e(q - h * dq)) / (2 * h)
        worst = max(worst, abs(fd - r.R @ dq) / max(abs(r.R @ dq), 1e-300))
    out.append(("element residual vs energy", worst < 1e-6, f"max rel err {worst:.2e}"))

    # shell closed form
    c = {k: float(v) for k, v in zip(sorted(expect), np.linspace(1, 2, len(expect)))}
    h = cfg["shell"]["thickness"]
    S = integrate_shell_matrix(_tetragonal_matrix(c), h).D
    ref = {(0, 0): h * c["C11bar"], (3, 3): h**3 * c["C11bar"] / 12, (12, 0): h * c["e13bar"], (12, 12): h * c["eps33bar"]}
    err = max(abs(S[k] - v) / abs(v) for k, v in ref.items())
    out.append(("shell entries", err < 1e-14 and np.count_nonzero(build_A(0.25)) == 14, f"max rel err {err:.2e}"))
    return out


# ---------------------------------------------------------------------------
# entry point


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--out", help="output directory (default: config 'output')")
    common.add_argument("--threads", type=int, help="worker threads for independent load cases")
    common.add_argument("--deterministic", action="store_true", default=None, help="reproducible output files")
    common.add_argument("--tol", type=float, help="solver tolerance")
    common.add_argument("--max-iter", type=int, help="maximum Newton iterations")

    p = argparse.ArgumentParser(prog="piezohom", description="Homogenization of fibrous piezoelectric RVEs.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("mesh", parents=[common], help="write the RVE mesh")
    s = sub.add_parser("solve", parents=[common], help="run one load case")
    s.add_argument("--case", required=True, help="coefficient name, e.g. C11bar, e33bar, eps11bar")
    s.add_argument("--amplitude", type=float, help="driven strain or field (default: config amplitude)")
    s = sub.add_parser("homogenize", parents=[common], help="secant matrix at one amplitude")
    s.add_argument("--amplitude", type=float)
    s.add_argument("--case", action="append", help="restrict to these load cases")
    s.add_argument("--fields", action="store_true", help="export VTK fields of every case")
    s = sub.add_parser("shell", parents=[common], help="shell constitutive matrix")
    s.add_argument("--matrix", help="9x9 effective matrix CSV; runs homogenization when omitted")
    s.add_argument("--thickness", type=float)
    sub.add_parser("sweep", parents=[common], help="secant matrices along the amplitude schedule")
    sub.add_parser("check", parents=[common], help="run the invariant suite")
    return p


def _resolve(args):
    over = {"solver": {}, "homogenization": {}, "shell": {}}
    if args.tol is not None:
        over["solver"]["tol"] = args.tol
    if args.max_iter is not None:
        over["solver"]["max_iter"] = args.max_iter
    if args.threads is not None:
        over["solver"]["threads"] = args.threads
    if args.deterministic:
        over["solver"]["deterministic"] = True
    if getattr(args, "amplitude", None) is not None:
        over["homogenization"]["amplitude"] = args.amplitude
    if getattr(args, "case", None) and args.command == "homogenize":
        over["homogenization"]["cases"] = args.case
    if getattr(args, "thickness", None) is not None:
        over["shell"]["thickness"] = args.thickness
    if args.out is not None:
        over["output"] = args.out
    return cfgmod.load_config(args.config, overrides=over)


def run(args) -> int:
    cfg = _resolve(args)
    out = cfg["output"]
    os.makedirs(out, exist_ok=True)
    marker = os.path.join(out, FAILED_MARKER)
    if os.path.exists(marker):
        os.remove(marker)
    artifacts = {}
    threads = cfg["solver"]["threads"]
    deterministic = cfg["solver"]["deterministic"]
    status, summary = "ok", {}
    try:
        if args.command == "mesh":
            mesh = stage_mesh(cfg, out, artifacts)
            summary = {"nodes": mesh.n_nodes, "elements": mesh.n_elements}
        elif args.command == "solve":
            amp = cfg["homogenization"]["amplitude"]
            res = stage_solve(cfg, out, artifacts, args.case, amp)
            summary = {"case": res.name, "iterations": res.iterations, "stress": res.averages.stress}
            print(f"{res.name} amplitude {res.amplitude:+.6g}: {res.iterations} iterations")
        elif args.command == "homogenize":
            setup = build_setup(cfg, keep_solutions=args.fields)
            stage_mesh(cfg, out, artifacts, setup.mesh)
            M = stage_homogenize(cfg, out, artifacts, threads, setup, args.fields)
            stage_shell(cfg, out, artifacts, M.D)
            for name, v in M.coefficients.items():
                print(f"{name:>10} {v: .10g}")
            summary = {"amplitude": M.amplitude, "coefficients": M.coefficients}
        elif args.command == "shell":
            if args.matrix:
                D = np.loadtxt(args.matrix, delimiter=",")
            else:
                D = stage_homogenize(cfg, out, artifacts, threads).D
            shell = stage_shell(cfg, out, artifacts, D)
            print(format_report(shell), end="")
        elif args.command == "sweep":
            res = stage_sweep(cfg, out, artifacts, threads)
            summary = {"amplitudes": res["amplitudes"]}
        elif args.command == "check":
            results = run_checks(cfg)
            for name, ok, detail in results:
                print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
            summary = {"checks": [[n, bool(ok), d] for n, ok, d in results]}
            if not all(ok for _, ok, _ in results):
                raise PipelineError("invariant checks failed")
    except Exception as exc:  # noqa: BLE001 - every stage failure is reported the same way
        status = "failed"
        with open(marker, "w") as fh:
            fh.write(f"{type(exc).__name__}: {exc}\n")
            if not deterministic:
                fh.write(traceback.format_exc())
        print(f"FAILED: {exc}", file=sys.stderr)
    export.write_manifest(
        os.path.join(out, "manifest.json"),
        cfg,
        artifacts,
        status,
        deterministic,
        command=args.command,
        summary=summary,
    )
    return 0 if status == "ok" else 1


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        return run(args)
    except cfgmod.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
