"""Command line entry point: ``dirac-rls <command> CONFIG [--threads N] [-v]``.

Exit status: 0 on success, 2 for configuration or validation errors, 3 for
numerical failures (singular systems, non-convergence, box escape).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time

import numpy as np

from . import __version__
from . import config as cfgmod
from . import io
from .errors import DiracRLSError, NumericalError, ValidationError
from .grid import CONVENTION

log = logging.getLogger("dirac_rls")

COMMANDS = tuple(cfgmod.COMMAND_SECTIONS)


def convention_ledger(extra=None) -> dict:
    from .kernels import CONVOLUTION_CONSTANT_CANDIDATES

    led = dict(CONVENTION)
    led.update({
        "convolution_constant": "(2pi)^(-3/2)",
        "convolution_constant_candidates": sorted(CONVOLUTION_CONSTANT_CANDIDATES),
        "convolution_constant_resolution": "closed-form kernel matched against the FFT oracle",
        "resolvent_prefactor": "(2pi)^(-3/2)",
        "amplitude_prefactor": "-(1/4pi)(lambda + H0(kappa w))",
        "eigenvector_form": "unnormalized explicit vectors for incident waves",
        "sign_of_zero_eigenvalue": "+1",
    })
    if extra:
        led.update(extra)
    return led


class Run:
    """Collects outputs and timings for one command and writes the manifest."""

    def __init__(self, command: str, cfg: cfgmod.RunConfig):
        self.command = command
        self.cfg = cfg
        self.outdir = cfg.output_dir
        os.makedirs(self.outdir, exist_ok=True)
        self.files = []
        self.timings = {}
        self.ledger_extra = {}

    def path(self, name: str) -> str:
        p = os.path.join(self.outdir, name)
        self.files.append(name)
        return p

    def timed(self, label):
        run = self

        class _T:
            def __enter__(self):
                self.t = time.perf_counter()

            def __exit__(self, *exc):
                run.timings[label] = time.perf_counter() - self.t

        return _T()

    def manifest(self, status: str):
        inv = []
        for name in sorted(set(self.files)):
            p = os.path.join(self.outdir, name)
            if os.path.exists(p):
                inv.append({"file": name, "bytes": os.path.getsize(p), "sha256": io.sha256_file(p)})
        io.atomic_write_json(os.path.join(self.outdir, "manifest.json"), {
            "command": self.command, "status": status, "artifact_version": __version__,
            "config_hash": self.cfg.digest, "config_path": self.cfg.path,
            "conventions": convention_ledger(self.ledger_extra),
            "timings_s": self.timings, "created_unix": time.time(), "outputs": inv,
        })


# ---------------------------------------------------------------- pipelines

def cmd_kernel_check(run: Run):
    from .kernels import (b_kernel, export_kernel_csv, resolve_convolution_constant)

    cfg = run.cfg
    mc = cfgmod.build_mass(cfg)
    k = cfg.section("kernel")
    with run.timed("oracle"):
        res = resolve_convolution_constant(mc, k["lambda"], k["epsilon"], k["n"], k["h"],
                                           k["rmin"], k["rmax"])
    pts = np.array([[0, 0, r] for r in (0.5, 1.0, 2.0, 4.0)]
                   + [[r, 0, 0] for r in (0.5, 1.0, 2.0, 4.0)], dtype=float)
    with run.timed("closed_form"):
        vals = b_kernel(pts, k["lambda"], k["branch"], mc)
    export_kernel_csv(run.path("kernel_samples.csv"), pts, vals)
    report = {"lambda": k["lambda"], "epsilon": k["epsilon"], "grid": res.grid,
              "band": [k["rmin"], k["rmax"]], "deviations": res.deviations,
              "chosen_constant": res.chosen,
              "max_relative_deviation": res.deviations[res.chosen]}
    io.write_json(run.path("kernel_check.json"), report)
    run.ledger_extra["convolution_constant_deviations"] = res.deviations
    log.info("kernel-check: max relative deviation %.3e with constant %s",
             report["max_relative_deviation"], res.chosen)
    return report


def _solve(run: Run):
    from .solver import recover_phi, solve_modified

    cfg = run.cfg
    mc = cfgmod.build_mass(cfg)
    spec = cfgmod.build_potential(cfg)
    grid = cfgmod.build_grid(cfg["grid"])
    ch = cfgmod.build_channel(cfg, mc)
    s = cfg.section("solve")
    with run.timed("solve"):
        psi, rep = solve_modified(ch, grid, spec, mc, method=s["method"], tol=s["tol"],
                                  max_iter=s["max_iter"], max_points=cfg["grid"]["max_points"])
    with run.timed("recover"):
        phi = recover_phi(psi, ch, grid, spec, mc)
    run.timings["solver_wall"] = rep.wall_time
    return mc, spec, grid, ch, psi, phi, rep


def _write_fields(run, psi, phi):
    io.write_field(run.path("psi.rlsf"), psi)
    io.write_field(run.path("phi.rlsf"), phi)
    if run.cfg.section("output")["field_csv"]:
        io.write_field_csv(run.path("phi.csv"), phi)


def _report_dict(rep):
    d = rep.to_dict()
    d.pop("wall_time", None)   # timings live in the manifest only
    return d


def cmd_solve(run: Run):
    mc, spec, grid, ch, psi, phi, rep = _solve(run)
    _write_fields(run, psi, phi)
    out = {"channel": ch.to_dict(), "report": _report_dict(rep),
           "psi_norm": psi.norm(), "phi_norm": phi.norm()}
    io.write_json(run.path("solve_report.json"), out)
    log.info("solve: residual %.2e, sigma_min %.4f", rep.residual, rep.sigma_min)
    return out


def _directions(sec):
    from .scattering import DirectionSet

    kind = sec["directions"]
    if kind == "lebedev":
        return DirectionSet.lebedev(sec["degree"])
    if kind == "latlong":
        return DirectionSet.latlong(sec["n_theta"], sec["n_phi"])
    if kind == "fibonacci":
        return DirectionSet.fibonacci(sec["count"])
    raise cfgmod.ConfigError(f"amplitude.directions: unknown set {kind!r}")


def cmd_amplitude(run: Run):
    from .scattering import amplitude, far_field_check

    mc, spec, grid, ch, psi, phi, rep = _solve(run)
    sec = run.cfg.section("amplitude")
    with run.timed("amplitude"):
        res = amplitude(phi, ch, spec, mc, _directions(sec), projector=sec["projector"])
    res.meta["solve"] = _report_dict(rep)
    out = res.to_dict()
    if sec["far_field_radii"] is not None:
        with run.timed("far_field"):
            ff = far_field_check(psi, res, spec, sec["far_field_radii"], mc)
        out["far_field"] = ff.to_dict()
    io.write_json(run.path("amplitude.json"), out)
    res.write_csv(run.path("amplitude.csv"))
    _write_fields(run, psi, phi)
    return out


def cmd_scan(run: Run):
    from .solver import coupling_ramp, sigma_min_scan

    cfg = run.cfg
    mc = cfgmod.build_mass(cfg)
    spec = cfgmod.build_potential(cfg)
    grid = cfgmod.build_grid(cfg["grid"])
    s = cfg["scan"]
    lams = np.linspace(s["lambda_min"], s["lambda_max"], s["count"])
    cap = cfg["grid"]["max_points"]
    out = {}
    with run.timed("scan"):
        if s["couplings"]:
            minima, tables = coupling_ramp(lams, s["couplings"], grid, spec, mc, s["branch"],
                                           max_points=cap)
            out["coupling_minima"] = [[c, v] for c, v in minima.items()]
            rows = [(c, lam, sm) for c, t in tables.items() for lam, sm in t]
            io.write_rows_csv(run.path("scan.csv"), ["coupling", "lambda", "sigma_min"], rows)
            out["tables"] = {str(c): t for c, t in tables.items()}
        else:
            table = sigma_min_scan(lams, grid, spec, mc, s["branch"], max_points=cap)
            io.write_rows_csv(run.path("scan.csv"), ["lambda", "sigma_min"], table)
            out["table"] = table
    io.write_json(run.path("scan.json"), out)
    return out


def _dynamics_objects(cfg):
    from .dynamics import PropagationConfig, WavePacketSpec

    d = cfg["dynamics"]
    grid = cfgmod.build_grid({"n": d["n"], "h": d["h"], "origin": d["origin"]})
    pkt = WavePacketSpec(tuple(d["p0"]), d["sigma_p"], d["channel"],
                         tuple(d["r0"]) if d["r0"] is not None else (0.0, 0.0, 0.0))
    pc = PropagationConfig(d["dt"], d["T"], d["order"], grid)
    return pkt, pc


def cmd_dynamics(run: Run):
    from .dynamics import wave_operator_estimate

    cfg = run.cfg
    mc = cfgmod.build_mass(cfg)
    spec = cfgmod.build_potential(cfg)
    pkt, pc = _dynamics_objects(cfg)
    d = cfg["dynamics"]
    with run.timed("wave_operator"):
        est = wave_operator_estimate(pkt, pc, spec, mc, d["ladder"], d["tol"])
    io.write_rows_csv(run.path("cauchy.csv"), ["t_from", "t_to", "difference"],
                      [(a, b, c) for a, b, c in zip(est.times, est.times[1:], est.cauchy_differences)])
    io.write_field(run.path("wave_operator_field.rlsf"), est.field)
    out = est.to_dict()
    io.write_json(run.path("dynamics.json"), out)
    return out


def cmd_compare(run: Run):
    from .algebra import eigen_h0
    from .dynamics import compare_dynamic_stationary
    from .grid import GridSpec
    from .scattering import DirectionSet, amplitude
    from .solver import ScatterChannel, recover_phi, solve_modified

    cfg = run.cfg
    mc = cfgmod.build_mass(cfg)
    spec = cfgmod.build_potential(cfg)
    pkt, pc = _dynamics_objects(cfg)
    d = cfg["dynamics"]
    ch = ScatterChannel(pkt.p0, pkt.n, mc, "+")
    sgrid = GridSpec(d["comparison_grid_n"], d["comparison_grid_h"])
    with run.timed("stationary"):
        psi, _ = solve_modified(ch, sgrid, spec, mc, estimate_sigma=False)
        phi = recover_phi(psi, ch, sgrid, spec, mc)
    gnorm = float(np.linalg.norm(eigen_h0(np.asarray(ch.k), mc).g[ch.n - 1]))

    def stationary(om):
        return amplitude(phi, ch, spec, mc, DirectionSet(om, np.full(len(om), 4 * np.pi / len(om)))
                         ).amplitudes / gnorm

    with run.timed("dynamic"):
        rep = compare_dynamic_stationary(pkt, ch, pc, spec, mc, stationary)
    out = rep.to_dict()
    io.write_rows_csv(run.path("compare.csv"), ["angle_deg", "dynamic", "stationary"],
                      list(zip(rep.bins, rep.dynamic, rep.stationary)))
    io.write_json(run.path("compare.json"), out)
    return out


PIPELINES = {"kernel-check": cmd_kernel_check, "solve": cmd_solve, "amplitude": cmd_amplitude,
             "scan-exceptional": cmd_scan, "dynamics": cmd_dynamics, "compare": cmd_compare}


# ---------------------------------------------------------------- entry point

def build_parser():
    p = argparse.ArgumentParser(prog="dirac-rls", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("config", help="TOML run configuration")
        sp.add_argument("--threads", type=int, default=None,
                        help="cap on BLAS/FFT threads (results do not depend on it)")
        sp.add_argument("-v", "--verbose", action="count", default=0)
    return p


def run_subcommand(command: str, cfg: cfgmod.RunConfig) -> int:
    cfg.require(command)
    run = Run(command, cfg)
    try:
        PIPELINES[command](run)
    except DiracRLSError:
        run.manifest("failed")
        raise
    run.manifest("ok")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = cfgmod.parse_config(args.config)
        if args.threads:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=args.threads):
                return run_subcommand(args.command, cfg)
        return run_subcommand(args.command, cfg)
    except ValidationError as exc:
        print(f"error {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
