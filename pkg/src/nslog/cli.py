"""Command-line front end: ``nslog <mode> --config <path> [--out DIR] [--seed N] [--verify MANIFEST]``.

Every mode writes CSV tables (and NSL1 snapshots where relevant) into the
output directory, then a ``manifest.json`` with SHA-256 digests of all
inputs and outputs.  Exit status: 0 success, 1 configuration error,
2 numerical failure, 3 I/O error or digest mismatch.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
import tempfile
from contextlib import contextmanager
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from . import diagnostics as dg
from . import fieldio, formulas, ode
from . import solver as so
from . import spectral as sp
from .config import RunConfig, cfg_solver, emit_config, parse_config
from .errors import ConfigError, DataError, DomainError, FitError, NslogError, NumericalError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_IO = 0, 1, 2, 3
MANIFEST = "manifest.json"


def sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass
class Run:
    """Output directory bookkeeping: atomic writes, digests and stage status."""

    cfg: RunConfig
    out: Path
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    stages: list = field(default_factory=list)
    started: str = field(default_factory=_now)

    def write(self, name: str, data: bytes) -> None:
        fieldio.atomic_write(self.out / name, data)
        self.outputs[name] = sha256(data)

    def csv(self, name: str, header, rows) -> None:
        self.write(name, fieldio.csv_bytes(header, rows))

    def snapshot(self, name: str, f: sp.PhysField) -> None:
        self.write(name, fieldio.encode_field(f))

    def read_field(self, path: str) -> sp.PhysField:
        try:
            data = Path(path).read_bytes()
        except OSError as exc:
            raise OSError(f"cannot read snapshot {path}: {exc.strerror}") from exc
        self.inputs[str(path)] = sha256(data)
        return fieldio.decode_field(data)

    @contextmanager
    def stage(self, name: str):
        entry = {"name": name, "status": "running"}
        self.stages.append(entry)
        try:
            yield entry
        except BaseException as exc:
            entry["status"] = "failed"
            entry["error"] = f"{type(exc).__name__}: {exc}"
            raise
        if entry["status"] == "running":
            entry["status"] = "ok"

    def manifest(self, status: str) -> dict:
        return {
            "tool": "nslog",
            "version": __version__,
            "mode": self.cfg.mode,
            "seed": self.cfg.seed,
            "config": emit_config(self.cfg),
            "started": self.started,
            "finished": _now(),
            "inputs": dict(sorted(self.inputs.items())),
            "outputs": dict(sorted(self.outputs.items())),
            "stages": self.stages,
            "status": status,
        }

    def write_manifest(self, status: str) -> None:
        data = json.dumps(self.manifest(status), indent=2).encode() + b"\n"
        fieldio.atomic_write(self.out / MANIFEST, data)


# ---------------------------------------------------------------- helpers

def build_field(run: Run) -> sp.PhysField:
    fd = run.cfg["field"]
    if fd["init"] == "file":
        return run.read_field(fd["input"])
    grid = sp.Grid(fd["npts"], fd["box"])
    init = fd["init"]
    if init == "shear":
        return so.make_shear(grid, fd["k"], fd["amp"])
    if init == "taylor_green":
        return so.make_taylor_green_2d(grid, fd["amp"])
    if init == "shell":
        return so.make_shell_datum(grid, fd["r"])
    if init == "constant":
        return sp.PhysField(grid, np.full((grid.rank,) + grid.npts, fd["amp"]))
    return so.make_random_divfree(grid, fd["slope"], (fd["k_lo"], fd["k_hi"]), seed=run.cfg.seed,
                                  energy=fd["energy"])


def log_grid(lo: float, hi: float, n: int) -> np.ndarray:
    return np.geomspace(lo, hi, n)


# ---------------------------------------------------------------- modes

def cmd_formulas(run: Run) -> None:
    cfg = run.cfg
    f = cfg["formulas"]
    params = cfg.ladder()
    s_grid = np.linspace(f["s_min"], f["s_max"], f["s_count"])
    with run.stage("exponents"):
        head = ["s", "q", "theta", "alpha_gn", "mu", "gamma_decay", "p_scaling", "delta01", "beta_ode",
                "grad_exp", "velocity_exp", "filament_exp", "alignment_exp", "singular_dim"]
        rows = []
        for s in s_grid:
            pk = formulas.exponent_pack(float(s), f["q"], f["eta"])
            bu = formulas.blowup_exponents(float(s), f["q"], params)
            rows.append([float(s), f["q"], pk.theta, pk.alpha_gn, pk.mu, pk.gamma_decay, pk.p_scaling,
                         pk.delta01, pk.beta_ode, bu.grad_exp_beta_form, bu.velocity_exp, bu.filament_exp,
                         bu.alignment_exp, bu.singular_dim])
        run.csv("exponents.csv", head, rows)
    with run.stage("thresholds"):
        rows = []
        for s in s_grid:
            level = formulas.pathway_level(float(s), params)
            rows.append([float(s), formulas.threshold_asymptote(float(s), 1.0, params),
                         "unreachable" if level is None else level])
        run.csv("thresholds.csv", ["s", "threshold", "pathway_level"], rows)
        rows = []
        for m in f["delta_scales"]:
            scaled = formulas.LogLadderParams(tuple(m * d for d in params.deltas), params.cs, params.c0, params.c3)
            rows.append([m, formulas.alpha_threshold(scaled)])
        run.csv("delta_sweep.csv", ["delta_scale", "alpha_threshold"], rows)
    with run.stage("dimensions"):
        rows = []
        for eps in f["eps_values"]:
            g = formulas.exceptional_geometry(eps, params)
            rows.append([eps, g.dim_bound, g.theta_eps, g.raw_dim_bound, int(g.clamped)])
        run.csv("dimensions.csv", ["eps", "dim_bound", "theta_eps", "raw_dim_bound", "clamped"], rows)
    with run.stage("multifractal"):
        rows = []
        for s in s_grid:
            m = formulas.multifractal_model(float(s), params)
            rows.append([float(s)] + [float(m.zeta(p)) for p in f["p_values"]])
        run.csv("zeta.csv", ["s"] + [f"zeta_{p!r}" for p in f["p_values"]], rows)
        m = formulas.multifractal_model(f["s"], params)
        half = math.sqrt(6.0 * m.sigma2 / m.shrink)
        hs = np.linspace(m.h0 - half, m.h0 + half, f["h_count"])
        run.csv("dh.csv", ["h", "D"], [[float(h), float(m.D(h))] for h in hs])
    with run.stage("spectral_models"):
        pk = formulas.exponent_pack(f["s"], f["q"], f["eta"])
        beta0 = f["beta0"] if f["beta0"] is not None else (0.0,) * params.n
        mp = formulas.SpectralModelParams(k0=f["k0"], eps_rate=f["eps_rate"], nu=f["nu"],
                                          kolmogorov_c=f["kolmogorov_c"], beta0=beta0,
                                          small_c=f["small_c"], flux_c=f["flux_c"])
        models = formulas.spectral_models(mp, params, f["s"], pk.gamma_decay)
        ks = log_grid(f["k_min"], f["k_max"], f["k_count"])
        cols = [ks, models.kolmogorov(ks), models.model_spectrum(ks, f["t"]), models.flux_weight(ks),
                models.flux_bound(ks), models.limiting_spectrum(ks, f["t"])]
        run.csv("spectral_model.csv", ["k", "kolmogorov", "model_spectrum", "flux_weight", "flux_bound",
                                       "limiting_spectrum"], np.column_stack(cols).tolist())


def cmd_ode(run: Run) -> None:
    o = run.cfg["ode"]
    with run.stage("integrate"):
        if o["kind"] == "comparison":
            model = ode.ComparisonOde(o["y0"], o["c"], o["mu"])
            traj = ode.integrate(model.rhs, o["y0"], o["t_end"], o["tol"], bracket_rtol=o["bracket_rtol"])
            branch, threshold = "", math.nan
        else:
            model = ode.DichotomyOde(o["y0"], o["c1"], o["c2"], o["beta"], o["omega"])
            res = ode.run_dichotomy(model, o["t_end"], o["tol"], bracket_rtol=o["bracket_rtol"])
            traj, branch = res.trajectory, res.branch
            threshold = math.nan if res.threshold is None else res.threshold
        run.csv("trajectory.csv", ["t", "y"], np.column_stack([traj.times, traj.values]).tolist())
    with run.stage("summary"):
        lo, hi = traj.t_star_bracket or (math.nan, math.nan)
        slope = math.nan
        if traj.terminal == ode.BLEW_UP:
            try:
                slope = ode.fit_blowup_exponent(traj, traj.t_star)
            except FitError:
                pass
        exact = model.blow_up_time if o["kind"] == "comparison" else math.nan
        expected = -1.0 / o["mu"] if o["kind"] == "comparison" else math.nan
        head = ["terminal", "t_star", "bracket_lo", "bracket_hi", "t_zero", "closed_form_t_star",
                "fitted_slope", "expected_slope", "branch", "threshold", "n_rejected"]
        row = [traj.terminal, traj.t_star if traj.t_star is not None else math.nan, lo, hi,
               traj.t_zero if traj.t_zero is not None else math.nan, exact, slope, expected, branch,
               threshold, traj.n_rejected]
        run.csv("summary.csv", head, [row])


@dataclass(frozen=True)
class Crossing:
    lo: float
    hi: float

    @property
    def mid(self) -> float:
        return 0.5 * (self.lo + self.hi)


def find_crossings(omega, lams, rtol: float) -> list:
    """Bisect every sign change of ``omega(lam) - 1`` between neighbouring grid points."""
    vals = [omega(l) - 1.0 for l in lams]
    out = []
    for (a, fa), (b, fb) in zip(zip(lams, vals), zip(lams[1:], vals[1:])):
        if fa == 0.0:
            out.append(Crossing(a, a))
            continue
        if fa * fb >= 0:
            continue
        while (b - a) > rtol * a:
            m = math.sqrt(a * b)
            fm = omega(m) - 1.0
            if fm == 0.0:
                a = b = m
                break
            if fa * fm < 0:
                b = m
            else:
                a, fa = m, fm
        out.append(Crossing(a, b))
    if vals and vals[-1] == 0.0:
        out.append(Crossing(lams[-1], lams[-1]))
    return out


def cmd_sweep(run: Run) -> None:
    w = run.cfg["sweep"]
    params = run.cfg.ladder()
    omega = lambda lam: formulas.dichotomy_omega(lam, w["s"], w["q"], params).omega
    lams = [float(l) for l in log_grid(w["lambda_min"], w["lambda_max"], w["lambda_count"])]
    beta = formulas.exponent_pack(w["s"], w["q"]).beta_ode
    with run.stage("omega"):
        rows = []
        for lam in lams:
            d = formulas.dichotomy_omega(lam, w["s"], w["q"], params)
            row = [lam, d.omega, d.branch]
            if w["run_ode"]:
                model = ode.DichotomyOde(w["y0"], w["c1"], w["c2"], beta, d.omega)
                row.append(ode.run_dichotomy(model, w["t_end"]).branch)
            rows.append(row)
        head = ["lambda", "omega", "branch"] + (["ode_branch"] if w["run_ode"] else [])
        run.csv("sweep.csv", head, rows)
    with run.stage("crossing") as st:
        found = find_crossings(omega, lams, w["rtol"])
        if not found:
            st["status"] = "no-crossing"
        run.csv("crossing.csv", ["lambda_lo", "lambda_hi", "lambda_star", "omega_at_star"],
                [[c.lo, c.hi, c.mid, omega(c.mid)] for c in found])


def cmd_simulate(run: Run) -> None:
    cfg = run.cfg
    with run.stage("initial"):
        u0 = build_field(run)
        if cfg["solver"]["snapshot"]:
            run.snapshot("initial.nsl", u0)
    scfg = cfg_solver(cfg)
    shear_k = cfg["field"]["k"] if cfg["field"]["init"] == "shear" else None
    amps = []

    def on_record(state):
        if shear_k is not None:
            amps.append(float((state.u.coeffs[(0, 0, shear_k) + (0,) * (state.u.grid.rank - 2)] * 2j).real))

    with run.stage("run"):
        res = so.run(u0, scfg, on_record=on_record)
    with run.stage("write"):
        head = so.DiagnosticsRecord.columns() + (["shear_amplitude"] if shear_k is not None else [])
        rows = [r.row() + ([a] if shear_k is not None else []) for r, a in
                zip(res.records, amps if shear_k is not None else [None] * len(res.records))]
        run.csv("records.csv", head, rows)
        if cfg["solver"]["snapshot"]:
            run.snapshot("final.nsl", sp.inverse(res.final.u))


def _analysis_field(run: Run) -> sp.PhysField:
    path = run.cfg["analyze"]["input"]
    return run.read_field(path) if path else build_field(run)


def cmd_analyze(run: Run) -> None:
    a = run.cfg["analyze"]
    with run.stage("load"):
        u = _analysis_field(run)
        run.snapshot("snapshot.nsl", u)
    grid = u.grid
    with run.stage("spectrum"):
        spec = dg.energy_flux(u, a["nu"], a["s"])
        run.csv("spectrum.csv", ["k", "E", "T", "Pi"],
                np.column_stack([spec.k_centers, spec.e_k, spec.transfer, spec.flux]).tolist())
        run.csv("dissipation.csv", ["mean_energy", "total_energy", "eps_rate_s1", "eps_rate_frac"],
                [[spec.mean_energy, spec.total_energy, spec.eps_rate_s1, spec.eps_rate_frac]])
    with run.stage("structure"):
        rs = [m * grid.dx[0] for m in a["separations_cells"]]
        tab = dg.structure_functions(u, a["orders"], rs, a["n_samples"], run.cfg.seed)
        rows = [[r, p, tab.s_p_r[i, j]] for i, r in enumerate(tab.r) for j, p in enumerate(tab.orders)]
        run.csv("structure.csv", ["r", "p", "S"], rows)
        run.csv("zeta_fit.csv", ["p", "zeta"], np.column_stack([tab.orders, tab.zeta]).tolist())
    with run.stage("exceptional"):
        rows = []
        for i, eps in enumerate(a["eps_values"]):
            ex = dg.exceptional_set(u, eps)
            dim = dg.box_counting_dimension(ex.mask)
            rows.append([eps, ex.lambda_eps, ex.measured_fraction, ex.chebyshev_lambda, dim.dimension,
                         dim.fit_residual])
            run.snapshot(f"mask_{i}.nsl", sp.PhysField(grid, ex.mask[None].astype(float)))
        run.csv("exceptional.csv", ["eps", "lambda_eps", "measured_fraction", "chebyshev_lambda",
                                    "box_dimension", "fit_residual"], rows)
    with run.stage("local_scaling"):
        ls = dg.local_scaling_histogram(u, [m * grid.dx[0] for m in a["radii_cells"]], a["bins"])
        run.csv("local_scaling.csv", ["h_lo", "h_hi", "density", "d_of_h"],
                np.column_stack([ls.bin_edges[:-1], ls.bin_edges[1:], ls.density, ls.d_of_h_estimate]).tolist())
    with run.stage("alignment") as st:
        if grid.rank == 3:
            _write_alignment(run, dg.alignment_statistics(u))
        else:
            st["status"] = "skipped"


def _write_alignment(run: Run, al: dg.Alignment) -> None:
    rows = [[lo, hi, int(c)] for lo, hi, c in zip(al.angle_edges[:-1], al.angle_edges[1:], al.angle_histogram)]
    run.csv("alignment.csv", ["angle_lo", "angle_hi", "count"], rows)
    run.csv("alignment_summary.csv", ["mean_cos", "excluded", "max_trace"],
            [[al.mean_cos, al.excluded, al.max_trace]])


def cmd_audit(run: Run) -> None:
    cfg = run.cfg
    au = cfg["audit"]
    params = cfg.ladder()
    with run.stage("field"):
        u = build_field(run)
    with run.stage("commutator"):
        c = sp.commutator_audit(u, au["s"], au["sigma"], params)
        run.csv("commutator.csv", ["lhs", "rhs_f1_term", "rhs_f2_term", "fitted_constant", "z"],
                [[c.lhs, c.rhs_f1_term, c.rhs_f2_term, c.fitted_constant, c.z]])
    pack = formulas.exponent_pack(au["s"], au["q"])
    with run.stage("flux") as st:
        spec = dg.energy_flux(u, au["nu"], au["s"])
        if spec.eps_rate_frac > 0:
            models = formulas.SpectralModels(formulas.SpectralModelParams(k0=au["k0"], k_nu=au["k_nu"]),
                                             params, au["s"], pack.gamma_decay)
            fa = dg.flux_audit(spec, models)
            run.csv("flux_audit.csv", ["max_relative_deviation", "bound_satisfied_fraction", "fitted_constant",
                                       "n_bins"],
                    [[fa.max_relative_deviation, fa.bound_satisfied_fraction, fa.fitted_constant, fa.n_bins]])
        else:
            st["status"] = "skipped"
    with run.stage("alignment") as st:
        if u.grid.rank == 3:
            _write_alignment(run, dg.alignment_statistics(u))
        else:
            st["status"] = "skipped"
    if au["run"]:
        with run.stage("decay"):
            res = so.run(u, cfg_solver(cfg))
            d = so.decay_audit(res.records, pack, au["c_env"], au["beta_env"])
            run.csv("decay_audit.csv", ["violations", "margin"], [[d.violations, d.margin]])
            rs = dg.ratio_series(res.records)
            run.csv("ratio.csv", ["t", "ratio"], np.column_stack([rs.t, rs.ratio]).tolist())
            run.csv("ratio_slope.csv", ["tail_slope"], [[rs.tail_slope]])


COMMANDS = {
    "formulas": cmd_formulas,
    "ode": cmd_ode,
    "sweep": cmd_sweep,
    "simulate": cmd_simulate,
    "analyze": cmd_analyze,
    "audit": cmd_audit,
}


def execute(cfg: RunConfig, out: Path) -> Run:
    """Run one mode into ``out``; the manifest is written last, even on failure."""
    run = Run(cfg, Path(out))
    try:
        COMMANDS[cfg.mode](run)
    except BaseException:
        run.write_manifest("failed")
        raise
    run.write_manifest("ok")
    return run


def verify(manifest_path: Path, out: Optional[Path]) -> list:
    """Re-run a manifest's config and return the output names whose digests differ."""
    try:
        old = json.loads(Path(manifest_path).read_text())
    except (OSError, ValueError) as exc:
        raise OSError(f"cannot read manifest {manifest_path}: {exc}") from exc
    cfg = parse_config(old["config"])
    with tempfile.TemporaryDirectory() as tmp:
        run = execute(cfg, Path(out) if out else Path(tmp))
        new = run.outputs
    names = sorted(set(old["outputs"]) | set(new))
    return [n for n in names if old["outputs"].get(n) != new.get(n)]


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="nslog", description=__doc__.splitlines()[0])
    p.add_argument("mode", choices=sorted(COMMANDS))
    p.add_argument("--config", required=False, help="key = value configuration file")
    p.add_argument("--out", help="output directory (overrides out_dir)")
    p.add_argument("--seed", type=int, help="unsigned 64-bit seed (overrides seed)")
    p.add_argument("--verify", metavar="MANIFEST", help="re-run a manifest and compare output digests")
    p.add_argument("--version", action="version", version=f"nslog {__version__}")
    return p


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, (ConfigError, DomainError)):
        return EXIT_CONFIG
    if isinstance(exc, (OSError, DataError)):
        return EXIT_IO
    if isinstance(exc, (NumericalError, NslogError, ArithmeticError, FloatingPointError)):
        return EXIT_NUMERICAL
    raise exc


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.verify:
            bad = verify(Path(args.verify), Path(args.out) if args.out else None)
            if bad:
                print(f"nslog: digest mismatch: {', '.join(bad)}", file=sys.stderr)
                return EXIT_IO
            print("nslog: all output digests match")
            return EXIT_OK
        if not args.config:
            raise ConfigError("--config is required")
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise OSError(f"cannot read config {args.config}: {exc.strerror}") from exc
        cfg = parse_config(text)
        if cfg.mode != args.mode:
            raise ConfigError(f"config declares mode {cfg.mode!r} but {args.mode!r} was requested", key="mode")
        changes = {}
        if args.seed is not None:
            changes["seed"] = args.seed
        if args.out:
            changes["out_dir"] = args.out
        if changes:
            cfg = cfg.with_run(**changes)
        execute(cfg, Path(cfg["run"]["out_dir"]))
        return EXIT_OK
    except Exception as exc:  # noqa: BLE001 - mapped to exit codes
        code = _exit_code(exc)
        print(f"nslog: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
