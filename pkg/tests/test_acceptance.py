"""Acceptance suite: one test per criterion, each logging a PASS/FAIL line."""
import math

import numpy as np
import pytest
from mpmath import findroot, mpf

import fields
import oracle
from formula_draws import draw_errors
from nslog import cli, formulas as fc, ode, solver as so, spectral as sp
from nslog import diagnostics as dg
from nslog.spectral import Grid


def test_1_formula_oracle(criterion):
    worst = draw_errors(n_draws=1000)
    name, err = max(worst.items(), key=lambda kv: kv[1])
    ok = err <= 1e-12
    criterion(1, ok, f"{len(worst)} operations x 1000 draws, worst {name} rel err {err:.2e} (tol 1e-12)")
    assert ok


DUALITY_CONFIGS = [
    (0.6, ()), (0.75, ()), (0.9, ()),
    (0.7, (1.0,)), (2 / 3, (0.5, 0.25)), (0.8, (2.0, 1.0, 0.5)),
]


@pytest.mark.xfail(strict=True, reason="the stated quadratic form differs from the Legendre minimum whenever some "
                                       "delta_j > 0; see the decisions ledger")
def test_2_legendre_duality(criterion):
    ps = np.arange(0.5, 8.01, 0.5)
    worst = {True: 0.0, False: 0.0}
    zeta3 = 0.0
    for s, deltas in DUALITY_CONFIGS:
        m = fc.multifractal_model(s, fc.LogLadderParams(deltas))
        for p in ps:
            gap = abs(m.legendre_numeric(float(p)) - m.zeta_quadratic(float(p)))
            worst[not deltas] = max(worst[not deltas], gap)
        zeta3 = max(zeta3, abs(m.zeta(3.0) - 1.0))
    ok = max(worst.values()) <= 1e-8 and zeta3 <= 1e-14
    criterion(2, ok, f"{len(DUALITY_CONFIGS)} configs, max |Legendre - quadratic| {worst[True]:.1e} at delta=0, "
                     f"{worst[False]:.2e} at delta>0 (tol 1e-8), max |zeta(3) - 1| {zeta3:.1e} (tol 1e-14)")
    assert ok


def test_3_ode_engine(criterion):
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(100):
        o = ode.ComparisonOde(float(rng.uniform(0.2, 3)), float(rng.uniform(0.2, 3)), float(rng.uniform(0.2, 2.5)))
        tr = ode.integrate(o.rhs, o.y0, 0.9 * o.blow_up_time, 1e-11)
        z = np.array([ode.closed_form_z(o, t) for t in tr.times])
        worst = max(worst, float(np.max(np.abs(tr.values - z) / z)))
    o = ode.ComparisonOde(2.0, 1.0, 1.0)
    tr = ode.integrate(o.rhs, 2.0, 1.0, 1e-10)
    t_err = abs(tr.t_star - 0.5) / 0.5
    fine = ode.integrate(o.rhs, 2.0, 1.0, 1e-10, max_step=0.005)
    slope = ode.fit_blowup_exponent(fine, fine.t_star)
    s_err = abs(slope + 1.0)
    ok = worst <= 1e-8 and t_err <= 1e-4 and s_err <= 0.02
    criterion(3, ok, f"trajectory rel err {worst:.2e} (tol 1e-8), t* rel err {t_err:.2e} (tol 1e-4), "
                     f"slope {slope:.4f} vs -1 (tol 2%)")
    assert ok


def test_4_solver_exactness(criterion):
    g = Grid((16, 16, 16))
    nu, s, k = 0.1, 0.75, 2
    out = so.run(so.make_shear(g, k), so.SolverConfig(nu=nu, s=s, q=40.0, t_end=1.0, dt=0.01, record_every=0.5))
    amp = (out.final.u.coeffs[0, 0, k, 0] * 2j).real
    shear_err = abs(amp - math.exp(-nu * k ** (2 * s)))

    tg = Grid((64, 64))
    u = so.make_taylor_green_2d(tg)
    out = so.run(u, so.SolverConfig(nu=0.1, s=1.0, t_end=1.0, dt=0.01, record_every=0.25))
    tg_err = float(np.max(np.abs(sp.inverse(out.final.u).data - math.exp(-0.2) * u.data)))

    u = so.make_random_divfree(Grid((32, 32)), -2.0, (1, 8), seed=3, energy=2.0)
    fin = [so.run(u, so.SolverConfig(nu=0.05, t_end=0.5, dt=dt, record_every=0.5)).final.u.coeffs
           for dt in (1e-2, 5e-3, 2.5e-3)]
    order = math.log2(np.max(np.abs(fin[0] - fin[1])) / np.max(np.abs(fin[1] - fin[2])))
    ok = shear_err <= 1e-10 and tg_err <= 1e-6 and order >= 3.9
    criterion(4, ok, f"shear err {shear_err:.1e} (tol 1e-10), Taylor-Green err {tg_err:.1e} (tol 1e-6), "
                     f"RK4 order {order:.3f} (min 3.9)")
    assert ok


def test_5_conservation(criterion):
    g = Grid((32, 32, 32))
    u0 = so.make_random_divfree(g, -5 / 3, (1, 8), seed=5)
    transfer, parseval = [], []

    def on_record(state):
        if round(state.t / 0.1) % 2 == 0:
            f = sp.inverse(state.u)
            transfer.append(dg.transfer_defect(f))
            spec = dg.energy_spectrum(f)
            box = 0.5 * sp.l2_from_coeffs(g, state.u.coeffs) ** 2
            parseval.append(abs(spec.total_energy * g.volume - box) / box)

    cfg = so.SolverConfig(nu=0.05, s=1.0, t_end=1.0, dt=0.0025, record_every=0.1)
    out = so.run(u0, cfg, on_record=on_record)
    e = np.array([r.energy for r in out.records])
    d = np.array([r.dissipation_accum for r in out.records])
    balance = float(np.max(np.abs(np.diff(e) + np.diff(d)) / np.diff(d)))
    div = max(r.div_ratio for r in out.records)
    ok = balance <= 1e-5 and div <= 1e-10 and max(transfer) <= 1e-8 and max(parseval) <= 1e-10
    criterion(5, ok, f"energy balance {balance:.1e} (tol 1e-5), divergence {div:.1e} (tol 1e-10), "
                     f"transfer sum {max(transfer):.1e} (tol 1e-8), Parseval {max(parseval):.1e} (tol 1e-10)")
    assert ok


def test_6_geometry(criterion):
    full = np.ones((64, 64, 64), dtype=bool)
    slab = np.zeros_like(full)
    slab[:, :, 10] = True
    point = np.zeros_like(full)
    point[3, 40, 17] = True
    dims = [dg.box_counting_dimension(m).dimension for m in (full, slab, point)]
    dims_ok = abs(dims[0] - 3) <= 0.05 and abs(dims[1] - 2) <= 0.15 and abs(dims[2]) <= 0.05

    f = fields.random_divfree(Grid((32, 32, 32)), 4)
    eps = [0.5, 0.2, 0.1, 0.05, 0.01, 0.001]
    lams = [dg.exceptional_set(f, e).lambda_eps for e in eps]
    mono = all(b >= a for a, b in zip(lams, lams[1:]))
    trace = dg.alignment_statistics(f).max_trace
    ok = dims_ok and mono and trace <= 1e-10
    criterion(6, ok, f"box dims {dims[0]:.3f}/{dims[1]:.3f}/{dims[2]:.3f} (3+-0.05, 2+-0.15, 0+-0.05), "
                     f"quantiles monotone {mono}, max strain trace {trace:.1e} (tol 1e-10)")
    assert ok


def test_7_model_fit(criterion):
    params = fc.LogLadderParams((0.5, 0.3))
    gamma, eps_rate, ckol, beta0 = 1.2, 0.7, 1.6, (0.8, -0.4)
    k = np.arange(1.0, 200.0)
    m = fc.SpectralModels(fc.SpectralModelParams(eps_rate=eps_rate, kolmogorov_c=ckol, beta0=beta0),
                          params, 0.75, gamma)

    def fit(t):
        spec = dg.ShellSpectrum(k, m.model_spectrum(k, t), 0.0, eps_rate)
        return dg.spectrum_fit(spec, (1, 199), 0.75, params, gamma, t)

    rec = 0.0
    for t in (0.0, 0.5, 3.0):
        r = fit(t)
        want = [m.beta_decay(j, t) for j in (1, 2)]
        rec = max(rec, abs(r.c_kolmogorov - ckol) / ckol,
                  *(abs(b - w) / abs(w) for b, w in zip(r.betas, want)))
    ts = [1.0, 2.0, 4.0, 8.0]
    betas = np.array([fit(t).betas for t in ts])
    x = np.log1p(gamma * np.array(ts))
    alphas = [-np.polyfit(x, np.log(np.abs(betas[:, j])), 1)[0] for j in range(2)]
    want = [2 * gamma / 3 * j / (j + 1) for j in (1, 2)]
    a_err = max(abs(a - w) / w for a, w in zip(alphas, want))
    ok = rec <= 1e-8 and a_err <= 0.05
    criterion(7, ok, f"recovery rel err {rec:.1e} (tol 1e-8), decay exponents "
                     f"{alphas[0]:.4f}/{alphas[1]:.4f} vs {want[0]:.4f}/{want[1]:.4f} (tol 5%)")
    assert ok


AUDIT_CFG = """\
mode = audit
seed = 11
[ladder]
deltas = 1, 0.5
[field]
npts = 16, 16, 16
[audit]
run = true
[solver]
dt = 0.01
t_end = 0.2
record_every = 0.02
"""


def test_8_audit_regression(criterion, tmp_path):
    params = fc.LogLadderParams((1.0,))
    consts = [sp.commutator_audit(fields.smooth_mix(Grid((n, n, n))), 0.6, 0.2, params).fitted_constant
              for n in (16, 32)]
    ratio = max(consts) / min(consts)
    (tmp_path / "audit.cfg").write_text(AUDIT_CFG)
    runs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        assert cli.main(["audit", "--config", str(tmp_path / "audit.cfg"), "--out", str(out)]) == 0
        runs.append({p.name: p.read_bytes() for p in sorted(out.glob("*.csv"))})
    want = {"flux_audit.csv", "decay_audit.csv", "alignment.csv", "ratio.csv"}
    same = want <= set(runs[0]) and runs[0] == runs[1]
    ok = ratio <= 2.0 and same
    criterion(8, ok, f"commutator constant 16^3 -> 32^3 ratio {ratio:.3f} (max 2), "
                     f"{len(runs[0])} audit CSVs bit-identical {same}")
    assert ok


@pytest.mark.parametrize("deltas, c3", [((), 1.0), ((1.0, 1.0), 20.0)])
def test_9_sweep_end_to_end(criterion, tmp_path, deltas, c3):
    dl = ", ".join(map(str, deltas))
    (tmp_path / "sweep.cfg").write_text(
        f"mode = sweep\n[ladder]\ndeltas = {dl}\nc3 = {c3}\n[sweep]\ns = 0.75\nlambda_max = 1e8\n")
    out = tmp_path / "out"
    assert cli.main(["sweep", "--config", str(tmp_path / "sweep.cfg"), "--out", str(out)]) == 0
    lines = (out / "crossing.csv").read_text().splitlines()
    lo, hi, star, _ = map(float, lines[1].split(","))
    root = findroot(lambda y: oracle.omega(mpf(10) ** y, 0.75, deltas, (1,) * len(deltas), c3) - 1,
                    math.log10(star))
    want = float(mpf(10) ** root)
    err = abs(star - want) / want
    ok = len(lines) == 2 and lo <= want <= hi and err <= 1e-6 and (hi - lo) / lo <= 1e-6
    criterion(9, ok, f"delta={deltas}: crossing {star:.10g} vs oracle {want:.10g}, rel err {err:.1e} (tol 1e-6)")
    assert ok
