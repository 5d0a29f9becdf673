import math

import numpy as np
import pytest
from scipy.integrate import quad

from nslog import formulas, solver as so, spectral as sp
from nslog.errors import ConfigError, ConstructionError, DivergenceError, PreconditionError, StabilityError
from nslog.spectral import Grid, PhysField

G16 = Grid((16, 16, 16))
G2 = Grid((32, 32))


def cfg(**kw):
    base = dict(nu=0.1, s=1.0, t_end=1.0, dt=0.01)
    base.update(kw)
    return so.SolverConfig(**base)


def shear_amplitude(state):
    return (state.u.coeffs[0, 0, 1, 0] * 2j).real


class TestConfig:
    @pytest.mark.parametrize("kw", [
        dict(nu=0.0), dict(s=0.5), dict(s=1.2), dict(dt=None), dict(cfl=0.5),
        dict(dt=None, cfl=1.0), dict(record_every=0.0), dict(s=0.75, q=4.0), dict(t_end=-1.0),
    ])
    def test_rejects(self, kw):
        with pytest.raises(ConfigError):
            cfg(**kw)

    def test_time_exponent(self):
        assert cfg(s=0.75, q=12.0).p_scaling == pytest.approx(8.0)

    def test_forcing_validation(self):
        with pytest.raises(ConfigError):
            so.Forcing(rate=0.0)


class TestInitialData:
    def test_shear(self):
        u = so.make_shear(G16, 1, 1.0)
        assert sp.norms(u, 0.5, 2).grad_linf == pytest.approx(1.0)
        ops = so._Operators(G16, cfg())
        assert np.max(np.abs(ops.nonlinear(sp.forward(u).coeffs))) <= 1e-13

    def test_shear_band_limit(self):
        with pytest.raises(ConfigError):
            so.make_shear(G16, 6)

    def test_taylor_green(self):
        u = so.make_taylor_green_2d(Grid((64, 64)), 1.5)
        n = sp.norms(u, 1.0, 2)
        assert 0.5 * n.l2 ** 2 == pytest.approx(1.5 ** 2 * (2 * math.pi) ** 2 / 4, rel=1e-13)
        assert np.max(np.abs(sp.divergence(sp.forward(u)).coeffs)) <= 1e-13
        with pytest.raises(ConfigError):
            so.make_taylor_green_2d(G16)

    def test_random_deterministic(self):
        a = so.make_random_divfree(G16, -5 / 3, (1, 4), seed=11)
        b = so.make_random_divfree(G16, -5 / 3, (1, 4), seed=11)
        c = so.make_random_divfree(G16, -5 / 3, (1, 4), seed=12)
        assert np.array_equal(a.data, b.data)
        assert not np.array_equal(a.data, c.data)

    def test_random_divergence_and_slope(self):
        g = Grid((32, 32, 32))
        u = so.make_random_divfree(g, -2.0, (2, 10), seed=1)
        c = sp.forward(u)
        assert sp.divergence_ratio(c) <= 1e-12
        shell = np.rint(g.kmag).astype(int)
        e = np.bincount(shell.ravel(), weights=0.5 * np.sum(np.abs(c.coeffs) ** 2, axis=0).ravel())
        ks = np.arange(2, 11)
        slope = np.polyfit(np.log(ks), np.log(e[ks]), 1)[0]
        assert slope == pytest.approx(-2.0, abs=0.2)
        assert np.all(e[:2] < 1e-25) and np.all(e[11:] < 1e-25)

    @pytest.mark.parametrize("k_range", [(3, 2), (0, 2), (1, 40)])
    def test_random_bad_range(self, k_range):
        with pytest.raises(ConfigError):
            so.make_random_divfree(G16, -5 / 3, k_range)


class TestShellDatum:
    grid = Grid((128, 128, 128))

    def test_support_and_divergence(self):
        g = so.shell_datum_spec(self.grid, 4.0)
        k = self.grid.kmag
        mag = np.sqrt(np.sum(np.abs(g.coeffs) ** 2, axis=0))
        assert np.all(mag[(k < 2.0) | (k > 12.0)] == 0)
        assert mag.max() > 0
        assert sp.divergence_ratio(g) <= 1e-12

    @pytest.mark.parametrize("s", [0.6, 0.8])
    def test_scaling(self, s):
        vals = [sp.l2_from_coeffs(self.grid, so.shell_datum_spec(self.grid, r).coeffs
                                  * np.sqrt(sp.frac_multiplier(self.grid, s))) / r ** (s - 0.5)
                for r in (2.0, 4.0, 8.0)]
        assert max(vals) / min(vals) <= 1.10

    def test_overflow(self):
        with pytest.raises(ConfigError):
            so.shell_datum_spec(G16, 2.0)

    def test_physical_field(self):
        u = so.make_shell_datum(Grid((32, 32, 32)), 2.0)
        assert sp.divergence_ratio(sp.forward(u)) <= 1e-12


class TestScaledFamily:
    base = so.make_shear(G16, 2, 0.3)

    def test_identity(self):
        n = sp.norms(self.base, 0.75, 4)
        out = so.make_scaled_family(self.base, n.hs_semi, 0.75, 4, n.frac_lq_half)
        assert np.allclose(out.field.data, self.base.data, rtol=1e-14, atol=0)

    def test_doubling(self):
        n = sp.norms(self.base, 0.75, 4)
        out = so.make_scaled_family(self.base, 2 * n.hs_semi, 0.75, 4, 2 * n.frac_lq_half)
        assert np.allclose(out.field.data, 2 * self.base.data, rtol=1e-14, atol=0)
        assert out.hs_semi == pytest.approx(2 * n.hs_semi)

    def test_off_ray(self):
        n = sp.norms(self.base, 0.75, 4)
        with pytest.raises(ConstructionError):
            so.make_scaled_family(self.base, n.hs_semi, 0.75, 4, 1.5 * n.frac_lq_half)

    def test_zero_base(self):
        with pytest.raises(ConstructionError):
            so.make_scaled_family(PhysField(G16, np.zeros((3,) + G16.npts)), 1.0, 0.75, 4, 0.0)


class TestAdmissibility:
    params = formulas.LogLadderParams((0.1,))

    def test_zero(self):
        a = so.admissibility_check(PhysField(G16, np.zeros((3,) + G16.npts)), 0.75, 4, self.params)
        assert a.lhs == 0 and a.rhs > 0 and a.admissible

    def test_small_c0(self):
        u = so.make_shear(G16, 1, 0.01)
        a = so.admissibility_check(u, 0.75, 4, formulas.LogLadderParams((0.1,), c0=1e-9))
        assert not a.admissible

    def test_shear_baseline(self):
        u = so.make_shear(G16, 1, 0.01)
        a = so.admissibility_check(u, 0.75, 4, self.params)
        # |sin|_4 over the box is ((3/8) (2 pi)^3)^(1/4); L2 seminorm is amp (2 pi)^(3/2) / sqrt(2)
        lhs = 0.01 * (3 / 8 * (2 * math.pi) ** 3) ** 0.25
        hs = 0.01 * (2 * math.pi) ** 1.5 / math.sqrt(2)
        assert a.lhs == pytest.approx(lhs, rel=1e-12)
        assert a.rhs == pytest.approx(1.0 / (1 + formulas.nested_log(1, hs)) ** 0.1, rel=1e-12)
        assert a.admissible

    def test_divergent(self):
        x = G16.coords()[0]
        with pytest.raises(PreconditionError):
            so.admissibility_check(PhysField(G16, np.stack([np.sin(x), 0 * x, 0 * x])), 0.75, 4, self.params)


class TestStep:
    def test_shear_exact(self):
        c = cfg(nu=0.1, s=0.75)
        st = so.initial_state(so.make_shear(G16, 1, 1.0), c)
        for _ in range(100):
            st = so.step(st, c)
        assert st.t == pytest.approx(1.0, abs=1e-13)
        assert shear_amplitude(st) == pytest.approx(math.exp(-0.1), abs=1e-10)

    @pytest.mark.parametrize("k,s", [(2, 0.6), (3, 1.0)])
    def test_shear_dt_independent(self, k, s):
        res = []
        for dt in (0.05, 0.01):
            out = so.run(so.make_shear(G16, k, 1.0), cfg(nu=0.2, s=s, q=40.0, dt=dt, record_every=0.5)).final
            res.append((out.u.coeffs[0, 0, k, 0] * 2j).real)
        want = math.exp(-0.2 * k ** (2 * s))
        assert res[0] == pytest.approx(want, abs=1e-12)
        assert res[1] == pytest.approx(want, abs=1e-12)

    def test_zero_field(self):
        st = so.initial_state(PhysField(G16, np.zeros((3,) + G16.npts)), cfg())
        assert not np.any(so.step(st, cfg()).u.coeffs)

    def test_taylor_green(self):
        g = Grid((64, 64))
        u = so.make_taylor_green_2d(g)
        out = so.run(u, cfg(nu=0.1, s=1.0, dt=0.01, record_every=0.25))
        err = np.max(np.abs(sp.inverse(out.final.u).data - math.exp(-0.2) * u.data))
        assert err <= 1e-6

    def test_rk4_order(self):
        u = so.make_random_divfree(G2, -2.0, (1, 8), seed=3, energy=2.0)
        fin = [so.run(u, cfg(nu=0.05, t_end=0.5, dt=dt, record_every=0.5)).final.u.coeffs
               for dt in (1e-2, 5e-3, 2.5e-3)]
        e1 = np.max(np.abs(fin[0] - fin[1]))
        e2 = np.max(np.abs(fin[1] - fin[2]))
        assert math.log2(e1 / e2) >= 3.9

    def test_blowup_reported(self):
        u = so.make_random_divfree(G2, -1.0, (1, 8), seed=0, energy=1e8)
        with pytest.raises(DivergenceError) as info:
            so.run(u, cfg(nu=1e-3, dt=0.5, record_every=0.5, t_end=50.0))
        assert info.value.t > 0

    def test_dt_underflow(self):
        st = so.initial_state(so.make_shear(G16), cfg())
        with pytest.raises(StabilityError):
            so.step(st, cfg(), 1e-15)

    def test_cfl_policy(self):
        c = cfg(dt=None, cfl=0.5, t_end=0.1, record_every=0.05)
        out = so.run(so.make_random_divfree(G2, -2.0, (1, 6), seed=2), c)
        assert [r.t for r in out.records] == pytest.approx([0.0, 0.05, 0.1])


class TestRun:
    def test_t_end_zero(self):
        u = so.make_shear(G16)
        out = so.run(u, cfg(t_end=0.0))
        assert len(out.records) == 1
        assert out.final.t == 0.0
        assert np.allclose(sp.inverse(out.final.u).data, u.data, atol=1e-15)

    def test_unforced_energy_and_balance(self):
        u = so.make_random_divfree(G2, -5 / 3, (1, 8), seed=5)
        out = so.run(u, cfg(nu=0.02, t_end=0.5, dt=0.0025))
        e = np.array([r.energy for r in out.records])
        d = np.array([r.dissipation_accum for r in out.records])
        assert np.all(np.diff(e) < 0)
        assert np.max(np.abs(np.diff(e) + np.diff(d)) / np.diff(d)) <= 1e-5
        assert max(r.div_ratio for r in out.records) <= 1e-10
        assert np.all(np.diff([r.criterion_accum for r in out.records]) >= 0)

    def test_deterministic(self):
        u = so.make_random_divfree(G2, -5 / 3, (1, 8), seed=5)
        a = so.run(u, cfg(t_end=0.1))
        b = so.run(u, cfg(t_end=0.1))
        assert [r.row() for r in a.records] == [r.row() for r in b.records]

    def test_criterion_quadrature(self):
        params = formulas.LogLadderParams((0.5, 0.25))
        c = cfg(nu=0.1, s=0.75, q=12.0, params=params)
        u = so.make_shear(G16, 1, 0.8)
        out = so.run(u, c)
        x0 = sp.norms(u, 0.75, 12.0).frac_lq_full
        p = c.p_scaling

        def integrand(t):
            x = x0 * math.exp(-0.1 * t)
            return x ** p / formulas.log_weight(x, params)

        want = quad(integrand, 0.0, 1.0, epsabs=0, epsrel=1e-12)[0]
        assert out.final.criterion_accum == pytest.approx(want, rel=1e-4)
        g2 = quad(lambda t: math.exp(-0.2 * t) * 0.64, 0.0, 1.0)[0]
        assert out.final.grad2_accum == pytest.approx(g2, rel=1e-4)

    def test_forcing_injects(self):
        u = so.make_random_divfree(G2, -5 / 3, (1, 6), seed=4)
        out = so.run(u, cfg(nu=0.01, t_end=0.2, dt=0.005, forcing=so.Forcing(rate=1.0)))
        r0, r1 = out.records[0], out.records[-1]
        # injected power is 1 per unit time; dissipation removes the rest
        gain = r1.energy - r0.energy + r1.dissipation_accum
        assert gain == pytest.approx(0.2, rel=1e-3)

    def test_records_columns(self):
        cols = so.DiagnosticsRecord.columns()
        assert cols[:9] == ["t", "energy", "hs_semi", "frac_lq_half", "frac_lq_full", "grad_linf",
                            "eps_rate", "criterion_accum", "grad2_accum"]


class TestDecayAudit:
    records = so.run(so.make_shear(G16, 1, 1.0), cfg(nu=0.1, s=0.75, record_every=0.1)).records
    pack = formulas.exponent_pack(0.75, 12.0)

    def test_huge_envelope(self):
        assert so.decay_audit(self.records, self.pack, 1e9, 1.0).violations == 0

    def test_tiny_envelope(self):
        a = so.decay_audit(self.records, self.pack, 1e-9, 1.0)
        assert a.violations == len(self.records)
        assert a.margin < 1

    def test_calibrated_baseline(self):
        # hs decays like exp(-0.1 t); the envelope with beta = 0.02 stays above it on [0, 1]
        a = so.decay_audit(self.records, self.pack, 1.0, 0.02)
        assert a.violations == 0
        assert a.margin == pytest.approx(1.0, abs=1e-12)

    def test_empty(self):
        with pytest.raises(ConfigError):
            so.decay_audit([], self.pack, 1.0, 1.0)
