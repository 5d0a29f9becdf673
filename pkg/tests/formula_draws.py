"""Random-draw comparison of every formula against the 50-digit oracle."""
import math

import numpy as np
from mpmath import mpf

import oracle
from nslog import formulas as fc


def rel_err(got, want, scale=0):
    """Relative error; ``scale`` is the summed magnitude of terms for sums that may cancel."""
    want = mpf(want)
    got = mpf(got)
    if got == want:
        return 0.0
    denom = max(abs(want), mpf(scale))
    if denom == 0:
        return math.inf
    return float(abs(got - want) / denom)


def _ladder(rng, n_max=4):
    n = int(rng.integers(0, n_max + 1))
    deltas = tuple(float(d) for d in rng.uniform(0.0, 3.0, n))
    cs = tuple(float(c) for c in rng.uniform(0.1, 3.0, n))
    return fc.LogLadderParams(deltas, cs, c0=float(rng.uniform(0.1, 3)), c3=float(rng.uniform(0.1, 3)))


def _s(rng):
    return float(rng.uniform(0.501, 0.999))


def _q(rng):
    return float(rng.uniform(3.01, 50.0))


def _x(rng):
    return float(10 ** rng.uniform(-4, 6))


def draw_errors(n_draws=1000, seed=20261019):
    """Maximum relative error per operation over ``n_draws`` random inputs."""
    rng = np.random.default_rng(seed)
    worst = {}

    def record(name, err):
        worst[name] = max(worst.get(name, 0.0), err)

    for _ in range(n_draws):
        j = int(rng.integers(0, 6))
        x = _x(rng)
        record("nested_log", rel_err(fc.nested_log(j, x), oracle.L(j, x)))

        p = _ladder(rng)
        record("log_weight", rel_err(fc.log_weight(x, p), oracle.weight(x, p.deltas)))

        p1 = _ladder(rng)
        if p1.n == 0:
            p1 = fc.LogLadderParams((1.0,))
        f1, f2 = fc.commutator_factors(x, p1)
        o1, o2 = oracle.factors(x, p1.deltas)
        record("commutator_factors", max(rel_err(f1, o1), rel_err(f2, o2)))

        s, q, eta = _s(rng), _q(rng), float(rng.uniform(0, 0.1))
        pk = fc.exponent_pack(s, q, eta)
        opk = oracle.pack(s, q, eta)
        errs = [rel_err(getattr(pk, k), v) for k, v in opk.items() if k != "p_scaling"]
        if math.isfinite(pk.p_scaling):
            errs.append(rel_err(pk.p_scaling, opk["p_scaling"]))
        record("exponent_pack", max(errs))

        record("alpha_threshold", rel_err(fc.alpha_threshold(p), oracle.alpha(p.deltas, p.cs)))

        cq = float(rng.uniform(0.1, 5))
        record("threshold_asymptote",
               rel_err(fc.threshold_asymptote(s, cq, p), oracle.asymptote(s, cq, p.deltas, p.cs)))

        # pathway level: compare the selected prefix against oracle alphas
        target = 1 / math.log(1 / (s - 0.5))
        got = fc.pathway_level(s, p)
        want = next((n for n in range(1, p.n + 1) if oracle.alpha(p.deltas[:n], p.cs[:n]) < target), None)
        record("pathway_level", 0.0 if got == want else math.inf)

        bp = fc.blowup_exponents(s, q, p)
        ob = oracle.blowup(s, q, p.deltas)
        vel_scale = 0.5 + sum(d / ((1 + d) * (2 + d)) for d in p.deltas)
        record("blowup_exponents", max(rel_err(getattr(bp, k), v, vel_scale if k == "velocity_exp" else 1)
                                       for k, v in ob.items()))

        eps = float(10 ** rng.uniform(-6, 0))
        g = fc.exceptional_geometry(eps, p)
        og = oracle.exceptional(eps, p.deltas)
        dim_scale = 3 + abs(3 - float(og["raw"]))
        record("exceptional_geometry", max(rel_err(g.raw_dim_bound, og["raw"], dim_scale),
                                           rel_err(g.dim_bound, og["dim_bound"], dim_scale),
                                           rel_err(g.theta_eps, og["theta_eps"])))

        m = fc.multifractal_model(s, p)
        pp = float(rng.uniform(0.1, 8))
        h = float(rng.uniform(-2, 3))
        om = oracle.multifractal(s, p.deltas, pp, h)
        zeta_scale = pp / 3 + abs(float(om["intermit"]))
        record("multifractal_model", max(rel_err(m.D(h), om["D"], 3), rel_err(m.zeta(pp), om["zeta"], zeta_scale),
                                         rel_err(m.intermit(pp), om["intermit"])))

        k0 = float(rng.uniform(0.5, 4))
        k = k0 * float(10 ** rng.uniform(0, 4))
        t = float(rng.uniform(0, 50))
        gam = float(rng.uniform(0.5, 10))
        eps_rate = float(rng.uniform(0.1, 3))
        model = fc.SpectralModelParams(
            k0=k0, eps_rate=eps_rate, nu=float(rng.uniform(1e-3, 1)), kolmogorov_c=float(rng.uniform(0.5, 2)),
            beta0=tuple(rng.uniform(0.1, 2, p.n)), small_c=float(rng.uniform(0.1, 2)), flux_c=float(rng.uniform(0.5, 2)))
        sm = fc.spectral_models(model, p, s, gam)
        errs = [
            rel_err(sm.flux_bound(k), oracle.flux_bound(k, k0, s, p.deltas, model.flux_c, eps_rate)),
            rel_err(sm.model_spectrum(k, t), oracle.model_spectrum(
                k, t, k0, eps_rate, model.kolmogorov_c, model.beta0, gam, p.deltas)),
        ]
        lim = oracle.limiting_spectrum(k, t, eps_rate, model.kolmogorov_c, model.nu, model.small_c)
        if lim > 1e-290:  # below this the double result is subnormal or zero
            errs.append(rel_err(sm.limiting_spectrum(k, t), lim))
        if t > 0:
            errs.append(rel_err(sm.psi_ratio(t), (mpf(model.nu) * mpf(t)) ** (-mpf(1) / 4)))
        record("spectral_models", max(errs))

        lam = float(10 ** rng.uniform(0, 6))
        d = fc.dichotomy_omega(lam, s, q, p)
        record("dichotomy_omega", rel_err(d.omega, oracle.omega(lam, s, p.deltas, p.cs, p.c3)))
    return worst
