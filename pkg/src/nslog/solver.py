"""Pseudo-spectral Navier-Stokes with fractional dissipation on the periodic box.

The velocity lives in Fourier space.  Time stepping is the Lawson
integrating-factor RK4 scheme: the linear term ``nu |k|^(2s)`` is
integrated exactly, the projected nonlinear term explicitly.  The
nonlinearity is evaluated in rotational form ``P(u x curl u)``, which
equals ``-P((u.grad) u)`` because the two differ by a gradient.

Energies and dissipation rates are box integrals: ``energy = |u|_2^2 / 2``
and ``eps_rate = nu |(-Lap)^(s/2) u|_2^2``, so ``dE/dt = -eps_rate`` for
unforced runs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields as dc_fields, replace
from typing import Optional

import numpy as np

from . import formulas
from . import spectral as sp
from .errors import ConfigError, ConstructionError, DivergenceError, PreconditionError, StabilityError
from .spectral import Grid, PhysField, SpecField

DIV_TOL = 1e-8


@dataclass(frozen=True)
class Forcing:
    """Constant-power forcing on the shells ``k_lo <= |k| <= k_hi``."""

    rate: float
    k_lo: float = 1.0
    k_hi: float = 2.0

    def __post_init__(self):
        if not self.rate > 0:
            raise ConfigError("forcing rate must be positive", key="forcing.rate")
        if not 0 < self.k_lo <= self.k_hi:
            raise ConfigError("forcing shells must satisfy 0 < k_lo <= k_hi", key="forcing.k_lo")


@dataclass(frozen=True)
class SolverConfig:
    nu: float
    s: float = 1.0
    t_end: float = 1.0
    dt: Optional[float] = None
    cfl: Optional[float] = None
    dealias: bool = True
    forcing: Optional[Forcing] = None
    record_every: float = 0.01
    q: float = 12.0
    params: formulas.LogLadderParams = field(default_factory=formulas.LogLadderParams)

    def __post_init__(self):
        if not self.nu > 0:
            raise ConfigError("must be positive", key="nu")
        if not 0.5 < self.s <= 1.0:
            raise ConfigError(f"s={self.s} must lie in (1/2, 1]", key="s")
        if not self.t_end >= 0:
            raise ConfigError("must be non-negative", key="t_end")
        if (self.dt is None) == (self.cfl is None):
            raise ConfigError("exactly one of dt and cfl must be set", key="dt")
        if self.dt is not None and not self.dt > 0:
            raise ConfigError("must be positive", key="dt")
        if self.cfl is not None and not 0 < self.cfl < 1:
            raise ConfigError("must lie in (0, 1)", key="cfl")
        if not self.record_every > 0:
            raise ConfigError("must be positive", key="record_every")
        if not self.q >= 1:
            raise ConfigError("must be >= 1", key="q")
        if not math.isfinite(self.p_scaling):
            raise ConfigError(f"2s - 1 - 3/q must be positive for the time exponent, got s={self.s}, q={self.q}",
                              key="q")

    @property
    def p_scaling(self) -> float:
        """Time exponent ``p`` with ``2/p + 3/q = 2s - 1``."""
        gap = 2.0 * self.s - 1.0 - 3.0 / self.q
        return 2.0 / gap if gap > 1e-14 else math.nan


@dataclass(frozen=True)
class SolverState:
    t: float
    u: SpecField
    criterion_accum: float = 0.0
    grad2_accum: float = 0.0
    dissipation_accum: float = 0.0
    integrands: tuple = ()


@dataclass(frozen=True)
class DiagnosticsRecord:
    t: float
    energy: float
    hs_semi: float
    frac_lq_half: float
    frac_lq_full: float
    grad_linf: float
    eps_rate: float
    criterion_accum: float
    grad2_accum: float
    eps_rate_s1: float
    dissipation_accum: float
    lq_root_lap: float
    div_ratio: float

    @classmethod
    def columns(cls) -> list:
        return [f.name for f in dc_fields(cls)]

    def row(self) -> list:
        return [getattr(self, c) for c in self.columns()]


@dataclass
class RunResult:
    final: SolverState
    records: list


# ---------------------------------------------------------------- initial data

def _vector(grid: Grid, *comps) -> PhysField:
    zero = np.zeros(grid.npts)
    comps = list(comps) + [zero] * (grid.rank - len(comps))
    return PhysField(grid, np.stack(comps[: grid.rank]))


def make_shear(grid: Grid, k: int = 1, amp: float = 1.0) -> PhysField:
    """``(amp sin(k y), 0, 0)``: an exact solution with vanishing nonlinearity."""
    if not (isinstance(k, (int, np.integer)) and k >= 1):
        raise ConfigError("shear wavenumber must be a positive integer", key="k")
    if k > grid.npts[1] // 3:
        raise ConfigError(f"k={k} exceeds the dealiased band (npts/3 = {grid.npts[1] // 3})", key="k")
    y = grid.coords()[1]
    return _vector(grid, amp * np.sin(k * _unit(grid, 1) * y))


def _unit(grid: Grid, axis: int) -> float:
    """Fundamental wavenumber along ``axis``."""
    return 2.0 * math.pi / grid.box[axis]


def make_taylor_green_2d(grid: Grid, amp: float = 1.0) -> PhysField:
    """``amp (sin x cos y, -cos x sin y)``; for s = 1 it decays as ``exp(-2 nu t)``."""
    if grid.rank != 2:
        raise ConfigError("Taylor-Green fixture needs a 2D grid", key="rank")
    x, y = grid.coords()
    x = x * _unit(grid, 0)
    y = y * _unit(grid, 1)
    return PhysField(grid, amp * np.stack([np.sin(x) * np.cos(y), -np.cos(x) * np.sin(y)]))


def make_random_divfree(grid: Grid, spectrum_slope: float = -5.0 / 3.0, k_range=(1.0, 4.0),
                        seed: int = 0, energy: float = 0.5) -> PhysField:
    """Gaussian divergence-free field whose unit-shell energies follow ``k**slope``.

    Shells are the integer bins ``round(|k|)`` inside ``k_range``; ``energy``
    is the kinetic energy per unit volume.
    """
    kmin, kmax = (float(v) for v in k_range)
    if not 0 < kmin <= kmax:
        raise ConfigError(f"empty wavenumber range {k_range}", key="k_range")
    if kmax > grid.dealias_kmax:
        raise ConfigError(f"k_range upper end {kmax} exceeds the dealias limit {grid.dealias_kmax}",
                          key="k_range")
    rng = np.random.default_rng(seed)
    c = sp.fft(rng.standard_normal((grid.rank,) + grid.npts), grid.rank)
    c = sp.leray_coeffs(grid, c)
    shell = np.rint(grid.kmag).astype(int)
    inside = (grid.kmag >= kmin) & (grid.kmag <= kmax) & (grid.k2 > 0)
    c = c * inside
    power = np.sum(np.abs(c) ** 2, axis=0)
    e_shell = np.bincount(shell[inside], weights=0.5 * power[inside])
    scale = np.zeros_like(e_shell)
    ks = np.arange(len(e_shell))
    ok = e_shell > 0
    scale[ok] = np.sqrt(ks[ok].astype(float) ** spectrum_slope / e_shell[ok])
    if not ok.any():
        raise ConfigError(f"no lattice modes inside {k_range}", key="k_range")
    c = c * np.where(inside, scale[np.minimum(shell, len(scale) - 1)], 0.0)
    c *= math.sqrt(energy / (0.5 * np.sum(np.abs(c) ** 2)))
    return PhysField(grid, sp.ifft(c, grid.rank))


def _shell_cutoff(x):
    """Smooth radial cutoff: 1 on [1, 2], 0 outside [1/2, 3]."""
    rise = sp._smooth_step((np.asarray(x) - 0.5) / 0.5)
    fall = 1.0 - sp._smooth_step(np.asarray(x) - 2.0)
    return rise * fall


def shell_datum_spec(grid: Grid, r: float) -> SpecField:
    """Coefficients of ``w_r(x) = r w(r x)`` with ``w_hat = |xi|^(-5/2) eta(|xi|) P_xi a``."""
    if not r > 0:
        raise ConfigError("r must be positive", key="r")
    if 3.0 * r > grid.dealias_kmax:
        raise ConfigError(f"support [r/2, 3r] = [{r / 2}, {3 * r}] exceeds the dealias limit "
                          f"{grid.dealias_kmax}", key="r")
    a = np.arange(1.0, grid.rank + 1.0)
    a /= np.linalg.norm(a)
    kmag = grid.kmag
    nz = kmag > 0
    amp = np.zeros(grid.npts)
    amp[nz] = math.sqrt(r) * kmag[nz] ** -2.5 * _shell_cutoff(kmag[nz] / r)
    c = np.stack([np.full(grid.npts, ai, dtype=complex) for ai in a]) * amp
    c = sp.leray_coeffs(grid, c)
    # continuum transform -> Fourier-series coefficients on the box
    return SpecField(grid, c / grid.volume)


def make_shell_datum(grid: Grid, r: float) -> PhysField:
    return sp.inverse(shell_datum_spec(grid, r))


@dataclass(frozen=True)
class ScaledDatum:
    field: PhysField
    hs_semi: float
    frac_lq_half: float


def make_scaled_family(base: PhysField, lam: float, s: float, q: float, target: float,
                       tol: float = 1e-10) -> ScaledDatum:
    """Scalar multiple of ``base`` with ``H^s`` seminorm ``lam``.

    Both norms scale linearly, so ``target`` for the ``(-Lap)^(s/2)`` Lq norm
    is attainable only on the ray fixed by ``base``; anything else raises
    :class:`ConstructionError`.
    """
    if not lam > 0:
        raise ConfigError("lambda must be positive", key="lambda")
    n = sp.norms(base, s, q)
    if n.hs_semi == 0:
        raise ConstructionError("base profile has zero H^s seminorm")
    a = lam / n.hs_semi
    achieved = a * n.frac_lq_half
    if abs(achieved - target) > tol * max(abs(target), achieved):
        raise ConstructionError(
            f"target Lq norm {target} is off the profile ray (scalar rescale gives {achieved})")
    return ScaledDatum(PhysField(base.grid, a * base.data), lam, achieved)


@dataclass(frozen=True)
class Admissibility:
    lhs: float
    rhs: float
    admissible: bool


def admissibility_check(u0: PhysField, s: float, q: float, params: formulas.LogLadderParams) -> Admissibility:
    g = sp.forward(u0)
    if sp.divergence_ratio(g) > DIV_TOL:
        raise PreconditionError("initial datum is not divergence-free")
    n = sp.norms_from_spec(g, s, q)
    rhs = params.c0 / formulas.log_weight(n.hs_semi, params)
    return Admissibility(n.frac_lq_half, rhs, n.frac_lq_half <= rhs)


# ---------------------------------------------------------------- time stepping

class _Operators:
    """Per-(grid, config) multipliers shared across steps."""

    def __init__(self, grid: Grid, cfg: SolverConfig):
        self.grid = grid
        self.cfg = cfg
        self.lin = cfg.nu * sp.frac_multiplier(grid, cfg.s)
        self.mask = grid.dealias_mask if cfg.dealias else None
        self.frac_full = sp.frac_multiplier(grid, cfg.s)
        self.root_lap = sp.frac_multiplier(grid, 0.5)
        self.band = None
        if cfg.forcing is not None:
            f = cfg.forcing
            self.band = (grid.kmag >= f.k_lo) & (grid.kmag <= f.k_hi)
        self._exp_cache = {}

    def exps(self, h: float):
        if h not in self._exp_cache:
            if len(self._exp_cache) > 8:
                self._exp_cache.clear()
            self._exp_cache[h] = (np.exp(-0.5 * h * self.lin), np.exp(-h * self.lin))
        return self._exp_cache[h]

    def nonlinear(self, c: np.ndarray) -> np.ndarray:
        grid = self.grid
        rank = grid.rank
        if self.mask is not None:
            c = c * self.mask
        u = sp.ifft(c, rank)
        w = sp.ifft(sp.curl_coeffs(grid, c), rank)
        if rank == 2:
            cross = np.stack([u[1] * w[0], -u[0] * w[0]])
        else:
            cross = np.stack([
                u[1] * w[2] - u[2] * w[1],
                u[2] * w[0] - u[0] * w[2],
                u[0] * w[1] - u[1] * w[0],
            ])
        n = sp.fft(cross, rank)
        if self.mask is not None:
            n = n * self.mask
        n = sp.leray_coeffs(grid, n)
        if self.band is not None:
            n = n + self.forcing_coeffs(c)
        return n

    def forcing_coeffs(self, c: np.ndarray) -> np.ndarray:
        band_c = c * self.band
        e_band = 0.5 * self.grid.volume * float(np.sum(np.abs(band_c) ** 2))
        if e_band == 0:
            return np.zeros_like(c)
        return self.cfg.forcing.rate / (2.0 * e_band) * band_c

    def integrands(self, c: np.ndarray) -> tuple:
        """``(criterion, |grad u|_inf^2, dissipation)`` at one snapshot."""
        grid, cfg = self.grid, self.cfg
        x = sp.lq_norm(grid, sp.ifft(c * self.frac_full, grid.rank), cfg.q)
        crit = x ** cfg.p_scaling / formulas.log_weight(x, cfg.params) if x > 0 else 0.0
        g = float(sp.grad_magnitude(SpecField(grid, c)).max())
        diss = cfg.nu * grid.volume * float(np.sum(self.frac_full * np.sum(np.abs(c) ** 2, axis=0)))
        return crit, g * g, diss


def initial_state(u0: PhysField, cfg: SolverConfig) -> SolverState:
    g = sp.forward(u0)
    if g.ncomp != u0.grid.rank:
        raise ConfigError("initial datum must have one component per axis", key="ncomp")
    if sp.divergence_ratio(g) > DIV_TOL:
        raise PreconditionError("initial datum is not divergence-free")
    c = sp.leray_coeffs(u0.grid, g.coeffs)
    return SolverState(0.0, SpecField(u0.grid, c), integrands=_Operators(u0.grid, cfg).integrands(c))


def _rk4(ops: _Operators, c: np.ndarray, h: float) -> np.ndarray:
    e_half, e_full = ops.exps(h)
    k1 = ops.nonlinear(c)
    k2 = ops.nonlinear(e_half * (c + 0.5 * h * k1))
    k3 = ops.nonlinear(e_half * c + 0.5 * h * k2)
    k4 = ops.nonlinear(e_full * c + h * e_half * k3)
    return e_full * c + (h / 6.0) * (e_full * k1 + 2.0 * e_half * (k2 + k3) + k4)


def _cfl_dt(ops: _Operators, c: np.ndarray) -> float:
    u = sp.ifft(c, ops.grid.rank)
    umax = float(np.max(np.abs(u)))
    dx = min(ops.grid.dx)
    return ops.cfg.cfl * dx / umax if umax > 0 else math.inf


def step(state: SolverState, cfg: SolverConfig, h: Optional[float] = None, _ops=None) -> SolverState:
    """Advance one IF-RK4 step of size ``h`` (default: ``cfg.dt`` or the CFL step)."""
    ops = _ops or _Operators(state.u.grid, cfg)
    c = state.u.coeffs
    if h is None:
        h = cfg.dt if cfg.dt is not None else _cfl_dt(ops, c)
    if not (h > 1e-12 * max(1.0, abs(state.t)) and math.isfinite(h)):
        raise StabilityError(f"time step {h} underflowed at t={state.t}")
    t_new = state.t + h
    with np.errstate(over="ignore", invalid="ignore"):
        c_new = sp.leray_coeffs(ops.grid, _rk4(ops, c, h))
        if not np.all(np.isfinite(c_new)):
            raise DivergenceError(f"non-finite velocity at t={t_new}", t_new)
        new = ops.integrands(c_new)
    if not all(math.isfinite(v) for v in new):
        raise DivergenceError(f"diagnostics overflowed at t={t_new}", t_new)
    old = state.integrands or ops.integrands(c)
    acc = [a + 0.5 * h * (f0 + f1) for a, f0, f1 in zip(
        (state.criterion_accum, state.grad2_accum, state.dissipation_accum), old, new)]
    return SolverState(t_new, SpecField(ops.grid, c_new), *acc, integrands=new)


def record(state: SolverState, cfg: SolverConfig) -> DiagnosticsRecord:
    g = state.u
    grid = g.grid
    n = sp.norms_from_spec(g, cfg.s, cfg.q)
    e_grad = grid.volume * float(np.sum(grid.k2 * np.sum(np.abs(g.coeffs) ** 2, axis=0)))
    return DiagnosticsRecord(
        t=state.t,
        energy=0.5 * n.l2 ** 2,
        hs_semi=n.hs_semi,
        frac_lq_half=n.frac_lq_half,
        frac_lq_full=n.frac_lq_full,
        grad_linf=n.grad_linf,
        eps_rate=cfg.nu * n.hs_semi ** 2,
        criterion_accum=state.criterion_accum,
        grad2_accum=state.grad2_accum,
        eps_rate_s1=cfg.nu * e_grad,
        dissipation_accum=state.dissipation_accum,
        lq_root_lap=sp.lq_norm(grid, sp.ifft(g.coeffs * sp.frac_multiplier(grid, 0.5), grid.rank), cfg.q),
        div_ratio=sp.divergence_ratio(g),
    )


def run(u0: PhysField, cfg: SolverConfig, *, on_record=None) -> RunResult:
    """Integrate to ``cfg.t_end``, recording every ``cfg.record_every`` time units.

    Steps are shortened so that every record time is hit exactly.
    ``on_record(state)`` is called at each record, including the initial one.
    """
    ops = _Operators(u0.grid, cfg)
    state = initial_state(u0, cfg)
    records = [record(state, cfg)]
    if on_record is not None:
        on_record(state)
    n_rec = 1
    eps_t = 1e-12 * max(1.0, cfg.t_end)
    while state.t < cfg.t_end - eps_t:
        t_rec = min(n_rec * cfg.record_every, cfg.t_end)
        h = cfg.dt if cfg.dt is not None else _cfl_dt(ops, state.u.coeffs)
        remaining = t_rec - state.t
        if h >= remaining - eps_t:
            h = remaining
        elif remaining < 2 * h:
            h = 0.5 * remaining
        state = step(state, cfg, h, ops)
        if abs(state.t - t_rec) <= eps_t:
            state = replace(state, t=t_rec)
            records.append(record(state, cfg))
            n_rec += 1
            if on_record is not None:
                on_record(state)
    return RunResult(state, records)


@dataclass(frozen=True)
class DecayAudit:
    violations: int
    margin: float


def decay_audit(records, pack: formulas.ExponentPack, c_env: float, beta_env: float) -> DecayAudit:
    """Compare ``hs_semi(t)`` against ``c_env hs_semi(0) / (1 + beta_env t)**gamma_decay``."""
    if not records:
        raise ConfigError("decay audit needs at least one record", key="records")
    h0 = records[0].hs_semi
    violations = 0
    margin = math.inf
    for r in records:
        env = c_env * h0 / (1.0 + beta_env * r.t) ** pack.gamma_decay
        if r.hs_semi > env:
            violations += 1
        if r.hs_semi > 0:
            margin = min(margin, env / r.hs_semi)
    return DecayAudit(violations, margin)
