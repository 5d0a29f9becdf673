"""Closed-form exponents, weights and model curves for nested-log criteria.

Every function here is a pure evaluation in double precision.  Inputs that
are naturally vectorised (wavenumbers, exponent grids) accept numpy arrays;
the rest take Python floats.  Natural logarithms are used throughout.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DomainError

E = math.e

#: Two values closer than this are treated as equal when deciding branches.
MARGINAL_TOL = 1e-12
#: Tolerance used to decide that the time-integrability exponent is infinite.
P_INF_TOL = 1e-14


@dataclass(frozen=True)
class LogLadderParams:
    """Nested-logarithm ladder: improvement powers and the free constants.

    ``deltas[j-1]`` is the power attached to the j-fold logarithm and
    ``cs[j-1]`` the matching constant in the threshold exponent.  ``c0`` and
    ``c3`` are the admissibility and dichotomy constants.  All free
    constants default to 1.
    """

    deltas: tuple = ()
    cs: Optional[tuple] = None
    c0: float = 1.0
    c3: float = 1.0

    def __post_init__(self):
        deltas = tuple(float(d) for d in self.deltas)
        cs = tuple(1.0 for _ in deltas) if self.cs is None else tuple(float(c) for c in self.cs)
        object.__setattr__(self, "deltas", deltas)
        object.__setattr__(self, "cs", cs)
        if len(cs) != len(deltas):
            raise DomainError(f"cs has length {len(cs)} but deltas has length {len(deltas)}")
        if any(not math.isfinite(d) or d < 0 for d in deltas):
            raise DomainError(f"deltas must be finite and non-negative, got {deltas}")
        if any(not math.isfinite(c) or c <= 0 for c in cs):
            raise DomainError(f"cs must be positive, got {cs}")
        if not (self.c0 > 0 and self.c3 > 0):
            raise DomainError("c0 and c3 must be positive")

    @property
    def n(self) -> int:
        return len(self.deltas)

    def prefix(self, n: int) -> "LogLadderParams":
        """The ladder truncated to its first ``n`` levels."""
        return LogLadderParams(self.deltas[:n], self.cs[:n], self.c0, self.c3)


@dataclass(frozen=True)
class ExponentPack:
    s: float
    q: float
    eta: float
    theta: float
    alpha_gn: float
    mu: float
    gamma_decay: float
    p_scaling: float
    delta01: float
    beta_ode: float


@dataclass(frozen=True)
class SpectralModelParams:
    k0: float = 1.0
    k_nu: float = math.inf
    eps_rate: float = 1.0
    nu: float = 1.0
    kolmogorov_c: float = 1.0
    beta0: tuple = ()
    small_c: float = 1.0
    flux_c: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "beta0", tuple(float(b) for b in self.beta0))
        for name in ("k0", "k_nu", "eps_rate", "nu", "kolmogorov_c", "small_c", "flux_c"):
            if not getattr(self, name) > 0:
                raise DomainError(f"{name} must be positive")
        if self.k_nu <= self.k0:
            raise DomainError(f"k_nu={self.k_nu} must exceed k0={self.k0}")


def _check_s(s: float) -> None:
    if not 0.5 < s < 1.0:
        raise DomainError(f"s={s} must lie in (1/2, 1)")


def _check_sq(s: float, q: float) -> None:
    _check_s(s)
    if not q > 3.0:
        raise DomainError(f"q={q} must exceed 3")


def nested_log(j: int, x):
    """j-fold nested logarithm: ``L_0(x) = x``, ``L_j(x) = log(e + L_{j-1}(x))``.

    Works elementwise on arrays.  For ``j >= 1`` the argument must be
    non-negative and the result is at least 1.
    """
    if j < 0:
        raise DomainError(f"level j={j} must be non-negative")
    if j == 0:
        return x
    if np.any(np.asarray(x) < 0):
        raise DomainError("nested_log requires x >= 0 for j >= 1")
    y = x
    for _ in range(j):
        y = np.log(E + y)
    return y


def _ladder_values(x, n: int) -> list:
    """[L_1(x), ..., L_n(x)] computed incrementally."""
    if np.any(np.asarray(x) < 0):
        raise DomainError("nested logarithms require x >= 0")
    out = []
    y = x
    for _ in range(n):
        y = np.log(E + y)
        out.append(y)
    return out


def log_weight(x, params: LogLadderParams):
    """Product of ``(1 + L_j(x))**delta_j`` over the ladder."""
    w = np.ones_like(np.asarray(x, dtype=float))
    for d, lj in zip(params.deltas, _ladder_values(x, params.n)):
        w = w * (1.0 + lj) ** d
    return w if np.ndim(w) else float(w)


def commutator_factors(z: float, params: LogLadderParams) -> tuple:
    """Log factors ``(F1, F2)`` multiplying the two commutator bound terms.

    The first-level power is not used: both factors involve only levels
    2..n.  ``F1 * F2 == 1`` up to rounding.
    """
    if params.n < 1:
        raise DomainError("commutator factors need at least one ladder level")
    levels = _ladder_values(float(z), params.n)
    tail = 1.0
    for d, lj in zip(params.deltas[1:], levels[1:]):
        tail *= (1.0 + lj) ** d
    l1 = levels[0]
    return l1 / tail, tail / l1


def exponent_pack(s: float, q: float, eta: float = 0.01) -> ExponentPack:
    """Derived interpolation and decay exponents for ``(s, q)``.

    ``p_scaling`` solves ``2/p + 3/q = 2s - 1``.  It is ``inf`` when
    ``3/q == 2s - 1`` and ``nan`` when the right side would force ``p < 0``
    (no admissible time exponent exists).
    """
    _check_sq(s, q)
    if eta < 0:
        raise DomainError(f"eta={eta} must be non-negative")
    theta = 1.5 * q / (3.0 * q - 2.0)
    alpha = 1.5 * (0.5 - 1.0 / q)
    beta = theta * (1.0 - alpha) / (2.0 - theta * alpha)
    mu = beta + eta
    gap = 2.0 * s - 1.0 - 3.0 / q
    if abs(gap) <= P_INF_TOL:
        p = math.inf
    elif gap < 0:
        p = math.nan
    else:
        p = 2.0 / gap
    delta01 = min((q - 3.0) / (6.0 * q), (2.0 * s - 1.0) / (4.0 * s))
    return ExponentPack(
        s=s, q=q, eta=eta, theta=theta, alpha_gn=alpha, mu=mu,
        gamma_decay=1.0 / (2.0 * mu), p_scaling=p, delta01=delta01, beta_ode=beta,
    )


def alpha_threshold(params: LogLadderParams) -> float:
    """Threshold exponent ``1 / (1 + sum_j c_j delta_j / j!)``."""
    total = 0.0
    fact = 1.0
    for j, (d, c) in enumerate(zip(params.deltas, params.cs), start=1):
        fact *= j
        total += c * d / fact
    return 1.0 / (1.0 + total)


def threshold_asymptote(s: float, cq: float, params: LogLadderParams) -> float:
    """Small-``s`` model of the critical threshold, ``cq * (s - 1/2)**alpha``."""
    _check_s(s)
    return cq * (s - 0.5) ** alpha_threshold(params)


def pathway_level(s: float, params: LogLadderParams) -> Optional[int]:
    """Smallest ladder prefix whose threshold exponent drops below ``1/log(1/(s-1/2))``.

    Returns ``None`` when no prefix of the given ladder is deep enough.
    """
    _check_s(s)
    log_inv = math.log(1.0 / (s - 0.5))
    if log_inv <= 0:
        raise DomainError(f"1/log(1/(s-1/2)) is not positive at s={s}")
    target = 1.0 / log_inv
    for n in range(1, params.n + 1):
        if alpha_threshold(params.prefix(n)) < target:
            return n
    return None


@dataclass(frozen=True)
class BlowupExponents:
    grad_exp_beta_form: float
    grad_exp_explicit_form: float
    velocity_exp: float
    filament_exp: float
    alignment_exp: float
    singular_dim: float


def blowup_exponents(s: float, q: float, params: LogLadderParams) -> BlowupExponents:
    """Rates attached to a hypothetical singularity.

    Both gradient-rate expressions are returned; they differ by exactly 1/2
    and ``grad_exp_beta_form`` is the one to use by default.  The velocity
    and filament entries are magnitudes of the exponents of ``T* - t``.
    """
    pack = exponent_pack(s, q, eta=0.0)
    beta = pack.beta_ode
    th, al = pack.theta, pack.alpha_gn
    ratios = [d / (1.0 + d) for d in params.deltas]
    return BlowupExponents(
        grad_exp_beta_form=(1.0 + beta) / (2.0 * beta),
        grad_exp_explicit_form=(2.0 - th * al) / (2.0 * th * (1.0 - al)),
        velocity_exp=0.5 - sum(d / ((1.0 + d) * (2.0 + d)) for d in params.deltas),
        filament_exp=0.5 + sum(ratios),
        alignment_exp=sum(r / 2.0 for r in ratios),
        singular_dim=max(0.0, 1.0 - sum(r / (j + 1) for j, r in enumerate(ratios, start=1))),
    )


@dataclass(frozen=True)
class ExceptionalGeometry:
    dim_bound: float
    theta_eps: float
    raw_dim_bound: float
    clamped: bool


def exceptional_geometry(eps: float, params: LogLadderParams) -> ExceptionalGeometry:
    """Dimension bound and vorticity-alignment factor for exceptional sets.

    The dimension bound is clamped to ``[0, 3]``; ``clamped`` records whether
    that happened (the raw value goes negative for small ``eps``).
    """
    if not 0.0 < eps <= 1.0:
        raise DomainError(f"eps={eps} must lie in (0, 1]")
    x = 1.0 / eps
    levels = [x] + _ladder_values(x, params.n)
    raw = 3.0
    theta = 1.0
    for j, d in enumerate(params.deltas, start=1):
        r = d / (1.0 + d)
        raw -= r * levels[j - 1] / (1.0 + levels[j])
        theta *= eps ** (r / (1.0 + j)) * (1.0 + levels[j]) ** (-r * j / (1.0 + j))
    dim = min(3.0, max(0.0, raw))
    return ExceptionalGeometry(dim_bound=dim, theta_eps=theta, raw_dim_bound=raw, clamped=dim != raw)


@dataclass(frozen=True)
class MultifractalModel:
    """Parabolic singularity spectrum and the structure-function exponents.

    ``shrink`` is the product ``prod_j 1/(1 + delta_j)`` which narrows the
    spectrum as the ladder deepens.
    """

    s: float
    params: LogLadderParams
    h0: float = field(init=False)
    sigma2: float = field(init=False)
    shrink: float = field(init=False)

    def __post_init__(self):
        _check_s(self.s)
        object.__setattr__(self, "h0", 2.0 * self.s - 1.0)
        object.__setattr__(self, "sigma2", (3.0 - 2.0 * self.s) / (2.0 * self.s - 1.0))
        shrink = 1.0
        for d in self.params.deltas:
            shrink *= 1.0 - d / (1.0 + d)
        object.__setattr__(self, "shrink", shrink)

    def D(self, h):
        return 3.0 - (h - self.h0) ** 2 / (2.0 * self.sigma2) * self.shrink

    def zeta(self, p):
        return p / 3.0 - self.intermit(p)

    def intermit(self, p):
        # evaluated directly rather than as p/3 - zeta to avoid cancellation
        return p * (p - 3.0) / 3.0 * self.sigma2 * self.shrink

    def zeta_quadratic(self, p):
        """Quadratic exponent ``p h0 - p^2 sigma2 shrink / 2``."""
        return p * self.h0 - p * p * self.sigma2 / 2.0 * self.shrink

    def legendre_exact(self, p):
        """Closed-form minimum of ``p*h + 3 - D(h)`` over all real ``h``."""
        return p * self.h0 - p * p * self.sigma2 / (2.0 * self.shrink)

    def legendre_numeric(self, p: float, h_grid: Optional[np.ndarray] = None) -> float:
        """Minimise ``p*h + 3 - D(h)`` on a grid, then polish inside the best cell."""
        from scipy.optimize import minimize_scalar

        fixed = h_grid is not None
        half_width = 16.0
        while True:
            if not fixed:
                h_grid = np.linspace(self.h0 - half_width, self.h0 + half_width, 100_001)
            vals = p * h_grid + 3.0 - self.D(h_grid)
            i = int(np.argmin(vals))
            interior = 0 < i < len(h_grid) - 1
            if interior or fixed:
                break
            half_width *= 4.0
        if not interior:
            return float(vals[i])
        res = minimize_scalar(
            lambda h: p * h + 3.0 - self.D(h),
            bounds=(h_grid[i - 1], h_grid[i + 1]),
            method="bounded", options={"xatol": 1e-12 * max(1.0, abs(h_grid[i]))},
        )
        return float(min(res.fun, vals[i]))


def multifractal_model(s: float, params: LogLadderParams) -> MultifractalModel:
    return MultifractalModel(s, params)


@dataclass(frozen=True)
class SpectralModels:
    """Inertial-range model curves evaluated on wavenumber arrays."""

    model: SpectralModelParams
    params: LogLadderParams
    s: float
    gamma_decay: float

    def _check_k(self, k):
        if np.any(np.asarray(k) < self.model.k0):
            raise DomainError(f"wavenumber below k0={self.model.k0}")

    def rhos(self) -> list:
        return [(2.0 * self.s - 1.0) / (2.0 * self.s) if j == 1 else 1.0 / j
                for j in range(1, self.params.n + 1)]

    def flux_weight(self, k):
        """``prod_j (1 + L_j(k/k0))**(delta_j rho_j)``."""
        self._check_k(k)
        x = np.asarray(k, dtype=float) / self.model.k0
        w = np.ones_like(x)
        for d, rho, lj in zip(self.params.deltas, self.rhos(), _ladder_values(x, self.params.n)):
            w = w * (1.0 + lj) ** (d * rho)
        return w if np.ndim(w) else float(w)

    def flux_bound(self, k):
        return self.model.flux_c * self.model.eps_rate / self.flux_weight(k)

    def decay_exponents(self) -> list:
        g = self.gamma_decay
        return [2.0 * g / 3.0 * j / (j + 1.0) for j in range(1, self.params.n + 1)]

    def beta_decay(self, j: int, t: float) -> float:
        if not 1 <= j <= self.params.n:
            raise DomainError(f"level j={j} outside 1..{self.params.n}")
        if len(self.model.beta0) != self.params.n:
            raise DomainError("beta0 must have one entry per ladder level")
        return self.model.beta0[j - 1] / (1.0 + self.gamma_decay * t) ** self.decay_exponents()[j - 1]

    def correction_basis(self, k) -> list:
        """``L_j(k/k0) / prod_{i<=j} (1 + L_i(k/k0))**(1 + delta_i)`` for each level."""
        self._check_k(k)
        x = np.asarray(k, dtype=float) / self.model.k0
        out = []
        denom = np.ones_like(x)
        for d, lj in zip(self.params.deltas, _ladder_values(x, self.params.n)):
            denom = denom * (1.0 + lj) ** (1.0 + d)
            out.append(lj / denom)
        return out

    def kolmogorov(self, k):
        m = self.model
        return m.kolmogorov_c * m.eps_rate ** (2.0 / 3.0) * np.asarray(k, dtype=float) ** (-5.0 / 3.0)

    def model_spectrum(self, k, t: float):
        corr = 1.0
        for j, b in enumerate(self.correction_basis(k), start=1):
            corr = corr + self.beta_decay(j, t) * b
        return self.kolmogorov(k) * corr

    def limiting_spectrum(self, k, t: float):
        m = self.model
        return self.kolmogorov(k) * np.exp(-m.small_c * math.sqrt(m.nu * t) * np.asarray(k, dtype=float))

    def psi_ratio(self, t: float) -> float:
        if not t > 0:
            raise DomainError("psi_ratio needs t > 0")
        return (self.model.nu * t) ** -0.25


def spectral_models(model: SpectralModelParams, params: LogLadderParams, s: float,
                    gamma_decay: float) -> SpectralModels:
    _check_s(s)
    return SpectralModels(model, params, s, gamma_decay)


@dataclass(frozen=True)
class Dichotomy:
    omega: float
    branch: str


def dichotomy_omega(lam: float, s: float, q: float, params: LogLadderParams) -> Dichotomy:
    """Coefficient deciding growth versus contraction for the scaled family.

    ``branch`` is ``"growth-risk"`` for ``omega < 1``, ``"contracting"`` for
    ``omega > 1`` and ``"marginal"`` within :data:`MARGINAL_TOL` of 1.
    """
    _check_sq(s, q)
    if not lam >= 1.0:
        raise DomainError(f"lambda={lam} must be >= 1")
    crit = params.c3 * (s - 0.5) ** alpha_threshold(params)
    phi = (1.0 + math.log(lam)) ** -0.5
    omega = crit / (phi * log_weight(lam, params))
    if abs(omega - 1.0) <= MARGINAL_TOL:
        branch = "marginal"
    elif omega < 1.0:
        branch = "growth-risk"
    else:
        branch = "contracting"
    return Dichotomy(omega, branch)
