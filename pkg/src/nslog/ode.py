"""Scalar comparison ODEs: closed forms, an adaptive integrator, blow-up fits."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import integrate as sp_integrate
from scipy.optimize import brentq

from .errors import BlowUpError, DomainError, FitError, StiffnessError

# Dormand-Prince 5(4) tableau
_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_B5 = (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0)
_B4 = (5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40)
_ERR = tuple(b5 - b4 for b5, b4 in zip(_B5, _B4))

COMPLETED = "completed"
BLEW_UP = "blew_up"
HIT_ZERO = "hit_zero"


@dataclass(frozen=True)
class ComparisonOde:
    """``dZ/dt = c * Z**(1 + mu)`` with ``Z(0) = y0``."""

    y0: float
    c: float
    mu: float

    def __post_init__(self):
        if not (self.y0 > 0 and self.c > 0 and self.mu > 0):
            raise DomainError("y0, c and mu must be positive")

    @property
    def blow_up_time(self) -> float:
        return 1.0 / (self.mu * self.c * self.y0 ** self.mu)

    def rhs(self, t, y):
        return self.c * abs(y) ** (1.0 + self.mu)


@dataclass(frozen=True)
class DichotomyOde:
    """``dY/dt = -c1 + c2 (1 - omega) Y**(1 + beta)``."""

    y0: float
    c1: float
    c2: float
    beta: float
    omega: float

    def __post_init__(self):
        if not (self.y0 > 0 and self.c1 >= 0 and self.c2 > 0 and self.beta > 0 and self.omega >= 0):
            raise DomainError("invalid dichotomy ODE coefficients")

    def rhs(self, t, y):
        return -self.c1 + self.c2 * (1.0 - self.omega) * max(y, 0.0) ** (1.0 + self.beta)

    @property
    def threshold(self) -> Optional[float]:
        """Level above which the right side turns positive (only when ``omega < 1``)."""
        if self.omega >= 1.0:
            return None
        return (self.c1 / (self.c2 * (1.0 - self.omega))) ** (1.0 / (1.0 + self.beta))


@dataclass
class OdeTrajectory:
    times: np.ndarray
    values: np.ndarray
    terminal: str = COMPLETED
    t_star: Optional[float] = None
    t_star_bracket: Optional[tuple] = None
    t_zero: Optional[float] = None
    n_rejected: int = 0


def closed_form_z(ode: ComparisonOde, t: float) -> float:
    """``y0 / (1 - mu c y0**mu t)**(1/mu)``; raises :class:`BlowUpError` past the blow-up time."""
    if t < 0:
        raise DomainError("t must be non-negative")
    t_star = ode.blow_up_time
    if t >= t_star:
        raise BlowUpError(f"t={t} is at or past the blow-up time {t_star}", t_star)
    return ode.y0 / (1.0 - ode.mu * ode.c * ode.y0 ** ode.mu * t) ** (1.0 / ode.mu)


def decay_envelope(y0: float, c: float, beta: float, gamma: float, t):
    """``c * y0 / (1 + beta t)**gamma``; accepts scalar or array ``t``."""
    return c * y0 / (1.0 + beta * t) ** gamma


def _tail_time(rhs, t, y) -> float:
    """Time left before blow-up if the right side froze at time ``t``: int_y^inf dy / f."""
    def integrand(v):
        f = rhs(t, v)
        return 1.0 / f if f > 0 else math.inf

    if not rhs(t, y) > 0:
        return math.inf
    # substitute v = y / w so the infinite range maps onto (0, 1]
    out = sp_integrate.quad(lambda w: integrand(y / w) * y / (w * w) if w > 0 else 0.0,
                            0.0, 1.0, epsabs=0.0, epsrel=1e-10, limit=200, full_output=1)
    if len(out) > 3 or not math.isfinite(out[0]):
        # quad flagged non-convergence: growth too slow for a finite tail
        return math.inf
    return out[0]


def integrate(
    rhs: Callable[[float, float], float],
    y0: float,
    t_end: float,
    tol: float = 1e-10,
    *,
    t0: float = 0.0,
    ceiling: float = 1e12,
    bracket_rtol: float = 1e-4,
    max_step: float = math.inf,
    first_step: Optional[float] = None,
) -> OdeTrajectory:
    """Adaptive Dormand-Prince 5(4) integration of a scalar ODE.

    The local error estimate of every accepted step satisfies
    ``|err| <= tol * (1 + |y|)``.  Integration stops early when ``y``
    crosses zero (``hit_zero``; the crossing is located by Hermite
    interpolation) or exceeds ``ceiling`` (``blew_up``).  After a ceiling
    crossing the solution is followed further until the remaining time to
    blow-up, estimated as ``int_y^inf dy / f(t, y)``, is below
    ``bracket_rtol`` relative to ``t``; ``t_star_bracket`` is then
    ``(t, t + remaining)``.
    """
    if not tol > 0:
        raise DomainError("tol must be positive")
    t, y = float(t0), float(y0)
    times, values = [t], [y]
    f = rhs(t, y)
    span = t_end - t0
    if span <= 0:
        return OdeTrajectory(np.array(times), np.array(values))
    h = first_step or min(max_step, span * 1e-3, 0.1 * tol ** 0.2 * (1 + abs(y)) / (abs(f) + 1e-300))
    h = min(max(h, 1e-12 * span), max_step, span)
    n_rej = 0
    crossed = False
    while t < t_end:
        h = min(h, t_end - t)
        min_h = 4 * np.finfo(float).eps * max(1.0, abs(t))
        if h < min_h:
            # a collapse counts as blow-up once the remaining time is resolved
            if crossed or _tail_time(rhs, t, y) <= bracket_rtol * abs(t):
                return _blown(rhs, times, values, n_rej)
            raise StiffnessError(f"step size underflow at t={t}, y={y}")
        k = [f]
        for i in range(1, 7):
            yi = y + h * sum(a * kj for a, kj in zip(_A[i], k))
            k.append(rhs(t + _C[i] * h, yi))
        y_new = y + h * sum(b * kj for b, kj in zip(_B5, k))
        err = h * sum(e * kj for e, kj in zip(_ERR, k))
        scale = tol * (1.0 + max(abs(y), abs(y_new)))
        ratio = abs(err) / scale if math.isfinite(err) and math.isfinite(y_new) else math.inf
        if ratio > 1.0:
            n_rej += 1
            h *= max(0.1, 0.9 * ratio ** -0.2) if math.isfinite(ratio) else 0.1
            continue
        f_new = k[6]
        if y_new < 0 <= y:
            tz = _locate_zero(t, h, y, y_new, f, f_new)
            times.append(tz)
            values.append(0.0)
            return OdeTrajectory(np.array(times), np.array(values), HIT_ZERO, t_zero=tz, n_rejected=n_rej)
        t, y, f = t + h, y_new, f_new
        times.append(t)
        values.append(y)
        if y > ceiling:
            remaining = _tail_time(rhs, t, y)
            # an infinite tail means fast but not finite-time growth: keep going
            crossed = math.isfinite(remaining)
            if crossed and (remaining <= bracket_rtol * abs(t) or y > 1e290):
                return _blown(rhs, times, values, n_rej)
        h *= min(5.0, 0.9 * ratio ** -0.2) if ratio > 0 else 5.0
        h = min(h, max_step)
    return OdeTrajectory(np.array(times), np.array(values), COMPLETED, n_rejected=n_rej)


def _blown(rhs, times, values, n_rej) -> OdeTrajectory:
    t, y = times[-1], values[-1]
    remaining = _tail_time(rhs, t, y)
    return OdeTrajectory(np.array(times), np.array(values), BLEW_UP,
                         t_star=t + remaining, t_star_bracket=(t, t + remaining), n_rejected=n_rej)


def _locate_zero(t, h, y0, y1, f0, f1) -> float:
    def hermite(s):
        h00 = 2 * s ** 3 - 3 * s ** 2 + 1
        h10 = s ** 3 - 2 * s ** 2 + s
        h01 = -2 * s ** 3 + 3 * s ** 2
        h11 = s ** 3 - s ** 2
        return h00 * y0 + h10 * h * f0 + h01 * y1 + h11 * h * f1

    if y0 == 0.0:
        return t
    s = brentq(hermite, 0.0, 1.0, xtol=1e-15) if hermite(0.0) * hermite(1.0) < 0 else y0 / (y0 - y1)
    return t + s * h


@dataclass
class DichotomyResult:
    trajectory: OdeTrajectory
    branch: str
    threshold: Optional[float]


def run_dichotomy(ode: DichotomyOde, t_end: float, tol: float = 1e-10, **kwargs) -> DichotomyResult:
    """Integrate the dichotomy model; the branch is ``"blow-up"`` or ``"global"``."""
    traj = integrate(ode.rhs, ode.y0, t_end, tol, **kwargs)
    branch = "blow-up" if traj.terminal == BLEW_UP else "global"
    return DichotomyResult(traj, branch, ode.threshold)


def fit_blowup_exponent(traj: OdeTrajectory, t_star: float, window=(0.5, 0.99), min_samples: int = 20) -> float:
    """Least-squares slope of ``log y`` against ``log(t_star - t)`` inside the window."""
    t = np.asarray(traj.times, dtype=float)
    y = np.asarray(traj.values, dtype=float)
    sel = (t > window[0] * t_star) & (t < window[1] * t_star) & (y > 0)
    if sel.sum() < min_samples:
        raise FitError(f"only {int(sel.sum())} samples inside the fit window, need {min_samples}")
    ys = y[sel]
    if ys.max() <= ys.min() * (1 + 1e-12):
        raise FitError("trajectory does not grow inside the fit window")
    slope, _ = np.polyfit(np.log(t_star - t[sel]), np.log(ys), 1)
    return float(slope)
