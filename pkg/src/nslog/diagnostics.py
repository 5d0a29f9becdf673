"""Spectral and geometric diagnostics of velocity snapshots.

Spectral quantities (``e_k``, ``transfer``, ``flux``, dissipation rates)
are per unit volume; shells are unit-width bins centred on the integers
``round(|k|)``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import formulas
from . import spectral as sp
from .errors import ConfigError, EstimatorError, PreconditionError
from .spectral import PhysField

DIV_TOL = 1e-8


class FitWarning(UserWarning):
    """Least-squares fit was ill-conditioned and has been regularised."""


@dataclass(frozen=True)
class ShellSpectrum:
    k_centers: np.ndarray
    e_k: np.ndarray
    eps_rate_s1: float
    eps_rate_frac: float
    mean_energy: float = 0.0
    transfer: Optional[np.ndarray] = None
    flux: Optional[np.ndarray] = None

    @property
    def total_energy(self) -> float:
        return self.mean_energy + float(np.sum(self.e_k))


def _shell_index(grid) -> np.ndarray:
    return np.rint(grid.kmag).astype(int)


def _bin(grid, per_mode: np.ndarray) -> np.ndarray:
    """Sum ``per_mode`` over shells 1..K (the zero shell is dropped)."""
    idx = _shell_index(grid)
    return np.bincount(idx.ravel(), weights=per_mode.ravel(), minlength=int(idx.max()) + 1)[1:]


def energy_spectrum(f: PhysField, nu: float = 0.0, s: float = 1.0) -> ShellSpectrum:
    """Shell energy spectrum plus both dissipation rates ``2 nu sum k^2 E`` and ``2 nu sum k^(2s) E``."""
    g = sp.forward(f)
    grid = g.grid
    e_mode = 0.5 * np.sum(np.abs(g.coeffs) ** 2, axis=0)
    e_k = _bin(grid, e_mode)
    origin = (0,) * grid.rank
    return ShellSpectrum(
        k_centers=np.arange(1, len(e_k) + 1, dtype=float),
        e_k=e_k,
        eps_rate_s1=2.0 * nu * float(np.sum(grid.k2 * e_mode)),
        eps_rate_frac=2.0 * nu * float(np.sum(sp.frac_multiplier(grid, s) * e_mode)),
        mean_energy=float(e_mode[origin]),
    )


def nonlinear_transfer_modes(f: PhysField) -> np.ndarray:
    """Per-mode ``Re(conj(u_hat) . N_hat)`` with ``N = -P dealias((u.grad) u)``."""
    g = sp.forward(f)
    grid = g.grid
    if g.ncomp != grid.rank:
        raise ConfigError("transfer needs a velocity field", key="ncomp")
    if sp.divergence_ratio(g) > DIV_TOL:
        raise PreconditionError("field is not divergence-free")
    c = sp.dealias(grid, g.coeffs)
    n = -sp.leray_coeffs(grid, sp.advect_coeffs(grid, sp.ifft(c, grid.rank), c))
    return np.sum((np.conj(c) * n).real, axis=0)


def energy_flux(f: PhysField, nu: float = 0.0, s: float = 1.0) -> ShellSpectrum:
    """Spectrum with shell transfer ``T(k)`` and flux ``Pi(k) = -sum_{k' <= k} T(k')``.

    ``Pi(k) > 0`` means energy leaves the modes at or below ``k``.
    """
    spec = energy_spectrum(f, nu, s)
    t_mode = nonlinear_transfer_modes(f)
    t_k = _bin(f.grid, t_mode)
    t_k = np.pad(t_k, (0, len(spec.e_k) - len(t_k)))
    return ShellSpectrum(spec.k_centers, spec.e_k, spec.eps_rate_s1, spec.eps_rate_frac,
                         spec.mean_energy, t_k, -np.cumsum(t_k))


def transfer_defect(f: PhysField) -> float:
    """``|sum_k T| / sum_k |T|`` over modes; 0 for fields without transfer."""
    t = nonlinear_transfer_modes(f)
    scale = float(np.sum(np.abs(t)))
    return abs(float(np.sum(t))) / scale if scale > 0 else 0.0


@dataclass(frozen=True)
class FluxAudit:
    max_relative_deviation: float
    bound_satisfied_fraction: float
    fitted_constant: float
    n_bins: int


def flux_audit(spec: ShellSpectrum, models: formulas.SpectralModels, eps: Optional[float] = None) -> FluxAudit:
    """Check ``|Pi(k) - eps| <= C eps / weight(k)`` on the bins inside ``[k0, k_nu]``.

    ``fitted_constant`` is the smallest ``C`` for which the bound holds on
    every bin; ``bound_satisfied_fraction`` is the share of bins meeting it
    with ``C = 1``.  ``eps`` defaults to the fractional dissipation rate.
    """
    if spec.flux is None:
        raise ConfigError("spectrum carries no flux; use energy_flux", key="flux")
    m = models.model
    sel = (spec.k_centers >= m.k0) & (spec.k_centers <= m.k_nu)
    if not sel.any():
        raise ConfigError(f"no shells inside [{m.k0}, {m.k_nu}]", key="k_range")
    eps = spec.eps_rate_frac if eps is None else eps
    if not eps > 0:
        raise EstimatorError("flux audit needs a positive dissipation rate")
    k = spec.k_centers[sel]
    dev = np.abs(spec.flux[sel] - eps) / eps
    w = np.asarray(models.flux_weight(k), dtype=float)
    c_k = dev * w
    return FluxAudit(float(dev.max()), float(np.mean(c_k <= 1.0)), float(c_k.max()), int(sel.sum()))


@dataclass(frozen=True)
class SpectrumFit:
    c_kolmogorov: float
    betas: np.ndarray
    betas_initial: np.ndarray
    residual: float
    condition: float


def spectrum_fit(spec: ShellSpectrum, k_range, s: float, params: formulas.LogLadderParams,
                 gamma_decay: float, t: float, *, eps: Optional[float] = None, k0: float = 1.0,
                 cond_limit: float = 1e12) -> SpectrumFit:
    """Least squares for ``(C, C beta_j)`` in the log-corrected Kolmogorov spectrum.

    ``betas_initial`` undoes the model decay ``(1 + gamma t)**alpha_j``.  On
    ill-conditioned ranges a :class:`FitWarning` is issued and the solution
    is truncated-SVD regularised.
    """
    lo, hi = k_range
    sel = (spec.k_centers >= lo) & (spec.k_centers <= hi) & (spec.e_k > 0)
    if sel.sum() < 8:
        raise ConfigError(f"fit range {k_range} holds {int(sel.sum())} bins, need >= 8", key="k_range")
    eps = spec.eps_rate_frac if eps is None else eps
    if not eps > 0:
        raise EstimatorError("spectrum fit needs a positive dissipation rate")
    models = formulas.SpectralModels(formulas.SpectralModelParams(k0=k0, eps_rate=eps), params, s, gamma_decay)
    k = spec.k_centers[sel]
    y = spec.e_k[sel] * k ** (5.0 / 3.0) * eps ** (-2.0 / 3.0)
    a = np.column_stack([np.ones_like(k)] + [np.asarray(b) for b in models.correction_basis(k)])
    cond = float(np.linalg.cond(a))
    rcond = None
    if cond > cond_limit:
        warnings.warn(f"spectrum fit basis is ill-conditioned (cond={cond:.3g}); regularising", FitWarning)
        rcond = 1.0 / cond_limit
    x = np.linalg.lstsq(a, y, rcond=rcond)[0]
    c = float(x[0])
    betas = x[1:] / c
    growth = np.array([(1.0 + gamma_decay * t) ** al for al in models.decay_exponents()])
    resid = float(np.sqrt(np.mean(((a @ x) / y - 1.0) ** 2)))
    return SpectrumFit(c, betas, betas * growth, resid, cond)


@dataclass(frozen=True)
class StructureFunctionTable:
    r: np.ndarray
    orders: np.ndarray
    s_p_r: np.ndarray
    zeta: np.ndarray
    fit_window: tuple


def _shifts(grid, r: float, axes) -> list:
    out = []
    for ax in axes:
        m = r / grid.dx[ax]
        mi = int(round(m))
        if abs(m - mi) > 1e-9 * max(1.0, m):
            raise ConfigError(f"separation {r} is not a multiple of dx={grid.dx[ax]} on axis {ax}",
                              key="separations")
        out.append(mi)
    return out


def structure_functions(f: PhysField, orders: Sequence[float], separations: Sequence[float],
                        n_samples: int = 0, seed: int = 0, axes: Optional[Sequence[int]] = None,
                        fit_window: Optional[tuple] = None) -> StructureFunctionTable:
    """Longitudinal structure functions ``<|u_a(x + r e_a) - u_a(x)|^p>`` averaged over ``axes``.

    ``n_samples = 0`` averages over every grid point; otherwise a seeded
    random subset of points is used (the same points for every ``r``).
    ``zeta`` holds log-log slopes over ``fit_window`` (default: all ``r > 0``).
    """
    grid = f.grid
    axes = tuple(range(grid.rank)) if axes is None else tuple(axes)
    r = np.asarray(separations, dtype=float)
    p = np.asarray(orders, dtype=float)
    pts = None
    if n_samples:
        pts = np.random.default_rng(seed).choice(grid.size, size=min(n_samples, grid.size), replace=False)
    table = np.zeros((len(r), len(p)))
    for i, ri in enumerate(r):
        acc = np.zeros(len(p))
        for ax, m in zip(axes, _shifts(grid, ri, axes)):
            du = np.abs(np.roll(f.data[ax], -m, axis=ax) - f.data[ax]).ravel()
            if pts is not None:
                du = du[pts]
            acc += [np.mean(du ** pj) for pj in p]
        table[i] = acc / len(axes)
    lo, hi = fit_window if fit_window is not None else (0.0, math.inf)
    zeta = np.full(len(p), np.nan)
    for j in range(len(p)):
        sel = (r > 0) & (r >= lo) & (r <= hi) & (table[:, j] > 0)
        if sel.sum() >= 2:
            zeta[j] = np.polyfit(np.log(r[sel]), np.log(table[sel, j]), 1)[0]
    return StructureFunctionTable(r, p, table, zeta, (lo, hi))


@dataclass(frozen=True)
class ExceptionalSet:
    eps: float
    lambda_eps: float
    mask: np.ndarray
    measured_fraction: float
    chebyshev_lambda: float


def exceptional_set(f: PhysField, eps: float, cheb_p: float = 6.0) -> ExceptionalSet:
    """Points where ``|grad u|`` reaches the top-``eps`` volume fraction.

    ``lambda_eps`` is the ``m``-th largest gradient magnitude with
    ``m = max(1, floor(eps N))``; the mask keeps every point at or above it,
    so ties can push ``measured_fraction`` past ``eps``.
    ``chebyshev_lambda = (<|grad u|^p> / eps)^(1/p)`` is the level above
    which Chebyshev's inequality alone guarantees fraction ``<= eps``.
    """
    if not 0 < eps < 1:
        raise ConfigError(f"eps={eps} must lie in (0, 1)", key="eps")
    g = sp.grad_magnitude(sp.forward(f))
    flat = g.ravel()
    n = flat.size
    m = max(1, int(math.floor(eps * n * (1 + 1e-12))))
    lam = float(np.partition(flat, n - m)[n - m])
    mask = g >= lam
    cheb = float((np.mean(flat ** cheb_p) / eps) ** (1.0 / cheb_p))
    return ExceptionalSet(eps, lam, mask, float(mask.mean()), cheb)


@dataclass(frozen=True)
class BoxCount:
    dimension: float
    fit_residual: float
    sizes: tuple
    counts: tuple


def box_counting_dimension(mask: np.ndarray, sizes: Sequence[int] = (1, 2, 4, 8, 16)) -> BoxCount:
    """Slope of ``log N(size)`` against ``log(1/size)`` for occupied boxes of ``size`` cells."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise EstimatorError("box counting needs a non-empty mask")
    used, counts = [], []
    for b in sizes:
        if any(n % b or n < b for n in mask.shape):
            continue
        shape = []
        for n in mask.shape:
            shape += [n // b, b]
        blocks = mask.reshape(shape).any(axis=tuple(range(1, 2 * mask.ndim, 2)))
        used.append(b)
        counts.append(int(blocks.sum()))
    if len(used) < 2:
        raise EstimatorError(f"mask shape {mask.shape} admits fewer than two box sizes")
    x = np.log(1.0 / np.array(used, dtype=float))
    y = np.log(np.array(counts, dtype=float))
    slope, icpt = np.polyfit(x, y, 1)
    resid = float(np.sqrt(np.mean((slope * x + icpt - y) ** 2)))
    return BoxCount(float(slope), resid, tuple(used), tuple(counts))


@dataclass(frozen=True)
class LocalScaling:
    h_values: np.ndarray
    bin_edges: np.ndarray
    density: np.ndarray
    d_of_h_estimate: np.ndarray
    excluded: int


def local_scaling_histogram(f: PhysField, radii: Sequence[float], bins: int = 20) -> LocalScaling:
    """Pointwise exponent ``h(x)`` from the scaling of gradient increments in ``r``.

    Increments are Frobenius norms of ``grad u(x + r e_a) - grad u(x)``
    averaged over the axes.  ``d_of_h_estimate`` box-counts the level set of
    each populated ``h`` bin (NaN for empty or uncountable bins).  This is a
    coarse, grid-limited estimator.
    """
    if len(radii) < 3:
        raise ConfigError("need at least three radii", key="radii")
    grid = f.grid
    axes = range(grid.rank)
    grad = sp.ifft(sp.gradient(sp.forward(f)), grid.rank)
    logs = []
    for r in radii:
        inc = np.zeros(grid.npts)
        for ax, m in zip(axes, _shifts(grid, r, axes)):
            d = np.roll(grad, -m, axis=2 + ax) - grad
            inc += np.sqrt(np.sum(d ** 2, axis=(0, 1)))
        logs.append(inc / grid.rank)
    inc = np.stack(logs)
    ok = np.all(inc > 0, axis=0)
    lr = np.log(np.asarray(radii, dtype=float))
    lr_c = lr - lr.mean()
    with np.errstate(divide="ignore", invalid="ignore"):
        li = np.log(inc)
        li_c = li - li.mean(axis=0)
    h = np.tensordot(lr_c, li_c, axes=(0, 0)) / np.sum(lr_c ** 2)
    h = np.where(ok, h, np.nan)
    vals = h[ok]
    density, edges = np.histogram(vals, bins=bins, density=True) if vals.size else (np.zeros(bins), np.linspace(0, 1, bins + 1))
    dims = np.full(bins, np.nan)
    for i in range(bins):
        upper = h <= edges[i + 1] if i == bins - 1 else h < edges[i + 1]
        level = ok & (h >= edges[i]) & upper
        if level.any():
            try:
                dims[i] = box_counting_dimension(level).dimension
            except EstimatorError:
                pass
    return LocalScaling(h, edges, density, dims, int((~ok).sum()))


@dataclass(frozen=True)
class Alignment:
    angle_edges: np.ndarray
    angle_histogram: np.ndarray
    mean_cos: float
    excluded: int
    max_trace: float


def alignment_statistics(f: PhysField, bins: int = 18, rel_tol: float = 1e-10) -> Alignment:
    """Angles between vorticity and the most stretching strain eigenvector.

    Eigenpairs come from ``numpy.linalg.eigh`` on the batched symmetric
    strain.  Points whose vorticity is below ``rel_tol`` of the peak are
    excluded.
    """
    grid = f.grid
    if grid.rank != 3:
        raise ConfigError("alignment statistics need a 3D field", key="rank")
    g = sp.forward(f)
    grad = sp.ifft(sp.gradient(g), 3)
    w = sp.ifft(sp.curl_coeffs(grid, g.coeffs), 3).reshape(3, -1).T
    a = grad.reshape(3, 3, -1).transpose(2, 0, 1)
    strain = 0.5 * (a + a.transpose(0, 2, 1))
    evals, evecs = np.linalg.eigh(strain)
    max_trace = float(np.max(np.abs(evals.sum(axis=1)))) if evals.size else 0.0
    wmag = np.linalg.norm(w, axis=1)
    peak = wmag.max()
    keep = wmag > rel_tol * peak if peak > 0 else np.zeros(len(wmag), dtype=bool)
    edges = np.linspace(0.0, 90.0, bins + 1)
    if not keep.any():
        return Alignment(edges, np.zeros(bins, dtype=int), math.nan, int(len(wmag)), max_trace)
    cos = np.abs(np.einsum("ni,ni->n", w[keep], evecs[keep, :, -1])) / wmag[keep]
    angles = np.degrees(np.arccos(np.clip(cos, 0.0, 1.0)))
    hist, _ = np.histogram(angles, bins=edges)
    return Alignment(edges, hist, float(cos.mean()), int((~keep).sum()), max_trace)


@dataclass(frozen=True)
class RatioSeries:
    t: np.ndarray
    ratio: np.ndarray
    tail_slope: float


def ratio_series(records, tail: float = 0.5) -> RatioSeries:
    """``|(-Lap)^s u|_q / |(-Lap)^(1/2) u|_q`` per record, with a log-log tail slope.

    Records with a zero denominator are skipped.  The slope is fitted on
    the last ``tail`` fraction of the time span (``t > 0`` only) and is NaN
    with fewer than two usable points.
    """
    t = np.array([r.t for r in records if r.lq_root_lap > 0], dtype=float)
    ratio = np.array([r.frac_lq_full / r.lq_root_lap for r in records if r.lq_root_lap > 0], dtype=float)
    slope = math.nan
    if len(t):
        start = t[-1] - tail * (t[-1] - t[0])
        sel = (t > 0) & (t >= start) & (ratio > 0)
        if sel.sum() >= 2:
            slope = float(np.polyfit(np.log(t[sel]), np.log(ratio[sel]), 1)[0])
    return RatioSeries(t, ratio, slope)
