"""Periodic vector fields on uniform grids and their Fourier-multiplier calculus.

Coefficients use the Fourier-series normalisation: ``coeffs`` are the
``norm="forward"`` DFT of the samples, so a constant field ``c`` has a
single zero-mode coefficient ``c`` and ``mean(|u|^2) = sum(|u_hat|^2)``.
Integrals (L2 and Lq norms) are over the whole box, not box averages.
Physical wavenumbers are ``2*pi*m/L`` for integer ``m``.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np
import scipy.fft as sfft

from . import formulas
from .errors import DataError, DomainError, PreconditionError

TWO_PI = 2.0 * math.pi


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("NSLOG_THREADS", "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid in 2 or 3 dimensions."""

    npts: tuple
    box: Optional[tuple] = None

    def __post_init__(self):
        npts = tuple(int(n) for n in self.npts)
        box = tuple(TWO_PI for _ in npts) if self.box is None else tuple(float(b) for b in self.box)
        object.__setattr__(self, "npts", npts)
        object.__setattr__(self, "box", box)
        if len(npts) not in (2, 3):
            raise DomainError(f"grid rank must be 2 or 3, got {len(npts)}")
        if len(box) != len(npts):
            raise DomainError("box and npts must have the same length")
        for n in npts:
            if n < 8 or n & (n - 1):
                raise DomainError(f"npts must be powers of two >= 8, got {npts}")
        if any(not b > 0 for b in box):
            raise DomainError("box lengths must be positive")

    @property
    def rank(self) -> int:
        return len(self.npts)

    @property
    def shape(self) -> tuple:
        return self.npts

    @property
    def size(self) -> int:
        return int(np.prod(self.npts))

    @property
    def volume(self) -> float:
        return float(np.prod(self.box))

    @property
    def dx(self) -> tuple:
        return tuple(b / n for b, n in zip(self.box, self.npts))

    @cached_property
    def mode_index(self) -> tuple:
        """Integer mode numbers per axis, broadcastable against the grid."""
        out = []
        for ax, n in enumerate(self.npts):
            m = np.fft.fftfreq(n, 1.0 / n)
            shape = [1] * self.rank
            shape[ax] = n
            out.append(m.reshape(shape))
        return tuple(out)

    @cached_property
    def k(self) -> tuple:
        """Physical wavenumber components per axis (broadcastable)."""
        return tuple(TWO_PI / b * m for b, m in zip(self.box, self.mode_index))

    @cached_property
    def k2(self) -> np.ndarray:
        out = np.zeros(self.npts)
        for ki in self.k:
            out = out + ki ** 2
        return out

    @cached_property
    def kmag(self) -> np.ndarray:
        return np.sqrt(self.k2)

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        """2/3-rule mask: keeps modes with ``|m_i| <= n_i // 3`` on every axis."""
        mask = np.ones(self.npts, dtype=bool)
        for m, n in zip(self.mode_index, self.npts):
            mask = mask & (np.abs(m) <= n // 3)
        return mask

    @property
    def dealias_kmax(self) -> float:
        """Largest wavenumber magnitude resolved along every axis after dealiasing."""
        return min(TWO_PI / b * (n // 3) for b, n in zip(self.box, self.npts))

    def coords(self) -> tuple:
        axes = [np.arange(n) * b / n for n, b in zip(self.npts, self.box)]
        return tuple(np.meshgrid(*axes, indexing="ij"))


@dataclass(frozen=True, eq=False)
class PhysField:
    """Real samples with leading component axis: ``data.shape == (ncomp, *grid.npts)``."""

    grid: Grid
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.shape[-self.grid.rank:] != self.grid.npts or data.ndim != self.grid.rank + 1:
            raise DataError(f"data shape {data.shape} does not match grid {self.grid.npts}")
        object.__setattr__(self, "data", data)

    @property
    def ncomp(self) -> int:
        return self.data.shape[0]


@dataclass(frozen=True, eq=False)
class SpecField:
    grid: Grid
    coeffs: np.ndarray

    @property
    def ncomp(self) -> int:
        return self.coeffs.shape[0]


def fft(a: np.ndarray, rank: int) -> np.ndarray:
    axes = tuple(range(-rank, 0))
    return sfft.fftn(a, axes=axes, norm="forward", workers=_workers())


def ifft(a: np.ndarray, rank: int) -> np.ndarray:
    axes = tuple(range(-rank, 0))
    return sfft.ifftn(a, axes=axes, norm="forward", workers=_workers()).real


def forward(f: PhysField) -> SpecField:
    if not np.all(np.isfinite(f.data)):
        raise DataError("field contains non-finite samples")
    return SpecField(f.grid, fft(f.data, f.grid.rank))


def inverse(g: SpecField) -> PhysField:
    return PhysField(g.grid, ifft(g.coeffs, g.grid.rank))


def hermitian_defect(g: SpecField) -> float:
    """Largest ``|c(-k) - conj(c(k))|`` relative to the largest coefficient."""
    c = g.coeffs
    flipped = c
    for ax in range(-g.grid.rank, 0):
        flipped = np.roll(np.flip(flipped, axis=ax), 1, axis=ax)
    scale = np.max(np.abs(c))
    return float(np.max(np.abs(flipped - np.conj(c))) / scale) if scale > 0 else 0.0


def frac_multiplier(grid: Grid, s: float) -> np.ndarray:
    """``|k|^(2s)`` with the zero mode set to 0."""
    if not s > 0:
        raise DomainError(f"fractional order s={s} must be positive")
    out = np.zeros(grid.npts)
    nz = grid.k2 > 0
    out[nz] = grid.k2[nz] ** s
    return out


def fractional_laplacian(g: SpecField, s: float) -> SpecField:
    return SpecField(g.grid, g.coeffs * frac_multiplier(g.grid, s))


def leray_coeffs(grid: Grid, c: np.ndarray) -> np.ndarray:
    k2 = np.where(grid.k2 > 0, grid.k2, 1.0)
    kdotc = sum(ki * ci for ki, ci in zip(grid.k, c))
    return np.stack([ci - ki * kdotc / k2 for ki, ci in zip(grid.k, c)])


def leray_project(g: SpecField) -> SpecField:
    """Apply ``I - k k^T / |k|^2`` mode by mode; the zero mode is unchanged."""
    if g.ncomp != g.grid.rank:
        raise DomainError("Leray projection needs one component per axis")
    return SpecField(g.grid, leray_coeffs(g.grid, g.coeffs))


def gradient(g: SpecField) -> np.ndarray:
    """Coefficients of ``d u_i / d x_j`` with shape ``(ncomp, rank, *npts)``."""
    return np.stack([np.stack([1j * kj * ci for kj in g.grid.k]) for ci in g.coeffs])


def divergence(g: SpecField) -> SpecField:
    if g.ncomp != g.grid.rank:
        raise DomainError("divergence needs one component per axis")
    return SpecField(g.grid, sum(1j * ki * ci for ki, ci in zip(g.grid.k, g.coeffs))[None])


def curl_coeffs(grid: Grid, c: np.ndarray) -> np.ndarray:
    k = grid.k
    if grid.rank == 2:
        return (1j * k[0] * c[1] - 1j * k[1] * c[0])[None]
    return np.stack([
        1j * k[1] * c[2] - 1j * k[2] * c[1],
        1j * k[2] * c[0] - 1j * k[0] * c[2],
        1j * k[0] * c[1] - 1j * k[1] * c[0],
    ])


def curl(g: SpecField) -> SpecField:
    """Vorticity; a single scalar component in 2D."""
    if g.ncomp != g.grid.rank:
        raise DomainError("curl needs one component per axis")
    return SpecField(g.grid, curl_coeffs(g.grid, g.coeffs))


def divergence_ratio(g: SpecField) -> float:
    """``||div u||_2 / ||grad u||_2``, zero for fields with no gradient."""
    div = divergence(g).coeffs
    num = np.sum(np.abs(div) ** 2)
    den = np.sum(g.grid.k2 * np.sum(np.abs(g.coeffs) ** 2, axis=0))
    return float(math.sqrt(num / den)) if den > 0 else 0.0


def l2_from_coeffs(grid: Grid, c: np.ndarray) -> float:
    return math.sqrt(grid.volume * float(np.sum(np.abs(c) ** 2)))


def lq_norm(grid: Grid, data: np.ndarray, q: float) -> float:
    """Box Lq norm of the pointwise Euclidean magnitude (uniform-grid quadrature)."""
    if not q >= 1:
        raise DomainError(f"q={q} must be >= 1")
    mag = np.sqrt(np.sum(data ** 2, axis=0))
    if math.isinf(q):
        return float(mag.max())
    return float((grid.volume * np.mean(mag ** q)) ** (1.0 / q))


def grad_magnitude(g: SpecField) -> np.ndarray:
    """Pointwise Frobenius norm of the velocity gradient."""
    grad = ifft(gradient(g), g.grid.rank)
    return np.sqrt(np.sum(grad ** 2, axis=(0, 1)))


@dataclass(frozen=True)
class Norms:
    l2: float
    hs_semi: float
    frac_lq_half: float
    frac_lq_full: float
    grad_linf: float


def norms_from_spec(g: SpecField, s: float, q: float) -> Norms:
    grid = g.grid
    c = g.coeffs
    rank = grid.rank
    return Norms(
        l2=l2_from_coeffs(grid, c),
        hs_semi=l2_from_coeffs(grid, c * np.sqrt(frac_multiplier(grid, s))),
        frac_lq_half=lq_norm(grid, ifft(c * frac_multiplier(grid, s / 2.0), rank), q),
        frac_lq_full=lq_norm(grid, ifft(c * frac_multiplier(grid, s), rank), q),
        grad_linf=float(grad_magnitude(g).max()),
    )


def norms(f: PhysField, s: float, q: float) -> Norms:
    """L2 norm, homogeneous ``H^s`` seminorm, fractional Lq norms and max gradient.

    ``frac_lq_half`` is the Lq norm of ``(-Lap)^(s/2) u`` and ``frac_lq_full``
    that of ``(-Lap)^s u``.
    """
    if not q >= 1:
        raise DomainError(f"q={q} must be >= 1")
    return norms_from_spec(forward(f), s, q)


def _smooth_step(x):
    """C-infinity step: 0 for x <= 0, 1 for x >= 1."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        a = np.where(x > 0, np.exp(-1.0 / np.where(x > 0, x, 1.0)), 0.0)
        b = np.where(x < 1, np.exp(-1.0 / np.where(x < 1, 1.0 - x, 1.0)), 0.0)
    return a / (a + b)


@dataclass(frozen=True)
class ShellPartition:
    """Dyadic Littlewood-Paley partition built from a smooth radial cutoff.

    ``chi`` equals 1 on ``[0, 1]`` and 0 on ``[2, inf)``; the shell bump is
    ``psi(r) = chi(r) - chi(2r)``, supported in ``[1/2, 2]``, and shell ``j``
    has weight ``psi(|k| / 2**j)``.  The weights telescope to exactly 1 for
    every ``k != 0``.
    """

    def chi(self, r):
        return 1.0 - _smooth_step(np.asarray(r, dtype=float) - 1.0)

    def psi(self, r):
        return self.chi(r) - self.chi(2.0 * np.asarray(r, dtype=float))

    def weight(self, j: int, kmag):
        return self.psi(np.asarray(kmag, dtype=float) / 2.0 ** j)

    def shells(self, grid: Grid) -> range:
        """Shell indices that can be non-zero on ``grid``."""
        kmin = min(TWO_PI / b for b in grid.box)
        kmax = float(grid.kmag.max())
        return range(math.floor(math.log2(kmin)) - 1, math.ceil(math.log2(kmax)) + 2)


def shell_project(g: SpecField, j: int, part: Optional[ShellPartition] = None) -> SpecField:
    part = part or ShellPartition()
    return SpecField(g.grid, g.coeffs * part.weight(j, g.grid.kmag))


def dealias(grid: Grid, c: np.ndarray) -> np.ndarray:
    return c * grid.dealias_mask


def advect_coeffs(grid: Grid, u_phys: np.ndarray, v_hat: np.ndarray) -> np.ndarray:
    """Dealiased coefficients of ``(u . grad) v`` given ``u`` samples and ``v`` coefficients."""
    rank = grid.rank
    out = []
    for vi in v_hat:
        dv = ifft(np.stack([1j * kj * vi for kj in grid.k]), rank)
        out.append(np.sum(u_phys * dv, axis=0))
    return dealias(grid, fft(np.stack(out), rank))


def commutator(u: PhysField, s: float, div_tol: float = 1e-8) -> PhysField:
    """``(-Lap)^s ((u.grad) u) - (u.grad)((-Lap)^s u)`` with 2/3-rule products.

    ``u`` is truncated to the dealiased band before the products are formed.
    """
    grid = u.grid
    g = forward(u)
    if g.ncomp != grid.rank:
        raise DomainError("commutator needs a velocity field")
    if divergence_ratio(g) > div_tol:
        raise PreconditionError("velocity field is not divergence-free")
    c = dealias(grid, g.coeffs)
    u_t = ifft(c, grid.rank)
    mult = frac_multiplier(grid, s)
    term1 = mult * advect_coeffs(grid, u_t, c)
    term2 = advect_coeffs(grid, u_t, mult * c)
    return PhysField(grid, ifft(term1 - term2, grid.rank))


@dataclass(frozen=True)
class CommutatorAudit:
    lhs: float
    rhs_f1_term: float
    rhs_f2_term: float
    fitted_constant: float
    z: float
    f1: float
    f2: float


def commutator_audit(u: PhysField, s: float, sigma: float, params) -> CommutatorAudit:
    """Empirical constant in the two-term commutator bound for one field.

    ``fitted_constant = lhs / (rhs_f1_term + rhs_f2_term)``; it is 0 when
    both sides vanish.
    """
    if not 0 < sigma < 1 - s:
        raise DomainError(f"sigma={sigma} must lie in (0, 1 - s)")
    grid = u.grid
    lhs = l2_from_coeffs(grid, forward(commutator(u, s)).coeffs)
    g = forward(u)
    c = g.coeffs
    z = l2_from_coeffs(grid, c * frac_multiplier(grid, s + sigma))
    a = l2_from_coeffs(grid, c * frac_multiplier(grid, s))
    b = l2_from_coeffs(grid, c * frac_multiplier(grid, s + 0.5))
    grad_inf = float(grad_magnitude(g).max())
    f1, f2 = formulas.commutator_factors(z, params)
    r1 = grad_inf * a * f1
    r2 = grad_inf * b * f2
    total = r1 + r2
    fitted = lhs / total if total > 0 else 0.0
    return CommutatorAudit(lhs, r1, r2, fitted, z, f1, f2)
