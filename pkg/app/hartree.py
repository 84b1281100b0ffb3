import logging
import math
from functools import lru_cache

import numpy as np
import scipy.fft
from pydantic import BaseModel
from scipy.integrate import quad
from scipy.special import erf

from app.models import GridError, KernelKind, ZeroModeConvention
from app.spectral import (
    SPATIAL_AXES,
    FourierGrid,
    ScalarField,
    SpinorField,
    apply_multiplier,
    dealias_mask,
    fft_workers,
    lp_norm,
    sobolev_norm,
)

logger = logging.getLogger(__name__)

COULOMB_ORACLE_TOLERANCE = 0.02


class CoulombKernel(BaseModel):
    """Fourier symbol 4 pi / |xi|^2 of |x|^-1 with the zero mode set to 0."""

    grid: FourierGrid
    kind: KernelKind = KernelKind.PERIODIC

    def symbol(self) -> np.ndarray:
        return _periodic_symbol(self.grid.n_per_axis, self.grid.box_length)

    def apply(self, density: ScalarField, dealias: bool = False) -> ScalarField:
        if self.kind is KernelKind.PERIODIC:
            symbol = self.symbol()
            if dealias:
                symbol = symbol * dealias_mask(self.grid)
            return apply_multiplier(density.to_physical(), symbol)

        physical = density.to_physical()
        if dealias:
            physical = apply_multiplier(physical, dealias_mask(self.grid))
        return physical.with_values(_free_space_convolution(physical))


@lru_cache(maxsize=4)
def _periodic_symbol(n: int, box_length: float) -> np.ndarray:
    grid = FourierGrid(n_per_axis=n, box_length=box_length)
    xi2 = grid.wavenumber_modulus**2
    symbol = np.zeros_like(xi2)
    nonzero = xi2 > 0
    symbol[nonzero] = 4 * np.pi / xi2[nonzero]
    symbol.setflags(write=False)
    return symbol


def cell_average_inverse_distance(h: float) -> float:
    """
    Mean of 1/|x| over a cube of side h centred at the origin.

    Uses 1/|x| = (2/sqrt(pi)) int_0^inf exp(-s^2 |x|^2) ds, which factorises
    over the cube and leaves (pi / 2h) int_0^inf erf(s)^3 / s^3 ds.
    """

    def integrand(s: float) -> float:
        if s == 0:
            return (2 / math.sqrt(math.pi)) ** 3
        return erf(s) ** 3 / s**3

    value, _ = quad(integrand, 0, np.inf, limit=200)
    return math.pi / (2 * h) * value


@lru_cache(maxsize=4)
def _free_space_kernel_hat(n: int, box_length: float) -> np.ndarray:
    h = box_length / n
    m = 2 * n
    j = np.arange(m)
    axis = np.where(j < n, j, j - m) * h
    x, y, z = np.meshgrid(axis, axis, axis, indexing="ij")
    r = np.sqrt(x**2 + y**2 + z**2)
    kernel = np.empty_like(r)
    kernel[r > 0] = 1.0 / r[r > 0]
    kernel[0, 0, 0] = cell_average_inverse_distance(h)
    kernel_hat = scipy.fft.fftn(kernel, workers=fft_workers())
    kernel_hat.setflags(write=False)
    logger.debug(f"Built free-space Coulomb kernel on the doubled {m}^3 grid")
    return kernel_hat


def _free_space_convolution(density: ScalarField) -> np.ndarray:
    """Aperiodic |x|^-1 convolution on a doubled grid; no periodic images."""
    grid = density.grid
    n = grid.n_per_axis
    j = np.arange(n)
    embed = np.ix_(*(np.where(j < n // 2, j, j + n),) * 3)
    padded = np.zeros((2 * n,) * 3, dtype=np.complex128)
    padded[embed] = density.values
    spectrum = scipy.fft.fftn(padded, workers=fft_workers())
    kernel_hat = _free_space_kernel_hat(n, grid.box_length)
    convolved = scipy.fft.ifftn(spectrum * kernel_hat, workers=fft_workers())
    return convolved[embed] * grid.cell_volume


def _check_same_grid(*fields) -> None:
    first = fields[0].grid
    for other in fields[1:]:
        if not first.matches(other.grid):
            raise GridError(
                f"Grid mismatch: {first.n_per_axis}^3/L={first.box_length} vs "
                f"{other.grid.n_per_axis}^3/L={other.grid.box_length}"
            )


def inner_density(psi_a: SpinorField, psi_b: SpinorField) -> ScalarField:
    """psi_a^dagger psi_b per node."""
    _check_same_grid(psi_a, psi_b)
    a = psi_a.to_physical().values
    b = psi_b.to_physical().values
    values = np.einsum("c...,c...->...", np.conj(a), b)
    return ScalarField(grid=psi_a.grid, values=values)


def coulomb_potential(
    density: ScalarField,
    kind: KernelKind = KernelKind.PERIODIC,
    dealias: bool = False,
) -> ScalarField:
    """|x|^-1 * density; a real density gives a real potential."""
    physical = density.to_physical()
    potential = CoulombKernel(grid=density.grid, kind=kind).apply(physical, dealias)
    if not np.any(physical.values.imag):
        potential = potential.with_values(potential.values.real)
    return potential


def hartree_term(
    psi1: SpinorField,
    psi2: SpinorField,
    psi3: SpinorField,
    kind: KernelKind = KernelKind.PERIODIC,
    dealias: bool = False,
) -> SpinorField:
    """N(psi1, psi2, psi3) = (|x|^-1 * <psi3, psi2>) psi1."""
    _check_same_grid(psi1, psi2, psi3)
    potential = coulomb_potential(inner_density(psi3, psi2), kind, dealias)
    physical = psi1.to_physical()
    return physical.with_values(potential.values * physical.values)


def gauge_phase_rate(
    density: ScalarField,
    convention: ZeroModeConvention = ZeroModeConvention.DROP,
    c1: float = 0.0,
    mean_field_lambda: float = 0.0,
) -> float:
    """
    Spatially uniform phase rate carried by the Coulomb zero mode.

    drop: the zero mode is discarded, so the rate is 0.
    mean-field: c1 * lambda * M0 / V0 with M0 the density mass and V0 the box volume.
    """
    if convention is ZeroModeConvention.DROP:
        return 0.0
    grid = density.grid
    values = density.to_physical().values.real
    mass = math.fsum(np.sum(values.reshape(grid.n_per_axis, -1), axis=1))
    mass *= grid.cell_volume
    return c1 * mean_field_lambda * mass / grid.volume


def hartree_bound_ratio(
    psi: SpinorField, kind: KernelKind = KernelKind.PERIODIC
) -> float:
    """||N(psi, psi, psi)||_{H2} / (||psi||_{H2}^2 ||psi||_{L6})."""
    term = hartree_term(psi, psi, psi, kind)
    denominator = sobolev_norm(psi, 2) ** 2 * lp_norm(psi, 6)
    return sobolev_norm(term, 2) / denominator


class CoulombOracleReport(BaseModel):
    n_per_axis: int
    box_length: float
    kind: KernelKind
    relative_error: float
    gauge_constant: float
    tolerance: float = COULOMB_ORACLE_TOLERANCE

    @property
    def passed(self) -> bool:
        return self.relative_error <= self.tolerance


def coulomb_oracle(
    grid: FourierGrid, kind: KernelKind = KernelKind.PERIODIC
) -> CoulombOracleReport:
    """
    Potential of exp(-|x|^2) against pi^(3/2) erf(|x|) / |x|.

    The best uniform constant is removed first (the zero mode is a gauge) and the
    sup error is taken over nodes with every |x_j| <= 0.4 L, relative to the
    largest exact value there.
    """
    r = grid.radius
    density = ScalarField(grid=grid, values=np.exp(-(r**2)))
    potential = coulomb_potential(density, kind).values.real

    safe_r = np.where(r > 0, r, 1.0)
    exact = np.where(r > 0, np.pi**1.5 * erf(safe_r) / safe_r, 2 * np.pi)
    interior = np.all(np.abs(grid.coordinates) <= 0.4 * grid.box_length, axis=0)

    difference = (potential - exact)[interior]
    constant = 0.5 * (np.max(difference) + np.min(difference))
    error = np.max(np.abs(difference - constant)) / np.max(np.abs(exact[interior]))
    report = CoulombOracleReport(
        n_per_axis=grid.n_per_axis,
        box_length=grid.box_length,
        kind=kind,
        relative_error=float(error),
        gauge_constant=float(constant),
    )
    logger.info(
        f"Coulomb oracle ({kind.value}): relative error {report.relative_error:.3e}, "
        f"gauge constant {report.gauge_constant:.4f}"
    )
    return report
