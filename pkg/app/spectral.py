"""
Periodic-box discretisation of R^3.

Nodes sit at x_j = j*dx, j = 0..n-1, and are read through folded
coordinates in [-L/2, L/2) so data centred at the origin stays centred.
The forward transform carries the cell volume, F = dx^3 * fftn(f), so it
approximates the integral transform int exp(-i x.xi) f(x) dx. With that
normalisation the spectral L2 norm is sqrt(L^-3 * sum |F|^2), which equals
the physical norm sqrt(dx^3 * sum |f|^2).
"""

import logging
import math
from functools import cached_property
from typing import Callable, ClassVar, Dict, List, Tuple, TypeVar, Union

import numpy as np
import scipy.fft
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from app.models import (
    GridError,
    MultiplierError,
    Representation,
    RepresentationError,
    SpectralSettings,
)

logger = logging.getLogger(__name__)

SPATIAL_AXES = (-3, -2, -1)


def bump(r: np.ndarray) -> np.ndarray:
    """Smooth radial cutoff: 1 on r <= 1, 0 on r >= 2, C-infinity in between."""
    r = np.asarray(r, dtype=np.float64)
    inner = _transition(2.0 - r)
    outer = _transition(r - 1.0)
    return inner / (inner + outer)


def _transition(s: np.ndarray) -> np.ndarray:
    out = np.zeros_like(s)
    positive = s > 0
    out[positive] = np.exp(-1.0 / s[positive])
    return out


class FourierGrid(BaseModel):
    """Cubic periodic box with its wavenumber lattice. Build it with make_grid."""

    model_config = ConfigDict(frozen=True)

    n_per_axis: int
    box_length: float

    @cached_property
    def spacing(self) -> float:
        return self.box_length / self.n_per_axis

    @cached_property
    def cell_volume(self) -> float:
        return self.spacing**3

    @cached_property
    def volume(self) -> float:
        return self.box_length**3

    @cached_property
    def wavenumber_spacing(self) -> float:
        return 2 * np.pi / self.box_length

    @cached_property
    def nyquist(self) -> float:
        return np.pi * self.n_per_axis / self.box_length

    @cached_property
    def axis_wavenumbers(self) -> np.ndarray:
        return 2 * np.pi * np.fft.fftfreq(self.n_per_axis, d=self.spacing)

    @cached_property
    def axis_coordinates(self) -> np.ndarray:
        j = np.arange(self.n_per_axis)
        folded = np.where(j < self.n_per_axis // 2, j, j - self.n_per_axis)
        return folded * self.spacing

    @cached_property
    def wavevectors(self) -> np.ndarray:
        """Lattice wavevectors, shape (3, n, n, n), in FFT order."""
        k = self.axis_wavenumbers
        return np.stack(np.meshgrid(k, k, k, indexing="ij"))

    @cached_property
    def wavenumber_modulus(self) -> np.ndarray:
        return np.sqrt(np.sum(self.wavevectors**2, axis=0))

    @cached_property
    def bracket(self) -> np.ndarray:
        """<xi> = (1 + |xi|^2)^(1/2) on the lattice."""
        return np.sqrt(1.0 + self.wavenumber_modulus**2)

    @cached_property
    def coordinates(self) -> np.ndarray:
        """Folded physical coordinates, shape (3, n, n, n)."""
        x = self.axis_coordinates
        return np.stack(np.meshgrid(x, x, x, indexing="ij"))

    @cached_property
    def radius(self) -> np.ndarray:
        return np.sqrt(np.sum(self.coordinates**2, axis=0))

    @cached_property
    def negation_index(self) -> np.ndarray:
        """Flat index of the node -xi for every flat node xi; Nyquist maps to itself."""
        j = np.arange(self.n_per_axis)
        neg = (-j) % self.n_per_axis
        idx = np.ravel_multi_index(
            np.meshgrid(neg, neg, neg, indexing="ij"), (self.n_per_axis,) * 3
        )
        return idx.ravel()

    def matches(self, other: "FourierGrid") -> bool:
        return (self.n_per_axis, self.box_length) == (
            other.n_per_axis,
            other.box_length,
        )

    def fold(self, x: np.ndarray) -> np.ndarray:
        """Map positions onto the folded box [-L/2, L/2)."""
        half = self.box_length / 2
        return (np.asarray(x) + half) % self.box_length - half


def make_grid(n_per_axis: int, box_length: float) -> FourierGrid:
    if not isinstance(n_per_axis, (int, np.integer)) or n_per_axis % 2:
        raise GridError(f"n_per_axis must be an even integer, got {n_per_axis}")
    if n_per_axis < 8:
        raise GridError(f"n_per_axis must be at least 8, got {n_per_axis}")
    if not box_length > 0 or not math.isfinite(box_length):
        raise GridError(f"box_length must be positive and finite, got {box_length}")
    grid = FourierGrid(n_per_axis=int(n_per_axis), box_length=float(box_length))
    logger.debug(
        f"Grid {n_per_axis}^3 on L={box_length}: dxi={grid.wavenumber_spacing:.4g}, "
        f"nyquist={grid.nyquist:.4g}"
    )
    return grid


class _GridField(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    grid: FourierGrid
    values: np.ndarray
    representation: Representation = Representation.PHYSICAL

    leading_shape: ClassVar[Tuple[int, ...]] = ()

    @field_validator("values", mode="before")
    @classmethod
    def as_complex(cls, v):
        return np.asarray(v, dtype=np.complex128)

    @model_validator(mode="after")
    def check_shape(self):
        n = self.grid.n_per_axis
        expected = self.leading_shape + (n, n, n)
        if self.values.shape != expected:
            raise ValueError(
                f"{type(self).__name__} values must have shape {expected}, "
                f"got {self.values.shape}"
            )
        return self

    def with_values(self, values: np.ndarray, representation: Representation = None):
        return type(self)(
            grid=self.grid,
            values=values,
            representation=representation or self.representation,
        )

    def to_spectral(self):
        if self.representation is Representation.SPECTRAL:
            return self
        return transform(self, Representation.SPECTRAL)

    def to_physical(self):
        if self.representation is Representation.PHYSICAL:
            return self
        return transform(self, Representation.PHYSICAL)

    def __add__(self, other):
        other = other.to_representation(self.representation)
        return self.with_values(self.values + other.values)

    def __sub__(self, other):
        other = other.to_representation(self.representation)
        return self.with_values(self.values - other.values)

    def __mul__(self, scalar: complex):
        return self.with_values(self.values * scalar)

    __rmul__ = __mul__

    def to_representation(self, representation: Representation):
        if representation is Representation.SPECTRAL:
            return self.to_spectral()
        return self.to_physical()


class ScalarField(_GridField):
    leading_shape: ClassVar[Tuple[int, ...]] = ()


class SpinorField(_GridField):
    """Four complex components per node, shape (4, n, n, n)."""

    leading_shape: ClassVar[Tuple[int, ...]] = (4,)


GridFieldT = TypeVar("GridFieldT", ScalarField, SpinorField)
Symbol = Union[np.ndarray, Callable[[np.ndarray], np.ndarray]]


def fft_workers() -> int:
    return SpectralSettings().threads


def transform(field: GridFieldT, direction: Representation) -> GridFieldT:
    """Move a field to the requested representation."""
    if field.representation is direction:
        raise RepresentationError(
            f"Field is already in the {direction.value} representation"
        )
    grid = field.grid
    if direction is Representation.SPECTRAL:
        values = scipy.fft.fftn(field.values, axes=SPATIAL_AXES, workers=fft_workers())
        values *= grid.cell_volume
    else:
        values = scipy.fft.ifftn(
            field.values, axes=SPATIAL_AXES, workers=fft_workers()
        )
        values /= grid.cell_volume
    return field.with_values(values, direction)


def _evaluate_symbol(symbol: Symbol, grid: FourierGrid) -> np.ndarray:
    values = symbol(grid.wavevectors) if callable(symbol) else symbol
    values = np.asarray(values)
    if not np.all(np.isfinite(values)):
        raise MultiplierError("Symbol is not finite at every lattice node")
    return values


def apply_multiplier(field: GridFieldT, symbol: Symbol) -> GridFieldT:
    """
    Multiply spectral coefficients by a scalar or 4x4-matrix symbol.

    The symbol is either an array on the lattice or a callable receiving the
    (3, n, n, n) wavevector array. Physical input is transformed, multiplied
    and handed back in the physical representation.
    """
    grid = field.grid
    n = grid.n_per_axis
    values = _evaluate_symbol(symbol, grid)
    spectral = field.to_spectral()

    if values.shape in ((), (n, n, n)):
        out = spectral.values * values
    elif values.shape == (4, 4, n, n, n):
        if not isinstance(field, SpinorField):
            raise MultiplierError("Matrix symbols need a spinor field")
        out = np.einsum("ij...,j...->i...", values, spectral.values)
    else:
        raise MultiplierError(f"Symbol shape {values.shape} does not fit the grid")

    result = spectral.with_values(out)
    if field.representation is Representation.PHYSICAL:
        return result.to_physical()
    return result


def _check_dyadic(N: float) -> None:
    if not N > 0 or not math.log2(N).is_integer():
        raise ValueError(f"Littlewood-Paley scale must be a power of two, got {N}")


def littlewood_paley_symbol(grid: FourierGrid, N: float) -> np.ndarray:
    """rho_N(xi) = rho(xi / N) - rho(2 xi / N)."""
    xi = grid.wavenumber_modulus
    return bump(xi / N) - bump(2 * xi / N)


def littlewood_paley(field: GridFieldT, N: float) -> GridFieldT:
    _check_dyadic(N)
    return apply_multiplier(field, littlewood_paley_symbol(field.grid, N))


def littlewood_paley_tilde(field: GridFieldT, N: float) -> GridFieldT:
    """Fattened projection with symbol rho(xi / 2N) - rho(4 xi / N)."""
    _check_dyadic(N)
    xi = field.grid.wavenumber_modulus
    return apply_multiplier(field, bump(xi / (2 * N)) - bump(4 * xi / N))


def littlewood_paley_low(field: GridFieldT, N0: float) -> GridFieldT:
    _check_dyadic(N0)
    return apply_multiplier(field, bump(field.grid.wavenumber_modulus / N0))


def dyadic_range(grid: FourierGrid) -> List[float]:
    """Dyadic N whose annulus N/2 <= |xi| <= 2N meets the lattice below Nyquist."""
    low = math.ceil(math.log2(grid.wavenumber_spacing / 2))
    high = math.floor(math.log2(grid.nyquist / 2))
    return [2.0**j for j in range(low, high + 1)]


def littlewood_paley_pieces(
    field: GridFieldT, N0: float
) -> Tuple[GridFieldT, Dict[float, GridFieldT]]:
    """Split a field into P_{<=N0} f and P_N f for every N > N0 the lattice needs."""
    _check_dyadic(N0)
    top = float(np.max(field.grid.wavenumber_modulus))
    low = littlewood_paley_low(field, N0)
    pieces = {}
    N = 2 * N0
    while True:
        pieces[N] = littlewood_paley(field, N)
        if N >= top:
            break
        N *= 2
    return low, pieces


def _slab_fsum(density: np.ndarray) -> float:
    """Order-fixed reduction: per-slab partial sums combined with math.fsum."""
    slabs = density.reshape(-1, density.shape[-1] * density.shape[-2])
    return math.fsum(np.sum(slabs, axis=1))


def pointwise_modulus(field: GridFieldT) -> np.ndarray:
    """|f| per node; spinors use the Euclidean C^4 norm."""
    if isinstance(field, SpinorField):
        return np.sqrt(np.sum(np.abs(field.values) ** 2, axis=0))
    return np.abs(field.values)


def l2_norm(field: GridFieldT) -> float:
    grid = field.grid
    squared = np.abs(field.values) ** 2
    if field.representation is Representation.SPECTRAL:
        return math.sqrt(_slab_fsum(squared) / grid.volume)
    return math.sqrt(_slab_fsum(squared) * grid.cell_volume)


def lp_norm(field: GridFieldT, p: float) -> float:
    modulus = pointwise_modulus(field.to_physical())
    return (_slab_fsum(modulus**p) * field.grid.cell_volume) ** (1.0 / p)


def sup_norm(field: GridFieldT) -> float:
    return float(np.max(pointwise_modulus(field.to_physical())))


def sobolev_norm(field: GridFieldT, s: float) -> float:
    """||<D>^s f||_{L2} by spectral weighting."""
    spectral = field.to_spectral()
    weighted = spectral.values * spectral.grid.bracket**s
    return math.sqrt(_slab_fsum(np.abs(weighted) ** 2) / field.grid.volume)


def weighted_norm(field: GridFieldT, weight_power: int = 1, s: float = 2) -> float:
    """||<x>^a f||_{H^s} with <x> taken on folded coordinates."""
    grid = field.grid
    physical = field.to_physical()
    weight = (1.0 + grid.radius**2) ** (weight_power / 2)
    return sobolev_norm(physical.with_values(physical.values * weight), s)


def spectral_sup_norm(field: GridFieldT, weight_power: float = 10) -> float:
    """||<xi>^w f^||_{L_xi^inf}."""
    spectral = field.to_spectral()
    weight = spectral.grid.bracket**weight_power
    return float(np.max(weight * pointwise_modulus(spectral)))


def multi_indices(order: int) -> List[Tuple[int, int, int]]:
    return [
        (a, b, c)
        for total in range(order + 1)
        for a in range(total + 1)
        for b in range(total + 1 - a)
        for c in [total - a - b]
    ]


def w_k_infinity_norm(field: GridFieldT, k: int) -> float:
    """Sum over |alpha| <= k of ||d^alpha f||_{L^inf}, derivatives taken spectrally."""
    spectral = field.to_spectral()
    xi = spectral.grid.wavevectors
    total = []
    for alpha in multi_indices(k):
        symbol = np.prod([(1j * xi[j]) ** alpha[j] for j in range(3)], axis=0)
        derivative = spectral.with_values(spectral.values * symbol).to_physical()
        total.append(sup_norm(derivative))
    return math.fsum(total)


def dealias_mask(grid: FourierGrid) -> np.ndarray:
    """Two-thirds rule: keep modes with every |xi_j| below 2/3 of Nyquist."""
    cut = 2.0 / 3.0 * grid.nyquist
    return np.all(np.abs(grid.wavevectors) < cut, axis=0)


def plane_wave(grid: FourierGrid, node: Tuple[int, int, int]) -> np.ndarray:
    """exp(i x.xi0) sampled on the grid for the lattice node with the given index."""
    xi0 = grid.wavevectors[(slice(None),) + tuple(node)]
    return np.exp(1j * np.einsum("j,j...->...", xi0, grid.coordinates))


def gaussian(
    grid: FourierGrid, width: float = 1.0, center=(0.0, 0.0, 0.0)
) -> np.ndarray:
    offset = grid.fold(grid.coordinates - np.reshape(center, (3, 1, 1, 1)))
    return np.exp(-np.sum(offset**2, axis=0) / (2 * width**2))


def random_smooth(
    grid: FourierGrid,
    rng: np.random.Generator,
    components: int = 4,
    width: float = 1.0,
) -> np.ndarray:
    """Seeded complex noise filtered by a Gaussian spectral envelope."""
    n = grid.n_per_axis
    noise = rng.standard_normal((components, n, n, n)) + 1j * rng.standard_normal(
        (components, n, n, n)
    )
    envelope = np.exp(-(width**2) * grid.wavenumber_modulus**2 / 2)
    spectral = scipy.fft.fftn(noise, axes=SPATIAL_AXES, workers=fft_workers())
    return scipy.fft.ifftn(
        spectral * envelope, axes=SPATIAL_AXES, workers=fft_workers()
    )


def bracket_of(xi: np.ndarray) -> np.ndarray:
    """<xi> for wavevectors stacked along axis 0."""
    xi = np.asarray(xi, dtype=np.float64)
    return np.sqrt(1.0 + np.sum(xi**2, axis=0))

