import logging
from abc import ABC, abstractmethod
from typing import ClassVar, Tuple, Type

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from app.dirac_algebra import project
from app.models import RunConfig, Sign
from app.spectral import (
    FourierGrid,
    SpinorField,
    gaussian,
    random_smooth,
    sobolev_norm,
    spectral_sup_norm,
    sup_norm,
    weighted_norm,
)

logger = logging.getLogger(__name__)


class InitialDataFamily(ABC, BaseModel):
    """Abstract base class for all initial-data families."""

    model_config = ConfigDict(extra="ignore")

    name: ClassVar[str]

    eps0: float = Field(ge=0)
    width: float = Field(default=3.0, gt=0)
    k0: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    center: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    theta: Sign = Sign.PLUS
    seed: int = 0

    @classmethod
    def can_handle(cls, name: str) -> bool:
        """Check if this family is the one named in the run configuration."""
        return name == cls.name

    @abstractmethod
    def build(self, grid: FourierGrid) -> SpinorField:
        """Sample the initial spinor on the grid."""
        raise NotImplementedError

    def modulated_gaussian(self, grid: FourierGrid) -> SpinorField:
        """eps0 exp(-|x - x0|^2 / 2w^2) exp(i k0.x) e1."""
        envelope = self.eps0 * gaussian(grid, self.width, self.center)
        carrier = np.exp(1j * np.einsum("j,j...->...", self.k0, grid.coordinates))
        values = np.zeros((4,) + envelope.shape, dtype=np.complex128)
        values[0] = envelope * carrier
        return SpinorField(grid=grid, values=values)


class GaussianFamily(InitialDataFamily):
    """Modulated Gaussian in the first spinor component, both branches present."""

    name: ClassVar[str] = "gaussian"

    def build(self, grid: FourierGrid) -> SpinorField:
        return self.modulated_gaussian(grid)


class ProjectedGaussianFamily(InitialDataFamily):
    """Pi_theta applied to the modulated Gaussian; eps0 is the unprojected peak."""

    name: ClassVar[str] = "projected-gaussian"

    def build(self, grid: FourierGrid) -> SpinorField:
        return project(self.modulated_gaussian(grid), self.theta)


class RandomSmoothFamily(InitialDataFamily):
    """Seeded spinor noise with spectral envelope exp(-w^2 |xi|^2 / 2), sup = eps0."""

    name: ClassVar[str] = "random-smooth"

    def build(self, grid: FourierGrid) -> SpinorField:
        rng = np.random.default_rng(self.seed)
        field = SpinorField(grid=grid, values=random_smooth(grid, rng, 4, self.width))
        return field * (self.eps0 / sup_norm(field))


INITIAL_DATA_FAMILIES: list[Type[InitialDataFamily]] = [
    GaussianFamily,
    ProjectedGaussianFamily,
    RandomSmoothFamily,
]


def resolve_family(name: str) -> Type[InitialDataFamily]:
    for family_cls in INITIAL_DATA_FAMILIES:
        if family_cls.can_handle(name):
            return family_cls
    names = [family_cls.name for family_cls in INITIAL_DATA_FAMILIES]
    raise ValueError(f"Unknown initial-data family {name!r}; expected one of {names}")


def build_initial_data(config: RunConfig, grid: FourierGrid) -> SpinorField:
    family_cls = resolve_family(config.family)
    family = family_cls.model_validate(config.model_dump())
    logger.info(
        f"Initial data: {family_cls.name} with eps0={family.eps0}, "
        f"width={family.width}, theta={family.theta.value}"
    )
    return family.build(grid)


def initial_smallness(psi0: SpinorField, k: int = 8, weight_power: float = 10) -> float:
    """
    Sum over both branches of ||psi0_theta||_{H^k} + ||<x>^2 psi0_theta||_{H^2}
    + ||<xi>^w psi0_theta^||_{L^inf}.
    """
    total = 0.0
    for theta in Sign:
        branch = project(psi0, theta)
        total += (
            sobolev_norm(branch, k)
            + weighted_norm(branch, 2, 2)
            + spectral_sup_norm(branch, weight_power)
        )
    return total
