import logging
import math
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, field_validator

from app.dirac_algebra import apply_hamiltonian
from app.models import HorizonError, InsufficientSnapshotsError, Representation, Sign
from app.spectral import FourierGrid, SpinorField, apply_multiplier, l2_norm, sup_norm

logger = logging.getLogger(__name__)


class PropagatorSpec(BaseModel):
    """exp(-theta i t <D>), the half Klein-Gordon flow of one branch."""

    sign: Sign
    time: float

    @field_validator("time")
    @classmethod
    def validate_finite(cls, v: float) -> float:
        if not math.isfinite(v):
            raise ValueError(f"Propagation time must be finite, got {v}")
        return v

    def symbol(self, grid: FourierGrid) -> np.ndarray:
        return np.exp(-1j * self.sign.factor * self.time * grid.bracket)


def half_kg_propagate(field: SpinorField, t: float, theta: Sign) -> SpinorField:
    spec = PropagatorSpec(sign=theta, time=t)
    return apply_multiplier(field, spec.symbol(field.grid))


def free_dirac(psi0: SpinorField, t: float) -> SpinorField:
    """
    U(t) psi0 = exp(-it<D>) Pi_+ psi0 + exp(it<D>) Pi_- psi0.

    Evaluated in one pass as cos(t<xi>) psi^ - i sin(t<xi>) H(xi) psi^ with
    H = (alpha.xi + beta) / <xi>, since H = Pi_+ - Pi_-.
    """
    if not math.isfinite(t):
        raise ValueError(f"Propagation time must be finite, got {t}")
    spectral = psi0.to_spectral()
    grid = spectral.grid
    phase = t * grid.bracket
    h = apply_hamiltonian(grid.wavevectors, spectral.values) / grid.bracket
    values = np.cos(phase) * spectral.values - 1j * np.sin(phase) * h
    result = spectral.with_values(values)
    if psi0.representation is Representation.PHYSICAL:
        return result.to_physical()
    return result


def dirac_residual(psi0: SpinorField, t: float, dt: float = 1e-3) -> float:
    """||(d_t + alpha.grad + i beta) U(t) psi0||_{L2} with a centred time difference."""
    later = free_dirac(psi0, t + dt).to_spectral()
    earlier = free_dirac(psi0, t - dt).to_spectral()
    current = free_dirac(psi0, t).to_spectral()
    grid = current.grid
    time_derivative = (later.values - earlier.values) / (2 * dt)
    operator = 1j * apply_hamiltonian(grid.wavevectors, current.values)
    return l2_norm(current.with_values(time_derivative + operator))


def check_horizon(grid: FourierGrid, t: float) -> None:
    horizon = grid.box_length / 2
    if abs(t) > horizon:
        raise HorizonError(
            f"t={t} is past the wrap-around horizon L/2={horizon}; "
            f"periodic images would contaminate the decay"
        )


def decay_scan(psi0: SpinorField, times: Sequence[float]) -> List[Tuple[float, float]]:
    """(t, ||U(t) psi0||_{L^inf}) with the Euclidean C^4 norm per node."""
    for t in times:
        check_horizon(psi0.grid, t)
    spectral = psi0.to_spectral()
    scan = []
    for t in times:
        value = sup_norm(free_dirac(spectral, t))
        logger.debug(f"decay scan t={t}: sup={value:.6e}")
        scan.append((float(t), value))
    return scan


class DecayFit(BaseModel):
    slope: float
    intercept: float
    points: int
    window: Tuple[float, float]


def fit_decay_exponent(
    times: Sequence[float],
    values: Sequence[float],
    window: Optional[Tuple[float, float]] = None,
    min_points: int = 2,
) -> DecayFit:
    """Least-squares slope of log(value) against log(t) inside the window."""
    t = np.asarray(times, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    low, high = window if window is not None else (float(np.min(t)), float(np.max(t)))
    keep = (t > 0) & (v > 0) & (t >= low) & (t <= high)
    count = int(np.sum(keep))
    if count < min_points:
        raise InsufficientSnapshotsError(
            f"Need at least {min_points} positive samples in [{low}, {high}], "
            f"got {count}"
        )
    if count < 5:
        logger.warning(f"Decay fit over only {count} points")
    slope, intercept = np.polyfit(np.log(t[keep]), np.log(v[keep]), 1)
    return DecayFit(
        slope=float(slope),
        intercept=float(intercept),
        points=count,
        window=(float(low), float(high)),
    )
