"""
Interaction profiles, the logarithmic phase correction and drift metrics.

The profile of branch theta is f_theta(t) = exp(theta i t <D>) Pi_theta psi(t).
Its phase correction B(t, theta xi) is accumulated from

    c1 * sum_theta' int K(theta xi, sigma) |psi_theta'^(s, sigma)|^2 dsigma / (2pi)^3
       * rho(s^-a theta xi) / <s>

with K = |zeta/<zeta> -+ theta' sigma/<sigma>|^-1, by the trapezoid rule over
the snapshot times. The lattice sum carries the measure dsigma / (2pi)^3 = L^-3.
"""

import logging
import math
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PrivateAttr

from app.dirac_algebra import project
from app.models import (
    InsufficientSnapshotsError,
    KernelVariant,
    PhaseConvention,
    PhaseUnwrapError,
    ProfileTiming,
    RunConfig,
    Sign,
)
from app.propagator import half_kg_propagate
from app.spectral import FourierGrid, SpinorField, bump, pointwise_modulus
from app.utils.reports import write_arrays

logger = logging.getLogger(__name__)

KERNEL_FLOOR = 1e-8
SOURCE_FLOOR = 1e-8
UNWRAP_LIMIT = 0.9 * math.pi
SKIPPED_MASS_WARNING = 1e-2
_CHUNK_ELEMENTS = 1 << 22


class ProfileSnapshot(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    time: float
    sign: Sign
    profile: SpinorField


def interaction_profile(psi: SpinorField, t: float, theta: Sign) -> ProfileSnapshot:
    """f^_theta(t, xi) = exp(theta i t <xi>) (Pi_theta psi)^(xi)."""
    branch = project(psi.to_spectral(), theta)
    return ProfileSnapshot(
        time=t, sign=theta, profile=half_kg_propagate(branch, -t, theta)
    )


class Snapshot(BaseModel):
    """State at one recorded time; profiles are computed on first use."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    time: float
    psi: SpinorField

    _profiles: Dict[Sign, ProfileSnapshot] = PrivateAttr(default_factory=dict)

    def profile(self, theta: Sign) -> ProfileSnapshot:
        if theta not in self._profiles:
            self._profiles[theta] = interaction_profile(self.psi, self.time, theta)
        return self._profiles[theta]

    @property
    def profiles(self) -> Dict[Sign, ProfileSnapshot]:
        return {theta: self.profile(theta) for theta in Sign}


def drift_times(t_final: float) -> List[float]:
    """Dyadic block ends 4, 8, 16, ... up to t_final."""
    times = []
    t = 4.0
    while t <= t_final + 1e-9:
        times.append(t)
        t *= 2
    return times


def spectral_density(profile: SpinorField) -> np.ndarray:
    """|f^|^2 summed over components, flattened."""
    return (pointwise_modulus(profile.to_spectral()) ** 2).ravel()


def active_nodes(
    profile: SpinorField,
    weight_power: float,
    support_threshold: float,
    cutoff_radius: float,
) -> np.ndarray:
    """Flat indices where <xi>^w |f^| >= threshold * max inside |xi| < cutoff_radius."""
    grid = profile.grid
    weighted = (grid.bracket**weight_power * pointwise_modulus(profile.to_spectral()))
    weighted = weighted.ravel()
    inside = grid.wavenumber_modulus.ravel() < cutoff_radius
    peak = float(np.max(weighted[inside])) if np.any(inside) else 0.0
    if peak == 0.0:
        return np.zeros(0, dtype=np.intp)
    return np.flatnonzero(inside & (weighted >= support_threshold * peak))


def cutoff_weight(
    modulus: np.ndarray, s: float, cutoff_exponent: float
) -> np.ndarray:
    """rho(s^-a |zeta|) / <s>; at s = 0 only zeta = 0 survives."""
    modulus = np.asarray(modulus, dtype=np.float64)
    if s <= 0:
        return (modulus == 0).astype(np.float64)
    return bump(s ** (-cutoff_exponent) * modulus) / math.sqrt(1.0 + s * s)


class InteractionCoefficient(BaseModel):
    """c1 sum_sigma K |f^_theta'|^2 / L^3 per target node, split by theta'."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    parts: Dict[Sign, np.ndarray]
    skipped_mass: float = 0.0
    truncated_mass: float = 0.0

    @property
    def total(self) -> np.ndarray:
        return self.parts[Sign.PLUS] + self.parts[Sign.MINUS]


def _coincident_partner(
    grid: FourierGrid, targets: np.ndarray, flip: bool
) -> Tuple[np.ndarray, np.ndarray]:
    """Flat index of xi (or -xi) per target and whether that node is on the lattice."""
    if not flip:
        return targets, np.ones(targets.shape, dtype=bool)
    partner = grid.negation_index[targets]
    xi = grid.wavevectors.reshape(3, -1)
    valid = np.all(xi[:, partner] == -xi[:, targets], axis=0)
    return partner, valid


def interaction_coefficient(
    profiles: Dict[Sign, SpinorField],
    theta: Sign,
    variant: KernelVariant,
    targets: np.ndarray,
    c1: float,
) -> InteractionCoefficient:
    """
    Kernel sums for the targets zeta = theta xi.

    The squared kernel distance is expanded as |u|^2 + |v|^2 +- 2 u.v and
    evaluated chunkwise with matrix products. Exact lattice coincidences are
    zeroed by index, everything else closer than KERNEL_FLOOR by value.
    """
    grid = next(iter(profiles.values())).grid
    xi = grid.wavevectors.reshape(3, -1)
    bracket = grid.bracket.ravel()
    u = theta.factor * xi[:, targets] / bracket[targets]
    u2 = np.sum(u**2, axis=0)

    densities = {sign: spectral_density(profiles[sign]) for sign in Sign}
    peak = max(float(np.max(d)) for d in densities.values())

    parts: Dict[Sign, np.ndarray] = {}
    skipped = np.zeros(targets.size)
    truncated = 0.0
    for source_sign in Sign:
        density = densities[source_sign]
        values = np.zeros(targets.size)
        if peak == 0.0 or targets.size == 0:
            parts[source_sign] = values
            continue
        sources = np.flatnonzero(density >= SOURCE_FLOOR * peak)
        truncated += (math.fsum(density) - math.fsum(density[sources])) / grid.volume
        if sources.size == 0:
            parts[source_sign] = values
            continue
        weights = density[sources] / grid.volume

        v = xi[:, sources] / bracket[sources]
        v2 = np.sum(v**2, axis=0)
        # minus: |u - theta' v|, plus: |u + theta' v|
        sign = source_sign.factor
        if variant is KernelVariant.MINUS:
            sign = -sign
        # u + sign v vanishes at sigma = -sign theta xi
        same_node = theta.factor * -sign > 0
        partner, valid = _coincident_partner(grid, targets, flip=not same_node)

        chunk = max(1, _CHUNK_ELEMENTS // max(sources.size, 1))
        for start in range(0, targets.size, chunk):
            rows = slice(start, start + chunk)
            d2 = u2[rows, None] + v2[None, :] + 2 * sign * (u[:, rows].T @ v)
            np.maximum(d2, 0.0, out=d2)
            distance = np.sqrt(d2)
            singular = distance < KERNEL_FLOOR

            position = np.searchsorted(sources, partner[rows])
            clipped = np.minimum(position, sources.size - 1)
            hit = valid[rows] & (sources[clipped] == partner[rows])
            singular[np.flatnonzero(hit), clipped[hit]] = True

            kernel = np.where(singular, 0.0, 1.0 / np.where(singular, 1.0, distance))
            values[rows] = kernel @ weights
            skipped[rows] += singular @ weights
            logger.debug(
                f"kernel chunk {start}:{start + chunk} of {targets.size} "
                f"({source_sign.value} sources: {sources.size})"
            )
        parts[source_sign] = c1 * values

    return InteractionCoefficient(
        parts=parts,
        skipped_mass=float(np.max(skipped)) if skipped.size else 0.0,
        truncated_mass=truncated,
    )


def phase_integrand(
    coefficient: InteractionCoefficient,
    grid: FourierGrid,
    targets: np.ndarray,
    s: float,
    cutoff_exponent: float,
) -> Dict[Sign, np.ndarray]:
    weight = cutoff_weight(grid.wavenumber_modulus.ravel()[targets], s, cutoff_exponent)
    return {sign: part * weight for sign, part in coefficient.parts.items()}


def phase_correction_increment(
    start: Snapshot,
    end: Snapshot,
    theta: Sign,
    variant: KernelVariant,
    targets: np.ndarray,
    c1: float,
    cutoff_exponent: float = 0.01,
) -> Dict[Sign, np.ndarray]:
    """Trapezoid increment of B_theta' over [start.time, end.time] at the targets."""
    ds = end.time - start.time
    if ds <= 0:
        raise ValueError(f"Increment needs end after start, got ds={ds}")
    integrands = []
    for snapshot in (start, end):
        profiles = {sign: snapshot.profile(sign).profile for sign in Sign}
        coefficient = interaction_coefficient(profiles, theta, variant, targets, c1)
        integrands.append(
            phase_integrand(
                coefficient, snapshot.psi.grid, targets, snapshot.time, cutoff_exponent
            )
        )
    return {
        sign: 0.5 * ds * (integrands[0][sign] + integrands[1][sign]) for sign in Sign
    }


class PhaseTable(BaseModel):
    """Accumulated B(t, theta xi) on the active targets of one branch."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    grid: FourierGrid
    theta: Sign
    variant: KernelVariant
    c1: float
    cutoff_exponent: float = 0.01
    timing: ProfileTiming = ProfileTiming.EVOLVING
    targets: np.ndarray
    times: List[float] = Field(default_factory=list)
    parts: Dict[Sign, np.ndarray] = Field(default_factory=dict)
    skipped_mass: float = 0.0
    truncated_mass: float = 0.0

    _last_integrand: Optional[Dict[Sign, np.ndarray]] = PrivateAttr(default=None)
    _coefficient: Optional[InteractionCoefficient] = PrivateAttr(default=None)

    def model_post_init(self, __context) -> None:
        if not self.parts:
            self.parts = {sign: np.zeros(self.targets.size) for sign in Sign}

    @property
    def time(self) -> float:
        return self.times[-1] if self.times else 0.0

    @property
    def values(self) -> np.ndarray:
        return self.parts[Sign.PLUS] + self.parts[Sign.MINUS]

    @property
    def coefficient(self) -> Optional[InteractionCoefficient]:
        """Kernel sums behind the latest integrand (the first ones when frozen)."""
        return self._coefficient

    def lattice_values(self) -> np.ndarray:
        """B spread over the full lattice, zero off the targets."""
        n = self.grid.n_per_axis
        full = np.zeros(n**3)
        full[self.targets] = self.values
        return full.reshape(n, n, n)

    def accumulate(self, snapshot: Snapshot) -> None:
        if self.times and snapshot.time <= self.time:
            raise ValueError(
                f"Snapshots must arrive in time order: "
                f"{snapshot.time} after {self.time}"
            )
        if self._coefficient is None or self.timing is ProfileTiming.EVOLVING:
            profiles = {sign: snapshot.profile(sign).profile for sign in Sign}
            self._coefficient = interaction_coefficient(
                profiles, self.theta, self.variant, self.targets, self.c1
            )
            self.skipped_mass = max(self.skipped_mass, self._coefficient.skipped_mass)
            self.truncated_mass = max(
                self.truncated_mass, self._coefficient.truncated_mass
            )
        integrand = phase_integrand(
            self._coefficient,
            self.grid,
            self.targets,
            snapshot.time,
            self.cutoff_exponent,
        )
        if self._last_integrand is not None:
            ds = snapshot.time - self.time
            for sign in Sign:
                self.parts[sign] = self.parts[sign] + 0.5 * ds * (
                    self._last_integrand[sign] + integrand[sign]
                )
        self._last_integrand = integrand
        self.times.append(snapshot.time)
        logger.debug(
            f"B[{self.variant.value}] t={snapshot.time:.3f}: "
            f"max={float(np.max(self.values, initial=0.0)):.4e}"
        )


def corrected_profile(
    snapshot: ProfileSnapshot,
    table: PhaseTable,
    convention: PhaseConvention = PhaseConvention.DYNAMICAL,
) -> SpinorField:
    """g_theta = exp(-+iB(t, theta xi)) f^_theta on the targets, f^_theta elsewhere."""
    if not math.isclose(snapshot.time, table.time, rel_tol=0, abs_tol=1e-9):
        raise ValueError(
            f"Profile at t={snapshot.time} but phase table "
            f"accumulated to t={table.time}"
        )
    if snapshot.sign is not table.theta:
        raise ValueError(
            f"Profile of branch {snapshot.sign.value} with a table for "
            f"branch {table.theta.value}"
        )
    direction = -1.0 if convention is PhaseConvention.DYNAMICAL else 1.0
    profile = snapshot.profile.to_spectral()
    values = profile.values.reshape(4, -1).copy()
    values[:, table.targets] *= np.exp(1j * direction * table.values)
    return profile.with_values(values.reshape(profile.values.shape))


def drift_metric(
    g1: SpinorField, g2: SpinorField, weight_power: float = 10, align: bool = True
) -> float:
    """
    max <xi>^w |g2 exp(-i alpha) - g1| with the uniform phase alpha minimising
    the weighted L2 distance (alpha = 0 when align is off).
    """
    first = g1.to_spectral()
    second = g2.to_spectral()
    bracket = first.grid.bracket
    if align:
        overlap = np.sum(
            bracket ** (2 * weight_power)
            * np.einsum("c...,c...->...", np.conj(first.values), second.values)
        )
        phase = np.exp(-1j * np.angle(overlap)) if overlap != 0 else 1.0
    else:
        phase = 1.0
    difference = second.with_values(second.values * phase - first.values)
    return float(np.max(bracket**weight_power * pointwise_modulus(difference)))


class DriftMetric(BaseModel):
    t1: float
    t2: float
    weight_power: float
    value: float
    corrected: bool
    variant: Optional[KernelVariant] = None
    inactive_bound: float = 0.0


class ScatteringTracker(BaseModel):
    """
    Snapshot observer accumulating phase tables for each kernel variant,
    the target-node phase history and the full profiles at drift times.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    theta: Sign = Sign.PLUS
    variants: List[KernelVariant] = Field(
        default_factory=lambda: [KernelVariant.MINUS]
    )
    c1: float
    t_final: float
    cutoff_exponent: float = 0.01
    timing: ProfileTiming = ProfileTiming.EVOLVING
    convention: PhaseConvention = PhaseConvention.DYNAMICAL
    support_threshold: float = 1e-3
    weight_power: float = 10.0

    tables: Dict[KernelVariant, PhaseTable] = Field(default_factory=dict)
    targets: Optional[np.ndarray] = None
    probe_times: List[float] = Field(default_factory=list)

    _probes: List[np.ndarray] = PrivateAttr(default_factory=list)
    _profiles: Dict[float, SpinorField] = PrivateAttr(default_factory=dict)
    _corrected: Dict[Tuple[KernelVariant, float], SpinorField] = PrivateAttr(
        default_factory=dict
    )

    @classmethod
    def from_config(
        cls, config: RunConfig, variants: Optional[Sequence[KernelVariant]] = None
    ) -> "ScatteringTracker":
        return cls(
            theta=config.theta,
            variants=list(variants or [config.kernel_variant]),
            c1=config.c1,
            t_final=config.t_final,
            cutoff_exponent=config.cutoff_exponent,
            timing=config.profile_timing,
            convention=config.phase_convention,
            support_threshold=config.support_threshold,
            weight_power=config.weight_power,
        )

    @property
    def drift_times(self) -> List[float]:
        return drift_times(self.t_final)

    @property
    def cutoff_radius(self) -> float:
        return 2.0 * max(self.t_final, 1.0) ** self.cutoff_exponent

    def probes(self) -> np.ndarray:
        """f^_theta at the targets, shape (snapshots, targets, 4)."""
        return np.array(self._probes)

    def recorded_drift_times(self) -> List[float]:
        return [t for t in self.drift_times if _time_key(t) in self._profiles]

    def profile_at(self, t: float) -> SpinorField:
        return self._profiles[_time_key(t)]

    def corrected_at(self, variant: KernelVariant, t: float) -> SpinorField:
        return self._corrected[(variant, _time_key(t))]

    def __call__(self, snapshot: Snapshot) -> None:
        profile = snapshot.profile(self.theta)
        if self.targets is None:
            self.targets = active_nodes(
                profile.profile,
                self.weight_power,
                self.support_threshold,
                self.cutoff_radius,
            )
            logger.info(
                f"Phase correction on {self.targets.size} active nodes of branch "
                f"{self.theta.value} (|xi| < {self.cutoff_radius:.3f})"
            )
            for variant in self.variants:
                self.tables[variant] = PhaseTable(
                    grid=snapshot.psi.grid,
                    theta=self.theta,
                    variant=variant,
                    c1=self.c1,
                    cutoff_exponent=self.cutoff_exponent,
                    timing=self.timing,
                    targets=self.targets,
                )

        for table in self.tables.values():
            table.accumulate(snapshot)

        values = profile.profile.values.reshape(4, -1)[:, self.targets]
        self._probes.append(values.T.copy())
        self.probe_times.append(snapshot.time)

        if any(math.isclose(snapshot.time, t, abs_tol=1e-9) for t in self.drift_times):
            key = _time_key(snapshot.time)
            self._profiles[key] = profile.profile
            for variant, table in self.tables.items():
                self._corrected[(variant, key)] = corrected_profile(
                    profile, table, self.convention
                )

    def warn_skipped_mass(self, total_mass: float) -> None:
        for variant, table in self.tables.items():
            limit = SKIPPED_MASS_WARNING * total_mass
            if total_mass > 0 and table.skipped_mass > limit:
                logger.warning(
                    f"{variant.value}: singular pairs skipped {table.skipped_mass:.3e} "
                    f"of mass {total_mass:.3e}"
                )


def _time_key(t: float) -> float:
    return round(float(t), 9)


def _inactive_bound(tracker: ScatteringTracker, *profiles: SpinorField) -> float:
    grid = profiles[0].grid
    inactive = np.ones(grid.n_per_axis**3, dtype=bool)
    inactive[tracker.targets] = False
    if not np.any(inactive):
        return 0.0
    weight = grid.bracket.ravel() ** tracker.weight_power
    largest = max(
        float(np.max(weight[inactive] * pointwise_modulus(p).ravel()[inactive]))
        for p in profiles
    )
    return 2.0 * largest


def drift_blocks(
    tracker: ScatteringTracker, weight_power: Optional[float] = None
) -> List[DriftMetric]:
    """Uncorrected and corrected drift over [t, 2t] for each recorded dyadic block."""
    weight_power = tracker.weight_power if weight_power is None else weight_power
    recorded = tracker.recorded_drift_times()
    metrics = []
    for t1, t2 in zip(recorded, recorded[1:]):
        f1, f2 = tracker.profile_at(t1), tracker.profile_at(t2)
        bound = _inactive_bound(tracker, f1, f2)
        block = [
            DriftMetric(
                t1=t1,
                t2=t2,
                weight_power=weight_power,
                value=drift_metric(f1, f2, weight_power),
                corrected=False,
                inactive_bound=bound,
            )
        ]
        for variant in tracker.tables:
            block.append(
                DriftMetric(
                    t1=t1,
                    t2=t2,
                    weight_power=weight_power,
                    value=drift_metric(
                        tracker.corrected_at(variant, t1),
                        tracker.corrected_at(variant, t2),
                        weight_power,
                    ),
                    corrected=True,
                    variant=variant,
                    inactive_bound=bound,
                )
            )
        summary = ", ".join(
            f"{m.variant.value if m.variant else 'uncorrected'}={m.value:.4e}"
            for m in block
        )
        logger.info(f"Drift block [{t1}, {t2}]: {summary}")
        metrics.extend(block)
    return metrics


def _unwrapped_phase(history: np.ndarray) -> np.ndarray:
    """Unwrapped arg <f^(t0), f^(t)> along the snapshot axis."""
    overlap = np.einsum("tc,c->t", history, np.conj(history[0]))
    steps = np.angle(overlap[1:] * np.conj(overlap[:-1]))
    if np.any(np.abs(steps) > UNWRAP_LIMIT):
        worst = float(np.max(np.abs(steps)))
        raise PhaseUnwrapError(
            f"Phase step {worst:.3f} rad between snapshots is ambiguous; "
            f"record snapshots more densely"
        )
    start = np.angle(overlap[0])
    return np.concatenate([[start], start + np.cumsum(steps)])


class PhaseSlope(BaseModel):
    measured: float
    predicted: float
    probe: Tuple[int, int, int]
    reference: Tuple[int, int, int]
    window: Tuple[float, float]
    points: int

    @property
    def ratio(self) -> float:
        return self.measured / self.predicted if self.predicted else math.nan


def log_phase_slope(
    tracker: ScatteringTracker,
    theta: Optional[Sign] = None,
    xi_star: Optional[Tuple[int, int, int]] = None,
    window: Optional[Tuple[float, float]] = None,
    variant: Optional[KernelVariant] = None,
) -> PhaseSlope:
    """
    Slope of arg f^_theta(t, xi*) - arg f^_theta(t, xi_ref) against log t.

    xi* defaults to the spectral peak; the reference is the significant node
    (|f^| >= 0.1 peak) with the smallest interaction coefficient. The
    prediction is the coefficient difference from the last snapshot, signed
    by the phase convention.
    """
    theta = theta or tracker.theta
    if theta is not tracker.theta:
        raise ValueError(
            f"Tracker follows branch {tracker.theta.value}, not {theta.value}"
        )
    variant = variant or tracker.variants[0]
    coefficient = tracker.tables[variant].coefficient
    if coefficient is None or tracker.targets is None or tracker.targets.size == 0:
        raise InsufficientSnapshotsError("Tracker has not seen any snapshot")

    history = tracker.probes()
    times = np.asarray(tracker.probe_times)
    low, high = window or (tracker.t_final / 4, tracker.t_final)
    keep = (times >= low) & (times <= high) & (times > 0)
    if np.sum(keep) < 2:
        raise InsufficientSnapshotsError(
            f"Need two snapshots in [{low}, {high}] for the phase slope"
        )

    n = tracker.tables[variant].grid.n_per_axis
    modulus = np.sqrt(np.sum(np.abs(history[-1]) ** 2, axis=1))
    if xi_star is None:
        probe = int(np.argmax(modulus))
    else:
        flat = int(np.ravel_multi_index(xi_star, (n, n, n)))
        matches = np.flatnonzero(tracker.targets == flat)
        if matches.size == 0:
            raise ValueError(f"Node {xi_star} is outside the active support")
        probe = int(matches[0])
    significant = np.flatnonzero(modulus >= 0.1 * modulus[probe])
    total = coefficient.total
    reference = int(significant[np.argmin(total[significant])])

    relative = _unwrapped_phase(history[:, probe]) - _unwrapped_phase(
        history[:, reference]
    )
    slope, _ = np.polyfit(np.log(times[keep]), relative[keep], 1)
    direction = 1.0 if tracker.convention is PhaseConvention.DYNAMICAL else -1.0
    predicted = direction * float(total[probe] - total[reference])

    result = PhaseSlope(
        measured=float(slope),
        predicted=predicted,
        probe=tuple(int(i) for i in np.unravel_index(tracker.targets[probe], (n,) * 3)),
        reference=tuple(
            int(i) for i in np.unravel_index(tracker.targets[reference], (n,) * 3)
        ),
        window=(float(low), float(high)),
        points=int(np.sum(keep)),
    )
    logger.info(
        f"Log-phase slope at {result.probe}: measured {result.measured:.4e}, "
        f"predicted {result.predicted:.4e}"
    )
    return result


def write_phase_table(table: PhaseTable, path: Path) -> None:
    write_arrays(
        Path(path),
        {
            "targets": table.targets,
            "values": table.values,
            "part_plus": table.parts[Sign.PLUS],
            "part_minus": table.parts[Sign.MINUS],
            "times": np.asarray(table.times),
            "theta": np.asarray(table.theta.value),
            "variant": np.asarray(table.variant.value),
            "timing": np.asarray(table.timing.value),
            "cutoff_exponent": np.asarray(table.cutoff_exponent),
            "skipped_mass": np.asarray(table.skipped_mass),
            "shape": np.asarray((table.grid.n_per_axis,) * 3),
        },
    )
