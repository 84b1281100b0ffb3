import logging
import math
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from app.diagnostics import DiagnosticsRecord, diagnose
from app.hartree import coulomb_potential, gauge_phase_rate, inner_density
from app.initial_data import build_initial_data, initial_smallness
from app.models import (
    InstabilityError,
    KernelKind,
    KernelVariant,
    RunConfig,
    ZeroModeConvention,
)
from app.propagator import DecayFit, fit_decay_exponent, free_dirac
from app.scattering import PhaseTable, ScatteringTracker, Snapshot, drift_times
from app.spectral import SpinorField, l2_norm, make_grid
from app.utils.checkpoint import Checkpoint, write_checkpoint
from app.utils.reports import atomic_write_text, config_to_toml

logger = logging.getLogger(__name__)

MASS_GROWTH_LIMIT = 0.10
CONVERGENCE_RATIO_RANGE = (3.4, 4.6)

Observer = Callable[[Snapshot], None]


class SplitStepper(BaseModel):
    """
    Strang splitting A(dt/2) P(dt) A(dt/2) of the Dirac-Hartree flow.

    A is the exact free Dirac propagator. P multiplies by exp(i (c1 V + r) dt)
    with V = |x|^-1 * |psi|^2 frozen over the substep and r the zero-mode gauge
    rate; V only sees |psi|^2, which P leaves unchanged, so P is exact too.
    """

    c1: float
    kernel_kind: KernelKind = KernelKind.PERIODIC
    dealias: bool = False
    zero_mode: ZeroModeConvention = ZeroModeConvention.DROP
    mean_field_lambda: float = 0.0

    @classmethod
    def from_config(cls, config: RunConfig) -> "SplitStepper":
        return cls(
            c1=config.c1,
            kernel_kind=config.kernel_kind,
            dealias=config.dealias,
            zero_mode=config.zero_mode,
            mean_field_lambda=config.mean_field_lambda,
        )

    def potential_flow(self, psi: SpinorField, dt: float) -> SpinorField:
        physical = psi.to_physical()
        if self.c1 == 0:
            return physical
        density = inner_density(physical, physical)
        potential = coulomb_potential(density, self.kernel_kind, self.dealias)
        rate = self.c1 * potential.values.real + gauge_phase_rate(
            density, self.zero_mode, self.c1, self.mean_field_lambda
        )
        return physical.with_values(np.exp(1j * rate * dt) * physical.values)

    def step(self, psi: SpinorField, dt: float) -> SpinorField:
        half = free_dirac(psi.to_physical(), dt / 2)
        result = free_dirac(self.potential_flow(half, dt), dt / 2)
        if not np.all(np.isfinite(result.values)):
            raise InstabilityError(
                f"Non-finite field values after a step of {dt}", state=psi
            )
        return result

    def reverse_step(self, psi: SpinorField, dt: float) -> SpinorField:
        """S(-dt), the exact inverse of step(psi, dt) up to roundoff."""
        return self.step(psi, -dt)


def strang_step(psi: SpinorField, dt: float, c1: float, **options) -> SpinorField:
    if dt <= 0:
        raise ValueError(f"Time step must be positive, got {dt}")
    return SplitStepper(c1=c1, **options).step(psi, dt)


def reverse_step(psi: SpinorField, dt: float, c1: float, **options) -> SpinorField:
    if dt <= 0:
        raise ValueError(f"Time step must be positive, got {dt}")
    return SplitStepper(c1=c1, **options).reverse_step(psi, dt)


class TrajectoryState(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    psi: SpinorField
    time: float = 0.0
    step: int = 0
    initial_mass: float
    record: DiagnosticsRecord = Field(default_factory=DiagnosticsRecord)
    snapshots: List[Snapshot] = Field(default_factory=list)
    phase_tables: Dict[KernelVariant, PhaseTable] = Field(default_factory=dict)


def snapshot_schedule(config: RunConfig) -> List[float]:
    """Recorded times: 0, the configured times or interval grid, t_final, drift ends."""
    if config.snapshot_times is not None:
        times = list(config.snapshot_times)
    else:
        count = int(math.floor(config.t_final / config.snapshot_interval + 1e-9))
        times = [j * config.snapshot_interval for j in range(count + 1)]
    times += [0.0, config.t_final] + drift_times(config.t_final)
    unique = sorted({round(t, 9) for t in times})
    return [t for t in unique if 0.0 <= t <= config.t_final]


def _dump_instability(error: InstabilityError, out_dir: Optional[Path]) -> None:
    if out_dir is None or error.state is None:
        return
    path = Path(out_dir) / "instability_dump.bin"
    write_checkpoint(Checkpoint(time=error.time, field=error.state), path)
    logger.error(f"Wrote last good state (t={error.time}) to {path}")


def evolve(
    config: RunConfig,
    initial: Optional[SpinorField] = None,
    observers: Sequence[Observer] = (),
    out_dir: Optional[Path] = None,
) -> TrajectoryState:
    """
    Advance the configured run to t_final, recording diagnostics at every
    scheduled time and handing a Snapshot to each observer.
    """
    grid = make_grid(config.n_per_axis, config.box_length)
    psi = initial if initial is not None else build_initial_data(config, grid)
    psi = psi.to_physical()
    stepper = SplitStepper.from_config(config)
    schedule = snapshot_schedule(config)

    if out_dir is not None:
        out_dir = Path(out_dir)
        atomic_write_text(out_dir / "config.toml", config_to_toml(config))

    state = TrajectoryState(psi=psi, initial_mass=l2_norm(psi))
    logger.info(
        f"Evolving {config.n_per_axis}^3 on L={config.box_length} to "
        f"t={config.t_final} with dt={config.dt}, c1={config.c1:.5f}; "
        f"{len(schedule)} snapshots"
    )
    logger.info(
        f"Initial mass {state.initial_mass:.12e}, smallness "
        f"{initial_smallness(psi, config.k_sobolev, config.weight_power):.4e}"
    )

    def take_snapshot(index: int) -> None:
        row = diagnose(
            state.psi,
            state.time,
            state.initial_mass,
            config.k_sobolev,
            config.weight_power,
        )
        state.record.append(row)
        if out_dir is not None and config.write_checkpoints:
            write_checkpoint(
                Checkpoint(time=state.time, field=state.psi),
                out_dir / "snapshots" / f"snap_{index:05d}.bin",
            )
        if observers or config.keep_snapshots:
            snapshot = Snapshot(time=state.time, psi=state.psi)
            for observer in observers:
                observer(snapshot)
            if config.keep_snapshots:
                state.snapshots.append(snapshot)
        logger.info(
            f"t={state.time:.3f}: linf={row.linf:.4e}, mass drift={row.mass_drift:.2e}"
        )

    try:
        take_snapshot(0)
        for index, target in enumerate(schedule[1:], start=1):
            steps = max(1, math.ceil((target - state.time) / config.dt - 1e-9))
            h = (target - state.time) / steps
            for _ in range(steps):
                previous = state.psi
                state.psi = stepper.step(previous, h)
                state.step += 1
                mass = l2_norm(state.psi)
                if mass > (1 + MASS_GROWTH_LIMIT) * state.initial_mass:
                    raise InstabilityError(
                        f"Mass grew from {state.initial_mass:.6e} to {mass:.6e} "
                        f"at step {state.step}",
                        state=previous,
                        time=state.time,
                    )
                state.time += h
            state.time = target
            take_snapshot(index)
    except InstabilityError as e:
        if e.state is not None and e.time == 0.0:
            e.time = state.time
        logger.error(f"Run aborted: {e}")
        _dump_instability(e, out_dir)
        raise

    for observer in observers:
        if isinstance(observer, ScatteringTracker):
            state.phase_tables.update(observer.tables)
    if out_dir is not None:
        state.record.to_csv(out_dir / "diagnostics.csv")
    logger.info(
        f"Finished at t={state.time} after {state.step} steps; "
        f"max mass drift {state.record.max_mass_drift:.3e}"
    )
    return state


class ConvergenceReport(BaseModel):
    dt_values: List[float]
    differences: List[float]
    ratios: List[float]
    ratio_range: tuple = CONVERGENCE_RATIO_RANGE

    @property
    def passed(self) -> bool:
        low, high = self.ratio_range
        return bool(self.ratios) and all(low <= r <= high for r in self.ratios)


def self_convergence(config: RunConfig, halvings: int = 2) -> ConvergenceReport:
    """||psi_dt - psi_dt/2||_{L2} for successive halvings and their ratios."""
    if halvings < 2:
        raise ValueError(f"Need at least two halvings for a ratio, got {halvings}")
    grid = make_grid(config.n_per_axis, config.box_length)
    initial = build_initial_data(config, grid)
    dt_values = [config.dt / 2**j for j in range(halvings + 1)]
    finals = []
    for dt in dt_values:
        run = config.model_copy(
            update={
                "dt": dt,
                "snapshot_times": [config.t_final],
                "write_checkpoints": False,
                "keep_snapshots": False,
            }
        )
        finals.append(evolve(run, initial=initial).psi)
    differences = [l2_norm(a - b) for a, b in zip(finals, finals[1:])]
    ratios = [a / b for a, b in zip(differences, differences[1:])]
    report = ConvergenceReport(
        dt_values=dt_values, differences=differences, ratios=ratios
    )
    logger.info(f"Self-convergence ratios: {[f'{r:.3f}' for r in ratios]}")
    return report


class NonlinearDecayReport(BaseModel):
    linf: DecayFit
    hartree: DecayFit


def nonlinear_decay_scan(
    record: DiagnosticsRecord, window: Optional[tuple] = None
) -> NonlinearDecayReport:
    """Log-log slopes of ||psi||_{L^inf} and ||N(psi, psi, psi)||_{W^{2,inf}}."""
    times = record.times
    window = window or (4.0, max(times, default=4.0))
    linf = fit_decay_exponent(times, record.column("linf"), window, min_points=5)
    hartree = fit_decay_exponent(
        times, record.column("hartree_w2inf"), window, min_points=5
    )
    logger.info(
        f"Decay slopes: psi L^inf {linf.slope:.3f}, Hartree W^2,inf {hartree.slope:.3f}"
    )
    return NonlinearDecayReport(linf=linf, hartree=hartree)
