import logging
from enum import Enum
from pathlib import Path
from typing import ClassVar, Dict, List, Optional

from pydantic import BaseModel, Field

from app.diagnostics import DiagnosticsRecord
from app.models import (
    AcceptanceSuite,
    InsufficientSnapshotsError,
    KernelVariant,
    PhaseUnwrapError,
    load_config,
)
from app.nullcheck_handler import latest_snapshot
from app.scattering import (
    DriftMetric,
    PhaseSlope,
    ScatteringTracker,
    Snapshot,
    drift_blocks,
    log_phase_slope,
    write_phase_table,
)
from app.spectral import l2_norm
from app.utils.checkpoint import read_checkpoint

logger = logging.getLogger(__name__)

DRIFT_REDUCTION = 0.5
SLOPE_RATIO_RANGE = (0.8, 1.2)


class VariantChoice(str, Enum):
    MINUS = "minus"
    PLUS = "plus"
    BOTH = "both"

    @property
    def variants(self) -> List[KernelVariant]:
        if self is VariantChoice.BOTH:
            return [KernelVariant.MINUS, KernelVariant.PLUS]
        return [KernelVariant(self.value)]


class VariantOutcome(BaseModel):
    variant: KernelVariant
    cancels_drift: bool
    final_ratio: Optional[float] = None
    skipped_mass: float
    truncated_mass: float
    slope: Optional[PhaseSlope] = None
    slope_error: Optional[str] = None


class ScatterReport(BaseModel):
    run: str
    snapshots: int
    active_nodes: int
    drift: List[DriftMetric]
    variants: Dict[KernelVariant, VariantOutcome]
    best_variant: Optional[KernelVariant] = None


def cancels_drift(
    metrics: List[DriftMetric], variant: KernelVariant
) -> Optional[float]:
    """
    Corrected over uncorrected drift on the last block if the corrected drift
    never increases from block to block, otherwise None.
    """
    corrected = [m for m in metrics if m.corrected and m.variant is variant]
    uncorrected = [m for m in metrics if not m.corrected]
    if not corrected or not uncorrected:
        return None
    values = [m.value for m in corrected]
    if any(later > earlier for earlier, later in zip(values, values[1:])):
        return None
    last = uncorrected[-1].value
    return values[-1] / last if last > 0 else None


class ScatterSuite(AcceptanceSuite):
    """Phase tables, drift metrics and log-phase slopes of a recorded run."""

    command: ClassVar[str] = "scatter-analyze"
    report_name: ClassVar[str] = "scatter_report.json"

    run: Path = Field(description="Run directory written by simulate")
    variant: VariantChoice = VariantChoice.BOTH

    def output_dir(self) -> Path:
        return self.out if self.out is not None else self.run

    def run_checks(self) -> ScatterReport:
        config = load_config(self.run / "config.toml")
        latest_snapshot(self.run)
        files = sorted((self.run / "snapshots").glob("snap_*.bin"))

        tracker = ScatteringTracker.from_config(config, self.variant.variants)
        mass = 0.0
        for path in files:
            checkpoint = read_checkpoint(path)
            tracker(Snapshot(time=checkpoint.time, psi=checkpoint.field))
            mass = mass or l2_norm(checkpoint.field) ** 2
        tracker.warn_skipped_mass(mass)

        out = self.output_dir()
        for variant, table in tracker.tables.items():
            write_phase_table(table, out / "phase_tables" / f"{variant.value}.npz")

        metrics = drift_blocks(tracker)
        outcomes = {}
        for variant, table in tracker.tables.items():
            ratio = cancels_drift(metrics, variant)
            outcome = VariantOutcome(
                variant=variant,
                cancels_drift=ratio is not None and ratio <= DRIFT_REDUCTION,
                final_ratio=ratio,
                skipped_mass=table.skipped_mass,
                truncated_mass=table.truncated_mass,
            )
            try:
                outcome.slope = log_phase_slope(tracker, variant=variant)
            except (PhaseUnwrapError, InsufficientSnapshotsError) as e:
                logger.warning(f"{variant.value}: no log-phase slope: {e}")
                outcome.slope_error = str(e)
            outcomes[variant] = outcome

        ranked = sorted(
            (o for o in outcomes.values() if o.final_ratio is not None),
            key=lambda o: o.final_ratio,
        )
        best = ranked[0].variant if ranked else None
        report = ScatterReport(
            run=str(self.run),
            snapshots=len(files),
            active_nodes=0 if tracker.targets is None else int(tracker.targets.size),
            drift=metrics,
            variants=outcomes,
            best_variant=best,
        )

        if any(not m.corrected for m in metrics):
            self.record_check(
                "drift_cancellation", any(o.cancels_drift for o in outcomes.values())
            )
        primary = outcomes[tracker.variants[0]].slope
        low, high = SLOPE_RATIO_RANGE
        self.record_check(
            "log_phase_slope",
            primary is not None
            and primary.predicted != 0
            and low <= primary.ratio <= high,
        )

        self._annotate_diagnostics(metrics, best, out)
        return report

    def _annotate_diagnostics(
        self, metrics: List[DriftMetric], best: Optional[KernelVariant], out: Path
    ) -> None:
        source = self.run / "diagnostics.csv"
        if best is None or not source.is_file():
            return
        record = DiagnosticsRecord.from_csv(source)
        uncorrected = {m.t2: m.value for m in metrics if not m.corrected}
        for m in metrics:
            if m.corrected and m.variant is best:
                record.annotate_drift(m.t2, m.value, uncorrected[m.t2])
        record.to_csv(out / "diagnostics.csv")
        logger.info(f"Wrote drift-annotated diagnostics to {out / 'diagnostics.csv'}")


if __name__ == "__main__":
    import sys

    logging.basicConfig(level=logging.INFO)
    suite = ScatterSuite(run=Path(sys.argv[1] if len(sys.argv) > 1 else "run1"))
    print(f"exit status {suite.process_workflow()}: {suite.checks}")
