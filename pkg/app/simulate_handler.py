import logging
from pathlib import Path
from typing import ClassVar, Optional

from pydantic import BaseModel, Field

from app.diagnostics import DiagnosticsRecord
from app.integrator import NonlinearDecayReport, evolve, nonlinear_decay_scan
from app.models import AcceptanceSuite, InsufficientSnapshotsError, load_config

logger = logging.getLogger(__name__)

MASS_DRIFT_TOLERANCE = 1e-11
POPULATION_FACTOR = 2.0
LINF_EXPONENT = (-1.5, 0.2)
HARTREE_EXPONENT = (-2.5, 0.3)


class SimulationSummary(BaseModel):
    config: str
    t_final: float
    steps: int
    snapshots: int
    initial_mass: float
    max_mass_drift: float
    population_ratio: Optional[float] = None
    decay: Optional[NonlinearDecayReport] = None


def population_ratio(record: DiagnosticsRecord) -> Optional[float]:
    """
    Largest factor by which a branch population moved away from its initial
    value; branches that start empty are ignored.
    """
    first = record.rows[0]
    total = first.l2
    worst = None
    for column in ("l2_plus", "l2_minus"):
        start = getattr(first, column)
        if total == 0 or start <= 1e-8 * total:
            continue
        for value in record.column(column):
            factor = max(value / start, start / value) if value > 0 else float("inf")
            worst = factor if worst is None else max(worst, factor)
    return worst


class SimulateSuite(AcceptanceSuite):
    """Run one evolution and check conservation and the decoupled structure."""

    command: ClassVar[str] = "simulate"
    report_name: ClassVar[str] = "summary.json"

    config: Path = Field(description="Flat TOML run description")
    check_decay: bool = Field(
        default=False, description="Also require the nonlinear decay rates"
    )

    def run_checks(self) -> SimulationSummary:
        config = load_config(self.config)
        state = evolve(config, out_dir=self.output_dir())
        record = state.record

        summary = SimulationSummary(
            config=str(self.config),
            t_final=state.time,
            steps=state.step,
            snapshots=len(record.rows),
            initial_mass=state.initial_mass,
            max_mass_drift=record.max_mass_drift,
            population_ratio=population_ratio(record),
        )
        self.record_check(
            "mass_conservation", summary.max_mass_drift < MASS_DRIFT_TOLERANCE
        )
        if summary.population_ratio is not None:
            self.record_check(
                "population_exchange", summary.population_ratio <= POPULATION_FACTOR
            )

        try:
            summary.decay = nonlinear_decay_scan(record)
        except InsufficientSnapshotsError as e:
            logger.info(f"No decay fit: {e}")
        if self.check_decay:
            decay = summary.decay
            self.record_check(
                "linf_decay",
                decay is not None
                and abs(decay.linf.slope - LINF_EXPONENT[0]) <= LINF_EXPONENT[1],
            )
            self.record_check(
                "hartree_decay",
                decay is not None
                and abs(decay.hartree.slope - HARTREE_EXPONENT[0])
                <= HARTREE_EXPONENT[1],
            )
        return summary


if __name__ == "__main__":
    import tempfile

    logging.basicConfig(level=logging.INFO)
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "run.toml"
        path.write_text("n = 16\nL = 16.0\neps0 = 0.05\ndt = 0.05\nt_final = 2.0\n")
        suite = SimulateSuite(config=path, out=Path(tmp) / "run")
        print(f"exit status {suite.process_workflow()}: {suite.checks}")
