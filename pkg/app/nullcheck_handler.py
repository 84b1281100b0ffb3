import logging
from pathlib import Path
from typing import ClassVar, Optional

from pydantic import BaseModel, Field

from app.dirac_algebra import NullStructureReport, null_structure_scan
from app.models import AcceptanceSuite
from app.resonance import (
    BilinearConstantReport,
    GradientCheckReport,
    MBoundReport,
    NonResonanceReport,
    NullGainReport,
    PhaseLowerBoundReport,
    QuadraticRemainderReport,
    bilinear_lp_constant,
    bilinear_null_gain,
    gradient_check,
    non_resonance_check,
    phase_lower_bound_check,
    quadratic_remainder_check,
    scan_m_bound,
)
from app.utils.checkpoint import read_checkpoint

logger = logging.getLogger(__name__)

NULL_GAIN_EXPECTED = 1.0
NULL_GAIN_TOLERANCE = 0.3


class NullcheckReport(BaseModel):
    null_structure: NullStructureReport
    m_bound: MBoundReport
    phase_lower_bound: PhaseLowerBoundReport
    quadratic_remainder: QuadraticRemainderReport
    non_resonance: NonResonanceReport
    gradients: GradientCheckReport
    snapshot: Optional[str] = None
    null_gain: Optional[NullGainReport] = None
    bilinear_constant: Optional[BilinearConstantReport] = None


def latest_snapshot(run: Path) -> Path:
    files = sorted((Path(run) / "snapshots").glob("snap_*.bin"))
    if not files:
        raise FileNotFoundError(f"No snapshot files under {run}/snapshots")
    return files[-1]


class NullcheckSuite(AcceptanceSuite):
    """Null structure, multiplier and resonance-function scans."""

    command: ClassVar[str] = "nullcheck"
    report_name: ClassVar[str] = "nullcheck_report.json"

    samples: int = Field(default=10_000, ge=1)
    seed: int = 0
    run: Optional[Path] = Field(
        default=None,
        description="Run directory whose last snapshot feeds the bilinear scans",
    )

    def run_checks(self) -> NullcheckReport:
        null_structure = null_structure_scan(self.samples, self.seed)
        self.record_check("null_structure", null_structure.passed)

        m_bound = scan_m_bound(self.samples, self.seed)
        self.record_check("m_vanishes_at_eta_zero", m_bound.zero_row_max == 0.0)
        self.record_check(
            "m_upper_bound", m_bound.sup_ratio <= m_bound.sup_bound + 1e-9
        )
        self.record_check(
            "m_transverse_lower_bound",
            m_bound.transverse_inf >= m_bound.transverse_floor,
        )

        lower = phase_lower_bound_check(self.samples, self.seed)
        self.record_check("phase_lower_bound", lower.passed)

        remainder = quadratic_remainder_check(self.samples, self.seed)
        self.record_check("quadratic_remainder", remainder.passed)

        non_resonance = non_resonance_check(self.samples, self.seed)
        self.record_check("non_resonance", non_resonance.passed)

        gradients = gradient_check(min(self.samples, 1000), self.seed)
        self.record_check("gradients", gradients.passed)

        report = NullcheckReport(
            null_structure=null_structure,
            m_bound=m_bound,
            phase_lower_bound=lower,
            quadratic_remainder=remainder,
            non_resonance=non_resonance,
            gradients=gradients,
        )
        if self.run is not None:
            path = latest_snapshot(self.run)
            psi = read_checkpoint(path).field
            report.snapshot = str(path)
            report.null_gain = bilinear_null_gain(psi)
            report.bilinear_constant = bilinear_lp_constant(psi, psi)
            gain = report.null_gain.gain
            if gain is None:
                logger.warning("Too few resolved small scales to fit the null gain")
            else:
                self.record_check(
                    "bilinear_null_gain",
                    abs(gain - NULL_GAIN_EXPECTED) <= NULL_GAIN_TOLERANCE,
                )
        return report


if __name__ == "__main__":
    logging.basicConfig(level=logging.INFO)
    suite = NullcheckSuite(samples=1000)
    print(f"exit status {suite.process_workflow()}: {suite.checks}")
