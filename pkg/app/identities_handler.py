import logging
from typing import ClassVar

from pydantic import BaseModel, Field

from app.dirac_algebra import (
    IdentityReport,
    ProjectionDerivativeReport,
    check_identities,
    projection_derivative_scan,
)
from app.models import AcceptanceSuite

logger = logging.getLogger(__name__)


class IdentitiesReport(BaseModel):
    identities: IdentityReport
    derivatives: ProjectionDerivativeReport


class IdentitiesSuite(AcceptanceSuite):
    """Dirac matrix algebra: diagonalisation, projectors and derivative bounds."""

    command: ClassVar[str] = "identities"
    report_name: ClassVar[str] = "identities_report.json"

    samples: int = Field(
        default=1000, ge=1, description="Random frequencies, |xi| <= 100"
    )
    seed: int = 0

    def run_checks(self) -> IdentitiesReport:
        identities = check_identities(self.samples, self.seed)
        tolerance = identities.tolerance
        self.record_check("hamiltonian_square", identities.square_deviation < tolerance)
        self.record_check("completeness", identities.completeness < tolerance)
        self.record_check("idempotence", identities.idempotence < tolerance)
        self.record_check("orthogonality", identities.orthogonality < tolerance)
        self.record_check("clifford", identities.clifford < tolerance)

        derivatives = projection_derivative_scan(self.samples, self.seed)
        self.record_check("projection_derivatives", derivatives.passed)
        return IdentitiesReport(identities=identities, derivatives=derivatives)


if __name__ == "__main__":
    logging.basicConfig(level=logging.INFO)
    suite = IdentitiesSuite(samples=200)
    print(f"exit status {suite.process_workflow()}: {suite.checks}")
