import logging
from typing import ClassVar, List, Tuple

import numpy as np
from pydantic import BaseModel, Field

from app.hartree import CoulombOracleReport, coulomb_oracle
from app.models import AcceptanceSuite, KernelKind
from app.propagator import (
    DecayFit,
    decay_scan,
    dirac_residual,
    fit_decay_exponent,
    free_dirac,
)
from app.spectral import SpinorField, gaussian, l2_norm, make_grid

logger = logging.getLogger(__name__)

DECAY_EXPONENT = -1.5
DECAY_TOLERANCE = 0.15
UNITARITY_TOLERANCE = 1e-12
RESIDUAL_TOLERANCE = 1e-4


class LincheckReport(BaseModel):
    n_per_axis: int
    box_length: float
    width: float
    scan: List[Tuple[float, float]]
    fit: DecayFit
    unitarity_drift: float
    relative_residual: float
    coulomb: List[CoulombOracleReport]


class LincheckSuite(AcceptanceSuite):
    """Free Dirac flow: dispersive decay, unitarity, and the Coulomb solver oracle."""

    command: ClassVar[str] = "lincheck"
    report_name: ClassVar[str] = "lincheck_report.json"

    n: int = Field(default=64, description="Grid points per axis")
    box_length: float = Field(default=64.0, gt=0)
    width: float = Field(default=1.0, gt=0, description="Gaussian width of the data")
    oracle_n: int = Field(default=64, description="Grid points of the Coulomb oracle")
    oracle_box_length: float = Field(default=32.0, gt=0)

    def run_checks(self) -> LincheckReport:
        grid = make_grid(self.n, self.box_length)
        values = np.zeros((4,) + (self.n,) * 3, dtype=np.complex128)
        values[0] = gaussian(grid, self.width)
        psi0 = SpinorField(grid=grid, values=values)

        horizon = self.box_length / 2
        window = (4.0, horizon - 4.0)
        times = list(np.arange(window[0], window[1] + 0.5, 1.0))
        scan = decay_scan(psi0, times)
        fit = fit_decay_exponent(*zip(*scan), window=window, min_points=5)
        logger.info(f"Linear decay slope {fit.slope:.4f} over {fit.window}")
        self.record_check(
            "linear_decay", abs(fit.slope - DECAY_EXPONENT) <= DECAY_TOLERANCE
        )

        mass = l2_norm(psi0)
        drift = abs(l2_norm(free_dirac(psi0, window[1])) - mass) / mass
        self.record_check("unitarity", drift < UNITARITY_TOLERANCE)

        residual = dirac_residual(psi0, 1.0) / mass
        self.record_check("dirac_residual", residual < RESIDUAL_TOLERANCE)

        oracle_grid = make_grid(self.oracle_n, self.oracle_box_length)
        oracles = [coulomb_oracle(oracle_grid, kind) for kind in KernelKind]
        self.record_check("coulomb_oracle", all(r.passed for r in oracles))

        return LincheckReport(
            n_per_axis=self.n,
            box_length=self.box_length,
            width=self.width,
            scan=scan,
            fit=fit,
            unitarity_drift=drift,
            relative_residual=residual,
            coulomb=oracles,
        )


if __name__ == "__main__":
    logging.basicConfig(level=logging.INFO)
    suite = LincheckSuite(n=32, box_length=32.0)
    print(f"exit status {suite.process_workflow()}: {suite.checks}")
