import logging
import math
from pathlib import Path
from typing import Dict, List, Optional

from pydantic import BaseModel, Field

from app.dirac_algebra import project
from app.hartree import hartree_term
from app.models import KernelKind, Sign
from app.propagator import half_kg_propagate
from app.spectral import (
    SpinorField,
    l2_norm,
    sobolev_norm,
    spectral_sup_norm,
    sup_norm,
    w_k_infinity_norm,
    weighted_norm,
)
from app.utils.reports import read_csv, write_csv

logger = logging.getLogger(__name__)


class DiagnosticsRow(BaseModel):
    """Norms of one snapshot; weighted and spectral quantities refer to f_theta."""

    time: float
    l2: float
    linf: float
    hk: float
    weighted_h2_a1: float
    weighted_h2_a2: float
    spectral_sup_plus: float
    spectral_sup_minus: float
    l2_plus: float
    l2_minus: float
    hartree_w2inf: float
    mass_drift: float
    drift_corrected: Optional[float] = None
    drift_uncorrected: Optional[float] = None


DIAGNOSTICS_COLUMNS: List[str] = list(DiagnosticsRow.model_fields)


def relative_mass_drift(mass: float, initial_mass: float) -> float:
    if initial_mass == 0:
        return 0.0 if mass == 0 else math.inf
    return abs(mass - initial_mass) / initial_mass


def diagnose(
    psi: SpinorField,
    time: float,
    initial_mass: float,
    k_sobolev: int = 8,
    weight_power: float = 10,
) -> DiagnosticsRow:
    """
    Snapshot norms. The Hartree W^{2,inf} column always uses the free-space
    kernel: the periodic one carries an O(M/L) offset that does not decay.
    """
    mass = l2_norm(psi)
    weighted = {1: 0.0, 2: 0.0}
    spectral_sup: Dict[Sign, float] = {}
    branch_mass: Dict[Sign, float] = {}
    for theta in Sign:
        branch = project(psi.to_spectral(), theta)
        profile = half_kg_propagate(branch, -time, theta)
        for a in weighted:
            weighted[a] += weighted_norm(profile, a, 2)
        spectral_sup[theta] = spectral_sup_norm(profile, weight_power)
        branch_mass[theta] = l2_norm(branch)

    nonlinearity = hartree_term(psi, psi, psi, KernelKind.FREE_SPACE)
    return DiagnosticsRow(
        time=time,
        l2=mass,
        linf=sup_norm(psi),
        hk=sobolev_norm(psi, k_sobolev),
        weighted_h2_a1=weighted[1],
        weighted_h2_a2=weighted[2],
        spectral_sup_plus=spectral_sup[Sign.PLUS],
        spectral_sup_minus=spectral_sup[Sign.MINUS],
        l2_plus=branch_mass[Sign.PLUS],
        l2_minus=branch_mass[Sign.MINUS],
        hartree_w2inf=w_k_infinity_norm(nonlinearity, 2),
        mass_drift=relative_mass_drift(mass, initial_mass),
    )


class DiagnosticsRecord(BaseModel):
    rows: List[DiagnosticsRow] = Field(default_factory=list)

    def append(self, row: DiagnosticsRow) -> None:
        if self.rows and row.time <= self.rows[-1].time:
            raise ValueError(
                f"Diagnostics time must increase: {row.time} after {self.rows[-1].time}"
            )
        self.rows.append(row)
        logger.debug(
            f"t={row.time:.4f}: l2={row.l2:.12e}, linf={row.linf:.4e}, "
            f"drift={row.mass_drift:.2e}"
        )

    def column(self, name: str) -> List[Optional[float]]:
        return [getattr(row, name) for row in self.rows]

    @property
    def times(self) -> List[float]:
        return [row.time for row in self.rows]

    @property
    def max_mass_drift(self) -> float:
        return max((row.mass_drift for row in self.rows), default=0.0)

    def annotate_drift(self, time: float, corrected: float, uncorrected: float) -> None:
        """Attach block drifts to the row at the block's right end."""
        for row in self.rows:
            if math.isclose(row.time, time, rel_tol=0, abs_tol=1e-9):
                row.drift_corrected = corrected
                row.drift_uncorrected = uncorrected
                return
        logger.warning(f"No diagnostics row at t={time}; drift not recorded")

    def to_csv(self, path: Path) -> None:
        write_csv(self.rows, DIAGNOSTICS_COLUMNS, path)

    @classmethod
    def from_csv(cls, path: Path) -> "DiagnosticsRecord":
        rows = []
        for raw in read_csv(path):
            entries = {key: (value or None) for key, value in raw.items()}
            rows.append(DiagnosticsRow.model_validate(entries))
        return cls(rows=rows)
