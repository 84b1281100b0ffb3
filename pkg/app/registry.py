from typing import Type

from app.identities_handler import IdentitiesSuite
from app.lincheck_handler import LincheckSuite
from app.models import AcceptanceSuite
from app.nullcheck_handler import NullcheckSuite
from app.scatter_handler import ScatterSuite
from app.simulate_handler import SimulateSuite

# A registry to hold all our command-line acceptance suites
ACCEPTANCE_SUITES: list[Type[AcceptanceSuite]] = [
    SimulateSuite,
    LincheckSuite,
    NullcheckSuite,
    ScatterSuite,
    IdentitiesSuite,
]
