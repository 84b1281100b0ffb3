import logging
from typing import Dict, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict

from app.models import Representation, Sign
from app.spectral import SpinorField, bracket_of

logger = logging.getLogger(__name__)

PAULI = np.array(
    [
        [[0, 1], [1, 0]],
        [[0, -1j], [1j, 0]],
        [[1, 0], [0, -1]],
    ],
    dtype=np.complex128,
)
IDENTITY = np.eye(4, dtype=np.complex128)

# Frozen regression constants of the sampled scans.
NULL_STRUCTURE_CONSTANT = 0.6
DERIVATIVE_BOUNDS = (1.0, 4.0)
IDENTITY_TOLERANCE = 1e-12


class DiracMatrices(BaseModel):
    """alpha^j = [[0, sigma^j], [sigma^j, 0]] and beta = diag(1, 1, -1, -1)."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    alpha: np.ndarray
    beta: np.ndarray

    @classmethod
    def standard(cls) -> "DiracMatrices":
        zero = np.zeros((2, 2), dtype=np.complex128)
        alpha = np.array([np.block([[zero, s], [s, zero]]) for s in PAULI])
        beta = np.diag([1, 1, -1, -1]).astype(np.complex128)
        return cls(alpha=alpha, beta=beta)

    def clifford_defects(self) -> Dict[str, float]:
        """Largest entry of each defining relation's residual."""
        matrices = list(self.alpha) + [self.beta]
        hermitian = max(np.max(np.abs(m - m.conj().T)) for m in matrices)
        mixed = max(
            np.max(np.abs(a @ self.beta + self.beta @ a)) for a in self.alpha
        )
        squares = 0.0
        for j, a in enumerate(self.alpha):
            for k, b in enumerate(self.alpha):
                target = 2 * IDENTITY if j == k else 0
                squares = max(squares, np.max(np.abs(a @ b + b @ a - target)))
        beta_square = np.max(np.abs(self.beta @ self.beta - IDENTITY))
        return {
            "hermitian": float(hermitian),
            "alpha_beta": float(mixed),
            "alpha_alpha": float(squares),
            "beta_beta": float(beta_square),
        }


DIRAC = DiracMatrices.standard()
ALPHA = DIRAC.alpha
BETA = DIRAC.beta


def _broadcast(matrix: np.ndarray, xi: np.ndarray) -> np.ndarray:
    return matrix.reshape(matrix.shape + (1,) * (np.ndim(xi) - 1))


def hamiltonian_symbol(xi: np.ndarray) -> np.ndarray:
    """alpha.xi + beta, shape (4, 4, ...) for xi of shape (3, ...)."""
    xi = np.asarray(xi, dtype=np.float64)
    return np.einsum("jab,j...->ab...", ALPHA, xi) + _broadcast(BETA, xi)


def projection_symbol(xi: np.ndarray, sign: Sign) -> np.ndarray:
    """Pi_sign(xi) = (I +/- (alpha.xi + beta) / <xi>) / 2."""
    xi = np.asarray(xi, dtype=np.float64)
    h = hamiltonian_symbol(xi) / bracket_of(xi)
    return 0.5 * (_broadcast(IDENTITY, xi) + sign.factor * h)


class ProjectionSymbol(BaseModel):
    sign: Sign

    def evaluate(self, xi: np.ndarray) -> np.ndarray:
        return projection_symbol(xi, self.sign)

    def __call__(self, xi: np.ndarray) -> np.ndarray:
        return self.evaluate(xi)


class SignTuple(BaseModel):
    signs: Tuple[Sign, Sign, Sign, Sign]

    @classmethod
    def paired(cls, theta0: Sign, theta2: Sign) -> "SignTuple":
        """The (theta0, theta0, theta2, theta2) configuration."""
        return cls(signs=(theta0, theta0, theta2, theta2))

    @property
    def factors(self) -> Tuple[int, int, int, int]:
        return tuple(s.factor for s in self.signs)


def apply_hamiltonian(xi: np.ndarray, values: np.ndarray) -> np.ndarray:
    """(alpha.xi + beta) psi^ nodewise without building the 4x4 field."""
    out = np.einsum("ab,b...->a...", BETA, values)
    for j in range(3):
        out += xi[j] * np.einsum("ab,b...->a...", ALPHA[j], values)
    return out


def project(field: SpinorField, sign: Sign) -> SpinorField:
    """Pi_sign(D) psi; the result keeps the input representation."""
    spectral = field.to_spectral()
    grid = spectral.grid
    h = apply_hamiltonian(grid.wavevectors, spectral.values) / grid.bracket
    result = spectral.with_values(0.5 * (spectral.values + sign.factor * h))
    if field.representation is Representation.PHYSICAL:
        return result.to_physical()
    return result


def matrix_norm(matrices: np.ndarray) -> np.ndarray:
    """Spectral 2-norm of 4x4 matrices stacked as (4, 4, ...)."""
    stacked = np.moveaxis(np.asarray(matrices), (0, 1), (-2, -1))
    return np.linalg.norm(stacked, ord=2, axis=(-2, -1))


def random_directions(rng: np.random.Generator, count: int) -> np.ndarray:
    v = rng.standard_normal((3, count))
    return v / np.linalg.norm(v, axis=0)


def sample_ball(rng: np.random.Generator, count: int, radius: float) -> np.ndarray:
    return random_directions(rng, count) * radius * rng.random(count) ** (1 / 3)


class IdentityReport(BaseModel):
    sample_count: int
    seed: int
    radius: float
    square_deviation: float
    completeness: float
    idempotence: float
    orthogonality: float
    clifford: float
    tolerance: float = IDENTITY_TOLERANCE

    @property
    def passed(self) -> bool:
        return (
            max(
                self.square_deviation,
                self.completeness,
                self.idempotence,
                self.orthogonality,
                self.clifford,
            )
            < self.tolerance
        )


def check_identities(
    sample_count: int, seed: int = 0, radius: float = 100.0
) -> IdentityReport:
    """Deviations of the diagonalisation identity and the projector algebra."""
    if sample_count < 1:
        raise ValueError("sample_count must be at least 1")
    rng = np.random.default_rng(seed)
    xi = sample_ball(rng, sample_count, radius)
    bracket = bracket_of(xi)
    eye = _broadcast(IDENTITY, xi)

    h = hamiltonian_symbol(xi)
    square = np.einsum("ab...,bc...->ac...", h, h) - bracket**2 * eye
    plus = projection_symbol(xi, Sign.PLUS)
    minus = projection_symbol(xi, Sign.MINUS)

    def worst(m: np.ndarray) -> float:
        return float(np.max(matrix_norm(m)))

    report = IdentityReport(
        sample_count=sample_count,
        seed=seed,
        radius=radius,
        square_deviation=float(np.max(matrix_norm(square) / bracket**2)),
        completeness=worst(plus + minus - eye),
        idempotence=max(
            worst(np.einsum("ab...,bc...->ac...", p, p) - p) for p in (plus, minus)
        ),
        orthogonality=max(
            worst(np.einsum("ab...,bc...->ac...", plus, minus)),
            worst(np.einsum("ab...,bc...->ac...", minus, plus)),
        ),
        clifford=max(DIRAC.clifford_defects().values()),
    )
    logger.info(
        f"Identity check over {sample_count} samples: "
        f"square={report.square_deviation:.2e}, "
        f"completeness={report.completeness:.2e}, "
        f"idempotence={report.idempotence:.2e}, "
        f"orthogonality={report.orthogonality:.2e}"
    )
    return report


def null_product_norm(xi: np.ndarray, eta: np.ndarray, theta: Sign):
    """||Pi_theta(xi) Pi_-theta(xi - eta)||_2 (vectorised over trailing axes)."""
    xi = np.asarray(xi, dtype=np.float64)
    eta = np.asarray(eta, dtype=np.float64)
    product = np.einsum(
        "ab...,bc...->ac...",
        projection_symbol(xi, theta),
        projection_symbol(xi - eta, theta.flipped),
    )
    # Pi_+(xi) Pi_-(xi) vanishes identically; keep it exact instead of roundoff.
    coincident = np.all(eta == 0, axis=0)
    norm = np.where(coincident, 0.0, matrix_norm(product))
    return float(norm) if np.ndim(norm) == 0 else norm


def null_bound(xi: np.ndarray, eta: np.ndarray):
    """|eta| * max(<xi>^-1, <xi - eta>^-1)."""
    xi = np.asarray(xi, dtype=np.float64)
    eta = np.asarray(eta, dtype=np.float64)
    size = np.sqrt(np.sum(eta**2, axis=0))
    return size * np.maximum(1 / bracket_of(xi), 1 / bracket_of(xi - eta))


class NullStructureReport(BaseModel):
    sample_count: int
    seed: int
    constant: float
    max_ratio: float
    violations: int

    @property
    def passed(self) -> bool:
        return self.violations == 0


def sample_close_pairs(
    rng: np.random.Generator, count: int, low: float = 0.1, high: float = 100.0
) -> Tuple[np.ndarray, np.ndarray]:
    """Pairs with |xi| log-uniform in [low, high] and 0 < |eta| <= |xi| / 8."""
    size = 10 ** rng.uniform(np.log10(low), np.log10(high), count)
    xi = random_directions(rng, count) * size
    fraction = (1.0 - rng.random(count)) ** (1 / 3)
    eta = random_directions(rng, count) * size / 8 * fraction
    return xi, eta


def null_structure_scan(
    sample_count: int = 10_000,
    seed: int = 0,
    constant: float = NULL_STRUCTURE_CONSTANT,
) -> NullStructureReport:
    rng = np.random.default_rng(seed)
    xi, eta = sample_close_pairs(rng, sample_count)
    bound = null_bound(xi, eta)
    ratios = np.concatenate(
        [null_product_norm(xi, eta, theta) / bound for theta in Sign]
    )
    report = NullStructureReport(
        sample_count=sample_count,
        seed=seed,
        constant=constant,
        max_ratio=float(np.max(ratios)),
        violations=int(np.sum(ratios > constant)),
    )
    logger.info(
        f"Null structure scan: max ratio {report.max_ratio:.4f} "
        f"(constant {constant}), {report.violations} violations"
    )
    return report


class ProjectionDerivativeReport(BaseModel):
    sample_count: int
    seed: int
    step: float
    first_order: float
    second_order: float
    first_order_sharp: float
    second_order_sharp: float
    bounds: Tuple[float, float] = DERIVATIVE_BOUNDS

    @property
    def passed(self) -> bool:
        return (
            self.first_order_sharp <= self.bounds[0]
            and self.second_order_sharp <= self.bounds[1]
        )


def _partial(xi: np.ndarray, sign: Sign, j: int, h: float) -> np.ndarray:
    e = np.zeros((3, 1))
    e[j] = 1.0

    def central(step: float) -> np.ndarray:
        forward = projection_symbol(xi + step * e, sign)
        backward = projection_symbol(xi - step * e, sign)
        return (forward - backward) / (2 * step)

    return (4 * central(h / 2) - central(h)) / 3


def _second_partial(xi: np.ndarray, sign: Sign, j: int, k: int, h: float) -> np.ndarray:
    ej = np.zeros((3, 1))
    ek = np.zeros((3, 1))
    ej[j] = 1.0
    ek[k] = 1.0

    def central(step: float) -> np.ndarray:
        total = 0.0
        for a, b, weight in ((1, 1, 1), (1, -1, -1), (-1, 1, -1), (-1, -1, 1)):
            total = total + weight * projection_symbol(
                xi + step * (a * ej + b * ek), sign
            )
        return total / (4 * step**2)

    return (4 * central(h / 2) - central(h)) / 3


def projection_derivative_scan(
    sample_count: int = 1000, seed: int = 0, step: float = 1e-4
) -> ProjectionDerivativeReport:
    """Sup of |d^n Pi| <xi>^(n-1) and of the sharper |d^n Pi| <xi>^n, n = 1, 2."""
    rng = np.random.default_rng(seed)
    size = 10 ** rng.uniform(-1, 2, sample_count)
    xi = random_directions(rng, sample_count) * size
    bracket = bracket_of(xi)

    first = np.zeros(sample_count)
    second = np.zeros(sample_count)
    for sign in Sign:
        for j in range(3):
            first = np.maximum(first, matrix_norm(_partial(xi, sign, j, step)))
            for k in range(j, 3):
                second = np.maximum(
                    second, matrix_norm(_second_partial(xi, sign, j, k, step))
                )

    report = ProjectionDerivativeReport(
        sample_count=sample_count,
        seed=seed,
        step=step,
        first_order=float(np.max(first)),
        second_order=float(np.max(second * bracket)),
        first_order_sharp=float(np.max(first * bracket)),
        second_order_sharp=float(np.max(second * bracket**2)),
    )
    logger.info(
        f"Projection derivative scan: |dPi|<xi> <= {report.first_order_sharp:.3f}, "
        f"|d2Pi|<xi>^2 <= {report.second_order_sharp:.3f}"
    )
    return report
