"""
Resonance functions, their multipliers and the inequality scans behind them.

Frequencies are stacked along axis 0, so a single vector has shape (3,) and a
sample of N vectors shape (3, N). Every scan draws from
np.random.default_rng(seed) and is reproducible.
"""

import logging
import math
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator

from app.dirac_algebra import (
    SignTuple,
    project,
    random_directions,
    sample_ball,
    sample_close_pairs,
)
from app.hartree import inner_density
from app.models import Sign
from app.spectral import (
    ScalarField,
    SpinorField,
    apply_multiplier,
    dyadic_range,
    l2_norm,
    littlewood_paley,
    spectral_sup_norm,
    sup_norm,
)

logger = logging.getLogger(__name__)

GRADIENT_TOLERANCE = 1e-6
GRADIENT_STEP = 1e-5
M_BOUND_SUP = 8 / 7
M_BOUND_TRANSVERSE_INF = 0.5
PHASE_LOWER_BOUND = 1.0
QUADRATIC_REMAINDER_BOUND = 1.0
QUADRATIC_SCALE_RATIO = (0.5, 2.0)
NON_RESONANCE_FLOOR = 2.0
_SLACK = 1e-9


def _bracket(x: np.ndarray) -> np.ndarray:
    return np.sqrt(1.0 + np.sum(np.asarray(x) ** 2, axis=0))


def _direction(x: np.ndarray) -> np.ndarray:
    """x / <x>, the gradient of <x>."""
    return np.asarray(x) / _bracket(x)


class ResonanceEval(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    signs: Tuple[Sign, ...]
    xi: np.ndarray
    eta: np.ndarray
    sigma: Optional[np.ndarray] = None
    value: np.ndarray
    grad_xi: np.ndarray
    grad_eta: np.ndarray
    grad_sigma: Optional[np.ndarray] = None

    @field_validator(
        "xi",
        "eta",
        "sigma",
        "value",
        "grad_xi",
        "grad_eta",
        "grad_sigma",
        mode="before",
    )
    @classmethod
    def as_array(cls, v):
        # a single frequency yields numpy scalars
        return None if v is None else np.asarray(v)


def resonance_pair(
    xi: np.ndarray, eta: np.ndarray, theta0: Sign, theta1: Sign
) -> ResonanceEval:
    """p = theta0 <xi> - theta1 <xi - eta>; grad_xi p is the multiplier m(xi, eta)."""
    xi = np.asarray(xi, dtype=np.float64)
    eta = np.asarray(eta, dtype=np.float64)
    a, b = theta0.factor, theta1.factor
    shifted = xi - eta
    return ResonanceEval(
        signs=(theta0, theta1),
        xi=xi,
        eta=eta,
        value=a * _bracket(xi) - b * _bracket(shifted),
        grad_xi=a * _direction(xi) - b * _direction(shifted),
        grad_eta=b * _direction(shifted),
    )


def multiplier_m(
    xi: np.ndarray, eta: np.ndarray, theta: Sign = Sign.PLUS
) -> np.ndarray:
    return resonance_pair(xi, eta, theta, theta).grad_xi


def resonance_four(
    xi: np.ndarray, eta: np.ndarray, sigma: np.ndarray, signs: SignTuple
) -> ResonanceEval:
    """
    p = theta0 <xi> - theta1 <xi + eta> - theta2 <xi + sigma>
        + theta3 <xi + eta + sigma>
    """
    xi = np.asarray(xi, dtype=np.float64)
    eta = np.asarray(eta, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    t0, t1, t2, t3 = signs.factors
    a, b, c = xi + eta, xi + sigma, xi + eta + sigma
    value = t0 * _bracket(xi) - t1 * _bracket(a) - t2 * _bracket(b) + t3 * _bracket(c)
    na, nb, nc = _direction(a), _direction(b), _direction(c)
    return ResonanceEval(
        signs=signs.signs,
        xi=xi,
        eta=eta,
        sigma=sigma,
        value=value,
        grad_xi=t0 * _direction(xi) - t1 * na - t2 * nb + t3 * nc,
        grad_eta=-t1 * na + t3 * nc,
        grad_sigma=-t2 * nb + t3 * nc,
    )


def quadratic_part(
    xi: np.ndarray, eta: np.ndarray, sigma: np.ndarray, theta0: Sign, theta2: Sign
) -> np.ndarray:
    """q = -eta . (theta0 xi/<xi> - theta2 (xi + sigma)/<xi + sigma>)."""
    xi = np.asarray(xi, dtype=np.float64)
    eta = np.asarray(eta, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    inner = theta0.factor * _direction(xi) - theta2.factor * _direction(xi + sigma)
    return -np.sum(eta * inner, axis=0)


def _random_signs(rng: np.random.Generator, count: int) -> np.ndarray:
    return rng.choice([-1, 1], size=(4, count))


class GradientCheckReport(BaseModel):
    sample_count: int
    seed: int
    step: float
    max_error: float
    tolerance: float = GRADIENT_TOLERANCE

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tolerance


def _central_gradient(func, point: np.ndarray, h: float) -> np.ndarray:
    grad = np.zeros_like(point)
    for j in range(3):
        offset = np.zeros_like(point)
        offset[j] = h
        grad[j] = (func(point + offset) - func(point - offset)) / (2 * h)
    return grad


def gradient_check(
    sample_count: int = 1000, seed: int = 0, step: float = GRADIENT_STEP
) -> GradientCheckReport:
    """
    Analytic gradients of both resonance forms against central differences;
    the error is scaled by max(1, |grad p|).
    """
    rng = np.random.default_rng(seed)
    xi = sample_ball(rng, sample_count, 10.0)
    eta = sample_ball(rng, sample_count, 10.0)
    sigma = sample_ball(rng, sample_count, 10.0)
    factors = _random_signs(rng, sample_count)

    worst = 0.0
    for signs in {tuple(int(f) for f in column) for column in factors.T}:
        chosen = np.all(factors == np.reshape(signs, (4, 1)), axis=0)
        sign_tuple = SignTuple(
            signs=tuple(Sign.PLUS if f > 0 else Sign.MINUS for f in signs)
        )
        x, e, s = xi[:, chosen], eta[:, chosen], sigma[:, chosen]
        four = resonance_four(x, e, s, sign_tuple)
        numeric = {
            "xi": _central_gradient(
                lambda p: resonance_four(p, e, s, sign_tuple).value, x, step
            ),
            "eta": _central_gradient(
                lambda p: resonance_four(x, p, s, sign_tuple).value, e, step
            ),
            "sigma": _central_gradient(
                lambda p: resonance_four(x, e, p, sign_tuple).value, s, step
            ),
        }
        theta0, theta1 = sign_tuple.signs[0], sign_tuple.signs[1]
        pair = resonance_pair(x, e, theta0, theta1)
        numeric_pair = {
            "xi": _central_gradient(
                lambda p: resonance_pair(p, e, theta0, theta1).value, x, step
            ),
            "eta": _central_gradient(
                lambda p: resonance_pair(x, p, theta0, theta1).value, e, step
            ),
        }
        comparisons = [
            (four.grad_xi, numeric["xi"]),
            (four.grad_eta, numeric["eta"]),
            (four.grad_sigma, numeric["sigma"]),
            (pair.grad_xi, numeric_pair["xi"]),
            (pair.grad_eta, numeric_pair["eta"]),
        ]
        for analytic, approx in comparisons:
            scale = np.maximum(1.0, np.sqrt(np.sum(analytic**2, axis=0)))
            error = np.sqrt(np.sum((analytic - approx) ** 2, axis=0)) / scale
            worst = max(worst, float(np.max(error, initial=0.0)))

    report = GradientCheckReport(
        sample_count=sample_count, seed=seed, step=step, max_error=worst
    )
    logger.info(f"Gradient check: max scaled error {report.max_error:.3e}")
    return report


class MBoundReport(BaseModel):
    """
    Ratios |m(xi, eta)| <xi> / |eta| over |eta| <= |xi|/8. Transverse pairs
    have a two-sided bound; parallel ones fall like <xi>^-2.
    """

    sample_count: int
    seed: int
    sup_ratio: float
    inf_ratio: float
    transverse_sup: float
    transverse_inf: float
    parallel_sup: float
    parallel_inf: float
    parallel_scaled_sup: float
    xi_derivative_sup: float
    eta_derivative_sup: float
    mixed_derivative_sup: float
    zero_row_max: float
    sup_bound: float = M_BOUND_SUP
    transverse_floor: float = M_BOUND_TRANSVERSE_INF

    @property
    def passed(self) -> bool:
        return (
            self.sup_ratio <= self.sup_bound + _SLACK
            and self.transverse_inf >= self.transverse_floor
            and self.zero_row_max == 0.0
        )


def _m_ratio(xi: np.ndarray, eta: np.ndarray) -> np.ndarray:
    m = multiplier_m(xi, eta)
    return np.linalg.norm(m, axis=0) * _bracket(xi) / np.linalg.norm(eta, axis=0)


def _transverse(rng: np.random.Generator, xi: np.ndarray) -> np.ndarray:
    """Unit vectors orthogonal to each column of xi."""
    trial = random_directions(rng, xi.shape[1])
    unit = xi / np.linalg.norm(xi, axis=0)
    trial -= np.sum(trial * unit, axis=0) * unit
    return trial / np.linalg.norm(trial, axis=0)


def _m_jacobian(xi: np.ndarray, eta: np.ndarray, wrt: str) -> np.ndarray:
    """d m_i / d (xi or eta)_j by central differences, shape (3, 3, N)."""
    h = 1e-4 * _bracket(xi)
    jac = np.zeros((3, 3, xi.shape[1]))
    for j in range(3):
        offset = np.zeros_like(xi)
        offset[j] = h
        if wrt == "xi":
            forward = multiplier_m(xi + offset, eta)
            backward = multiplier_m(xi - offset, eta)
        else:
            forward = multiplier_m(xi, eta + offset)
            backward = multiplier_m(xi, eta - offset)
        jac[:, j] = (forward - backward) / (2 * h)
    return jac


def _mixed_derivative(xi: np.ndarray, eta: np.ndarray) -> np.ndarray:
    """Frobenius norm of d_xi d_eta m, shape (N,)."""
    h = 1e-4 * _bracket(xi)
    total = np.zeros(xi.shape[1])
    for k in range(3):
        offset = np.zeros_like(xi)
        offset[k] = h
        forward = _m_jacobian(xi + offset, eta, "eta")
        backward = _m_jacobian(xi - offset, eta, "eta")
        total += np.sum(((forward - backward) / (2 * h)) ** 2, axis=(0, 1))
    return np.sqrt(total)


def scan_m_bound(sample_count: int = 10_000, seed: int = 0) -> MBoundReport:
    rng = np.random.default_rng(seed)
    xi, eta = sample_close_pairs(rng, sample_count)
    general = _m_ratio(xi, eta)

    size = np.linalg.norm(eta, axis=0)
    transverse = _m_ratio(xi, _transverse(rng, xi) * size)
    unit = xi / np.linalg.norm(xi, axis=0)
    parallel_eta = unit * size * rng.choice([-1.0, 1.0], size=sample_count)
    parallel = _m_ratio(xi, parallel_eta)

    bracket = _bracket(xi)
    xi_jac = np.linalg.norm(
        np.moveaxis(_m_jacobian(xi, eta, "xi"), -1, 0), ord=2, axis=(1, 2)
    )
    eta_jac = np.linalg.norm(
        np.moveaxis(_m_jacobian(xi, eta, "eta"), -1, 0), ord=2, axis=(1, 2)
    )
    mixed = _mixed_derivative(xi, eta)
    zero_rows = multiplier_m(xi, np.zeros_like(xi))

    report = MBoundReport(
        sample_count=sample_count,
        seed=seed,
        sup_ratio=float(np.max(general)),
        inf_ratio=float(np.min(general)),
        transverse_sup=float(np.max(transverse)),
        transverse_inf=float(np.min(transverse)),
        parallel_sup=float(np.max(parallel)),
        parallel_inf=float(np.min(parallel)),
        parallel_scaled_sup=float(np.max(parallel * bracket**2)),
        xi_derivative_sup=float(np.max(xi_jac * bracket**2 / size)),
        eta_derivative_sup=float(np.max(eta_jac * bracket)),
        mixed_derivative_sup=float(np.max(mixed * bracket**2)),
        zero_row_max=float(np.max(np.abs(zero_rows))),
    )
    logger.info(
        f"m-bound scan: ratio in [{report.inf_ratio:.4f}, {report.sup_ratio:.4f}], "
        f"transverse inf {report.transverse_inf:.4f}, "
        f"parallel <xi>^2-scaled sup {report.parallel_scaled_sup:.4f}"
    )
    return report


def phase_lower_bound_ratio(
    eta: np.ndarray, sigma: np.ndarray, sign: Sign
) -> np.ndarray:
    """
    |eta/<eta> +- sigma/<sigma>| divided by
    ||eta| - |sigma|| / (min(<eta>, <sigma>) max(<eta>, <sigma>)^2).

    A vanishing right-hand side gives +inf; pairs where both sides vanish give nan.
    """
    lhs = np.linalg.norm(_direction(eta) + sign.factor * _direction(sigma), axis=0)
    a, b = _bracket(eta), _bracket(sigma)
    gap = np.abs(np.linalg.norm(eta, axis=0) - np.linalg.norm(sigma, axis=0))
    rhs = gap / (np.minimum(a, b) * np.maximum(a, b) ** 2)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(rhs > 0, lhs / np.where(rhs > 0, rhs, 1.0), np.inf)
    return np.where((lhs == 0) & (rhs == 0), np.nan, ratio)


class PhaseLowerBoundReport(BaseModel):
    sample_count: int
    seed: int
    min_ratio: Dict[Sign, float]
    excluded: int
    infinite: int
    constant: float = PHASE_LOWER_BOUND

    @property
    def passed(self) -> bool:
        return all(r >= self.constant - _SLACK for r in self.min_ratio.values())


def phase_lower_bound_check(
    sample_count: int = 10_000, seed: int = 0, radius: float = 100.0
) -> PhaseLowerBoundReport:
    rng = np.random.default_rng(seed)
    eta = sample_ball(rng, sample_count, radius)
    sigma = sample_ball(rng, sample_count, radius)
    minimum = {}
    excluded = infinite = 0
    for sign in Sign:
        ratio = phase_lower_bound_ratio(eta, sigma, sign)
        finite = ratio[~np.isnan(ratio)]
        excluded += int(np.sum(np.isnan(ratio)))
        infinite += int(np.sum(np.isinf(finite)))
        minimum[sign] = float(np.min(finite)) if finite.size else math.inf
    report = PhaseLowerBoundReport(
        sample_count=sample_count,
        seed=seed,
        min_ratio=minimum,
        excluded=excluded,
        infinite=infinite,
    )
    logger.info(f"Phase lower bound: min ratios {report.min_ratio}")
    return report


class QuadraticRemainderReport(BaseModel):
    sample_count: int
    seed: int
    max_ratio: Dict[float, float]
    bound: float = QUADRATIC_REMAINDER_BOUND
    scale_ratio_range: Tuple[float, float] = QUADRATIC_SCALE_RATIO

    @property
    def scale_ratio(self) -> float:
        values = [self.max_ratio[s] for s in sorted(self.max_ratio)]
        return values[-1] / values[0] if values[0] > 0 else math.inf

    @property
    def passed(self) -> bool:
        low, high = self.scale_ratio_range
        bounded = all(r <= self.bound + _SLACK for r in self.max_ratio.values())
        return bounded and low <= self.scale_ratio <= high


def quadratic_remainder(
    xi: np.ndarray, eta: np.ndarray, sigma: np.ndarray, theta0: Sign, theta2: Sign
) -> np.ndarray:
    """|p_Xi - q| for the paired sign tuple (theta0, theta0, theta2, theta2)."""
    p = resonance_four(xi, eta, sigma, SignTuple.paired(theta0, theta2)).value
    return np.abs(p - quadratic_part(xi, eta, sigma, theta0, theta2))


def quadratic_remainder_check(
    sample_count: int = 10_000,
    seed: int = 0,
    scales: Sequence[float] = (1e-2, 1e-3),
) -> QuadraticRemainderReport:
    rng = np.random.default_rng(seed)
    xi = sample_ball(rng, sample_count, 1.0)
    sigma = sample_ball(rng, sample_count, 1.0)
    directions = random_directions(rng, sample_count)
    pairs = [(a, b) for a in Sign for b in Sign]
    choice = rng.integers(len(pairs), size=sample_count)

    max_ratio = {}
    for scale in scales:
        eta = directions * scale
        worst = 0.0
        for index, (theta0, theta2) in enumerate(pairs):
            chosen = choice == index
            remainder = quadratic_remainder(
                xi[:, chosen], eta[:, chosen], sigma[:, chosen], theta0, theta2
            )
            worst = max(worst, float(np.max(remainder, initial=0.0)) / scale**2)
        max_ratio[float(scale)] = worst
    report = QuadraticRemainderReport(
        sample_count=sample_count, seed=seed, max_ratio=max_ratio
    )
    logger.info(f"Quadratic remainder ratios: {report.max_ratio}")
    return report


class NonResonanceReport(BaseModel):
    sample_count: int
    seed: int
    min_value: float
    floor: float = NON_RESONANCE_FLOOR

    @property
    def passed(self) -> bool:
        return self.min_value >= self.floor


def non_resonance_check(
    sample_count: int = 10_000, seed: int = 0, radius: float = 100.0
) -> NonResonanceReport:
    rng = np.random.default_rng(seed)
    xi = sample_ball(rng, sample_count, radius)
    eta = sample_ball(rng, sample_count, radius)
    values = resonance_pair(xi, eta, Sign.PLUS, Sign.MINUS).value
    report = NonResonanceReport(
        sample_count=sample_count, seed=seed, min_value=float(np.min(values))
    )
    logger.info(f"Non-resonance: min p(+,-) = {report.min_value:.6f}")
    return report


def bilinear_commutator(
    psi1: SpinorField, psi2: SpinorField, symbol: Optional[np.ndarray] = None
) -> ScalarField:
    """<A psi1, psi2> - <psi1, A psi2> with A = <D> unless another symbol is given."""
    symbol = psi1.grid.bracket if symbol is None else symbol
    a_psi1 = apply_multiplier(psi1.to_physical(), symbol)
    a_psi2 = apply_multiplier(psi2.to_physical(), symbol)
    return inner_density(a_psi1, psi2) - inner_density(psi1, a_psi2)


def _fit_exponent(scales: List[float], values: List[float]) -> Optional[float]:
    keep = [(n, v) for n, v in zip(scales, values) if v > 0]
    if len(keep) < 2:
        return None
    n, v = zip(*keep)
    slope, _ = np.polyfit(np.log(n), np.log(v), 1)
    return float(slope)


class NullGainReport(BaseModel):
    dyadics: List[float]
    mixed: List[float]
    same: List[float]
    commutator: List[float]
    mixed_exponent: Optional[float] = None
    same_exponent: Optional[float] = None
    commutator_exponent: Optional[float] = None

    @property
    def gain(self) -> Optional[float]:
        if self.mixed_exponent is None or self.same_exponent is None:
            return None
        return self.mixed_exponent - self.same_exponent


def _check_dyadics(psi: SpinorField, dyadics: Optional[Sequence[float]]) -> List[float]:
    resolved = dyadic_range(psi.grid)
    if dyadics is None:
        return resolved
    outside = [N for N in dyadics if N not in resolved]
    if outside:
        raise ValueError(
            f"Dyadic scales {outside} are outside the resolved range "
            f"[{resolved[0]}, {resolved[-1]}]"
        )
    return list(dyadics)


def bilinear_null_gain(
    psi: SpinorField,
    dyadics: Optional[Sequence[float]] = None,
    commutator_symbol: Optional[np.ndarray] = None,
    small_scale: float = 1.0,
) -> NullGainReport:
    """
    ||P_N <Pi_+ psi, Pi_- psi>||_inf against the same-sign pairing, and the
    commutator pairing, across N; exponents are fitted over N <= small_scale.
    """
    scales = _check_dyadics(psi, dyadics)
    plus = project(psi, Sign.PLUS).to_physical()
    minus = project(psi, Sign.MINUS).to_physical()
    mixed_density = inner_density(plus, minus)
    same_density = inner_density(plus, plus)
    commutator = bilinear_commutator(plus, plus, commutator_symbol)

    mixed, same, comm = [], [], []
    for N in scales:
        mixed.append(sup_norm(littlewood_paley(mixed_density, N)))
        same.append(sup_norm(littlewood_paley(same_density, N)))
        comm.append(sup_norm(littlewood_paley(commutator, N)))

    small = [i for i, N in enumerate(scales) if N <= small_scale]

    def pick(values: List[float]) -> List[float]:
        return [values[i] for i in small]

    small_scales = pick(scales)
    report = NullGainReport(
        dyadics=scales,
        mixed=mixed,
        same=same,
        commutator=comm,
        mixed_exponent=_fit_exponent(small_scales, pick(mixed)),
        same_exponent=_fit_exponent(small_scales, pick(same)),
        commutator_exponent=_fit_exponent(small_scales, pick(comm)),
    )
    logger.info(
        f"Bilinear null gain: mixed exponent {report.mixed_exponent}, "
        f"same exponent {report.same_exponent}"
    )
    return report


class BilinearConstantReport(BaseModel):
    dyadics: List[float]
    constants: List[float]

    @property
    def max_constant(self) -> float:
        return max(self.constants, default=0.0)


def bilinear_lp_constant(
    psi1: SpinorField,
    psi2: SpinorField,
    dyadics: Optional[Sequence[float]] = None,
    weight_power: float = 10,
) -> BilinearConstantReport:
    """C(N) in ||P_N <psi1, psi2>||_2 <= C N^{3/2} <N>^-5 A(psi1) A(psi2)."""
    scales = _check_dyadics(psi1, dyadics)
    density = inner_density(psi1.to_physical(), psi2.to_physical())
    amplitude = spectral_sup_norm(psi1, weight_power) * spectral_sup_norm(
        psi2, weight_power
    )
    constants = []
    for N in scales:
        scale = N**1.5 * (1.0 + N * N) ** -2.5 * amplitude
        value = l2_norm(littlewood_paley(density, N))
        constants.append(value / scale if scale > 0 else 0.0)
    return BilinearConstantReport(dyadics=scales, constants=constants)
