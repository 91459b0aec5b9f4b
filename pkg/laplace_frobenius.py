"""
Laplace-domain analysis of the reduced ODE.

With G = Psi' the reduced equation sum_k q_(k+1)(u) G^(k)(u) = 0 becomes
p(s) G''(s) + l(s) G'(s) + r(s) G(s) = v(s) in the transform variable.
s = 0 is a regular singular point; its indicial roots are 0 and
2a/sigma^2 - 1, and the Frobenius series around it carry the tail exponent.
"""
import math
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import mpmath
import numpy as np
from numpy.polynomial import Polynomial

from config import CONFIG
from ide_reduction import ReducedODE, build_reduced_ode
from risk_process_sim import ModelParams, check_theorem_preconditions
from utils import GateError, ReductionError, ResonanceError, UnsupportedCaseError

logger = logging.getLogger(__name__)

CONVENTIONS = ("printed", "derived")
RESONANCE_TOL = 1e-9
DIVISOR_TOL = 1e-12
ROOT_TOL = 1e-12
MIN_ORDER = 8
RESIDUAL_DPS = 120


@dataclass(frozen=True)
class LaplaceODE:
    p: Polynomial
    l: Polynomial
    r: Polynomial
    rho1: float
    rho2: float
    convention: str
    red: ReducedODE = field(repr=False)

    @property
    def l0_limit(self) -> float:
        """lim s l(s)/p(s) at s = 0"""
        return float(self.l.coef[0] / self.p.coef[1])

    @property
    def r0_limit(self) -> float:
        """lim s^2 r(s)/p(s) at s = 0"""
        reduced = Polynomial(self.p.coef[1:])
        return float((Polynomial([0.0, 1.0]) * self.r)(0.0) / reduced(0.0))

    @property
    def rhs_degree(self) -> int:
        # v(s) is not constructed; only its degree is recorded
        return self.red.order - 2

    def table(self) -> List[Dict]:
        size = max(len(self.p.coef), len(self.l.coef), len(self.r.coef))
        padded = [np.pad(poly.coef, (0, size - len(poly.coef))) for poly in (self.p, self.l, self.r)]
        return [{"i": i, "p_i": padded[0][i], "l_i": padded[1][i], "r_i": padded[2][i]} for i in range(size)]


@dataclass(frozen=True)
class FrobeniusSolution:
    rho: float
    gamma_coeffs: Tuple[float, ...]
    radius_hint: float
    max_recurrence_residual: float = 0.0

    @property
    def order(self) -> int:
        return len(self.gamma_coeffs) - 1


@dataclass(frozen=True)
class LaplaceAudit:
    differences: Dict[str, Tuple[int, ...]]
    printed: LaplaceODE
    derived: LaplaceODE

    @property
    def identical(self) -> bool:
        return not any(self.differences.values())

    def summary(self) -> str:
        lines = ["printed vs derived Laplace coefficients:"]
        for name in ("p", "l", "r"):
            where = self.differences[name]
            if not where:
                lines.append(f"  {name}: identical")
                continue
            left = getattr(self.printed, name).coef
            right = getattr(self.derived, name).coef
            for i in where:
                lines.append(f"  {name}[s^{i}]: printed {_at(left, i):.12g} vs derived {_at(right, i):.12g}")
        lines.append(f"  indicial roots agree: rho1 = {self.printed.rho1:.12g}, rho2 = {self.printed.rho2:.12g}")
        return "\n".join(lines)


def _at(coef: np.ndarray, i: int) -> float:
    return float(coef[i]) if i < len(coef) else 0.0


def _coefficient_arrays(red: ReducedODE) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """a_j, b_j, c_j for j = 0..order+2 (zero beyond the top)"""
    size = red.order + 3
    a, b, c = np.zeros(size), np.zeros(size), np.zeros(size)
    for j, q in enumerate(red.coeffs):
        a[j], b[j], c[j] = q.a, q.b, q.c
    return a, b, c


def derive_laplace_coefficients(red: ReducedODE) -> Tuple[Polynomial, Polynomial, Polynomial]:
    """p, l, r obtained by transforming sum_k q_(k+1) G^(k) term by term"""
    a, b, c = _coefficient_arrays(red)
    top = red.order
    p = [a[i + 1] for i in range(top)]
    l = [2 * (i + 1) * a[i + 2] - b[i + 1] for i in range(top)]
    r = [(i + 1) * (i + 2) * a[i + 3] - (i + 1) * b[i + 2] + c[i + 1] for i in range(top)]
    return Polynomial(p), Polynomial(l), Polynomial(r)


def _printed_laplace_coefficients(red: ReducedODE) -> Tuple[Polynomial, Polynomial, Polynomial]:
    a, b, c = _coefficient_arrays(red)
    top = red.order

    def b_tilde(i):
        return 2 * i * a[i + 1] - b[i] if i <= top - 1 else -b[top]

    def c_tilde(i):
        if i <= top - 2:
            return i * (i + 1) * a[i + 2] - 2 * i * b[i] + c[i]
        if i == top - 1:
            return -2 * (top - 1) * b[top]
        return c[top - 1]

    p = [0.0] + [a[i + 1] for i in range(1, top)]
    l = [b_tilde(i + 1) for i in range(top)]
    r = [c_tilde(i + 1) for i in range(top)]
    return Polynomial(p), Polynomial(l), Polynomial(r)


def build_laplace_ode(red: ReducedODE, convention: str = "printed") -> LaplaceODE:
    """Second-order ODE for the transform of Psi' and its indicial data at s = 0"""
    if convention not in CONVENTIONS:
        raise ValueError(f"convention must be one of {CONVENTIONS}, got '{convention}'")
    builder = _printed_laplace_coefficients if convention == "printed" else derive_laplace_coefficients
    p, l, r = builder(red)

    if p.coef[0] != 0.0:
        raise ReductionError(f"p(0) = {p.coef[0]:.3e}, expected 0")
    if len(p.coef) < 2 or p.coef[1] == 0.0:
        raise ReductionError("p'(0) = a_2 vanishes: s = 0 is not a regular singular point")

    l0 = float(l.coef[0] / p.coef[1])
    params = red.params
    expected = 2.0 - 2.0 * params.a / params.sigma ** 2
    if abs(l0 - expected) > ROOT_TOL * max(1.0, abs(expected)):
        raise ReductionError(f"lim s l/p = {l0:.15g}, expected 2 - 2a/sigma^2 = {expected:.15g}")

    roots = np.roots([1.0, l0 - 1.0, 0.0]).real
    rho1, rho2 = sorted(roots, key=abs)
    lode = LaplaceODE(p=p, l=l, r=r, rho1=float(rho1), rho2=float(rho2), convention=convention, red=red)
    if lode.r0_limit != 0.0:
        raise ReductionError(f"lim s^2 r/p = {lode.r0_limit:.3e}, expected 0")
    logger.info(f"✅ Laplace ODE ({convention}): deg p = {p.degree()}, rho = ({lode.rho1:.6g}, {lode.rho2:.6g})")
    return lode


def audit_laplace(red: ReducedODE) -> LaplaceAudit:
    printed = build_laplace_ode(red, "printed")
    derived = build_laplace_ode(red, "derived")
    differences = {}
    for name in ("p", "l", "r"):
        left, right = getattr(printed, name).coef, getattr(derived, name).coef
        size = max(len(left), len(right))
        scale = max(1.0, float(np.max(np.abs(left))), float(np.max(np.abs(right))))
        differences[name] = tuple(i for i in range(size) if abs(_at(left, i) - _at(right, i)) > ROOT_TOL * scale)
    audit = LaplaceAudit(differences=differences, printed=printed, derived=derived)
    if not audit.identical:
        logger.warning(f"⚠️ Laplace coefficient conventions differ at {differences}")
    return audit


def indicial_roots(lode: LaplaceODE) -> Tuple[float, float]:
    """Roots of rho(rho - 1) + l0 rho + r0 = 0, checked against (0, 2a/sigma^2 - 1)"""
    params = lode.red.params
    ratio = 2.0 * params.a / params.sigma ** 2
    if ratio >= 2.0:
        raise UnsupportedCaseError(f"2a/sigma^2 = {ratio:.6g} must be below 2")
    if abs(lode.rho1) > ROOT_TOL or abs(lode.rho2 - (ratio - 1.0)) > ROOT_TOL * max(1.0, abs(ratio)):
        raise ReductionError(f"indicial roots ({lode.rho1:.15g}, {lode.rho2:.15g}) "
                             f"differ from (0, {ratio - 1.0:.15g})")
    gap = lode.rho2 - lode.rho1
    if abs(gap - round(gap)) < RESONANCE_TOL:
        raise ResonanceError(f"indicial roots differ by the integer {round(gap)}: logarithmic case")
    return lode.rho1, lode.rho2


def _radius_hint(lode: LaplaceODE) -> float:
    roots = Polynomial(lode.p.coef[1:]).roots()
    roots = roots[np.abs(roots) > 0]
    return float(np.min(np.abs(roots))) if roots.size else math.inf


def _recurrence(p: Sequence, l: Sequence, r: Sequence, rho, order: int, summer: Callable) -> Tuple[List, float]:
    """gamma_0 = 1 and gamma_N from the coefficient of s^(N + rho - 1); works for floats and mpf"""
    def get(coeffs, k):
        return coeffs[k] if 0 <= k < len(coeffs) else 0

    def indicial(x):
        return p[1] * x * (x - 1) + l[0] * x

    gamma = [rho * 0 + 1]
    worst = 0.0
    for big_n in range(1, order + 1):
        terms = []
        for k in range(2, len(p)):
            m = big_n + 1 - k
            if m >= 0:
                terms.append(get(p, k) * (m + rho) * (m + rho - 1) * gamma[m])
        for k in range(1, len(l)):
            m = big_n - k
            if m >= 0:
                terms.append(get(l, k) * (m + rho) * gamma[m])
        for k in range(len(r)):
            m = big_n - 1 - k
            if m >= 0:
                terms.append(get(r, k) * gamma[m])
        divisor = indicial(big_n + rho)
        if abs(divisor) < DIVISOR_TOL * max(1.0, abs(p[1])):
            raise ResonanceError(f"recurrence divisor {float(divisor):.3e} at order {big_n}")
        value = -summer(terms) / divisor
        gamma.append(value)
        magnitude = summer([abs(t) for t in terms]) + abs(divisor * value)
        if magnitude:
            worst = max(worst, float(abs(summer(terms) + divisor * value) / magnitude))
    return gamma, worst


def frobenius_series(lode: LaplaceODE, rho: float, order: Optional[int] = None) -> FrobeniusSolution:
    """Truncated series s^rho sum_m gamma_m s^m solving the homogeneous Laplace ODE"""
    order = CONFIG["frobenius_order"] if order is None else order
    if order < MIN_ORDER:
        raise ValueError(f"truncation order must be >= {MIN_ORDER}, got {order}")
    if min(abs(rho - lode.rho1), abs(rho - lode.rho2)) > ROOT_TOL:
        raise ValueError(f"rho = {rho} is not an indicial root of this equation")
    indicial_roots(lode)

    gamma, worst = _recurrence(list(lode.p.coef), list(lode.l.coef), list(lode.r.coef),
                               float(rho), order, math.fsum)
    if worst > 1e-12:
        raise ReductionError(f"recurrence residual {worst:.3e} exceeds 1e-12")
    return FrobeniusSolution(rho=float(rho), gamma_coeffs=tuple(float(g) for g in gamma),
                             radius_hint=_radius_hint(lode), max_recurrence_residual=worst)


def _falling(x, k: int):
    value = x * 0 + 1
    for i in range(k):
        value *= x - i
    return value


def _series(gamma: Sequence, rho, s, derivative: int):
    total = 0
    for m, g in enumerate(gamma):
        total = total + g * _falling(m + rho, derivative) * s ** (m + rho - derivative)
    return total


def evaluate(solution: FrobeniusSolution, s, derivative: int = 0):
    """d^k/ds^k of s^rho gamma(s) for s > 0 (scalars or arrays)"""
    s = np.asarray(s, dtype=float)
    if np.any(s <= 0):
        raise ValueError("series is evaluated for s > 0")
    return _series(solution.gamma_coeffs, solution.rho, s, derivative)


def wronskian_scaled(sol1: FrobeniusSolution, sol2: FrobeniusSolution, s):
    """s^(1 - rho1 - rho2) W(s); tends to (rho2 - rho1) gamma1(0) gamma2(0) as s -> 0"""
    w = evaluate(sol1, s) * evaluate(sol2, s, 1) - evaluate(sol1, s, 1) * evaluate(sol2, s)
    return np.asarray(s, dtype=float) ** (1.0 - sol1.rho - sol2.rho) * w


def wronskian_limit(sol1: FrobeniusSolution, sol2: FrobeniusSolution) -> float:
    return (sol2.rho - sol1.rho) * sol1.gamma_coeffs[0] * sol2.gamma_coeffs[0]


def residual_slope(lode: LaplaceODE, rho: float, order: Optional[int] = None,
                   s_values: Optional[Sequence[float]] = None) -> float:
    """Log-log slope of the truncated-series residual, evaluated in extended precision"""
    order = CONFIG["frobenius_order"] if order is None else order
    if s_values is None:
        low, high = CONFIG["residual_s_range"]
        s_values = np.geomspace(low, high, 9)
    indicial_roots(lode)

    logs = []
    with mpmath.workdps(RESIDUAL_DPS):
        p = [mpmath.mpf(float(x)) for x in lode.p.coef]
        l = [mpmath.mpf(float(x)) for x in lode.l.coef]
        r = [mpmath.mpf(float(x)) for x in lode.r.coef]
        # rho is recomputed from the stored coefficients so it is an exact root at this precision
        exact_rho = mpmath.mpf(0) if abs(rho - lode.rho1) <= ROOT_TOL else 1 - l[0] / p[1]
        gamma, _ = _recurrence(p, l, r, exact_rho, order, mpmath.fsum)
        for s in s_values:
            s_mp = mpmath.mpf(float(s))
            residual = (mpmath.polyval(p[::-1], s_mp) * _series(gamma, exact_rho, s_mp, 2)
                        + mpmath.polyval(l[::-1], s_mp) * _series(gamma, exact_rho, s_mp, 1)
                        + mpmath.polyval(r[::-1], s_mp) * _series(gamma, exact_rho, s_mp, 0))
            logs.append((math.log(float(s)), float(mpmath.log(abs(residual)))))
    x, y = np.array(logs).T
    slope = float(np.polyfit(x, y, 1)[0])
    logger.info(f"🔄 residual slope for rho={rho:.6g}, N={order}: {slope:.3f}")
    return slope


def predicted_tail(params: ModelParams) -> float:
    """Exponent beta of Psi(u) ~ C u^(-beta); the constant C is not determined here"""
    gate = check_theorem_preconditions(params)
    if not gate.passed:
        raise GateError(gate.summary())
    lode = build_laplace_ode(build_reduced_ode(params))
    _, rho2 = indicial_roots(lode)
    return rho2
