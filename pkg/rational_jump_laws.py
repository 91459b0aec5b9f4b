"""
Jump-size laws with rational Laplace transforms.

A law is described by the constant-coefficient operator
P(d/dx) = sum_j alpha^j d^j/dx^j annihilating its density and by the boundary
values f^(k)(0) = f^k, k = 0..n-1. Everything here evaluates the density
through the flow of the companion system, so repeated or complex roots of P
need no special handling.
"""
import json
import math
import re
import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, Sequence, Tuple, Union

import numpy as np
from numpy.polynomial import Polynomial
from numpy.polynomial import polynomial as poly
from scipy import integrate, linalg

from utils import ConfigError, QuadratureError, SamplingError, ValidationError

logger = logging.getLogger(__name__)

NORMALIZATION_TOL = 1e-12
NONNEG_TOL = -1e-10
VALIDATION_GRID_SIZE = 2048
DECAY_SPAN = 50.0
POLE_TOL = 1e-8
SAMPLE_TOL = 1e-12
TAIL_TOL = 1e-10
MAX_TABLE_NODES = 1 << 16

ArrayLike = Union[float, Sequence[float], np.ndarray]


@dataclass(frozen=True)
class RationalDensitySpec:
    """One jump-size law: P(d/dx) f = 0 with f^(k)(0) = boundary_values[k]"""
    order: int
    ode_coeffs: Tuple[float, ...]
    boundary_values: Tuple[float, ...]
    label: str = field(default="", compare=False)

    def __post_init__(self):
        object.__setattr__(self, "ode_coeffs", tuple(float(a) for a in self.ode_coeffs))
        object.__setattr__(self, "boundary_values", tuple(float(f) for f in self.boundary_values))
        if int(self.order) != self.order or self.order < 1:
            raise ValidationError(f"order must be a positive integer, got {self.order}")
        if len(self.ode_coeffs) != self.order + 1:
            raise ValidationError(
                f"expected {self.order + 1} ODE coefficients for order {self.order}, got {len(self.ode_coeffs)}")
        if len(self.boundary_values) != self.order:
            raise ValidationError(
                f"expected {self.order} boundary values for order {self.order}, got {len(self.boundary_values)}")
        if not all(math.isfinite(v) for v in self.ode_coeffs + self.boundary_values):
            raise ValidationError("ODE coefficients and boundary values must be finite")

    @property
    def name(self) -> str:
        return self.label or f"law(n={self.order}, alpha={list(self.ode_coeffs)}, f={list(self.boundary_values)})"


@dataclass(frozen=True)
class RationalFunction:
    """numerator(s) / denominator(s), coefficients in ascending degree"""
    numerator: Tuple[float, ...]
    denominator: Tuple[float, ...]

    def __post_init__(self):
        num = np.trim_zeros(np.asarray(self.numerator, dtype=float), 'b')
        den = np.trim_zeros(np.asarray(self.denominator, dtype=float), 'b')
        if den.size == 0:
            raise ValidationError("denominator must be a nonzero polynomial")
        if num.size >= den.size:
            raise ValidationError("rational transform of a density must be proper")

    def __call__(self, s):
        return Polynomial(self.numerator)(s) / Polynomial(self.denominator)(s)

    @property
    def poles(self) -> np.ndarray:
        return poly.polyroots(self.denominator)


@dataclass(frozen=True)
class InvariantCheck:
    name: str
    passed: bool
    detail: str = ""


@dataclass(frozen=True)
class ValidationReport:
    spec: RationalDensitySpec
    checks: Tuple[InvariantCheck, ...]

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)

    @property
    def failures(self) -> Tuple[InvariantCheck, ...]:
        return tuple(check for check in self.checks if not check.passed)

    def summary(self) -> str:
        lines = [f"{'PASS' if self.passed else 'FAIL'} {self.spec.name}"]
        for check in self.checks:
            lines.append(f"  [{'ok' if check.passed else 'FAILED'}] {check.name}: {check.detail}")
        return "\n".join(lines)


@dataclass(frozen=True)
class _CompiledLaw:
    flow: np.ndarray      # augmented companion matrix acting on (F, f, f', ..., f^(n-1))
    start: np.ndarray
    poles: np.ndarray     # roots of P that survive in the transform
    x_max: float


@dataclass(frozen=True)
class _JetTable:
    step: float
    nodes: np.ndarray
    cdf: np.ndarray
    jets: np.ndarray      # Taylor coefficients of F around every node


# ----------------------------------------------------------------------------
# presets and (de)serialisation
# ----------------------------------------------------------------------------

def exp_law(mu: float) -> RationalDensitySpec:
    """Exp(mu): f' + mu f = 0, f(0) = mu"""
    mu = float(mu)
    return RationalDensitySpec(1, (mu, 1.0), (mu,), label=f"exp({mu:g})")


def erlang_law(k: int, mu: float) -> RationalDensitySpec:
    """Erlang(k, mu): (d/dx + mu)^k f = 0"""
    k, mu = int(k), float(mu)
    if k < 1:
        raise ValidationError(f"Erlang shape must be >= 1, got {k}")
    alpha = tuple(math.comb(k, j) * mu ** (k - j) for j in range(k + 1))
    boundary = tuple(mu ** k if j == k - 1 else 0.0 for j in range(k))
    return RationalDensitySpec(k, alpha, boundary, label=f"erlang({k}, {mu:g})")


def hyperexp_law(p: Sequence[float], mu: Sequence[float]) -> RationalDensitySpec:
    """Mixture sum_i p_i Exp(mu_i) with distinct rates"""
    p = np.asarray(p, dtype=float)
    mu = np.asarray(mu, dtype=float)
    if p.shape != mu.shape or p.ndim != 1 or p.size == 0:
        raise ValidationError("hyperexp needs equally long, nonempty p and mu lists")
    if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
        raise ValidationError(f"hyperexp weights must be nonnegative and sum to 1, got {p.tolist()}")
    if np.any(mu <= 0) or len(set(mu.tolist())) != mu.size:
        raise ValidationError(f"hyperexp rates must be distinct and positive, got {mu.tolist()}")
    alpha = poly.polyfromroots(-mu)
    n = mu.size
    boundary = tuple(float(np.sum(p * mu * (-mu) ** k)) for k in range(n))
    label = f"hyperexp({p.tolist()}, {mu.tolist()})"
    return RationalDensitySpec(n, tuple(alpha), boundary, label=label)


_PRESET_PATTERN = re.compile(r'^\s*(exp|erlang|hyperexp)\s*\((.*)\)\s*$', re.IGNORECASE)


def parse_law(entry: Union[str, Dict]) -> RationalDensitySpec:
    """Build a spec from a config entry: explicit block, preset dict or preset string"""
    try:
        if isinstance(entry, str):
            match = _PRESET_PATTERN.match(entry)
            if not match:
                raise ConfigError(f"unrecognised law preset '{entry}'")
            name, args = match.group(1).lower(), json.loads(f"[{match.group(2)}]")
            if name == "exp":
                return exp_law(*args)
            if name == "erlang":
                return erlang_law(*args)
            return hyperexp_law(*args)

        if not isinstance(entry, dict):
            raise ConfigError(f"law entry must be a string or an object, got {type(entry).__name__}")
        if "preset" in entry:
            name = str(entry["preset"]).lower()
            if name == "exp":
                return exp_law(entry["mu"])
            if name == "erlang":
                return erlang_law(entry["k"], entry["mu"])
            if name == "hyperexp":
                return hyperexp_law(entry["p"], entry["mu"])
            raise ConfigError(f"unknown preset '{entry['preset']}'")
        missing = [k for k in ("order", "ode_coeffs", "boundary_values") if k not in entry]
        if missing:
            raise ConfigError(f"explicit law lacks {', '.join(missing)}")
        return RationalDensitySpec(int(entry["order"]), tuple(entry["ode_coeffs"]),
                                   tuple(entry["boundary_values"]), label=entry.get("label", ""))
    except (KeyError, TypeError, json.JSONDecodeError) as e:
        raise ConfigError(f"malformed law entry {entry!r}: {e}") from e


def spec_to_dict(spec: RationalDensitySpec) -> Dict:
    return {
        "order": spec.order,
        "ode_coeffs": list(spec.ode_coeffs),
        "boundary_values": list(spec.boundary_values),
        "label": spec.label,
    }


# ----------------------------------------------------------------------------
# compilation
# ----------------------------------------------------------------------------

def _transform_numerator(spec: RationalDensitySpec) -> np.ndarray:
    """Coefficients of sum_{k=1}^n alpha^k sum_{i=1}^k s^(k-i) f^(i-1)"""
    n = spec.order
    numerator = np.zeros(n)
    for k in range(1, n + 1):
        for i in range(1, k + 1):
            numerator[k - i] += spec.ode_coeffs[k] * spec.boundary_values[i - 1]
    return numerator


def _surviving_poles(spec: RationalDensitySpec) -> np.ndarray:
    """Roots of P that are not cancelled by the transform numerator"""
    roots = poly.polyroots(spec.ode_coeffs)
    numerator = _transform_numerator(spec)
    scale = max(np.max(np.abs(numerator)), 1e-300)
    keep = []
    for root in roots:
        size = max(1.0, abs(root)) ** max(len(numerator) - 1, 0)
        if abs(poly.polyval(root, numerator)) > POLE_TOL * scale * size:
            keep.append(root)
    return np.asarray(keep, dtype=complex)


@lru_cache(maxsize=256)
def _compile(spec: RationalDensitySpec) -> _CompiledLaw:
    n = spec.order
    monic = np.asarray(spec.ode_coeffs) / spec.ode_coeffs[-1]
    flow = np.zeros((n + 1, n + 1))
    flow[0, 1] = 1.0
    for k in range(n - 1):
        flow[1 + k, 2 + k] = 1.0
    flow[n, 1:] = -monic[:n]
    start = np.concatenate(([0.0], spec.boundary_values))

    poles = _surviving_poles(spec)
    decays = -poles.real[poles.real < 0]
    x_max = DECAY_SPAN / float(np.min(decays)) if decays.size else DECAY_SPAN
    return _CompiledLaw(flow=flow, start=start, poles=poles, x_max=x_max)


def _states(law: _CompiledLaw, x: np.ndarray) -> np.ndarray:
    """Rows (F(x), f(x), ..., f^(n-1)(x)) for every x >= 0"""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    propagators = linalg.expm(x[:, None, None] * law.flow[None, :, :])
    return propagators @ law.start


def _validation_grid(x_max: float) -> np.ndarray:
    half = VALIDATION_GRID_SIZE // 2
    geometric = np.geomspace(x_max * 1e-6, x_max, half)
    linear = np.linspace(0.0, x_max, VALIDATION_GRID_SIZE - half)
    return np.unique(np.concatenate((geometric, linear)))


# ----------------------------------------------------------------------------
# operations
# ----------------------------------------------------------------------------

@lru_cache(maxsize=256)
def validate(spec: RationalDensitySpec) -> ValidationReport:
    """Check every invariant of the law; never raises"""
    alpha, boundary = spec.ode_coeffs, spec.boundary_values
    checks = [
        InvariantCheck("leading_coeff_nonzero", alpha[-1] != 0.0, f"alpha^n = {alpha[-1]:g}"),
        InvariantCheck("constant_coeff_nonzero", alpha[0] != 0.0, f"alpha^0 = {alpha[0]:g}"),
    ]

    total = math.fsum(alpha[i + 1] * boundary[i] for i in range(spec.order))
    defect = abs(total - alpha[0])
    checks.append(InvariantCheck(
        "normalization", defect <= NORMALIZATION_TOL * max(1.0, abs(alpha[0])),
        f"sum alpha^(i+1) f^i = {total:.15g} vs alpha^0 = {alpha[0]:.15g}"))

    if alpha[-1] == 0.0:
        checks.append(InvariantCheck("integrable_poles", False, "order ill-defined"))
        checks.append(InvariantCheck("nonnegative_density", False, "not evaluated"))
        return ValidationReport(spec, tuple(checks))

    law = _compile(spec)
    unstable = law.poles[law.poles.real >= 0]
    if law.poles.size == 0:
        checks.append(InvariantCheck("integrable_poles", False, "density vanishes identically"))
    else:
        checks.append(InvariantCheck(
            "integrable_poles", unstable.size == 0,
            "all surviving roots in Re < 0" if unstable.size == 0 else f"non-decaying roots {unstable.tolist()}"))

    if unstable.size or law.poles.size == 0:
        checks.append(InvariantCheck("nonnegative_density", False, "not evaluated"))
    else:
        values = _states(law, _validation_grid(law.x_max))[:, 1]
        floor = NONNEG_TOL * max(1.0, float(np.max(np.abs(values))))
        lowest = float(np.min(values))
        checks.append(InvariantCheck(
            "nonnegative_density", lowest >= floor,
            f"min f = {lowest:.3e} on [0, {law.x_max:.4g}]"))

    report = ValidationReport(spec, tuple(checks))
    if not report.passed:
        logger.warning(f"⚠️ {spec.name} failed: {', '.join(c.name for c in report.failures)}")
    return report


def require_valid(spec: RationalDensitySpec) -> _CompiledLaw:
    report = validate(spec)
    if not report.passed:
        raise ValidationError(f"invalid jump law {spec.name}: "
                              + "; ".join(f"{c.name} ({c.detail})" for c in report.failures))
    return _compile(spec)


def _scalar_or_array(x, values: np.ndarray):
    return float(values[0]) if np.ndim(x) == 0 else values


def density(spec: RationalDensitySpec, x: ArrayLike):
    """f(x): second component of the companion flow started at (0, f^0, ..., f^(n-1))"""
    law = require_valid(spec)
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(xs < 0):
        raise ValueError("density is supported on x >= 0")
    return _scalar_or_array(x, _states(law, xs)[:, 1])


def cdf(spec: RationalDensitySpec, x: ArrayLike):
    """F(x): integrator state of the augmented companion flow"""
    law = require_valid(spec)
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(xs < 0):
        raise ValueError("cdf is supported on x >= 0")
    values = np.clip(_states(law, xs)[:, 0], 0.0, 1.0)
    return _scalar_or_array(x, values)


def laplace_transform(spec: RationalDensitySpec) -> RationalFunction:
    """f^(s) = [sum_k alpha^k sum_i s^(k-i) f^(i-1)] / P(s)"""
    require_valid(spec)
    return RationalFunction(tuple(_transform_numerator(spec)), spec.ode_coeffs)


def mean(spec: RationalDensitySpec) -> float:
    """E xi = -d/ds f^(s) at s = 0"""
    require_valid(spec)
    numerator, denominator = _transform_numerator(spec), spec.ode_coeffs
    n0, n1 = numerator[0], numerator[1] if len(numerator) > 1 else 0.0
    d0, d1 = denominator[0], denominator[1]
    return float(-(n1 * d0 - n0 * d1) / d0 ** 2)


@lru_cache(maxsize=64)
def _jet_table(spec: RationalDensitySpec) -> _JetTable:
    law = require_valid(spec)
    norm = max(float(np.linalg.norm(law.flow, 1)), 1e-12)
    step = min(2.0 / norm, law.x_max / 64.0)
    count = int(math.ceil(law.x_max / step))
    if count > MAX_TABLE_NODES:
        count = MAX_TABLE_NODES
        step = law.x_max / count
    radius = step * norm
    order = 8
    while radius ** order / math.factorial(order) > 1e-18 and order < 80:
        order += 1

    nodes = np.arange(count + 1) * step
    states = _states(law, nodes)
    jets = np.empty((nodes.size, order + 1))
    factorial = 1.0
    for j in range(order + 1):
        if j:
            factorial *= j
        jets[:, j] = states[:, 0] / factorial
        states = states @ law.flow.T
    logger.debug(f"📁 Jet table for {spec.name}: {nodes.size} nodes, order {order}")
    return _JetTable(step=step, nodes=nodes, cdf=jets[:, 0].copy(), jets=jets)


def _horner(coeffs: np.ndarray, delta: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    value = coeffs[:, -1].copy()
    slope = np.zeros_like(value)
    for j in range(coeffs.shape[1] - 2, -1, -1):
        slope = slope * delta + value
        value = value * delta + coeffs[:, j]
    return value, slope


def _tail_quantile(spec: RationalDensitySpec, target: float, lower: float) -> float:
    upper = lower
    for _ in range(64):
        upper *= 2.0
        if cdf(spec, upper) >= target:
            break
    else:
        raise SamplingError(f"could not bracket quantile {target} of {spec.name}")
    for _ in range(200):
        middle = 0.5 * (lower + upper)
        if cdf(spec, middle) < target:
            lower = middle
        else:
            upper = middle
        if upper - lower <= 1e-15 * upper:
            break
    return 0.5 * (lower + upper)


def quantile(spec: RationalDensitySpec, u: ArrayLike):
    """Inverse CDF: table bracket, bisection inside the cell, Newton polish to 1e-12 in F"""
    table = _jet_table(spec)
    targets = np.atleast_1d(np.asarray(u, dtype=float))
    if np.any((targets < 0) | (targets >= 1)) or np.any(~np.isfinite(targets)):
        raise ValueError("quantile levels must lie in [0, 1)")
    if table.cdf[-1] < 1.0 - 1e-6 or np.any(np.diff(table.cdf) < -1e-12):
        raise SamplingError(f"{spec.name}: cdf is not a proper distribution function on the table")

    result = np.zeros_like(targets)
    inside = (targets > 0) & (targets <= table.cdf[-1])
    if np.any(inside):
        level = targets[inside]
        cell = np.clip(np.searchsorted(table.cdf, level, side='right') - 1, 0, table.nodes.size - 2)
        coeffs = table.jets[cell]
        lo = np.zeros_like(level)
        hi = np.full_like(level, table.step)
        for _ in range(6):
            middle = 0.5 * (lo + hi)
            below = _horner(coeffs, middle)[0] < level
            lo = np.where(below, middle, lo)
            hi = np.where(below, hi, middle)

        delta = 0.5 * (lo + hi)
        for _ in range(60):
            value, slope = _horner(coeffs, delta)
            gap = value - level
            if np.all(np.abs(gap) <= SAMPLE_TOL):
                break
            lo = np.where(gap < 0, delta, lo)
            hi = np.where(gap < 0, hi, delta)
            with np.errstate(divide='ignore', invalid='ignore'):
                newton = delta - gap / slope
            fallback = ~np.isfinite(newton) | (newton <= lo) | (newton >= hi)
            delta = np.where(np.abs(gap) <= SAMPLE_TOL, delta, np.where(fallback, 0.5 * (lo + hi), newton))
        result[inside] = table.nodes[cell] + delta

    for index in np.flatnonzero(targets > table.cdf[-1]):
        result[index] = _tail_quantile(spec, float(targets[index]), float(table.nodes[-1]))
    return _scalar_or_array(u, result)


def sample(spec: RationalDensitySpec, rng: np.random.Generator) -> float:
    """One draw by numeric inverse CDF; consumes exactly one uniform from rng"""
    return float(quantile(spec, rng.random()))


def sample_many(spec: RationalDensitySpec, rng: np.random.Generator, size: int) -> np.ndarray:
    return np.asarray(quantile(spec, rng.random(size)), dtype=float).reshape(size)


def _quad(func, lower: float, upper: float, **kwargs) -> float:
    result = integrate.quad(func, lower, upper, full_output=1, limit=500, **kwargs)
    if len(result) > 3:
        raise QuadratureError(f"quadrature on [{lower:g}, {upper:g}] did not converge: {result[3]}")
    return result[0]


def fractional_moment(spec: RationalDensitySpec, beta_prime: float) -> float:
    """E xi^beta' by adaptive quadrature split at x = 1 (algebraic weight on the cusp)"""
    if not 0.0 < beta_prime < 1.0:
        raise ValueError(f"beta' must lie in (0, 1), got {beta_prime}")
    law = require_valid(spec)

    def f(x):
        return float(_states(law, np.array([x]))[0, 1])

    upper = max(law.x_max, 2.0)
    for _ in range(20):
        survival = 1.0 - float(_states(law, np.array([upper]))[0, 0])
        if upper ** beta_prime * max(survival, 0.0) < TAIL_TOL:
            break
        upper *= 2.0

    head = _quad(f, 0.0, 1.0, weight='alg', wvar=(beta_prime, 0.0), epsabs=0.0, epsrel=1e-10)
    tail = _quad(lambda x: x ** beta_prime * f(x), 1.0, upper, epsabs=1e-14, epsrel=1e-10)
    return head + tail
