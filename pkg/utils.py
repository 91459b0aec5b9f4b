"""
Utility functions and the shared exception hierarchy
"""
import re
import json
import hashlib
import logging
from functools import lru_cache
from typing import Any, Tuple

from sympy.calculus.finite_diff import finite_diff_weights

logger = logging.getLogger(__name__)


class RuinToolkitError(Exception):
    """Base class for every error raised by the toolkit"""


class ValidationError(RuinToolkitError):
    """A jump law or model parameter set violates its invariants"""


class QuadratureError(RuinToolkitError):
    """Adaptive quadrature did not reach the requested tolerance"""


class SamplingError(RuinToolkitError):
    """Inverse-CDF root bracketing failed"""


class ReductionError(RuinToolkitError):
    """A structural identity of the reduced ODE does not hold"""


class UnsupportedCaseError(RuinToolkitError):
    """The requested configuration lies outside the supported regime"""


class ResonanceError(UnsupportedCaseError):
    """Indicial roots differ by an integer (logarithmic Frobenius case)"""


class GateError(RuinToolkitError):
    """Theorem preconditions are not met"""


class TailFitError(RuinToolkitError):
    """Not enough usable points for the power-law regression"""


class ConfigError(RuinToolkitError):
    """Scenario configuration could not be parsed"""


def config_hash(payload: Any) -> str:
    """Stable sha256 of a JSON-serialisable payload"""
    canonical = json.dumps(payload, sort_keys=True, separators=(',', ':'), default=str)
    return hashlib.sha256(canonical.encode('utf-8')).hexdigest()


def sanitize_name(text: str) -> str:
    """Turn a scenario title into a safe file stem"""
    if not text:
        return "scenario"
    text = re.sub(r'[^\w\s-]', '', text).strip().lower()
    text = re.sub(r'[\s-]+', '_', text)
    return text[:64] or "scenario"


def validate_scenario_name(name: str) -> bool:
    """Prevent path traversal when resolving scenario names"""
    if not name or len(name) > 100:
        return False
    if any(part in name for part in ['/', '\\', '..', '~']):
        return False
    return re.match(r'^[\w\s.-]+$', name) is not None


@lru_cache(maxsize=64)
def central_difference_weights(derivative: int, half_width: int) -> Tuple[float, ...]:
    """Exact (2*half_width+1)-point central stencil weights for d^k/dx^k on a unit grid"""
    if derivative < 0 or 2 * half_width < derivative:
        raise ValueError(f"stencil of half width {half_width} cannot resolve derivative {derivative}")
    offsets = list(range(-half_width, half_width + 1))
    weights = finite_diff_weights(derivative, offsets, 0)[derivative][-1]
    return tuple(float(w) for w in weights)


def central_derivative(func, x: float, derivative: int, step: float, accuracy: int = 8) -> float:
    """Central finite-difference derivative of order `derivative` with error O(step**accuracy)"""
    if derivative == 0:
        return float(func(x))
    if derivative % 2 == 0:
        half_width = (accuracy + derivative - 2) // 2
    else:
        half_width = (accuracy + derivative - 1) // 2
    weights = central_difference_weights(derivative, half_width)
    total = 0.0
    for i, w in zip(range(-half_width, half_width + 1), weights):
        if w != 0.0:
            total += w * float(func(x + i * step))
    return total / step ** derivative
