"""
Monte Carlo for the reserve process dX = X dR + dP with R_t = a t + sigma W_t
and compound Poisson jumps in both directions.

Paths are simulated in fixed-size blocks. Every block owns a counter-based
Philox stream keyed by (seed, block index), and every iteration draws the
same full-width arrays whatever the state, so results do not depend on thread
scheduling and runs that differ only in u use common random numbers.
"""
import math
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from config import CONFIG
from rational_jump_laws import (RationalDensitySpec, fractional_moment, parse_law,
                                quantile, require_valid, spec_to_dict)
from utils import QuadratureError, ValidationError

logger = logging.getLogger(__name__)

SCHEMES = ("exact_gbm", "euler")
EULER_REFINEMENT = 16
GATE_GRID_POINTS = 22


@dataclass(frozen=True)
class ModelParams:
    a: float
    sigma: float
    c: float
    lambda1: float
    lambda2: float
    law1: RationalDensitySpec
    law2: RationalDensitySpec

    def __post_init__(self):
        for name in ("a", "sigma", "c", "lambda1", "lambda2"):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise ValidationError(f"{name} must be finite, got {value}")
            object.__setattr__(self, name, value)
        if self.sigma < 0:
            raise ValidationError(f"sigma must be nonnegative, got {self.sigma}")
        if self.lambda1 <= 0 or self.lambda2 <= 0:
            raise ValidationError("both jump intensities must be positive")
        if self.c == 0:
            raise ValidationError("premium rate c must be nonzero")
        require_valid(self.law1)
        require_valid(self.law2)

    @property
    def total_rate(self) -> float:
        return self.lambda1 + self.lambda2

    @property
    def beta(self) -> float:
        """Tail exponent 2a/sigma^2 - 1"""
        if self.sigma == 0:
            raise ValidationError("beta is undefined without volatility")
        return 2.0 * self.a / self.sigma ** 2 - 1.0

    @classmethod
    def from_dict(cls, block: Dict) -> "ModelParams":
        return cls(a=block["a"], sigma=block["sigma"], c=block["c"],
                   lambda1=block["lambda1"], lambda2=block["lambda2"],
                   law1=parse_law(block["law1"]), law2=parse_law(block["law2"]))

    def to_dict(self) -> Dict:
        return {"a": self.a, "sigma": self.sigma, "c": self.c,
                "lambda1": self.lambda1, "lambda2": self.lambda2,
                "law1": spec_to_dict(self.law1), "law2": spec_to_dict(self.law2)}


@dataclass(frozen=True)
class SimConfig:
    horizon: float
    substep: float = CONFIG["substep"]
    n_paths: int = 10000
    seed: int = CONFIG["seed"]
    ruin_floor: float = 0.0
    block_size: int = CONFIG["block_size"]
    bridge_correction: bool = False
    scheme: str = "exact_gbm"

    def __post_init__(self):
        if not self.horizon > 0:
            raise ValidationError(f"horizon must be positive, got {self.horizon}")
        if not 0 < self.substep <= self.horizon:
            raise ValidationError(f"substep must lie in (0, horizon], got {self.substep}")
        if int(self.n_paths) < 1:
            raise ValidationError(f"n_paths must be >= 1, got {self.n_paths}")
        if int(self.block_size) < 1:
            raise ValidationError(f"block_size must be >= 1, got {self.block_size}")
        if self.scheme not in SCHEMES:
            raise ValidationError(f"scheme must be one of {SCHEMES}, got '{self.scheme}'")

    @classmethod
    def for_params(cls, params: ModelParams, **overrides) -> "SimConfig":
        """Defaults with the horizon set to a fixed number of mean inter-jump times"""
        overrides = {k: v for k, v in overrides.items() if v is not None}
        overrides.setdefault("horizon", CONFIG["mean_interjump_horizon"] / params.total_rate)
        return cls(**overrides)


@dataclass(frozen=True)
class PathOutcome:
    ruined_at: Optional[float]
    terminal_value: float
    overflow: bool = False


@dataclass
class PathBatch:
    ruined_at: np.ndarray     # nan where the path survived to the horizon
    terminal: np.ndarray
    overflow: np.ndarray

    @property
    def ruined(self) -> np.ndarray:
        return ~np.isnan(self.ruined_at)

    @property
    def censored(self) -> np.ndarray:
        return ~self.ruined & ~self.overflow


@dataclass(frozen=True)
class RuinEstimate:
    u: float
    psi_hat: float
    stderr: float
    n_paths: int
    horizon: float
    fraction_censored: float
    fraction_overflow: float = 0.0
    seed: Optional[int] = None

    def __post_init__(self):
        if self.psi_hat + self.fraction_censored > 1.0 + 1e-15:
            raise ValidationError("ruined and censored fractions exceed one")

    def to_row(self) -> Dict:
        return {"u": self.u, "psi_hat": self.psi_hat, "stderr": self.stderr,
                "n_paths": self.n_paths, "horizon": self.horizon,
                "fraction_censored": self.fraction_censored,
                "fraction_overflow": self.fraction_overflow}


@dataclass(frozen=True)
class GateReport:
    beta: float
    beta_in_range: bool
    beta_prime: Optional[float]
    moment: Optional[float]
    notes: Tuple[str, ...] = field(default_factory=tuple)

    @property
    def passed(self) -> bool:
        return self.beta_in_range and self.beta_prime is not None

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        lines = [f"gate {status}: beta = {self.beta:.6g}"]
        if self.beta_prime is not None:
            lines.append(f"  witness beta' = {self.beta_prime:.6g}, E xi^beta' = {self.moment:.10g}")
        lines.extend(f"  {note}" for note in self.notes)
        return "\n".join(lines)


@dataclass(frozen=True)
class HorizonCheck:
    short: RuinEstimate
    long: RuinEstimate

    @property
    def difference(self) -> float:
        return abs(self.long.psi_hat - self.short.psi_hat)

    @property
    def passed(self) -> bool:
        return self.difference < 2.0 * max(self.short.stderr, self.long.stderr, 1e-300)


def make_stream(seed: int, block_index: int) -> np.random.Generator:
    """Counter-based stream for one block of paths"""
    sequence = np.random.SeedSequence(int(seed), spawn_key=(int(block_index),))
    return np.random.Generator(np.random.Philox(sequence))


def _between_jumps(params: ModelParams, x: np.ndarray, delta: np.ndarray, z: np.ndarray,
                   scheme: str) -> np.ndarray:
    a, sigma, c = params.a, params.sigma, params.c
    if scheme == "euler":
        return x + x * (a * delta + sigma * np.sqrt(delta) * z) + c * delta
    if sigma == 0.0:
        growth = np.exp(a * delta)
        premium = c * delta if a == 0.0 else c * np.expm1(a * delta) / a
        return growth * x + premium
    growth = np.exp((a - 0.5 * sigma ** 2) * delta + sigma * np.sqrt(delta) * z)
    return growth * x + c * delta * 0.5 * (growth + 1.0)


def simulate_paths(params: ModelParams, u, config: SimConfig, rng: np.random.Generator,
                   n: int, forced_jumps: Optional[Sequence[Tuple[float, float]]] = None) -> PathBatch:
    """Simulate n paths from X_0 = u up to the horizon or ruin.

    forced_jumps replaces the Poisson clock by a scripted list of
    (time, signed size) pairs applied to every path.
    """
    x = np.broadcast_to(np.asarray(u, dtype=float), (n,)).copy()
    if np.any(x <= 0):
        raise ValidationError("initial capital must be positive")

    horizon, floor, scheme = config.horizon, config.ruin_floor, config.scheme
    step = config.substep / EULER_REFINEMENT if scheme == "euler" else config.substep
    jump_to_jump = scheme == "exact_gbm" and params.sigma == 0.0 and params.c > 0
    rate = params.total_rate
    premium_share = params.lambda2 / rate
    cap = CONFIG["overflow_cap"]

    script = sorted(forced_jumps) if forced_jumps is not None else None
    script_pos = np.zeros(n, dtype=int)

    def scripted_time(pos: np.ndarray) -> np.ndarray:
        times = np.array([t for t, _ in script] + [np.inf])
        return times[np.minimum(pos, len(script))]

    t = np.zeros(n)
    next_jump = scripted_time(script_pos) if script is not None else rng.standard_exponential(n) / rate
    ruined_at = np.full(n, np.nan)
    overflow = np.zeros(n, dtype=bool)
    done = np.zeros(n, dtype=bool)

    while not done.all():
        z = rng.standard_normal(n)
        u_type = rng.random(n)
        u_size = rng.random(n)
        waits = rng.standard_exponential(n)
        u_bridge = rng.random(n)

        idx = np.flatnonzero(~done)
        remaining = horizon - t[idx]
        to_jump = next_jump[idx] - t[idx]
        cap_step = remaining if jump_to_jump else np.minimum(step, remaining)
        hit = to_jump <= cap_step
        delta = np.where(hit, to_jump, cap_step)

        x_start = x[idx]
        with np.errstate(over='ignore', invalid='ignore'):
            x_end = _between_jumps(params, x_start, delta, z[idx], scheme)
        t_end = np.where(hit, next_jump[idx], np.where(delta >= remaining, horizon, t[idx] + delta))

        sunk = x_end < floor
        if config.bridge_correction and params.sigma > 0:
            above = ~sunk & (x_start > floor) & (delta > 0)
            with np.errstate(divide='ignore', invalid='ignore', over='ignore'):
                crossing = np.exp(-2.0 * (x_start - floor) * (x_end - floor)
                                  / (params.sigma ** 2 * x_start ** 2 * delta))
            sunk |= above & (u_bridge[idx] < crossing)
        ruined_at[idx[sunk]] = t_end[sunk]

        jumping = hit & ~sunk
        if np.any(jumping):
            j = idx[jumping]
            if script is not None:
                sizes = np.array([script[p][1] for p in script_pos[j]])
                script_pos[j] += 1
                next_jump[j] = scripted_time(script_pos[j])
            else:
                premium = u_type[j] < premium_share
                sizes = np.empty(j.size)
                if np.any(premium):
                    sizes[premium] = quantile(params.law2, u_size[j[premium]])
                if np.any(~premium):
                    sizes[~premium] = -np.asarray(quantile(params.law1, u_size[j[~premium]]))
                next_jump[j] = t_end[jumping] + waits[j] / rate
            x_end[jumping] += sizes
            crashed = x_end[jumping] < floor
            ruined_at[j[crashed]] = t_end[jumping][crashed]
            sunk[jumping] |= crashed

        x[idx] = x_end
        t[idx] = t_end
        blown = ~sunk & ~(x_end <= cap)
        overflow[idx[blown]] = True
        done[idx] = sunk | blown | (t_end >= horizon)

    if overflow.any():
        logger.warning(f"⚠️ {int(overflow.sum())} paths exceeded {cap:g} and were stopped as survivors")
    return PathBatch(ruined_at=ruined_at, terminal=x, overflow=overflow)


def simulate_path(params: ModelParams, u: float, config: SimConfig, rng_stream: np.random.Generator,
                  forced_jumps: Optional[Sequence[Tuple[float, float]]] = None) -> PathOutcome:
    batch = simulate_paths(params, u, config, rng_stream, 1, forced_jumps=forced_jumps)
    ruined_at = None if np.isnan(batch.ruined_at[0]) else float(batch.ruined_at[0])
    return PathOutcome(ruined_at=ruined_at, terminal_value=float(batch.terminal[0]),
                       overflow=bool(batch.overflow[0]))


def _run_block(params: ModelParams, u: float, config: SimConfig, block: int) -> Tuple[int, int, int, int]:
    size = min(config.block_size, config.n_paths - block * config.block_size)
    batch = simulate_paths(params, u, config, make_stream(config.seed, block), size)
    return size, int(batch.ruined.sum()), int(batch.censored.sum()), int(batch.overflow.sum())


def estimate_ruin(params: ModelParams, u: float, config: SimConfig, threads: int = 1) -> RuinEstimate:
    """Finite-horizon estimate of the ruin probability P(tau <= T)"""
    n_blocks = -(-config.n_paths // config.block_size)
    logger.info(f"🔄 Estimating ruin at u={u:g}: {config.n_paths} paths, T={config.horizon:g}, "
                f"{n_blocks} blocks on {threads} threads")
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda b: _run_block(params, u, config, b), range(n_blocks)))
    else:
        results = [_run_block(params, u, config, b) for b in range(n_blocks)]

    total = sum(r[0] for r in results)
    ruined = sum(r[1] for r in results)
    censored = sum(r[2] for r in results)
    blown = sum(r[3] for r in results)
    psi = ruined / total
    estimate = RuinEstimate(
        u=float(u), psi_hat=psi, stderr=math.sqrt(psi * (1.0 - psi) / total), n_paths=total,
        horizon=config.horizon, fraction_censored=censored / total,
        fraction_overflow=blown / total, seed=config.seed)
    logger.info(f"✅ u={u:g}: psi_hat={estimate.psi_hat:.6g} ± {estimate.stderr:.2g}")
    return estimate


def horizon_stability(params: ModelParams, u: float, config: SimConfig, threads: int = 1) -> HorizonCheck:
    """Compare the estimate at T against the same seed run to 2T"""
    short = estimate_ruin(params, u, config, threads)
    long = estimate_ruin(params, u, replace(config, horizon=2.0 * config.horizon), threads)
    check = HorizonCheck(short, long)
    if not check.passed:
        logger.warning(f"⚠️ u={u:g}: doubling the horizon moved psi_hat by {check.difference:.3g}")
    return check


def check_theorem_preconditions(params: ModelParams) -> GateReport:
    """beta in (0, 1) and a witness beta' in (0, min(beta, 1)) with E xi1^beta' < 1"""
    if params.sigma == 0:
        return GateReport(beta=float("nan"), beta_in_range=False, beta_prime=None, moment=None,
                          notes=("sigma = 0: the investment model is not in force",))
    beta = params.beta
    notes: List[str] = []
    in_range = 0.0 < beta < 1.0
    if not in_range:
        notes.append(f"beta = {beta:.6g} lies outside (0, 1)")
    if beta <= 0:
        return GateReport(beta=beta, beta_in_range=False, beta_prime=None, moment=None, notes=tuple(notes))

    for beta_prime in np.linspace(0.0, min(beta, 1.0), GATE_GRID_POINTS)[1:-1]:
        try:
            moment = fractional_moment(params.law1, float(beta_prime))
        except QuadratureError as e:
            notes.append(f"beta' = {beta_prime:.4g}: {e}")
            continue
        if moment < 1.0:
            return GateReport(beta=beta, beta_in_range=in_range, beta_prime=float(beta_prime),
                              moment=moment, notes=tuple(notes))
    notes.append("no beta' on the search grid gives E xi1^beta' < 1")
    return GateReport(beta=beta, beta_in_range=in_range, beta_prime=None, moment=None, notes=tuple(notes))


def classical_ruin_probability(lambda1: float, c: float, mu: float, u):
    """Cramer-Lundberg ruin probability for Exp(mu) claims without investment"""
    load = lambda1 / (c * mu)
    if not 0 < load < 1:
        raise ValidationError(f"net profit condition fails: lambda/(c mu) = {load:g}")
    return load * np.exp(-(mu - lambda1 / c) * np.asarray(u, dtype=float))
