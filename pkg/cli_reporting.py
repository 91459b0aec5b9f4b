"""
Pipeline orchestration: scenario -> validation -> reduction -> indicial data
-> Monte Carlo over a u-grid -> tail-exponent fit -> output bundle.
"""
import os
import math
import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from config import CONFIG, resolve_run_options
from file_manager import FileManager
from ide_reduction import ReducedODE, audit_reduction, build_reduced_ode, symbolic_reduced_ode
from laplace_frobenius import (FrobeniusSolution, LaplaceODE, audit_laplace, build_laplace_ode,
                               frobenius_series, indicial_roots, residual_slope)
from rational_jump_laws import mean, parse_law, validate
from risk_process_sim import (GateReport, ModelParams, RuinEstimate, SimConfig,
                              check_theorem_preconditions, estimate_ruin, horizon_stability)
from utils import (ReductionError, TailFitError, UnsupportedCaseError,
                   ValidationError, config_hash, sanitize_name)

logger = logging.getLogger(__name__)

ESTIMATE_COLUMNS = ["u", "psi_hat", "stderr", "n_paths", "horizon", "fraction_censored", "fraction_overflow"]
MAX_PILOT_ROUNDS = 12


@dataclass(frozen=True)
class TailFit:
    beta_hat: float
    beta_stderr: float
    logC_hat: float
    r_squared: float
    u_used: Tuple[float, ...]
    beta_predicted: float

    def __post_init__(self):
        if not self.u_used:
            raise TailFitError("a tail fit needs at least one retained point")

    def to_row(self) -> Dict:
        return {"beta_hat": self.beta_hat, "beta_stderr": self.beta_stderr, "logC_hat": self.logC_hat,
                "r_squared": self.r_squared, "n_used": len(self.u_used),
                "u_min": min(self.u_used), "u_max": max(self.u_used),
                "beta_predicted": self.beta_predicted}


@dataclass
class ScenarioResult:
    name: str
    out_dir: str
    status: int = 0
    files: Dict[str, str] = field(default_factory=dict)
    estimates: List[RuinEstimate] = field(default_factory=list)
    fit: Optional[TailFit] = None
    gate: Optional[GateReport] = None
    notes: List[str] = field(default_factory=list)


def tail_fit(estimates: Sequence[RuinEstimate], beta_predicted: float,
             noise_floor: Optional[float] = None) -> TailFit:
    """Weighted least squares of log psi_hat on log u.

    The weights are psi_hat / stderr, the inverse delta-method standard error
    of log psi_hat; points below noise_floor * stderr are dropped.
    """
    noise_floor = CONFIG["noise_floor"] if noise_floor is None else noise_floor
    usable = [e for e in estimates if e.psi_hat > 0 and e.psi_hat >= noise_floor * e.stderr]
    if len(usable) < 3:
        raise TailFitError(f"only {len(usable)} estimates above the noise floor, need 3")

    u = np.array([e.u for e in usable])
    psi = np.array([e.psi_hat for e in usable])
    stderr = np.maximum(np.array([e.stderr for e in usable]), 1e-15 * psi)
    x, y, w = np.log(u), np.log(psi), psi / stderr

    coef, cov = np.polyfit(x, y, 1, w=w, cov='unscaled')
    slope, intercept = coef
    fitted = slope * x + intercept
    weights = w ** 2
    mean_y = np.sum(weights * y) / np.sum(weights)
    ss_res = float(np.sum(weights * (y - fitted) ** 2))
    ss_tot = float(np.sum(weights * (y - mean_y) ** 2))
    r_squared = 1.0 if ss_tot <= 1e-300 else min(1.0, max(0.0, 1.0 - ss_res / ss_tot))

    fit = TailFit(beta_hat=float(-slope) + 0.0, beta_stderr=float(math.sqrt(max(cov[0, 0], 0.0))),
                  logC_hat=float(intercept), r_squared=r_squared,
                  u_used=tuple(float(v) for v in u), beta_predicted=float(beta_predicted))
    logger.info(f"✅ Tail fit: beta_hat={fit.beta_hat:.4f} ± {fit.beta_stderr:.4f} "
                f"(predicted {fit.beta_predicted:.4f}), r^2={fit.r_squared:.4f}")
    return fit


def fit_disagreement(fit: TailFit, tolerance: float = 3.0) -> Optional[str]:
    """Note when beta_hat and the predicted exponent differ by more than tolerance standard errors"""
    gap = fit.beta_hat - fit.beta_predicted
    if not math.isfinite(gap) or abs(gap) <= tolerance * max(fit.beta_stderr, 1e-15):
        return None
    return (f"tail fit disagrees with the predicted exponent: beta_hat={fit.beta_hat:.4g} ± {fit.beta_stderr:.2g} "
            f"vs {fit.beta_predicted:.4g} on u in [{min(fit.u_used):g}, {max(fit.u_used):g}]; "
            f"the grid is pre-asymptotic or the horizon truncates the far points")


def pilot_u0(params: ModelParams, sim: SimConfig, target: Optional[Tuple[float, float]] = None,
             threads: int = 1) -> float:
    """Starting capital whose pilot ruin estimate lies inside the target band"""
    low, high = target or CONFIG["pilot_target"]
    pilot = replace(sim, n_paths=min(sim.n_paths, CONFIG["pilot_paths"]))
    u, too_small, too_large = 1.0, None, None
    for _ in range(MAX_PILOT_ROUNDS):
        psi = estimate_ruin(params, u, pilot, threads).psi_hat
        if low <= psi <= high:
            logger.info(f"✅ Pilot chose u0={u:.6g} (psi_hat={psi:.3f})")
            return u
        if psi > high:
            too_small = u
        else:
            too_large = u
        if too_small is not None and too_large is not None:
            u = math.sqrt(too_small * too_large)
        else:
            u = u * 4.0 if psi > high else u / 4.0
    logger.warning(f"⚠️ Pilot did not reach the target band; using u0={u:.6g}")
    return u


def build_u_grid(grid: Dict, params: ModelParams, sim: SimConfig, threads: int = 1) -> List[float]:
    """Explicit values, or u0 * ratio^k for k = 0..points-1 with u0 from the pilot"""
    if grid.get("values"):
        values = [float(v) for v in grid["values"]]
        if any(v <= 0 for v in values):
            raise ValidationError("u-grid values must be positive")
        return sorted(values)
    points = int(grid.get("points", CONFIG["u_grid_points"]))
    ratio = float(grid.get("ratio", CONFIG["u_grid_ratio"]))
    u0 = float(grid["u0"]) if grid.get("u0") else pilot_u0(params, sim, threads=threads)
    return [u0 * ratio ** k for k in range(points)]


def sim_config_from(scenario: Dict, params: ModelParams, seed: Optional[int] = None) -> SimConfig:
    sim = scenario.get("sim", {})
    return SimConfig.for_params(
        params, horizon=sim.get("horizon"), substep=sim.get("substep"), n_paths=sim.get("n_paths"),
        seed=seed if seed is not None else sim.get("seed"), ruin_floor=sim.get("ruin_floor"),
        bridge_correction=sim.get("bridge_correction"), scheme=sim.get("scheme"))


def estimate_grid(params: ModelParams, u_values: Sequence[float], sim: SimConfig,
                  threads: int = 1) -> List[RuinEstimate]:
    estimates = [estimate_ruin(params, u, sim, threads) for u in u_values]
    guard = CONFIG["censoring_guard"]
    flagged = [e.u for e in estimates if e.fraction_censored > guard]
    if flagged:
        # psi_hat estimates P(tau <= T), so survivors at T are expected
        logger.info(f"📊 {len(flagged)} of {len(estimates)} grid points have more than {guard:.0%} of paths "
                    f"alive at T={sim.horizon:g}; informational for finite-horizon estimates, "
                    f"run check.horizon_stability and raise T if it fails")
    return estimates


def frobenius_table(sol1: FrobeniusSolution, sol2: FrobeniusSolution) -> List[Dict]:
    return [{"m": m, "gamma_rho1": g1, "gamma_rho2": g2}
            for m, (g1, g2) in enumerate(zip(sol1.gamma_coeffs, sol2.gamma_coeffs))]


def write_bundle(out_dir: str, digest: str, red: Optional[ReducedODE] = None,
                 lode: Optional[LaplaceODE] = None,
                 solutions: Optional[Tuple[FrobeniusSolution, FrobeniusSolution]] = None,
                 estimates: Optional[Sequence[RuinEstimate]] = None, fit: Optional[TailFit] = None,
                 audit_text: str = "") -> Dict[str, str]:
    """Write whichever artifacts are available; returns name -> path"""
    FileManager.ensure_out_dir(out_dir)
    files = {}
    if red is not None:
        files["coefficients"] = FileManager.write_table(red.table(), os.path.join(out_dir, "coefficients.csv"), digest)
    if lode is not None:
        files["laplace"] = FileManager.write_table(lode.table(), os.path.join(out_dir, "laplace.csv"), digest)
    if solutions is not None:
        files["gamma"] = FileManager.write_table(frobenius_table(*solutions), os.path.join(out_dir, "gamma.csv"), digest)
    if estimates:
        files["estimates"] = FileManager.write_table([e.to_row() for e in estimates],
                                                     os.path.join(out_dir, "estimates.csv"), digest,
                                                     columns=ESTIMATE_COLUMNS)
    if fit is not None:
        files["tailfit"] = FileManager.write_table([fit.to_row()], os.path.join(out_dir, "tailfit.csv"), digest)
    if audit_text:
        files["audit"] = FileManager.write_report(f"# config_sha256={digest}\n{audit_text}",
                                                  os.path.join(out_dir, "audit.txt"))
    return files


def run_scenario(config_path: str, seed: Optional[int] = None, threads: Optional[int] = None,
                 out_dir: Optional[str] = None) -> ScenarioResult:
    """Full pipeline; parse and validation errors raise before anything is written"""
    scenario = FileManager.load(config_path)
    options = resolve_run_options(scenario, seed=seed, threads=threads, out_dir=out_dir)
    model = scenario["model"]
    laws = [parse_law(model["law1"]), parse_law(model["law2"])]
    reports = [validate(law) for law in laws]
    if not all(r.passed for r in reports):
        raise ValidationError("\n".join(r.summary() for r in reports if not r.passed))
    params = ModelParams.from_dict(model)
    sim = sim_config_from(scenario, params, options["seed"])

    name = sanitize_name(scenario["name"])
    result = ScenarioResult(name=name, out_dir=os.path.join(options["out_dir"], name))
    digest = config_hash({"scenario": scenario, "seed": options["seed"]})
    audit = ["validation:"] + [r.summary() for r in reports]
    claim_mean, premium_mean = mean(laws[0]), mean(laws[1])
    drift = params.c + params.lambda2 * premium_mean - params.lambda1 * claim_mean
    audit.append(f"mean claim size {claim_mean:.6g}, mean premium size {premium_mean:.6g}, "
                 f"net premium drift c + lambda2 E[eta] - lambda1 E[xi] = {drift:.6g}")

    result.gate = check_theorem_preconditions(params)
    audit.append(result.gate.summary())
    if not result.gate.passed:
        result.notes.append("theorem preconditions fail: simulation-only outputs")

    red = lode = solutions = None
    if params.sigma > 0:
        try:
            red = build_reduced_ode(params)
            reduction_audit = audit_reduction(params, red)
            audit.append(reduction_audit.summary())
            q0 = symbolic_reduced_ode(params.law1.order, params.law2.order)[0]
            audit.append(f"symbolic q_0 = {q0}")
        except ReductionError as e:
            logger.error(f"❌ Reduction failed: {e}")
            audit.append(f"reduction FAILED: {e}")
            result.status = 1

    if red is not None and result.gate.passed:
        convention = scenario["check"].get("convention", "printed")
        order = int(scenario["check"].get("frobenius_order", CONFIG["frobenius_order"]))
        try:
            lode = build_laplace_ode(red, convention)
            audit.append(audit_laplace(red).summary())
            rho1, rho2 = indicial_roots(lode)
            solutions = (frobenius_series(lode, rho1, order), frobenius_series(lode, rho2, order))
            slope = residual_slope(lode, rho2, order)
            audit.append(f"frobenius: N={order}, radius hint {solutions[0].radius_hint:.6g}, "
                         f"residual slope for rho2 {slope:.3f}")
        except UnsupportedCaseError as e:
            logger.warning(f"⚠️ Laplace analysis skipped: {e}")
            audit.append(f"laplace analysis skipped: {e}")
        except ReductionError as e:
            logger.error(f"❌ Laplace analysis failed: {e}")
            audit.append(f"laplace analysis FAILED: {e}")
            result.status = 1

    u_values = build_u_grid(scenario["u_grid"], params, sim, options["threads"])
    result.estimates = estimate_grid(params, u_values, sim, options["threads"])
    if scenario["check"].get("horizon_stability"):
        for e in result.estimates:
            check = horizon_stability(params, e.u, sim, options["threads"])
            audit.append(f"horizon stability at u={e.u:g}: |diff|={check.difference:.3g} "
                         f"{'ok' if check.passed else 'EXCEEDS 2 stderr'}")

    predicted = result.gate.beta
    try:
        result.fit = tail_fit(result.estimates, predicted)
        audit.append(f"tail fit: beta_hat={result.fit.beta_hat:.6g} ± {result.fit.beta_stderr:.3g}, "
                     f"predicted {predicted:.6g}")
        note = fit_disagreement(result.fit)
        if note:
            logger.warning(f"⚠️ {note}")
            result.notes.append(note)
    except TailFitError as e:
        logger.warning(f"⚠️ {e}")
        audit.append(f"tail fit skipped: {e}")

    audit.extend(f"note: {note}" for note in result.notes)
    result.files = write_bundle(result.out_dir, digest, red=red, lode=lode, solutions=solutions,
                                estimates=result.estimates, fit=result.fit, audit_text="\n".join(audit))
    logger.info(f"{'✅' if result.status == 0 else '❌'} Scenario '{name}' finished with status {result.status}")
    return result
