"""
Command handlers for the ruin-toolkit command line
"""
import os
import logging
from typing import List, Optional

from cli_reporting import (build_u_grid, estimate_grid, frobenius_table, run_scenario,
                           sim_config_from, tail_fit)
from config import CONFIG, resolve_run_options
from file_manager import FileManager
from ide_reduction import (DEFAULT_U_POINTS, audit_reduction, build_reduced_ode, symbolic_reduced_ode,
                           verify_identity_on_testfn, verify_proposition)
from laplace_frobenius import (audit_laplace, build_laplace_ode, frobenius_series, indicial_roots,
                               residual_slope)
from rational_jump_laws import parse_law, validate
from risk_process_sim import ModelParams, RuinEstimate, check_theorem_preconditions
from utils import RuinToolkitError, config_hash, sanitize_name

logger = logging.getLogger(__name__)

IDENTITY_TOL = 1e-6
PROPOSITION_TOL = 1e-7


class CommandHandlers:
    """One method per subcommand; each returns the process exit status"""

    def __init__(self, args):
        self.args = args
        self.scenario = None
        self.options = {}

    # ------------------------------------------------------------------
    # shared plumbing
    # ------------------------------------------------------------------

    def _load(self):
        self.scenario = FileManager.load(self.args.config)
        self.options = resolve_run_options(self.scenario, seed=self.args.seed,
                                           threads=self.args.threads, out_dir=self.args.out)
        return self.scenario

    def _params(self) -> ModelParams:
        return ModelParams.from_dict(self.scenario["model"])

    def _out_dir(self) -> str:
        path = os.path.join(self.options["out_dir"], sanitize_name(self.scenario["name"]))
        return FileManager.ensure_out_dir(path)

    def _digest(self) -> str:
        return config_hash({"scenario": self.scenario, "seed": self.options["seed"]})

    def _emit(self, text: str, filename: str) -> None:
        print(text)
        FileManager.write_report(f"# config_sha256={self._digest()}\n{text}",
                                 os.path.join(self._out_dir(), filename))

    # ------------------------------------------------------------------
    # subcommands
    # ------------------------------------------------------------------

    def validate_density(self) -> int:
        """Invariant report for both jump laws"""
        self._load()
        reports = [validate(parse_law(self.scenario["model"][key])) for key in ("law1", "law2")]
        self._emit("\n".join(r.summary() for r in reports), "validation.txt")
        return 0 if all(r.passed for r in reports) else 1

    def reduce(self) -> int:
        """Coefficient table of the reduced ODE plus the printed-formula audit"""
        self._load()
        params = self._params()
        red = build_reduced_ode(params)
        FileManager.write_table(red.table(), os.path.join(self._out_dir(), "coefficients.csv"), self._digest())
        audit = audit_reduction(params, red)
        q0 = symbolic_reduced_ode(params.law1.order, params.law2.order)[0]
        self._emit(f"{audit.summary()}\nsymbolic q_0 = {q0}", "reduction_audit.txt")
        return 0

    def indicial(self) -> int:
        """p, l, r tables, indicial roots and the theorem gate"""
        self._load()
        params = self._params()
        convention = self.scenario["check"].get("convention", "printed")
        lode = build_laplace_ode(build_reduced_ode(params), convention)
        FileManager.write_table(lode.table(), os.path.join(self._out_dir(), "laplace.csv"), self._digest())
        lines = [f"{'i':>3} {'p_i':>22} {'l_i':>22} {'r_i':>22}"]
        lines += [f"{row['i']:>3} {row['p_i']:>22.15g} {row['l_i']:>22.15g} {row['r_i']:>22.15g}"
                  for row in lode.table()]
        lines.append(audit_laplace(lode.red).summary())
        gate = check_theorem_preconditions(params)
        lines.append(gate.summary())
        rho1, rho2 = indicial_roots(lode)
        lines.append(f"rho1 = {rho1:.15g}, rho2 = {rho2:.15g}")
        self._emit("\n".join(lines), "indicial.txt")
        return 0

    def frobenius(self) -> int:
        """Series coefficients for both indicial roots and the residual-slope diagnostic"""
        self._load()
        params = self._params()
        order = int(self.scenario["check"].get("frobenius_order", CONFIG["frobenius_order"]))
        lode = build_laplace_ode(build_reduced_ode(params), self.scenario["check"].get("convention", "printed"))
        rho1, rho2 = indicial_roots(lode)
        sol1, sol2 = frobenius_series(lode, rho1, order), frobenius_series(lode, rho2, order)
        FileManager.write_table(frobenius_table(sol1, sol2), os.path.join(self._out_dir(), "gamma.csv"),
                                self._digest())
        slope = residual_slope(lode, rho2, order)
        self._emit(f"N = {order}, radius hint = {sol1.radius_hint:.6g}\n"
                   f"residual slope (rho2 = {rho2:.6g}) = {slope:.3f}", "frobenius.txt")
        return 0

    def simulate(self) -> int:
        """Monte Carlo estimates over the scenario u-grid"""
        self._load()
        params = self._params()
        sim = sim_config_from(self.scenario, params, self.options["seed"])
        u_values = build_u_grid(self.scenario["u_grid"], params, sim, self.options["threads"])
        estimates = estimate_grid(params, u_values, sim, self.options["threads"])
        FileManager.write_table([e.to_row() for e in estimates], os.path.join(self._out_dir(), "estimates.csv"),
                                self._digest())
        for e in estimates:
            print(f"u={e.u:<12.6g} psi_hat={e.psi_hat:.6g} ± {e.stderr:.2g} censored={e.fraction_censored:.3%}")
        return 0

    def tailfit(self) -> int:
        """Fit the power law to a previously written estimates.csv"""
        self._load()
        path = self.args.estimates or os.path.join(self._out_dir(), "estimates.csv")
        frame = FileManager.read_table(path)
        estimates = [RuinEstimate(u=row.u, psi_hat=row.psi_hat, stderr=row.stderr, n_paths=int(row.n_paths),
                                  horizon=row.horizon, fraction_censored=row.fraction_censored)
                     for row in frame.itertuples()]
        gate = check_theorem_preconditions(self._params())
        fit = tail_fit(estimates, gate.beta)
        FileManager.write_table([fit.to_row()], os.path.join(self._out_dir(), "tailfit.csv"), self._digest())
        print(f"beta_hat = {fit.beta_hat:.6g} ± {fit.beta_stderr:.3g} (predicted {fit.beta_predicted:.6g}), "
              f"r^2 = {fit.r_squared:.4f}, {len(fit.u_used)} points")
        return 0

    def run(self) -> int:
        result = run_scenario(self.args.config, seed=self.args.seed, threads=self.args.threads,
                              out_dir=self.args.out)
        for note in result.notes:
            print(f"note: {note}")
        print(f"bundle written to {result.out_dir}")
        return result.status

    def check_identities(self) -> int:
        """Kernel identities for both laws and the reduced-ODE identity on a test function"""
        self._load()
        params = self._params()
        testfn = self.args.testfn
        points = self.args.points or list(DEFAULT_U_POINTS)
        reports = [verify_proposition(params.law1, "claims", testfn, points),
                   verify_proposition(params.law2, "premiums", testfn, points)]
        identity = verify_identity_on_testfn(params, testfn, points)
        self._emit("\n".join(r.summary() for r in reports + [identity]), "identities.txt")
        passed = (all(r.max_abs_residual <= PROPOSITION_TOL for r in reports)
                  and identity.max_residual <= IDENTITY_TOL)
        return 0 if passed else 1

    # ------------------------------------------------------------------

    def dispatch(self) -> int:
        try:
            return getattr(self, self.args.handler)()
        except RuinToolkitError as e:
            logger.error(f"❌ {type(e).__name__}: {e}")
            return 2

    @staticmethod
    def register_handlers(subparsers) -> None:
        """Register all subcommands with an argparse subparsers object"""
        commands = [
            ("validate-density", "validate_density", "check the invariants of both jump laws"),
            ("reduce", "reduce", "build the reduced ODE and audit its coefficients"),
            ("indicial", "indicial", "Laplace-domain ODE, indicial roots and theorem gate"),
            ("frobenius", "frobenius", "Frobenius series and residual-slope diagnostic"),
            ("simulate", "simulate", "Monte Carlo ruin estimates over the u-grid"),
            ("tailfit", "tailfit", "power-law fit to an estimates table"),
            ("run", "run", "full pipeline"),
            ("check-identities", "check_identities", "kernel and reduced-ODE identities on a test function"),
        ]
        for name, handler, help_text in commands:
            parser = subparsers.add_parser(name, help=help_text)
            parser.add_argument('--config', required=True, help='scenario JSON file or bundled scenario name')
            parser.add_argument('--seed', type=int, default=None, help='override the scenario seed')
            parser.add_argument('--out', default=None, help='output directory')
            parser.add_argument('--threads', type=int, default=None, help='worker threads for path blocks')
            if name == "tailfit":
                parser.add_argument('--estimates', default=None, help='estimates CSV (default: from --out)')
            if name == "check-identities":
                parser.add_argument('--testfn', default=None, help='test function of u (default exp(-u))')
                parser.add_argument('--points', type=float, nargs='+', default=None, help='u points')
            parser.set_defaults(handler=handler)


def build_handlers(args) -> Optional[CommandHandlers]:
    return CommandHandlers(args) if getattr(args, "handler", None) else None
