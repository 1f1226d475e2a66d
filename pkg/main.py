import argparse
import logging
import sys
import time
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np

from analysis import (bowen_dimension, conditional_invariance_residual, decay_fit, escape_rate,
                      ly_constants, oracle_convergence, pressure_curve)
from cocycle import Orbit, derive_seed, sample_orbit
from conditions import condition_check
from errors import DepthError, EscapeLabError, InsufficientDataError
from oracle import box_count_dimension, survivor_rows, survivor_sequence
from quenched import (MeasureEstimate, MeasureEntry, conformality_residual, density_equivariance,
                      fiber_lambda, functional_lambda_many, invariant_density, invariant_measure_eval,
                      raccim_eval)
from reports import ReportEnvelope, ReportWriter, RunConfig, config_hash, load_config
from reports.config import (COMMANDS, DECAY_COLUMNS, DENSITY_COLUMNS, PRESSURE_COLUMNS, RATIO_COLUMNS,
                            SURVIVOR_COLUMNS)
from transfer import OperatorCocycle, build_grid, grid_function

from logging_config import setup_logging
logger = logging.getLogger("app")

ORACLE_POINTS = 50
ORACLE_TRANSFER_DEPTH = 4


class Colors:
    GREEN = '\033[92m'
    RED = '\033[91m'
    YELLOW = '\033[93m'
    RESET = '\033[0m'


class EscapeLabApp:
    """
    Runs one command of the lab against a validated run configuration and
    writes its reports to the configured output directory.
    """
    def __init__(self, config: RunConfig):
        self.config = config
        self.system = config.build_system()
        self.config_hash = config_hash(config)
        self.writer = ReportWriter(config.out)
        self._cocycle: Optional[OperatorCocycle] = None
        logger.info(f"EscapeLabApp initialized (config hash {self.config_hash[:12]}, seed {config.seed}).")

    # --- shared plumbing ---

    def _orbit(self, k: int = 0) -> Orbit:
        """Orbit k of the run, long enough forward for depth plus the bracket iterations."""
        n_back, n_fwd = self.config.window
        n_fwd = max(n_fwd, self.config.depth + self.config.n_max + 2)
        return sample_orbit(self.system.driving, derive_seed(self.config.seed, k), n_back, n_fwd)

    def _orbits(self) -> List[Orbit]:
        return [self._orbit(k) for k in range(self.config.orbits)]

    def _cocycle_for_run(self) -> OperatorCocycle:
        if self._cocycle is None:
            grid = build_grid(self.system, self.config.resolution)
            self._cocycle = OperatorCocycle(self.system, grid).build(self.config.threads)
        return self._cocycle

    def _battery(self) -> Dict[str, np.ndarray]:
        grid = self._cocycle_for_run().grid
        return {spec["name"]: grid_function(grid, spec).values for spec in self.config.battery}

    def _density_depth(self) -> int:
        n_back = self.config.window[0]
        if n_back < 1:
            raise InsufficientDataError("Density estimates need a backward window n_back >= 1")
        return n_back

    def _write_report(self, command: str, payload: Dict[str, Any], started: float) -> str:
        envelope = ReportEnvelope(command, self.config_hash, self.config.seed, payload,
                                  wall_time=time.perf_counter() - started)
        name = "conditions.json" if command == "check" else f"{command}.json"
        return self.writer.write_json(name, envelope)

    # --- commands ---

    def cmd_pressure(self) -> Dict[str, Any]:
        started = time.perf_counter()
        c = self.config
        curve = pressure_curve(self.system, c.t_grid, c.samples, c.depth, c.estimator, c.seed, c.resolution,
                               c.threads, c.n_max, c.tol_lambda)
        self.writer.write_csv("pressure.csv", curve.to_rows(), PRESSURE_COLUMNS)
        payload = curve.to_dict()
        self._write_report("pressure", payload, started)
        return payload

    def cmd_dimension(self) -> Dict[str, Any]:
        started = time.perf_counter()
        c = self.config
        report = bowen_dimension(self.system, c.tol_t, c.estimator, c.samples, c.depth, c.seed, c.resolution,
                                 c.threads, n_max=c.n_max, tol=c.tol_lambda)
        payload = report.to_dict()
        if c.box_count:
            detail = self._box_count(self._orbit(0))
            payload["box_count"] = detail["slope"]
            payload["box_count_detail"] = detail
        self._write_report("dimension", payload, started)
        return payload

    def _box_count(self, orbit: Orbit) -> Dict[str, Any]:
        lo, hi = self.config.oracle.get("depths", [4, 10])
        try:
            survivors = survivor_sequence(self.system, orbit, 0, list(range(lo, hi + 1)))
            estimate = box_count_dimension(survivors)
        except (DepthError, InsufficientDataError) as e:
            logger.warning(f"Box counting skipped: {e}")
            return {"slope": None, "skipped": str(e)}
        return {"slope": estimate.slope, "r_squared": estimate.r_squared, "empty": estimate.empty,
                "depths": [lo, hi], "counts": list(estimate.counts)}

    def cmd_escape(self) -> Dict[str, Any]:
        started = time.perf_counter()
        c = self.config
        report = escape_rate(self.system, self._orbits(), c.depth, 0, c.samples, c.seed, c.resolution,
                             c.threads, n_max=c.n_max, tol=c.tol_lambda)
        payload = report.to_dict()
        self._write_report("escape", payload, started)
        return payload

    def cmd_density(self) -> Dict[str, Any]:
        started = time.perf_counter()
        c = self.config
        cocycle = self._cocycle_for_run()
        grid = cocycle.grid
        fs = self._battery()
        names = list(fs)
        depth = self._density_depth()
        per_orbit, ratio_rows = [], []
        for k, orbit in enumerate(self._orbits()):
            density = invariant_density(cocycle, orbit, 0, depth, c.tol_lambda, c.n_max)
            lam = fiber_lambda(cocycle, orbit, 0, c.n_max, c.tol_lambda)
            nu = MeasureEstimate("nu_open")
            mu = MeasureEstimate("mu")
            conformality: Dict[str, Dict[str, float]] = {}
            for name, est in zip(names, functional_lambda_many(cocycle, orbit, 0, [fs[n] for n in names],
                                                                c.n_max, c.tol_lambda)):
                nu.add(MeasureEntry(name, est.value, est.error, "nu_open"))
                mu.add(invariant_measure_eval(cocycle, orbit, 0, fs[name], depth, density, c.n_max,
                                              c.tol_lambda, name))
                residual, bound = conformality_residual(cocycle, orbit, 0, fs[name], c.n_max, c.tol_lambda)
                conformality[name] = {"residual": residual, "bracket_error": bound}
                if k == 0 and est.sequence is not None:
                    ratio_rows.extend(est.sequence.to_rows(name))
            raccim = raccim_eval(cocycle, orbit, 0, fs, depth, c.n_max, c.tol_lambda)
            defect, declared = density_equivariance(cocycle, orbit, 0, depth, c.n_max, c.tol_lambda)
            sets = {spec["name"]: spec["interval"] for spec in c.battery if spec.get("kind") == "indicator"}
            conditional = conditional_invariance_residual(cocycle, orbit, 0, sets, c.depth, depth,
                                                          n_max=c.n_max, tol=c.tol_lambda) if sets else None
            if k == 0:
                rows = [{"cell": i, "left": float(grid.breakpoints[i]), "right": float(grid.breakpoints[i + 1]),
                         "q": float(v)} for i, v in enumerate(density.q.values)]
                self.writer.write_csv("density.csv", rows, DENSITY_COLUMNS)
            per_orbit.append({
                "orbit": k, "seed": orbit.seed,
                "lambda": {"value": lam.value, "error": lam.error, "iterations": lam.iterations},
                "density": {"residual": density.residual, "normalization_error": density.normalization_error,
                            "min_q": float(density.q.values.min()), "sup_q": density.q.sup_norm()},
                "nu_open": nu.to_dict(), "mu": mu.to_dict(),
                "eta": {"entries": {n: {"value": v, "error": e} for n, (v, e) in raccim.entries.items()},
                        "alpha": raccim.alpha, "alpha_error": raccim.alpha_error,
                        "residual": raccim.residual, "lambda_closed": raccim.lambda_closed},
                "equivariance": {"defect": defect, "declared": declared},
                "conformality": conformality,
                "conditional_invariance": conditional.to_dict() if conditional else None,
            })
        self.writer.write_csv("ratios.csv", ratio_rows, RATIO_COLUMNS)
        payload = {"N": grid.N, "depth": depth, "orbits": per_orbit}
        self._write_report("density", payload, started)
        return payload

    def cmd_decay(self) -> Dict[str, Any]:
        started = time.perf_counter()
        c = self.config
        cocycle = self._cocycle_for_run()
        fs = self._battery()
        report = decay_fit(cocycle, self._orbit(0), 0, fs, c.depth, self._density_depth(),
                           n_max=c.n_max, tol=c.tol_lambda)
        self.writer.write_csv("decay.csv", report.to_rows(), DECAY_COLUMNS)
        payload = report.to_dict()
        self._write_report("decay", payload, started)
        return payload

    def cmd_check(self) -> Dict[str, Any]:
        started = time.perf_counter()
        check = self.config.check
        report = condition_check(self.system, check["N1"], check["N2"], check["max_escalation"])
        payload = report.to_dict()
        n = report.n1
        word = self._orbit(0).word(0, n + 1)
        payload["ly_constants"] = {"word": list(word[:n]), **ly_constants(self.system, word, n).to_dict()}
        self._write_report("check", payload, started)
        return payload

    def cmd_oracle(self) -> Dict[str, Any]:
        started = time.perf_counter()
        c = self.config
        orbit = self._orbit(0)
        lo, hi = c.oracle.get("depths", [4, 10])
        depths = list(range(lo, hi + 1))
        survivors = survivor_sequence(self.system, orbit, 0, depths)
        self.writer.write_csv("survivors.csv", survivor_rows(survivors, depths), SURVIVOR_COLUMNS)

        n = int(c.oracle.get("transfer_depth", ORACLE_TRANSFER_DEPTH))
        points = np.random.default_rng(c.seed).random(int(c.oracle.get("points", ORACLE_POINTS)))
        cocycle = self._cocycle_for_run()
        fine = OperatorCocycle(self.system, build_grid(self.system, 2 * c.resolution)).build(c.threads)
        convergence = {spec["name"]: oracle_convergence(self.system, orbit, 0, n, spec, points, c.resolution,
                                                        c.threads, cocycle, fine)
                       for spec in c.battery}
        agreement = {name: result.to_dict() for name, result in convergence.items()}
        ratios = [r.ratio for r in convergence.values() if r.ratio is not None]
        payload = {"depths": [lo, hi],
                   "survivor_lengths": {str(d): s.total_length for d, s in zip(depths, survivors)},
                   "components": {str(d): len(s) for d, s in zip(depths, survivors)},
                   "box_count": self._box_count(orbit), "transfer_depth": n, "agreement": agreement,
                   "convergence_ratio": float(np.median(ratios)) if ratios else None}
        self._write_report("oracle", payload, started)
        return payload

    def run(self, command: str) -> Dict[str, Any]:
        handlers: Dict[str, Callable[[], Dict[str, Any]]] = {
            "pressure": self.cmd_pressure, "dimension": self.cmd_dimension, "escape": self.cmd_escape,
            "density": self.cmd_density, "decay": self.cmd_decay, "check": self.cmd_check,
            "oracle": self.cmd_oracle,
        }
        logger.info(f"Running command {command}")
        payload = handlers[command]()
        logger.info(f"Command {command} finished")
        return payload


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="escapelab",
                                     description="Quenched thermodynamic formalism for random open interval maps.")
    parser.add_argument("command", choices=COMMANDS, help="Report to produce")
    parser.add_argument("--config", required=True, help="Path to the JSON run configuration")
    parser.add_argument("--out", default=None, help="Output directory (overrides the config)")
    parser.add_argument("--seed", type=int, default=None, help="Unsigned 64-bit seed (overrides the config)")
    parser.add_argument("--threads", type=int, default=None, help="Worker threads for orbit samples")
    parser.add_argument("--estimator", choices=["sandwich", "lambda", "analytic"], default=None,
                        help="Pressure estimator")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging()
    try:
        config = load_config(args.config, seed=args.seed, threads=args.threads,
                             estimator=args.estimator, out=args.out)
        payload = EscapeLabApp(config).run(args.command)
    except EscapeLabError as e:
        logger.error(f"{type(e).__name__} in {args.command}: {e} {e.details}")
        print(f"{Colors.RED}Error: {e}{Colors.RESET}", file=sys.stderr)
        return e.exit_code
    except Exception as e:
        logger.exception(f"Unexpected error in {args.command}: {e}")
        print(f"{Colors.RED}Unexpected error: {e}{Colors.RESET}", file=sys.stderr)
        return 1
    print(f"{Colors.GREEN}{args.command} report written to {config.out}{Colors.RESET}")
    if args.command == "dimension":
        print(f"h = {payload['h']:.9f} (bracket {payload['bracket']})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
