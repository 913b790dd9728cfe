"""Command line entry point: gasreg <mode> --scenario ... --out ...."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import harness, sim
from .bnb import LpError
from .milp.model import ModelError
from .network import NetworkError
from .regulator import BandRegulatorError

log = logging.getLogger("gasreg")

_LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO,
               "debug": logging.DEBUG}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gasreg",
        description="Transient gas-network simulation and target-value "
                    "optimization",
    )
    parser.add_argument("mode", choices=sorted(harness.RUN_MODES))
    parser.add_argument("--scenario", required=True,
                        help="scenario JSON file")
    parser.add_argument("--config", help="run configuration JSON file")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--discretization",
                        choices=("leftright", "trapezoidal"))
    parser.add_argument("--alpha", type=float,
                        help="regulator adjustment rate (1/s)")
    parser.add_argument("--dt-sim", type=float, help="simulation step (s)")
    parser.add_argument("--dt-opt", type=float, help="optimization step (s)")
    parser.add_argument("--epsilon", type=float,
                        help="relative stable-band tolerance")
    parser.add_argument("--export-lp", action="store_true",
                        help="write LP/MPS exports of the optimization model")
    parser.add_argument("--ref", help="external reference trajectory CSV "
                                      "for compare mode")
    return parser


def _error_record(out_dir: Path, exc: Exception, code: int) -> None:
    record = {
        "error": type(exc).__name__,
        "message": str(exc),
        "exit_code": code,
    }
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "error.json", "w") as fh:
            json.dump(record, fh, indent=2)
            fh.write("\n")
    except OSError:
        pass
    print(f"gasreg: {type(exc).__name__}: {exc}", file=sys.stderr)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = os.environ.get("GASREG_LOG", "error").lower()
    logging.basicConfig(level=_LOG_LEVELS.get(level, logging.ERROR),
                        format="%(name)s %(levelname)s %(message)s")

    out_dir = Path(args.out)
    try:
        scenario = harness.parse_scenario(args.scenario)
        cfg = harness.load_run_config(
            scenario, args.config,
            discretization=args.discretization, alpha=args.alpha,
            dt_sim=args.dt_sim, dt_opt=args.dt_opt, epsilon=args.epsilon,
            export_lp=args.export_lp, ref_csv=args.ref,
        )
        out_dir.mkdir(parents=True, exist_ok=True)
        harness.RUN_MODES[args.mode](scenario, cfg, out_dir)
    except (harness.ScenarioError, BandRegulatorError, NetworkError,
            ModelError) as exc:
        _error_record(out_dir, exc, harness.EXIT_VALIDATION)
        return harness.EXIT_VALIDATION
    except (sim.NewtonError, sim.StepError, LpError, ZeroDivisionError,
            np.linalg.LinAlgError, ValueError) as exc:
        _error_record(out_dir, exc, harness.EXIT_NUMERICAL)
        return harness.EXIT_NUMERICAL
    except harness.SolverLimitError as exc:
        _error_record(out_dir, exc, harness.EXIT_LIMIT)
        return harness.EXIT_LIMIT
    log.info("%s finished, artifacts in %s", args.mode, out_dir)
    return harness.EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
