"""
Command-line entry point: run one experiment (exp1, exp2, exp3) or the verification
suite and write its CSV, JSON summary, table fragment and plot data.

Exit codes: 0 success, 1 invalid config, 2 verification failure, 3 numerical failure.
"""
import argparse
import os
import sys
import time
from typing import Callable, Dict, List, Optional

from pydantic import ValidationError

from boundary_engine.assembler.run_assembler import RunAssembler
from boundary_engine.errors import InvalidArgumentError, NumericalFailureError
from boundary_engine.experiments.exp1 import run_exp1
from boundary_engine.experiments.exp2 import run_exp2
from boundary_engine.experiments.exp3 import run_exp3
from boundary_engine.experiments.registry import build_config, get_all_experiments, load_config_file
from boundary_engine.experiments.verify import run_verify
from boundary_engine.runlog import configure_logging, timed_event
from boundary_engine.schemas.experiment import ExperimentConfig, ExperimentResult

EXIT_OK = 0
EXIT_INVALID_CONFIG = 1
EXIT_INVARIANT_FAILURE = 2
EXIT_NUMERICAL_FAILURE = 3

EXPERIMENT_RUNNERS: Dict[str, Callable[[ExperimentConfig], ExperimentResult]] = {
    "exp1": run_exp1,
    "exp2": run_exp2,
    "exp3": run_exp3,
    "verify": run_verify,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="Boundary-layer diagnostics for soft-to-hard mixture-of-experts routing",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    subparsers = parser.add_subparsers(dest="experiment", required=True)
    for name in get_all_experiments():
        sub = subparsers.add_parser(name, help=f"run {name}")
        sub.add_argument("--config", help="Path to a flat JSON config file")
        sub.add_argument("--out", help="Output directory (default: config output_dir, $BOUNDARY_OUTPUT_DIR, ./outputs)")
        sub.add_argument("--seed", type=int, help="Unsigned 64-bit seed")
        sub.add_argument("--samples", type=int, help="Monte Carlo sample count n")
    return parser


def load_run_config(args: argparse.Namespace) -> ExperimentConfig:
    file_values = load_config_file(args.config) if args.config else {}
    overrides = {"seed": args.seed, "samples": args.samples, "output_dir": args.out}
    return build_config(args.experiment, file_values, overrides)


def run_experiment(config: ExperimentConfig) -> int:
    output_dir = config.output_dir
    configure_logging(os.path.join(output_dir, "logs"))
    runner = EXPERIMENT_RUNNERS[config.experiment]

    print(f"[RUN] {config.experiment} (seed={config.seed}, n={config.samples})")
    start_time = time.time()
    try:
        with timed_event("experiment", experiment=config.experiment, seed=config.seed, n=config.samples):
            result = runner(config)
    except NumericalFailureError as e:
        print(f"[ERROR] Numerical failure in {config.experiment}: {e}")
        return EXIT_NUMERICAL_FAILURE
    except InvalidArgumentError as e:
        print(f"[ERROR] Invalid config for {config.experiment}: {e}")
        return EXIT_INVALID_CONFIG
    wall_time = time.time() - start_time

    assembler = RunAssembler(config)
    with timed_event("write", experiment=config.experiment, output_dir=output_dir):
        written = assembler.save(result, wall_time, output_dir)
    for path in written:
        print(f"[WRITE] {path}")

    if config.experiment == "verify":
        print(f"[CHECK] {result.metrics['num_checks']} invariant checks")
        for check in result.records:
            tag = "[PASS]" if check["passed"] else "[FAIL]"
            print(f"  {tag} {check['name']}")
        if not result.metrics["passed"]:
            print(f"[FAIL] {result.metrics['num_failed']} of {result.metrics['num_checks']} checks failed")
            return EXIT_INVARIANT_FAILURE

    print(f"\n[SUCCESS] {config.experiment} finished in {wall_time:.1f}s")
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    print(f"[LOAD] Building {args.experiment} config" + (f" from: {args.config}" if args.config else ""))
    try:
        config = load_run_config(args)
    except (ValidationError, InvalidArgumentError, ValueError, OSError) as e:
        print(f"[ERROR] Invalid config: {e}")
        return EXIT_INVALID_CONFIG
    return run_experiment(config)


if __name__ == "__main__":
    sys.exit(main())
