import hashlib
import json
import os
from datetime import datetime
from typing import Any, Dict, List

from boundary_engine import __version__
from boundary_engine.assembler.writers import write_atomic, write_csv, write_dat, write_json
from boundary_engine.experiments.registry import get_experiment_config
from boundary_engine.schemas.experiment import ExperimentConfig, ExperimentResult, ExperimentSummary


def config_hash(config: ExperimentConfig) -> str:
    """sha256 of the canonical config JSON (output_dir and workers excluded)."""
    data = config.model_dump(exclude={"output_dir", "workers"})
    return hashlib.sha256(json.dumps(data, sort_keys=True).encode()).hexdigest()


class RunAssembler:
    def __init__(self, config: ExperimentConfig):
        self.config = config
        self.experiment = config.experiment
        self.metadata = {
            "run_id": f"RUN-{config.experiment}-{int(datetime.now().timestamp())}",
            "generation_timestamp": datetime.now().isoformat(),
            "pipeline_version": f"v{__version__}",
            "config_hash": config_hash(config),
        }

    def summarize(self, result: ExperimentResult, wall_time_sec: float) -> ExperimentSummary:
        entry = get_experiment_config(self.experiment)
        return ExperimentSummary(
            experiment=self.experiment,
            version=entry["version"],
            seed=self.config.seed,
            n=self.config.samples,
            wall_time_sec=wall_time_sec,
            config_hash=self.metadata["config_hash"],
            metrics=result.metrics,
            assumptions=result.assumptions,
            limitations=result.limitations,
        )

    def save(self, result: ExperimentResult, wall_time_sec: float, output_dir: str) -> List[str]:
        """Write every artifact of the run; returns the written paths."""
        os.makedirs(output_dir, exist_ok=True)
        name = self.experiment
        summary = self.summarize(result, wall_time_sec)
        written = []

        if name == "verify":
            written.append(write_json(os.path.join(output_dir, "verify_report.json"), {
                **summary.model_dump(),
                "metadata": self.metadata,
                "checks": result.records,
            }))
            written.append(write_atomic(os.path.join(output_dir, "verify_report.txt"), render_checks(result.records)))
            return written

        rows = [[record[column] for column in result.columns] for record in result.records]
        written.append(write_csv(os.path.join(output_dir, f"{name}.csv"), result.columns, rows))
        written.append(write_json(os.path.join(output_dir, f"{name}_summary.json"), {
            **summary.model_dump(),
            "metadata": self.metadata,
            "records": result.records,
        }))
        written.append(write_atomic(os.path.join(output_dir, f"{name}_table.txt"), result.table))
        for trace_name, table in result.traces.items():
            written.append(write_csv(os.path.join(output_dir, f"{trace_name}.csv"), table.columns, table.rows))
        for plot_name, table in result.plots.items():
            written.append(write_dat(os.path.join(output_dir, f"{plot_name}.dat"), table.columns, table.rows))
        return written


def render_checks(checks: List[Dict[str, Any]]) -> str:
    lines = []
    for check in checks:
        status = "PASS" if check["passed"] else "FAIL"
        observed = "-" if check.get("observed") is None else f"{check['observed']:.6g}"
        tolerance = "-" if check.get("tolerance") is None else f"{check['tolerance']:.6g}"
        line = f"[{status}] {check['name']}  observed={observed}  tolerance={tolerance}"
        if check.get("detail"):
            line += f"  ({check['detail']})"
        lines.append(line)
    failed = sum(1 for check in checks if not check["passed"])
    lines.append(f"{len(checks) - failed}/{len(checks)} checks passed")
    return "\n".join(lines) + "\n"
