import json
import os
from typing import Any, Dict, List, Optional

from boundary_engine.schemas.experiment import ExperimentConfig

OUTPUT_DIR_ENV = "BOUNDARY_OUTPUT_DIR"

# Per-experiment defaults; a config file and CLI flags override them
EXPERIMENT_REGISTRY = {
    "exp1": {
        "version": "v1",
        "description": "Boundary-layer scaling of the soft-hard gap in the two-expert Gaussian model",
        "defaults": {
            "samples": 1_000_000,
            "dim": 4,
            "tau_grid": [0.02, 0.05, 0.1, 0.2, 0.45, 0.6],
            "contrast_norm": 2.0,
        },
    },
    "exp2": {
        "version": "v1",
        "description": "Interface translation at fixed temperature: mass, gap and flip rate",
        "defaults": {
            "samples": 1_000_000,
            "dim": 4,
            "tau_grid": [0.1],
            "offset_grid": [0.0, 0.5, 1.0, 1.5, 2.0, 2.25],
            "contrast_norm": 2.0,
            "perturbation": 0.063,
        },
    },
    "exp3": {
        "version": "v1",
        "description": "Router-only gradient descent from a near-symmetric start",
        "defaults": {
            "samples": 100_000,
            "dim": 8,
            "tau_grid": [0.05, 0.1, 0.2, 0.4],
            "contrast_norm": 0.5,
            "student_contrast": 0.2,
            "eta": 0.05,
            "steps": 1000,
            "initial_alignment": 0.05,
        },
    },
    "verify": {
        "version": "v1",
        "description": "Invariant and property suite across all modules",
        "defaults": {
            "samples": 200_000,
            "dim": 3,
            "tau_grid": [0.02, 0.05, 0.1, 0.2],
            "epsilon": 0.25,
            "shape_samples": 4_000_000,
        },
    },
}


def get_experiment_config(name: str) -> Optional[Dict[str, Any]]:
    return EXPERIMENT_REGISTRY.get(name)


def get_all_experiments() -> List[str]:
    return list(EXPERIMENT_REGISTRY.keys())


def load_config_file(path: str) -> Dict[str, Any]:
    with open(path, "r", encoding="utf-8") as f:
        values = json.load(f)
    if not isinstance(values, dict):
        raise ValueError(f"config file {path} must hold a flat JSON object")
    return values


def build_config(
    name: str,
    file_values: Optional[Dict[str, Any]] = None,
    overrides: Optional[Dict[str, Any]] = None,
) -> ExperimentConfig:
    """Merge registry defaults < BOUNDARY_OUTPUT_DIR < config file < CLI flags."""
    entry = get_experiment_config(name)
    if entry is None:
        raise ValueError(f"unknown experiment '{name}'; choose from {get_all_experiments()}")

    values: Dict[str, Any] = dict(entry["defaults"])
    if os.getenv(OUTPUT_DIR_ENV):
        values["output_dir"] = os.getenv(OUTPUT_DIR_ENV)
    file_values = dict(file_values or {})
    if file_values.get("experiment", name) != name:
        raise ValueError(f"config file is for '{file_values['experiment']}', not '{name}'")
    values.update(file_values)
    values.update({key: value for key, value in (overrides or {}).items() if value is not None})
    values["experiment"] = name
    return ExperimentConfig(**values)
