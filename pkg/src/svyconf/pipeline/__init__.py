"""Data ingestion, experiment runners and the command-line interface."""

from .experiments import (
    ExperimentConfig,
    NhanesConfig,
    Standardizer,
    run_coverage,
    run_nhanes,
    run_simulation,
    select_architecture,
    split_dataset,
)
from .io import load_csv
from .nhanes import MODEL_SPECS, ModelSpec, ada_label, load_nhanes, model_spec

__all__ = [
    "ExperimentConfig", "NhanesConfig", "Standardizer", "run_coverage", "run_nhanes",
    "run_simulation", "select_architecture", "split_dataset", "load_csv", "MODEL_SPECS",
    "ModelSpec", "ada_label", "load_nhanes", "model_spec",
]
