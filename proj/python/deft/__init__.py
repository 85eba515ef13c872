"""Disentanglement lab: procedural factor datasets, VAE objectives,
multi-stage training, and information-theoretic disentanglement metrics."""

from ._deft import (
    Dataset,
    annealing_test,
    detect_ifp,
    entropy,
    evaluate_representations,
    failure_rate,
    generate_grid,
    generate_triangle,
    load_dataset,
    mutual_information,
    render_shape,
    run_baseline,
    run_deft,
)

__all__ = [
    "Dataset",
    "annealing_test",
    "detect_ifp",
    "entropy",
    "evaluate_representations",
    "failure_rate",
    "generate_grid",
    "generate_triangle",
    "load_dataset",
    "mutual_information",
    "render_shape",
    "run_baseline",
    "run_deft",
]
