"""File formats and the synthetic dataset generator."""

from locvalid.io.annotations import load_annotations, save_annotations
from locvalid.io.dataset import read_case, read_dataset, read_labels, write_dataset
from locvalid.io.grid import load_grid, read_grid, save_grid, write_grid
from locvalid.io.synth import Lesion, SynthConfig, SyntheticCase, generate_synthetic

__all__ = [
    "Lesion",
    "SynthConfig",
    "SyntheticCase",
    "generate_synthetic",
    "load_annotations",
    "load_grid",
    "read_case",
    "read_dataset",
    "read_grid",
    "read_labels",
    "save_annotations",
    "save_grid",
    "write_dataset",
    "write_grid",
]
