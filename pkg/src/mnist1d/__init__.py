"""MNIST-1D: a procedurally generated 1-D digit benchmark with a self-contained
training and experiment harness (minimal higher-order autodiff included)."""

__version__ = "0.1.0"

from .datagen import Dataset, GeneratorConfig, generate_dataset, make_templates
from .models import Model, ModelSpec, forward, init_model, param_count
from .serialize import export_csv, load_dataset, save_dataset
from .training import TrainConfig, TrainResult, evaluate, train

__all__ = [
    "Dataset",
    "GeneratorConfig",
    "Model",
    "ModelSpec",
    "TrainConfig",
    "TrainResult",
    "__version__",
    "evaluate",
    "export_csv",
    "forward",
    "generate_dataset",
    "init_model",
    "load_dataset",
    "make_templates",
    "param_count",
    "save_dataset",
    "train",
]
