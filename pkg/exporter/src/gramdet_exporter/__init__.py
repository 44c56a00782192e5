"""Bridge real models to the gramdet engine through GACT activation dumps."""

from .datasets import DatasetMissingError, available, load
from .export import export_activations
from .gact import GactFileWriter
from .models import ARCHS, MlpClassifier, build_model
from .training import TrainConfig, fit_model, evaluate_accuracy, train_mlp

__version__ = "0.1.0"
