"""Reflection-invariant point-cloud segmentation with quadratic neurons."""
from importlib.metadata import PackageNotFoundError, version as _version

from .canonical import CanonicalCloud, canonical_agreement, canonicalize, sign_variants
from .cloud import PointCloud
from .errors import CloudRainError, InvalidInputError, NumericalError, TrainingError, UsageError
from .evaluation import InvarianceReport, invariance_report, macc, miou
from .gadgets import compile_approximator, quadratic_multiplier, relu_multiplier
from .linalg import EigenBasis, SymMatrix3, covariance, householder, jacobi_eigen
from .model import SegModel, TrainConfig, load_checkpoint, save_checkpoint, train
from .neurons import ConventionalLayer, QuadraticLayer, grad_check

try:
    __version__ = _version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"

__all__ = [
    "CanonicalCloud", "canonical_agreement", "canonicalize", "sign_variants", "PointCloud",
    "CloudRainError", "InvalidInputError", "NumericalError", "TrainingError", "UsageError",
    "InvarianceReport", "invariance_report", "macc", "miou", "compile_approximator",
    "quadratic_multiplier", "relu_multiplier", "EigenBasis", "SymMatrix3", "covariance",
    "householder", "jacobi_eigen", "SegModel", "TrainConfig", "load_checkpoint",
    "save_checkpoint", "train", "ConventionalLayer", "QuadraticLayer", "grad_check",
]
