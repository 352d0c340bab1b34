"""Feature-image ConvLSTM autoencoder for multivariate time-series anomaly detection.

The numeric core is a small reverse-mode autodiff engine (``autodiff``);
hot loops live in a compiled extension with a numpy fallback (``kernels``).
"""

from .autodiff import Tensor, no_grad
from .detection import detect, fit_thresholds, root_cause_ranking, score
from .feature_images import build_feature_image, build_feature_image_set
from .kernels import BACKEND
from .model import ConvLSTMAutoencoder, ModelSpec
from .pipeline import RunConfig, run_pipeline
from .preprocess import make_windows, minmax_normalize
from .synthetic import generate_synthetic
from .training import HyperparamConfig, random_search, train

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "ConvLSTMAutoencoder",
    "HyperparamConfig",
    "ModelSpec",
    "RunConfig",
    "Tensor",
    "build_feature_image",
    "build_feature_image_set",
    "detect",
    "fit_thresholds",
    "generate_synthetic",
    "make_windows",
    "minmax_normalize",
    "no_grad",
    "random_search",
    "root_cause_ranking",
    "run_pipeline",
    "score",
    "train",
]
