"""Video exposure correction: Fourier multi-frame alignment, dual-stream Retinex
illumination, two-stage fusion, plus paired-clip alignment and quality metrics."""
from .core import ClipWindow, LossWeights, ModelConfig, TrainConfig, pad_clip_boundary
from .restoration import VECNet

__version__ = "0.1.0"

__all__ = ["ClipWindow", "LossWeights", "ModelConfig", "TrainConfig", "VECNet",
           "VECNetEnhancer", "pad_clip_boundary"]


def __getattr__(name):
    if name == "VECNetEnhancer":
        from .estimator import VECNetEnhancer
        return VECNetEnhancer
    raise AttributeError(name)
