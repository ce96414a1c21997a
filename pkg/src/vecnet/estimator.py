"""scikit-learn style wrapper: clips in, enhanced clips out."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .checkpoint import load_checkpoint, save_checkpoint
from .core import LossWeights, ModelConfig, TrainConfig
from .io import ClipPair
from .metrics import psnr
from .training import build_model, enhance_clip, train_model
from .validation import check_clip


def _clips(X, name="X"):
    if isinstance(X, np.ndarray) and X.ndim == 4:
        raise ValueError(f"{name} must be a list of clips; wrap a single [T, H, W, 3] clip in a list")
    clips = [check_clip(c) for c in X]
    if not clips:
        raise ValueError(f"{name} is empty")
    return clips


class VECNetEnhancer(TransformerMixin, BaseEstimator):
    """Video exposure corrector.

    ``X`` is a list of clips, each a [T, H, W, 3] array (or frame list) in [0, 1];
    ``y`` the matching well-exposed clips.  ``transform`` returns one enhanced
    clip per input clip with the same frame count.
    """

    def __init__(self, n_radius=2, base_channels=32, unet_depth=2, rcab_count=4, offset_groups=1,
                 share_align=True, lr=1e-3, beta1=0.9, beta2=0.99, batch_size=8, iterations=1000,
                 patch=256, flips=True, lambda_pix=1.0, lambda_tv=0.01, lambda_amp=100.0, random_state=0):
        self.n_radius = n_radius
        self.base_channels = base_channels
        self.unet_depth = unet_depth
        self.rcab_count = rcab_count
        self.offset_groups = offset_groups
        self.share_align = share_align
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.batch_size = batch_size
        self.iterations = iterations
        self.patch = patch
        self.flips = flips
        self.lambda_pix = lambda_pix
        self.lambda_tv = lambda_tv
        self.lambda_amp = lambda_amp
        self.random_state = random_state

    def _configs(self):
        model = ModelConfig(self.n_radius, self.base_channels, self.unet_depth, self.rcab_count,
                            self.offset_groups, self.share_align, int(self.random_state))
        weights = LossWeights(self.lambda_pix, self.lambda_tv, self.lambda_amp)
        train = TrainConfig(lr=self.lr, beta1=self.beta1, beta2=self.beta2, batch_size=self.batch_size,
                            iterations=self.iterations, patch=self.patch, flips=self.flips, weights=weights,
                            eval_every=max(1, self.iterations), checkpoint_every=max(1, self.iterations))
        return model, train

    def fit(self, X, y):
        clips, targets = _clips(X), _clips(y, "y")
        if len(clips) != len(targets):
            raise ValueError(f"X has {len(clips)} clips but y has {len(targets)}")
        for i, (a, b) in enumerate(zip(clips, targets)):
            if a.shape != b.shape:
                raise ValueError(f"clip {i}: input {a.shape} vs target {b.shape}")
        model_config, train_config = self._configs()
        data = [ClipPair(f"{i:04d}", list(a), list(b)) for i, (a, b) in enumerate(zip(clips, targets))]
        self.model_ = build_model(model_config)
        self.history_ = train_model(self.model_, data, model_config, train_config)
        self.model_config_ = model_config
        self.train_config_ = train_config
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError(f"{type(self).__name__} is not fitted; call fit or from_checkpoint first")

    def transform(self, X):
        self._check_fitted()
        return [np.stack(enhance_clip(self.model_, list(c))) for c in _clips(X)]

    def predict(self, X):
        return self.transform(X)

    def score(self, X, y):
        """Mean per-frame PSNR (dB) of the enhanced clips against ``y``."""
        out = self.transform(X)
        targets = _clips(y, "y")
        if len(out) != len(targets):
            raise ValueError(f"X has {len(out)} clips but y has {len(targets)}")
        return float(np.mean([psnr(o, g) for oc, gc in zip(out, targets) for o, g in zip(oc, gc)]))

    def save(self, path):
        self._check_fitted()
        return save_checkpoint(path, self.model_, self.model_config_, self.train_config_)

    @classmethod
    def from_checkpoint(cls, path):
        model, model_config, train_config, _ = load_checkpoint(path)
        train_config = train_config or TrainConfig()
        w = train_config.weights
        est = cls(n_radius=model_config.n_radius, base_channels=model_config.base_channels,
                  unet_depth=model_config.unet_depth, rcab_count=model_config.rcab_count,
                  offset_groups=model_config.offset_groups, share_align=model_config.share_align,
                  lr=train_config.lr, beta1=train_config.beta1, beta2=train_config.beta2,
                  batch_size=train_config.batch_size, iterations=train_config.iterations,
                  patch=train_config.patch, flips=train_config.flips, lambda_pix=w.lambda_pix,
                  lambda_tv=w.lambda_tv, lambda_amp=w.lambda_amp, random_state=model_config.seed)
        est.model_ = model
        est.model_config_ = model_config
        est.train_config_ = train_config
        est.history_ = []
        return est
