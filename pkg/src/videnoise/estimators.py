"""Scikit-learn style estimators wrapping the denoiser.

`fit` trains from clean data (images for the spatial stage, sequences for the
full pipeline); `transform` denoises at the configured noise level. Both
classes follow sklearn conventions (constructor args stored verbatim,
`get_params`/`set_params`, fitted attributes with trailing underscore) so they
compose with sklearn pipelines and model-selection utilities.
"""

import os

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .blocks import spatial_forward
from .checkpoint import load_checkpoint, resolve_block
from .datasets import (
    SpatialDataset,
    TemporalDataset,
    build_temporal_samples,
    extract_spatial_samples,
)
from .frameio import FrameSequence, as_sequence, load_image_corpus, load_sequence_corpus
from .noise import constant_noise_map, sigma_from_8bit
from .pipeline import PipelineConfig, denoise_sequence, pad_to_even
from .training import TrainConfig, train_spatial, train_temporal
from .validation import as_frame, as_frames


def _image_corpus(X):
    if isinstance(X, (str, os.PathLike)):
        return load_image_corpus(X)
    return [as_frame(img, name=f"X[{i}]") for i, img in enumerate(X)]


def _sequence_corpus(X):
    if isinstance(X, (str, os.PathLike)):
        return [seq for _, seq in load_sequence_corpus(X)]
    return [as_sequence(item) for item in X]


class SpatialDenoiser(BaseEstimator, TransformerMixin):
    """Frame-wise AWGN denoiser (the spatial stage as a standalone estimator).

    Parameters mirror the desk-scale training knobs; `sigma` (8-bit scale) is
    the noise level assumed at transform time. Passing `checkpoint` skips
    training entirely.
    """

    def __init__(self, sigma=25.0, sigma_range=(0.0, 55.0), samples=2000,
                 epochs=2, batch_size=32, patch_size=50,
                 orthogonalize_until_epoch=60, per_pixel_loss=False, seed=0,
                 checkpoint=None):
        self.sigma = sigma
        self.sigma_range = sigma_range
        self.samples = samples
        self.epochs = epochs
        self.batch_size = batch_size
        self.patch_size = patch_size
        self.orthogonalize_until_epoch = orthogonalize_until_epoch
        self.per_pixel_loss = per_pixel_loss
        self.seed = seed
        self.checkpoint = checkpoint

    def fit(self, X, y=None):
        """Train on clean images (list of HxWx3 arrays or a PNG directory)."""
        corpus = _image_corpus(X)
        dataset = SpatialDataset.from_samples(extract_spatial_samples(
            corpus, self.samples, sigma_range=self.sigma_range,
            seed=self.seed, patch_size=self.patch_size,
        ))
        config = TrainConfig(
            epochs=self.epochs, batch_size=self.batch_size,
            orthogonalize_until_epoch=self.orthogonalize_until_epoch,
            sigma_range=tuple(self.sigma_range), seed=self.seed,
            per_pixel_loss=self.per_pixel_loss,
        )
        self.block_ = train_spatial(dataset, config)
        return self

    def _resolved_block(self):
        if hasattr(self, "block_"):
            return self.block_
        if self.checkpoint is not None:
            self.block_ = resolve_block(self.checkpoint, kind="spatial")
            return self.block_
        raise NotFittedError(
            "SpatialDenoiser is not fitted; call fit() or pass checkpoint="
        )

    def transform(self, X):
        """Denoise one frame or a stack of frames at the configured sigma."""
        block = self._resolved_block()
        sigma = sigma_from_8bit(self.sigma)
        single = isinstance(X, np.ndarray) and X.ndim == 3
        frames = as_frames(X[None] if single else X)
        out = np.empty_like(frames)
        for i, frame in enumerate(frames):
            padded, hw = pad_to_even(frame)
            nmap = constant_noise_map(sigma, *padded.shape[:2])
            den = spatial_forward(padded, nmap, block)
            out[i] = np.clip(den[: hw[0], : hw[1]], 0.0, 1.0)
        return out[0] if single else out


class VideoDenoiser(BaseEstimator, TransformerMixin):
    """Two-stage sequence denoiser as a sklearn transformer.

    `fit(X)` takes clean sequences (stills for the spatial stage are drawn
    from their frames); `transform(X)` denoises a noisy sequence at the
    configured sigma (8-bit scale). Checkpoints can be supplied instead of
    fitting.
    """

    def __init__(self, sigma=25.0, temporal_radius=2, flow_backend="block",
                 workers=1, sigma_range=(0.0, 55.0), spatial_samples=2000,
                 temporal_samples=500, epochs=2, batch_size=32,
                 crops_per_window=8, orthogonalize_until_epoch=60,
                 per_pixel_loss=False, seed=0,
                 spatial_checkpoint=None, temporal_checkpoint=None):
        self.sigma = sigma
        self.temporal_radius = temporal_radius
        self.flow_backend = flow_backend
        self.workers = workers
        self.sigma_range = sigma_range
        self.spatial_samples = spatial_samples
        self.temporal_samples = temporal_samples
        self.epochs = epochs
        self.batch_size = batch_size
        self.crops_per_window = crops_per_window
        self.orthogonalize_until_epoch = orthogonalize_until_epoch
        self.per_pixel_loss = per_pixel_loss
        self.seed = seed
        self.spatial_checkpoint = spatial_checkpoint
        self.temporal_checkpoint = temporal_checkpoint

    def fit(self, X, y=None):
        """Train both stages on clean sequences (list or dir-of-dirs)."""
        sequences = _sequence_corpus(X)
        stills = [frame for seq in sequences for frame in seq]
        config = TrainConfig(
            epochs=self.epochs, batch_size=self.batch_size,
            orthogonalize_until_epoch=self.orthogonalize_until_epoch,
            sigma_range=tuple(self.sigma_range), seed=self.seed,
            per_pixel_loss=self.per_pixel_loss,
        )
        spatial_set = SpatialDataset.from_samples(extract_spatial_samples(
            stills, self.spatial_samples, sigma_range=self.sigma_range,
            seed=self.seed,
        ))
        self.spatial_block_ = train_spatial(spatial_set, config)
        temporal_set = TemporalDataset.from_samples(build_temporal_samples(
            sequences, self.temporal_samples, sigma_range=self.sigma_range,
            spatial_params=self.spatial_block_, backend=self.flow_backend,
            seed=self.seed, temporal_radius=self.temporal_radius,
            crops_per_window=self.crops_per_window,
        ))
        self.temporal_block_ = train_temporal(temporal_set, self.spatial_block_,
                                              config)
        return self

    def _pipeline_config(self):
        spatial = getattr(self, "spatial_block_", None)
        temporal = getattr(self, "temporal_block_", None)
        if spatial is None:
            if self.spatial_checkpoint is None:
                raise NotFittedError(
                    "VideoDenoiser is not fitted; call fit() or pass checkpoints"
                )
            spatial = load_checkpoint(self.spatial_checkpoint)
            self.spatial_block_ = spatial
        if temporal is None:
            if self.temporal_checkpoint is None:
                raise NotFittedError(
                    "VideoDenoiser is not fitted; call fit() or pass checkpoints"
                )
            temporal = load_checkpoint(self.temporal_checkpoint)
            self.temporal_block_ = temporal
        return PipelineConfig(
            sigma=sigma_from_8bit(self.sigma),
            spatial=spatial,
            temporal=temporal,
            temporal_radius=self.temporal_radius,
            flow_backend=self.flow_backend,
            workers=self.workers,
        )

    def transform(self, X):
        """Denoise a sequence.

        FrameSequence in, FrameSequence out; a single frame or an (N, H, W, 3)
        array (or list of frames) comes back as an ndarray.
        """
        config = self._pipeline_config()
        if isinstance(X, FrameSequence):
            return denoise_sequence(X, config)
        single = isinstance(X, np.ndarray) and X.ndim == 3
        frames = as_frames(X[None] if single else X)
        out = denoise_sequence(frames, config).frames
        return out[0] if single else out
