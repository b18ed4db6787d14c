"""Training dataset construction.

Spatial samples are noisy/clean 50x50 patch pairs with a constant noise map;
temporal samples are windows of five 44x44 co-located patches whose neighbors
have been spatially denoised and motion-compensated at full-frame resolution
before cropping.

Reproducibility contract: sample ``i`` of a run is fully determined by
``(corpus, seed, i)`` — every random draw for it comes from its own
``numpy.random.default_rng([seed, <salt>, i])`` stream, so parallel producers
with disjoint index ranges generate identical samples to a serial run.
"""

import json
import math
import os
import warnings
from dataclasses import dataclass

import numpy as np
import torch

from .blocks import spatial_forward
from .errors import DataError, DataWarning, DomainError, StateError
from .flow import compensate, get_backend
from .frameio import FrameSequence, load_image_corpus, load_sequence_corpus
from .noise import constant_noise_map
from .pipeline import pad_to_even

SPATIAL_PATCH = 50
TEMPORAL_PATCH = 44
AUGMENT_SCALES = (1.0, 0.9, 0.8, 0.7, 0.6)

# full-scale protocol sizes (desk-scale runs use a few thousand)
FULL_SCALE_SPATIAL_PATCHES = 1_024_000
FULL_SCALE_TEMPORAL_SAMPLES = 450_000

_SPATIAL_SALT = 1
_GROUP_SALT = 7919
_CROP_SALT = 104729


@dataclass
class SpatialSample:
    noisy: np.ndarray       # (p, p, 3), unclipped
    noise_map: np.ndarray   # (p, p), constant
    clean: np.ndarray       # (p, p, 3)
    sigma: float            # [0, 1] scale, equals the map value


@dataclass
class TemporalSample:
    window: np.ndarray        # (2T+1, p, p, 3): denoised, neighbors compensated
    noise_map: np.ndarray     # (p, p), constant
    clean_center: np.ndarray  # (p, p, 3)
    sigma: float


def resize_bilinear(image, scale):
    """Bilinear resize by a scale factor (pixel-center sampling)."""
    image = np.asarray(image, dtype=np.float32)
    h, w = image.shape[:2]
    oh, ow = max(1, round(h * scale)), max(1, round(w * scale))
    if (oh, ow) == (h, w):
        return image.copy()
    ys = np.clip((np.arange(oh, dtype=np.float64) + 0.5) * (h / oh) - 0.5, 0, h - 1)
    xs = np.clip((np.arange(ow, dtype=np.float64) + 0.5) * (w / ow) - 0.5, 0, w - 1)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0).astype(np.float32)[:, None]
    wx = (xs - x0).astype(np.float32)[None, :]
    if image.ndim == 3:
        wy = wy[..., None]
        wx = wx[..., None]
    top = image[y0][:, x0] * (1 - wx) + image[y0][:, x1] * wx
    bot = image[y1][:, x0] * (1 - wx) + image[y1][:, x1] * wx
    return (top * (1 - wy) + bot * wy).astype(np.float32)


def rescale_for_mode(image, mode_index):
    """Source rescaling for an augmentation mode; mode 0 is the identity."""
    if mode_index not in range(len(AUGMENT_SCALES)):
        raise DomainError(f"augmentation mode must be 0..4, got {mode_index}")
    if mode_index == 0:
        return np.asarray(image, dtype=np.float32)
    return resize_bilinear(image, AUGMENT_SCALES[mode_index])


def _flip(arr, flip_h, flip_v):
    """Flip spatial axes; arrays are (..., H, W, C) or a 2-d (H, W) map."""
    if arr.ndim == 2:
        y_axis, x_axis = 0, 1
    else:
        y_axis, x_axis = -3, -2
    if flip_v:
        arr = np.flip(arr, axis=y_axis)
    if flip_h:
        arr = np.flip(arr, axis=x_axis)
    return np.ascontiguousarray(arr)


def augment(sample, mode_index, rng=None, flip_h=None, flip_v=None):
    """Apply an augmentation mode to a materialized sample.

    Mode 0 is the identity. Modes 1-4 rescale the *source* image before
    cropping (handled inside the extractors, see :func:`rescale_for_mode`);
    on an already-cropped sample they contribute their random horizontal /
    vertical flips, applied identically to every window patch and the target.
    """
    if mode_index not in range(len(AUGMENT_SCALES)):
        raise DomainError(f"augmentation mode must be 0..4, got {mode_index}")
    if mode_index == 0:
        return sample
    if flip_h is None or flip_v is None:
        if rng is None:
            rng = np.random.default_rng()
        flip_h = bool(rng.integers(2)) if flip_h is None else flip_h
        flip_v = bool(rng.integers(2)) if flip_v is None else flip_v
    if isinstance(sample, SpatialSample):
        return SpatialSample(
            noisy=_flip(sample.noisy, flip_h, flip_v),
            noise_map=_flip(sample.noise_map, flip_h, flip_v),
            clean=_flip(sample.clean, flip_h, flip_v),
            sigma=sample.sigma,
        )
    if isinstance(sample, TemporalSample):
        return TemporalSample(
            window=_flip(sample.window, flip_h, flip_v),
            noise_map=_flip(sample.noise_map, flip_h, flip_v),
            clean_center=_flip(sample.clean_center, flip_h, flip_v),
            sigma=sample.sigma,
        )
    raise DomainError(f"cannot augment object of type {type(sample).__name__}")


def _as_image_corpus(corpus, patch_size):
    if isinstance(corpus, (str, os.PathLike)):
        corpus = load_image_corpus(corpus)
    images = [np.asarray(img, dtype=np.float32) for img in corpus]
    if not images:
        raise DataError("corpus is empty")
    for i, img in enumerate(images):
        if img.ndim != 3 or img.shape[2] != 3:
            raise DataError(f"corpus image {i} is not HxWx3 (shape {img.shape})")
        if img.shape[0] < patch_size or img.shape[1] < patch_size:
            raise DataError(
                f"corpus image {i} ({img.shape[0]}x{img.shape[1]}) is smaller "
                f"than the {patch_size}x{patch_size} patch size"
            )
    return images


def _draw_sigma(rng, sigma_range):
    lo, hi = float(sigma_range[0]), float(sigma_range[1])
    if lo < 0 or hi < lo:
        raise DomainError(f"invalid sigma range {sigma_range}")
    return float(rng.uniform(lo, hi)) / 255.0


def extract_spatial_samples(corpus, count, sigma_range=(0.0, 55.0), seed=0,
                            patch_size=SPATIAL_PATCH, augment_modes=(0, 1, 2, 3, 4),
                            first_index=0):
    """Yield `count` spatial training samples.

    `corpus` is a directory of PNG images or a list of float HxWx3 images;
    sigma_range is on the 8-bit scale. Crops are uniform over valid positions,
    sigma uniform over the range, noise i.i.d. Gaussian via the sample's own
    RNG stream. Augmentation modes that leave the rescaled source smaller
    than the patch are skipped with a warning (the identity mode is used).

    Sample `i` depends only on (corpus, seed, i), so parallel producers can
    split the index space with `first_index` and reproduce the serial stream.
    """
    if count < 0:
        raise DomainError("count must be >= 0")
    if first_index < 0:
        raise DomainError("first_index must be >= 0")
    images = _as_image_corpus(corpus, patch_size)
    warned = False
    for i in range(int(first_index), int(first_index) + int(count)):
        rng = np.random.default_rng([seed, _SPATIAL_SALT, i])
        image = images[int(rng.integers(len(images)))]
        mode = int(augment_modes[int(rng.integers(len(augment_modes)))])
        source = rescale_for_mode(image, mode)
        if source.shape[0] < patch_size or source.shape[1] < patch_size:
            if not warned:
                warnings.warn(
                    f"augmentation mode {mode} rescales below the patch size; "
                    "falling back to the identity mode for such draws",
                    DataWarning,
                )
                warned = True
            mode = 0
            source = image
        top = int(rng.integers(source.shape[0] - patch_size + 1))
        left = int(rng.integers(source.shape[1] - patch_size + 1))
        clean = source[top:top + patch_size, left:left + patch_size].copy()
        if mode != 0:
            clean = _flip(clean, bool(rng.integers(2)), bool(rng.integers(2)))
        sigma = _draw_sigma(rng, sigma_range)
        noise = rng.standard_normal(clean.shape, dtype=np.float32) * sigma
        yield SpatialSample(
            noisy=clean + noise,
            noise_map=constant_noise_map(sigma, patch_size, patch_size),
            clean=clean,
            sigma=sigma,
        )


def _as_sequence_corpus(sequences, window, patch_size):
    if isinstance(sequences, (str, os.PathLike)):
        sequences = [seq for _, seq in load_sequence_corpus(sequences)]
    arrays = []
    for i, seq in enumerate(sequences):
        frames = seq.frames if isinstance(seq, FrameSequence) else np.asarray(seq, dtype=np.float32)
        if frames.ndim != 4 or frames.shape[-1] != 3:
            raise DataError(f"sequence {i} is not (N, H, W, 3) (shape {frames.shape})")
        if frames.shape[0] < window:
            raise DataError(
                f"sequence {i} has {frames.shape[0]} frames; needs >= {window}"
            )
        if frames.shape[1] < patch_size or frames.shape[2] < patch_size:
            raise DataError(
                f"sequence {i} frames are smaller than the patch size {patch_size}"
            )
        arrays.append(np.asarray(frames, dtype=np.float32))
    if not arrays:
        raise DataError("sequence corpus is empty")
    return arrays


def _denoise_full_frame(frame, sigma, spatial_params):
    padded, orig = pad_to_even(frame)
    nmap = constant_noise_map(sigma, *padded.shape[:2])
    out = spatial_forward(padded, nmap, spatial_params)
    return out[: orig[0], : orig[1]]


def build_temporal_samples(sequences, count, sigma_range=(0.0, 55.0),
                           spatial_params=None, backend="block", seed=0,
                           patch_size=TEMPORAL_PATCH, temporal_radius=2,
                           crops_per_window=1, augment_modes=(0, 1, 2, 3, 4),
                           first_index=0):
    """Yield `count` temporal training samples.

    For each prepared window: pick a sequence and an interior center frame,
    corrupt the 2T+1 clean frames with one sigma, spatially denoise each at
    full resolution, motion-compensate the neighbors onto the denoised
    center, then cut `crops_per_window` co-located patch windows out of the
    result (the target is the clean center patch). `spatial_params` must be
    an eval-mode (folded) spatial block.

    Sample `i` depends only on (corpus, seed, i); parallel producers can split
    the index space with `first_index` (a multiple of `crops_per_window`, so
    index ranges align with prepared windows).
    """
    if count < 0:
        raise DomainError("count must be >= 0")
    if spatial_params is None:
        raise StateError("build_temporal_samples requires trained spatial params")
    if spatial_params.mode != "eval":
        raise StateError("spatial params must be in eval mode (fold first)")
    window = 2 * int(temporal_radius) + 1
    arrays = _as_sequence_corpus(sequences, window, patch_size)
    backend = get_backend(backend)
    center = int(temporal_radius)
    crops_per_window = max(1, int(crops_per_window))
    if first_index % crops_per_window:
        raise DomainError(
            "first_index must be a multiple of crops_per_window so index "
            "ranges align with prepared windows")
    end = int(first_index) + int(count)
    warned = False
    for g in range(first_index // crops_per_window,
                   math.ceil(end / crops_per_window) if count else 0):
        rng = np.random.default_rng([seed, _GROUP_SALT, g])
        frames = arrays[int(rng.integers(len(arrays)))]
        n = frames.shape[0]
        t = int(rng.integers(center, n - center))
        mode = int(augment_modes[int(rng.integers(len(augment_modes)))])
        clean_window = frames[t - center: t + center + 1]
        if mode != 0:
            rescaled = [rescale_for_mode(f, mode) for f in clean_window]
            if rescaled[0].shape[0] < patch_size or rescaled[0].shape[1] < patch_size:
                if not warned:
                    warnings.warn(
                        f"augmentation mode {mode} rescales below the patch size; "
                        "falling back to the identity mode for such draws",
                        DataWarning,
                    )
                    warned = True
                mode = 0
            else:
                clean_window = np.stack(rescaled)
        sigma = _draw_sigma(rng, sigma_range)
        noise = rng.standard_normal(clean_window.shape, dtype=np.float32) * sigma
        noisy = clean_window + noise
        denoised = np.stack([
            _denoise_full_frame(noisy[k], sigma, spatial_params)
            for k in range(window)
        ])
        aligned = np.stack([
            denoised[k] if k == center
            else compensate(denoised[k], denoised[center], backend=backend)
            for k in range(window)
        ])
        h, w = aligned.shape[1:3]
        for j in range(crops_per_window):
            i = g * crops_per_window + j
            if i < first_index:
                continue
            if i >= end:
                return
            crop_rng = np.random.default_rng([seed, _CROP_SALT, i])
            top = int(crop_rng.integers(h - patch_size + 1))
            left = int(crop_rng.integers(w - patch_size + 1))
            win = aligned[:, top:top + patch_size, left:left + patch_size].copy()
            target = clean_window[center, top:top + patch_size,
                                  left:left + patch_size].copy()
            if mode != 0:
                fh, fv = bool(crop_rng.integers(2)), bool(crop_rng.integers(2))
                win = _flip(win, fh, fv)
                target = _flip(target, fh, fv)
            yield TemporalSample(
                window=win,
                noise_map=constant_noise_map(sigma, patch_size, patch_size),
                clean_center=target,
                sigma=sigma,
            )


class SpatialDataset:
    """Compact array-backed spatial dataset (constant maps stored as sigmas)."""

    def __init__(self, noisy, clean, sigmas):
        self.noisy = np.asarray(noisy, dtype=np.float32)
        self.clean = np.asarray(clean, dtype=np.float32)
        self.sigmas = np.asarray(sigmas, dtype=np.float32)
        if not (len(self.noisy) == len(self.clean) == len(self.sigmas)):
            raise DataError("dataset arrays disagree in length")

    @classmethod
    def from_samples(cls, samples):
        samples = list(samples)
        if not samples:
            return cls(np.zeros((0, SPATIAL_PATCH, SPATIAL_PATCH, 3)),
                       np.zeros((0, SPATIAL_PATCH, SPATIAL_PATCH, 3)),
                       np.zeros((0,)))
        return cls(
            np.stack([s.noisy for s in samples]),
            np.stack([s.clean for s in samples]),
            np.array([s.sigma for s in samples]),
        )

    def __len__(self):
        return len(self.noisy)

    def sample(self, i):
        p = self.noisy.shape[1]
        return SpatialSample(
            noisy=self.noisy[i].copy(),
            noise_map=constant_noise_map(self.sigmas[i], p, self.noisy.shape[2]),
            clean=self.clean[i].copy(),
            sigma=float(self.sigmas[i]),
        )

    def batch(self, indices):
        """Torch tensors (noisy NCHW, maps N1HW, clean NCHW) for `indices`."""
        noisy = torch.from_numpy(self.noisy[indices]).permute(0, 3, 1, 2).contiguous()
        clean = torch.from_numpy(self.clean[indices]).permute(0, 3, 1, 2).contiguous()
        sig = torch.from_numpy(self.sigmas[indices]).view(-1, 1, 1, 1)
        maps = sig.expand(-1, 1, *noisy.shape[-2:]).contiguous()
        return noisy, maps, clean


class TemporalDataset:
    """Compact array-backed temporal dataset."""

    def __init__(self, windows, clean, sigmas):
        self.windows = np.asarray(windows, dtype=np.float32)
        self.clean = np.asarray(clean, dtype=np.float32)
        self.sigmas = np.asarray(sigmas, dtype=np.float32)
        if not (len(self.windows) == len(self.clean) == len(self.sigmas)):
            raise DataError("dataset arrays disagree in length")

    @classmethod
    def from_samples(cls, samples):
        samples = list(samples)
        if not samples:
            return cls(np.zeros((0, 5, TEMPORAL_PATCH, TEMPORAL_PATCH, 3)),
                       np.zeros((0, TEMPORAL_PATCH, TEMPORAL_PATCH, 3)),
                       np.zeros((0,)))
        return cls(
            np.stack([s.window for s in samples]),
            np.stack([s.clean_center for s in samples]),
            np.array([s.sigma for s in samples]),
        )

    def __len__(self):
        return len(self.windows)

    @property
    def window(self):
        return self.windows.shape[1]

    def sample(self, i):
        p = self.windows.shape[2]
        return TemporalSample(
            window=self.windows[i].copy(),
            noise_map=constant_noise_map(self.sigmas[i], p, self.windows.shape[3]),
            clean_center=self.clean[i].copy(),
            sigma=float(self.sigmas[i]),
        )

    def batch(self, indices):
        """Torch tensors (windows NWCHW, maps N1HW, clean NCHW) for `indices`."""
        win = torch.from_numpy(self.windows[indices]).permute(0, 1, 4, 2, 3).contiguous()
        clean = torch.from_numpy(self.clean[indices]).permute(0, 3, 1, 2).contiguous()
        sig = torch.from_numpy(self.sigmas[indices]).view(-1, 1, 1, 1)
        maps = sig.expand(-1, 1, *win.shape[-2:]).contiguous()
        return win, maps, clean


MANIFEST_KEYS = {"kind", "corpus", "count", "sigma_range", "seed"}


def save_manifest(manifest, path):
    missing = MANIFEST_KEYS - set(manifest)
    if missing:
        raise DataError(f"manifest is missing keys: {sorted(missing)}")
    with open(path, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def load_manifest(path):
    with open(path) as f:
        manifest = json.load(f)
    missing = MANIFEST_KEYS - set(manifest)
    if missing:
        raise DataError(f"manifest {path} is missing keys: {sorted(missing)}")
    if manifest["kind"] not in ("spatial", "temporal"):
        raise DataError(f"manifest kind must be spatial|temporal, got {manifest['kind']!r}")
    return manifest


def dataset_from_manifest(manifest, spatial_params=None, base_dir=None):
    """Materialize the dataset a manifest describes."""
    if isinstance(manifest, (str, os.PathLike)):
        base_dir = base_dir or os.path.dirname(os.path.abspath(manifest))
        manifest = load_manifest(manifest)
    corpus = manifest["corpus"]
    if base_dir and not os.path.isabs(corpus):
        corpus = os.path.join(base_dir, corpus)
    common = dict(
        count=int(manifest["count"]),
        sigma_range=tuple(manifest["sigma_range"]),
        seed=int(manifest["seed"]),
        augment_modes=tuple(manifest.get("augment_modes", (0, 1, 2, 3, 4))),
    )
    if manifest["kind"] == "spatial":
        samples = extract_spatial_samples(
            corpus, patch_size=int(manifest.get("patch_size", SPATIAL_PATCH)), **common
        )
        return SpatialDataset.from_samples(samples)
    if spatial_params is None:
        ckpt = manifest.get("spatial_checkpoint")
        if ckpt is None:
            raise StateError("temporal manifest needs spatial_params or spatial_checkpoint")
        from .checkpoint import load_checkpoint
        if base_dir and not os.path.isabs(ckpt):
            ckpt = os.path.join(base_dir, ckpt)
        spatial_params = load_checkpoint(ckpt)
    samples = build_temporal_samples(
        corpus,
        spatial_params=spatial_params,
        backend=manifest.get("flow_backend", "block"),
        patch_size=int(manifest.get("patch_size", TEMPORAL_PATCH)),
        temporal_radius=int(manifest.get("temporal_radius", 2)),
        crops_per_window=int(manifest.get("crops_per_window", 1)),
        **common,
    )
    return TemporalDataset.from_samples(samples)
