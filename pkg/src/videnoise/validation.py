"""Input validation helpers.

All public entry points funnel array-likes through these so that shape and
range problems surface as package errors with a readable message instead of
downstream numpy/torch failures.
"""

import numpy as np

from .errors import ArityError, DimensionError, DomainError


def as_frame(x, name="frame"):
    """Coerce to a float32 HxWx3 frame."""
    arr = np.asarray(x, dtype=np.float32)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise DimensionError(
            f"{name} must have shape (H, W, 3), got {arr.shape}"
        )
    return arr


def as_frames(x, name="frames"):
    """Coerce to a float32 (N, H, W, 3) frame stack.

    Accepts a 4-d array or a sequence of HxWx3 frames of identical shape.
    """
    if isinstance(x, np.ndarray) and x.ndim == 4:
        arr = np.asarray(x, dtype=np.float32)
    else:
        frames = [as_frame(f, name=f"{name}[{i}]") for i, f in enumerate(x)]
        if not frames:
            raise DimensionError(f"{name} must contain at least one frame")
        shapes = {f.shape for f in frames}
        if len(shapes) > 1:
            raise DimensionError(f"{name} frames differ in shape: {sorted(shapes)}")
        arr = np.stack(frames)
    if arr.shape[-1] != 3:
        raise DimensionError(f"{name} must be RGB, got trailing dim {arr.shape[-1]}")
    return arr


def as_noise_map(x, like=None, name="noise_map"):
    """Coerce to a float32 HxW noise map, optionally checked against a frame."""
    arr = np.asarray(x, dtype=np.float32)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must have shape (H, W), got {arr.shape}")
    if np.any(arr < 0):
        raise DomainError(f"{name} must be non-negative")
    if like is not None and arr.shape != like.shape[:2]:
        raise DimensionError(
            f"{name} shape {arr.shape} does not match frame shape {like.shape[:2]}"
        )
    return arr


def check_same_shape(a, b, names=("first", "second")):
    if a.shape != b.shape:
        raise DimensionError(
            f"{names[0]} shape {a.shape} does not match {names[1]} shape {b.shape}"
        )


def check_even_dims(frame, name="frame"):
    h, w = frame.shape[:2]
    if h % 2 or w % 2:
        raise DimensionError(
            f"{name} spatial dims must be even for quarter-resolution processing, got {h}x{w}"
        )


def check_sigma(sigma, name="sigma"):
    """Noise standard deviation on the [0, 1] intensity scale."""
    sigma = float(sigma)
    if not np.isfinite(sigma) or sigma < 0:
        raise DomainError(f"{name} must be finite and >= 0, got {sigma}")
    return sigma


def check_window(window, length, name="window"):
    """Validate a temporal window: `length` same-shape frames."""
    frames = as_frames(window, name=name)
    if frames.shape[0] != length:
        raise ArityError(
            f"{name} must contain {length} frames, got {frames.shape[0]}"
        )
    return frames
