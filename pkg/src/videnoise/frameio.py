"""Frame containers and PNG directory I/O.

Sequences live on disk as directories of numbered 8-bit RGB PNG frames
(``00000.png``, ``00001.png``, ...). In memory a sequence is a float32
(N, H, W, 3) stack with samples nominally in [0, 1].
"""

import os
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .errors import DataError
from .validation import as_frames

FRAME_PATTERN = "%05d.png"


@dataclass
class FrameSequence:
    """Ordered stack of same-shape RGB frames."""

    frames: np.ndarray
    frame_rate: float | None = None

    def __post_init__(self):
        self.frames = as_frames(self.frames, name="FrameSequence.frames")

    def __len__(self):
        return self.frames.shape[0]

    def __getitem__(self, idx):
        return self.frames[idx]

    def __iter__(self):
        return iter(self.frames)

    @property
    def frame_shape(self):
        return self.frames.shape[1:]

    def truncated(self, max_frames):
        if max_frames is None or len(self) <= max_frames:
            return self
        return FrameSequence(self.frames[:max_frames], self.frame_rate)


def as_sequence(x):
    """Coerce a FrameSequence, 4-d array or list of frames to a FrameSequence."""
    if isinstance(x, FrameSequence):
        return x
    return FrameSequence(x)


def load_image(path):
    """Load one 8-bit image as a float32 HxWx3 frame in [0, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    return arr / 255.0


def save_image(frame, path):
    """Save a float frame as 8-bit RGB PNG (values clipped to [0, 1])."""
    arr = np.clip(np.asarray(frame, dtype=np.float32), 0.0, 1.0)
    data = (arr * 255.0).round().astype(np.uint8)
    Image.fromarray(data, mode="RGB").save(path)


def _sorted_pngs(directory):
    names = sorted(n for n in os.listdir(directory) if n.lower().endswith(".png"))
    if not names:
        raise DataError(f"no PNG frames found in {directory}")
    return [os.path.join(directory, n) for n in names]


def load_frame_dir(directory, max_frames=None):
    """Load a directory of numbered PNG frames as a FrameSequence."""
    paths = _sorted_pngs(directory)
    if max_frames is not None:
        paths = paths[:max_frames]
    frames = [load_image(p) for p in paths]
    shapes = {f.shape for f in frames}
    if len(shapes) > 1:
        raise DataError(f"frames in {directory} differ in shape: {sorted(shapes)}")
    return FrameSequence(np.stack(frames))


def save_frame_dir(sequence, directory, pattern=FRAME_PATTERN):
    """Write a sequence to a directory of numbered PNG frames."""
    sequence = as_sequence(sequence)
    os.makedirs(directory, exist_ok=True)
    paths = []
    for i, frame in enumerate(sequence):
        path = os.path.join(directory, pattern % i)
        save_image(frame, path)
        paths.append(path)
    return paths


def load_image_corpus(directory):
    """Load every PNG in a directory as a list of float frames (spatial corpus)."""
    return [load_image(p) for p in _sorted_pngs(directory)]


def load_sequence_corpus(directory):
    """Load a directory of frame directories (temporal corpus).

    Returns a list of (name, FrameSequence) sorted by name.
    """
    subdirs = sorted(
        d for d in os.listdir(directory)
        if os.path.isdir(os.path.join(directory, d))
    )
    if not subdirs:
        raise DataError(f"no sequence directories found in {directory}")
    return [(d, load_frame_dir(os.path.join(directory, d))) for d in subdirs]
