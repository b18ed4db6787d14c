"""AWGN synthesis and per-pixel noise maps.

Sigma is expressed on the [0, 1] intensity scale everywhere inside the
library; CLI and benchmark entry points quote it on the 8-bit scale and
convert with :func:`sigma_from_8bit`.
"""

import numpy as np

from .errors import DimensionError
from .validation import as_noise_map, check_sigma


def sigma_from_8bit(sigma8):
    """Convert an 8-bit-scale sigma (e.g. 25, 50) to the [0, 1] scale."""
    return check_sigma(sigma8, name="sigma (8-bit)") / 255.0


def add_awgn(clean, sigma, seed=None, rng=None):
    """Corrupt an array with i.i.d. zero-mean Gaussian noise of std `sigma`.

    Works on a single frame or a whole frame stack. The output is NOT clipped
    to [0, 1]; clipping happens only at pipeline output and inside PSNR
    scoring. Deterministic for a fixed seed and input shape.
    """
    sigma = check_sigma(sigma)
    clean = np.asarray(clean, dtype=np.float32)
    if sigma == 0.0:
        return clean.copy()
    if rng is None:
        rng = np.random.default_rng(seed)
    noise = rng.standard_normal(clean.shape, dtype=np.float32)
    return clean + sigma * noise


def constant_noise_map(sigma, height, width):
    """Noise map with every element equal to `sigma`."""
    sigma = check_sigma(sigma)
    return np.full((int(height), int(width)), sigma, dtype=np.float32)


def downsample_noise_map(noise_map):
    """Half-resolution noise map: top-left sample of each 2x2 block.

    Exact for constant maps, which is the only kind the AWGN model produces.
    """
    noise_map = as_noise_map(noise_map)
    h, w = noise_map.shape
    if h % 2 or w % 2:
        raise DimensionError(
            f"noise map dims must be even to downsample, got {h}x{w}"
        )
    return noise_map[::2, ::2].copy()
