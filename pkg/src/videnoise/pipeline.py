"""End-to-end sequence denoising.

Stage 1 denoises every frame once with the spatial block (cached and reused
by every window that contains the frame). Stage 2 motion-compensates the 2T
spatially denoised neighbors onto each denoised center frame and fuses the
aligned window with the temporal block. Output is clipped to [0, 1] at the
very end only.

The worker knob parallelizes motion compensation (pure numpy, bitwise
deterministic under threads). Network forwards run sequentially so the output
is identical for any worker count.
"""

import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .blocks import fold_batchnorm, spatial_forward, temporal_forward
from .checkpoint import resolve_block
from .errors import ConfigError, DomainError
from .flow import get_backend, warp
from .frameio import FrameSequence, as_sequence
from .noise import constant_noise_map
from .validation import check_sigma


def temporal_window_indices(t, radius, n):
    """Indices t-T ... t+T with reflection at sequence boundaries."""
    t, radius, n = int(t), int(radius), int(n)
    if n < 1:
        raise DomainError("sequence length must be >= 1")
    if not 0 <= t < n:
        raise DomainError(f"frame index {t} out of range for length {n}")
    if radius < 0:
        raise DomainError("temporal radius must be >= 0")

    def reflect(i):
        if n == 1:
            return 0
        period = 2 * n - 2
        i = abs(i) % period
        return period - i if i >= n else i

    return [reflect(t + d) for d in range(-radius, radius + 1)]


def _pad_axis_to_even(arr, axis):
    if arr.shape[axis] % 2 == 0:
        return arr
    pad = [(0, 0)] * arr.ndim
    pad[axis] = (0, 1)
    mode = "reflect" if arr.shape[axis] > 1 else "edge"
    return np.pad(arr, pad, mode=mode)


def pad_to_even(frame):
    """Reflect-pad right/bottom so both spatial dims are even.

    Returns (padded, original_hw); cropping back to original_hw restores the
    input exactly.
    """
    frame = np.asarray(frame, dtype=np.float32)
    h, w = frame.shape[:2]
    out = _pad_axis_to_even(frame, 0)
    out = _pad_axis_to_even(out, 1)
    if out is frame:
        out = frame.copy()
    return out, (h, w)


@dataclass
class PipelineConfig:
    """Configuration for :func:`denoise_sequence`.

    sigma is on the [0, 1] intensity scale (CLI converts from 8-bit);
    spatial/temporal accept DenoisingBlock instances or checkpoint paths.
    """

    sigma: float
    spatial: object
    temporal: object
    temporal_radius: int = 2
    flow_backend: object = "block"
    workers: int = 1


@dataclass
class PipelineStats:
    frames: int = 0
    spatial_seconds: float = 0.0
    flow_seconds: float = 0.0
    temporal_seconds: float = 0.0
    spatial_forward_count: int = 0

    @property
    def stage_seconds(self):
        return {
            "spatial": self.spatial_seconds,
            "flow": self.flow_seconds,
            "temporal": self.temporal_seconds,
        }

    @property
    def total_seconds(self):
        return self.spatial_seconds + self.flow_seconds + self.temporal_seconds


@dataclass
class PipelineResult:
    sequence: FrameSequence
    stats: PipelineStats = field(default_factory=PipelineStats)


def _progress(enabled, msg):
    if enabled:
        print(msg, file=sys.stderr, flush=True)


def run_pipeline(sequence, config, progress=False):
    """Denoise a sequence; returns PipelineResult with stage statistics."""
    sequence = as_sequence(sequence)
    sigma = check_sigma(config.sigma)
    spatial = resolve_block(config.spatial, kind="spatial")
    temporal = resolve_block(config.temporal, kind="temporal")
    if spatial.mode != "eval":
        spatial = fold_batchnorm(spatial)
    if temporal.mode != "eval":
        temporal = fold_batchnorm(temporal)
    radius = int(config.temporal_radius)
    if temporal.temporal_radius != radius:
        raise ConfigError(
            f"temporal checkpoint has radius {temporal.temporal_radius}, "
            f"config asks for {radius}"
        )
    backend = get_backend(config.flow_backend)
    workers = max(1, int(config.workers))

    n = len(sequence)
    padded0, orig_hw = pad_to_even(sequence[0])
    frames = np.empty((n,) + padded0.shape, dtype=np.float32)
    frames[0] = padded0
    for i in range(1, n):
        frames[i] = pad_to_even(sequence[i])[0]
    nmap = constant_noise_map(sigma, *frames.shape[1:3])
    stats = PipelineStats(frames=n)

    # stage 1: each frame spatially denoised exactly once
    t0 = time.perf_counter()
    denoised = np.empty_like(frames)
    for i in range(n):
        denoised[i] = spatial_forward(frames[i], nmap, spatial)
        stats.spatial_forward_count += 1
        _progress(progress, f"spatial {i + 1}/{n}")
    stats.spatial_seconds = time.perf_counter() - t0

    # stage 2a: motion-compensate unique (center, neighbor) pairs
    windows = {t: temporal_window_indices(t, radius, n) for t in range(n)}
    pairs = sorted({
        (t, idx) for t, idxs in windows.items() for idx in idxs if idx != t
    })

    def compensate_pair(pair):
        t, idx = pair
        flow = backend(denoised[t], denoised[idx])
        return pair, warp(denoised[idx], flow)

    t0 = time.perf_counter()
    aligned = {}
    if workers == 1:
        for pair in pairs:
            key, out = compensate_pair(pair)
            aligned[key] = out
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for key, out in pool.map(compensate_pair, pairs):
                aligned[key] = out
    stats.flow_seconds = time.perf_counter() - t0
    _progress(progress, f"compensated {len(pairs)} frame pairs")

    # stage 2b: temporal fusion, clip, crop
    t0 = time.perf_counter()
    out_frames = np.empty((n,) + sequence.frame_shape, dtype=np.float32)
    for t in range(n):
        window = np.stack([
            denoised[idx] if idx == t else aligned[(t, idx)]
            for idx in windows[t]
        ])
        fused = temporal_forward(window, nmap, temporal)
        fused = np.clip(fused, 0.0, 1.0)
        out_frames[t] = fused[: orig_hw[0], : orig_hw[1]]
        _progress(progress, f"temporal {t + 1}/{n}")
    stats.temporal_seconds = time.perf_counter() - t0

    return PipelineResult(FrameSequence(out_frames, sequence.frame_rate), stats)


def denoise_sequence(sequence, config, progress=False):
    """Two-stage denoising of a FrameSequence; returns the denoised sequence."""
    return run_pipeline(sequence, config, progress=progress).sequence
