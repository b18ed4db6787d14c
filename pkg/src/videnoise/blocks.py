"""Spatial and temporal denoising blocks.

Both blocks are plain feed-forward conv stacks that run at quarter resolution:
the input frame(s) are rearranged so every 2x2 pixel block becomes 4 channels,
the stack predicts the noise at that resolution, and the prediction is
rearranged back and subtracted from the residual source (the noisy frame for
the spatial block, the central window frame for the temporal block).

Channel-order convention ("c4k-raster-v1", recorded in checkpoints):
  * sub-image channels are grouped per source channel in raster order
    (top-left, top-right, bottom-left, bottom-right),
  * a temporal window contributes its frames in time order (t-T ... t+T),
  * the half-resolution noise map is appended as the last input channel.
"""

import copy

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, DimensionError, StateError
from .validation import (
    as_frame,
    as_noise_map,
    check_even_dims,
    check_window,
)

SPATIAL_DEPTH = 12
TEMPORAL_DEPTH = 6
FEATURE_WIDTH = 96
DEFAULT_TEMPORAL_RADIUS = 2
CHANNEL_ORDER = "c4k-raster-v1"

_DEGENERATE_SEED = 0x6F727468  # base seed for random replacement of zero kernels


def space_to_depth(frame):
    """Rearrange an HxWxC image into an (H/2)x(W/2)x4C tensor.

    Each 2x2 spatial block becomes 4 channels in raster order (TL, TR, BL, BR),
    grouped per source channel. Lossless; inverse of :func:`depth_to_space`.
    """
    frame = np.asarray(frame)
    if frame.ndim != 3:
        raise DimensionError(f"expected an (H, W, C) array, got shape {frame.shape}")
    h, w, c = frame.shape
    if h % 2 or w % 2:
        raise DimensionError(f"spatial dims must be even, got {h}x{w}")
    x = frame.reshape(h // 2, 2, w // 2, 2, c)
    x = x.transpose(0, 2, 4, 1, 3)  # (h/2, w/2, c, dy, dx)
    return np.ascontiguousarray(x.reshape(h // 2, w // 2, 4 * c))


def depth_to_space(tensor):
    """Exact inverse of :func:`space_to_depth`."""
    tensor = np.asarray(tensor)
    if tensor.ndim != 3:
        raise DimensionError(f"expected an (H, W, C) array, got shape {tensor.shape}")
    h, w, c4 = tensor.shape
    if c4 % 4:
        raise DimensionError(f"channel count must be divisible by 4, got {c4}")
    c = c4 // 4
    x = tensor.reshape(h, w, c, 2, 2)
    x = x.transpose(0, 3, 1, 4, 2)  # (h, dy, w, dx, c)
    return np.ascontiguousarray(x.reshape(2 * h, 2 * w, c))


class ChannelAffine(nn.Module):
    """Per-channel affine y = x * scale + shift; the eval-time stand-in for BN."""

    def __init__(self, scale, shift):
        super().__init__()
        self.register_buffer("scale", scale.detach().clone())
        self.register_buffer("shift", shift.detach().clone())

    def forward(self, x):
        return x * self.scale[:, None, None] + self.shift[:, None, None]


class DenoisingBlock(nn.Module):
    """Residual quarter-resolution conv stack (spatial or temporal kind).

    Layout: layer 1 = conv+ReLU, layers 2..D-1 = conv+BN+ReLU, layer D = bare
    conv. 3x3 kernels, stride 1, zero padding 1 so spatial shape is preserved.
    ``depth`` and ``width`` default to the production configurations (12/96 for
    the spatial block, 6/96 for the temporal one) and are parameters only so
    tiny test instances can be built.
    """

    def __init__(self, kind, depth=None, width=FEATURE_WIDTH,
                 temporal_radius=DEFAULT_TEMPORAL_RADIUS, frame_channels=3,
                 seed=0, orthogonal_init=True):
        super().__init__()
        if kind not in ("spatial", "temporal"):
            raise ConfigError(f"unknown block kind {kind!r}")
        if kind == "spatial":
            depth = SPATIAL_DEPTH if depth is None else int(depth)
            window = 1
        else:
            depth = TEMPORAL_DEPTH if depth is None else int(depth)
            if temporal_radius < 0:
                raise ConfigError("temporal_radius must be >= 0")
            window = 2 * int(temporal_radius) + 1
        if depth < 2:
            raise ConfigError("block depth must be at least 2")

        self.kind = kind
        self.depth = depth
        self.width = int(width)
        self.frame_channels = int(frame_channels)
        self.temporal_radius = int(temporal_radius) if kind == "temporal" else None
        self.window = window
        self.in_channels = window * 4 * self.frame_channels + 1
        self.out_channels = 4 * self.frame_channels
        self.folded = False

        layers = [nn.Conv2d(self.in_channels, self.width, 3, padding=1),
                  nn.ReLU(inplace=True)]
        for _ in range(depth - 2):
            layers.append(nn.Conv2d(self.width, self.width, 3, padding=1, bias=False))
            layers.append(nn.BatchNorm2d(self.width))
            layers.append(nn.ReLU(inplace=True))
        layers.append(nn.Conv2d(self.width, self.out_channels, 3, padding=1))
        self.stack = nn.Sequential(*layers)

        self.reset_parameters(seed=seed, orthogonal_init=orthogonal_init)

    @property
    def mode(self):
        return "eval" if self.folded else "train"

    def conv_layers(self):
        return [m for m in self.stack if isinstance(m, nn.Conv2d)]

    def layer_specs(self):
        """Conv layers plus their trailing normalization module (BN or affine)."""
        specs = []
        current = None
        for m in self.stack:
            if isinstance(m, nn.Conv2d):
                current = {"conv": m, "norm": None}
                specs.append(current)
            elif isinstance(m, (nn.BatchNorm2d, ChannelAffine)) and current is not None:
                current["norm"] = m
        return specs

    def reset_parameters(self, seed=0, orthogonal_init=True):
        """Fan-in-scaled normal init, biases zero, then one orthogonalization pass."""
        if self.folded:
            raise StateError("cannot re-initialize a folded block")
        gen = torch.Generator().manual_seed(int(seed))
        with torch.no_grad():
            for conv in self.conv_layers():
                fan_in = conv.in_channels * conv.kernel_size[0] * conv.kernel_size[1]
                conv.weight.normal_(0.0, (2.0 / fan_in) ** 0.5, generator=gen)
                if conv.bias is not None:
                    conv.bias.zero_()
            for m in self.stack:
                if isinstance(m, nn.BatchNorm2d):
                    m.reset_running_stats()
                    m.weight.fill_(1.0)
                    m.bias.zero_()
        if orthogonal_init:
            orthogonalize_kernels(self)
        return self

    def forward(self, x):
        return self.stack(x)


def _check_kind(block, kind, op):
    if block.kind != kind:
        raise ConfigError(f"{op} requires a {kind} block, got {block.kind!r}")


def spatial_forward_batch(block, noisy, noise_maps):
    """Differentiable batched spatial forward.

    noisy: (N, 3, H, W) tensor, noise_maps: (N, 1, H, W). Returns the denoised
    batch, i.e. input minus the predicted noise.
    """
    _check_kind(block, "spatial", "spatial_forward_batch")
    if noisy.shape[-2] % 2 or noisy.shape[-1] % 2:
        raise DimensionError("frame dims must be even (pad first)")
    if noise_maps.shape[-2:] != noisy.shape[-2:]:
        raise DimensionError("noise map shape does not match frame shape")
    sub = F.pixel_unshuffle(noisy, 2)
    maps_half = noise_maps[:, :, ::2, ::2]
    estimate = block(torch.cat([sub, maps_half], dim=1))
    return noisy - F.pixel_shuffle(estimate, 2)


def temporal_forward_batch(block, windows, noise_maps):
    """Differentiable batched temporal forward.

    windows: (N, 2T+1, 3, H, W) aligned frames in time order, noise_maps:
    (N, 1, H, W). The residual source is the central window frame.
    """
    _check_kind(block, "temporal", "temporal_forward_batch")
    n, w, c, height, width = windows.shape
    if w != block.window:
        raise DimensionError(
            f"window length {w} does not match block window {block.window}"
        )
    if height % 2 or width % 2:
        raise DimensionError("frame dims must be even (pad first)")
    if noise_maps.shape[-2:] != (height, width):
        raise DimensionError("noise map shape does not match frame shape")
    sub = F.pixel_unshuffle(windows.reshape(n * w, c, height, width), 2)
    sub = sub.reshape(n, w * 4 * c, height // 2, width // 2)
    maps_half = noise_maps[:, :, ::2, ::2]
    estimate = block(torch.cat([sub, maps_half], dim=1))
    center = windows[:, block.temporal_radius]
    return center - F.pixel_shuffle(estimate, 2)


def _inference(block, fn):
    """Run `fn` with the block in eval semantics, restoring its state after."""
    was_training = block.training
    block.eval()
    try:
        with torch.no_grad():
            return fn()
    finally:
        if was_training and not block.folded:
            block.train()


def spatial_forward(noisy, noise_map, block):
    """Denoise one HxWx3 frame with the spatial block (eval semantics).

    Returns input minus the predicted noise; no clipping is applied here.
    """
    frame = as_frame(noisy)
    check_even_dims(frame)
    nmap = as_noise_map(noise_map, like=frame)
    t = torch.from_numpy(np.ascontiguousarray(frame.transpose(2, 0, 1)))[None]
    m = torch.from_numpy(nmap)[None, None]
    out = _inference(block, lambda: spatial_forward_batch(block, t, m))
    return out[0].permute(1, 2, 0).numpy()


def temporal_forward(window, noise_map, block):
    """Fuse a 2T+1 aligned window into a denoised central frame (eval semantics)."""
    _check_kind(block, "temporal", "temporal_forward")
    frames = check_window(window, block.window)
    check_even_dims(frames[0])
    nmap = as_noise_map(noise_map, like=frames[0])
    t = torch.from_numpy(np.ascontiguousarray(frames.transpose(0, 3, 1, 2)))[None]
    m = torch.from_numpy(nmap)[None, None]
    out = _inference(block, lambda: temporal_forward_batch(block, t, m))
    return out[0].permute(1, 2, 0).numpy()


def fold_batchnorm(block):
    """Fold every BN layer into a fixed per-channel affine; returns a new block.

    The returned block is in eval mode: no running statistics remain, forward
    outputs match the source block's running-stats forward, and parameters are
    frozen. Folding an already-folded block is an error.
    """
    if block.folded:
        raise StateError("block is already folded (eval mode)")
    folded = copy.deepcopy(block)
    modules = []
    for m in folded.stack:
        if isinstance(m, nn.BatchNorm2d):
            if m.running_mean is None or m.running_var is None:
                raise StateError("batch-norm layer has no running statistics")
            var = m.running_var.detach().double()
            scale = (m.weight.detach().double() / torch.sqrt(var + m.eps)).float()
            shift = (m.bias.detach().double()
                     - m.running_mean.detach().double()
                     * (m.weight.detach().double() / torch.sqrt(var + m.eps))).float()
            modules.append(ChannelAffine(scale, shift))
        else:
            modules.append(m)
    folded.stack = nn.Sequential(*modules)
    folded.folded = True
    folded.eval()
    for p in folded.parameters():
        p.requires_grad_(False)
    return folded


def _project_orthonormal(g):
    """Nearest matrix (Frobenius) with orthonormal rows/columns via SVD."""
    u, s, vh = torch.linalg.svd(g.double(), full_matrices=False)
    return (u @ vh).to(g.dtype), float(s.max()) if s.numel() else 0.0


def orthogonalize_kernels(block):
    """Project every conv kernel onto the orthonormal manifold, in place.

    Each weight tensor reshaped to (out_channels x fan_in) is replaced by the
    nearest matrix with orthonormal rows (columns when fan_in < out_channels).
    Zero kernels get a seeded random orthonormal replacement. Idempotent.
    """
    if block.folded:
        raise StateError("cannot orthogonalize a folded (eval mode) block")
    with torch.no_grad():
        for idx, conv in enumerate(block.conv_layers()):
            w = conv.weight
            g = w.reshape(w.shape[0], -1)
            projected, smax = _project_orthonormal(g)
            if smax < 1e-12:
                gen = torch.Generator().manual_seed(_DEGENERATE_SEED + idx)
                g = torch.empty_like(g).normal_(generator=gen)
                projected, _ = _project_orthonormal(g)
            w.copy_(projected.reshape(w.shape))
    return block


def kernel_gram_errors(block):
    """Per-conv-layer Frobenius distance of the kernel Gram matrix to identity."""
    errors = []
    for conv in block.conv_layers():
        w = conv.weight.detach()
        g = w.reshape(w.shape[0], -1).double()
        if g.shape[0] <= g.shape[1]:
            gram = g @ g.T
        else:
            gram = g.T @ g
        eye = torch.eye(gram.shape[0], dtype=gram.dtype)
        errors.append(float(torch.linalg.norm(gram - eye)))
    return errors
