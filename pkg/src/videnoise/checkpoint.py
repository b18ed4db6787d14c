"""Checkpoint container for denoising blocks.

A checkpoint is a numpy ``.npz`` archive:

* ``meta`` — JSON string with ``format_version``, block ``kind``, ``depth``,
  ``width``, ``frame_channels``, ``temporal_radius``/``window`` (temporal),
  ``mode`` ("train" or "eval"), the channel-order convention tag, and an
  optional echo of the training configuration.
* per conv layer ``i``: ``layers.{i}.weight`` and, when present,
  ``layers.{i}.bias``;
* train mode: ``layers.{i}.bn.weight|bias|running_mean|running_var|
  num_batches_tracked`` for normalized layers;
* eval mode: ``layers.{i}.affine.scale|shift`` instead.

Arrays are stored verbatim (float32), so a save/load round trip reproduces
forward outputs bit-exactly.
"""

import json

import numpy as np
import torch
import torch.nn as nn

from .blocks import CHANNEL_ORDER, ChannelAffine, DenoisingBlock
from .errors import ConfigError

FORMAT_VERSION = 1

_BN_FIELDS = ("weight", "bias", "running_mean", "running_var", "num_batches_tracked")


def save_checkpoint(block, path, train_config=None, extra=None):
    """Write a block (train or eval mode) to `path`. Returns the path."""
    meta = {
        "format_version": FORMAT_VERSION,
        "kind": block.kind,
        "depth": block.depth,
        "width": block.width,
        "frame_channels": block.frame_channels,
        "temporal_radius": block.temporal_radius,
        "window": block.window if block.kind == "temporal" else 1,
        "mode": block.mode,
        "channel_order": CHANNEL_ORDER,
        "train_config": dict(train_config) if train_config else None,
        "extra": dict(extra) if extra else None,
    }
    arrays = {"meta": np.asarray(json.dumps(meta))}
    for i, spec in enumerate(block.layer_specs()):
        conv, norm = spec["conv"], spec["norm"]
        arrays[f"layers.{i}.weight"] = conv.weight.detach().numpy()
        if conv.bias is not None:
            arrays[f"layers.{i}.bias"] = conv.bias.detach().numpy()
        if isinstance(norm, nn.BatchNorm2d):
            for field in _BN_FIELDS:
                arrays[f"layers.{i}.bn.{field}"] = getattr(norm, field).detach().numpy()
        elif isinstance(norm, ChannelAffine):
            arrays[f"layers.{i}.affine.scale"] = norm.scale.numpy()
            arrays[f"layers.{i}.affine.shift"] = norm.shift.numpy()
    np.savez(path, **arrays)
    return path


def checkpoint_meta(path):
    """Read only the metadata of a checkpoint file."""
    with np.load(path, allow_pickle=False) as data:
        if "meta" not in data:
            raise ConfigError(f"{path} is not a videnoise checkpoint (no meta entry)")
        return json.loads(str(data["meta"]))


def load_checkpoint(path):
    """Reconstruct a DenoisingBlock from a checkpoint file."""
    with np.load(path, allow_pickle=False) as data:
        if "meta" not in data:
            raise ConfigError(f"{path} is not a videnoise checkpoint (no meta entry)")
        meta = json.loads(str(data["meta"]))
        if meta.get("format_version") != FORMAT_VERSION:
            raise ConfigError(
                f"unsupported checkpoint format_version {meta.get('format_version')}"
            )
        if meta.get("channel_order") != CHANNEL_ORDER:
            raise ConfigError(
                f"checkpoint channel order {meta.get('channel_order')!r} does not "
                f"match this build ({CHANNEL_ORDER!r})"
            )
        radius = meta["temporal_radius"]
        block = DenoisingBlock(
            meta["kind"],
            depth=meta["depth"],
            width=meta["width"],
            temporal_radius=radius if radius is not None else 2,
            frame_channels=meta["frame_channels"],
            orthogonal_init=False,
        )
        with torch.no_grad():
            for i, spec in enumerate(block.layer_specs()):
                conv, norm = spec["conv"], spec["norm"]
                conv.weight.copy_(torch.from_numpy(data[f"layers.{i}.weight"].copy()))
                if conv.bias is not None:
                    conv.bias.copy_(torch.from_numpy(data[f"layers.{i}.bias"].copy()))
                if meta["mode"] == "train" and isinstance(norm, nn.BatchNorm2d):
                    for field in _BN_FIELDS:
                        getattr(norm, field).copy_(
                            torch.from_numpy(data[f"layers.{i}.bn.{field}"].copy())
                        )
        if meta["mode"] == "eval":
            modules = []
            i = -1
            for m in block.stack:
                if isinstance(m, nn.Conv2d):
                    i += 1
                if isinstance(m, nn.BatchNorm2d):
                    scale = torch.from_numpy(data[f"layers.{i}.affine.scale"].copy())
                    shift = torch.from_numpy(data[f"layers.{i}.affine.shift"].copy())
                    modules.append(ChannelAffine(scale, shift))
                else:
                    modules.append(m)
            block.stack = nn.Sequential(*modules)
            block.folded = True
            block.eval()
            for p in block.parameters():
                p.requires_grad_(False)
    block.checkpoint_meta = meta
    return block


def resolve_block(source, kind=None):
    """Accept a DenoisingBlock or a checkpoint path; returns a block.

    When `kind` is given, a mismatching block raises ConfigError.
    """
    if isinstance(source, DenoisingBlock):
        block = source
    elif source is None:
        raise ConfigError(f"no {kind or 'denoiser'} block or checkpoint given")
    else:
        block = load_checkpoint(source)
    if kind is not None and block.kind != kind:
        raise ConfigError(f"expected a {kind} block, got {block.kind!r} from {source}")
    return block
