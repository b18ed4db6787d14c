"""Losses, learning-rate schedule and the two training loops.

Both blocks train with Adam (library defaults beta1=0.9, beta2=0.999,
eps=1e-8) against a summed-squared-error loss normalized by 1/(2*batch).
While the epoch is below the orthogonalization boundary every optimizer step
is followed by an SVD projection of all conv kernels. Checkpoints are written
once per epoch plus a folded final checkpoint; a JSONL sidecar logs
(step, epoch, lr, loss).
"""

import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from .blocks import (
    DenoisingBlock,
    fold_batchnorm,
    orthogonalize_kernels,
    spatial_forward_batch,
    temporal_forward_batch,
)
from .checkpoint import save_checkpoint
from .datasets import SpatialDataset, SpatialSample, TemporalDataset, TemporalSample
from .errors import DomainError, StateError, TrainingError

TOTAL_EPOCHS = 80


@dataclass
class TrainConfig:
    epochs: int = TOTAL_EPOCHS
    batch_size: int = 128
    orthogonalize_until_epoch: int = 60
    sigma_range: tuple = (0.0, 55.0)    # 8-bit scale, recorded in checkpoints
    seed: int = 0
    per_pixel_loss: bool = False
    checkpoint_dir: str | None = None
    log_path: str | None = None

    def validate(self):
        if not 1 <= self.epochs <= TOTAL_EPOCHS:
            raise DomainError(f"epochs must be in [1, {TOTAL_EPOCHS}], got {self.epochs}")
        if self.batch_size < 1:
            raise DomainError("batch_size must be >= 1")
        if self.orthogonalize_until_epoch < 0:
            raise DomainError("orthogonalize_until_epoch must be >= 0")
        return self


@dataclass
class TrainState:
    params: DenoisingBlock
    epoch: int = 0
    step: int = 0
    loss_history: list = field(default_factory=list)


def learning_rate(epoch):
    """Piecewise-constant schedule: 1e-3 / 1e-4 / 1e-6 at epochs 0, 50, 60."""
    epoch = int(epoch)
    if not 0 <= epoch < TOTAL_EPOCHS:
        raise DomainError(f"epoch must be in [0, {TOTAL_EPOCHS}), got {epoch}")
    if epoch < 50:
        return 1e-3
    if epoch < 60:
        return 1e-4
    return 1e-6


def _stack_spatial(batch):
    noisy = torch.from_numpy(np.stack([s.noisy for s in batch])).permute(0, 3, 1, 2)
    maps = torch.from_numpy(np.stack([s.noise_map for s in batch]))[:, None]
    clean = torch.from_numpy(np.stack([s.clean for s in batch])).permute(0, 3, 1, 2)
    return noisy.contiguous(), maps.contiguous(), clean.contiguous()


def _stack_temporal(batch):
    win = torch.from_numpy(np.stack([s.window for s in batch])).permute(0, 1, 4, 2, 3)
    maps = torch.from_numpy(np.stack([s.noise_map for s in batch]))[:, None]
    clean = torch.from_numpy(np.stack([s.clean_center for s in batch])).permute(0, 3, 1, 2)
    return win.contiguous(), maps.contiguous(), clean.contiguous()


def _as_tensor_batch(batch, stack, sample_type):
    if isinstance(batch, (tuple, list)) and batch and isinstance(batch[0], sample_type):
        return stack(batch)
    if isinstance(batch, tuple) and len(batch) == 3:
        return batch
    if isinstance(batch, (tuple, list)) and not batch:
        raise DomainError("batch must be non-empty")
    raise DomainError(
        f"expected a list of {sample_type.__name__} or a (inputs, maps, targets) "
        "tensor triple"
    )


def _sse(pred, target, per_pixel):
    m = pred.shape[0]
    if m == 0:
        raise DomainError("batch must be non-empty")
    total = ((pred - target) ** 2).sum()
    if per_pixel:
        return total / (2.0 * m * pred[0].numel())
    return total / (2.0 * m)


def spatial_loss(batch, params, per_pixel=False):
    """1/(2m) sum of squared errors of the spatially denoised batch."""
    if params.folded:
        raise StateError("spatial_loss needs train-mode params")
    noisy, maps, clean = _as_tensor_batch(batch, _stack_spatial, SpatialSample)
    pred = spatial_forward_batch(params, noisy, maps)
    return _sse(pred, clean, per_pixel)


def temporal_loss(batch, params, per_pixel=False):
    """1/(2m) sum of squared errors of the temporally fused batch."""
    if params.folded:
        raise StateError("temporal_loss needs train-mode params")
    windows, maps, clean = _as_tensor_batch(batch, _stack_temporal, TemporalSample)
    pred = temporal_forward_batch(params, windows, maps)
    return _sse(pred, clean, per_pixel)


def overfit_steps(block, batch, steps, lr=1e-3, orthogonalize=False,
                  stop_factor=None):
    """Fixed-batch Adam overfit loop; the oracle behind desk-scale checks.

    `batch` is a tensor triple as produced by a dataset's .batch(); returns the
    loss history. With `stop_factor` set, stops early once the loss has
    dropped by that factor from its initial value.
    """
    loss_fn = spatial_loss if block.kind == "spatial" else temporal_loss
    opt = torch.optim.Adam(block.parameters(), lr=lr)
    history = []
    block.train()
    for _ in range(int(steps)):
        loss = loss_fn(batch, block)
        opt.zero_grad()
        loss.backward()
        opt.step()
        if orthogonalize:
            orthogonalize_kernels(block)
        history.append(float(loss.detach()))
        if stop_factor and history[0] / max(history[-1], 1e-30) >= stop_factor:
            break
    return history


def _snapshot(block):
    return {k: v.detach().clone() for k, v in block.state_dict().items()}


def _ckpt_path(config, name):
    if config.checkpoint_dir is None:
        return None
    os.makedirs(config.checkpoint_dir, exist_ok=True)
    return os.path.join(config.checkpoint_dir, name)


def _train_block(block, dataset, config, loss_fn, prefix, on_step=None):
    config.validate()
    m = len(dataset)
    if m == 0:
        raise DomainError("training dataset is empty")
    torch.manual_seed(config.seed)
    state = TrainState(params=block)
    opt = torch.optim.Adam(block.parameters(), lr=learning_rate(0))
    log = open(config.log_path, "w") if config.log_path else None
    last_good = _snapshot(block)
    train_config = asdict(config)
    try:
        for epoch in range(config.epochs):
            state.epoch = epoch
            lr = learning_rate(epoch)
            for group in opt.param_groups:
                group["lr"] = lr
            order = np.random.default_rng([config.seed, 3571, epoch]).permutation(m)
            block.train()
            for start in range(0, m, config.batch_size):
                idx = order[start:start + config.batch_size]
                batch = dataset.batch(idx)
                loss = loss_fn(batch, block, per_pixel=config.per_pixel_loss)
                if not torch.isfinite(loss):
                    path = _ckpt_path(config, f"{prefix}_lastgood.npz")
                    if path:
                        block.load_state_dict(last_good)
                        save_checkpoint(block, path, train_config=train_config,
                                        extra={"aborted_at_step": state.step})
                    raise TrainingError(
                        f"non-finite loss at step {state.step}", last_checkpoint=path
                    )
                opt.zero_grad()
                loss.backward()
                opt.step()
                if epoch < config.orthogonalize_until_epoch:
                    orthogonalize_kernels(block)
                value = float(loss.detach())
                state.loss_history.append(value)
                if log:
                    log.write(json.dumps({
                        "step": state.step, "epoch": epoch, "lr": lr, "loss": value,
                    }) + "\n")
                last_good = _snapshot(block)
                state.step += 1
                if on_step is not None:
                    on_step(state, block)
            path = _ckpt_path(config, f"{prefix}_epoch{epoch:03d}.npz")
            if path:
                save_checkpoint(block, path, train_config=train_config,
                                extra={"epoch": epoch, "steps": state.step})
    finally:
        if log:
            log.close()
    folded = fold_batchnorm(block)
    path = _ckpt_path(config, f"{prefix}_final.npz")
    if path:
        save_checkpoint(folded, path, train_config=train_config,
                        extra={"steps": state.step, "final": True})
    return folded, state


def train_spatial(dataset, config=None, block=None, return_state=False,
                  on_step=None):
    """Train the spatial block; returns the folded eval-mode params."""
    config = config or TrainConfig()
    if isinstance(dataset, (list, tuple)):
        dataset = SpatialDataset.from_samples(dataset)
    if block is None:
        block = DenoisingBlock("spatial", seed=config.seed)
    if block.folded:
        raise StateError("cannot train a folded block")
    folded, state = _train_block(block, dataset, config, spatial_loss, "spatial",
                                 on_step=on_step)
    return (folded, state) if return_state else folded


def train_temporal(dataset, spatial_params, config=None, block=None,
                   return_state=False, on_step=None):
    """Train the temporal block (requires eval-mode spatial params first)."""
    if spatial_params is None:
        raise StateError("train_temporal requires the trained spatial params")
    if getattr(spatial_params, "mode", None) != "eval":
        raise StateError("spatial params must be in eval mode (fold first)")
    config = config or TrainConfig()
    if isinstance(dataset, (list, tuple)):
        dataset = TemporalDataset.from_samples(dataset)
    if block is None:
        radius = (dataset.window - 1) // 2 if len(dataset) else 2
        block = DenoisingBlock("temporal", temporal_radius=radius, seed=config.seed)
    if block.folded:
        raise StateError("cannot train a folded block")
    folded, state = _train_block(block, dataset, config, temporal_loss, "temporal",
                                 on_step=on_step)
    return (folded, state) if return_state else folded
