import json

import numpy as np
import pytest
import torch

from videnoise.blocks import DenoisingBlock, kernel_gram_errors
from videnoise.checkpoint import checkpoint_meta
from videnoise.datasets import SpatialDataset, TemporalDataset, extract_spatial_samples
from videnoise.errors import DomainError, StateError, TrainingError
from videnoise.training import (
    TrainConfig,
    learning_rate,
    overfit_steps,
    spatial_loss,
    temporal_loss,
    train_spatial,
    train_temporal,
)

from conftest import texture_image, zero_final_layer


def small_spatial_dataset(count=8, patch=16, sigma=(10.0, 30.0), seed=4):
    corpus = [texture_image(64, 64, 30), texture_image(64, 64, 31)]
    samples = extract_spatial_samples(corpus, count, sigma_range=sigma, seed=seed,
                                      patch_size=patch, augment_modes=(0,))
    return SpatialDataset.from_samples(samples)


def small_temporal_dataset(count=8, patch=16, seed=4):
    rng = np.random.default_rng(seed)
    windows = rng.random((count, 5, patch, patch, 3)).astype(np.float32)
    clean = windows[:, 2] + rng.normal(0, 0.05, (count, patch, patch, 3)).astype(np.float32)
    sigmas = np.full((count,), 20.0 / 255.0, np.float32)
    return TemporalDataset(windows, clean, sigmas)


class TestLearningRate:
    def test_paper_schedule(self):
        assert learning_rate(0) == 1e-3
        assert learning_rate(49) == 1e-3
        assert learning_rate(50) == 1e-4
        assert learning_rate(59) == 1e-4
        assert learning_rate(60) == 1e-6
        assert learning_rate(79) == 1e-6

    def test_out_of_range(self):
        with pytest.raises(DomainError):
            learning_rate(-1)
        with pytest.raises(DomainError):
            learning_rate(80)


class TestLosses:
    def test_zero_on_perfect_prediction(self, identity_spatial):
        ds = small_spatial_dataset(4)
        noisy, maps, _ = ds.batch(np.arange(4))
        # identity block predicts the noisy input; use it as the target
        with torch.no_grad():
            assert float(spatial_loss((noisy, maps, noisy), identity_spatial)) == 0.0

    def test_closed_form_uniform_residual(self, rng):
        block = zero_final_layer(DenoisingBlock("spatial", depth=4, width=8, seed=1))
        clean = torch.from_numpy(rng.random((1, 3, 50, 50)).astype(np.float32))
        noisy = clean + 0.1
        maps = torch.full((1, 1, 50, 50), 0.1)
        with torch.no_grad():
            loss = float(spatial_loss((noisy, maps, clean), block))
        assert abs(loss - 37.5) < 1e-3

    def test_per_pixel_variant(self, rng):
        block = zero_final_layer(DenoisingBlock("spatial", depth=4, width=8, seed=1))
        clean = torch.from_numpy(rng.random((2, 3, 16, 16)).astype(np.float32))
        noisy = clean + 0.1
        maps = torch.full((2, 1, 16, 16), 0.1)
        with torch.no_grad():
            loss = float(spatial_loss((noisy, maps, clean), block, per_pixel=True))
        assert abs(loss - 0.005) < 1e-6  # 0.1^2 / 2

    def test_non_negative(self, tiny_spatial):
        ds = small_spatial_dataset(4)
        with torch.no_grad():
            assert float(spatial_loss(ds.batch(np.arange(4)), tiny_spatial)) >= 0.0

    def test_sample_list_accepted(self, tiny_spatial):
        samples = [small_spatial_dataset(3).sample(i) for i in range(3)]
        with torch.no_grad():
            loss = spatial_loss(samples, tiny_spatial)
        assert float(loss) >= 0.0

    def test_empty_batch(self, tiny_spatial):
        with pytest.raises(DomainError):
            spatial_loss([], tiny_spatial)

    def test_temporal_perfect_zero(self, identity_temporal):
        ds = small_temporal_dataset(3)
        win, maps, _ = ds.batch(np.arange(3))
        with torch.no_grad():
            assert float(temporal_loss((win, maps, win[:, 2]), identity_temporal)) == 0.0

    def test_temporal_non_negative(self, tiny_temporal):
        ds = small_temporal_dataset(3)
        with torch.no_grad():
            assert float(temporal_loss(ds.batch(np.arange(3)), tiny_temporal)) >= 0.0

    def test_folded_rejected(self, tiny_spatial):
        from videnoise.blocks import fold_batchnorm
        folded = fold_batchnorm(tiny_spatial)
        ds = small_spatial_dataset(2)
        with pytest.raises(StateError):
            spatial_loss(ds.batch(np.arange(2)), folded)

    def test_temporal_final_bias_gradient(self):
        """Analytic gradient of the temporal loss w.r.t. the last-layer bias
        matches central finite differences on an 8x8 toy sample."""
        block = DenoisingBlock("temporal", depth=3, width=6, seed=2).double()
        ds = small_temporal_dataset(2, patch=8)
        win, maps, clean = (t.double() for t in ds.batch(np.arange(2)))
        bias = block.conv_layers()[-1].bias
        loss = temporal_loss((win, maps, clean), block)
        (grad,) = torch.autograd.grad(loss, bias)
        eps = 1e-6
        for j in range(0, bias.numel(), 5):
            with torch.no_grad():
                bias[j] += eps
                up = float(temporal_loss((win, maps, clean), block))
                bias[j] -= 2 * eps
                down = float(temporal_loss((win, maps, clean), block))
                bias[j] += eps
            fd = (up - down) / (2 * eps)
            denom = max(abs(fd), abs(float(grad[j])), 1e-12)
            assert abs(fd - float(grad[j])) / denom < 1e-3


class TestTrainSpatial:
    def test_overfit_loss_drops(self):
        ds = small_spatial_dataset(8, patch=16)
        block = DenoisingBlock("spatial", depth=4, width=8, seed=0)
        history = overfit_steps(block, ds.batch(np.arange(8)), steps=120, lr=1e-3)
        assert history[-1] < history[0]
        assert history[-1] < history[0] / 5

    def test_deterministic_runs(self, tmp_path):
        ds = small_spatial_dataset(8, patch=16)
        cfg = dict(epochs=2, batch_size=4, orthogonalize_until_epoch=0, seed=5)
        folded_a, state_a = train_spatial(ds, TrainConfig(**cfg),
                                          block=DenoisingBlock("spatial", depth=4, width=8, seed=5),
                                          return_state=True)
        folded_b, state_b = train_spatial(ds, TrainConfig(**cfg),
                                          block=DenoisingBlock("spatial", depth=4, width=8, seed=5),
                                          return_state=True)
        assert state_a.loss_history == state_b.loss_history
        sd_a, sd_b = folded_a.state_dict(), folded_b.state_dict()
        assert sd_a.keys() == sd_b.keys()
        for k in sd_a:
            assert torch.equal(sd_a[k], sd_b[k]), k

    def test_ortho_phase_keeps_kernels_orthonormal(self):
        ds = small_spatial_dataset(8, patch=16)
        observed = []

        def on_step(state, block):
            observed.append(max(kernel_gram_errors(block)))

        train_spatial(ds, TrainConfig(epochs=2, batch_size=4,
                                      orthogonalize_until_epoch=60, seed=1),
                      block=DenoisingBlock("spatial", depth=4, width=8, seed=1),
                      on_step=on_step)
        assert observed and max(observed) < 1e-4

    def test_checkpoints_and_log(self, tmp_path):
        ds = small_spatial_dataset(6, patch=16)
        config = TrainConfig(epochs=2, batch_size=3, orthogonalize_until_epoch=0,
                             seed=2, checkpoint_dir=str(tmp_path),
                             log_path=str(tmp_path / "train.jsonl"))
        block, state = train_spatial(
            ds, config, block=DenoisingBlock("spatial", depth=4, width=8, seed=2),
            return_state=True)
        assert block.mode == "eval"
        assert (tmp_path / "spatial_epoch000.npz").exists()
        assert (tmp_path / "spatial_epoch001.npz").exists()
        assert (tmp_path / "spatial_final.npz").exists()
        meta = checkpoint_meta(tmp_path / "spatial_final.npz")
        assert meta["train_config"]["epochs"] == 2
        assert meta["train_config"]["batch_size"] == 3
        lines = [json.loads(l) for l in
                 (tmp_path / "train.jsonl").read_text().splitlines()]
        assert len(lines) == state.step
        assert lines[0]["lr"] == 1e-3
        assert all(np.isfinite(l["loss"]) for l in lines)

    def test_paper_defaults_echoed(self):
        config = TrainConfig()
        assert config.epochs == 80
        assert config.batch_size == 128
        assert config.orthogonalize_until_epoch == 60
        assert tuple(config.sigma_range) == (0.0, 55.0)

    def test_nan_aborts_with_last_checkpoint(self, tmp_path):
        ds = small_spatial_dataset(4, patch=16)
        ds.noisy[2] = np.nan
        config = TrainConfig(epochs=1, batch_size=4, orthogonalize_until_epoch=0,
                             seed=0, checkpoint_dir=str(tmp_path))
        with pytest.raises(TrainingError) as info:
            train_spatial(ds, config,
                          block=DenoisingBlock("spatial", depth=4, width=8, seed=0))
        assert info.value.last_checkpoint is not None
        meta = checkpoint_meta(info.value.last_checkpoint)
        assert meta["mode"] == "train"

    def test_empty_dataset(self):
        with pytest.raises(DomainError):
            train_spatial(SpatialDataset.from_samples([]), TrainConfig(epochs=1))

    def test_epoch_cap(self):
        ds = small_spatial_dataset(2, patch=16)
        with pytest.raises(DomainError):
            train_spatial(ds, TrainConfig(epochs=81))


@pytest.mark.slow
def test_single_patch_pair_overfit_mse():
    """Overfitting one patch pair drives per-pixel MSE below 1e-4."""
    import torch as _torch
    from videnoise.blocks import fold_batchnorm, spatial_forward

    ds = small_spatial_dataset(1, patch=50, sigma=(25.0, 25.0), seed=11)
    block = DenoisingBlock("spatial", seed=11)
    batch = ds.batch(np.arange(1))
    opt = _torch.optim.Adam(block.parameters(), lr=1e-3)
    target_loss = 1e-4 * 50 * 50 * 3 / 2  # SSE/2 form of the MSE bound
    block.train()
    for _ in range(1200):
        loss = spatial_loss(batch, block)
        opt.zero_grad()
        loss.backward()
        opt.step()
        if float(loss.detach()) < 0.5 * target_loss:
            break
    sample = ds.sample(0)
    out = spatial_forward(sample.noisy, sample.noise_map, fold_batchnorm(block))
    mse = float(np.mean((out - sample.clean) ** 2))
    assert mse < 1e-4


class TestTrainTemporal:
    def test_requires_spatial_params(self):
        ds = small_temporal_dataset(4)
        with pytest.raises(StateError):
            train_temporal(ds, None, TrainConfig(epochs=1))

    def test_requires_eval_spatial(self, tiny_spatial):
        ds = small_temporal_dataset(4)
        with pytest.raises(StateError):
            train_temporal(ds, tiny_spatial, TrainConfig(epochs=1))

    def test_overfit_and_metadata(self, tmp_path, identity_spatial):
        from videnoise.blocks import fold_batchnorm
        ds = small_temporal_dataset(8, patch=16)
        spatial = fold_batchnorm(identity_spatial)
        config = TrainConfig(epochs=2, batch_size=4, orthogonalize_until_epoch=0,
                             seed=3, checkpoint_dir=str(tmp_path))
        block, state = train_temporal(
            ds, spatial, config,
            block=DenoisingBlock("temporal", depth=3, width=8, seed=3),
            return_state=True)
        assert block.mode == "eval"
        assert state.loss_history[-1] < state.loss_history[0]
        meta = checkpoint_meta(tmp_path / "temporal_final.npz")
        assert meta["temporal_radius"] == 2
        assert meta["window"] == 5
