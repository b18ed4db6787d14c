import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from videnoise.blocks import DenoisingBlock
from videnoise.checkpoint import save_checkpoint
from videnoise.estimators import SpatialDenoiser, VideoDenoiser
from videnoise.frameio import FrameSequence

from conftest import texture_image, texture_sequence


@pytest.fixture
def tiny_checkpoints(tmp_path):
    sp = tmp_path / "spatial.npz"
    tp = tmp_path / "temporal.npz"
    save_checkpoint(DenoisingBlock("spatial", depth=4, width=8, seed=1), sp)
    save_checkpoint(DenoisingBlock("temporal", depth=3, width=8, seed=1), tp)
    return str(sp), str(tp)


class TestSklearnConventions:
    def test_get_set_params_roundtrip(self):
        est = VideoDenoiser(sigma=40.0, workers=2)
        params = est.get_params()
        assert params["sigma"] == 40.0
        assert params["workers"] == 2
        est.set_params(sigma=10.0)
        assert est.sigma == 10.0

    def test_clone(self):
        est = SpatialDenoiser(sigma=30.0, samples=128)
        cloned = clone(est)
        assert cloned.get_params() == est.get_params()

    def test_not_fitted_errors(self):
        with pytest.raises(NotFittedError):
            SpatialDenoiser().transform(texture_image(16, 16, 1))
        with pytest.raises(NotFittedError):
            VideoDenoiser().transform(texture_sequence(16, 16, 3, seed=1))


class TestTransformWithCheckpoints:
    def test_video_denoiser_container_types(self, tiny_checkpoints):
        sp, tp = tiny_checkpoints
        est = VideoDenoiser(sigma=25.0, spatial_checkpoint=sp, temporal_checkpoint=tp)
        arr = texture_sequence(32, 48, 3, seed=5)
        out_arr = est.transform(arr)
        assert isinstance(out_arr, np.ndarray)
        assert out_arr.shape == arr.shape
        out_seq = est.transform(FrameSequence(arr, frame_rate=25.0))
        assert isinstance(out_seq, FrameSequence)
        assert out_seq.frame_rate == 25.0
        single = est.transform(arr[0])
        assert single.shape == arr[0].shape

    def test_spatial_denoiser_checkpoint(self, tiny_checkpoints):
        sp, _ = tiny_checkpoints
        est = SpatialDenoiser(sigma=25.0, checkpoint=sp)
        frame = texture_image(32, 48, 2)
        out = est.transform(frame)
        assert out.shape == frame.shape
        assert out.min() >= 0.0 and out.max() <= 1.0
        stack = est.transform(np.stack([frame, frame]))
        assert stack.shape == (2, 32, 48, 3)
        assert np.array_equal(stack[0], stack[1])

    def test_output_in_range(self, tiny_checkpoints):
        sp, tp = tiny_checkpoints
        est = VideoDenoiser(sigma=50.0, spatial_checkpoint=sp, temporal_checkpoint=tp)
        noisy = texture_sequence(32, 48, 3, seed=6) + 0.4
        out = est.transform(noisy.astype(np.float32))
        assert out.min() >= 0.0 and out.max() <= 1.0


class TestFit:
    def test_spatial_fit_smoke(self):
        """Tiny patches keep the full-size block trainable in seconds."""
        corpus = [texture_image(40, 40, i) for i in range(2)]
        est = SpatialDenoiser(sigma=25.0, samples=8, epochs=1, batch_size=4,
                              patch_size=16, orthogonalize_until_epoch=0, seed=0)
        assert est.fit(corpus) is est
        assert est.block_.mode == "eval"
        out = est.transform(corpus[0])
        assert out.shape == corpus[0].shape
