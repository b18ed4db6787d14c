"""Two-stage video denoising: spatial CNN, motion compensation, temporal fusion."""

from .blocks import (
    DenoisingBlock,
    depth_to_space,
    fold_batchnorm,
    kernel_gram_errors,
    orthogonalize_kernels,
    space_to_depth,
    spatial_forward,
    temporal_forward,
)
from .checkpoint import checkpoint_meta, load_checkpoint, save_checkpoint
from .datasets import (
    SpatialDataset,
    SpatialSample,
    TemporalDataset,
    TemporalSample,
    augment,
    build_temporal_samples,
    extract_spatial_samples,
)
from .errors import (
    ArityError,
    ConfigError,
    DataError,
    DimensionError,
    DomainError,
    StateError,
    TrainingError,
    VidenoiseError,
)
from .estimators import SpatialDenoiser, VideoDenoiser
from .evaluation import BenchmarkReport, psnr, psnr_seq, run_benchmark, time_inference
from .flow import (
    FlowBackend,
    block_matching_flow,
    command_backend,
    compensate,
    estimate_flow,
    read_flo,
    register_backend,
    warp,
    write_flo,
)
from .frameio import FrameSequence, load_frame_dir, load_image, save_frame_dir, save_image
from .noise import add_awgn, constant_noise_map, downsample_noise_map, sigma_from_8bit
from .pipeline import (
    PipelineConfig,
    PipelineResult,
    denoise_sequence,
    pad_to_even,
    run_pipeline,
    temporal_window_indices,
)
from .training import (
    TrainConfig,
    learning_rate,
    overfit_steps,
    spatial_loss,
    temporal_loss,
    train_spatial,
    train_temporal,
)

__version__ = "0.1.0"
