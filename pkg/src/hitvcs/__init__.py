"""Learned block-based video compressive sensing codec and research toolkit."""

from .config import DataConfig, ModelConfig, RunConfig, TrainConfig
from .data import GopSample, augment, partition_gops, random_crop, rgb_to_y
from .errors import ConfigError, DataError, NanLossError
from .initial import (
    ScalePyramid,
    UpsamplingOperator,
    initial_reconstruct,
    initial_reconstruct_pyramid,
    pinv_upsampling_operator,
)
from .metrics import MetricReport, evaluate, psnr, ssim
from .network import HitVcsNet, build_model, count_parameters, reconstruct_gop
from .sampling import (
    MeasurementTensor,
    SamplingOperator,
    init_sampling_operator,
    matrix_form_oracle,
    sample_frame,
    sample_gop,
)
from .training import hit_loss, load_checkpoint, lr_at_epoch, save_checkpoint, train

__version__ = "0.1.0"
