"""Few-shot artistic portrait generation: latent sampling, style-based decoding, perceptual
metrics, decoder adaptation and encoder inversion, backed by a C++/libtorch core."""

from ._core import (
    ConfigError,
    InvalidArgument,
    InvalidData,
    NumericFailure,
    UndefinedMetric,
    Encoder,
    Generator,
    cdt_loss,
    fid,
    fid_features,
    kl_adain_loss,
    latent_moments,
    layer_count,
    lpips,
    lpips_cluster,
    lpips_distance_eval,
    modified_lpips,
    pretrain_toy_generator,
    read_checkpoint,
    render_toy,
    run,
    sample_z,
    smooth_l1,
    extend_repeat,
)

__all__ = [
    "ConfigError",
    "InvalidArgument",
    "InvalidData",
    "NumericFailure",
    "UndefinedMetric",
    "Encoder",
    "Generator",
    "cdt_loss",
    "extend_repeat",
    "fid",
    "fid_features",
    "kl_adain_loss",
    "latent_moments",
    "layer_count",
    "lpips",
    "lpips_cluster",
    "lpips_distance_eval",
    "modified_lpips",
    "pretrain_toy_generator",
    "read_checkpoint",
    "render_toy",
    "run",
    "sample_z",
    "smooth_l1",
]
