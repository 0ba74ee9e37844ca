"""Self-supervised despeckling of SAR images from multi-date stacks."""

__version__ = "0.1.0"

from .image import Domain, DomainError, Image
from .speckle import (
    corrupt,
    fisher_tippett_logpdf,
    log_speckle_bias,
    log_speckle_var,
    log_transform,
    sample_speckle,
)
from .losses import loss_l2_debiased, loss_likelihood, loss_likelihood_grad
from .nn import AdamState, NetworkConfig, NetworkParams, adam_step, backward, forward, init_params
from .pipeline import PhaseConfig, compensate_change, despeckle, pre_estimate, train
from .evaluation import enl, psnr_amplitude, wasserstein_residual

__all__ = [
    "Domain",
    "DomainError",
    "Image",
    "corrupt",
    "fisher_tippett_logpdf",
    "log_speckle_bias",
    "log_speckle_var",
    "log_transform",
    "sample_speckle",
    "loss_l2_debiased",
    "loss_likelihood",
    "loss_likelihood_grad",
    "AdamState",
    "NetworkConfig",
    "NetworkParams",
    "adam_step",
    "backward",
    "forward",
    "init_params",
    "PhaseConfig",
    "compensate_change",
    "despeckle",
    "pre_estimate",
    "train",
    "enl",
    "psnr_amplitude",
    "wasserstein_residual",
]
