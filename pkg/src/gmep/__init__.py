"""MIMO detection with expectation propagation and Gaussian-mixture messages."""

from .channel import RealChannelInstance, sample_batch, sample_instance, to_real_model
from .constellation import Constellation, build_constellation, slice_nearest
from .detectors import (
    GmepConfig,
    ep_detect,
    gmep_detect,
    lmmse_detect,
    zf_detect,
)

__version__ = "0.1.0"

__all__ = [
    "Constellation",
    "GmepConfig",
    "RealChannelInstance",
    "build_constellation",
    "ep_detect",
    "gmep_detect",
    "lmmse_detect",
    "sample_batch",
    "sample_instance",
    "slice_nearest",
    "to_real_model",
    "zf_detect",
]
