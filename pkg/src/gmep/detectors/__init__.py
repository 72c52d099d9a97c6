"""ZF, LMMSE, EP and GMEP detectors."""

from .ep import cavity_from_joint, ep_detect, ep_prior_update, lmmse_joint
from .gmep import (
    MixtureJoint,
    build_mixture_prior,
    gmep_detect,
    mixture_cavity,
    mixture_joint,
    mixture_node_cavity,
    select_mixture_nodes,
    smooth_cavity,
)
from .linear import lmmse_detect, zf_detect
from .types import DetectionResult, Diagnostics, EpState, GmepConfig

__all__ = [
    "DetectionResult",
    "Diagnostics",
    "EpState",
    "GmepConfig",
    "MixtureJoint",
    "build_mixture_prior",
    "cavity_from_joint",
    "ep_detect",
    "ep_prior_update",
    "gmep_detect",
    "lmmse_detect",
    "lmmse_joint",
    "mixture_cavity",
    "mixture_joint",
    "mixture_node_cavity",
    "select_mixture_nodes",
    "smooth_cavity",
    "zf_detect",
]
