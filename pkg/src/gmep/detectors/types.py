"""Data types shared by the detectors."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigurationError
from ..messages import DiscretePosterior

__all__ = ["EpState", "GmepConfig", "Diagnostics", "DetectionResult"]


@dataclass(eq=False)
class EpState:
    """Per-node EP quantities; arrays carry an optional leading trial axis."""

    gamma: np.ndarray
    lam: np.ndarray
    joint_mean: np.ndarray
    joint_cov: np.ndarray
    cavity_mean: np.ndarray
    cavity_var: np.ndarray
    iteration: int = 0


@dataclass(frozen=True)
class GmepConfig:
    """Settings for :func:`gmep_detect`.

    ``sigma0_sq=None`` selects ``sigma0_scale * spacing**2`` for the
    constellation in use. ``damping`` is the weight on the new prior in the
    natural-parameter smoothing of ordinary EP nodes; ``beta`` is the weight
    on the new cavity in the cavity filter applied on iterations that used a
    mixture. ``exact_cavity_weights=False`` mixes every node's per-tuple
    cavities with the shared tuple likelihoods instead of the node-specific
    ones.
    """

    iterations: int = 1
    beta: float = 1.0
    max_mixture_nodes: int = 2
    prune_threshold: float = 1e-3
    sigma0_sq: float | None = None
    sigma0_scale: float = 1e-4
    damping: float = 0.9
    min_components: int = 2
    max_tuples: int = 1024
    variance_floor: float = 1e-8
    selection: str = "entropy"
    selection_seed: int = 0
    exact_cavity_weights: bool = True

    def __post_init__(self):
        if self.iterations < 0:
            raise ConfigurationError("iterations must be >= 0")
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigurationError("beta must lie in [0, 1]")
        if not 0.0 < self.damping <= 1.0:
            raise ConfigurationError("damping must lie in (0, 1]")
        if self.max_mixture_nodes < 0:
            raise ConfigurationError("max_mixture_nodes must be >= 0")
        if not 0.0 < self.prune_threshold < 1.0:
            raise ConfigurationError("prune_threshold must lie in (0, 1)")
        if self.sigma0_sq is not None and not self.sigma0_sq > 0:
            raise ConfigurationError("sigma0_sq must be positive")
        if not self.sigma0_scale > 0:
            raise ConfigurationError("sigma0_scale must be positive")
        if self.min_components < 1:
            raise ConfigurationError("min_components must be >= 1")
        if self.max_tuples < 1:
            raise ConfigurationError("max_tuples must be >= 1")
        if self.selection not in ("entropy", "random"):
            raise ConfigurationError("selection must be 'entropy' or 'random'")

    def resolved_sigma0_sq(self, spacing: float) -> float:
        if self.sigma0_sq is not None:
            return float(self.sigma0_sq)
        return self.sigma0_scale * spacing**2


@dataclass(eq=False)
class Diagnostics:
    """Per-iteration instrumentation, shaped ``(B, L)`` or ``(B, L, S)``.

    ``mixture_nodes`` holds ``-1`` in unused slots and ``mixture_orders``
    holds 0 there.
    """

    improper_counts: np.ndarray
    mixture_nodes: np.ndarray
    mixture_orders: np.ndarray
    cavity_breakdowns: np.ndarray
    rank1_fallbacks: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    dropped_tuples: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @classmethod
    def empty(cls, batch: int, iterations: int = 0, slots: int = 0) -> Diagnostics:
        z2 = np.zeros((batch, iterations), dtype=np.int64)
        return cls(
            improper_counts=z2,
            mixture_nodes=np.full((batch, iterations, slots), -1, dtype=np.int64),
            mixture_orders=np.zeros((batch, iterations, slots), dtype=np.int64),
            cavity_breakdowns=z2.copy(),
            rank1_fallbacks=z2.copy(),
            dropped_tuples=z2.copy(),
        )

    def squeeze(self) -> Diagnostics:
        return Diagnostics(*(np.asarray(getattr(self, f))[0] for f in _DIAG_FIELDS))


_DIAG_FIELDS = (
    "improper_counts",
    "mixture_nodes",
    "mixture_orders",
    "cavity_breakdowns",
    "rank1_fallbacks",
    "dropped_tuples",
)


@dataclass(eq=False)
class DetectionResult:
    hard_symbols: np.ndarray
    soft_posteriors: DiscretePosterior
    diagnostics: Diagnostics
    state: EpState | None = None
