"""Scalar Gaussian and Gaussian-mixture message algebra.

Every function broadcasts over leading axes, so a whole batch of nodes (or of
trials) is handled in one call. Natural parameters are ``gamma = mean / var``
and ``lam = 1 / var``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .constellation import Constellation
from .errors import DomainError

__all__ = [
    "GaussianMsg",
    "MixtureMsg",
    "DiscretePosterior",
    "gaussian_multiply",
    "gaussian_divide",
    "discrete_log_weights",
    "moment_match_discrete",
    "posterior_entropy",
    "project_mixture",
    "mil_precision",
    "component_loglik",
    "normalize_log_weights",
]


@dataclass(frozen=True, eq=False)
class GaussianMsg:
    """Gaussian message in both parameterizations.

    Construct with :meth:`from_moments` or :meth:`from_natural`; the two
    views are kept consistent. A message with ``lam <= 0`` is improper: it is
    still representable (``var`` is negative or infinite) and ``proper`` is
    False.
    """

    mean: np.ndarray
    var: np.ndarray
    gamma: np.ndarray
    lam: np.ndarray

    @classmethod
    def from_moments(cls, mean, var) -> GaussianMsg:
        mean = np.asarray(mean, dtype=float)
        var = np.asarray(var, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            lam = 1.0 / var
            gamma = mean * lam
        return cls(mean, var, gamma, lam)

    @classmethod
    def from_natural(cls, gamma, lam) -> GaussianMsg:
        gamma = np.asarray(gamma, dtype=float)
        lam = np.asarray(lam, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            var = 1.0 / lam
            mean = gamma * var
        return cls(mean, var, gamma, lam)

    @property
    def proper(self):
        return self.lam > 0

    @property
    def improper(self):
        return ~(self.lam > 0)

    def __getitem__(self, idx) -> GaussianMsg:
        return GaussianMsg(self.mean[idx], self.var[idx], self.gamma[idx], self.lam[idx])


@dataclass(frozen=True, eq=False)
class MixtureMsg:
    """Mixture of Gaussians with a shared component variance.

    ``weights`` are nonnegative and need not be normalized; ``centers`` are
    distinct constellation points.
    """

    weights: np.ndarray
    centers: np.ndarray
    sigma0_sq: float

    def __post_init__(self):
        if np.shape(self.weights) != np.shape(self.centers):
            raise DomainError("weights and centers must have the same shape")
        if np.any(np.asarray(self.weights) < 0):
            raise DomainError("mixture weights must be nonnegative")
        if len(np.unique(self.centers)) != np.size(self.centers):
            raise DomainError("mixture centers must be distinct")

    @property
    def count(self) -> int:
        return int(np.size(self.centers))

    def normalized(self) -> MixtureMsg:
        w = np.asarray(self.weights, dtype=float)
        return MixtureMsg(w / w.sum(), self.centers, self.sigma0_sq)


@dataclass(frozen=True, eq=False)
class DiscretePosterior:
    """Probabilities over ``support`` along the last axis of ``probs``."""

    support: np.ndarray
    probs: np.ndarray

    def argmax(self) -> np.ndarray:
        return self.support[np.argmax(self.probs, axis=-1)]

    def __getitem__(self, idx) -> DiscretePosterior:
        return DiscretePosterior(self.support, self.probs[idx])


def gaussian_multiply(a: GaussianMsg, b: GaussianMsg) -> GaussianMsg:
    return GaussianMsg.from_natural(a.gamma + b.gamma, a.lam + b.lam)


def gaussian_divide(num: GaussianMsg, den: GaussianMsg) -> GaussianMsg:
    """Divide in natural parameters; the result may be improper."""
    return GaussianMsg.from_natural(num.gamma - den.gamma, num.lam - den.lam)


def normalize_log_weights(logw, axis=-1):
    """Softmax with max subtraction; entries at ``-inf`` get weight 0."""
    logw = np.asarray(logw, dtype=float)
    top = np.max(logw, axis=axis, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    w = np.exp(logw - top)
    return w / np.sum(w, axis=axis, keepdims=True)


def discrete_log_weights(mean, var, points):
    """Unnormalized log posterior ``-(a - t)^2 / (2 h^2)`` over ``points``."""
    mean = np.asarray(mean, dtype=float)[..., None]
    var = np.asarray(var, dtype=float)[..., None]
    return -((points - mean) ** 2) / (2.0 * var)


def moment_match_discrete(cavity: GaussianMsg, c: Constellation | np.ndarray):
    """Project ``cavity x indicator(constellation)`` onto a Gaussian.

    Returns the discrete posterior and the Gaussian with its exact mean and
    variance. Entries whose weights cannot be formed (non-positive or
    non-finite cavity variance, non-finite mean) fall back to a one-hot
    posterior at the nearest point.
    """
    points = c.real_points if isinstance(c, Constellation) else np.asarray(c, dtype=float)
    t = np.asarray(cavity.mean, dtype=float)
    h2 = np.asarray(cavity.var, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        logw = discrete_log_weights(t, h2, points)
        probs = normalize_log_weights(logw)
    bad = ~np.all(np.isfinite(probs), axis=-1)
    if np.any(bad):
        t_safe = np.where(np.isfinite(t), t, 0.0)
        nearest = np.argmin(np.abs(t_safe[..., None] - points), axis=-1)
        onehot = (np.arange(points.size) == nearest[..., None]).astype(float)
        probs = np.where(bad[..., None], onehot, probs)
    mean = probs @ points
    var = np.sum(probs * (points - mean[..., None]) ** 2, axis=-1)
    return DiscretePosterior(points, probs), GaussianMsg.from_moments(mean, var)


def posterior_entropy(p: DiscretePosterior | np.ndarray):
    """Natural-log entropy along the last axis, with ``0 log 0 = 0``."""
    probs = p.probs if isinstance(p, DiscretePosterior) else np.asarray(p, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(probs > 0, probs * np.log(probs), 0.0)
    return -np.sum(terms, axis=-1)


def project_mixture(weights, means, variances) -> GaussianMsg:
    """Moment-match a 1-D Gaussian mixture (mixture axis last) to one Gaussian."""
    w = np.asarray(weights, dtype=float)
    means = np.asarray(means, dtype=float)
    variances = np.broadcast_to(np.asarray(variances, dtype=float), means.shape)
    mean = np.sum(w * means, axis=-1)
    var = np.sum(w * (variances + (means - mean[..., None]) ** 2), axis=-1)
    return GaussianMsg.from_moments(mean, var)


def mil_precision(lam, Sigma):
    """``diag(lam) - diag(lam) Sigma diag(lam)``.

    When ``Sigma = (H^T H / s2 + diag(lam))^{-1}`` this equals
    ``(diag(lam)^{-1} + s2 (H^T H)^{-1})^{-1}`` without a second inversion.
    Broadcasts over leading axes.
    """
    lam = np.asarray(lam, dtype=float)
    Sigma = np.asarray(Sigma, dtype=float)
    n = lam.shape[-1]
    if Sigma.shape[-2:] != (n, n):
        raise DomainError(f"Sigma must be {n}x{n} to match lam, got {Sigma.shape[-2:]}")
    P = -lam[..., :, None] * Sigma * lam[..., None, :]
    idx = np.arange(n)
    P[..., idx, idx] += lam
    return P


def component_loglik(e, P):
    """Unnormalized Gaussian log-likelihood ``-e^T P e / 2`` of a residual.

    ``e`` may carry extra axes before the last (e.g. one row per mixture
    tuple); ``P`` broadcasts against them.
    """
    e = np.asarray(e, dtype=float)
    Pe = np.einsum("...ij,...j->...i", P, e)
    return -0.5 * np.einsum("...i,...i->...", e, Pe)
