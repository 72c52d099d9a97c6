"""Expectation propagation over the real-valued MIMO model.

The iteration keeps a Gaussian prior ``N(gamma / lam, 1 / lam)`` per real
symbol. Multiplying the priors with the channel likelihood gives the joint
Gaussian ``(Sigma, mu)``; removing node ``i``'s own prior from its marginal
gives the cavity ``(t_i, h_i^2)``; moment matching ``cavity x indicator``
and dividing the cavity back out gives the next prior.

All array helpers work on a leading trial axis ``B``.
"""

from __future__ import annotations

import numpy as np

from ..channel import RealChannelInstance
from ..constellation import Constellation
from ..errors import ConfigurationError, DomainError, SingularityError
from ..messages import DiscretePosterior, GaussianMsg, moment_match_discrete
from .types import DetectionResult, Diagnostics, EpState

__all__ = [
    "NOISE_FLOOR",
    "Problem",
    "as_batch",
    "lmmse_joint",
    "cavity_from_joint",
    "ep_prior_update",
    "ep_detect",
]

# Noise variance used by the detectors when an instance is noiseless,
# relative to the real-component energy.
NOISE_FLOOR = 1e-10


def as_batch(inst: RealChannelInstance) -> tuple[RealChannelInstance, bool]:
    if inst.batched:
        return inst, False
    return (
        RealChannelInstance(
            inst.H[None],
            inst.y[None],
            np.array([float(inst.noise_var_real)]),
            inst.true_symbols[None],
        ),
        True,
    )


def _inv(M: np.ndarray) -> np.ndarray:
    try:
        out = np.linalg.inv(M)
    except np.linalg.LinAlgError as exc:
        raise SingularityError(str(exc)) from exc
    if not np.all(np.isfinite(out)):
        raise SingularityError("non-finite inverse")
    return out


class Problem:
    """Batch of real instances with the products every detector needs."""

    def __init__(self, inst: RealChannelInstance, c: Constellation):
        inst, self.squeeze = as_batch(inst)
        self.inst = inst
        self.c = c
        self.H = inst.H
        self.y = inst.y
        B, rows, N = self.H.shape
        self.B, self.N = B, N
        nv = np.broadcast_to(np.asarray(inst.noise_var_real, dtype=float), (B,))
        self.s2 = np.maximum(nv, NOISE_FLOOR * c.real_energy)
        Ht = np.swapaxes(self.H, -1, -2)
        self.gram = Ht @ self.H
        self.Hty = np.einsum("bij,bj->bi", Ht, self.y)
        self.A0 = self.gram / self.s2[:, None, None]
        self.b = self.Hty / self.s2[:, None]
        self._zf = None

    @property
    def zf(self) -> np.ndarray:
        """Least-squares estimate ``(H^T H)^{-1} H^T y``."""
        if self._zf is None:
            try:
                self._zf = np.linalg.solve(self.gram, self.Hty[..., None])[..., 0]
            except np.linalg.LinAlgError as exc:
                raise SingularityError(str(exc)) from exc
        return self._zf

    def joint(self, lam: np.ndarray, gam: np.ndarray):
        """``Sigma = (H^T H / s2 + diag(lam))^{-1}``, ``mu = Sigma (H^T y / s2 + gam)``."""
        M = self.A0.copy()
        idx = np.arange(self.N)
        M[:, idx, idx] += lam
        Sigma = _inv(M)
        Sigma = 0.5 * (Sigma + np.swapaxes(Sigma, -1, -2))
        mu = np.einsum("bij,bj->bi", Sigma, self.b + gam)
        return Sigma, mu

    def initial_prior(self):
        lam = np.full((self.B, self.N), 1.0 / self.c.real_energy)
        return lam, np.zeros((self.B, self.N))


def cavity_arrays(sigma2, mu, lam, gam, prev=None):
    """Remove each node's prior from its joint marginal.

    Where ``1 - sigma2 * lam <= 0`` (or the result is not finite) the cavity
    breaks down; those entries keep ``prev`` when given, else fall back to the
    joint marginal itself. Returns ``(t, h2, breakdown_mask)``.
    """
    with np.errstate(divide="ignore", invalid="ignore"):
        denom = 1.0 - sigma2 * lam
        h2 = sigma2 / denom
        t = h2 * (mu / sigma2 - gam)
    bad = ~(denom > 0) | ~np.isfinite(h2) | ~np.isfinite(t) | ~(h2 > 0)
    if np.any(bad):
        t_old, h2_old = prev if prev is not None else (mu, sigma2)
        t = np.where(bad, t_old, t)
        h2 = np.where(bad, h2_old, h2)
    return t, h2, bad


def prior_update_arrays(t, h2, lam_old, gam_old, c: Constellation, damping, floor, undamped=None):
    """Moment-match and divide out the cavity for every node.

    Returns ``(lam, gam, improper, posterior)``. Improper results are
    replaced by the uninformative prior ``N(0, E_s / 2)``; proper ones are
    smoothed with the previous prior in natural parameters, except where
    ``undamped`` is set.
    """
    post, matched = moment_match_discrete(GaussianMsg.from_moments(t, h2), c)
    vp = np.maximum(matched.var, floor)
    lam_new = 1.0 / vp - 1.0 / h2
    gam_new = matched.mean / vp - t / h2
    improper = ~(lam_new > 0)
    d = np.full(lam_new.shape, float(damping))
    if undamped is not None:
        d = np.where(undamped, 1.0, d)
    lam = d * lam_new + (1.0 - d) * lam_old
    gam = d * gam_new + (1.0 - d) * gam_old
    lam = np.where(improper, 1.0 / c.real_energy, lam)
    gam = np.where(improper, 0.0, gam)
    return lam, gam, improper, post


def finish(problem: Problem, t, h2, diag: Diagnostics, state: EpState | None) -> DetectionResult:
    post, _ = moment_match_discrete(GaussianMsg.from_moments(t, h2), problem.c)
    hard = post.argmax()
    if problem.squeeze:
        hard = hard[0]
        post = post[0]
        diag = diag.squeeze()
        if state is not None:
            state = EpState(*(getattr(state, f)[0] for f in
                              ("gamma", "lam", "joint_mean", "joint_cov", "cavity_mean", "cavity_var")),
                            iteration=state.iteration)
    return DetectionResult(hard, post, diag, state)


def lmmse_joint(inst: RealChannelInstance, gamma, lam):
    """Joint Gaussian of the channel likelihood times the priors.

    With ``gamma = 0`` and ``lam = 2 / E_s`` this is the conventional LMMSE
    estimate and its error covariance.
    """
    lam = np.asarray(lam, dtype=float)
    if np.any(~(lam > 0)):
        raise DomainError("prior precisions must be positive")
    single = not inst.batched
    inst_b, _ = as_batch(inst)
    N = inst_b.H.shape[-1]
    s2 = np.broadcast_to(np.asarray(inst_b.noise_var_real, dtype=float), (inst_b.H.shape[0],))
    if np.any(~(s2 > 0)):
        raise DomainError("lmmse_joint needs a positive noise variance")
    Ht = np.swapaxes(inst_b.H, -1, -2)
    M = Ht @ inst_b.H / s2[:, None, None]
    M = M + np.broadcast_to(lam, (inst_b.H.shape[0], N))[..., None] * np.eye(N)
    if np.any(~(np.linalg.cond(M) < 1.0 / np.finfo(float).eps)):
        raise SingularityError("joint precision matrix is numerically singular")
    Sigma = _inv(M)
    Sigma = 0.5 * (Sigma + np.swapaxes(Sigma, -1, -2))
    rhs = np.einsum("bij,bj->bi", Ht, inst_b.y) / s2[:, None] + np.asarray(gamma, dtype=float)
    mu = np.einsum("bij,bj->bi", Sigma, rhs)
    if single:
        return mu[0], Sigma[0]
    return mu, Sigma


def cavity_from_joint(state: EpState, i: int) -> GaussianMsg:
    """Cavity of node ``i`` from a single-instance state.

    Raises
    ------
    ArithmeticError
        If ``1 - sigma_i^2 lam_i <= 0`` (cavity breakdown).
    """
    s2 = float(np.asarray(state.joint_cov)[i, i])
    lam = float(np.asarray(state.lam)[i])
    denom = 1.0 - s2 * lam
    if not denom > 0:
        raise ArithmeticError(f"cavity breakdown at node {i}: 1 - sigma^2 * lam = {denom}")
    h2 = s2 / denom
    t = h2 * (float(np.asarray(state.joint_mean)[i]) / s2 - float(np.asarray(state.gamma)[i]))
    return GaussianMsg.from_moments(t, h2)


def ep_prior_update(
    cavity: GaussianMsg,
    c: Constellation,
    damping: float = 1.0,
    previous: GaussianMsg | None = None,
    variance_floor: float = 1e-8,
):
    """Prior refresh for one or more nodes.

    Returns ``(prior, improper, posterior)``. ``damping`` weights the new
    natural parameters against ``previous`` (no smoothing when ``previous``
    is None).
    """
    t = np.asarray(cavity.mean, dtype=float)
    h2 = np.asarray(cavity.var, dtype=float)
    if np.any(~(h2 > 0)):
        raise DomainError("cavity must be proper")
    if previous is None:
        lam_old, gam_old, d = np.zeros_like(t), np.zeros_like(t), 1.0
    else:
        lam_old, gam_old, d = previous.lam, previous.gamma, damping
    lam, gam, improper, post = prior_update_arrays(
        t, h2, lam_old, gam_old, c, d, variance_floor * c.energy
    )
    return GaussianMsg.from_natural(gam, lam), improper, post


def ep_detect(
    inst: RealChannelInstance,
    c: Constellation,
    L: int = 1,
    damping: float = 0.9,
    variance_floor: float = 1e-8,
) -> DetectionResult:
    """EP detection with ``L`` prior refreshes (``L = 0`` is LMMSE).

    Hard decisions are the per-node argmax of ``cavity x indicator`` after
    the last refresh.
    """
    if L < 0:
        raise ConfigurationError("L must be >= 0")
    pb = Problem(inst, c)
    floor = variance_floor * c.energy
    diag = Diagnostics.empty(pb.B, L, 0)
    lam, gam = pb.initial_prior()
    Sigma, mu = pb.joint(lam, gam)
    t, h2, _ = cavity_arrays(np.diagonal(Sigma, axis1=-2, axis2=-1), mu, lam, gam)
    for it in range(L):
        lam, gam, improper, _ = prior_update_arrays(t, h2, lam, gam, c, damping, floor)
        diag.improper_counts[:, it] = improper.sum(axis=-1)
        Sigma, mu = pb.joint(lam, gam)
        t, h2, bad = cavity_arrays(np.diagonal(Sigma, axis1=-2, axis2=-1), mu, lam, gam, (t, h2))
        diag.cavity_breakdowns[:, it] = bad.sum(axis=-1)
    state = EpState(gam, lam, mu, Sigma, t, h2, iteration=L)
    return finish(pb, t, h2, diag, state)
