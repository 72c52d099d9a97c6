"""Brute-force reference inference for small instances.

Nothing here shares code with the detectors' Gaussian algebra: MAP and the
exact marginals enumerate every hypothesis, and the cavity reference
integrates the message integrand numerically.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .channel import RealChannelInstance
from .constellation import Constellation
from .detectors.ep import NOISE_FLOOR
from .detectors.types import DetectionResult, Diagnostics
from .errors import BudgetExceededError, DomainError, QuadratureError
from .messages import DiscretePosterior, GaussianMsg, MixtureMsg

__all__ = [
    "EnumerationBudget",
    "GridSpec",
    "map_detect",
    "exact_marginals",
    "quadrature_cavity",
]

_CHUNK = 1 << 14


@dataclass(frozen=True)
class EnumerationBudget:
    max_hypotheses: int = 1 << 20

    def __post_init__(self):
        if self.max_hypotheses < 1:
            raise DomainError("max_hypotheses must be positive")


@dataclass(frozen=True)
class GridSpec:
    """Trapezoid grid in whitened coordinates.

    ``step`` and ``half_width`` are in units of the integrand's standard
    deviation along each whitened axis. The integral is recomputed at twice
    the step and the two results must agree to ``tol``.
    """

    step: float = 0.5
    half_width: float = 7.0
    tol: float = 1e-6


def _batched(inst: RealChannelInstance):
    if inst.batched:
        return inst.H, inst.y, np.broadcast_to(np.asarray(inst.noise_var_real, float), (inst.H.shape[0],)), False
    return inst.H[None], inst.y[None], np.array([float(inst.noise_var_real)]), True


def _hypotheses(c: Constellation, N: int, budget: EnumerationBudget) -> np.ndarray:
    P = c.num_real_points
    if P**N > budget.max_hypotheses:
        raise BudgetExceededError(
            f"{P}^{N} = {P**N} hypotheses exceed the budget of {budget.max_hypotheses}"
        )
    return np.indices((P,) * N).reshape(N, -1).T


def _log_likelihoods(H, y, s2, u_hyp):
    """``-||y - H u||^2 / (2 s2)`` for every trial and hypothesis, chunked."""
    B = H.shape[0]
    out = np.empty((B, u_hyp.shape[0]))
    for lo in range(0, u_hyp.shape[0], _CHUNK):
        blk = u_hyp[lo:lo + _CHUNK]
        r = y[:, None, :] - np.einsum("bij,hj->bhi", H, blk)
        out[:, lo:lo + _CHUNK] = -np.sum(r * r, axis=-1) / (2.0 * s2[:, None])
    return out


def map_detect(inst: RealChannelInstance, c: Constellation, budget: EnumerationBudget | None = None):
    """Exhaustive ``argmin ||y - H u||^2`` over all symbol vectors.

    The soft output is one-hot at the MAP vector; use
    :func:`exact_marginals` for the true per-symbol posteriors.
    """
    budget = budget or EnumerationBudget()
    H, y, s2, single = _batched(inst)
    N = H.shape[-1]
    hyp = _hypotheses(c, N, budget)
    u_hyp = c.real_points[hyp]
    B = H.shape[0]
    best = np.full(B, -np.inf)
    arg = np.zeros(B, dtype=np.int64)
    for lo in range(0, hyp.shape[0], _CHUNK):
        ll = _log_likelihoods(H, y, np.ones(B), u_hyp[lo:lo + _CHUNK])
        k = np.argmax(ll, axis=1)
        val = ll[np.arange(B), k]
        better = val > best
        best = np.where(better, val, best)
        arg = np.where(better, lo + k, arg)
    levels = hyp[arg]
    hard = c.real_points[levels]
    probs = (np.arange(c.num_real_points) == levels[..., None]).astype(float)
    post = DiscretePosterior(c.real_points, probs)
    diag = Diagnostics.empty(B)
    if single:
        return DetectionResult(hard[0], post[0], diag.squeeze())
    return DetectionResult(hard, post, diag)


def exact_marginals(inst: RealChannelInstance, c: Constellation, budget: EnumerationBudget | None = None):
    """Per-symbol posteriors ``p(u_i = a | y)`` by full enumeration."""
    budget = budget or EnumerationBudget()
    H, y, s2, single = _batched(inst)
    N = H.shape[-1]
    P = c.num_real_points
    hyp = _hypotheses(c, N, budget)
    s2 = np.maximum(s2, NOISE_FLOOR * c.real_energy)
    ll = _log_likelihoods(H, y, s2, c.real_points[hyp])
    ll -= ll.max(axis=1, keepdims=True)
    w = np.exp(ll)
    onehot = (hyp[..., None] == np.arange(P)).astype(float)  # (hyp, N, P)
    probs = np.einsum("bh,hnp->bnp", w, onehot)
    probs /= probs.sum(axis=-1, keepdims=True)
    post = DiscretePosterior(c.real_points, probs)
    return post[0] if single else post


# --------------------------------------------------------------------------
# numerical cavity integral
# --------------------------------------------------------------------------


def _prior_terms(priors, i, N):
    """Expand priors of nodes ``j != i`` into Gaussian component tuples.

    Returns a list of ``(log_weight, means, precisions)`` where the arrays
    are length-``N`` with precision 0 at node ``i``.
    """
    options = []
    for j in range(N):
        if j == i:
            options.append([(0.0, 0.0, 0.0)])
            continue
        p = priors[j]
        if isinstance(p, MixtureMsg):
            w = np.asarray(p.weights, dtype=float)
            opts = []
            for wk, ak in zip(w, np.asarray(p.centers, dtype=float)):
                if wk > 0:
                    # log of the normalized component density's weight
                    opts.append((np.log(wk), float(ak), 1.0 / float(p.sigma0_sq)))
            options.append(opts)
        elif isinstance(p, GaussianMsg):
            if not float(p.lam) > 0:
                raise DomainError(f"prior of node {j} is improper")
            options.append([(0.0, float(p.mean), float(p.lam))])
        else:
            raise DomainError(f"node {j} needs a GaussianMsg or MixtureMsg prior")
    terms = []
    for combo in itertools.product(*options):
        lw = sum(o[0] for o in combo)
        means = np.array([o[1] for o in combo])
        precs = np.array([o[2] for o in combo])
        terms.append((lw, means, precs))
    return terms


def _make_log_integrand(H, y, s2, means, precs):
    # normalized Gaussian prior densities, so mixture components compare correctly
    active = precs > 0
    log_norm = 0.5 * np.sum(np.log(precs[active] / (2.0 * np.pi)))

    def g(u):
        r = y - u @ H.T
        out = -np.sum(r * r, axis=-1) / (2.0 * s2)
        d = u - means
        out = out - 0.5 * np.sum(precs * d * d, axis=-1)
        return out + log_norm

    return g


def _mode_and_scale(g, N, scale):
    """Mode and Hessian of a quadratic log-density by finite differences."""
    u0 = np.zeros(N)
    E = np.eye(N) * scale
    grad = np.array([(g(u0 + E[k]) - g(u0 - E[k])) / (2 * scale[k]) for k in range(N)])
    hess = np.empty((N, N))
    for a in range(N):
        for b in range(N):
            hess[a, b] = (
                g(u0 + E[a] + E[b]) - g(u0 + E[a] - E[b]) - g(u0 - E[a] + E[b]) + g(u0 - E[a] - E[b])
            ) / (4 * scale[a] * scale[b])
    hess = 0.5 * (hess + hess.T)
    neg = -hess
    mode = u0 + np.linalg.solve(neg, grad)
    return mode, neg


def _grid_moments(g, mode, neg_hess, i, step, half_width):
    """``log Z`` and the first two moments of ``u_i`` on a whitened grid."""
    N = mode.size
    cov = np.linalg.inv(neg_hess)
    L = np.linalg.cholesky(0.5 * (cov + cov.T))
    axis = np.arange(-half_width, half_width + 0.5 * step, step)
    g0 = g(mode[None])[0]
    s0 = s1 = s2 = 0.0
    # iterate over the first axis to bound memory
    rest = np.stack(np.meshgrid(*([axis] * (N - 1)), indexing="ij"), -1).reshape(-1, N - 1) if N > 1 else np.zeros((1, 0))
    for v0 in axis:
        v = np.concatenate([np.full((rest.shape[0], 1), v0), rest], axis=1)
        u = mode + v @ L.T
        w = np.exp(g(u) - g0)
        s0 += w.sum()
        s1 += (w * u[:, i]).sum()
        s2 += (w * u[:, i] ** 2).sum()
    log_z = g0 + np.log(s0) + np.log(abs(np.linalg.det(L))) + N * np.log(step)
    m1 = s1 / s0
    return log_z, m1, s2 / s0


def _integrate(terms, H, y, s2, i, step, half_width, scale):
    N = H.shape[1]
    logs, m1s, m2s = [], [], []
    for lw, means, precs in terms:
        g = _make_log_integrand(H, y, s2, means, precs)
        mode, neg = _mode_and_scale(g, N, scale)
        log_z, m1, m2 = _grid_moments(g, mode, neg, i, step, half_width)
        logs.append(lw + log_z)
        m1s.append(m1)
        m2s.append(m2)
    logs = np.array(logs)
    w = np.exp(logs - logsumexp(logs))
    mean = float(np.dot(w, m1s))
    second = float(np.dot(w, m2s))
    return mean, second - mean**2


def quadrature_cavity(
    inst: RealChannelInstance,
    priors,
    i: int,
    grid: GridSpec | None = None,
) -> GaussianMsg:
    """Mean and variance of the cavity of node ``i`` by numerical integration.

    ``priors[j]`` is a :class:`GaussianMsg` or :class:`MixtureMsg` for every
    node ``j != i`` (entry ``i`` is ignored). Integrates
    ``N(y; H u, s2 I) prod_{j != i} prior_j(u_j)`` over ``u`` with a
    trapezoid rule; mixture priors are integrated component by component.

    Raises
    ------
    QuadratureError
        If halving the grid resolution changes the moments by more than
        ``grid.tol``.
    """
    grid = grid or GridSpec()
    if inst.batched:
        raise DomainError("quadrature_cavity takes a single instance")
    H, y = np.asarray(inst.H, float), np.asarray(inst.y, float)
    N = H.shape[1]
    if N > 4:
        raise DomainError("dense-grid integration is limited to 4 real dimensions")
    s2 = float(inst.noise_var_real)
    if not s2 > 0:
        raise DomainError("quadrature needs a positive noise variance")
    terms = _prior_terms(priors, i, N)
    # finite-difference step per axis: small relative to each axis' spread
    prec_diag = np.sum(H * H, axis=0) / s2 + np.max([t[2] for t in terms], axis=0)
    scale = 1e-2 / np.sqrt(prec_diag)
    fine = _integrate(terms, H, y, s2, i, grid.step, grid.half_width, scale)
    coarse = _integrate(terms, H, y, s2, i, 2 * grid.step, grid.half_width, scale)
    if abs(fine[0] - coarse[0]) > grid.tol or abs(fine[1] - coarse[1]) > grid.tol:
        raise QuadratureError(
            f"grid not converged: mean {fine[0]} vs {coarse[0]}, var {fine[1]} vs {coarse[1]}"
        )
    return GaussianMsg.from_moments(fine[0], fine[1])
