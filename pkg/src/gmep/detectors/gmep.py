"""Gaussian-mixture expectation propagation (GMEP).

GMEP runs the EP iteration but, whenever a prior refresh would produce a
negative variance, it replaces the priors of up to ``max_mixture_nodes`` such
nodes by a mixture of narrow Gaussians centred on the plausible
constellation points. All mixture components share the variance
``sigma0_sq``, so one joint covariance serves every component tuple and only
the joint means differ from tuple to tuple. Tuple weights come from the
likelihood of the least-squares statistic, whose precision is obtained from
the already inverted matrix. A mixture node's own cavity is obtained by
swapping its mixture for a broad dummy prior through a rank-1 correction.

Array helpers carry a leading trial axis ``B``; mixture slots are a second
axis ``S`` (unused slots hold node ``-1``) and components a third axis ``K``
(absent components have log-weight ``-inf``).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..channel import RealChannelInstance
from ..constellation import Constellation
from ..errors import ComplexityGuardError, DomainError
from ..messages import (
    GaussianMsg,
    MixtureMsg,
    component_loglik,
    mil_precision,
    moment_match_discrete,
    normalize_log_weights,
    posterior_entropy,
)
from .ep import Problem, _inv, as_batch, cavity_arrays, finish, prior_update_arrays
from .types import DetectionResult, Diagnostics, EpState, GmepConfig

__all__ = [
    "MixtureJoint",
    "select_mixture_nodes",
    "build_mixture_prior",
    "mixture_joint",
    "mixture_cavity",
    "mixture_node_cavity",
    "smooth_cavity",
    "gmep_detect",
]

_RANK1_EPS = 1e-12


# --------------------------------------------------------------------------
# node selection and mixture construction
# --------------------------------------------------------------------------


def _select_batch(improper, entropy, budget, rng=None):
    """Up to ``budget`` flagged nodes per trial, lowest entropy first."""
    B, N = improper.shape
    if budget == 0:
        return np.full((B, 0), -1, dtype=np.int64)
    key = entropy if rng is None else rng.random((B, N))
    key = np.where(improper, key, np.inf)
    # stable sort: equal keys keep ascending node order
    order = np.argsort(key, axis=-1, kind="stable")[:, :budget]
    chosen = np.take_along_axis(improper, order, axis=-1)
    nodes = np.where(chosen, order, -1).astype(np.int64)
    if nodes.shape[1] < budget:
        pad = np.full((B, budget - nodes.shape[1]), -1, dtype=np.int64)
        nodes = np.concatenate([nodes, pad], axis=1)
    return nodes


def select_mixture_nodes(flags, posteriors, budget: int) -> list[int]:
    """Pick which negative-variance nodes get a mixture prior.

    ``posteriors`` is either a :class:`DiscretePosterior` over all nodes or a
    vector of per-node entropies. Returns at most ``budget`` flagged node
    indices by ascending entropy, ties to the lower index.
    """
    if budget < 0:
        raise DomainError("budget must be >= 0")
    flags = np.asarray(flags, dtype=bool)
    if hasattr(posteriors, "probs"):
        ent = posterior_entropy(posteriors)
    else:
        ent = np.asarray(posteriors, dtype=float)
    nodes = _select_batch(flags[None], ent[None], budget)[0]
    return [int(s) for s in nodes if s >= 0]


def _components_batch(probs, active, threshold, min_components):
    """Surviving mixture components for each slot.

    ``probs`` is ``(B, S, P)``. Returns ``(centers_idx, logalpha, orders)``
    with ``centers_idx`` of shape ``(B, S, K)`` indexing the constellation,
    ``logalpha`` 0 for kept and ``-inf`` for absent components.
    """
    B, S, P = probs.shape
    keep = probs > threshold
    k_min = min(min_components, P)
    rank = np.argsort(-probs, axis=-1, kind="stable")
    top = np.zeros_like(keep)
    np.put_along_axis(top, rank[..., :k_min], True, axis=-1)
    short = keep.sum(axis=-1, keepdims=True) < k_min
    keep = np.where(short, keep | top, keep)
    keep &= active[..., None]
    orders = keep.sum(axis=-1)
    K = max(1, int(orders.max()) if orders.size else 1)
    # kept indices first, in ascending point order
    pos = np.argsort(~keep, axis=-1, kind="stable")[..., :K]
    present = np.take_along_axis(keep, pos, axis=-1)
    logalpha = np.where(present, 0.0, -np.inf)
    # an unused slot contributes one neutral component
    logalpha[..., 0] = np.where(active, logalpha[..., 0], 0.0)
    return pos, logalpha, orders


def build_mixture_prior(cavity: GaussianMsg, c: Constellation, cfg: GmepConfig) -> MixtureMsg:
    """Mixture prior for one node: unit weight at every point whose
    posterior under ``cavity`` exceeds the pruning threshold (at least
    ``cfg.min_components`` points)."""
    post, _ = moment_match_discrete(cavity, c)
    probs = np.asarray(post.probs, dtype=float).reshape(1, 1, -1)
    pos, logalpha, orders = _components_batch(
        probs, np.ones((1, 1), bool), cfg.prune_threshold, cfg.min_components
    )
    k = int(orders[0, 0])
    idx = pos[0, 0, :k]
    return MixtureMsg(np.ones(k), c.real_points[idx], cfg.resolved_sigma0_sq(c.spacing))


# --------------------------------------------------------------------------
# tuple machinery
# --------------------------------------------------------------------------


def _tuple_grid(K: int, S: int) -> np.ndarray:
    if S == 0:
        return np.zeros((1, 0), dtype=np.int64)
    return np.indices((K,) * S).reshape(S, -1).T


def _tuple_moments(Sigma, mu0, z, lam_eff, mean_base, nodes, centers, logalpha, inv_s0):
    """Joint means and normalized weights of every component tuple.

    ``mu0`` is the joint mean with zero natural mean at mixture nodes;
    ``mean_base`` holds prior means (0 at mixture nodes). Returns
    ``(mu, weights, loglik)`` shaped ``(B, T, N)``, ``(B, T)``, ``(B, T)``.
    """
    B, N = mu0.shape
    S = nodes.shape[1]
    K = centers.shape[2] if S else 1
    grid = _tuple_grid(K, S)
    slots = np.arange(S)[None, :]
    c_sel = centers[:, slots, grid]                   # (B, T, S)
    la_sel = logalpha[:, slots, grid].sum(axis=-1)    # (B, T)
    active = nodes >= 0
    safe = np.where(active, nodes, 0)
    cols = Sigma[np.arange(B)[:, None], :, safe]      # (B, S, N)
    gadd = c_sel * inv_s0 * active[:, None, :]
    mu = mu0[:, None, :] + np.einsum("bts,bsn->btn", gadd, cols)
    onehot = ((np.arange(N) == safe[..., None]) & active[..., None]).astype(float)
    e = (z - mean_base)[:, None, :] - np.einsum("bts,bsn->btn", c_sel, onehot)
    P = mil_precision(lam_eff, Sigma)
    loglik = component_loglik(e, P[:, None])
    with np.errstate(invalid="ignore"):
        logw = np.where(np.isfinite(la_sel), loglik + la_sel, -np.inf)
    return mu, normalize_log_weights(logw), loglik


def _project_cavities(mu, w, sigma2, lam, gam, exact=True):
    """Per-tuple cavities with a shared variance, projected to one Gaussian.

    With ``exact`` the tuple weights of node ``i`` are rescaled by the
    normalizer left over when node ``i``'s own prior is divided out of the
    tuple's joint marginal, ``exp(t^2 / 2h^2 - mu^2 / 2 sigma^2)``; this makes
    the mixing weights the likelihoods with that prior removed. Without it
    every node uses the shared tuple weights ``w``.

    Returns ``(t, h2, node_breakdown, dropped)``; tuples whose cavity mean
    is not finite are dropped and the weights renormalized per node.
    """
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        denom = 1.0 - sigma2 * lam
        h2 = sigma2 / denom
        tk = h2[:, None, :] * (mu / sigma2[:, None, :] - gam[:, None, :])
        live = w[..., None] > 0
        ok = np.isfinite(tk) & live
        dropped = np.sum(~np.isfinite(tk) & live, axis=(1, 2))
        logw = np.where(ok, np.log(np.where(ok, w[..., None], 1.0)), -np.inf)
        if exact:
            corr = tk**2 / (2.0 * h2[:, None, :]) - mu**2 / (2.0 * sigma2[:, None, :])
            logw = np.where(ok & np.isfinite(corr), logw + corr, -np.inf)
        wk = normalize_log_weights(logw, axis=1)
        tk0 = np.where(ok, tk, 0.0)
        t = np.sum(wk * tk0, axis=1)
        spread = np.sum(wk * (tk0 - t[:, None, :]) ** 2, axis=1)
    h2p = h2 + spread
    live_any = np.any(np.isfinite(logw), axis=1)
    bad = ~(denom > 0) | ~live_any | ~np.isfinite(t) | ~np.isfinite(h2p) | ~(h2p > 0)
    return t, h2p, bad, dropped


def _node_cavity_slot(Sigma, b, z, lam_eff, gam_base, mean_base, nodes, centers, logalpha,
                      inv_s0, j, dummy_lam, dummy_gam, A0=None, exact=True):
    """Cavity of the mixture node in slot ``j`` via a dummy-prior swap.

    The swap changes one diagonal entry of the precision, so the new
    covariance is a Sherman-Morrison update of ``Sigma``. Other slots remain
    mixtures and are enumerated. Returns ``(t, h2, rank1_fallback)`` per
    trial.
    """
    B, N = lam_eff.shape
    ar = np.arange(B)
    s = nodes[:, j]
    col = Sigma[ar, :, s]
    delta = dummy_lam - inv_s0
    denom = 1.0 + delta * col[ar, s]
    fallback = np.abs(denom) < _RANK1_EPS
    with np.errstate(divide="ignore", invalid="ignore"):
        coef = np.where(fallback, 0.0, delta / denom)
    Sig2 = Sigma - coef[:, None, None] * col[:, :, None] * col[:, None, :]
    lam2 = lam_eff.copy()
    lam2[ar, s] = dummy_lam
    if np.any(fallback):
        M = A0[fallback].copy()
        idx = np.arange(N)
        M[:, idx, idx] += lam2[fallback]
        Sig2[fallback] = _inv(M)
    gam2 = gam_base.copy()
    gam2[ar, s] = dummy_gam
    mean2 = mean_base.copy()
    mean2[ar, s] = dummy_gam / dummy_lam
    nodes2 = nodes.copy()
    nodes2[:, j] = -1
    logalpha2 = logalpha.copy()
    logalpha2[:, j, :] = -np.inf
    logalpha2[:, j, 0] = 0.0
    centers2 = centers.copy()
    centers2[:, j, :] = 0.0
    mu02 = np.einsum("bij,bj->bi", Sig2, b + gam2)
    mu2, w2, _ = _tuple_moments(Sig2, mu02, z, lam2, mean2, nodes2, centers2, logalpha2, inv_s0)
    sig_ss = Sig2[ar, s, s]
    t, h2, _, _ = _project_cavities(
        mu2[ar, :, s][..., None], w2, sig_ss[:, None],
        np.full((B, 1), dummy_lam), np.full((B, 1), dummy_gam), exact,
    )
    return t[:, 0], h2[:, 0], fallback


# --------------------------------------------------------------------------
# single-instance API
# --------------------------------------------------------------------------


@dataclass(eq=False)
class MixtureJoint:
    """Joint Gaussians of all component tuples for one instance.

    ``Sigma`` is shared by every tuple; ``means[k]``, ``weights[k]`` and
    ``loglik[k]`` belong to the tuple of centers ``tuples[k]`` (one center
    per mixture node, in ``nodes`` order). Invalid tuples have weight 0.
    """

    Sigma: np.ndarray
    means: np.ndarray
    weights: np.ndarray
    loglik: np.ndarray
    tuples: np.ndarray
    nodes: list
    gamma: np.ndarray
    lam: np.ndarray


def _pack_mixtures(mixtures: dict, c_points=None):
    nodes = sorted(mixtures)
    if not nodes:
        return np.zeros((1, 0), np.int64), np.zeros((1, 0, 1)), np.zeros((1, 0, 1)), None
    s0 = {float(mixtures[s].sigma0_sq) for s in nodes}
    if len(s0) != 1:
        raise DomainError("all mixture nodes must share sigma0_sq")
    K = max(mixtures[s].count for s in nodes)
    centers = np.zeros((1, len(nodes), K))
    logalpha = np.full((1, len(nodes), K), -np.inf)
    for j, s in enumerate(nodes):
        m = mixtures[s]
        centers[0, j, : m.count] = m.centers
        with np.errstate(divide="ignore"):
            logalpha[0, j, : m.count] = np.log(np.asarray(m.weights, dtype=float))
    return np.array([nodes], dtype=np.int64), centers, logalpha, s0.pop()


def _check_tuple_count(logalpha, max_tuples):
    counts = np.prod(np.maximum(np.isfinite(logalpha).sum(axis=-1), 1), axis=-1)
    if np.any(counts > max_tuples):
        raise ComplexityGuardError(
            f"{int(counts.max())} mixture tuples exceed the cap of {max_tuples}"
        )


def _single_setup(inst, gamma, lam, mixtures):
    inst_b, _ = as_batch(inst)
    N = inst_b.H.shape[-1]
    nodes, centers, logalpha, s0 = _pack_mixtures(mixtures)
    gamma = np.asarray(gamma, dtype=float).reshape(1, N).copy()
    lam = np.asarray(lam, dtype=float).reshape(1, N).copy()
    mix_mask = np.zeros(N, bool)
    mix_mask[nodes[0]] = True
    if np.any(~(lam[0, ~mix_mask] > 0)):
        raise DomainError("prior precisions of Gaussian nodes must be positive")
    inv_s0 = 1.0 / s0 if s0 is not None else 0.0
    lam_eff = lam.copy()
    lam_eff[0, mix_mask] = inv_s0
    gam_base = gamma.copy()
    gam_base[0, mix_mask] = 0.0
    mean_base = gamma / np.where(mix_mask, 1.0, lam)
    mean_base[0, mix_mask] = 0.0
    return inst_b, nodes, centers, logalpha, inv_s0, lam_eff, gam_base, mean_base


def _direct_problem(inst_b):
    s2 = np.asarray(inst_b.noise_var_real, dtype=float).reshape(-1)
    if np.any(~(s2 > 0)):
        raise DomainError("a positive noise variance is required")
    Ht = np.swapaxes(inst_b.H, -1, -2)
    gram = Ht @ inst_b.H
    Hty = np.einsum("bij,bj->bi", Ht, inst_b.y)
    z = np.linalg.solve(gram, Hty[..., None])[..., 0]
    return gram / s2[:, None, None], Hty / s2[:, None], z


def mixture_joint(inst: RealChannelInstance, gamma, lam, mixtures: dict, max_tuples: int = 1024):
    """Joint Gaussians for every tuple of mixture components.

    ``mixtures`` maps node index to :class:`MixtureMsg`; ``gamma``/``lam``
    are the Gaussian priors of the other nodes (entries at mixture nodes are
    ignored). The covariance is inverted once; tuple means are corrections
    along the mixture nodes' columns.
    """
    inst_b, nodes, centers, logalpha, inv_s0, lam_eff, gam_base, mean_base = _single_setup(
        inst, gamma, lam, mixtures
    )
    _check_tuple_count(logalpha, max_tuples)
    A0, b, z = _direct_problem(inst_b)
    N = lam_eff.shape[1]
    M = A0.copy()
    M[:, np.arange(N), np.arange(N)] += lam_eff
    Sigma = _inv(M)
    Sigma = 0.5 * (Sigma + np.swapaxes(Sigma, -1, -2))
    mu0 = np.einsum("bij,bj->bi", Sigma, b + gam_base)
    mu, w, ll = _tuple_moments(Sigma, mu0, z, lam_eff, mean_base, nodes, centers, logalpha, inv_s0)
    S = nodes.shape[1]
    K = centers.shape[2]
    grid = _tuple_grid(K, S)
    tuples = centers[0][np.arange(S)[None, :], grid] if S else np.zeros((1, 0))
    return MixtureJoint(Sigma[0], mu[0], w[0], ll[0], tuples, list(nodes[0]), gam_base[0], lam_eff[0])


def mixture_cavity(
    mj: MixtureJoint, i: int, prior_i: GaussianMsg | None = None, exact: bool = True
) -> GaussianMsg:
    """Projected cavity of a Gaussian-prior node ``i`` under a mixture joint.

    ``exact=False`` mixes the per-tuple cavities with the shared tuple
    weights ``mj.weights`` instead of the node-specific ones.
    """
    if i in mj.nodes:
        raise DomainError("node carries a mixture; use mixture_node_cavity")
    gam = mj.gamma if prior_i is None else mj.gamma.copy()
    lam = mj.lam if prior_i is None else mj.lam.copy()
    if prior_i is not None:
        gam[i], lam[i] = float(prior_i.gamma), float(prior_i.lam)
    sigma2 = np.diagonal(mj.Sigma)[None]
    t, h2, bad, _ = _project_cavities(
        mj.means[None], mj.weights[None], sigma2, lam[None], gam[None], exact
    )
    if bad[0, i]:
        raise ArithmeticError(f"cavity breakdown at node {i}")
    return GaussianMsg.from_moments(t[0, i], h2[0, i])


def mixture_node_cavity(
    inst: RealChannelInstance,
    gamma,
    lam,
    mixtures: dict,
    s: int,
    dummy: GaussianMsg | None = None,
    energy: float = 1.0,
    exact: bool = True,
) -> GaussianMsg:
    """Cavity of mixture node ``s``.

    The mixture at ``s`` is swapped for ``dummy`` (default ``N(0, E_s/2)``)
    by a rank-1 correction of the shared covariance; remaining mixture nodes
    are enumerated and projected.
    """
    if s not in mixtures:
        raise DomainError("node does not carry a mixture")
    if dummy is None:
        dummy = GaussianMsg.from_moments(0.0, energy / 2.0)
    inst_b, nodes, centers, logalpha, inv_s0, lam_eff, gam_base, mean_base = _single_setup(
        inst, gamma, lam, mixtures
    )
    A0, b, z = _direct_problem(inst_b)
    N = lam_eff.shape[1]
    M = A0.copy()
    M[:, np.arange(N), np.arange(N)] += lam_eff
    Sigma = _inv(M)
    Sigma = 0.5 * (Sigma + np.swapaxes(Sigma, -1, -2))
    j = list(nodes[0]).index(s)
    t, h2, _ = _node_cavity_slot(
        Sigma, b, z, lam_eff, gam_base, mean_base, nodes, centers, logalpha, inv_s0, j,
        float(dummy.lam), float(dummy.gamma), A0, exact,
    )
    return GaussianMsg.from_moments(t[0], h2[0])


def smooth_cavity(new: GaussianMsg, old: GaussianMsg, beta: float) -> GaussianMsg:
    """Convex combination of cavity moments, ``beta`` on the new message."""
    if not 0.0 <= beta <= 1.0:
        raise DomainError("beta must lie in [0, 1]")
    return GaussianMsg.from_moments(
        beta * np.asarray(new.mean) + (1.0 - beta) * np.asarray(old.mean),
        beta * np.asarray(new.var) + (1.0 - beta) * np.asarray(old.var),
    )


# --------------------------------------------------------------------------
# detector
# --------------------------------------------------------------------------


def gmep_detect(inst: RealChannelInstance, c: Constellation, cfg: GmepConfig | None = None) -> DetectionResult:
    """GMEP detection.

    Follows :func:`~gmep.detectors.ep.ep_detect` step for step; on a trial
    where no prior refresh is ever improper the arithmetic is the same and
    so are the outputs.
    """
    cfg = cfg or GmepConfig()
    pb = Problem(inst, c)
    B, N = pb.B, pb.N
    L, S = cfg.iterations, cfg.max_mixture_nodes
    floor = cfg.variance_floor * c.energy
    s0 = cfg.resolved_sigma0_sq(c.spacing)
    inv_s0 = 1.0 / s0
    dummy_lam, dummy_gam = 1.0 / c.real_energy, 0.0
    rng = np.random.default_rng(cfg.selection_seed) if cfg.selection == "random" else None
    diag = Diagnostics.empty(B, L, S)

    lam, gam = pb.initial_prior()
    Sigma, mu = pb.joint(lam, gam)
    t, h2, _ = cavity_arrays(np.diagonal(Sigma, axis1=-2, axis2=-1), mu, lam, gam)
    was_mix = np.zeros((B, N), dtype=bool)
    for it in range(L):
        lam, gam, improper, post = prior_update_arrays(
            t, h2, lam, gam, c, cfg.damping, floor, undamped=was_mix
        )
        diag.improper_counts[:, it] = improper.sum(axis=-1)
        nodes = _select_batch(improper, posterior_entropy(post), S, rng)
        slot_active = nodes >= 0
        mix_trials = np.flatnonzero(slot_active.any(axis=1))
        mix_mask = np.zeros((B, N), dtype=bool)
        if mix_trials.size:
            r, j = np.nonzero(slot_active)
            mix_mask[r, nodes[r, j]] = True
        lam_eff = np.where(mix_mask, inv_s0, lam)
        gam_base = np.where(mix_mask, 0.0, gam)

        Sigma, mu = pb.joint(lam_eff, gam_base)
        sigma2 = np.diagonal(Sigma, axis1=-2, axis2=-1)
        t_old, h2_old = t, h2
        t, h2, bad = cavity_arrays(sigma2, mu, lam_eff, gam_base, (t_old, h2_old))

        if mix_trials.size:
            m = mix_trials
            nd = nodes[m]
            probs = np.take_along_axis(
                post.probs[m], np.where(slot_active[m], nd, 0)[..., None], axis=1
            )
            pos, logalpha, orders = _components_batch(
                probs, slot_active[m], cfg.prune_threshold, cfg.min_components
            )
            _check_tuple_count(logalpha, cfg.max_tuples)
            diag.mixture_nodes[m, it] = nd
            diag.mixture_orders[m, it] = orders
            centers = c.real_points[pos]
            mean_base = np.where(mix_mask[m], 0.0, gam_base[m] / np.where(mix_mask[m], 1.0, lam_eff[m]))
            z = pb.zf[m]
            mu_k, w, _ = _tuple_moments(
                Sigma[m], mu[m], z, lam_eff[m], mean_base, nd, centers, logalpha, inv_s0
            )
            tm, h2m, badm, dropped = _project_cavities(
                mu_k, w, sigma2[m], lam_eff[m], gam_base[m], cfg.exact_cavity_weights
            )
            tm = np.where(badm, t_old[m], tm)
            h2m = np.where(badm, h2_old[m], h2m)
            diag.dropped_tuples[m, it] = dropped
            bad[m] = badm
            for jj in range(S):
                sub = np.flatnonzero(slot_active[m, jj])
                if not sub.size:
                    continue
                ms = m[sub]
                ts, h2s, fb = _node_cavity_slot(
                    Sigma[ms], pb.b[ms], z[sub], lam_eff[ms], gam_base[ms], mean_base[sub],
                    nd[sub], centers[sub], logalpha[sub], inv_s0, jj, dummy_lam, dummy_gam,
                    pb.A0[ms], cfg.exact_cavity_weights,
                )
                sn = nd[sub, jj]
                ok = (h2s > 0) & np.isfinite(h2s) & np.isfinite(ts)
                tm[sub, sn] = np.where(ok, ts, t_old[ms, sn])
                h2m[sub, sn] = np.where(ok, h2s, h2_old[ms, sn])
                bad[ms, sn] = ~ok
                diag.rank1_fallbacks[ms, it] += fb
            beta = cfg.beta
            t[m] = beta * tm + (1.0 - beta) * t_old[m]
            h2[m] = beta * h2m + (1.0 - beta) * h2_old[m]
        diag.cavity_breakdowns[:, it] = bad.sum(axis=-1)

        lam = np.where(mix_mask, dummy_lam, lam_eff)
        gam = np.where(mix_mask, dummy_gam, gam_base)
        was_mix = mix_mask
    state = EpState(gam, lam, mu, Sigma, t, h2, iteration=L)
    return finish(pb, t, h2, diag, state)
