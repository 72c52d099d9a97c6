"""Zero-forcing and LMMSE detectors."""

from __future__ import annotations

import numpy as np

from ..channel import RealChannelInstance
from ..constellation import Constellation
from ..errors import DomainError, SingularityError
from .ep import Problem, finish
from .types import Diagnostics, EpState

__all__ = ["zf_detect", "lmmse_detect"]

_COND_LIMIT = 1e12


def zf_detect(inst: RealChannelInstance, c: Constellation):
    """Slice the least-squares solution ``(H^T H)^{-1} H^T y``.

    Raises
    ------
    SingularityError
        If ``H`` does not have full column rank.
    """
    pb = Problem(inst, c)
    if pb.H.shape[-2] < pb.N:
        raise SingularityError("zero forcing needs at least as many receive as transmit dimensions")
    if np.any(np.linalg.cond(pb.gram) > _COND_LIMIT):
        raise SingularityError("channel matrix is rank deficient")
    G_inv = np.linalg.inv(pb.gram)
    z = np.einsum("bij,bj->bi", G_inv, pb.Hty)
    var = pb.s2[:, None] * np.diagonal(G_inv, axis1=-2, axis2=-1)
    return finish(pb, z, var, Diagnostics.empty(pb.B), None)


def lmmse_detect(inst: RealChannelInstance, c: Constellation):
    """Linear MMSE detection in the Wiener form, followed by slicing.

    ``x = s_u H^T (s_u H H^T + s2 I)^{-1} y`` with ``s_u = E_s / 2``. Each
    component is divided by its gain ``(W H)_ii`` before slicing so that the
    decision is made on an unbiased estimate.
    """
    pb = Problem(inst, c)
    su = c.real_energy
    rows = pb.H.shape[-2]
    Ht = np.swapaxes(pb.H, -1, -2)
    R = su * pb.H @ Ht + pb.s2[:, None, None] * np.eye(rows)
    # Solve against R rather than forming its inverse: R has eigenvalues as
    # small as s2 when m > n, and an explicit inverse loses digits at high SNR.
    try:
        Ry = np.linalg.solve(R, pb.y[..., None])[..., 0]
        RH = np.linalg.solve(R, pb.H)
    except np.linalg.LinAlgError as exc:
        raise SingularityError(str(exc)) from exc
    x = su * np.einsum("bij,bj->bi", Ht, Ry)
    WH = su * Ht @ RH
    gain = np.diagonal(WH, axis1=-2, axis2=-1)
    if np.any(~(gain > 0)):
        raise DomainError("LMMSE gain vanished")
    t = x / gain
    h2 = su * (1.0 - gain) / gain
    cov = su * (np.eye(pb.N) - WH)
    lam, gam = pb.initial_prior()
    state = EpState(gam, lam, x, cov, t, h2, iteration=0)
    return finish(pb, t, h2, Diagnostics.empty(pb.B), state)
