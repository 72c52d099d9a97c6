"""Rayleigh MIMO channel sampling and the complex-to-real transform.

Instances may be single (``H`` of shape ``(2m, 2n)``) or stacked along a
leading trial axis (``H`` of shape ``(B, 2m, 2n)``); detectors accept both.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .constellation import Constellation
from .errors import ConfigurationError, DomainError

__all__ = [
    "ComplexChannelInstance",
    "RealChannelInstance",
    "noise_variance",
    "trial_rng",
    "sample_complex_instance",
    "sample_instance",
    "sample_batch",
    "to_real_model",
    "real_channel_matrix",
    "stack_instances",
    "write_instance_csv",
]


@dataclass(frozen=True, eq=False)
class ComplexChannelInstance:
    H_c: np.ndarray
    u_c: np.ndarray
    noise_var: float
    y_c: np.ndarray
    noise_c: np.ndarray | None = None

    def __post_init__(self):
        m, n = self.H_c.shape
        if self.u_c.shape != (n,) or self.y_c.shape != (m,):
            raise DomainError("inconsistent complex instance dimensions")


@dataclass(frozen=True, eq=False)
class RealChannelInstance:
    """Real-valued equivalent model ``y = H u + w``.

    ``noise_var_real`` is the per-real-dimension variance ``sigma_w^2 / 2``.
    ``true_symbols`` is the transmitted ``u``; it is kept separate so that
    detectors never need to look at it.
    """

    H: np.ndarray
    y: np.ndarray
    noise_var_real: np.ndarray | float
    true_symbols: np.ndarray

    @property
    def u(self) -> np.ndarray:
        return self.true_symbols

    @property
    def batched(self) -> bool:
        return self.H.ndim == 3

    @property
    def batch_size(self) -> int:
        return self.H.shape[0] if self.batched else 1

    @property
    def n_real(self) -> int:
        return self.H.shape[-1]

    def __len__(self) -> int:
        if not self.batched:
            raise TypeError("single instance has no length")
        return self.H.shape[0]

    def __getitem__(self, idx) -> RealChannelInstance:
        if not self.batched:
            raise TypeError("single instance is not indexable")
        nv = np.asarray(self.noise_var_real)
        nv = nv[idx] if nv.ndim else nv
        if np.ndim(idx) == 0 and not isinstance(idx, slice):
            nv = float(nv)
        return RealChannelInstance(self.H[idx], self.y[idx], nv, self.true_symbols[idx])


def noise_variance(n: int, energy: float, snr_db: float) -> float:
    """Complex noise variance for ``SNR = n * E_s / sigma_w^2`` (in dB)."""
    if np.isposinf(snr_db):
        return 0.0
    if not np.isfinite(snr_db):
        raise ConfigurationError("snr_db must be finite or +inf")
    return n * energy / 10.0 ** (snr_db / 10.0)


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    """Counter-based generator for one trial of a seeded experiment.

    The stream depends only on ``(seed, trial)``, so trials can be generated
    in any order or on any worker.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(trial),))
    return np.random.Generator(np.random.Philox(ss))


def _draw(rng: np.random.Generator, n: int, m: int, c: Constellation):
    # fixed draw order: channel, symbols, unit noise
    H_c = (rng.standard_normal((m, n)) + 1j * rng.standard_normal((m, n))) / np.sqrt(2.0)
    levels = rng.integers(0, c.num_real_points, size=(2, n))
    u_c = c.real_points[levels[0]] + 1j * c.real_points[levels[1]]
    w_unit = (rng.standard_normal(m) + 1j * rng.standard_normal(m)) / np.sqrt(2.0)
    return H_c, u_c, w_unit


def sample_complex_instance(
    n: int, m: int, c: Constellation, snr_db: float, rng_seed, trial: int = 0
) -> ComplexChannelInstance:
    if n < 1 or m < 1:
        raise ConfigurationError("antenna counts must be positive")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else trial_rng(rng_seed, trial)
    H_c, u_c, w_unit = _draw(rng, n, m, c)
    nv = noise_variance(n, c.energy, snr_db)
    noise = np.sqrt(nv) * w_unit
    return ComplexChannelInstance(H_c, u_c, nv, H_c @ u_c + noise, noise)


def real_channel_matrix(H_c: np.ndarray) -> np.ndarray:
    """Block map ``[[Re H, -Im H], [Im H, Re H]]``."""
    re, im = H_c.real, H_c.imag
    top = np.concatenate([re, -im], axis=-1)
    bottom = np.concatenate([im, re], axis=-1)
    return np.concatenate([top, bottom], axis=-2)


def _stack_complex(v: np.ndarray) -> np.ndarray:
    return np.concatenate([v.real, v.imag], axis=-1)


def to_real_model(x: ComplexChannelInstance) -> RealChannelInstance:
    return RealChannelInstance(
        H=real_channel_matrix(x.H_c),
        y=_stack_complex(x.y_c),
        noise_var_real=x.noise_var / 2.0,
        true_symbols=_stack_complex(x.u_c),
    )


def sample_instance(
    n: int, m: int, c: Constellation, snr_db: float, rng_seed, trial: int = 0
) -> RealChannelInstance:
    """Draw one real-model trial; deterministic in ``(rng_seed, trial)``."""
    return to_real_model(sample_complex_instance(n, m, c, snr_db, rng_seed, trial))


def sample_batch(
    n: int, m: int, c: Constellation, snr_db: float, seed: int, trials
) -> RealChannelInstance:
    """Stack the trials with the given indices.

    Entry ``k`` equals ``sample_instance(n, m, c, snr_db, seed, trials[k])``
    bit for bit. Channel, symbols and unit noise of a trial do not depend on
    ``snr_db``, so a sweep reuses the same realizations at every SNR.
    """
    trials = np.atleast_1d(np.asarray(trials, dtype=np.int64))
    nv = noise_variance(n, c.energy, snr_db)
    B = trials.size
    H = np.empty((B, 2 * m, 2 * n))
    y = np.empty((B, 2 * m))
    u = np.empty((B, 2 * n))
    for k, t in enumerate(trials):
        H_c, u_c, w_unit = _draw(trial_rng(seed, t), n, m, c)
        y_c = H_c @ u_c + np.sqrt(nv) * w_unit
        H[k] = real_channel_matrix(H_c)
        y[k] = _stack_complex(y_c)
        u[k] = _stack_complex(u_c)
    return RealChannelInstance(H, y, np.full(B, nv / 2.0), u)


def stack_instances(instances) -> RealChannelInstance:
    instances = list(instances)
    return RealChannelInstance(
        H=np.stack([x.H for x in instances]),
        y=np.stack([x.y for x in instances]),
        noise_var_real=np.array([float(x.noise_var_real) for x in instances]),
        true_symbols=np.stack([x.true_symbols for x in instances]),
    )


def write_instance_csv(inst: RealChannelInstance, path) -> None:
    """Dump one real instance for debugging: rows ``H`` (row-major), then ``u``, then ``y``."""
    if inst.batched:
        raise DomainError("write one instance at a time")
    with open(path, "w", newline="\n") as fh:
        fh.write(f"# noise_var_real,{float(inst.noise_var_real)!r}\n")
        for row in inst.H:
            fh.write("H," + ",".join(repr(float(v)) for v in row) + "\n")
        fh.write("u," + ",".join(repr(float(v)) for v in inst.true_symbols) + "\n")
        fh.write("y," + ",".join(repr(float(v)) for v in inst.y) + "\n")
