"""Monte Carlo symbol-error-rate sweeps."""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from ..channel import sample_batch
from ..constellation import build_constellation
from ..detectors import ep_detect, gmep_detect, lmmse_detect, zf_detect
from ..errors import DomainError, GmepError
from ..oracle import map_detect
from .config import DetectorSpec, SweepConfig

__all__ = [
    "PointResult",
    "SweepResult",
    "gain_at_ser",
    "run_sweep",
    "snr_at_ser",
    "symbol_errors",
    "wilson_interval",
]

log = logging.getLogger(__name__)

_Z95 = float(stats.norm.ppf(0.975))


def wilson_interval(errors: int, trials: int, z: float = _Z95) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion (95% by default)."""
    if trials <= 0:
        return (math.nan, math.nan)
    p = errors / trials
    z2 = z * z
    denom = 1.0 + z2 / trials
    centre = (p + z2 / (2 * trials)) / denom
    half = z * math.sqrt(p * (1 - p) / trials + z2 / (4 * trials * trials)) / denom
    lo = 0.0 if errors == 0 else max(0.0, centre - half)
    hi = 1.0 if errors == trials else min(1.0, centre + half)
    return (lo, hi)


def symbol_errors(hard: np.ndarray, truth: np.ndarray) -> np.ndarray:
    """Complex-symbol error indicators from stacked real vectors, shape ``(..., n)``.

    A complex symbol is wrong when either its real or imaginary component is.
    """
    wrong = hard != truth
    n = wrong.shape[-1] // 2
    return wrong[..., :n] | wrong[..., n:]


@dataclass
class PointResult:
    """Accumulated counts for one (detector, SNR) pair.

    Mixture-order statistics are kept per iteration over every mixture
    message actually formed: ``order_count[l]`` messages with total order
    ``order_sum[l]`` and sum of squares ``order_sq_sum[l]``.
    """

    detector: str
    kind: str
    L: int
    snr_db: float
    trials: int = 0
    symbols: int = 0
    errors: int = 0
    failed_trials: list = field(default_factory=list)
    order_count: np.ndarray | None = None
    order_sum: np.ndarray | None = None
    order_sq_sum: np.ndarray | None = None
    improper_sum: np.ndarray | None = None
    wall_ms: float = 0.0

    def __post_init__(self):
        L = max(self.L, 0)
        for name in ("order_count", "order_sum", "order_sq_sum", "improper_sum"):
            if getattr(self, name) is None:
                setattr(self, name, np.zeros(L, dtype=np.int64))

    @property
    def ser(self) -> float:
        return self.errors / self.symbols if self.symbols else math.nan

    @property
    def ci(self) -> tuple[float, float]:
        return wilson_interval(self.errors, self.symbols)

    @property
    def mean_mixture_order(self) -> float:
        """Mean order over all iterations; ``nan`` if no mixture was formed."""
        n = int(self.order_count.sum())
        return float(self.order_sum.sum()) / n if n else math.nan

    def mixture_order(self, iteration: int) -> tuple[float, float, int]:
        """``(mean, standard error, count)`` of the order at a 0-based iteration."""
        n = int(self.order_count[iteration])
        if n == 0:
            return (math.nan, math.nan, 0)
        mean = self.order_sum[iteration] / n
        var = max(self.order_sq_sum[iteration] / n - mean**2, 0.0)
        se = math.sqrt(var / (n - 1)) if n > 1 else math.inf
        return (float(mean), se, n)

    def merge(self, other: PointResult) -> None:
        self.trials += other.trials
        self.symbols += other.symbols
        self.errors += other.errors
        self.failed_trials.extend(other.failed_trials)
        self.order_count += other.order_count
        self.order_sum += other.order_sum
        self.order_sq_sum += other.order_sq_sum
        self.improper_sum += other.improper_sum
        self.wall_ms += other.wall_ms


@dataclass
class SweepResult:
    config: SweepConfig
    points: list

    def point(self, detector: str, snr_db: float, L: int | None = None) -> PointResult:
        for p in self.points:
            if p.detector == detector and p.snr_db == snr_db and (L is None or p.L == L):
                return p
        raise KeyError((detector, snr_db, L))

    def curve(self, detector: str, L: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        """SNR grid and SER for one detector row, sorted by SNR."""
        pts = [p for p in self.points if p.detector == detector and (L is None or p.L == L)]
        if not pts:
            raise KeyError((detector, L))
        pts.sort(key=lambda p: p.snr_db)
        return np.array([p.snr_db for p in pts]), np.array([p.ser for p in pts])

    @property
    def failed_trials(self) -> int:
        return sum(len(p.failed_trials) for p in self.points)


def _run_detector(spec: DetectorSpec, inst, c):
    if spec.kind == "zf":
        return zf_detect(inst, c)
    if spec.kind == "lmmse":
        return lmmse_detect(inst, c)
    if spec.kind == "ep":
        return ep_detect(inst, c, L=spec.L, damping=spec.damping)
    if spec.kind == "gmep":
        return gmep_detect(inst, c, spec.gmep_config())
    return map_detect(inst, c)


def _accumulate(point: PointResult, res, truth, timing_ms: float) -> None:
    err = symbol_errors(res.hard_symbols, truth)
    point.trials += err.shape[0]
    point.symbols += err.size
    point.errors += int(err.sum())
    point.wall_ms += timing_ms
    if point.kind == "gmep" and point.L:
        d = res.diagnostics
        active = d.mixture_nodes >= 0
        orders = np.where(active, d.mixture_orders, 0)
        point.order_count += active.sum(axis=(0, 2))
        point.order_sum += orders.sum(axis=(0, 2))
        point.order_sq_sum += (orders**2).sum(axis=(0, 2))
        point.improper_sum += d.improper_counts.sum(axis=0)


def _new_point(spec: DetectorSpec, snr: float) -> PointResult:
    return PointResult(spec.name, spec.kind, spec.L, snr)


def _run_chunk(cfg: SweepConfig, snr: float, lo: int, hi: int) -> list:
    """Run every detector on trials ``lo..hi-1`` at one SNR.

    A detector that fails on the whole chunk is retried trial by trial so
    that only the offending trials are dropped and recorded.
    """
    c = build_constellation(cfg.qam_order, cfg.energy)
    trials = np.arange(lo, hi)
    inst = sample_batch(cfg.n, cfg.m, c, snr, cfg.seed, trials)
    out = []
    for spec in cfg.detectors:
        point = _new_point(spec, snr)
        t0 = time.perf_counter()
        try:
            res = _run_detector(spec, inst, c)
            _accumulate(point, res, inst.true_symbols, 0.0)
        except (GmepError, ArithmeticError, np.linalg.LinAlgError, ValueError) as exc:
            log.warning("%s failed on trials %d..%d at %.2f dB (%s); retrying per trial",
                        spec.name, lo, hi - 1, snr, exc)
            for k, t in enumerate(trials):
                one = inst[k : k + 1]
                try:
                    _accumulate(point, _run_detector(spec, one, c), one.true_symbols, 0.0)
                except (GmepError, ArithmeticError, np.linalg.LinAlgError, ValueError) as exc1:
                    point.failed_trials.append((int(t), f"{type(exc1).__name__}: {exc1}"))
        if cfg.timing:
            point.wall_ms = (time.perf_counter() - t0) * 1e3
        out.append(point)
    return out


def _chunks(cfg: SweepConfig):
    T = cfg.num_trials
    return [(snr, lo, min(lo + cfg.chunk_size, T)) for snr in cfg.snr_db for lo in range(0, T, cfg.chunk_size)]


def run_sweep(cfg: SweepConfig, progress=None) -> SweepResult:
    """Run a sweep.

    Trial ``t`` at every SNR point uses the realization seeded by
    ``(cfg.seed, t)``, so all detectors and SNR points share channels,
    symbols and noise directions. Chunks are merged in a fixed order, which
    makes the counts independent of ``cfg.workers``.
    """
    chunks = _chunks(cfg)
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            futures = [pool.submit(_run_chunk, cfg, *ch) for ch in chunks]
            parts = []
            for i, f in enumerate(futures):
                parts.append(f.result())
                if progress:
                    progress(i + 1, len(chunks))
    else:
        parts = []
        for i, ch in enumerate(chunks):
            parts.append(_run_chunk(cfg, *ch))
            if progress:
                progress(i + 1, len(chunks))

    merged = {}
    for ch, part in zip(chunks, parts):
        for p in part:
            key = (p.detector, p.L, ch[0])
            if key in merged:
                merged[key].merge(p)
            else:
                merged[key] = p
    order = {(d.name, d.L): i for i, d in enumerate(cfg.detectors)}
    points = sorted(merged.values(), key=lambda p: (order[(p.detector, p.L)], cfg.snr_db.index(p.snr_db)))
    if not cfg.timing:
        for p in points:
            p.wall_ms = math.nan
    for p in points:
        if p.failed_trials:
            log.warning("%s at %.2f dB: %d failed trials", p.detector, p.snr_db, len(p.failed_trials))
    return SweepResult(cfg, points)


def gain_at_ser(curve_a, curve_b, target: float) -> float:
    """SNR advantage of curve A over curve B at SER ``target``, in dB.

    Each curve is ``(snr_db, ser)``. The SNR at which a curve reaches the
    target is found by linear interpolation of ``log10(SER)`` between the
    two grid points that bracket it. The result is ``snr_B - snr_A``, so a
    positive number means A needs less SNR. Raises :class:`DomainError`
    when either curve does not bracket the target.
    """
    return _snr_at(*curve_b, target) - _snr_at(*curve_a, target)


def snr_at_ser(curve, target: float) -> float:
    """SNR (dB) at which a ``(snr_db, ser)`` curve reaches ``target``, by log-linear interpolation."""
    return _snr_at(*curve, target)


def _snr_at(snr, ser, target: float) -> float:
    snr = np.asarray(snr, dtype=float)
    ser = np.asarray(ser, dtype=float)
    if not 0 < target < 1:
        raise DomainError("target SER must lie in (0, 1)")
    order = np.argsort(snr)
    snr, ser = snr[order], ser[order]
    lt = math.log10(target)
    for k in range(len(snr) - 1):
        a, b = ser[k], ser[k + 1]
        if a >= target > b or a > target >= b:
            if b <= 0:
                raise DomainError(
                    f"SER drops to zero between {snr[k]} and {snr[k + 1]} dB; cannot interpolate {target}"
                )
            la, lb = math.log10(a), math.log10(b)
            return float(snr[k] + (lt - la) / (lb - la) * (snr[k + 1] - snr[k]))
    raise DomainError(f"target SER {target} is not bracketed by the curve (range {ser.min()}..{ser.max()})")
