"""Sweep configuration and detector specifications."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from pathlib import Path

import yaml

from ..constellation import SUPPORTED_ORDERS
from ..detectors import GmepConfig
from ..errors import ConfigurationError

__all__ = ["DetectorSpec", "SweepConfig", "load_config", "parse_detector"]

KINDS = ("zf", "lmmse", "ep", "gmep", "map")


@dataclass(frozen=True)
class DetectorSpec:
    """One detector in a sweep.

    ``beta``, ``budget``, ``sigma0_scale`` and ``exact_cavity_weights`` are
    only read by GMEP; ``damping`` by EP and GMEP.
    """

    kind: str
    L: int = 0
    beta: float = 1.0
    damping: float = 0.9
    budget: int = 2
    sigma0_scale: float = 1e-4
    exact_cavity_weights: bool = True
    label: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown detector {self.kind!r}; expected one of {KINDS}")
        if self.L < 0:
            raise ConfigurationError("L must be >= 0")
        if self.kind in ("zf", "lmmse", "map") and self.L:
            raise ConfigurationError(f"{self.kind} has no iterations")
        if self.kind == "gmep":
            self.gmep_config()

    @property
    def name(self) -> str:
        return self.label or self.kind

    def gmep_config(self) -> GmepConfig:
        return GmepConfig(
            iterations=self.L,
            beta=self.beta,
            damping=self.damping,
            max_mixture_nodes=self.budget,
            sigma0_scale=self.sigma0_scale,
            exact_cavity_weights=self.exact_cavity_weights,
        )


@dataclass(frozen=True)
class SweepConfig:
    """Monte Carlo sweep description.

    ``trials`` counts channel uses (symbol vectors) per SNR point. When
    ``symbols_per_point`` is set instead, ``trials = ceil(symbols / n)``.
    Trials are processed in fixed chunks of ``chunk_size``; results do not
    depend on ``workers``. ``timing=False`` writes ``nan`` wall times so that
    reruns produce identical files.
    """

    n: int
    m: int
    qam_order: int
    snr_db: tuple
    detectors: tuple
    trials: int | None = None
    symbols_per_point: int | None = None
    seed: int = 0
    energy: float = 1.0
    output: str | None = None
    chunk_size: int = 250
    workers: int = 1
    timing: bool = False

    def __post_init__(self):
        object.__setattr__(self, "snr_db", tuple(float(s) for s in self.snr_db))
        object.__setattr__(self, "detectors", tuple(self.detectors))
        if self.n < 1 or self.m < 1:
            raise ConfigurationError("antenna counts must be positive")
        if self.m < self.n and any(d.kind == "zf" for d in self.detectors):
            raise ConfigurationError("zero forcing needs m >= n")
        if self.qam_order not in SUPPORTED_ORDERS:
            raise ConfigurationError(f"qam_order must be one of {SUPPORTED_ORDERS}")
        if not self.snr_db:
            raise ConfigurationError("snr_db must not be empty")
        if any(math.isnan(s) or s == -math.inf for s in self.snr_db):
            raise ConfigurationError("snr_db entries must be finite or +inf")
        if not self.detectors:
            raise ConfigurationError("at least one detector is required")
        names = [d.name for d in self.detectors]
        keys = [(d.name, d.L) for d in self.detectors]
        if len(set(keys)) != len(keys):
            raise ConfigurationError(f"duplicate detector rows {names}; set distinct labels")
        if (self.trials is None) == (self.symbols_per_point is None):
            raise ConfigurationError("give exactly one of trials or symbols_per_point")
        if self.num_trials < 1:
            raise ConfigurationError("trials must be >= 1")
        if self.chunk_size < 1 or self.workers < 1:
            raise ConfigurationError("chunk_size and workers must be >= 1")

    @property
    def num_trials(self) -> int:
        if self.trials is not None:
            return int(self.trials)
        return -(-int(self.symbols_per_point) // self.n)


_SPEC_FIELDS = {f.name: f.type for f in fields(DetectorSpec)}


def _coerce(key: str, value):
    if key not in _SPEC_FIELDS:
        raise ConfigurationError(f"unknown detector option {key!r}")
    if key in ("kind", "label"):
        return str(value)
    if key in ("L", "budget"):
        return int(value)
    if key == "exact_cavity_weights":
        if isinstance(value, str):
            return value.strip().lower() in ("1", "true", "yes", "on")
        return bool(value)
    return float(value)


def parse_detector(text: str) -> DetectorSpec:
    """Parse ``kind[:key=value,...]``, e.g. ``gmep:L=2,beta=0.8``."""
    kind, _, rest = text.partition(":")
    opts = {}
    for item in filter(None, (s.strip() for s in rest.split(","))):
        key, eq, value = item.partition("=")
        if not eq:
            raise ConfigurationError(f"bad detector option {item!r}; expected key=value")
        opts[key.strip()] = _coerce(key.strip(), value.strip())
    return DetectorSpec(kind=kind.strip(), **opts)


def _detector_from_mapping(d) -> DetectorSpec:
    if isinstance(d, str):
        return parse_detector(d)
    if not isinstance(d, dict) or "kind" not in d:
        raise ConfigurationError(f"bad detector entry {d!r}")
    return DetectorSpec(**{k: _coerce(k, v) for k, v in d.items()})


def load_config(path) -> SweepConfig:
    """Read a YAML (or JSON) sweep description."""
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigurationError("config must be a mapping")
    raw = dict(raw)
    dets = raw.pop("detectors", None) or []
    snr = raw.pop("snr_db", None)
    if snr is None:
        raise ConfigurationError("config needs snr_db")
    known = {f.name for f in fields(SweepConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigurationError(f"unknown config keys {sorted(unknown)}")
    snr = [math.inf if str(s).lower() in ("inf", "+inf") else float(s) for s in snr]
    try:
        return SweepConfig(snr_db=tuple(snr), detectors=tuple(_detector_from_mapping(d) for d in dets), **raw)
    except TypeError as exc:
        raise ConfigurationError(str(exc)) from exc
