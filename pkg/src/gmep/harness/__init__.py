"""Monte Carlo SER sweeps, CSV output and the command-line interface."""

from .config import DetectorSpec, SweepConfig, load_config, parse_detector
from .io import CSV_COLUMNS, emit_csv, format_csv, gnuplot_script, read_csv
from .sweep import PointResult, SweepResult, gain_at_ser, run_sweep, snr_at_ser, symbol_errors, wilson_interval

__all__ = [
    "CSV_COLUMNS",
    "DetectorSpec",
    "PointResult",
    "SweepConfig",
    "SweepResult",
    "emit_csv",
    "format_csv",
    "gain_at_ser",
    "gnuplot_script",
    "load_config",
    "parse_detector",
    "read_csv",
    "run_sweep",
    "snr_at_ser",
    "symbol_errors",
    "wilson_interval",
]
