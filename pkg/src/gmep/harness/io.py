"""CSV output and plotting helpers for sweep results."""

from __future__ import annotations

import csv
import io
import math
from pathlib import Path

from .sweep import SweepResult

__all__ = ["CSV_COLUMNS", "emit_csv", "format_csv", "read_csv", "gnuplot_script"]

CSV_COLUMNS = (
    "detector",
    "L",
    "snr_db",
    "trials",
    "errors",
    "ser",
    "ci_low",
    "ci_high",
    "mean_mixture_order",
    "wall_ms",
)


def _g(x: float) -> str:
    """Six significant digits; ``nan``/``inf`` spelled so ``float()`` reads them back."""
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.6g}"


def format_csv(result: SweepResult) -> str:
    """Render a sweep as CSV text (LF line endings, one row per point).

    ``trials`` counts symbol vectors and ``errors`` counts wrong complex
    symbols; ``ser`` is errors over ``trials * n``.
    """
    buf = io.StringIO()
    buf.write(",".join(CSV_COLUMNS) + "\n")
    for p in result.points:
        lo, hi = p.ci
        row = (
            p.detector,
            str(p.L),
            _g(p.snr_db),
            str(p.trials),
            str(p.errors),
            _g(p.ser),
            _g(lo),
            _g(hi),
            _g(p.mean_mixture_order),
            _g(p.wall_ms),
        )
        buf.write(",".join(row) + "\n")
    return buf.getvalue()


def emit_csv(result: SweepResult, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write(format_csv(result))
    return path


def read_csv(path) -> list[dict]:
    """Parse a file written by :func:`emit_csv` back into typed rows."""
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for r in csv.DictReader(fh):
            rows.append(
                {
                    "detector": r["detector"],
                    "L": int(r["L"]),
                    "snr_db": float(r["snr_db"]),
                    "trials": int(r["trials"]),
                    "errors": int(r["errors"]),
                    "ser": float(r["ser"]),
                    "ci_low": float(r["ci_low"]),
                    "ci_high": float(r["ci_high"]),
                    "mean_mixture_order": float(r["mean_mixture_order"]),
                    "wall_ms": float(r["wall_ms"]),
                }
            )
    return rows


def gnuplot_script(csv_path, title: str = "SER vs SNR", output: str | None = None) -> str:
    """A gnuplot script plotting every (detector, L) row of a results CSV on a log axis."""
    rows = read_csv(csv_path)
    series = []
    for r in rows:
        key = (r["detector"], r["L"])
        if key not in series:
            series.append(key)
    lines = []
    if output:
        lines += ["set terminal pngcairo size 800,600", f'set output "{output}"']
    lines += [
        "set datafile separator ','",
        "set logscale y",
        "set format y '10^{%L}'",
        "set xlabel 'SNR (dB)'",
        "set ylabel 'SER'",
        f"set title '{title}'",
        "set grid",
        "set key bottom left",
    ]
    plots = []
    for det, L in series:
        label = det if L == 0 else f"{det} L={L}"
        cond = f'(strcol(1) eq "{det}" && $2 == {L} && $6 > 0 ? $6 : 1/0)'
        plots.append(f"'{csv_path}' using 3:{cond} every ::1 with linespoints title '{label}'")
    lines.append("plot " + ", \\\n     ".join(plots))
    return "\n".join(lines) + "\n"
