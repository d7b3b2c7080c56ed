"""CSV/JSON/SVG output.

All files are written through a temporary sibling and renamed into place,
so readers never observe a half-written report.  Number formatting uses
``format()``, which ignores the process locale.
"""

from __future__ import annotations

import io
import json
import os
import tempfile
from pathlib import Path
from typing import Iterable, Sequence

from .stats import SampleSet, StatsSummary, summarize

SUMMARY_HEADER = ("workload", "config", "mean", "stdev", "cv", "p99", "min", "max", "n")
RAW_HEADER = ("workload", "config", "iter", "cycles")
COMPARE_HEADER = ("workload", "baseline", "config", "baseline_mean", "mean", "improvement_pct")
FORMATS = ("csv", "json")


def atomic_write(path: Path, data: str | bytes) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = data.encode() if isinstance(data, str) else data
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _fmt(value) -> str:
    if isinstance(value, float):
        return format(value, ".6f")
    return str(value)


def csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    out = io.StringIO()
    out.write(",".join(header) + "\n")
    for row in rows:
        out.write(",".join(_csv_cell(_fmt(v)) for v in row) + "\n")
    return out.getvalue()


def _csv_cell(text: str) -> str:
    if any(c in text for c in ',"\n'):
        return '"' + text.replace('"', '""') + '"'
    return text


def summary_row(samples: SampleSet, summary: StatsSummary | None = None) -> tuple:
    s = summary or summarize(samples)
    return (samples.workload_label, samples.config_label, s.mean, s.stdev, s.cv,
            s.p99, s.min, s.max, s.n)


def raw_rows(samples: SampleSet):
    for i, v in enumerate(samples.values):
        yield (samples.workload_label, samples.config_label, i, v)


def emit_report(reports: Sequence[SampleSet], fmt: str, output_dir: str | Path, *,
                plot: bool = False, prefix: str = "") -> list[Path]:
    """Write summary and raw files for ``reports`` (declaration order)."""
    if not reports:
        raise ValueError("nothing to report")
    if fmt not in FORMATS:
        raise ValueError(f"format must be one of {FORMATS}")
    out = Path(output_dir)
    summaries = [summary_row(r) for r in reports]
    raws = [row for r in reports for row in raw_rows(r)]
    written = []
    if fmt == "csv":
        written.append(atomic_write(out / f"{prefix}summary.csv", csv_text(SUMMARY_HEADER, summaries)))
        written.append(atomic_write(out / f"{prefix}raw.csv", csv_text(RAW_HEADER, raws)))
    else:
        written.append(atomic_write(out / f"{prefix}summary.json",
                                    _json([dict(zip(SUMMARY_HEADER, r)) for r in summaries])))
        written.append(atomic_write(out / f"{prefix}raw.json",
                                    _json([dict(zip(RAW_HEADER, r)) for r in raws])))
    if plot:
        written.append(plot_histogram_cdf(reports, out / f"{prefix}latency.svg"))
    return written


def emit_comparison(rows: Sequence[dict], fmt: str, output_dir: str | Path) -> Path:
    out = Path(output_dir)
    if fmt == "csv":
        return atomic_write(out / "compare.csv",
                            csv_text(COMPARE_HEADER, [[r[k] for k in COMPARE_HEADER] for r in rows]))
    return atomic_write(out / "compare.json", _json([{k: r[k] for k in COMPARE_HEADER} for r in rows]))


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=False) + "\n"


# -- plots --------------------------------------------------------------------

def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "boundary-sim"
    return plt


def _save_svg(fig, path: Path) -> Path:
    buf = io.BytesIO()
    fig.savefig(buf, format="svg", metadata={"Date": None})
    return atomic_write(path, buf.getvalue())


def plot_histogram_cdf(reports: Sequence[SampleSet], path: Path) -> Path:
    """Latency histogram with its CDF on a second axis; one series per set."""
    import numpy as np

    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(7, 4))
    cdf_ax = ax.twinx()
    lo = min(min(r.values) for r in reports)
    hi = max(max(r.values) for r in reports)
    bins = np.linspace(lo, hi if hi > lo else lo + 1, 40)
    for r in reports:
        label = f"{r.config_label} ({r.workload_label})"
        ax.hist(r.values, bins=bins, alpha=0.45, label=label)
        xs = np.sort(np.asarray(r.values))
        cdf_ax.plot(xs, np.arange(1, len(xs) + 1) / len(xs), linewidth=1.2)
    ax.set_xlabel("latency (cycles)")
    ax.set_ylabel("count")
    cdf_ax.set_ylabel("CDF")
    cdf_ax.set_ylim(0, 1.02)
    ax.legend(loc="upper left", fontsize="small")
    fig.tight_layout()
    try:
        return _save_svg(fig, path)
    finally:
        plt.close(fig)


def plot_payload_lines(series: dict[str, list[tuple[int, float]]], path: Path, *,
                       ylabel: str = "mean latency (cycles)") -> Path:
    """One line per config: payload size against mean latency."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(7, 4))
    for label, points in series.items():
        xs, ys = zip(*points)
        ax.plot(xs, ys, marker="o", label=label)
    ax.set_xscale("log", base=2)
    ax.set_xlabel("payload (bytes)")
    ax.set_ylabel(ylabel)
    ax.legend(fontsize="small")
    fig.tight_layout()
    try:
        return _save_svg(fig, path)
    finally:
        plt.close(fig)
