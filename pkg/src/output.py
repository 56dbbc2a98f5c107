"""
Artifact emission: CSV profiles and fields, JSON-lines reports, SVG charts.

CSV files have a header row, ``,`` separators and 17 significant digits, so a
profile read back with :func:`read_profile_csv` is bit-identical to the one
written.
"""

import csv
import html
import logging
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .geometry import MaskedGrid
from .models import VerificationReport

# Configure logging
logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

SVG_WIDTH = 800
SVG_HEIGHT = 600
_MARGIN = {"left": 90, "right": 30, "top": 60, "bottom": 70}
_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def format_float(value: float) -> str:
    """Scientific notation with 17 significant digits."""
    return f"{float(value):.16e}"


def write_csv(path: PathLike, columns: Mapping[str, Sequence[float]]) -> Path:
    """
    Write equal-length numeric columns with a header row.

    Args:
        path: Output file
        columns: Ordered mapping of column name to values

    Returns:
        Path of the written file
    """
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    names = list(columns)
    arrays = [np.asarray(columns[name], dtype=float).ravel() for name in names]
    lengths = {array.size for array in arrays}
    if len(lengths) > 1:
        raise ValueError(f"CSV columns have different lengths: {sorted(lengths)}")
    with out.open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(names)
        for row in zip(*arrays):
            writer.writerow([format_float(value) for value in row])
    logger.debug(f"Wrote {out} ({arrays[0].size if arrays else 0} rows)")
    return out


def read_profile_csv(path: PathLike) -> Dict[str, np.ndarray]:
    """Read a CSV written by :func:`write_csv` into float arrays keyed by header."""
    with Path(path).open("r", newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader)
        rows = [[float(value) for value in row] for row in reader if row]
    data = np.array(rows, dtype=float).reshape(len(rows), len(header))
    return {name: data[:, k].copy() for k, name in enumerate(header)}


def write_profile_csv(path: PathLike, s: Sequence[float], values: Sequence[float], name: str = "u_sharp") -> Path:
    """Profile as columns ``s,<name>``."""
    return write_csv(path, {"s": s, name: values})


def write_distribution_csv(path: PathLike, thresholds: Sequence[float], measures: Sequence[float]) -> Path:
    """Distribution function as columns ``t,mu``."""
    return write_csv(path, {"t": thresholds, "mu": measures})


def write_field_csv(path: PathLike, grid: MaskedGrid, values: np.ndarray, name: str = "u") -> Path:
    """Domain cells as columns ``x1..xn,<name>``."""
    points = grid.domain_points()
    columns = {f"x{k + 1}": points[:, k] for k in range(grid.dim)}
    columns[name] = np.asarray(values, dtype=float)[grid.domain_mask]
    return write_csv(path, columns)


def append_reports(path: PathLike, reports: Iterable[VerificationReport]) -> Path:
    """Append one JSON line per report."""
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with out.open("a", encoding="utf-8") as f:
        for report in reports:
            f.write(report.to_json_line() + "\n")
            count += 1
    logger.info(f"Appended {count} reports to {out}")
    return out


def read_reports(path: PathLike) -> List[VerificationReport]:
    with Path(path).open("r", encoding="utf-8") as f:
        return [VerificationReport.from_json_line(line) for line in f if line.strip()]


# SVG


def _ticks(lo: float, hi: float, count: int = 5) -> np.ndarray:
    return np.linspace(lo, hi, count)


def _bounds(values: np.ndarray) -> Tuple[float, float]:
    finite = values[np.isfinite(values)]
    if finite.size == 0:
        return 0.0, 1.0
    lo, hi = float(np.min(finite)), float(np.max(finite))
    if hi == lo:
        pad = abs(lo) * 0.05 or 1.0
        return lo - pad, hi + pad
    pad = 0.05 * (hi - lo)
    return lo - pad, hi + pad


def render_svg(
    series: Mapping[str, Tuple[Sequence[float], Sequence[float]]],
    title: str,
    x_label: str,
    y_label: str,
    params: Optional[Mapping[str, object]] = None,
    log_x: bool = False,
) -> str:
    """
    Standalone 800x600 SVG line chart.

    Args:
        series: Legend label to (x, y) samples
        title: Chart title
        x_label: Horizontal axis label
        y_label: Vertical axis label
        params: Experiment parameters written under the title
        log_x: Logarithmic horizontal axis (positive x only)

    Returns:
        SVG document text
    """
    xs = {label: np.asarray(x, dtype=float) for label, (x, _) in series.items()}
    ys = {label: np.asarray(y, dtype=float) for label, (_, y) in series.items()}
    if log_x:
        xs = {label: np.log10(np.where(x > 0.0, x, np.nan)) for label, x in xs.items()}
    all_x = np.concatenate(list(xs.values())) if xs else np.zeros(0)
    all_y = np.concatenate(list(ys.values())) if ys else np.zeros(0)
    x_lo, x_hi = _bounds(all_x)
    y_lo, y_hi = _bounds(all_y)
    left, right = _MARGIN["left"], SVG_WIDTH - _MARGIN["right"]
    top, bottom = _MARGIN["top"], SVG_HEIGHT - _MARGIN["bottom"]

    def px(x: float) -> float:
        return left + (x - x_lo) / (x_hi - x_lo) * (right - left)

    def py(y: float) -> float:
        return bottom - (y - y_lo) / (y_hi - y_lo) * (bottom - top)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_WIDTH}" height="{SVG_HEIGHT}" '
        f'viewBox="0 0 {SVG_WIDTH} {SVG_HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect width="{SVG_WIDTH}" height="{SVG_HEIGHT}" fill="white"/>',
        f'<text x="{SVG_WIDTH / 2:.1f}" y="24" text-anchor="middle" font-size="16">{html.escape(title)}</text>',
    ]
    if params:
        caption = ", ".join(f"{key}={value}" for key, value in params.items())
        parts.append(f'<text x="{SVG_WIDTH / 2:.1f}" y="44" text-anchor="middle">{html.escape(caption)}</text>')
    parts.append(
        f'<rect x="{left}" y="{top}" width="{right - left}" height="{bottom - top}" fill="none" stroke="black"/>'
    )
    for x in _ticks(x_lo, x_hi):
        label = f"{10 ** x:.3g}" if log_x else f"{x:.3g}"
        parts.append(f'<line x1="{px(x):.2f}" y1="{bottom}" x2="{px(x):.2f}" y2="{bottom + 5}" stroke="black"/>')
        parts.append(f'<text x="{px(x):.2f}" y="{bottom + 20}" text-anchor="middle">{label}</text>')
    for y in _ticks(y_lo, y_hi):
        parts.append(f'<line x1="{left - 5}" y1="{py(y):.2f}" x2="{left}" y2="{py(y):.2f}" stroke="black"/>')
        parts.append(f'<text x="{left - 8}" y="{py(y) + 4:.2f}" text-anchor="end">{y:.3g}</text>')
    parts.append(
        f'<text x="{(left + right) / 2:.1f}" y="{SVG_HEIGHT - 20}" text-anchor="middle">{html.escape(x_label)}</text>'
    )
    parts.append(
        f'<text x="20" y="{(top + bottom) / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 20 {(top + bottom) / 2:.1f})">{html.escape(y_label)}</text>'
    )
    for index, label in enumerate(series):
        color = _COLORS[index % len(_COLORS)]
        keep = np.isfinite(xs[label]) & np.isfinite(ys[label])
        points = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in zip(xs[label][keep], ys[label][keep]))
        parts.append(f'<polyline points="{points}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        legend_y = top + 18 * (index + 1)
        parts.append(
            f'<line x1="{right - 150}" y1="{legend_y - 4}" x2="{right - 130}" y2="{legend_y - 4}" '
            f'stroke="{color}" stroke-width="2"/>'
        )
        parts.append(f'<text x="{right - 125}" y="{legend_y}">{html.escape(label)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_svg(path: PathLike, document: str) -> Path:
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(document, encoding="utf-8")
    logger.debug(f"Wrote {out}")
    return out


def profile_chart(
    path: PathLike,
    s_u: Sequence[float],
    u_sharp: Sequence[float],
    s_v: Sequence[float],
    v_sharp: Sequence[float],
    params: Optional[Mapping[str, object]] = None,
) -> Path:
    """u# against v# over the volume coordinate s."""
    document = render_svg(
        {"u#": (s_u, u_sharp), "v#": (s_v, v_sharp)},
        title="Rearranged solution against the symmetrized solution",
        x_label="s",
        y_label="value",
        params=params,
    )
    return write_svg(path, document)


def margin_chart(
    path: PathLike,
    spacings: Sequence[float],
    margins: Sequence[float],
    tolerances: Optional[Sequence[float]] = None,
    params: Optional[Mapping[str, object]] = None,
) -> Path:
    """Margin against grid spacing, optionally with -tol(h)."""
    series = {"margin": (spacings, margins)}
    if tolerances is not None:
        series["-tolerance"] = (spacings, -np.asarray(tolerances, dtype=float))
    document = render_svg(series, "Margin against grid spacing", "h", "margin", params=params, log_x=True)
    return write_svg(path, document)
