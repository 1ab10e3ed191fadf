"""
reports.py — CSV, JSON and SVG writers for run outputs.

All files are UTF-8. CSVs have a header row and ``\\n`` line endings; floats
are written with ``repr`` so a rerun with the same seed is byte-identical.
SVG plots are built with :mod:`xml.etree.ElementTree`, so they are always
well-formed and small enough to diff.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import xml.etree.ElementTree as ET
from dataclasses import asdict
from pathlib import Path

import numpy as np

from sdelbo.checks import CheckReport

logger = logging.getLogger(__name__)

SVG_NS = "http://www.w3.org/2000/svg"
_MARGIN = 40


def _cell(value: object) -> object:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return value


def write_csv(path: str | Path, rows: list[dict[str, object]]) -> Path:
    """Write dict rows; columns come from the first row in insertion order."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    columns = list(rows[0]) if rows else []
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _cell(v) for k, v in row.items()})
    return path


def write_text(path: str | Path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    return path


def write_json(path: str | Path, doc: dict[str, object]) -> Path:
    """Pretty-printed JSON with sorted keys; non-finite floats are written as null."""
    return write_text(path, json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n")


def _jsonable(value: object) -> object:
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, (float, np.floating)):
        return float(value) if math.isfinite(value) else None
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.bool_):
        return bool(value)
    return value


def write_points_csv(path: str | Path, points: np.ndarray) -> Path:
    points = np.atleast_2d(points)
    return write_csv(
        path, [{f"x{j}": float(v) for j, v in enumerate(row)} for row in points]
    )


# ---------------------------------------------------------------------------
# SVG
# ---------------------------------------------------------------------------


def _frame(width: int, height: int, title: str) -> ET.Element:
    svg = ET.Element(
        "svg",
        {
            "xmlns": SVG_NS,
            "width": str(width),
            "height": str(height),
            "viewBox": f"0 0 {width} {height}",
        },
    )
    ET.SubElement(svg, "rect", {"width": str(width), "height": str(height), "fill": "white"})
    if title:
        attrs = {
            "x": str(width // 2),
            "y": "20",
            "text-anchor": "middle",
            "font-family": "sans-serif",
            "font-size": "14",
        }
        label = ET.SubElement(svg, "text", attrs)
        label.text = title
    return svg


def _scaler(lo: float, hi: float, out_lo: float, out_hi: float):
    span = hi - lo if hi > lo else 1.0

    def scale(v: np.ndarray) -> np.ndarray:
        return out_lo + (np.asarray(v) - lo) / span * (out_hi - out_lo)

    return scale


def scatter_svg(
    points: np.ndarray, *, title: str = "", width: int = 480, height: int = 480, radius: float = 1.5
) -> str:
    """Scatter plot of the first two columns of *points*."""
    points = np.atleast_2d(points)
    svg = _frame(width, height, title)
    if points.shape[0]:
        sx = _scaler(points[:, 0].min(), points[:, 0].max(), _MARGIN, width - _MARGIN)
        sy = _scaler(points[:, 1].min(), points[:, 1].max(), height - _MARGIN, _MARGIN)
        group = ET.SubElement(svg, "g", {"fill": "steelblue", "fill-opacity": "0.5"})
        for x, y in zip(sx(points[:, 0]), sy(points[:, 1])):
            ET.SubElement(group, "circle", {"cx": f"{x:.2f}", "cy": f"{y:.2f}", "r": str(radius)})
    return ET.tostring(svg, encoding="unicode")


def line_svg(
    x: np.ndarray,
    series: dict[str, np.ndarray],
    *,
    title: str = "",
    width: int = 480,
    height: int = 320,
) -> str:
    """One polyline per named series over a shared x grid; NaN points are skipped."""
    x = np.asarray(x, dtype=np.float64)
    svg = _frame(width, height, title)
    finite = [np.asarray(v, dtype=np.float64) for v in series.values()]
    ys = np.concatenate([v[np.isfinite(v)] for v in finite]) if finite else np.zeros(0)
    if x.size == 0 or ys.size == 0:
        return ET.tostring(svg, encoding="unicode")
    sx = _scaler(x.min(), x.max(), _MARGIN, width - _MARGIN)
    sy = _scaler(ys.min(), ys.max(), height - _MARGIN, _MARGIN)
    palette = ("steelblue", "darkorange", "seagreen", "crimson", "slategray", "purple")
    for k, (name, values) in enumerate(series.items()):
        values = np.asarray(values, dtype=np.float64)
        keep = np.isfinite(values)
        coords = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(sx(x[keep]), sy(values[keep])))
        line = ET.SubElement(
            svg,
            "polyline",
            {
                "points": coords,
                "fill": "none",
                "stroke": palette[k % len(palette)],
                "stroke-width": "1.5",
            },
        )
        ET.SubElement(line, "title").text = name
    return ET.tostring(svg, encoding="unicode")


# ---------------------------------------------------------------------------
# Check reports
# ---------------------------------------------------------------------------


def format_check_report(report: CheckReport) -> str:
    """Plain-text table of every assertion, failures marked ``FAIL``."""
    lines = [f"suite {report.suite}: {'PASS' if report.passed else 'FAIL'}"]
    for a in report.assertions:
        verdict = "ok  " if a.passed else "FAIL"
        line = f"  {verdict} {a.name}: measured {a.measured:.6g} <= {a.tolerance:.6g}"
        if a.detail:
            line += f" ({a.detail})"
        lines.append(line)
    return "\n".join(lines) + "\n"


def write_check_report(out_dir: str | Path, report: CheckReport) -> list[Path]:
    """Write ``report.txt``, ``report.json`` and one CSV per table under *out_dir*."""
    out_dir = Path(out_dir)
    written = [
        write_text(out_dir / "report.txt", format_check_report(report)),
        write_json(
            out_dir / "report.json",
            {
                "suite": report.suite,
                "passed": report.passed,
                "assertions": [asdict(a) for a in report.assertions],
            },
        ),
    ]
    for name, rows in report.tables.items():
        written.append(write_csv(out_dir / f"{name}.csv", rows))
    if "time_density" in report.tables:
        rows = report.tables["time_density"]
        s = np.array([r["s"] for r in rows])
        written.append(
            write_text(
                out_dir / "time_density.svg",
                line_svg(s, {"pdf": np.array([r["pdf"] for r in rows])}, title="debiased q(s)"),
            )
        )
    logger.info("wrote %d report files to %s", len(written), out_dir)
    return written
