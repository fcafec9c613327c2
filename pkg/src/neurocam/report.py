"""Self-contained SVG figures (montage highlights, scalp topographies, TFR heatmaps) and metric exports."""
from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

from neurocam.channels import MontageLayout
from neurocam.dsp import TFR
from neurocam.stats import ScenarioTable

log = logging.getLogger(__name__)

_SIZE = 400
_R = 170  # pixel radius of the unit disc


def _xy(p) -> tuple[float, float]:
    # +y (nose) points up on screen
    return _SIZE / 2 + _R * p[0], _SIZE / 2 - _R * p[1]


def _color(v: float, lo: float = 0.0, hi: float = 1.0, diverging: bool = False) -> str:
    """Sequential white->red, or blue-white-red when ``diverging``."""
    t = 0.5 if hi <= lo else float(np.clip((v - lo) / (hi - lo), 0, 1))
    if diverging:
        if t < 0.5:
            s = t / 0.5
            rgb = (int(40 + 215 * s), int(80 + 175 * s), 255)
        else:
            s = (t - 0.5) / 0.5
            rgb = (255, int(255 - 200 * s), int(255 - 215 * s))
    else:
        rgb = (255, int(255 - 220 * t), int(255 - 235 * t))
    return "#%02x%02x%02x" % rgb


def _head(parts: list[str]) -> None:
    cx, cy = _SIZE / 2, _SIZE / 2
    parts.append(f'<circle class="head" cx="{cx}" cy="{cy}" r="{_R}" fill="none" stroke="#333" stroke-width="2"/>')
    parts.append(
        f'<path class="nose" d="M {cx - 14} {cy - _R + 2} L {cx} {cy - _R - 18} L {cx + 14} {cy - _R + 2}" '
        'fill="none" stroke="#333" stroke-width="2"/>'
    )
    for sgn in (-1, 1):
        ex = cx + sgn * (_R + 6)
        parts.append(f'<ellipse class="ear" cx="{ex}" cy="{cy}" rx="7" ry="22" fill="none" stroke="#333" stroke-width="2"/>')


def _svg(parts: list[str], width: int = _SIZE, height: int = _SIZE, title: str = "") -> str:
    head = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">'
    )
    t = f"<title>{escape(title)}</title>" if title else ""
    return "\n".join([head, t, *parts, "</svg>"]) + "\n"


def _check_keys(values: dict, montage: MontageLayout) -> None:
    unknown = [k for k in values if k not in montage]
    if unknown:
        raise ValueError(f"unknown channel label(s): {unknown}")


def render_montage(values: dict[str, float], montage: MontageLayout, highlight_k: int = 10, title: str = "") -> str:
    """Electrode map with fill proportional to value and the top ``highlight_k`` outlined.

    Channels missing from ``values`` count as 0. Ties for the outline keep
    montage order.
    """
    _check_keys(values, montage)
    labels = montage.labels
    v = np.array([float(values.get(ch, 0.0)) for ch in labels])
    vmax = v.max() if v.size and v.max() > 0 else 1.0
    order = sorted(range(len(labels)), key=lambda i: (-v[i], i))
    top = set(order[: max(0, highlight_k)])
    proj = montage.projection
    parts: list[str] = []
    _head(parts)
    for i, ch in enumerate(labels):
        x, y = _xy(proj[ch])
        fill = _color(v[i] / vmax)
        stroke = 'stroke="#000" stroke-width="3"' if i in top else 'stroke="#999" stroke-width="1"'
        cls = "electrode highlight" if i in top else "electrode"
        parts.append(
            f'<g class="{cls}" data-label="{escape(ch)}" data-value="{v[i]:.6g}">'
            f'<circle cx="{x:.2f}" cy="{y:.2f}" r="11" fill="{fill}" {stroke}/>'
            f'<text x="{x:.2f}" y="{y + 3:.2f}" font-size="7" text-anchor="middle">{escape(ch)}</text></g>'
        )
    return _svg(parts, title=title)


def idw_interpolate(values: dict[str, float], montage: MontageLayout, points, power: float = 2.0, radius: float = 0.6) -> np.ndarray:
    """Inverse-distance weighting in the projected disc.

    Only electrodes within ``radius`` of a point contribute (the nearest one
    is always used); a point on an electrode returns that electrode's value.
    """
    if len(values) < 3:
        raise ValueError("need at least 3 channels with values")
    _check_keys(values, montage)
    proj = montage.projection
    labs = list(values)
    E = np.array([proj[ch] for ch in labs])
    V = np.array([float(values[ch]) for ch in labs])
    P = np.atleast_2d(np.asarray(points, dtype=float))
    d = np.linalg.norm(P[:, None, :] - E[None, :, :], axis=2)
    out = np.empty(len(P))
    for i, row in enumerate(d):
        j = int(np.argmin(row))
        if row[j] < 1e-12:
            out[i] = V[j]
            continue
        use = row <= radius
        use[j] = True
        w = 1.0 / row[use] ** power
        out[i] = np.sum(w * V[use]) / np.sum(w)
    return out


def render_topomap(
    values: dict[str, float], montage: MontageLayout, grid_res: int = 48, levels: int = 12, title: str = ""
) -> str:
    """Filled scalp map: IDW field sampled on a disc grid, quantized into ``levels`` colour bands."""
    if grid_res < 2:
        raise ValueError("grid_res must be >= 2")
    g = np.linspace(-1, 1, grid_res)
    cell = 2.0 / (grid_res - 1)
    X, Y = np.meshgrid(g, g)
    inside = X**2 + Y**2 <= 1.0
    pts = np.column_stack([X[inside], Y[inside]])
    field = idw_interpolate(values, montage, pts)
    lo, hi = float(min(values.values())), float(max(values.values()))
    diverging = lo < 0 < hi
    if diverging:
        m = max(-lo, hi)
        lo, hi = -m, m
    band = np.floor((field - lo) / (hi - lo) * levels) if hi > lo else np.zeros_like(field)
    band = np.clip(band, 0, levels - 1)
    parts: list[str] = []
    for (px, py), b in zip(pts, band):
        x, y = _xy((px - cell / 2, py + cell / 2))
        w = _R * cell
        parts.append(
            f'<rect class="field" x="{x:.2f}" y="{y:.2f}" width="{w:.2f}" height="{w:.2f}" '
            f'fill="{_color((b + 0.5) / levels, diverging=diverging)}" stroke="none"/>'
        )
    _head(parts)
    proj = montage.projection
    for ch in montage.labels:
        x, y = _xy(proj[ch])
        parts.append(f'<circle class="electrode" data-label="{escape(ch)}" cx="{x:.2f}" cy="{y:.2f}" r="2.5" fill="#000"/>')
    return _svg(parts, title=title)


def lateralization_index(values: dict[str, float], montage: MontageLayout) -> float:
    """(right-hemisphere mass - left-hemisphere mass) / total mass, midline excluded."""
    proj = montage.projection
    r = sum(abs(v) for ch, v in values.items() if proj[ch][0] > 1e-9)
    l = sum(abs(v) for ch, v in values.items() if proj[ch][0] < -1e-9)
    return 0.0 if r + l == 0 else (r - l) / (r + l)


def render_tfr(tfr: TFR, relevance_windows: Sequence[tuple[float, float]] = (), title: str = "") -> str:
    """Time x frequency power heatmap with translucent bands over the relevance windows."""
    if tfr.power.size == 0:
        raise ValueError("empty TFR")
    W, H, ml, mb, mt, mr = 520, 300, 56, 40, 20, 16
    pw, ph = W - ml - mr, H - mb - mt
    nf, nt = tfr.power.shape
    t0, t1 = float(tfr.times[0]), float(tfr.times[-1]) + (tfr.times[1] - tfr.times[0] if nt > 1 else 1.0)
    pmax = float(tfr.power.max()) or 1.0
    cw, chh = pw / nt, ph / nf
    parts: list[str] = []
    for fi in range(nf):
        y = mt + ph - (fi + 1) * chh  # low frequencies at the bottom
        for ti in range(nt):
            parts.append(
                f'<rect class="tf" x="{ml + ti * cw:.2f}" y="{y:.2f}" width="{cw + 0.05:.2f}" height="{chh + 0.05:.2f}" '
                f'fill="{_color(tfr.power[fi, ti] / pmax)}"/>'
            )
    for a, b in relevance_windows:
        ca, cb = max(a, t0), min(b, t1)
        if (ca, cb) != (a, b):
            log.warning("relevance window (%g, %g) clipped to the TFR time range", a, b)
        if cb <= ca:
            continue
        x0 = ml + (ca - t0) / (t1 - t0) * pw
        x1 = ml + (cb - t0) / (t1 - t0) * pw
        parts.append(
            f'<rect class="window" x="{x0:.2f}" y="{mt}" width="{x1 - x0:.2f}" height="{ph}" '
            f'fill="#2060ff" fill-opacity="0.25" stroke="#2060ff" data-start="{a:g}" data-end="{b:g}"/>'
        )
    parts.append(f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="#000"/>')
    for k in range(0, nf, max(1, nf // 6)):
        y = mt + ph - (k + 0.5) * chh
        parts.append(f'<text x="{ml - 6}" y="{y + 3:.1f}" font-size="10" text-anchor="end">{tfr.freqs[k]:g}</text>')
    for s in np.linspace(t0, t1, 6):
        x = ml + (s - t0) / (t1 - t0) * pw
        parts.append(f'<text x="{x:.1f}" y="{H - mb + 14}" font-size="10" text-anchor="middle">{s:.2f}</text>')
    parts.append(f'<text x="{ml + pw / 2}" y="{H - 6}" font-size="11" text-anchor="middle">Time (s)</text>')
    parts.append(
        f'<text x="14" y="{mt + ph / 2}" font-size="11" text-anchor="middle" '
        f'transform="rotate(-90 14 {mt + ph / 2})">Frequency (Hz)</text>'
    )
    return _svg(parts, W, H, title=title or tfr.channel)


def export_metrics(table: ScenarioTable, directory, stem: str = "metrics") -> tuple[Path, Path]:
    """Write ``<stem>.csv`` and a JSON mirror; returns both paths."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    csv_path, json_path = d / f"{stem}.csv", d / f"{stem}.json"
    csv_path.write_text(table.to_csv())
    doc = {
        "provenance": table.provenance,
        "columns": table.header(),
        "rows": {
            sc: [
                {k: getattr(m, k) for k in ("subject_id", "overall_acc", "left_acc", "right_acc", "chance_level", "n_test", "n_test_left", "n_test_right")}
                for m in ms
            ]
            for sc, ms in table.rows.items()
        },
    }
    json_path.write_text(json.dumps(doc, indent=1, sort_keys=True))
    return csv_path, json_path
