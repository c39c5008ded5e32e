"""Plot data for cumulative-energy, ratio and envelope figures, and an SVG writer.

Plot data is a plain dict (``kind``, ``n``, ``series``, ``bands``,
``markers``, ``interval``) so it can be dumped as JSON and rendered
without a plotting stack. Every marker in the SVG carries ``data-n`` and
``data-value`` attributes holding the exact numbers from the data dict.
"""

from __future__ import annotations

import json
import math
from typing import Dict, List, Sequence

import numpy as np

from . import __version__
from .accounting import compute_aet, cumulative_energy
from .asymptotics import asymptotic_ratio, ratio_at_n, sample_n
from .model import EnvelopeResult, encode_number
from .sensitivity import Curve

COLORS = {"nn": "#1f5fbf", "base": "#c62828", "neutral": "#555555", "interval": "#9e9e9e"}


def _floats(values) -> List[float]:
    return [float(v) for v in values]


def curves_plot_data(
    e_train: float,
    e_nn: float,
    e_base: float,
    *,
    pue: float = 1.0,
    epsilon: float = 1e-3,
    feasible: bool = True,
    n_range=(1e2, 1e8, 200),
) -> Dict:
    """Cumulative energy of both solvers against deployed instances."""
    n = sample_n(*n_range)
    nn_vals = cumulative_energy(n, e_train, e_nn, pue)
    base_vals = cumulative_energy(n, 0.0, e_base, pue)
    aet = compute_aet(e_train * pue, e_base * pue, e_nn * pue, epsilon, feasible)
    markers = []
    if not math.isinf(aet):
        markers.append({"label": "AET", "n": aet, "value": cumulative_energy(aet, 0.0, e_base, pue)})
    return {
        "kind": "curves",
        "title": "Cumulative energy vs deployed instances",
        "x_label": "deployed instances N",
        "y_label": "cumulative energy (Wh)",
        "n": _floats(n),
        "series": [
            {"label": "neural", "role": "nn", "values": _floats(nn_vals), "dashed": not feasible},
            {"label": "baseline", "role": "base", "values": _floats(base_vals), "dashed": False},
        ],
        "bands": [],
        "markers": markers,
        "interval": None,
        "crossover": encode_number(aet),
        "epsilon": epsilon,
        "feasible": feasible,
    }


def ratio_plot_data(
    e_train: float,
    e_nn: float,
    e_base: float,
    *,
    pue: float = 1.0,
    n_range=(1e2, 1e8, 200),
) -> Dict:
    """Cumulative neural/baseline ratio with its asymptote."""
    n = sample_n(*n_range)
    ratio = ratio_at_n(n, e_train, e_nn, e_base, pue)
    limit = asymptotic_ratio(e_nn, e_base)
    markers = []
    if e_base > e_nn:
        cross = e_train / (e_base - e_nn)
        if cross >= 1:
            markers.append({"label": "ratio = 1", "n": cross, "value": 1.0})
    return {
        "kind": "ratio",
        "title": "Cumulative energy ratio neural / baseline",
        "x_label": "deployed instances N",
        "y_label": "ratio",
        "n": _floats(n),
        "series": [
            {"label": "ratio", "role": "nn", "values": _floats(ratio), "dashed": False},
            {"label": "asymptote", "role": "neutral", "values": [limit] * len(n), "dashed": True},
            {"label": "parity", "role": "base", "values": [1.0] * len(n), "dashed": True},
        ],
        "bands": [],
        "markers": markers,
        "interval": None,
        "asymptote": limit,
    }


def envelope_plot_data(env: EnvelopeResult, nn_curves: Sequence[Curve] = ()) -> Dict:
    """Bands, interval and infeasible neural curves (dashed)."""
    n = np.asarray(env.n)
    series = [
        {"label": f"infeasible {c.key}", "role": "nn", "values": _floats(c.at(n)), "dashed": True}
        for c in nn_curves
        if not c.feasible
    ]
    markers = []
    if env.aet_interval is not None:
        lo, hi = env.aet_interval
        markers = [
            {"label": "interval low", "n": lo, "value": None},
            {"label": "interval high", "n": hi, "value": None},
        ]
    if not math.isinf(env.median_crossover):
        markers.append({"label": "median crossover", "n": env.median_crossover, "value": None})
    return {
        "kind": "envelope",
        "title": "AET envelope",
        "x_label": "deployed instances N",
        "y_label": "cumulative energy (Wh)",
        "n": _floats(n),
        "series": series,
        "bands": [
            {"label": "neural band", "role": "nn",
             "lower": [lo for lo, _ in env.nn_band], "upper": [hi for _, hi in env.nn_band]},
            {"label": "baseline band", "role": "base",
             "lower": [lo for lo, _ in env.base_band], "upper": [hi for _, hi in env.base_band]},
        ],
        "markers": markers,
        "interval": None if env.aet_interval is None else list(env.aet_interval),
        "median_crossover": encode_number(env.median_crossover),
    }


def plot_data_to_json(data: Dict) -> str:
    return json.dumps(data, indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# SVG
# ---------------------------------------------------------------------------

def _escape(text: str) -> str:
    return (str(text).replace("&", "&amp;").replace("<", "&lt;")
            .replace(">", "&gt;").replace('"', "&quot;"))


def _positive(values) -> List[float]:
    return [v for v in values if v is not None and v > 0 and not math.isinf(v)]


def render_svg(data: Dict, width: int = 900, height: int = 600) -> str:
    """Log-log chart with decade gridlines."""
    left, right, top, bottom = 90, 220, 60, 70
    pw, ph = width - left - right, height - top - bottom

    n = data["n"]
    ys: List[float] = []
    for s in data["series"]:
        ys += _positive(s["values"])
    for b in data["bands"]:
        ys += _positive(b["lower"]) + _positive(b["upper"])
    ys += _positive(m.get("value") for m in data["markers"])
    if not ys:
        ys = [1.0]
    x_lo, x_hi = math.floor(math.log10(min(n))), math.ceil(math.log10(max(n)))
    y_lo, y_hi = math.floor(math.log10(min(ys))), math.ceil(math.log10(max(ys)))
    if y_hi == y_lo:
        y_hi += 1
    if x_hi == x_lo:
        x_hi += 1

    def px(x: float) -> float:
        return left + (math.log10(x) - x_lo) / (x_hi - x_lo) * pw

    def py(y: float) -> float:
        return top + ph - (math.log10(y) - y_lo) / (y_hi - y_lo) * ph

    def clamp_y(y: float) -> float:
        return min(max(y, 10.0 ** y_lo), 10.0 ** y_hi)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" data-generator="aet {__version__}">',
        '<rect x="0" y="0" width="100%" height="100%" fill="#ffffff"/>',
        f'<text x="{width / 2:.1f}" y="30" text-anchor="middle" font-family="sans-serif" '
        f'font-size="18">{_escape(data.get("title", ""))}</text>',
    ]

    for d in range(x_lo, x_hi + 1):
        x = px(10.0 ** d)
        out.append(f'<line x1="{x:.2f}" y1="{top}" x2="{x:.2f}" y2="{top + ph}" stroke="#e0e0e0"/>')
        out.append(f'<text x="{x:.2f}" y="{top + ph + 20}" text-anchor="middle" font-family="sans-serif" '
                   f'font-size="12">1e{d}</text>')
    for d in range(y_lo, y_hi + 1):
        y = py(10.0 ** d)
        out.append(f'<line x1="{left}" y1="{y:.2f}" x2="{left + pw}" y2="{y:.2f}" stroke="#e0e0e0"/>')
        out.append(f'<text x="{left - 8}" y="{y + 4:.2f}" text-anchor="end" font-family="sans-serif" '
                   f'font-size="12">1e{d}</text>')

    interval = data.get("interval")
    if interval:
        x0, x1 = px(max(interval[0], 10.0 ** x_lo)), px(min(interval[1], 10.0 ** x_hi))
        out.append(f'<rect class="interval" x="{x0:.2f}" y="{top}" width="{max(x1 - x0, 1.0):.2f}" '
                   f'height="{ph}" fill="{COLORS["interval"]}" fill-opacity="0.3"/>')
    elif data["kind"] == "envelope":
        out.append(f'<text x="{left + 10}" y="{top + 20}" font-family="sans-serif" font-size="13">'
                   f'AET interval: none</text>')

    for band in data["bands"]:
        color = COLORS.get(band["role"], COLORS["neutral"])
        upper = [f"{px(x):.2f},{py(clamp_y(y)):.2f}" for x, y in zip(n, band["upper"]) if y > 0]
        lower = [f"{px(x):.2f},{py(clamp_y(y)):.2f}" for x, y in zip(n, band["lower"]) if y > 0]
        pts = " ".join(upper + lower[::-1])
        out.append(f'<polygon class="band" points="{pts}" fill="{color}" fill-opacity="0.25" '
                   f'stroke="{color}" stroke-width="1"/>')

    for s in data["series"]:
        color = COLORS.get(s["role"], COLORS["neutral"])
        pts = " ".join(f"{px(x):.2f},{py(clamp_y(y)):.2f}" for x, y in zip(n, s["values"]) if y > 0)
        dash = ' stroke-dasharray="6,4"' if s.get("dashed") else ""
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="2"{dash} points="{pts}"/>')

    for m in data["markers"]:
        value = m.get("value")
        cy = py(clamp_y(value)) if value else top + ph / 2
        out.append(
            f'<circle class="marker" cx="{px(m["n"]):.2f}" cy="{cy:.2f}" r="5" fill="#000000" '
            f'data-label="{_escape(m["label"])}" data-n="{m["n"]!r}" '
            f'data-value="{"" if value is None else repr(value)}"/>'
        )

    lx, ly = left + pw + 20, top + 10
    entries = [(s["label"], s["role"], s.get("dashed")) for s in data["series"][:8]]
    entries += [(b["label"], b["role"], False) for b in data["bands"]]
    for i, (label, role, dashed) in enumerate(entries):
        y = ly + 22 * i
        dash = ' stroke-dasharray="6,4"' if dashed else ""
        out.append(f'<line x1="{lx}" y1="{y}" x2="{lx + 24}" y2="{y}" '
                   f'stroke="{COLORS.get(role, COLORS["neutral"])}" stroke-width="3"{dash}/>')
        out.append(f'<text x="{lx + 30}" y="{y + 4}" font-family="sans-serif" font-size="12">{_escape(label[:28])}</text>')

    out.append(f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="#000000"/>')
    out.append(f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="#000000"/>')
    out.append(f'<text x="{left + pw / 2:.1f}" y="{height - 20}" text-anchor="middle" font-family="sans-serif" '
               f'font-size="14">{_escape(data.get("x_label", ""))}</text>')
    cy = top + ph / 2
    out.append(f'<text x="24" y="{cy:.1f}" text-anchor="middle" font-family="sans-serif" font-size="14" '
               f'transform="rotate(-90 24 {cy:.1f})">{_escape(data.get("y_label", ""))}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"

