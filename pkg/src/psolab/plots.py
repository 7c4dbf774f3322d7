"""Static SVG renderings of analysis artifacts.

Everything is emitted as hand-built SVG with numeric labels embedded as text,
so renderings are a pure function of their input data and can be diffed.
"""
from __future__ import annotations

import numpy as np

__all__ = [
    "curve_svg",
    "heatmap_svg",
    "box_summary_svg",
    "dendrogram_svg",
]

_FONT = 'font-family="monospace" font-size="10"'


def _fmt(value) -> str:
    return format(float(value), ".6g")


def _document(width, height, body) -> str:
    head = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">'
    )
    return "\n".join([head, *body, "</svg>"]) + "\n"


def curve_svg(points, title="", y_max=1.0, width=480, height=320) -> str:
    """Polyline through (x, y) points with y fixed to [0, y_max]."""
    points = [(float(x), float(y)) for x, y in points]
    if not points:
        raise ValueError("no points to plot")
    margin = 40
    xs = [p[0] for p in points]
    x_lo, x_hi = min(xs), max(xs)
    span = (x_hi - x_lo) or 1.0
    plot_w, plot_h = width - 2 * margin, height - 2 * margin

    def px(x):
        return margin + (x - x_lo) / span * plot_w

    def py(y):
        return height - margin - min(max(y / y_max, 0.0), 1.0) * plot_h

    coords = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in points)
    body = [
        f'<text x="{margin}" y="16" {_FONT}>{title}</text>',
        f'<rect x="{margin}" y="{margin}" width="{plot_w}" height="{plot_h}" '
        'fill="none" stroke="black"/>',
        f'<polyline points="{coords}" fill="none" stroke="steelblue" stroke-width="1.5"/>',
        f'<text x="{margin}" y="{height - margin + 14}" {_FONT}>{_fmt(x_lo)}</text>',
        f'<text x="{width - margin - 30}" y="{height - margin + 14}" {_FONT}>{_fmt(x_hi)}</text>',
        f'<text x="4" y="{height - margin}" {_FONT}>0</text>',
        f'<text x="4" y="{margin + 8}" {_FONT}>{_fmt(y_max)}</text>',
        f'<text x="{width - margin - 60}" y="16" {_FONT}>last={_fmt(points[-1][1])}</text>',
    ]
    return _document(width, height, body)


def _shade(value, lo, hi) -> str:
    if hi <= lo:
        frac = 0.5
    else:
        frac = (value - lo) / (hi - lo)
    level = int(round(255 * (1.0 - frac)))
    return f"rgb({level},{level},255)"


def heatmap_svg(row_labels, col_labels, values, title="", cell=None, label_cells=True) -> str:
    """Grid heatmap with one labeled cell per value."""
    values = np.asarray(values, dtype=float)
    n_rows, n_cols = values.shape
    if cell is None:
        cell = 46 if label_cells else 12
    left, top = 90, 60
    width = left + n_cols * cell + 20
    height = top + n_rows * cell + 20
    lo, hi = float(values.min()), float(values.max())
    body = [f'<text x="10" y="16" {_FONT}>{title}</text>']
    for j, label in enumerate(col_labels):
        body.append(
            f'<text x="{left + j * cell + 2}" y="{top - 6}" {_FONT} '
            f'transform="rotate(-35 {left + j * cell + 2} {top - 6})">{label}</text>'
        )
    for i, label in enumerate(row_labels):
        body.append(f'<text x="4" y="{top + i * cell + cell / 2 + 3}" {_FONT}>{label}</text>')
        for j in range(n_cols):
            x, y = left + j * cell, top + i * cell
            body.append(
                f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" '
                f'fill="{_shade(values[i, j], lo, hi)}" stroke="white"/>'
            )
            if label_cells:
                body.append(
                    f'<text x="{x + 3}" y="{y + cell / 2 + 3}" {_FONT}>{_fmt(values[i, j])}</text>'
                )
    return _document(width, height, body)


def box_summary_svg(names, stats, title="", width=None, height=320) -> str:
    """Five-number boxes per entry; stats rows are (min, q1, median, q3, max)."""
    stats = np.asarray(stats, dtype=float)
    n = stats.shape[0]
    slot = 34
    margin = 50
    if width is None:
        width = margin * 2 + n * slot
    lo = float(stats.min())
    hi = float(stats.max())
    span = (hi - lo) or 1.0
    plot_h = height - 2 * margin

    def py(v):
        return height - margin - (v - lo) / span * plot_h

    body = [
        f'<text x="{margin}" y="16" {_FONT}>{title}</text>',
        f'<text x="4" y="{py(lo) + 4:.2f}" {_FONT}>{_fmt(lo)}</text>',
        f'<text x="4" y="{py(hi) + 4:.2f}" {_FONT}>{_fmt(hi)}</text>',
    ]
    for i, name in enumerate(names):
        cx = margin + i * slot + slot / 2
        w = slot * 0.5
        v_min, q1, med, q3, v_max = stats[i]
        body.extend(
            [
                f'<line x1="{cx:.2f}" y1="{py(v_min):.2f}" x2="{cx:.2f}" y2="{py(v_max):.2f}" stroke="black"/>',
                f'<rect x="{cx - w / 2:.2f}" y="{py(q3):.2f}" width="{w:.2f}" '
                f'height="{abs(py(q1) - py(q3)):.2f}" fill="lightsteelblue" stroke="black"/>',
                f'<line x1="{cx - w / 2:.2f}" y1="{py(med):.2f}" x2="{cx + w / 2:.2f}" '
                f'y2="{py(med):.2f}" stroke="firebrick" stroke-width="2"/>',
                f'<text x="{cx - w / 2:.2f}" y="{height - margin + 14}" {_FONT} '
                f'transform="rotate(45 {cx - w / 2:.2f} {height - margin + 14})">{name}</text>',
            ]
        )
    return _document(width, height, body)


def dendrogram_svg(merges, leaf_names, title="", width=560, height=380) -> str:
    """Merge tree with heights on the vertical axis; leaves in dendrogram order."""
    n = len(leaf_names)
    margin = 50
    max_h = max(h for _, _, h, _ in merges) if merges else 1.0
    if max_h <= 0:
        max_h = 1.0
    plot_h = height - 2 * margin

    # leaf order: expand the final cluster recursively
    children = {new: (a, b) for a, b, _, new in merges}

    def leaves_of(node):
        if node < n:
            return [node]
        a, b = children[node]
        return leaves_of(a) + leaves_of(b)

    order = leaves_of(merges[-1][3]) if merges else list(range(n))
    slot = (width - 2 * margin) / max(n, 1)
    x_pos = {leaf: margin + order.index(leaf) * slot + slot / 2 for leaf in range(n)}
    y_pos = {leaf: float(height - margin) for leaf in range(n)}

    def py(h):
        return height - margin - h / max_h * plot_h

    body = [
        f'<text x="{margin}" y="16" {_FONT}>{title}</text>',
        f'<text x="4" y="{py(max_h) + 4:.2f}" {_FONT}>{_fmt(max_h)}</text>',
        f'<text x="4" y="{height - margin + 4}" {_FONT}>0</text>',
    ]
    for a, b, h, new in merges:
        xa, xb = x_pos[a], x_pos[b]
        ya, yb, yn = y_pos[a], y_pos[b], py(h)
        body.extend(
            [
                f'<line x1="{xa:.2f}" y1="{ya:.2f}" x2="{xa:.2f}" y2="{yn:.2f}" stroke="black"/>',
                f'<line x1="{xb:.2f}" y1="{yb:.2f}" x2="{xb:.2f}" y2="{yn:.2f}" stroke="black"/>',
                f'<line x1="{xa:.2f}" y1="{yn:.2f}" x2="{xb:.2f}" y2="{yn:.2f}" stroke="black"/>',
                f'<text x="{(xa + xb) / 2:.2f}" y="{yn - 3:.2f}" {_FONT}>{_fmt(h)}</text>',
            ]
        )
        x_pos[new] = (xa + xb) / 2
        y_pos[new] = yn
    for leaf in range(n):
        body.append(
            f'<text x="{x_pos[leaf] - slot / 4:.2f}" y="{height - margin + 14}" {_FONT} '
            f'transform="rotate(45 {x_pos[leaf] - slot / 4:.2f} {height - margin + 14})">'
            f"{leaf_names[leaf]}</text>"
        )
    return _document(width, height, body)
