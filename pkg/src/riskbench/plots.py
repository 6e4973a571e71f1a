"""Minimal static SVG charts: rank boxplots, heatmaps and scatter plots."""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")


def _svg(width, height, body):
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">\n'
        f'<rect width="{width}" height="{height}" fill="white"/>\n' + "\n".join(body) + "\n</svg>\n"
    )


def _fmt(x):
    return f"{x:.2f}"


def rank_boxplot(names, rank_matrix, title="", max_features=30):
    """Horizontal boxplots of ranks per feature, best median first (lower rank = more important)."""
    ranks = np.asarray(rank_matrix, dtype=float)
    med = np.median(ranks, axis=0)
    order = sorted(range(len(names)), key=lambda i: (med[i], names[i]))[:max_features]
    n_ranks = ranks.shape[1]
    left, top, row_h, plot_w = 210, 40, 18, 420
    height = top + row_h * len(order) + 40
    width = left + plot_w + 30

    def x(r):
        return left + (r - 1) / max(n_ranks - 1, 1) * plot_w

    body = [f'<text x="{width / 2}" y="20" text-anchor="middle" font-size="13">{escape(title)}</text>']
    for row, i in enumerate(order):
        y = top + row * row_h + row_h / 2
        q0, q1, q2, q3, q4 = np.percentile(ranks[:, i], [0, 25, 50, 75, 100])
        body.append(f'<text x="{left - 6}" y="{_fmt(y + 4)}" text-anchor="end">{escape(names[i])}</text>')
        body.append(f'<line x1="{_fmt(x(q0))}" y1="{_fmt(y)}" x2="{_fmt(x(q4))}" y2="{_fmt(y)}" stroke="#555"/>')
        body.append(f'<rect x="{_fmt(x(q1))}" y="{_fmt(y - 6)}" width="{_fmt(max(x(q3) - x(q1), 1))}" '
                    f'height="12" fill="#9ecae1" stroke="#3182bd"/>')
        body.append(f'<line x1="{_fmt(x(q2))}" y1="{_fmt(y - 6)}" x2="{_fmt(x(q2))}" y2="{_fmt(y + 6)}" '
                    f'stroke="#08306b" stroke-width="2"/>')
    axis_y = top + row_h * len(order) + 8
    body.append(f'<line x1="{left}" y1="{axis_y}" x2="{left + plot_w}" y2="{axis_y}" stroke="black"/>')
    for r in sorted({1, max(n_ranks // 2, 1), n_ranks}):
        body.append(f'<text x="{_fmt(x(r))}" y="{axis_y + 14}" text-anchor="middle">{r}</text>')
    body.append(f'<text x="{left + plot_w / 2}" y="{axis_y + 28}" text-anchor="middle">rank</text>')
    return _svg(width, height, body)


def heatmap(row_labels, col_labels, values, title=""):
    values = np.asarray(values, dtype=float)
    left, top, cell = 170, 40, 28
    width = left + cell * len(col_labels) + 20
    height = top + cell * len(row_labels) + 50
    vmax = float(values.max()) if values.size and values.max() > 0 else 1.0
    body = [f'<text x="{width / 2}" y="20" text-anchor="middle" font-size="13">{escape(title)}</text>']
    for i, r in enumerate(row_labels):
        y = top + i * cell
        body.append(f'<text x="{left - 6}" y="{y + cell / 2 + 4}" text-anchor="end">{escape(r)}</text>')
        for j in range(len(col_labels)):
            shade = int(round(255 * (1.0 - values[i, j] / vmax)))
            body.append(f'<rect x="{left + j * cell}" y="{y}" width="{cell}" height="{cell}" '
                        f'fill="rgb(255,{shade},{shade})" stroke="#ddd"/>')
    for j, c in enumerate(col_labels):
        x = left + j * cell + cell / 2
        body.append(f'<text x="{x}" y="{top + cell * len(row_labels) + 14}" text-anchor="middle">{escape(c)}</text>')
    return _svg(width, height, body)


def scatter(coords, labels, title="", label_names=None):
    coords = np.asarray(coords, dtype=float)
    labels = np.asarray(labels)
    size, pad = 480, 30
    lo, hi = coords.min(axis=0), coords.max(axis=0)
    span = np.where(hi - lo > 0, hi - lo, 1.0)
    pts = pad + (coords - lo) / span * (size - 2 * pad)
    classes = sorted(set(labels.tolist()))
    body = [f'<text x="{size / 2}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>']
    for k, c in enumerate(classes):
        colour = PALETTE[k % len(PALETTE)]
        for (px, py) in pts[labels == c]:
            body.append(f'<circle cx="{_fmt(px)}" cy="{_fmt(size - py)}" r="2.5" fill="{colour}" fill-opacity="0.7"/>')
        name = label_names.get(c, str(c)) if label_names else str(c)
        body.append(f'<text x="{size - 90}" y="{40 + 14 * k}" fill="{colour}">{escape(name)}</text>')
    return _svg(size, size, body)
