"""Deterministic SVG drawing of a dendrogram with its threshold cut."""

from __future__ import annotations

from xml.sax.saxutils import escape

from .cluster import Dendrogram, cut

PALETTE = (
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
    "#8c564b", "#e377c2", "#bcbd22", "#17becf", "#393b79",
)
UNCLUSTERED = "#9e9e9e"


def _fmt(v: float) -> str:
    return f"{v:.2f}".rstrip("0").rstrip(".")


def render_dendrogram_svg(dg: Dendrogram, threshold: float, title: str = "") -> str:
    """Leaves along the x axis, merge height on the y axis.

    Non-singleton clusters at ``threshold`` get palette colours in cluster-id
    order; everything else is drawn grey. The threshold is a dashed line.
    """
    n = dg.n
    step, left, top, plot_h = 18.0, 60.0, 30.0, 300.0
    label_h = 8.0 * max(len(str(t)) for t in dg.leaves) * 0.75 + 20
    width = left + step * n + 20
    height = top + plot_h + label_h
    ymax = max(1.0, float(dg.heights.max()) if dg.merges else 1.0)

    def y(h):
        return top + plot_h * (1.0 - h / ymax)

    cc = cut(dg, threshold)
    sizes = [0] * cc.n_clusters
    for c in cc.assignment:
        sizes[c] += 1
    colour_of_cluster = {}
    for c, size in enumerate(sizes):
        if size > 1:
            colour_of_cluster[c] = PALETTE[len(colour_of_cluster) % len(PALETTE)]

    x = {}
    colour = {}
    for pos, leaf in enumerate(dg.leaf_order()):
        x[leaf] = left + step * (pos + 0.5)
        colour[leaf] = colour_of_cluster.get(cc.assignment[leaf], UNCLUSTERED)
    hnode = {leaf: 0.0 for leaf in range(n)}

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_fmt(width)}" height="{_fmt(height)}" '
        f'viewBox="0 0 {_fmt(width)} {_fmt(height)}" font-family="sans-serif" font-size="10" '
        'data-schema="flakesift.dendrogram" data-schema-version="1">',
        f'<title>{escape(title or "dendrogram")}</title>',
        f'<line class="axis" x1="{_fmt(left - 10)}" y1="{_fmt(y(0))}" x2="{_fmt(left - 10)}" '
        f'y2="{_fmt(y(ymax))}" stroke="black"/>',
    ]
    for tick in range(0, 11, 2):
        v = ymax * tick / 10
        parts.append(
            f'<text class="tick" x="{_fmt(left - 14)}" y="{_fmt(y(v) + 3)}" text-anchor="end">{v:.1f}</text>'
        )
    for k, (a, b, h, _) in enumerate(dg.merges):
        node = n + k
        same = colour[a] == colour[b] and colour[a] != UNCLUSTERED and h <= threshold
        colour[node] = colour[a] if same else UNCLUSTERED
        x[node] = (x[a] + x[b]) / 2
        hnode[node] = h
        d = (
            f"M{_fmt(x[a])},{_fmt(y(hnode[a]))} V{_fmt(y(h))} "
            f"H{_fmt(x[b])} V{_fmt(y(hnode[b]))}"
        )
        parts.append(f'<path class="bracket" d="{d}" fill="none" stroke="{colour[node]}"/>')
    parts.append(
        f'<line class="threshold" x1="{_fmt(left - 10)}" y1="{_fmt(y(threshold))}" x2="{_fmt(width - 10)}" '
        f'y2="{_fmt(y(threshold))}" stroke="black" stroke-dasharray="4,3"/>'
    )
    for leaf in range(n):
        lx, ly = x[leaf], y(0) + 6
        parts.append(
            f'<text class="leaf" x="{_fmt(lx)}" y="{_fmt(ly)}" fill="{colour[leaf]}" '
            f'transform="rotate(60 {_fmt(lx)} {_fmt(ly)})">{escape(str(dg.leaves[leaf]))}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
