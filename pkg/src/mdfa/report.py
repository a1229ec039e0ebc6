"""Static SVG line charts of squared error against sample size."""

import math
from xml.sax.saxutils import escape

PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
           "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")
WIDTH, HEIGHT = 800, 600
LEFT, RIGHT, TOP, BOTTOM = 90, 190, 50, 70
METRIC_LABELS = {"mean_se_lambda": "mean SE of loadings", "mean_se_total": "mean SE of loadings + unique variances",
                 "median_se_lambda": "median SE of loadings"}


def _fmt(x):
    return f"{x:.2f}"


def _tick_label(v):
    return f"1e{v}" if v < -2 or v > 3 else f"{10.0 ** v:g}"


def render_svg(rows, setting, metric="mean_se_lambda"):
    """One chart for ``setting``: log-scale ``metric`` vs n, one polyline per estimator.

    ``rows`` are summary dicts as produced by :func:`mdfa.simulation.summarize`.
    """
    series = {}
    for r in rows:
        if r["setting"] != setting:
            continue
        v = r.get(metric)
        if v is None or not math.isfinite(v) or v <= 0:
            continue
        series.setdefault(r["estimator"], []).append((int(r["n"]), float(v)))
    for pts in series.values():
        pts.sort()
    all_pts = [pt for pts in series.values() for pt in pts]

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {WIDTH} {HEIGHT}" width="{WIDTH}" height="{HEIGHT}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{(LEFT + WIDTH - RIGHT) / 2:.1f}" y="28" text-anchor="middle" font-family="sans-serif" '
        f'font-size="18">Setting {escape(setting)}</text>',
    ]
    x0, x1, y0, y1 = LEFT, WIDTH - RIGHT, HEIGHT - BOTTOM, TOP
    out.append(f'<rect x="{x0}" y="{y1}" width="{x1 - x0}" height="{y0 - y1}" fill="none" stroke="black"/>')
    if all_pts:
        ns = sorted({n for n, _ in all_pts})
        nmin, nmax = ns[0], ns[-1]
        if nmin == nmax:
            nmin, nmax = nmin - 1, nmax + 1
        lo = math.floor(math.log10(min(v for _, v in all_pts)))
        hi = math.ceil(math.log10(max(v for _, v in all_pts)))
        if lo == hi:
            hi = lo + 1

        def sx(n):
            return x0 + (n - nmin) / (nmax - nmin) * (x1 - x0)

        def sy(v):
            return y0 - (math.log10(v) - lo) / (hi - lo) * (y0 - y1)

        for n in ns:
            out.append(f'<line x1="{_fmt(sx(n))}" y1="{y0}" x2="{_fmt(sx(n))}" y2="{y0 + 6}" stroke="black"/>')
            out.append(f'<text x="{_fmt(sx(n))}" y="{y0 + 22}" text-anchor="middle" font-family="sans-serif" '
                       f'font-size="12">{n}</text>')
        for e in range(lo, hi + 1):
            y = _fmt(sy(10.0**e))
            out.append(f'<line x1="{x0 - 6}" y1="{y}" x2="{x1}" y2="{y}" stroke="#dddddd"/>')
            out.append(f'<text x="{x0 - 10}" y="{y}" text-anchor="end" dominant-baseline="middle" '
                       f'font-family="sans-serif" font-size="12">{_tick_label(e)}</text>')
        for k, (name, pts) in enumerate(sorted(series.items())):
            color = PALETTE[k % len(PALETTE)]
            coords = " ".join(f"{_fmt(sx(n))},{_fmt(sy(v))}" for n, v in pts)
            out.append(f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="2" '
                       f'data-estimator="{escape(name)}"/>')
            for n, v in pts:
                out.append(f'<circle cx="{_fmt(sx(n))}" cy="{_fmt(sy(v))}" r="3" fill="{color}"/>')
            ly = TOP + 20 + 22 * k
            out.append(f'<line x1="{x1 + 20}" y1="{ly}" x2="{x1 + 50}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
            out.append(f'<text x="{x1 + 58}" y="{ly}" dominant-baseline="middle" font-family="sans-serif" '
                       f'font-size="13">{escape(name)}</text>')
    out.append(f'<text x="{(x0 + x1) / 2:.1f}" y="{HEIGHT - 20}" text-anchor="middle" font-family="sans-serif" '
               f'font-size="14">sample size n</text>')
    out.append(f'<text x="22" y="{(y0 + y1) / 2:.1f}" text-anchor="middle" font-family="sans-serif" font-size="14" '
               f'transform="rotate(-90 22 {(y0 + y1) / 2:.1f})">{escape(METRIC_LABELS.get(metric, metric))} '
               f'(log scale)</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
