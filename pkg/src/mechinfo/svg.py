"""Minimal deterministic SVG figures (heatmaps, line plots, geometries).

Every function is a pure function of its numeric inputs; coordinates are
printed with fixed precision so reruns give identical files.
"""

from html import escape

import numpy as np

W, H = 480, 360
PAD = 56
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf")


def _f(v):
    return f"{v:.3f}"


def _doc(body, width=W, height=H):
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}">\n'
            f'<rect width="{width}" height="{height}" fill="white"/>\n{body}</svg>\n')


def _text(x, y, s, size=12, anchor="middle", rotate=None):
    rot = f' transform="rotate({rotate} {_f(x)} {_f(y)})"' if rotate is not None else ""
    return (f'<text x="{_f(x)}" y="{_f(y)}" font-family="sans-serif" font-size="{size}" '
            f'text-anchor="{anchor}"{rot}>{escape(str(s))}</text>\n')


def _viridis(t):
    # coarse five-stop approximation of the viridis map
    stops = np.array([[68, 1, 84], [59, 82, 139], [33, 145, 140], [94, 201, 98], [253, 231, 37]])
    t = float(np.clip(t, 0.0, 1.0)) * (len(stops) - 1)
    i = min(int(t), len(stops) - 2)
    c = stops[i] + (t - i) * (stops[i + 1] - stops[i])
    return "#%02x%02x%02x" % tuple(int(round(v)) for v in c)


def heatmap(values, title="", xlabel="", ylabel="", marks=()):
    """Cell heatmap of ``values[row, col]`` (row 0 drawn at the top).

    NaN cells are left blank; ``marks`` are ``(row, col)`` cells outlined.
    """
    v = np.asarray(values, dtype=float)
    ny, nx = v.shape
    finite = v[np.isfinite(v)]
    lo, hi = (finite.min(), finite.max()) if finite.size else (0.0, 1.0)
    span = hi - lo if hi > lo else 1.0
    cw, ch = (W - 2 * PAD) / nx, (H - 2 * PAD) / ny
    body = [_text(W / 2, 24, title, 14)]
    for r in range(ny):
        for c in range(nx):
            if np.isfinite(v[r, c]):
                body.append(f'<rect x="{_f(PAD + c * cw)}" y="{_f(PAD + r * ch)}" '
                            f'width="{_f(cw)}" height="{_f(ch)}" '
                            f'fill="{_viridis((v[r, c] - lo) / span)}"/>\n')
    for r, c in marks:
        body.append(f'<rect x="{_f(PAD + c * cw)}" y="{_f(PAD + r * ch)}" width="{_f(cw)}" '
                    f'height="{_f(ch)}" fill="none" stroke="red" stroke-width="2"/>\n')
    body.append(_text(W / 2, H - 16, xlabel))
    body.append(_text(16, H / 2, ylabel, rotate=-90))
    body.append(_text(W - PAD, H - 16, f"range [{lo:.3g}, {hi:.3g}]", 10, "end"))
    return _doc("".join(body))


def line_plot(series, title="", xlabel="", ylabel="", logx=False):
    """``series``: list of ``(label, x, y)``; markers joined by lines."""
    xs = np.concatenate([np.asarray(s[1], float) for s in series])
    ys = np.concatenate([np.asarray(s[2], float) for s in series])
    ok = np.isfinite(xs) & np.isfinite(ys)
    if logx:
        ok &= xs > 0
    tx = np.log10 if logx else (lambda a: np.asarray(a, float))
    x0, x1 = (tx(xs[ok]).min(), tx(xs[ok]).max()) if ok.any() else (0.0, 1.0)
    y0, y1 = (ys[ok].min(), ys[ok].max()) if ok.any() else (0.0, 1.0)
    x1 = x1 if x1 > x0 else x0 + 1.0
    y1 = y1 if y1 > y0 else y0 + 1.0

    def px(a):
        return PAD + (tx(a) - x0) / (x1 - x0) * (W - 2 * PAD)

    def py(a):
        return H - PAD - (np.asarray(a, float) - y0) / (y1 - y0) * (H - 2 * PAD)

    body = [_text(W / 2, 24, title, 14),
            f'<rect x="{PAD}" y="{PAD}" width="{W - 2 * PAD}" height="{H - 2 * PAD}" '
            f'fill="none" stroke="black"/>\n']
    for i, (label, x, y) in enumerate(series):
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        m = np.isfinite(x) & np.isfinite(y) & ((x > 0) if logx else True)
        col = PALETTE[i % len(PALETTE)]
        if m.sum() > 1:
            pts = " ".join(f"{_f(a)},{_f(b)}" for a, b in zip(px(x[m]), py(y[m])))
            body.append(f'<polyline points="{pts}" fill="none" stroke="{col}"/>\n')
        for a, b in zip(px(x[m]), py(y[m])):
            body.append(f'<circle cx="{_f(a)}" cy="{_f(b)}" r="3" fill="{col}"/>\n')
        body.append(_text(W - PAD - 4, PAD + 14 + 14 * i, label, 10, "end").replace(
            "<text ", f'<text fill="{col}" '))
    body.append(_text(W / 2, H - 16, xlabel))
    body.append(_text(16, H / 2, ylabel, rotate=-90))
    body.append(_text(PAD, H - PAD + 14, f"{x0:.3g}" if not logx else f"1e{x0:.2g}", 10))
    body.append(_text(W - PAD, H - PAD + 14, f"{x1:.3g}" if not logx else f"1e{x1:.2g}", 10))
    body.append(_text(PAD - 4, H - PAD, f"{y0:.3g}", 10, "end"))
    body.append(_text(PAD - 4, PAD + 4, f"{y1:.3g}", 10, "end"))
    return _doc("".join(body))


def geometry_plot(L, outlines=(), lines=(), sensors=(), title=""):
    """Square domain ``[-L/2, L/2] x [0, L]`` with voids, polylines and sensors."""
    size = min(W, H) - 2 * PAD
    ox, oy = (W - size) / 2, PAD

    def px(x):
        return ox + (np.asarray(x, float) + L / 2) / L * size

    def py(y):
        return oy + size - np.asarray(y, float) / L * size

    body = [_text(W / 2, 24, title, 14),
            f'<rect x="{_f(ox)}" y="{_f(oy)}" width="{_f(size)}" height="{_f(size)}" '
            f'fill="#dddddd" stroke="black"/>\n']
    for poly in outlines:
        poly = np.asarray(poly, float)
        pts = " ".join(f"{_f(a)},{_f(b)}" for a, b in zip(px(poly[:, 0]), py(poly[:, 1])))
        body.append(f'<polygon points="{pts}" fill="white" stroke="black" stroke-width="0.5"/>\n')
    for ln in lines:
        ln = np.asarray(ln, float)
        if len(ln) > 1:
            pts = " ".join(f"{_f(a)},{_f(b)}" for a, b in zip(px(ln[:, 0]), py(ln[:, 1])))
            body.append(f'<polyline points="{pts}" fill="none" stroke="#1f77b4" '
                        f'stroke-width="1"/>\n')
    for x in sensors:
        body.append(f'<circle cx="{_f(px(x))}" cy="{_f(py(0.0))}" r="4" fill="red"/>\n')
    return _doc("".join(body))
