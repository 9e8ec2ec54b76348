"""Self-contained SVG overlays of a planar density and a fitted curve."""

from __future__ import annotations

import numpy as np
from contourpy import contour_generator

from .models import DensityModel, GaussianMixture, MultivariateGaussian, Ring, SmoothedUniformBall

SIZE = 600
MARGIN = 30
LEVELS = (0.05, 0.2, 0.4, 0.6, 0.8)


def _density_box(density: DensityModel) -> np.ndarray:
    """Points whose bounding box covers the bulk of the density."""
    if isinstance(density, GaussianMixture):
        r = 3.0 * np.sqrt(density.variance)
        return np.concatenate([density.centers - r, density.centers + r])
    if isinstance(density, MultivariateGaussian):
        r = 3.0 * np.sqrt(np.diag(density.covariance))
        return np.stack([density.mean - r, density.mean + r])
    if isinstance(density, Ring):
        r = density.radius + 3.0 * density.width
        return np.stack([density.center - r, density.center + r])
    if isinstance(density, SmoothedUniformBall):
        r = 1.1 * density.radius
        return np.stack([density.center - r, density.center + r])
    raise TypeError(f"no plotting extent for {type(density).__name__}")


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _polyline(points: np.ndarray, **attrs) -> str:
    coords = " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in points)
    extra = " ".join(f'{k.replace("_", "-")}="{v}"' for k, v in attrs.items())
    return f'<polyline points="{coords}" fill="none" {extra}/>'


def curve_overlay_svg(density: DensityModel, curve: np.ndarray, grid: int = 160) -> str:
    """Density contours, mixture centers and a curve, in a 600x600 viewBox.

    The data-to-pixel map is an axis-aligned affine transform with equal
    scales, written into a comment at the top of the document.
    """
    if density.ambient_dim != 2:
        raise ValueError("overlay plots need a planar density")
    curve = np.asarray(curve, dtype=float).reshape(-1, 2)
    curve = curve[np.all(np.isfinite(curve), axis=1)]
    pts = np.concatenate([_density_box(density), curve])
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    span = float(max(hi - lo)) * 1.05 or 1.0
    mid = 0.5 * (lo + hi)
    x0, y0 = mid - 0.5 * span
    s = (SIZE - 2 * MARGIN) / span
    tx, ty = MARGIN - s * x0, SIZE - MARGIN + s * y0

    def to_px(xy):
        xy = np.asarray(xy, dtype=float).reshape(-1, 2)
        return np.c_[s * xy[:, 0] + tx, -s * xy[:, 1] + ty]

    xs = np.linspace(x0, x0 + span, grid)
    ys = np.linspace(y0, y0 + span, grid)
    X, Y = np.meshgrid(xs, ys)
    P = np.exp(density.log_density(np.c_[X.ravel(), Y.ravel()])).reshape(X.shape)
    gen = contour_generator(X, Y, P)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {SIZE} {SIZE}" width="{SIZE}" height="{SIZE}">',
        f"<!-- data-to-svg affine transform: X = {s:.6g}*x + {tx:.6g}, Y = {-s:.6g}*y + {ty:.6g} -->",
        f'<rect x="0" y="0" width="{SIZE}" height="{SIZE}" fill="white"/>',
        '<g id="contours" stroke="#7a8fb8" stroke-width="1">',
    ]
    pmax = float(P.max())
    for frac in LEVELS:
        for line in gen.lines(frac * pmax):
            if len(line) > 1:
                out.append(_polyline(to_px(line)))
    out.append("</g>")
    if isinstance(density, GaussianMixture):
        out.append('<g id="centers" fill="#d04030">')
        for cx, cy in to_px(density.centers):
            out.append(f'<circle cx="{_fmt(cx)}" cy="{_fmt(cy)}" r="4"/>')
        out.append("</g>")
    out.append('<g id="curve">')
    out.append(_polyline(to_px(curve), stroke="#202020", stroke_width="2"))
    out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"
