"""Static SVG renderings of scene frames.

Hand-rolled SVG output keeps render bytes fully deterministic: fixed
coordinate formatting, fixed element order, no timestamps.
"""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

from .model import FeatureClass, InvarianceClass, MapFrame

CLASS_COLORS = {
    FeatureClass.LANE_CENTER: "#1f77b4",
    FeatureClass.LANE_DIVIDER: "#ff7f0e",
    FeatureClass.ROAD_BOUNDARY: "#2ca02c",
    FeatureClass.DRIVEWAY: "#9467bd",
    FeatureClass.NO_OBJECT: "#bbbbbb",
}

#: stroke-dasharray per overlay layer name; unknown layers render solid.
LAYER_DASH = {"ground_truth": "", "prediction": "6,4", "prior": "2,3"}


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _feature_element(feature, to_px, dash: str, width: float) -> str:
    pts = " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in (to_px(p) for p in feature.points))
    color = CLASS_COLORS[feature.feature_class]
    tag = "polygon" if feature.invariance is InvarianceClass.POLYGON else "polyline"
    dash_attr = f' stroke-dasharray="{dash}"' if dash else ""
    return (
        f'<{tag} points="{pts}" fill="none" stroke="{color}" '
        f'stroke-width="{_fmt(width)}"{dash_attr} stroke-linecap="round"/>'
    )


def frame_svg(
    layers: Sequence[tuple[str, MapFrame]],
    size_px: int = 800,
) -> str:
    """Render one or more layers of the same scene into an SVG string.

    Layers are (name, frame) pairs sharing a field of view; the first
    layer's FOV sets the viewport. Ground truth renders solid, predictions
    dashed, priors dotted.
    """
    if not layers:
        raise ValueError("at least one layer is required")
    fov = layers[0][1].fov_side
    scale = size_px / fov

    def to_px(p) -> tuple[float, float]:
        return ((p[0] + fov / 2.0) * scale, (fov / 2.0 - p[1]) * scale)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size_px}" height="{size_px}" '
        f'viewBox="0 0 {size_px} {size_px}">',
        f'<rect x="0" y="0" width="{size_px}" height="{size_px}" fill="#ffffff" '
        f'stroke="#444444" stroke-width="1"/>',
    ]
    for k, (name, frame) in enumerate(layers):
        dash = LAYER_DASH.get(name, "")
        width = 2.5 if k == 0 else 1.8
        parts.append(f"<g><!-- {name}: {frame.frame_id} -->")
        for feat in frame.features:
            parts.append(_feature_element(feat, to_px, dash, width))
        parts.append("</g>")
    # Ego marker at the origin.
    cx = cy = size_px / 2.0
    parts.append(
        f'<circle cx="{_fmt(cx)}" cy="{_fmt(cy)}" r="4" fill="#d62728"/>'
    )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_frame_svg(
    path: str | Path, layers: Sequence[tuple[str, MapFrame]], size_px: int = 800
) -> None:
    Path(path).write_text(frame_svg(layers, size_px), encoding="utf-8")
