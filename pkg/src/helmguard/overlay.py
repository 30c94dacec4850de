"""Candidate overlay rendering for the selector input and operator view.

Rendering is deterministic: fixed palette, fixed glyph geometry (14 px label
circles, 3 px polylines), and the bundled PIL bitmap font, so identical
inputs produce byte-identical PNGs.
"""

from __future__ import annotations

import io

import numpy as np
from PIL import Image, ImageDraw, ImageFont

from .candidates import CandidateSet

LABEL_RADIUS = 14
LINE_WIDTH = 3
LEGEND_TEXT = "0 = station-keep"

# Fixed palette; candidate id k uses PALETTE[(k - 1) % len(PALETTE)].
PALETTE = [
    (60, 200, 60),
    (230, 180, 40),
    (70, 140, 240),
    (230, 90, 60),
    (170, 80, 220),
    (60, 210, 200),
    (240, 120, 180),
    (150, 200, 60),
]


def water_backdrop(grid_water: np.ndarray) -> np.ndarray:
    """Synthesized base image for scenarios without a camera frame."""
    h, w = grid_water.shape
    img = np.empty((h, w, 3), dtype=np.uint8)
    img[grid_water] = (40, 70, 110)
    img[~grid_water] = (120, 120, 115)
    return img


def render_overlay(base_image: np.ndarray, cset: CandidateSet) -> np.ndarray:
    """Draw candidate polylines and circled numeric labels onto a copy of the image."""
    base = np.asarray(base_image, dtype=np.uint8)
    if base.ndim != 3 or base.shape[2] != 3:
        raise ValueError("base image must be HxWx3 uint8")
    img = Image.fromarray(base.copy(), mode="RGB")
    draw = ImageDraw.Draw(img)
    font = ImageFont.load_default()
    for cand in cset.candidates:
        color = PALETTE[(cand.id - 1) % len(PALETTE)]
        # Break the polyline at invisible samples instead of bridging gaps.
        run = []
        for px in cand.samples_pixel:
            if px is None:
                _draw_run(draw, run, color)
                run = []
            else:
                run.append((px.u, px.v))
        _draw_run(draw, run, color)
    for cand in cset.candidates:
        color = PALETTE[(cand.id - 1) % len(PALETTE)]
        cx, cy = cand.endpoint_pixel.u, cand.endpoint_pixel.v
        draw.ellipse(
            [cx - LABEL_RADIUS, cy - LABEL_RADIUS, cx + LABEL_RADIUS, cy + LABEL_RADIUS],
            fill=color,
            outline=(255, 255, 255),
            width=2,
        )
        _draw_centered_text(draw, font, str(cand.id), cx, cy)
    _draw_legend(draw, font)
    return np.asarray(img)


def _draw_run(draw: ImageDraw.ImageDraw, run: list, color: tuple) -> None:
    if len(run) >= 2:
        draw.line(run, fill=color, width=LINE_WIDTH)


def _draw_centered_text(draw: ImageDraw.ImageDraw, font, text: str, cx: float, cy: float) -> None:
    left, top, right, bottom = draw.textbbox((0, 0), text, font=font)
    w, h = right - left, bottom - top
    draw.text((cx - w / 2 - left, cy - h / 2 - top), text, fill=(0, 0, 0), font=font)


def _draw_legend(draw: ImageDraw.ImageDraw, font) -> None:
    left, top, right, bottom = draw.textbbox((0, 0), LEGEND_TEXT, font=font)
    pad = 4
    draw.rectangle([2, 2, 2 + (right - left) + 2 * pad, 2 + (bottom - top) + 2 * pad],
                   fill=(0, 0, 0))
    draw.text((2 + pad - left, 2 + pad - top), LEGEND_TEXT, fill=(255, 255, 255), font=font)


def png_bytes(image: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(np.asarray(image, dtype=np.uint8), mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def save_png(path, image: np.ndarray) -> None:
    with open(path, "wb") as f:
        f.write(png_bytes(image))
