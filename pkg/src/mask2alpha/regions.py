"""Trimap-like guidance built from a binary mask, and per-region attention weights."""
from __future__ import annotations

from enum import IntEnum

import numpy as np
from scipy.ndimage import maximum_filter

from .errors import ShapeError
from .numerics import bilinear_resize_forward


class Region(IntEnum):
    BACKGROUND = 0
    FOREGROUND = 1
    EDGE = 2


# indexed by Region value
_WEIGHTS = np.array([0.5, 2.0, 1.0])
# tie-break rank when several labels share the patch majority
_PRIORITY = np.array([0, 1, 2])


def as_mask(mask):
    m = np.asarray(mask)
    if m.ndim != 2 or m.size == 0:
        raise ShapeError(f"mask must be a non-empty 2-D grid, got shape {m.shape}")
    if not np.isin(m, (0, 1)).all():
        raise ValueError("guidance mask must be strictly binary")
    return m.astype(np.uint8)


def build_region_map(mask, band_radius=2):
    """Label each cell BACKGROUND, FOREGROUND or EDGE.

    A cell is EDGE when some cell of the opposite mask value lies within
    chessboard distance ``band_radius`` (inclusive).
    """
    m = as_mask(mask)
    if band_radius < 1:
        raise ValueError("band_radius must be >= 1")
    size = 2 * band_radius + 1
    near_fg = maximum_filter(m, size=size, mode="constant", cval=0).astype(bool)
    near_bg = maximum_filter(1 - m, size=size, mode="constant", cval=0).astype(bool)
    fg = m.astype(bool)
    edge = (fg & near_bg) | (~fg & near_fg)
    out = np.where(fg, Region.FOREGROUND, Region.BACKGROUND).astype(np.uint8)
    out[edge] = Region.EDGE
    return out


def region_weights(region_map):
    return _WEIGHTS[np.asarray(region_map, dtype=np.intp)]


def downsample_mask(mask, factor):
    m = as_mask(mask)
    if factor < 2:
        raise ValueError("factor must be >= 2")
    h, w = m.shape
    if h % factor or w % factor:
        raise ShapeError(f"{h}x{w} mask not divisible by {factor}")
    small = bilinear_resize_forward(m[None].astype(float), h // factor, w // factor)[0]
    return (small >= 0.5).astype(np.uint8)


def patch_labels(region_map, patch=2):
    """Majority label of each ``patch``x``patch`` block; ties go EDGE > FOREGROUND > BACKGROUND."""
    r = np.asarray(region_map)
    h, w = r.shape
    if h % patch or w % patch:
        raise ShapeError(f"{h}x{w} region map not divisible by patch {patch}")
    blocks = r.reshape(h // patch, patch, w // patch, patch).transpose(0, 2, 1, 3)
    blocks = blocks.reshape(h // patch, w // patch, patch * patch)
    counts = np.stack([(blocks == lab).sum(axis=-1) for lab in Region], axis=-1)
    # counts dominate; priority only separates equal counts
    score = counts * 4 + _PRIORITY
    return np.argmax(score, axis=-1).astype(np.uint8)
