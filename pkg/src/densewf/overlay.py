"""Orientation overlays: hue encodes twice the normal angle, corners are white."""
from __future__ import annotations

import colorsys

import numpy as np
from PIL import Image

from .densee import detect_corners
from .radon import N_ANGLES


def _gray(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image, dtype=float)
    lo, hi = float(image.min()), float(image.max())
    g = (image - lo) / (hi - lo) if hi > lo else np.zeros_like(image)
    return np.round(g * 255).astype(np.uint8)


def bin_colors() -> np.ndarray:
    """RGB (uint8) for every bin: HSV hue 2*theta degrees, full saturation and value."""
    rgb = [colorsys.hsv_to_rgb((2.0 * t % 360.0) / 360.0, 1.0, 1.0) for t in range(N_ANGLES)]
    return np.round(np.asarray(rgb) * 255).astype(np.uint8)


def render_overlay(image: np.ndarray, wf: np.ndarray) -> np.ndarray:
    """RGB raster: grayscale image, WF pixels colored by their circular-mean bin."""
    gray = _gray(image)
    rgb = np.repeat(gray[..., None], 3, axis=-1)
    mask = np.asarray(wf).astype(bool)
    if mask.shape != gray.shape + (N_ANGLES,):
        raise ValueError(f"mask shape {mask.shape} does not match image {gray.shape}")
    hit = mask.any(axis=-1)
    if hit.any():
        # circular mean of the doubled angles
        t = np.radians(2.0 * np.arange(N_ANGLES))
        c = (mask[hit] * np.cos(t)).sum(axis=-1)
        s = (mask[hit] * np.sin(t)).sum(axis=-1)
        bins = np.round(np.degrees(np.arctan2(s, c)) % 360.0 / 2.0).astype(int) % N_ANGLES
        rgb[hit] = bin_colors()[bins]
    for i, j in detect_corners(mask):
        rgb[i, j] = 255
    return rgb


def color_wheel(size: int = 128) -> np.ndarray:
    """Legend: an annulus whose hue at polar angle a is the color of bin a/2.

    Polar angles are measured in (row, column) coordinates like the bins.
    """
    c = (size - 1) / 2.0
    i, j = np.meshgrid(np.arange(size) - c, np.arange(size) - c, indexing="ij")
    r = np.hypot(i, j)
    a = np.degrees(np.arctan2(j, i)) % 360.0
    bins = np.round(a / 2.0).astype(int) % N_ANGLES
    rgb = bin_colors()[bins]
    rgb[(r > c) | (r < 0.45 * c)] = 255
    return rgb


def save_png(rgb: np.ndarray, path) -> None:
    Image.fromarray(np.asarray(rgb, dtype=np.uint8)).save(path, format="PNG")
