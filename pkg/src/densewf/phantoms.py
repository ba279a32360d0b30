"""Random ellipse/parallelogram phantoms with analytic digital wavefront sets.

Pixel ``(i, j)`` is sampled at the point ``(i, j)``; geometry uses the same
(row, column) coordinates.  A direction bin ``t`` stands for the normal
``(cos t, sin t)`` modulo 180 degrees.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

N_BINS = 180
MAX_ATTEMPTS = 1000


@dataclass(frozen=True)
class ShapeSpec:
    """One additive shape.

    ``geometry`` holds ``center``, ``axes`` and ``angle`` (degrees) for an
    ellipse and ``vertices`` (four points, in order) for a parallelogram.
    """

    kind: str
    geometry: dict
    contrast: float

    def __post_init__(self) -> None:
        if self.kind not in ("ellipse", "parallelogram"):
            raise ValueError(f"unknown shape kind {self.kind!r}")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "ShapeSpec":
        geom = {k: (list(map(list, v)) if k == "vertices" else v) for k, v in obj["geometry"].items()}
        return cls(kind=obj["kind"], geometry=geom, contrast=float(obj["contrast"]))


@dataclass(frozen=True)
class PhantomSpec:
    shapes: tuple[ShapeSpec, ...]
    M: int
    seed: int | None = None

    def __post_init__(self) -> None:
        if not self.shapes:
            raise ValueError("a phantom needs at least one shape")
        object.__setattr__(self, "shapes", tuple(self.shapes))

    def to_json(self) -> dict:
        return {"M": self.M, "seed": self.seed, "shapes": [s.to_json() for s in self.shapes]}

    @classmethod
    def from_json(cls, obj: dict) -> "PhantomSpec":
        return cls(tuple(ShapeSpec.from_json(s) for s in obj["shapes"]), obj["M"], obj.get("seed"))


def ellipse(center: Sequence[float], axes: Sequence[float], angle: float = 0.0, contrast: float = 1.0) -> ShapeSpec:
    return ShapeSpec(
        "ellipse",
        {"center": [float(center[0]), float(center[1])], "axes": [float(axes[0]), float(axes[1])], "angle": float(angle)},
        float(contrast),
    )


def parallelogram(vertices: Sequence[Sequence[float]], contrast: float = 1.0) -> ShapeSpec:
    verts = [[float(v[0]), float(v[1])] for v in vertices]
    if len(verts) != 4:
        raise ValueError("a parallelogram needs four vertices")
    return ShapeSpec("parallelogram", {"vertices": verts}, float(contrast))


# --- geometry helpers ------------------------------------------------------------


def _rot(angle_deg: float) -> np.ndarray:
    a = math.radians(angle_deg)
    return np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]])


def _vertices(shape: ShapeSpec) -> np.ndarray:
    return np.asarray(shape.geometry["vertices"], dtype=float)


def _signed_area(v: np.ndarray) -> float:
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _is_parallelogram(v: np.ndarray) -> bool:
    return bool(np.allclose(v[0] + v[2], v[1] + v[3], atol=1e-9))


def shape_extent(shape: ShapeSpec) -> tuple[np.ndarray, np.ndarray]:
    """Axis-aligned bounding box (lo, hi) of the shape."""
    if shape.kind == "ellipse":
        c = np.asarray(shape.geometry["center"], dtype=float)
        a, b = shape.geometry["axes"]
        R = _rot(shape.geometry["angle"])
        half = np.sqrt((R[:, 0] * a) ** 2 + (R[:, 1] * b) ** 2)
        return c - half, c + half
    v = _vertices(shape)
    return v.min(axis=0), v.max(axis=0)


def shape_radius_from(shape: ShapeSpec, point: np.ndarray) -> float:
    """Largest distance from ``point`` to the shape."""
    if shape.kind == "ellipse":
        c = np.asarray(shape.geometry["center"], dtype=float)
        return float(np.linalg.norm(c - point) + max(shape.geometry["axes"]))
    return float(np.max(np.linalg.norm(_vertices(shape) - point, axis=1)))


def validate_shape(shape: ShapeSpec, M: int) -> None:
    lo, hi = shape_extent(shape)
    if lo.min() < 0 or hi.max() > M - 1:
        raise ValueError(f"{shape.kind} not inside the frame [0, {M})")
    if shape.kind == "ellipse":
        if min(shape.geometry["axes"]) <= 1.0:
            raise ValueError("ellipse semi-axes must exceed one pixel")
    else:
        v = _vertices(shape)
        if not _is_parallelogram(v):
            raise ValueError("vertices do not form a parallelogram")
        if abs(_signed_area(v)) <= 1e-9:
            raise ValueError("degenerate parallelogram")


# --- sampling --------------------------------------------------------------------


def _random_shape(rng: np.random.Generator, M: int, kinds: Sequence[str], contrast_range) -> ShapeSpec:
    kind = kinds[int(rng.integers(len(kinds)))]
    contrast = float(rng.uniform(*contrast_range))
    center = rng.uniform(0.15 * M, 0.85 * M, size=2)
    if kind == "ellipse":
        axes = rng.uniform(3.0, M / 5.0, size=2)
        return ellipse(center, axes, float(rng.uniform(0.0, 180.0)), contrast)
    lengths = rng.uniform(6.0, M / 2.5, size=2)
    a1 = rng.uniform(0.0, 180.0)
    a2 = a1 + rng.uniform(35.0, 145.0)
    u = lengths[0] * np.array([math.cos(math.radians(a1)), math.sin(math.radians(a1))])
    w = lengths[1] * np.array([math.cos(math.radians(a2)), math.sin(math.radians(a2))])
    c = center
    verts = [c - u / 2 - w / 2, c + u / 2 - w / 2, c + u / 2 + w / 2, c - u / 2 + w / 2]
    return parallelogram(verts, contrast)


def sample_phantom(
    seed: int,
    M: int,
    shape_count_range: tuple[int, int] = (3, 8),
    *,
    kinds: Sequence[str] = ("ellipse", "parallelogram"),
    contrast_range: tuple[float, float] = (0.2, 1.0),
    disk_radius: float | None = None,
) -> PhantomSpec:
    """Draw a reproducible random phantom.

    Shapes are resampled until they lie inside the frame (and inside the
    centred disk of radius ``disk_radius`` when given).
    """
    if M < 64:
        raise ValueError("phantoms need M >= 64")
    lo_n, hi_n = shape_count_range
    if lo_n < 1 or hi_n < lo_n:
        raise ValueError(f"bad shape_count_range {shape_count_range}")
    rng = np.random.default_rng(seed)
    count = int(rng.integers(lo_n, hi_n + 1))
    mid = np.array([(M - 1) / 2.0, (M - 1) / 2.0])
    shapes = []
    for _ in range(count):
        for _attempt in range(MAX_ATTEMPTS):
            shp = _random_shape(rng, M, kinds, contrast_range)
            try:
                validate_shape(shp, M)
            except ValueError:
                continue
            if disk_radius is not None and shape_radius_from(shp, mid) > disk_radius:
                continue
            shapes.append(shp)
            break
        else:
            raise RuntimeError(f"could not place a valid shape after {MAX_ATTEMPTS} attempts")
    return PhantomSpec(tuple(shapes), M, seed)


# --- rasterization ---------------------------------------------------------------


def _grid(M: int) -> tuple[np.ndarray, np.ndarray]:
    return np.meshgrid(np.arange(M, dtype=float), np.arange(M, dtype=float), indexing="ij")


def indicator(shape: ShapeSpec, M: int) -> np.ndarray:
    """Boolean raster of the closed shape sampled at pixel centres."""
    ii, jj = _grid(M)
    if shape.kind == "ellipse":
        c = shape.geometry["center"]
        a, b = shape.geometry["axes"]
        R = _rot(shape.geometry["angle"])
        d0, d1 = ii - c[0], jj - c[1]
        u = R[0, 0] * d0 + R[1, 0] * d1
        v = R[0, 1] * d0 + R[1, 1] * d1
        return (u / a) ** 2 + (v / b) ** 2 <= 1.0
    v = _vertices(shape)
    if _signed_area(v) < 0:
        v = v[::-1]
    inside = np.ones((M, M), dtype=bool)
    for k in range(4):
        p, q = v[k], v[(k + 1) % 4]
        cross = (q[0] - p[0]) * (jj - p[1]) - (q[1] - p[1]) * (ii - p[0])
        inside &= cross >= 0.0
    return inside


def rasterize(spec: PhantomSpec) -> np.ndarray:
    img = np.zeros((spec.M, spec.M))
    for shp in spec.shapes:
        img += shp.contrast * indicator(shp, spec.M)
    return img


def boundary_pixels(mask: np.ndarray) -> np.ndarray:
    """Pixels whose value differs from one of their 4-neighbours (no wrap)."""
    m = mask.astype(bool)
    out = np.zeros_like(m)
    diff_v = m[1:, :] != m[:-1, :]
    diff_h = m[:, 1:] != m[:, :-1]
    out[1:, :] |= diff_v
    out[:-1, :] |= diff_v
    out[:, 1:] |= diff_h
    out[:, :-1] |= diff_h
    return out


# --- analytic wavefront set ------------------------------------------------------


def _ellipse_nearest_normals(shape: ShapeSpec, pts: np.ndarray) -> np.ndarray:
    """Outward normal angle (degrees) at the boundary point nearest to each point."""
    c = np.asarray(shape.geometry["center"], dtype=float)
    a, b = shape.geometry["axes"]
    R = _rot(shape.geometry["angle"])
    local = (pts - c) @ R  # coordinates along the ellipse axes
    x, y = local[:, 0], local[:, 1]
    # dense initial guess, then Newton on d/dt |p(t) - q|^2 = 0
    ts = np.linspace(0.0, 2 * np.pi, 721)[:-1]
    d2 = (a * np.cos(ts)[None] - x[:, None]) ** 2 + (b * np.sin(ts)[None] - y[:, None]) ** 2
    t = ts[np.argmin(d2, axis=1)]
    for _ in range(8):
        ct, st = np.cos(t), np.sin(t)
        f = (b * b - a * a) * st * ct - b * y * ct + a * x * st
        fp = (b * b - a * a) * (ct * ct - st * st) + b * y * st + a * x * ct
        step = np.where(np.abs(fp) > 1e-12, f / np.where(np.abs(fp) > 1e-12, fp, 1.0), 0.0)
        t = t - np.clip(step, -0.1, 0.1)
    n_local = np.stack([np.cos(t) / a, np.sin(t) / b], axis=1)
    n = n_local @ R.T
    return np.degrees(np.arctan2(n[:, 1], n[:, 0]))


def _segment_distances(pts: np.ndarray, p: np.ndarray, q: np.ndarray) -> np.ndarray:
    d = q - p
    t = np.clip(((pts - p) @ d) / float(d @ d), 0.0, 1.0)
    proj = p + t[:, None] * d
    return np.linalg.norm(pts - proj, axis=1)


def _parallelogram_nearest_normals(shape: ShapeSpec, pts: np.ndarray) -> np.ndarray:
    v = _vertices(shape)
    if _signed_area(v) < 0:
        v = v[::-1]
    dists, normals = [], []
    for k in range(4):
        p, q = v[k], v[(k + 1) % 4]
        dists.append(_segment_distances(pts, p, q))
        e = q - p
        # interior lies where cross(e, x - p) >= 0, so the outward normal is (e1, -e0)
        normals.append(math.degrees(math.atan2(-e[0], e[1])))
    nearest = np.argmin(np.stack(dists, axis=1), axis=1)
    return np.asarray(normals)[nearest]


def angle_to_bin(angle_deg: np.ndarray) -> np.ndarray:
    return np.rint(np.mod(angle_deg, 180.0)).astype(int) % N_BINS


def shape_wavefront(shape: ShapeSpec, M: int) -> np.ndarray:
    """Digital wavefront set (M, M, 180) of a single indicator function."""
    wf = np.zeros((M, M, N_BINS), dtype=np.uint8)
    edge = boundary_pixels(indicator(shape, M))
    ii, jj = np.nonzero(edge)
    if ii.size == 0:
        return wf
    pts = np.stack([ii, jj], axis=1).astype(float)
    if shape.kind == "ellipse":
        ang = _ellipse_nearest_normals(shape, pts)
    else:
        ang = _parallelogram_nearest_normals(shape, pts)
    wf[ii, jj, angle_to_bin(ang)] = 1
    if shape.kind == "parallelogram":
        for vert in _vertices(shape):
            k = int(np.argmin(np.sum((pts - vert) ** 2, axis=1)))
            wf[ii[k], jj[k], :] = 1
    return wf


def analytic_wavefront(spec: PhantomSpec) -> np.ndarray:
    """Union of the shapes' wavefront sets; possible cancellations are ignored."""
    wf = np.zeros((spec.M, spec.M, N_BINS), dtype=np.uint8)
    for shp in spec.shapes:
        wf |= shape_wavefront(shp, spec.M)
    return wf


# --- higher-order singularities --------------------------------------------------


def higher_order_kernel(shape: tuple[int, int]) -> np.ndarray:
    """``1 / (1 + |k|)`` on the integer DFT index grid (numpy FFT ordering)."""
    k1 = np.fft.fftfreq(shape[0]) * shape[0]
    k2 = np.fft.fftfreq(shape[1]) * shape[1]
    return 1.0 / (1.0 + np.hypot(k1[:, None], k2[None, :]))


def apply_higher_order_filter(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image, dtype=float)
    return np.fft.ifft2(np.fft.fft2(image) * higher_order_kernel(image.shape)).real
