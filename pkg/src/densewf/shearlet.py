"""Digital cone-adapted shearlet filter bank and transform.

The filters are band-limited and built directly on the DFT grid from smooth
Meyer-type windows.  Radial bands are dyadic coronae of the max-norm
``max(|w1|, |w2|)`` (cycles per pixel); inside every band the horizontal cone
``|w2| <= |w1|`` and the vertical cone ``|w2| > |w1|`` are tiled by sheared
wedges that are uniform in slope.  The two wedges sitting on the diagonals are
shared by both cones and glued into one channel each, which is why a scale
with shear range ``[-k, k]`` contributes ``2 * (2k + 1) - 2`` channels.

Frequency responses are real, non-negative and symmetric under ``w -> -w``, so
every filter is real and even in space, and the squared responses sum to one
at every frequency (Parseval frame).

Axis convention: a vector ``(x1, x2)`` refers to (row, column), and an angle
``t`` denotes the direction ``(cos t, sin t)`` in those coordinates.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

PATCH_RADIUS = 10
PATCH_SIZE = 2 * PATCH_RADIUS + 1


def default_shear_halfwidth(j: int) -> int:
    """``k_j`` such that ``|K_j| = 2**ceil(j/2 + 1) + 1``."""
    return 2 ** (math.ceil(j / 2 + 1) - 1)


@dataclass(frozen=True)
class ShearletConfig:
    """Geometry of a digital shearlet system.

    ``M`` is the number of rows; ``cols`` defaults to ``M`` (square images).
    Rectangular rasters are used for sinograms.
    """

    M: int
    scales: tuple[int, ...] = (1, 2, 3, 4)
    shears_per_scale: tuple[int, ...] | None = None
    cols: int | None = None

    def __post_init__(self) -> None:
        if not self.scales:
            raise ValueError("at least one scale is required")
        scales = tuple(int(j) for j in self.scales)
        if list(scales) != sorted(set(scales)) or scales[0] < 1:
            raise ValueError(f"scales must be distinct positive integers in ascending order, got {scales}")
        object.__setattr__(self, "scales", scales)
        if self.shears_per_scale is None:
            shears = tuple(default_shear_halfwidth(j) for j in scales)
        else:
            shears = tuple(int(k) for k in self.shears_per_scale)
        if len(shears) != len(scales) or min(shears) < 1:
            raise ValueError("shears_per_scale needs one half-width >= 1 per scale")
        object.__setattr__(self, "shears_per_scale", shears)
        for n in (self.M, self.ncols):
            if n < 32 or n % 2:
                raise ValueError(f"side lengths must be even and >= 32, got {self.shape}")

    @property
    def ncols(self) -> int:
        return self.M if self.cols is None else int(self.cols)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.M, self.ncols)

    @property
    def channel_count(self) -> int:
        return 2 * sum(2 * k for k in self.shears_per_scale) + 1

    def to_json(self) -> dict:
        return {
            "M": self.M,
            "cols": self.ncols,
            "scales": list(self.scales),
            "shears_per_scale": list(self.shears_per_scale),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ShearletConfig":
        cols = obj.get("cols")
        return cls(
            M=obj["M"],
            scales=tuple(obj["scales"]),
            shears_per_scale=tuple(obj["shears_per_scale"]),
            cols=None if cols == obj["M"] else cols,
        )

    def digest(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


@dataclass(frozen=True)
class Channel:
    """Index triple of a channel; ``cone == 0`` marks the low-pass."""

    scale: int
    shear: int
    cone: int
    shear_halfwidth: int

    @property
    def slope(self) -> float:
        return self.shear / self.shear_halfwidth if self.cone else 0.0

    def direction(self) -> np.ndarray | None:
        if self.cone == 0:
            return None
        return shear_to_direction(self.slope, self.cone)

    def orientation_deg(self) -> float | None:
        d = self.direction()
        if d is None:
            return None
        return math.degrees(math.atan2(d[1], d[0])) % 180.0


def channel_layout(config: ShearletConfig) -> list[Channel]:
    """Channel 0 is the low-pass; then scales ascending, shears ascending, cone 1 before cone -1."""
    chans = [Channel(0, 0, 0, 1)]
    for j, k in zip(config.scales, config.shears_per_scale):
        entries = [(s, 1) for s in range(-k + 1, k + 1)] + [(s, -1) for s in range(-k, k)]
        entries.sort(key=lambda e: (e[0], -e[1]))
        chans.extend(Channel(j, s, cone, k) for s, cone in entries)
    return chans


def shear_to_direction(s: float, cone: int) -> np.ndarray:
    """Unit normal direction associated with shear ``s`` in cone ``cone``."""
    r = math.sqrt(s * s + 1.0)
    if cone == 1:
        return np.array([1.0 / r, s / r])
    if cone == -1:
        return np.array([s / r, 1.0 / r])
    raise ValueError(f"cone must be 1 or -1, got {cone}")


@dataclass(frozen=True, eq=False)
class ShearletSystem:
    config: ShearletConfig
    filters: np.ndarray  # (C, M, cols) real frequency responses, numpy FFT ordering
    channels: tuple[Channel, ...]
    _half: np.ndarray = field(repr=False)

    @property
    def channel_count(self) -> int:
        return len(self.channels)

    @property
    def shape(self) -> tuple[int, int]:
        return self.config.shape

    def channel_of(self, scale: int, shear: int, cone: int) -> int:
        for idx, ch in enumerate(self.channels):
            if (ch.scale, ch.shear, ch.cone) == (scale, shear, cone):
                return idx
        raise KeyError((scale, shear, cone))

    def space_filters(self) -> np.ndarray:
        """Filters in the spatial domain, shape (M, cols, C)."""
        return np.moveaxis(np.fft.ifft2(self.filters, axes=(1, 2)).real, 0, -1)


# --- window functions ----------------------------------------------------------


def _meyer_poly(x: np.ndarray) -> np.ndarray:
    x = np.clip(x, 0.0, 1.0)
    return x**4 * (35.0 - 84.0 * x + 70.0 * x**2 - 20.0 * x**3)


def _lowpass(rho: np.ndarray, b: float) -> np.ndarray:
    # 1 below b, 0 above 2b, smooth in between
    return np.cos(0.5 * np.pi * _meyer_poly((rho - b) / b))


def _bump(u: np.ndarray) -> np.ndarray:
    # integer translates form a partition of unity in the squared sense
    return np.where(np.abs(u) < 1.0, np.cos(0.5 * np.pi * _meyer_poly(np.abs(u))), 0.0)


def _reflect(a: np.ndarray) -> np.ndarray:
    """Index reflection ``k -> -k mod n`` on both frequency axes."""
    return np.roll(a[..., ::-1, ::-1], shift=(1, 1), axis=(-2, -1))


def build_system(config: ShearletConfig) -> ShearletSystem:
    """Construct the Parseval filter bank for ``config``."""
    rows, cols = config.shape
    w1 = np.fft.fftfreq(rows)[:, None]
    w2 = np.fft.fftfreq(cols)[None, :]
    a1, a2 = np.abs(w1), np.abs(w2)
    rho = np.maximum(a1, a2)
    cone_h = a2 <= a1
    with np.errstate(divide="ignore", invalid="ignore"):
        slope_h = np.where(cone_h & (a1 > 0), w2 / np.where(a1 > 0, w1, 1.0), 0.0)
        slope_v = np.where(~cone_h, w1 / np.where(a2 > 0, w2, 1.0), 0.0)

    n = len(config.scales)
    cutoffs = [2.0 ** -(n + 2 - p) for p in range(n)]  # low-pass edges, cycles per pixel
    low = [_lowpass(rho, b) for b in cutoffs]
    radial = []
    for p in range(n):
        outer = low[p + 1] ** 2 if p + 1 < n else np.ones_like(rho)
        radial.append(np.sqrt(np.clip(outer - low[p] ** 2, 0.0, None)))

    channels = channel_layout(config)
    bank = np.empty((len(channels), rows, cols))
    bank[0] = low[0]
    for idx, ch in enumerate(channels[1:], start=1):
        p = config.scales.index(ch.scale)
        k = ch.shear_halfwidth
        uh, uv = k * slope_h, k * slope_v
        if ch.cone == 1 and ch.shear == k:
            ang = np.where(cone_h, _bump(uh - k), _bump(uv - k))
        elif ch.cone == -1 and ch.shear == -k:
            ang = np.where(cone_h, _bump(uh + k), _bump(uv + k))
        elif ch.cone == 1:
            ang = np.where(cone_h, _bump(uh - ch.shear), 0.0)
        else:
            ang = np.where(cone_h, 0.0, _bump(uv - ch.shear))
        bank[idx] = radial[p] * ang

    # the Nyquist row/column breaks w -> -w symmetry; take quadratic means
    bank = np.sqrt(0.5 * (bank**2 + _reflect(bank) ** 2))
    bank /= np.sqrt(np.sum(bank**2, axis=0))
    half = np.ascontiguousarray(bank[:, :, : cols // 2 + 1])
    return ShearletSystem(config=config, filters=bank, channels=tuple(channels), _half=half)


# --- transform -------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ShearletCoefficients:
    values: np.ndarray  # (M, cols, C)
    system_id: str

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape


def transform(image: np.ndarray, system: ShearletSystem) -> ShearletCoefficients:
    """Circular cross-correlation of ``image`` with every filter of ``system``.

    Channel ``c`` at pixel ``m`` equals ``sum_x image[x] * psi_c[x - m]`` with
    indices taken modulo the image size.  Because the filters are even this
    coincides with circular convolution; an impulse at the origin reproduces
    the spatial filter.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.shape != system.shape:
        raise ValueError(f"image shape {image.shape} does not match system shape {system.shape}")
    spec = np.fft.rfft2(image)
    # filters are real, so conj() is a no-op and kept implicit
    out = np.fft.irfft2(spec[None] * system._half, s=system.shape, axes=(1, 2))
    return ShearletCoefficients(np.moveaxis(out, 0, -1), system.config.digest())


def extract_patch(coeffs: ShearletCoefficients | np.ndarray, center: tuple[int, int]) -> np.ndarray:
    """Return the 21x21xC window around ``center``.

    Centers use 1-based pixel coordinates, so ``center = (11, 11)`` covers
    rows/columns 1..21, i.e. array indices 0..20.
    """
    values = coeffs.values if isinstance(coeffs, ShearletCoefficients) else coeffs
    m1, m2 = (int(c) for c in center)
    rows, cols = values.shape[:2]
    lo = PATCH_RADIUS + 1
    if not (lo <= m1 <= rows - PATCH_RADIUS and lo <= m2 <= cols - PATCH_RADIUS):
        raise ValueError(
            f"center {center} outside admissible range [{lo}, {rows - PATCH_RADIUS}] x [{lo}, {cols - PATCH_RADIUS}]"
        )
    r0, c0 = m1 - 1 - PATCH_RADIUS, m2 - 1 - PATCH_RADIUS
    return values[r0 : r0 + PATCH_SIZE, c0 : c0 + PATCH_SIZE]


def admissible_centers(shape: tuple[int, int]) -> np.ndarray:
    """All 1-based centers in ``[11, rows-10] x [11, cols-10]``, shape (n, 2)."""
    rows, cols = shape
    r = np.arange(PATCH_RADIUS + 1, rows - PATCH_RADIUS + 1)
    c = np.arange(PATCH_RADIUS + 1, cols - PATCH_RADIUS + 1)
    rr, cc = np.meshgrid(r, c, indexing="ij")
    return np.stack([rr.ravel(), cc.ravel()], axis=1)


def gather_patches(values: np.ndarray, centers: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
    """Stack the patches at 1-based ``centers`` into a (n, 21, 21, C) array."""
    centers = np.asarray(centers)
    windows = np.lib.stride_tricks.sliding_window_view(values, (PATCH_SIZE, PATCH_SIZE), axis=(0, 1))
    # windows[r0, c0] has shape (C, 21, 21)
    rows, cols = values.shape[:2]
    lo = PATCH_RADIUS + 1
    if centers.size and (
        centers[:, 0].min() < lo
        or centers[:, 1].min() < lo
        or centers[:, 0].max() > rows - PATCH_RADIUS
        or centers[:, 1].max() > cols - PATCH_RADIUS
    ):
        raise ValueError("center outside admissible range")
    picked = windows[centers[:, 0] - lo, centers[:, 1] - lo]
    picked = np.moveaxis(picked, 1, -1)
    if out is None:
        return np.ascontiguousarray(picked)
    out[...] = picked
    return out
