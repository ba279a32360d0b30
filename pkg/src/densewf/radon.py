"""Parallel-beam Radon transform, filtered backprojection and canonical maps.

Two sinogram layouts are supported:

``center``
    offsets are measured from the image centre ``((M-1)/2, (M-1)/2)`` on a
    symmetric grid of spacing one pixel.  This is the usual layout and the one
    FBP consumes.
``corner``
    offsets are measured from pixel ``(0, 0)``; row ``r`` holds the line
    ``x . theta = r + 1/2`` summed over all periodic copies ``r + 1/2 + kN``.
    Row indices then agree with ``floor([i, j] . theta) mod N``, which is the
    indexing used by :func:`canonical_map`.  DeNSE runs on this layout.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

N_ANGLES = 180
SNAP = 1e-9


@dataclass(frozen=True, eq=False)
class Sinogram:
    values: np.ndarray  # (N_s, N_phi)
    angles: np.ndarray  # degrees
    offsets: np.ndarray  # s of every row, in the layout's own origin
    origin: str = "center"
    image_size: int | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def centered_offsets(n: int) -> np.ndarray:
    return np.arange(n) - (n - 1) / 2.0


def _bilinear(image: np.ndarray, r: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Bilinear interpolation at fractional (row, col), zero outside the raster."""
    M0, M1 = image.shape
    r0 = np.floor(r).astype(np.int64)
    c0 = np.floor(c).astype(np.int64)
    fr, fc = r - r0, c - c0
    out = np.zeros(r.shape)
    for dr, wr in ((0, 1.0 - fr), (1, fr)):
        for dc, wc in ((0, 1.0 - fc), (1, fc)):
            rr, cc = r0 + dr, c0 + dc
            ok = (rr >= 0) & (rr < M0) & (cc >= 0) & (cc < M1)
            vals = np.zeros(r.shape)
            vals[ok] = image[rr[ok], cc[ok]]
            out += wr * wc * vals
    return out


def _line_integrals(image: np.ndarray, angle_deg: float, offsets: np.ndarray, step: float) -> np.ndarray:
    """Integrals along ``center + s*theta + t*theta_perp`` for centred offsets ``s``."""
    M = image.shape[0]
    c = (M - 1) / 2.0
    phi = math.radians(angle_deg)
    th = np.array([math.cos(phi), math.sin(phi)])
    tp = np.array([-math.sin(phi), math.cos(phi)])
    half = M / math.sqrt(2.0) + 1.0
    K = math.ceil(half / step)
    t = step * np.arange(-K, K + 1)  # symmetric, so s -> -s is exact
    pr = c + offsets[:, None] * th[0] + t[None, :] * tp[0]
    pc = c + offsets[:, None] * th[1] + t[None, :] * tp[1]
    return _bilinear(image, pr, pc).sum(axis=1) * step


def radon(
    image: np.ndarray,
    n_offsets: int | None = None,
    angles: np.ndarray | None = None,
    *,
    origin: str = "center",
    step: float = 0.5,
) -> Sinogram:
    """Sample ``Rf(s, phi) = int f(s theta(phi) + t theta_perp(phi)) dt``.

    Line integrals are approximated by bilinear samples every ``step`` pixels.
    ``angles`` are in degrees (default ``0..179``).
    """
    image = np.asarray(image, dtype=float)
    if image.ndim != 2 or image.shape[0] != image.shape[1]:
        raise ValueError(f"radon expects a square image, got shape {image.shape}")
    if step > 0.5:
        raise ValueError("line sampling step must not exceed half a pixel")
    M = image.shape[0]
    n = M if n_offsets is None else int(n_offsets)
    angles = np.arange(N_ANGLES, dtype=float) if angles is None else np.asarray(angles, dtype=float)
    values = np.zeros((n, len(angles)))
    if origin == "center":
        offsets = centered_offsets(n)
        for k, a in enumerate(angles):
            values[:, k] = _line_integrals(image, a, offsets, step)
    elif origin == "corner":
        offsets = np.arange(n) + 0.5
        c = (M - 1) / 2.0
        reach = M / math.sqrt(2.0) + 1.0
        for k, a in enumerate(angles):
            phi = math.radians(a)
            shift = c * (math.cos(phi) + math.sin(phi))
            # every periodic copy r + 1/2 + q*n whose line meets the raster
            qs = range(math.floor((shift - reach) / n) - 1, math.ceil((shift + reach) / n) + 2)
            for q in qs:
                centred = offsets + q * n - shift
                hit = np.abs(centred) <= reach
                if hit.any():
                    values[hit, k] += _line_integrals(image, a, centred[hit], step)
    else:
        raise ValueError(f"unknown sinogram origin {origin!r}")
    return Sinogram(values, angles, offsets, origin, M)


def _ramp_filter(n: int, window: str = "hann") -> np.ndarray:
    """Frequency response of the band-limited ramp (Ram-Lak) filter, optionally apodized."""
    size = max(64, int(2 ** math.ceil(math.log2(2 * n))))
    k = np.concatenate([np.arange(1, size // 2 + 1, 2), np.arange(size // 2 - 1, 0, -2)])
    h = np.zeros(size)
    h[0] = 0.25
    h[1::2] = -1.0 / (np.pi * k) ** 2
    resp = 2.0 * np.real(np.fft.fft(h))
    if window == "hann":
        f = np.fft.fftfreq(size)
        resp *= 0.5 * (1.0 + np.cos(2.0 * np.pi * f))
    elif window not in (None, "none", "ramlak"):
        raise ValueError(f"unknown FBP window {window!r}")
    return resp


def fbp(sino: Sinogram, M: int, *, window: str = "hann") -> np.ndarray:
    """Filtered backprojection onto an ``M x M`` grid (centred layout only)."""
    if sino.origin != "center":
        raise ValueError("fbp needs a centre-origin sinogram")
    n = sino.values.shape[0]
    if n < M or sino.values.shape[1] != len(sino.angles):
        raise ValueError(f"sinogram geometry {sino.values.shape} inconsistent with a {M}x{M} image")
    resp = _ramp_filter(n, window)
    size = resp.size
    padded = np.zeros((size, sino.values.shape[1]))
    padded[:n] = sino.values
    filtered = np.real(np.fft.ifft(np.fft.fft(padded, axis=0) * resp[:, None], axis=0))[:n]

    c = (M - 1) / 2.0
    ii, jj = np.meshgrid(np.arange(M) - c, np.arange(M) - c, indexing="ij")
    out = np.zeros((M, M))
    for k, a in enumerate(sino.angles):
        phi = math.radians(a)
        s = ii * math.cos(phi) + jj * math.sin(phi)
        out += np.interp(s.ravel(), sino.offsets, filtered[:, k], left=0.0, right=0.0).reshape(M, M)
    # resp carries a factor 2 relative to |w|
    return out * np.pi / (2 * len(sino.angles))


# --- layout helpers used by DeNSE on sinograms -------------------------------------


def _flip_rows(values: np.ndarray, origin: str) -> np.ndarray:
    """Rows of ``Rf(., phi + 180)`` expressed through ``Rf(., phi)``."""
    if origin == "center":
        return values[::-1]
    n = values.shape[0]
    return values[(-np.arange(n) - 1) % n]


def complete_angles(sino: Sinogram) -> Sinogram:
    """Fill all 180 one-degree columns by linear interpolation in the angle.

    Uses ``Rf(s, phi + 180) = Rf(-s, phi)`` to interpolate across the 180 degree
    wrap.  Measured columns are kept verbatim.
    """
    ang = np.mod(np.asarray(sino.angles, dtype=float), 360.0)
    vals = np.asarray(sino.values, dtype=float)
    # reduce to [0, 180) with flips
    cols, keys = [], []
    for a, col in zip(ang, vals.T):
        if a >= 180.0:
            a, col = a - 180.0, _flip_rows(col[:, None], sino.origin)[:, 0]
        keys.append(a)
        cols.append(col)
    order = np.argsort(keys)
    keys = np.asarray(keys)[order]
    cols = np.stack([cols[i] for i in order], axis=1)
    # one extra period on either side, flipped
    ext_keys = np.concatenate([keys - 180.0, keys, keys + 180.0])
    flipped = _flip_rows(cols, sino.origin)
    ext_cols = np.concatenate([flipped, cols, flipped], axis=1)
    target = np.arange(N_ANGLES, dtype=float)
    idx = np.searchsorted(ext_keys, target, side="right") - 1
    lo_k, hi_k = ext_keys[idx], ext_keys[idx + 1]
    w = np.where(hi_k > lo_k, (target - lo_k) / np.where(hi_k > lo_k, hi_k - lo_k, 1.0), 0.0)
    out = ext_cols[:, idx] * (1.0 - w) + ext_cols[:, idx + 1] * w
    return Sinogram(out, target, sino.offsets, sino.origin, sino.image_size)


def extend_sinogram(values: np.ndarray, origin: str = "corner", pad: int = 10) -> np.ndarray:
    """Pad an ``N x 180`` sinogram by ``pad`` on every side.

    Columns continue through the 180 degree symmetry; rows wrap periodically
    (exact for the corner layout).  The result lets the 21x21 patch window be
    centred on every original sample.
    """
    n, n_phi = values.shape
    if n_phi != N_ANGLES:
        raise ValueError("extend_sinogram expects 180 angle columns")
    flipped = _flip_rows(values, origin)
    wide = np.concatenate([flipped[:, n_phi - pad :], values, flipped[:, :pad]], axis=1)
    if origin == "corner":
        return np.concatenate([wide[n - pad :], wide, wide[:pad]], axis=0)
    return np.pad(wide, ((pad, pad), (0, 0)))


# --- digital canonical relation ---------------------------------------------------


def _snapped_floor(x: np.ndarray) -> np.ndarray:
    r = np.rint(x)
    return np.where(np.abs(x - r) < SNAP, r, np.floor(x)).astype(np.int64)


def _snapped_ceil(x: np.ndarray) -> np.ndarray:
    r = np.rint(x)
    return np.where(np.abs(x - r) < SNAP, r, np.ceil(x)).astype(np.int64)


def _offset_and_angle(i: np.ndarray, j: np.ndarray, theta_deg: np.ndarray, N: int):
    th = np.radians(theta_deg)
    cos, sin = np.cos(th), np.sin(th)
    s_raw = i * cos + j * sin
    lam_raw = np.degrees(np.arctan((i / N) * sin - (j / N) * cos))
    return s_raw, lam_raw


def canonical_map(X: np.ndarray) -> np.ndarray:
    """Digital canonical map ``(N, N, 180) -> (N, 180, 180)``.

    Each entry ``(i, j, t)`` of ``X`` sets ``Y[s, t, l]`` with
    ``s = floor([i, j] . (cos t, sin t)) mod N`` and
    ``l = floor(degrees(arctan([i/N, j/N] . (sin t, -cos t)))) mod 180``.
    Values within 1e-9 of an integer are snapped before rounding.
    """
    X = np.asarray(X)
    N = X.shape[0]
    if X.ndim != 3 or X.shape[1] != N or X.shape[2] != N_ANGLES:
        raise ValueError(f"expected an (N, N, 180) tensor, got {X.shape}")
    Y = np.zeros((N, N_ANGLES, N_ANGLES), dtype=np.uint8)
    i, j, t = np.nonzero(X)
    if i.size == 0:
        return Y
    s_raw, lam_raw = _offset_and_angle(i.astype(float), j.astype(float), t.astype(float), N)
    s = _snapped_floor(s_raw) % N
    lam = _snapped_floor(lam_raw) % N_ANGLES
    Y[s, t, lam] = 1
    return Y


def _ican_tables(N: int):
    i, j = np.meshgrid(np.arange(N, dtype=float), np.arange(N, dtype=float), indexing="ij")
    s_tab = np.empty((N_ANGLES, N, N), dtype=np.int64)
    l_tab = np.empty((N_ANGLES, N, N), dtype=np.int64)
    for t in range(N_ANGLES):
        s_raw, lam_raw = _offset_and_angle(i, j, np.full_like(i, t), N)
        s_tab[t] = _snapped_floor(s_raw) % N
        l_tab[t] = _snapped_ceil(lam_raw) % N_ANGLES
    return s_tab, l_tab


_ICAN_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def inverse_canonical_map(Y: np.ndarray) -> np.ndarray:
    """Inverse digital canonical map ``(N, 180, 180) -> (N, N, 180)``.

    ``X[i, j, t] = 1`` iff ``Y[s, t, l] = 1`` for
    ``s = floor([i, j] . (cos t, sin t)) mod N`` and
    ``l = ceil(degrees(arctan([i/N, j/N] . (sin t, -cos t)))) mod 180``.
    """
    Y = np.asarray(Y)
    if Y.ndim != 3 or Y.shape[1:] != (N_ANGLES, N_ANGLES):
        raise ValueError(f"expected an (N, 180, 180) tensor, got {Y.shape}")
    N = Y.shape[0]
    X = np.zeros((N, N, N_ANGLES), dtype=np.uint8)
    if N not in _ICAN_CACHE:
        _ICAN_CACHE[N] = _ican_tables(N)
    s_tab, l_tab = _ICAN_CACHE[N]
    for t in np.nonzero(Y.any(axis=(0, 2)))[0]:
        X[:, :, t] = Y[s_tab[t], t, l_tab[t]]
    return X


def dilate_angle_bins(mask: np.ndarray, width: int = 1) -> np.ndarray:
    """OR each entry into its neighbours ``+-width`` along the last (circular) axis."""
    out = mask.astype(bool).copy()
    for d in range(1, width + 1):
        out |= np.roll(mask, d, axis=-1).astype(bool) | np.roll(mask, -d, axis=-1).astype(bool)
    return out.astype(np.uint8)
