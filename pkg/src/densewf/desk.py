"""Desk-scale pipelines: phantom sets, coefficient sources and the two sparse-angle routes."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from . import densee
from .phantoms import PhantomSpec, analytic_wavefront, apply_higher_order_filter, rasterize, sample_phantom
from .radon import fbp, inverse_canonical_map, radon, canonical_map
from .shearlet import ShearletSystem

DESK_HEADS = list(range(0, 180, 20))


def phantom_specs(seeds: Sequence[int], M: int = 64, **kwargs) -> list[PhantomSpec]:
    return [sample_phantom(int(s), M, **kwargs) for s in seeds]


def tomo_specs(seeds: Sequence[int], M: int = 64) -> list[PhantomSpec]:
    """Phantoms inside the inscribed disk, clear of the patch border."""
    return phantom_specs(seeds, M, disk_radius=M / 2 - 11)


def image_sources(specs, system: ShearletSystem, *, higher_order: bool = False) -> list[densee.PatchSource]:
    """Image coefficients labelled with the analytic wavefront set of the unfiltered phantom."""
    out = []
    for sp in specs:
        img = rasterize(sp)
        if higher_order:
            img = apply_higher_order_filter(img)
        out.append(densee.image_source(img, system, analytic_wavefront(sp)))
    return out


def fbp_image(spec: PhantomSpec, angles: np.ndarray) -> np.ndarray:
    img = rasterize(spec)
    return fbp(radon(img, angles=angles), spec.M)


def fbp_sources(specs, system: ShearletSystem, angles: np.ndarray) -> list[densee.PatchSource]:
    """Sparse-angle FBP reconstructions labelled with the true wavefront set."""
    return [densee.image_source(fbp_image(sp, angles), system, analytic_wavefront(sp)) for sp in specs]


def corner_sinogram(spec: PhantomSpec, angles: np.ndarray):
    return radon(rasterize(spec), spec.M, angles, origin="corner")


def sinogram_sources(specs, system: ShearletSystem, angles: np.ndarray) -> list[densee.PatchSource]:
    """Corner-layout sparse sinograms labelled with the canonical image of the true set."""
    return [
        densee.sinogram_source(corner_sinogram(sp, angles), system, canonical_map(analytic_wavefront(sp)))
        for sp in specs
    ]


def fbp_route(specs, model: densee.DenseeModel, angles: np.ndarray, tau: float = densee.DEFAULT_TAU) -> list[np.ndarray]:
    """Reconstruct by FBP, then extract in the image domain."""
    return [densee.extract_wavefront(fbp_image(sp, angles), model, tau) for sp in specs]


def canonical_route(
    specs, model: densee.DenseeModel, angles: np.ndarray, columns: Sequence[int], tau: float = densee.DEFAULT_TAU
) -> list[np.ndarray]:
    """Extract on the sinogram at ``columns``, then pull back with the inverse canonical map."""
    return [
        inverse_canonical_map(densee.extract_sinogram_wavefront(corner_sinogram(sp, angles), model, tau, angles=columns))
        for sp in specs
    ]
