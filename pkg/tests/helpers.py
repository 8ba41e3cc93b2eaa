"""Small synthetic breast cases shared across test modules.

These are deliberately simple analytic constructions (ellipsoid breast,
ball lesion, multiplicative enhancement) so expected behaviour can be
reasoned out by hand; the package's own phantom generator is richer and
is tested separately.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from siftcad.volume import BinaryMask, BreastCase, Volume3D

from oracles import ball_mask


def _ellipsoid(dims, spacing, centre_mm, semi_mm) -> np.ndarray:
    grids = np.meshgrid(
        *[np.arange(n) * s for n, s in zip(dims, spacing)], indexing="ij"
    )
    d2 = sum(((g - c) / a) ** 2 for g, c, a in zip(grids, centre_mm, semi_mm))
    return d2 <= 1.0


def make_mini_case(
    case_id: str = "mini",
    dims=(48, 48, 24),
    spacing=(1.0, 1.0, 1.3),
    lesion_centre_mm=None,
    lesion_radius_mm: float = 5.0,
    enhancement=(1.0, 0.8, 0.6),
    times=(0.0, 90.0, 180.0, 270.0),
    noise: float = 0.0,
    clutter: float = 0.0,
    seed: int = 7,
) -> BreastCase:
    """Ellipsoid breast with one ball lesion.

    ``enhancement[k]`` is the fractional lesion enhancement of
    post-contrast frame k relative to the pre-contrast frame; ``noise``
    is white and added to every sequence, ``clutter`` adds smooth
    enhancing texture to the post-contrast frames only.
    """
    if len(times) != len(enhancement) + 1:
        raise ValueError("need one acquisition time per frame incl. pre-contrast")
    rng = np.random.default_rng(seed)
    extent = np.array(dims) * np.array(spacing)
    centre = extent / 2.0
    breast = _ellipsoid(dims, spacing, centre, 0.42 * extent)
    gland = _ellipsoid(dims, spacing, centre, 0.18 * extent)
    if lesion_centre_mm is None:
        lesion_centre_mm = centre - np.array([6.0, 0.0, 0.0])
    lesion = ball_mask(dims, spacing, lesion_centre_mm, lesion_radius_mm)
    if not (lesion & breast).sum() == lesion.sum():
        raise ValueError("lesion must lie inside the breast")

    t1 = np.where(breast, 200.0, 5.0)
    t1[gland] = 100.0
    t2 = np.where(breast, 30.0, 2.0)
    t2[lesion] = 150.0
    pre = np.where(breast, 100.0, 5.0)

    frames = [pre]
    for e in enhancement:
        frame = pre * (1.0 + e * lesion)
        if clutter > 0.0:
            texture = ndimage.gaussian_filter(rng.normal(0.0, 1.0, dims), 4.0)
            frame = frame + clutter * texture * breast
        frames.append(frame)

    def vol(arr):
        if noise > 0.0:
            arr = arr + rng.normal(0.0, noise, dims)
        return Volume3D(arr, spacing)

    return BreastCase(
        case_id=case_id,
        side="left",
        t1=vol(t1),
        t2=vol(t2),
        dce=[vol(f) for f in frames],
        acquisition_times=list(times),
        breast_mask=BinaryMask(breast, spacing),
        fat_mask=BinaryMask(breast & ~gland, spacing),
        ground_truth=[BinaryMask(lesion, spacing)],
    )
