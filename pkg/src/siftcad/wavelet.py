"""Separable 3D Daubechies-4 wavelet transforms and the scale ladder.

The pyramid used for multiscale candidate generation keeps the
low-pass (LLL) subband per level; each level halves the dims (plus one
sample of filter overhang) and doubles the voxel spacing. Conventions,
fixed and relied on elsewhere:

* boundary handling is symmetric half-sample extension,
* axes with odd length are padded by one replicated sample before
  filtering; the original lengths are recorded so reconstruction crops
  back exactly,
* analysis runs along axes x, y, z; synthesis reverses the order,
* a constant volume maps to an LLL of gain ``(sqrt 2)^3 = 2*sqrt(2)``.

Filter bank (orthogonal, 4 taps): the synthesis low-pass is
``(1+s3, 3+s3, 3-s3, 1-s3) / (4*sqrt 2)`` with ``s3 = sqrt 3``; the
analysis filters are the time-reversed synthesis filters and the
high-pass is the alternating-sign mirror.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .volume import BinaryMask, Volume3D, VolumeError

_S3 = np.sqrt(3.0)
REC_LO = np.array([1 + _S3, 3 + _S3, 3 - _S3, 1 - _S3]) / (4 * np.sqrt(2.0))
REC_HI = np.array([REC_LO[3], -REC_LO[2], REC_LO[1], -REC_LO[0]])
DEC_LO = REC_LO[::-1].copy()
DEC_HI = REC_HI[::-1].copy()
_L = 4                      # filter length
_DOWN_PHASE = 1             # downsample offset into the extended signal
_SYN_CROP = _L - 2          # samples dropped from the head of the synthesis

LLL_GAIN = float(2.0 * np.sqrt(2.0))


def _pad_even(x: np.ndarray, axis: int) -> np.ndarray:
    if x.shape[axis] % 2 == 0:
        return x
    pad = [(0, 0)] * x.ndim
    pad[axis] = (0, 1)
    return np.pad(x, pad, mode="edge")


def _analysis_axis(x: np.ndarray, axis: int, filt: np.ndarray) -> np.ndarray:
    """Symmetric-extend, convolve, downsample along one (even) axis."""
    n = x.shape[axis]
    pad = [(0, 0)] * x.ndim
    pad[axis] = (_L - 1, _L - 1)
    xe = np.moveaxis(np.pad(x, pad, mode="symmetric"), axis, -1)
    nsub = n // 2 + 1
    out = np.zeros(xe.shape[:-1] + (nsub,), dtype=np.float64)
    for i in range(_L):
        start = _DOWN_PHASE + i
        out += filt[_L - 1 - i] * xe[..., start:start + 2 * nsub - 1:2]
    return np.moveaxis(out, -1, axis)


def _synthesis_axis(lo, hi, n_out: int, axis: int) -> np.ndarray:
    """Upsample, convolve with the synthesis pair, crop to ``n_out``."""
    a = np.moveaxis(lo, axis, -1)
    m = a.shape[-1]
    rec = np.zeros(a.shape[:-1] + (2 * m + _L - 2,), dtype=np.float64)
    for i in range(_L):
        rec[..., i:i + 2 * m:2] += REC_LO[i] * a
    if hi is not None:
        d = np.moveaxis(hi, axis, -1)
        for i in range(_L):
            rec[..., i:i + 2 * m:2] += REC_HI[i] * d
    out = rec[..., _SYN_CROP:_SYN_CROP + n_out]
    return np.moveaxis(out, -1, axis)


def subband_length(n: int) -> int:
    """Per-axis subband length for an axis of ``n`` samples."""
    return (n + n % 2) // 2 + 1


def dims_ladder(original_dims, m_levels: int) -> list[tuple[int, int, int]]:
    """Dims at each pyramid level 1..m (level 1 = original)."""
    if m_levels < 1:
        raise VolumeError(f"scale index must be >= 1, got {m_levels}")
    ladder = [tuple(int(n) for n in original_dims)]
    for _ in range(m_levels - 1):
        ladder.append(tuple(subband_length(n) for n in ladder[-1]))
    return ladder


@dataclass(frozen=True, eq=False)
class Subbands3:
    """Single-level 3D decomposition: 8 subbands keyed 'LLL'..'HHH'.

    Key characters follow axis order x, y, z. ``original_dims`` is the
    pre-pad input shape so the inverse can crop exactly.
    """

    bands: dict[str, np.ndarray]
    original_dims: tuple[int, int, int]
    spacing: tuple[float, float, float]

    @property
    def lll(self) -> np.ndarray:
        return self.bands["LLL"]


def dwt3_db2(volume: Volume3D) -> Subbands3:
    """One level of the separable 3D transform."""
    bands = {"": volume.data}
    for axis in range(3):
        nxt = {}
        for key, arr in bands.items():
            arr = _pad_even(arr, axis)
            nxt[key + "L"] = _analysis_axis(arr, axis, DEC_LO)
            nxt[key + "H"] = _analysis_axis(arr, axis, DEC_HI)
        bands = nxt
    return Subbands3(bands, volume.dims, volume.spacing)


def idwt3_db2(subbands: Subbands3) -> Volume3D:
    """Inverse of :func:`dwt3_db2`, cropped to the recorded dims."""
    bands = dict(subbands.bands)
    dims = subbands.original_dims
    for axis in (2, 1, 0):
        padded = dims[axis] + dims[axis] % 2
        nxt = {}
        for key in {k[:-1] for k in bands}:
            nxt[key] = _synthesis_axis(bands[key + "L"], bands[key + "H"], padded, axis)
        bands = nxt
        if dims[axis] % 2:
            for key, arr in bands.items():
                bands[key] = arr.take(range(dims[axis]), axis=axis)
    return Volume3D(bands[""], subbands.spacing)


# ---------------------------------------------------------------------------
# scale ladder
# ---------------------------------------------------------------------------

def _lll_once(data: np.ndarray) -> np.ndarray:
    for axis in range(3):
        data = _analysis_axis(_pad_even(data, axis), axis, DEC_LO)
    return data


def _lll_inverse_once(data: np.ndarray, target_dims) -> np.ndarray:
    """Low-pass-only synthesis of one level onto ``target_dims``."""
    for axis in (2, 1, 0):
        n = target_dims[axis]
        padded = n + n % 2
        expect = padded // 2 + 1
        if data.shape[axis] != expect:
            raise VolumeError(
                f"subband length {data.shape[axis]} on axis {axis} does not "
                f"match target dims {tuple(target_dims)}"
            )
        data = _synthesis_axis(data, None, padded, axis)
        if n % 2:
            data = data.take(range(n), axis=axis)
    return data


@dataclass(frozen=True, eq=False)
class ScaledImage:
    """LLL pyramid level ``scale_index`` of a volume (1 = original)."""

    volume: Volume3D
    scale_index: int
    original_dims: tuple[int, int, int]


def scale_image(volume: Volume3D, m: int) -> ScaledImage:
    """Repeated LLL decimation; level m carries an intensity gain of
    ``(2*sqrt 2)**(m-1)`` on top of the doubled spacing per level."""
    if m < 1:
        raise VolumeError(f"scale index must be >= 1, got {m}")
    data = volume.data
    for _ in range(m - 1):
        data = _lll_once(data)
    spacing = tuple(s * 2 ** (m - 1) for s in volume.spacing)
    return ScaledImage(Volume3D(data.copy(), spacing), m, volume.dims)


def upscale_mask(mask: BinaryMask, m: int, original_dims, spacing) -> BinaryMask:
    """Bring a scale-m mask back to the original grid.

    The mask is treated as an LLL subband with zero detail bands,
    reconstructed through m-1 inverse levels, renormalised for the
    per-level low-pass gain and thresholded at 0.5. A full mask maps to
    a full mask; m = 1 is the identity.
    """
    ladder = dims_ladder(original_dims, m)
    if mask.dims != ladder[m - 1]:
        raise VolumeError(
            f"mask dims {mask.dims} do not match level-{m} dims {ladder[m - 1]}"
        )
    if m == 1:
        return BinaryMask(mask.data.copy(), spacing)
    data = mask.data.astype(np.float64)
    for level in range(m - 1, 0, -1):
        data = _lll_inverse_once(data, ladder[level - 1])
    data *= LLL_GAIN ** (m - 1)
    return BinaryMask(data >= 0.5, spacing)


def downscale_mask(mask: BinaryMask, m: int) -> BinaryMask:
    """Project a full-resolution mask onto the scale-m grid (dual of
    :func:`upscale_mask`): LLL-decimate, renormalise, threshold 0.5."""
    if m < 1:
        raise VolumeError(f"scale index must be >= 1, got {m}")
    if m == 1:
        return BinaryMask(mask.data.copy(), mask.spacing)
    data = mask.data.astype(np.float64)
    for _ in range(m - 1):
        data = _lll_once(data)
    data /= LLL_GAIN ** (m - 1)
    spacing = tuple(s * 2 ** (m - 1) for s in mask.spacing)
    return BinaryMask(data >= 0.5, spacing)
