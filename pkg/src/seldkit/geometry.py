"""Direction math, rotations and first-order ambisonic (FOA) panning.

Conventions used throughout the package:

* Directions are unit vectors ``(x, y, z)``; azimuth is measured counter-clockwise
  from +x in the horizontal plane, elevation upward from it.
* FOA audio is stored as a ``(4, N)`` array in ACN channel order ``W, Y, Z, X``
  with SN3D normalisation. For a plane wave arriving from unit direction
  ``(x, y, z)`` the first-order gains are::

        ACN 0  W   1
        ACN 1  Y   y
        ACN 2  Z   z
        ACN 3  X   x

  (SN3D first-order gains equal the direction cosines, so ``W`` and the dipoles
  share the same scale.)
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.io import wavfile

SAMPLE_RATE = 24000

# ACN index of each Cartesian axis inside a FOA clip.
ACN_W, ACN_Y, ACN_Z, ACN_X = 0, 1, 2, 3
# Rows of a (4, N) FOA clip holding x, y, z (in that order).
XYZ_CHANNELS = (ACN_X, ACN_Y, ACN_Z)

_UNIT_TOL = 1e-9


class GeometryError(ValueError):
    """Raised for out-of-range angles, degenerate directions or bad rotations."""


@dataclass
class FoaClip:
    """Four-channel ambisonic audio (rows ``W, Y, Z, X``)."""

    samples: NDArray[np.float64]
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self) -> None:
        self.samples = np.asarray(self.samples)
        if self.samples.ndim != 2 or self.samples.shape[0] != 4:
            raise GeometryError(f"FOA clip must be (4, N), got {self.samples.shape}")
        if self.sample_rate != SAMPLE_RATE:
            raise GeometryError(f"sample rate must be {SAMPLE_RATE}, got {self.sample_rate}")
        if not np.all(np.isfinite(self.samples)):
            raise GeometryError("FOA clip contains non-finite samples")

    @property
    def num_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration_s(self) -> float:
        return self.num_samples / self.sample_rate


def sph_to_cart(azimuth: ArrayLike, elevation: ArrayLike) -> NDArray[np.float64]:
    """Convert azimuth/elevation in degrees to unit vectors.

    Accepts scalars or broadcastable arrays; the Cartesian axis is appended last.
    """
    az = np.asarray(azimuth, dtype=np.float64)
    el = np.asarray(elevation, dtype=np.float64)
    if np.any(np.abs(az) > 180.0) or np.any(np.abs(el) > 90.0):
        raise GeometryError("azimuth must lie in [-180, 180] and elevation in [-90, 90]")
    az_r, el_r = np.deg2rad(az), np.deg2rad(el)
    return np.stack(
        [np.cos(el_r) * np.cos(az_r), np.cos(el_r) * np.sin(az_r), np.sin(el_r)], axis=-1
    )


def cart_to_sph(d: ArrayLike) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Inverse of :func:`sph_to_cart`, returning ``(azimuth, elevation)`` in degrees.

    The input is normalised first. Azimuth is reported as 0 at the poles.
    """
    v = np.asarray(d, dtype=np.float64)
    norm = np.linalg.norm(v, axis=-1)
    if np.any(norm == 0.0):
        raise GeometryError("zero vector has no direction")
    v = v / norm[..., None]
    x, y, z = v[..., 0], v[..., 1], v[..., 2]
    horiz = np.hypot(x, y)
    elevation = np.rad2deg(np.arctan2(z, horiz))
    azimuth = np.where(horiz < 1e-12, 0.0, np.rad2deg(np.arctan2(y, x)))
    return azimuth, elevation


def angular_distance(a: ArrayLike, b: ArrayLike) -> NDArray[np.float64]:
    """Great-circle distance in degrees between unit vectors ``a`` and ``b``.

    Computed as ``atan2(|a x b|, a . b)``, which equals the clamped arccos form
    but stays exact for identical and antipodal inputs.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    cross = np.linalg.norm(np.cross(a, b), axis=-1)
    dot = np.sum(a * b, axis=-1)
    return np.rad2deg(np.arctan2(cross, dot))


def check_rotation(r: ArrayLike) -> NDArray[np.float64]:
    r = np.asarray(r, dtype=np.float64)
    if r.shape != (3, 3):
        raise GeometryError(f"rotation must be 3x3, got {r.shape}")
    if not np.allclose(r.T @ r, np.eye(3), atol=_UNIT_TOL, rtol=0.0):
        raise GeometryError("rotation matrix is not orthogonal")
    return r


def foa_encode(mono: ArrayLike, track: ArrayLike) -> FoaClip:
    """Pan a mono signal to FOA along a per-sample direction track.

    Args:
        mono: Signal of shape ``(N,)`` (or ``(1, N)``).
        track: Unit directions of shape ``(N, 3)``, or a single ``(3,)`` direction
            for a static source.
    """
    s = np.asarray(mono, dtype=np.float64).reshape(-1)
    dirs = np.asarray(track, dtype=np.float64)
    if dirs.ndim == 1:
        dirs = np.broadcast_to(dirs, (s.size, 3))
    if dirs.shape != (s.size, 3):
        raise GeometryError(f"track shape {dirs.shape} does not match {s.size} samples")
    if np.any(np.abs(np.linalg.norm(dirs, axis=1) - 1.0) > _UNIT_TOL):
        raise GeometryError("track directions must be unit norm")
    out = np.empty((4, s.size))
    out[ACN_W] = s
    out[ACN_X] = s * dirs[:, 0]
    out[ACN_Y] = s * dirs[:, 1]
    out[ACN_Z] = s * dirs[:, 2]
    return FoaClip(out)


def rotate_foa(clip: FoaClip, r: ArrayLike) -> FoaClip:
    """Apply a rotation (or reflection) to the sound field of ``clip``.

    First-order components transform like Cartesian vectors, so ``(X, Y, Z)`` is
    multiplied by ``r`` and ``W`` is untouched.
    """
    r = check_rotation(r)
    if np.array_equal(r, np.eye(3)):
        return FoaClip(clip.samples.copy(), clip.sample_rate)
    out = clip.samples.copy()
    xyz = clip.samples[list(XYZ_CHANNELS)]
    out[list(XYZ_CHANNELS)] = r @ xyz
    return FoaClip(out, clip.sample_rate)


def rotate_vectors(r: ArrayLike, vectors: ArrayLike, axis: int = -1) -> NDArray[np.float64]:
    """Rotate an array of 3-vectors stored along ``axis``."""
    r = np.asarray(r, dtype=np.float64)
    v = np.moveaxis(np.asarray(vectors, dtype=np.float64), axis, -1)
    return np.moveaxis(v @ r.T, -1, axis)


class CatalogEntry(NamedTuple):
    """A label-exact FOA transform and its effect on directions."""

    name: str
    rotation: NDArray[np.float64]

    def transform_doa(self, vectors: ArrayLike, axis: int = -1) -> NDArray[np.float64]:
        return rotate_vectors(self.rotation, vectors, axis=axis)

    @property
    def inverse(self) -> NDArray[np.float64]:
        return self.rotation.T


def _yaw(quarter_turns: int) -> NDArray[np.float64]:
    c, s = [(1, 0), (0, 1), (-1, 0), (0, -1)][quarter_turns % 4]
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]], dtype=np.float64)


def rotation_catalog() -> list[CatalogEntry]:
    """The 16 signed-permutation transforms used for augmentation and TTA.

    Each is a yaw by a multiple of 90 degrees, optionally preceded by an azimuth
    mirror (``y -> -y``) and an elevation flip (``z -> -z``). Entry 0 is the
    identity. Matrices are integer-valued so rotating FOA is exact.
    """
    entries = []
    for mirror, flip, quarter in itertools.product((False, True), (False, True), range(4)):
        pre = np.diag([1.0, -1.0 if mirror else 1.0, -1.0 if flip else 1.0])
        name = f"yaw{90 * quarter}" + ("_mirror" if mirror else "") + ("_flip" if flip else "")
        entries.append(CatalogEntry(name, _yaw(quarter) @ pre))
    return entries


def read_wav(path: str | Path) -> FoaClip:
    rate, data = wavfile.read(path)
    data = np.asarray(data)
    if data.ndim != 2 or data.shape[1] != 4:
        raise GeometryError(f"{path}: expected 4-channel audio, got shape {data.shape}")
    if data.dtype.kind in "iu":
        data = data / float(np.iinfo(data.dtype).max)
    return FoaClip(data.T.astype(np.float64), rate)


def write_wav(path: str | Path, clip: FoaClip) -> None:
    """Write ``clip`` as 4-channel float32 PCM in ACN order."""
    wavfile.write(path, clip.sample_rate, clip.samples.T.astype("<f4"))
