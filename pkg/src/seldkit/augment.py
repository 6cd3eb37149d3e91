"""Training-time augmentation: EMDA mixing, FOA rotation and multichannel SpecAugment."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

from seldkit.accdoa import EventLabelTrack
from seldkit.features import N_AMPLITUDE, FeatureTensor
from seldkit.geometry import SAMPLE_RATE, FoaClip, rotate_foa, rotation_catalog
from seldkit.scene import LABEL_HOP_S, SceneInstance, rasterize_labels

_CATALOG = rotation_catalog()
_HOP_SAMPLES = int(round(LABEL_HOP_S * SAMPLE_RATE))


@dataclass(frozen=True)
class SpecAugmentConfig:
    num_time_masks: int = 2
    num_freq_masks: int = 2
    num_channel_masks: int = 1
    max_time_width: int = 16
    max_freq_width: int = 12


@dataclass(frozen=True)
class AugmentConfig:
    emda_enabled: bool = True
    rotation_enabled: bool = True
    specaug_enabled: bool = True
    specaug: SpecAugmentConfig = SpecAugmentConfig()
    emda_probability: float = 0.5
    emda_max_gain: float = 1.0
    emda_max_delay_frames: int = 5
    emda_eq_gain_db: float = 6.0
    emda_retries: int = 4
    seed: int = 0

    def validate(self, features_shape: tuple[int, int, int] | None = None) -> "AugmentConfig":
        if not 0.0 <= self.emda_probability <= 1.0:
            raise ValueError("emda_probability must lie in [0, 1]")
        if self.emda_max_gain < 0 or self.emda_max_delay_frames < 0:
            raise ValueError("EMDA gain and delay bounds must be non-negative")
        if features_shape is not None:
            _, f, t = features_shape
            if self.specaug.max_time_width > t or self.specaug.max_freq_width > f:
                raise ValueError("SpecAugment mask width exceeds feature dimensions")
        return self


def peaking_biquad(center_hz: float, gain_db: float, q: float = 1.0):
    """RBJ cookbook peaking-EQ coefficients ``(b, a)``."""
    amp = 10.0 ** (gain_db / 40.0)
    w0 = 2.0 * math.pi * center_hz / SAMPLE_RATE
    alpha = math.sin(w0) / (2.0 * q)
    b = np.array([1 + alpha * amp, -2 * math.cos(w0), 1 - alpha * amp])
    a = np.array([1 + alpha / amp, -2 * math.cos(w0), 1 - alpha / amp])
    return b / a[0], a / a[0]


def _equalize(samples: np.ndarray, rng: np.random.Generator, max_gain_db: float) -> np.ndarray:
    """Random peaking EQ, loudness preserved so mixing gains keep their meaning."""
    if max_gain_db == 0:
        return samples
    center = math.exp(rng.uniform(math.log(100.0), math.log(8000.0)))
    b, a = peaking_biquad(center, rng.uniform(-max_gain_db, max_gain_db))
    out = lfilter(b, a, samples, axis=1)
    e_in, e_out = float(np.sum(samples**2)), float(np.sum(out**2))
    if e_out > 0:
        out *= math.sqrt(e_in / e_out)
    return out


def emda(
    a: SceneInstance,
    b: SceneInstance,
    rng: np.random.Generator,
    gain: float | None = None,
    delay_frames: int | None = None,
    max_gain: float = 1.0,
    max_delay_frames: int = 5,
    eq_gain_db: float = 6.0,
    retries: int = 4,
) -> SceneInstance:
    """Mix ``b`` into ``a`` with a random gain, delay and equalisation.

    The delay is a whole number of label frames so labels shift exactly. Draws
    that would create a same-class overlap or exceed ``max_overlap`` are redrawn
    up to ``retries`` times, after which ``a`` is returned unchanged.
    """
    if a.clip.num_samples != b.clip.num_samples or a.spec.class_count != b.spec.class_count:
        raise ValueError("EMDA needs scenes of equal duration and class count")
    spec = a.spec
    for _ in range(max(retries, 1)):
        g = float(rng.uniform(0.0, max_gain)) if gain is None else float(gain)
        d = int(rng.integers(0, max_delay_frames + 1)) if delay_frames is None else int(delay_frames)
        if g == 0.0:
            return a
        shifted = [ev.shifted(d) for ev in b.events]
        shifted = [ev for ev in shifted if ev.onset < spec.num_label_frames]
        b_labels = rasterize_labels(shifted, spec)
        both = (a.labels.activity == 1) & (b_labels.activity == 1)
        count = a.labels.activity.astype(int).sum(axis=0) + b_labels.activity.sum(axis=0)
        if both.any() or (count.size and count.max() > spec.max_overlap):
            if gain is not None and delay_frames is not None:
                break
            continue
        delayed = np.zeros_like(b.clip.samples)
        shift = d * _HOP_SAMPLES
        if shift < delayed.shape[1]:
            delayed[:, shift:] = b.clip.samples[:, : delayed.shape[1] - shift]
        mixed = a.clip.samples + g * _equalize(delayed, rng, eq_gain_db)
        active_b = b_labels.activity == 1
        labels = EventLabelTrack(
            np.where(active_b, 1, a.labels.activity).astype(a.labels.activity.dtype),
            np.where(active_b[None], b_labels.doa, a.labels.doa),
        )
        return SceneInstance(FoaClip(mixed), labels, list(a.events) + shifted, spec)
    return a


def random_rotation(
    instance: SceneInstance, rng: np.random.Generator, index: int | None = None
) -> SceneInstance:
    """Apply a catalog transform (uniformly drawn unless ``index`` is given)."""
    entry = _CATALOG[int(rng.integers(len(_CATALOG))) if index is None else index]
    if index == 0 or entry.name == _CATALOG[0].name:
        return instance
    labels = EventLabelTrack(
        instance.labels.activity.copy(), entry.transform_doa(instance.labels.doa, axis=0)
    )
    return SceneInstance(
        clip=rotate_foa(instance.clip, entry.rotation),
        labels=labels,
        events=[ev.transformed(entry.rotation) for ev in instance.events],
        spec=instance.spec,
        snr_db=instance.snr_db,
    )


def _mask_cells(data: np.ndarray, cells: tuple, rng: np.random.Generator) -> None:
    amp = data[:N_AMPLITUDE]
    ipd = data[N_AMPLITUDE:]
    amp[cells] = 0.0
    region = ipd[cells]
    ipd[cells] = np.angle(np.exp(1j * rng.uniform(0.0, 2.0 * np.pi, size=region.shape)))


def spec_augment(
    x: FeatureTensor, cfg: SpecAugmentConfig, rng: np.random.Generator
) -> FeatureTensor:
    """Time, frequency and channel hard masking.

    Masked amplitude cells become 0. Masked IPD cells are replaced with draws
    from ``U[0, 2 pi)`` wrapped to ``[-pi, pi]``. Time and frequency strips cover
    every plane; a channel mask covers one whole plane ``m0`` drawn from
    ``[0, M)``.
    """
    data = x.data.copy()
    m, f, t = data.shape
    for _ in range(cfg.num_time_masks):
        width = int(rng.integers(0, min(cfg.max_time_width, t) + 1))
        start = int(rng.integers(0, t - width + 1))
        if width:
            _mask_cells(data, (slice(None), slice(None), slice(start, start + width)), rng)
    for _ in range(cfg.num_freq_masks):
        width = int(rng.integers(0, min(cfg.max_freq_width, f) + 1))
        start = int(rng.integers(0, f - width + 1))
        if width:
            _mask_cells(data, (slice(None), slice(start, start + width), slice(None)), rng)
    for _ in range(cfg.num_channel_masks):
        m0 = int(rng.integers(0, m))
        if m0 < N_AMPLITUDE:
            data[m0] = 0.0
        else:
            data[m0] = np.angle(np.exp(1j * rng.uniform(0.0, 2.0 * np.pi, size=(f, t))))
    return FeatureTensor(data, x.frame_hop_s)
