"""Synthetic anechoic FOA scenes with frame-wise SELD labels.

Sources are class-specific synthetic sounds panned to FOA along static or
great-circle trajectories; the mixture is completed with spatially white
Gaussian noise at a random SNR. Labels are rasterised on a 100 ms grid.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from numpy.typing import NDArray

from seldkit.accdoa import EventLabelTrack, empty_track
from seldkit.geometry import SAMPLE_RATE, FoaClip, cart_to_sph, foa_encode, rotate_vectors, sph_to_cart

LABEL_HOP_S = 0.1
LABEL_CSV_HEADER = ("frame_100ms", "class_idx", "azimuth_deg", "elevation_deg")
_FADE_S = 0.01


class SceneError(ValueError):
    pass


@dataclass(frozen=True)
class SceneSpec:
    duration_s: float = 60.0
    class_count: int = 14
    max_overlap: int = 2
    snr_db_range: tuple[float, float] = (6.0, 30.0)
    move_speeds_dps: tuple[float, ...] = (10.0, 20.0, 40.0)
    seed: int = 0
    event_rate_hz: float = 0.5
    event_length_s: tuple[float, float] = (0.5, 4.0)
    elevation_range_deg: tuple[float, float] = (-45.0, 45.0)

    def __post_init__(self) -> None:
        if self.duration_s <= 0:
            raise SceneError("duration must be positive")
        if self.class_count < 1:
            raise SceneError("class_count must be at least 1")
        if not 0 <= self.max_overlap <= 2:
            raise SceneError("max_overlap must be between 0 and 2")
        lo, hi = self.snr_db_range
        if lo > hi:
            raise SceneError("snr range must be ordered low, high")
        if any(s <= 0 for s in self.move_speeds_dps):
            raise SceneError("move speeds must be positive")

    @property
    def num_samples(self) -> int:
        return int(round(self.duration_s * SAMPLE_RATE))

    @property
    def num_label_frames(self) -> int:
        return math.ceil(round(self.duration_s / LABEL_HOP_S, 9))


@dataclass(frozen=True)
class SceneEvent:
    """One sound event; onset/offset are in label frames (100 ms units).

    The trajectory is ``cos(w t) * start + sin(w t) * axis`` with ``axis`` a unit
    vector orthogonal to ``start`` and ``w`` the angular speed; static events have
    speed 0.
    """

    class_id: int
    onset: int
    offset: int
    start: tuple[float, float, float]
    axis: tuple[float, float, float]
    speed_dps: float
    sample_seed: int
    gain: float = 1.0

    @property
    def moving(self) -> bool:
        return self.speed_dps > 0

    def direction_at(self, t_s: NDArray) -> NDArray[np.float64]:
        """Unit directions at times (seconds since onset), shape ``(len(t), 3)``."""
        angle = np.deg2rad(self.speed_dps) * np.asarray(t_s, dtype=np.float64)
        start = np.asarray(self.start)
        axis = np.asarray(self.axis)
        return np.cos(angle)[:, None] * start + np.sin(angle)[:, None] * axis

    def transformed(self, r: NDArray) -> "SceneEvent":
        start = tuple(rotate_vectors(r, self.start).tolist())
        axis = tuple(rotate_vectors(r, self.axis).tolist())
        return replace(self, start=start, axis=axis)

    def shifted(self, frames: int) -> "SceneEvent":
        return replace(self, onset=self.onset + frames, offset=self.offset + frames)


@dataclass
class SceneInstance:
    clip: FoaClip
    labels: EventLabelTrack
    events: list[SceneEvent]
    spec: SceneSpec
    snr_db: float | None = None
    signal: NDArray | None = field(default=None, repr=False)
    noise: NDArray | None = field(default=None, repr=False)


# --- source signals -------------------------------------------------------


def class_fundamental(class_id: int) -> float:
    """Fundamental frequency of a class's harmonic stack (200 Hz * 1.35^c)."""
    return 200.0 * 1.35**class_id


def synth_event_sample(
    class_id: int, duration_s: float, rng: np.random.Generator, class_count: int | None = None
) -> NDArray[np.float64]:
    """Class-distinctive mono signal in ``[-1, 1]``.

    A harmonic stack on the class fundamental (jittered by up to 3% per draw)
    with a class-dependent spectral slope, a band of filtered noise above the
    fundamental, and a slow random amplitude envelope.
    """
    if class_count is not None and not 0 <= class_id < class_count:
        raise SceneError(f"class id {class_id} outside [0, {class_count})")
    n = int(round(duration_s * SAMPLE_RATE))
    t = np.arange(n) / SAMPLE_RATE
    f0 = class_fundamental(class_id) * (1.0 + rng.uniform(-0.03, 0.03))
    slope = 1.0 + 0.15 * (class_id % 5)
    sig = np.zeros(n)
    nyquist = SAMPLE_RATE / 2
    for h in range(1, 9):
        if h * f0 >= 0.9 * nyquist:
            break
        sig += np.sin(2 * np.pi * h * f0 * t + rng.uniform(0, 2 * np.pi)) / h**slope
    noise = rng.standard_normal(n)
    spec = np.fft.rfft(noise)
    freqs = np.fft.rfftfreq(n, 1.0 / SAMPLE_RATE)
    lo, hi = 1.5 * f0, min(3.0 * f0, 0.95 * nyquist)
    spec[(freqs < lo) | (freqs > hi)] = 0.0
    band = np.fft.irfft(spec, n=n)
    peak = np.max(np.abs(band))
    if peak > 0:
        sig += 0.2 * band / peak
    envelope = 0.6 + 0.4 * np.sin(2 * np.pi * rng.uniform(0.5, 3.0) * t + rng.uniform(0, 2 * np.pi))
    sig *= envelope
    fade = min(int(_FADE_S * SAMPLE_RATE), n // 2)
    if fade > 0:
        ramp = np.linspace(0.0, 1.0, fade, endpoint=False)
        sig[:fade] *= ramp
        sig[n - fade :] *= ramp[::-1]
    peak = np.max(np.abs(sig)) if n else 0.0
    if peak > 0:
        sig /= peak
    return np.clip(sig, -1.0, 1.0)


def _orthogonal_unit(v: NDArray, rng: np.random.Generator) -> NDArray[np.float64]:
    while True:
        w = rng.standard_normal(3)
        w -= np.dot(w, v) * v
        n = np.linalg.norm(w)
        if n > 1e-6:
            return w / n


def synth_trajectory(
    kind: str,
    speed_dps: float,
    duration_s: float,
    rng: np.random.Generator,
    move_speeds_dps: Sequence[float] = (10.0, 20.0, 40.0),
    elevation_range_deg: tuple[float, float] = (-45.0, 45.0),
) -> NDArray[np.float64]:
    """Per-sample unit direction track, shape ``(N, 3)``."""
    if kind not in ("static", "moving"):
        raise SceneError(f"unknown trajectory kind {kind!r}")
    if kind == "moving" and speed_dps not in move_speeds_dps:
        raise SceneError(f"speed {speed_dps} not in {tuple(move_speeds_dps)}")
    start, axis = _draw_start(rng, elevation_range_deg)
    event = SceneEvent(0, 0, 0, tuple(start), tuple(axis), speed_dps if kind == "moving" else 0.0, 0)
    n = int(round(duration_s * SAMPLE_RATE))
    return event.direction_at(np.arange(n) / SAMPLE_RATE)


def _draw_start(rng: np.random.Generator, elevation_range_deg: tuple[float, float]):
    az = rng.uniform(-180.0, 180.0)
    el = rng.uniform(*elevation_range_deg)
    start = sph_to_cart(az, el)
    return start, _orthogonal_unit(start, rng)


# --- event layout ---------------------------------------------------------


def draw_events(spec: SceneSpec, rng: np.random.Generator) -> list[SceneEvent]:
    """Poisson event arrivals with lengths in ``spec.event_length_s``.

    Events that would create a same-class overlap or exceed ``max_overlap``
    simultaneous classes are dropped.
    """
    n_frames = spec.num_label_frames
    busy = np.zeros((spec.class_count, n_frames), dtype=bool)
    events: list[SceneEvent] = []
    t = rng.exponential(1.0 / spec.event_rate_hz)
    min_len = max(1, int(round(spec.event_length_s[0] / LABEL_HOP_S)))
    max_len = max(min_len, int(round(spec.event_length_s[1] / LABEL_HOP_S)))
    while t < spec.duration_s:
        onset = int(t / LABEL_HOP_S)
        length = int(rng.integers(min_len, max_len + 1))
        offset = min(onset + length, n_frames)
        class_id = int(rng.integers(spec.class_count))
        moving = bool(rng.integers(2))
        speed = float(rng.choice(spec.move_speeds_dps)) if moving else 0.0
        start, axis = _draw_start(rng, spec.elevation_range_deg)
        sample_seed = int(rng.integers(2**31))
        t += rng.exponential(1.0 / spec.event_rate_hz)
        window = busy[:, onset:offset]
        if offset <= onset or window[class_id].any():
            continue
        if np.max(window.sum(axis=0) + 1) > spec.max_overlap:
            continue
        busy[class_id, onset:offset] = True
        events.append(
            SceneEvent(class_id, onset, offset, tuple(start), tuple(axis), speed, sample_seed)
        )
    return events


def rasterize_labels(events: Iterable[SceneEvent], spec: SceneSpec) -> EventLabelTrack:
    """Frame activity plus DOA sampled at each label-frame centre."""
    track = empty_track(spec.class_count, spec.num_label_frames)
    for ev in events:
        lo, hi = max(ev.onset, 0), min(ev.offset, spec.num_label_frames)
        if hi <= lo:
            continue
        frames = np.arange(lo, hi)
        t_rel = (frames + 0.5 - ev.onset) * LABEL_HOP_S
        track.activity[ev.class_id, lo:hi] = 1
        track.doa[:, ev.class_id, lo:hi] = ev.direction_at(t_rel).T
    return track


def render_event(ev: SceneEvent, spec: SceneSpec) -> tuple[int, NDArray[np.float64]]:
    """Return (start sample, FOA samples) of one event, clipped to the scene."""
    start = ev.onset * int(LABEL_HOP_S * SAMPLE_RATE)
    stop = min(ev.offset * int(LABEL_HOP_S * SAMPLE_RATE), spec.num_samples)
    n = stop - start
    mono = synth_event_sample(ev.class_id, n / SAMPLE_RATE, np.random.default_rng(ev.sample_seed))
    track = ev.direction_at(np.arange(n) / SAMPLE_RATE)
    return start, ev.gain * foa_encode(mono, track).samples


def render_events(events: Sequence[SceneEvent], spec: SceneSpec) -> NDArray[np.float64]:
    stem = np.zeros((4, spec.num_samples))
    for ev in events:
        if ev.offset <= ev.onset or ev.onset < 0:
            continue
        start, foa = render_event(ev, spec)
        stem[:, start : start + foa.shape[1]] += foa
    return stem


def noise_scale(signal: NDArray, noise: NDArray, snr_db: float) -> float:
    """Gain for ``noise`` so that total signal/noise energy equals ``snr_db``."""
    e_noise = float(np.sum(noise * noise))
    e_sig = float(np.sum(signal * signal))
    if e_noise == 0.0:
        return 0.0
    if e_sig == 0.0:
        # noise-only scene: pin the noise to what a unit-RMS source would see
        e_sig = float(noise.shape[1])
    return math.sqrt(e_sig / (e_noise * 10.0 ** (snr_db / 10.0)))


def measured_snr_db(signal: NDArray, noise: NDArray) -> float:
    return 10.0 * math.log10(float(np.sum(signal * signal)) / float(np.sum(noise * noise)))


def mix_scene(
    events: Sequence[SceneEvent], spec: SceneSpec, noise: NDArray, snr_db: float
) -> SceneInstance:
    """Render ``events`` and add ``noise`` (4, N) scaled to ``snr_db``."""
    signal = render_events(events, spec)
    scaled_noise = noise * noise_scale(signal, noise, snr_db)
    return SceneInstance(
        clip=FoaClip(signal + scaled_noise),
        labels=rasterize_labels(events, spec),
        events=list(events),
        spec=spec,
        snr_db=snr_db,
        signal=signal,
        noise=scaled_noise,
    )


def render_scene(spec: SceneSpec, rng: np.random.Generator | None = None) -> SceneInstance:
    """Draw and render one scene. ``rng`` defaults to one seeded by ``spec.seed``."""
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    events = draw_events(spec, rng)
    snr_db = float(rng.uniform(*spec.snr_db_range))
    noise = rng.standard_normal((4, spec.num_samples))
    return mix_scene(events, spec, noise, snr_db)


# --- label files ----------------------------------------------------------


def track_to_rows(track: EventLabelTrack) -> list[tuple[int, int, float, float]]:
    cls, frames = np.nonzero(track.activity)
    order = np.lexsort((cls, frames))
    rows = []
    for i in order:
        c, f = int(cls[i]), int(frames[i])
        az, el = cart_to_sph(track.doa[:, c, f])
        rows.append((f, c, float(az), float(el)))
    return rows


def write_label_csv(path: str | Path, rows: Iterable[tuple[int, int, float, float]]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LABEL_CSV_HEADER)
        for frame, cls, az, el in rows:
            writer.writerow((frame, cls, f"{az:.6f}", f"{el:.6f}"))


class LabelParseError(ValueError):
    pass


def read_label_csv(path: str | Path) -> list[tuple[int, int, float, float]]:
    """Parse a label CSV; rows are ``(frame, class, azimuth, elevation)``."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if not row or (lineno == 1 and row[0].strip() == LABEL_CSV_HEADER[0]):
                continue
            if len(row) != 4:
                raise LabelParseError(f"{path}:{lineno}: expected 4 fields, got {len(row)}")
            try:
                frame, cls = int(row[0]), int(row[1])
                az, el = float(row[2]), float(row[3])
            except ValueError as exc:
                raise LabelParseError(f"{path}:{lineno}: {exc}") from None
            if frame < 0 or cls < 0 or abs(az) > 180 or abs(el) > 90:
                raise LabelParseError(f"{path}:{lineno}: value out of range")
            rows.append((frame, cls, az, el))
    return rows
