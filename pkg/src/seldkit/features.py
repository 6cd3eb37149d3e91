"""STFT front end: four amplitude spectrograms plus three inter-channel phase differences."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.typing import NDArray
from scipy.signal import get_window

from seldkit.geometry import FoaClip

WIN_LENGTH = 480  # 20 ms at 24 kHz
HOP_LENGTH = 240  # 10 ms
N_FFT = 512
N_BINS = N_FFT // 2 + 1
N_AMPLITUDE = 4
N_IPD = 3
N_PLANES = N_AMPLITUDE + N_IPD
DEFAULT_TEMPORAL_POOL = 8

_DUMP_HEADER = struct.Struct("<4I")


class FeatureError(ValueError):
    pass


@dataclass
class FeatureTensor:
    """Network input of shape ``(M, F, T')``.

    Planes 0-3 are ``|STFT|`` of ``W, Y, Z, X``; planes 4-6 are the phases of
    ``Y, Z, X`` relative to ``W``, wrapped to ``[-pi, pi]``.
    """

    data: NDArray
    frame_hop_s: float = HOP_LENGTH / 24000

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    @property
    def num_frames(self) -> int:
        return self.data.shape[-1]


def analysis_window() -> NDArray[np.float64]:
    """Periodic Hann window of 480 samples."""
    return get_window("hann", WIN_LENGTH, fftbins=True)


def num_frames(num_samples: int) -> int:
    """Frames produced for a clip of ``num_samples``: one per whole hop."""
    return num_samples // HOP_LENGTH


def stft(clip: FoaClip) -> NDArray[np.complex128]:
    """Per-channel complex spectrogram of shape ``(4, N_BINS, T')``.

    Frame ``t`` covers samples ``[t * hop, t * hop + win)``; the tail is
    zero-padded so that ``T' = N // hop``.
    """
    x = clip.samples
    n = x.shape[1]
    if n < WIN_LENGTH:
        raise FeatureError(f"clip has {n} samples, shorter than one {WIN_LENGTH}-sample window")
    t_frames = num_frames(n)
    needed = (t_frames - 1) * HOP_LENGTH + WIN_LENGTH
    if needed > n:
        x = np.pad(x, ((0, 0), (0, needed - n)))
    frames = np.lib.stride_tricks.sliding_window_view(x, WIN_LENGTH, axis=1)[:, ::HOP_LENGTH]
    frames = frames[:, :t_frames] * analysis_window()
    spec = np.fft.rfft(frames, n=N_FFT, axis=-1)  # (4, T', F)
    return np.ascontiguousarray(spec.transpose(0, 2, 1))


def features_from_stft(spec: NDArray[np.complex128]) -> FeatureTensor:
    amplitude = np.abs(spec)
    ref = spec[0]
    # arg(S_ch * conj(S_W)) is the wrapped phase difference; zero where either bin is empty.
    ipd = np.angle(spec[1:] * np.conj(ref)[None])
    ipd[(amplitude[1:] == 0.0) | (amplitude[0] == 0.0)[None]] = 0.0
    return FeatureTensor(np.concatenate([amplitude, ipd], axis=0))


def extract_features(clip: FoaClip) -> FeatureTensor:
    return features_from_stft(stft(clip))


def frames_to_label_frames(input_frames: int, temporal_pool: int = DEFAULT_TEMPORAL_POOL) -> int:
    if temporal_pool < 1:
        raise FeatureError("temporal pool must be positive")
    return input_frames // temporal_pool


def write_feature_dump(path: str | Path, features: FeatureTensor) -> None:
    """Write ``features`` as a 16-byte header (M, F, T', hop_ms) plus float32 LE data."""
    m, f, t = features.data.shape
    hop_ms = int(round(features.frame_hop_s * 1000))
    with open(path, "wb") as fh:
        fh.write(_DUMP_HEADER.pack(m, f, t, hop_ms))
        fh.write(np.ascontiguousarray(features.data, dtype="<f4").tobytes())


def read_feature_dump(path: str | Path) -> FeatureTensor:
    raw = Path(path).read_bytes()
    if len(raw) < _DUMP_HEADER.size:
        raise FeatureError(f"{path}: truncated header")
    m, f, t, hop_ms = _DUMP_HEADER.unpack_from(raw)
    body = np.frombuffer(raw, dtype="<f4", offset=_DUMP_HEADER.size)
    if body.size != m * f * t:
        raise FeatureError(f"{path}: expected {m * f * t} values, found {body.size}")
    return FeatureTensor(body.reshape(m, f, t).astype(np.float64), hop_ms / 1000.0)
