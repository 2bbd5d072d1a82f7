"""Feature matrices, fixed-length segments, and the TFM1 file format.

A feature matrix is a (n_frames, n_bins) float32 array, one row per time
frame. On disk it is stored as: magic bytes ``TFM1``, two little-endian
uint32 values (n_frames, n_bins), then the float32 payload row-major.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"TFM1"
HEADER_SIZE = len(MAGIC) + 8

# Stand-in for a "3 second" window at 22050 Hz with hop 512; the synthetic
# pipeline configures much shorter windows.
DEFAULT_SEGMENT_FRAMES = 129


class FeatureFormatError(ValueError):
    """Raised when a feature file does not decode cleanly."""


@dataclass(frozen=True)
class FeatureMatrix:
    values: np.ndarray  # (n_frames, n_bins) float32

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def n_bins(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class Segment:
    """A contiguous window of a track's feature matrix."""

    values: np.ndarray  # (segment_len, n_bins) float32
    track_id: str
    start: int

    @property
    def source(self) -> tuple[str, int]:
        return (self.track_id, self.start)


def write_features(path: str | Path, values: np.ndarray) -> None:
    arr = np.ascontiguousarray(values, dtype=np.float32)
    if arr.ndim != 2:
        raise FeatureFormatError(f"feature matrix must be 2-D, got shape {arr.shape}")
    n_frames, n_bins = arr.shape
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", n_frames, n_bins))
        fh.write(arr.tobytes())


def load_features(path: str | Path) -> FeatureMatrix:
    """Read a TFM1 file, validating magic, size, and finiteness."""
    raw = Path(path).read_bytes()
    if len(raw) < HEADER_SIZE:
        raise FeatureFormatError(f"{path}: file shorter than TFM1 header")
    if raw[:4] != MAGIC:
        raise FeatureFormatError(f"{path}: bad magic {raw[:4]!r}, expected {MAGIC!r}")
    n_frames, n_bins = struct.unpack("<II", raw[4:HEADER_SIZE])
    expected = n_frames * n_bins * 4
    payload = raw[HEADER_SIZE:]
    if len(payload) != expected:
        raise FeatureFormatError(
            f"{path}: payload is {len(payload)} bytes, header implies {expected}"
        )
    values = np.frombuffer(payload, dtype="<f4").reshape(n_frames, n_bins)
    if not np.isfinite(values).all():
        frame, bin_ = np.argwhere(~np.isfinite(values))[0]
        offset = HEADER_SIZE + (int(frame) * n_bins + int(bin_)) * 4
        raise FeatureFormatError(
            f"{path}: non-finite value at frame {frame}, bin {bin_} (byte offset {offset})"
        )
    return FeatureMatrix(values=values.copy())


def extract_segment(
    feature: FeatureMatrix, start: int, segment_len: int, track_id: str = ""
) -> Segment:
    if segment_len < 1:
        raise ValueError(f"segment_len must be >= 1, got {segment_len}")
    if start < 0 or start + segment_len > feature.n_frames:
        raise ValueError(
            f"segment [{start}, {start + segment_len}) out of range for "
            f"{feature.n_frames} frames"
        )
    return Segment(
        values=feature.values[start : start + segment_len],
        track_id=track_id,
        start=start,
    )


class FeatureStore:
    """Loads TFM1 files on demand and caches them by path.

    The cache is unbounded; desk-scale catalogs fit comfortably in memory.
    """

    def __init__(self) -> None:
        self._cache: dict[str, FeatureMatrix] = {}

    def get(self, feature_ref: str | Path) -> FeatureMatrix:
        key = str(feature_ref)
        hit = self._cache.get(key)
        if hit is None:
            hit = load_features(key)
            self._cache[key] = hit
        return hit

    def __len__(self) -> int:
        return len(self._cache)


@dataclass(frozen=True)
class MelParams:
    sample_rate: int = 22050
    n_bins: int = 128
    window: int = 1024
    hop: int = 512
    fmin: float = 0.0
    fmax: float | None = None  # defaults to sample_rate / 2
    gain: float = 10.0  # compression is log(1 + gain * magnitude)


def _hz_to_mel(hz: np.ndarray | float) -> np.ndarray | float:
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def _mel_to_hz(mel: np.ndarray | float) -> np.ndarray | float:
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(params: MelParams, n_fft_bins: int) -> np.ndarray:
    """Triangular mel filters, peak 1, shape (n_bins, n_fft_bins)."""
    fmax = params.fmax if params.fmax is not None else params.sample_rate / 2.0
    mel_edges = np.linspace(_hz_to_mel(params.fmin), _hz_to_mel(fmax), params.n_bins + 2)
    hz_edges = np.asarray(_mel_to_hz(mel_edges))
    fft_freqs = np.arange(n_fft_bins) * params.sample_rate / (2.0 * (n_fft_bins - 1))
    bank = np.zeros((params.n_bins, n_fft_bins))
    for k in range(params.n_bins):
        lo, center, hi = hz_edges[k], hz_edges[k + 1], hz_edges[k + 2]
        up = (fft_freqs - lo) / max(center - lo, 1e-12)
        down = (hi - fft_freqs) / max(hi - center, 1e-12)
        bank[k] = np.clip(np.minimum(up, down), 0.0, None)
    return bank


def compute_melspectrogram(
    audio: np.ndarray, sample_rate: int, params: MelParams = MelParams()
) -> FeatureMatrix:
    """Log-compressed mel magnitude features for a mono signal.

    Frames start at multiples of the hop; the tail is zero padded so the
    frame count is exactly floor(len(audio) / hop). Resampling is out of
    scope, so the signal's sample rate must match the configured one.
    """
    audio = np.asarray(audio, dtype=np.float64)
    if audio.ndim != 1 or audio.size == 0:
        raise ValueError("audio must be a non-empty 1-D array")
    if sample_rate <= 0:
        raise ValueError(f"sample rate must be positive, got {sample_rate}")
    if sample_rate != params.sample_rate:
        raise ValueError(
            f"unsupported sample rate {sample_rate}; configured for "
            f"{params.sample_rate} and resampling is not performed"
        )
    n_frames = len(audio) // params.hop
    if n_frames < 1:
        raise ValueError(
            f"audio too short: {len(audio)} samples is less than one hop ({params.hop})"
        )
    needed = (n_frames - 1) * params.hop + params.window
    if needed > len(audio):
        audio = np.pad(audio, (0, needed - len(audio)))
    window = np.hanning(params.window)
    starts = np.arange(n_frames) * params.hop
    frames = np.stack([audio[s : s + params.window] * window for s in starts])
    spectrum = np.abs(np.fft.rfft(frames, axis=1))
    bank = mel_filterbank(params, spectrum.shape[1])
    mel = spectrum @ bank.T
    values = np.log1p(params.gain * mel)
    return FeatureMatrix(values=values.astype(np.float32))
