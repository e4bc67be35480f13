"""Acoustic features: MFCC extraction from WAV and precomputed-embedding ingestion.

The MFCC pipeline is the conventional one: pre-emphasis, Hamming-windowed
framing, power spectrum, triangular mel filterbank, log with a power floor,
orthonormal DCT-II. Utterances are pooled to a single vector by default;
``MfccConfig.sequence_mode`` keeps the frame matrix instead so the classifier
sees a real sequence.
"""

from __future__ import annotations

import csv
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FeatureError


@dataclass(frozen=True)
class MfccConfig:
    sample_rate: int = 16000
    frame_len_ms: float = 25.0
    hop_ms: float = 10.0
    fft_size: int = 512
    num_mel_filters: int = 26
    num_ceps: int = 13
    fmin: float = 0.0
    fmax: float = 8000.0
    log_floor: float = 1e-10
    preemphasis: float = 0.97
    sequence_mode: bool = False

    @property
    def frame_samples(self) -> int:
        return int(round(self.frame_len_ms * self.sample_rate / 1000.0))

    @property
    def hop_samples(self) -> int:
        return int(round(self.hop_ms * self.sample_rate / 1000.0))

    def __post_init__(self) -> None:
        if self.frame_samples < 1 or self.hop_samples < 1:
            raise ValueError("frame and hop must span at least one sample")
        if self.fft_size < self.frame_samples:
            raise ValueError(
                f"fft_size {self.fft_size} is smaller than the frame length "
                f"({self.frame_samples} samples)"
            )
        if self.num_ceps > self.num_mel_filters:
            raise ValueError("num_ceps cannot exceed num_mel_filters")
        if self.fmax > self.sample_rate / 2:
            raise ValueError("fmax cannot exceed the Nyquist frequency")
        if not 0 <= self.fmin < self.fmax:
            raise ValueError("need 0 <= fmin < fmax")
        if self.log_floor <= 0:
            raise ValueError("log_floor must be positive")


@dataclass(frozen=True)
class FeatureVector:
    """Fixed-length utterance representation with its provenance tag."""

    values: np.ndarray
    provenance: str  # "mfcc" or "precomputed"


def hz_to_mel(hz):
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_filter_edges(cfg: MfccConfig) -> np.ndarray:
    """num_mel_filters + 2 band edges in Hz, mel-spaced over [fmin, fmax]."""
    mels = np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax), cfg.num_mel_filters + 2)
    return mel_to_hz(mels)


def mel_filterbank(cfg: MfccConfig) -> np.ndarray:
    """Triangular mel filters, shape (num_mel_filters, fft_size // 2 + 1)."""
    edges = mel_filter_edges(cfg)
    bin_freqs = np.arange(cfg.fft_size // 2 + 1) * (cfg.sample_rate / cfg.fft_size)
    left = edges[:-2, None]
    center = edges[1:-1, None]
    right = edges[2:, None]
    rising = (bin_freqs[None, :] - left) / (center - left)
    falling = (right - bin_freqs[None, :]) / (right - center)
    return np.maximum(0.0, np.minimum(rising, falling))


def dct_matrix(num_rows: int, size: int) -> np.ndarray:
    """First ``num_rows`` rows of the orthonormal DCT-II basis of length ``size``."""
    if not 1 <= num_rows <= size:
        raise ValueError("need 1 <= num_rows <= size")
    n = np.arange(size)
    k = np.arange(num_rows)[:, None]
    mat = np.sqrt(2.0 / size) * np.cos(np.pi * (2 * n + 1) * k / (2 * size))
    mat[0, :] = np.sqrt(1.0 / size)
    return mat


def resample_to_16k(signal, src_rate: float) -> np.ndarray:
    """Resample to 16 kHz with a 64-tap Kaiser-windowed sinc interpolator.

    Anti-alias cutoff sits at min(src_rate, 16000)/2. Output length is
    round(len * 16000 / src_rate). The 16 kHz case is an exact pass-through.
    """
    x = np.asarray(signal, dtype=np.float64).ravel()
    if x.size == 0:
        raise ValueError("cannot resample an empty signal")
    if src_rate < 8000:
        raise ValueError("source rate below 8 kHz is not supported")
    target = 16000.0
    if src_rate == target:
        return x.copy()

    ratio = target / src_rate
    out_len = int(np.floor(x.size * ratio + 0.5))
    cutoff = min(src_rate, target) / 2.0 / src_rate  # cycles per input sample
    half = 32
    beta = 8.0

    centers = np.arange(out_len) / ratio
    base = np.floor(centers).astype(np.int64)
    offsets = np.arange(-half + 1, half + 1)
    t = offsets[None, :] - (centers - base)[:, None]  # tap position minus center
    window = np.i0(beta * np.sqrt(np.maximum(0.0, 1.0 - (t / half) ** 2))) / np.i0(beta)
    kernel = 2.0 * cutoff * np.sinc(2.0 * cutoff * t) * window

    idx = base[:, None] + offsets[None, :]
    valid = (idx >= 0) & (idx < x.size)
    gathered = np.where(valid, x[np.clip(idx, 0, x.size - 1)], 0.0)
    return np.einsum("ij,ij->i", gathered, kernel)


def compute_mfcc(signal, cfg: MfccConfig) -> np.ndarray:
    """MFCC frame matrix, shape (num_frames, num_ceps), for a 16 kHz signal.

    Trailing samples that do not fill a frame are dropped. Power is floored
    at ``cfg.log_floor`` before the log, so every coefficient is finite.
    """
    x = np.asarray(signal, dtype=np.float64).ravel()
    flen, hop = cfg.frame_samples, cfg.hop_samples
    if x.size < flen:
        raise ValueError(f"signal of {x.size} samples is shorter than one frame ({flen})")

    emphasized = np.empty_like(x)
    emphasized[0] = x[0]
    emphasized[1:] = x[1:] - cfg.preemphasis * x[:-1]

    num_frames = 1 + (x.size - flen) // hop
    starts = np.arange(num_frames) * hop
    frames = emphasized[starts[:, None] + np.arange(flen)[None, :]]
    frames = frames * np.hamming(flen)

    power = np.abs(np.fft.rfft(frames, n=cfg.fft_size, axis=1)) ** 2
    energies = power @ mel_filterbank(cfg).T
    log_energies = np.log(np.maximum(energies, cfg.log_floor))
    return log_energies @ dct_matrix(cfg.num_ceps, cfg.num_mel_filters).T


def average_pool(frames) -> np.ndarray:
    """Per-dimension mean over time, (T, d) -> (d,)."""
    mat = np.asarray(frames, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[0] < 1:
        raise ValueError("average_pool needs a non-empty (T, d) matrix")
    return mat.mean(axis=0)


def extract_utterance(signal, src_rate: float, cfg: MfccConfig) -> np.ndarray:
    """Full pipeline for one utterance: resample, MFCC, pool unless sequence_mode."""
    resampled = resample_to_16k(signal, src_rate)
    frames = compute_mfcc(resampled, cfg)
    if cfg.sequence_mode:
        return frames
    return average_pool(frames)


def read_wav(path) -> tuple[np.ndarray, int]:
    """Read 16-bit PCM WAV as float64 in [-1, 1); stereo is averaged to mono."""
    try:
        with wave.open(str(path), "rb") as handle:
            sampwidth = handle.getsampwidth()
            channels = handle.getnchannels()
            rate = handle.getframerate()
            raw = handle.readframes(handle.getnframes())
    except (wave.Error, EOFError, OSError) as exc:
        raise FeatureError(f"cannot read WAV file {path}: {exc}") from exc
    if sampwidth != 2:
        raise FeatureError(f"{path}: expected 16-bit PCM, got sample width {sampwidth}")
    if channels not in (1, 2):
        raise FeatureError(f"{path}: expected mono or stereo, got {channels} channels")
    data = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    if channels == 2:
        data = data.reshape(-1, 2).mean(axis=1)
    return data, rate


def _parse_cell(value: str, path, line: int) -> float:
    try:
        number = float(value)
    except ValueError as exc:
        raise FeatureError(f"{path}:{line}: non-numeric cell {value!r}") from exc
    if not np.isfinite(number):
        raise FeatureError(f"{path}:{line}: non-finite cell {value!r}")
    return number


def ingest_embeddings(csv_path, expected_dim: int) -> dict[str, FeatureVector]:
    """Load pooled features from a CSV with header ``id,f0,...,f{d-1}``."""
    path = Path(csv_path)
    expected_header = ["id"] + [f"f{i}" for i in range(expected_dim)]
    out: dict[str, FeatureVector] = {}
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None:
            raise FeatureError(f"{path}: empty features file")
        if header != expected_header:
            raise FeatureError(
                f"{path}: header has {len(header) - 1} feature columns, expected {expected_dim}"
            )
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != expected_dim + 1:
                raise FeatureError(
                    f"{path}:{line}: row {row[0]!r} has {len(row) - 1} values, "
                    f"expected {expected_dim}"
                )
            sample_id = row[0]
            if sample_id in out:
                raise FeatureError(f"{path}:{line}: duplicate id {sample_id!r}")
            values = np.array([_parse_cell(v, path, line) for v in row[1:]], dtype=np.float64)
            out[sample_id] = FeatureVector(values=values, provenance="precomputed")
    return out


def ingest_frame_embeddings(csv_path, expected_dim: int) -> dict[str, np.ndarray]:
    """Load frame sequences from a CSV with header ``id,frame,f0,...,f{d-1}``.

    Rows for an id must be contiguous with frame indices 0..T-1 in order.
    """
    path = Path(csv_path)
    expected_header = ["id", "frame"] + [f"f{i}" for i in range(expected_dim)]
    rows: dict[str, list[np.ndarray]] = {}
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header != expected_header:
            raise FeatureError(f"{path}: unexpected header for frame-sequence features")
        last_id = None
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != expected_dim + 2:
                raise FeatureError(
                    f"{path}:{line}: row {row[0]!r} has {len(row) - 2} values, "
                    f"expected {expected_dim}"
                )
            sample_id = row[0]
            if sample_id != last_id and sample_id in rows:
                raise FeatureError(f"{path}:{line}: frames for id {sample_id!r} are not contiguous")
            frame_idx = int(_parse_cell(row[1], path, line))
            frames = rows.setdefault(sample_id, [])
            if frame_idx != len(frames):
                raise FeatureError(
                    f"{path}:{line}: frame index {frame_idx} out of order for id {sample_id!r}"
                )
            frames.append(np.array([_parse_cell(v, path, line) for v in row[2:]], dtype=np.float64))
            last_id = sample_id
    return {sid: np.vstack(frames) for sid, frames in rows.items()}
