"""PCM audio loading, sample-rate conversion, and MFCC extraction.

The front end is fixed to the conventional speech-recognition setup:
16 kHz mono input, 25 ms Hann windows with a 10 ms hop, 26 triangular
mel filters spanning 0-8000 Hz, and 13 cepstral coefficients.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.fft import dct

from .errors import AudioFormatError, EmptyInputError, UnsupportedAudioError

CANONICAL_RATE = 16_000
WINDOW_SECONDS = 0.025
HOP_SECONDS = 0.010
N_MEL_FILTERS = 26
N_CEPSTRA = 13
PREEMPHASIS = 0.97
NFFT = 512
LOG_FLOOR = 1e-10

# Windowed-sinc resampler: half-width in zero crossings of the cutoff-scaled
# sinc, and the Kaiser shape parameter.
_SINC_CROSSINGS = 16
_KAISER_BETA = 8.6


@dataclass(frozen=True)
class Waveform:
    """Mono audio samples normalized to [-1, 1]."""

    samples: np.ndarray
    sample_rate: int

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class MfccFrames:
    """Cepstral coefficients at a fixed frame rate.

    ``source_duration`` keeps the exact length of the originating clip in
    seconds; the frame grid alone underestimates it because only complete
    analysis windows produce frames.
    """

    frames: np.ndarray
    frame_rate: int
    source_duration: float
    config_fingerprint: str = field(default="", compare=False)

    @property
    def n_frames(self) -> int:
        return len(self.frames)


def load_wav(path) -> Waveform:
    """Read a 16-bit PCM RIFF/WAVE file; stereo is averaged down to mono."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 12 or raw[0:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise AudioFormatError("not a RIFF/WAVE file", path=str(path), offset=0)

    fmt_chunk = None
    data_chunk = None
    pos = 12
    while pos + 8 <= len(raw):
        chunk_id = raw[pos : pos + 4]
        (size,) = struct.unpack_from("<I", raw, pos + 4)
        body = raw[pos + 8 : pos + 8 + size]
        if len(body) < size:
            raise AudioFormatError("truncated chunk", path=str(path), offset=pos)
        if chunk_id == b"fmt ":
            fmt_chunk = body
        elif chunk_id == b"data":
            data_chunk = body
        pos += 8 + size + (size & 1)  # chunks are word-aligned

    if fmt_chunk is None or data_chunk is None:
        raise AudioFormatError("missing fmt or data chunk", path=str(path), offset=pos)
    if len(fmt_chunk) < 16:
        raise AudioFormatError("fmt chunk too short", path=str(path))

    audio_format, channels, rate, _, _, bits = struct.unpack_from("<HHIIHH", fmt_chunk)
    if audio_format != 1:
        raise UnsupportedAudioError(f"audio format {audio_format} is not PCM")
    if bits != 16:
        raise UnsupportedAudioError(f"{bits}-bit samples unsupported, expected 16")
    if channels < 1 or rate < 1:
        raise AudioFormatError("invalid channel count or sample rate", path=str(path))
    if len(data_chunk) == 0:
        raise EmptyInputError(f"{path}: data chunk holds no samples")

    frame_bytes = 2 * channels
    usable = len(data_chunk) - len(data_chunk) % frame_bytes
    ints = np.frombuffer(data_chunk[:usable], dtype="<i2")
    samples = ints.astype(np.float64) / 32768.0
    if channels > 1:
        samples = samples.reshape(-1, channels).mean(axis=1)
    return Waveform(samples=samples, sample_rate=int(rate))


def save_wav(w: Waveform, path) -> None:
    """Write a mono 16-bit PCM WAV file (samples clipped to [-1, 1])."""
    scaled = np.round(np.asarray(w.samples, dtype=np.float64) * 32768.0)
    ints = np.clip(scaled, -32768, 32767).astype("<i2")
    payload = ints.tobytes()
    rate = int(w.sample_rate)
    header = b"RIFF" + struct.pack("<I", 36 + len(payload)) + b"WAVE"
    header += b"fmt " + struct.pack("<IHHIIHH", 16, 1, 1, rate, rate * 2, 2, 16)
    header += b"data" + struct.pack("<I", len(payload))
    Path(path).write_bytes(header + payload)


def _kaiser_window(u: np.ndarray, beta: float) -> np.ndarray:
    # Continuous Kaiser window on u in [-1, 1], zero outside.
    inside = np.clip(1.0 - u * u, 0.0, None)
    return np.where(np.abs(u) <= 1.0, np.i0(beta * np.sqrt(inside)) / np.i0(beta), 0.0)


def resample(w: Waveform, target_rate: int) -> Waveform:
    """Band-limited sample-rate conversion with a Kaiser-windowed sinc kernel.

    The output has exactly round(n * target/source) samples, so duration is
    preserved to within one sample period. Downsampling low-passes at the
    target Nyquist to avoid aliasing into the mel bands.
    """
    if target_rate <= 0:
        raise ValueError("target_rate must be positive")
    if w.sample_rate == target_rate:
        return w

    x = np.asarray(w.samples, dtype=np.float64)
    n_in = len(x)
    ratio = target_rate / w.sample_rate
    n_out = int(round(n_in * ratio))
    cutoff = min(1.0, ratio)
    half = _SINC_CROSSINGS / cutoff
    n_taps = int(2 * half) + 2

    out = np.empty(n_out)
    offsets = np.arange(n_taps)
    for start in range(0, n_out, 8192):
        stop = min(start + 8192, n_out)
        centers = np.arange(start, stop) / ratio
        first = np.ceil(centers - half).astype(np.int64)
        idx = first[:, None] + offsets[None, :]
        delta = centers[:, None] - idx
        kernel = cutoff * np.sinc(cutoff * delta) * _kaiser_window(delta / half, _KAISER_BETA)
        valid = (idx >= 0) & (idx < n_in)
        gathered = np.where(valid, x[np.clip(idx, 0, n_in - 1)], 0.0)
        out[start:stop] = np.einsum("ij,ij->i", kernel, gathered)
    return Waveform(samples=out, sample_rate=int(target_rate))


def _mel_filterbank(n_filters: int, nfft: int, rate: int, f_lo: float, f_hi: float) -> np.ndarray:
    def to_mel(f):
        return 2595.0 * np.log10(1.0 + f / 700.0)

    def from_mel(m):
        return 700.0 * (10.0 ** (m / 2595.0) - 1.0)

    mel_points = np.linspace(to_mel(f_lo), to_mel(f_hi), n_filters + 2)
    bins = np.floor((nfft + 1) * from_mel(mel_points) / rate).astype(int)
    fbank = np.zeros((n_filters, nfft // 2 + 1))
    for j in range(n_filters):
        left, center, right = bins[j], bins[j + 1], bins[j + 2]
        for i in range(left, center):
            fbank[j, i] = (i - left) / max(center - left, 1)
        for i in range(center, right):
            fbank[j, i] = (right - i) / max(right - center, 1)
    return fbank


def _fingerprint() -> str:
    key = ";".join(
        [
            f"rate={CANONICAL_RATE}",
            f"window_s={WINDOW_SECONDS}",
            f"hop_s={HOP_SECONDS}",
            f"n_filters={N_MEL_FILTERS}",
            f"n_cepstra={N_CEPSTRA}",
            f"preemphasis={PREEMPHASIS}",
            f"nfft={NFFT}",
            f"log_floor={LOG_FLOOR}",
            "window=hann",
            "dct=ortho",
        ]
    )
    return hashlib.sha256(key.encode()).hexdigest()[:12]


MFCC_FINGERPRINT = _fingerprint()


def mfcc(w: Waveform) -> MfccFrames:
    """13 mel-frequency cepstral coefficients per 10 ms frame.

    Pipeline: pre-emphasis 0.97, 25 ms Hann window with 10 ms hop, power
    spectrum, 26 triangular mel filters over 0-8000 Hz, log with an absolute
    floor, then an orthonormal DCT-II keeping c0..c12. Only complete windows
    produce frames: T = floor((n - win) / hop) + 1.
    """
    if w.sample_rate != CANONICAL_RATE:
        raise ValueError(f"mfcc expects {CANONICAL_RATE} Hz input, got {w.sample_rate}")
    x = np.asarray(w.samples, dtype=np.float64)
    win = int(round(WINDOW_SECONDS * CANONICAL_RATE))
    hop = int(round(HOP_SECONDS * CANONICAL_RATE))
    if len(x) < win:
        raise EmptyInputError(f"audio shorter than one analysis window ({win} samples)")

    emphasized = np.concatenate(([x[0]], x[1:] - PREEMPHASIS * x[:-1]))
    frames = np.lib.stride_tricks.sliding_window_view(emphasized, win)[::hop]
    window = np.hanning(win)
    spectrum = np.fft.rfft(frames * window, n=NFFT)
    power = (spectrum.real**2 + spectrum.imag**2) / NFFT

    fbank = _mel_filterbank(N_MEL_FILTERS, NFFT, CANONICAL_RATE, 0.0, CANONICAL_RATE / 2.0)
    energies = power @ fbank.T
    log_energies = np.log(np.maximum(energies, LOG_FLOOR))
    coeffs = dct(log_energies, type=2, norm="ortho", axis=1)[:, :N_CEPSTRA]

    return MfccFrames(
        frames=coeffs,
        frame_rate=CANONICAL_RATE // hop,
        source_duration=w.duration,
        config_fingerprint=MFCC_FINGERPRINT,
    )
