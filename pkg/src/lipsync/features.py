"""Per-video-frame speech features for the animation network.

The production front end of choice would be a pretrained speech recognizer
emitting 29 character probabilities per frame. Here that role is filled by
a seeded surrogate: context-averaged MFCCs pushed through a fixed random
affine map and a softmax. Real recognizer output can be dropped in through
the ``EXTERNAL`` feature-file kind without code changes.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import CANONICAL_RATE, MfccFrames, load_wav, mfcc, resample
from .errors import FileFormatError, InsufficientFramesError

FEATURE_FPS = 60
CHAR_PROB_DIM = 29  # 26 letters + apostrophe + space + blank

FEATURE_MAGIC = b"LSF1"
_MAX_DIM = 2**32 - 1


class FeatureKind(enum.IntEnum):
    CHAR_PROB_SURROGATE = 0
    MFCC_RAW = 1
    EXTERNAL = 2


@dataclass(frozen=True)
class FeatureSequence:
    """T x D feature rows at a fixed animation frame rate."""

    data: np.ndarray
    fps: int = FEATURE_FPS
    kind: FeatureKind = FeatureKind.CHAR_PROB_SURROGATE

    @property
    def n_frames(self) -> int:
        return len(self.data)

    @property
    def dim(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class SurrogateProvider:
    """Fixed random projection standing in for a recognizer front end.

    ``context`` MFCC frames on each side are averaged before projection, a
    cheap nod to the temporal receptive field of the network it replaces.
    """

    projection: np.ndarray  # (mfcc_dim, out_dim)
    bias: np.ndarray  # (out_dim,)
    context: int = 2
    seed: int = 0

    @classmethod
    def seeded(
        cls,
        seed: int,
        mfcc_dim: int = 13,
        out_dim: int = CHAR_PROB_DIM,
        context: int = 2,
        logit_scale: float = 0.25,
    ):
        rng = np.random.default_rng(seed)
        # logit_scale trades softmax confidence against smoothness; 0.25 gives
        # confident rows that still move with the cepstral content.
        projection = rng.standard_normal((mfcc_dim, out_dim)) * logit_scale
        bias = rng.standard_normal(out_dim) * 0.1
        return cls(projection=projection, bias=bias, context=context, seed=seed)


def resample_features(
    data: np.ndarray,
    source_rate: float,
    target_fps: float = FEATURE_FPS,
    duration: float | None = None,
) -> np.ndarray:
    """Linear time interpolation of feature rows onto the target frame grid.

    Output row k is the source signal evaluated at time k / target_fps,
    clamped to the source's frame range, for k = 0 .. round(target_fps * T)-1
    where T defaults to n_rows / source_rate. Rows on the probability simplex
    stay on it: every output row is a convex combination of two inputs.
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or len(data) < 2:
        raise InsufficientFramesError("feature resampling needs at least two rows")
    if duration is None:
        duration = len(data) / source_rate
    n_out = int(round(target_fps * duration))
    times = np.arange(n_out) / target_fps
    pos = np.clip(times * source_rate, 0.0, len(data) - 1.0)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, len(data) - 1)
    frac = (pos - lo)[:, None]
    return (1.0 - frac) * data[lo] + frac * data[hi]


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _context_average(frames: np.ndarray, context: int) -> np.ndarray:
    if context <= 0:
        return frames
    n = len(frames)
    out = np.empty_like(frames)
    for i in range(n):
        lo = max(0, i - context)
        hi = min(n, i + context + 1)
        out[i] = frames[lo:hi].mean(axis=0)
    return out


def surrogate_features(m: MfccFrames, provider: SurrogateProvider) -> FeatureSequence:
    """Character-probability style rows from MFCCs, resampled to 60 fps."""
    if m.n_frames == 0:
        raise InsufficientFramesError("no MFCC frames to featurize")
    averaged = _context_average(np.asarray(m.frames, dtype=np.float64), provider.context)
    logits = averaged @ provider.projection + provider.bias
    simplex = _softmax_rows(logits)
    data = resample_features(simplex, m.frame_rate, FEATURE_FPS, duration=m.source_duration)
    return FeatureSequence(data=data, fps=FEATURE_FPS, kind=FeatureKind.CHAR_PROB_SURROGATE)


def mfcc_features(m: MfccFrames) -> FeatureSequence:
    """Raw 13-dim MFCC rows resampled to 60 fps (alternative feature path)."""
    data = resample_features(
        np.asarray(m.frames, dtype=np.float64), m.frame_rate, FEATURE_FPS, duration=m.source_duration
    )
    return FeatureSequence(data=data, fps=FEATURE_FPS, kind=FeatureKind.MFCC_RAW)


def features_from_wav(path, provider: SurrogateProvider) -> FeatureSequence:
    """Full front end: load WAV, resample to 16 kHz, MFCC, surrogate rows."""
    w = load_wav(path)
    if w.sample_rate != CANONICAL_RATE:
        w = resample(w, CANONICAL_RATE)
    return surrogate_features(mfcc(w), provider)


def save_features(f: FeatureSequence, path) -> None:
    """Write the LSF1 container: magic | u32 T | u32 D | u32 fps | u8 kind | f32 rows."""
    data = np.ascontiguousarray(f.data, dtype="<f4")
    t, d = data.shape
    if t > _MAX_DIM or d > _MAX_DIM:
        raise FileFormatError("feature array too large for container", path=str(path))
    header = FEATURE_MAGIC + struct.pack("<IIIB", t, d, int(f.fps), int(f.kind))
    Path(path).write_bytes(header + data.tobytes())


def load_features(path) -> FeatureSequence:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 17:
        raise FileFormatError("file too short for header", path=str(path), offset=0)
    if raw[:4] != FEATURE_MAGIC:
        raise FileFormatError("bad magic, expected LSF1", path=str(path), offset=0)
    t, d, fps, kind_code = struct.unpack_from("<IIIB", raw, 4)
    try:
        kind = FeatureKind(kind_code)
    except ValueError:
        raise FileFormatError(f"unknown feature kind {kind_code}", path=str(path), offset=16)
    expected = 17 + 4 * t * d
    if len(raw) != expected:
        raise FileFormatError(
            f"payload size mismatch: expected {expected} bytes, found {len(raw)}",
            path=str(path),
            offset=min(len(raw), expected),
        )
    data = np.frombuffer(raw[17:], dtype="<f4").reshape(t, d)
    return FeatureSequence(data=data, fps=int(fps), kind=kind)
