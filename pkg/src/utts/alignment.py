"""Frame-level alignments: forced (phoneme) and unsupervised (k-means unit).

Token conventions
-----------------
FA: phone ids 0..71, ``FA_MASK = 72``, ``FA_PAD = 73`` (vocab 74).
UA: unit ids 0..K-1, mask symbol ``K`` (vocab K + 1).

Codebook container (``.ucb``), little endian: magic ``b"UCBK"``, uint32
version (1), uint32 K, uint32 D, then K*D float32 centroids row-major.

FA text files hold one ``<phoneme_id> <duration_frames>`` row per phoneme,
durations counted in mel frames (62.5 fps); ``#`` starts a comment.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .features import FeatureMatrix

N_PHONES = 72
FA_MASK = N_PHONES
FA_PAD = N_PHONES + 1
FA_VOCAB = N_PHONES + 2
DEFAULT_UNITS = 50

_UCB_HEADER = struct.Struct("<4sIII")


@dataclass(frozen=True)
class AlignmentSequence:
    tokens: np.ndarray
    kind: str  # "FA" or "UA"
    vocab_size: int

    def __post_init__(self):
        if self.kind not in ("FA", "UA"):
            raise ValidationError(f"alignment kind must be FA or UA, got {self.kind!r}")
        tokens = np.asarray(self.tokens, dtype=np.int64).reshape(-1)
        if tokens.size and (tokens.min() < 0 or tokens.max() >= self.vocab_size):
            raise ValidationError(f"{self.kind} token outside [0, {self.vocab_size})")
        tokens.setflags(write=False)
        object.__setattr__(self, "tokens", tokens)

    @classmethod
    def fa(cls, tokens):
        return cls(tokens, "FA", FA_VOCAB)

    @classmethod
    def ua(cls, tokens, n_units):
        return cls(tokens, "UA", n_units + 1)

    @property
    def n_units(self):
        """Number of real (predictable) classes, excluding mask/pad symbols."""
        return N_PHONES if self.kind == "FA" else self.vocab_size - 1

    @property
    def mask_id(self):
        return FA_MASK if self.kind == "FA" else self.vocab_size - 1

    def with_tokens(self, tokens):
        return AlignmentSequence(tokens, self.kind, self.vocab_size)

    def __len__(self):
        return self.tokens.size

    def __eq__(self, other):
        return (isinstance(other, AlignmentSequence) and self.kind == other.kind
                and self.vocab_size == other.vocab_size
                and np.array_equal(self.tokens, other.tokens))

    __hash__ = None


@dataclass(frozen=True)
class PhonemeDurations:
    phonemes: np.ndarray
    durations: np.ndarray

    def __post_init__(self):
        ph = np.asarray(self.phonemes, dtype=np.int64).reshape(-1)
        du = np.asarray(self.durations, dtype=np.int64).reshape(-1)
        if ph.shape != du.shape:
            raise ValidationError(f"{ph.size} phonemes but {du.size} durations")
        if du.size and du.min() < 1:
            raise ValidationError("durations must be >= 1 frame")
        object.__setattr__(self, "phonemes", ph)
        object.__setattr__(self, "durations", du)

    def __len__(self):
        return self.phonemes.size

    @property
    def total_frames(self):
        return int(self.durations.sum())


@dataclass
class Codebook:
    centroids: np.ndarray  # (K, D)
    inertia_history: list = field(default_factory=list, compare=False)

    def __post_init__(self):
        c = np.asarray(self.centroids, dtype=np.float64)
        if c.ndim != 2:
            raise ValidationError("centroids must be (K, D)")
        if not np.all(np.isfinite(c)):
            raise ValidationError("centroids must be finite")
        self.centroids = c

    @property
    def K(self):
        return self.centroids.shape[0]

    @property
    def feature_dim(self):
        return self.centroids.shape[1]


# ---------------------------------------------------------------- k-means++


def _frames(x):
    return x.frames if isinstance(x, FeatureMatrix) else np.asarray(x)


def _nearest(X, C, chunk=4096):
    """Squared distance to and index of the nearest centroid; ties -> lowest index."""
    labels = np.empty(len(X), dtype=np.int64)
    d2 = np.empty(len(X), dtype=np.float64)
    for s in range(0, len(X), chunk):
        diff = X[s:s + chunk, None, :] - C[None, :, :]
        dist = np.einsum("nkd,nkd->nk", diff, diff)
        labels[s:s + chunk] = dist.argmin(axis=1)
        d2[s:s + chunk] = dist[np.arange(len(dist)), labels[s:s + chunk]]
    return labels, d2


def _kmeanspp_init(X, K, rng):
    n = len(X)
    n_trials = 2 + int(math.log(K))
    centers = np.empty((K, X.shape[1]))
    centers[0] = X[rng.integers(n)]
    closest = ((X - centers[0]) ** 2).sum(axis=1)
    for k in range(1, K):
        pot = closest.sum()
        cands = np.searchsorted(np.cumsum(closest), rng.random(n_trials) * pot, side="right")
        cands = np.minimum(cands, n - 1)
        best, best_pot, best_closest = None, np.inf, None
        for c in cands:
            if closest[c] == 0.0:
                continue
            new_closest = np.minimum(closest, ((X - X[c]) ** 2).sum(axis=1))
            if new_closest.sum() < best_pot:
                best, best_pot, best_closest = c, new_closest.sum(), new_closest
        if best is None:  # every draw hit a chosen point; fall back to the farthest frame
            best = int(closest.argmax())
            best_closest = np.minimum(closest, ((X - X[best]) ** 2).sum(axis=1))
        centers[k] = X[best]
        closest = best_closest
    return centers


def fit_codebook(features, K: int = DEFAULT_UNITS, rng=0, max_iter: int = 300, tol: float = 1e-4) -> Codebook:
    """k-means++ seeding followed by Lloyd iterations.

    Stops when the relative inertia decrease drops below ``tol`` or after
    ``max_iter`` assignment steps.  ``inertia_history`` holds the inertia at
    every assignment step and is checked to be non-increasing.
    """
    if K < 2:
        raise ValidationError(f"K must be >= 2, got {K}")
    if isinstance(features, (FeatureMatrix, np.ndarray)):
        features = [features]
    X = np.concatenate([_frames(f) for f in features], axis=0).astype(np.float64)
    if len(np.unique(X, axis=0)) < K:
        raise ValidationError(f"fewer than K={K} distinct frames")
    rng = np.random.default_rng(rng)

    C = _kmeanspp_init(X, K, rng)
    history = []
    for _ in range(max_iter):
        labels, d2 = _nearest(X, C)
        inertia = float(d2.sum())
        if history and inertia > history[-1]:
            raise AssertionError(f"k-means inertia increased: {history[-1]} -> {inertia}")
        history.append(inertia)
        if len(history) > 1 and history[-2] - inertia <= tol * history[-2]:
            break
        counts = np.bincount(labels, minlength=K)
        sums = np.zeros_like(C)
        np.add.at(sums, labels, X)
        newC = sums / np.maximum(counts, 1)[:, None]
        empty = np.flatnonzero(counts == 0)
        if empty.size:
            far = np.argsort(-d2, kind="stable")[: empty.size]
            newC[empty] = X[far]
        C = newC
    return Codebook(C, history)


def assign_units(features, cb: Codebook) -> AlignmentSequence:
    X = _frames(features).astype(np.float64)
    if X.ndim != 2 or X.shape[1] != cb.feature_dim:
        raise ValidationError(f"feature dim {X.shape[-1]} does not match codebook dim {cb.feature_dim}")
    labels, _ = _nearest(X, cb.centroids)
    return AlignmentSequence.ua(labels, cb.K)


def save_codebook(path, cb: Codebook):
    with open(path, "wb") as fh:
        fh.write(_UCB_HEADER.pack(b"UCBK", 1, cb.K, cb.feature_dim))
        fh.write(np.ascontiguousarray(cb.centroids, dtype="<f4").tobytes())


def load_codebook(path) -> Codebook:
    blob = Path(path).read_bytes()
    magic, version, K, D = _UCB_HEADER.unpack_from(blob)
    if magic != b"UCBK" or version != 1:
        raise ValidationError(f"{path}: not a codebook file")
    payload = blob[_UCB_HEADER.size:]
    if len(payload) != 4 * K * D:
        raise ValidationError(f"{path}: codebook payload size mismatch")
    return Codebook(np.frombuffer(payload, dtype="<f4").reshape(K, D).astype(np.float64))


# ---------------------------------------------------------------- FA arithmetic


def expand_phonemes(pd: PhonemeDurations) -> AlignmentSequence:
    return AlignmentSequence.fa(np.repeat(pd.phonemes, pd.durations))


def durations_from_alignment(a: AlignmentSequence) -> PhonemeDurations:
    """Run-length encode a frame sequence into (phoneme, duration) pairs."""
    t = a.tokens
    if t.size == 0:
        raise ValidationError("cannot run-length encode an empty alignment")
    starts = np.flatnonzero(np.concatenate(([True], t[1:] != t[:-1])))
    lengths = np.diff(np.append(starts, t.size))
    return PhonemeDurations(t[starts], lengths)


def resample_alignment(a: AlignmentSequence, src_rate: float, dst_rate: float) -> AlignmentSequence:
    """Nearest-frame resampling between frame rates.

    Output length is ``floor(n * dst / src + 0.5)``; destination frame j takes
    source frame ``min(n - 1, floor(j * src / dst + 0.5))``.
    """
    if src_rate <= 0 or dst_rate <= 0:
        raise ValidationError("frame rates must be positive")
    n = len(a)
    if src_rate == dst_rate or n == 0:
        return a.with_tokens(a.tokens.copy())
    m = int(math.floor(n * dst_rate / src_rate + 0.5))
    idx = np.minimum(np.floor(np.arange(m) * (src_rate / dst_rate) + 0.5).astype(np.int64), n - 1)
    return a.with_tokens(a.tokens[idx])


def fit_length(a: AlignmentSequence, T: int, max_diff: int = 2) -> AlignmentSequence:
    """Trim or edge-pad ``a`` to exactly ``T`` frames.

    Absorbs the off-by-one frame counts that rate conversion and differing
    padding conventions produce; larger disagreements are an error.
    """
    n = len(a)
    if abs(n - T) > max_diff or n == 0:
        raise ValidationError(f"alignment has {n} frames, expected {T} (tolerance {max_diff})")
    if n >= T:
        return a.with_tokens(a.tokens[:T].copy())
    return a.with_tokens(np.concatenate([a.tokens, np.repeat(a.tokens[-1:], T - n)]))


def read_fa_file(path) -> PhonemeDurations:
    phonemes, durations = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ValidationError(f"{path}:{lineno}: expected '<phoneme_id> <frames>'")
            ph, du = int(parts[0]), int(parts[1])
            if not 0 <= ph < N_PHONES:
                raise ValidationError(f"{path}:{lineno}: phoneme id {ph} outside [0, {N_PHONES})")
            phonemes.append(ph)
            durations.append(du)
    return PhonemeDurations(phonemes, durations)


def write_fa_file(path, pd: PhonemeDurations):
    with open(path, "w") as fh:
        for ph, du in zip(pd.phonemes, pd.durations):
            fh.write(f"{ph} {du}\n")
