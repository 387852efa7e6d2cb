"""Audio ingestion, log-mel extraction, feature-matrix files and manifests.

Front-end constants: 16 kHz mono audio, 1024-sample (64 ms) Hann window,
256-sample (16 ms) hop, 80 mel bins, natural log of mel power clamped at
1e-5.  Frames are centred on ``t * hop`` and only frames whose centre lies
inside the signal are kept, so ``T == ceil(len(samples) / 256)``.

Feature-matrix container (``.ufm``), little endian::

    offset  size  field
    0       4     magic  b"UFMX"
    4       4     uint32 format version (1)
    8       4     uint32 rows
    12      4     uint32 cols
    16      8     float64 frame_rate (frames per second)
    24      4*r*c float32 payload, row-major
"""

from __future__ import annotations

import json
import math
import struct
import warnings
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ValidationError

SAMPLE_RATE = 16000
N_FFT = 1024
WIN_LENGTH = 1024
HOP_LENGTH = 256
N_MELS = 80
MEL_FLOOR = 1e-5
LOG_FLOOR = math.log(MEL_FLOOR)
FRAME_RATE = SAMPLE_RATE / HOP_LENGTH  # 62.5 fps
N_CEPS = 13

_UFM_MAGIC = b"UFMX"
_UFM_HEADER = struct.Struct("<4sIIId")
_UFM_VERSION = 1


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float32)
        if samples.ndim != 1:
            raise ValidationError(f"waveform must be 1-D, got shape {samples.shape}")
        if self.sample_rate <= 0:
            raise ValidationError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(samples)):
            raise ValidationError("waveform contains non-finite samples")
        object.__setattr__(self, "samples", samples)

    def __len__(self):
        return len(self.samples)

    @property
    def duration(self):
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class MelSpectrogram:
    frames: np.ndarray  # (T, 80) natural-log mel power
    hop: float = HOP_LENGTH / SAMPLE_RATE
    window: float = WIN_LENGTH / SAMPLE_RATE

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float32)
        if frames.ndim != 2 or frames.shape[1] != N_MELS:
            raise ValidationError(f"mel must be (T, {N_MELS}), got {frames.shape}")
        if frames.shape[0] < 1:
            raise ValidationError("mel must have at least one frame")
        if not np.all(np.isfinite(frames)):
            raise ValidationError("mel contains non-finite values")
        object.__setattr__(self, "frames", frames)

    def __len__(self):
        return self.frames.shape[0]


@dataclass(frozen=True)
class FeatureMatrix:
    frames: np.ndarray  # (T', D)
    frame_rate: float

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float32)
        if frames.ndim != 2:
            raise ValidationError(f"feature matrix must be 2-D, got {frames.shape}")
        if not self.frame_rate > 0:
            raise ValidationError(f"frame_rate must be positive, got {self.frame_rate}")
        if not np.all(np.isfinite(frames)):
            raise ValidationError("feature matrix contains non-finite values")
        object.__setattr__(self, "frames", frames)

    @property
    def shape(self):
        return self.frames.shape


# ---------------------------------------------------------------- audio


def load_audio(path) -> Waveform:
    """Read an audio file as 16 kHz mono, resampling when needed."""
    import soundfile as sf
    from scipy.signal import resample_poly

    path = Path(path)
    try:
        data, sr = sf.read(str(path), dtype="float64", always_2d=True)
    except Exception as exc:  # libsndfile raises its own error types
        raise OSError(f"cannot read audio file {path}: {exc}") from exc
    if data.shape[0] == 0:
        raise ValidationError(f"audio file {path} is empty")
    mono = data.mean(axis=1)
    if sr != SAMPLE_RATE:
        g = math.gcd(int(sr), SAMPLE_RATE)
        mono = resample_poly(mono, SAMPLE_RATE // g, int(sr) // g)
    return Waveform(mono, SAMPLE_RATE)


def save_audio(path, wav: Waveform):
    import soundfile as sf

    sf.write(str(path), wav.samples, wav.sample_rate, subtype="PCM_16")


# ---------------------------------------------------------------- mel


@lru_cache(maxsize=None)
def mel_filterbank() -> np.ndarray:
    """(80, 513) Slaney-normalised mel filterbank for the 16 kHz front-end."""
    import librosa

    fb = librosa.filters.mel(sr=SAMPLE_RATE, n_fft=N_FFT, n_mels=N_MELS, fmin=0.0, fmax=SAMPLE_RATE / 2)
    fb.setflags(write=False)
    return fb


def n_frames(n_samples: int) -> int:
    return -(-int(n_samples) // HOP_LENGTH)


def power_spectrogram(samples: np.ndarray) -> np.ndarray:
    """(513, T) power STFT with T = ceil(len / hop)."""
    import librosa

    x = np.asarray(samples, dtype=np.float64)
    with warnings.catch_warnings():
        # clips shorter than the window are fine: centre padding is zeros
        warnings.filterwarnings("ignore", message="n_fft=.*too large")
        spec = librosa.stft(x, n_fft=N_FFT, hop_length=HOP_LENGTH, win_length=WIN_LENGTH,
                            window="hann", center=True, pad_mode="constant")
    return np.abs(spec[:, : n_frames(len(x))]) ** 2


def compute_mel(wav: Waveform) -> MelSpectrogram:
    if wav.sample_rate != SAMPLE_RATE:
        raise ValidationError(f"compute_mel expects {SAMPLE_RATE} Hz audio, got {wav.sample_rate}")
    if len(wav) == 0:
        raise ValidationError("cannot compute mel of empty waveform")
    mel = mel_filterbank() @ power_spectrogram(wav.samples)
    return MelSpectrogram(np.log(np.maximum(mel, MEL_FLOOR)).T)


def cepstral_features(mel: MelSpectrogram, n_ceps: int = N_CEPS) -> FeatureMatrix:
    """Stand-in for SSL features: DCT-II cepstra of the log-mel, at the mel frame rate."""
    from scipy.fft import dct

    ceps = dct(mel.frames.astype(np.float64), type=2, axis=1, norm="ortho")[:, :n_ceps]
    return FeatureMatrix(ceps, FRAME_RATE)


@dataclass(frozen=True)
class Crop:
    mel: MelSpectrogram
    valid: np.ndarray  # (length,) bool, False on right padding
    start: int


def crop_segment(mel: MelSpectrogram, length: int, rng: np.random.Generator) -> Crop:
    """Random contiguous crop of ``length`` frames, right-padded with the log floor."""
    if length < 1:
        raise ValidationError("crop length must be >= 1")
    T = len(mel)
    if T >= length:
        start = int(rng.integers(0, T - length + 1))
        frames = mel.frames[start:start + length]
        valid = np.ones(length, dtype=bool)
    else:
        start = 0
        frames = np.full((length, N_MELS), LOG_FLOOR, dtype=np.float32)
        frames[:T] = mel.frames
        valid = np.arange(length) < T
    return Crop(MelSpectrogram(frames, mel.hop, mel.window), valid, start)


# ---------------------------------------------------------------- feature files


def save_feature_matrix(path, fm: FeatureMatrix):
    rows, cols = fm.frames.shape
    with open(path, "wb") as fh:
        fh.write(_UFM_HEADER.pack(_UFM_MAGIC, _UFM_VERSION, rows, cols, float(fm.frame_rate)))
        fh.write(np.ascontiguousarray(fm.frames, dtype="<f4").tobytes())


def load_feature_matrix(path) -> FeatureMatrix:
    blob = Path(path).read_bytes()
    if len(blob) < _UFM_HEADER.size:
        raise ValidationError(f"{path}: truncated feature header")
    magic, version, rows, cols, rate = _UFM_HEADER.unpack_from(blob)
    if magic != _UFM_MAGIC or version != _UFM_VERSION:
        raise ValidationError(f"{path}: not a version-{_UFM_VERSION} feature matrix")
    payload = blob[_UFM_HEADER.size:]
    if len(payload) != 4 * rows * cols:
        raise ValidationError(f"{path}: payload holds {len(payload)} bytes, header says {rows}x{cols}")
    frames = np.frombuffer(payload, dtype="<f4").reshape(rows, cols)
    return FeatureMatrix(frames.astype(np.float32), rate)


# ---------------------------------------------------------------- manifests


@dataclass
class ManifestEntry:
    utterance_id: str
    speaker_id: str
    audio_path: str
    fa_path: Optional[str] = None
    ssl_feature_path: Optional[str] = None
    transcript: Optional[str] = None


@dataclass
class DatasetManifest:
    entries: list = field(default_factory=list)
    root: Optional[Path] = None

    def __post_init__(self):
        seen = set()
        for e in self.entries:
            if e.utterance_id in seen:
                raise ValidationError(f"duplicate utterance id {e.utterance_id!r}")
            seen.add(e.utterance_id)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def resolve(self, rel) -> Optional[Path]:
        if rel is None:
            return None
        p = Path(rel)
        if not p.is_absolute() and self.root is not None:
            p = self.root / p
        return p

    def by_id(self):
        return {e.utterance_id: e for e in self.entries}

    def speakers(self):
        return sorted({e.speaker_id for e in self.entries})


def load_manifest(path, check_paths: bool = True) -> DatasetManifest:
    """Read a JSON-lines manifest; relative paths resolve against its directory."""
    path = Path(path)
    entries = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                rec = json.loads(line)
                entries.append(ManifestEntry(**rec))
            except (json.JSONDecodeError, TypeError) as exc:
                raise ValidationError(f"{path}:{lineno}: bad manifest record ({exc})") from exc
    manifest = DatasetManifest(entries, root=path.parent)
    if check_paths:
        for e in manifest:
            for attr in ("audio_path", "fa_path", "ssl_feature_path"):
                p = manifest.resolve(getattr(e, attr))
                if p is not None and not p.exists():
                    raise ValidationError(f"{e.utterance_id}: {attr} {p} does not exist")
    return manifest


def save_manifest(path, manifest: DatasetManifest):
    with open(path, "w") as fh:
        for e in manifest:
            rec = {k: v for k, v in asdict(e).items() if v is not None}
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
