"""Generation: voice conversion, alignment-driven generation, text-to-speech, vocoding.

Text synthesis chains the stages
text -> phonemes -> log-durations -> FA -> UA -> mel -> waveform, and every
intermediate is kept in an :class:`ArtifactBundle`.

External vocoder protocol
-------------------------
Request body, little-endian::

    magic     4 bytes  b"UMEL"
    version   uint32   1
    frames    uint32   T
    mels      uint32   80
    hop       uint32   256      (samples)
    window    uint32   1024     (samples)
    rate      uint32   16000    (Hz)
    payload   T*80 float32, row-major natural-log mel power

Response body: a 16 kHz PCM16 mono WAV file.  Transports:

* ``http://host:port/path``  HTTP POST, ``Content-Type: application/octet-stream``
* ``pipe:<command>``         run ``<command>``, request on stdin, WAV on stdout

:mod:`utts.vocoder_service` is a reference server for both transports.
"""

from __future__ import annotations

import hashlib
import io
import json
import shlex
import struct
import subprocess
import threading
import urllib.error
import urllib.request
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import soundfile as sf
import torch

from .alignment import AlignmentSequence, PhonemeDurations, expand_phonemes
from .errors import StageError, ValidationError, VocoderError
from .features import (HOP_LENGTH, N_FFT, N_MELS, SAMPLE_RATE, WIN_LENGTH, MelSpectrogram, Waveform,
                       compute_mel, load_audio, mel_filterbank)
from .frontend.duration import durations_to_frames, predict_durations
from .frontend.fa2ua import fa2ua_predict
from .frontend.lexicon import text_to_phonemes

MEL_MAGIC = b"UMEL"
MEL_VERSION = 1
_MEL_HEADER = struct.Struct("<4sIIIIII")
GL_ITERATIONS = 60


# ---------------------------------------------------------------- vocoder boundary


def encode_mel_request(mel: MelSpectrogram) -> bytes:
    frames = np.ascontiguousarray(mel.frames, dtype="<f4")
    head = _MEL_HEADER.pack(MEL_MAGIC, MEL_VERSION, frames.shape[0], frames.shape[1],
                            HOP_LENGTH, WIN_LENGTH, SAMPLE_RATE)
    return head + frames.tobytes()


def decode_mel_request(blob: bytes) -> MelSpectrogram:
    if len(blob) < _MEL_HEADER.size:
        raise ValidationError("mel container shorter than its header")
    magic, version, rows, cols, hop, win, rate = _MEL_HEADER.unpack_from(blob)
    if magic != MEL_MAGIC or version != MEL_VERSION:
        raise ValidationError(f"not a version-{MEL_VERSION} mel container")
    if (cols, hop, win, rate) != (N_MELS, HOP_LENGTH, WIN_LENGTH, SAMPLE_RATE):
        raise ValidationError(f"unsupported mel layout cols={cols} hop={hop} win={win} rate={rate}")
    if len(blob) != _MEL_HEADER.size + rows * cols * 4:
        raise ValidationError("mel container payload size does not match its header")
    data = np.frombuffer(blob, dtype="<f4", offset=_MEL_HEADER.size).reshape(rows, cols)
    return MelSpectrogram(data.copy())


def wav_bytes(wav: Waveform) -> bytes:
    buf = io.BytesIO()
    sf.write(buf, wav.samples, wav.sample_rate, subtype="PCM_16", format="WAV")
    return buf.getvalue()


def wav_from_bytes(blob: bytes) -> Waveform:
    data, sr = sf.read(io.BytesIO(blob), dtype="float32", always_2d=True)
    return Waveform(data.mean(axis=1), sr)


@dataclass(frozen=True)
class VocoderHandle:
    """Exactly one backend: ``"internal"`` spectral inversion or an ``"external"`` service."""

    kind: str = "internal"
    iterations: int = GL_ITERATIONS
    endpoint: Optional[str] = None
    timeout: float = 30.0
    max_in_flight: int = 4

    def __post_init__(self):
        if self.kind == "internal":
            if self.endpoint is not None:
                raise ValidationError("internal vocoder takes no endpoint")
            if self.iterations < 1:
                raise ValidationError("iterations must be >= 1")
        elif self.kind == "external":
            if not self.endpoint or not self.endpoint.startswith(("http://", "https://", "pipe:")):
                raise ValidationError(f"external vocoder needs an http(s):// or pipe: endpoint, got {self.endpoint!r}")
            if self.timeout <= 0 or self.max_in_flight < 1:
                raise ValidationError("timeout must be > 0 and max_in_flight >= 1")
        else:
            raise ValidationError(f"unknown vocoder kind {self.kind!r}")

    @classmethod
    def internal(cls, iterations=GL_ITERATIONS):
        return cls("internal", iterations=iterations)

    @classmethod
    def external(cls, endpoint, timeout=30.0, max_in_flight=4):
        return cls("external", endpoint=endpoint, timeout=timeout, max_in_flight=max_in_flight)


_slots: dict = {}
_slots_lock = threading.Lock()


def _slot(v: VocoderHandle):
    with _slots_lock:
        key = (v.endpoint, v.max_in_flight)
        if key not in _slots:
            _slots[key] = threading.BoundedSemaphore(v.max_in_flight)
        return _slots[key]


def invert_mel(mel: MelSpectrogram, iterations: int = GL_ITERATIONS, seed: int = 0) -> np.ndarray:
    """Griffin-Lim phase reconstruction of a log-mel power spectrogram; ``T * 256`` samples."""
    import librosa

    power = np.exp(mel.frames.astype(np.float64)).T  # (80, T)
    lin = np.maximum(np.linalg.pinv(mel_filterbank().astype(np.float64)) @ power, 0.0)
    T = power.shape[1]
    # a centred STFT of T * hop samples has T + 1 frames; the mel keeps only the
    # first T, so repeat the last one to give Griffin-Lim a consistent grid
    lin = np.concatenate([lin, lin[:, -1:]], axis=1)
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message="n_fft=.*too large")
        y = librosa.griffinlim(np.sqrt(lin), n_iter=iterations, hop_length=HOP_LENGTH, win_length=WIN_LENGTH,
                               n_fft=N_FFT, center=True, length=T * HOP_LENGTH,
                               random_state=np.random.RandomState(seed))
    return y.astype(np.float32)


def _external(mel, v: VocoderHandle) -> Waveform:
    body = encode_mel_request(mel)
    with _slot(v):
        if v.endpoint.startswith("pipe:"):
            cmd = shlex.split(v.endpoint[len("pipe:"):])
            try:
                proc = subprocess.run(cmd, input=body, capture_output=True, timeout=v.timeout, check=False)
            except (OSError, subprocess.TimeoutExpired) as exc:
                raise VocoderError("external", f"{v.endpoint}: {exc}") from exc
            if proc.returncode != 0:
                raise VocoderError("external", f"{v.endpoint} exited {proc.returncode}: "
                                               f"{proc.stderr.decode(errors='replace').strip()}")
            reply = proc.stdout
        else:
            req = urllib.request.Request(v.endpoint, data=body, method="POST",
                                         headers={"Content-Type": "application/octet-stream"})
            try:
                with urllib.request.urlopen(req, timeout=v.timeout) as resp:
                    reply = resp.read()
            except (urllib.error.URLError, OSError) as exc:
                raise VocoderError("external", f"{v.endpoint}: {exc}") from exc
    try:
        wav = wav_from_bytes(reply)
    except Exception as exc:  # malformed reply
        raise VocoderError("external", f"{v.endpoint} returned no valid WAV: {exc}") from exc
    if wav.sample_rate != SAMPLE_RATE:
        raise VocoderError("external", f"{v.endpoint} returned {wav.sample_rate} Hz audio")
    return wav


def vocode(mel: MelSpectrogram, v: VocoderHandle = VocoderHandle(), seed: int = 0) -> Waveform:
    """Mel -> waveform through the selected backend; never falls back to the other one."""
    if v.kind == "internal":
        try:
            return Waveform(invert_mel(mel, v.iterations, seed))
        except Exception as exc:
            raise VocoderError("internal", str(exc)) from exc
    return _external(mel, v)


# ---------------------------------------------------------------- generation


def _mel_tensor(mel):
    frames = mel.frames if isinstance(mel, MelSpectrogram) else np.asarray(mel)
    return torch.as_tensor(frames)


def _speaker(model, tgt_mel, sample, generator):
    q_s, _ = model.posteriors(_mel_tensor(tgt_mel))
    if sample:
        return q_s.mean + q_s.std * torch.randn(q_s.mean.shape, generator=generator, dtype=q_s.mean.dtype)
    return q_s.mean


def _to_mel(x):
    return MelSpectrogram(x[0].detach().cpu().numpy())


@torch.no_grad()
def reconstruct(mel, model) -> MelSpectrogram:
    """Decode an utterance from its own posterior means."""
    model.eval()
    q_s, q_c = model.posteriors(_mel_tensor(mel))
    return _to_mel(model.decode(q_s.mean, q_c.mean))


@torch.no_grad()
def voice_convert(src_mel, tgt_mel, model, sample_speaker=False, generator=None) -> MelSpectrogram:
    """Content of ``src_mel`` in the voice of ``tgt_mel``; as long as the source.

    Posterior means are used unless ``sample_speaker`` draws ``z_s``.
    """
    model.eval()
    zs = _speaker(model, tgt_mel, sample_speaker, generator)
    _, q_c = model.posteriors(_mel_tensor(src_mel))
    return _to_mel(model.decode(zs, q_c.mean))


def _generator(rng):
    if isinstance(rng, torch.Generator):
        return rng
    return torch.Generator().manual_seed(int(rng))


@torch.no_grad()
def generate_from_alignment(a: AlignmentSequence, tgt_mel, model, rng=0, sample_speaker=False) -> MelSpectrogram:
    """Decode content sampled from the alignment-conditioned prior, in the voice of ``tgt_mel``.

    ``rng`` is a seed or a ``torch.Generator``; output length is ``len(a)``.
    """
    cfg = model.cfg
    if a.kind != cfg.alignment_kind:
        raise ValidationError(f"model is conditioned on {cfg.alignment_kind}, got {a.kind} alignment")
    if a.vocab_size != cfg.vocab_size:
        raise ValidationError(f"alignment vocab {a.vocab_size} does not match model vocab {cfg.vocab_size}")
    if len(a) == 0:
        raise ValidationError("empty alignment")
    model.eval()
    gen = _generator(rng)
    zs = _speaker(model, tgt_mel, sample_speaker, gen)
    p_c, _ = model.encode_prior(torch.tensor(a.tokens))
    zc = p_c.mean + p_c.std * torch.randn(p_c.mean.shape, generator=gen, dtype=p_c.mean.dtype)
    return _to_mel(model.decode(zs, zc))


# ---------------------------------------------------------------- text to speech


@dataclass(frozen=True)
class SynthesisRequest:
    text: str
    reference_audio: str
    duration_speaker: str = "random"  # speaker-pool id, or "random" (seeded pick)
    seed: int = 0
    sample_speaker: bool = False
    boundary: Optional[str] = None  # optional symbol inserted between words

    def __post_init__(self):
        if not Path(self.reference_audio).is_file():
            raise ValidationError(f"reference audio {self.reference_audio} not found")


@dataclass
class SynthesisModels:
    cdsvae: torch.nn.Module
    duration: torch.nn.Module
    fa2ua: torch.nn.Module
    lexicon: object
    speaker_pool: dict
    vocoder: VocoderHandle = field(default_factory=VocoderHandle)

    def __post_init__(self):
        if self.cdsvae.cfg.alignment_kind != "UA":
            raise ValidationError("text synthesis needs a UA-conditioned acoustic model")
        if self.cdsvae.cfg.n_units != self.fa2ua.cfg.n_units:
            raise ValidationError("FA2UA and acoustic model disagree on the number of units")
        if not self.speaker_pool:
            raise ValidationError("empty speaker pool")


def params_digest(module) -> str:
    h = hashlib.sha256()
    for name, t in sorted(module.state_dict().items()):
        h.update(name.encode())
        h.update(t.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


@dataclass
class ArtifactBundle:
    text: str
    phonemes: np.ndarray
    log_durations: np.ndarray
    durations: np.ndarray
    fa: np.ndarray
    ua: np.ndarray
    mel: np.ndarray
    waveform: np.ndarray
    config_hash: str

    def arrays(self):
        return {k: v for k, v in asdict(self).items() if isinstance(v, np.ndarray)}

    def digest(self) -> str:
        """SHA-256 over every field; equal digests mean bit-identical bundles."""
        h = hashlib.sha256(self.text.encode() + b"\0" + self.config_hash.encode())
        for k, v in sorted(self.arrays().items()):
            h.update(k.encode())
            h.update(str(v.dtype).encode() + str(v.shape).encode())
            h.update(np.ascontiguousarray(v).tobytes())
        return h.hexdigest()

    def save(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "wb") as fh:
            np.savez(fh, text=np.array(self.text), config_hash=np.array(self.config_hash), **self.arrays())
        return path

    @classmethod
    def load(cls, path):
        with np.load(path) as z:
            d = {k: z[k] for k in z.files}
        return cls(text=str(d.pop("text")), config_hash=str(d.pop("config_hash")), **d)


@dataclass
class SynthesisResult:
    waveform: Waveform
    bundle: ArtifactBundle


def request_hash(req: SynthesisRequest, models: SynthesisModels) -> str:
    blob = {
        "request": {**asdict(req), "reference_audio": hashlib.sha256(Path(req.reference_audio).read_bytes()).hexdigest()},
        "vocoder": asdict(models.vocoder),
        "models": [params_digest(m) for m in (models.cdsvae, models.duration, models.fa2ua)],
    }
    return hashlib.sha256(json.dumps(blob, sort_keys=True).encode()).hexdigest()


def _pick_speaker(req, pool):
    if req.duration_speaker == "random":
        keys = sorted(pool)
        return keys[int(np.random.default_rng(req.seed).integers(len(keys)))]
    if req.duration_speaker not in pool:
        raise ValidationError(f"speaker {req.duration_speaker!r} not in the speaker pool")
    return req.duration_speaker


def synthesize(req: SynthesisRequest, models: SynthesisModels) -> SynthesisResult:
    """Text to waveform in the voice of ``req.reference_audio``.

    Lexicon errors (empty text, out-of-vocabulary words) propagate as
    validation errors; any failure after that is re-raised as a
    :class:`StageError` tagged with the stage name.
    """
    ph = text_to_phonemes(req.text, models.lexicon, req.boundary)
    stage = "reference"
    try:
        ref = compute_mel(load_audio(req.reference_audio))
        stage = "duration"
        spk = models.speaker_pool[_pick_speaker(req, models.speaker_pool)]
        logdur = predict_durations(ph, spk, models.duration)
        frames = durations_to_frames(logdur)
        fa = expand_phonemes(PhonemeDurations(ph.ids, frames))
        stage = "fa2ua"
        ua = fa2ua_predict(fa, models.fa2ua)
        stage = "acoustic"
        mel = generate_from_alignment(ua, ref, models.cdsvae, req.seed, req.sample_speaker)
        stage = "vocode"
        wav = vocode(mel, models.vocoder, req.seed)
    except Exception as exc:
        raise StageError(stage, str(exc)) from exc
    bundle = ArtifactBundle(req.text, ph.ids, logdur, frames, fa.tokens, ua.tokens, mel.frames, wav.samples,
                            request_hash(req, models))
    return SynthesisResult(wav, bundle)
