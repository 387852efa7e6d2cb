"""Synthetic two-factor speech corpus.

Speaker identity (pitch, vocal-tract scale, spectral tilt, a fixed timbre
resonance, breathiness, speaking rate) and content (phoneme sequence) are
drawn independently, so a model that
disentangles them can be checked without any real recordings.  Audio is
made by a source-filter synthesiser: an impulse train (voiced phones) or
white noise (fricatives) through a cascade of formant resonators.

Every phoneme lasts a whole number of mel hops, so the forced alignment
written next to each WAV is exactly frame-synchronous with its mel.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from .alignment import PhonemeDurations, write_fa_file
from .features import HOP_LENGTH, SAMPLE_RATE, DatasetManifest, ManifestEntry, Waveform, save_audio, save_manifest
from .frontend.lexicon import DEFAULT_SYMBOLS, Lexicon, write_symbols

# symbol -> (voiced, formants Hz, base duration in frames)
PHONES = {
    "AA1": (True, (730, 1090, 2440), 9),
    "IY1": (True, (270, 2290, 3010), 8),
    "UW1": (True, (300, 870, 2240), 8),
    "EH1": (True, (530, 1840, 2480), 7),
    "AE1": (True, (660, 1720, 2410), 9),
    "OW1": (True, (500, 700, 2500), 8),
    "M": (True, (250, 1100, 2300), 5),
    "N": (True, (250, 1700, 2600), 5),
    "L": (True, (360, 1300, 2800), 5),
    "S": (False, (5000, 6500, 7500), 6),
    "SH": (False, (2500, 3500, 5500), 6),
    "F": (False, (1500, 4000, 6800), 5),
}


@dataclass(frozen=True)
class Speaker:
    name: str
    f0: float
    tract: float  # formant scale
    tilt: float  # per-formant gain falloff
    rate: float  # duration multiplier
    timbre: float = 3000.0  # Hz, speaker resonance present in every phone
    breath: float = 0.02  # aspiration noise level in voiced phones

    @classmethod
    def random(cls, name, rng):
        return cls(name, f0=float(rng.uniform(80, 280)), tract=float(rng.uniform(0.8, 1.25)),
                   tilt=float(rng.uniform(0.3, 0.8)), rate=float(rng.uniform(0.7, 1.45)),
                   timbre=float(rng.uniform(1800, 5500)), breath=float(rng.uniform(0.01, 0.3)))


def _resonator(freq, bw):
    r = np.exp(-np.pi * bw / SAMPLE_RATE)
    theta = 2 * np.pi * freq / SAMPLE_RATE
    a = np.array([1.0, -2 * r * np.cos(theta), r * r])
    return np.array([a.sum()]), a  # unit gain at DC


def synthesize_phones(phones, durations, spk: Speaker, rng) -> np.ndarray:
    """Render phone symbols with frame durations to a 16 kHz waveform."""
    out = []
    phase = 0.0
    for sym, dur in zip(phones, durations):
        voiced, formants, _ = PHONES[sym]
        n = int(dur) * HOP_LENGTH
        if voiced:
            f0 = spk.f0 * (1 + 0.02 * rng.standard_normal())
            t = phase + np.arange(n) * f0 / SAMPLE_RATE
            src = (np.diff(np.floor(np.concatenate(([phase], t))), axis=0) > 0).astype(float) * 4.0
            phase = t[-1] % 1.0
            src += spk.breath * rng.standard_normal(n)
        else:
            src = 0.3 * rng.standard_normal(n)
        seg = np.zeros(n)
        for k, f in enumerate(formants):
            f = min(f * spk.tract, 0.45 * SAMPLE_RATE)
            b, a = _resonator(f, 60 + 0.06 * f)
            seg += (spk.tilt ** k) * lfilter(b * (f / 500.0), a, src)
        b, a = _resonator(spk.timbre, 120)
        seg += 0.5 * lfilter(b * (spk.timbre / 500.0), a, src)
        ramp = min(64, n // 4)
        if ramp:
            env = np.ones(n)
            env[:ramp] = np.linspace(0.2, 1, ramp)
            env[-ramp:] = np.linspace(1, 0.2, ramp)
            seg *= env
        out.append(seg)
    wav = np.concatenate(out)
    return (0.5 * wav / (np.abs(wav).max() + 1e-9)).astype(np.float32)


def make_word_list(n_words, rng, min_len=2, max_len=4):
    syms = list(PHONES)
    vowels = [s for s in syms if s[-1].isdigit()]
    words = {}
    while len(words) < n_words:
        L = int(rng.integers(min_len, max_len + 1))
        phones = [str(rng.choice(vowels)) if i % 2 else str(rng.choice(syms)) for i in range(L)]
        name = "".join(p.rstrip("012").lower()[:2] for p in phones)
        words.setdefault(name, phones)
    return words


@dataclass
class ToyCorpus:
    root: Path
    manifest_path: Path
    lexicon_path: Path
    symbols_path: Path
    train_speakers: list
    test_speakers: list


def make_corpus(root, n_speakers=12, n_test_speakers=4, utts_per_speaker=8, n_words=30,
                words_per_utt=(4, 7), seed=0) -> ToyCorpus:
    """Write WAVs, FA files, a JSON-lines manifest, lexicon and symbol table under ``root``.

    Utterance ids encode the speaker (``spkNN_MMM``); the last
    ``n_test_speakers`` speakers are held out.
    """
    root = Path(root)
    (root / "wav").mkdir(parents=True, exist_ok=True)
    (root / "fa").mkdir(exist_ok=True)
    rng = np.random.default_rng(seed)
    words = make_word_list(n_words, rng)
    lex = Lexicon({})
    for w, phones in words.items():
        lex.add(w, phones)
    sym_id = {s: i for i, s in enumerate(DEFAULT_SYMBOLS)}
    speakers = [Speaker.random(f"spk{i:02d}", rng) for i in range(n_speakers)]
    entries = []
    word_names = sorted(words)
    for spk in speakers:
        for u in range(utts_per_speaker):
            n = int(rng.integers(words_per_utt[0], words_per_utt[1] + 1))
            text = [str(w) for w in rng.choice(word_names, size=n)]
            phones = [p for w in text for p in words[w]]
            durs = [max(2, int(round(PHONES[p][2] * spk.rate * np.exp(0.1 * rng.standard_normal()))))
                    for p in phones]
            wav = synthesize_phones(phones, durs, spk, rng)
            uid = f"{spk.name}_{u:03d}"
            save_audio(root / "wav" / f"{uid}.wav", Waveform(wav))
            write_fa_file(root / "fa" / f"{uid}.txt", PhonemeDurations([sym_id[p] for p in phones], durs))
            entries.append(ManifestEntry(uid, spk.name, f"wav/{uid}.wav", fa_path=f"fa/{uid}.txt",
                                         transcript=" ".join(text)))
    manifest_path = root / "manifest.jsonl"
    save_manifest(manifest_path, DatasetManifest(entries))
    lex.write(root / "lexicon.txt")
    write_symbols(root / "symbols.txt")
    names = [s.name for s in speakers]
    return ToyCorpus(root, manifest_path, root / "lexicon.txt", root / "symbols.txt",
                     names[: n_speakers - n_test_speakers], names[n_speakers - n_test_speakers:])
