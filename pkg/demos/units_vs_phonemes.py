"""How well do k-means units line up with the true phonemes of the toy corpus?

Builds a small synthetic corpus, clusters cepstral frames into units and
prints, for each unit, the phoneme it most often covers and how pure it is.
Run: python demos/units_vs_phonemes.py [out_dir]
"""

import sys
import tempfile
from collections import Counter
from pathlib import Path

from utts.alignment import assign_units, expand_phonemes, fit_codebook, fit_length, read_fa_file
from utts.features import cepstral_features, compute_mel, load_audio, load_manifest
from utts.frontend.lexicon import DEFAULT_SYMBOLS
from utts.toy import make_corpus


def main(out):
    corpus = make_corpus(out, n_speakers=8, n_test_speakers=2, utts_per_speaker=6, seed=1)
    manifest = load_manifest(corpus.manifest_path)
    mels = {e.utterance_id: compute_mel(load_audio(manifest.resolve(e.audio_path))) for e in manifest}
    feats = {u: cepstral_features(m) for u, m in mels.items()}
    cb = fit_codebook(list(feats.values()), K=24, rng=0)
    print(f"{len(mels)} utterances, {sum(len(m) for m in mels.values())} frames, "
          f"k-means converged in {len(cb.inertia_history)} iterations")

    pairs = Counter()
    for e in manifest:
        fa = expand_phonemes(read_fa_file(manifest.resolve(e.fa_path))).tokens
        ua = fit_length(assign_units(feats[e.utterance_id], cb), len(fa)).tokens
        pairs.update(zip(ua.tolist(), fa.tolist()))

    print("unit  frames  top phoneme  purity")
    total = hit = 0
    for unit in range(cb.K):
        row = {ph: n for (u, ph), n in pairs.items() if u == unit}
        if not row:
            continue
        ph, n = max(row.items(), key=lambda kv: kv[1])
        size = sum(row.values())
        total, hit = total + size, hit + n
        print(f"{unit:4d}  {size:6d}  {DEFAULT_SYMBOLS[ph]:>11}  {n / size:6.2f}")
    print(f"frame-weighted purity {hit / total:.3f}")


if __name__ == "__main__":
    main(Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp()))
