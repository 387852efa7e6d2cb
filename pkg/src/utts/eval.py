"""Objective evaluation: trial scoring and EER, phoneme probes, projections, CER/WER.

File formats (tab separated, one header line):

* trial list   ``utt_a  utt_b  is_target`` (is_target is 0 or 1)
* projection   ``id  label  x  y``
* score report ``metric  value  n``
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
import torch

from .errors import ValidationError
from .features import MelSpectrogram


@dataclass(frozen=True)
class Trial:
    utt_a: str
    utt_b: str
    is_target: bool


@dataclass
class ScoredTrials:
    scores: np.ndarray
    is_target: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.is_target = np.asarray(self.is_target, dtype=bool)
        if self.scores.shape != self.is_target.shape:
            raise ValidationError("scores and labels differ in length")
        if not np.all(np.isfinite(self.scores)):
            raise ValidationError("non-finite trial score")


# ---------------------------------------------------------------- embeddings


@torch.no_grad()
def embed_utterances(mels, model, which="speaker") -> dict:
    """Map utterance id -> 64-dim posterior mean.

    ``mels`` is an iterable of ``(utterance_id, MelSpectrogram)``.  Speaker
    embeddings are the speaker posterior mean; content embeddings are the
    content posterior means averaged over time.
    """
    if which not in ("speaker", "content"):
        raise ValidationError(f"which must be 'speaker' or 'content', got {which!r}")
    model.eval()
    out = {}
    for uid, mel in mels:
        if uid in out:
            raise ValidationError(f"duplicate utterance id {uid!r}")
        frames = mel.frames if isinstance(mel, MelSpectrogram) else mel
        q_s, q_c = model.posteriors(torch.as_tensor(np.asarray(frames)))
        g = q_s if which == "speaker" else q_c
        out[uid] = g.mean[0].mean(dim=0).double().numpy()
    return out


@torch.no_grad()
def content_frames(mel, model) -> np.ndarray:
    """Frame-level content posterior means, ``(T, 64)``."""
    model.eval()
    frames = mel.frames if isinstance(mel, MelSpectrogram) else mel
    _, q_c = model.posteriors(torch.as_tensor(np.asarray(frames)))
    return q_c.mean[0].double().numpy()


# ---------------------------------------------------------------- trials


def make_trials(speaker_of: dict, n_trials: int, seed: int = 0) -> list:
    """Balanced target / non-target trials over distinct utterance pairs."""
    rng = np.random.default_rng(seed)
    by_spk = {}
    for u, s in sorted(speaker_of.items()):
        by_spk.setdefault(s, []).append(u)
    target_pairs = [p for us in by_spk.values() for p in itertools.combinations(us, 2)]
    utts = sorted(speaker_of)
    if not target_pairs or len(by_spk) < 2:
        raise ValidationError("need at least two speakers and one speaker with two utterances")
    n_tar = n_trials // 2
    trials = []
    for i in rng.choice(len(target_pairs), size=n_tar, replace=n_tar > len(target_pairs)):
        a, b = target_pairs[i]
        trials.append(Trial(a, b, True))
    while len(trials) < n_trials:
        a, b = rng.choice(utts, size=2, replace=False)
        if speaker_of[a] != speaker_of[b]:
            trials.append(Trial(str(a), str(b), False))
    order = rng.permutation(len(trials))
    return [trials[i] for i in order]


def read_trials(path) -> list:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh, delimiter="\t"))
    if rows and rows[0][:3] == ["utt_a", "utt_b", "is_target"]:
        rows = rows[1:]
    trials = []
    for r in rows:
        if len(r) != 3 or r[2] not in ("0", "1"):
            raise ValidationError(f"{path}: bad trial row {r}")
        trials.append(Trial(r[0], r[1], r[2] == "1"))
    return trials


def write_trials(path, trials):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["utt_a", "utt_b", "is_target"])
        for t in trials:
            w.writerow([t.utt_a, t.utt_b, int(t.is_target)])


def cosine(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def score_trials(embeds: dict, trials) -> ScoredTrials:
    scores, labels = [], []
    for t in trials:
        for u in (t.utt_a, t.utt_b):
            if u not in embeds:
                raise ValidationError(f"no embedding for utterance {u!r}")
        scores.append(cosine(embeds[t.utt_a], embeds[t.utt_b]))
        labels.append(t.is_target)
    return ScoredTrials(np.array(scores), np.array(labels, dtype=bool))


def eer_from_counts(fa, fr, n_non, n_tar):
    """EER from per-threshold false-accept / false-reject counts.

    Thresholds must be ascending, so ``fr/n_tar - fa/n_non`` is
    non-decreasing.  Returns the rate at the first threshold where the two
    rates meet exactly, else the crossing of the straight segment joining
    the last threshold below and the first above.  Rates are exact
    rationals, so the result is the correctly rounded EER.
    """
    far = [Fraction(int(c), int(n_non)) for c in fa]
    frr = [Fraction(int(c), int(n_tar)) for c in fr]
    for i in range(len(far)):
        d = frr[i] - far[i]
        if d == 0:
            return float(far[i])
        if d > 0:
            d0 = frr[i - 1] - far[i - 1]
            t = -d0 / (d - d0)
            return float(far[i - 1] + t * (far[i] - far[i - 1]))
    raise AssertionError("rates never crossed")  # unreachable: last threshold has FRR=1, FAR=0


def compute_eer(st: ScoredTrials) -> float:
    """Equal error rate by sweeping the threshold over every distinct score.

    A trial is accepted when ``score >= threshold``.  The sweep starts below
    every score (FAR = 1, FRR = 0) and ends above every score (FAR = 0,
    FRR = 1).
    """
    tar = np.sort(st.scores[st.is_target])
    non = np.sort(st.scores[~st.is_target])
    if tar.size == 0 or non.size == 0:
        raise ValidationError("EER needs at least one target and one non-target trial")
    thr = np.unique(st.scores)
    fr = np.concatenate(([0], np.searchsorted(tar, thr, side="left"), [tar.size]))
    fa = np.concatenate(([non.size], non.size - np.searchsorted(non, thr, side="left"), [0]))
    return float(eer_from_counts(fa.tolist(), fr.tolist(), non.size, tar.size))


# ---------------------------------------------------------------- probes


def phoneme_probe(features, labels, split=0.2, seed=0, max_iter=3000) -> float:
    """Top-1 accuracy of a multinomial logistic-regression probe on frozen features.

    ``split`` is either the held-out fraction (random, seeded) or a pair of
    index arrays ``(train_idx, test_idx)``.
    """
    from sklearn.linear_model import LogisticRegression
    from sklearn.preprocessing import StandardScaler

    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    if X.ndim != 2 or len(X) != len(y):
        raise ValidationError(f"{len(X)} feature rows but {len(y)} labels")
    if isinstance(split, (float, int)):
        perm = np.random.default_rng(seed).permutation(len(X))
        n_test = max(1, int(round(split * len(X))))
        test_idx, train_idx = perm[:n_test], perm[n_test:]
    else:
        train_idx, test_idx = (np.asarray(s) for s in split)
    scaler = StandardScaler().fit(X[train_idx])
    clf = LogisticRegression(max_iter=max_iter, random_state=seed)
    clf.fit(scaler.transform(X[train_idx]), y[train_idx])
    return float((clf.predict(scaler.transform(X[test_idx])) == y[test_idx]).mean())


def export_projection(embeds, labels, path=None, method="tsne", perplexity=30.0, seed=0):
    """2-D coordinates for plotting; rows are ``(id, label, x, y)``.

    ``embeds`` is a dict id -> vector or an ``(N, D)`` array (ids 0..N-1).
    ``method`` is ``"tsne"`` or ``"pca"``.  Perplexity is capped below N/3.
    """
    if isinstance(embeds, dict):
        ids = list(embeds)
        X = np.stack([np.asarray(embeds[i], dtype=np.float64) for i in ids])
    else:
        X = np.asarray(embeds, dtype=np.float64)
        ids = [str(i) for i in range(len(X))]
    labels = [labels[i] for i in ids] if isinstance(labels, dict) else list(labels)
    if len(X) < 10:
        raise ValidationError(f"projection needs at least 10 embeddings, got {len(X)}")
    if len(labels) != len(X):
        raise ValidationError("one label per embedding required")
    if method == "tsne":
        from sklearn.manifold import TSNE
        perp = min(perplexity, (len(X) - 1) / 3.0)
        # PCA initialisation divides by the spread of the first component, which is zero
        # when every point coincides; the NaNs it yields crash the Barnes-Hut optimiser
        init = "random" if np.all(X == X[0]) else "pca"
        xy = TSNE(n_components=2, perplexity=perp, init=init, random_state=seed).fit_transform(X)
    elif method == "pca":
        Xc = X - X.mean(axis=0)
        _, _, vt = np.linalg.svd(Xc, full_matrices=False)
        xy = Xc @ vt[:2].T
        if xy.shape[1] < 2:
            xy = np.pad(xy, ((0, 0), (0, 2 - xy.shape[1])))
    else:
        raise ValidationError(f"unknown projection method {method!r}")
    xy = np.nan_to_num(xy)
    rows = [(str(i), str(l), float(x), float(y)) for i, l, (x, y) in zip(ids, labels, xy)]
    if path is not None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, delimiter="\t", lineterminator="\n")
            w.writerow(["id", "label", "x", "y"])
            w.writerows(rows)
    return rows


# ---------------------------------------------------------------- intelligibility


def edit_distance(ref, hyp) -> int:
    """Levenshtein distance between two token sequences (unit costs)."""
    ref, hyp = list(ref), list(hyp)
    prev = list(range(len(hyp) + 1))
    for i, r in enumerate(ref, 1):
        cur = [i] + [0] * len(hyp)
        for j, h in enumerate(hyp, 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (r != h))
        prev = cur
    return prev[-1]


def cer_wer(ref: str, hyp: str) -> dict:
    """Character and word error rates; characters include spaces, words split on whitespace."""
    if not ref or not ref.strip():
        raise ValidationError("reference transcript is empty")
    ref_c, hyp_c = " ".join(ref.split()), " ".join(hyp.split())
    ref_w, hyp_w = ref.split(), hyp.split()
    return {"cer": edit_distance(ref_c, hyp_c) / len(ref_c), "wer": edit_distance(ref_w, hyp_w) / len(ref_w)}


def write_report(path, rows):
    """Write ``(metric, value, n)`` rows."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["metric", "value", "n"])
        for metric, value, n in rows:
            w.writerow([metric, f"{value:.6g}" if isinstance(value, float) and math.isfinite(value) else value, n])


def read_report(path) -> dict:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh, delimiter="\t"))
    return {r["metric"]: (float(r["value"]), int(r["n"])) for r in rows}
