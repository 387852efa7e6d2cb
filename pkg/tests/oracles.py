"""Independent reference implementations used as test oracles."""

import math
from fractions import Fraction
from functools import lru_cache

import numpy as np
import torch


def central_fd(f, x, h=1e-4):
    """Central finite-difference gradient of scalar ``f`` at float64 tensor ``x``."""
    g = torch.zeros_like(x)
    flat, gflat = x.view(-1), g.view(-1)
    for i in range(flat.numel()):
        old = flat[i].item()
        flat[i] = old + h
        fp = float(f())
        flat[i] = old - h
        fm = float(f())
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b):
    return float((a - b).norm() / max(a.norm(), b.norm(), 1e-12))


def brute_force_eer(tar, non):
    """Exact-rational EER by enumerating every threshold, written independently of compute_eer."""
    tar, non = list(tar), list(non)
    thresholds = [-math.inf] + sorted(set(tar) | set(non)) + [math.inf]
    pts = []
    for t in thresholds:
        far = Fraction(sum(s >= t for s in non), len(non))
        frr = Fraction(sum(s < t for s in tar), len(tar))
        pts.append((far, frr))
    for (fa0, fr0), (fa1, fr1) in zip(pts, pts[1:]):
        if fr0 == fa0:
            return fa0
        if fr1 - fa1 > 0 > fr0 - fa0:
            d0, d1 = fr0 - fa0, fr1 - fa1
            lam = -d0 / (d1 - d0)
            return fa0 + lam * (fa1 - fa0)
    return pts[-1][0]


def levenshtein(a, b):
    """Memoised recursive edit distance, an independent oracle for the DP table."""
    @lru_cache(maxsize=None)
    def d(i, j):
        if i == 0 or j == 0:
            return i + j
        return min(d(i - 1, j) + 1, d(i, j - 1) + 1, d(i - 1, j - 1) + (a[i - 1] != b[j - 1]))
    return d(len(a), len(b))


def blobs(seed, k=4, n=60, dim=3, spread=0.3, sep=10.0):
    r = np.random.default_rng(seed)
    centers = r.normal(size=(k, dim)) * sep
    X = np.concatenate([c + spread * r.normal(size=(n, dim)) for c in centers])
    return X, np.repeat(np.arange(k), n)


def purity(labels, truth):
    hits = 0
    for c in np.unique(labels):
        hits += np.bincount(truth[labels == c]).max()
    return hits / len(truth)
