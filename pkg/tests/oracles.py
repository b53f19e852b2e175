"""Slow, direct reference implementations used to check the fast code paths."""
import itertools

import numpy as np


def naive_centered_dft(a, inverse=False):
    """O(M^2) unitary DFT with the origin at index M//2, along the last axis."""
    a = np.asarray(a, dtype=complex)
    M = a.shape[-1]
    n = np.arange(M) - M // 2
    sign = 1 if inverse else -1
    W = np.exp(sign * 2j * np.pi * np.outer(n, n) / M) / np.sqrt(M)
    return a @ W.T


def naive_dft_2d(a, inverse=False):
    out = naive_centered_dft(a, inverse)
    return naive_centered_dft(out.T, inverse).T


def naive_spectrum(x):
    """|DFT| of a real 1D signal, plain summation."""
    x = np.asarray(x, dtype=float)
    M = x.size
    k = np.arange(M)
    return np.abs(np.array([np.sum(x * np.exp(-2j * np.pi * kk * k / M)) for kk in k]))


def naive_mtf_1d(image, truth, band=2, dc=1):
    """Contrast from plain DFT sums: peak within +-band of the truth's k0 over the DC neighbourhood."""
    Ft = naive_spectrum(truth)
    Fi = naive_spectrum(image)
    M = len(truth)
    k = np.arange(M)
    dist = np.minimum(k, M - k)
    peak = (Ft >= np.roll(Ft, 1)) & (Ft >= np.roll(Ft, -1))
    cand = (dist > dc + band) & peak
    k0 = dist[cand][np.argmax(Ft[cand])]
    num = Fi[np.abs(dist - k0) <= band].max()
    den = Fi[dist <= dc].max()
    return num / den, k0


def brute_postselect_sum(gamma, offsets):
    """Accumulate every in-window entry at the idler coordinate, one entry at a time."""
    M = gamma.shape[0]
    out = np.zeros(M)
    for i in range(M):
        for s in range(M):
            if i - s in offsets:
                out[i] += gamma[i, s]
    return out


def brute_matching(ta, tb, window):
    """Every maximum matching of A and B times within ``window``, as sets of (i, j)."""
    found = []
    na, nb = len(ta), len(tb)
    edges = [(i, j) for i in range(na) for j in range(nb) if abs(tb[j] - ta[i]) <= window]
    for r in range(min(na, nb), 0, -1):
        for combo in itertools.combinations(edges, r):
            if len({e[0] for e in combo}) == r and len({e[1] for e in combo}) == r:
                found.append(set(combo))
        if found:
            return found
    return [set()]


def direct_autocorrelation(phases):
    """Mean over rows of sum_x phi(x + d) phi(x), circular, for d = -M/2..M/2-1."""
    phases = np.asarray(phases, dtype=float)
    M = phases.shape[1]
    out = np.zeros(M)
    for k, d in enumerate(range(-M // 2, M // 2)):
        out[k] = np.mean(np.sum(np.roll(phases, -d, axis=1) * phases, axis=1))
    return out
