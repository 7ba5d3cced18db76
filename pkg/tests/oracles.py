"""Naive reference implementations used as independent test oracles.

Everything here is written the dumbest possible way (nested loops,
textbook DP) and stays independent of the library's vectorized paths.
"""

import numpy as np


def naive_conv2d(x, w, b, stride=(1, 1), pad=(0, 0)):
    c_out, c_in, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (pad[0], pad[0]), (pad[1], pad[1])))
    h2 = (xp.shape[1] - kh) // stride[0] + 1
    w2 = (xp.shape[2] - kw) // stride[1] + 1
    out = np.zeros((c_out, h2, w2), dtype=np.float64)
    for o in range(c_out):
        for i in range(h2):
            for j in range(w2):
                acc = float(b[o])
                for c in range(c_in):
                    for a in range(kh):
                        for bb in range(kw):
                            acc += w[o, c, a, bb] * xp[c, i * stride[0] + a,
                                                       j * stride[1] + bb]
                out[o, i, j] = acc
    return out


def naive_conv1d(x, w, b, stride=1, pad=0):
    c_out, c_in, k = w.shape
    xp = np.pad(x, ((0, 0), (pad, pad)))
    t2 = (xp.shape[1] - k) // stride + 1
    out = np.zeros((c_out, t2), dtype=np.float64)
    for o in range(c_out):
        for t in range(t2):
            acc = float(b[o])
            for c in range(c_in):
                for a in range(k):
                    acc += w[o, c, a] * xp[c, t * stride + a]
            out[o, t] = acc
    return out


def naive_maxpool2d(x, kh=2, kw=2):
    c, h, w = x.shape
    h2, w2 = h // kh, w // kw
    out = np.zeros((c, h2, w2), dtype=x.dtype)
    for ch in range(c):
        for i in range(h2):
            for j in range(w2):
                out[ch, i, j] = x[ch, kh * i : kh * i + kh,
                                  kw * j : kw * j + kw].max()
    return out


def naive_global_avgpool(x):
    return np.array([x[c].mean() for c in range(x.shape[0])], dtype=np.float64)


def naive_affine(x, w, b):
    out = np.zeros(w.shape[0], dtype=np.float64)
    for o in range(w.shape[0]):
        acc = float(b[o])
        for i in range(w.shape[1]):
            acc += w[o, i] * x[i]
        out[o] = acc
    return out


def levenshtein(a, b):
    """Plain rolling-array edit distance (total cost only)."""
    if len(a) > len(b):
        a, b = b, a
    prev = list(range(len(a) + 1))
    for j, tb in enumerate(b, 1):
        cur = [j]
        for i, ta in enumerate(a, 1):
            cur.append(min(prev[i] + 1, cur[-1] + 1, prev[i - 1] + (ta != tb)))
        prev = cur
    return prev[-1]


def naive_nll(logprobs, labels):
    """Mean per-frame negative log-likelihood, one label per frame."""
    total = 0.0
    for t, lab in enumerate(labels):
        total -= float(logprobs[t, int(lab)])
    return total / len(labels)


def dedupe(seq):
    """Merge adjacent equal items."""
    out = []
    for s in seq:
        if not out or out[-1] != s:
            out.append(s)
    return out


def nearest_fill(labels, blank):
    """Blank filling by scanning distances both ways; tie goes left."""
    labels = list(labels)
    n = len(labels)
    out = []
    for t in range(n):
        if labels[t] != blank:
            out.append(labels[t])
            continue
        dl = dr = None
        for d in range(1, n):
            if dl is None and t - d >= 0 and labels[t - d] != blank:
                dl = d
            if dr is None and t + d < n and labels[t + d] != blank:
                dr = d
            if dl is not None or dr is not None:
                break
        if dl is not None and (dr is None or dl <= dr):
            out.append(labels[t - dl])
        else:
            out.append(labels[t + dr])
    return out


def separated_uniform(rng, shape, margin=5e-3, lo=-1.0, hi=1.0):
    """Uniform draw resampled until no coordinate sits within *margin* of 0."""
    x = rng.uniform(lo, hi, size=shape)
    while np.any(np.abs(x) < margin):
        x = np.where(np.abs(x) < margin, rng.uniform(lo, hi, size=shape), x)
    return x
