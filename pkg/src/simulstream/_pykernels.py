"""Pure-Python versions of the compiled kernels.

Both backends take int64 arrays (or sequences of ints) and must agree
bit-for-bit on the integer outputs and to rounding on the float ones.
"""

from __future__ import annotations

from collections import Counter

import numpy as np


def average_lagging(g, src_len: int, tgt_len: int) -> float:
    lam = tgt_len / src_len
    tau = len(g)
    for t, gt in enumerate(g):
        if gt >= src_len:
            tau = t + 1
            break
    total = 0.0
    for t in range(tau):
        total += g[t] - t / lam
    return total / tau


def average_proportion(g, src_len: int, tgt_len: int) -> float:
    total = 0.0
    for gt in g:
        total += gt
    return total / (src_len * tgt_len)


def differentiable_average_lagging(g, src_len: int, tgt_len: int) -> float:
    lam = tgt_len / src_len
    step = 1.0 / lam
    prev = 0.0
    total = 0.0
    for t, gt in enumerate(g):
        cur = float(gt) if t == 0 else max(float(gt), prev + step)
        total += cur - t / lam
        prev = cur
    return total / len(g)


def latency_batch(gs, src_lens, tgt_lens) -> np.ndarray:
    out = np.empty((len(gs), 3), dtype=np.float64)
    for i, g in enumerate(gs):
        s, y = int(src_lens[i]), int(tgt_lens[i])
        g = [int(v) for v in g]
        out[i] = (average_lagging(g, s, y), average_proportion(g, s, y),
                  differentiable_average_lagging(g, s, y))
    return out


def ngram_stats(hyp, ref, max_n: int = 4):
    hyp = [int(v) for v in hyp]
    ref = [int(v) for v in ref]
    correct = [0] * max_n
    total = [0] * max_n
    for n in range(1, max_n + 1):
        if len(hyp) < n:
            continue
        h = Counter(tuple(hyp[i:i + n]) for i in range(len(hyp) - n + 1))
        r = Counter(tuple(ref[i:i + n]) for i in range(len(ref) - n + 1))
        total[n - 1] = len(hyp) - n + 1
        correct[n - 1] = sum(min(c, r[gram]) for gram, c in h.items())
    return correct, total
