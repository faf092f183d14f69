# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled latency and n-gram kernels; see _pykernels for the reference versions."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


cpdef double average_lagging(const long long[::1] g, long long src_len, long long tgt_len):
    cdef Py_ssize_t t, n = g.shape[0], tau = n
    cdef double lam = <double>tgt_len / <double>src_len
    cdef double total = 0.0
    for t in range(n):
        if g[t] >= src_len:
            tau = t + 1
            break
    for t in range(tau):
        total += g[t] - t / lam
    return total / tau


cpdef double average_proportion(const long long[::1] g, long long src_len, long long tgt_len):
    cdef Py_ssize_t t, n = g.shape[0]
    cdef double total = 0.0
    for t in range(n):
        total += g[t]
    return total / (<double>src_len * <double>tgt_len)


cpdef double differentiable_average_lagging(const long long[::1] g, long long src_len,
                                            long long tgt_len):
    cdef Py_ssize_t t, n = g.shape[0]
    cdef double lam = <double>tgt_len / <double>src_len
    cdef double step = 1.0 / lam
    cdef double prev = 0.0, cur, total = 0.0
    for t in range(n):
        if t == 0:
            cur = g[0]
        else:
            cur = prev + step
            if g[t] > cur:
                cur = g[t]
        total += cur - t / lam
        prev = cur
    return total / n


def latency_batch(list gs, const long long[::1] src_lens, const long long[::1] tgt_lens):
    cdef Py_ssize_t i, n = len(gs)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.empty((n, 3), dtype=np.float64)
    cdef const long long[::1] g
    for i in range(n):
        g = gs[i]
        out[i, 0] = average_lagging(g, src_lens[i], tgt_lens[i])
        out[i, 1] = average_proportion(g, src_lens[i], tgt_lens[i])
        out[i, 2] = differentiable_average_lagging(g, src_lens[i], tgt_lens[i])
    return out


cdef inline bint _same(const long long[::1] a, Py_ssize_t i, const long long[::1] b,
                       Py_ssize_t j, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t m
    for m in range(n):
        if a[i + m] != b[j + m]:
            return False
    return True


def ngram_stats(const long long[::1] hyp, const long long[::1] ref, int max_n=4):
    """Clipped n-gram matches and hypothesis n-gram totals for n = 1..max_n."""
    cdef Py_ssize_t lh = hyp.shape[0], lr = ref.shape[0]
    cdef Py_ssize_t n, i, j, ch, cr
    cdef bint seen
    correct = [0] * max_n
    total = [0] * max_n
    cdef long long acc
    for n in range(1, max_n + 1):
        if lh < n:
            continue
        total[n - 1] = lh - n + 1
        acc = 0
        for i in range(lh - n + 1):
            seen = False
            for j in range(i):
                if _same(hyp, i, hyp, j, n):
                    seen = True
                    break
            if seen:
                continue
            ch = 1
            for j in range(i + 1, lh - n + 1):
                if _same(hyp, i, hyp, j, n):
                    ch += 1
            cr = 0
            for j in range(lr - n + 1):
                if _same(hyp, i, ref, j, n):
                    cr += 1
            acc += ch if ch < cr else cr
        correct[n - 1] = acc
    return correct, total
