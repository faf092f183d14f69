"""Independent reference implementations used as test oracles.

These are written from the definitions directly and share no code with
the package.
"""

from __future__ import annotations

import math
from collections import Counter
from fractions import Fraction


def naive_waitk_g(k: int, src_len: int, n_tokens: int) -> list[int]:
    """Read one packet at a time; after each read, write one token once k are in.

    Leftover tokens are written at the end with the full source read.
    """
    g = []
    read = 0
    while read < src_len and len(g) < n_tokens:
        read += 1
        if read >= k:
            g.append(read)
    while len(g) < n_tokens:
        g.append(read)
    return g


def naive_async_writes(k_map: dict[str, int], src_len: int) -> list[tuple[int, str, int]]:
    """(packets read, lang, slot) for every pre-exhaustion write."""
    out = []
    counts = {lang: 0 for lang in k_map}
    for read in range(1, src_len + 1):
        for lang in sorted(k_map):
            if read >= k_map[lang]:
                counts[lang] += 1
                out.append((read, lang, counts[lang]))
    return out


def frac_al(g, src_len, tgt_len):
    lam = Fraction(tgt_len, src_len)
    tau = next((t for t, v in enumerate(g, 1) if v == src_len), len(g))
    return sum(Fraction(g[t - 1]) - Fraction(t - 1) / lam for t in range(1, tau + 1)) / tau


def frac_ap(g, src_len, tgt_len):
    return Fraction(sum(g), src_len * tgt_len)


def frac_dal(g, src_len, tgt_len):
    lam = Fraction(tgt_len, src_len)
    gp = []
    for t, v in enumerate(g, 1):
        gp.append(Fraction(v) if t == 1 else max(Fraction(v), gp[-1] + 1 / lam))
    return sum(gp[t - 1] - Fraction(t - 1) / lam for t in range(1, len(g) + 1)) / len(g), gp


def packet_code(frames) -> tuple[int, ...]:
    """Mean frame, 8 buckets per dimension, computed with plain floats."""
    rows = [list(map(float, r)) for r in frames]
    out = []
    for d in range(len(rows[0])):
        mean = sum(r[d] for r in rows) / len(rows)
        out.append(min(7, max(0, int(mean * 8 // 1))))
    return tuple(out)


def brute_count_scorer(train, k: int, eps: float, vocab_size: int, first_prev: int, eos: int):
    """Rebuild a count model from ``train`` and return ``nll(item, include_eos)``.

    ``train`` and each ``item`` are ``(packet frame arrays, target ids)``
    pairs.  Evaluation scans the training events linearly for every
    probability.
    """
    def positions(packets, ids):
        n = len(packets)
        for t, tok in enumerate(list(ids) + [eos], start=1):
            yield t, min(k + t - 1, n), tok

    codes = [[packet_code(f) for f in packets] for packets, _ in train]

    def events_for(ranking):
        out = []
        for i, (packets, ids) in enumerate(train):
            for t, g, tok in positions(packets, ids):
                offset = next((o for o in ranking if 1 <= t + o <= g), None)
                code = () if offset is None else codes[i][t + offset - 1]
                out.append(((offset, ids[t - 2] if t >= 2 else first_prev, code), tok))
        return out

    def fit(ranking):
        evs = events_for(ranking)
        ctx_n = Counter(ctx for ctx, _ in evs)
        pair_n = Counter(evs)
        return -sum(math.log((pair_n[e] + eps) / (ctx_n[e[0]] + eps * vocab_size)) for e in evs)

    entropy = {}
    for o in range(k):
        pairs = [(codes[i][t + o - 1], tok)
                 for i, (packets, ids) in enumerate(train)
                 for t, g, tok in positions(packets, ids) if t + o <= g]
        if not pairs:
            continue
        h = 0.0
        for c in sorted(set(p[0] for p in pairs)):
            toks = [tok for code, tok in pairs if code == c]
            for tok in sorted(set(toks)):
                n_tok = toks.count(tok)
                h -= n_tok * math.log(n_tok / len(toks))
        entropy[o] = round(h / len(pairs), 12)

    # same search as training: entropy order vs the previous winner extended
    ranking = []
    for size in range(1, k + 1):
        by_entropy = sorted((o for o in entropy if o < size), key=lambda o: (entropy[o], o))
        nested = ranking + [size - 1] if size - 1 in entropy else ranking
        if nested != by_entropy and round(fit(nested), 9) < round(fit(by_entropy), 9):
            ranking = nested
        else:
            ranking = by_entropy

    def context(pcodes, ids, t, g):
        offset = next((o for o in ranking if 1 <= t + o <= g), None)
        code = () if offset is None else pcodes[t + offset - 1]
        prev = ids[t - 2] if t >= 2 else first_prev
        return offset, prev, code

    events = []
    for i, (packets, ids) in enumerate(train):
        for t, g, tok in positions(packets, ids):
            events.append((context(codes[i], ids, t, g), tok))

    def nll(item, include_eos: bool) -> float:
        packets, ids = item
        pcodes = [packet_code(f) for f in packets]
        total = 0.0
        scored = list(positions(packets, ids))
        if not include_eos:
            scored = scored[:-1]
        for t, g, tok in scored:
            ctx = context(pcodes, ids, t, g)
            hits = [e_tok for e_ctx, e_tok in events if e_ctx == ctx]
            if not hits:
                hits = [e_tok for e_ctx, e_tok in events if (e_ctx[0], e_ctx[2]) == (ctx[0], ctx[2])]
            if not hits:
                p = 1.0 / vocab_size
            else:
                p = (hits.count(tok) + eps) / (len(hits) + eps * vocab_size)
            total -= math.log(p)
        return total

    return nll
