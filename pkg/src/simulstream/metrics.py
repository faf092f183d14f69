"""Translation quality (corpus BLEU) and latency (AL, AP, DAL) metrics.

Latency is measured in packets.  ``g[t-1]`` is the number of source packets
read before target token ``t`` was written; EOS and the language token are
never part of ``g`` or the target length.

BLEU tokenization is fixed: split on whitespace, then split a trailing run of
``.,!?;:`` off each token.  It is applied identically to hypotheses and
references.  Corpus BLEU is unsmoothed (any zero n-gram precision gives 0).
"""

from __future__ import annotations

import math
import re
import warnings
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import UndefinedMetricError

MAX_ORDER = 4
SENTENCE_SMOOTH_EPS = 0.1

_TRAILING_PUNCT = re.compile(r"^(.*?)([.,!?;:]+)$")


class LatencyWarning(UserWarning):
    pass


@dataclass(frozen=True)
class LatencyInput:
    g: tuple[int, ...]
    src_len: int
    tgt_len: int

    def __post_init__(self):
        object.__setattr__(self, "g", tuple(int(v) for v in self.g))
        if self.tgt_len < 1 or not self.g:
            raise UndefinedMetricError("latency is undefined for an empty hypothesis")
        if len(self.g) != self.tgt_len:
            raise ValueError(f"len(g)={len(self.g)} does not match tgt_len={self.tgt_len}")
        if self.src_len < 1:
            raise ValueError("src_len must be >= 1")
        prev = 0
        for v in self.g:
            if v < 1 or v > self.src_len:
                raise ValueError(f"g value {v} outside [1, {self.src_len}]")
            if v < prev:
                raise ValueError(f"g must be non-decreasing, got {self.g}")
            prev = v

    @classmethod
    def from_g(cls, g: Sequence[int], src_len: int) -> LatencyInput:
        return cls(tuple(g), src_len, len(g))

    def array(self) -> np.ndarray:
        return np.ascontiguousarray(self.g, dtype=np.int64)


def average_lagging(inp: LatencyInput) -> float:
    """AL: mean lag behind the ideal diagonal, up to the first full-source write.

    If no token was written with the whole source read, all tokens are used
    and a :class:`LatencyWarning` is issued.
    """
    if inp.g[-1] < inp.src_len:
        warnings.warn(f"g never reaches src_len={inp.src_len}; AL averages all tokens",
                      LatencyWarning, stacklevel=2)
    return kernels.backend.average_lagging(inp.array(), inp.src_len, inp.tgt_len)


def average_proportion(inp: LatencyInput) -> float:
    return kernels.backend.average_proportion(inp.array(), inp.src_len, inp.tgt_len)


def differentiable_average_lagging(inp: LatencyInput) -> float:
    return kernels.backend.differentiable_average_lagging(inp.array(), inp.src_len, inp.tgt_len)


def latency_scores(inp: LatencyInput) -> dict[str, float]:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", LatencyWarning)
        al = average_lagging(inp)
    return {"AL": al, "AP": average_proportion(inp), "DAL": differentiable_average_lagging(inp)}


def latency_many(inputs: Sequence[LatencyInput]) -> np.ndarray:
    """Rows of (AL, AP, DAL), one per input, computed by the batch kernel."""
    gs = [inp.array() for inp in inputs]
    src = np.array([inp.src_len for inp in inputs], dtype=np.int64)
    tgt = np.array([inp.tgt_len for inp in inputs], dtype=np.int64)
    return kernels.backend.latency_batch(gs, src, tgt)


# -- BLEU ---------------------------------------------------------------------

def bleu_tokenize(text: str) -> list[str]:
    out = []
    for tok in text.split():
        m = _TRAILING_PUNCT.match(tok)
        if m and m.group(1):
            out.extend((m.group(1), m.group(2)))
        else:
            out.append(tok)
    return out


def _tokens(item) -> list[str]:
    if isinstance(item, str):
        return bleu_tokenize(item)
    return bleu_tokenize(" ".join(item))


@dataclass
class BLEUStats:
    correct: list[int] = field(default_factory=lambda: [0] * MAX_ORDER)
    total: list[int] = field(default_factory=lambda: [0] * MAX_ORDER)
    sys_len: int = 0
    ref_len: int = 0

    def add(self, other: BLEUStats) -> None:
        for n in range(MAX_ORDER):
            self.correct[n] += other.correct[n]
            self.total[n] += other.total[n]
        self.sys_len += other.sys_len
        self.ref_len += other.ref_len

    @property
    def brevity_penalty(self) -> float:
        if self.sys_len == 0:
            return 0.0
        if self.sys_len >= self.ref_len:
            return 1.0
        return math.exp(1.0 - self.ref_len / self.sys_len)

    @property
    def precisions(self) -> list[float]:
        return [100.0 * c / t if t else 0.0 for c, t in zip(self.correct, self.total)]

    def score(self) -> float:
        if self.sys_len == 0 or min(self.correct) == 0:
            return 0.0
        log_p = sum(math.log(c / t) for c, t in zip(self.correct, self.total)) / MAX_ORDER
        return 100.0 * self.brevity_penalty * math.exp(log_p)

    def smoothed_score(self, eps: float = SENTENCE_SMOOTH_EPS) -> float:
        """Add-eps smoothed BLEU; diagnostics only, not comparable to corpus BLEU."""
        if self.sys_len == 0:
            return 0.0
        log_p = sum(math.log((c + eps) / (t + eps))
                    for c, t in zip(self.correct, self.total)) / MAX_ORDER
        return 100.0 * self.brevity_penalty * math.exp(log_p)

    def to_dict(self) -> dict:
        return {"correct": list(self.correct), "total": list(self.total),
                "sys_len": self.sys_len, "ref_len": self.ref_len,
                "brevity_penalty": self.brevity_penalty}


def sentence_stats(reference, hypothesis, vocab: dict[str, int] | None = None) -> BLEUStats:
    ref = _tokens(reference)
    hyp = _tokens(hypothesis)
    vocab = {} if vocab is None else vocab
    ids = [np.fromiter((vocab.setdefault(t, len(vocab)) for t in seq), dtype=np.int64,
                       count=len(seq)) for seq in (hyp, ref)]
    correct, total = kernels.backend.ngram_stats(ids[0], ids[1], MAX_ORDER)
    return BLEUStats(list(correct), list(total), len(hyp), len(ref))


def corpus_bleu_stats(references: Sequence, hypotheses: Sequence) -> BLEUStats:
    if len(references) != len(hypotheses):
        raise ValueError(f"{len(references)} references vs {len(hypotheses)} hypotheses")
    if not references:
        raise ValueError("corpus BLEU needs at least one sentence")
    stats = BLEUStats()
    vocab: dict[str, int] = {}
    for ref, hyp in zip(references, hypotheses):
        stats.add(sentence_stats(ref, hyp, vocab))
    return stats


def corpus_bleu(references: Sequence, hypotheses: Sequence) -> float:
    """Corpus BLEU-4 in [0, 100].  Items are token lists or raw strings."""
    return corpus_bleu_stats(references, hypotheses).score()


def sentence_bleu_smoothed(reference, hypothesis, eps: float = SENTENCE_SMOOTH_EPS) -> float:
    return sentence_stats(reference, hypothesis).smoothed_score(eps)
