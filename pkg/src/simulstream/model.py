"""Prefix-to-prefix token models and the wait-k training losses.

A model answers one question: given the first ``g`` source packets, the
decoder prefix and the target language, what is the distribution over the
vocabulary for the next token?  The decoder prefix of a *unified* model
starts with the language token; a *separate* model instead keeps one
parameter set per language and its prefix holds target tokens only.

``CountPrefixModel`` is a smoothed count model that can be trained at desk
scale.  Its context is (previous token, summary of one source packet).  The
packet is chosen at a fixed offset from the target position, and training
learns which offset is most predictive for each language.  Offsets are
limited to ``0..k-1``, the window a wait-k reader has available.
"""

from __future__ import annotations

import json
import math
import os
from collections import Counter
from collections.abc import Iterable, Mapping, Sequence
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .policy import g_of_t
from .stream import lang_token

PAD = "<pad>"
UNK = "<unk>"
EOS = "</s>"
PAD_ID, UNK_ID, EOS_ID = 0, 1, 2
DEFAULT_VOCAB_CAP = 8000
DEFAULT_EPSILON = 1e-3

SEPARATE = "separate"
UNIFIED = "unified"
VARIANTS = (SEPARATE, UNIFIED)

MODEL_FORMAT = "simulstream-count-model"
MODEL_VERSION = 1


class Vocabulary:
    """Shared token <-> id map with reserved ids for PAD, UNK, EOS and language tokens."""

    def __init__(self, tokens: Iterable[str], languages: Iterable[str]):
        self.languages = sorted(set(languages))
        reserved = [PAD, UNK, EOS, *(lang_token(lang) for lang in self.languages)]
        regular = sorted(set(tokens) - set(reserved))
        self.itos = reserved + regular
        self.stoi = {tok: i for i, tok in enumerate(self.itos)}
        self.n_reserved = len(reserved)
        self._emittable = np.ones(len(self.itos), dtype=bool)
        self._emittable[PAD_ID] = False
        self._emittable[3:self.n_reserved] = False

    @classmethod
    def build(cls, token_lists: Iterable[Sequence[str]], languages: Iterable[str],
              cap: int = DEFAULT_VOCAB_CAP) -> Vocabulary:
        languages = sorted(set(languages))
        counts = Counter(tok for toks in token_lists for tok in toks)
        room = cap - 3 - len(languages)
        if room < 0:
            raise ConfigError(f"vocabulary cap {cap} is smaller than the reserved tokens")
        if len(counts) > room:
            kept = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:room]
            counts = dict(kept)
        return cls(counts, languages)

    @classmethod
    def from_corpus(cls, corpus, languages: Iterable[str], cap: int = DEFAULT_VOCAB_CAP) -> Vocabulary:
        languages = sorted(set(languages))
        return cls.build((utt.references[lang] for utt in corpus for lang in languages),
                         languages, cap)

    def __len__(self) -> int:
        return len(self.itos)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.itos == other.itos

    def id(self, token: str) -> int:
        return self.stoi.get(token, UNK_ID)

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.stoi.get(tok, UNK_ID) for tok in tokens]

    def token(self, idx: int) -> str:
        return self.itos[idx]

    def lang_id(self, lang: str) -> int:
        try:
            return self.stoi[lang_token(lang)]
        except KeyError:
            raise ConfigError(f"language {lang!r} has no reserved token in this vocabulary") from None

    @property
    def emittable(self) -> np.ndarray:
        return self._emittable

    def to_dict(self) -> dict:
        return {"languages": self.languages, "tokens": self.itos[self.n_reserved:]}

    @classmethod
    def from_dict(cls, d: Mapping) -> Vocabulary:
        return cls(d["tokens"], d["languages"])


class PrefixModel:
    """Interface: ``distribution(packets, g, prefix, lang)`` -> probabilities over the vocabulary.

    ``prefix`` is the decoder input as ids.  Only ``packets[:g]`` may be
    consulted.
    """

    variant = "any"
    languages: frozenset[str] | None = None

    def __init__(self, vocab: Vocabulary):
        self.vocab = vocab

    def distribution(self, packets, g: int, prefix: Sequence[int], lang: str) -> np.ndarray:
        raise NotImplementedError

    def prob(self, packets, g, prefix, lang, token: int) -> float:
        return float(self.distribution(packets, g, prefix, lang)[token])

    def decoder_prefix(self, lang: str, ids: Sequence[int]) -> list[int]:
        if self.variant == UNIFIED:
            return [self.vocab.lang_id(lang), *ids]
        return list(ids)


class UniformModel(PrefixModel):
    def distribution(self, packets, g, prefix, lang):
        n = len(self.vocab)
        return np.full(n, 1.0 / n)


class OracleModel(PrefixModel):
    """Puts all mass on the reference token (EOS after the last one)."""

    def __init__(self, vocab: Vocabulary, references: Mapping[str, Sequence[str]]):
        super().__init__(vocab)
        self.references = {lang: vocab.encode(toks) for lang, toks in references.items()}

    def distribution(self, packets, g, prefix, lang):
        ref = self.references[lang]
        prefix = list(prefix)
        if prefix and prefix[0] == self.vocab.stoi.get(lang_token(lang)):
            prefix = prefix[1:]
        t = len(prefix)
        out = np.zeros(len(self.vocab))
        out[ref[t] if t < len(ref) else EOS_ID] = 1.0
        return out


# -- count model ---------------------------------------------------------------

class _CountTable:
    """Counts for one decoder parameter set.

    Keys start with a language id (unified) or ``None`` (separate).  A source
    offset of ``None`` marks contexts with no usable packet; their code is
    ``b""``.
    """

    def __init__(self):
        self.ranking: dict[int | None, list[int]] = {}
        self.full: dict[tuple, Counter] = {}
        self.back: dict[tuple, Counter] = {}

    def pick_offset(self, lang_key, t: int, g: int) -> int | None:
        for o in self.ranking.get(lang_key, ()):
            if 1 <= t + o <= g:
                return o
        return None

    def to_dict(self) -> dict:
        def dump(table):
            rows = []
            for key, counts in table.items():
                *head, code = key
                rows.append([*head, code.hex(), sorted(counts.items())])
            rows.sort(key=lambda r: [-1 if v is None else v for v in r[:-1]])
            return rows

        return {
            "ranking": sorted(([lk, offs] for lk, offs in self.ranking.items()),
                              key=lambda r: -1 if r[0] is None else r[0]),
            "full": dump(self.full),
            "back": dump(self.back),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> _CountTable:
        table = cls()
        table.ranking = {lk: list(offs) for lk, offs in d["ranking"]}
        for name in ("full", "back"):
            target = getattr(table, name)
            for row in d[name]:
                *head, code_hex, counts = row
                target[(*head, bytes.fromhex(code_hex))] = Counter({int(t): int(c) for t, c in counts})
        return table


def _entropy(stats: Mapping[bytes, Counter]) -> tuple[float, int]:
    total = 0
    h = 0.0
    for counts in stats.values():
        n = sum(counts.values())
        total += n
        for c in counts.values():
            h -= c * math.log(c / n)
    return (h / total if total else math.inf), total


def _fit_nll(rows, ranking: list[int], first: int, epsilon: float, n_vocab: int) -> float:
    """Smoothed training NLL of one language's counts under ``ranking``.

    Offset ``o`` is usable at position ``t`` iff ``t + o <= src_len`` for any
    k above ``o``, so the schedule enters only through the ranking itself.
    """
    counts: dict[tuple, Counter] = {}
    for packets, ids in rows:
        n = len(packets)
        for t, tok in enumerate([*ids, EOS_ID], start=1):
            offset = next((o for o in ranking if t + o <= n), None)
            code = b"" if offset is None else packets[t + offset - 1].summary
            prev = ids[t - 2] if t >= 2 else first
            counts.setdefault((offset, prev, code), Counter())[tok] += 1
    total = 0.0
    for ctr in counts.values():
        denom = sum(ctr.values()) + epsilon * n_vocab
        for c in ctr.values():
            total -= c * math.log((c + epsilon) / denom)
    return total


def _search_ranking(rows, k: int, first: int, epsilon: float, n_vocab: int) -> list[int]:
    """Offset preference order for one language.

    For each window size up to ``k`` two candidates compete on training NLL:
    offsets sorted by the conditional entropy of the target given the packet
    summary, and the previous winner with the newly reachable offset
    appended.  The second candidate refines the previous winner's contexts,
    so the fit never gets worse as ``k`` grows.
    """
    stats: dict[int, dict[bytes, Counter]] = {o: {} for o in range(k)}
    for packets, ids in rows:
        for t, tok in enumerate([*ids, EOS_ID], start=1):
            for o in range(k):
                if t + o <= len(packets):
                    stats[o].setdefault(packets[t + o - 1].summary, Counter())[tok] += 1
    entropy = {}
    for o, s in stats.items():
        h, n = _entropy(s)
        if n:
            entropy[o] = round(h, 12)
    best: list[int] = []
    for size in range(1, k + 1):
        candidates = [sorted((o for o in entropy if o < size), key=lambda o: (entropy[o], o))]
        nested = best + [size - 1] if size - 1 in entropy else best
        if nested != candidates[0]:
            candidates.append(nested)
        scored = [(round(_fit_nll(rows, c, first, epsilon, n_vocab), 9), i) for i, c in enumerate(candidates)]
        best = candidates[min(scored)[1]]
    return best


def _positions(utt, ids: Sequence[int], k: int):
    """(t, g, target id) for every target position including the final EOS."""
    src_len = len(utt.stream)
    for t, tok in enumerate([*ids, EOS_ID], start=1):
        yield t, g_of_t(k, t, src_len), tok


class CountPrefixModel(PrefixModel):
    def __init__(self, vocab: Vocabulary, variant: str, k_map: Mapping[str, int],
                 epsilon: float = DEFAULT_EPSILON, tables: Mapping[str | None, _CountTable] | None = None):
        super().__init__(vocab)
        if variant not in VARIANTS:
            raise ConfigError(f"unknown model variant {variant!r}")
        if epsilon < 0:
            raise ConfigError("smoothing epsilon must be non-negative")
        self.variant = variant
        self.k_map = dict(sorted(k_map.items()))
        self.epsilon = float(epsilon)
        self.languages = frozenset(self.k_map)
        self.tables = dict(tables or {})
        self._cache: dict[tuple, np.ndarray] = {}

    def _table(self, lang: str) -> tuple[_CountTable, int | None]:
        if lang not in self.languages:
            raise ConfigError(f"model was not trained for language {lang!r}")
        if self.variant == UNIFIED:
            return self.tables[None], self.vocab.lang_id(lang)
        return self.tables[lang], None

    def context(self, packets, g: int, prefix: Sequence[int], lang: str):
        """The (table, full key, backoff key) used to predict the next token."""
        table, lang_key = self._table(lang)
        prefix = list(prefix)
        if self.variant == UNIFIED:
            if not prefix or prefix[0] != lang_key:
                raise ConfigError("unified model expects the language token at the start of the prefix")
            t = len(prefix)
        else:
            t = len(prefix) + 1
        prev = prefix[-1] if prefix else PAD_ID
        g = min(g, len(packets))
        offset = table.pick_offset(lang_key, t, g)
        code = b"" if offset is None else packets[t + offset - 1].summary
        return table, (lang_key, offset, prev, code), (lang_key, offset, code)

    def distribution(self, packets, g, prefix, lang):
        table, full_key, back_key = self.context(packets, g, prefix, lang)
        cache_key = (lang, full_key)
        cached = self._cache.get(cache_key)
        if cached is not None:
            return cached
        counts = table.full.get(full_key) or table.back.get(back_key)
        n = len(self.vocab)
        if not counts:
            out = np.full(n, 1.0 / n)
        else:
            out = np.full(n, self.epsilon)
            for tok, c in counts.items():
                out[tok] += c
            out /= sum(counts.values()) + self.epsilon * n
        out.flags.writeable = False
        self._cache[cache_key] = out
        return out

    # -- serialization --

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "variant": self.variant,
            "epsilon": self.epsilon,
            "k": self.k_map,
            "vocab": self.vocab.to_dict(),
            "tables": [[name, table.to_dict()] for name, table in
                       sorted(self.tables.items(), key=lambda kv: kv[0] or "")],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> CountPrefixModel:
        if d.get("format") != MODEL_FORMAT or d.get("version") != MODEL_VERSION:
            raise DataError(f"not a {MODEL_FORMAT} v{MODEL_VERSION} file")
        tables = {name: _CountTable.from_dict(t) for name, t in d["tables"]}
        return cls(Vocabulary.from_dict(d["vocab"]), d["variant"], d["k"], d["epsilon"], tables)

    def save(self, path: str | os.PathLike) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")) + "\n",
                              encoding="utf-8")

    @classmethod
    def load(cls, path: str | os.PathLike) -> CountPrefixModel:
        try:
            return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
        except (OSError, ValueError, KeyError) as exc:
            raise DataError(f"cannot load model {path}: {exc}") from exc


def train_count_model(corpus: Sequence, variant: str, k_map: Mapping[str, int],
                      epsilon: float = DEFAULT_EPSILON, vocab: Vocabulary | None = None) -> CountPrefixModel:
    """Maximum-likelihood counts under each language's wait-k schedule.

    Pass one picks a source offset preference order per language (see
    ``_search_ranking``).  Pass two counts every target position, EOS
    included, under the first offset in that order the position can reach.
    """
    if not corpus:
        raise DataError("cannot train on an empty corpus")
    if variant not in VARIANTS:
        raise ConfigError(f"unknown model variant {variant!r}")
    for lang, k in k_map.items():
        if not isinstance(k, int) or k < 1:
            raise ConfigError(f"k for {lang!r} must be a positive integer")
    languages = sorted(k_map)
    if vocab is None:
        vocab = Vocabulary.from_corpus(corpus, languages)

    if variant == UNIFIED:
        shared = _CountTable()
        tables = {None: shared}
        slots = {lang: (shared, vocab.lang_id(lang)) for lang in languages}
    else:
        tables = {lang: _CountTable() for lang in languages}
        slots = {lang: (tables[lang], None) for lang in languages}

    encoded = [(utt, {lang: vocab.encode(utt.references[lang]) for lang in languages})
               for utt in corpus]

    for lang in languages:
        table, lang_key = slots[lang]
        first = lang_key if variant == UNIFIED else PAD_ID
        table.ranking[lang_key] = _search_ranking(
            [(utt.stream.packets, refs[lang]) for utt, refs in encoded], k_map[lang], first,
            epsilon, len(vocab))

    for lang in languages:
        table, lang_key = slots[lang]
        k = k_map[lang]
        for utt, refs in encoded:
            packets = utt.stream.packets
            ids = refs[lang]
            for t, g, tok in _positions(utt, ids, k):
                offset = table.pick_offset(lang_key, t, g)
                code = b"" if offset is None else packets[t + offset - 1].summary
                prev = ids[t - 2] if t >= 2 else (lang_key if variant == UNIFIED else PAD_ID)
                table.full.setdefault((lang_key, offset, prev, code), Counter())[tok] += 1
                table.back.setdefault((lang_key, offset, code), Counter())[tok] += 1

    return CountPrefixModel(vocab, variant, k_map, epsilon, tables)


# -- losses --------------------------------------------------------------------

def _packets(x):
    return x.packets if hasattr(x, "packets") else list(x)


def _sequence_nll(model: PrefixModel, x, ids: list[int], start: list[int], k: int, lang: str) -> float:
    if not isinstance(k, int) or k < 1:
        raise ConfigError(f"k must be a positive integer, got {k!r}")
    packets = _packets(x)
    src_len = len(packets)
    if src_len < 1:
        raise ConfigError("cannot score against an empty source stream")
    total = 0.0
    for t, tok in enumerate(ids, start=1):
        p = model.distribution(packets, g_of_t(k, t, src_len), start + ids[:t - 1], lang)[tok]
        total += -math.log(p) if p > 0 else math.inf
    return total


def prefix_nll(model: PrefixModel, x, y: Sequence[str], k: int, lang: str, *,
               include_eos: bool = False) -> float:
    """Sum over target tokens of -log p(y_t | y_<t, first g(t) packets)."""
    if not y:
        raise ValueError("target sequence must be non-empty")
    ids = model.vocab.encode(y) + ([EOS_ID] if include_eos else [])
    return _sequence_nll(model, x, ids, [], k, lang)


def unified_nll(model: PrefixModel, x, y: Sequence[str], k: int, lang: str, *,
                include_eos: bool = False) -> float:
    """As :func:`prefix_nll`, with the language token prepended as conditioning only."""
    if not y:
        raise ValueError("target sequence must be non-empty")
    ids = model.vocab.encode(y) + ([EOS_ID] if include_eos else [])
    return _sequence_nll(model, x, ids, [model.vocab.lang_id(lang)], k, lang)


def _loss_for(model: PrefixModel):
    return unified_nll if model.variant == UNIFIED else prefix_nll


def _resolve(models, lang: str) -> PrefixModel:
    if isinstance(models, Mapping):
        try:
            return models[lang]
        except KeyError:
            raise ConfigError(f"no model for language {lang!r}") from None
    if models.languages is not None and lang not in models.languages:
        raise ConfigError(f"model does not cover language {lang!r}")
    return models


def joint_sync_loss(models, x, y_map: Mapping[str, Sequence[str]], k: int, *,
                    include_eos: bool = False) -> float:
    return joint_async_loss(models, x, y_map, {lang: k for lang in y_map}, include_eos=include_eos)


def joint_async_loss(models, x, y_map: Mapping[str, Sequence[str]], k_map: Mapping[str, int], *,
                     include_eos: bool = False) -> float:
    """Sum of per-language prefix losses, each language under its own k."""
    if set(k_map) != set(y_map):
        raise ConfigError(f"k languages {sorted(k_map)} do not match targets {sorted(y_map)}")
    if isinstance(models, Mapping) and set(models) != set(y_map):
        raise ConfigError(f"model languages {sorted(models)} do not match targets {sorted(y_map)}")
    total = 0.0
    for lang in sorted(y_map):
        model = _resolve(models, lang)
        total += _loss_for(model)(model, x, y_map[lang], k_map[lang], lang, include_eos=include_eos)
    return total


def corpus_nll(models, corpus: Sequence, k_map: Mapping[str, int], *,
               include_eos: bool = True) -> tuple[float, int]:
    """Total joint loss over a corpus and the number of scored tokens."""
    total = 0.0
    n_tokens = 0
    for utt in corpus:
        y_map = {lang: utt.references[lang] for lang in k_map}
        total += joint_async_loss(models, utt.stream, y_map, k_map, include_eos=include_eos)
        n_tokens += sum(len(y) + include_eos for y in y_map.values())
    return total, n_tokens


def greedy_decode_next(model: PrefixModel, x_prefix, y_prefix: Sequence[str], lang: str) -> str:
    """Argmax next token given the delivered packets; ties go to the lowest id.

    PAD and language tokens are never produced.
    """
    packets = _packets(x_prefix)
    prefix = model.decoder_prefix(lang, model.vocab.encode(y_prefix))
    dist = model.distribution(packets, len(packets), prefix, lang)
    masked = np.where(model.vocab.emittable, dist, -np.inf)
    return model.vocab.token(int(np.argmax(masked)))
