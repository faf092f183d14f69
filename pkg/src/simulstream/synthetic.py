"""Multi-way aligned synthetic corpora with a controllable source lead.

Each source sentence is ``n`` random content tokens followed by one
end-marker.  Token ``a`` is rendered as ``frames_per_token`` frames whose
first few dimensions spell ``a`` in base 8, one digit per dimension, at the
centre of the digit's bucket plus bounded noise.  Averaging those frames and
quantizing them (``stream.summarize_frames``) recovers ``a`` exactly.

For a language with shift ``s``, target token ``t`` is the dictionary
translation of source token ``t + s``.  The reference therefore has ``n - s``
tokens, and producing token ``t`` correctly needs ``t + s`` source tokens.
Every value written is a multiple of 1/256, so it is exact in float32 and
prints compactly.
"""

from __future__ import annotations

import json
import math
import zlib
from collections.abc import Mapping
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .stream import (DEFAULT_DIM, DEFAULT_Q, SPLITS, Manifest, ManifestRecord,
                     SUMMARY_LEVELS, TargetLanguage, write_features, write_manifest)

NOISE_STEPS = 12  # +-12/256 stays inside a 32/256-wide bucket


@dataclass
class SyntheticConfig:
    vocab_size: int = 64
    sentences: Mapping[str, int] = field(default_factory=lambda: {"train": 200, "dev": 20, "test": 50})
    min_len: int = 5
    max_len: int = 12
    shifts: Mapping[str, int] = field(default_factory=lambda: {"es": 1, "fr": 3})
    dict_seed: int | None = None
    frames_per_token: int | None = None
    q: int = DEFAULT_Q
    dim: int = DEFAULT_DIM
    seed: int = 0
    shared_target_vocab: bool = False

    def validate(self) -> None:
        if self.vocab_size < 2:
            raise ConfigError(f"vocab_size={self.vocab_size} is too small for a dictionary")
        if self.code_dims > self.dim:
            raise ConfigError(f"dim={self.dim} cannot encode {self.vocab_size + 1} source symbols")
        if not self.shifts:
            raise ConfigError("at least one target language is required")
        for lang, s in self.shifts.items():
            TargetLanguage(lang)
            if s < 0:
                raise ConfigError(f"shift for {lang!r} must be >= 0")
        if self.min_len < 1 or self.max_len < self.min_len:
            raise ConfigError("need 1 <= min_len <= max_len")
        if self.min_len <= max(self.shifts.values()):
            raise ConfigError("min_len must exceed every shift so each reference is non-empty")
        if self.q < 1 or (self.frames_per_token is not None and self.frames_per_token < 1):
            raise ConfigError("q and frames_per_token must be positive")
        for split, n in self.sentences.items():
            if split not in SPLITS or n < 0:
                raise ConfigError(f"bad split size {split}={n}")

    @property
    def code_dims(self) -> int:
        return max(1, math.ceil(math.log(self.vocab_size + 1, SUMMARY_LEVELS) - 1e-12))

    @property
    def fpt(self) -> int:
        return self.frames_per_token or self.q

    @property
    def end_marker(self) -> int:
        return self.vocab_size

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sentences"] = dict(self.sentences)
        d["shifts"] = dict(self.shifts)
        return d


def _lang_rng(seed: int, lang: str) -> np.random.Generator:
    return np.random.default_rng([seed, zlib.crc32(lang.encode("utf-8"))])


def dictionaries(cfg: SyntheticConfig) -> dict[str, list[str]]:
    """Per-language translation of every content source token."""
    dict_seed = cfg.seed if cfg.dict_seed is None else cfg.dict_seed
    width = len(str(cfg.vocab_size - 1))
    out = {}
    for lang in sorted(cfg.shifts):
        perm = _lang_rng(dict_seed, lang).permutation(cfg.vocab_size)
        prefix = "w" if cfg.shared_target_vocab else lang
        out[lang] = [f"{prefix}{int(p):0{width}d}" for p in perm]
    return out


def render_tokens(source: list[int], cfg: SyntheticConfig, rng: np.random.Generator) -> np.ndarray:
    """Frames for a source token sequence, ``fpt`` frames per token."""
    n_frames = len(source) * cfg.fpt
    frames = rng.integers(0, 2 * NOISE_STEPS + 1, size=(n_frames, cfg.dim)).astype(np.float32) / 256
    for i, tok in enumerate(source):
        rows = slice(i * cfg.fpt, (i + 1) * cfg.fpt)
        for d in range(cfg.code_dims):
            digit = (tok // SUMMARY_LEVELS ** d) % SUMMARY_LEVELS
            noise = rng.integers(-NOISE_STEPS, NOISE_STEPS + 1, size=cfg.fpt)
            frames[rows, d] = (32 * digit + 16 + noise) / 256
    return frames


def source_word(tok: int, cfg: SyntheticConfig) -> str:
    return f"s{tok:0{len(str(cfg.vocab_size - 1))}d}"


def generate_synthetic(cfg: SyntheticConfig, out_dir) -> dict[str, Path]:
    """Write ``<split>.tsv`` manifests, ``feats/*.f32`` and ``synthetic.json``.

    Splits are cut by sentence index: train first, then dev, then test.
    Returns the manifest path for each split.
    """
    cfg.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    languages = sorted(cfg.shifts)
    dicts = dictionaries(cfg)
    rng = np.random.default_rng(cfg.seed)
    paths = {}
    for split in SPLITS:
        count = cfg.sentences.get(split, 0)
        if not count and split not in cfg.sentences:
            continue
        manifest = Manifest(out_dir / f"{split}.tsv", languages)
        for i in range(count):
            utt_id = f"{split}-{i:06d}"
            n = int(rng.integers(cfg.min_len, cfg.max_len + 1))
            content = [int(v) for v in rng.integers(0, cfg.vocab_size, size=n)]
            source = content + [cfg.end_marker]
            frames = render_tokens(source, cfg, rng)
            feat_rel = f"feats/{utt_id}.f32"
            write_features(out_dir / feat_rel, frames)
            refs = {lang: " ".join(dicts[lang][content[t + cfg.shifts[lang]]]
                                   for t in range(n - cfg.shifts[lang]))
                    for lang in languages}
            manifest.records.append(ManifestRecord(
                utt_id, feat_rel, len(frames), " ".join(source_word(t, cfg) for t in content), refs))
        write_manifest(manifest.path, manifest)
        paths[split] = manifest.path
    meta = {"config": cfg.to_dict(), "split_criterion": "sentence index (train, dev, test in order)",
            "manifests": {k: p.name for k, p in paths.items()}}
    (out_dir / "synthetic.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n",
                                            encoding="utf-8")
    return paths
