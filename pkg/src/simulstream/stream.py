"""Packetized speech streams, utterances and the TSV manifest format.

Frames are rows of a float32 matrix of shape ``(n_frames, dim)``.  A packet
groups ``q`` consecutive frames; it is the unit the read/write policy counts.
Feature files hold raw little-endian float32 values in row-major order, and
the frame count lives in the manifest.
"""

from __future__ import annotations

import math
import os
import re
from collections.abc import Iterator, Mapping, Sequence
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, IntegrityError, SchemaError

DEFAULT_Q = 7
DEFAULT_DIM = 80
SUMMARY_LEVELS = 8

BASE_COLUMNS = ("id", "features", "n_frames", "transcript")
SPLITS = ("train", "dev", "test")

_TAG_RE = re.compile(r"^[A-Za-z0-9_-]+$")
_FEATURE_DTYPE = np.dtype("<f4")


def summarize_frames(frames: np.ndarray, levels: int = SUMMARY_LEVELS) -> bytes:
    """Quantize the mean frame vector into ``levels`` buckets per dimension.

    Values are assumed to live in [0, 1); anything outside is clipped into the
    end buckets.  The result is a hashable byte key.
    """
    mean = np.asarray(frames, dtype=np.float64).mean(axis=0)
    buckets = np.clip(np.floor(mean * levels), 0, levels - 1)
    return buckets.astype(np.uint8).tobytes()


@dataclass(frozen=True, eq=False)
class Packet:
    frames: np.ndarray
    index: int

    def __len__(self) -> int:
        return len(self.frames)

    @cached_property
    def summary(self) -> bytes:
        return summarize_frames(self.frames)


@dataclass(frozen=True, eq=False)
class SourceStream:
    packets: tuple[Packet, ...]
    exhausted: bool = True

    def __post_init__(self):
        dims = {p.frames.shape[1] for p in self.packets}
        if len(dims) > 1:
            raise ValueError(f"frame dimension changes within stream: {sorted(dims)}")
        for i, p in enumerate(self.packets, start=1):
            if p.index != i:
                raise ValueError(f"packet indices must be 1..n contiguous, got {p.index} at {i}")
            if not np.all(np.isfinite(p.frames)):
                raise ValueError(f"packet {i} contains non-finite frame values")

    @classmethod
    def from_frames(cls, frames: np.ndarray, q: int = DEFAULT_Q) -> SourceStream:
        return cls(tuple(packetize(frames, q)))

    def __len__(self) -> int:
        return len(self.packets)

    def __getitem__(self, i):
        return self.packets[i]

    def __iter__(self):
        return iter(self.packets)

    @property
    def dim(self) -> int | None:
        return self.packets[0].frames.shape[1] if self.packets else None

    def frames(self) -> np.ndarray:
        if not self.packets:
            return np.zeros((0, 0), dtype=np.float32)
        return np.concatenate([p.frames for p in self.packets], axis=0)


def packetize(frames: np.ndarray | Sequence[Sequence[float]], q: int = DEFAULT_Q) -> list[Packet]:
    """Split frames into packets of ``q`` frames; the last one may be short."""
    if not isinstance(q, (int, np.integer)) or isinstance(q, bool) or q < 1:
        raise ConfigError(f"packet size q must be a positive integer, got {q!r}")
    arr = np.asarray(frames, dtype=np.float32)
    if arr.size == 0:
        return []
    if arr.ndim != 2:
        raise ValueError(f"frames must be a 2-D (n_frames, dim) array, got shape {arr.shape}")
    return [Packet(arr[start:start + q], index=i)
            for i, start in enumerate(range(0, len(arr), q), start=1)]


def n_packets(n_frames: int, q: int = DEFAULT_Q) -> int:
    return math.ceil(n_frames / q)


@dataclass(frozen=True)
class TargetLanguage:
    tag: str

    def __post_init__(self):
        if not _TAG_RE.match(self.tag):
            raise ConfigError(f"invalid language tag {self.tag!r}")

    @property
    def lang_token(self) -> str:
        return lang_token(self.tag)

    def __str__(self) -> str:
        return self.tag


def lang_token(tag: str) -> str:
    return f"<2{tag}>"


def tokenize_reference(text: str) -> tuple[str, ...]:
    return tuple(text.split())


# -- feature files -----------------------------------------------------------

def write_features(path: str | os.PathLike, frames: np.ndarray) -> None:
    arr = np.ascontiguousarray(frames, dtype=_FEATURE_DTYPE)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    arr.tofile(path)


def read_features(path: str | os.PathLike, n_frames: int, dim: int = DEFAULT_DIM) -> np.ndarray:
    data = np.fromfile(path, dtype=_FEATURE_DTYPE)
    if data.size != n_frames * dim:
        raise IntegrityError(
            f"{path}: expected {n_frames}x{dim} float32 values, found {data.size}")
    return data.reshape(n_frames, dim).astype(np.float32, copy=False)


# -- manifest ----------------------------------------------------------------

@dataclass(frozen=True)
class ManifestRecord:
    id: str
    features: str
    n_frames: int
    transcript: str
    refs: Mapping[str, str]


@dataclass
class Manifest:
    path: Path | None
    languages: list[str]
    records: list[ManifestRecord] = field(default_factory=list)

    @property
    def split(self) -> str | None:
        if self.path is None:
            return None
        stem = self.path.stem
        return stem if stem in SPLITS else None

    @property
    def header(self) -> list[str]:
        return [*BASE_COLUMNS, *(f"ref_{lang}" for lang in self.languages)]


class Utterance:
    """One source utterance with its aligned references.

    The source stream is materialized on first access, so iterating over a
    large manifest never holds more than the current utterance's features.
    """

    def __init__(self, id: str, references: Mapping[str, Sequence[str]], *,
                 stream: SourceStream | None = None, loader=None,
                 transcript: Sequence[str] | None = None, n_frames: int | None = None,
                 q: int = DEFAULT_Q, record: ManifestRecord | None = None):
        if stream is None and loader is None:
            raise ValueError("utterance needs a stream or a loader")
        self.id = id
        self.references = {lang: tuple(toks) for lang, toks in references.items()}
        self.transcript = tuple(transcript) if transcript is not None else None
        self.q = q
        self.record = record
        self._stream = stream
        self._loader = loader
        self._n_frames = n_frames
        for lang, toks in self.references.items():
            if not toks:
                raise IntegrityError(f"utterance {id}: empty reference for {lang!r}")
            for tok in toks:
                if not tok or any(c.isspace() for c in tok):
                    raise IntegrityError(f"utterance {id}: malformed token {tok!r}")
                if tok == lang_token(lang):
                    raise IntegrityError(f"utterance {id}: reserved token {tok!r} in reference")

    @property
    def stream(self) -> SourceStream:
        if self._stream is None:
            self._stream = self._loader()
        return self._stream

    @property
    def loaded(self) -> bool:
        return self._stream is not None

    @property
    def n_packets(self) -> int:
        if self._stream is None and self._n_frames is not None:
            return n_packets(self._n_frames, self.q)
        return len(self.stream)

    @property
    def languages(self) -> list[str]:
        return sorted(self.references)

    def __repr__(self) -> str:
        return f"Utterance({self.id!r}, languages={self.languages})"


def read_manifest(path: str | os.PathLike, languages: Sequence[str] | None = None) -> Manifest:
    """Parse a manifest TSV without touching the feature files."""
    path = Path(path)
    try:
        fh = open(path, encoding="utf-8", newline="")
    except OSError as exc:
        raise DataError(f"cannot open manifest {path}: {exc.strerror}") from None
    with fh:
        header_line = fh.readline()
        if not header_line:
            raise SchemaError(f"{path}: empty manifest (missing header)")
        header = header_line.rstrip("\n").split("\t")
        for col in BASE_COLUMNS:
            if col not in header:
                raise SchemaError(f"{path}: missing column {col!r}")
        available = [c[4:] for c in header if c.startswith("ref_")]
        if languages is None:
            languages = available
        for lang in languages:
            if f"ref_{lang}" not in header:
                raise SchemaError(f"{path}: missing column 'ref_{lang}'")
        pos = {c: i for i, c in enumerate(header)}
        manifest = Manifest(path, list(languages))
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            cells = line.split("\t")
            if len(cells) != len(header):
                raise SchemaError(
                    f"{path}:{lineno}: expected {len(header)} fields, found {len(cells)}")
            try:
                n_frames = int(cells[pos["n_frames"]])
            except ValueError:
                raise SchemaError(f"{path}:{lineno}: n_frames is not an integer") from None
            manifest.records.append(ManifestRecord(
                id=cells[pos["id"]],
                features=cells[pos["features"]],
                n_frames=n_frames,
                transcript=cells[pos["transcript"]],
                refs={lang: cells[pos[f"ref_{lang}"]] for lang in languages},
            ))
    return manifest


def write_manifest(path: str | os.PathLike, manifest: Manifest) -> None:
    lines = ["\t".join(manifest.header)]
    for rec in manifest.records:
        cells = [rec.id, rec.features, str(rec.n_frames), rec.transcript,
                 *(rec.refs[lang] for lang in manifest.languages)]
        for cell in cells:
            if "\t" in cell or "\n" in cell:
                raise SchemaError(f"record {rec.id}: field contains a tab or newline")
        lines.append("\t".join(cells))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def iter_manifest(path: str | os.PathLike, languages: Sequence[str] | None = None, *,
                  q: int = DEFAULT_Q, dim: int = DEFAULT_DIM) -> Iterator[Utterance]:
    """Yield utterances in file order, checking feature sizes via stat only."""
    if q < 1:
        raise ConfigError(f"packet size q must be positive, got {q}")
    manifest = read_manifest(path, languages)
    base = Path(path).parent
    expected_bytes = dim * _FEATURE_DTYPE.itemsize
    for rec in manifest.records:
        feat_path = base / rec.features
        try:
            size = feat_path.stat().st_size
        except FileNotFoundError:
            raise IntegrityError(f"record {rec.id}: feature file {feat_path} not found") from None
        if size != rec.n_frames * expected_bytes:
            raise IntegrityError(
                f"record {rec.id}: n_frames={rec.n_frames} does not match "
                f"{feat_path} ({size} bytes, dim={dim})")

        def loader(feat_path=feat_path, n=rec.n_frames):
            return SourceStream.from_frames(read_features(feat_path, n, dim), q)

        yield Utterance(
            rec.id,
            {lang: tokenize_reference(rec.refs[lang]) for lang in manifest.languages},
            loader=loader,
            transcript=tokenize_reference(rec.transcript) if rec.transcript else None,
            n_frames=rec.n_frames,
            q=q,
            record=rec,
        )


def load_manifest(path: str | os.PathLike, languages: Sequence[str] | None = None, *,
                  q: int = DEFAULT_Q, dim: int = DEFAULT_DIM) -> list[Utterance]:
    return list(iter_manifest(path, languages, q=q, dim=dim))


def manifest_from_utterances(utterances: Sequence[Utterance], languages: Sequence[str],
                             path: str | os.PathLike | None = None) -> Manifest:
    records = []
    for utt in utterances:
        if utt.record is None:
            raise ValueError(f"utterance {utt.id} was not loaded from a manifest")
        records.append(ManifestRecord(
            utt.record.id, utt.record.features, utt.record.n_frames,
            utt.record.transcript, {lang: utt.record.refs[lang] for lang in languages}))
    return Manifest(Path(path) if path else None, list(languages), records)
