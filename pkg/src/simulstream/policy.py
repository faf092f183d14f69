"""Wait-k read/write scheduling over packet streams.

The scheduler is a small deterministic state machine.  ``next_actions_*``
inspects a :class:`SessionState` and returns the grants for one logical step;
``advance`` applies a single action and returns the new state.  Agents never
decide when to read: they only fill WRITE grants with a token or end the
language with EOS.

Within a step, languages are served in ascending tag order and the READ (if
any) comes last.
"""

from __future__ import annotations

from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field, replace
from types import MappingProxyType

from .errors import ConfigError, ProtocolViolation

READ = "READ"
WRITE = "WRITE"
FINISH = "FINISH"

SYNC = "sync"
ASYNC = "async"


@dataclass(frozen=True)
class Action:
    kind: str
    lang: str | None = None
    slot: int | None = None
    token: str | None = None
    truncated: bool = False

    @classmethod
    def read(cls) -> Action:
        return _READ

    @classmethod
    def write(cls, lang: str, slot: int, token: str | None = None) -> Action:
        return cls(WRITE, lang, slot, token)

    @classmethod
    def finish(cls, lang: str, truncated: bool = False) -> Action:
        return cls(FINISH, lang, truncated=truncated)

    def __str__(self) -> str:
        if self.kind == READ:
            return READ
        if self.kind == WRITE:
            return f"WRITE({self.lang},{self.slot})"
        return f"FINISH({self.lang}{',truncated' if self.truncated else ''})"

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        if self.lang is not None:
            out["lang"] = self.lang
        if self.slot is not None:
            out["slot"] = self.slot
        if self.token is not None:
            out["token"] = self.token
        if self.truncated:
            out["truncated"] = True
        return out


_READ = Action(READ)


def g_of_t(k: int, t: int, src_len: int) -> int:
    """Packets read before the t-th write under wait-k: min(k + t - 1, src_len)."""
    if k < 1 or t < 1 or src_len < 1:
        raise ConfigError(f"g_of_t needs k, t, src_len >= 1 (got {k}, {t}, {src_len})")
    return min(k + t - 1, src_len)


def default_max_len(src_len: int) -> int:
    return 2 * src_len + 10


@dataclass(frozen=True)
class Schedule:
    mode: str
    k: Mapping[str, int]

    def __post_init__(self):
        if self.mode not in (SYNC, ASYNC):
            raise ConfigError(f"unknown schedule mode {self.mode!r}")
        if not self.k:
            raise ConfigError("schedule needs at least one target language")
        for lang, k in self.k.items():
            if not isinstance(k, int) or isinstance(k, bool) or k < 1:
                raise ConfigError(f"k for {lang!r} must be a positive integer, got {k!r}")
        if self.mode == SYNC and len(set(self.k.values())) != 1:
            raise ConfigError(f"sync schedule requires equal k values, got {dict(self.k)}")
        object.__setattr__(self, "k", MappingProxyType(dict(sorted(self.k.items()))))

    @classmethod
    def sync(cls, k: int, languages: Iterable[str]) -> Schedule:
        return cls(SYNC, {lang: k for lang in languages})

    @classmethod
    def asynchronous(cls, k_map: Mapping[str, int]) -> Schedule:
        return cls(ASYNC, dict(k_map))

    @property
    def languages(self) -> list[str]:
        return list(self.k)

    @property
    def sync_k(self) -> int:
        return next(iter(self.k.values()))

    def next_actions(self, state: SessionState) -> list[Action]:
        if self.mode == SYNC:
            return next_actions_sync(state, self.sync_k)
        return next_actions_async(state, self.k)

    def to_dict(self) -> dict:
        return {"mode": self.mode, "k": dict(self.k)}

    def label(self) -> str:
        if self.mode == SYNC:
            return f"sync k={self.sync_k}"
        return "async " + ",".join(f"{lang}={k}" for lang, k in self.k.items())


@dataclass(frozen=True)
class LangState:
    tokens: tuple = ()
    g: tuple[int, ...] = ()
    finished: bool = False
    truncated: bool = False


@dataclass(frozen=True)
class SessionState:
    src_len: int
    langs: Mapping[str, LangState]
    packets_read: int = 0
    max_len: int = field(default=-1)

    def __post_init__(self):
        if self.src_len < 0:
            raise ConfigError("src_len must be non-negative")
        if self.max_len < 0:
            object.__setattr__(self, "max_len", default_max_len(self.src_len))

    @classmethod
    def start(cls, src_len: int, languages: Iterable[str], max_len: int | None = None) -> SessionState:
        langs = {lang: LangState() for lang in sorted(languages)}
        if not langs:
            raise ConfigError("session needs at least one target language")
        return cls(src_len, langs, 0, -1 if max_len is None else max_len)

    @property
    def source_exhausted(self) -> bool:
        return self.packets_read >= self.src_len

    @property
    def done(self) -> bool:
        return all(ls.finished for ls in self.langs.values())

    def unfinished(self) -> list[str]:
        return [lang for lang, ls in self.langs.items() if not ls.finished]

    def _grant(self, lang: str) -> Action:
        ls = self.langs[lang]
        if len(ls.tokens) >= self.max_len:
            return Action.finish(lang, truncated=True)
        return Action.write(lang, len(ls.tokens) + 1)


def _check_langs(state: SessionState, langs: Iterable[str]) -> None:
    if set(langs) != set(state.langs):
        raise ConfigError(
            f"schedule languages {sorted(langs)} do not match session {sorted(state.langs)}")


def next_actions_sync(state: SessionState, k: int) -> list[Action]:
    """All unfinished languages write together once k packets are in."""
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    pending = state.unfinished()
    if not pending:
        return []
    exhausted = state.source_exhausted
    if state.packets_read < k and not exhausted:
        return [_READ]
    actions = [state._grant(lang) for lang in pending]
    if not exhausted:
        actions.append(_READ)
    return actions


def next_actions_async(state: SessionState, k_map: Mapping[str, int]) -> list[Action]:
    """Each language j writes once at least k_map[j] packets are in."""
    _check_langs(state, k_map)
    pending = state.unfinished()
    if not pending:
        return []
    exhausted = state.source_exhausted
    eligible = [lang for lang in pending if exhausted or state.packets_read >= k_map[lang]]
    if not eligible:
        return [_READ]
    actions = [state._grant(lang) for lang in eligible]
    if not exhausted:
        actions.append(_READ)
    return actions


def advance(state: SessionState, action: Action) -> SessionState:
    if action.kind == READ:
        if state.source_exhausted:
            raise ProtocolViolation("READ after the source stream is exhausted")
        return replace(state, packets_read=state.packets_read + 1)

    ls = state.langs.get(action.lang)
    if ls is None:
        raise ProtocolViolation(f"unknown language {action.lang!r}")
    if ls.finished:
        raise ProtocolViolation(f"{action} for finished language {action.lang!r}")

    if action.kind == WRITE:
        expected = len(ls.tokens) + 1
        if action.slot != expected:
            raise ProtocolViolation(
                f"{action}: language {action.lang!r} expects slot {expected}")
        if len(ls.tokens) >= state.max_len:
            raise ProtocolViolation(f"{action}: exceeds max length {state.max_len}")
        new = replace(ls, tokens=ls.tokens + (action.token,), g=ls.g + (state.packets_read,))
    elif action.kind == FINISH:
        new = replace(ls, finished=True, truncated=action.truncated)
    else:
        raise ProtocolViolation(f"unknown action kind {action.kind!r}")
    return replace(state, langs={**state.langs, action.lang: new})


def simulate_schedule(schedule: Schedule, src_len: int,
                      lengths: Mapping[str, int | None] | None = None,
                      max_len: int | None = None):
    """Run a schedule against a scripted writer.

    ``lengths[lang]`` is how many tokens the writer produces before EOS
    (``None`` never ends, so the length cap applies).  Returns the final state
    and the list of ``(step, action)`` pairs.
    """
    lengths = lengths or {}
    state = SessionState.start(src_len, schedule.languages, max_len)
    trace = []
    step = 0
    while True:
        actions = schedule.next_actions(state)
        if not actions:
            break
        step += 1
        for action in actions:
            if action.kind == WRITE:
                limit = lengths.get(action.lang)
                if limit is not None and action.slot > limit:
                    action = Action.finish(action.lang)
            state = advance(state, action)
            trace.append((step, action))
    return state, trace
