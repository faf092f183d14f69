"""Translation agents and the session runner that drives them.

The runner owns every READ/WRITE decision.  An agent sees a packet only after
the matching READ, and it answers each WRITE grant with exactly one token or
with ``EOS``.
"""

from __future__ import annotations

import random
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field

from .errors import ProtocolViolation
from .metrics import LatencyInput
from .model import EOS, PrefixModel, greedy_decode_next
from .policy import FINISH, READ, WRITE, Action, Schedule, SessionState, advance

__all__ = [
    "EOS", "Agent", "OracleAgent", "UniformAgent", "ModelAgent", "SessionInfo",
    "SessionTrace", "Session", "run_session", "oracle_agent", "model_agent",
]


@dataclass(frozen=True)
class SessionInfo:
    utterance_id: str
    schedule: Schedule

    @property
    def languages(self) -> list[str]:
        return self.schedule.languages


class Agent:
    """Base class.  ``languages`` is the supported set, or None for any."""

    languages: frozenset[str] | None = None

    def start(self, info: SessionInfo) -> None:
        pass

    def receive(self, packet) -> None:
        pass

    def write(self, lang: str, slot: int) -> str:
        raise NotImplementedError

    def end(self) -> None:
        pass


class OracleAgent(Agent):
    """Emits the reference, then EOS.  Holds references keyed by utterance id."""

    def __init__(self, references: Mapping[str, Mapping[str, Sequence[str]]]):
        self._by_id = references
        self._refs = None

    def start(self, info):
        try:
            self._refs = self._by_id[info.utterance_id]
        except KeyError:
            raise ProtocolViolation(f"oracle has no references for {info.utterance_id!r}") from None
        missing = set(info.languages) - set(self._refs)
        if missing:
            raise ProtocolViolation(f"oracle lacks references for {sorted(missing)}")

    def write(self, lang, slot):
        ref = self._refs[lang]
        return ref[slot - 1] if slot <= len(ref) else EOS


def oracle_agent(utterance) -> OracleAgent:
    return OracleAgent({utterance.id: utterance.references})


class UniformAgent(Agent):
    """Samples uniformly from a token list plus EOS, seeded per utterance and language."""

    def __init__(self, tokens: Sequence[str], seed: int = 0):
        self.tokens = sorted(set(tokens)) + [EOS]
        self.seed = seed
        self._rngs: dict[str, random.Random] = {}

    def start(self, info):
        self._rngs = {lang: random.Random(f"{self.seed}:{info.utterance_id}:{lang}")
                      for lang in info.languages}

    def write(self, lang, slot):
        return self._rngs[lang].choice(self.tokens)


class ModelAgent(Agent):
    """Greedy decoding with a prefix model over the packets delivered so far."""

    def __init__(self, model: PrefixModel):
        self.model = model
        self.languages = model.languages
        self._packets: list = []
        self._hyps: dict[str, list[str]] = {}

    def start(self, info):
        self._packets = []
        self._hyps = {lang: [] for lang in info.languages}

    def receive(self, packet):
        self._packets.append(packet)

    def write(self, lang, slot):
        hyp = self._hyps[lang]
        if slot != len(hyp) + 1:
            raise ProtocolViolation(f"write slot {slot} but {len(hyp)} tokens emitted for {lang!r}")
        tok = greedy_decode_next(self.model, self._packets, hyp, lang)
        if tok != EOS:
            hyp.append(tok)
        return tok


def model_agent(model: PrefixModel) -> ModelAgent:
    return ModelAgent(model)


@dataclass
class SessionTrace:
    utterance_id: str
    schedule: Schedule
    src_len: int
    steps: list[tuple[int, Action]] = field(default_factory=list)
    hypotheses: dict[str, list[str]] = field(default_factory=dict)
    g: dict[str, list[int]] = field(default_factory=dict)
    truncated: dict[str, bool] = field(default_factory=dict)
    failed: str | None = None

    def latency_input(self, lang: str) -> LatencyInput | None:
        """None when the hypothesis is empty (latency undefined)."""
        g = self.g.get(lang, [])
        if not g or self.src_len < 1:
            return None
        return LatencyInput(tuple(g), self.src_len, len(g))

    def actions(self) -> list[str]:
        return [str(a) for _, a in self.steps]

    def to_dict(self) -> dict:
        return {
            "utterance_id": self.utterance_id,
            "schedule": self.schedule.to_dict(),
            "src_len": self.src_len,
            "steps": [[step, a.to_dict()] for step, a in self.steps],
            "hypotheses": {k: list(v) for k, v in self.hypotheses.items()},
            "g": {k: list(v) for k, v in self.g.items()},
            "truncated": dict(self.truncated),
            "failed": self.failed,
        }


def _check_token(token) -> None:
    if not isinstance(token, str) or not token or any(c.isspace() for c in token):
        raise ProtocolViolation(f"invalid token {token!r}")


class Session:
    """One utterance under one schedule.  ``step()`` runs one logical step."""

    def __init__(self, utterance, schedule: Schedule, agent: Agent, max_len: int | None = None):
        self.utterance = utterance
        self.schedule = schedule
        self.agent = agent
        self.packets = utterance.stream.packets
        self.state = SessionState.start(len(self.packets), schedule.languages, max_len)
        self.trace = SessionTrace(utterance.id, schedule, len(self.packets))
        self.step_no = 0
        self.started = False
        self.closed = False

    def _fail(self, reason: str) -> None:
        self.trace.failed = reason
        self._close()

    def _close(self) -> None:
        if self.closed:
            return
        self.closed = True
        if self.started:
            try:
                self.agent.end()
            except Exception as exc:  # noqa: BLE001
                if self.trace.failed is None:
                    self.trace.failed = f"session end failed: {exc}"
        self._finalize()

    def _finalize(self) -> None:
        for lang, ls in self.state.langs.items():
            self.trace.hypotheses[lang] = list(t for t in ls.tokens if t is not None)
            self.trace.g[lang] = list(ls.g)
            self.trace.truncated[lang] = ls.truncated

    def step(self) -> bool:
        """Run one step; returns False once the session is over."""
        if self.closed:
            return False
        if not self.started:
            supported = self.agent.languages
            if supported is not None and not set(self.schedule.languages) <= set(supported):
                missing = sorted(set(self.schedule.languages) - set(supported))
                self._fail(f"agent does not support {missing}")
                return False
            try:
                self.agent.start(SessionInfo(self.utterance.id, self.schedule))
            except Exception as exc:  # noqa: BLE001
                self._fail(_reason(exc))
                return False
            self.started = True

        actions = self.schedule.next_actions(self.state)
        if not actions:
            self._close()
            return False
        self.step_no += 1
        try:
            for action in actions:
                if action.kind == READ:
                    self.agent.receive(self.packets[self.state.packets_read])
                elif action.kind == WRITE:
                    token = self.agent.write(action.lang, action.slot)
                    if token == EOS:
                        action = Action.finish(action.lang)
                    else:
                        _check_token(token)
                        action = Action.write(action.lang, action.slot, token)
                elif action.kind != FINISH:
                    raise ProtocolViolation(f"unexpected action {action}")
                self.state = advance(self.state, action)
                self.trace.steps.append((self.step_no, action))
        except Exception as exc:  # noqa: BLE001
            self._fail(_reason(exc))
            return False
        return True

    def run(self) -> SessionTrace:
        while self.step():
            pass
        return self.trace


def _reason(exc: Exception) -> str:
    if isinstance(exc, ProtocolViolation):
        return str(exc)
    if isinstance(exc, TimeoutError):
        return "timeout"
    return f"{type(exc).__name__}: {exc}"


def run_session(utterance, schedule: Schedule, agent: Agent, max_len: int | None = None) -> SessionTrace:
    return Session(utterance, schedule, agent, max_len).run()
