from __future__ import annotations

import numpy as np
import pytest

from simulstream.stream import SourceStream, Utterance, packetize
from simulstream.synthetic import SyntheticConfig, generate_synthetic


def make_stream(n_packets: int, q: int = 1, dim: int = 2, seed: int = 0) -> SourceStream:
    rng = np.random.default_rng(seed)
    frames = rng.integers(0, 256, size=(n_packets * q, dim)).astype(np.float32) / 256
    return SourceStream(tuple(packetize(frames, q)))


def make_utterance(uid: str, n_packets: int, refs: dict[str, list[str]], **kw) -> Utterance:
    return Utterance(uid, refs, stream=make_stream(n_packets, **kw))


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory):
    """Default synthetic corpus: shifts es=1, fr=3, 64-token dictionaries."""
    out = tmp_path_factory.mktemp("synthetic")
    generate_synthetic(SyntheticConfig(sentences={"train": 200, "test": 50}), out)
    return out


@pytest.fixture(scope="session")
def small_corpus_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synthetic_small")
    generate_synthetic(SyntheticConfig(sentences={"train": 50, "test": 10}, dim=8), out)
    return out


ACCEPTANCE_RESULTS: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_RESULTS, key=lambda s: int(s.split()[1].lstrip("#"))):
            terminalreporter.write_line(line)
