"""Wait-k scheduling, prefix losses and evaluation for multilingual simultaneous speech translation."""

from .agents import (EOS, Agent, ModelAgent, OracleAgent, Session, SessionTrace, UniformAgent,
                     model_agent, oracle_agent, run_session)
from .errors import (ConfigError, DataError, IntegrityError, ProtocolViolation, SchemaError,
                     SimulStreamError, UndefinedMetricError)
from .kernels import BACKEND as KERNEL_BACKEND
from .metrics import (LatencyInput, average_lagging, average_proportion, corpus_bleu,
                      differentiable_average_lagging)
from .model import (CountPrefixModel, OracleModel, PrefixModel, UniformModel, Vocabulary,
                    greedy_decode_next, joint_async_loss, joint_sync_loss, prefix_nll,
                    train_count_model, unified_nll)
from .policy import (Action, Schedule, SessionState, advance, g_of_t, next_actions_async,
                     next_actions_sync)
from .protocol import RemoteAgent, remote_agent, serve_agent
from .stream import (Packet, SourceStream, TargetLanguage, Utterance, load_manifest, packetize)
from .synthetic import SyntheticConfig, generate_synthetic

__version__ = "0.1.0"

__all__ = [
    "Action", "Agent", "ConfigError", "CountPrefixModel", "DataError", "EOS", "IntegrityError",
    "KERNEL_BACKEND", "LatencyInput", "ModelAgent", "OracleAgent", "OracleModel", "Packet",
    "PrefixModel", "ProtocolViolation", "RemoteAgent", "Schedule", "SchemaError", "Session",
    "SessionState", "SessionTrace", "SimulStreamError", "SourceStream", "SyntheticConfig",
    "TargetLanguage", "UndefinedMetricError", "UniformAgent", "UniformModel", "Utterance",
    "Vocabulary", "advance", "average_lagging", "average_proportion", "corpus_bleu",
    "differentiable_average_lagging", "g_of_t", "generate_synthetic", "greedy_decode_next",
    "joint_async_loss", "joint_sync_loss", "load_manifest", "model_agent", "next_actions_async",
    "next_actions_sync", "oracle_agent", "packetize", "prefix_nll", "remote_agent", "run_session",
    "serve_agent", "train_count_model", "unified_nll",
]
