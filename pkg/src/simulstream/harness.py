"""Evaluation runs, training runs and report rendering."""

from __future__ import annotations

import datetime as _dt
import json
import logging
import math
from collections.abc import Callable, Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from . import kernels
from .agents import Agent, ModelAgent, OracleAgent, SessionTrace, UniformAgent, run_session
from .errors import ConfigError, DataError
from .metrics import corpus_bleu_stats, latency_many, sentence_stats
from .model import CountPrefixModel, UniformModel, Vocabulary, corpus_nll, train_count_model
from .policy import ASYNC, SYNC, Schedule
from .protocol import RemoteAgent, parse_endpoint, probe
from .stream import DEFAULT_DIM, DEFAULT_Q, iter_manifest, load_manifest, read_manifest

log = logging.getLogger(__name__)

REPORT_FORMAT = "simulstream-report"
REPORT_VERSION = 1
# excluded from the reproducible payload
RUNTIME_KEY = "runtime"

AgentFactory = Callable[[object], Agent]


def parse_k(text: str, languages: Sequence[str] | None = None) -> dict[str, int]:
    """``"4"`` (every language) or ``"es=4,fr=6"``."""
    text = text.strip()
    try:
        if "=" not in text:
            if not languages:
                raise ConfigError("a bare k needs --languages")
            return {lang: int(text) for lang in languages}
        out = {}
        for part in text.split(","):
            lang, _, value = part.partition("=")
            out[lang.strip()] = int(value)
        return out
    except ValueError:
        raise ConfigError(f"cannot parse k specification {text!r}") from None


@dataclass
class RunConfig:
    manifest: str
    languages: list[str]
    schedule: Schedule
    agent: str = "oracle"
    workers: int = 1
    out: str | None = None
    q: int = DEFAULT_Q
    dim: int = DEFAULT_DIM
    seed: int = 0
    max_len: int | None = None
    timeout: float = 30.0

    def __post_init__(self):
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if sorted(self.languages) != self.schedule.languages:
            raise ConfigError(
                f"languages {sorted(self.languages)} do not match schedule {self.schedule.languages}")

    def echo(self) -> dict:
        return {"manifest": str(self.manifest), "languages": sorted(self.languages),
                "agent": self.agent, "q": self.q, "dim": self.dim, "seed": self.seed,
                "max_len": self.max_len}


def resolve_agent(spec: str, cfg: RunConfig, schedule: Schedule) -> AgentFactory:
    """Map an agent spec to a factory building one agent per utterance."""
    if spec == "oracle":
        return lambda utt: OracleAgent({utt.id: utt.references})
    if spec.startswith("uniform"):
        _, _, seed_text = spec.partition(":")
        try:
            seed = int(seed_text) if seed_text else cfg.seed
        except ValueError:
            raise ConfigError(f"bad uniform seed in {spec!r}") from None
        manifest = read_manifest(cfg.manifest, cfg.languages)
        tokens = sorted({tok for rec in manifest.records for lang in cfg.languages
                         for tok in rec.refs[lang].split()})
        return lambda utt: UniformAgent(tokens, seed)
    if spec.startswith("model:"):
        path = spec[len("model:"):].format(k=next(iter(schedule.k.values())),
                                           **{f"k_{lang}": k for lang, k in schedule.k.items()})
        if not Path(path).exists():
            raise ConfigError(f"model file {path} not found")
        model = CountPrefixModel.load(path)
        return lambda utt: ModelAgent(model)
    if spec.startswith("tcp://"):
        parse_endpoint(spec)
        probe(spec)
        return lambda utt: RemoteAgent(spec, timeout=cfg.timeout)
    if spec.startswith("stdio://"):
        raise ConfigError("stdio:// agents can be served but not evaluated from the CLI")
    raise ConfigError(f"unknown agent spec {spec!r}")


def _mean(values: list[float]) -> float | None:
    return sum(values) / len(values) if values else None


def _run_one(utt, schedule: Schedule, factory: AgentFactory, max_len) -> tuple[str, SessionTrace, dict]:
    trace = run_session(utt, schedule, factory(utt), max_len)
    return utt.id, trace, {lang: list(utt.references[lang]) for lang in schedule.languages}


def evaluate(utterances, schedule: Schedule, factory: AgentFactory, *, workers: int = 1,
             max_len: int | None = None) -> dict:
    """Run every utterance and aggregate metrics; returns one report ``run`` entry."""
    if workers == 1:
        results = [_run_one(u, schedule, factory, max_len) for u in utterances]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda u: _run_one(u, schedule, factory, max_len), utterances))
    results.sort(key=lambda r: r[0])

    failures = [{"id": uid, "reason": trace.failed} for uid, trace, _ in results if trace.failed]
    ok = [(uid, trace, refs) for uid, trace, refs in results if not trace.failed]

    per_utt = {uid: {"id": uid, "src_len": trace.src_len, "languages": {}} for uid, trace, _ in ok}
    languages = {}
    for lang in schedule.languages:
        inputs, owners = [], []
        for uid, trace, refs in ok:
            entry = {"hypothesis": " ".join(trace.hypotheses[lang]), "g": trace.g[lang],
                     "truncated": trace.truncated[lang],
                     "sentence_bleu_smoothed": sentence_stats(refs[lang], trace.hypotheses[lang])
                     .smoothed_score(),
                     "AL": None, "AP": None, "DAL": None}
            per_utt[uid]["languages"][lang] = entry
            inp = trace.latency_input(lang)
            if inp is not None:
                inputs.append(inp)
                owners.append(entry)
        scores = latency_many(inputs) if inputs else []
        for entry, (al, ap, dal) in zip(owners, scores):
            entry.update(AL=float(al), AP=float(ap), DAL=float(dal))
        al_fallback = sum(1 for inp in inputs if inp.g[-1] < inp.src_len)

        if ok:
            stats = corpus_bleu_stats([refs[lang] for _, _, refs in ok],
                                      [trace.hypotheses[lang] for _, trace, _ in ok])
            bleu = stats.score()
            bleu_detail = stats.to_dict()
        else:
            bleu, bleu_detail = None, None
        languages[lang] = {
            "k": schedule.k[lang],
            "bleu": bleu,
            "bleu_stats": bleu_detail,
            "AL": _mean([e["AL"] for e in owners]),
            "AP": _mean([e["AP"] for e in owners]),
            "DAL": _mean([e["DAL"] for e in owners]),
            "n_utterances": len(ok),
            "n_latency_undefined": len(ok) - len(owners),
            "n_al_full_source_never_reached": al_fallback,
            "n_truncated": sum(1 for _, t, _ in ok if t.truncated[lang]),
        }
    return {
        "schedule": schedule.to_dict(),
        "label": schedule.label(),
        "languages": languages,
        "utterances": [per_utt[uid] for uid in sorted(per_utt)],
        "failures": failures,
        "n_utterances": len(results),
    }


def run_eval(cfg: RunConfig, schedules: Sequence[Schedule] | None = None) -> dict:
    """Evaluate ``cfg`` (optionally over several schedules) and return the report."""
    schedules = list(schedules) if schedules else [cfg.schedule]
    runs = []
    for schedule in schedules:
        factory = resolve_agent(cfg.agent, cfg, schedule)
        utterances = iter_manifest(cfg.manifest, cfg.languages, q=cfg.q, dim=cfg.dim)
        log.info("evaluating %s with %s", schedule.label(), cfg.agent)
        run = evaluate(utterances, schedule, factory, workers=cfg.workers, max_len=cfg.max_len)
        for lang, res in run["languages"].items():
            log.info("  %s: BLEU=%s AL=%s", lang, _fmt(res["bleu"]), _fmt(res["AL"]))
        runs.append(run)
    report = {
        "format": REPORT_FORMAT,
        "version": REPORT_VERSION,
        "config": cfg.echo(),
        "runs": runs,
        RUNTIME_KEY: {
            "generated_at": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
            "workers": cfg.workers,
            "kernel_backend": kernels.BACKEND,
        },
    }
    if cfg.out:
        write_report(report, cfg.out)
    return report


def report_payload(report: Mapping) -> str:
    """Canonical JSON of the report without runtime details."""
    body = {k: v for k, v in report.items() if k != RUNTIME_KEY}
    return json.dumps(body, sort_keys=True, indent=2, allow_nan=False)


def write_report(report: Mapping, out: str | Path) -> tuple[Path, Path]:
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(report, sort_keys=True, indent=2, allow_nan=False) + "\n",
                   encoding="utf-8")
    tsv = out.with_suffix(".tsv")
    tsv.write_text(render_tsv(report), encoding="utf-8")
    return out, tsv


def load_report(path: str | Path) -> dict:
    try:
        report = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read report {path}: {exc}") from exc
    if report.get("format") != REPORT_FORMAT:
        raise DataError(f"{path} is not a {REPORT_FORMAT} file")
    return report


def _fmt(value) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return "-"
    return f"{value:.2f}"


def render_tsv(report: Mapping) -> str:
    """BLEU table: language x k for sync sweeps, one row per schedule otherwise."""
    runs = report["runs"]
    languages = sorted({lang for run in runs for lang in run["languages"]})
    ks = [run["schedule"]["k"] for run in runs]
    sync_sweep = (all(run["schedule"]["mode"] == SYNC for run in runs)
                  and len({next(iter(k.values())) for k in ks}) == len(runs))
    lines = []
    if sync_sweep:
        cols = [next(iter(k.values())) for k in ks]
        order = sorted(range(len(runs)), key=lambda i: cols[i])
        lines.append("\t".join(["language", *(f"k={cols[i]}" for i in order)]))
        for lang in languages:
            lines.append("\t".join([lang, *(_fmt(runs[i]["languages"][lang]["bleu"]) for i in order)]))
    else:
        lines.append("\t".join(["mode", *(f"k_{lang}" for lang in languages),
                                *(f"bleu_{lang}" for lang in languages)]))
        for run in runs:
            k = run["schedule"]["k"]
            lines.append("\t".join([run["schedule"]["mode"], *(str(k.get(lang, "-")) for lang in languages),
                                    *(_fmt(run["languages"].get(lang, {}).get("bleu"))
                                      for lang in languages)]))
    return "\n".join(lines) + "\n"


# -- training ------------------------------------------------------------------

def train_cmd(manifest: str | Path, languages: Sequence[str], variant: str,
              k_map: Mapping[str, int], epsilon: float, out_path: str | Path, *,
              q: int = DEFAULT_Q, dim: int = DEFAULT_DIM) -> dict:
    """Train a count model, save it, and write ``<out>.log.json`` with NLLs."""
    corpus = load_manifest(manifest, languages, q=q, dim=dim)
    if not corpus:
        raise DataError(f"{manifest} has no records")
    if set(k_map) != set(languages):
        raise ConfigError(f"k languages {sorted(k_map)} do not match {sorted(languages)}")
    vocab = Vocabulary.from_corpus(corpus, languages)
    init_total, n_tokens = corpus_nll(UniformModel(vocab), corpus, k_map)
    model = train_count_model(corpus, variant, k_map, epsilon, vocab)
    final_total, _ = corpus_nll(model, corpus, k_map)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    model.save(out_path)
    summary = {
        "manifest": str(manifest), "variant": variant, "k": dict(sorted(k_map.items())),
        "epsilon": epsilon, "utterances": len(corpus), "tokens": n_tokens,
        "vocab_size": len(vocab),
        "initial_nll_per_token": init_total / n_tokens,
        "final_nll_per_token": final_total / n_tokens,
    }
    log.info("trained %s model: NLL/token %.4f -> %.4f", variant,
             summary["initial_nll_per_token"], summary["final_nll_per_token"])
    Path(str(out_path) + ".log.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n",
                                                 encoding="utf-8")
    return summary


def sweep_schedules(languages: Sequence[str], ks: Sequence[int]) -> list[Schedule]:
    return [Schedule.sync(k, languages) for k in ks]


def schedule_from_args(mode: str, k_map: Mapping[str, int]) -> Schedule:
    if mode not in (SYNC, ASYNC):
        raise ConfigError(f"unknown mode {mode!r}")
    return Schedule(mode, dict(k_map))
