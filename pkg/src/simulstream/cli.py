"""Command line interface: ``simulstream gen|train|eval|serve|report``.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 agent or
protocol failure affecting every utterance.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .errors import ConfigError, SimulStreamError
from .harness import (RunConfig, load_report, parse_k, render_tsv, resolve_agent,
                      run_eval, schedule_from_args, sweep_schedules, train_cmd)
from .model import DEFAULT_EPSILON, VARIANTS
from .policy import Schedule
from .protocol import serve_agent
from .stream import DEFAULT_DIM, DEFAULT_Q
from .synthetic import SyntheticConfig, generate_synthetic

log = logging.getLogger("simulstream")


def _languages(text: str) -> list[str]:
    langs = [s.strip() for s in text.split(",") if s.strip()]
    if not langs:
        raise ConfigError("--languages must name at least one language")
    return langs


def _int_map(text: str) -> dict[str, int]:
    return parse_k(text)


def cmd_gen(args) -> int:
    sentences = _int_map(args.sentences)
    cfg = SyntheticConfig(
        vocab_size=args.vocab, sentences=sentences, min_len=args.min_len, max_len=args.max_len,
        shifts=_int_map(args.shift), dict_seed=args.dict_seed, frames_per_token=args.frames_per_token,
        q=args.q, dim=args.dim, seed=args.seed, shared_target_vocab=args.shared_vocab)
    paths = generate_synthetic(cfg, args.out)
    for split, path in paths.items():
        print(f"{split}\t{path}")
    return 0


def cmd_train(args) -> int:
    languages = _languages(args.languages)
    summary = train_cmd(args.manifest, languages, args.variant, parse_k(args.k, languages),
                        args.epsilon, args.out, q=args.q, dim=args.dim)
    print(f"NLL/token {summary['initial_nll_per_token']:.4f} -> {summary['final_nll_per_token']:.4f}"
          f"  ({args.out})")
    return 0


def cmd_eval(args) -> int:
    languages = _languages(args.languages)
    if args.sweep:
        ks = [int(v) for v in args.sweep.split(",")]
        schedules = sweep_schedules(languages, ks)
        schedule = schedules[0]
    else:
        if not args.k:
            raise ConfigError("--k or --sweep is required")
        schedule = schedule_from_args(args.mode, parse_k(args.k, languages))
        schedules = [schedule]
    cfg = RunConfig(args.manifest, languages, schedule, agent=args.agent, workers=args.workers,
                    out=args.out, q=args.q, dim=args.dim, seed=args.seed, timeout=args.timeout)
    report = run_eval(cfg, schedules)
    sys.stdout.write(render_tsv(report))
    total = sum(run["n_utterances"] for run in report["runs"])
    failed = sum(len(run["failures"]) for run in report["runs"])
    if total and failed == total:
        log.error("every utterance failed: %s", report["runs"][0]["failures"][0]["reason"])
        return 3
    return 0


def cmd_serve(args) -> int:
    languages = _languages(args.languages) if args.languages else ["_"]
    cfg = RunConfig(args.manifest or "", languages, Schedule.sync(1, languages), agent=args.agent,
                    q=args.q, dim=args.dim, seed=args.seed)
    if args.agent == "oracle":
        if not args.manifest:
            raise ConfigError("serving the oracle agent needs --manifest")
        from .stream import read_manifest
        manifest = read_manifest(args.manifest, languages if args.languages else None)
        refs = {rec.id: {lang: tuple(text.split()) for lang, text in rec.refs.items()}
                for rec in manifest.records}
        from .agents import OracleAgent
        factory = lambda: OracleAgent(refs)  # noqa: E731
    else:
        if args.agent.startswith("uniform") and not (args.manifest and args.languages):
            raise ConfigError("serving the uniform agent needs --manifest and --languages")
        per_utt = resolve_agent(args.agent, cfg, cfg.schedule)
        factory = lambda: per_utt(None)  # noqa: E731
    if args.endpoint.startswith("tcp://"):
        log.info("serving %s on %s", args.agent, args.endpoint)
    serve_agent(factory, args.endpoint, timeout=args.timeout)
    return 0


def cmd_report(args) -> int:
    text = render_tsv(load_report(args.input))
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="simulstream", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def data_opts(p):
        p.add_argument("--q", type=int, default=DEFAULT_Q, help="frames per packet")
        p.add_argument("--dim", type=int, default=DEFAULT_DIM, help="feature dimension")

    p = sub.add_parser("gen", help="generate a synthetic multi-way corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--sentences", default="train=200,dev=20,test=50")
    p.add_argument("--vocab", type=int, default=64)
    p.add_argument("--min-len", type=int, default=5)
    p.add_argument("--max-len", type=int, default=12)
    p.add_argument("--shift", default="es=1,fr=3", help="per-language source lead, e.g. es=1,fr=3")
    p.add_argument("--dict-seed", type=int, default=None)
    p.add_argument("--frames-per-token", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--shared-vocab", action="store_true", help="same target strings in every language")
    data_opts(p)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train a count prefix model")
    p.add_argument("--manifest", required=True)
    p.add_argument("--languages", required=True)
    p.add_argument("--variant", choices=VARIANTS, default="unified")
    p.add_argument("--k", required=True, help="k for all languages, or es=4,fr=6")
    p.add_argument("--epsilon", type=float, default=DEFAULT_EPSILON)
    p.add_argument("--out", required=True)
    data_opts(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate an agent on a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--languages", required=True)
    p.add_argument("--mode", choices=("sync", "async"), default="sync")
    p.add_argument("--k", help="k for all languages, or es=4,fr=6")
    p.add_argument("--sweep", help="comma-separated sync k values, e.g. 3,4,5,6")
    p.add_argument("--agent", default="oracle",
                   help="oracle | uniform:SEED | model:PATH ({k} expands) | tcp://host:port")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--timeout", type=float, default=30.0)
    p.add_argument("--out", help="report JSON path (a .tsv table is written alongside)")
    data_opts(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("serve", help="host a built-in agent over the wire protocol")
    p.add_argument("--endpoint", required=True, help="tcp://host:port or stdio://")
    p.add_argument("--agent", default="oracle", help="oracle | uniform:SEED | model:PATH")
    p.add_argument("--manifest")
    p.add_argument("--languages")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--timeout", type=float, default=30.0)
    data_opts(p)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("report", help="re-render the TSV table from a report JSON")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("SIMULSTREAM_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SimulStreamError as exc:
        log.error("%s", exc)
        return exc.exit_code
    except KeyboardInterrupt:
        return 130


if __name__ == "__main__":
    sys.exit(main())
