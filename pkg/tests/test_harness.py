import json

import pytest

from simulstream.agents import Agent, EOS, OracleAgent
from simulstream.errors import ConfigError, DataError
from simulstream.harness import (RunConfig, evaluate, load_report, parse_k, render_tsv,
                                 report_payload, resolve_agent, run_eval, schedule_from_args,
                                 sweep_schedules, train_cmd)
from simulstream.policy import Schedule
from simulstream.protocol import serve_agent
from simulstream.stream import load_manifest
from simulstream.synthetic import SyntheticConfig, generate_synthetic

LANGS = ["es", "fr"]


def cfg_for(manifest, schedule, **kw):
    kw.setdefault("dim", 8)
    return RunConfig(str(manifest), LANGS, schedule, **kw)


@pytest.fixture(scope="module")
def test_manifest(small_corpus_dir):
    return small_corpus_dir / "test.tsv"


class TestParsing:
    def test_parse_k(self):
        assert parse_k("4", LANGS) == {"es": 4, "fr": 4}
        assert parse_k("es=4, fr=6") == {"es": 4, "fr": 6}
        with pytest.raises(ConfigError):
            parse_k("4")
        with pytest.raises(ConfigError):
            parse_k("es=four")

    def test_run_config_checks(self, test_manifest):
        with pytest.raises(ConfigError):
            cfg_for(test_manifest, Schedule.sync(2, LANGS), workers=0)
        with pytest.raises(ConfigError):
            RunConfig(str(test_manifest), ["es"], Schedule.sync(2, LANGS))
        with pytest.raises(ConfigError):
            schedule_from_args("sync", {"es": 1, "fr": 2})
        with pytest.raises(ConfigError):
            schedule_from_args("lazy", {"es": 1})

    @pytest.mark.parametrize("spec", ["mystery", "model:/nonexistent/{k}.json", "stdio://",
                                      "tcp://127.0.0.1:1", "uniform:abc"])
    def test_unresolvable_agents(self, test_manifest, spec):
        cfg = cfg_for(test_manifest, Schedule.sync(2, LANGS), agent=spec)
        with pytest.raises(ConfigError):
            resolve_agent(spec, cfg, cfg.schedule)


class TestEval:
    def test_oracle_is_perfect(self, test_manifest):
        report = run_eval(cfg_for(test_manifest, Schedule.asynchronous({"es": 2, "fr": 5})))
        (run,) = report["runs"]
        for lang in LANGS:
            assert run["languages"][lang]["bleu"] == 100.0
            assert run["languages"][lang]["n_utterances"] == 10
        assert run["failures"] == []
        assert report["config"]["languages"] == LANGS
        assert report["runtime"]["kernel_backend"] in ("cython", "python")

    def test_sweep_table_shape(self, test_manifest):
        schedules = sweep_schedules(LANGS, [3, 4, 5, 6])
        report = run_eval(cfg_for(test_manifest, schedules[0]), schedules)
        lines = render_tsv(report).splitlines()
        assert lines[0].split("\t") == ["language", "k=3", "k=4", "k=5", "k=6"]
        assert [line.split("\t")[0] for line in lines[1:]] == LANGS
        assert all(len(line.split("\t")) == 5 for line in lines)

    def test_async_table_shape(self, test_manifest):
        schedules = [Schedule.asynchronous({"es": 6, "fr": 4}), Schedule.asynchronous({"es": 4, "fr": 6})]
        report = run_eval(cfg_for(test_manifest, schedules[0]), schedules)
        lines = render_tsv(report).splitlines()
        assert lines[0].split("\t") == ["mode", "k_es", "k_fr", "bleu_es", "bleu_fr"]
        assert lines[1:] == ["async\t6\t4\t100.00\t100.00", "async\t4\t6\t100.00\t100.00"]

    def test_deterministic_and_worker_independent(self, test_manifest, tmp_path):
        schedule = Schedule.sync(2, LANGS)
        payloads = []
        for workers, name in ((1, "a"), (1, "b"), (4, "c")):
            report = run_eval(cfg_for(test_manifest, schedule, agent="uniform:3", workers=workers,
                                      out=str(tmp_path / f"{name}.json")))
            payloads.append(report_payload(report))
        assert payloads[0] == payloads[1] == payloads[2]
        assert report_payload(load_report(tmp_path / "a.json")) == payloads[0]
        assert (tmp_path / "a.tsv").read_bytes() == (tmp_path / "c.tsv").read_bytes()

    def test_failures_are_recorded_and_run_continues(self, test_manifest):
        corpus = load_manifest(test_manifest, LANGS, dim=8)
        known = {u.id: u.references for u in corpus[:4]}
        server = serve_agent(lambda: OracleAgent(known), "tcp://127.0.0.1:0", background=True)
        try:
            report = run_eval(cfg_for(test_manifest, Schedule.sync(3, LANGS), agent=server.endpoint,
                                      workers=3))
        finally:
            server.shutdown()
            server.server_close()
        (run,) = report["runs"]
        assert len(run["failures"]) == 6
        assert all("no references" in f["reason"] for f in run["failures"])
        assert run["languages"]["es"]["n_utterances"] == 4
        assert run["languages"]["es"]["bleu"] == 100.0

    def test_undefined_latency_is_counted(self, test_manifest):
        class Silent(Agent):
            def write(self, lang, slot):
                return EOS if lang == "es" else "x"

        corpus = load_manifest(test_manifest, LANGS, dim=8)
        run = evaluate(corpus, Schedule.sync(2, LANGS), lambda u: Silent())
        es, fr = run["languages"]["es"], run["languages"]["fr"]
        assert es["n_latency_undefined"] == 10 and es["AL"] is None and es["bleu"] == 0.0
        assert fr["n_latency_undefined"] == 0 and fr["n_truncated"] == 10
        assert fr["AP"] == pytest.approx(sum(
            u["languages"]["fr"]["AP"] for u in run["utterances"]) / 10)

    def test_oracle_latency_means(self, test_manifest):
        run = run_eval(cfg_for(test_manifest, Schedule.sync(3, LANGS)))["runs"][0]
        for lang in LANGS:
            res = run["languages"][lang]
            per = [u["languages"][lang] for u in run["utterances"]]
            assert res["AL"] == pytest.approx(sum(p["AL"] for p in per) / len(per))
            assert all(p["g"][0] == 3 for p in per)

    def test_load_report_errors(self, tmp_path):
        with pytest.raises(DataError):
            load_report(tmp_path / "nope.json")
        (tmp_path / "x.json").write_text(json.dumps({"format": "other"}))
        with pytest.raises(DataError):
            load_report(tmp_path / "x.json")

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(DataError):
            run_eval(RunConfig(str(tmp_path / "none.tsv"), LANGS, Schedule.sync(1, LANGS)))


class TestTraining:
    def test_shift0_k1_near_deterministic(self, tmp_path):
        paths = generate_synthetic(SyntheticConfig(sentences={"train": 200}, shifts={"es": 0}, dim=8),
                                   tmp_path / "data")
        summary = train_cmd(paths["train"], ["es"], "separate", {"es": 1}, 1e-3, tmp_path / "m.json",
                            dim=8)
        assert summary["final_nll_per_token"] < 0.1
        assert summary["initial_nll_per_token"] > summary["final_nll_per_token"]
        log = json.loads((tmp_path / "m.json.log.json").read_text())
        assert log == json.loads(json.dumps(summary))

    def test_async_training_reaches_100_at_own_k(self, tmp_path):
        paths = generate_synthetic(SyntheticConfig(sentences={"train": 200, "test": 30},
                                                   shifts={"es": 0, "fr": 2}, dim=8), tmp_path / "data")
        k = {"es": 1, "fr": 3}
        train_cmd(paths["train"], LANGS, "unified", k, 1e-3, tmp_path / "m.json", dim=8)
        schedule = Schedule.asynchronous(k)
        report = run_eval(RunConfig(str(paths["test"]), LANGS, schedule,
                                    agent=f"model:{tmp_path / 'm.json'}", dim=8))
        assert {lang: r["bleu"] for lang, r in report["runs"][0]["languages"].items()} == \
            {"es": 100.0, "fr": 100.0}

    def test_model_path_template(self, tmp_path, small_corpus_dir):
        for k in (1, 2):
            train_cmd(small_corpus_dir / "train.tsv", LANGS, "separate", {"es": k, "fr": k}, 1e-3,
                      tmp_path / f"m{k}.json", dim=8)
        schedules = sweep_schedules(LANGS, [1, 2])
        cfg = cfg_for(small_corpus_dir / "test.tsv", schedules[0], agent=f"model:{tmp_path}/m{{k}}.json")
        report = run_eval(cfg, schedules)
        assert [r["schedule"]["k"]["es"] for r in report["runs"]] == [1, 2]

    def test_train_errors(self, tmp_path, small_corpus_dir):
        with pytest.raises(ConfigError):
            train_cmd(small_corpus_dir / "train.tsv", LANGS, "separate", {"es": 1}, 1e-3,
                      tmp_path / "m.json", dim=8)
        (tmp_path / "empty.tsv").write_text("id\tfeatures\tn_frames\ttranscript\tref_es\n")
        with pytest.raises(DataError):
            train_cmd(tmp_path / "empty.tsv", ["es"], "separate", {"es": 1}, 1e-3, tmp_path / "m.json")
