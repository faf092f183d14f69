import shutil
import subprocess
import sys

import pytest

from simulstream.agents import OracleAgent
from simulstream.cli import main
from simulstream.protocol import serve_agent


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli")
    assert main(["gen", "--out", str(out), "--sentences", "train=60,test=12", "--dim", "8"]) == 0
    return out


def test_gen_prints_manifests(tmp_path, capsys):
    assert main(["gen", "--out", str(tmp_path), "--sentences", "test=2", "--dim", "8",
                 "--shift", "de=0"]) == 0
    assert capsys.readouterr().out.strip() == f"test\t{tmp_path / 'test.tsv'}"
    assert (tmp_path / "test.tsv").read_text().splitlines()[0].endswith("ref_de")


def test_train_eval_report(data, tmp_path, capsys):
    for k in (1, 2, 3, 4):
        assert main(["train", "--manifest", str(data / "train.tsv"), "--languages", "es,fr",
                     "--k", str(k), "--variant", "separate", "--out", str(tmp_path / f"k{k}.json"),
                     "--dim", "8"]) == 0
    assert "NLL/token" in capsys.readouterr().out
    out = tmp_path / "report.json"
    assert main(["eval", "--manifest", str(data / "test.tsv"), "--languages", "es,fr", "--sweep",
                 "1,2,3,4", "--agent", f"model:{tmp_path}/k{{k}}.json", "--dim", "8",
                 "--out", str(out)]) == 0
    table = capsys.readouterr().out
    assert table == out.with_suffix(".tsv").read_text()
    rows = {line.split("\t")[0]: line.split("\t")[1:] for line in table.splitlines()}
    assert rows["language"] == ["k=1", "k=2", "k=3", "k=4"]
    assert rows["es"][1:] == ["100.00"] * 3
    assert rows["fr"][3] == "100.00"
    assert main(["report", "--in", str(out)]) == 0
    assert capsys.readouterr().out == table
    assert main(["report", "--in", str(out), "--out", str(tmp_path / "again.tsv")]) == 0
    assert (tmp_path / "again.tsv").read_text() == table


def test_async_eval(data, capsys):
    assert main(["eval", "--manifest", str(data / "test.tsv"), "--languages", "es,fr",
                 "--mode", "async", "--k", "es=4,fr=6", "--dim", "8"]) == 0
    assert capsys.readouterr().out.splitlines()[1] == "async\t4\t6\t100.00\t100.00"


@pytest.mark.parametrize("argv", [
    ["eval", "--languages", "es", "--k", "0"],
    ["eval", "--languages", "es,fr", "--mode", "sync", "--k", "es=1,fr=2"],
    ["eval", "--languages", "es"],
    ["eval", "--languages", "es", "--k", "2", "--agent", "bogus"],
    ["eval", "--languages", "es", "--k", "2", "--workers", "0"],
])
def test_config_errors_exit_1(data, argv):
    argv = argv[:1] + ["--manifest", str(data / "test.tsv"), "--dim", "8"] + argv[1:]
    assert main(argv) == 1


def test_data_errors_exit_2(data, tmp_path):
    assert main(["eval", "--manifest", str(tmp_path / "missing.tsv"), "--languages", "es", "--k", "1"]) == 2
    assert main(["eval", "--manifest", str(data / "test.tsv"), "--languages", "de", "--k", "1",
                 "--dim", "8"]) == 2
    (tmp_path / "r.json").write_text("{}")
    assert main(["report", "--in", str(tmp_path / "r.json")]) == 2


def test_all_failed_exit_3(data):
    server = serve_agent(lambda: OracleAgent({}), "tcp://127.0.0.1:0", background=True)
    try:
        assert main(["eval", "--manifest", str(data / "test.tsv"), "--languages", "es", "--k", "2",
                     "--agent", server.endpoint, "--dim", "8"]) == 3
    finally:
        server.shutdown()
        server.server_close()


def test_serve_needs_inputs():
    assert main(["serve", "--endpoint", "stdio://", "--agent", "oracle"]) == 1
    assert main(["serve", "--endpoint", "stdio://", "--agent", "uniform:1"]) == 1
    assert main(["serve", "--endpoint", "nowhere", "--agent", "model:/nope.json"]) == 1


def test_module_entry_point_and_log_env(data):
    env = {"SIMULSTREAM_LOG": "info", "PATH": ""}
    proc = subprocess.run([sys.executable, "-m", "simulstream", "eval", "--manifest",
                           str(data / "test.tsv"), "--languages", "es", "--k", "3", "--dim", "8"],
                          capture_output=True, text=True, env=env, timeout=60)
    assert proc.returncode == 0
    assert "BLEU=100.00" in proc.stderr
    assert proc.stdout.startswith("language\tk=3\n")


@pytest.mark.skipif(shutil.which("simulstream") is None, reason="console script not installed")
def test_console_script():
    proc = subprocess.run(["simulstream", "--help"], capture_output=True, text=True, timeout=60)
    assert proc.returncode == 0 and "gen" in proc.stdout
