import csv
import json

import pytest

from pilotdec.cli import DECODE_COLUMNS, main
from pilotdec.sim import AGGREGATE_COLUMNS


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "corpus.json"
    assert run("gen", "--n", 8, "--seed", 7, "--mix", "0.1:0.5,0.7:0.5", "--out", path) == 0
    return path


def read_csv(path):
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# pilotdec ")
    return list(csv.DictReader(lines[1:]))


class TestGen:
    def test_byte_identical(self, tmp_path):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        assert run("gen", "--n", 100, "--seed", 7, "--out", a) == 0
        assert run("gen", "--n", 100, "--seed", 7, "--out", b) == 0
        assert a.read_bytes() == b.read_bytes()
        doc = json.loads(a.read_text())
        assert all(2.0 <= u["duration_s"] <= 6.0 for u in doc["utterances"])

    def test_with_lattices(self, tmp_path):
        out = tmp_path / "l.json"
        assert run("gen", "--n", 2, "--with-lattices", "--out", out) == 0
        assert len(json.loads(out.read_text())["lattices"]) == 2

    def test_bad_mix(self, tmp_path, capsys):
        assert run("gen", "--n", 4, "--mix", "0.1:0.3", "--out", tmp_path / "x.json") == 2
        assert "difficulty_mix" in capsys.readouterr().err

    def test_bad_config_key(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text('{"beam": {"nope": 1}}')
        assert run("gen", "--config", cfg, "--out", tmp_path / "x.json") == 2
        assert "beam.nope" in capsys.readouterr().err


class TestDecode:
    def test_columns_and_flags(self, corpus, tmp_path):
        vanilla, opt = tmp_path / "v.csv", tmp_path / "o.csv"
        assert run("decode", "--corpus", corpus, "--out", vanilla) == 0
        assert run("decode", "--corpus", corpus, "--all-opts", "--out", opt) == 0
        rows_v, rows_o = read_csv(vanilla), read_csv(opt)
        assert list(rows_v[0]) == list(DECODE_COLUMNS)
        assert all(r["collapse_hits"] == "0" and r["leap_rounds"] == "0" for r in rows_v)
        tot = lambda rows: sum(int(r["attn_evals"]) for r in rows)
        assert tot(rows_o) < tot(rows_v)

    def test_flags_off_match_vanilla(self, corpus, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        run("decode", "--corpus", corpus, "--out", a)
        cfg = tmp_path / "cfg.json"
        cfg.write_text('{"beam": {"collapse": false, "early_term": false, "leap": false}}')
        run("decode", "--corpus", corpus, "--config", cfg, "--out", b)
        assert a.read_bytes() == b.read_bytes()

    def test_missing_file(self, capsys):
        assert run("decode", "--corpus", "/nonexistent/corpus.json") == 3
        assert "not found" in capsys.readouterr().err

    def test_stdout(self, corpus, capsys):
        assert run("decode", "--corpus", corpus) == 0
        assert capsys.readouterr().out.splitlines()[1].startswith("index,")


class TestSimulateAndSweep:
    def test_simulate_log(self, corpus, tmp_path):
        log, agg = tmp_path / "s.jsonl", tmp_path / "a.csv"
        assert run("simulate", "--corpus", corpus, "--theta", 3, "--out", log, "--agg", agg) == 0
        lines = [json.loads(l) for l in log.read_text().splitlines()]
        assert "config" in lines[0] and len(lines) == 9
        assert [l["index"] for l in lines[1:]] == list(range(8))
        assert list(read_csv(agg)[0]) == list(AGGREGATE_COLUMNS)

    def test_sweep_endpoints(self, corpus, tmp_path):
        out = tmp_path / "w.csv"
        assert run("sweep", "--corpus", corpus, "--theta", "inf,4,2", "--alpha", "0.5", "--tau", "1,0.5", "--out", out) == 0
        rows = read_csv(out)
        assert len(rows) == 2 * 6
        assert rows[0]["label"] == "always_local" and rows[5]["label"] == "always_offload"
        assert {r["tau_s"] for r in rows} == {"1.0", "0.5"}

    def test_bad_list(self, corpus):
        assert run("sweep", "--corpus", corpus, "--theta", "a,b") == 2
        assert run("sweep", "--corpus", corpus, "--tau", "0") == 2
