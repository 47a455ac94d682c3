import json
import logging

import numpy as np
import pytest

from ocor import cli
from ocor.config import ConfigError, build_run_config, parse_config_text
from ocor.corpus import RawPair, build_cases, write_cases
from ocor.numerics import load_checkpoint

TINY = """\
# tiny model for fast runs
N = 1
d = 8
H = 2
char_len = 4
d_conv_first = 8
mlp_hidden = 8
epochs = 1
negatives_per_query = 2
learning_rate = 0.001
"""


@pytest.fixture
def tiny_cfg(tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text(TINY)
    return path


@pytest.fixture
def corpus_path(write_corpus, toy_pairs):
    return write_corpus(toy_pairs)


@pytest.fixture
def trained(tmp_path, tiny_cfg, corpus_path):
    out = tmp_path / "run"
    assert cli.main(["train", "--config", str(tiny_cfg), "--corpus", str(corpus_path), "--out", str(out)]) == 0
    return out / cli.CHECKPOINT_NAME


class TestPreprocess:
    def test_stats_and_outputs(self, tmp_path, write_corpus, capsys):
        pairs = [RawPair("a", "sort a list", "sorted(xs)"), RawPair("b", "x", "y = 1"), RawPair("c", "q", "z")]
        out = tmp_path / "tok.jsonl"
        assert cli.main(["preprocess", str(write_corpus(pairs)), str(out)]) == 0
        printed = capsys.readouterr().out
        assert "Number of QC-pairs\t3" in printed
        assert "Avg. tokens in description\t1.67" in printed
        assert json.loads(out.read_text().splitlines()[0])["code_tokens"] == ["sorted", "(", "xs", ")"]
        assert (tmp_path / "tok.jsonl.stats.tsv").read_text() == printed
        assert (tmp_path / "tok.jsonl.tokens.png").stat().st_size > 0

    def test_rerun_identical(self, tmp_path, corpus_path):
        for name in ("a", "b"):
            cli.main(["preprocess", str(corpus_path), str(tmp_path / name)])
        assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()
        assert (tmp_path / "a.tokens.png").read_bytes() == (tmp_path / "b.tokens.png").read_bytes()

    def test_missing_file(self, tmp_path, capsys):
        missing = tmp_path / "nope.jsonl"
        assert cli.main(["preprocess", str(missing), str(tmp_path / "o")]) != 0
        assert str(missing) in capsys.readouterr().err

    def test_bad_line_number(self, tmp_path, capsys):
        bad = tmp_path / "bad.jsonl"
        bad.write_text('{"id": "a", "question": "q", "code": "c"}\n{oops\n')
        assert cli.main(["preprocess", str(bad), str(tmp_path / "o")]) == 1
        assert ":2:" in capsys.readouterr().err


class TestConfig:
    def test_defaults_echo(self, tmp_path, corpus_path, capsys, monkeypatch):
        monkeypatch.delenv("OCOR_CONFIG", raising=False)
        out = tmp_path / "o"
        # zero epochs keeps the full-size default model cheap
        assert cli.main(["train", "--corpus", str(corpus_path), "--epochs", "0", "--out", str(out),
                         "--no-figures"]) == 0
        lines = capsys.readouterr().out.splitlines()
        for expected in ("N = 3", "d = 256", "learning_rate = 0.0001", "dropout_rate = 0.2", "lambda = 0.1"):
            assert expected in lines

    def test_flag_beats_file_and_is_logged(self, caplog):
        with caplog.at_level(logging.WARNING):
            run = build_run_config({"epochs": "3", "d": "16"}, {"epochs": 7})
        assert run.train.epochs == 7 and run.model.d == 16
        assert "epochs" in caplog.text

    def test_env_default(self, tiny_cfg, monkeypatch):
        from ocor.config import load_run_config

        monkeypatch.setenv("OCOR_CONFIG", str(tiny_cfg))
        assert load_run_config().model.d == 8

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="bogus"):
            build_run_config({"bogus": "1"})

    def test_malformed_line(self):
        with pytest.raises(ConfigError, match=":2:"):
            parse_config_text("d = 8\nnonsense\n")

    def test_dropout_shared(self):
        run = build_run_config({"dropout": "0.3"})
        assert run.model.dropout_rate == run.train.dropout_rate == 0.3


class TestTrain:
    def test_outputs(self, trained):
        out = trained.parent
        for name in ("config.txt", "train_log.jsonl", "loss_curve.png"):
            assert (out / name).exists()
        _, header = load_checkpoint(trained)
        assert header["extra"]["seed"] == 0
        assert header["config"]["d"] == 8

    def test_zero_epochs_saves_initial_weights(self, tmp_path, tiny_cfg, corpus_path):
        from ocor.model import ModelConfig, init_params

        out = tmp_path / "z"
        assert cli.main(["train", "--config", str(tiny_cfg), "--corpus", str(corpus_path), "--epochs", "0",
                         "--seed", "4", "--out", str(out)]) == 0
        arrays, header = load_checkpoint(out / cli.CHECKPOINT_NAME)
        init = init_params(ModelConfig.from_dict(header["config"]), seed=4).arrays()
        assert all(np.array_equal(arrays[k], init[k].astype(np.float32)) for k in init)

    def test_set_override(self, tmp_path, tiny_cfg, corpus_path, capsys):
        out = tmp_path / "s"
        assert cli.main(["train", "--config", str(tiny_cfg), "--set", "d=12", "--set", "H=3", "--epochs", "0",
                         "--corpus", str(corpus_path), "--out", str(out), "--no-figures"]) == 0
        assert "d = 12" in capsys.readouterr().out

    def test_missing_corpus(self, tmp_path, tiny_cfg, capsys):
        assert cli.main(["train", "--config", str(tiny_cfg), "--corpus", str(tmp_path / "x.jsonl")]) == 1
        assert "x.jsonl" in capsys.readouterr().err

    def test_with_dev_cases(self, tmp_path, tiny_cfg, corpus_path, toy_pairs):
        cases = tmp_path / "dev.jsonl"
        write_cases(build_cases(toy_pairs, 3, seed=0), cases)
        out = tmp_path / "d"
        assert cli.main(["train", "--config", str(tiny_cfg), "--corpus", str(corpus_path),
                         "--dev-cases", str(cases), "--epochs", "2", "--out", str(out), "--no-figures"]) == 0
        record = json.loads((out / "train_log.jsonl").read_text().splitlines()[0])
        assert 0 < record["dev_mrr"] <= 1


class TestEval:
    def test_plain(self, trained, corpus_path, tmp_path, capsys):
        out = tmp_path / "e"
        assert cli.main(["eval", str(trained), "--corpus", str(corpus_path), "--negatives", "4",
                         "--out", str(out)]) == 0
        report = json.loads((out / "eval_report.json").read_text())
        assert report["n_cases"] == 12 and report["seed"] == 0
        ranks = [c["positive_rank"] for c in report["cases"]]
        assert report["mrr"] == pytest.approx(np.mean(1 / np.array(ranks)))
        assert capsys.readouterr().out.startswith("OCoR\tMRR\t")
        assert (out / "rank_histogram.png").exists()
        assert len((out / "ranks.tsv").read_text().splitlines()) == 13

    def test_lambda_zero_matches_external(self, trained, corpus_path, toy_pairs, tmp_path):
        cases = build_cases(toy_pairs, 4, seed=0)
        scores = tmp_path / "ext.jsonl"
        rng = np.random.default_rng(0)
        with scores.open("w") as fh:
            for c in cases:
                for cid in c.candidate_ids:
                    fh.write(json.dumps({"case_id": c.query_id, "candidate_id": cid,
                                         "score": float(rng.uniform(0.01, 0.99))}) + "\n")
        out = tmp_path / "e"
        assert cli.main(["eval", str(trained), "--corpus", str(corpus_path), "--negatives", "4",
                         "--scores", str(scores), "--lambda", "0", "--out", str(out), "--no-figures"]) == 0
        ens = json.loads((out / "eval_report.json").read_text())["ensembles"]["ext"]
        assert ens["ensemble_mrr"] == ens["external_mrr"]

    def test_perfect_sets_with_two_files(self, trained, corpus_path, tmp_path, capsys):
        own = tmp_path / "own.jsonl"
        args = ["eval", str(trained), "--corpus", str(corpus_path), "--negatives", "4", "--no-figures"]
        assert cli.main(args + ["--write-scores", str(own), "--out", str(tmp_path / "a")]) == 0
        copy = tmp_path / "copy.jsonl"
        copy.write_bytes(own.read_bytes())
        assert cli.main(args + ["--scores", str(own), str(copy), "--perfect-sets", "--out", str(tmp_path / "b")]) == 0
        sets = json.loads((tmp_path / "b" / "perfect_sets.json").read_text())
        assert set(sets["sizes"]) == {"ocor", "own", "copy"}
        assert sets["intersections"]["own&copy"] == sets["sizes"]["own"] == sets["sizes"]["ocor"]
        assert "perfect\t" in capsys.readouterr().out

    def test_bad_lambda(self, trained, corpus_path):
        with pytest.raises(SystemExit):
            cli.main(["eval", str(trained), "--corpus", str(corpus_path), "--lambda", "2"])

    def test_missing_checkpoint(self, tmp_path, corpus_path, capsys):
        assert cli.main(["eval", str(tmp_path / "none.ckpt"), "--corpus", str(corpus_path)]) == 1
        assert "none.ckpt" in capsys.readouterr().err


class TestRetrieve:
    @pytest.fixture
    def candidates(self, tmp_path):
        path = tmp_path / "cands.jsonl"
        rows = [{"id": "s", "code": "sorted(xs)"}, {"id": "o", "code": "open(path).read()\nmore"},
                {"id": "j", "code": "json.load(f)"}]
        path.write_text("".join(json.dumps(r) + "\n" for r in rows))
        return path

    def run(self, capsys, *args):
        code = cli.main(["retrieve", *map(str, args)])
        return code, capsys.readouterr()

    def test_top1_is_argmax(self, trained, candidates, capsys):
        _, full = self.run(capsys, trained, "read a file", candidates, "--top-k", "3")
        _, one = self.run(capsys, trained, "read a file", candidates, "--top-k", "1")
        rows = [line.split("\t") for line in full.out.splitlines()]
        scores = [float(r[2]) for r in rows]
        assert scores == sorted(scores, reverse=True)
        assert one.out.splitlines() == full.out.splitlines()[:1]
        assert all(len(r[2].split(".")[1]) == 4 for r in rows)

    def test_clamp_and_determinism(self, trained, candidates, capsys):
        _, a = self.run(capsys, trained, "read a file", candidates, "--top-k", "10")
        _, b = self.run(capsys, trained, "read a file", candidates, "--top-k", "10")
        assert len(a.out.splitlines()) == 3
        assert a.out == b.out

    def test_empty_candidates(self, trained, tmp_path, capsys):
        empty = tmp_path / "empty.jsonl"
        empty.write_text("")
        code, res = self.run(capsys, trained, "q", empty)
        assert code == 1 and "no candidates" in res.err


class TestSmallCommands:
    def test_overlap(self, capsys):
        assert cli.main(["overlap", "joint", "joint_table_b"]) == 0
        assert capsys.readouterr().out == "\tjoint_table_b\njoint\t0.3846\n"

    def test_overlap_empty(self, capsys):
        assert cli.main(["overlap", "   ", "x"]) == 1

    def test_describe_checkpoint(self, trained, capsys):
        assert cli.main(["describe", str(trained)]) == 0
        last = capsys.readouterr().out.splitlines()[-1]
        assert last.startswith("total\t-\t")

    def test_describe_config(self, tiny_cfg, capsys):
        assert cli.main(["describe", "--config", str(tiny_cfg)]) == 0
        assert "char_embedding\t100x8\t800" in capsys.readouterr().out
