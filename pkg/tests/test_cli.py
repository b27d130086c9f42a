import numpy as np
import pytest
import yaml

from nictr.cli import main
from nictr.metrics import parse_table
from nictr.sampler import SamplerBudget, ghn_sample

from conftest import DATA

FIX = str(DATA / "fixture12")
SMALL_SYNTH = ["--users", "60", "--items", "40", "--publishers", "6", "--articles", "30",
               "--train", "120", "--test", "80"]
SMALL_TRAIN = {"epochs": 1, "batch_size": 16, "resamples": 2,
               "model": {"hidden": 8, "heads": 4, "layers": 1, "ffn": 8, "embed": 4, "mlp_hidden": 4},
               "sampler": {"budgets": {"user": 2, "item": 2, "publisher": 1, "article": 1}}}


def test_no_args_is_usage_error(capsys):
    assert main([]) == 1
    assert "usage" in capsys.readouterr().err


def test_bad_flag_and_help(capsys):
    assert main(["sample", "--nope"]) == 1
    assert main(["train", "--help"]) == 0


def test_build_graph_counts(capsys):
    assert main(["build-graph", "--graph", str(DATA / "tiny")]) == 0
    out = capsys.readouterr().out
    assert "nodes\tuser\t2" in out and "duplicate_edges\t1" in out


def test_data_error_exit_code(tmp_path, capsys):
    (tmp_path / "nodes.tsv").write_text("u1\tuser\tage:9\n")
    (tmp_path / "edges.tsv").write_text("")
    (tmp_path / "schema.yaml").write_text((DATA / "tiny/schema.yaml").read_text())
    assert main(["build-graph", "--graph", str(tmp_path)]) == 2
    assert "nodes.tsv:1:" in capsys.readouterr().err


def test_sample_matches_library(capsys, fixture12):
    code = main(["sample", "--graph", FIX, "--target", "u1", "--budgets", "user=2,item=2,publisher=1",
                 "--max-hops", "2", "--seed", "42"])
    assert code == 0
    lines = [l.split("\t") for l in capsys.readouterr().out.strip().splitlines()]
    want = ghn_sample(fixture12, "u1", SamplerBudget({"user": 2, "item": 2, "publisher": 1}, 2),
                      rng=np.random.default_rng(42))
    assert {(fixture12.index[i], int(h)) for i, _, h in lines} == set(want.items())


def test_sample_pair_with_masks(capsys):
    assert main(["sample", "--graph", FIX, "--target", "u1", "--item", "i3", "--emit-masks"]) == 0
    out = capsys.readouterr().out
    assert out.count("# mask") == 4
    assert out.splitlines()[0].startswith("u1\tuser\t0\t")


def test_sample_other_samplers(capsys):
    assert main(["sample", "--graph", FIX, "--target", "u1", "--sampler", "nodewise", "--fanout", "2"]) == 0
    assert main(["sample", "--graph", FIX, "--target", "u1", "--sampler", "metapath",
                 "--metapaths", "user-publisher-item"]) == 0
    assert main(["sample", "--graph", FIX, "--target", "ghost"]) == 2


def test_synth_train_eval_round_trip(tmp_path, capsys):
    data = tmp_path / "data"
    assert main(["synth", "--out", str(data), "--seed", "3", *SMALL_SYNTH]) == 0
    cfg = tmp_path / "train.yaml"
    cfg.write_text(yaml.safe_dump(SMALL_TRAIN))
    ckpt = tmp_path / "m.ckpt"
    code = main(["train", "--graph", str(data), "--train", str(data / "train.tsv"), "--config", str(cfg),
                 "--seed", "1", "--out", str(ckpt), "--log", str(tmp_path / "log.txt")])
    assert code == 0
    assert (tmp_path / "log.txt").read_text().startswith("epoch=0\tloss=")
    capsys.readouterr()
    assert main(["eval", "--graph", str(data), "--checkpoint", str(ckpt), "--test", str(data / "test.tsv"),
                 "--buckets", "0,3", "--report", str(tmp_path / "r.tsv")]) == 0
    rows = parse_table(capsys.readouterr().out)
    assert rows[0]["name"] == "all" and 0.0 <= float(rows[0]["auc"]) <= 1.0
    assert [r["name"] for r in rows[1:]] == ["bucket:0-2", "bucket:>2"]
    assert (tmp_path / "r.tsv").exists()


def test_config_file_flags_override(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("users: 30\nitems: 20\npublishers: 3\narticles: 10\ntrain: 50\ntest: 10\nseed: 5\n")
    assert main(["synth", "--out", str(tmp_path / "a"), "--config", str(cfg), "--users", "25"]) == 0
    written = yaml.safe_load((tmp_path / "a/synth.yaml").read_text())
    assert written["users"] == 25 and written["items"] == 20 and written["seed"] == 5


def test_train_missing_flags_and_numeric_failure(tmp_path):
    assert main(["train", "--graph", FIX]) == 1
    (tmp_path / "bad.yaml").write_text("lr: .nan\n")
    (tmp_path / "t.tsv").write_text("u1\ti3\t0\nu2\ti1\t1\n")
    code = main(["train", "--graph", FIX, "--train", str(tmp_path / "t.tsv"), "--config",
                 str(tmp_path / "bad.yaml"), "--out", str(tmp_path / "m")])
    assert code == 3


def test_ablate_small(tmp_path, capsys):
    data = tmp_path / "data"
    assert main(["synth", "--out", str(data), *SMALL_SYNTH, "--train", "40", "--test", "40"]) == 0
    cfg = tmp_path / "train.yaml"
    cfg.write_text(yaml.safe_dump(SMALL_TRAIN))
    capsys.readouterr()
    assert main(["ablate", "--graph", str(data), "--train", str(data / "train.tsv"), "--test",
                 str(data / "test.tsv"), "--config", str(cfg), "--subsets", "IG,SG,CG,PG;PG",
                 "--seeds", "0"]) == 0
    rows = parse_table(capsys.readouterr().out)
    assert len(rows) == 2
    assert main(["ablate", "--graph", str(data), "--train", str(data / "train.tsv"), "--test",
                 str(data / "test.tsv"), "--subsets", "XX"]) == 2
