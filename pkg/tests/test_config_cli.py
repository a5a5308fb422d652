import csv
import json

import numpy as np
import pytest

from overlap_gae.cli import main
from overlap_gae.config import ConfigError, from_mapping, parse_config
from overlap_gae.graph import load_dataset, read_cover


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    d = tmp_path_factory.mktemp("planted")
    assert main(["synth", "--out-dir", str(d), "--block-size", "8", "--seed", "1"]) == 0
    return d


def _config(tmp_path, dataset, **extra):
    values = {
        "edges": str(dataset / "edges.txt"),
        "features": str(dataset / "features.csv"),
        "cover": str(dataset / "cover.txt"),
        "heads": 2, "hidden_per_head": 4, "embed_per_head": 3,
        "epochs": 5, "runs": 2,
        **extra,
    }
    p = tmp_path / "config.json"
    p.write_text(json.dumps(values, indent=2))
    return p


def test_defaults_from_empty_config(tmp_path, dataset):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"edges": str(dataset / "edges.txt"), "features": str(dataset / "features.csv"),
                             "cover": str(dataset / "cover.txt")}))
    cfg = parse_config(p).check()
    t = cfg.train
    assert (t.lr, t.alpha, t.beta, t.heads) == (0.006, 0.5, 1e-6, 8)
    assert (t.hidden_per_head, t.embed_per_head, t.epochs, t.runs) == (64, 16, 500, 10)


def test_unknown_key_is_named(tmp_path):
    p = tmp_path / "c.json"
    p.write_text('{\n  "lr": 0.01,\n  "dropout": 0.5\n}\n')
    with pytest.raises(ConfigError, match=r"dropout") as exc:
        parse_config(p)
    assert "c.json:3" in str(exc.value)


def test_invalid_values():
    with pytest.raises(ConfigError):
        from_mapping({"lr": -1})
    with pytest.raises(ConfigError):
        from_mapping({"epochs": "ten"})
    with pytest.raises(ConfigError):
        from_mapping({"normalize_features": 1})
    with pytest.raises(ConfigError):
        from_mapping({"label_rates": [1.5]})


def test_overrides_win(tmp_path, dataset):
    p = _config(tmp_path, dataset, lr=0.01)
    cfg = parse_config(p, {"lr": 0.02, "modularity_form": "Z"})
    assert cfg.train.lr == 0.02 and cfg.train.modularity_form == "embedding"
    assert parse_config(p).train.lr == 0.01


def test_relative_paths_resolve_against_config(tmp_path, dataset):
    for name in ("edges.txt", "features.csv", "cover.txt"):
        (tmp_path / name).write_bytes((dataset / name).read_bytes())
    p = tmp_path / "c.json"
    p.write_text('{"edges": "edges.txt", "features": "features.csv", "cover": "cover.txt"}')
    parse_config(p).check()


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_sweep_table_shape(tmp_path, dataset, capsys):
    out = tmp_path / "out"
    cfg = _config(tmp_path, dataset)
    code = main(["sweep", "--config", str(cfg), "--label-rate", "10,25", "--p-mis", "0,0.2,0.4", "--out-dir", str(out)])
    assert code == 0
    rows = _rows(out / "results.csv")
    assert rows[0] == ["label_rate", "p_mis", "runs", "onmi_mean", "onmi_std", "f1_mean", "f1_std", "status"]
    assert len(rows) == 1 + 2 * 3
    assert [r[:2] for r in rows[1:3]] == [["0.1000", "0.0000"], ["0.1000", "0.2000"]]
    assert "onmi_mean" in capsys.readouterr().out
    assert len(_rows(out / "runs.csv")) == 1 + 6 * 2
    assert len(list((out / "covers").iterdir())) == 12
    summary = json.loads((out / "summary.json").read_text())
    assert summary["seed"] == 0 and summary["graph"]["nodes"] == 16


def test_sweep_is_byte_identical(tmp_path, dataset):
    cfg = _config(tmp_path, dataset)
    outs = [tmp_path / "a", tmp_path / "b"]
    for out in outs:
        assert main(["sweep", "--config", str(cfg), "--p-mis", "0,0.5", "--out-dir", str(out)]) == 0
    skip = {"run.log", "summary.json"}
    files = sorted(p.relative_to(outs[0]) for p in outs[0].rglob("*") if p.is_file() and p.name not in skip)
    assert files
    for rel in files:
        assert (outs[0] / rel).read_bytes() == (outs[1] / rel).read_bytes(), rel


def test_parallel_jobs_match_serial(tmp_path, dataset):
    cfg = _config(tmp_path, dataset, runs=1)
    a, b = tmp_path / "serial", tmp_path / "parallel"
    assert main(["sweep", "--config", str(cfg), "--p-mis", "0,0.5", "--out-dir", str(a)]) == 0
    assert main(["sweep", "--config", str(cfg), "--p-mis", "0,0.5", "--out-dir", str(b), "--jobs", "2"]) == 0
    assert (a / "results.csv").read_bytes() == (b / "results.csv").read_bytes()


def test_train_with_no_epochs(tmp_path, dataset):
    out = tmp_path / "t"
    cfg = _config(tmp_path, dataset, runs=1, epochs=0)
    assert main(["train", "--config", str(cfg), "--out-dir", str(out), "--seed", "3"]) == 0
    rows = _rows(out / "results.csv")
    assert len(rows) == 2 and rows[1][-1] == "ok"
    assert 0.0 <= float(rows[1][3]) <= 1.0
    cover = read_cover(out / "covers" / "lr0.1000_pmis0.0000_run0.txt", num_nodes=16)
    assert set().union(*cover.communities) == set(range(16))


def test_eval_prints_four_decimals(tmp_path, capsys):
    a, b = tmp_path / "a.txt", tmp_path / "b.txt"
    a.write_text("0 1 2 3\n")
    b.write_text("0 1\n2 3\n")
    assert main(["eval", str(a), str(b)]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[1] == "f1 0.6667"
    assert out[0].startswith("onmi ") and len(out[0].split()[1]) == 6


def test_perturb_writes_swapped_rows(tmp_path, dataset):
    out = tmp_path / "noisy.csv"
    args = ["perturb", "--edges", str(dataset / "edges.txt"), "--features", str(dataset / "features.csv"),
            "--p-mis", "0.5", "--seed", "2", "--output", str(out)]
    assert main(args) == 0
    g = load_dataset(dataset / "edges.txt", dataset / "features.csv")
    h = load_dataset(dataset / "edges.txt", out)
    X, Y = g.dense_features(), h.dense_features()
    assert np.count_nonzero((X != Y).any(axis=1)) <= 8
    assert np.array_equal(np.sort(X, axis=0), np.sort(Y, axis=0))


def test_validate(tmp_path, dataset, capsys):
    args = ["validate", "--edges", str(dataset / "edges.txt"), "--features", str(dataset / "features.csv"),
            "--cover", str(dataset / "cover.txt")]
    assert main(args) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["nodes"] == 16 and info["communities"] == 2
    bad = tmp_path / "f.csv"
    bad.write_text("1\n")
    assert main(["validate", "--edges", str(dataset / "edges.txt"), "--features", str(bad)]) == 1


def test_missing_paths_exit_code(tmp_path, capsys):
    assert main(["sweep", "--edges", str(tmp_path / "nope.txt")]) == 2
    assert "error:" in capsys.readouterr().err
