import json

import pytest

from dyncf.checkpoint import load_checkpoint
from dyncf.cli import main
from dyncf.config import OUTPUT_ENV, ConfigError, RunConfig, load_config, parse_grid


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    path = root / "events.csv"
    assert main(["preprocess", "--synthetic", "--users", "150", "--items", "60", "--days", "30",
                 "--seed", "1", "-o", str(path)]) == 0
    return path


def ini(path, body):
    path.write_text(body)
    return path


# ------------------------------------------------------------------- config


def test_missing_required_key_names_it(tmp_path):
    cfg = ini(tmp_path / "c.ini", "[run]\ndataset = x.csv\nmodel = psirec\n")
    with pytest.raises(ConfigError, match="seed"):
        load_config(cfg)


def test_cli_missing_key_exit_code(tmp_path, capsys):
    cfg = ini(tmp_path / "c.ini", "[run]\nmodel = psirec\nseed = 1\n")
    assert main(["replay", "--config", str(cfg), "--seed", "1"]) == 2
    assert "dataset" in capsys.readouterr().err


def test_invalid_value_names_key(tmp_path):
    cfg = ini(tmp_path / "c.ini", "[run]\ndataset = x\nmodel = psirec\nseed = 1\nrank = ten\n")
    with pytest.raises(ConfigError, match="rank"):
        load_config(cfg)


def test_unknown_key_rejected(tmp_path):
    cfg = ini(tmp_path / "c.ini", "[run]\ndataset = x\nmodel = psirec\nseed = 1\nrnak = 4\n")
    with pytest.raises(ConfigError, match="rnak"):
        load_config(cfg)


def test_overrides_win_over_file(tmp_path):
    cfg = ini(tmp_path / "c.ini", "[run]\ndataset = x\nmodel = psirec\nseed = 1\nrank = 4\n")
    out = load_config(cfg, {"rank": 7, "seed": None})
    assert out.rank == 7 and out.seed == 1


def test_sweep_section_and_grid_parsing(tmp_path):
    cfg = ini(tmp_path / "c.ini", "[run]\ndataset = x\nmodel = tirec\nseed = 1\n"
                                  "[sweep]\nranks = 4,4,2; 6,6,3\nf = 0, 2\n")
    out = load_config(cfg)
    assert out.sweep == {"ranks": [(4, 4, 2), (6, 6, 3)], "f": [0.0, 2.0]}
    assert parse_grid("rank", "10,20") == [10, 20]


def test_output_dir_env(monkeypatch):
    monkeypatch.setenv(OUTPUT_ENV, "/tmp/elsewhere")
    assert RunConfig("x", "psirec", 1).output_dir == "/tmp/elsewhere"


def test_incompatible_strategy_is_config_error():
    with pytest.raises(ConfigError, match="strategy"):
        RunConfig("x", "tireca", 1, strategy="incremental")


# ------------------------------------------------------------------- commands


def replay_args(dataset, out, model="psirec", *extra):
    return ["replay", "--dataset", str(dataset), "--model", model, "--seed", "3", "--rank", "5",
            "--ranks", "6,6,3", "--L", "5", "--train-frac", "0.5", "--n-chunks", "3",
            "--output-dir", str(out), "--quiet", *extra]


@pytest.mark.parametrize("model", ["psirec", "tireca"])
def test_replay_is_deterministic(dataset, tmp_path, model):
    assert main(replay_args(dataset, tmp_path / "a", model)) == 0
    assert main(replay_args(dataset, tmp_path / "b", model)) == 0
    for name in ("report.csv", "summary.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_replay_relative_dataset_in_config(dataset, tmp_path):
    cfg = ini(dataset.parent / "run.ini", f"[run]\ndataset = {dataset.name}\nmodel = svd\nseed = 2\n"
                                          "rank = 4\ntrain_frac = 0.5\nn_chunks = 2\n")
    assert main(["replay", "--config", str(cfg), "--seed", "2", "--output-dir", str(tmp_path), "--quiet"]) == 0
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["config"]["run"]["model"] == "svd"


def test_replay_missing_seed_is_usage_error(dataset):
    with pytest.raises(SystemExit) as exc:
        main(["replay", "--dataset", str(dataset), "--model", "psirec"])
    assert exc.value.code == 2


def test_missing_dataset_file_exit_one(tmp_path):
    assert main(replay_args(tmp_path / "nope.csv", tmp_path)) == 1


def test_train_writes_checkpoint(dataset, tmp_path):
    ck = tmp_path / "m.ckpt"
    assert main(["train", "--dataset", str(dataset), "--model", "tireca", "--seed", "1", "--ranks", "5,5,2",
                 "--L", "4", "--train-frac", "0.5", "--n-chunks", "2", "--checkpoint", str(ck)]) == 0
    state, cfg = load_checkpoint(ck)
    assert state.ranks == (5, 5, 2) and cfg["model"] == "tireca"


def test_sweep_and_report(dataset, tmp_path):
    out = tmp_path / "sweep"
    assert main(["sweep", "--dataset", str(dataset), "--model", "psirec", "--seed", "1", "--train-frac", "0.5",
                 "--n-chunks", "2", "--output-dir", str(out), "--grid", "rank=3,6"]) == 0
    rows = (out / "sweep.csv").read_text().splitlines()
    assert rows[0] == "run,rank,hr,mrr,wji" and len(rows) == 3
    best = json.loads((out / "sweep_best.json").read_text())
    assert best["n_runs"] == 2
    runs = sorted(p for p in out.iterdir() if p.is_dir())
    rep = tmp_path / "report"
    assert main(["report", *map(str, runs), "-o", str(rep)]) == 0
    assert (rep / "comparison.csv").exists()
    pngs = sorted(p.name for p in rep.glob("*.png"))
    assert {"hr.png", "wji.png", "update_time.png"} <= set(pngs)
    assert all((rep / p).stat().st_size > 1000 for p in pngs)


def test_report_rejects_non_run_dir(tmp_path):
    assert main(["report", str(tmp_path), "-o", str(tmp_path / "r")]) == 2


def test_bad_grid_spec(dataset, tmp_path):
    assert main(["sweep", "--dataset", str(dataset), "--model", "psirec", "--seed", "1",
                 "--output-dir", str(tmp_path), "--grid", "rank"]) == 2
