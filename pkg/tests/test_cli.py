import json

import pytest

from weakrec import cli, fixture


@pytest.fixture(scope="module")
def prepared(tmp_path_factory):
    out = tmp_path_factory.mktemp("split")
    assert cli.main(["prepare", "--format", "fixture", "--out", str(out)]) == 0
    return out


def test_prepare_stats_line(tmp_path, capsys):
    assert cli.main(["prepare", "--format", "movielens", "--input", str(fixture.ratings_path()),
                     "--titles", str(fixture.movies_path()), "--out", str(tmp_path)]) == 0
    line = capsys.readouterr().out.strip()
    assert line == "users=500 items=400 interactions=12920 sparsity=0.9354"
    stats = json.loads((tmp_path / "stats.json").read_text())
    assert stats["kcore"] == 5 and stats["split_users"] == 500
    assert (tmp_path / "titles.csv").read_text().startswith("item,title\n")


def test_train_profile_gate(prepared, tmp_path, capsys):
    ck = tmp_path / "ck"
    assert cli.main(["train", "--split", str(prepared), "--model", "bpr", "--dim", "4", "--epochs", "1",
                     "--out", str(ck)]) == 0
    assert (ck / "meta.json").exists() and (ck / "item_factors.csv").exists()
    assert cli.main(["profile", "--split", str(prepared), "--checkpoint", str(ck),
                     "--out", str(tmp_path / "p.csv")]) == 0
    assert cli.main(["gate", "--profiles", str(tmp_path / "p.csv"), "--t-s", "0.9",
                     "--out", str(tmp_path / "g.csv")]) == 0
    out = capsys.readouterr().out
    assert "t_s=0.900000" in out
    assert (tmp_path / "g.csv").read_text().startswith("user,weak,auc,sparsity\n")


def test_train_grid(prepared, tmp_path, monkeypatch):
    monkeypatch.setattr(cli, "BPR_LR_GRID", [1e-3, 5e-2])
    assert cli.main(["train", "--split", str(prepared), "--model", "bpr", "--grid", "--dim", "4",
                     "--epochs", "2", "--out", str(tmp_path)]) == 0
    rows = (tmp_path / "grid.csv").read_text().splitlines()
    assert rows[0] == "dim,lr,reg,epochs,seed,valid_auc" and len(rows) == 3


def test_run_and_report(tmp_path, capsys):
    run_dir = tmp_path / "run"
    assert cli.main(["run", "--backend", "mock-oracle", "--guard", "on", "--set", "recommender.k=50",
                     "--output", str(run_dir)]) == 0
    rep = json.loads((run_dir / "report.json").read_text())
    assert rep["hybrid"]["weak"]["auc"] == 1.0 and rep["guard"] == "on"
    assert "k = 50" in (run_dir / "config.snapshot").read_text()
    assert cli.main(["report", "--run", str(run_dir), "--out", str(tmp_path / "tables")]) == 0
    assert (tmp_path / "tables" / "table.csv").exists() and (run_dir / "funnel.csv").exists()


def test_run_is_rerunnable(tmp_path):
    for name in ("a", "b"):
        assert cli.main(["run", "--backend", "mock-random", "--set", "recommender.model=mostpop",
                         "--output", str(tmp_path / name)]) == 0
    assert (tmp_path / "a" / "report.json").read_bytes() == (tmp_path / "b" / "report.json").read_bytes()


def test_config_file(tmp_path):
    ini = tmp_path / "exp.ini"
    ini.write_text("[recommender]\nmodel = mostpop\n[backend]\nname = mock-identity\n")
    assert cli.main(["run", "--config", str(ini), "--output", str(tmp_path / "r")]) == 0
    rep = json.loads((tmp_path / "r" / "report.json").read_text())
    assert rep["model"] == "mostpop" and rep["hybrid"] == rep["rs_only"]


def test_unknown_config_key_is_usage_error(tmp_path, capsys):
    ini = tmp_path / "bad.ini"
    ini.write_text("[recommender]\nneighbours = 5\n")
    assert cli.main(["run", "--config", str(ini)]) == cli.EXIT_USAGE
    assert "recommender.neighbours" in capsys.readouterr().err


def test_bad_arguments_exit_1():
    with pytest.raises(SystemExit) as err:
        cli.main(["train", "--model", "svd"])
    assert err.value.code == 1


def test_missing_api_key_exit_3(tmp_path, monkeypatch):
    monkeypatch.delenv("WEAKREC_API_KEY", raising=False)
    code = cli.main(["run", "--backend", "http", "--set", "backend.url=https://llm.example/v1",
                     "--set", "backend.model=m", "--set", "recommender.model=mostpop",
                     "--output", str(tmp_path)])
    assert code == cli.EXIT_BACKEND


def test_budget_exit_4(tmp_path):
    code = cli.main(["run", "--backend", "mock-random", "--set", "backend.max_requests=3",
                     "--set", "recommender.model=mostpop", "--output", str(tmp_path)])
    assert code == cli.EXIT_BUDGET
    assert (tmp_path / "responses.jsonl").exists()


def test_data_error_exit_2(tmp_path):
    bad = tmp_path / "ratings.dat"
    bad.write_text("1::2::five::3\n")
    assert cli.main(["prepare", "--format", "movielens", "--input", str(bad), "--out", str(tmp_path / "o")]) == 2
    code = cli.main(["run", "--set", "dataset.format=movielens", "--set", f"dataset.path={bad}",
                     "--output", str(tmp_path / "r")])
    assert code == cli.EXIT_DATA


def test_help_lists_config_keys(capsys):
    with pytest.raises(SystemExit) as err:
        cli.main(["run", "--help"])
    assert err.value.code == 0
    text = capsys.readouterr().out
    for key in ("[backend]", "max_in_flight = 4", "t_s = auto", "guard_target = test"):
        assert key in text
