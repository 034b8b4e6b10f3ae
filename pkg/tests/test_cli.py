import json

import pytest

from stagegrn.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, main

SMALL = ["--G", "2", "--R", "2", "--T", "3", "--n_t", "5", "--n_outer", "2", "--iterations_per_transition", "8",
         "--rf_trees", "4", "--rf_max_iters", "1"]


@pytest.fixture(scope="module")
def simulated(tmp_path_factory):
    d = tmp_path_factory.mktemp("sim")
    data, truth = d / "data.csv", d / "truth.json"
    assert main(["simulate", "--seed", "1", *SMALL, "--out", str(data), "--truth", str(truth)]) == EXIT_OK
    return data, truth


def test_simulate_infer_and_score(simulated, tmp_path):
    data, truth = simulated
    est = tmp_path / "est.json"
    assert main(["infer", "--data", str(data), *SMALL, "--out", str(est)]) == EXIT_OK
    report = json.loads(est.read_text())
    assert report["meta"]["command"] == "infer"
    assert {t["to"] for t in report["transitions"]} == {2, 3}
    scores = tmp_path / "scores.json"
    assert main(["metrics", "--truth", str(truth), "--estimate", str(est), "--out", str(scores)]) == EXIT_OK
    assert "total" in json.loads(scores.read_text())
    tsv = tmp_path / "scores.tsv"
    assert main(["metrics", "--truth", str(truth), "--estimate", str(est), "--format", "tsv",
                 "--out", str(tsv)]) == EXIT_OK
    assert tsv.read_text().startswith("transition\tindex\testimate")


@pytest.mark.parametrize("mode", ["P1", "P2", "P3"])
def test_baseline_command(simulated, tmp_path, mode):
    data, _ = simulated
    out = tmp_path / "b.tsv"
    assert main(["baseline", "--data", str(data), "--mode", mode, *SMALL, "--format", "tsv",
                 "--out", str(out)]) == EXIT_OK
    assert out.read_text().splitlines()[0] == "transition\tedges"


def test_config_file_and_flag_precedence(simulated, tmp_path):
    data, _ = simulated
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# short run\nn_outer = 2\niterations_per_transition = 8\nmin_support = 0.9\n")
    out = tmp_path / "o.json"
    assert main(["infer", "--data", str(data), "--config", str(cfg), "--min_support", "0.2",
                 "--out", str(out)]) == EXIT_OK
    assert json.loads(out.read_text())["meta"]["settings"]["min_support"] == 0.2


@pytest.mark.parametrize("args", [
    [],
    ["nonsense"],
    ["infer"],
    ["infer", "--data", "x.csv", "--thinning", "abc"],
    ["infer", "--data", "x.csv", "--threads", "0"],
    ["baseline", "--data", "x.csv", "--mode", "P9"],
    ["simulate"],
])
def test_usage_errors(args, capsys):
    assert main(args) == EXIT_USAGE
    assert "usage error" in capsys.readouterr().err


def test_bad_settings_file(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("unknown_key = 1\n")
    assert main(["benchmark", "--config", str(cfg)]) == EXIT_USAGE
    cfg.write_text("n_outer 3\n")
    assert main(["benchmark", "--config", str(cfg)]) == EXIT_USAGE
    assert main(["benchmark", "--config", str(tmp_path / "none.cfg")]) == EXIT_USAGE


def test_invalid_sampler_setting_is_a_usage_error(simulated):
    data, _ = simulated
    assert main(["infer", "--data", str(data), "--thinning", "0"]) == EXIT_USAGE


def test_data_errors(tmp_path, capsys):
    assert main(["infer", "--data", str(tmp_path / "missing.csv")]) == EXIT_DATA
    bad = tmp_path / "bad.csv"
    bad.write_text("not,a,dataset\n")
    assert main(["infer", "--data", str(bad)]) == EXIT_DATA
    assert f"{bad}:1" in capsys.readouterr().err


def test_benchmark_tsv(tmp_path):
    out = tmp_path / "b.tsv"
    assert main(["benchmark", "--replicates", "1", "--methods", "pearson1,pearson2", *SMALL, "--format", "tsv",
                 "--out", str(out)]) == EXIT_OK
    assert out.read_text().splitlines()[0] == "transition\tindex\tpearson1\tpearson2"
