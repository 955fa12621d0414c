import csv
import json
from pathlib import Path

import pytest

from cocktail_miner import cli
from cocktail_miner.cli import main

SCENARIOS = Path(__file__).resolve().parents[1] / "scenarios"


def run(*args):
    return main([str(a) for a in args])


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """A small simulated dataset, a search archive and null distributions."""
    root = tmp_path_factory.mktemp("pipeline")
    assert run("simulate", "--scenario", "desk", "--n-patients", 3000, "--seed", 1, "--out", root / "data") == 0
    assert run("search", "--reports", root / "data/reports.csv", "--runs", 2, "--pop", 30,
               "--iters", 10, "--seed", 3, "--out", root / "search") == 0
    assert run("sample", "--reports", root / "data/reports.csv", "--archive", root / "search/archive.csv",
               "--chains", 2, "--iters", 2000, "--seed", 4, "--no-figures", "--out", root / "nulls") == 0
    return root


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_simulate_outputs(workdir):
    data = workdir / "data"
    assert sorted(p.name for p in data.iterdir()) == ["ground_truth.json", "manifest.json", "reports.csv",
                                                      "scenario.json"]
    assert len(rows(data / "reports.csv")) == 3000
    manifest = json.loads((data / "manifest.json").read_text())
    assert manifest["subcommand"] == "simulate"
    assert manifest["seeds"] == {"seed": 1}
    assert manifest["outputs"]["reports.csv"] == cli.sha256(data / "reports.csv")


def test_simulate_default_scenario_file(tmp_path):
    assert run("simulate", "--scenario", SCENARIOS / "default.json", "--seed", 1, "--out", tmp_path) == 0
    with open(tmp_path / "reports.csv") as fh:
        assert sum(1 for _ in fh) == 200_001


def test_simulate_is_byte_identical(tmp_path):
    for name in ("a", "b"):
        assert run("simulate", "--scenario", "two-only", "--n-patients", 2000, "--seed", 9,
                   "--out", tmp_path / name) == 0
    for f in ("reports.csv", "ground_truth.json", "scenario.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_missing_out_is_usage_error(capsys):
    assert run("simulate", "--scenario", "default") == 2
    assert "--out" in capsys.readouterr().err


def test_bad_scenario_file(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run("simulate", "--scenario", bad, "--out", tmp_path / "o") == 2
    assert run("simulate", "--scenario", "nonexistent", "--out", tmp_path / "o") == 2


def test_unknown_flag_is_usage_error():
    assert run("search", "--bogus") == 2


def test_runs_zero_is_usage_error(workdir, tmp_path):
    assert run("search", "--reports", workdir / "data/reports.csv", "--runs", 0, "--out", tmp_path) == 2


def test_population_cycling(workdir, tmp_path):
    assert run("search", "--reports", workdir / "data/reports.csv", "--runs", 4, "--pop", "10,20",
               "--iters", 1, "--seed", 7, "--out", tmp_path) == 0
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["seeds"]["populations"] == [10, 20, 10, 20]
    assert len(manifest["seeds"]["runs"]) == 4


def test_search_rejects_unknown_codes(tmp_path, capsys):
    reports = tmp_path / "r.csv"
    reports.write_text("patient_id,atc_codes,ae\n1,Q01QQ01,1\n2,ZZ9,0\n")
    assert run("search", "--reports", reports, "--out", tmp_path / "o") == 3
    err = capsys.readouterr().err
    assert "Q01QQ01" in err and "ZZ9" in err


def test_sample_files_per_size(workdir):
    sizes = sorted({len(r["cocktail_codes"].split(";")) for r in rows(workdir / "search/archive.csv")})
    for k in sizes:
        assert (workdir / "nulls" / f"null_k{k}.csv").exists()
        assert (workdir / "nulls" / f"null_k{k}.json").exists()


def test_sample_sample_count(workdir, tmp_path):
    assert run("sample", "--reports", workdir / "data/reports.csv", "--sizes", 2, "--chains", 4,
               "--iters", 1000, "--temperature", 50, "--no-figures", "--out", tmp_path) == 0
    header = json.loads((tmp_path / "null_k2.json").read_text())
    assert header["n_samples"] <= 4 * 900 // 10
    assert header["chains"] == 4 and header["temperature"] == 50


def test_sample_sizes_from_archive(tmp_path, workdir):
    archive = tmp_path / "a.csv"
    data = rows(workdir / "search/archive.csv")
    picked = {}
    for r in data:
        picked.setdefault(len(r["cocktail_codes"].split(";")), r)
    with open(archive, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(data[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(picked[k] for k in sorted(picked) if k <= 3)
    assert run("sample", "--reports", workdir / "data/reports.csv", "--archive", archive, "--iters", 500,
               "--chains", 1, "--no-figures", "--out", tmp_path / "n") == 0
    assert sorted(p.name for p in (tmp_path / "n").glob("null_k*.csv") if "summary" not in p.name) == \
        [f"null_k{k}.csv" for k in sorted(picked) if k <= 3]


def test_sample_skips_unexposed_size(workdir, tmp_path, caplog):
    assert run("sample", "--reports", workdir / "data/reports.csv", "--sizes", "2,60", "--iters", 300,
               "--chains", 1, "--no-figures", "--out", tmp_path) == 0
    assert (tmp_path / "null_k2.csv").exists()
    assert not (tmp_path / "null_k60.csv").exists()
    assert "size 60" in caplog.text


def test_report_pipeline(workdir, tmp_path):
    tags = tmp_path / "tags.csv"
    truth = json.loads((workdir / "data/ground_truth.json").read_text())
    with open(tags, "w") as fh:
        fh.write("family,prefix\n")
        for i, p in enumerate(truth["planted"]):
            for code in p["codes"]:
                fh.write(f"planted {i + 1},{code}\n")
    assert run("report", "--archive", workdir / "search/archive.csv", "--nulls", workdir / "nulls",
               "--tags", tags, "--export-distances", "--out", tmp_path / "r") == 0
    out = rows(tmp_path / "r/results.csv")
    assert list(out[0]) == ["cocktail_codes", "n_c", "x", "H", "RR", "PRR", "p_value", "cluster", "families"]
    assert all(float(r["p_value"]) <= 0.05 for r in out)
    assert (tmp_path / "r/clusters.png").exists()
    assert (tmp_path / "r/distances.csv").exists()
    coords = rows(tmp_path / "r/coords.csv")
    assert len(coords) == len(out)


def test_report_threshold_one_keeps_everything(workdir, tmp_path):
    assert run("report", "--archive", workdir / "search/archive.csv", "--nulls", workdir / "nulls",
               "--threshold", 1.0, "--no-figures", "--out", tmp_path) == 0
    assert len(rows(tmp_path / "results.csv")) == len(rows(workdir / "search/archive.csv"))


def test_report_empty_archive(tmp_path):
    archive = tmp_path / "a.csv"
    archive.write_text("cocktail_codes,n_c,x,H,rr,prr,iteration_found,run_id\n")
    assert run("report", "--archive", archive, "--nulls", tmp_path, "--out", tmp_path / "r") == 0
    assert (tmp_path / "r/results.csv").read_text() == \
        "cocktail_codes,n_c,x,H,RR,PRR,p_value,cluster,families\n"


def test_report_missing_sizes(workdir, tmp_path, capsys):
    assert run("report", "--archive", workdir / "search/archive.csv", "--nulls", tmp_path,
               "--out", tmp_path / "r") == 3
    assert "size(s) 1" in capsys.readouterr().err


def test_config_precedence(workdir, tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"iters": 3, "alpha": 2.5, "reports": str(workdir / "data/reports.csv")}))
    assert run("search", "--config", cfg, "--alpha", 0.5, "--dump-config") == 0
    dumped = json.loads(capsys.readouterr().out)
    assert dumped["iters"] == 3 and dumped["alpha"] == 0.5
    assert dumped["tournament_size"] == 3
    bad = tmp_path / "bad.json"
    bad.write_text('{"nope": 1}')
    assert run("search", "--config", bad, "--dump-config") == 2


def test_threads_from_environment(monkeypatch, capsys):
    monkeypatch.setenv("COCKTAIL_MINER_THREADS", "3")
    assert run("simulate", "--dump-config") == 0
    assert json.loads(capsys.readouterr().out)["threads"] == 3
    assert run("simulate", "--threads", 2, "--dump-config") == 0
    assert json.loads(capsys.readouterr().out)["threads"] == 2
    monkeypatch.setenv("COCKTAIL_MINER_THREADS", "zero")
    assert run("simulate", "--dump-config") == 2


def test_verify_detects_edits(workdir, tmp_path):
    data = tmp_path / "data"
    assert run("simulate", "--scenario", "desk", "--n-patients", 2000, "--out", data) == 0
    assert run("search", "--reports", data / "reports.csv", "--runs", 1, "--pop", 10, "--iters", 1,
               "--out", tmp_path / "s") == 0
    assert run("verify", tmp_path / "s") == 0
    with open(data / "reports.csv", "a") as fh:
        fh.write("extra,A01AA01,0\n")
    assert run("verify", tmp_path / "s") == 3


def test_compare_outputs(workdir, tmp_path):
    assert run("compare", "--reports", workdir / "data/reports.csv", "--truth",
               workdir / "data/ground_truth.json", "--out", tmp_path) == 0
    scores = rows(tmp_path / "scores.csv")
    assert sum(int(r["planted"]) for r in scores) == 2
    curves = rows(tmp_path / "pr_curves.csv")
    assert {r["score"] for r in curves} == {"H", "RR", "PRR", "PRR_signal"}
    assert (tmp_path / "score_comparison.png").exists()


def test_internal_error_exit_code(monkeypatch, tmp_path):
    def boom(args):
        raise RuntimeError("boom")
    monkeypatch.setattr(cli, "cmd_simulate", boom)
    assert run("simulate", "--out", tmp_path) == 4


def test_every_stage_is_byte_identical(tmp_path):
    def pipeline(root):
        assert run("simulate", "--scenario", "desk", "--n-patients", 2000, "--seed", 5, "--out", root / "d") == 0
        assert run("search", "--reports", root / "d/reports.csv", "--runs", 2, "--pop", 20, "--iters", 5,
                   "--seed", 5, "--out", root / "s") == 0
        assert run("sample", "--reports", root / "d/reports.csv", "--archive", root / "s/archive.csv",
                   "--iters", 500, "--chains", 2, "--out", root / "n") == 0
        assert run("report", "--archive", root / "s/archive.csv", "--nulls", root / "n",
                   "--out", root / "r") == 0
    pipeline(tmp_path / "a")
    pipeline(tmp_path / "b")
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*")
                   if p.is_file() and p.name != "manifest.json")
    assert files
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes(), f
