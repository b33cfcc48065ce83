import csv
import json

import pytest

from latticeflow.cli import RunConfig, main, parse_config

DIRAC = """\
dist = dirac(1)
d = 2
rungs = 4:4, 8
replicates = 2
"""


def write(tmp_path, text, name="run.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_config_round_trip():
    cfg = parse_config("dist = bernoulli(0.7, 1)\nd = 3\nrungs = 4x4:4, 6x8\nepsilon = 1/8\n"
                       "formats = jsonl,csv\nverification = full  # comment\n")
    assert cfg.rungs == (((4, 4), 4), ((6, 8), 8))
    assert parse_config(cfg.to_text()) == cfg
    assert parse_config(RunConfig().to_text()) == RunConfig()
    assert cfg.plan().d == 3


@pytest.mark.parametrize("text", ["colour = red\n", "d two\n", "verification = maybe\n", "formats = png\n",
                                  "dist = normal(0, 1)\n", "replicates = many\n"])
def test_bad_configs_exit_2(tmp_path, capsys, text):
    assert main(["run", "--config", write(tmp_path, text), "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert "config error" in err
    if text.startswith("colour"):
        assert "unknown key" in err


def test_invalid_plan_exits_2(tmp_path):
    cfg = write(tmp_path, "d = 2\nrungs = 2:1000000\n")
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "o")]) == 2


def test_dirac_run_writes_exact_summary(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", "--config", write(tmp_path, DIRAC), "--out", str(out), "--seed", "7"]) == 0
    rows = list(csv.DictReader(open(out / "summary.csv")))
    assert [float(r["mean_ratio"]) for r in rows] == [5 / 4, 9 / 8]
    assert list(rows[0]) == ["rung_index", "d", "k", "m", "replicates", "mean_ratio", "sd_ratio", "ci_low",
                             "ci_high", "zero_fraction", "mean_Nbar"]
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["master_seed"] == 7 and manifest["records"] == 4
    assert parse_config(manifest["config_text"]).master_seed == 7
    for name in ("samples.jsonl", "convergence.svg", "cut.svg"):
        assert (out / name).stat().st_size > 0
    assert "nu_hat = 1.125" in capsys.readouterr().out


def test_manifest_reproduces_samples(tmp_path):
    out = tmp_path / "a"
    assert main(["run", "--config", write(tmp_path, "dist = uniform(0, 1)\nrungs = 4, 6\nreplicates = 3\n"),
                 "--out", str(out)]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    again = tmp_path / "b"
    assert main(["run", "--config", write(tmp_path, manifest["config_text"], "echo.cfg"), "--out", str(again)]) == 0
    assert (out / "samples.jsonl").read_bytes() == (again / "samples.jsonl").read_bytes()


def test_structural_checks_in_manifest(tmp_path):
    out = tmp_path / "out"
    text = "dist = bernoulli(0.6)\nrungs = 8\nreplicates = 2\nverification = lemma-checks\nverify_replicates = 2\n"
    assert main(["run", "--config", write(tmp_path, text), "--out", str(out)]) == 0
    checks = json.loads((out / "manifest.json").read_text())["checks"]
    assert checks["passed"]["duality"] == 2
    assert sum(checks["failed"].values()) == 0
    assert all(checks["passed"][n] + checks["skipped"][n] == 2 for n in checks["passed"])


def test_verify_verb(tmp_path, capsys):
    text = "dist = bernoulli(0.6)\nrungs = 8\nverify_replicates = 2\n"
    assert main(["verify", "--config", write(tmp_path, text)]) == 0
    assert "duality" in capsys.readouterr().out
    assert main(["verify", "--config", write(tmp_path, text), "--inject-fault"]) == 1
    assert "violated: duality" in capsys.readouterr().err


def test_verify_with_empty_budget_warns(tmp_path, caplog):
    text = "rungs = 8\nverify_replicates = 0\n"
    assert main(["verify", "--config", write(tmp_path, text)]) == 0
    assert "budget is empty" in caplog.text


def test_plot_verb_rerenders(tmp_path):
    out = tmp_path / "out"
    assert main(["run", "--config", write(tmp_path, DIRAC + "formats = jsonl, csv\n"), "--out", str(out)]) == 0
    assert not (out / "convergence.svg").exists()
    assert main(["plot", "--out", str(out)]) == 0
    assert (out / "convergence.svg").exists() and (out / "cut.svg").exists()


def test_svg_output_is_reproducible(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    cfg = write(tmp_path, DIRAC)
    main(["run", "--config", cfg, "--out", str(a)])
    main(["run", "--config", cfg, "--out", str(b)])
    assert (a / "cut.svg").read_bytes() == (b / "cut.svg").read_bytes()


def test_missing_config_is_an_io_error(tmp_path):
    assert main(["run", "--config", str(tmp_path / "nope.cfg")]) == 1
