"""Command-line interface, run configuration and artifact writers."""

import csv
import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from mfbsvie.cli import main
from mfbsvie.config import RunConfig, config_hash
from mfbsvie.errors import ValidationError

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def read_csv(path):
    raw = path.read_bytes()
    assert b"\r\n" in raw
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def test_zero_generator_solve(tmp_path, capsys):
    code, out, _ = run(capsys, "solve", "--config", str(CONFIGS / "zero_solve.toml"),
                       "--out", str(tmp_path))
    assert code == 0 and "converged=True" in out
    rows = read_csv(tmp_path / "solution.csv")
    cfg = RunConfig.from_file(CONFIGS / "zero_solve.toml")
    assert all(r["config_hash"] == cfg.hash and r["seed"] == "0" for r in rows)
    diag = json.loads((tmp_path / "diagnostics.json").read_text())
    assert diag["schema_version"] == 1 and diag["config_hash"] == cfg.hash
    # Y(t) = W(t) has mean 0 at every node; Z = 1 everywhere
    assert np.allclose(diag["diagonal_y_mean"], 0.0, atol=1e-12)
    assert all(abs(float(r["absz_mean"]) - 1.0) < 1e-12 for r in rows)


def test_zero_generator_constant_y(tmp_path, capsys):
    doc = (CONFIGS / "zero_solve.toml").read_text().replace(
        'family = "brownian"\na = 0.0\nb = 1.0\nc = 0.0', 'family = "constant"\nvalue = 1.5')
    cfg = tmp_path / "c.toml"
    cfg.write_text(doc)
    code, _, _ = run(capsys, "solve", "--config", str(cfg), "--out", str(tmp_path / "o"))
    assert code == 0
    rows = read_csv(tmp_path / "o" / "solution.csv")
    assert {r["y_mean"] for r in rows} == {"1.5"}
    assert {r["y_std"] for r in rows} == {"0.0"}


def test_nonconvergence_exit_two(tmp_path, capsys):
    code, _, err = run(capsys, "solve", "--config", str(CONFIGS / "nonconvergence.toml"),
                       "--out", str(tmp_path))
    assert code == 2 and "did not reach" in err
    diag = json.loads((tmp_path / "diagnostics.json").read_text())
    assert len(diag["diagnostics"]["norm_trail"]) == 1
    assert diag["diagnostics"]["converged"] is False


def test_malformed_toml(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text("[grid\nT = 1\n")
    code, _, err = run(capsys, "solve", "--config", str(bad))
    assert code == 1 and "TOML parse error" in err


def test_unknown_keys_rejected(tmp_path, capsys):
    doc = (CONFIGS / "linear_solve.toml").read_text().replace("M = 32", "M = 32\nsteps = 4")
    cfg = tmp_path / "u.toml"
    cfg.write_text(doc)
    code, _, err = run(capsys, "solve", "--config", str(cfg))
    assert code == 1 and "unknown keys in [grid]" in err and "steps" in err
    with pytest.raises(ValidationError, match="top level"):
        RunConfig.from_toml("verbose = true\n" + doc.replace("steps = 4", ""))


def test_missing_config_file(capsys):
    code, _, err = run(capsys, "solve", "--config", "/nonexistent/run.toml")
    assert code == 1 and "cannot read config" in err


def test_validate_quadratic_prints_r1(capsys):
    code, out, _ = run(capsys, "validate", "--config", str(CONFIGS / "quad_validate.toml"))
    assert code == 0
    doc = json.loads(out)
    assert doc["bounds"]["values"]["R1"] == pytest.approx(4.0, rel=1e-12)


def test_validate_alpha_out_of_range(tmp_path, capsys):
    cfg = tmp_path / "a.toml"
    cfg.write_text('[grid]\nT = 1.0\nM = 8\n[generator]\nfamily = "quad-strict"\nalpha = 1.5\n'
                   '[free_term]\nfamily = "constant"\nvalue = 1.0\n')
    code, _, err = run(capsys, "validate", "--config", str(cfg))
    assert code == 1 and "α must lie in [0,1)" in err


def test_validate_zero_generator(capsys):
    code, out, _ = run(capsys, "validate", "--config", str(CONFIGS / "zero_solve.toml"))
    assert code == 0
    doc = json.loads(out)
    assert doc["assumptions"]["constants"]["L"] == 0.0
    assert "bounds" not in doc


def test_particles_command(tmp_path, capsys):
    code, out, _ = run(capsys, "particles", "--config", str(CONFIGS / "particles_demo.toml"),
                       "--out", str(tmp_path))
    assert code == 0 and "converged=True" in out
    rows = read_csv(tmp_path / "particles.csv")
    assert len(rows) == 8 * 5
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["N"] == 8 and man["streams"] == list(range(8)) and man["particle_seed"] == 11


def test_particles_needs_table(capsys):
    code, _, err = run(capsys, "particles", "--config", str(CONFIGS / "linear_solve.toml"))
    assert code == 1 and "[particles]" in err


def test_chaos_single_n(tmp_path, capsys):
    doc = (CONFIGS / "chaos_linear_demo.toml").read_text().replace(
        "n_list = [4, 8, 16]", "n_list = [8]").replace("replications = 2", "replications = 1")
    cfg = tmp_path / "s.toml"
    cfg.write_text(doc)
    code, out, _ = run(capsys, "chaos", "--config", str(cfg), "--out", str(tmp_path / "o"),
                       "--threads", "1")
    assert code == 0 and out.strip() == "insufficient points"
    report = json.loads((tmp_path / "o" / "chaos_report.json").read_text())
    assert report["slope"] is None and "insufficient points" in report["flags"]


def test_chaos_demo_verdict(tmp_path, capsys):
    code, out, _ = run(capsys, "chaos", "--config", str(CONFIGS / "chaos_linear_demo.toml"),
                       "--out", str(tmp_path), "--threads", "1")
    assert code == 0
    line = out.strip().splitlines()[-1]
    assert line.startswith("slope=") and " ± " in line and line.endswith("vs theory=-0.25")
    raw = read_csv(tmp_path / "chaos_raw.csv")
    assert len(raw) == 2 * (4 + 8 + 16)
    summary = read_csv(tmp_path / "chaos_summary.csv")
    assert [int(r["N"]) for r in summary] == [4, 8, 16]
    dat = (tmp_path / "chaos_loglog.dat").read_text().splitlines()
    assert dat[0].startswith("# config_hash=") and len([x for x in dat if x[0] != "#"]) == 3


def test_chaos_unsupported_generator(tmp_path, capsys):
    doc = (CONFIGS / "chaos_quadratic_demo.toml").read_text().replace("c_nu = 0.0", "c_nu = 1.0")
    cfg = tmp_path / "q.toml"
    cfg.write_text(doc)
    code, _, err = run(capsys, "chaos", "--config", str(cfg), "--out", str(tmp_path / "o"))
    assert code == 1 and "must not depend on the law of Z" in err


def test_chaos_needs_study(capsys):
    code, _, err = run(capsys, "chaos", "--config", str(CONFIGS / "linear_solve.toml"))
    assert code == 1 and "[study]" in err


def test_config_hash_frozen():
    cfg = RunConfig.from_file(CONFIGS / "zero_solve.toml")
    assert cfg.hash == "9c6f43f0180c5273"
    canon = json.dumps(cfg.document, sort_keys=True, separators=(",", ":"))
    assert cfg.hash == hashlib.sha256(canon.encode()).hexdigest()[:16]
    # key and table order and formatting of the TOML text do not matter
    reordered = ('output   =   "out/zero_solve"\nseed = 0\n'
                 '[free_term]\nc = 0.0\nb = 1.0\na = 0.0\nfamily = "brownian"\n'
                 '[generator]\nfamily = "zero"\n[backend]\nkind = "lattice"\n'
                 '[grid]\nM = 32\nT = 1.0\n')
    assert RunConfig.from_toml(reordered).hash == cfg.hash
    assert config_hash({"b": 1, "a": [1.5, "x"]}) == config_hash({"a": [1.5, "x"], "b": 1})


def test_seed_override(tmp_path, capsys):
    cfg = RunConfig.from_file(CONFIGS / "regression_solve.toml", seed_override=99)
    assert cfg.seed == 99 and cfg.hash != RunConfig.from_file(
        CONFIGS / "regression_solve.toml").hash
    code, _, _ = run(capsys, "solve", "--config", str(CONFIGS / "regression_solve.toml"),
                     "--out", str(tmp_path), "--seed-override", "99")
    assert code == 0
    assert json.loads((tmp_path / "diagnostics.json").read_text())["seed"] == 99
    with pytest.raises(SystemExit):
        main(["solve", "--config", "x", "--seed-override", "-1"])
    capsys.readouterr()


def test_regression_solve_reproducible(tmp_path, capsys):
    for name in ("a", "b"):
        assert run(capsys, "solve", "--config", str(CONFIGS / "regression_solve.toml"),
                   "--out", str(tmp_path / name))[0] == 0
    for f in ("solution.csv", "diagnostics.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_chaos_threads_do_not_change_artifacts(tmp_path, capsys):
    for name, threads in (("one", "1"), ("two", "2")):
        assert run(capsys, "chaos", "--config", str(CONFIGS / "chaos_quadratic_demo.toml"),
                   "--out", str(tmp_path / name), "--threads", threads)[0] == 0
    for f in ("chaos_raw.csv", "chaos_summary.csv", "chaos_report.json", "chaos_loglog.dat"):
        assert (tmp_path / "one" / f).read_bytes() == (tmp_path / "two" / f).read_bytes()
