import json

import pytest

from chcfem.cli import EXIT_FAIL, EXIT_OK, EXIT_USAGE, main


def _write(tmp_path, text):
    f = tmp_path / "cfg.ini"
    f.write_text(text)
    return str(f)


def _first_line(path):
    with open(path) as fh:
        return fh.readline().strip()


def test_check_invariants_exit_ok(tmp_path):
    out = tmp_path / "inv"
    assert main(["check-invariants", "--out", str(out)]) == EXIT_OK
    man = json.loads((out / "manifest.json").read_text())
    assert _first_line(out / "invariants.csv") == f"# manifest_sha256={man['inputs_sha256']}"
    assert man["results"]["status"] == "ok"


def test_usage_errors(tmp_path):
    assert main(["study-space", "--samples", "0", "--out", str(tmp_path / "a")]) == EXIT_USAGE
    assert main(["no-such-command"]) == EXIT_USAGE
    assert main(["simulate", "--seed", "x"]) == EXIT_USAGE
    cfg = _write(tmp_path, "[noise]\ngamma = 5\n")
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "b")]) == EXIT_USAGE
    cfg = _write(tmp_path, "[study]\nsamples = 5\n")
    assert main(["study-time", "--config", cfg, "--out", str(tmp_path / "c")]) == EXIT_USAGE


def test_simulate_outputs(tmp_path):
    cfg = _write(tmp_path, "[mesh]\nh = 1/16\n[scheme]\nn_steps = 8\ncheckpoints = 3\n"
                           "dump_path = true\n")
    out = tmp_path / "sim"
    assert main(["simulate", "--config", cfg, "--out", str(out)]) == EXIT_OK
    lines = (out / "trajectory.csv").read_text().splitlines()
    assert lines[0].startswith("# manifest_sha256=")
    assert lines[1] == "t,dof,x,u,w"
    assert len(lines) == 2 + 3 * 17
    assert len((out / "monitors.csv").read_text().splitlines()) == 2 + 9
    assert (out / "noise_path.bin").exists()


def test_simulate_step_failure(tmp_path):
    cfg = _write(tmp_path, "[mesh]\nh = 1/256\n[scheme]\nT = 1e8\nn_steps = 1\n"
                           "amplitude = 1e3\n[noise]\nscale = 1e6\n")
    out = tmp_path / "fail"
    assert main(["simulate", "--config", cfg, "--out", str(out)]) == EXIT_FAIL
    report = json.loads((out / "failure.json").read_text())
    assert report["step_index"] == 1
    assert len(report["residuals"]) >= 2
    assert json.loads((out / "manifest.json").read_text())["results"]["status"] == "step_failure"


TINY = ("[study]\nsamples = 20\nspace_ladder = 4,8,16\nspace_ref_elements = 32\n"
        "ref_steps = 32\nfloor_samples = 4\n")


def test_study_bitwise_reproducible(tmp_path):
    cfg = _write(tmp_path, TINY)
    codes, texts = [], []
    for name in ("r1", "r2"):
        out = tmp_path / name
        codes.append(main(["study-space", "--config", cfg, "--out", str(out), "--seed", "4"]))
        texts.append((out / "errors.csv").read_bytes())
        assert (out / "ratefit.json").exists() and (out / "plot_data.csv").exists()
    assert texts[0] == texts[1]
    assert codes[0] == codes[1]
    man = json.loads((tmp_path / "r1" / "manifest.json").read_text())
    assert man["config"]["run"]["seed"] == 4
    assert _first_line(tmp_path / "r1" / "errors.csv").endswith(man["inputs_sha256"])


def test_manifest_replays(tmp_path):
    cfg = _write(tmp_path, TINY)
    assert main(["study-space", "--config", cfg, "--out", str(tmp_path / "a")]) in (0, 1)
    man = str(tmp_path / "a" / "manifest.json")
    assert main(["study-space", "--config", man, "--out", str(tmp_path / "b")]) in (0, 1)
    assert ((tmp_path / "a" / "errors.csv").read_bytes()
            == (tmp_path / "b" / "errors.csv").read_bytes())


def test_version_flag(capsys):
    assert main(["--version"]) == EXIT_OK
    assert "chc" in capsys.readouterr().out
