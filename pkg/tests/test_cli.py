import json

import pytest

from mfgs.cli import ExperimentConfig, compare_runs, main, read_trace

SMALL = {"model": {"heat": {"levels": [8, 16, 24]}}, "nK": 1, "seed": 3}


def _config(tmp_path, **over):
    data = {**SMALL, **over}
    path = tmp_path / f"cfg_{len(list(tmp_path.iterdir()))}.json"
    path.write_text(json.dumps(data))
    return path


def test_unknown_config_key_rejected():
    with pytest.raises(ValueError, match="unknown config keys"):
        ExperimentConfig.from_dict({"methd": "hfgs"})


def test_bad_method_rejected():
    with pytest.raises(ValueError, match="method"):
        ExperimentConfig(method="sgd")


def test_run_writes_artifacts(tmp_path, capsys):
    cfg = _config(tmp_path, method="rmfgs", max_iters=[3, 2, 2])
    out = tmp_path / "r"
    assert main(["run", "--config", str(cfg), "--out", str(out)]) == 0
    for name in ("trace.csv", "timing.csv", "summary.json", "controller_AK.mtx",
                 "controller_DK.mtx"):
        assert (out / name).is_file()
    summary = json.loads((out / "summary.json").read_text())
    assert summary["method"] == "rmfgs" and len(summary["levels"]) == 3
    tr = read_trace(out)
    assert list(tr["level"]) == sorted(tr["level"])
    assert "wrote" in capsys.readouterr().out


def test_same_seed_gives_identical_trace(tmp_path):
    cfg = _config(tmp_path, method="amfgs", max_iters=[3, 2, 2])
    a, b = tmp_path / "a", tmp_path / "b"
    main(["run", "--config", str(cfg), "--out", str(a)])
    main(["run", "--config", str(cfg), "--out", str(b)])
    assert (a / "trace.csv").read_bytes() == (b / "trace.csv").read_bytes()


def test_seed_flag_overrides_config(tmp_path):
    cfg = _config(tmp_path, method="hfgs", max_iters=2)
    main(["run", "--config", str(cfg), "--seed", "11", "--out", str(tmp_path / "s")])
    assert json.loads((tmp_path / "s" / "summary.json").read_text())["seed"] == 11


def test_compare_reports_speedup(tmp_path):
    dirs = []
    for method, iters in (("hfgs", 4), ("amfgs", [3, 2, 2])):
        cfg = _config(tmp_path, method=method, max_iters=iters)
        d = tmp_path / method
        main(["run", "--config", str(cfg), "--out", str(d)])
        dirs.append(d)
    report = compare_runs(dirs, tmp_path / "cmp")
    assert set(report["methods"]) == {"hfgs", "amfgs"}
    assert report["methods"]["hfgs"]["reaches_reference"]
    assert (tmp_path / "cmp" / "comparison.csv").is_file()
    assert (tmp_path / "cmp" / "speedup.json").is_file()


def test_generate_then_validate(tmp_path, capsys):
    cfg = _config(tmp_path)
    gen = tmp_path / "model"
    assert main(["generate", "--config", str(cfg), "--out", str(gen)]) == 0
    cfg2 = _config(tmp_path, model={"manifest": str(gen / "manifest.json")})
    capsys.readouterr()
    assert main(["validate", "--config", str(cfg2)]) == 0
    out = capsys.readouterr().out
    assert out.count("open-loop alpha") == 3 and "N=" in out
