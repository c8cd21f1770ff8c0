import json
import os
from pathlib import Path

import pytest

from cwbnlw import __version__
from cwbnlw.cli import main, run, scan_p0
from cwbnlw.config import load_config, parse_config
from cwbnlw.coupling import violating_c2_instance
from cwbnlw.errors import ConfigError

REF = Path(__file__).resolve().parents[1] / "configs" / "reference.toml"


def _ref_text():
    return REF.read_text()


def _write(tmp_path, text, name="cfg.toml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_solve_reference_exit_zero(tmp_path, capsys):
    out = tmp_path / "o"
    assert main(["solve", "--config", str(REF), "--out", str(out)]) == 0
    bundle = json.loads((out / "solution.json").read_text())
    assert bundle["version"] == __version__
    assert (out / "trace.csv").exists()
    assert "PASS residual_sup" in capsys.readouterr().out


def test_missing_key_exit_two(tmp_path, capsys):
    text = _ref_text().replace("alpha = 0.05\n", "")
    assert main(["solve", "--config", _write(tmp_path, text), "--out", str(tmp_path)]) == 2
    assert "problem.alpha" in capsys.readouterr().err


def test_syntax_error_reports_line(tmp_path, capsys):
    assert main(["solve", "--config", _write(tmp_path, "[problem]\nd = = 1\n")]) == 2
    assert "line 2" in capsys.readouterr().err


def test_bad_value_reports_field_and_line(tmp_path, capsys):
    text = _ref_text().replace("alpha = 0.05", "alpha = -1.0")
    assert main(["solve", "--config", _write(tmp_path, text), "--out", str(tmp_path)]) == 2
    err = capsys.readouterr().err
    assert "problem.alpha" in err and "line" in err


def test_unknown_key_and_section():
    with pytest.raises(ConfigError):
        parse_config(_ref_text() + "\n[bogus]\nx = 1\n", "solve")
    with pytest.raises(ConfigError):
        parse_config(_ref_text().replace("[solve]\n", "[solve]\nwhat = 3\n"), "solve")


def test_missing_file_exit_two(tmp_path):
    assert main(["solve", "--config", str(tmp_path / "nope.toml")]) == 2


def test_schedule_override_warning():
    bad = _ref_text().replace("C2 = 2.5", "C2 = 3.5")
    with pytest.raises(ConfigError):
        parse_config(bad, "solve")
    cfg = parse_config(bad.replace("[schedule]\n", "[schedule]\nallow_override = true\n"), "solve")
    assert any("override" in w for w in cfg.warnings)


def test_override_recorded_in_outputs(tmp_path):
    text = _ref_text().replace("[schedule]\n", "[schedule]\nallow_override = true\n").replace("C2 = 2.5", "C2 = 3.5")
    cfg = parse_config(text, "audit")
    cfg = cfg.__class__(**{**cfg.__dict__, "out": str(tmp_path)})
    run(cfg)
    audit = json.loads((tmp_path / "audit.json").read_text())
    assert any("override" in w for w in audit["warnings"])


def test_violating_replay_exit_one(tmp_path, capsys):
    rp = tmp_path / "bad.json"
    violating_c2_instance().dump(rp)
    code = main(["coupling", "--config", str(REF), "--out", str(tmp_path / "o"), "--replay", str(rp)])
    assert code == 1
    out = capsys.readouterr().out
    assert "PASS hypotheses" in out and "FAIL conclusions" in out


def _all_outputs(d):
    return {p.name: p.read_bytes() for p in sorted(Path(d).iterdir())}


def test_determinism_and_hash(tmp_path):
    for k in ("a", "b"):
        assert main(["audit", "--config", str(REF), "--out", str(tmp_path / k)]) == 0
        assert main(["diophantine", "--config", str(REF), "--out", str(tmp_path / k)]) == 0
    a, b = _all_outputs(tmp_path / "a"), _all_outputs(tmp_path / "b")
    assert a == b and len(a) >= 6
    h = load_config(REF, "audit").source_hash
    for name, data in a.items():
        text = data.decode()
        assert h in text, name
        assert __version__ in text, name


def test_seed_changes_random_outputs(tmp_path):
    main(["diophantine", "--config", str(REF), "--out", str(tmp_path / "a")])
    main(["diophantine", "--config", str(REF), "--out", str(tmp_path / "b"), "--seed", "1"])
    assert (tmp_path / "a" / "measure.csv").read_bytes() != (tmp_path / "b" / "measure.csv").read_bytes()


def test_scan_eps_zero_and_reasons():
    cfg = load_config(REF, "scan")
    rep = scan_p0(cfg, grid=[1.0, 1.5, 2.0], eps_grid=[0.0])
    assert rep["excluded_fraction"] == [0.0]
    # a schedule that cannot reach the floor excludes every sample, each with a reason
    from dataclasses import replace
    tight = replace(cfg, schedule=replace(cfg.schedule, j_max=2, residual_floor=1e-300))
    rep = scan_p0(tight, grid=[1.0, 2.0], eps_grid=[1e-3])
    excluded = [r for r in rep["rows"] if not r["included"]]
    assert all(r["reason"] for r in excluded)


def test_scan_worker_pool_matches_serial():
    from dataclasses import replace
    cfg = load_config(REF, "scan")
    serial = scan_p0(cfg, grid=[1.0, 1.5, 2.0], eps_grid=[1e-3])
    pooled = scan_p0(replace(cfg, workers=2), grid=[1.0, 1.5, 2.0], eps_grid=[1e-3])
    assert serial == pooled


def test_bad_workers_exit_two():
    assert main(["solve", "--config", str(REF), "--workers", "0"]) == 2
