import json
import logging
import shutil
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from stoppedsums.cli import emit_plotdata, main
from stoppedsums.config import parse_config
from stoppedsums.constructions import ConstructionCertificate
from stoppedsums.errors import PreconditionError
from stoppedsums.tilting import DominationCurve

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def _cli(*args):
    exe = shutil.which("stoppedsums")
    cmd = [exe] if exe else [sys.executable, "-m", "stoppedsums"]
    return subprocess.run([*cmd, *map(str, args)], capture_output=True, text=True, timeout=300)


def _write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return p


@pytest.mark.parametrize("name, code", [
    ("ratio_single_summand.json", 0),
    ("tilt_exp_polynomial.json", 0),
    ("construct_moments_ext.json", 0),
    ("verify_growth_bound.json", 0),
    ("adversarial_domination.json", 3),
    ("c_below_mean.json", 2),
])
def test_console_script_exit_codes(tmp_path, name, code):
    cfg = json.loads((CONFIGS / name).read_text())
    proc = _cli(cfg["workflow"], "--config", CONFIGS / name, "--out", tmp_path)
    assert proc.returncode == code, proc.stderr
    if code == 2:
        assert "precondition failed" in proc.stderr
    else:
        assert json.loads((tmp_path / "summary.json").read_text())["verdicts"]


def test_single_summand_csv(tmp_path):
    assert main(["ratio", "--config", str(CONFIGS / "ratio_single_summand.json"), "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "ratio.csv").read_text().splitlines()
    assert lines[0] == "x,ratio,running_inf,predicted,log10_x,log10_ratio"
    assert len(lines) == 101  # header plus the 100 requested points
    ratios = np.array([float(r.split(",")[1]) for r in lines[1:]])
    np.testing.assert_allclose(ratios, 1.0, rtol=1e-13)
    # floats are written with full precision and no numpy type names
    assert "float64" not in (tmp_path / "ratio.csv").read_text()


def test_outputs_are_deterministic(tmp_path):
    cfg = str(CONFIGS / "ratio_pareto_geometric.json")
    assert main(["ratio", "--config", cfg, "--out", str(tmp_path / "a")]) == 0
    assert main(["ratio", "--config", cfg, "--out", str(tmp_path / "b")]) == 0
    for name in ("ratio.csv", "summary.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_construct_writes_certificate(tmp_path):
    cfg = str(CONFIGS / "construct_moments_ext.json")
    assert main(["construct", "--config", cfg, "--out", str(tmp_path), "--stages", "3"]) == 0
    cert = ConstructionCertificate.from_dict(json.loads((tmp_path / "certificate.json").read_text()))
    assert cert.passed and len(cert.per_interval_residuals) >= 3
    fn = json.loads((tmp_path / "function.json").read_text())
    assert len(fn["knots"]) == 4  # the origin plus three stage knots
    # an impossible tolerance turns the same run into a verdict failure
    assert main(["construct", "--config", cfg, "--out", str(tmp_path), "--stages", "3", "--tol", "1e-300"]) == 3


def test_stages_override_needs_construct_section(tmp_path, capsys):
    cfg = str(CONFIGS / "ratio_single_summand.json")
    assert main(["ratio", "--config", cfg, "--out", str(tmp_path), "--stages", "3"]) == 2
    assert "--stages" in capsys.readouterr().err


@pytest.mark.parametrize("mutate", [
    lambda c: c.update(unknown_key=1),
    lambda c: c.update(distribution={"family": "cauchy"}),
    lambda c: c["grid"].update(step="fine"),
    lambda c: c.pop("grid"),
])
def test_invalid_configs_exit_two(tmp_path, mutate):
    cfg = json.loads((CONFIGS / "ratio_single_summand.json").read_text())
    mutate(cfg)
    assert main(["ratio", "--config", str(_write(tmp_path, cfg)), "--out", str(tmp_path / "o")]) == 2


def test_missing_config_file_exits_two(tmp_path):
    assert main(["ratio", "--config", str(tmp_path / "nope.json")]) == 2


def test_numeric_range_exit(tmp_path):
    cfg = {"distribution": {"family": "exponential", "rate": 1.0},
           "tau": {"family": "geometric", "q": 0.9}, "workflow": "ratio",
           "grid": {"step": 0.5, "cutoff": 20.0, "method": "direct", "n_max": 3}, "output": str(tmp_path)}
    assert main(["ratio", "--config", str(_write(tmp_path, cfg))]) == 4


def test_empty_curve_writes_header_and_warns(tmp_path, caplog):
    empty = DominationCurve(np.array([]), np.array([]), None)
    with caplog.at_level(logging.WARNING):
        assert emit_plotdata(empty, tmp_path / "d.csv") == 0
    assert (tmp_path / "d.csv").read_text() == "x,ratio,log10_x,log10_ratio\n"
    assert "empty curve" in caplog.text
    with pytest.raises(PreconditionError):
        emit_plotdata(object(), tmp_path / "x.csv")


def test_config_alias_round_trip():
    raw = json.loads((CONFIGS / "construct_moments_ext.json").read_text())
    cfg = parse_config(raw)
    assert cfg.construct_section.builder == "moments_ext"
    again = parse_config(cfg.model_dump(by_alias=True))
    assert again == cfg
