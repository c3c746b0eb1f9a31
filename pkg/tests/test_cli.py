import json

import pytest

from disloclab import cli
from disloclab.solve import DivergenceError


def write(tmp_path, obj, name="cfg.json"):
    p = tmp_path / name
    p.write_text(obj if isinstance(obj, str) else json.dumps(obj))
    return str(p)


def test_sigma_writes_report(tmp_path):
    out = tmp_path / "out"
    assert cli.main(["--out", str(out), "--check", "sigma"]) == cli.EXIT_OK
    rep = json.loads((out / "sigma.json").read_text())
    assert rep["command"] == "sigma" and rep["check_passed"]
    assert rep["report"]["certificate"]["passed"]


def test_minimize_to_stdout(capsys, tmp_path):
    cfg = write(tmp_path, {"domain": {"cells_per_decade": 6}, "measure": {"magnitudes": [1e-2]}})
    assert cli.main(["--config", cfg, "minimize"]) == cli.EXIT_OK
    rep = json.loads(capsys.readouterr().out)
    assert rep["report"]["converged"]


@pytest.mark.parametrize("text,needle", [
    ('{"domain": {"R": -1}}', "domain/R"),
    ('{"density": {"kind": "neo"}}', "density/kind"),
    ('{"bogus": {}}', "bogus"),
    ('{"domain": {"R": 1,}}', "line 1"),
])
def test_invalid_config_exits_2(tmp_path, capsys, text, needle):
    assert cli.main(["--config", write(tmp_path, text), "sigma"]) == cli.EXIT_CONFIG
    assert needle in capsys.readouterr().err


def test_inconsistent_domain_exits_2(tmp_path):
    cfg = write(tmp_path, {"domain": {"R": 1e-4}, "measure": {"magnitudes": [1e-3]}})
    assert cli.main(["--config", cfg, "minimize"]) == cli.EXIT_CONFIG


def test_missing_config_and_bad_flags_exit_2(tmp_path):
    assert cli.main(["--config", str(tmp_path / "nope.json"), "sigma"]) == cli.EXIT_CONFIG
    assert cli.main(["--workers", "0", "sigma"]) == cli.EXIT_CONFIG


def test_numerical_failure_exits_3(monkeypatch, capsys):
    def boom(cfg, args):
        raise DivergenceError("energy became non-finite")
    monkeypatch.setitem(cli.COMMANDS, "minimize", boom)
    assert cli.main(["minimize"]) == cli.EXIT_NUMERIC
    assert "non-finite" in capsys.readouterr().err


def test_failed_check_exits_4(tmp_path):
    # a ladder far from the core cannot extrapolate to within 3 %
    cfg = write(tmp_path, {"domain": {"delta_ladder": [0.5, 0.4, 0.3], "cells_per_decade": 8}})
    assert cli.main(["--config", cfg, "--check", "cell"]) == cli.EXIT_CHECK
    assert cli.main(["--config", cfg, "cell"]) == cli.EXIT_OK
