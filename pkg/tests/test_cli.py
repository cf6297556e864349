import json
import subprocess
import sys

import pytest

from delaysmp.cli import ConfigError, load_config, main

TRACKING = """
[scenario]
name = "tracking"
[grid]
T = 1.0
N = 32
delay = 0.5
[mc]
paths = 512
seed = 3
[control]
kind = "{kind}"
policy = "optimal"
value = [0.0]
[spike]
t0 = 0.25
eps = [0.125, 0.0625, 0.03125]
[verify]
expansion = false
kernel_times = [0.0, 0.25, 0.5, 0.75, 1.0]
"""


def _write(tmp_path, text, name="cfg.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_verify_exit_codes(tmp_path):
    good = _write(tmp_path, TRACKING.format(kind="policy"), "good.toml")
    bad = _write(tmp_path, TRACKING.format(kind="constant"), "bad.toml")
    assert main(["verify", "--config", str(good), "--out", str(tmp_path / "g")]) == 0
    assert main(["verify", "--config", str(bad), "--out", str(tmp_path / "b")]) == 1
    rep = json.loads((tmp_path / "b" / "verify.json").read_text())
    assert rep["verdict"] == "fail" and rep["variational_inequality"]["violations"]
    assert rep["seed"] == 3 and len(rep["config_hash"]) == 16


def test_simulate_is_worker_independent(tmp_path):
    cfg = _write(tmp_path, TRACKING.format(kind="policy"))
    outs = []
    for w in (1, 4):
        out = tmp_path / f"w{w}"
        assert main(["simulate", "--config", str(cfg), "--out", str(out), "--workers", str(w)]) == 0
        outs.append(out)
    for name in ("trajectory.csv", "simulate.json"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()


def test_seed_override_changes_output(tmp_path):
    cfg = _write(tmp_path, TRACKING.format(kind="policy"))
    main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "a")])
    main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "b"), "--seed", "4"])
    assert (tmp_path / "a" / "trajectory.csv").read_bytes() != (tmp_path / "b" / "trajectory.csv").read_bytes()


@pytest.mark.parametrize(
    "text",
    [
        "[scenario]\nname = \"nope\"\n",
        "[scenario]\nname = \"tracking\"\n[grid]\nN = 10\ndelay = 0.5\n",
        "[scenario]\nname = \"tracking\"\n[spike]\nt0 = 0.3\n",
        "[scenario\n",
    ],
)
def test_config_errors_exit_two(tmp_path, text, capsys):
    cfg = _write(tmp_path, text)
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "config error" in capsys.readouterr().err


def test_load_config_applies_overrides(tmp_path):
    cfg = load_config(_write(tmp_path, TRACKING.format(kind="policy")), {"mc.seed": 9, "grid.N": 64})
    assert cfg.raw["mc"]["seed"] == 9 and cfg.raw["grid"]["N"] == 64
    with pytest.raises(ConfigError):
        load_config(_write(tmp_path, TRACKING.format(kind="policy")), {"grid.N": 7})


def test_console_entry_point(tmp_path):
    cfg = _write(tmp_path, TRACKING.format(kind="policy"))
    res = subprocess.run(
        [sys.executable, "-m", "delaysmp.cli", "adjoint", "--config", str(cfg), "--out", str(tmp_path / "o")],
        capture_output=True,
        text=True,
    )
    assert res.returncode == 0, res.stderr
    assert (tmp_path / "o" / "adjoint.csv").exists()
    assert (tmp_path / "o" / "adjoint_manifest.json").exists()
