import json
import os

import numpy as np
import pytest

from dirac_rls import config as cfgmod
from dirac_rls import io
from dirac_rls.cli import main
from dirac_rls.errors import ConfigError, ValidationError
from dirac_rls.grid import GridSpec, SpinorField

MINIMAL = """
[mass]
m = 1.0

[potential]
nu = { kind = "gaussian", g = 0.05 }

[grid]
n = 12
h = 0.5

[channel]
k = [0.0, 0.0, 1.0]
n = 3
"""


def _write(tmp_path, text, name="run.toml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_minimal_config_parses(tmp_path):
    cfg = cfgmod.parse_config(_write(tmp_path, MINIMAL))
    assert cfg["grid"]["n"] == 12 and cfg["mass"]["e_charge"] == 1.0
    assert "solve" not in cfg and cfg.section("solve")["method"] == "direct"
    assert len(cfg.digest) == 64
    spec = cfgmod.build_potential(cfg)
    assert spec.nu.kind == "gaussian" and spec.nu.a == 1.0


def test_missing_mass_is_named(tmp_path):
    with pytest.raises(ConfigError, match="mass"):
        cfgmod.parse_config(_write(tmp_path, "[grid]\nn = 8\nh = 1.0\n"))


def test_unknown_key_rejected(tmp_path):
    with pytest.raises(ConfigError, match="massq"):
        cfgmod.parse_config(_write(tmp_path, MINIMAL.replace("m = 1.0", "m = 1.0\nmassq = 2")))


def test_unknown_section_rejected(tmp_path):
    with pytest.raises(ConfigError, match="solver"):
        cfgmod.parse_config(_write(tmp_path, MINIMAL + "\n[solver]\ntol = 1e-3\n"))


def test_parse_error_has_position(tmp_path):
    with pytest.raises(ConfigError, match="line 3"):
        cfgmod.parse_config(_write(tmp_path, "[mass]\nm = 1.0\nh = = 2\n"))


def test_type_errors_name_the_field(tmp_path):
    with pytest.raises(ConfigError, match="grid.n"):
        cfgmod.parse_config(_write(tmp_path, MINIMAL.replace("n = 12", 'n = "twelve"')))
    with pytest.raises(ConfigError, match="channel.k"):
        cfgmod.parse_config(_write(tmp_path, MINIMAL.replace("[0.0, 0.0, 1.0]", "[1.0]")))
    with pytest.raises(ConfigError, match="potential.nu.gg"):
        cfgmod.parse_config(_write(tmp_path, MINIMAL.replace("g = 0.05", "gg = 0.05")))


def test_command_requires_sections(tmp_path):
    cfg = cfgmod.parse_config(_write(tmp_path, "[mass]\nm = 1.0\n"))
    with pytest.raises(ConfigError, match="potential"):
        cfg.require("solve")
    cfg.require("kernel-check")


def test_config_error_is_validation_error():
    assert issubclass(ConfigError, ValidationError)


def test_field_roundtrip(tmp_path, rng):
    g = GridSpec(8, 0.7, origin=(-1.0, 2.0, 0.5))
    f = SpinorField(rng.normal(size=g.shape + (4,)) + 1j * rng.normal(size=g.shape + (4,)), g)
    io.write_field(tmp_path / "f.rlsf", f)
    back = io.read_field(tmp_path / "f.rlsf")
    assert back.grid == g
    assert np.array_equal(back.samples, f.samples)


def test_field_reader_rejects_garbage(tmp_path):
    (tmp_path / "x.rlsf").write_bytes(b"NOPE" + bytes(60))
    with pytest.raises(ValidationError):
        io.read_field(tmp_path / "x.rlsf")
    (tmp_path / "y.rlsf").write_bytes(b"RL")
    with pytest.raises(ValidationError):
        io.read_field(tmp_path / "y.rlsf")


def test_field_csv(tmp_path):
    g = GridSpec(8, 1.0)
    io.write_field_csv(tmp_path / "f.csv", SpinorField.zeros(g))
    lines = (tmp_path / "f.csv").read_text().splitlines()
    assert len(lines) == 1 + 8 ** 3
    assert lines[0].startswith("i,j,k,r1,r2,r3,re0,im0")


def test_json_handles_numpy_and_complex(tmp_path):
    io.write_json(tmp_path / "a.json", {"x": np.float64(1.5), "z": 1 + 2j,
                                       "arr": np.arange(3), "inf": float("inf")})
    d = json.loads((tmp_path / "a.json").read_text())
    assert d == {"arr": [0, 1, 2], "inf": "inf", "x": 1.5, "z": {"im": 2.0, "re": 1.0}}


def _run(tmp_path, text, cmd, *extra):
    path = _write(tmp_path, text + '\n[output]\ndir = "out"\n')
    code = main([cmd, path, *extra])
    return code, tmp_path / "out"


def test_solve_zero_potential(tmp_path):
    text = MINIMAL.replace('nu = { kind = "gaussian", g = 0.05 }', 'nu = { kind = "zero" }')
    code, out = _run(tmp_path, text, "solve")
    assert code == 0
    rep = json.loads((out / "solve_report.json").read_text())
    assert rep["report"]["residual"] == 0.0 and rep["psi_norm"] == 0.0
    assert not io.read_field(out / "psi.rlsf").samples.any()
    man = json.loads((out / "manifest.json").read_text())
    listed = {o["file"] for o in man["outputs"]}
    assert listed == {"psi.rlsf", "phi.rlsf", "solve_report.json"}
    assert set(os.listdir(out)) == listed | {"manifest.json"}
    assert man["conventions"]["convolution_constant"] == "(2pi)^(-3/2)"
    assert man["status"] == "ok"


def test_reruns_are_bit_identical(tmp_path):
    text = MINIMAL.replace("n = 12", "n = 8")
    outs = []
    for i in range(2):
        d = tmp_path / f"r{i}"
        d.mkdir()
        code, out = _run(d, text, "amplitude")
        assert code == 0
        man = json.loads((out / "manifest.json").read_text())
        outs.append({o["file"]: o["sha256"] for o in man["outputs"]})
    assert outs[0] == outs[1]
    assert "amplitude.csv" in outs[0]


def test_scan_zero_potential_column_is_one(tmp_path):
    text = ('[mass]\nm = 1.0\n[potential]\nnu = { kind = "zero" }\n[grid]\nn = 8\nh = 0.5\n'
            '[scan]\ncount = 4\n')
    code, out = _run(tmp_path, text, "scan-exceptional", "--threads", "1")
    assert code == 0
    rows = (out / "scan.csv").read_text().splitlines()[1:]
    assert [float(r.split(",")[1]) for r in rows] == [1.0] * 4


def test_kernel_check_small(tmp_path):
    text = "[mass]\nm = 1.0\n[kernel]\nn = 32\nrmax = 4.0\n"
    code, out = _run(tmp_path, text, "kernel-check")
    assert code == 0
    rep = json.loads((out / "kernel_check.json").read_text())
    assert rep["chosen_constant"] == "(2pi)^(-3/2)"
    assert rep["max_relative_deviation"] < 0.03
    assert (out / "kernel_samples.csv").exists()


def test_exit_code_validation(tmp_path, capsys):
    code, _ = _run(tmp_path, "[mass]\nm = 1.0\n", "solve")
    assert code == 2
    assert "potential" in capsys.readouterr().err


def test_exit_code_numerical(tmp_path, capsys):
    text = (MINIMAL.replace("g = 0.05", "g = 5.0").replace("n = 12", "n = 8")
            + '\n[solve]\nmethod = "born"\nmax_iter = 3\n')
    code, out = _run(tmp_path, text, "solve")
    assert code == 3
    assert "rls_solver" in capsys.readouterr().err
    man = json.loads((out / "manifest.json").read_text())
    assert man["status"] == "failed"


def test_missing_config_file(tmp_path):
    assert main(["solve", str(tmp_path / "nope.toml")]) == 2
