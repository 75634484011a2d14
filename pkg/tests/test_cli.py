import json

import pytest

from scout.cli import ConfigError, emit_config, main, parse_config, parse_seeds, read_config_text
from scout.calibrator import oracle_tau_p_star


def test_parse_seeds():
    assert parse_seeds("1..4") == [1, 2, 3, 4]
    assert parse_seeds("5, 9") == [5, 9]
    assert parse_seeds("") == []


def test_minimal_config_defaults(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("d = 2\nT = 1000\nalpha = 0.1  # budget\ndelta = 0.05\nseed = 1\n")
    c = parse_config(str(p))
    assert c.mode == "practical" and c.distribution == "uniform" and c.seeds == [1]
    assert c.delta_prime == pytest.approx(0.05 / 7)


def test_config_errors(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("d = 2\nalpha = 0.7\n")
    with pytest.raises(ConfigError, match="alpha"):
        parse_config(str(p))
    with pytest.raises(ConfigError, match=r"<config>:2: unknown field 'colour'"):
        read_config_text("d = 2\ncolour = red\n")
    with pytest.raises(ConfigError, match=":1:"):
        read_config_text("T = many\n")
    with pytest.raises(ConfigError):
        parse_config(str(tmp_path / "missing.cfg"))
    with pytest.raises(ConfigError, match="seeds"):
        parse_config(overrides={"seeds": []})


def test_config_round_trip(tmp_path):
    c = parse_config(overrides={"d": 8, "alpha": 0.05, "seeds": [3, 4], "mode": "rigorous", "c_B": 0.5})
    p = tmp_path / "r.cfg"
    p.write_text(emit_config(c))
    assert parse_config(str(p)) == c


def test_run_byte_identical(tmp_path, capsys):
    args = ["run", "--seeds", "1,2", "--horizon", "400"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    for name in ("d2_a0.1_seed1.csv", "d2_a0.1_seed2.csv", "d2_a0.1_aggregate.json"):
        a = (tmp_path / "a" / name).read_bytes()
        b = (tmp_path / "b" / name).read_bytes().replace(b"/b", b"/a")
        assert a == b
    lines = (tmp_path / "a" / "d2_a0.1_seed1.csv").read_text().splitlines()
    header = [ln for ln in lines if not ln.startswith("#")][0]
    assert header.startswith("t,z,y,y_hat,score")
    assert len([ln for ln in lines if not ln.startswith("#")]) == 401
    doc = json.loads((tmp_path / "a" / "d2_a0.1_aggregate.json").read_text())
    assert len(doc["runs"]) == 2 and doc["aggregate"]["n_runs"] == 2


def test_sweep_grid(tmp_path, capsys):
    code = main(["sweep", "--alphas", "0.05,0.1", "--dims", "2,8", "--horizon", "300", "--seed", "1",
                 "--out", str(tmp_path)])
    assert code == 0
    assert len(list(tmp_path.glob("*_aggregate.json"))) == 4
    assert main(["sweep", "--cell", "2:0.1", "--horizon", "200", "--seed", "1", "--out", str(tmp_path / "c")]) == 0
    assert len(list((tmp_path / "c").glob("*_aggregate.json"))) == 1


def test_exit_codes(tmp_path, capsys):
    assert main(["run", "--alpha", "0.7", "--out", str(tmp_path)]) == 1
    assert main(["run", "--bogus-flag"]) == 1
    assert main(["oracle", "--alpha", "0.6", "--dim", "2"]) == 1
    p = tmp_path / "bad.cfg"
    p.write_text("seeds = \n")
    assert main(["validate-config", "--config", str(p)]) == 1


def test_oracle_command(capsys):
    assert main(["oracle", "--alpha", "0.1", "--dim", "2", "--samples", "200000"]) == 0
    out = dict(line.split()[:2] for line in capsys.readouterr().out.splitlines())
    o = oracle_tau_p_star(0.1, 2)
    assert float(out["tau_star"]) == pytest.approx(o.tau_star, rel=1e-8)
    assert float(out["p_star"]) == pytest.approx(o.p_star, rel=1e-8)
    # m = 1/V_d cancels the ball volume: tau^(d+2) / (p* (d+2))
    assert float(out["lambda0_min"]) == pytest.approx(o.tau_star**4 / (4 * o.p_star), rel=1e-8)


def test_validate_config_prints_resolved(capsys):
    assert main(["validate-config", "--alpha", "0.05", "--seeds", "1..3"]) == 0
    text = capsys.readouterr().out
    assert "alpha = 0.05" in text and "seeds = 1,2,3" in text and "c_B = 0.002" in text


def test_diagnostics_command(capsys):
    assert main(["diagnostics", "--samples", "200000"]) == 0
    assert "FAIL" not in capsys.readouterr().out
