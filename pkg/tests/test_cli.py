import json

import pytest

from mtplinear.cli import main
from mtplinear.config import ConfigError, DEFAULTS, dump_config, load_config, parse_approx, parse_dimfun
from mtplinear.dimfun import Clamped, PowerLaw, Table


def run(tmp_path, command, name="out", **sets):
    out = tmp_path / name
    argv = [command, "--out", str(out)]
    for key, val in sets.items():
        argv += ["--set", f"{key.replace('__', '.')}={json.dumps(val)}"]
    code = main(argv)
    report = json.loads((out / "report.json").read_text()) if (out / "report.json").exists() else None
    return code, report, out


def test_predict(tmp_path):
    code, rep, _ = run(tmp_path, "predict", scene__n=2, scene__m=1, scene__psi="powerlaw c=1 tau=3")
    assert code == 0
    assert rep["results"]["dimension"] == pytest.approx(1.75, abs=1e-12)


def test_classify(tmp_path):
    code, rep, _ = run(tmp_path, "classify", scene__n=2, scene__m=1, scene__psi="powerlaw c=1 tau=3",
                       f="dimfun c=1 s=2 a=0")
    assert code == 0
    assert rep["results"]["lebesgue"] == "Convergent"
    assert rep["results"]["hausdorff"] == "Convergent"


def test_malformed_psi_exits_2(tmp_path, capsys):
    code, _, _ = run(tmp_path, "classify", scene__psi="powerlaw c=1 tow=3")
    assert code == 2
    assert "scene.psi" in capsys.readouterr().err


def test_bad_config_file(tmp_path, capsys):
    path = tmp_path / "c.json"
    path.write_text('{"scene": {"n": 2,}}')
    assert main(["predict", "--config", str(path)]) == 2
    assert str(path) in capsys.readouterr().err


def test_unknown_key(tmp_path):
    code, _, _ = run(tmp_path, "predict", scene__colour=1)
    assert code == 2


def test_csv_byte_identical(tmp_path):
    kw = dict(scene__n=1, scene__m=1, scene__psi="powerlaw c=1 tau=3",
              estimator__schedule=[[2 ** t, 2.0 ** (-4 * t)] for t in range(3, 7)], estimator__seed=7)
    c1, _, o1 = run(tmp_path, "boxdim", "a", **kw)
    c2, _, o2 = run(tmp_path, "boxdim", "b", **kw)
    assert c1 == c2 == 0
    assert (o1 / "boxcount.csv").read_bytes() == (o2 / "boxcount.csv").read_bytes()
    assert (o1 / "boxcount.csv").read_text().startswith("# mtplinear boxcount schema v1")


def test_transfer_check(tmp_path):
    code, rep, out = run(tmp_path, "transfer-check", scene__n=2, scene__m=1,
                         scene__psi="powerlaw c=1 tau=3", f="dimfun c=1 s=1.5 a=0", estimator__q_max=50)
    assert code == 0
    assert rep["results"]["hausdorff"] == rep["results"]["lebesgue_of_theta"]
    assert len((out / "transfer.csv").read_text().splitlines()) == 52


def test_mtp_build_default_reports_named_property(tmp_path):
    code, rep, _ = run(tmp_path, "mtp-build", f="dimfun c=1 s=0.5 a=0", engine__depth=3)
    assert code == 1
    assert [c["property"] for c in rep["checks"] if not c["passed"]] == ["P5"]


def test_config_round_trip():
    cfg = load_config({"command": "measure", "scene": {"n": 2}})
    text = dump_config(cfg)
    assert dump_config(load_config(text)) == text
    assert set(cfg) == set(DEFAULTS)


def test_parsers():
    assert parse_approx("powerlaw c=2 tau=3") == PowerLaw(2.0, 3.0)
    assert isinstance(parse_approx("table default=0 values=1:0.5,2:0.25"), Table)
    assert isinstance(parse_approx("clamped cap=0.4 (powerlaw c=1 tau=1)"), Clamped)
    assert parse_dimfun("dimfun c=1 s=1.75 a=0")(0.0625) == pytest.approx(0.0625 ** 1.75, rel=1e-12)
    for bad in ("powerlaw tau=x", "table values=a:1", "gauss tau=1", "powerlaw c=1"):
        with pytest.raises(ConfigError):
            parse_approx(bad)
    with pytest.raises(ConfigError):
        parse_dimfun("dimfun c=1")
