from __future__ import annotations

import json
from pathlib import Path

import pytest

from jumpvex.cli import main
from jumpvex.model import (AffineZ, Atoms, Constant, Density, Model, Proportional,
                           RelativeConstant, RelativeOfZ, ZeroJump, model_to_dict)

RC = Model(beta=Proportional(0.2), phi=RelativeConstant(0.1), lam=Constant(1.0),
           measure=Atoms((1.0,), (1.0,)), label="rc")


@pytest.fixture
def models(tmp_path):
    paths = {}
    for name, m in {"rc": RC, "bs": RC.with_(phi=ZeroJump(), label="bs"),
                    "dens": Model(beta=Proportional(0.2), phi=RelativeOfZ(AffineZ(0.0, 0.05)),
                                  lam=Constant(1.0), measure=Density(), label="dens")}.items():
        p = tmp_path / f"{name}.json"
        p.write_text(json.dumps(model_to_dict(m)))
        paths[name] = str(p)
    return paths


def run(args, out: Path):
    return main(args + ["--out-dir", str(out)])


def manifest(out: Path) -> dict:
    return json.loads((out / "manifest.json").read_text())


def test_counterexample(tmp_path, capsys):
    out = tmp_path / "ce"
    assert run(["counterexample", "--n-paths", "20000"], out) == 0
    rep = json.loads((out / "counterexample.json").read_text())
    assert rep["is_convex"] is False
    assert 0.5 <= rep["witness"]["x"] <= 1.0
    assert abs(rep["u"]["0.5"] - 0.5) <= 1e-9 and abs(rep["u"]["1.0"]) <= 1e-9
    assert rep["mc_gap"] > 3 * rep["mc"]["stderr"]
    assert "convex=False" in capsys.readouterr().out


def test_price_fd_linear(tmp_path, models, capsys):
    out = tmp_path / "p"
    assert run(["price", "--model", models["rc"], "--payoff", "linear:a=1,b=0", "--x0", "2.5",
                "--T", "1", "--method", "fd"], out) == 0
    res = json.loads((out / "result.json").read_text())
    assert res["price"] == pytest.approx(2.5, abs=1e-6)
    assert (out / "surface.csv").read_text().startswith("x,tau,u\n")
    m = manifest(out)
    assert m["config"]["grid"]["n_x"] == 401
    assert set(m["outputs"]) == {str(out / "surface.csv"), str(out / "result.json")}
    assert m["duration_seconds"] >= 0


def test_price_mc_defaults_recorded(tmp_path, models):
    out = tmp_path / "p"
    assert run(["price", "--model", models["rc"], "--payoff", "call:K=1", "--x0", "1", "--T", "1",
                "--method", "mc", "--n-paths", "2000"], out) == 0
    cfg = manifest(out)["config"]
    assert cfg["mc"] == {"n_paths": 2000, "n_steps": 256, "seed": 42, "antithetic": False,
                         "z_quadrature_nodes": 64}
    assert cfg["model"] == model_to_dict(RC)
    assert (out / "paths.csv").exists()


def test_compare_exit_codes(tmp_path, models):
    a = tmp_path / "a"
    assert run(["compare", "--model-hi", models["rc"], "--model-lo", models["bs"],
                "--payoff", "call:K=1", "--T", "1", "--n-x", "201"], a) == 0
    assert json.loads((a / "comparison.json").read_text())["dominated"] is True
    b = tmp_path / "b"
    assert run(["compare", "--model-hi", models["bs"], "--model-lo", models["rc"],
                "--payoff", "call:K=1", "--T", "1", "--n-x", "201"], b) == 2
    rep = json.loads((b / "comparison.json").read_text())
    assert rep["hypotheses"] == "hypotheses unmet"


def test_check_truncate_lcp_bermudan(tmp_path, models):
    assert run(["check", "--model", models["rc"]], tmp_path / "c") == 0
    rep = json.loads((tmp_path / "c" / "conditions.json").read_text())
    assert rep["entries"]["erlander"]["status"] == "pass"

    out = tmp_path / "t"
    assert run(["truncate", "--model", models["dens"], "--n", "4", "--x-grid",
                "geom:0.01,100,41", "--out", "d4.json"], out) == 0
    d4 = json.loads((out / "d4.json").read_text())
    assert d4["phi"]["kind"] == "tabulated_xz"
    assert d4["measure"]["support"] == [0.25, 4.0]

    assert run(["lcp", "--model", models["rc"], "--x", "0.5,1,2", "--t", "0",
                "--widths", "0.1,0.5"], tmp_path / "l") == 0
    assert json.loads((tmp_path / "l" / "lcp.json").read_text())["verdict"] == \
        "no-violation-found"

    out = tmp_path / "b"
    assert run(["bermudan", "--model", models["bs"], "--payoff", "put:K=1", "--T", "1",
                "--dates", "0,0.25,0.5,0.75", "--n-x", "201"], out) == 0
    res = json.loads((out / "result.json").read_text())
    assert res["bermudan"] >= res["european"]
    assert manifest(out)["config"]["grid"]["n_t"] % 4 == 1


@pytest.mark.parametrize("argv", [
    ["price", "--bogus"],
    ["price", "--model", "missing.json", "--payoff", "call:K=1", "--x0", "1", "--T", "1"],
    ["frobnicate"],
    [],
])
def test_errors_exit_one(tmp_path, argv, capsys):
    assert main(argv + (["--out-dir", str(tmp_path)] if argv[:1] == ["price"] else [])) == 1
    err = capsys.readouterr().err
    assert err.startswith("jumpvex: error:") and err.count("\n") == 1


def test_malformed_json_and_payload(tmp_path, models, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run(["check", "--model", str(bad)], tmp_path / "x") == 1
    assert run(["price", "--model", models["rc"], "--payoff", "swap:K=1", "--x0", "1",
                "--T", "1"], tmp_path / "y") == 1
    assert run(["price", "--model", models["rc"], "--payoff", "call:K=1", "--x0", "-1",
                "--T", "1", "--method", "mc"], tmp_path / "z") == 1
    errs = capsys.readouterr().err.strip().splitlines()
    assert len(errs) == 3


def test_replay_byte_identical(tmp_path, models):
    first = tmp_path / "first"
    assert run(["price", "--model", models["rc"], "--payoff", "call:K=1", "--x0", "1", "--T", "1",
                "--method", "mc", "--n-paths", "5000"], first) == 0
    Path(models["rc"]).unlink()  # the manifest is self-contained
    second = tmp_path / "second"
    assert main(["--replay", str(first / "manifest.json"), "--out-dir", str(second)]) == 0
    for name in ("result.json", "paths.csv"):
        assert (first / name).read_bytes() == (second / name).read_bytes()
    a, b = manifest(first), manifest(second)
    assert a["config"] == b["config"]
