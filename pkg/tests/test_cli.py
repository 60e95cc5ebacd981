import json
import logging

import pytest

from optresp.cli import main
from optresp.transfer import CACHE_VERSION

SMALL = ["-s", "n=400", "-s", "m=100", "-s", "I=6", "-s", "J=6", "-s", "n_samples=50", "-j", "1"]


def run(tmp_path, command, *args, cache=True):
    extra = ["--cache-dir", str(tmp_path / "cache")] if cache else ["--no-cache"]
    return main([command, "-o", str(tmp_path / "out"), *SMALL, *extra, *args])


def test_version(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert f"kernel cache format {CACHE_VERSION}" in capsys.readouterr().out


def test_build_kernel_twice_hits_cache(tmp_path, caplog):
    caplog.set_level(logging.INFO)
    assert run(tmp_path, "build-kernel") == 0
    assert "cache hit" not in caplog.text
    caplog.clear()
    assert run(tmp_path, "build-kernel") == 0
    assert "cache hit" in caplog.text
    meta = json.loads((tmp_path / "out" / "kernel.json").read_text())
    assert meta["cache"] == "hit" and meta["config"]["n"] == 400
    assert "n=400" in meta["overrides"]


def test_corrupt_cache_rebuilt_with_warning(tmp_path, caplog):
    assert run(tmp_path, "build-kernel") == 0
    (path,) = (tmp_path / "cache").glob("*.ortk")
    path.write_bytes(b"ORTK" + b"\0" * 40)
    caplog.set_level(logging.INFO)
    assert run(tmp_path, "build-kernel") == 0
    assert "rebuilt" in caplog.text
    assert json.loads((tmp_path / "out" / "kernel.json").read_text())["cache"] == "rebuilt"


def test_cache_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("OPTRESP_CACHE_DIR", str(tmp_path / "envcache"))
    assert main(["build-kernel", "-o", str(tmp_path / "out"), *SMALL]) == 0
    assert list((tmp_path / "envcache").glob("*.ortk"))


def test_invariant_and_optimize(tmp_path):
    assert run(tmp_path, "invariant") == 0
    inv = json.loads((tmp_path / "out" / "invariant.json").read_text())
    assert inv["residual"] <= 1e-10 and len(inv["maxima"]) == 2
    assert run(tmp_path, "optimize") == 0
    out = tmp_path / "out"
    assert (out / "coefficients.csv").read_text().startswith("i,j,kind,G_r")
    meta = json.loads((out / "optimal_pert.json").read_text())
    assert meta["n_basis"] == 2 * 6 + 4 * 36 and meta["seed"] == 20240917


def test_verify_and_reproduce(tmp_path):
    assert run(tmp_path, "verify") == 0
    report = json.loads((tmp_path / "out" / "verify.json").read_text())
    assert all(a["status"] == "pass" for a in report["audits"])
    assert run(tmp_path, "reproduce-figures", "--asymmetric") == 0
    out = tmp_path / "out"
    for name in ("fig1a_kernel.csv", "fig1b_f0.csv", "fig3d_densities.csv", "fig4b_optimal_pert.csv", "report.json"):
        assert (out / name).exists()
    assert "wall_clock" in json.loads((out / "report.json").read_text())


def test_ou_check(tmp_path):
    assert main(["ou-check", "-o", str(tmp_path)]) == 0
    res = json.loads((tmp_path / "ou_check.json").read_text())
    assert min(res["ratios"]) >= 1.5


def test_exit_codes(tmp_path):
    assert run(tmp_path, "invariant", "-s", "n=401") == 2
    assert run(tmp_path, "invariant", "-s", "max_iter=2", cache=False) == 3
    # eps too small for this mesh: negative kernel entries fail the audit
    assert run(tmp_path, "build-kernel", "-s", "epsilon=0.05", cache=False) == 1
