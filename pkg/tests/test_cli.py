import json
import math
import shutil
import subprocess
import sys

import numpy as np
import pytest

from loopmech import (
    SystemParams,
    cli,
    conditional_witness_map,
    mode_spectrum,
    negativity_map,
    stability_boundary,
)


def _parse_table(text):
    """Split a CSV artifact into (meta, columns, row dicts)."""
    meta = {}
    body = []
    for line in text.strip().splitlines():
        if line.startswith("# "):
            if " = " in line:
                key, _, value = line[2:].partition(" = ")
                meta[key] = value
            continue
        body.append(line)
    columns = body[0].split(",")
    rows = []
    for line in body[1:]:
        cells = []
        for cell in line.split(","):
            if cell == "true":
                cells.append(True)
            elif cell == "false":
                cells.append(False)
            else:
                cells.append(float(cell))
        rows.append(dict(zip(columns, cells)))
    return meta, columns, rows


def _run(tmp_path, argv, name="out.csv"):
    path = tmp_path / name
    rc = cli.main([*argv, "--out", str(path)])
    assert rc == 0
    return path.read_text(encoding="utf-8")


def test_spectrum_open_loop_rows(tmp_path):
    text = _run(
        tmp_path,
        ["spectrum", "--eta", "0", "--gammaq", "0.7", "--theta-points", "6"],
    )
    meta, columns, rows = _parse_table(text)
    assert columns == [
        "theta", "omega_plus_sq", "omega_minus_sq",
        "gamma_plus", "gamma_minus", "stable",
    ]
    assert len(rows) == 6
    for row in rows:
        assert row["omega_plus_sq"] == 1.0
        assert row["omega_minus_sq"] == 1.0
        assert row["gamma_plus"] == 0.7
        assert row["gamma_minus"] == 0.7
        assert row["stable"] is True
    cfg = json.loads(meta["config"])
    assert cfg["eta"] == 0.0 and cfg["gammaq"] == 0.7


def test_spectrum_matches_library(tmp_path):
    text = _run(tmp_path, ["spectrum", "--theta-points", "8"])
    _, _, rows = _parse_table(text)
    for row in rows:
        s = mode_spectrum(SystemParams(gamma_q=1.0, eta=0.5, theta=row["theta"]))
        assert row["omega_plus_sq"] == pytest.approx(s.omega_plus_sq, rel=1e-10)
        assert row["omega_minus_sq"] == pytest.approx(s.omega_minus_sq, rel=1e-10)
        assert row["gamma_plus"] == pytest.approx(s.gamma_plus, rel=1e-10)
        assert row["stable"] == s.stable


def test_reruns_are_byte_identical(tmp_path):
    argv = ["spectrum", "--theta-points", "17", "--eta", "0.3"]
    a = _run(tmp_path, argv, "a.csv")
    b = _run(tmp_path, argv, "b.csv")
    assert a == b


def test_transient_embeds_optimum_metadata(tmp_path):
    text = _run(
        tmp_path,
        ["transient", "--gammaq", "2.0", "--t-max", "1.0", "--n-points", "11"],
    )
    meta, columns, rows = _parse_table(text)
    assert columns == ["gammaq", "t", "nu_min", "log_negativity"]
    assert len(rows) == 11
    assert rows[0]["t"] == 0.0 and rows[-1]["t"] == 1.0
    ellipses = json.loads(meta["ellipses"])
    assert len(ellipses) == 1
    best = ellipses[0]
    assert best["gammaq"] == 2.0
    assert best["t_star"] == pytest.approx(0.8353636914768264, abs=2e-6)
    assert best["nu_min"] == pytest.approx(0.5607394927424352, rel=1e-6)
    for key in ("t0", "t_star_state"):
        for mode in ("plus", "minus"):
            ell = best[key][mode]
            assert set(ell) == {"semi_axes", "orientation", "squeezing_db"}


def test_transient_ellipses_to_file(tmp_path):
    side = tmp_path / "ellipses.json"
    text = _run(
        tmp_path,
        [
            "transient", "--gammaq", "1.0", "--t-max", "0.5",
            "--n-points", "6", "--ellipses-out", str(side),
        ],
    )
    meta, _, _ = _parse_table(text)
    assert meta["ellipses_file"] == str(side)
    doc = json.loads(side.read_text(encoding="utf-8"))
    assert doc[0]["gammaq"] == 1.0


def test_negativity_map_matches_library(tmp_path):
    argv = [
        "negativity-map", "--eta", "0.5",
        "--theta-min", "0.3", "--theta-max", "6.0", "--theta-points", "5",
        "--gammaq-min", "0.5", "--gammaq-max", "2.5", "--gammaq-points", "3",
        "--threads", "2",
    ]
    _, _, rows = _parse_table(_run(tmp_path, argv))
    thetas = np.linspace(0.3, 6.0, 5, endpoint=False)
    gammas = np.linspace(0.5, 2.5, 3)
    ref = negativity_map(
        SystemParams(gamma_q=0.5, eta=0.5, theta=0.0), thetas, gammas, workers=2
    )
    assert len(rows) == 15
    for k, row in enumerate(rows):
        i, j = divmod(k, 3)
        assert row["theta"] == pytest.approx(thetas[i], rel=1e-12)
        assert row["gammaq"] == pytest.approx(gammas[j], rel=1e-12)
        want = ref.log_negativity[i, j]
        if math.isnan(want):
            assert math.isnan(row["log_negativity"])
        else:
            assert row["log_negativity"] == pytest.approx(want, rel=1e-9)
        assert row["stable"] == ref.stable[i, j]


def test_conditional_map_matches_library(tmp_path):
    argv = [
        "conditional-map", "--eta-c", "0.5", "--eta-m", "0.8",
        "--theta-min", "0.4", "--theta-max", "5.9", "--theta-points", "6",
        "--gammaq-min", "0.3", "--gammaq-max", "20.0", "--gammaq-points", "4",
    ]
    meta, _, rows = _parse_table(_run(tmp_path, argv))
    assert meta["eta"] == "0.1"
    params = SystemParams(gamma_q=1.0, eta=0.1, theta=0.0, eta_c=0.5, eta_m=0.8)
    thetas = np.linspace(0.4, 5.9, 6, endpoint=False)
    gammas = np.linspace(0.3, 20.0, 4)
    ref = conditional_witness_map(params, thetas, gammas)
    for k, row in enumerate(rows):
        i, j = divmod(k, 4)
        assert row["stable"] == ref.stable[i, j]
        if row["stable"]:
            assert row["nu_min"] == pytest.approx(ref.nu_min[i, j], rel=1e-9)
        else:
            assert math.isnan(row["nu_min"])


def test_stability_rows(tmp_path):
    argv = [
        "stability", "--eta", "0.5",
        "--gammaq-min", "0.05", "--gammaq-max", "4.0", "--gammaq-points", "6",
    ]
    _, _, rows = _parse_table(_run(tmp_path, argv))
    for row in rows:
        band = stability_boundary(
            SystemParams(gamma_q=row["gammaq"], eta=0.5, theta=0.0)
        )
        if band is None:
            assert row["has_band"] is False
            assert math.isnan(row["theta_minus"])
        else:
            assert row["has_band"] is True
            assert row["theta_minus"] == pytest.approx(band.theta_minus, rel=1e-10)
            assert row["theta_plus"] == pytest.approx(band.theta_plus, rel=1e-10)
            assert row["theta_minus"] < row["theta_plus"]
    assert any(r["has_band"] for r in rows)
    assert any(not r["has_band"] for r in rows)


def test_verify_writes_report_json(tmp_path):
    argv = [
        "verify", "--n-traj", "10", "--t-max", "2.0", "--report-t-max", "0.5",
        "--n-report", "6", "--n-resamples", "50", "--seed", "1", "--threads", "1",
    ]
    path = tmp_path / "report.json"
    assert cli.main([*argv, "--out", str(path)]) == 0
    doc = json.loads(path.read_text(encoding="utf-8"))
    assert set(doc) == {
        "metadata", "theory_curve", "retrodicted_curve",
        "ci_stat", "ci_sys", "ci_combined",
    }
    assert doc["metadata"]["config"]["n_trajectories"] == 10
    assert len(doc["retrodicted_curve"]) == 6
    assert doc["ci_sys"]["relative_2sigma"] == pytest.approx(0.05, abs=1e-4)


def test_config_file_overrides_flags(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"eta": 0.0, "theta-points": 4}), encoding="utf-8")
    text = _run(tmp_path, ["spectrum", "--eta", "0.5", "--config", str(cfg)])
    meta, _, rows = _parse_table(text)
    assert json.loads(meta["config"])["eta"] == 0.0
    assert len(rows) == 4
    assert all(r["omega_plus_sq"] == 1.0 for r in rows)
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"no-such-key": 1}), encoding="utf-8")
    assert cli.main(["spectrum", "--config", str(bad)]) == 2


def test_error_exit_codes(tmp_path, capsys):
    assert cli.main([]) == 2  # missing subcommand
    assert cli.main(["spectrum", "--bogus"]) == 2
    capsys.readouterr()
    rc = cli.main(
        ["negativity-map", "--gammaq-min", "-1.0", "--theta-points", "2",
         "--gammaq-points", "2", "--out", str(tmp_path / "x.csv")]
    )
    assert rc == 2
    assert "error:" in capsys.readouterr().err
    # witness overflow on an absurdly long window maps to the numerical code
    rc = cli.main(
        ["transient", "--gammaq", "2.0", "--t-max", "30", "--n-points", "4",
         "--out", str(tmp_path / "y.csv")]
    )
    assert rc == 3
    assert "numerical failure:" in capsys.readouterr().err


def test_stdout_matches_file_output(tmp_path, capsys):
    argv = ["spectrum", "--theta-points", "5"]
    assert cli.main(argv) == 0
    streamed = capsys.readouterr().out
    assert streamed == _run(tmp_path, argv)


def test_module_and_script_entry_points(tmp_path):
    out = tmp_path / "m.csv"
    proc = subprocess.run(
        [sys.executable, "-m", "loopmech", "spectrum", "--theta-points", "3",
         "--out", str(out)],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert out.read_text(encoding="utf-8").startswith("# loopmech spectrum")
    script = shutil.which("loopmech")
    assert script is not None
    proc = subprocess.run(
        [script, "spectrum", "--theta-points", "3"], capture_output=True, text=True
    )
    assert proc.returncode == 0, proc.stderr
    assert proc.stdout == out.read_text(encoding="utf-8")
