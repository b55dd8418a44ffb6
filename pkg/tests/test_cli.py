import csv
import io
import math
from pathlib import Path

import numpy as np
import pytest

from phasedistill.cli import EXIT_DATA, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, main, parse_number
from phasedistill.montecarlo import SimulationConfig, run_qcp
from phasedistill.analytics import ProtocolParams

GOLDEN = Path(__file__).parent / "golden"


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def table(text):
    """Split CLI output into (header dict, list of row dicts)."""
    head, body = {}, []
    for line in text.splitlines():
        if line.startswith("# "):
            key, _, value = line[2:].partition("=")
            head[key] = value
        else:
            body.append(line)
    return head, list(csv.DictReader(io.StringIO("\n".join(body))))


def column(rows, name):
    return np.array([float(r[name]) for r in rows])


# -- argument parsing -------------------------------------------------------


@pytest.mark.parametrize(
    "text, value",
    [("1.5", 1.5), ("pi", math.pi), ("pi/2", math.pi / 2), ("-pi/4", -math.pi / 4), ("0.5*pi", math.pi / 2), ("2pi", 2 * math.pi), ("inf", math.inf)],
)
def test_parse_number(text, value):
    assert parse_number(text) == value


def test_usage_errors(capsys):
    assert run(capsys, "sweep-sigma", "--engine", "montecarlo", "--trials", "0")[0] == EXIT_USAGE
    assert run(capsys, "sweep-sigma", "--q", "x")[0] == EXIT_USAGE
    assert run(capsys, "sweep-sigma", "--vx", "0.1", "--vp", "2")[0] == EXIT_USAGE
    assert run(capsys, "sweep-sigma", "--check")[0] == EXIT_USAGE
    assert run(capsys, "povm", "--q", "-1")[0] == EXIT_USAGE
    assert run(capsys, "tradeoff", "--grid", "1.5")[0] == EXIT_USAGE
    code, out, err = run(capsys, "nonsense")
    assert code == EXIT_USAGE and out == ""
    assert run(capsys, "--version")[0] == EXIT_OK


def test_trials_rejected_before_any_work(capsys, monkeypatch):
    import phasedistill.cli as cli

    monkeypatch.setattr(cli, "sweep", lambda spec: pytest.fail("sweep ran"))
    code, out, err = run(capsys, "qcp", "--engine", "both", "--trials", "-5")
    assert code == EXIT_USAGE
    assert "--trials" in err and out == ""


# -- sweeps -----------------------------------------------------------------


def test_default_sigma_sweep_matches_golden(capsys):
    code, out, _ = run(capsys, "sweep-sigma")
    assert code == EXIT_OK
    assert out == (GOLDEN / "sweep_sigma_default.csv").read_text()


def test_qcp_sweep_matches_golden(tmp_path, capsys):
    dest = tmp_path / "qcp.csv"
    code, out, _ = run(capsys, "qcp", "--engine", "analytic", "--grid", "0.5,1.0", "--out", str(dest))
    assert code == EXIT_OK and out == ""
    assert dest.read_text() == (GOLDEN / "qcp_analytic.csv").read_text()


def test_sigma_sweep_trends(capsys):
    _, out, _ = run(capsys, "sweep-sigma", "--grid", "0,0.17,0.28,0.40")
    head, rows = table(out)
    assert head["q"] == "1"
    for theta in ("0", "1.570796327"):
        sel = [r for r in rows if r["theta"] == theta]
        v_in, v_out = column(sel, "v_in"), column(sel, "v_out")
        assert np.all(np.diff(v_in) > 0)
        assert np.all(v_out[1:] < v_in[1:])


def test_theta_sweep_landmarks(capsys):
    _, out, _ = run(capsys, "sweep-theta")
    _, rows = table(out)
    theta, v = column(rows, "theta"), column(rows, "v_out")
    assert len(rows) == 65 and theta[-1] == pytest.approx(math.pi)
    assert v[0] < v[1] and v[0] < v[-2]
    assert theta[np.argmin(v)] == pytest.approx(math.pi / 2)
    assert np.all(v < column(rows, "v_in"))


def test_columns_stable_and_deterministic(capsys):
    argv = ("sweep-threshold", "--grid", "0.5,1", "--sigma", "0.28", "--theta", "0", "--engine", "both", "--trials", "20000", "--uproduct", "--seed", "4")
    code, first, _ = run(capsys, *argv)
    assert code == EXIT_OK
    assert run(capsys, *argv)[1] == first
    _, rows = table(first)
    assert list(rows[0]) == [
        "q_threshold", "sigma", "theta", "n_qcp", "v_in", "v_out", "p_success",
        "v_out_hat", "se_v", "p_hat", "se_p", "n_accepted", "z_v", "z_p",
        "u_product", "u_hat", "se_u",
    ]


def test_parallel_rows_keep_grid_order(capsys):
    argv = ("sweep-threshold", "--grid", "0.3:2:5", "--sigma", "0.28", "--theta", "0,pi/2")
    serial = run(capsys, *argv)[1]
    parallel = run(capsys, *argv, "--jobs", "3")[1]
    assert serial == parallel


def test_self_check_passes(capsys):
    code, out, _ = run(capsys, "sweep-sigma", "--grid", "0.28", "--engine", "both", "--trials", "50000", "--check")
    assert code == EXIT_OK
    _, rows = table(out)
    assert np.all(np.abs(column(rows, "z_v")) <= 3) and np.all(np.abs(column(rows, "z_p")) <= 3)


def test_self_check_fails_loudly(capsys, monkeypatch):
    import phasedistill.sweeps as sweeps

    real = sweeps.analytics.v_out_qcp
    monkeypatch.setattr(
        sweeps.analytics, "v_out_qcp", lambda p: type(real(p))(v_out=10.0, p_success=0.5, v_in=1.0)
    )
    code, _, err = run(capsys, "sweep-sigma", "--grid", "0.28", "--theta", "0", "--engine", "both", "--trials", "5000", "--check")
    assert code == EXIT_NUMERIC
    assert "self-check failed" in err


def test_numerical_failure_identifies_point(capsys, monkeypatch):
    import phasedistill.sweeps as sweeps
    from phasedistill.analytics import NumericalConvergenceError

    def boom(params):
        raise NumericalConvergenceError("nodes disagree")

    monkeypatch.setattr(sweeps.analytics, "v_out_qcp", boom)
    code, _, err = run(capsys, "sweep-sigma", "--grid", "0.28", "--theta", "0")
    assert code == EXIT_NUMERIC
    assert "sigma=0.28" in err and "nodes disagree" in err


def test_tradeoff_hits_targets(capsys):
    code, out, _ = run(capsys, "tradeoff", "--grid", "0.05,0.3", "--sigma", "0.28", "--theta", "pi/2")
    assert code == EXIT_OK
    _, rows = table(out)
    np.testing.assert_allclose(column(rows, "p_success"), column(rows, "p_target"), atol=1e-9)
    v = column(rows, "v_out")
    assert abs(v[1] - v[0]) / v[0] < 0.05


def test_config_file(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# plateau check\nsigma=0.28\ntheta=pi/2\ngrid=0.5,1.0\n")
    code, out, _ = run(capsys, "sweep-threshold", "--config", str(cfg))
    assert code == EXIT_OK
    head, rows = table(out)
    assert head["sigma"] == "0.28" and len(rows) == 2
    # flags win over the file
    _, out, _ = run(capsys, "sweep-threshold", "--config", str(cfg), "--grid", "0.7")
    assert len(table(out)[1]) == 1
    cfg.write_text("sigmaa=0.3\n")
    assert run(capsys, "sweep-threshold", "--config", str(cfg))[0] == EXIT_USAGE


# -- povm -------------------------------------------------------------------


def test_povm_table(capsys):
    code, out, _ = run(capsys, "povm", "--q", "0.7", "--n-max", "0")
    head, rows = table(out)
    assert code == EXIT_OK and len(rows) == 1
    assert float(rows[0]["P_n"]) == pytest.approx(math.erf(0.7), abs=1e-10)
    assert "vacuum variance is 1/2" in head["units"]

    _, out, _ = run(capsys, "povm", "--n-max", "20")
    p = column(table(out)[1], "P_n")
    assert len(p) == 21 and np.all((p > 0) & (p < 1))

    _, out, _ = run(capsys, "povm", "--q", "10")
    np.testing.assert_allclose(column(table(out)[1], "P_n"), 1.0, atol=1e-8)


# -- gen-series and postprocess ---------------------------------------------


@pytest.fixture
def exported(tmp_path, capsys):
    path = tmp_path / "series.csv"
    code = main(["gen-series", "--sigma", "0.28", "--trials", "20000", "--seed", "3", "--raw-variance", "4", "--out", str(path)])
    capsys.readouterr()
    assert code == EXIT_OK
    return path


@pytest.mark.parametrize("n_qcp", [1, 2])
def test_postprocess_reproduces_simulation(exported, capsys, n_qcp):
    code, out, _ = run(capsys, "postprocess", str(exported), "--nqcp", str(n_qcp), "--seed", "3")
    assert code == EXIT_OK
    head, rows = table(out)
    assert head["q"] == "1 (default)"
    assert head["units"] == "shot noise"
    cfg = SimulationConfig(ProtocolParams(sigma=0.28, n_qcp=n_qcp), n_trials=20000, phase_model="bandlimited", seed=3)
    direct = run_qcp(cfg)
    assert int(rows[0]["n_accepted"]) == direct.n_accepted
    for col, attr in (("v_out_hat", "v_out_hat"), ("p_hat", "p_hat"), ("se_v", "se_v")):
        assert float(rows[0][col]) == pytest.approx(getattr(direct, attr), rel=1e-9)


def test_postprocess_explicit_q_echo(exported, capsys):
    head, _ = table(run(capsys, "postprocess", str(exported), "--q", "0.7")[1])
    assert head["q"] == "0.7"


def test_postprocess_window_longer_than_series(tmp_path, capsys):
    path = tmp_path / "short.csv"
    assert main(["gen-series", "--trials", "3", "--phase-model", "iid", "--out", str(path)]) == EXIT_OK
    code, out, err = run(capsys, "postprocess", str(path), "--nqcp", "10")
    assert code == EXIT_DATA
    assert "fewer than --nqcp 10" in err and "Traceback" not in err


def test_postprocess_data_errors(tmp_path, capsys):
    assert run(capsys, "postprocess", str(tmp_path / "missing.csv"))[0] == EXIT_DATA
    bad = tmp_path / "bad.csv"
    bad.write_text("# sample_rate_hz=1\n# trigger_angle_rad=0\n# verify_angle_rad=0\n# shot_noise_variance_raw=1\nindex,q1,q2\n0,nan,1\n")
    code, _, err = run(capsys, "postprocess", str(bad))
    assert code == EXIT_DATA and f"{bad}:6" in err


def test_gen_series_is_deterministic(tmp_path, capsys):
    paths = [tmp_path / f"{i}.csv" for i in range(2)]
    for p in paths:
        main(["gen-series", "--trials", "500", "--seed", "9", "--out", str(p)])
    assert paths[0].read_bytes() == paths[1].read_bytes()
