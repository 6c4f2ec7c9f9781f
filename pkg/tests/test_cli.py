import csv
import logging
import math

import numpy as np
import pytest

from nelson_tfd import __version__
from nelson_tfd.cli import ConfigError, load_config, main, resolve_config, residual_table
from nelson_tfd.core import PhysicalParams
from nelson_tfd.fields import Grid
from nelson_tfd.stats import MOMENT_NAMES


def read_csv(path):
    """(comments, header, rows) of a CLI output file."""
    comments, data = [], []
    for line in path.read_text(encoding="utf-8").splitlines():
        (comments if line.startswith("#") else data).append(line)
    rows = list(csv.reader(data))
    return comments, rows[0], rows[1:]


def run(tmp_path, command, *args, name="out"):
    out = tmp_path / name
    code = main([command, "--out", str(out), *args])
    return code, out


# ---- configuration ------------------------------------------------------

def test_config_file_and_aliases(tmp_path):
    f = tmp_path / "run.cfg"
    f.write_text("# comment\nbeta_bar = 3   # trailing\nn_paths=10\nT = 0.5\nbase_seed=0x10\n")
    cfg = resolve_config(load_config(f))
    assert (cfg.beta_bar, cfg.paths, cfg.horizon, cfg.seed) == (3.0, 10, 0.5, 16)


def test_beta_bar_wins_with_warning(caplog):
    with caplog.at_level(logging.WARNING, logger="nelson_tfd"):
        cfg = resolve_config({"beta": "7", "beta_bar": "2"})
    assert cfg.beta_bar == 2.0
    assert "beta_bar" in caplog.text


def test_absolute_beta_converted():
    cfg = resolve_config({"beta": "2", "hbar": "0.5", "omega": "3"})
    assert cfg.beta_bar == pytest.approx(3.0)
    assert resolve_config({"beta": "inf"}).params.zero_temperature


@pytest.mark.parametrize("raw", [
    {"paths": "0"}, {"dt": "-1"}, {"m": "0"}, {"beta_bar": "nan"}, {"bins": "1"},
    {"init": "cold"}, {"range": "1,1"}, {"seed": str(2 ** 64)}, {"colour": "blue"},
])
def test_invalid_config_raises(raw):
    with pytest.raises(ConfigError):
        resolve_config(raw)


def test_digest_ignores_threads_and_out():
    a = resolve_config({"threads": "1", "out": "a"})
    b = resolve_config({"threads": "4", "out": "b"})
    assert a.digest() == b.digest()
    assert a.digest() != resolve_config({"seed": "1"}).digest()


# ---- exit codes ---------------------------------------------------------

def test_bins_one_exits_2(tmp_path, caplog):
    code, _ = run(tmp_path, "histogram", "--paths", "10", "--set", "bins=1")
    assert code == 2
    assert "bins" in caplog.text


def test_empty_sweep_exits_2(tmp_path):
    code, _ = run(tmp_path, "uncertainty", "--paths", "10", "--set", "sweep=")
    assert code == 2


def test_unknown_key_and_missing_file_exit_2(tmp_path):
    assert run(tmp_path, "simulate", "--set", "nonsense=1")[0] == 2
    assert main(["simulate", "--config", str(tmp_path / "missing.cfg")]) == 2


def test_divergence_exits_3(tmp_path, caplog):
    code, _ = run(tmp_path, "simulate", "--paths", "4", "--dt", "5", "--horizon", "500",
                  "--set", "init=point", "--set", "x0=1")
    assert code == 3
    assert "diverged" in caplog.text


def test_coarse_grid_exits_4(tmp_path):
    code, out = run(tmp_path, "residuals", "--set", "h=0.5", "--set", "L=3")
    assert code == 4
    _, header, rows = read_csv(out / "residuals.csv")
    status = dict((r[0], r[header.index("status")]) for r in rows)
    assert "not-converging" in status.values()


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert __version__ in capsys.readouterr().out


# ---- simulate -----------------------------------------------------------

def test_single_path_zero_horizon(tmp_path):
    code, out = run(tmp_path, "simulate", "--paths", "1", "--horizon", "0",
                    "--set", "init=point", "--set", "x0=0.25", "--set", "x_tilde0=-0.5")
    assert code == 0
    comments, header, rows = read_csv(out / "paths.csv")
    assert header == ["path", "t", "x", "x_tilde", "X", "X_tilde"]
    assert rows == [["0", "0", "0.25", "-0.5", "0.25", "-0.5"]]
    assert comments[0] == f"# nelson-tfd {__version__}"
    assert any(c.startswith("# seed=") for c in comments)
    assert any(c.startswith("# config_hash=") for c in comments)


def test_nondimensional_columns(tmp_path):
    code, out = run(tmp_path, "simulate", "--paths", "1", "--horizon", "0", "--set", "m=4",
                    "--set", "init=point", "--set", "x0=0.5")
    assert code == 0
    row = read_csv(out / "paths.csv")[2][0]
    assert float(row[4]) == pytest.approx(2 * 0.5)


def test_byte_identical_reruns_and_thread_independence(tmp_path):
    args = ["--paths", "2000", "--horizon", "0.5", "--seed", "99"]
    outs = [run(tmp_path, "simulate", *args, "--threads", t, name=f"r{i}")[1]
            for i, t in enumerate(("1", "1", "3"))]
    for name in ("paths.csv", "moments.csv"):
        blobs = [(o / name).read_bytes() for o in outs]
        assert blobs[0] == blobs[1] == blobs[2]
        assert b"\r" not in blobs[0]
    assert (outs[0] / "moments.csv").read_bytes() != \
        (run(tmp_path, "simulate", "--paths", "2000", "--horizon", "0.5", "--seed", "98",
             name="other")[1] / "moments.csv").read_bytes()


def test_moments_csv_columns(tmp_path):
    code, out = run(tmp_path, "simulate", "--paths", "500", "--horizon", "1", "--dt", "0.01")
    assert code == 0
    _, header, rows = read_csv(out / "moments.csv")
    assert header[0] == "t"
    assert header[1::2] == list(MOMENT_NAMES)
    assert header[2::2] == ["se_" + n for n in MOMENT_NAMES]
    assert len(rows) == 101
    assert float(rows[-1][0]) == pytest.approx(1.0)


def test_single_path_correlation_grows_with_temperature(tmp_path):
    corr = []
    for bb in ("0.5", "1", "3"):
        code, out = run(tmp_path, "simulate", "--beta-bar", bb, "--paths", "1", "--horizon", "20",
                        "--seed", "5", "--set", "dump_every=10", name=bb)
        assert code == 0
        _, _, rows = read_csv(out / "paths.csv")
        data = np.array(rows, dtype=float)
        corr.append(np.corrcoef(data[:, 4], data[:, 5])[0, 1])
    assert corr[0] > corr[1] > corr[2] > 0


# ---- histogram ----------------------------------------------------------

def _peak(out):
    _, header, rows = read_csv(out / "overlay.csv")
    return max(float(r[header.index("analytic_density")]) for r in rows)


def test_histogram_peak_ordering(tmp_path):
    peaks = {}
    for bb in ("0.5", "3"):
        code, out = run(tmp_path, "histogram", "--beta-bar", bb, "--paths", "1000", "--horizon", "0",
                        name=bb)
        assert code == 0
        peaks[bb] = _peak(out)
    assert peaks["3"] > peaks["0.5"]
    assert peaks["3"] == pytest.approx(1 / math.sqrt(2 * math.pi * 0.5524), rel=1e-3)


@pytest.mark.slow
def test_histogram_beta1_passes_chi_square(tmp_path):
    code, out = run(tmp_path, "histogram", "--beta-bar", "1", "--paths", "100000",
                    "--horizon", "1", "--dt", "2e-3", "--seed", "3")
    assert code == 0
    comments, header, rows = read_csv(out / "histogram.csv")
    assert len(rows) == 101
    assert header == ["bin_left", "bin_right", "center", "count", "density", "analytic_density"]
    assert sum(int(r[3]) for r in rows) == 100000
    p = float(next(c for c in comments if c.startswith("# p_value=")).split("=")[1])
    assert p > 0.01


# ---- uncertainty --------------------------------------------------------

def test_uncertainty_analytic_column(tmp_path):
    code, out = run(tmp_path, "uncertainty", "--paths", "200", "--horizon", "0", "--set", "sweep=1")
    assert code == 0
    _, header, rows = read_csv(out / "uncertainty.csv")
    assert len(rows) == 1
    assert rows[0][header.index("analytic_product")] == "1.08197670687"
    assert float(rows[0][header.index("n_occupation")]) == pytest.approx(1 / (math.e - 1), rel=1e-12)


def test_uncertainty_zero_temperature(tmp_path):
    code, out = run(tmp_path, "uncertainty", "--paths", "100000", "--horizon", "0",
                    "--seed", "7", "--set", "sweep=inf")
    assert code == 0
    _, header, rows = read_csv(out / "uncertainty.csv")
    row = dict(zip(header, rows[0]))
    assert row["beta_bar"] == "inf" and float(row["n_occupation"]) == 0.0
    assert abs(float(row["product"]) - 0.5) < 3 * float(row["se_product"])


# ---- residuals ----------------------------------------------------------

@pytest.mark.slow
def test_residuals_default_grid_beta1(tmp_path):
    code, out = run(tmp_path, "residuals", "--beta-bar", "1")
    assert code == 0
    comments, header, rows = read_csv(out / "residuals.csv")
    assert "# h=0.005" in comments
    table = {r[0]: dict(zip(header, r)) for r in rows}
    for name in ("osmotic", "continuity", "fokker_planck_forward", "fokker_planck_backward",
                 "kinematical", "dynamical"):
        assert float(table[name]["closed_form"]) <= 1e-10
        assert table[name]["status"] in ("second-order", "rounding-floor")
    assert float(table["fokker_planck_forward"]["grid_h"]) <= 1e-5
    assert float(table["fokker_planck_forward"]["ratio"]) >= 3.8


def test_residual_table_cross_coupling_zero_temperature():
    params = PhysicalParams(beta=math.inf)
    rows = residual_table(params, Grid(3.0, 0.05))
    coupling = next(r for r in rows if r[0] == "cross_coupling")
    assert coupling[1] == 0.0
    finite = residual_table(PhysicalParams.from_beta_bar(1.0), Grid(3.0, 0.05))
    assert next(r for r in finite if r[0] == "cross_coupling")[1] > 0.1
    assert all(r[-1] != "not-converging" for r in rows)
