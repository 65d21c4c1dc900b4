import json
import math

import numpy as np
import pytest

from kslab import (ConfigError, GridSpec, default_manufactured_pair, fill,
                   load_config, make_grid, mms_sources, read_snapshot,
                   regenerate_summary, run_scenario, write_snapshot,
                   constant_field)
from kslab.cli import main as cli_main
from kslab.harness import EXIT_CONFIG, EXIT_DIVERGENCE, EXIT_OK, ManufacturedSolution


def _write(tmp_path, text, name="cfg.ini"):
    path = tmp_path / name
    path.write_text(text)
    return path


# --- config loading -------------------------------------------------------------


def test_minimal_config_defaults(tmp_path):
    cfg = load_config(_write(tmp_path, "[run]\nscenario = constant_decay\n"))
    assert cfg.solver.chi == 1.0
    assert cfg.kappas == (10.0, 0.01, 1.0)
    assert cfg.c_monitor == 100.0
    assert cfg.solver.dt_max == 1e-4  # scenario default
    assert "solver.chi" in cfg.defaulted
    assert "diagnostics.kappa1" in cfg.defaulted


def test_config_rejects_small_s(tmp_path):
    path = _write(tmp_path, "[run]\nscenario = constant_decay\n"
                            "[diagnostics]\ncriterion_pairs = 1/4\n")
    with pytest.raises(ConfigError, match="s must exceed 3/2"):
        load_config(path)


def test_config_admissible_pair(tmp_path):
    path = _write(tmp_path, "[run]\nscenario = constant_decay\n"
                            "[diagnostics]\ncriterion_pairs = 2/4\n")
    cfg = load_config(path)
    from kslab import CriterionAccumulator
    acc = CriterionAccumulator(s=cfg.criterion_pairs[0][0],
                               r=cfg.criterion_pairs[0][1])
    assert acc.admissible


def test_config_unknown_key(tmp_path):
    path = _write(tmp_path, "[run]\nscenario = constant_decay\nbogus = 1\n")
    with pytest.raises(ConfigError, match="unknown key"):
        load_config(path)


def test_config_collects_all_violations(tmp_path):
    path = _write(tmp_path, "[run]\nscenario = constant_decay\nt_end = -1\n"
                            "[solver]\nchi = abc\ncfl_safety = 3\n")
    with pytest.raises(ConfigError) as err:
        load_config(path)
    msg = str(err.value)
    assert "t_end" in msg and "chi" in msg and "cfl_safety" in msg


def test_config_missing_scenario(tmp_path):
    with pytest.raises(ConfigError, match="scenario"):
        load_config(_write(tmp_path, "[run]\nt_end = 1\n"))


def test_config_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "missing.ini")


def test_config_overrides(tmp_path):
    path = _write(tmp_path, "[run]\nscenario = constant_decay\n")
    cfg = load_config(path, overrides=["solver.chi=2.5", "run.seed=99"])
    assert cfg.solver.chi == 2.5
    assert cfg.seed == 99
    assert "solver.chi" not in cfg.defaulted


def test_config_scenario_grid_validation(tmp_path):
    path = _write(tmp_path, "[run]\nscenario = heat_mode\n"
                            "[grid]\ndim = 2\ncells = 8 8\nextent = 1 1\n"
                            "topology = periodic_torus\n")
    with pytest.raises(ConfigError, match="heat_mode"):
        load_config(path)


def test_config_inf_values(tmp_path):
    path = _write(tmp_path, "[run]\nscenario = constant_decay\n"
                            "[diagnostics]\ncriterion_pairs = inf/1 1.6/inf\n")
    cfg = load_config(path)
    assert cfg.criterion_pairs[0][0] == math.inf
    assert cfg.criterion_pairs[1][1] == math.inf


# --- manufactured sources -----------------------------------------------------


def test_mms_sources_constant_pair():
    const = ManufacturedSolution(
        n=lambda t, x, y: 2.0 + 0.0 * x,
        c=lambda t, x, y: 3.0 + 0.0 * x,
        dn_dt=lambda t, x, y: 0.0 * x,
        dc_dt=lambda t, x, y: 0.0 * x,
        grad_n=(lambda t, x, y: 0.0 * x, lambda t, x, y: 0.0 * x),
        grad_c=(lambda t, x, y: 0.0 * x, lambda t, x, y: 0.0 * x),
        lap_n=lambda t, x, y: 0.0 * x,
        lap_c=lambda t, x, y: 0.0 * x,
    )
    src_n, src_c = mms_sources(const, chi=1.0)
    x = np.linspace(0, 1, 5)
    np.testing.assert_allclose(src_n(0.3, x, x), 0.0)
    np.testing.assert_allclose(src_c(0.3, x, x), 6.0)


def test_mms_sources_chi_zero_decouples():
    ms = default_manufactured_pair()
    src_n0, _ = mms_sources(ms, chi=0.0)
    x = np.array([0.3])
    y = np.array([0.6])
    expected = ms.dn_dt(0.1, x, y) - ms.lap_n(0.1, x, y)
    np.testing.assert_allclose(src_n0(0.1, x, y), expected, rtol=1e-14)


def test_mms_sources_frozen_reference_point():
    ms = default_manufactured_pair()
    src_n, src_c = mms_sources(ms, chi=1.0)
    # closed forms at (t, x, y) = (0, 0, 0)
    assert float(src_n(0.0, 0.0, 0.0)) == pytest.approx(
        2.0 * math.pi**2 - 1.0, rel=1e-15)
    assert float(src_c(0.0, 0.0, 0.0)) == pytest.approx(
        2.0 * math.pi**2 + 4.0, rel=1e-15)


def test_mms_sources_against_symbolic_oracle():
    sympy = pytest.importorskip("sympy")
    t, x, y = sympy.symbols("t x y")
    n_sym = 2 + sympy.exp(-t) * sympy.cos(2 * sympy.pi * x) * sympy.cos(2 * sympy.pi * y)
    c_sym = 1 + sympy.Rational(1, 2) * sympy.exp(-t) * sympy.cos(2 * sympy.pi * x)
    chi = 1.0
    lap = lambda f: sympy.diff(f, x, 2) + sympy.diff(f, y, 2)
    src_n_sym = (sympy.diff(n_sym, t) - lap(n_sym)
                 + chi * (sympy.diff(n_sym * sympy.diff(c_sym, x), x)
                          + sympy.diff(n_sym * sympy.diff(c_sym, y), y)))
    src_c_sym = sympy.diff(c_sym, t) - lap(c_sym) + n_sym * c_sym
    f_n = sympy.lambdify((t, x, y), src_n_sym, "numpy")
    f_c = sympy.lambdify((t, x, y), src_c_sym, "numpy")

    ms = default_manufactured_pair()
    src_n, src_c = mms_sources(ms, chi=chi)
    rng = np.random.default_rng(13)
    for _ in range(20):
        tt, xx, yy = rng.random(3)
        assert float(src_n(tt, xx, yy)) == pytest.approx(float(f_n(tt, xx, yy)),
                                                         rel=1e-12)
        assert float(src_c(tt, xx, yy)) == pytest.approx(float(f_c(tt, xx, yy)),
                                                         rel=1e-12)


def test_mms_sources_reject_nonpositive_n():
    bad = ManufacturedSolution(
        n=lambda t, x, y: 0.0 * x,
        c=lambda t, x, y: 1.0 + 0.0 * x,
        dn_dt=lambda t, x, y: 0.0 * x,
        dc_dt=lambda t, x, y: 0.0 * x,
        grad_n=(lambda t, x, y: 0.0 * x, lambda t, x, y: 0.0 * x),
        grad_c=(lambda t, x, y: 0.0 * x, lambda t, x, y: 0.0 * x),
        lap_n=lambda t, x, y: 0.0 * x,
        lap_c=lambda t, x, y: 0.0 * x,
    )
    src_n, _ = mms_sources(bad, chi=1.0)
    from kslab import PositivityError
    with pytest.raises(PositivityError):
        src_n(0.0, np.zeros(3), np.zeros(3))


# --- run_scenario ---------------------------------------------------------------


def test_run_scenario_constant_decay(tmp_path):
    out = tmp_path / "run"
    cfg = load_config(
        _write(tmp_path, "[run]\nscenario = constant_decay\n"),
        overrides=[f"run.out_dir={out}", "run.t_end=0.2",
                   "grid.cells=8 8", "run.sample_every=200"])
    code, summary = run_scenario(cfg)
    assert code == EXIT_OK
    assert summary["pass"]
    assert summary["monitors"]["decay_error"]["pass"]
    assert summary["monitors"]["mass_drift"]["pass"]
    assert (out / "diagnostics.csv").exists()
    assert (out / "criteria.csv").exists()
    assert (out / "summary.json").exists()
    assert (out / "config_echo.ini").exists()
    assert (out / "n_final.ksf").exists()
    prov = summary["provenance"]
    assert prov["diagnostics.kappa1"].startswith("config-default")


def test_run_scenario_divergence_exit(tmp_path):
    out = tmp_path / "diverge"
    cfg = load_config(
        _write(tmp_path, "[run]\nscenario = constant_decay\n"),
        overrides=[f"run.out_dir={out}",
                   "solver.blowup_sup_threshold=0.5"])
    code, summary = run_scenario(cfg)
    assert code == EXIT_DIVERGENCE
    assert summary["run"]["stop_reason"] == "blowup_threshold"
    # partial artifacts preserved
    assert (out / "diagnostics.csv").exists()


def test_run_scenario_custom_snapshots(tmp_path):
    g = make_grid(GridSpec(2, (8, 8), (1.0, 1.0), "periodic_torus"))
    n_path = tmp_path / "n0.ksf"
    c_path = tmp_path / "c0.ksf"
    write_snapshot(constant_field(g, 1.0), 0.0, n_path)
    write_snapshot(constant_field(g, 1.0), 0.0, c_path)
    out = tmp_path / "custom_run"
    cfg = load_config(
        _write(tmp_path, "[run]\nscenario = custom\n"
                         f"n0_snapshot = {n_path}\nc0_snapshot = {c_path}\n"),
        overrides=[f"run.out_dir={out}", "run.t_end=0.05",
                   "grid.cells=8 8"])
    code, summary = run_scenario(cfg)
    assert code == EXIT_OK
    n_final, t = read_snapshot(out / "n_final.ksf")
    assert t == pytest.approx(0.05)
    np.testing.assert_allclose(n_final.values, 1.0, rtol=1e-12)


def test_regenerate_summary_is_idempotent(tmp_path):
    out = tmp_path / "run"
    cfg = load_config(
        _write(tmp_path, "[run]\nscenario = constant_decay\n"),
        overrides=[f"run.out_dir={out}", "run.t_end=0.1", "grid.cells=8 8"])
    code, summary = run_scenario(cfg)
    code2, summary2 = regenerate_summary(out)
    assert code2 == code
    assert summary2["monitors"].keys() == summary["monitors"].keys()
    for name in summary["monitors"]:
        assert summary2["monitors"][name]["pass"] == summary["monitors"][name]["pass"]
        assert summary2["monitors"][name]["value"] == pytest.approx(
            summary["monitors"][name]["value"], rel=1e-12, abs=1e-300)
    assert summary2["criteria"] == summary["criteria"]
    assert summary2["defaulted"] == summary["defaulted"]


def test_criteria_accumulators_reported(tmp_path):
    out = tmp_path / "run"
    cfg = load_config(
        _write(tmp_path, "[run]\nscenario = constant_decay\n"
                         "[diagnostics]\ncriterion_pairs = 2/4 inf/1 1.6/inf\n"),
        overrides=[f"run.out_dir={out}", "run.t_end=0.1", "grid.cells=8 8",
                   "run.sample_every=100"])
    code, summary = run_scenario(cfg)
    crits = summary["criteria"]
    assert len(crits) == 3
    # constant n = 1 on the unit torus: integral of ||n||_{L^2}^4 dt = t_end
    assert crits[0]["value_ns"] == pytest.approx(0.1, rel=1e-9)
    assert crits[0]["admissible"] is True
    # s = inf, r = 1: integral of ||n||_inf dt = t_end
    assert crits[1]["value_ns"] == pytest.approx(0.1, rel=1e-9)
    # r = inf: running sup of ||n||_{L^1.6} = 1
    assert crits[2]["value_ns"] == pytest.approx(1.0, rel=1e-12)
    assert all(c["value_gc"] == 0.0 for c in crits)


# --- CLI ----------------------------------------------------------------------


def test_cli_run_and_report(tmp_path):
    cfg_path = _write(tmp_path, "[run]\nscenario = constant_decay\n")
    out = tmp_path / "cli_run"
    code = cli_main(["run", "--config", str(cfg_path),
                     "--out-dir", str(out),
                     "--override", "run.t_end=0.1",
                     "--override", "grid.cells=8 8"])
    assert code == EXIT_OK
    assert cli_main(["report", "--run", str(out)]) == EXIT_OK


def test_cli_config_error_exit_code(tmp_path):
    cfg_path = _write(tmp_path, "[run]\nscenario = nonsense\n")
    assert cli_main(["run", "--config", str(cfg_path)]) == EXIT_CONFIG


def test_cli_missing_config_file(tmp_path):
    assert cli_main(["run", "--config", str(tmp_path / "nope.ini")]) == EXIT_CONFIG


def test_cli_fit_on_synthetic_series(tmp_path):
    ts = np.linspace(0.5, 0.99, 60)
    series_path = tmp_path / "series.csv"
    with open(series_path, "w") as fh:
        fh.write("t,n_sup\n")
        for t in ts:
            fh.write(f"{t},{1.0 / (1.0 - t)}\n")
    out_path = tmp_path / "fit.json"
    code = cli_main(["fit", "--series", str(series_path),
                     "--out", str(out_path)])
    assert code == EXIT_OK
    payload = json.loads(out_path.read_text())
    assert payload["status"] == "ok"
    assert payload["t_star"] == pytest.approx(1.0, abs=1e-4)
    assert payload["gamma"] == pytest.approx(1.0, rel=1e-3)
    assert payload["classification"] == "type_I"
    assert payload["lower_bound_satisfied"] is True


def test_run_scenario_stress_3d_artifacts(tmp_path):
    out = tmp_path / "stress"
    cfg = load_config(_write(tmp_path, "[run]\nscenario = stress_3d\n"),
                      overrides=[f"run.out_dir={out}", "run.t_end=0.05"])
    code, summary = run_scenario(cfg)
    assert code in (EXIT_OK, EXIT_DIVERGENCE)
    assert (out / "blowup_report.json").exists()
    payload = json.loads((out / "blowup_report.json").read_text())
    assert "classification" in payload and "alpha" in payload
    assert "config" in payload
    assert summary["run"]["steps"] > 0


def test_run_scenario_scaling_test(tmp_path):
    out = tmp_path / "scal"
    cfg = load_config(_write(tmp_path, "[run]\nscenario = scaling_test\n"),
                      overrides=[f"run.out_dir={out}", "scaling.refinements=2",
                                 "run.t_end=0.02"])
    code, summary = run_scenario(cfg)
    assert (out / "scaling_errors.csv").exists()
    assert summary["monitors"]["lambda1_error"]["value"] == 0.0
    assert "scaling_order" in summary["monitors"]


def test_run_scenario_mms_small(tmp_path):
    out = tmp_path / "mms"
    cfg = load_config(_write(tmp_path, "[run]\nscenario = mms\n"),
                      overrides=[f"run.out_dir={out}", "grid.cells=16 16",
                                 "run.t_end=0.02"])
    code, summary = run_scenario(cfg)
    assert code == EXIT_OK, summary["monitors"]
    assert summary["monitors"]["spatial_order"]["value"] >= 1.9
    assert summary["monitors"]["temporal_order"]["value"] >= 0.9
    assert (out / "mms_errors.csv").exists()


def test_runs_are_deterministic(tmp_path):
    outs = []
    for tag in ("a", "b"):
        out = tmp_path / tag
        cfg = load_config(_write(tmp_path, "[run]\nscenario = equilibrium_2d\n",
                                 name=f"{tag}.ini"),
                          overrides=[f"run.out_dir={out}", "run.t_end=0.2",
                                     "grid.cells=8 8", "run.sample_every=50"])
        code, _ = run_scenario(cfg)
        assert code == EXIT_OK or code == 1  # short horizon: monitors may fail
        outs.append(out)
    a = (outs[0] / "diagnostics.csv").read_text()
    b = (outs[1] / "diagnostics.csv").read_text()
    assert a == b
    na, _ = read_snapshot(outs[0] / "n_final.ksf")
    nb, _ = read_snapshot(outs[1] / "n_final.ksf")
    assert np.array_equal(na.values, nb.values)
