import json

import numpy as np
import pytest

from phbeam.cli import (
    EXIT_AUDIT,
    EXIT_CONFIG,
    EXIT_NUMERIC,
    EXIT_OK,
    audit_run_dir,
    main,
    read_states_csv,
    run_scenario,
)
from phbeam.config import PRESETS, REQUIRED, parse_config, preset_config
from phbeam.errors import ConfigError

SMALL = """
model = NonlinearStructural
material.EI = 14.97
material.EA = 50
material.rhoA = 2.1
material.L = 0.54
material.alpha1 = 1e-3
material.alpha2 = 1e-3
grid.n_nodes = 21
integrator.dt = 1e-4
integrator.t_final = 0.01
integrator.stride = 10
initial.type = fourier
initial.modes = 1
initial.amplitudes = 0.02
"""


def test_tip_regulation_preset_values():
    cfg = parse_config("preset = fig1-ebc\n")
    m = cfg.material
    assert (m.L, m.E_times_I, m.E_times_A, m.rho_times_A) == (0.54, 14.97, 50.0, 2.1)
    e = cfg.ebc
    assert (e.c1, e.c2, e.c3, e.k1, e.k2, e.k3, e.a, e.b) == (2e8, 1000, 8e4, 2200, 1, 1, 0.01, 0.01)
    assert cfg.n_nodes == 201 and cfg.dt == 1e-4 and cfg.t_final == 2.0 and cfg.scheme == "ImplicitMidpoint"
    cas = preset_config("fig1-casimir").casimir
    assert np.array_equal(cas.c, [2e8, 1000, 8e4]) and cas.a == 0.01 and cas.b == 0.01
    assert set(PRESETS) >= {"fig1-ebc", "fig1-casimir"}


def test_empty_text_lists_all_required_keys():
    with pytest.raises(ConfigError) as info:
        parse_config("")
    missing = {k for k, _, reason in info.value.issues if "missing" in reason}
    assert missing == set(REQUIRED)


def test_negative_dt():
    with pytest.raises(ConfigError) as info:
        parse_config(SMALL.replace("integrator.dt = 1e-4", "integrator.dt = -1"))
    assert any("dt must be positive" in reason for _, _, reason in info.value.issues)


def test_unknown_and_malformed_lines_reported_with_line_numbers():
    text = SMALL + "material.E = 3\nnonsense line\ngrid.n_nodes = 41\n"
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    issues = {(k, ln) for k, ln, _ in info.value.issues}
    n = len(SMALL.splitlines())
    assert ("material.E", n + 1) in issues
    assert ("nonsense line", n + 2) in issues
    assert ("grid.n_nodes", n + 3) in issues


def test_every_invalid_field_reported():
    text = SMALL.replace("material.EI = 14.97", "material.EI = -1").replace("grid.n_nodes = 21", "grid.n_nodes = x")
    with pytest.raises(ConfigError) as info:
        parse_config(text + "controller.type = ebc\n")
    keys = {k for k, _, _ in info.value.issues}
    assert {"material.EI", "grid.n_nodes"} <= keys
    assert any(k.startswith("ebc.") for k in keys)


def test_overrides_and_round_trip_text():
    cfg = parse_config(SMALL, {"grid.n_nodes": "31"})
    assert cfg.n_nodes == 31
    again = parse_config(cfg.to_text())
    assert again.values == cfg.values


def test_run_artifacts(tmp_path):
    cfg = parse_config(SMALL)
    art = run_scenario(cfg, tmp_path / "run")
    assert all(p.exists() for p in art.paths)
    header = art.states.read_text().splitlines()[0].split(",")
    assert len(header) == 1 + 4 * 21
    assert header[:2] == ["t", "w1_000"] and header[-1] == "p2_020"
    ports = art.ports.read_text().splitlines()[0]
    assert ports == "t,u_hat_1,u_hat_2,u_check_1,y_hat_1,y_hat_2,y_check_1"
    energy = art.energy.read_text().splitlines()[0]
    assert energy == "t,E_h,boundary_flux,dissipation,residual"
    report = json.loads(art.audit.read_text())
    assert report["passed"] and report["checks"]["storage_nonincreasing"]


def test_states_round_trip_bit_exact(tmp_path):
    from phbeam.dynamics import simulate

    cfg = parse_config(SMALL)
    traj = simulate(cfg)
    art = run_scenario(cfg, tmp_path / "run")
    t, states = read_states_csv(art.states)
    assert np.array_equal(t, traj.t)
    assert np.array_equal(states, traj.states)


def test_zero_run_has_zero_columns(tmp_path):
    cfg = parse_config(SMALL.replace("initial.type = fourier", "initial.type = rest"))
    art = run_scenario(cfg, tmp_path / "zero")
    data = np.loadtxt(art.states, delimiter=",", skiprows=1)
    assert not np.any(data[:, 1:])
    assert not np.any(np.loadtxt(art.energy, delimiter=",", skiprows=1)[:, 1:])


def test_deterministic_output(tmp_path):
    cfg = parse_config(SMALL)
    a = run_scenario(cfg, tmp_path / "a")
    b = run_scenario(cfg, tmp_path / "b")
    for pa, pb in zip(a.paths, b.paths):
        if pa.name != "audit.json":
            assert pa.read_bytes() == pb.read_bytes(), pa.name
    ja, jb = json.loads(a.audit.read_text()), json.loads(b.audit.read_text())
    assert ja == jb


def test_initial_state_from_file(tmp_path):
    cfg = parse_config(SMALL)
    art = run_scenario(cfg, tmp_path / "first")
    cont = parse_config(SMALL.replace("initial.type = fourier", "initial.type = file")
                        + f"initial.file = {art.states}\n")
    st = cont.initial_state(cont.build_system())
    _, states = read_states_csv(art.states)
    assert np.array_equal(st.w1, states[-1, 0])


def test_controller_energy_column(tmp_path):
    cfg = parse_config("preset = fig1-ebc\n", {"grid.n_nodes": 21, "integrator.t_final": 0.01,
                                                "integrator.stride": 10})
    art = run_scenario(cfg, tmp_path / "ebc")
    assert art.energy.read_text().splitlines()[0] == "t,E_h,H_d,boundary_flux,dissipation,residual"
    cfg = parse_config("preset = fig1-casimir\n", {"grid.n_nodes": 21, "integrator.t_final": 0.01,
                                                    "integrator.stride": 10})
    art = run_scenario(cfg, tmp_path / "cas")
    assert "H_cl" in art.energy.read_text().splitlines()[0]
    assert art.report["checks"]["casimir_conserved"]
    assert art.report["checks"]["interconnection_power_neutral"]


def test_cli_exit_codes(tmp_path, capsys):
    good = tmp_path / "good.txt"
    good.write_text(SMALL)
    out = tmp_path / "out"
    assert main(["run", str(good), "-o", str(out)]) == EXIT_OK
    assert main(["audit", str(out)]) == EXIT_OK

    bad = tmp_path / "bad.txt"
    bad.write_text(SMALL + "bogus = 1\n")
    assert main(["run", str(bad)]) == EXIT_CONFIG
    assert "bogus" in capsys.readouterr().err

    blow = tmp_path / "blow.txt"
    blow.write_text(SMALL.replace("integrator.dt = 1e-4", "integrator.dt = 1e-2")
                    .replace("integrator.t_final = 0.01", "integrator.t_final = 5")
                    + "integrator.scheme = RK4\n")
    with np.errstate(all="ignore"):
        assert main(["run", str(blow), "-o", str(tmp_path / "blow")]) == EXIT_NUMERIC

    # a doctored energy file fails the audit
    energy = out / "energy.csv"
    lines = energy.read_text().splitlines()
    cols = lines[-1].split(",")
    cols[1] = repr(float(cols[1]) + 1.0)
    energy.write_text("\n".join(lines[:-1] + [",".join(cols)]) + "\n")
    assert main(["audit", str(out)]) == EXIT_AUDIT


def test_cli_checks(capsys):
    assert main(["verify-casimir", "fig1-casimir", "--samples", "3", "--set", "grid.n_nodes=41"]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["passed"]
    assert main(["oracle", "fig1-ebc", "--trials", "3", "--set", "grid.n_nodes=41"]) == EXIT_OK
    assert main(["verify-casimir", "fig1-ebc"]) == EXIT_CONFIG
    assert main(["preset", "fig1-ebc", "--print"]) == EXIT_OK
    assert "ebc.c1 = 2e8" in capsys.readouterr().out


def test_audit_run_dir_reads_csv_only(tmp_path):
    cfg = parse_config(SMALL)
    art = run_scenario(cfg, tmp_path / "r")
    rep = audit_run_dir(art.directory)
    assert rep["passed"] and rep["residual_consistent"] and rep["snapshots"] == 11


def test_output_root_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("PHBEAM_OUTPUT_ROOT", str(tmp_path))
    good = tmp_path / "small.txt"
    good.write_text(SMALL + "name = envrun\n")
    assert main(["run", str(good)]) == EXIT_OK
    assert (tmp_path / "envrun" / "states.csv").exists()
    assert (tmp_path / "envrun" / "config.txt").read_text().count("name = envrun") == 1
