"""Config parsing and end-to-end command-line runs."""

import json
import os
import re

import numpy as np
import pytest
import yaml

from qestim.cli import _apply_thread_cap, main
from qestim.config import (
    ConfigError,
    apply_overrides,
    build_scheme,
    load_config,
    parse_matrix,
    parse_tspan,
    parse_vector,
)

SZ_HALF = [[0.5, 0.0], [0.0, -0.5]]


def minimal_cfg(**scheme_extra):
    cfg = {
        "scheme": {
            "probe": "Plus",
            "hamiltonian": {"h0": SZ_HALF, "dh": [SZ_HALF]},
            "tspan": [0.0, 0.25, 2.0],
        }
    }
    cfg["scheme"].update(scheme_extra)
    return cfg


def write_cfg(tmp_path, cfg, name="run.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(cfg))
    return str(path)


def read_results(out_dir):
    with open(os.path.join(str(out_dir), "results.json")) as fh:
        return json.load(fh)


# ---------------------------------------------------------------------------
# value parsers


def test_parse_tspan_builds_uniform_grid():
    t = parse_tspan([0.0, 0.25, 1.0], "t")
    assert np.allclose(t, np.linspace(0.0, 1.0, 5))
    # integer endpoints are accepted
    t = parse_tspan([0, 1, 4], "t")
    assert t.shape == (5,) and t[-1] == 4.0


def test_parse_tspan_rejects_bad_grids():
    with pytest.raises(ConfigError, match=r"t: expected \[start, step, stop\]"):
        parse_tspan([0.0, 1.0], "t")
    with pytest.raises(ConfigError, match="step must be positive"):
        parse_tspan([0.0, -0.1, 1.0], "t")
    with pytest.raises(ConfigError, match="stop must exceed start"):
        parse_tspan([1.0, 0.1, 1.0], "t")
    with pytest.raises(ConfigError, match="does not evenly divide"):
        parse_tspan([0.0, 0.3, 1.0], "t")
    with pytest.raises(ConfigError, match=r"t\[1\]"):
        parse_tspan([0.0, "x", 1.0], "t")


def test_parse_matrix_re_im_pairs():
    m = parse_matrix([[0.0, [0.0, -1.0]], [[0.0, 1.0], 0.0]], "m")
    assert np.array_equal(m, np.array([[0, -1j], [1j, 0]]))
    with pytest.raises(ConfigError, match="rows have unequal lengths"):
        parse_matrix([[1.0, 0.0], [0.0]], "m")
    with pytest.raises(ConfigError, match=r"m\[0\]\[1\].*re, im"):
        parse_matrix([[1.0, [1, 2, 3]], [0.0, 1.0]], "m")
    with pytest.raises(ConfigError, match="array of rows"):
        parse_matrix([1.0, 2.0], "m")


def test_parse_vector():
    v = parse_vector([1, [0.0, 1.0]], "v")
    assert np.array_equal(v, np.array([1.0, 1j]))
    with pytest.raises(ConfigError, match="non-empty array"):
        parse_vector([], "v")


def test_apply_overrides_dotted_paths():
    cfg = {"scheme": {"tspan": [0, 1, 2]}}
    apply_overrides(
        cfg,
        ["scheme.tspan=[0.0, 0.5, 1.0]", "evaluate.quantity=cfim", "seed=42"],
    )
    assert cfg["scheme"]["tspan"] == [0.0, 0.5, 1.0]
    assert cfg["evaluate"]["quantity"] == "cfim"
    assert cfg["seed"] == 42  # YAML scalar, not the string "42"
    with pytest.raises(ConfigError, match="expected key=value"):
        apply_overrides(cfg, ["seed 42"])


def test_load_config(tmp_path):
    path = write_cfg(tmp_path, minimal_cfg())
    cfg = load_config(path)
    assert cfg["scheme"]["probe"] == "Plus"
    empty = tmp_path / "empty.yaml"
    empty.write_text("")
    assert load_config(str(empty)) == {}
    with pytest.raises(ConfigError, match="file not found"):
        load_config(str(tmp_path / "nope.yaml"))
    bad = tmp_path / "list.yaml"
    bad.write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError, match="top level must be a table"):
        load_config(str(bad))


# ---------------------------------------------------------------------------
# scheme construction


def test_build_scheme_minimal():
    scheme = build_scheme(minimal_cfg())
    assert scheme.probe.dim == 2
    assert scheme.n_params == 1
    assert scheme.param.tspan[0] == 0.0 and scheme.param.tspan[-1] == 2.0
    assert len(scheme.param.tspan) == 9
    assert scheme.param.dyn_method == "expm"
    assert len(scheme.measurement.povm) == 4  # default SIC set
    assert scheme.prior is None


def test_build_scheme_key_path_errors():
    with pytest.raises(ConfigError, match="scheme: missing required key"):
        build_scheme({})
    cfg = minimal_cfg()
    del cfg["scheme"]["tspan"]
    with pytest.raises(ConfigError, match="scheme.tspan: missing required key"):
        build_scheme(cfg)
    cfg = minimal_cfg()
    del cfg["scheme"]["hamiltonian"]["h0"]
    with pytest.raises(ConfigError, match="scheme.hamiltonian.h0"):
        build_scheme(cfg)
    cfg = minimal_cfg()
    cfg["scheme"]["hamiltonian"]["dh"] = []
    with pytest.raises(ConfigError, match="scheme.hamiltonian.dh"):
        build_scheme(cfg)
    with pytest.raises(ConfigError, match="scheme.dyn_method"):
        build_scheme(minimal_cfg(dyn_method="rk4"))
    with pytest.raises(ConfigError, match="scheme.probe"):
        build_scheme(minimal_cfg(probe="NoSuchState"))
    with pytest.raises(ConfigError, match="scheme.measurement"):
        build_scheme(minimal_cfg(measurement="sicc"))


def test_build_scheme_probe_forms():
    from qestim.scheme import builtin_state

    hz4 = np.kron(np.asarray(SZ_HALF), np.eye(2)).tolist()
    cfg = minimal_cfg(probe="Bell:2")
    cfg["scheme"]["hamiltonian"] = {"h0": hz4, "dh": [hz4]}
    named = build_scheme(cfg).probe
    assert np.allclose(named.data, builtin_state("Bell", 2).data)

    s = 1.0 / np.sqrt(2.0)
    vec = build_scheme(minimal_cfg(probe=[[s, 0.0], [0.0, s]])).probe
    assert np.allclose(vec.data, [s, 1j * s])

    dens = build_scheme(
        minimal_cfg(probe=[[[0.5, 0.0], [0.0, 0.0]], [[0.0, 0.0], [0.5, 0.0]]])
    ).probe
    assert dens.kind == "density"
    assert np.allclose(dens.density_matrix(), np.eye(2) / 2)


def test_build_scheme_full_sections():
    x = np.linspace(0.2, 2.2, 21)
    p = np.full(21, 0.5)  # integrates to 1 on [0.2, 2.2]
    cfg = minimal_cfg(
        controls={
            "hc": [[[0.0, 1.0], [1.0, 0.0]]],
            "amplitudes": [[0.1] * 8],
            "bounds": [-1.0, 1.0],
        },
        decays=[
            {"operator": [[0.0, 0.0], [1.0, 0.0]], "rate": 0.1},
            {"operator": SZ_HALF, "rate": [0.2] * 9},
        ],
        measurement=[
            [[1.0, 0.0], [0.0, 0.0]],
            [[0.0, 0.0], [0.0, [1.0, 0.0]]],
        ],
        prior={"x": x.tolist(), "p": p.tolist()},
    )
    scheme = build_scheme(cfg)
    ctrl = scheme.param.controls
    assert len(ctrl.hc) == 1 and ctrl.bounds == (-1.0, 1.0)
    assert len(ctrl.ctrl) == 1 and np.asarray(ctrl.ctrl[0]).shape == (8,)
    assert [ch.rate for ch in scheme.param.decays[:1]] == [0.1]
    assert np.array_equal(scheme.param.decays[1].rate, np.full(9, 0.2))
    assert len(scheme.measurement.povm) == 2
    assert scheme.prior is not None
    assert np.allclose(scheme.prior.x[0], x)
    # dp defaults to the numerical gradient of p (zero for a flat prior)
    assert np.allclose(scheme.prior.dp[0], np.gradient(p, x))


def test_build_scheme_parametric_linear_family():
    cfg = minimal_cfg()
    cfg["scheme"]["hamiltonian"]["h0"] = [[0.0, 0.0], [0.0, 0.0]]
    scheme = build_scheme(cfg, parametric=True)
    ham = scheme.param.hamiltonian
    h, dh = ham.at(0.0)
    assert np.allclose(h, 0.0)  # operating point u = 0
    h, dh = ham.with_u([0.7]).at(0.0)
    assert np.allclose(h, 0.7 * np.asarray(SZ_HALF))
    assert np.allclose(dh[0], SZ_HALF)


# ---------------------------------------------------------------------------
# command line


def test_cli_evaluate_qfim(tmp_path, capsys):
    cfg_path = write_cfg(tmp_path, minimal_cfg())
    out = tmp_path / "out"
    rc = main(["evaluate", "--config", cfg_path, "--out", str(out), "--quiet"])
    assert rc == 0
    assert capsys.readouterr().out == ""
    res = read_results(out)
    assert res["task"] == "evaluate"
    assert res["seed"] == 1234
    assert res["results"]["quantity"] == "qfim"
    times = np.array(res["results"]["times"])
    values = np.array(res["results"]["values"])
    assert np.allclose(values, times**2, atol=1e-9)  # free qubit phase: QFI = t^2
    with open(out / "values.csv") as fh:
        lines = fh.read().splitlines()
    assert lines[0] == "time,value"
    assert len(lines) == 1 + len(times)


def test_cli_evaluate_cfim_matches_qfim(tmp_path):
    s = 0.5
    cfg = minimal_cfg(
        measurement=[[[s, s], [s, s]], [[s, -s], [-s, s]]]  # sigma_x projectors
    )
    cfg["evaluate"] = {"quantity": "cfim"}
    out = tmp_path / "out"
    rc = main(["evaluate", "--config", write_cfg(tmp_path, cfg), "--out", str(out), "--quiet"])
    assert rc == 0
    res = read_results(out)
    values = np.array(res["results"]["values"])
    assert abs(values[-1] - 4.0) < 1e-6


def test_cli_evaluate_vtb_scalar(tmp_path):
    x = np.linspace(0.5, 1.5, 41)
    p = np.exp(-((x - 1.0) ** 2) / 0.02)
    p /= np.trapezoid(p, x)
    s = 0.5
    cfg = minimal_cfg(
        measurement=[[[s, s], [s, s]], [[s, -s], [-s, s]]],
        prior={"x": x.tolist(), "p": p.tolist()},
    )
    cfg["scheme"]["hamiltonian"]["h0"] = [[0.0, 0.0], [0.0, 0.0]]
    cfg["evaluate"] = {"quantity": "vtb"}
    out = tmp_path / "out"
    rc = main(["evaluate", "--config", write_cfg(tmp_path, cfg), "--out", str(out), "--quiet"])
    assert rc == 0
    res = read_results(out)["results"]
    assert res["quantity"] == "vtb"
    assert isinstance(res["value"], float) and res["value"] > 0

    from qestim.metrology import vtb

    assert res["value"] == vtb(build_scheme(cfg, parametric=True))


def test_cli_set_overrides(tmp_path):
    cfg_path = write_cfg(tmp_path, minimal_cfg())
    out = tmp_path / "out"
    rc = main(
        [
            "evaluate",
            "--config",
            cfg_path,
            "--set",
            "scheme.tspan=[0.0, 0.5, 1.0]",
            "--out",
            str(out),
            "--quiet",
        ]
    )
    assert rc == 0
    res = read_results(out)
    assert res["config"]["scheme"]["tspan"] == [0.0, 0.5, 1.0]
    times = res["results"]["times"]
    assert times[-1] == 1.0 and len(times) == 3
    assert abs(res["results"]["values"][-1] - 1.0) < 1e-9


def test_cli_missing_config_exits_1(tmp_path, capsys):
    assert main(["evaluate", "--out", str(tmp_path)]) == 1
    assert "--config is required" in capsys.readouterr().err


def test_cli_invalid_config_exits_1(tmp_path, capsys):
    cfg = minimal_cfg()
    del cfg["scheme"]["tspan"]
    rc = main(["evaluate", "--config", write_cfg(tmp_path, cfg), "--out", str(tmp_path)])
    assert rc == 1
    err = capsys.readouterr().err
    assert err.startswith("error: ")
    assert "scheme.tspan" in err


def test_cli_task_conflict_exits_1(tmp_path, capsys):
    cfg = minimal_cfg()
    cfg["task"] = "optimize"
    rc = main(["evaluate", "--config", write_cfg(tmp_path, cfg), "--out", str(tmp_path)])
    assert rc == 1
    assert "conflicts" in capsys.readouterr().err


def test_cli_numerical_failure_exits_2(tmp_path, capsys):
    # A sigma_z measurement never sees the sigma_z-generated phase, so the
    # integrated Fisher information is identically zero and the Van Trees
    # covariance inversion must fail numerically rather than silently.
    x = np.linspace(0.5, 1.5, 11)
    cfg = minimal_cfg(
        measurement=[[[1.0, 0.0], [0.0, 0.0]], [[0.0, 0.0], [0.0, 1.0]]],
        prior={
            "x": x.tolist(),
            "p": np.full(11, 1.0).tolist(),
            "dp": np.zeros(11).tolist(),
        },
    )
    cfg["evaluate"] = {"quantity": "vtb"}
    rc = main(["evaluate", "--config", write_cfg(tmp_path, cfg), "--out", str(tmp_path), "--quiet"])
    assert rc == 2
    assert "numerical failure" in capsys.readouterr().err


def test_cli_results_json_deterministic(tmp_path):
    cfg_path = write_cfg(tmp_path, minimal_cfg())
    texts = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["evaluate", "--config", cfg_path, "--out", str(out), "--quiet"]) == 0
        with open(out / "results.json") as fh:
            texts.append(fh.read())
    scrub = [re.sub(r'"timestamp": "[^"]*"', '"timestamp": null', t) for t in texts]
    assert scrub[0] == scrub[1]
    assert texts[0].count("timestamp") == 1


def test_cli_optimize_control(tmp_path):
    cfg = minimal_cfg(
        controls={
            "hc": [[[0.0, 1.0], [1.0, 0.0]], [[0.0, [0.0, -1.0]], [[0.0, 1.0], 0.0]]],
            "amplitudes": [[0.0] * 4, [0.0] * 4],
            "bounds": [-2.0, 2.0],
        },
        decays=[{"operator": SZ_HALF, "rate": 0.2}],
        tspan=[0.0, 0.25, 1.0],
    )
    cfg["optimize"] = {
        "scenario": {"type": "control", "ctrl_bound": [-2.0, 2.0]},
        "algorithm": {"name": "DE", "population": 6, "max_episode": 8, "seed": 5},
        "objective": {"kind": "QFIM"},
    }
    cfg_path = write_cfg(tmp_path, cfg)
    logs = []
    for name in ("a", "b"):
        out = tmp_path / name
        rc = main(["optimize", "--config", cfg_path, "--out", str(out), "--quiet"])
        assert rc == 0
        res = read_results(out)["results"]
        assert res["scenario"] == "ControlOpt"
        assert res["direction"] == "max"
        # the log holds the initial evaluation plus one entry per episode
        assert res["iterations"] == len(res["objectives"]) == 9
        obj = res["objectives"]
        assert all(b >= a for a, b in zip(obj, obj[1:]))  # best-so-far log
        assert res["best_objective"] == obj[-1]
        with open(out / "iterations.csv") as fh:
            lines = fh.read().splitlines()
        assert lines[0] == "iteration,objective"
        assert len(lines) == 10
        logs.append(res)
    assert logs[0]["objectives"] == logs[1]["objectives"]
    assert logs[0]["variables"]["controls"] == logs[1]["variables"]["controls"]


def test_cli_error_task(tmp_path):
    cfg = minimal_cfg(decays=[{"operator": SZ_HALF, "rate": 0.2}])
    cfg["error"] = {"mode": "evaluation", "input_error_scaling": 1e-8}
    out = tmp_path / "out"
    rc = main(["error", "--config", write_cfg(tmp_path, cfg), "--out", str(out), "--quiet"])
    assert rc == 0
    res = read_results(out)["results"]
    assert res["mode"] == "evaluation"
    assert res["objective"] == "QFIM"
    assert res["result"] > 0
    assert "H0" in res["gradient_terms"]
    assert "probe" in res["gradient_terms"]


def test_cli_adapt_simulate_and_replay(tmp_path):
    x = np.linspace(0.2, 2.2, 33)
    cfg = {
        "scheme": {
            "probe": "Plus",
            "hamiltonian": {"h0": [[0.0, 0.0], [0.0, 0.0]], "dh": [SZ_HALF]},
            "tspan": [0.0, 0.5, 1.0],
            "prior": {"x": x.tolist(), "p": np.full(33, 0.5).tolist()},
        },
        "adapt": {
            "method": "FOP",
            "max_episode": 12,
            "source": {"simulate": {"x_true": 1.1, "seed": 3}},
        },
    }
    out = tmp_path / "sim"
    rc = main(["adapt", "--config", write_cfg(tmp_path, cfg), "--out", str(out), "--quiet"])
    assert rc == 0
    res = read_results(out)["results"]
    assert len(res["episodes"]) == 12
    assert 0.2 <= res["posterior_mean"] <= 2.2
    prior_sd = (2.2 - 0.2) / np.sqrt(12.0)
    assert res["posterior_sd"] < prior_sd
    with open(out / "episodes.csv") as fh:
        assert fh.readline().strip() == "episode,offset,outcome,posterior_mean,posterior_sd"

    # replaying the recorded outcomes reproduces the simulated run
    outcomes_file = tmp_path / "outcomes.txt"
    outcomes_file.write_text(
        "\n".join(str(e["outcome"]) for e in res["episodes"]) + "\n"
    )
    cfg["adapt"]["source"] = {"replay": str(outcomes_file)}
    out2 = tmp_path / "replay"
    rc = main(["adapt", "--config", write_cfg(tmp_path, cfg, "replay.yaml"), "--out", str(out2), "--quiet"])
    assert rc == 0
    res2 = read_results(out2)["results"]
    assert res2["posterior_mean"] == res["posterior_mean"]
    assert [e["offset"] for e in res2["episodes"]] == [e["offset"] for e in res["episodes"]]


def test_cli_nv_preset_needs_no_config(tmp_path):
    out = tmp_path / "out"
    rc = main(
        [
            "nv",
            "--set",
            "nv.tspan=[0.0, 0.1, 0.4]",
            "--out",
            str(out),
            "--quiet",
        ]
    )
    assert rc == 0
    res = read_results(out)
    assert res["task"] == "nv"
    assert res["results"]["quantity"] == "qfim"
    final = np.array(res["results"]["values"])[-1]
    assert final.shape == (3, 3)
    assert np.allclose(final, final.T, atol=1e-8)
    with open(out / "values.csv") as fh:
        header = fh.readline().strip()
    assert header == "time," + ",".join(
        f"F_{a}_{b}" for a in range(3) for b in range(3)
    )


def test_cli_output_dir_precedence(tmp_path, monkeypatch):
    cfg = minimal_cfg()
    cfg_out = tmp_path / "from_config"
    cfg["output"] = str(cfg_out)
    cfg_path = write_cfg(tmp_path, cfg)
    assert main(["evaluate", "--config", cfg_path, "--quiet"]) == 0
    assert (cfg_out / "results.json").exists()
    flag_out = tmp_path / "from_flag"
    assert main(["evaluate", "--config", cfg_path, "--out", str(flag_out), "--quiet"]) == 0
    assert (flag_out / "results.json").exists()
    assert not (cfg_out / "values.csv").exists() or (flag_out / "values.csv").exists()


def test_thread_cap_env(monkeypatch):
    monkeypatch.setenv("QESTIM_THREADS", "3")
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS"):
        monkeypatch.delenv(var, raising=False)
    _apply_thread_cap()
    assert os.environ["OMP_NUM_THREADS"] == "3"
    assert os.environ["OPENBLAS_NUM_THREADS"] == "3"
    assert os.environ["MKL_NUM_THREADS"] == "3"
    monkeypatch.delenv("QESTIM_THREADS")
    monkeypatch.setenv("OMP_NUM_THREADS", "7")
    _apply_thread_cap()
    assert os.environ["OMP_NUM_THREADS"] == "7"  # no cap set: left alone
