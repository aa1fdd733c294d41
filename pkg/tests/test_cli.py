import csv
import json
from pathlib import Path

import numpy as np
import pytest

from memkernel.cli import runner
from memkernel.cli.main import main, preset_paths, resolve
from memkernel.cli.scenario import ConfigError, load_scenario, parse_scenario, value_positions

FIXTURES = Path(__file__).parent / "fixtures"

MINIMAL = {
    "name": "minimal",
    "system": {"dim": 2, "lindblad": {"hamiltonian": [[0.5, 0], [0, -0.5]]}},
    "channel": {"type": "pauli-conjugation", "axis": "x"},
    "waiting_time": {"law": "erlang", "k": 2, "rate": 2.0},
    "ordering": "R",
    "grid": {"t_max": 1.0, "n_steps": 40},
    "methods": ["series", "semigroup-ansatz"],
}


def read_csv(path):
    with open(path) as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array(rows[1:], dtype=float)


def write_scenario(tmp_path, data, name="scenario.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data, indent=2))
    return path


def test_presets_are_bundled():
    names = {p.stem for p in preset_paths()}
    assert {"markov-limit", "micromaser", "classical-ctrw", "modified-stationary"} <= names
    assert resolve("markov-limit").exists() and resolve("markov-limit.json").exists()


def test_every_preset_verifies(capsys):
    assert main(["verify", "--all"]) == runner.EXIT_OK
    assert "all checks passed" in capsys.readouterr().out


@pytest.mark.parametrize(
    "fixture, message",
    [
        ("transpose-channel.json", "channel not CP (min Choi eigenvalue -1)"),
        ("empty-methods.json", "no method selected"),
        ("schema-error.json", "schema violation at waiting_time/rate"),
    ],
)
def test_config_errors_exit_two(fixture, message, capsys):
    assert main(["run", str(FIXTURES / fixture)]) == runner.EXIT_CONFIG
    err = capsys.readouterr().err
    assert message in err
    assert f"{fixture}:" in err  # errors are anchored to a line


def test_schema_error_points_at_offending_line(capsys):
    path = FIXTURES / "schema-error.json"
    line = next(i for i, s in enumerate(path.read_text().splitlines(), 1) if '"rate"' in s)
    main(["verify", str(path)])
    assert f"schema-error.json:{line}:" in capsys.readouterr().err


def test_broken_normalization_is_invariant_failure(capsys):
    assert main(["verify", str(FIXTURES / "broken-normalization.json")]) == runner.EXIT_INVARIANT
    out = capsys.readouterr().out
    assert "waiting time: dg/dt = -f and unit mass FAIL" in out


def test_verify_needs_target(capsys):
    assert main(["verify"]) == runner.EXIT_CONFIG


def test_missing_file_is_config_error(tmp_path, capsys):
    assert main(["run", str(tmp_path / "nope.json")]) == runner.EXIT_CONFIG


def test_invalid_json_reports_line(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text('{\n  "name": "x",\n  "grid": {,}\n}\n')
    assert main(["run", str(path)]) == runner.EXIT_CONFIG
    assert "bad.json:3" in capsys.readouterr().err


def test_cross_field_validation(tmp_path):
    data = dict(MINIMAL, ordering="modified")
    with pytest.raises(ConfigError, match="modified"):
        load_scenario(write_scenario(tmp_path, data))
    data = dict(MINIMAL, waiting_time=dict(MINIMAL["waiting_time"], stationary=True))
    with pytest.raises(ConfigError):
        load_scenario(write_scenario(tmp_path, data))


def test_inapplicable_method_rejected(tmp_path, capsys):
    data = dict(MINIMAL, waiting_time={"law": "uniform", "a": 0.0, "b": 1.0})
    assert main(["run", str(write_scenario(tmp_path, data)), "--out", str(tmp_path / "o")]) == runner.EXIT_CONFIG
    assert "semigroup-ansatz does not apply" in capsys.readouterr().err


def test_value_positions_maps_paths_to_offsets():
    text = '{\n "a": {"b": [1, {"c": 2}]}\n}'
    pos = value_positions(text)
    assert text[pos[("a", "b", 1, "c")]] == "2"
    assert text[pos[("a",)]] == "{"


def test_dephasing_run_outputs(tmp_path, capsys):
    out = tmp_path / "o"
    assert main(["run", "dephasing-erlang2", "--out", str(out)]) == runner.EXIT_OK
    assert {"series.csv", "semigroup-ansatz.csv", "wform.csv", "montecarlo.csv", "cross_method.csv",
            "diagnostics.json"} <= {p.name for p in out.iterdir()}
    header, data = read_csv(out / "series.csv")
    cols = {h: data[:, i] for i, h in enumerate(header)}
    # pure dephasing kicks leave the populations alone and shrink coherence
    assert np.abs(cols["p_0"] - 0.5).max() < 1e-12
    assert cols["abs_rho_0_1"][-1] < 0.5 * cols["abs_rho_0_1"][0]
    diag = json.loads((out / "diagnostics.json").read_text())
    assert diag["exit_code"] == 0 and diag["reference_method"] == "series"
    assert "time" not in json.dumps(diag).replace("times", "")


def test_markov_limit_cross_method(tmp_path, capsys):
    out = tmp_path / "o"
    assert main(["run", "markov-limit", "--out", str(out)]) == runner.EXIT_OK
    header, data = read_csv(out / "cross_method.csv")
    assert header[0] == "t"
    assert np.abs(data[:, 1:]).max() <= 1e-5


def test_outputs_byte_identical_across_runs(tmp_path, capsys, monkeypatch):
    a, b = tmp_path / "a", tmp_path / "b"
    monkeypatch.setenv("MEMKERNEL_THREADS", "1")
    main(["run", "modified-stationary", "--out", str(a)])
    monkeypatch.setenv("MEMKERNEL_THREADS", "3")
    main(["run", "modified-stationary", "--out", str(b)])
    for p in a.iterdir():
        assert p.read_bytes() == (b / p.name).read_bytes(), p.name


def test_seed_override_changes_monte_carlo(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    main(["run", "modified-stationary", "--out", str(a)])
    main(["run", "modified-stationary", "--out", str(b), "--seed", "99"])
    assert (a / "series.csv").read_bytes() == (b / "series.csv").read_bytes()
    assert (a / "montecarlo.csv").read_bytes() != (b / "montecarlo.csv").read_bytes()


def test_tolerance_override_can_fail_cross_method(capsys):
    assert main(["verify", "dephasing-erlang2", "--tol", "1e-12"]) == runner.EXIT_INVARIANT


def test_laplace_check_inconclusive_and_pass(capsys):
    assert main(["laplace-check", "dephasing-erlang2", "--u", "1,0"]) == runner.EXIT_FLAG
    assert "inconclusive" in capsys.readouterr().out
    assert main(["laplace-check", "dephasing-erlang2", "--u", "5,1", "6"]) == runner.EXIT_OK
    out = capsys.readouterr().out
    assert out.count("pass") == 2


def test_laplace_check_rejects_left_half_plane(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["laplace-check", "dephasing-erlang2", "--u=-1,0"])
    assert exc.value.code == runner.EXIT_CONFIG
    assert "Re u > 0" in capsys.readouterr().err


def test_photon_number_column(tmp_path):
    sc = load_scenario(resolve("micromaser-poisson"))
    assert "photon_number" in sc.observables
    assert sc.dim == 10


def test_parse_scenario_defaults():
    sc = parse_scenario(json.dumps(MINIMAL), "inline", None)
    assert sc.tolerances["cross_method"] == 1e-4
    assert sc.n_traj == 100000
    assert np.allclose(sc.rho0, np.diag([1.0, 0.0]))
    assert sc.generator_G is sc.generator
