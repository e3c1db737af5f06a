import json
import subprocess
import sys

import numpy as np
import pytest
import yaml
from hypothesis import given, settings
from hypothesis import strategies as st

from barymorse.cli import DEFAULTS, EXIT_ERROR, EXIT_NOT_EVALUABLE, EXIT_OK, ConfigError, emit_config, main, parse_config


def run(tmp_path, command, cfg: dict | None = None, *extra):
    tmp_path.mkdir(parents=True, exist_ok=True)
    out = tmp_path / "out"
    argv = [command]
    if cfg is not None:
        path = tmp_path / "run.yaml"
        path.write_text(yaml.safe_dump(cfg))
        argv.append(str(path))
    return main(argv + ["--out", str(out), *extra]), out


def read(out, name):
    return json.loads((out / name).read_text())


# -- configuration ---------------------------------------------------------


def test_defaults_round_trip():
    cfg = parse_config(emit_config(DEFAULTS))
    assert cfg == DEFAULTS
    assert emit_config(cfg) == emit_config(DEFAULTS)


@settings(max_examples=40, deadline=None)
@given(
    st.sampled_from(["torus", "sphere"]),
    st.integers(16, 512),
    st.integers(1, 4),
    st.integers(0, 2**31),
    st.lists(st.floats(1.0, 200.0, allow_nan=False), min_size=3, max_size=5),
)
def test_config_round_trip(kind, N, m, seed, lambdas):
    text = yaml.safe_dump({"surface": {"kind": kind, "N": N}, "m": m, "seed": seed, "expansions": {"lambdas": lambdas}})
    cfg = parse_config(text)
    assert parse_config(emit_config(cfg)) == cfg
    assert cfg["surface"]["N"] == N and cfg["expansions"]["lambdas"] == lambdas


@pytest.mark.parametrize(
    "text,needle",
    [
        ("surface: {kind: torus, NN: 3}", "unknown field 'surface.NN'"),
        ("surface: {N: abc}", "field 'surface.N'"),
        ("m: -1", "field 'm'"),
        ("solver: {merit: sideways}", "field 'solver.merit'"),
        ("surface: {kind: klein}", "field 'surface.kind'"),
        ("schema_version: 7", "schema_version"),
    ],
)
def test_config_errors_name_the_field(text, needle):
    with pytest.raises(ConfigError, match=needle.replace(".", r"\.")):
        parse_config(text)


def test_malformed_yaml_reports_position():
    with pytest.raises(ConfigError, match="line 1, column"):
        parse_config("surface: {kind: torus, N: [1,")


def test_cli_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("m: two\n")
    assert main(["betti", str(bad), "--out", str(tmp_path / "o")]) == EXIT_ERROR
    assert "field 'm'" in capsys.readouterr().err


def test_show_config(tmp_path, capsys):
    code, out = run(tmp_path, "surface-info", {"surface": {"N": 32}}, "--show-config")
    assert code == EXIT_OK and not out.exists()
    assert parse_config(capsys.readouterr().out)["surface"]["N"] == 32


# -- commands --------------------------------------------------------------


def test_surface_info(tmp_path):
    code, out = run(tmp_path, "surface-info", {"surface": {"kind": "torus", "N": 64}})
    assert code == EXIT_OK
    info = read(out, "surface.json")
    assert info["schema_version"] == 1
    assert info["surface"]["robin_constant"] == pytest.approx(-0.2085777932435014, abs=1e-12)
    meta = read(out, "run_meta.json")
    assert meta["exit_code"] == 0 and "surface.json" in meta["files"]


def test_crit_find_and_classify(tmp_path):
    cfg = {"surface": {"N": 64}, "K": "trig", "m": 1, "search": {"starts": 16}}
    code, out = run(tmp_path, "crit-find", cfg)
    assert code == EXIT_OK
    rows = (out / "critical.csv").read_text().splitlines()
    assert len(rows) >= 5
    found = read(out, "critical.json")
    assert sorted(p["morse_index"] for p in found["critical_points"]) == [0, 1, 1, 2]
    src = tmp_path / "found.json"
    src.write_text(json.dumps(found))
    cfg["classify"] = {"input": str(src)}
    code, out2 = run(tmp_path, "crit-classify", cfg)
    assert code == EXIT_OK
    again = read(out2, "critical.json")["critical_points"]
    assert [p["morse_index"] for p in again] == [p["morse_index"] for p in found["critical_points"]]


def test_betti(tmp_path):
    code, out = run(tmp_path, "betti", {"surface": {"kind": "sphere"}, "m": 2})
    assert code == EXIT_OK and read(out, "betti.json")["betti"] == [1, 0, 0, 0, 1, 1]
    code, _ = run(tmp_path, "betti", {"surface": {"kind": "torus"}, "m": 3})
    assert code == EXIT_ERROR


def _record(index, L, iota):
    return {"m": 2, "points": [[0, 0, 1], [0, 0, -1]], "F": 0.0, "morse_index": index, "nondeg": True, "L": L,
            "iota_inf": iota}


def test_morse_report(tmp_path):
    src = tmp_path / "crit.json"
    src.write_text(json.dumps({"m": 2, "critical_points": [_record(0, -1.0, 5)]}))
    code, out = run(tmp_path, "morse-report", {"surface": {"kind": "sphere"}, "m": 2, "morse": {"input": str(src)}})
    assert code == EXIT_OK
    rep = read(out, "morse_report.json")
    assert rep["euler"] == {"lhs": -1, "rhs": -1, "residual": 0}
    triples = tmp_path / "crit3.json"
    triples.write_text(json.dumps({"m": 3, "critical_points": []}))
    code, out = run(tmp_path, "morse-report", {"surface": {"kind": "torus"}, "m": 3, "morse": {"input": str(triples)}})
    assert code == EXIT_NOT_EVALUABLE
    assert read(out, "morse_report.json")["inequalities"] is None


def test_morse_report_missing_input(tmp_path):
    code, _ = run(tmp_path, "morse-report", {"morse": {"input": str(tmp_path / "nope.json")}})
    assert code == EXIT_ERROR


def test_verify_expansions(tmp_path):
    cfg = {"surface": {"N": 256}, "expansions": {"lambdas": [8.0, 16.0, 32.0], "A": [[0.3183, 0.2718]]}}
    code, out = run(tmp_path, "verify-expansions", cfg, "--lemma", "norm", "--lemma", "defect")
    assert code == EXIT_OK
    header = (out / "expansions.csv").read_text().splitlines()[0]
    assert "fitted_order" in header.split(",")
    assert [c["lemma"] for c in read(out, "expansions.json")["checks"]] == ["norm", "defect"]
    assert (out / "expansions_plot.csv").read_text().startswith("lemma,lambda,residual")


def test_solve_is_reproducible(tmp_path):
    cfg = {"surface": {"N": 64}, "K": "trig", "solver": {"rho": 12.0, "spectrum_modes": 32}}
    c1, o1 = run(tmp_path / "a", "solve", cfg)
    c2, o2 = run(tmp_path / "b", "solve", cfg)
    assert c1 == c2 == EXIT_OK
    assert (o1 / "solve.json").read_bytes() == (o2 / "solve.json").read_bytes()
    assert np.array_equal(np.load(o1 / "solution.npy"), np.load(o2 / "solution.npy"))
    assert "started" not in (o1 / "solve.json").read_text()
    assert read(o1, "solve.json")["spectrum"]["morse_index"] == 0


def test_project_and_continuation(tmp_path):
    from barymorse import build_surface
    from barymorse.bubbles import approximate_solution

    s = build_surface("torus", 128)
    field = tmp_path / "u.npy"
    np.save(field, approximate_solution(s, [[0.3, 0.4]], [12.0]))
    code, out = run(tmp_path, "project", {"surface": {"N": 128}, "project": {"input": str(field), "m": 1}})
    assert code == EXIT_OK
    d = read(out, "projection.json")
    assert d["in_V"] and d["lam"][0] == pytest.approx(12.0, rel=1e-8)
    cfg = {"surface": {"N": 64}, "K": "trig", "continuation": {"direction": "sub", "schedule": [0.2, 0.1]}}
    code, out = run(tmp_path / "c", "continuation", cfg)
    assert code == EXIT_OK
    lines = (out / "branch.jsonl").read_text().splitlines()
    assert len(lines) >= 2 and all(json.loads(x)["status"] == "converged" for x in lines)


def test_thread_count_does_not_change_results(tmp_path):
    cfg = {"surface": {"N": 64}, "K": "trig", "m": 2, "search": {"starts": 12}}
    outs = []
    for t in ("1", "3"):
        path = tmp_path / f"r{t}.yaml"
        path.write_text(yaml.safe_dump(cfg))
        subprocess.run([sys.executable, "-m", "barymorse.cli", "crit-find", str(path), "--out", str(tmp_path / t)],
                       check=True, capture_output=True, env={"BARYMORSE_THREADS": t, "PATH": ""})
        outs.append((tmp_path / t / "critical.json").read_bytes())
    assert outs[0] == outs[1]
