"""Command-line front end.

Every subcommand reads one YAML run file. Missing keys fall back to
``DEFAULTS``; ``barymorse <command> --show-config`` prints the merged
configuration. Reports are written to the output directory as JSON (machine
readable), a text summary and CSV where the data are tabular. The JSON
reports never carry timestamps; those go to ``run_meta.json``.
"""

from __future__ import annotations

import argparse
import copy
import json
import math
import sys
import time
from pathlib import Path

import numpy as np
import yaml

SCHEMA_VERSION = 1

DEFAULTS: dict = {
    "schema_version": SCHEMA_VERSION,
    "surface": {"kind": "torus", "N": None, "eta": None},
    "K": {"kind": "constant", "value": 1.0},
    "m": 1,
    "seed": 0,
    "output": "barymorse-out",
    "betti_tables": None,
    "search": {"starts": None, "tol_grad": 1e-8, "tol_deg": 1e-6, "tol_pos": 1e-5, "max_iter": 80},
    "classify": {"input": None},
    "morse": {"input": None, "nu": None},
    "expansions": {
        "lemmas": ["products"],
        "lambdas": [10.0, 20.0, 40.0, 80.0],
        "A": None,
        "alpha": 1.0,
        "mu": 0.0,
        "i": 0,
        "balanced": True,
        "with_wbar": False,
    },
    "solver": {"rho": None, "init": "zero", "tol": 1e-9, "max_iter": 60, "merit": "energy", "spectrum_modes": 128, "spectrum_n": 10},
    "continuation": {"direction": "sup", "schedule": [0.2, 0.1, 0.05], "init": None},
    "project": {"input": None, "m": None, "eps": 0.1, "C1": 4.0},
}

EXIT_OK, EXIT_ERROR, EXIT_NOT_EVALUABLE = 0, 1, 2


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


def _merge(base: dict, over: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in over.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown field '{where}'")
        if isinstance(base[key], dict) and key != "K":
            if not isinstance(val, dict):
                raise ConfigError(f"field '{where}' must be a mapping")
            out[key] = _merge(base[key], val, where + ".")
        else:
            out[key] = val
    return out


def _expect(cfg: dict, dotted: str, types, allow_none: bool = False):
    node = cfg
    for part in dotted.split("."):
        node = node[part]
    if node is None and allow_none:
        return
    if isinstance(node, bool) and bool not in (types if isinstance(types, tuple) else (types,)):
        raise ConfigError(f"field '{dotted}': expected {_tname(types)}, got {node!r}")
    if not isinstance(node, types):
        raise ConfigError(f"field '{dotted}': expected {_tname(types)}, got {node!r}")


def _tname(types) -> str:
    types = types if isinstance(types, tuple) else (types,)
    return " or ".join(t.__name__ for t in types)


def _validate(cfg: dict) -> None:
    num = (int, float)
    if cfg["schema_version"] != SCHEMA_VERSION:
        raise ConfigError(f"field 'schema_version': unsupported version {cfg['schema_version']!r}")
    if cfg["surface"]["kind"] not in ("torus", "sphere"):
        raise ConfigError(f"field 'surface.kind': expected torus or sphere, got {cfg['surface']['kind']!r}")
    _expect(cfg, "surface.N", int, True)
    _expect(cfg, "surface.eta", num, True)
    _expect(cfg, "m", int)
    if cfg["m"] < 1:
        raise ConfigError("field 'm': must be at least 1")
    _expect(cfg, "seed", int)
    _expect(cfg, "output", str)
    _expect(cfg, "betti_tables", str, True)
    _expect(cfg, "search.starts", int, True)
    for k in ("tol_grad", "tol_deg", "tol_pos"):
        _expect(cfg, f"search.{k}", num)
    _expect(cfg, "search.max_iter", int)
    _expect(cfg, "expansions.lemmas", (list, str))
    _expect(cfg, "expansions.lambdas", list)
    _expect(cfg, "expansions.mu", num)
    _expect(cfg, "expansions.balanced", bool)
    _expect(cfg, "expansions.with_wbar", bool)
    _expect(cfg, "solver.rho", num, True)
    _expect(cfg, "solver.tol", num)
    _expect(cfg, "solver.max_iter", int)
    if cfg["solver"]["merit"] not in ("energy", "residual"):
        raise ConfigError("field 'solver.merit': expected energy or residual")
    if cfg["continuation"]["direction"] not in ("sup", "sub"):
        raise ConfigError("field 'continuation.direction': expected sup or sub")
    _expect(cfg, "continuation.schedule", list)
    _expect(cfg, "project.eps", num)
    _expect(cfg, "project.m", int, True)
    if not isinstance(cfg["K"], (dict, str, int, float)) or isinstance(cfg["K"], bool):
        raise ConfigError("field 'K': expected a preset name, a number or a mapping")


def parse_config(text: str, source: str = "<config>") -> dict:
    """YAML text -> merged, validated configuration."""
    try:
        data = yaml.safe_load(text) if text.strip() else {}
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise ConfigError(f"malformed config {source}{where}: {getattr(exc, 'problem', exc)}") from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"malformed config {source}: top level must be a mapping")
    cfg = _merge(DEFAULTS, data)
    _validate(cfg)
    return cfg


def emit_config(cfg: dict) -> str:
    return yaml.safe_dump(cfg, sort_keys=True, default_flow_style=None)


def load_config(path: str | None) -> dict:
    if path is None:
        return parse_config("")
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, str(p))


# ---------------------------------------------------------------------------
# Construction helpers
# ---------------------------------------------------------------------------


def make_surface(cfg: dict):
    from .surface import build_surface

    s = cfg["surface"]
    return build_surface(s["kind"], s["N"], s["eta"])


def make_weight(cfg: dict, surface):
    from .reduced_energy import KFunction, trig_preset

    spec = cfg["K"]
    if isinstance(spec, str):
        if spec == "trig":
            spec = trig_preset()
        elif spec == "constant":
            spec = {"kind": "constant"}
        else:
            raise ConfigError(f"field 'K': unknown preset {spec!r}")
    try:
        return KFunction.from_config(spec, surface)
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"field 'K': {exc}") from None


def _search_config(cfg: dict):
    from .critical_search import SearchConfig

    s = cfg["search"]
    return SearchConfig(starts=s["starts"], seed=cfg["seed"], tol_grad=s["tol_grad"], tol_deg=s["tol_deg"],
                        tol_pos=s["tol_pos"], max_iter=s["max_iter"])


def _clean(obj):
    """JSON-ready copy: numpy scalars and arrays become Python values, non-finite floats become strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


class Output:
    def __init__(self, directory: str):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.written: list = []

    def json(self, name: str, payload: dict) -> None:
        body = {"schema_version": SCHEMA_VERSION, **payload}
        self._write(name, json.dumps(_clean(body), indent=2, sort_keys=True) + "\n")

    def text(self, name: str, text: str) -> None:
        self._write(name, text if text.endswith("\n") else text + "\n")

    def _write(self, name: str, text: str) -> None:
        (self.dir / name).write_text(text)
        self.written.append(name)


def _table(rows: list, header: list) -> str:
    cells = [[str(c) for c in header]] + [[str(c) for c in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in cells)


def _fmt(x, digits: int = 6) -> str:
    if x is None:
        return "-"
    if isinstance(x, float):
        return f"{x:.{digits}g}"
    return str(x)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_surface_info(cfg, out: Output, args) -> int:
    from .surface import robin_constant

    s = make_surface(cfg)
    info = {**s.describe(), "robin_constant": robin_constant(s)}
    out.json("surface.json", {"command": "surface-info", "surface": info})
    out.text("surface.txt", _table([[k, _fmt(v)] for k, v in info.items()], ["field", "value"]))
    print(out.dir / "surface.txt")
    return EXIT_OK


def _critical_outputs(out: Output, result, command: str, cfg) -> None:
    from .critical_search import to_csv

    out.json("critical.json", {"command": command, "surface": cfg["surface"], "K": cfg["K"], **result.to_dict()})
    out.text("critical.csv", to_csv(result))
    rows = [[i, p.morse_index, _fmt(p.F, 10), _fmt(p.L, 6), p.nondegenerate, _fmt(p.iota_inf),
             " ".join(f"{x:.6f}" for x in np.ravel(p.points))] for i, p in enumerate(result.points)]
    head = f"{len(result.points)} critical points (m = {result.m}, {result.converged} of {result.starts_used} starts converged)\n"
    caveats = "".join(f"caveat: {c}\n" for c in result.caveats)
    out.text("critical.txt", head + caveats + _table(rows, ["#", "index", "F", "L", "nondeg", "iota_inf", "points"]))


def cmd_crit_find(cfg, out: Output, args) -> int:
    from .critical_search import find_critical_points

    s = make_surface(cfg)
    K = make_weight(cfg, s)
    result = find_critical_points(s, K, cfg["m"], _search_config(cfg))
    _critical_outputs(out, result, "crit-find", cfg)
    print((out.dir / "critical.txt").read_text(), end="")
    return EXIT_OK


def _read_json(path: str, field: str) -> dict:
    if path is None:
        raise ConfigError(f"field '{field}' must name an input file")
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"field '{field}': cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"field '{field}': {path} is not valid JSON (line {exc.lineno})") from None


def cmd_crit_classify(cfg, out: Output, args) -> int:
    from .critical_search import SearchResult, classify, newton_refine

    s = make_surface(cfg)
    K = make_weight(cfg, s)
    data = _read_json(cfg["classify"]["input"], "classify.input")
    configs = data.get("configurations") or [p["points"] for p in data.get("critical_points", [])]
    if not configs:
        raise ConfigError("field 'classify.input': no configurations found")
    scfg = _search_config(cfg)
    points, failed = [], 0
    for A in configs:
        products, gn, ok = newton_refine(s, K, np.asarray(A, dtype=float), scfg)
        if not ok:
            failed += 1
            continue
        points.append(classify(s, K, products, scfg))
    m = len(np.atleast_2d(configs[0]))
    caveats = [f"{failed} configurations did not converge to a critical point"] if failed else []
    if any(not p.nondegenerate for p in points):
        caveats.append("degenerate critical points found; they are excluded from Morse counts")
    result = SearchResult(m, points, len(configs), 0, len(points), any(not p.nondegenerate for p in points), caveats)
    _critical_outputs(out, result, "crit-classify", cfg)
    print((out.dir / "critical.txt").read_text(), end="")
    return EXIT_OK


def cmd_betti(cfg, out: Output, args) -> int:
    from .topology import CHI, betti_table, euler_char_barycenter, validate_betti

    kind, m = cfg["surface"]["kind"], cfg["m"]
    table = betti_table(kind, m, cfg["betti_tables"])
    checks = validate_betti(table)
    payload = {
        "command": "betti",
        "kind": kind,
        "chi": CHI[kind],
        "m": m,
        "betti": list(table.betti),
        "euler_characteristic": euler_char_barycenter(CHI[kind], m),
        "checks": [{"name": c.name, "passed": c.passed, "detail": c.detail} for c in checks],
    }
    out.json("betti.json", payload)
    txt = f"{kind} order {m}: betti = {' '.join(map(str, table.betti))}\n" + _table(
        [[c.name, "pass" if c.passed else "FAIL", c.detail] for c in checks], ["check", "result", "detail"])
    out.text("betti.txt", txt)
    print(txt)
    return EXIT_OK if all(c.passed for c in checks) else EXIT_ERROR


def cmd_morse_report(cfg, out: Output, args) -> int:
    from .critical_search import from_records
    from .morse_report import NOT_EVALUABLE, IndexCounts, build_report
    from .topology import CHI, MissingTableError, betti_table

    kind = cfg["surface"]["kind"]
    data = _read_json(cfg["morse"]["input"], "morse.input")
    records = from_records(data.get("critical_points", []))
    m = int(data.get("m", cfg["m"]))
    counts = IndexCounts.from_records(m, records, cfg["morse"]["nu"])
    try:
        table = betti_table(kind, m - 1, cfg["betti_tables"])
    except MissingTableError:
        table = None
    report = build_report(counts, CHI[kind], table)
    out.json("morse_report.json", {"command": "morse-report", **report.to_dict()})
    lines = [f"m = {m}, chi = {CHI[kind]}", f"nu_inf = {report.nu_inf}"]
    if report.euler:
        e = report.euler
        lines.append(f"euler: lhs {e['lhs']}  rhs {e['rhs']}  residual {e['residual']}")
        lines.append(f"lower bound on the number of solutions: {report.lower_bound}")
    if report.inequalities is not None:
        lines.append(_table([[q.k, q.lhs, q.rhs, "holds" if q.holds else "VIOLATED", q.margin] for q in report.inequalities],
                            ["k", "nu+nu_inf", "beta", "verdict", "margin"]))
    for c in report.certificates:
        lines.append(f"certificate {c.id} [{c.status}]: {c.conclusion}")
    lines += [f"caveat: {c}" for c in report.caveats]
    out.text("morse_report.txt", "\n".join(lines))
    print("\n".join(lines))
    not_evaluable = report.inequalities is None and m >= 2 or any(c.status == NOT_EVALUABLE for c in report.certificates)
    return EXIT_NOT_EVALUABLE if not_evaluable else EXIT_OK


def cmd_verify_expansions(cfg, out: Output, args) -> int:
    from .bubbles import checks_to_csv, verify_matrix
    from .critical_search import _thread_count, SearchConfig

    s = make_surface(cfg)
    K = make_weight(cfg, s)
    e = dict(cfg["expansions"])
    lemmas = args.lemma or e.pop("lemmas")
    e.pop("lemmas", None)
    if e["A"] is None:
        e.pop("A")
    checks = verify_matrix(s, K, lemmas, e, threads=_thread_count(SearchConfig()))
    out.text("expansions.csv", checks_to_csv(checks))
    plot = ["lemma,lambda,residual"] + [f"{c.lemma},{l!r},{abs(r)!r}" for c in checks for l, r in zip(c.lambdas, c.residuals)]
    out.text("expansions_plot.csv", "\n".join(plot))
    out.json("expansions.json", {"command": "verify-expansions", "checks": [c.to_dict() for c in checks],
                                 "all_pass": all(c.passed for c in checks)})
    txt = _table([[c.lemma, _fmt(c.fitted, 4), c.declared[0], "pass" if c.passed else "FAIL"] for c in checks],
                 ["lemma", "fitted_order", "declared_order", "result"])
    out.text("expansions.txt", txt)
    print(txt)
    return EXIT_OK


def _load_field(path: str, field: str, surface) -> np.ndarray:
    try:
        u = np.load(path)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"field '{field}': cannot load {path}: {exc}") from None
    if u.shape != surface.shape:
        raise ConfigError(f"field '{field}': array shape {u.shape} does not match the grid {surface.shape}")
    return u


def cmd_solve(cfg, out: Output, args) -> int:
    from .mf_solver import SolverConfig, linearized_spectrum, solve_mf

    s = make_surface(cfg)
    K = make_weight(cfg, s)
    sc = cfg["solver"]
    rho = sc["rho"] if sc["rho"] is not None else 8 * math.pi * cfg["m"]
    init = sc["init"]
    if isinstance(init, str) and init not in ("zero", "random"):
        init = _load_field(init, "solver.init", s)
    state = solve_mf(s, K, float(rho), init, SolverConfig(tol=sc["tol"], max_iter=sc["max_iter"], merit=sc["merit"], seed=cfg["seed"]))
    payload = {"command": "solve", "state": state.summary(), "history": state.history}
    if state.converged:
        spec = linearized_spectrum(s, K, float(rho), state.u, n=sc["spectrum_n"], modes=sc["spectrum_modes"])
        payload["spectrum"] = spec.to_dict()
    np.save(out.dir / "solution.npy", state.u)
    out.written.append("solution.npy")
    out.json("solve.json", payload)
    rows = [[k, _fmt(v, 10)] for k, v in state.summary().items()]
    if "spectrum" in payload:
        rows += [["morse_index", payload["spectrum"]["morse_index"]], ["generalized_index", payload["spectrum"]["generalized_index"]]]
    txt = _table(rows, ["field", "value"])
    out.text("solve.txt", txt)
    print(txt)
    return EXIT_OK if state.converged else EXIT_ERROR


def cmd_continuation(cfg, out: Output, args) -> int:
    from .mf_solver import SolverConfig, continuation

    s = make_surface(cfg)
    K = make_weight(cfg, s)
    c = cfg["continuation"]
    init = _load_field(c["init"], "continuation.init", s) if c["init"] else None
    sc = cfg["solver"]
    rec = continuation(s, K, cfg["m"], c["direction"], c["schedule"], init,
                       SolverConfig(tol=sc["tol"], max_iter=sc["max_iter"], merit="residual", seed=cfg["seed"]))
    out.text("branch.jsonl", "".join(json.dumps(_clean(st), sort_keys=True) + "\n" for st in rec.steps))
    out.json("continuation.json", {"command": "continuation", **rec.to_dict()})
    rows = [[_fmt(st["mu"]), st["status"], _fmt(st.get("J")), _fmt(st.get("morse_index")), _fmt(st.get("in_V"))] for st in rec.steps]
    txt = f"outcome: {rec.outcome}\n" + _table(rows, ["mu", "status", "J", "index", "in_V"])
    out.text("continuation.txt", txt)
    print(txt)
    return EXIT_OK


def cmd_project(cfg, out: Output, args) -> int:
    from .bubbles import project_to_V

    s = make_surface(cfg)
    p = cfg["project"]
    if p["input"] is None:
        raise ConfigError("field 'project.input' must name a .npy field")
    u = _load_field(p["input"], "project.input", s)
    u = u - s.mean(u)
    K = make_weight(cfg, s)
    d = project_to_V(s, u, p["m"], p["eps"], p["C1"], K=K, rho=8 * math.pi * (p["m"] or cfg["m"]))
    out.json("projection.json", {"command": "project", **d.to_dict()})
    txt = _table([[k, _fmt(v)] for k, v in d.to_dict().items()], ["field", "value"])
    out.text("projection.txt", txt)
    print(txt)
    return EXIT_OK


COMMANDS = {
    "surface-info": cmd_surface_info,
    "crit-find": cmd_crit_find,
    "crit-classify": cmd_crit_classify,
    "betti": cmd_betti,
    "morse-report": cmd_morse_report,
    "verify-expansions": cmd_verify_expansions,
    "solve": cmd_solve,
    "continuation": cmd_continuation,
    "project": cmd_project,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="barymorse", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("config", nargs="?", help="YAML run file (defaults apply when omitted)")
        sp.add_argument("--out", help="output directory (overrides 'output')")
        sp.add_argument("--seed", type=int, help="random seed (overrides 'seed')")
        sp.add_argument("--betti-tables", help="Betti table file (overrides 'betti_tables')")
        sp.add_argument("--show-config", action="store_true", help="print the merged configuration and exit")
        if name == "verify-expansions":
            sp.add_argument("--lemma", action="append", help="expansion id or group (repeatable)")
    return ap


def main(argv=None) -> int:
    from .topology import MissingTableError

    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.out:
            cfg["output"] = args.out
        if args.seed is not None:
            cfg["seed"] = args.seed
        if args.betti_tables:
            cfg["betti_tables"] = args.betti_tables
        if args.show_config:
            print(emit_config(cfg), end="")
            return EXIT_OK
        out = Output(cfg["output"])
        out.text("config.yaml", emit_config(cfg))
        started = time.time()
        code = COMMANDS[args.command](cfg, out, args)
        meta = {"command": args.command, "started": time.strftime("%Y-%m-%dT%H:%M:%S%z", time.localtime(started)),
                "elapsed_seconds": round(time.time() - started, 3), "exit_code": code, "files": out.written}
        (out.dir / "run_meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
        return code
    except MissingTableError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
