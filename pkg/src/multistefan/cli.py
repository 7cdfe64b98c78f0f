"""Command-line entry point: ``multistefan --config run.json``.

A run config is a JSON object::

    {
      "mode": "solve" | "optimize" | "verify",
      "problem":  {"phases": {...}, "T": 1.0, "L": 1.0, "R": 10.0,
                   "phi": ..., "f": ..., "p": ..., "gamma": ..., "control": ...},
      "numerics": {"n": 32, "m": 32, "eps": null,
                   "solver": {"tol": 1e-10, "max_iter": 200000, "scalar_tol": 1e-14, "mode": "newton"},
                   "optimizer": {"max_evals": 5000, ...}},
      "verify":   {"benchmark": "heat" | "neumann", "levels": [[16, 16], ...], ...},
      "output":   {"directory": "out", "formats": ["csv", "binary"]}
    }

Data entries are numbers, polynomial strings in the listed variables, or
``{"samples": "file.csv"}`` (two columns, header row) for functions of one
variable.  Exit codes: 0 success, 1 configuration, 2 solver, 3 verification.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .control_opt import OptimizerParams, evaluate_control, minimize
from .discretization import qn_map, w21_discrete_norm
from .expressions import ExpressionError, Poly, Samples, as_function
from .interpolants import energy_norm, linf_norm
from .io import fmt
from .physics import InvalidPhaseSpec, PhaseSpec, kirchhoff_transform
from .problem import Problem, discretize
from .solver import MODES, SolverError, SolverParams, residual_check, solve_all
from .verification import (ConfigurationError, NeumannBenchmark, heat_problem, neumann_control,
                           neumann_setup, refinement_study)

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_VERIFY = 0, 1, 2, 3
RUN_MODES = ("solve", "optimize", "verify")


class ConfigError(ValueError):
    """Parse or validation failure; ``problems`` lists every violation."""

    def __init__(self, problems: list[str]):
        super().__init__("; ".join(problems))
        self.problems = problems


# ---------------------------------------------------------------------------
# schema

_NUM = "number"
_INT = "integer"
_STR = "string"
_DATA = "data"
_LIST = "list"
_LEVELS = "levels"
_OPTNUM = "number or null"

SCHEMA = {
    "mode": _STR,
    "problem": {
        "phases": {"critical_temps": _LIST, "latent_heats": _LIST, "alpha": _LIST, "k": _LIST,
                   "reference_temp": _NUM, "bbar": _OPTNUM},
        "T": _NUM, "L": _NUM, "R": _NUM,
        "phi": _DATA, "phi_variable": _STR, "f": _DATA, "p": _DATA, "gamma": _DATA, "control": _DATA,
    },
    "numerics": {
        "n": _INT, "m": _INT, "eps": _OPTNUM,
        "solver": {"tol": _NUM, "max_iter": _INT, "scalar_tol": _NUM, "mode": _STR, "relative_tol": "boolean"},
        "optimizer": {"max_evals": _INT, "initial_step": _NUM, "shrink": _NUM, "min_step": _NUM,
                      "restarts": _INT, "seed": _INT, "pattern_moves": "boolean", "remove_null_mode": "boolean"},
    },
    "verify": {
        "benchmark": _STR, "levels": _LEVELS, "T": _NUM, "L": _NUM, "amplitude": _NUM, "t0": _NUM,
        "alpha_l": _NUM, "k_l": _NUM, "alpha_s": _NUM, "k_s": _NUM, "latent": _NUM,
        "u_wall": _NUM, "u_melt": _NUM, "u_init": _NUM,
    },
    "output": {"directory": _STR, "formats": _LIST},
}


def _is_number(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


def _check_leaf(kind: str, value) -> bool:
    if kind == _NUM:
        return _is_number(value)
    if kind == _OPTNUM:
        return value is None or _is_number(value)
    if kind == _INT:
        return isinstance(value, int) and not isinstance(value, bool)
    if kind == _STR:
        return isinstance(value, str)
    if kind == "boolean":
        return isinstance(value, bool)
    if kind == _LIST:
        return isinstance(value, list)
    if kind == _LEVELS:
        return (isinstance(value, list) and all(isinstance(lv, list) and len(lv) == 2
                                                and all(isinstance(x, int) and not isinstance(x, bool) for x in lv)
                                                for lv in value))
    if kind == _DATA:
        return (_is_number(value) or isinstance(value, str)
                or (isinstance(value, dict) and set(value) == {"samples"} and isinstance(value["samples"], str)))
    raise AssertionError(kind)


def _walk(node, schema, path, problems):
    if not isinstance(node, dict):
        problems.append(f"{path or '<root>'}: expected an object")
        return
    for key, value in node.items():
        where = f"{path}.{key}" if path else key
        if key not in schema:
            problems.append(f"{where}: unknown key")
        elif isinstance(schema[key], dict):
            _walk(value, schema[key], where, problems)
        elif not _check_leaf(schema[key], value):
            problems.append(f"{where}: expected {schema[key]}")


def _reject_duplicates(pairs):
    seen = {}
    for key, value in pairs:
        if key in seen:
            raise ValueError(f"duplicate key {key!r}")
        seen[key] = value
    return seen


def _line_col(text: str, needle: str) -> str:
    """Position of the last occurrence of a quoted key (the duplicate)."""
    found = "unknown position"
    for lineno, line in enumerate(text.splitlines(), start=1):
        col = line.rfind(f'"{needle}"')
        if col >= 0:
            found = f"line {lineno}, column {col + 1}"
    return found


@dataclass
class RunConfig:
    mode: str
    raw: dict
    base_dir: Path
    n: int = 32
    m: int = 32
    eps: float | None = None
    solver: SolverParams = field(default_factory=SolverParams)
    optimizer: OptimizerParams = field(default_factory=OptimizerParams)
    out_dir: Path = Path("out")
    formats: tuple[str, ...] = ("csv", "binary")

    @property
    def problem_block(self) -> dict:
        return self.raw.get("problem", {})

    @property
    def verify_block(self) -> dict:
        return self.raw.get("verify", {})


def parse_config(path, mode_override: str | None = None) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise ConfigError([f"cannot read {path}: {exc}"]) from None
    try:
        raw = json.loads(text, object_pairs_hook=_reject_duplicates)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}"]) from None
    except ValueError as exc:
        key = str(exc).split("'")[1] if "'" in str(exc) else ""
        raise ConfigError([f"parse error: {exc} ({_line_col(text, key)})"]) from None
    return validate_config(raw, path.parent, mode_override)


def validate_config(raw, base_dir: Path = Path("."), mode_override: str | None = None) -> RunConfig:
    problems: list[str] = []
    _walk(raw, SCHEMA, "", problems)
    if not isinstance(raw, dict):
        raise ConfigError(problems)
    mode = mode_override or raw.get("mode")
    if mode not in RUN_MODES:
        problems.append(f"mode: must be one of {', '.join(RUN_MODES)}")
    num = raw.get("numerics", {}) if isinstance(raw.get("numerics"), dict) else {}
    n = num.get("n", 32)
    m = num.get("m", n)
    for name, val in (("numerics.n", n), ("numerics.m", m)):
        if isinstance(val, int) and val < 1:
            problems.append(f"{name}: must be >= 1")
    eps = num.get("eps")
    if _is_number(eps) and eps <= 0:
        problems.append("numerics.eps: must be positive")

    solver = SolverParams()
    sblock = num.get("solver", {})
    if isinstance(sblock, dict):
        if "mode" in sblock and sblock["mode"] not in MODES:
            problems.append(f"numerics.solver.mode: must be one of {', '.join(MODES)}")
        else:
            try:
                solver = SolverParams(**{k: v for k, v in sblock.items()
                                         if k in SCHEMA["numerics"]["solver"]})
            except (TypeError, ValueError) as exc:
                problems.append(f"numerics.solver: {exc}")
    optimizer = OptimizerParams()
    oblock = num.get("optimizer", {})
    if isinstance(oblock, dict):
        try:
            optimizer = OptimizerParams(**{k: v for k, v in oblock.items()
                                           if k in SCHEMA["numerics"]["optimizer"]})
        except (TypeError, ValueError) as exc:
            problems.append(f"numerics.optimizer: {exc}")

    prob = raw.get("problem")
    if mode in ("solve", "optimize"):
        if not isinstance(prob, dict):
            problems.append("problem: required for solve and optimize runs")
        else:
            for key in ("phases", "T", "L"):
                if key not in prob:
                    problems.append(f"problem.{key}: required")
            if "R" in prob and _is_number(prob["R"]) and prob["R"] <= 0:
                problems.append("problem.R: must be positive")
            for key in ("T", "L"):
                if _is_number(prob.get(key)) and prob[key] <= 0:
                    problems.append(f"problem.{key}: must be positive")
            if prob.get("phi_variable", "v") not in ("v", "u"):
                problems.append("problem.phi_variable: must be 'v' or 'u'")
            if mode == "optimize":
                if "gamma" not in prob:
                    problems.append("problem.gamma: required in optimize mode")
                if "R" not in prob:
                    problems.append("problem.R: required in optimize mode")
            phases = prob.get("phases")
            if isinstance(phases, dict):
                for key in ("alpha", "k"):
                    if key not in phases:
                        problems.append(f"problem.phases.{key}: required")
    if mode == "verify":
        ver = raw.get("verify")
        if not isinstance(ver, dict) or ver.get("benchmark") not in ("heat", "neumann"):
            problems.append("verify.benchmark: must be 'heat' or 'neumann'")
        elif len(ver.get("levels", [[16, 16], [64, 32], [256, 64]])) < 3:
            problems.append("verify.levels: need at least 3 grid levels")
    out = raw.get("output", {}) if isinstance(raw.get("output"), dict) else {}
    formats = tuple(out.get("formats", ["csv", "binary"]))
    for fmt_name in formats:
        if fmt_name not in ("csv", "binary"):
            problems.append(f"output.formats: unknown format {fmt_name!r}")
    if problems:
        raise ConfigError(problems)
    out_dir = Path(out.get("directory", "out"))
    return RunConfig(mode, raw, Path(base_dir), n, m, eps, solver, optimizer, out_dir, formats)


# ---------------------------------------------------------------------------
# building objects from the config


def _load_samples(spec: dict, base: Path) -> Samples:
    path = Path(spec["samples"])
    if not path.is_absolute():
        path = base / path
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))[1:]
        data = np.array([[float(a), float(b)] for a, b in rows])
        return Samples(data[:, 0], data[:, 1])
    except (OSError, ValueError) as exc:
        raise ConfigError([f"samples file {path}: {exc}"]) from None


def _data(value, variables, base: Path, where: str):
    if value is None:
        return None
    if isinstance(value, dict):
        if len(variables) != 1:
            raise ConfigError([f"{where}: samples only describe functions of one variable"])
        return _load_samples(value, base)
    try:
        return as_function(value, variables)
    except ExpressionError as exc:
        raise ConfigError([f"{where}: {exc}"]) from None


def build_problem(cfg: RunConfig) -> Problem:
    block = cfg.problem_block
    ph = block["phases"]
    base = cfg.base_dir
    try:
        pieces = {}
        for key in ("alpha", "k"):
            pieces[key] = tuple(Poly.parse(c, ("u",)) for c in ph[key])
        phases = PhaseSpec(np.asarray(ph.get("critical_temps", []), float),
                           np.asarray(ph.get("latent_heats", []), float),
                           pieces["alpha"], pieces["k"], float(ph.get("reference_temp", 0.0)))
    except (ExpressionError, InvalidPhaseSpec, ValueError, TypeError) as exc:
        raise ConfigError([f"problem.phases: {exc}"]) from None
    phi = _data(block.get("phi", 0.0), ("x",), base, "problem.phi")
    if block.get("phi_variable", "v") == "u":
        phi_u = phi
        phi = lambda x: kirchhoff_transform(phi_u(x), phases)  # noqa: E731
    return Problem(phases, float(block["T"]), float(block["L"]), phi=phi,
                   f=_data(block.get("f", 0.0), ("x", "t"), base, "problem.f"),
                   p=_data(block.get("p", 0.0), ("t",), base, "problem.p"),
                   gamma=_data(block.get("gamma"), ("t",), base, "problem.gamma"),
                   R=float(block.get("R", math.inf)), bbar=ph.get("bbar"))


def _write_json(path: Path, payload: dict) -> None:
    """Flat JSON with floats printed to 17 significant digits."""
    lines = []
    for key in sorted(payload):
        val = payload[key]
        if isinstance(val, bool) or val is None:
            text = json.dumps(val)
        elif isinstance(val, float):
            text = fmt(val) if math.isfinite(val) else json.dumps(fmt(val))
        elif isinstance(val, (int, str)):
            text = json.dumps(val)
        else:
            text = json.dumps(val)
        lines.append(f"  {json.dumps(key)}: {text}")
    path.write_text("{\n" + ",\n".join(lines) + "\n}\n")


def _save_state(state, out: Path, formats, stem: str = "state") -> None:
    if "csv" in formats:
        state.to_csv(out / f"{stem}.csv")
    if "binary" in formats:
        state.to_binary(out / f"{stem}.bin")


def run_solve(cfg: RunConfig, out: Path) -> int:
    problem = build_problem(cfg)
    dp = discretize(problem, cfg.n, cfg.m, cfg.eps, cfg.solver)
    control = cfg.problem_block.get("control", 0.0)
    gd = qn_map(_data(control, ("t",), cfg.base_dir, "problem.control"), dp.grid)
    state, reports = solve_all(gd, dp.sd, dp.grid, dp.bm, dp.params)
    _save_state(state, out, cfg.formats)
    gd.to_csv(out / "control.csv", dp.grid)
    _write_json(out / "norms.json", {
        "linf": linf_norm(state),
        "energy": energy_norm(state, dp.grid),
        "residual": residual_check(state, dp.sd, gd, dp.grid, dp.bm),
        "iterations": int(sum(r.iterations for r in reports)),
        "control_w21": w21_discrete_norm(gd, dp.grid),
    })
    return EXIT_OK


def run_optimize(cfg: RunConfig, out: Path) -> int:
    problem = build_problem(cfg)
    dp = discretize(problem, cfg.n, cfg.m, cfg.eps, cfg.solver)
    initial = qn_map(_data(cfg.problem_block.get("control", 0.0), ("t",), cfg.base_dir, "problem.control"),
                     dp.grid)
    zero_cost = evaluate_control(np.zeros(dp.grid.n + 1), dp)[0]
    trace = minimize(initial, dp, cfg.optimizer)
    trace.to_csv(out / "trace.csv")
    trace.best.to_csv(out / "control.csv", dp.grid)
    state = evaluate_control(trace.best, dp)[1]
    _save_state(state, out, cfg.formats)
    _write_json(out / "optimize.json", {
        "best_value": trace.best_value,
        "zero_control_value": zero_cost,
        "evaluations": trace.evaluations,
        "stop_reason": trace.stop_reason,
        "control_w21": w21_discrete_norm(trace.best, dp.grid),
    })
    return EXIT_OK


def run_verify(cfg: RunConfig, out: Path, workers: int = 1) -> int:
    ver = cfg.verify_block
    levels = [tuple(lv) for lv in ver.get("levels", [[16, 16], [64, 32], [256, 64]])]
    if ver["benchmark"] == "heat":
        problem, exact = heat_problem(ver.get("T", 0.1), ver.get("L", 1.0), ver.get("amplitude", 1.0))
        report = refinement_study(problem, levels, cfg.solver, exact=exact, workers=workers)
    else:
        try:
            bench = NeumannBenchmark(*(float(ver.get(k, d)) for k, d in (
                ("alpha_l", 1.0), ("k_l", 1.0), ("alpha_s", 1.5), ("k_s", 1.2), ("latent", 2.0),
                ("u_wall", 1.0), ("u_melt", 0.0), ("u_init", -0.5))))
            problem, exact = neumann_setup(bench, ver.get("L", 1.0), ver.get("T", 0.5), ver.get("t0", 0.01))
        except ConfigurationError as exc:
            raise ConfigError([f"verify: {exc}"]) from None
        report = refinement_study(problem, levels, cfg.solver, control=neumann_control(exact), exact=exact,
                                  front_level=0.0, weak=False, workers=workers)
        if max(report.front_error[-1] / report.h[-1], 0.0) > 5.0:
            report_fail = f"front error {report.front_error[-1]:.4g} exceeds 5h"
        else:
            report_fail = None
    report.to_csv(out / "report.csv")
    summary = report.summary()
    (out / "summary.txt").write_text(summary + "\n")
    fails = report.audit()
    if ver["benchmark"] == "neumann" and report_fail:
        fails.append(report_fail)
    if fails:
        print("verification failed: " + "; ".join(fails), file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


def run(cfg: RunConfig, workers: int = 1) -> int:
    out = cfg.out_dir if cfg.out_dir.is_absolute() else cfg.base_dir / cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    try:
        if cfg.mode == "solve":
            return run_solve(cfg, out)
        if cfg.mode == "optimize":
            return run_optimize(cfg, out)
        return run_verify(cfg, out, workers)
    except SolverError as exc:
        _write_json(out / "error.json", {"category": "solver", "step": exc.step,
                                         "last_update": exc.last_update, "message": str(exc)})
        print(f"solver error at step {exc.step}: {exc}", file=sys.stderr)
        return EXIT_SOLVER


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="multistefan", description="Enthalpy-method Stefan solver and flux identification.")
    ap.add_argument("--config", required=True, help="JSON run configuration")
    ap.add_argument("--mode", choices=RUN_MODES, help="override the configured mode")
    ap.add_argument("--out", help="output directory (overrides the config)")
    ap.add_argument("--workers", type=int, default=1, help="threads for independent grid levels")
    ap.add_argument("--seed", type=int, help="optimizer seed (overrides the config)")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = parse_config(args.config, args.mode)
        if args.out:
            cfg.out_dir = Path(args.out).resolve()
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError(["--seed: must be non-negative"])
            cfg.optimizer = OptimizerParams(**{**cfg.optimizer.__dict__, "seed": args.seed})
        if args.workers < 1:
            raise ConfigError(["--workers: must be >= 1"])
        return run(cfg, args.workers)
    except ConfigError as exc:
        print("configuration error:", file=sys.stderr)
        for problem in exc.problems:
            print(f"  {problem}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
