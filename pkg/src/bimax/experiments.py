"""Experiment configs and the run / sweep / stability / gap / bounds commands.

Configs are a single JSON document with three sections (problem, solver,
experiment) plus a root seed.  Unknown fields anywhere are a hard error.
Every field has a default except the problem kind and the experiment mode.
Two presets are available: ``paper-default`` (m1=2000, T=50, K=300, eta
exponential from 1e-3 at rate 0.95) and ``desk`` (m1=200, T=50, K=30, same
eta), applied beneath the user config.

All artifacts embed the fully-resolved config and the root seed; every random
quantity derives from that seed through the stream scheme in ``bimax.core``,
so re-running an artifact's embedded config reproduces its numeric columns
exactly, and sweep cells are independent of execution order (serial and
parallel sweeps emit byte-identical CSV bodies).  Sweep cells share the root
seed, so cells with equal m1 reuse the same datasets (common random numbers
across the grid).
"""

from __future__ import annotations

import copy
import itertools
import json
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional

import numpy as np

from .analysis import estimate_stability, measure_gap, rate_bound_with_branch
from .core import StepSchedule, dataset_seed, run_seed
from .problems import PROBLEM_KINDS, QuadraticBmo, ReweightBmo
from .solvers import DivergenceError, SolverSpec, run

__all__ = ["ConfigError", "load_config", "resolve_config", "build_problem",
           "build_spec", "cmd_run", "cmd_sweep", "cmd_stability", "cmd_bounds",
           "PRESETS"]

SCHEMA_VERSION = "v1"


class ConfigError(ValueError):
    """Malformed experiment config; message names the offending field."""


PRESETS = {
    "paper-default": {
        "solver": {"algorithm": "tsgda1", "T": 50, "K": 300,
                   "eta": {"kind": "exponential", "init": 1e-3, "rate": 0.95}},
        "experiment": {"m1": 2000},
    },
    "desk": {
        "solver": {"algorithm": "tsgda1", "T": 50, "K": 30,
                   "eta": {"kind": "exponential", "init": 1e-3, "rate": 0.95}},
        "experiment": {"m1": 200},
    },
}

_EXP_DEFAULT = {
    "mode": None,
    "m1": 200,
    "m2": None,        # defaults to m1
    "m_test": None,    # defaults to 10 * m1
    "replicates": 20,
    "sweep": {"T": [], "K": [], "Q": [], "m1": [], "eta": []},
    "stability": {"indices": None, "coupling": "coupled"},
    "bounds": {"quantity": "generalization", "constants": {}},
    "out": "out",
}

_SOLVER_DEFAULT = {
    "algorithm": "ssgda",
    "T": 50, "K": 1, "Q": 1,
    "eta": {"kind": "exponential", "init": 1e-3, "rate": 0.95},
    "gamma1": {"kind": "exponential", "init": 1e-3, "rate": 0.95},
    "gamma2": {"kind": "exponential", "init": 1e-3, "rate": 0.95},
    "hypergradient_mode": "direct_partial",
    "sampling": "iid",
    "batch_size_upper": 1,
    "batch_size_lower": 1,
    "seed": None,      # null: derive run seeds from the root seed
    "record_every": 1,
    "init": "zero",
    "init_scale": 1.0,
}

_PROBLEM_KEYS = {
    "quadratic": {"kind", "seed", "d_x", "d_y", "d_z", "coupling", "forcing",
                  "target", "lam", "sigma_upper", "sigma_lower", "noise_kind",
                  "noise_bound_upper", "noise_bound_lower", "radii", "matrices"},
    "reweight": {"kind", "seed", "p", "theta_scale", "sigma_label", "mu", "rho",
                 "nu", "w_target", "radii"},
}

_SCHEDULE_KEYS = {"constant": {"kind", "c"},
                  "inverse_t": {"kind", "c", "L"},
                  "exponential": {"kind", "init", "rate"}}

MODES = ("run", "sweep", "gap", "stability", "bounds")


def _check_keys(section: dict, allowed, path: str):
    unknown = set(section) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown field(s) {sorted(unknown)} in '{path}'")


def _overlay(base: dict, over: dict) -> dict:
    """Section-aware config overlay.

    problem/solver sections and the experiment sub-tables (sweep, stability,
    bounds) merge key-by-key; leaf values (including schedule objects) replace
    wholesale.
    """
    out = copy.deepcopy(base)
    for sec, val in over.items():
        if sec == "experiment" and isinstance(val, dict):
            cur = dict(out.get(sec, {}))
            for k, v in val.items():
                if k in ("sweep", "stability", "bounds") and isinstance(v, dict) \
                        and isinstance(cur.get(k), dict):
                    cur[k] = {**cur[k], **copy.deepcopy(v)}
                else:
                    cur[k] = copy.deepcopy(v)
            out[sec] = cur
        elif sec in ("problem", "solver") and isinstance(val, dict) \
                and isinstance(out.get(sec), dict):
            out[sec] = {**out[sec], **copy.deepcopy(val)}
        else:
            out[sec] = copy.deepcopy(val)
    return out


def load_config(path) -> dict:
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config parse error at line {exc.lineno}, column "
                          f"{exc.colno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    return doc


def resolve_config(doc: dict, preset: Optional[str] = None,
                   seed_override: Optional[int] = None,
                   out_override: Optional[str] = None) -> dict:
    """Apply preset and defaults, validate every field, return the full config."""
    _check_keys(doc, {"problem", "solver", "experiment", "seed"}, "config")
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; available: {sorted(PRESETS)}")
        doc = _overlay(PRESETS[preset], doc)
    doc = _overlay({"solver": _SOLVER_DEFAULT, "experiment": _EXP_DEFAULT}, doc)

    problem = doc.get("problem")
    if not isinstance(problem, dict) or "kind" not in problem:
        raise ConfigError("missing required field 'problem.kind'")
    kind = problem["kind"]
    if kind not in PROBLEM_KINDS:
        raise ConfigError(f"unknown problem kind {kind!r} in 'problem.kind'")
    _check_keys(problem, _PROBLEM_KEYS[kind], "problem")
    problem = {"seed": 11, **problem}

    solver = doc["solver"]
    _check_keys(solver, _SOLVER_DEFAULT, "solver")
    for name in ("eta", "gamma1", "gamma2"):
        sched = solver[name]
        if not isinstance(sched, dict) or "kind" not in sched:
            raise ConfigError(f"'solver.{name}' must be a schedule object with 'kind'")
        if sched["kind"] not in _SCHEDULE_KEYS:
            raise ConfigError(f"unknown schedule kind {sched['kind']!r} in 'solver.{name}'")
        _check_keys(sched, _SCHEDULE_KEYS[sched["kind"]], f"solver.{name}")
    if not isinstance(solver["T"], int) or solver["T"] < 0:
        raise ConfigError("'solver.T' must be an integer >= 0")
    for name in ("K", "Q"):
        if not isinstance(solver[name], int) or solver[name] < 1:
            raise ConfigError(f"'solver.{name}' must be an integer >= 1")

    experiment = doc["experiment"]
    _check_keys(experiment, _EXP_DEFAULT, "experiment")
    mode = experiment["mode"]
    if mode is None:
        raise ConfigError("missing required field 'experiment.mode'")
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r} in 'experiment.mode'; "
                          f"expected one of {MODES}")
    _check_keys(experiment["sweep"], _EXP_DEFAULT["sweep"], "experiment.sweep")
    _check_keys(experiment["stability"], _EXP_DEFAULT["stability"], "experiment.stability")
    _check_keys(experiment["bounds"], _EXP_DEFAULT["bounds"], "experiment.bounds")
    if experiment["m2"] is None:
        experiment["m2"] = experiment["m1"]
    if experiment["m_test"] is None:
        experiment["m_test"] = 10 * experiment["m1"]
    for name in ("m1", "m2", "m_test", "replicates"):
        if not isinstance(experiment[name], int) or experiment[name] < 1:
            raise ConfigError(f"'experiment.{name}' must be an integer >= 1")
    if experiment["stability"]["coupling"] not in ("coupled", "uncoupled"):
        raise ConfigError("'experiment.stability.coupling' must be "
                          "'coupled' or 'uncoupled'")
    indices = experiment["stability"]["indices"]
    if isinstance(indices, list) and not indices:
        raise ConfigError("'experiment.stability.indices' must be nonempty when a list")

    resolved = {"problem": problem, "solver": solver, "experiment": experiment,
                "seed": int(doc.get("seed", 0)), "preset": preset}
    if seed_override is not None:
        resolved["seed"] = int(seed_override)
    if out_override is not None:
        resolved["experiment"]["out"] = str(out_override)
    return resolved


def _schedule_from(cfg: dict) -> StepSchedule:
    kind = cfg["kind"]
    if kind == "constant":
        return StepSchedule.constant(cfg["c"])
    if kind == "inverse_t":
        return StepSchedule.inverse_t(cfg["c"], cfg["L"])
    return StepSchedule.exponential(cfg["init"], cfg["rate"])


def build_problem(problem_cfg: dict):
    cfg = dict(problem_cfg)
    kind = cfg.pop("kind")
    if kind == "quadratic":
        matrices = cfg.pop("matrices", None)
        if cfg.get("radii") is not None:
            cfg["radii"] = tuple(cfg["radii"])
        if matrices is not None:
            cfg.pop("seed", None)
            for dim in ("d_x", "d_y", "d_z"):
                cfg.pop(dim, None)
            mats = {k: np.asarray(v, dtype=np.float64) for k, v in matrices.items()}
            return QuadraticBmo(**mats, **cfg)
        return QuadraticBmo.random(**cfg)
    if cfg.get("radii") is not None:
        cfg["radii"] = tuple(cfg["radii"])
    return ReweightBmo(**cfg)


def build_spec(solver_cfg: dict, **overrides) -> SolverSpec:
    cfg = dict(solver_cfg)
    cfg_seed = cfg.pop("seed", None)
    cfg["eta"] = _schedule_from(cfg["eta"])
    cfg["gamma1"] = _schedule_from(cfg["gamma1"])
    cfg["gamma2"] = _schedule_from(cfg["gamma2"])
    cfg.update(overrides)
    cfg.setdefault("seed", 0 if cfg_seed is None else int(cfg_seed))
    try:
        return SolverSpec(**cfg)
    except ValueError as exc:
        raise ConfigError(f"invalid solver section: {exc}") from exc


# ---------------------------------------------------------------------------
# Artifact helpers
# ---------------------------------------------------------------------------


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def write_csv(path: Path, schema: str, config: dict, header: list[str],
              rows: list[list]) -> str:
    lines = [f"# schema: bimax.{schema}.{SCHEMA_VERSION}",
             f"# config: {json.dumps(config, sort_keys=True)}",
             ",".join(header)]
    lines += [",".join(_fmt(v) for v in row) for row in rows]
    body = "\n".join(lines) + "\n"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(body)
    return body


def write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------


def cmd_run(config: dict, out_dir: Optional[Path] = None) -> tuple[int, dict]:
    """Execute one solver run and write out/run.json.  Returns (exit_code, artifact)."""
    exp = config["experiment"]
    out = Path(out_dir or exp["out"])
    problem = build_problem(config["problem"])
    data = problem.make_dataset(exp["m1"], exp["m2"], exp["m_test"],
                                dataset_seed(config["seed"], 0))
    seed = config["solver"]["seed"]
    spec = build_spec(config["solver"],
                      seed=run_seed(config["seed"], 0) if seed is None else seed)
    artifact = {"config": config, "root_seed": config["seed"],
                "problem": problem.describe(), "solver": spec.describe()}
    started = time.perf_counter()
    code = 0
    try:
        rec = run(problem, data, spec)
        artifact.update(
            backend=rec.backend,
            losses=[float(v) for v in rec.losses],
            final={"x": rec.final.x.tolist(), "y": rec.final.y.tolist(),
                   "z": rec.final.z.tolist(),
                   "x_norm": float(np.linalg.norm(rec.final.x)),
                   "y_norm": float(np.linalg.norm(rec.final.y)),
                   "z_norm": float(np.linalg.norm(rec.final.z))})
    except DivergenceError as exc:
        artifact["failure"] = {"error": str(exc), "diverged_at": exc.t}
        code = 3
    wall = time.perf_counter() - started
    payload = dict(artifact)
    payload["wall_time_s"] = wall
    write_json(out / "run.json", payload)
    return code, artifact


# ---------------------------------------------------------------------------
# sweep / gap
# ---------------------------------------------------------------------------


def _sweep_cells(config: dict) -> list[dict]:
    """Cartesian product of the swept lists, in deterministic lexicographic order."""
    exp = config["experiment"]
    sw = exp["sweep"]
    ts = sw["T"] or [config["solver"]["T"]]
    ks = sw["K"] or [config["solver"]["K"]]
    qs = sw["Q"] or [config["solver"]["Q"]]
    m1s = sw["m1"] or [exp["m1"]]
    etas = sw["eta"] or [config["solver"]["eta"]]
    cells = [{"T": t, "K": k, "Q": q, "m1": m1, "eta": eta}
             for t, k, q, m1, eta in itertools.product(ts, ks, qs, m1s, etas)]
    cells.sort(key=lambda c: (c["T"], c["K"], c["Q"], c["m1"],
                              _schedule_from(c["eta"]).describe()))
    return cells


def _gap_cell_row(config: dict, cell: dict) -> list:
    exp = config["experiment"]
    problem = build_problem(config["problem"])
    spec = build_spec(config["solver"], T=cell["T"], K=cell["K"], Q=cell["Q"],
                      eta=_schedule_from(cell["eta"]))
    eta_desc = spec.eta.describe()
    base = [spec.algorithm, cell["T"], cell["K"], cell["Q"], cell["m1"], eta_desc,
            exp["replicates"]]
    m2 = exp["m2"] if exp["m2"] != exp["m1"] else cell["m1"]
    m_test = exp["m_test"] if exp["m_test"] != 10 * exp["m1"] else 10 * cell["m1"]
    try:
        rep = measure_gap(problem, spec, m1=cell["m1"], m2=m2,
                          replicates=exp["replicates"], seed=config["seed"],
                          m_test=m_test)
    except RuntimeError as exc:
        return base + ["", "", "", "", "", "", f"all:{exc}"]
    return base + [rep.empirical_risk, rep.population_risk_est, rep.gap,
                   rep.gap_stderr, rep.optimization_error, rep.excess_risk,
                   rep.failures]


_GAP_HEADER = ["algorithm", "T", "K", "Q", "m1", "eta_desc", "replicates",
               "empirical_risk", "population_risk_est", "gap", "gap_stderr",
               "optimization_error", "excess_risk", "failures"]


def _stability_cell_row(config: dict, cell: dict) -> list:
    exp = config["experiment"]
    st = exp["stability"]
    problem = build_problem(config["problem"])
    spec = build_spec(config["solver"], T=cell["T"], K=cell["K"], Q=cell["Q"],
                      eta=_schedule_from(cell["eta"]))
    base = [spec.algorithm, cell["T"], cell["K"], cell["Q"], cell["m1"],
            spec.eta.describe(), st["coupling"]]
    m2 = exp["m2"] if exp["m2"] != exp["m1"] else cell["m1"]
    try:
        est = estimate_stability(problem, spec, m1=cell["m1"], m2=m2,
                                 indices=st["indices"],
                                 replicates=exp["replicates"],
                                 coupling=st["coupling"], seed=config["seed"])
    except RuntimeError as exc:
        return base + ["", "", "", "", "", f"all:{exc}"]
    return base + [len(est.per_index), est.replicates, est.beta_l1,
                   est.beta_l1_stderr, est.beta_l2_sq, est.failures]


_STABILITY_HEADER = ["algorithm", "T", "K", "Q", "m1", "eta_desc", "coupling",
                     "indices_used", "replicates", "beta_l1", "beta_l1_stderr",
                     "beta_l2_sq", "failures"]


def _pool_rows(config: dict, cells: list[dict], worker, workers: int) -> list[list]:
    if workers <= 1 or len(cells) <= 1:
        return [worker(config, cell) for cell in cells]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(worker, config, cell) for cell in cells]
        return [f.result() for f in futures]  # original submission order


def cmd_sweep(config: dict, out_dir: Optional[Path] = None,
              workers: int = 1) -> tuple[int, str]:
    """Gap measurement over the swept grid; one CSV row per cell."""
    exp = config["experiment"]
    out = Path(out_dir or exp["out"])
    cells = _sweep_cells(config)
    rows = _pool_rows(config, cells, _gap_cell_row, workers)
    body = write_csv(out / "sweep.csv", "sweep", config, _GAP_HEADER, rows)
    return 0, body


def cmd_stability(config: dict, out_dir: Optional[Path] = None,
                  workers: int = 1) -> tuple[int, str]:
    exp = config["experiment"]
    out = Path(out_dir or exp["out"])
    cells = _sweep_cells(config)
    rows = _pool_rows(config, cells, _stability_cell_row, workers)
    body = write_csv(out / "stability.csv", "stability", config,
                     _STABILITY_HEADER, rows)
    return 0, body


# ---------------------------------------------------------------------------
# bounds
# ---------------------------------------------------------------------------

_BOUNDS_HEADER = ["algorithm", "quantity", "branch", "T", "K", "Q", "m1",
                  "constants", "bound_value", "error"]


def cmd_bounds(config: dict, out_dir: Optional[Path] = None) -> tuple[int, str]:
    """Evaluate the theoretical rate shapes over the requested grid (no randomness)."""
    exp = config["experiment"]
    out = Path(out_dir or exp["out"])
    quantity = exp["bounds"]["quantity"]
    algorithm = config["solver"]["algorithm"]
    const_lists = {k: (v if isinstance(v, list) else [v])
                   for k, v in exp["bounds"]["constants"].items()}
    names = sorted(const_lists)
    combos = [dict(zip(names, vals))
              for vals in itertools.product(*(const_lists[n] for n in names))] or [{}]

    rows = []
    for cell in _sweep_cells(config):
        for combo in combos:
            desc = ";".join(f"{k}={_fmt(float(v))}" for k, v in sorted(combo.items()))
            row = [algorithm, quantity, "", cell["T"], cell["K"], cell["Q"],
                   cell["m1"], desc, "", ""]
            try:
                value, branch = rate_bound_with_branch(
                    algorithm, quantity, T=cell["T"], K=cell["K"], Q=cell["Q"],
                    m1=cell["m1"], step_constants=combo)
                row[2], row[8] = branch, value
            except ValueError as exc:
                row[9] = str(exc)
            rows.append(row)
    body = write_csv(out / "bounds.csv", "bounds", config, _BOUNDS_HEADER, rows)
    return 0, body
