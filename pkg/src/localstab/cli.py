"""Command-line experiment runner.

Configs are YAML (JSON is valid YAML) with the keys::

    model: jackson | fcfs | csma | polling | lemma1 | cftp | counterexample
    seed: 1
    replications: 1000
    horizon: 1000
    output: results/
    params: {...}          # model-specific block

``run`` writes ``summary.json``, CSV tables and ``manifest.json``.  Exit
codes: 0 when every verification passes, 2 when one fails, 1 for usage or
config errors (nothing is written then).
"""

from __future__ import annotations

import argparse
import copy
import datetime as _dt
import hashlib
import json
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

import numpy as np
import yaml

from . import __version__
from ._kernels import BACKEND
from .core import RandomDriver, make_driver, resolve_workers
from .stats import decode_state, to_json, write_csv

EXIT_OK, EXIT_USAGE, EXIT_FAIL = 0, 1, 2


class ConfigError(ValueError):
    pass


@dataclass
class Outcome:
    summary: dict
    tables: dict  # name -> (header, rows)
    passed: bool


# ------------------------------------------------------------------ models

def _need(params: dict, *keys):
    missing = [k for k in keys if k not in params]
    if missing:
        raise ConfigError(f"missing parameter(s): {', '.join(missing)}")


def _jackson_build(cfg):
    from .jackson import JacksonSpec
    p = cfg["params"]
    _need(p, "nu", "mu")
    return JacksonSpec.from_dict(p)


def _jackson_run(cfg, driver, workers) -> Outcome:
    from .jackson import verify_local_stability
    spec = _jackson_build(cfg)
    p = cfg["params"]
    rep = verify_local_stability(
        spec, float(cfg["horizon"]), int(cfg["replications"]), driver,
        large_initial=int(p.get("large_initial", 100)), tv_tol=float(p.get("tv_tol", 0.05)),
        growth_tol=float(p.get("growth_tol", 0.05)), critical=tuple(p.get("critical", ())),
        workers=workers)
    s = rep.to_dict()
    rows = [(i, rep.lam[i], spec.mu[i], rep.lam[i] / spec.mu[i], rep.classes[i]) for i in range(spec.I)]
    return Outcome(s, {"traffic": (["node", "lambda", "mu", "load", "class"], rows)}, rep.passed)


def _fcfs_build(cfg):
    from .fcfs import MatchingSpec
    p = cfg["params"]
    _need(p, "lambda", "mu", "compat")
    spec = MatchingSpec.from_adjacency(p["lambda"], p["mu"], p["compat"])
    if "load" in p:
        spec = spec.scaled(float(p["load"]))
    return spec


def _fcfs_run(cfg, driver, workers) -> Outcome:
    from . import fcfs
    spec = _fcfs_build(cfg)
    p = cfg["params"]
    erg = fcfs.check_ergodic(spec)
    crp = fcfs.check_crp(spec)
    s: dict[str, Any] = dict(
        types=list(spec.type_names), servers=list(spec.server_names),
        total_lambda=spec.total_lam, total_mu=spec.total_mu,
        ergodic=dict(holds=erg.holds, witness=erg.witness, families=list(erg.families)),
        crp=dict(holds=crp.holds, witness=crp.witness, families=list(crp.families)),
    )
    tables = {}
    n_events = int(cfg["horizon"])
    passed = True
    if not crp.holds:
        dec = fcfs.decompose(spec)
        s["decomposition"] = dict(blocks=dec.named(spec), ratios=dec.ratios, ties=dec.ties)
    if erg.holds:
        traj = fcfs.simulate_fcfs_alis(spec, n_events, driver)
        dist = fcfs.state_distribution(traj, float(p.get("burn_in_fraction", 0.1)))
        chk = fcfs.weight_ratio_check(spec, dist, int(p.get("top", 8)), float(p.get("ratio_tol", 0.05)))
        s["weight_ratios"] = chk
        passed = chk["passed"]
        probs = dist.probabilities()
        rows = sorted(((fcfs.FcfsState.decode(decode_state(k)).label(spec), v) for k, v in probs.items()),
                      key=lambda r: -r[1])
        tables["state_frequencies"] = (["state", "frequency"], rows)
    elif spec.total_lam > spec.total_mu and crp.holds and spec.J >= 2:
        rep = fcfs.verify_overload(spec, n_events, int(cfg["replications"]),
                                   int(p.get("replication_events", 2000)), driver, workers=workers)
        s["overload"] = rep
        passed = rep["passed"]
        law = fcfs.limit_law(spec)
        rows = [("-".join(spec.server_names[x] for x in perm), "|".join(map(str, gaps)), pr)
                for perm, gaps, pr in law.table(int(p.get("gap_cap", fcfs.GAP_CAP)))]
        tables["limit_law"] = (["permutation", "gaps", "probability"], rows)
    else:
        traj = fcfs.simulate_fcfs_alis(spec, n_events, driver)
        w = fcfs.waiting_by_type(spec, traj.final)
        T = float(traj.times[-1])
        div = [bool(w[c] / T > 0.05 * spec.lam[c]) for c in range(spec.I)]
        s["waiting_per_time"] = {spec.type_names[c]: float(w[c] / T) for c in range(spec.I)}
        s["divergent"] = {spec.type_names[c]: div[c] for c in range(spec.I)}
        if p.get("thresholds"):
            s["threshold_estimates"] = fcfs.estimate_thresholds(spec, n_events, driver.child(99))
    s["status"] = "divergent" if any(s.get("divergent", {}).values()) or not erg.holds else "stable"
    return Outcome(s, tables, bool(passed))


def _csma_build(cfg):
    from .csma import CsmaSpec
    p = cfg["params"]
    _need(p, "n", "k")
    inf = bool(p.get("infinite_supply", False))
    return CsmaSpec(int(p["n"]), int(p["k"]), float(p.get("lam", 0.0)), inf, int(cfg["horizon"]))


def _csma_run(cfg, driver, workers) -> Outcome:
    from .csma import simulate_csma
    spec = _csma_build(cfg)
    p = cfg["params"]
    res = simulate_csma(spec, driver)
    s = res.summary()
    passed = True
    if "expected_growing" in p:
        g = int(p["expected_growing"])
        passed = all(res.growing()[:g]) and all(res.bounded()[g:])
        s["expected_growing"] = g
    s["saturated"] = [v + 1 for v, x in enumerate(res.growing()) if x]
    step = int(p.get("decimate", 1000))
    q = res.trajectory.states
    rows = [[t] + q[t].tolist() for t in range(0, len(q), step)]
    header = ["slot"] + [f"node_{v + 1}" for v in range(spec.n)]
    return Outcome(s, {"queues": (header, rows)}, bool(passed))


def _polling_build(cfg):
    from .polling import PollingSpec
    p = cfg["params"]
    _need(p, "rates", "walk_times", "policies")
    return PollingSpec(tuple(p["rates"]), tuple(p["walk_times"]), tuple(p["policies"]))


def _polling_run(cfg, driver, workers) -> Outcome:
    from .polling import simulate_polling
    spec = _polling_build(cfg)
    p = cfg["params"]
    res = simulate_polling(spec, int(cfg["horizon"]), driver)
    s = res.summary()
    passed = True
    if "expected" in p:
        passed = list(p["expected"]) == s["verdicts"]
        s["expected"] = list(p["expected"])
    step = int(p.get("decimate", 1))
    q = res.trajectory.states
    rows = [[v, res.epochs[v]] + q[v].tolist() for v in range(0, len(q), step)]
    header = ["visit", "time"] + [f"station_{i + 1}" for i in range(spec.K)]
    return Outcome(s, {"visits": (header, rows)}, bool(passed))


def _lemma1_build(cfg):
    from .coupling import ModulatedModel, benchmark_model, reflected_walk
    p = cfg["params"]
    if "kernel" not in p:
        return benchmark_model() if "x2_up" not in p else ModulatedModel(
            benchmark_model().x1_kernel, np.eye(3), reflected_walk(float(p["x2_up"])))
    K = np.asarray(p["kernel"], dtype=float)
    b = p.get("boundary", "freeze")
    B = np.eye(len(K)) if b == "freeze" else (K if b == "same" else np.asarray(b, dtype=float))
    return ModulatedModel(K, B, reflected_walk(float(p.get("x2_up", 0.7))))


def _lemma1_run(cfg, driver, workers) -> Outcome:
    from .coupling import verify_lemma1
    model = _lemma1_build(cfg)
    p = cfg["params"]
    starts = [tuple(int(v) for v in s) for s in p.get("starts", [[0, 0], [0, 1000]])]
    rep = verify_lemma1(model, int(cfg["horizon"]), int(cfg["replications"]), driver,
                        starts=starts, eps=float(p.get("eps", 0.02)))
    rows = []
    for st in rep["starts"]:
        for n, tv in zip(rep["checkpoints"], st["tv"]):
            rows.append((st["x1"], st["x2"], n, tv))
    return Outcome(rep, {"tv_curve": (["x1_start", "x2_start", "n", "tv"], rows)}, rep["passed"])


def _cftp_build(cfg):
    from .coupling import birth_death_model
    p = cfg["params"]
    return birth_death_model(int(p.get("size", 11)), float(p.get("up", 0.3)), float(p.get("down", 0.4)),
                             float(p.get("x2_up", 0.7)))


def _cftp_run(cfg, driver, workers) -> Outcome:
    from .coupling import verify_cftp
    model = _cftp_build(cfg)
    rep = verify_cftp(model, int(cfg["replications"]), driver,
                      threshold=float(cfg["params"].get("threshold", 0.01)))
    rows = [(x, c, c / sum(rep["histogram"]), pi) for x, (c, pi) in enumerate(zip(rep["histogram"], rep["pi"]))]
    return Outcome(rep, {"histogram": (["x1", "count", "frequency", "pi"], rows)}, rep["passed"])


def _counterexample_build(cfg):
    a = float(cfg["params"].get("alpha", 0.3))
    if not 0.0 < a < 0.5:
        raise ConfigError("alpha must lie in (0, 0.5)")
    return a


def _counterexample_run(cfg, driver, workers) -> Outcome:
    from .coupling import erickson_estimate, run_counterexample
    alpha = _counterexample_build(cfg)
    p = cfg["params"]
    h = int(cfg["horizon"])
    rep = run_counterexample(alpha, h, int(cfg["replications"]), driver.child(0),
                             horizons=p.get("horizons"), workers=workers)
    if p.get("excursions"):
        rep["erickson"] = erickson_estimate(alpha, int(p["excursions"]), driver.child(1))
    hs = sorted(rep["hit_fraction"], key=int)
    plateau = abs(rep["hit_fraction"][hs[-1]] - rep["hit_fraction"][hs[-2]]) if len(hs) > 1 else None
    rep["plateau_change"] = plateau
    tol = float(p.get("tail_tol", 0.1))
    checks = [abs(rep["tail_exponent"] - 0.5) <= tol]
    if plateau is not None:
        checks.append(plateau < float(p.get("plateau_tol", 0.01)))
    rep["passed"] = all(checks)
    rows = [(int(k), rep["hit_fraction"][k], rep["x1_median"][k]) for k in hs]
    return Outcome(rep, {"hit_fraction": (["horizon", "hit_fraction", "x1_median"], rows)}, rep["passed"])


@dataclass(frozen=True)
class ModelEntry:
    description: str
    build: Callable
    run: Callable
    sweep_flag: Callable | None = None


def _fcfs_flag(s):
    return s.get("status", "")


def _csma_flag(s):
    return "saturated:" + "|".join(map(str, s.get("saturated", []))) if s.get("saturated") else "stable"


MODELS = {
    "jackson": ModelEntry("open Jackson network: traffic solve, growth and product-form checks",
                          _jackson_build, _jackson_run),
    "fcfs": ModelEntry("skill-based FCFS-ALIS queue: conditions, stationary/limit laws, simulation",
                       _fcfs_build, _fcfs_run, _fcfs_flag),
    "csma": ModelEntry("slotted CSMA line network: saturation pattern and throughput",
                       _csma_build, _csma_run, _csma_flag),
    "polling": ModelEntry("cyclic polling: per-station stability diagnosis", _polling_build, _polling_run),
    "lemma1": ModelEntry("modulated chain: TV convergence of X1 to the censored stationary law",
                         _lemma1_build, _lemma1_run),
    "cftp": ModelEntry("monotone backward coupling: exact samples vs linear-algebra law",
                       _cftp_build, _cftp_run),
    "counterexample": ModelEntry("heavy-tailed modulated walk: hitting plateau and return-time tail",
                                 _counterexample_build, _counterexample_run),
}


# ------------------------------------------------------------------ config

def load_config(path) -> dict:
    try:
        with open(path) as fh:
            cfg = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a mapping")
    return cfg


def resolve_config(cfg: dict, seed=None, replications=None, out=None) -> dict:
    cfg = copy.deepcopy(cfg)
    if seed is not None:
        cfg["seed"] = seed
    if replications is not None:
        cfg["replications"] = replications
    if out is not None:
        cfg["output"] = out
    model = cfg.get("model")
    if model not in MODELS:
        raise ConfigError(f"unknown model {model!r}; choose from {', '.join(MODELS)}")
    cfg.setdefault("params", {})
    if not isinstance(cfg["params"], dict):
        raise ConfigError("params must be a mapping")
    cfg.setdefault("seed", 0)
    cfg.setdefault("replications", 1)
    cfg.setdefault("output", "results")
    if "horizon" not in cfg:
        raise ConfigError("missing horizon")
    try:
        cfg["seed"] = int(cfg["seed"])
        cfg["replications"] = int(cfg["replications"])
        h = float(cfg["horizon"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad numeric field: {exc}") from exc
    if cfg["seed"] < 0:
        raise ConfigError("seed must be non-negative")
    if cfg["replications"] < 1 or h <= 0:
        raise ConfigError("replications and horizon must be positive")
    try:
        MODELS[model].build(cfg)
    except ConfigError:
        raise
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(f"invalid {model} parameters: {exc}") from exc
    return cfg


def config_hash(cfg: dict) -> str:
    text = json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(text.encode()).hexdigest()


def _manifest(cfg: dict, files: list[str]) -> dict:
    return dict(seed=cfg["seed"], config_sha256=config_hash(cfg), version=__version__, backend=BACKEND,
                config=cfg, files=sorted(files),
                timestamp=_dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"))


def execute(cfg: dict, driver: RandomDriver | None = None, workers: int = 1) -> Outcome:
    driver = driver or make_driver(cfg["seed"])
    return MODELS[cfg["model"]].run(cfg, driver, workers)


def _write(out: Path, cfg: dict, outcome: Outcome) -> list[str]:
    out.mkdir(parents=True, exist_ok=True)
    files = ["summary.json"]
    summary = dict(model=cfg["model"], seed=cfg["seed"], passed=outcome.passed, results=outcome.summary)
    to_json(summary, out / "summary.json")
    for name, (header, rows) in outcome.tables.items():
        write_csv(out / f"{name}.csv", header, rows)
        files.append(f"{name}.csv")
    return files


# ----------------------------------------------------------------- commands

def cmd_run(args) -> int:
    cfg = resolve_config(load_config(args.config), args.seed, args.replications, args.out)
    workers = resolve_workers(args.workers if args.workers is not None else cfg.get("workers"))
    outcome = execute(cfg, workers=workers)
    out = Path(cfg["output"])
    files = _write(out, cfg, outcome)
    to_json(_manifest(cfg, files + ["manifest.json"]), out / "manifest.json")
    print(f"{cfg['model']}: {'PASS' if outcome.passed else 'FAIL'} -> {out}")
    return EXIT_OK if outcome.passed else EXIT_FAIL


def _parse_grid(text) -> list[float]:
    if text is None:
        return []
    if isinstance(text, (list, tuple)):
        return [float(x) for x in text]
    parts = [t for t in str(text).replace(" ", "").split(",") if t]
    try:
        return [float(t) for t in parts]
    except ValueError as exc:
        raise ConfigError(f"bad grid value: {exc}") from exc


def _set_param(cfg: dict, name: str, value):
    if name in ("horizon", "replications", "seed"):
        cfg[name] = value
        return
    target = cfg["params"]
    keys = name.split(".")
    try:
        for k in keys[:-1]:
            target = target[int(k)] if isinstance(target, list) else target.setdefault(k, {})
        if isinstance(target, list):
            target[int(keys[-1])] = value
        else:
            target[keys[-1]] = value
    except (ValueError, IndexError, TypeError, AttributeError) as exc:
        raise ConfigError(f"cannot set parameter {name!r}: {exc}") from exc


def _flat(prefix: str, obj, out: dict):
    if isinstance(obj, dict):
        for k in sorted(obj, key=str):
            _flat(f"{prefix}{k}_", obj[k], out)
    elif isinstance(obj, (list, tuple)) and all(isinstance(v, (int, float, bool, np.integer, np.floating)) for v in obj):
        for i, v in enumerate(obj):
            out[f"{prefix}{i + 1}"] = v
    elif isinstance(obj, (int, float, str, bool, np.integer, np.floating)):
        out[prefix.rstrip("_")] = obj


def cmd_sweep(args) -> int:
    raw = load_config(args.config)
    sweep = raw.pop("sweep", {}) or {}
    param = args.param or sweep.get("parameter")
    grid = _parse_grid(args.grid if args.grid is not None else sweep.get("grid"))
    if not param:
        raise ConfigError("sweep needs a parameter")
    if not grid:
        raise ConfigError("sweep grid is empty")
    base = resolve_config(raw, args.seed, args.replications, args.out)
    workers = resolve_workers(args.workers if args.workers is not None else base.get("workers"))
    cfgs = []
    for x in grid:
        c = copy.deepcopy(base)
        _set_param(c, param, x)
        cfgs.append(resolve_config(c))
    root = make_driver(base["seed"])
    entry = MODELS[base["model"]]
    rows, all_pass = [], True
    metric_rows = []
    for i, (x, c) in enumerate(zip(grid, cfgs)):
        oc = execute(c, root.child(i), workers)
        flat: dict = {}
        keep = {k: v for k, v in oc.summary.items()
                if k in ("growth_rates", "throughput", "max_queue", "saturated", "status", "final_tv",
                         "tail_exponent", "total_lambda", "verdicts", "passed")}
        _flat("", keep, flat)
        flag = entry.sweep_flag(oc.summary) if entry.sweep_flag else ("pass" if oc.passed else "fail")
        metric_rows.append((x, flag, oc.passed, flat))
        all_pass &= oc.passed
    cols = sorted({k for *_, f in metric_rows for k in f})
    for x, flag, ok, flat in metric_rows:
        rows.append([x, flag, ok] + [flat.get(k, "") for k in cols])
    out = Path(base["output"])
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "sweep.csv", [param.replace(".", "_"), "flag", "passed"] + cols, rows)
    summary = dict(model=base["model"], seed=base["seed"], parameter=param, grid=grid,
                   flags=[r[1] for r in rows], passed=[r[2] for r in rows])
    to_json(summary, out / "summary.json")
    man = _manifest(base, ["sweep.csv", "summary.json", "manifest.json"])
    man["sweep"] = dict(parameter=param, grid=grid)
    to_json(man, out / "manifest.json")
    print(f"{base['model']} sweep over {param}: {len(grid)} rows -> {out / 'sweep.csv'}")
    return EXIT_OK


def cmd_list(args) -> int:
    for name, entry in MODELS.items():
        print(f"{name:15s} {entry.description}")
    return EXIT_OK


def cmd_validate(args) -> int:
    cfg = resolve_config(load_config(args.config), args.seed, args.replications, args.out)
    print(f"config ok: model={cfg['model']} sha256={config_hash(cfg)[:16]}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="YAML or JSON experiment config")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--replications", type=int, help="override the replication count")
    common.add_argument("--out", help="output directory")
    common.add_argument("--workers", type=int,
                        help="worker processes (default: $LOCALSTAB_WORKERS or 1)")
    ap = argparse.ArgumentParser(prog="localstab", description=__doc__.split("\n")[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__} ({BACKEND})")
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", parents=[common], help="run one experiment")
    p.set_defaults(fn=cmd_run)
    p = sub.add_parser("sweep", parents=[common], help="run a parameter grid")
    p.add_argument("--param", help="parameter name (dotted path inside params)")
    p.add_argument("--grid", help="comma-separated values")
    p.set_defaults(fn=cmd_sweep)
    p = sub.add_parser("list-models", help="list available models")
    p.set_defaults(fn=cmd_list)
    p = sub.add_parser("validate", parents=[common], help="check a config without running it")
    p.set_defaults(fn=cmd_validate)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
