"""Command-line driver: configuration, orchestration and report files.

Usage::

    kamtori run-kam --config run.yaml --out results/
    kamtori sieve actions|steps|gamma-sweep --config sieve.yaml --out results/
    kamtori order euler|midpoint|step-pairs --config order.yaml --out results/
    kamtori models list

Exit codes: 0 success, 1 a run failed, 2 the configuration is invalid (no
files are written in that case).
"""
from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import os
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .errors import KamError, SkippedNotAdmissible
from .models import builtin_models, model_from_config

SCHEMA = "kamtori-report/1"
SCHEMES = ("euler", "euler_gf", "midpoint", "flow")

log = logging.getLogger("kamtori")


class ConfigError(Exception):
    def __init__(self, field, message):
        super().__init__(f"config field '{field}': {message}")
        self.field = field


DEFAULTS = {
    "model": "twist1",
    "mode": "kolmogorov",
    "eps": 1e-3,
    "t": [0.1],
    "xi": [[0.6180339887498949]],
    "scheme": "euler_gf",
    "adapter_degree": 2,
    "diophantine": {"gamma": 1e-2, "tau": 3.0, "Kmax": None, "nbar": 0},
    "schedule": {"s0": 1.0, "r0": 0.1, "K0": 8, "K_cap": 32, "v_max": 12, "target": 1e-11,
                 "eta_init": 0.05, "eta_floor": 0.05, "fit_degree": 2},
    "sieve": {"cells": None, "domain": None, "gammas": [0.1 * 2.0 ** -j for j in range(6)],
              "xi": None, "delta": 1.0, "resolution": 10000},
    "order": {"t": [0.2, 0.1, 0.05, 0.025], "pairs": [[0.2, 0.1], [0.1, 0.05]],
              "schemes": ["euler", "midpoint"]},
}


def _merge(base, override, path=""):
    out = copy.deepcopy(base)
    for key, value in (override or {}).items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(where, "unknown field")
        if isinstance(base[key], dict) and value is not None:
            if not isinstance(value, dict):
                raise ConfigError(where, "expected a mapping")
            out[key] = _merge(base[key], value, where + ".")
        else:
            out[key] = value
    return out


def _positive(value, field, allow_zero=False):
    try:
        x = float(value)
    except (TypeError, ValueError):
        raise ConfigError(field, f"expected a number, got {value!r}") from None
    if not np.isfinite(x) or x < 0 or (x == 0 and not allow_zero):
        raise ConfigError(field, f"must be {'non-negative' if allow_zero else 'positive'}, got {value!r}")
    return x


def _int(value, field, minimum=1):
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < minimum:
        raise ConfigError(field, f"expected an integer >= {minimum}, got {value!r}")
    return int(value)


def resolve_config(raw: dict, command: str) -> dict:
    """Merge defaults, validate every field used by ``command`` and return the resolved config."""
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "expected a mapping at the top level")
    cfg = _merge(DEFAULTS, raw)
    try:
        model = model_from_config(cfg["model"])
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError("model", str(exc)) from None
    cfg["model_resolved"] = model.to_dict()
    n = model.n

    if cfg["mode"] not in ("kolmogorov", "ruessmann"):
        raise ConfigError("mode", "expected 'kolmogorov' or 'ruessmann'")
    cfg["eps"] = _positive(cfg["eps"], "eps", allow_zero=True)
    if cfg["scheme"] not in SCHEMES:
        raise ConfigError("scheme", f"expected one of {SCHEMES}")
    cfg["adapter_degree"] = _int(cfg["adapter_degree"], "adapter_degree", 1)

    ts = cfg["t"] if isinstance(cfg["t"], list) else [cfg["t"]]
    if not ts:
        raise ConfigError("t", "the step list is empty")
    cfg["t"] = [_positive(x, "t") for x in ts]

    xis = cfg["xi"] if isinstance(cfg["xi"], list) else [cfg["xi"]]
    if not xis:
        raise ConfigError("xi", "the action list is empty")
    resolved = []
    for x in xis:
        arr = np.atleast_1d(np.asarray(x, dtype=float)) if not isinstance(x, str) else None
        if arr is None or arr.size != n:
            raise ConfigError("xi", f"each action needs {n} component(s), got {x!r}")
        if not np.all(model.contains(arr)):
            raise ConfigError("xi", f"action {arr.tolist()} lies outside V={model.action_domain.tolist()}")
        resolved.append(arr.tolist())
    cfg["xi"] = resolved

    dio = cfg["diophantine"]
    dio["gamma"] = _positive(dio["gamma"], "diophantine.gamma")
    if dio["gamma"] >= 1:
        raise ConfigError("diophantine.gamma", "must be below 1")
    dio["tau"] = _positive(dio["tau"], "diophantine.tau")
    dio["nbar"] = _int(dio["nbar"], "diophantine.nbar", 0)
    nbar = dio["nbar"] if cfg["mode"] == "ruessmann" else 0
    need = (n + 2) * (nbar + 1)
    if dio["tau"] < need:
        raise ConfigError("diophantine.tau", f"must be at least {need} for n={n} in {cfg['mode']} mode")
    dio["Kmax"] = (100 if n == 1 else 30) if dio["Kmax"] is None else _int(dio["Kmax"], "diophantine.Kmax")

    sch = cfg["schedule"]
    for key in ("s0", "r0", "target", "eta_init", "eta_floor"):
        sch[key] = _positive(sch[key], f"schedule.{key}")
    for key in ("eta_init", "eta_floor"):
        if sch[key] >= 1:
            raise ConfigError(f"schedule.{key}", "must be below 1")
    for key in ("K0", "K_cap", "v_max"):
        sch[key] = _int(sch[key], f"schedule.{key}", 1)
    sch["fit_degree"] = _int(sch["fit_degree"], "schedule.fit_degree", 1)

    sv = cfg["sieve"]
    if command.startswith("sieve"):
        gammas = sv["gammas"]
        if not isinstance(gammas, list) or not gammas:
            raise ConfigError("sieve.gammas", "the gamma list is empty")
        sv["gammas"] = [_positive(g, "sieve.gammas") for g in gammas]
        if sv["cells"] is not None:
            sv["cells"] = _int(sv["cells"], "sieve.cells", 1000 if n == 1 else 100)
        if sv["domain"] is not None:
            dom = np.asarray(sv["domain"], dtype=float)
            if dom.shape != (n, 2) or np.any(dom[:, 1] <= dom[:, 0]):
                raise ConfigError("sieve.domain", f"expected {n} increasing [low, high] pairs")
            sv["domain"] = dom.tolist()
        sv["delta"] = _positive(sv["delta"], "sieve.delta")
        if sv["delta"] > 1:
            raise ConfigError("sieve.delta", "must not exceed 1")
        sv["resolution"] = _int(sv["resolution"], "sieve.resolution", 10000)
        if sv["xi"] is not None:
            arr = np.atleast_1d(np.asarray(sv["xi"], dtype=float))
            if arr.size != n:
                raise ConfigError("sieve.xi", f"expected {n} component(s)")
            sv["xi"] = arr.tolist()

    od = cfg["order"]
    if command.startswith("order"):
        if not isinstance(od["t"], list) or len(od["t"]) < 3:
            raise ConfigError("order.t", "an order fit needs at least three step sizes")
        od["t"] = [_positive(x, "order.t") for x in od["t"]]
        pairs = od["pairs"]
        if not isinstance(pairs, list) or not pairs or any(not isinstance(p, list) or len(p) != 2 for p in pairs):
            raise ConfigError("order.pairs", "expected a non-empty list of [t1, t2] pairs")
        od["pairs"] = [[_positive(a, "order.pairs"), _positive(b, "order.pairs")] for a, b in pairs]
        for s in od["schemes"]:
            if s not in ("euler", "midpoint"):
                raise ConfigError("order.schemes", f"unknown scheme {s!r}")
    return cfg


def kam_config(cfg: dict):
    from .kamcore import KamConfig
    sch, dio = cfg["schedule"], cfg["diophantine"]
    return KamConfig(gamma=dio["gamma"], tau=dio["tau"], K0=sch["K0"], K_cap=sch["K_cap"], r0=sch["r0"],
                     s0=sch["s0"], nbar=dio["nbar"] if cfg["mode"] == "ruessmann" else None,
                     eta_init=sch["eta_init"], eta_floor=sch["eta_floor"], target=sch["target"],
                     v_max=sch["v_max"], fit_degree=sch["fit_degree"])


def build_map(model, scheme, eps, t, xi, adapter_degree=2, seed=0):
    from . import gfmaps
    if scheme == "euler_gf":
        return gfmaps.from_symplectic_euler(model, xi, eps, t, d=adapter_degree)
    if scheme == "euler":
        return gfmaps.symplectic_euler_step(model, eps, t)
    if scheme == "midpoint":
        return gfmaps.midpoint_step(model, eps, t)
    return gfmaps.reference_flow(model, eps, t, seed=seed)


def _kam_task(args):
    cfg, xi, t, seed = args
    from .homological import DiophantineParams, check_diophantine
    from .kamcore import run_kam
    start = time.perf_counter()
    model = model_from_config(cfg["model"])
    xi = np.asarray(xi, dtype=float)
    kc = kam_config(cfg)
    omega = model.h0_grad(xi)
    K = kc.K_cap
    check = check_diophantine(t * omega, DiophantineParams(kc.gamma, kc.tau, K, t), K)
    record = {"xi": xi.tolist(), "t": t}
    if not check.passed:
        record.update(status="skipped", reason=f"not admissible: k={list(check.worst_k)}, margin={check.margin!r}")
        return record, time.perf_counter() - start
    mapping = build_map(model, cfg["scheme"], cfg["eps"], t, xi, cfg["adapter_degree"], seed)
    res = run_kam(mapping, xi, omega, kc)
    record.update(res.to_dict())
    record["status"] = "converged" if res.converged else "failed"
    record["conjugacy_residual"] = res.conjugacy_residual(128) if res.converged else None
    return record, time.perf_counter() - start


def _pool_map(fn, tasks, workers):
    if workers <= 1 or len(tasks) <= 1:
        return [fn(task) for task in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks))


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow(row)


def _jsonable(obj):
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def cmd_run_kam(cfg, out: Path, seed: int, workers: int):
    tasks = [(cfg, xi, t, seed) for xi in cfg["xi"] for t in cfg["t"]]
    results = _pool_map(_kam_task, tasks, workers)
    runs = [r for r, _ in results]
    timings = [dt for _, dt in results]
    rows = []
    for i, run in enumerate(runs):
        for rec in run.get("trace", []):
            rows.append([i, json.dumps(run["xi"]), run["t"], rec["v"], repr(rec["E"]), repr(rec["F"]),
                         repr(rec["torus_defect"]), repr(rec["consistency"]), json.dumps(rec["omega"])])
        log.info("run %d xi=%s t=%s: %s (%s)", i, run["xi"], run["t"], run["status"],
                 run.get("verdict", run.get("reason")))
    _write_csv(out / "tables" / "kam_trace.csv",
               ["run", "xi", "t", "v", "E", "F", "torus_defect", "consistency", "omega"], rows)
    ok = all(r["status"] in ("converged", "skipped") for r in runs)
    return {"runs": runs}, timings, 0 if ok else 1


def cmd_sieve(cfg, out: Path, mode: str):
    from .sieve import measure_vs_gamma, sieve_actions, sieve_steps
    model = model_from_config(cfg["model"])
    dio, sv = cfg["diophantine"], cfg["sieve"]
    if mode == "actions":
        results = []
        for t in cfg["t"]:
            res = sieve_actions(model, t, dio["gamma"], dio["tau"], dio["Kmax"], sv["cells"], domain=sv["domain"])
            res.to_csv(out / "tables" / f"sieve_actions_t{t!r}.csv")
            results.append({"t": t, **res.summary()})
            log.info("sieve actions t=%s: excluded fraction %.6g", t, res.excluded_fraction)
        return {"sieve_actions": results}
    if mode == "steps":
        xi = sv["xi"] if sv["xi"] is not None else cfg["xi"][0]
        res = sieve_steps(model, xi, dio["gamma"], dio["tau"], sv["delta"], dio["Kmax"], sv["resolution"])
        res.to_csv(out / "tables" / "sieve_steps.csv")
        _write_csv(out / "tables" / "step_density.csv", ["delta_prime", "points", "density"],
                   [[repr(d["delta_prime"]), d["points"], repr(d["density"])] for d in res.extra["density"]])
        for d in res.extra["density"]:
            log.info("step density on (0, %.4g]: %.6f", d["delta_prime"], d["density"])
        return {"sieve_steps": res.summary()}
    rows = []
    sweeps = []
    for t in cfg["t"]:
        rec = measure_vs_gamma(model, t, dio["tau"], sv["gammas"], sv["cells"], dio["Kmax"], sv["domain"])
        sweeps.append(rec)
        rows += [[t, repr(r["gamma"]), repr(r["excluded_fraction"]), repr(r["excluded_measure"])] for r in rec["rows"]]
        log.info("gamma sweep t=%s: slope %.4f (R^2 %.4f)", t, rec["slope"], rec["r2"])
    _write_csv(out / "tables" / "gamma_sweep.csv", ["t", "gamma", "excluded_fraction", "excluded_measure"], rows)
    return {"gamma_sweep": sweeps}


def _order_task(args):
    cfg, scheme, xi = args
    from .verify import flow_vs_algorithm
    model = model_from_config(cfg["model"])
    return flow_vs_algorithm(model, xi, cfg["eps"], cfg["order"]["t"], scheme, kam_config(cfg))


def _pair_task(args):
    cfg, scheme, xi, t1, t2 = args
    from .verify import compare_step_sizes
    model = model_from_config(cfg["model"])
    return compare_step_sizes(model, xi, cfg["eps"], t1, t2, scheme, kam_config(cfg))


def cmd_order(cfg, out: Path, mode: str, workers: int):
    xi = cfg["xi"][0]
    if mode in ("euler", "midpoint"):
        rec = _order_task((cfg, mode, xi))
        rows = [[r["t"], repr(r["omega_flow"][0]), repr(r["omega_alg"][0]), repr(r["frequency_gap"]),
                 repr(r["hausdorff"]), json.dumps(r["matched_xi"])] for r in rec["rows"]]
        _write_csv(out / "tables" / f"order_{mode}.csv",
                   ["t", "omega_flow", "omega_alg", "frequency_gap", "hausdorff", "matched_xi"], rows)
        for key in ("frequency_gap_fit", "hausdorff_fit"):
            log.info("%s %s: %s", mode, key, rec[key])
        return {"order": rec}
    tasks = [(cfg, s, xi, t1, t2) for s in cfg["order"]["schemes"] for t1, t2 in cfg["order"]["pairs"]]
    recs = _pool_map(_pair_task, tasks, workers)
    summary = []
    for s in cfg["order"]["schemes"]:
        alpha = 1 if s == "euler" else 2
        mine = [r for r in recs if r["scheme"] == s]
        consts = [r["frequency_gap"] / (r["t1"] ** alpha - r["t2"] ** alpha) for r in mine]
        spread = max(consts) / min(consts) if min(consts) > 0 else float("inf")
        summary.append({"scheme": s, "alpha": alpha, "constants": consts, "spread": spread})
        log.info("step pairs %s: C = %s, spread %.3f", s, consts, spread)
    _write_csv(out / "tables" / "step_pairs.csv", ["scheme", "t1", "t2", "frequency_gap", "embedding_gap"],
               [[r["scheme"], r["t1"], r["t2"], repr(r["frequency_gap"]), repr(r["embedding_gap"])] for r in recs])
    return {"step_pairs": recs, "step_pair_summary": summary}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kamtori", description="KAM tori of symplectic integrators")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML configuration file")
    common.add_argument("--out", type=Path, default=Path("kamtori-out"), help="output directory")
    common.add_argument("--seed", type=int, default=0, help="seed recorded in the report")
    common.add_argument("--workers", type=int, default=os.cpu_count() or 1, help="worker processes")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("run-kam", parents=[common], help="KAM iteration for each (xi, t)")
    p = sub.add_parser("sieve", parents=[common], help="Diophantine sieves")
    p.add_argument("mode", choices=["actions", "steps", "gamma-sweep"])
    p = sub.add_parser("order", parents=[common], help="order-of-drift studies")
    p.add_argument("mode", choices=["euler", "midpoint", "step-pairs"])
    p = sub.add_parser("models", help="model catalog")
    p.add_argument("mode", choices=["list"])
    return parser


def _load(path: Path | None):
    if path is None:
        return {}
    try:
        with open(path) as fh:
            return yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError("--config", f"cannot read {path}: {exc.strerror}") from None
    except yaml.YAMLError as exc:
        raise ConfigError("--config", f"invalid YAML: {exc}") from None


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "models":
        for name, m in sorted(builtin_models().items()):
            print(f"{name:22s} n={m.n}  V={m.action_domain.tolist()}  {m.description}")
        return 0
    command = args.command if args.command == "run-kam" else f"{args.command} {args.mode}"
    try:
        if args.seed < 0:
            raise ConfigError("--seed", "must be a non-negative integer")
        if args.workers < 1:
            raise ConfigError("--workers", "must be at least 1")
        cfg = resolve_config(_load(args.config), command)
    except ConfigError as exc:
        print(f"kamtori: {exc}", file=sys.stderr)
        return 2

    out: Path = args.out
    (out / "tables").mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(out / "log.txt", mode="w")
    handler.setFormatter(logging.Formatter("%(levelname)s %(message)s"))
    log.addHandler(handler)
    log.setLevel(logging.INFO)
    started = time.time()
    t0 = time.perf_counter()
    timings = []
    code = 0
    try:
        if args.command == "run-kam":
            results, timings, code = cmd_run_kam(cfg, out, args.seed, args.workers)
        elif args.command == "sieve":
            results = cmd_sieve(cfg, out, args.mode)
        else:
            results = cmd_order(cfg, out, args.mode, args.workers)
    except (KamError, SkippedNotAdmissible) as exc:
        log.error("run failed: %s", exc)
        print(f"kamtori: run failed: {exc}", file=sys.stderr)
        results, code = {"error": f"{type(exc).__name__}: {exc}"}, 1
    finally:
        log.removeHandler(handler)
        handler.close()

    report = {"schema": SCHEMA, "version": __version__, "command": command, "seed": args.seed,
              "config": cfg, "results": results, "exit_code": code}
    with open(out / "report.json", "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")
    meta = {"started_unix": started, "wall_clock_seconds": time.perf_counter() - t0,
            "task_seconds": timings, "workers": args.workers, "python": platform.python_version(),
            "numpy": np.__version__}
    with open(out / "metadata.json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return code


if __name__ == "__main__":
    sys.exit(main())
