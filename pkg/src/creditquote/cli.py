"""Command-line front end: configuration, seed orchestration, sweeps, and
CSV/SVG artifact output.

Config files are JSON.  Every key is validated against the schema below;
unknown keys are rejected (exit code 2).  Runtime failures exit with 1.

Schema (defaults in parentheses)::

    M (2), d (4), delta_max (0.1), T (64)
    noise: {kind ("truncated_normal"), mu (0.05), sigma (0.05),
            lo (0.02), hi (0.11)}
    arrival: {kind ("uniform"), alpha (0.0), beta (1.0), weights (null)}
    gamma (0.0), W (5.0), p_cap (null), par (100.0)
    lambda_mode ("experiment"), lambda_scale (10.0)
    policies (["tsmt","pooling","individual"])
    seeds ([0]), normalize_contexts (true), fixed_primitives (false)
    fit_tol (1e-8), quote_tol (1e-8)
    out_dir ("out"), format ("csv")
    sweep: {M (null), delta_max (null), alpha (null)}        # sweep cmd
    replay: {log, primitives, ridge_alpha (1.0),
             r2_threshold (0.4)}                             # replay cmd
    diagnose: {n_primitives (1000), r_bar (0.2), delta (0.005),
               seed (0), event_d (5), event_ks ([3..9]),
               event_seeds (30)}                             # diagnose cmd
"""
from __future__ import annotations

import argparse
import concurrent.futures
import csv
import json
import math
import os
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import bond as bond_mod
from .charts import line_chart_svg, small_multiples_svg
from .diagnostics import check_assumptions, pooled_event_failure_rates
from .distributions import NORMAL, TRUNCATED_NORMAL, NoiseSpec
from .linalg import make_rng
from .policies import (INDIVIDUAL, ORACLE, POOLING, TSMT, OraclePolicy,
                       PolicyConfig, make_policy)
from .replay import fit_ridge_oracle, read_rfq_log, replay_policies
from .simulator import (ArrivalSpec, ModelConfig, draw_primitives,
                        generate_model, run_path)

_POLICY_KINDS = (TSMT, POOLING, INDIVIDUAL)

ROUND_COLUMNS = ["t", "episode", "bond_id", "policy", "quote", "bcl_price",
                 "win", "reward", "oracle_reward", "realized_regret",
                 "expected_regret", "theta_err_l2"]

SUMMARY_COLUMNS = ["policy", "checkpoint", "mean_cum_realized",
                   "sd_cum_realized", "mean_cum_expected", "sd_cum_expected"]


class ConfigError(Exception):
    """Invalid configuration; maps to exit code 2."""


# -- schema ----------------------------------------------------------------

def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)


def _check_keys(obj: dict, allowed: Sequence[str], ctx: str) -> None:
    _require(isinstance(obj, dict), f"{ctx}: expected an object")
    unknown = sorted(set(obj) - set(allowed))
    _require(not unknown, f"{ctx}: unknown key(s) {unknown}")


def _num(obj: dict, key: str, default, ctx: str, lo=None,
         integer: bool = False, allow_none: bool = False):
    v = obj.get(key, default)
    if v is None and allow_none:
        return None
    ok = isinstance(v, (int, float)) and not isinstance(v, bool)
    _require(ok, f"{ctx}.{key}: expected a number")
    if integer:
        _require(float(v).is_integer(), f"{ctx}.{key}: expected an integer")
        v = int(v)
    else:
        v = float(v)
    if lo is not None:
        _require(v >= lo, f"{ctx}.{key}: must be >= {lo}")
    return v


_NOISE_KEYS = ("kind", "mu", "sigma", "lo", "hi")
_ARRIVAL_KEYS = ("kind", "alpha", "beta", "weights")
_TOP_KEYS = ("M", "d", "delta_max", "T", "noise", "arrival", "gamma", "W",
             "p_cap", "par", "lambda_mode", "lambda_scale", "policies", "seeds",
             "normalize_contexts", "fixed_primitives", "fit_tol", "quote_tol",
             "out_dir", "format", "sweep", "replay", "diagnose")


def _validate_noise(obj: dict) -> dict:
    _check_keys(obj, _NOISE_KEYS, "noise")
    kind = obj.get("kind", TRUNCATED_NORMAL)
    _require(kind in (NORMAL, TRUNCATED_NORMAL),
             f"noise.kind: unknown kind {kind!r}")
    out = {"kind": kind,
           "mu": _num(obj, "mu", 0.05, "noise"),
           "sigma": _num(obj, "sigma", 0.05, "noise")}
    _require(out["sigma"] > 0, "noise.sigma: must be positive")
    if kind == TRUNCATED_NORMAL:
        out["lo"] = _num(obj, "lo", 0.02, "noise")
        out["hi"] = _num(obj, "hi", 0.11, "noise")
        _require(out["lo"] < out["hi"], "noise: lo must be below hi")
    else:
        _require("lo" not in obj and "hi" not in obj,
                 "noise: lo/hi only apply to the truncated kind")
    return out


def _validate_arrival(obj: dict, M: int) -> dict:
    _check_keys(obj, _ARRIVAL_KEYS, "arrival")
    kind = obj.get("kind", "uniform")
    _require(kind in ("uniform", "exp_decay", "poly_decay", "weights"),
             f"arrival.kind: unknown kind {kind!r}")
    out = {"kind": kind,
           "alpha": _num(obj, "alpha", 0.0, "arrival", lo=0.0),
           "beta": _num(obj, "beta", 1.0, "arrival"),
           "weights": None}
    if kind == "weights":
        w = obj.get("weights")
        _require(isinstance(w, list) and len(w) == M
                 and all(isinstance(v, (int, float)) and not isinstance(v, bool)
                         and v >= 0 for v in w) and sum(w) > 0,
                 "arrival.weights: expected M nonnegative numbers, positive sum")
        out["weights"] = [float(v) for v in w]
        if not math.isclose(sum(out["weights"]), 1.0, rel_tol=0, abs_tol=1e-12):
            print(f"notice: arrival weights sum to {sum(out['weights'])!r}; "
                  "normalizing", file=sys.stderr)
    else:
        _require("weights" not in obj,
                 "arrival.weights: only valid with kind 'weights'")
    return out


def validate_config(raw: dict) -> dict:
    """Validate and fill defaults; raises ConfigError with a field message."""
    _check_keys(raw, _TOP_KEYS, "config")
    cfg = {
        "M": _num(raw, "M", 2, "config", lo=1, integer=True),
        "d": _num(raw, "d", 4, "config", lo=1, integer=True),
        "delta_max": _num(raw, "delta_max", 0.1, "config", lo=0.0),
        "T": _num(raw, "T", 64, "config", lo=1, integer=True),
        "gamma": _num(raw, "gamma", 0.0, "config"),
        "W": _num(raw, "W", 5.0, "config", lo=0.0),
        "p_cap": _num(raw, "p_cap", None, "config", allow_none=True),
        "par": _num(raw, "par", 100.0, "config", lo=0.0),
        "fit_tol": _num(raw, "fit_tol", 1e-8, "config", lo=0.0),
        "quote_tol": _num(raw, "quote_tol", 1e-8, "config", lo=0.0),
    }
    cfg["noise"] = _validate_noise(raw.get("noise", {}))
    cfg["arrival"] = _validate_arrival(raw.get("arrival", {}), cfg["M"])

    mode = raw.get("lambda_mode", "experiment")
    _require(mode in ("experiment", "paper_theory"),
             f"config.lambda_mode: unknown mode {mode!r}")
    cfg["lambda_mode"] = mode
    cfg["lambda_scale"] = _num(raw, "lambda_scale", 10.0, "config", lo=0.0)

    policies = raw.get("policies", list(_POLICY_KINDS))
    _require(isinstance(policies, list) and policies
             and all(p in _POLICY_KINDS for p in policies)
             and len(set(policies)) == len(policies),
             f"config.policies: expected a distinct subset of {_POLICY_KINDS}")
    cfg["policies"] = list(policies)

    seeds = raw.get("seeds", [0])
    _require(isinstance(seeds, list) and seeds
             and all(isinstance(s, int) and not isinstance(s, bool)
                     and s >= 0 for s in seeds),
             "config.seeds: expected a nonempty list of nonnegative integers")
    cfg["seeds"] = list(seeds)

    for key, default in (("normalize_contexts", True), ("fixed_primitives", False)):
        v = raw.get(key, default)
        _require(isinstance(v, bool), f"config.{key}: expected a boolean")
        cfg[key] = v

    out_dir = raw.get("out_dir", "out")
    _require(isinstance(out_dir, str) and out_dir,
             "config.out_dir: expected a nonempty string")
    cfg["out_dir"] = out_dir

    fmt = raw.get("format", "csv")
    _require(fmt in ("csv", "csv+svg"),
             "config.format: expected 'csv' or 'csv+svg'")
    cfg["format"] = fmt

    sweep = raw.get("sweep", {})
    _check_keys(sweep, ("M", "delta_max", "alpha"), "sweep")
    cfg["sweep"] = {}
    for key, integer in (("M", True), ("delta_max", False), ("alpha", False)):
        vals = sweep.get(key)
        if vals is None:
            cfg["sweep"][key] = None
            continue
        _require(isinstance(vals, list) and vals
                 and all(isinstance(v, (int, float)) and not isinstance(v, bool)
                         for v in vals),
                 f"sweep.{key}: expected a nonempty list of numbers")
        cfg["sweep"][key] = [int(v) if integer else float(v) for v in vals]

    replay = raw.get("replay", {})
    _check_keys(replay, ("log", "primitives", "ridge_alpha", "r2_threshold"),
                "replay")
    cfg["replay"] = {
        "log": replay.get("log"),
        "primitives": replay.get("primitives"),
        "ridge_alpha": _num(replay, "ridge_alpha", 1.0, "replay", lo=0.0),
        "r2_threshold": _num(replay, "r2_threshold", 0.4, "replay"),
    }
    for key in ("log", "primitives"):
        v = cfg["replay"][key]
        _require(v is None or (isinstance(v, str) and v),
                 f"replay.{key}: expected a path string")

    diag = raw.get("diagnose", {})
    _check_keys(diag, ("n_primitives", "r_bar", "delta", "seed", "event_d",
                       "event_ks", "event_seeds"), "diagnose")
    ks = diag.get("event_ks", list(range(3, 10)))
    _require(isinstance(ks, list) and ks
             and all(isinstance(v, int) and not isinstance(v, bool) and v >= 2
                     for v in ks),
             "diagnose.event_ks: expected a list of integers >= 2")
    cfg["diagnose"] = {
        "n_primitives": _num(diag, "n_primitives", 1000, "diagnose", lo=1,
                             integer=True),
        "r_bar": _num(diag, "r_bar", 0.2, "diagnose", lo=0.0),
        "delta": _num(diag, "delta", 0.005, "diagnose", lo=0.0),
        "seed": _num(diag, "seed", 0, "diagnose", lo=0, integer=True),
        "event_d": _num(diag, "event_d", 5, "diagnose", lo=1, integer=True),
        "event_ks": list(ks),
        "event_seeds": _num(diag, "event_seeds", 30, "diagnose", lo=1,
                            integer=True),
    }
    return cfg


def load_config(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from exc
    return validate_config(raw)


# -- model assembly --------------------------------------------------------

def noise_from_config(cfg: dict) -> NoiseSpec:
    n = cfg["noise"]
    if n["kind"] == NORMAL:
        return NoiseSpec(kind=NORMAL, mu=n["mu"], sigma=n["sigma"])
    return NoiseSpec(kind=TRUNCATED_NORMAL, mu=n["mu"], sigma=n["sigma"],
                     lo=n["lo"], hi=n["hi"])


def model_config_from(cfg: dict) -> ModelConfig:
    a = cfg["arrival"]
    arrival = ArrivalSpec(kind=a["kind"], M=cfg["M"], alpha=a["alpha"],
                          beta=a["beta"],
                          weights=tuple(a["weights"]) if a["weights"] else None)
    return ModelConfig(M=cfg["M"], d=cfg["d"], delta_max=cfg["delta_max"],
                       noise=noise_from_config(cfg), arrival=arrival,
                       T=cfg["T"], W=cfg["W"], gamma=cfg["gamma"],
                       par=cfg["par"],
                       normalize_contexts=cfg["normalize_contexts"],
                       fixed_primitives=cfg["fixed_primitives"])


def policy_config_from(cfg: dict) -> PolicyConfig:
    return PolicyConfig(noise=noise_from_config(cfg), W=cfg["W"],
                        gamma=cfg["gamma"], p_cap=cfg["p_cap"],
                        lambda_mode=cfg["lambda_mode"],
                        lambda_scale=cfg["lambda_scale"],
                        fit_tol=cfg["fit_tol"], quote_tol=cfg["quote_tol"])


def run_seed(cfg: dict, seed: int, collect_records: bool = True):
    """One full path for one seed; top-level so seed workers can pickle it."""
    model_cfg = model_config_from(cfg)
    pol_cfg = policy_config_from(cfg)
    model = generate_model(model_cfg, make_rng(seed, 0), seed)
    policies = {kind: make_policy(kind, pol_cfg, cfg["M"], cfg["d"])
                for kind in cfg["policies"]}
    policies[ORACLE] = OraclePolicy(pol_cfg, model.thetas)
    return run_path(model, policies, make_rng(seed, 1),
                    collect_records=collect_records)


def checkpoints_for(T: int) -> List[int]:
    cps = [1 << k for k in range((T).bit_length()) if (1 << k) <= T]
    if cps[-1] != T:
        cps.append(T)
    return cps


# -- writers ---------------------------------------------------------------

def _f(v) -> str:
    return repr(float(v))


def write_round_csv(path, records) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(ROUND_COLUMNS)
        for r in records:
            writer.writerow([r.t, r.episode, r.bond_id, r.policy, _f(r.quote),
                             _f(r.bcl_price), int(r.win), _f(r.reward),
                             _f(r.oracle_reward), _f(r.realized_regret),
                             _f(r.expected_regret), _f(r.theta_err_l2)])


def summarize(results, policies: Sequence[str], T: int) -> List[dict]:
    """Mean and sd of cumulative regret per policy at power-of-two checkpoints."""
    cps = checkpoints_for(T)
    rows = []
    for name in policies:
        cum_r = np.stack([res.ledger.cumulative_realized(name) for res in results])
        cum_e = np.stack([res.ledger.cumulative_expected(name) for res in results])
        for cp in cps:
            rows.append({
                "policy": name, "checkpoint": cp,
                "mean_cum_realized": float(np.mean(cum_r[:, cp - 1])),
                "sd_cum_realized": float(np.std(cum_r[:, cp - 1])),
                "mean_cum_expected": float(np.mean(cum_e[:, cp - 1])),
                "sd_cum_expected": float(np.std(cum_e[:, cp - 1])),
            })
    return rows


def write_summary_csv(path, rows: List[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_COLUMNS)
        for row in rows:
            writer.writerow([row["policy"], row["checkpoint"],
                             _f(row["mean_cum_realized"]),
                             _f(row["sd_cum_realized"]),
                             _f(row["mean_cum_expected"]),
                             _f(row["sd_cum_expected"])])


def summary_series(rows: List[dict]) -> Tuple[List[float], Dict]:
    """Chart inputs from summary rows: x = checkpoints, one series per policy."""
    policies = list(dict.fromkeys(r["policy"] for r in rows))
    cps = sorted({r["checkpoint"] for r in rows})
    series = {}
    for name in policies:
        by_cp = {r["checkpoint"]: r for r in rows if r["policy"] == name}
        series[name] = ([by_cp[c]["mean_cum_expected"] for c in cps],
                        [by_cp[c]["sd_cum_expected"] for c in cps])
    return [float(c) for c in cps], series


def read_summary_csv(path) -> List[dict]:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            rows.append({"policy": row["policy"],
                         "checkpoint": int(row["checkpoint"]),
                         **{k: float(row[k]) for k in SUMMARY_COLUMNS[2:]}})
    return rows


# -- orchestration ---------------------------------------------------------

def _thread_budget() -> int:
    raw = os.environ.get("CREDITQUOTE_THREADS", "1")
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigError(f"CREDITQUOTE_THREADS: not an integer: {raw!r}") from exc
    _require(n >= 1, "CREDITQUOTE_THREADS: must be at least 1")
    return n


def _run_all_seeds(cfg: dict, collect_records: bool = True):
    seeds = cfg["seeds"]
    workers = min(_thread_budget(), len(seeds))
    if workers <= 1:
        return [run_seed(cfg, s, collect_records) for s in seeds]
    with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(run_seed, cfg, s, collect_records) for s in seeds]
        return [f.result() for f in futures]


def _simulate_into(cfg: dict, out: Path, tag: str = "") -> List[dict]:
    out.mkdir(parents=True, exist_ok=True)
    results = _run_all_seeds(cfg)
    for seed, res in zip(cfg["seeds"], results):
        write_round_csv(out / f"rounds{tag}_seed{seed}.csv", res.records)
    names = list(results[0].ledger.policies)
    rows = summarize(results, names, cfg["T"])
    write_summary_csv(out / f"summary{tag}.csv", rows)
    if cfg["format"] == "csv+svg":
        x, series = summary_series(rows)
        svg = line_chart_svg(x, series, title=f"cumulative regret{tag}")
        (out / f"summary{tag}.svg").write_text(svg, encoding="utf-8")
    return rows


def cmd_simulate(cfg: dict) -> int:
    _simulate_into(cfg, Path(cfg["out_dir"]))
    return 0


def cmd_sweep(cfg: dict) -> int:
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    ms = cfg["sweep"]["M"] or [cfg["M"]]
    deltas = cfg["sweep"]["delta_max"] or [cfg["delta_max"]]
    alphas = cfg["sweep"]["alpha"]
    panels = []
    for m in ms:
        for dm in deltas:
            for a in (alphas if alphas is not None else [None]):
                cell = dict(cfg)
                cell["M"] = m
                cell["delta_max"] = dm
                tag = f"_M{m}_dmax{dm:g}"
                if a is not None:
                    cell["arrival"] = {"kind": "poly_decay", "alpha": float(a),
                                       "beta": 1.0, "weights": None}
                    tag += f"_a{a:g}"
                rows = _simulate_into(cell, out, tag=tag)
                x, series = summary_series(rows)
                panels.append((tag.lstrip("_").replace("_", " "), x, series))
    if cfg["format"] == "csv+svg":
        (out / "sweep.svg").write_text(small_multiples_svg(panels),
                                       encoding="utf-8")
    return 0


def cmd_replay(cfg: dict) -> int:
    rp = cfg["replay"]
    if not rp["log"] or not rp["primitives"]:
        raise ConfigError("replay: both 'log' and 'primitives' paths are required")
    log = read_rfq_log(rp["log"], rp["primitives"])
    fit = fit_ridge_oracle(log, alpha=rp["ridge_alpha"],
                           r2_threshold=rp["r2_threshold"])
    M = int(np.max(log.bond_ids)) + 1
    thetas = np.zeros((M, log.d))
    for j, th in fit.thetas.items():
        thetas[j] = th
    pol_cfg = policy_config_from({**cfg, "noise": cfg["noise"]})
    policies = {kind: make_policy(kind, pol_cfg, M, log.d)
                for kind in cfg["policies"]}
    policies[ORACLE] = OraclePolicy(pol_cfg, thetas)
    ledger = replay_policies(log, policies, pol_cfg.noise, oracle_name=ORACLE)

    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    cps = checkpoints_for(log.n)
    with open(out / "replay_summary.csv", "w", newline="",
              encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["policy", "checkpoint", "cum_realized_regret"])
        for name in ledger.policies:
            cum = ledger.cumulative_realized(name)
            for cp in cps:
                writer.writerow([name, cp, _f(cum[cp - 1])])
    report = {"ridge_alpha": rp["ridge_alpha"],
              "r_squared": {str(j): v for j, v in fit.r_squared.items()},
              "flagged": fit.flagged, "excluded": fit.excluded}
    (out / "ridge_fit.json").write_text(json.dumps(report, indent=2),
                                        encoding="utf-8")
    return 0


def cmd_diagnose(cfg: dict) -> int:
    dg = cfg["diagnose"]
    rng = make_rng(dg["seed"], 99)
    primitives = [draw_primitives(rng, cfg["par"])
                  for _ in range(dg["n_primitives"])]
    noise = noise_from_config(cfg)
    report = check_assumptions(primitives, noise, M=cfg["M"], W=cfg["W"],
                               r_bar=dg["r_bar"], delta=dg["delta"])
    rates = pooled_event_failure_rates(
        dg["event_d"], dg["event_ks"], dg["event_seeds"],
        base_seed=dg["seed"], normalize_contexts=cfg["normalize_contexts"])
    payload = report.to_dict()
    payload["pooled_event_failure_rates"] = {str(k): v for k, v in rates.items()}
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "diagnostics.json").write_text(json.dumps(payload, indent=2),
                                          encoding="utf-8")
    return 0


# -- entry point -----------------------------------------------------------

def _parse_args(argv):
    parser = argparse.ArgumentParser(
        prog="creditquote",
        description="RFQ dynamic pricing simulator and evaluator")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("simulate", "sweep", "replay", "diagnose"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--out", default=None)
        p.add_argument("--seeds", default=None,
                       help="comma-separated seed list, overrides the config")
        p.add_argument("--format", default=None, choices=["csv", "csv+svg"])
    return parser.parse_args(argv)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _parse_args(list(argv) if argv is not None else None)
    try:
        cfg = load_config(args.config)
        if args.out is not None:
            cfg["out_dir"] = args.out
        if args.format is not None:
            cfg["format"] = args.format
        if args.seeds is not None:
            try:
                cfg["seeds"] = [int(s) for s in args.seeds.split(",") if s]
            except ValueError as exc:
                raise ConfigError(f"--seeds: not integers: {args.seeds!r}") from exc
            _require(bool(cfg["seeds"]), "--seeds: empty list")
        handler = {"simulate": cmd_simulate, "sweep": cmd_sweep,
                   "replay": cmd_replay, "diagnose": cmd_diagnose}[args.command]
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        return handler(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
