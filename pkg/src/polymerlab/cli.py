"""Experiment runner: config parsing, seed management, run persistence.

A run is one experiment kind executed from a JSON config file. Physical
parameters (disorder law, beta, dimension, times, seed counts) have no
defaults -- a config must spell them out -- while engineering knobs
(threads, block size, memory cap) default sensibly. Every run writes an
append-only directory containing the resolved config, CSV/JSON outputs, and
a manifest with per-output checksums; rerunning the same manifest config
reproduces the outputs bit for bit.

Exit codes: 0 success, 2 config validation, 3 hypothesis-gate refusal,
4 resource refusal.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import math
import os
import sys

import numpy as np

from . import __version__, brownian, llt, overlap, partition, walk
from ._io import sha256_file, write_csv, write_json
from ._kernels import derive_seed
from ._parallel import resolve_workers
from .env import DisorderSpec, l2_region_check
from .errors import (CorruptRunError, HypothesisGateError, ResourceLimitError)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_GATE = 3
EXIT_RESOURCE = 4

_ENGINE_DEFAULTS = {"threads": None, "block_size": 64, "memory_cap_gb": 8.0}


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# config handling
# ---------------------------------------------------------------------------

def _require(params, keys, kind):
    missing = [k for k in keys if k not in params]
    if missing:
        raise ConfigError(f"{kind}: missing required physical parameters {missing} "
                          "(physical parameters have no defaults)")


def _disorder(params):
    return DisorderSpec.from_config(params["disorder"])


def canonical_json(cfg) -> str:
    return json.dumps(cfg, sort_keys=True, separators=(",", ":"))


def load_config(path, overrides=(), seed=None, threads=None):
    with open(path, "r", encoding="utf-8") as fh:
        cfg = json.load(fh)
    for kv in overrides:
        if "=" not in kv:
            raise ConfigError(f"--set expects key=value, got {kv!r}")
        key, raw = kv.split("=", 1)
        try:
            val = json.loads(raw)
        except json.JSONDecodeError:
            val = raw
        node = cfg
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = val
    if seed is not None:
        cfg["seed"] = int(seed)
    engine = dict(_ENGINE_DEFAULTS)
    engine.update(cfg.get("engine", {}))
    if threads is not None:
        engine["threads"] = int(threads)
    cfg["engine"] = engine
    validate_config(cfg)
    return cfg


def validate_config(cfg):
    if "experiment" not in cfg:
        raise ConfigError("config needs an 'experiment' kind")
    kind = cfg["experiment"]
    if kind not in RUNNERS:
        raise ConfigError(f"unknown experiment {kind!r}; known: {sorted(RUNNERS)}")
    if "seed" not in cfg:
        raise ConfigError("config needs a master 'seed' (reproducibility contract)")
    params = cfg.get("params", {})
    _require(params, RUNNERS[kind].required, kind)
    if "disorder" in RUNNERS[kind].required:
        _disorder(params)  # raises on malformed disorder laws
    return cfg


def _check_task_seeds(master_seed, n_tasks):
    seeds = {derive_seed(master_seed, i) for i in range(n_tasks)}
    if len(seeds) != n_tasks:
        raise RuntimeError("derived task seeds collide; master seed unusable")


def _estimate_memory_gb(kind, params, engine):
    workers = resolve_workers(engine.get("threads"))
    box = 0
    if kind in ("llt-scan", "zinf-scan"):
        n_top = 2 * params.get("zinf_proxy_time", 0) if kind == "zinf-scan" \
            else max(params["times"])
        n_top = max(n_top, max(params["times"]))
        box = 3 * (2 * n_top + 3) ** 3 * 8
    elif kind == "moment-check":
        box = 3 * (2 * params["n"] + 3) ** 3 * 8
    elif kind == "i-n-scan":
        box = 3 * (2 * max(params["times"]) + 3) ** 3 * 8
    elif kind == "llt-classical":
        box = 2 * (2 * params["n_max"] + 1) ** 3 * 8
    elif kind == "overlap-check":
        m = max(params["times"])
        box = 6 * (2 * m + 1) ** 3 * 16
    return workers * box / 1e9


# ---------------------------------------------------------------------------
# experiment runners: each returns (summary dict, list of extra output files)
# ---------------------------------------------------------------------------

class Runner:
    def __init__(self, fn, required):
        self.fn = fn
        self.required = required


def _checks_pass(checks):
    return all(c["pass"] for c in checks)


def _run_moment_check(params, engine, seed, out_dir, force):
    spec = _disorder(params)
    res = overlap.second_moment_identity_check(
        spec, params["d"], params["n"], params["n_seeds"], master_seed=seed,
        workers=engine["threads"], block_size=engine["block_size"])
    write_csv(os.path.join(out_dir, "moment_check.csv"),
              ["kind", "beta", "d", "n", "n_seeds", "mc_mean", "mc_se", "exact", "z"],
              [(spec.kind, spec.beta, params["d"], params["n"], res.n_seeds,
                res.mc_mean, res.mc_se, res.exact, res.z_score)])
    zmax = params.get("z_max", 3.0)
    checks = [{"name": "second_moment_z", "value": res.z_score,
               "threshold": zmax, "pass": abs(res.z_score) <= zmax}]
    return {"result": res.__dict__, "checks": checks}, ["moment_check.csv"]


def _scan_cfg(params, engine, seed, force, proxy=False):
    spec = _disorder(params)
    kw = dict(spec=spec, d=params["d"], times=tuple(params["times"]),
              a=params["a"], A=params["A"], n_seeds=params["n_seeds"],
              master_seed=seed, grid_stride=params.get("grid_stride"),
              block_size=engine["block_size"], workers=engine["threads"],
              force=force)
    if proxy:
        kw["zinf_proxy_time"] = params["zinf_proxy_time"]
    return llt.LltScanConfig(**kw)


def _trend_checks(sup_rows, band=2.0):
    qs = [r.q_hat for r in sup_rows]
    ses = [r.se for r in sup_rows]
    decreasing = all(qs[i] > qs[i + 1] for i in range(len(qs) - 1))
    gap = qs[0] - qs[-1]
    band_w = band * math.hypot(ses[0], ses[-1])
    return decreasing, gap, band_w


def _run_llt_scan(params, engine, seed, out_dir, force):
    cfg = _scan_cfg(params, engine, seed, force)
    res = llt.residual_l2_scan(cfg)
    res.to_csv(os.path.join(out_dir, "llt_scan.csv"))
    outputs = ["llt_scan.csv"]
    decreasing, gap, band_w = _trend_checks(res.sup_rows)
    checks = [
        {"name": "sup_strictly_decreasing", "value": decreasing,
         "threshold": True, "pass": decreasing},
        {"name": "first_last_gap_vs_2se", "value": gap, "threshold": band_w,
         "pass": gap > band_w},
    ]
    summary = res.summary()
    control = params.get("control_beta_zero", False)
    if control:
        zero = DisorderSpec.from_config({**params["disorder"], "beta": 0.0})
        cfg0 = llt.LltScanConfig(
            spec=zero, d=params["d"], times=tuple(params["times"]), a=params["a"],
            A=params["A"], n_seeds=params.get("control_seeds", 50),
            master_seed=seed, grid_stride=params.get("grid_stride"),
            block_size=engine["block_size"], workers=engine["threads"])
        res0 = llt.residual_l2_scan(cfg0)
        res0.to_csv(os.path.join(out_dir, "llt_scan_beta0.csv"))
        outputs.append("llt_scan_beta0.csv")
        zmax = max(r.q_hat for r in res0.rows)
        checks.append({"name": "beta0_control_zero", "value": zmax,
                       "threshold": 1e-26, "pass": zmax <= 1e-26})
        summary["beta0_control_max"] = zmax
    summary["checks"] = checks
    return summary, outputs


def _run_zinf_scan(params, engine, seed, out_dir, force):
    cfg = _scan_cfg(params, engine, seed, force, proxy=True)
    res = llt.zinf_residual_l1_scan(cfg)
    res.to_csv(os.path.join(out_dir, "zinf_scan.csv"))
    cauchy = llt.zinf_proxy_cauchy_check(
        cfg.spec, cfg.d, cfg.zinf_proxy_time, params.get("cauchy_seeds", 100),
        master_seed=seed, workers=engine["threads"])
    qs = [r.q_hat for r in res.sup_rows]
    ses = [r.se for r in res.sup_rows]
    overall_down = qs[-1] < qs[0] - 2.0 * math.hypot(ses[0], ses[-1])
    no_step_up = all(qs[i + 1] <= qs[i] + 2.0 * math.hypot(ses[i], ses[i + 1])
                     for i in range(len(qs) - 1))
    ratio_max = params.get("cauchy_ratio_max", 0.05)
    checks = [
        {"name": "sup_decreasing_trend", "value": qs, "threshold": "down",
         "pass": bool(overall_down and no_step_up)},
        {"name": "cauchy_ratio", "value": cauchy.ratio, "threshold": ratio_max,
         "pass": cauchy.ratio < ratio_max},
    ]
    summary = res.summary()
    summary["cauchy"] = cauchy.__dict__
    summary["checks"] = checks
    return summary, ["zinf_scan.csv"]


def _run_llt_classical(params, engine, seed, out_dir, force):
    rows = walk.llt_error_scan(params["d"], params["n_max"],
                               n_min=params["n_min"], A=params["A"])
    walk.llt_error_scan_to_csv(rows, os.path.join(out_dir, "llt_classical.csv"))
    scaled = [r.scaled_err for r in rows]
    mins = [r.min_ball_scaled for r in rows]
    ratio = max(scaled) / scaled[0]
    ratio_max = params.get("plateau_ratio_max", 2.0)
    stable = min(mins) > 0.0 and max(mins) / min(mins) <= params.get(
        "lower_bound_ratio_max", 2.0)
    checks = [
        {"name": "scaled_error_plateau", "value": ratio, "threshold": ratio_max,
         "pass": ratio <= ratio_max},
        {"name": "window_lower_bound_stable", "value": [min(mins), max(mins)],
         "threshold": params.get("lower_bound_ratio_max", 2.0), "pass": stable},
    ]
    return {"rows": len(rows), "scaled_first": scaled[0], "scaled_max": max(scaled),
            "checks": checks}, ["llt_classical.csv"]


def _run_pi_d(params, engine, seed, out_dir, force):
    d = params["d"]
    series = walk.return_probability_detail(d, "series")
    quad = walk.return_probability_detail(d, "green_quadrature")
    write_csv(os.path.join(out_dir, "pi_d.csv"),
              ["method", "pi_d", "green", "tail", "tail_uncertainty"],
              [(r.method, r.value, r.green, r.tail, r.tail_uncertainty)
               for r in (series, quad)])
    tol = params.get("oracle_tol", 1e-3)
    diff = abs(series.value - quad.value)
    checks = [{"name": "oracle_agreement", "value": diff, "threshold": tol,
               "pass": diff <= tol}]
    ref = params.get("reference")
    if ref is not None:
        ref_tol = params.get("reference_tol", 1e-3)
        checks.append({"name": "reference_neighborhood",
                       "value": series.value, "threshold": [ref, ref_tol],
                       "pass": abs(series.value - ref) <= ref_tol})
    return {"series": series.value, "green_quadrature": quad.value,
            "ln_inv_pi": math.log(1.0 / series.value), "checks": checks}, ["pi_d.csv"]


def _run_overlap_check(params, engine, seed, out_dir, force):
    rows = overlap.conditioned_bound_scan(params["d"], params["times"],
                                          params["lambda2"],
                                          params.get("radius_factor", 1.0))
    write_csv(os.path.join(out_dir, "overlap_check.csv"),
              ["n", "max_value", "argmax_site", "n_sites"],
              [(r.n, r.max_value, " ".join(str(c) for c in r.argmax_site),
                r.n_sites) for r in rows])
    maxima = [r.max_value for r in rows]
    constant = max(maxima)
    increments = [maxima[i + 1] - maxima[i] for i in range(len(maxima) - 1)]
    plateau = all(increments[i + 1] <= increments[i] + 1e-9
                  for i in range(len(increments) - 1))
    checks = [
        {"name": "all_finite", "value": constant, "threshold": "finite",
         "pass": bool(np.isfinite(constant))},
        {"name": "plateau_increments_shrink", "value": increments,
         "threshold": "nonincreasing", "pass": plateau},
    ]
    return {"constant": constant, "per_n_max": maxima, "checks": checks}, \
        ["overlap_check.csv"]


def _run_brownian_moment(params, engine, seed, out_dir, force):
    res = brownian.continuous_second_moment_check(
        params["beta"], params["d"], params["t"], params["n_env"],
        params["n_paths"], params["n_pairs"], params["h"], master_seed=seed,
        workers=engine["threads"])
    # bridge sampler moment checks at the same h
    n_samp = params.get("bridge_samples", 10000)
    t = params["t"]
    h = params["h"]
    rng = np.random.default_rng(derive_seed(seed, 0xB71D6E))
    y = np.zeros(params["d"])
    y[0] = 1.0
    paths = brownian.bridge_paths(np.zeros(params["d"]), y, t, h, n_samp, rng)
    k_mid = paths.shape[1] // 2
    s = k_mid * h
    mean_th = s / t * y
    var_th = s * (t - s) / t
    mean_err = np.abs(paths[:, k_mid, :].mean(axis=0) - mean_th)
    mean_se = paths[:, k_mid, :].std(axis=0, ddof=1) / math.sqrt(n_samp)
    var_emp = paths[:, k_mid, :].var(axis=0, ddof=1)
    var_se = var_emp * math.sqrt(2.0 / (n_samp - 1))
    zmax = params.get("z_max", 3.0)
    mean_ok = bool(np.all(mean_err <= zmax * mean_se))
    var_ok = bool(np.all(np.abs(var_emp - var_th) <= zmax * var_se))
    write_csv(os.path.join(out_dir, "brownian_moment.csv"),
              ["lhs_mean", "lhs_se", "rhs_mean", "rhs_se", "z"],
              [(res.lhs_mean, res.lhs_se, res.rhs_mean, res.rhs_se, res.z_score)])
    checks = [
        {"name": "second_moment_z", "value": res.z_score, "threshold": zmax,
         "pass": abs(res.z_score) <= zmax},
        {"name": "bridge_mean_3se", "value": list(map(float, mean_err)),
         "threshold": list(map(float, zmax * mean_se)), "pass": mean_ok},
        {"name": "bridge_variance_3se", "value": list(map(float, var_emp)),
         "threshold": var_th, "pass": var_ok},
    ]
    return {"result": res.__dict__, "checks": checks}, ["brownian_moment.csv"]


def _run_brownian_llt(params, engine, seed, out_dir, force):
    rows = brownian.continuous_llt_residual_scan(
        params["beta"], params["d"], params["times"], params["a"], params["A"],
        params["n_env"], params["n_paths"], params["h"], master_seed=seed,
        workers=engine["threads"])
    brownian.continuous_rows_to_csv(rows, os.path.join(out_dir, "brownian_llt.csv"))
    sup = {}
    for r in rows:
        if r.t not in sup or r.corrected > sup[r.t].corrected:
            sup[r.t] = r
    ts = sorted(sup)
    corrected = [sup[t].corrected for t in ts]
    decreasing = all(corrected[i + 1] < corrected[i] for i in range(len(ts) - 1))
    checks = [{"name": "corrected_sup_decreasing", "value": corrected,
               "threshold": "down", "pass": decreasing}]
    outputs = ["brownian_llt.csv"]
    if params.get("control_beta_zero", False):
        rows0 = brownian.continuous_llt_residual_scan(
            0.0, params["d"], params["times"], params["a"], params["A"],
            params.get("control_envs", 20), params["n_paths"], params["h"],
            master_seed=seed, workers=engine["threads"])
        brownian.continuous_rows_to_csv(rows0,
                                        os.path.join(out_dir, "brownian_llt_beta0.csv"))
        outputs.append("brownian_llt_beta0.csv")
        resid0 = max(abs(r.raw - r.noise_floor) for r in rows0)
        checks.append({"name": "beta0_calibration", "value": resid0,
                       "threshold": 1e-26, "pass": resid0 <= 1e-26})
    return {"sup": [{"t": t, "corrected": sup[t].corrected, "raw": sup[t].raw,
                     "noise_floor": sup[t].noise_floor, "se": sup[t].se}
                    for t in ts], "checks": checks}, outputs


def _run_i_n_scan(params, engine, seed, out_dir, force):
    rows = partition.i_n_disorder_scan(
        _disorder(params), params["d"], params["times"], params["n_seeds"],
        master_seed=seed, workers=engine["threads"],
        block_size=engine["block_size"])
    write_csv(os.path.join(out_dir, "i_n_scan.csv"),
              ["n", "mean_i_n", "se", "scaled"],
              [(r["n"], r["mean"], r["se"], r["scaled"]) for r in rows])
    scaled = [r["scaled"] for r in rows]
    ratio = max(scaled) / min(scaled)
    rmax = params.get("scaled_ratio_max", 2.0)
    checks = [{"name": "scaled_i_n_bounded", "value": ratio, "threshold": rmax,
               "pass": ratio <= rmax}]
    return {"scaled": scaled, "ratio": ratio, "checks": checks}, ["i_n_scan.csv"]


RUNNERS = {
    "moment-check": Runner(_run_moment_check, ["disorder", "d", "n", "n_seeds"]),
    "llt-scan": Runner(_run_llt_scan, ["disorder", "d", "times", "a", "A", "n_seeds"]),
    "zinf-scan": Runner(_run_zinf_scan, ["disorder", "d", "times", "a", "A",
                                         "n_seeds", "zinf_proxy_time"]),
    "llt-classical": Runner(_run_llt_classical, ["d", "n_min", "n_max", "A"]),
    "pi-d": Runner(_run_pi_d, ["d"]),
    "overlap-check": Runner(_run_overlap_check, ["d", "times", "lambda2"]),
    "brownian-moment": Runner(_run_brownian_moment,
                              ["beta", "d", "t", "h", "n_env", "n_paths", "n_pairs"]),
    "brownian-llt": Runner(_run_brownian_llt,
                           ["beta", "d", "times", "a", "A", "n_env", "n_paths", "h"]),
    "i-n-scan": Runner(_run_i_n_scan, ["disorder", "d", "times", "n_seeds"]),
}


# ---------------------------------------------------------------------------
# run persistence
# ---------------------------------------------------------------------------

def out_root(cli_out=None):
    return cli_out or os.environ.get("POLYMERLAB_OUT") or os.path.join(".", "runs")


def run(config_path, overrides=(), seed=None, threads=None, force=False,
        out=None):
    """Execute one experiment; returns the run directory path."""
    cfg = load_config(config_path, overrides, seed=seed, threads=threads)
    kind = cfg["experiment"]
    params = cfg.get("params", {})
    engine = cfg["engine"]
    est = _estimate_memory_gb(kind, params, engine)
    if est > engine["memory_cap_gb"]:
        raise ResourceLimitError(
            f"predicted memory {est:.1f} GB exceeds cap {engine['memory_cap_gb']} GB "
            "(raise engine.memory_cap_gb or lower threads)")
    n_tasks = params.get("n_seeds", params.get("n_env", 0))
    if n_tasks:
        _check_task_seeds(cfg["seed"], n_tasks)
    stamp = _dt.datetime.now(_dt.timezone.utc).strftime("%Y%m%dT%H%M%S%f")
    digest = hashlib.sha256(canonical_json(cfg).encode()).hexdigest()[:10]
    run_dir = os.path.join(out_root(out), f"{stamp}-{kind}-{digest}")
    if os.path.exists(run_dir):
        raise FileExistsError(f"run directory {run_dir} already exists "
                              "(runs are append-only)")
    os.makedirs(run_dir)
    summary, outputs = RUNNERS[kind].fn(params, engine, cfg["seed"], run_dir, force)
    write_json(os.path.join(run_dir, "summary.json"), summary)
    outputs = list(outputs) + ["summary.json"]
    manifest = {
        "run_id": os.path.basename(run_dir),
        "experiment": kind,
        "created_utc": stamp,
        "tool_version": __version__,
        "master_seed": cfg["seed"],
        "config": cfg,
        "outputs": {name: sha256_file(os.path.join(run_dir, name))
                    for name in outputs},
    }
    write_json(os.path.join(run_dir, "manifest.json"), manifest)
    return run_dir


def report(run_dir):
    """Validate a run directory and print its verdict table; returns pass flag."""
    man_path = os.path.join(run_dir, "manifest.json")
    if not os.path.exists(man_path):
        raise CorruptRunError(f"{run_dir}: no manifest.json (corrupt or empty run)")
    with open(man_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    for name, digest in manifest["outputs"].items():
        path = os.path.join(run_dir, name)
        if not os.path.exists(path):
            raise CorruptRunError(f"{run_dir}: missing output {name}")
        if sha256_file(path) != digest:
            raise CorruptRunError(f"{run_dir}: checksum mismatch on {name}")
    with open(os.path.join(run_dir, "summary.json"), "r", encoding="utf-8") as fh:
        summary = json.load(fh)
    print(f"run {manifest['run_id']} experiment={manifest['experiment']} "
          f"seed={manifest['master_seed']} tool={manifest['tool_version']}")
    checks = summary.get("checks", [])
    ok = True
    for c in checks:
        verdict = "PASS" if c["pass"] else "FAIL"
        ok &= bool(c["pass"])
        print(f"  [{verdict}] {c['name']}: value={c['value']} "
              f"threshold={c['threshold']}")
    for key, val in summary.items():
        if key != "checks":
            print(f"  {key}: {val}")
    print("verdict:", "PASS" if ok else "FAIL")
    return ok


def list_runs(out=None):
    root = out_root(out)
    if not os.path.isdir(root):
        return []
    rows = []
    for name in sorted(os.listdir(root)):
        man = os.path.join(root, name, "manifest.json")
        if os.path.exists(man):
            with open(man, "r", encoding="utf-8") as fh:
                m = json.load(fh)
            rows.append((name, m["experiment"], m["created_utc"]))
    return rows


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def _build_parser():
    p = argparse.ArgumentParser(prog="polymerlab",
                                description="directed-polymer numerical laboratory")
    sub = p.add_subparsers(dest="command", required=True)
    pr = sub.add_parser("run", help="execute an experiment from a config file")
    pr.add_argument("--config", required=True)
    pr.add_argument("--set", action="append", default=[], dest="overrides",
                    metavar="KEY=VALUE")
    pr.add_argument("--seed", type=int, default=None)
    pr.add_argument("--threads", type=int, default=None)
    pr.add_argument("--force", action="store_true",
                    help="override hypothesis gates (run outside the L2 region)")
    pr.add_argument("--out", default=None)
    pp = sub.add_parser("report", help="summarize a finished run")
    pp.add_argument("run_dir")
    pl_ = sub.add_parser("list", help="list runs under the output root")
    pl_.add_argument("--out", default=None)
    return p


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            run_dir = run(args.config, overrides=args.overrides, seed=args.seed,
                          threads=args.threads, force=args.force, out=args.out)
            print(run_dir)
            return EXIT_OK
        if args.command == "report":
            report(args.run_dir)
            return EXIT_OK
        if args.command == "list":
            for name, kind, created in list_runs(args.out):
                print(f"{name}  {kind}  {created}")
            return EXIT_OK
    except (ConfigError, FileNotFoundError, FileExistsError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except HypothesisGateError as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return EXIT_GATE
    except ResourceLimitError as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    except CorruptRunError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
