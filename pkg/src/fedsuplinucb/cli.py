"""Command-line entry point: ``run``, ``sweep`` and ``report``.

Settings form one flat key space (``d``, ``K``, ``M``, ``T``, ``C``, ``D``,
``sigma``, ``pattern`` ...).  They come from a preset, then a config file,
then ``--override k=v`` flags; dotted keys such as ``env.sigma`` are accepted
and the section prefix is dropped.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .bandit_core import AlgoConfig, ConfigError
from .environment import CorruptionAdversary, LinearEnv, NoiseModel, load_context_stream, mixed_sigma
from .metrics import export, summarize
from .orchestrator import (
    make_arrivals,
    run_async,
    run_baseline_suplinucb,
    run_corruption_robust,
    run_sync,
    run_variance_adaptive,
)

logger = logging.getLogger("fedsuplinucb")

SUMMARY_SCHEMA = "fedsuplinucb.summary/1"
ALGOS = ("async", "sync", "variance", "corruption", "baseline")
SWEEPABLE = ("C", "D", "M", "sigma", "Cp")

DEFAULTS = {
    "d": 10,
    "K": 10,
    "M": 5,
    "T": 20000,
    "delta": 0.1,
    "C": None,
    "D": None,
    "R": 1.0,
    "Cp": 0.0,
    "ridge_lambda": 1.0,
    "alpha_scale": 1.0,
    "noise": "gaussian",
    "sigma": 0.1,
    "sigma_t": None,
    "sigma_low": None,
    "sigma_high": None,
    "theta_scale": 0.9,
    "pattern": "round_robin",
    "adversary": "sign_flip_prefix",
    "budget": None,
    "context_file": None,
    "track_coverage": False,
}

PRESETS = {
    "paper-synthetic": {"d": 25, "K": 20, "M": 20, "T": 40000, "sigma": 0.01},
    "desk": {"d": 10, "K": 10, "M": 5, "T": 20000, "sigma": 0.1},
}

INT_KEYS = {"d", "K", "M", "T"}
FLOAT_KEYS = {"delta", "C", "D", "R", "Cp", "ridge_lambda", "alpha_scale", "sigma", "sigma_t",
              "sigma_low", "sigma_high", "theta_scale", "budget"}
BOOL_KEYS = {"track_coverage"}


class UsageError(Exception):
    pass


def _coerce(key: str, raw):
    if key not in DEFAULTS:
        raise UsageError(f"unknown setting {key!r}")
    if raw is None or (isinstance(raw, str) and raw.lower() in ("none", "")):
        return None
    try:
        if key in INT_KEYS:
            return int(raw)
        if key in FLOAT_KEYS:
            return float(raw)
        if key in BOOL_KEYS:
            if isinstance(raw, bool):
                return raw
            return str(raw).lower() in ("1", "true", "yes", "on")
    except ValueError:
        raise UsageError(f"setting {key!r}: cannot parse {raw!r}") from None
    return str(raw)


def _strip_section(key: str) -> str:
    return key.rsplit(".", 1)[-1].strip()


def parse_config_text(text: str) -> dict:
    """``key = value`` lines, ``#`` comments, optional ``[section]`` headers."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line or (line.startswith("[") and line.endswith("]")):
            continue
        if "=" not in line:
            raise UsageError(f"config line {lineno}: expected key = value")
        k, v = line.split("=", 1)
        k = _strip_section(k)
        out[k] = _coerce(k, v.strip())
    return out


def format_config(settings: dict) -> str:
    lines = []
    for k in DEFAULTS:
        v = settings.get(k)
        lines.append(f"{k} = {'none' if v is None else repr(v) if isinstance(v, float) else v}")
    return "\n".join(lines) + "\n"


def resolve_settings(preset: str | None, config: str | None, overrides: list[str]) -> dict:
    settings = dict(DEFAULTS)
    if preset is not None:
        if preset not in PRESETS:
            raise UsageError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        settings.update(PRESETS[preset])
    if config is not None:
        path = Path(config)
        if not path.exists():
            raise UsageError(f"config file not found: {path}")
        settings.update(parse_config_text(path.read_text(encoding="utf-8")))
    for item in overrides or []:
        if "=" not in item:
            raise UsageError(f"--override expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        k = _strip_section(k)
        settings[k] = _coerce(k, v.strip())
    return settings


def parse_seeds(text: str) -> list[int]:
    text = text.strip()
    if ".." in text:
        lo, hi = text.split("..", 1)
        seeds = list(range(int(lo), int(hi) + 1))
    else:
        seeds = [int(s) for s in text.split(",") if s.strip()]
    if not seeds:
        raise UsageError("seed list is empty")
    return seeds


def _variant_for(algo: str) -> str:
    return {"variance": "variance_adaptive", "corruption": "corruption_robust"}.get(algo, "standard")


def build_config(algo: str, st: dict) -> AlgoConfig:
    return AlgoConfig(
        d=st["d"], K=st["K"], M=1 if algo == "baseline" else st["M"], T=st["T"],
        delta=st["delta"], variant=_variant_for(algo), C=st["C"], D=st["D"], R=st["R"],
        Cp=st["Cp"], ridge_lambda=st["ridge_lambda"], alpha_scale=st["alpha_scale"],
    )


def build_env(algo: str, st: dict, seed: int) -> LinearEnv:
    if algo == "variance":
        R = st["R"]
        if st["sigma_low"] is not None and st["sigma_high"] is not None:
            sched = mixed_sigma(st["sigma_low"], st["sigma_high"])
        else:
            sched = R if st["sigma_t"] is None else st["sigma_t"]
        noise = NoiseModel(kind="bounded_hetero", R=R, sigma_schedule=sched)
    else:
        noise = NoiseModel(kind=st["noise"], sigma=st["sigma"], R=st["R"])
    adversary = None
    if algo == "corruption" or (st["Cp"] and st["Cp"] > 0):
        budget = st["Cp"] if st["budget"] is None else st["budget"]
        if budget > 0 and st["adversary"] not in (None, "none"):
            adversary = CorruptionAdversary(st["adversary"], budget)
    env = LinearEnv.synthetic(st["d"], st["K"], seed, noise, theta_scale=st["theta_scale"], adversary=adversary)
    if st["context_file"]:
        stream = load_context_stream(st["context_file"], d=st["d"])
        env.stream = stream
        if stream.has_rewards:
            env.theta = None
    return env


def execute(algo: str, st: dict, seed: int):
    if algo not in ALGOS:
        raise UsageError(f"unknown algo {algo!r}; choose from {ALGOS}")
    cfg = build_config(algo, st)
    env = build_env(algo, st, seed)
    arrivals_rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(4)[3])
    track = bool(st["track_coverage"])
    if algo == "sync":
        log = run_sync(cfg, env, track_coverage=track, keep_trajectory=False)
    elif algo == "baseline":
        log = run_baseline_suplinucb(cfg, env, track_coverage=track, keep_trajectory=False)
    else:
        pattern = make_arrivals(st["pattern"], cfg.M, cfg.T, arrivals_rng)
        if algo == "async":
            log = run_async(cfg, env, pattern, track_coverage=track, keep_trajectory=False)
        elif algo == "variance":
            log = run_variance_adaptive(cfg, env, pattern, track_coverage=track, keep_trajectory=False)
        else:
            log = run_corruption_robust(cfg, env, env.adversary, pattern, track_coverage=track,
                                        keep_trajectory=False)
    log.meta["seed"] = seed
    log.meta["settings"] = dict(st)
    return log


def _job(args):
    algo, st, seed, out_dir, fmt = args
    t0 = time.perf_counter()
    log = execute(algo, st, seed)
    wall = time.perf_counter() - t0
    path = Path(out_dir) / f"{algo}_seed{seed}.{fmt}"
    export(log, path, fmt)
    row = summarize(log)
    row.update({
        "algo": algo,
        "seed": seed,
        "M": log.meta["cfg"]["M"],
        "T": log.meta["cfg"]["T"],
        "wall_time": wall,
        "log_path": str(path),
        "meta": log.meta,
    })
    return row


def _map(jobs: int, args_list):
    if jobs > 1 and len(args_list) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_job, args_list))
    return [_job(a) for a in args_list]


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, default=_json_default), encoding="utf-8")


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


def cmd_run(args) -> int:
    st = resolve_settings(args.preset, args.config, args.override)
    seeds = parse_seeds(args.seeds)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    build_config(args.algo, st)  # fail fast on bad settings
    (out / "resolved.cfg").write_text(format_config(st), encoding="utf-8")
    rows = _map(args.jobs, [(args.algo, st, s, str(out), args.format) for s in seeds])
    _write_json(out / "summary.json", {"schema": SUMMARY_SCHEMA, "algo": args.algo, "settings": st, "runs": rows})
    for r in rows:
        print(f"{r['algo']} seed={r['seed']} regret={r['final_regret']:.3f} "
              f"comm_batches={r['comm_batches']} comm_exchanges={r['comm_exchanges']} "
              f"wall={r['wall_time']:.2f}s")
    return 0


def cmd_sweep(args) -> int:
    if args.axis not in SWEEPABLE:
        raise UsageError(f"axis {args.axis!r} is not sweepable; choose from {SWEEPABLE}")
    try:
        values = [float(v) for v in args.values.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"sweep values must be numeric, got {args.values!r}") from None
    if not values:
        raise UsageError("sweep value list is empty")
    base = resolve_settings(args.preset, args.config, args.override)
    seeds = parse_seeds(args.seeds)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    jobs = []
    for v in values:
        st = dict(base)
        st[args.axis] = _coerce(args.axis, int(v) if args.axis == "M" else v)
        if args.axis == "Cp" and args.algo == "corruption":
            st["budget"] = None
        build_config(args.algo, st)
        sub = out / f"{args.axis}={v:g}"
        sub.mkdir(exist_ok=True)
        jobs += [(args.algo, st, s, str(sub), "csv") for s in seeds]
    rows = _map(args.jobs, jobs)
    table = []
    for r in rows:
        st = r["meta"]["settings"]
        table.append({
            "value": st[args.axis],
            "seed": r["seed"],
            "M": r["M"],
            "T_c": r["T"] // r["M"],
            "comm_batches": r["comm_batches"],
            "comm_exchanges": r["comm_exchanges"],
            "final_regret": r["final_regret"],
            "per_client_regret": r["per_client_regret"],
        })
    _write_json(out / "sweep.json", {"schema": SUMMARY_SCHEMA, "algo": args.algo, "axis": args.axis,
                                      "rows": table, "runs": rows})
    for row in table:
        print(f"{args.axis}={row['value']} seed={row['seed']} comm={row['comm_exchanges']} "
              f"regret={row['final_regret']:.3f}")
    return 0


def load_summary(path) -> list[dict]:
    path = Path(path)
    if not path.exists():
        raise UsageError(f"summary file not found: {path}")
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(payload, dict) or payload.get("schema") != SUMMARY_SCHEMA or "runs" not in payload:
        raise UsageError(f"{path}: schema mismatch (expected {SUMMARY_SCHEMA})")
    rows = []
    for r in payload["runs"]:
        missing = {"algo", "M", "final_regret", "comm_batches", "comm_exchanges"} - set(r)
        if missing:
            raise UsageError(f"{path}: run record missing {sorted(missing)}")
        rows.append(r)
    return rows


def _slope_for(row: dict) -> float:
    if "regret_slope" in row:
        return row["regret_slope"]
    return math.nan


def report_rows(paths) -> list[dict]:
    table = []
    for p in paths:
        runs = load_summary(p)
        by_algo: dict[tuple, list[dict]] = {}
        for r in runs:
            by_algo.setdefault((r["algo"], r["M"]), []).append(r)
        for (algo, M), rs in by_algo.items():
            table.append({
                "source": str(p),
                "algo": algo,
                "M": M,
                "seeds": len(rs),
                "final_regret": float(np.median([r["final_regret"] for r in rs])),
                "comm_batches": float(np.median([r["comm_batches"] for r in rs])),
                "comm_exchanges": float(np.median([r["comm_exchanges"] for r in rs])),
                "regret_slope": float(np.median([_slope_for(r) for r in rs])),
            })
    return table


def cmd_report(args) -> int:
    table = report_rows(args.paths)
    header = f"{'algo':<12}{'M':>4}{'seeds':>6}{'final_regret':>14}{'comm_batch':>12}{'comm_exch':>12}{'slope':>8}"
    print(header)
    for r in table:
        print(f"{r['algo']:<12}{r['M']:>4}{r['seeds']:>6}{r['final_regret']:>14.3f}"
              f"{r['comm_batches']:>12.1f}{r['comm_exchanges']:>12.1f}{r['regret_slope']:>8.3f}")
    if args.out:
        _write_json(Path(args.out), {"rows": table})
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fedsuplinucb", description="Federated SupLinUCB simulations")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--algo", required=True, choices=ALGOS)
        sp.add_argument("--preset", default="desk", choices=sorted(PRESETS))
        sp.add_argument("--config", default=None, help="key = value settings file")
        sp.add_argument("--seeds", default="1", help="'1..5' or '1,2,3'")
        sp.add_argument("--override", action="append", default=[], metavar="K=V")
        sp.add_argument("--out", default="runs")
        sp.add_argument("--jobs", type=int, default=1)

    r = sub.add_parser("run", help="run one configuration over several seeds")
    common(r)
    r.add_argument("--format", choices=("csv", "json"), default="csv")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="vary one numeric setting")
    common(s)
    s.add_argument("--axis", required=True)
    s.add_argument("--values", required=True, help="comma-separated numbers")
    s.set_defaults(func=cmd_sweep)

    rp = sub.add_parser("report", help="merge summary files into one table")
    rp.add_argument("paths", nargs="+")
    rp.add_argument("--out", default=None)
    rp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
