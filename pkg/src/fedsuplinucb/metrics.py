"""Per-round experiment logs, regret/communication series and CSV/JSON export."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

CSV_COLUMNS = (
    "t",
    "client",
    "layer",
    "inst_regret",
    "cum_regret",
    "comm_batch_cum",
    "comm_exchange_cum",
    "corruption",
    "sigma_t",
)


@dataclass
class RoundRecord:
    t: int
    client: int
    layer: int
    inst_regret: float
    comm_event: bool = False
    comm_participants: int = 0
    corruption: float = 0.0
    sigma_t: float | None = None
    reward: float = math.nan
    action: int = -1


@dataclass
class ExperimentLog:
    records: list[RoundRecord] = field(default_factory=list)
    meta: dict = field(default_factory=dict)
    # pulled contexts, weights and layers in pull order, for replay checks
    contexts: list[np.ndarray] = field(default_factory=list, repr=False)
    weights: list[float] = field(default_factory=list, repr=False)
    diagnostics: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        if name == "sigma_t":
            return np.array([math.nan if r.sigma_t is None else r.sigma_t for r in self.records])
        return np.array([getattr(r, name) for r in self.records])

    @property
    def total_regret(self) -> float:
        return float(math.fsum(r.inst_regret for r in self.records))

    @property
    def comm_batches(self) -> int:
        return sum(1 for r in self.records if r.comm_event)

    @property
    def comm_exchanges(self) -> int:
        return sum(r.comm_participants for r in self.records if r.comm_event)

    def per_client_regret(self) -> dict[int, float]:
        out: dict[int, float] = {}
        for r in self.records:
            out[r.client] = out.get(r.client, 0.0) + r.inst_regret
        return dict(sorted(out.items()))


def cumulative_regret(log: ExperimentLog, client: int | None = None) -> list[tuple[int, float]]:
    """Running regret sum, indexed by pull count (1-based)."""
    out = []
    total = 0.0
    n = 0
    for r in log.records:
        if client is not None and r.client != client:
            continue
        n += 1
        total += r.inst_regret
        out.append((n, total))
    return out


def comm_cost(log: ExperimentLog) -> dict[str, list[tuple[int, int]]]:
    """Cumulative batch and per-client exchange counts, indexed by pull count."""
    batch, exch = 0, 0
    b_series, e_series = [], []
    for n, r in enumerate(log.records, start=1):
        if r.comm_event:
            batch += 1
            exch += r.comm_participants
        b_series.append((n, batch))
        e_series.append((n, exch))
    return {"batch": b_series, "exchange": e_series}


def loglog_slope(cum: np.ndarray, start_frac: float = 0.5) -> float:
    """Least-squares slope of ``log R_t`` against ``log t`` over the tail."""
    cum = np.asarray(cum, dtype=float)
    n = cum.size
    t = np.arange(1, n + 1)
    lo = max(int(n * start_frac), 1) - 1
    tt, rr = t[lo:], cum[lo:]
    ok = rr > 0
    if ok.sum() < 2:
        return 0.0
    slope, _ = np.polyfit(np.log(tt[ok]), np.log(rr[ok]), 1)
    return float(slope)


def _fmt(v: float) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    return repr(float(v)) if isinstance(v, float) else str(v)


def _rows(log: ExperimentLog):
    cum = 0.0
    batch = 0
    exch = 0
    for r in log.records:
        cum += r.inst_regret
        if r.comm_event:
            batch += 1
            exch += r.comm_participants
        yield (r.t, r.client, r.layer, float(r.inst_regret), cum, batch, exch, float(r.corruption), r.sigma_t)


def export(log: ExperimentLog, path, format: str = "csv") -> None:
    """Write the log as CSV (fixed column order) or JSON (records plus meta).

    Floats are written with ``repr`` (17 significant digits at most), which
    round-trips 64-bit values exactly.
    """
    path = Path(path)
    try:
        if format == "csv":
            with path.open("w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh)
                w.writerow(CSV_COLUMNS)
                for row in _rows(log):
                    w.writerow([_fmt(v) if isinstance(v, float) or v is None else v for v in row])
        elif format == "json":
            payload = {
                "meta": log.meta,
                "diagnostics": log.diagnostics,
                "columns": list(CSV_COLUMNS),
                "records": [asdict(r) for r in log.records],
            }
            with path.open("w", encoding="utf-8") as fh:
                json.dump(payload, fh, default=_json_default)
        else:
            raise ValueError(f"unknown export format {format!r}")
    except OSError as exc:
        raise OSError(f"failed to write {path}: {exc}") from exc


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def read_csv(path) -> list[dict]:
    """Parse an exported CSV back into typed rows."""
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
            raise ValueError(f"{path}: unexpected columns {reader.fieldnames}")
        for row in reader:
            out.append({
                "t": int(row["t"]),
                "client": int(row["client"]),
                "layer": int(row["layer"]),
                "inst_regret": float(row["inst_regret"]),
                "cum_regret": float(row["cum_regret"]),
                "comm_batch_cum": int(row["comm_batch_cum"]),
                "comm_exchange_cum": int(row["comm_exchange_cum"]),
                "corruption": float(row["corruption"]),
                "sigma_t": float(row["sigma_t"]) if row["sigma_t"] else None,
            })
    return out


def read_json(path) -> ExperimentLog:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    records = [RoundRecord(**r) for r in payload["records"]]
    return ExperimentLog(records=records, meta=payload.get("meta", {}), diagnostics=payload.get("diagnostics", {}))


def summarize(log: ExperimentLog) -> dict:
    inst = log.column("inst_regret") if log.records else np.zeros(0)
    cum = np.cumsum(inst)
    per_client = log.per_client_regret()
    M = max(len(per_client), 1)
    out = {
        "final_regret": float(cum[-1]) if cum.size else 0.0,
        "per_client_regret": float(cum[-1]) / M if cum.size else 0.0,
        "comm_batches": log.comm_batches,
        "comm_exchanges": log.comm_exchanges,
        "pulls": len(log.records),
        "regret_slope": loglog_slope(cum) if cum.size > 2 else 0.0,
    }
    rewards = log.column("reward") if log.records else np.zeros(0)
    if "random_reward" in log.diagnostics and rewards.size:
        base = log.diagnostics["random_reward"]
        out["normalized_reward"] = float(np.sum(rewards) / base) if base else math.nan
    return out


def elliptical_potential(log: ExperimentLog, per_client: bool = False, ridge_lambda: float = 1.0) -> list[dict]:
    """Replay logged pulls per layer and compare the potential sum to its log-det bound.

    Each group (a layer, or a (client, layer) pair) starts from ``ridge_lambda * I``
    and absorbs ``w x x^T`` in pull order. Returns one dict per group with
    ``potential`` (sum of ``min(1, w ||x||^2_{A^-1})``) and ``bound``
    (``2 * (log det A_final - log det A_init)``).
    """
    if len(log.contexts) != len(log.records):
        raise ValueError("log has no trajectory; run with keep_trajectory=True")
    from .linalg import ridge_init

    groups: dict = {}
    for rec, x, w in zip(log.records, log.contexts, log.weights):
        key = (rec.client, rec.layer) if per_client else rec.layer
        g = groups.get(key)
        if g is None:
            s = ridge_init(len(x), ridge_lambda)
            g = groups[key] = {"stats": s, "init": s.log_det, "potential": 0.0}
        s = g["stats"]
        z = math.sqrt(w) * np.asarray(x, dtype=float)
        g["potential"] += min(1.0, float(z @ s.gram_inv @ z))
        s.gram += np.outer(z, z)
        s.refactorize()
    out = []
    for key, g in sorted(groups.items()):
        out.append({
            "group": key,
            "potential": g["potential"],
            "bound": 2.0 * (g["stats"].log_det - g["init"]),
        })
    return out


def elliptical_potential_holds(log: ExperimentLog, tol: float = 1e-6, **kw) -> bool:
    return all(g["potential"] <= g["bound"] + tol for g in elliptical_potential(log, **kw))
