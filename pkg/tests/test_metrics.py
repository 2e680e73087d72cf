import json

import numpy as np
import pytest

from fedsuplinucb.metrics import (
    CSV_COLUMNS,
    ExperimentLog,
    RoundRecord,
    comm_cost,
    cumulative_regret,
    elliptical_potential,
    elliptical_potential_holds,
    export,
    loglog_slope,
    read_csv,
    read_json,
    summarize,
)


def make_log(inst, clients=None, comm=None):
    clients = clients or [0] * len(inst)
    comm = comm or [0] * len(inst)
    recs = [
        RoundRecord(t=i + 1, client=c, layer=0, inst_regret=r, comm_event=n > 0, comm_participants=n)
        for i, (r, c, n) in enumerate(zip(inst, clients, comm))
    ]
    return ExperimentLog(records=recs, meta={"seed": 4, "cfg": {"d": 2}})


def test_cumulative_regret_examples():
    assert cumulative_regret(ExperimentLog()) == []
    assert cumulative_regret(make_log([0.5, 0.0, 0.25])) == [(1, 0.5), (2, 0.5), (3, 0.75)]


def test_partition_identity():
    rng = np.random.default_rng(0)
    inst = rng.random(50).tolist()
    clients = rng.integers(0, 3, 50).tolist()
    log = make_log(inst, clients)
    per_client = sum(cumulative_regret(log, c)[-1][1] for c in set(clients))
    assert per_client == pytest.approx(cumulative_regret(log)[-1][1], abs=1e-12)
    assert sum(log.per_client_regret().values()) == pytest.approx(log.total_regret, abs=1e-12)


def test_comm_cost_series():
    assert [v for _, v in comm_cost(make_log([0.0] * 4))["batch"]] == [0, 0, 0, 0]
    cc = comm_cost(make_log([0.0] * 3, comm=[1, 0, 3]))
    assert [v for _, v in cc["batch"]] == [1, 1, 2]
    assert [v for _, v in cc["exchange"]] == [1, 1, 4]


def test_csv_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    inst = (rng.random(3) / 3).tolist()
    log = make_log(inst, comm=[0, 2, 0])
    log.records[1].sigma_t = 0.1 + 1e-17
    log.records[2].corruption = -1 / 3
    p = tmp_path / "log.csv"
    export(log, p, "csv")
    lines = p.read_text().splitlines()
    assert lines[0] == ",".join(CSV_COLUMNS) and len(lines) == 4
    rows = read_csv(p)
    for row, rec in zip(rows, log.records):
        assert row["inst_regret"] == rec.inst_regret
        assert row["corruption"] == rec.corruption
        assert row["sigma_t"] == rec.sigma_t
    assert rows[-1]["cum_regret"] == cumulative_regret(log)[-1][1]
    assert rows[-1]["comm_exchange_cum"] == 2


def test_json_meta(tmp_path):
    log = make_log([0.1, 0.2])
    p = tmp_path / "log.json"
    export(log, p, "json")
    payload = json.loads(p.read_text())
    assert payload["meta"]["seed"] == 4 and payload["meta"]["cfg"] == {"d": 2}
    back = read_json(p)
    assert [r.inst_regret for r in back.records] == [0.1, 0.2]


def test_export_errors(tmp_path):
    with pytest.raises(ValueError):
        export(make_log([0.0]), tmp_path / "x", "xml")
    with pytest.raises(OSError, match="missing"):
        export(make_log([0.0]), tmp_path / "missing" / "x.csv", "csv")


def test_loglog_slope_sqrt():
    t = np.arange(1, 10_001)
    assert loglog_slope(np.sqrt(t)) == pytest.approx(0.5, abs=1e-6)
    assert loglog_slope(3.0 * t) == pytest.approx(1.0, abs=1e-6)


def test_summarize():
    s = summarize(make_log([0.5, 0.5, 0.0, 1.0], clients=[0, 1, 0, 1], comm=[0, 2, 0, 0]))
    assert s["final_regret"] == 2.0 and s["per_client_regret"] == 1.0
    assert s["comm_batches"] == 1 and s["comm_exchanges"] == 2 and s["pulls"] == 4


def test_elliptical_potential_replay():
    rng = np.random.default_rng(2)
    log = make_log([0.0] * 100, clients=rng.integers(0, 2, 100).tolist())
    for r in log.records:
        r.layer = int(rng.integers(0, 3))
        x = rng.standard_normal(3)
        log.contexts.append(x / np.linalg.norm(x))
        log.weights.append(float(rng.uniform(0.1, 4)))
    groups = elliptical_potential(log)
    assert {g["group"] for g in groups} <= {0, 1, 2}
    assert elliptical_potential_holds(log)
    assert elliptical_potential_holds(log, per_client=True)
    with pytest.raises(ValueError):
        elliptical_potential(make_log([0.0]))
