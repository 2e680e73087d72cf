import math

import numpy as np
import pytest

from fedsuplinucb.bandit_core import (
    CORRUPTION_ROBUST,
    VARIANCE_ADAPTIVE,
    AlgoConfig,
    ConfigError,
    build_schedule,
)
from fedsuplinucb.environment import (
    ContextStream,
    CorruptionAdversary,
    LinearEnv,
    NoiseModel,
    sample_sphere,
)
from fedsuplinucb.metrics import elliptical_potential_holds
from oracles import independent_oracle
from fedsuplinucb.orchestrator import (
    make_arrivals,
    run_async,
    run_baseline_suplinucb,
    run_corruption_robust,
    run_sync,
    run_variance_adaptive,
)


def trace(log):
    return [(r.t, r.client, r.layer, r.action, r.inst_regret, r.comm_event) for r in log.records]


def env_for(seed, d=4, K=5, sigma=0.1):
    return LinearEnv.synthetic(d=d, K=K, seed=seed, noise=NoiseModel(kind="gaussian", sigma=sigma))


# --- arrivals --------------------------------------------------------------

def test_arrivals_shapes():
    assert make_arrivals("round_robin", 3, 7).schedule.tolist() == [0, 1, 2, 0, 1, 2, 0]
    assert make_arrivals("click_leave", 3, 7).schedule.tolist() == [0, 0, 0, 1, 1, 2, 2]
    rnd = make_arrivals("random", 3, 7, rng=np.random.default_rng(0)).schedule
    assert sorted(rnd.tolist()) == [0, 0, 0, 1, 1, 2, 2]
    assert make_arrivals("custom", 2, 3, schedule=[1, 1, 0]).schedule.tolist() == [1, 1, 0]


@pytest.mark.parametrize("kw", [
    dict(kind="custom", M=2, T=3, schedule=[0, 2, 1]),
    dict(kind="custom", M=2, T=3, schedule=[0, 1]),
    dict(kind="random", M=2, T=3),
    dict(kind="zigzag", M=2, T=3),
    dict(kind="round_robin", M=2, T=0),
])
def test_arrivals_errors(kw):
    with pytest.raises(ValueError):
        make_arrivals(**kw)


# --- equivalences ----------------------------------------------------------

@pytest.mark.parametrize("scale", [1.0, 0.05])
def test_async_single_client_zero_threshold_matches_baseline(scale):
    cfg = AlgoConfig(d=4, K=5, M=1, T=600, C=0.0, alpha_scale=scale)
    a = run_async(cfg, env_for(3), make_arrivals("round_robin", 1, 600))
    b = run_baseline_suplinucb(cfg, env_for(3))
    assert [(r.layer, r.action) for r in a.records] == [(r.layer, r.action) for r in b.records]
    np.testing.assert_allclose(a.column("inst_regret"), b.column("inst_regret"), atol=1e-6)
    assert a.comm_batches == 600 and b.comm_batches == 0


def test_async_infinite_threshold_never_communicates():
    cfg = AlgoConfig(d=3, K=4, M=3, T=300, C=math.inf)
    log = run_async(cfg, env_for(1, d=3, K=4), make_arrivals("round_robin", 3, 300))
    assert log.comm_batches == 0 and log.comm_exchanges == 0


def test_sync_infinite_threshold_equals_independent_runs():
    d, K, M, T_c = 3, 4, 3, 150
    rng = np.random.default_rng(8)
    theta = 0.9 * sample_sphere(rng, 1, d)[0]
    rounds = [sample_sphere(rng, K, d) for _ in range(M * T_c)]
    env = LinearEnv(theta=theta, K=K, noise=NoiseModel(kind="none"), stream=ContextStream(list(rounds)))
    cfg = AlgoConfig(d=d, K=K, M=M, T=M * T_c, D=math.inf, alpha_scale=0.05)
    log = run_sync(cfg, env)
    assert log.comm_batches == 0
    assert max(r.layer for r in log.records) >= 1
    got = {(r.t, r.client): (r.layer, r.action) for r in log.records}
    assert got == independent_oracle(theta, rounds, M, T_c, build_schedule(cfg))


@pytest.mark.parametrize("scale", [1.0, 0.05])
def test_sync_single_client_matches_baseline(scale):
    cfg = AlgoConfig(d=4, K=5, M=1, T=400, D=0.0, alpha_scale=scale)
    a = run_sync(cfg, env_for(5))
    b = run_baseline_suplinucb(cfg, env_for(5))
    assert [(r.layer, r.action) for r in a.records] == [(r.layer, r.action) for r in b.records]
    np.testing.assert_allclose(a.column("inst_regret"), b.column("inst_regret"), atol=1e-6)


def test_corruption_zero_budget_is_standard():
    pat = make_arrivals("round_robin", 2, 400)
    std = run_async(AlgoConfig(d=4, K=5, M=2, T=400), env_for(2), pat)
    rob = run_corruption_robust(AlgoConfig(d=4, K=5, M=2, T=400, variant=CORRUPTION_ROBUST, Cp=0.0),
                                env_for(2), None, pat)
    assert trace(std) == trace(rob)


def test_corruption_budget_respected():
    cfg = AlgoConfig(d=4, K=5, M=2, T=300, variant=CORRUPTION_ROBUST, Cp=5.0)
    adv = CorruptionAdversary("sign_flip_prefix", budget=5.0)
    log = run_corruption_robust(cfg, env_for(2), adv, make_arrivals("round_robin", 2, 300))
    spent = math.fsum(abs(c) for c in log.column("corruption"))
    assert spent == pytest.approx(log.diagnostics["adversary_spent"], abs=1e-12)
    assert spent <= 5.0 + 1e-12
    assert max(log.weights) <= 1.0
    with pytest.raises(ValueError):
        run_corruption_robust(cfg, env_for(2), CorruptionAdversary(budget=6.0), make_arrivals("round_robin", 2, 300))


def test_variance_adaptive_runs_and_weights_bounded():
    T = 300
    cfg = AlgoConfig(d=3, K=4, M=2, T=T, variant=VARIANCE_ADAPTIVE, R=1.0)
    env = LinearEnv.synthetic(d=3, K=4, seed=1, noise=NoiseModel(kind="bounded_hetero", R=1.0, sigma_schedule=0.01))
    log = run_variance_adaptive(cfg, env, make_arrivals("random", 2, T, rng=np.random.default_rng(0)))
    assert len(log) == T
    assert max(log.weights) <= T * (1 + 1e-12)
    assert np.all(log.column("sigma_t") == 0.01)
    with pytest.raises(ValueError):
        run_variance_adaptive(cfg, env_for(1, d=3, K=4), make_arrivals("random", 2, T, rng=np.random.default_rng(0)))


def test_variant_mismatch_errors():
    with pytest.raises(ConfigError):
        run_async(AlgoConfig(d=2, K=2, M=1, T=10, variant=CORRUPTION_ROBUST), env_for(0, d=2, K=2),
                  make_arrivals("round_robin", 1, 10))


# --- run properties --------------------------------------------------------

def test_log_determinism():
    cfg = AlgoConfig(d=4, K=5, M=3, T=300)
    a = run_async(cfg, env_for(4), make_arrivals("random", 3, 300, rng=np.random.default_rng(4)))
    b = run_async(cfg, env_for(4), make_arrivals("random", 3, 300, rng=np.random.default_rng(4)))
    assert trace(a) == trace(b)


def test_single_arm_zero_regret():
    cfg = AlgoConfig(d=3, K=1, M=2, T=100)
    log = run_async(cfg, env_for(0, d=3, K=1), make_arrivals("round_robin", 2, 100))
    assert log.total_regret == 0.0


@pytest.mark.parametrize("runner", ["async", "sync", "baseline"])
def test_log_shape_and_potential(runner):
    M, T = 3, 300
    cfg = AlgoConfig(d=4, K=5, M=M, T=T)
    if runner == "async":
        log = run_async(cfg, env_for(6), make_arrivals("round_robin", M, T))
    elif runner == "sync":
        log = run_sync(cfg, env_for(6))
    else:
        log = run_baseline_suplinucb(cfg, env_for(6))
    keys = [(r.t, r.client) for r in log.records]
    assert keys == sorted(keys) and len(set(keys)) == len(keys)
    inst = log.column("inst_regret")
    assert np.all(inst >= 0) and np.all(inst <= 2)
    assert elliptical_potential_holds(log)
    assert elliptical_potential_holds(log, per_client=True)


def test_sync_round_accounting():
    M, T_c = 3, 200
    log = run_sync(AlgoConfig(d=4, K=5, M=M, T=M * T_c, D=0.0), env_for(9))
    assert len(log) == M * T_c
    assert log.comm_batches > 0
    assert log.comm_exchanges == M * log.comm_batches


def test_coverage_diagnostics():
    log = run_async(AlgoConfig(d=4, K=5, M=2, T=200), env_for(1), make_arrivals("round_robin", 2, 200),
                    track_coverage=True)
    assert log.diagnostics["coverage_checks"] > 0
    assert 0 <= log.diagnostics["coverage_violations"] <= log.diagnostics["coverage_checks"]
