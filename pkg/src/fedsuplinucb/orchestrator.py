"""Outer loops: asynchronous / synchronous federated runs and the single-player baseline."""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from .bandit_core import (
    CORRUPTION_ROBUST,
    FRESH,
    LAZY,
    STANDARD,
    VARIANCE_ADAPTIVE,
    AlgoConfig,
    ClientState,
    ConfigError,
    _weighted_update,
    build_schedule,
    corruption_weight,
    layer_estimates,
    sigma_bar,
    sigma_bar_params,
    slucb_select,
)
from .environment import CorruptionAdversary, LinearEnv
from .metrics import ExperimentLog, RoundRecord
from .protocol import ServerState, sync_layers

RANDOM = "random"
ROUND_ROBIN = "round_robin"
CLICK_LEAVE = "click_leave"
CUSTOM = "custom"
PATTERNS = (RANDOM, ROUND_ROBIN, CLICK_LEAVE, CUSTOM)


@dataclass
class ArrivalPattern:
    kind: str
    schedule: np.ndarray

    def __len__(self) -> int:
        return len(self.schedule)


def _block_counts(M: int, T: int) -> np.ndarray:
    # earlier clients take the remainder
    counts = np.full(M, T // M)
    counts[: T % M] += 1
    return counts


def make_arrivals(kind: str, M: int, T: int, rng: np.random.Generator | None = None,
                  schedule=None) -> ArrivalPattern:
    """Client activation order; client ids are 0-based."""
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if M < 1:
        raise ValueError(f"M must be >= 1, got {M}")
    if kind == ROUND_ROBIN:
        sched = np.arange(T) % M
    elif kind == CLICK_LEAVE:
        sched = np.repeat(np.arange(M), _block_counts(M, T))
    elif kind == RANDOM:
        if rng is None:
            raise ValueError("random arrivals need an rng")
        sched = rng.permutation(np.repeat(np.arange(M), _block_counts(M, T)))
    elif kind == CUSTOM:
        if schedule is None:
            raise ValueError("custom arrivals need an explicit schedule")
        sched = np.asarray(schedule, dtype=int)
        if sched.shape != (T,):
            raise ValueError(f"custom schedule has length {sched.size}, expected {T}")
        if sched.min() < 0 or sched.max() >= M:
            raise ValueError("custom schedule references unknown clients")
    else:
        raise ValueError(f"unknown arrival pattern {kind!r}; choose from {PATTERNS}")
    return ArrivalPattern(kind, np.asarray(sched, dtype=int))


@dataclass
class RunHandle:
    cfg: AlgoConfig
    seed: int
    env: LinearEnv
    log: ExperimentLog = field(default_factory=ExperimentLog)


class _Tracker:
    """Shared per-pull bookkeeping for every run type."""

    def __init__(self, cfg, env, sched, track_coverage, keep_trajectory):
        self.cfg = cfg
        self.env = env
        self.sched = sched
        self.track_coverage = track_coverage and env.knows_theta
        self.keep_trajectory = keep_trajectory
        self.log = ExperimentLog()
        self.cov_checks = 0
        self.cov_violations = 0
        self.random_reward = 0.0

    def coverage(self, client: ClientState, X: np.ndarray, mode: str) -> None:
        truth = X @ self.env.theta
        for s in range(1, self.sched.S + 1):
            r_hat, w = layer_estimates(client.stats_for(s, mode), self.sched.alphas[s], X)
            self.cov_checks += X.shape[0]
            self.cov_violations += int(np.sum(np.abs(r_hat - truth) > w))

    def pull(self, t, client, X, mode, weight_fn):
        env = self.env
        vals = env.arm_values(X)
        best = float(np.max(vals))
        if self.track_coverage:
            self.coverage(client, X, mode)
        sel = slucb_select(client, self.sched, X, mode)
        a, s = sel.action, sel.layer
        x = X[a]
        observed, mean, sigma_t, c = env.reward(x, t, a)
        weight = weight_fn(sel, sigma_t)
        _weighted_update(client, s, x, observed, weight)
        rec = RoundRecord(
            t=t,
            client=client.id,
            layer=s,
            inst_regret=best - float(vals[a]),
            corruption=c,
            sigma_t=sigma_t,
            reward=observed,
            action=a,
        )
        if not env.knows_theta:
            self.random_reward += float(np.mean(vals))
        self.log.records.append(rec)
        if self.keep_trajectory:
            self.log.contexts.append(x.copy())
            self.log.weights.append(weight)
        return rec

    def finish(self, meta: dict) -> ExperimentLog:
        self.log.meta = meta
        if self.track_coverage:
            self.log.diagnostics["coverage_checks"] = self.cov_checks
            self.log.diagnostics["coverage_violations"] = self.cov_violations
        if not self.env.knows_theta:
            self.log.diagnostics["random_reward"] = self.random_reward
        if self.env.adversary is not None:
            self.log.diagnostics["adversary_spent"] = self.env.adversary.spent
        self.log.diagnostics["n_layers"] = self.sched.n_layers
        return self.log


def _weight_fn(cfg: AlgoConfig, sched):
    if cfg.variant == VARIANCE_ADAPTIVE:
        params = sigma_bar_params(cfg)

        def fn(sel, sigma_t):
            return 1.0 / sigma_bar(sigma_t, params, sel.norm_at_selection) ** 2
        return fn
    if cfg.variant == CORRUPTION_ROBUST:
        gamma = sched.corruption_gamma

        def fn(sel, sigma_t):
            return corruption_weight(gamma, sel.norm_at_selection)
        return fn
    return lambda sel, sigma_t: 1.0


def _meta(algo, cfg, env, sched, pattern=None, **extra):
    meta = {
        "algo": algo,
        "cfg": cfg.to_dict(),
        "env": env.describe(),
        "S": sched.S,
        "widths": [float(v) for v in sched.widths],
        "alphas": [float(v) for v in sched.alphas],
    }
    if pattern is not None:
        meta["pattern"] = pattern.kind
    meta.update(extra)
    return meta


def _run_async_core(cfg, env, pattern, algo, track_coverage, keep_trajectory):
    if len(pattern) != cfg.T:
        raise ValueError(f"arrival pattern has length {len(pattern)}, expected T={cfg.T}")
    sched = build_schedule(cfg)
    n_layers = sched.n_layers
    d = env.d
    clients = [ClientState.fresh(i, d, n_layers, cfg.ridge_lambda) for i in range(cfg.M)]
    server = ServerState.fresh(d, n_layers, cfg.ridge_lambda)
    C = cfg.async_threshold
    log_thresh = math.log1p(C) if math.isfinite(C) else math.inf
    all_layers = range(n_layers)
    tracker = _Tracker(cfg, env, sched, track_coverage, keep_trajectory)
    weight_fn = _weight_fn(cfg, sched)

    for t, i in enumerate(pattern.schedule, start=1):
        client = clients[int(i)]
        X = env.gen_contexts()
        rec = tracker.pull(t, client, X, LAZY, weight_fn)
        if client.log_det_ratio(rec.layer) > log_thresh:
            # one trigger syncs every layer of the triggering client
            sync_layers(server, [client], all_layers, t)
            rec.comm_event = True
            rec.comm_participants = 1
    return tracker.finish(_meta(algo, cfg, env, sched, pattern, C=C))


def run_async(cfg: AlgoConfig, env: LinearEnv, pattern: ArrivalPattern,
              track_coverage: bool = False, keep_trajectory: bool = True) -> ExperimentLog:
    """Asynchronous federated run: one client per round, lazy statistics."""
    if cfg.variant != STANDARD:
        raise ConfigError(f"run_async expects variant 'standard', got {cfg.variant!r}")
    return _run_async_core(cfg, env, pattern, "async", track_coverage, keep_trajectory)


def run_variance_adaptive(cfg: AlgoConfig, env: LinearEnv, pattern: ArrivalPattern,
                          track_coverage: bool = False, keep_trajectory: bool = True) -> ExperimentLog:
    if cfg.variant != VARIANCE_ADAPTIVE:
        raise ConfigError(f"variant must be 'variance_adaptive', got {cfg.variant!r}")
    if not env.noise.has_variance_channel:
        raise ValueError("variance-adaptive runs need an environment reporting sigma_t")
    return _run_async_core(cfg, env, pattern, "variance", track_coverage, keep_trajectory)


def run_corruption_robust(cfg: AlgoConfig, env: LinearEnv, adversary: CorruptionAdversary | None,
                          pattern: ArrivalPattern, track_coverage: bool = False,
                          keep_trajectory: bool = True) -> ExperimentLog:
    if cfg.variant != CORRUPTION_ROBUST:
        raise ConfigError(f"variant must be 'corruption_robust', got {cfg.variant!r}")
    if adversary is not None:
        if adversary.budget > cfg.Cp:
            raise ValueError(f"adversary budget {adversary.budget} exceeds Cp={cfg.Cp}")
        env.adversary = adversary
    return _run_async_core(cfg, env, pattern, "corruption", track_coverage, keep_trajectory)


def _run_sync_core(cfg, env, algo, track_coverage, keep_trajectory, D):
    sched = build_schedule(cfg)
    n_layers = sched.n_layers
    d = env.d
    M = cfg.M
    T_c = cfg.T_c
    clients = [ClientState.fresh(i, d, n_layers, cfg.ridge_lambda) for i in range(M)]
    server = ServerState.fresh(d, n_layers, cfg.ridge_lambda)
    t_last = [0] * n_layers
    tracker = _Tracker(cfg, env, sched, track_coverage, keep_trajectory)
    weight_fn = _weight_fn(cfg, sched)

    for t in range(1, T_c + 1):
        comm_layers = set()
        rec = None
        for client in clients:
            X = env.gen_contexts()
            rec = tracker.pull(t, client, X, FRESH, weight_fn)
            s = rec.layer
            ratio = client.log_det_ratio(s)
            if ratio > 0 and (t - t_last[s]) * ratio > D:
                comm_layers.add(s)
        if comm_layers:
            sync_layers(server, clients, comm_layers, t)
            for s in comm_layers:
                t_last[s] = t
            rec.comm_event = True
            rec.comm_participants = M
    return tracker.finish(_meta(algo, cfg, env, sched, D=D, T_c=T_c))


def run_sync(cfg: AlgoConfig, env: LinearEnv, track_coverage: bool = False,
             keep_trajectory: bool = True) -> ExperimentLog:
    """Synchronous federated run: all M clients pull each round, fresh statistics."""
    if cfg.variant != STANDARD:
        raise ConfigError(f"run_sync expects variant 'standard', got {cfg.variant!r}")
    return _run_sync_core(cfg, env, "sync", track_coverage, keep_trajectory, cfg.sync_threshold)


def run_baseline_suplinucb(cfg: AlgoConfig, env: LinearEnv, track_coverage: bool = False,
                           keep_trajectory: bool = True) -> ExperimentLog:
    """Single-player SupLinUCB: one client, fresh statistics, no communication."""
    cfg1 = dataclasses.replace(cfg, M=1, variant=STANDARD)
    return _run_sync_core(cfg1, env, "baseline", track_coverage, keep_trajectory, math.inf)
