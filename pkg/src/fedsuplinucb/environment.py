"""Linear bandit environments, noise models and reward-corruption adversaries."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

SPHERE_IID = "sphere_iid"
FILE_STREAM = "file_stream"


class EnvError(RuntimeError):
    pass


class StreamExhausted(EnvError):
    pass


class ContextFileError(ValueError):
    pass


class BudgetExceeded(EnvError):
    pass


def sample_sphere(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    g = rng.standard_normal((n, d))
    norms = np.linalg.norm(g, axis=1, keepdims=True)
    # a zero draw has probability zero; guard anyway
    norms[norms == 0] = 1.0
    return g / norms


def random_theta(rng: np.random.Generator, d: int, scale: float = 0.9) -> np.ndarray:
    if not 0 <= scale <= 1:
        raise ValueError(f"theta scale must lie in [0, 1], got {scale}")
    return scale * sample_sphere(rng, 1, d)[0]


# --- noise -----------------------------------------------------------------

@dataclass
class NoiseModel:
    """Reward noise.

    ``kind`` is ``"gaussian"`` (std ``sigma``), ``"bounded_hetero"`` (two-point
    ``+-sigma_t`` with ``sigma_t <= R`` drawn from ``sigma_schedule``) or
    ``"none"``.  ``sigma_schedule`` may be a constant or a per-round
    sequence; a callable ``(t, rng) -> sigma_t`` also works.
    """

    kind: str = "gaussian"
    sigma: float = 0.01
    R: float = 1.0
    sigma_schedule: float | Sequence[float] | Callable | None = None

    def __post_init__(self):
        if self.kind not in ("gaussian", "bounded_hetero", "none"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.kind == "gaussian" and not self.sigma >= 0:
            raise ValueError(f"gaussian sigma must be nonnegative, got {self.sigma}")
        if self.kind == "bounded_hetero":
            if not self.R > 0:
                raise ValueError(f"R must be positive, got {self.R}")
            if self.sigma_schedule is None:
                self.sigma_schedule = self.R

    @property
    def has_variance_channel(self) -> bool:
        return self.kind == "bounded_hetero"

    def sigma_at(self, t: int, rng: np.random.Generator) -> float:
        sched = self.sigma_schedule
        if callable(sched):
            s = float(sched(t, rng))
        elif np.ndim(sched) == 0:
            s = float(sched)
        else:
            s = float(sched[(t - 1) % len(sched)])
        if not 0 <= s <= self.R:
            raise ValueError(f"sigma_t={s} outside [0, R={self.R}]")
        return s

    def draw(self, t: int, rng: np.random.Generator) -> tuple[float, float | None]:
        """Return ``(epsilon, sigma_t)``; ``sigma_t`` is None without a variance channel."""
        if self.kind == "none":
            return 0.0, None
        if self.kind == "gaussian":
            return float(self.sigma * rng.standard_normal()), None
        s = self.sigma_at(t, rng)
        sign = 1.0 if rng.random() < 0.5 else -1.0
        return sign * s, s


def mixed_sigma(low: float, high: float) -> Callable:
    """Schedule drawing ``sigma_t`` uniformly from ``{low, high}`` each round."""

    def schedule(t, rng):
        return low if rng.random() < 0.5 else high

    return schedule


# --- corruption ------------------------------------------------------------

@dataclass
class CorruptionAdversary:
    """Budgeted reward corruption.

    ``sign_flip_prefix`` replaces the observed reward by its negation until the
    budget runs out; ``targeted_best_arm`` pushes down rewards whose true mean
    is positive; ``custom`` calls ``fn(t, x, mean, observed) -> c``.  Each
    corruption is clipped to the remaining budget.
    """

    strategy: str = "sign_flip_prefix"
    budget: float = 0.0
    fn: Callable | None = None
    spent: float = 0.0

    def __post_init__(self):
        if self.strategy not in ("sign_flip_prefix", "targeted_best_arm", "custom"):
            raise ValueError(f"unknown adversary strategy {self.strategy!r}")
        if not self.budget >= 0:
            raise ValueError(f"budget must be nonnegative, got {self.budget}")
        if self.strategy == "custom" and self.fn is None:
            raise ValueError("custom adversary requires fn")

    @property
    def remaining(self) -> float:
        return max(self.budget - self.spent, 0.0)

    def corrupt(self, t: int, x: np.ndarray, mean: float, observed: float) -> float:
        if self.remaining <= 0:
            return 0.0
        if self.strategy == "sign_flip_prefix":
            c = -2.0 * observed
        elif self.strategy == "targeted_best_arm":
            c = -2.0 * mean if mean > 0 else 0.0
        else:
            c = float(self.fn(t, x, mean, observed))
        if abs(c) > self.remaining:
            if self.strategy == "custom":
                raise BudgetExceeded(f"corruption {c} at t={t} exceeds remaining budget {self.remaining}")
            c = math.copysign(self.remaining, c)
        self.spent += abs(c)
        if self.spent > self.budget * (1 + 1e-12):
            raise BudgetExceeded(f"adversary spent {self.spent} > budget {self.budget}")
        return c

    def reset(self) -> None:
        self.spent = 0.0


# --- context files ---------------------------------------------------------

@dataclass
class ContextStream:
    """Pre-featurized contexts read from a file, one record per round."""

    contexts: list[np.ndarray]
    rewards: list[np.ndarray] | None = None
    warnings: int = 0
    pos: int = 0

    @property
    def dim(self) -> int:
        return self.contexts[0].shape[1]

    @property
    def has_rewards(self) -> bool:
        return self.rewards is not None

    def __len__(self) -> int:
        return len(self.contexts)

    def next(self) -> tuple[np.ndarray, np.ndarray | None]:
        if self.pos >= len(self.contexts):
            raise StreamExhausted(f"context stream exhausted after {self.pos} rounds")
        i = self.pos
        self.pos += 1
        return self.contexts[i], None if self.rewards is None else self.rewards[i]


def load_context_stream(path, d: int | None = None, require_rewards: bool = False) -> ContextStream:
    """Read a comma-delimited context file.

    Header required; columns ``round, arm, x_1 .. x_d`` and an optional
    trailing ``reward``.  Rows with norm above one are rescaled to unit norm
    and counted in ``warnings``.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ContextFileError(f"{path}: empty file") from None
        if len(header) < 3 or header[0] != "round" or header[1] != "arm":
            raise ContextFileError(f"{path}: header must start with 'round,arm', got {header[:2]}")
        has_reward = header[-1] == "reward"
        n_feat = len(header) - 2 - int(has_reward)
        if n_feat < 1:
            raise ContextFileError(f"{path}: no feature columns")
        if d is not None and n_feat != d:
            raise ContextFileError(f"{path}: file has d={n_feat}, expected d={d}")
        if require_rewards and not has_reward:
            raise ContextFileError(f"{path}: reward column required but missing")

        rounds: dict[int, dict[int, tuple[np.ndarray, float]]] = {}
        warnings = 0
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ContextFileError(f"{path}: row {lineno} has {len(row)} fields, expected {len(header)}")
            try:
                rnd = int(row[0])
                arm = int(row[1])
                x = np.array([float(v) for v in row[2:2 + n_feat]])
                rew = float(row[-1]) if has_reward else math.nan
            except ValueError as exc:
                raise ContextFileError(f"{path}: row {lineno}: {exc}") from None
            if not np.all(np.isfinite(x)):
                raise ContextFileError(f"{path}: row {lineno}: non-finite feature")
            nrm = float(np.linalg.norm(x))
            if nrm > 1.0:
                x = x / nrm
                warnings += 1
            if arm in rounds.setdefault(rnd, {}):
                raise ContextFileError(f"{path}: row {lineno}: duplicate (round={rnd}, arm={arm})")
            rounds[rnd][arm] = (x, rew)

    if not rounds:
        raise ContextFileError(f"{path}: no data rows")
    contexts, rewards = [], []
    K = None
    for rnd in sorted(rounds):
        arms = rounds[rnd]
        if K is None:
            K = len(arms)
        elif len(arms) != K:
            raise ContextFileError(f"{path}: round {rnd} has {len(arms)} arms, expected {K}")
        order = sorted(arms)
        contexts.append(np.stack([arms[a][0] for a in order]))
        rewards.append(np.array([arms[a][1] for a in order]))
    if warnings:
        logger.warning("%s: %d context rows renormalized to unit norm", path, warnings)
    return ContextStream(contexts, rewards if has_reward else None, warnings=warnings)


# --- environment -----------------------------------------------------------

@dataclass
class LinearEnv:
    """Linear reward model ``r = theta^T x + noise (+ corruption)``.

    Separate generators drive contexts and noise so that two runs sharing a
    seed see identical context and noise streams whatever actions they take.
    """

    theta: np.ndarray | None
    K: int
    noise: NoiseModel = field(default_factory=NoiseModel)
    context_rng: np.random.Generator | None = None
    noise_rng: np.random.Generator | None = None
    stream: ContextStream | None = None
    adversary: CorruptionAdversary | None = None
    d: int | None = None

    def __post_init__(self):
        if self.K < 1:
            raise ValueError(f"K must be >= 1, got {self.K}")
        if self.theta is not None:
            self.theta = np.asarray(self.theta, dtype=float)
            if np.linalg.norm(self.theta) > 1.0 + 1e-12:
                raise ValueError("theta must satisfy ||theta|| <= 1")
            self.d = self.theta.shape[0]
        elif self.stream is None or not self.stream.has_rewards:
            raise ValueError("theta is required unless a context file with rewards is supplied")
        if self.stream is not None:
            if self.d is not None and self.stream.dim != self.d:
                raise ValueError(f"context file has d={self.stream.dim}, theta has d={self.d}")
            self.d = self.stream.dim
        if self.context_rng is None:
            self.context_rng = np.random.default_rng(0)
        if self.noise_rng is None:
            self.noise_rng = np.random.default_rng(1)
        self._round_rewards = None

    @classmethod
    def synthetic(cls, d: int, K: int, seed: int, noise: NoiseModel | None = None,
                  theta_scale: float = 0.9, adversary: CorruptionAdversary | None = None) -> "LinearEnv":
        theta_ss, ctx_ss, noise_ss = np.random.SeedSequence(seed).spawn(3)
        theta = random_theta(np.random.default_rng(theta_ss), d, theta_scale)
        return cls(
            theta=theta,
            K=K,
            noise=noise or NoiseModel(),
            context_rng=np.random.default_rng(ctx_ss),
            noise_rng=np.random.default_rng(noise_ss),
            adversary=adversary,
        )

    @property
    def context_source(self) -> str:
        return FILE_STREAM if self.stream is not None else SPHERE_IID

    @property
    def knows_theta(self) -> bool:
        return self.theta is not None

    def gen_contexts(self) -> np.ndarray:
        if self.stream is not None:
            X, rewards = self.stream.next()
            if X.shape[0] != self.K:
                raise ValueError(f"context file has K={X.shape[0]}, environment expects K={self.K}")
            self._round_rewards = rewards
            return X
        return sample_sphere(self.context_rng, self.K, self.d)

    def reward(self, x: np.ndarray, t: int, arm: int | None = None) -> tuple[float, float, float | None, float]:
        """Return ``(observed, mean, sigma_t, corruption)`` for one pull."""
        if self.theta is None:
            if arm is None or self._round_rewards is None:
                raise ValueError("file-backed rewards need the arm index")
            mean = float(self._round_rewards[arm])
            eps, sigma_t = 0.0, None
        else:
            mean = float(self.theta @ x)
            eps, sigma_t = self.noise.draw(t, self.noise_rng)
        observed = mean + eps
        c = 0.0
        if self.adversary is not None:
            c = self.adversary.corrupt(t, x, mean, observed)
        return observed + c, mean, sigma_t, c

    def arm_values(self, contexts: np.ndarray) -> np.ndarray:
        if self.theta is not None:
            return np.asarray(contexts) @ self.theta
        if self._round_rewards is None:
            raise ValueError("no realized rewards for this round")
        return self._round_rewards

    def best_arm(self, contexts) -> tuple[int, float]:
        return best_arm(self, contexts)

    def describe(self) -> dict:
        out = {
            "d": self.d,
            "K": self.K,
            "context_source": self.context_source,
            "noise": {"kind": self.noise.kind, "sigma": self.noise.sigma, "R": self.noise.R},
        }
        if self.theta is not None:
            out["theta"] = [float(v) for v in self.theta]
        if self.adversary is not None:
            out["adversary"] = {"strategy": self.adversary.strategy, "budget": self.adversary.budget}
        return out


def gen_contexts(env: LinearEnv) -> np.ndarray:
    return env.gen_contexts()


def reward(env: LinearEnv, x, t: int, arm: int | None = None):
    return env.reward(np.asarray(x, dtype=float), t, arm)


def best_arm(env: LinearEnv, contexts) -> tuple[int, float]:
    """Index and value of the best arm under the true model; lowest index wins ties."""
    X = np.asarray(contexts, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("contexts must be a non-empty (K, d) array")
    vals = env.arm_values(X)
    i = int(np.argmax(vals))
    return i, float(vals[i])
