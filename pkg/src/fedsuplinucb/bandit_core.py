"""Layered successive screening (S-LUCB) and its weighted variants.

A client keeps ``S + 1`` layers of ridge statistics.  Each round it walks the
layers from 0 upward, eliminating arms whose estimate falls ``2 * wbar_s``
below the layer's best, until some candidate is still uncertain at the current
layer (explore it) or the last layer is reached (exploit).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict
from typing import Sequence

import numpy as np

from .linalg import (
    DeltaStats,
    NumericInputError,
    RidgeStats,
    delta_init,
    ridge_init,
)

STANDARD = "standard"
VARIANCE_ADAPTIVE = "variance_adaptive"
CORRUPTION_ROBUST = "corruption_robust"
VARIANTS = (STANDARD, VARIANCE_ADAPTIVE, CORRUPTION_ROBUST)

LAZY = "lazy"
FRESH = "fresh"


class ConfigError(ValueError):
    """Invalid algorithm configuration; the message names the offending field."""


@dataclass
class AlgoConfig:
    """Problem size and algorithm constants.

    ``C`` and ``D`` default to the theoretical choices ``1/M^2`` and
    ``T_c ln T_c / (d^2 M)`` when left as ``None``.  For the synchronous
    algorithm ``T`` is the total pull count ``M * T_c``.
    """

    d: int
    K: int
    M: int
    T: int
    delta: float = 0.1
    variant: str = STANDARD
    C: float | None = None
    D: float | None = None
    R: float = 1.0
    Cp: float = 0.0
    ridge_lambda: float = 1.0
    # multiplies every confidence radius; 1.0 keeps the theoretical constants
    alpha_scale: float = 1.0

    def __post_init__(self):
        for name in ("d", "K", "M", "T"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)) or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
            setattr(self, name, int(v))
        if not 0.0 < self.delta < 1.0:
            raise ConfigError(f"delta must lie in (0, 1), got {self.delta!r}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.C is not None and not self.C >= 0:
            raise ConfigError(f"C must be nonnegative, got {self.C!r}")
        if self.D is not None and not self.D >= 0:
            raise ConfigError(f"D must be nonnegative, got {self.D!r}")
        if not self.Cp >= 0:
            raise ConfigError(f"Cp must be nonnegative, got {self.Cp!r}")
        if not self.ridge_lambda > 0:
            raise ConfigError(f"ridge_lambda must be positive, got {self.ridge_lambda!r}")
        if not self.alpha_scale > 0:
            raise ConfigError(f"alpha_scale must be positive, got {self.alpha_scale!r}")
        if self.variant == VARIANCE_ADAPTIVE and not self.R > 0:
            raise ConfigError(f"R must be positive for the variance-adaptive variant, got {self.R!r}")

    @property
    def T_c(self) -> int:
        return max(self.T // self.M, 1)

    @property
    def async_threshold(self) -> float:
        return 1.0 / self.M ** 2 if self.C is None else float(self.C)

    @property
    def sync_threshold(self) -> float:
        if self.D is not None:
            return float(self.D)
        tc = self.T_c
        return tc * math.log(tc) / (self.d ** 2 * self.M)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["C_effective"] = self.async_threshold
        out["D_effective"] = self.sync_threshold
        return out


@dataclass
class LayerSchedule:
    S: int
    widths: np.ndarray
    alphas: np.ndarray
    # corruption: sample-weight scale gamma = sqrt(d)/Cp (inf when Cp = 0)
    corruption_gamma: float = math.inf
    rho: float | None = None
    gamma_var: float | None = None

    @property
    def n_layers(self) -> int:
        return self.S + 1


@dataclass(frozen=True)
class SigmaBarParams:
    rho: float
    gamma_var: float

    def __post_init__(self):
        if not (self.rho > 0 and self.gamma_var > 0):
            raise ValueError("rho and gamma_var must be strictly positive")


def _ln_d(d: int) -> float:
    # ln d vanishes at d = 1; floored at 1 so the layer union bound stays finite
    return max(math.log(d), 1.0)


def _alpha_upper(cfg: AlgoConfig) -> float:
    return 1.0 + math.sqrt(2.0 * math.log(2.0 * cfg.K * cfg.M * cfg.T * _ln_d(cfg.d) / cfg.delta))


def _alpha_zero(cfg: AlgoConfig) -> float:
    return 1.0 + math.sqrt(cfg.d * math.log(2.0 * cfg.M ** 2 * cfg.T / cfg.delta))


def bernstein_radius(d: int, T: int, R: float, delta: float) -> float:
    """Bernstein-type self-normalized radius ``beta_T``.

    Evaluated with variance proxy ``R^2``, context bound 1, the noise-magnitude
    max term bounded by ``R`` and resolution ``eps = R / T``.
    """
    eps = R / T
    log_term = math.log(32.0 * (math.log(R / eps) + 1.0) * T ** 2 / delta)
    first = 12.0 * math.sqrt(R ** 2 * d * math.log(1.0 + T / d) * log_term)
    second = 24.0 * log_term * R
    third = 6.0 * log_term * eps
    return first + second + third


def build_schedule(cfg: AlgoConfig) -> LayerSchedule:
    if cfg.variant == VARIANCE_ADAPTIVE:
        if not cfg.R > 0:
            raise ConfigError("R must be positive for the variance-adaptive variant")
        S = max(1, math.ceil(math.log2(cfg.R) + math.log2(cfg.T)))
        w0 = cfg.d * cfg.R ** 2
        a0 = bernstein_radius(cfg.d, cfg.T, cfg.R, cfg.delta) + 1.0
    else:
        S = max(1, math.ceil(math.log2(cfg.d)))
        w0 = cfg.d ** 1.5 / math.sqrt(cfg.T)
        a0 = _alpha_zero(cfg)
    alphas = np.full(S + 1, _alpha_upper(cfg))
    alphas[0] = a0
    widths = w0 * 0.5 ** np.arange(S + 1)

    if cfg.variant == CORRUPTION_ROBUST and cfg.Cp > 0:
        # gamma * Cp == sqrt(d)
        alphas = alphas + math.sqrt(cfg.d)
    sched = LayerSchedule(S=S, widths=widths, alphas=cfg.alpha_scale * alphas)
    if cfg.variant == CORRUPTION_ROBUST and cfg.Cp > 0:
        sched.corruption_gamma = math.sqrt(cfg.d) / cfg.Cp
    if cfg.variant == VARIANCE_ADAPTIVE:
        sched.rho = 1.0 / math.sqrt(cfg.T)
        sched.gamma_var = math.sqrt(cfg.R) / cfg.d ** 0.25
    return sched


def sigma_bar_params(cfg: AlgoConfig) -> SigmaBarParams:
    return SigmaBarParams(rho=1.0 / math.sqrt(cfg.T), gamma_var=math.sqrt(cfg.R) / cfg.d ** 0.25)


@dataclass
class ClientState:
    """Per-client layered statistics.

    ``synced[s]`` is the last server copy, ``pending[s]`` the unsent delta and
    ``local[s]`` the running sum of both (kept incrementally for fresh-mode
    selection and the determinant-ratio triggers).
    """

    id: int
    synced: list[RidgeStats]
    pending: list[DeltaStats]
    local: list[RidgeStats]

    @classmethod
    def fresh(cls, client_id: int, dim: int, n_layers: int, ridge_lambda: float = 1.0) -> "ClientState":
        synced = [ridge_init(dim, ridge_lambda) for _ in range(n_layers)]
        return cls(
            id=client_id,
            synced=synced,
            pending=[delta_init(dim) for _ in range(n_layers)],
            local=[s.copy() for s in synced],
        )

    @property
    def dim(self) -> int:
        return self.synced[0].dim

    @property
    def n_layers(self) -> int:
        return len(self.synced)

    def stats_for(self, layer: int, mode: str) -> RidgeStats:
        if mode == LAZY:
            return self.synced[layer]
        if mode == FRESH:
            return self.local[layer]
        raise ValueError(f"unknown mode {mode!r}")

    def log_det_ratio(self, layer: int) -> float:
        """Cached ``ln det(A + dA) - ln det(A)`` for one layer."""
        if self.pending[layer].num_updates == 0:
            return 0.0
        return max(self.local[layer].log_det - self.synced[layer].log_det, 0.0)


@dataclass
class SelectionResult:
    action: int
    layer: int
    width_at_selection: float
    candidate_trace: list[list[int]] = field(default_factory=list)
    # ||x||_{A^{-1}} of the chosen context at the chosen layer (width without alpha)
    norm_at_selection: float = 0.0


def initial_screen(estimates, widths) -> list[int]:
    """Keep arms whose upper bound reaches the best lower bound."""
    r = np.asarray(estimates, dtype=float)
    w = np.asarray(widths, dtype=float)
    if r.size == 0:
        raise ValueError("no arms to screen")
    best_lower = np.max(r - w)
    keep = np.flatnonzero(r + w >= best_lower)
    return keep.tolist()


def layer_filter(candidates: Sequence[int], estimates, width_bar: float) -> list[int]:
    """Keep candidates within ``2 * width_bar`` of the best estimate among them."""
    cand = np.asarray(candidates, dtype=int)
    if cand.size == 0:
        raise ValueError("candidate set is empty")
    r = np.asarray(estimates, dtype=float)[cand]
    keep = cand[r >= r.max() - 2.0 * width_bar]
    return keep.tolist()


def _check_contexts(contexts, dim: int) -> np.ndarray:
    X = np.asarray(contexts, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("contexts must be a non-empty (K, d) array")
    if X.shape[1] != dim:
        raise ValueError(f"contexts have dimension {X.shape[1]}, expected {dim}")
    if not np.all(np.isfinite(X)):
        raise NumericInputError("contexts contain non-finite entries")
    if np.any(np.einsum("ij,ij->i", X, X) > (1.0 + 1e-9) ** 2):
        raise NumericInputError("context norms must not exceed 1")
    return X


def layer_estimates(stats: RidgeStats, alpha: float, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-arm estimates ``x^T theta_hat`` and widths ``alpha * ||x||_{A^{-1}}``."""
    theta = stats.gram_inv @ stats.moment
    XA = X @ stats.gram_inv
    q = np.einsum("ij,ij->i", XA, X)
    norms = np.sqrt(np.maximum(q, 0.0))
    return X @ theta, alpha * norms


def slucb_select(state: ClientState, schedule: LayerSchedule, contexts, mode: str = LAZY) -> SelectionResult:
    X = _check_contexts(contexts, state.dim)
    if mode not in (LAZY, FRESH):
        raise ValueError(f"unknown mode {mode!r}")
    S = schedule.S

    r0, w0 = layer_estimates(state.stats_for(0, mode), schedule.alphas[0], X)
    cand = initial_screen(r0, w0)
    trace = [cand]
    s = 0
    r, w = r0, w0
    while True:
        if s > 0:
            r, w = layer_estimates(state.stats_for(s, mode), schedule.alphas[s], X)
        if s == S:
            action = min(cand)
            break
        cw = w[cand]
        if np.all(cw <= schedule.widths[s]):
            cand = layer_filter(cand, r, schedule.widths[s])
            trace.append(cand)
            s += 1
            continue
        # argmax over uncertain candidates; np.argmax keeps the lowest index on ties
        uncertain = [a for a in cand if w[a] > schedule.widths[s]]
        action = uncertain[int(np.argmax(w[uncertain]))]
        break
    width = float(w[action])
    alpha = schedule.alphas[s]
    return SelectionResult(
        action=int(action),
        layer=s,
        width_at_selection=width,
        candidate_trace=trace,
        norm_at_selection=width / alpha if alpha > 0 else 0.0,
    )


def _weighted_update(state: ClientState, layer: int, x, r: float, weight: float) -> ClientState:
    if not 0 <= layer < state.n_layers:
        raise IndexError(f"layer {layer} out of range [0, {state.n_layers - 1}]")
    state.pending[layer].add(x, r, weight)
    state.local[layer].update(x, r, weight)
    return state


def slucb_update(state: ClientState, layer: int, x, r: float) -> ClientState:
    """Add one observation to ``pending[layer]`` (in place; returns ``state``)."""
    return _weighted_update(state, layer, x, r, 1.0)


def sigma_bar(sigma_t: float, params: SigmaBarParams, width_norm: float) -> float:
    """Clipped noise level ``max(sigma_t, rho, gamma * sqrt(||x||_{A^{-1}}))``."""
    if not (sigma_t >= 0 and width_norm >= 0):
        raise ValueError("sigma_t and width_norm must be nonnegative")
    return max(float(sigma_t), params.rho, params.gamma_var * math.sqrt(width_norm))


def vslucb_update(state: ClientState, layer: int, x, r: float, sigma_bar: float) -> ClientState:
    if not sigma_bar > 0:
        raise ValueError(f"sigma_bar must be positive, got {sigma_bar}")
    return _weighted_update(state, layer, x, r, 1.0 / sigma_bar ** 2)


def corruption_weight(gamma: float, width_norm: float) -> float:
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    if width_norm <= gamma:
        return 1.0
    return gamma / width_norm


def cslucb_update(state: ClientState, layer: int, x, r: float, eta: float) -> ClientState:
    if not 0.0 < eta <= 1.0:
        raise ValueError(f"eta must lie in (0, 1], got {eta}")
    return _weighted_update(state, layer, x, r, eta)
