"""Client/server synchronization, communication triggers and wire messages."""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .bandit_core import ClientState
from .linalg import (
    DeltaStats,
    InvalidDimensionError,
    RidgeStats,
    log_det_ratio,
    ridge_init,
)


@dataclass
class ServerState:
    layers: list[RidgeStats]

    @classmethod
    def fresh(cls, dim: int, n_layers: int, ridge_lambda: float = 1.0) -> "ServerState":
        return cls([ridge_init(dim, ridge_lambda) for _ in range(n_layers)])

    @property
    def dim(self) -> int:
        return self.layers[0].dim


@dataclass
class CommEvent:
    t: int
    layers: tuple[int, ...]
    clients: tuple[int, ...]
    # real numbers moved in both directions
    floats: int

    @property
    def exchanges(self) -> int:
        return len(self.clients)


@dataclass
class CommLog:
    events: list[CommEvent] = field(default_factory=list)

    def append(self, event: CommEvent) -> None:
        self.events.append(event)

    @property
    def batches(self) -> int:
        return len(self.events)

    @property
    def exchanges(self) -> int:
        return sum(e.exchanges for e in self.events)


def floats_per_layer(dim: int) -> int:
    return dim * (dim + 1) // 2 + dim


def async_trigger(synced: RidgeStats, pending: DeltaStats, C: float) -> bool:
    """``det(A + dA) / det(A) > 1 + C``, evaluated in log space."""
    if math.isinf(C):
        return False
    return log_det_ratio(synced, pending) > math.log1p(C)


def sync_trigger(synced: RidgeStats, pending: DeltaStats, t: int, t_last: int, D: float) -> bool:
    """``(t - t_last) * ln(det(A + dA) / det(A)) > D``."""
    if t < t_last:
        raise ValueError(f"t={t} precedes t_last={t_last}")
    ratio = log_det_ratio(synced, pending)
    if ratio == 0.0:
        return False
    return (t - t_last) * ratio > D


def _sync_layer_inplace(server: ServerState, participants: Sequence[ClientState], s: int) -> None:
    target = server.layers[s]
    for c in participants:
        if c.dim != server.dim:
            raise InvalidDimensionError(f"client {c.id} has dim {c.dim}, server has {server.dim}")
    # deltas are added one participant at a time so that a joint sync and
    # back-to-back single syncs perform the same floating-point sums
    touched = False
    for c in participants:
        if c.pending[s].num_updates:
            target.gram = target.gram + c.pending[s].dgram
            target.moment = target.moment + c.pending[s].dmoment
            touched = True
    if touched:
        target.refactorize()
    for c in participants:
        c.synced[s].assign(target)
        c.local[s].assign(target)
        c.pending[s].reset()


def sync_layer(server: ServerState, participants: Sequence[ClientState], s: int, t: int = 0) -> CommEvent:
    """Upload every participant's layer-``s`` delta, aggregate, broadcast back.

    Mutates ``server`` and the participants in place and returns the event.
    """
    _sync_layer_inplace(server, participants, s)
    ids = tuple(c.id for c in participants)
    return CommEvent(t=t, layers=(s,), clients=ids, floats=2 * len(ids) * floats_per_layer(server.dim))


def sync_layers(server: ServerState, participants: Sequence[ClientState], layers: Sequence[int], t: int = 0) -> CommEvent:
    """Sync several layers as one exchange per participant."""
    layers = tuple(sorted(set(int(s) for s in layers)))
    for s in layers:
        _sync_layer_inplace(server, participants, s)
    ids = tuple(c.id for c in participants)
    n = 2 * len(ids) * len(layers) * floats_per_layer(server.dim)
    return CommEvent(t=t, layers=layers, clients=ids, floats=n)


# --- wire format -----------------------------------------------------------
# little-endian; ints as int64, reals as float64; gram packed as the row-major
# upper triangle.

def _pack_upper(mat: np.ndarray) -> np.ndarray:
    iu = np.triu_indices(mat.shape[0])
    return np.ascontiguousarray(mat[iu], dtype="<f8")


def _unpack_upper(vals: np.ndarray, dim: int) -> np.ndarray:
    mat = np.zeros((dim, dim))
    iu = np.triu_indices(dim)
    mat[iu] = vals
    mat = mat + np.triu(mat, 1).T
    return mat


@dataclass
class UploadMessage:
    client_id: int
    layer: int
    delta: DeltaStats

    def to_bytes(self) -> bytes:
        d = self.delta.dim
        head = struct.pack("<qqq", self.client_id, self.layer, d)
        body = _pack_upper(self.delta.dgram).tobytes() + np.asarray(self.delta.dmoment, dtype="<f8").tobytes()
        return head + body + struct.pack("<q", self.delta.num_updates)

    @classmethod
    def from_bytes(cls, raw: bytes) -> "UploadMessage":
        client_id, layer, d = struct.unpack_from("<qqq", raw, 0)
        off = 24
        n_up = d * (d + 1) // 2
        upper = np.frombuffer(raw, dtype="<f8", count=n_up, offset=off)
        off += 8 * n_up
        moment = np.frombuffer(raw, dtype="<f8", count=d, offset=off).astype(float)
        off += 8 * d
        (num,) = struct.unpack_from("<q", raw, off)
        if off + 8 != len(raw):
            raise ValueError("trailing bytes in upload message")
        delta = DeltaStats(d, _unpack_upper(upper, d), moment, num)
        return cls(client_id, layer, delta)


@dataclass
class DownloadMessage:
    layer: int
    stats: RidgeStats

    def to_bytes(self) -> bytes:
        d = self.stats.dim
        head = struct.pack("<qq", self.layer, d)
        return head + _pack_upper(self.stats.gram).tobytes() + np.asarray(self.stats.moment, dtype="<f8").tobytes()

    @classmethod
    def from_bytes(cls, raw: bytes) -> "DownloadMessage":
        layer, d = struct.unpack_from("<qq", raw, 0)
        off = 16
        n_up = d * (d + 1) // 2
        upper = np.frombuffer(raw, dtype="<f8", count=n_up, offset=off)
        off += 8 * n_up
        moment = np.frombuffer(raw, dtype="<f8", count=d, offset=off).astype(float)
        if off + 8 * d != len(raw):
            raise ValueError("trailing bytes in download message")
        stats = ridge_init(d)
        stats.gram = _unpack_upper(upper, d)
        stats.moment = moment
        stats.refactorize()
        return cls(layer, stats)


def upload_messages(client: ClientState, layers: Sequence[int]) -> list[UploadMessage]:
    return [UploadMessage(client.id, s, client.pending[s].copy()) for s in layers]


def download_messages(server: ServerState, layers: Sequence[int]) -> list[DownloadMessage]:
    return [DownloadMessage(s, server.layers[s].copy()) for s in layers]
