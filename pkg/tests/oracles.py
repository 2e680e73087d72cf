"""Independent reference computations shared by the unit and acceptance tests."""
import numpy as np

from fedsuplinucb.bandit_core import FRESH, ClientState, slucb_select, slucb_update

# PASS/FAIL lines from the acceptance module, printed by conftest at session end
ACCEPTANCE_LINES = []


def direct_ridge(xs, rs, ws, dim, lam=1.0):
    """Gram, moment, inverse and log-det built from scratch with dense numpy."""
    A = lam * np.eye(dim)
    b = np.zeros(dim)
    for x, r, w in zip(xs, rs, ws):
        A += w * np.outer(x, x)
        b += w * r * x
    return A, b, np.linalg.inv(A), np.linalg.slogdet(A)[1]


def independent_oracle(theta, rounds, M, T_c, sched):
    """Actions of M clients that each replay only their own contexts, with no communication.

    ``rounds`` is the flat per-pull context list in sync order (round-major,
    client-minor). Rewards are noiseless.
    """
    actions = {}
    for i in range(M):
        st = ClientState.fresh(i, len(theta), sched.n_layers)
        for t in range(T_c):
            X = rounds[t * M + i]
            res = slucb_select(st, sched, X, FRESH)
            x = X[res.action]
            slucb_update(st, res.layer, x, float(theta @ x))
            actions[(t + 1, i)] = (res.layer, res.action)
    return actions
