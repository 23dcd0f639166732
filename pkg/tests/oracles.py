"""Independent reference implementations used only by the tests."""

import itertools
import math
from functools import lru_cache

import numpy as np


def brute_force_match(t, c, caliper):
    """Max-cardinality, min-total-distance caliper matching by enumeration.

    Walks every injective partial assignment of treated -> controls (each
    treated unit either unmatched or given an unused feasible control).
    Returns (cardinality, fsum total, pairs).
    """
    t = [float(v) for v in t]
    c = [float(v) for v in c]
    best = [(-1, math.inf, ())]

    def rec(i, used, pairs):
        if i == len(t):
            total = math.fsum(abs(t[a] - c[b]) for a, b in pairs)
            card = len(pairs)
            if card > best[0][0] or (card == best[0][0] and total < best[0][1]):
                best[0] = (card, total, tuple(pairs))
            return
        rec(i + 1, used, pairs)
        for j in range(len(c)):
            if j not in used and abs(t[i] - c[j]) <= caliper:
                rec(i + 1, used | {j}, pairs + [(i, j)])

    rec(0, frozenset(), [])
    return best[0]


def subset_search_match(t, c, caliper):
    """Same optimum as brute_force_match, memoized over (treated index, used-control set).

    Exhaustive over all injective assignments but fast enough for 7 x 10.
    """
    t = tuple(float(v) for v in t)
    c = tuple(float(v) for v in c)
    n_c = len(c)

    @lru_cache(maxsize=None)
    def f(i, mask):
        # best (cardinality, -cost) achievable for treated i.. with controls in mask used
        if i == len(t):
            return (0, 0.0, ())
        card, cost, pairs = f(i + 1, mask)
        best = (card, cost, pairs)
        for j in range(n_c):
            if not mask >> j & 1:
                d = abs(t[i] - c[j])
                if d <= caliper:
                    k2, s2, p2 = f(i + 1, mask | (1 << j))
                    cand = (k2 + 1, s2 + d, ((i, j),) + p2)
                    if cand[0] > best[0] or (cand[0] == best[0] and cand[1] < best[1]):
                        best = cand
        return best

    card, _, pairs = f(0, 0)
    total = math.fsum(abs(t[a] - c[b]) for a, b in pairs)
    return card, total, pairs


def lsa_match(t, c, caliper):
    """Caliper matching via scipy's rectangular assignment with a big-M penalty.

    Requires len(t) <= len(c). Infeasible edges cost more than any feasible
    total, so the solver first minimizes the number of infeasible pairs, i.e.
    maximizes cardinality, then the distance.
    """
    from scipy.optimize import linear_sum_assignment

    t = np.asarray(t, float)
    c = np.asarray(c, float)
    d = np.abs(t[:, None] - c[None, :])
    big = 10.0 * (len(t) + 1)
    cost = np.where(d <= caliper, d, big)
    rows, cols = linear_sum_assignment(cost)
    keep = d[rows, cols] <= caliper
    pairs = list(zip(rows[keep].tolist(), cols[keep].tolist()))
    return len(pairs), math.fsum(d[r, k] for r, k in pairs), pairs


def enumerate_injections(n_t, n_c):
    """All partial injective maps of range(n_t) into range(n_c) (None = unmatched)."""
    options = [None, *range(n_c)]
    for combo in itertools.product(options, repeat=n_t):
        used = [j for j in combo if j is not None]
        if len(used) == len(set(used)):
            yield combo


def logit_loglik(beta, x, z):
    x = np.asarray(x, float)
    beta = np.asarray(beta, float)
    eta = beta[..., :1] + np.tensordot(beta[..., 1:], x, axes=([-1], [1]))
    return np.sum(z * -np.logaddexp(0, -eta) + (1 - z) * -np.logaddexp(0, eta), axis=-1)


def grid_search_mle(x, z, box=6.0, points=25, shrink_steps=3, tol=1e-6):
    """Maximize the logit log-likelihood by repeatedly zooming a regular grid.

    Uses only log-likelihood evaluations (no derivatives). Returns
    (beta, loglik, on_boundary) where on_boundary flags a maximizer at the
    edge of the initial box (e.g. separated data).
    """
    x = np.asarray(x, float)
    k = x.shape[1] + 1
    center = np.zeros(k)
    half = np.full(k, box)
    first = True
    on_boundary = False
    while True:
        axes = [np.linspace(center[i] - half[i], center[i] + half[i], points) for i in range(k)]
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, k)
        ll = logit_loglik(mesh, x, z)
        best = mesh[int(np.argmax(ll))]
        if first:
            on_boundary = bool(np.any(np.isclose(np.abs(best), box)))
            first = False
        step = 2 * half / (points - 1)
        center = best
        half = step * shrink_steps
        if np.max(step) < tol:
            return best, float(logit_loglik(best[None, :], x, z)[0]), on_boundary
