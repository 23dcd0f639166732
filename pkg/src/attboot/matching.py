"""Pair matching on propensity score without replacement.

Optimal matching maximizes the number of caliper-feasible pairs and, among
maximum-cardinality pairings, minimizes the summed absolute score distance.

Because the cost is ``|s_t - s_c|`` on a line, some optimal pairing is
order-preserving: if t1 <= t2 are matched to c_b and c_a with c_a < c_b,
swapping the two controls never increases the summed distance (the absolute
value is Monge) and never increases the larger of the two distances, so the
caliper stays satisfied. Repeated uncrossing yields an order-preserving
optimum, which a dynamic program over the two sorted score lists finds in
O(n_treated * n_control) time.

Ties between equal scores are broken by input position: after a stable sort,
the earlier treated occurrence precedes the later one, and likewise for
controls.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba as nb
import numpy as np

from attboot.errors import MatchingError

ALGORITHMS = ("optimal", "greedy-nearest")


@dataclass(frozen=True)
class MatchSpec:
    caliper: float = 0.02
    algorithm: str = "optimal"
    tie_break: str = "stable-position"

    def __post_init__(self):
        if not math.isfinite(self.caliper) or self.caliper < 0:
            raise ValueError(f"caliper must be finite and >= 0, got {self.caliper}")
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown matching algorithm {self.algorithm!r}; use one of {ALGORITHMS}")
        if self.tie_break != "stable-position":
            raise ValueError(f"unknown tie_break rule {self.tie_break!r}")


@dataclass(frozen=True, eq=False)
class MatchedSample:
    """Matched pairs as parallel arrays of unit indices.

    ``treated[k]`` is matched to ``control[k]``; pairs are listed in the order
    the treated occurrences were presented.
    """

    treated: np.ndarray
    control: np.ndarray
    dropped_treated: np.ndarray
    distances: np.ndarray
    total_distance: float

    @property
    def n_pairs(self) -> int:
        return int(self.treated.size)

    @property
    def pairs(self) -> list[tuple[int, int]]:
        return list(zip(self.treated.tolist(), self.control.tolist()))

    @property
    def common_support_failed(self) -> bool:
        return self.treated.size == 0 and self.dropped_treated.size > 0

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("treated_row,control_row,distance\n")
            for t, c, dist in zip(self.treated.tolist(), self.control.tolist(), self.distances.tolist()):
                fh.write(f"{t},{c},{dist!r}\n")


@nb.njit(cache=True)
def _optimal_sorted(t, c, caliper):
    """Order-preserving max-cardinality min-cost matching of sorted ``t`` to sorted ``c``.

    Returns (treated positions, control positions) into the sorted arrays.
    """
    a = t.size
    b = c.size
    # window of controls each treated point can reach
    lo = np.empty(a, np.int64)
    hi = np.empty(a, np.int64)
    j = 0
    for i in range(a):
        while j < b and c[j] < t[i] - caliper and abs(t[i] - c[j]) > caliper:
            j += 1
        lo[i] = j
    j = b - 1
    for i in range(a - 1, -1, -1):
        while j >= 0 and c[j] > t[i] + caliper and abs(t[i] - c[j]) > caliper:
            j -= 1
        hi[i] = j
    # keep only reachable controls and treated with a non-empty window
    keep_c = np.zeros(b, np.bool_)
    nt = 0
    for i in range(a):
        if lo[i] <= hi[i]:
            nt += 1
            for k in range(lo[i], hi[i] + 1):
                keep_c[k] = True
    nc = 0
    for k in range(b):
        if keep_c[k]:
            nc += 1
    if nt == 0 or nc == 0:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    tpos = np.empty(nt, np.int64)
    cpos = np.empty(nc, np.int64)
    q = 0
    for i in range(a):
        if lo[i] <= hi[i]:
            tpos[q] = i
            q += 1
    q = 0
    for k in range(b):
        if keep_c[k]:
            cpos[q] = k
            q += 1
    tt = t[tpos]
    cc = c[cpos]

    prev_n = np.zeros(nc + 1, np.int64)
    prev_s = np.zeros(nc + 1)
    cur_n = np.zeros(nc + 1, np.int64)
    cur_s = np.zeros(nc + 1)
    # 1 = treated unmatched, 2 = control skipped, 3 = matched
    move = np.empty((nt, nc), np.int8)
    for i in range(1, nt + 1):
        cur_n[0] = 0
        cur_s[0] = 0.0
        ti = tt[i - 1]
        for k in range(1, nc + 1):
            bn = prev_n[k]
            bs = prev_s[k]
            mv = 1
            if cur_n[k - 1] > bn or (cur_n[k - 1] == bn and cur_s[k - 1] < bs):
                bn = cur_n[k - 1]
                bs = cur_s[k - 1]
                mv = 2
            dist = abs(ti - cc[k - 1])
            if dist <= caliper:
                mn = prev_n[k - 1] + 1
                ms = prev_s[k - 1] + dist
                if mn > bn or (mn == bn and ms < bs):
                    bn = mn
                    bs = ms
                    mv = 3
            cur_n[k] = bn
            cur_s[k] = bs
            move[i - 1, k - 1] = mv
        prev_n, cur_n = cur_n, prev_n
        prev_s, cur_s = cur_s, prev_s

    m = prev_n[nc]
    out_t = np.empty(m, np.int64)
    out_c = np.empty(m, np.int64)
    i = nt
    k = nc
    q = m - 1
    while i > 0 and k > 0:
        mv = move[i - 1, k - 1]
        if mv == 3:
            out_t[q] = tpos[i - 1]
            out_c[q] = cpos[k - 1]
            q -= 1
            i -= 1
            k -= 1
        elif mv == 2:
            k -= 1
        else:
            i -= 1
    return out_t, out_c


@nb.njit(cache=True)
def _greedy_sorted(t, c, caliper):
    """Treated in ascending score order take the nearest unused control in caliper."""
    a = t.size
    b = c.size
    used = np.zeros(b, np.bool_)
    out_t = np.empty(a, np.int64)
    out_c = np.empty(a, np.int64)
    m = 0
    start = 0
    for i in range(a):
        x = t[i]
        while start < b and c[start] < x:
            start += 1
        left = start - 1
        while left >= 0 and used[left]:
            left -= 1
        right = start
        while right < b and used[right]:
            right += 1
        best = -1
        if left >= 0 and abs(x - c[left]) <= caliper:
            best = left
        if right < b and abs(x - c[right]) <= caliper:
            if best < 0 or abs(x - c[right]) < abs(x - c[left]):
                best = right
        if best >= 0:
            used[best] = True
            out_t[m] = i
            out_c[m] = best
            m += 1
    return out_t[:m], out_c[:m]


def match_sorted(t_sorted: np.ndarray, c_sorted: np.ndarray, caliper: float, algorithm: str = "optimal"):
    """Kernel entry on pre-sorted float64 score arrays; returns sorted positions."""
    if algorithm == "optimal":
        return _optimal_sorted(t_sorted, c_sorted, float(caliper))
    return _greedy_sorted(t_sorted, c_sorted, float(caliper))


def _stable_order(scores: np.ndarray) -> np.ndarray:
    return np.argsort(scores, kind="stable")


def _check_scores(name, s):
    s = np.ascontiguousarray(s, dtype=np.float64)
    if s.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional")
    if s.size and not np.all((s > 0.0) & (s < 1.0)):
        raise ValueError(f"{name} must lie strictly inside (0, 1)")
    return s


def match_pairs(
    treated_scores,
    control_scores,
    spec: MatchSpec | None = None,
    treated_ids=None,
    control_ids=None,
) -> MatchedSample:
    """Match controls to treated units on propensity score, without replacement.

    ``treated_ids`` / ``control_ids`` give the unit identity of each score
    (default: positions). Treated ids may repeat; each occurrence is matched
    to a distinct control. Treated occurrences with no feasible partner are
    returned in ``dropped_treated``; if that is all of them the result has no
    pairs and ``common_support_failed`` is true.
    """
    spec = spec or MatchSpec()
    ts = _check_scores("treated_scores", treated_scores)
    cs = _check_scores("control_scores", control_scores)
    if cs.size == 0:
        raise MatchingError("empty control pool")
    t_ids = np.arange(ts.size) if treated_ids is None else np.asarray(treated_ids, dtype=np.int64)
    c_ids = np.arange(cs.size) if control_ids is None else np.asarray(control_ids, dtype=np.int64)
    if t_ids.shape != ts.shape or c_ids.shape != cs.shape:
        raise ValueError("ids and scores must have the same length")

    t_order = _stable_order(ts)
    c_order = _stable_order(cs)
    pt, pc = match_sorted(ts[t_order], cs[c_order], spec.caliper, spec.algorithm)
    t_occ = t_order[pt]
    c_occ = c_order[pc]
    # report pairs in presentation order of treated occurrences
    order = np.argsort(t_occ, kind="stable")
    t_occ = t_occ[order]
    c_occ = c_occ[order]
    matched = np.zeros(ts.size, bool)
    matched[t_occ] = True
    dist = np.abs(ts[t_occ] - cs[c_occ])
    return MatchedSample(
        treated=t_ids[t_occ],
        control=c_ids[c_occ],
        dropped_treated=t_ids[~matched],
        distances=dist,
        total_distance=math.fsum(dist.tolist()),
    )


def match_resample(resampled_treated, control_pool, scores, spec: MatchSpec | None = None) -> MatchedSample:
    """Match a treated multiset (repeats allowed) against a control pool.

    ``resampled_treated`` and ``control_pool`` are unit indices into ``scores``.
    """
    scores = np.asarray(scores, dtype=np.float64)
    t_ids = np.asarray(resampled_treated, dtype=np.int64)
    c_ids = np.asarray(control_pool, dtype=np.int64)
    return match_pairs(scores[t_ids], scores[c_ids], spec, treated_ids=t_ids, control_ids=c_ids)
