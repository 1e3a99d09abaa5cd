"""Nearest-neighbour + 2-opt + Or-opt tour heuristic (numba kernels).

Node 0 is always the depot. Tours are closed and stored as an int array of
node indices starting with 0; the return edge to the depot is implicit.
"""

import numpy as np
from numba import njit

_EPS = 1e-10


@njit(cache=True)
def _dist_matrix(xy):
    n = xy.shape[0]
    d = np.empty((n, n))
    for i in range(n):
        d[i, i] = 0.0
        for j in range(i + 1, n):
            v = np.sqrt((xy[i, 0] - xy[j, 0]) ** 2 + (xy[i, 1] - xy[j, 1]) ** 2)
            d[i, j] = v
            d[j, i] = v
    return d


@njit(cache=True)
def _tour_length(d, tour):
    n = tour.shape[0]
    total = 0.0
    for i in range(n - 1):
        total += d[tour[i], tour[i + 1]]
    if n > 1:
        total += d[tour[n - 1], tour[0]]
    return total


@njit(cache=True)
def _nearest_neighbor(d):
    n = d.shape[0]
    tour = np.empty(n, dtype=np.int64)
    used = np.zeros(n, dtype=np.bool_)
    tour[0] = 0
    used[0] = True
    cur = 0
    for pos in range(1, n):
        best = -1
        bd = np.inf
        for j in range(n):
            if not used[j] and d[cur, j] < bd:
                bd = d[cur, j]
                best = j
        tour[pos] = best
        used[best] = True
        cur = best
    return tour


@njit(cache=True)
def _two_opt(d, tour):
    """First-improvement 2-opt to a local optimum; returns number of moves."""
    n = tour.shape[0]
    moves = 0
    improved = True
    while improved:
        improved = False
        for i in range(1, n - 1):
            a = tour[i - 1]
            b = tour[i]
            for j in range(i + 1, n):
                c = tour[j]
                e = tour[(j + 1) % n]
                delta = d[a, c] + d[b, e] - d[a, b] - d[c, e]
                if delta < -_EPS:
                    lo = i
                    hi = j
                    while lo < hi:
                        tmp = tour[lo]
                        tour[lo] = tour[hi]
                        tour[hi] = tmp
                        lo += 1
                        hi -= 1
                    moves += 1
                    improved = True
                    b = tour[i]
    return moves


@njit(cache=True)
def _or_opt(d, tour):
    """First-improvement Or-opt: relocate segments of 1..3 nodes, either orientation."""
    n = tour.shape[0]
    moves = 0
    improved = True
    buf = np.empty(n, dtype=np.int64)
    while improved:
        improved = False
        for seg in range(1, 4):
            if seg > n - 2:
                break
            i = 1
            while i + seg - 1 <= n - 1:
                s0 = tour[i]
                s1 = tour[i + seg - 1]
                prev = tour[i - 1]
                nxt = tour[(i + seg) % n]
                remove_gain = d[prev, s0] + d[s1, nxt] - d[prev, nxt]
                best_delta = -_EPS
                best_p = -1
                best_rev = False
                # candidate insertion edge (tour[p], tour[p+1]) outside the segment
                for p in range(n):
                    if p >= i - 1 and p <= i + seg - 1:
                        continue
                    u = tour[p]
                    v = tour[(p + 1) % n]
                    fwd = d[u, s0] + d[s1, v] - d[u, v] - remove_gain
                    rev = d[u, s1] + d[s0, v] - d[u, v] - remove_gain
                    if fwd < best_delta:
                        best_delta = fwd
                        best_p = p
                        best_rev = False
                    if rev < best_delta:
                        best_delta = rev
                        best_p = p
                        best_rev = True
                if best_p >= 0:
                    # rebuild: tour without segment, segment inserted after node tour[best_p]
                    after = tour[best_p]
                    k = 0
                    for q in range(n):
                        if q >= i and q <= i + seg - 1:
                            continue
                        buf[k] = tour[q]
                        k += 1
                        if tour[q] == after:
                            if best_rev:
                                for r in range(seg):
                                    buf[k] = tour[i + seg - 1 - r]
                                    k += 1
                            else:
                                for r in range(seg):
                                    buf[k] = tour[i + r]
                                    k += 1
                    for q in range(n):
                        tour[q] = buf[q]
                    moves += 1
                    improved = True
                i += 1
    return moves


@njit(cache=True)
def _solve(xy):
    d = _dist_matrix(xy)
    tour = _nearest_neighbor(d)
    while True:
        m = _two_opt(d, tour)
        m += _or_opt(d, tour)
        if m == 0:
            break
    return tour, _tour_length(d, tour)


@njit(cache=True)
def _solve_many(xy_all, offsets, depot):
    """Tour lengths for many point sets packed in ``xy_all`` (offsets delimit sets)."""
    m = offsets.shape[0] - 1
    out = np.empty(m)
    for s in range(m):
        k = offsets[s + 1] - offsets[s]
        xy = np.empty((k + 1, 2))
        xy[0, 0] = depot[0]
        xy[0, 1] = depot[1]
        for r in range(k):
            xy[r + 1, 0] = xy_all[offsets[s] + r, 0]
            xy[r + 1, 1] = xy_all[offsets[s] + r, 1]
        if k == 0:
            out[s] = 0.0
        else:
            _, length = _solve(xy)
            out[s] = length
    return out


def with_depot(points, depot):
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    return np.vstack([np.asarray(depot, dtype=float).reshape(1, 2), pts])


def nearest_neighbor_tour(xy):
    return _nearest_neighbor(_dist_matrix(np.ascontiguousarray(xy, dtype=float)))


def two_opt(xy, tour):
    tour = np.array(tour, dtype=np.int64)
    _two_opt(_dist_matrix(np.ascontiguousarray(xy, dtype=float)), tour)
    return tour


def or_opt(xy, tour):
    tour = np.array(tour, dtype=np.int64)
    _or_opt(_dist_matrix(np.ascontiguousarray(xy, dtype=float)), tour)
    return tour


def tour_length(xy, tour):
    return float(_tour_length(_dist_matrix(np.ascontiguousarray(xy, dtype=float)), np.asarray(tour, dtype=np.int64)))


def solve(xy):
    """Heuristic closed tour over ``xy`` (row 0 = depot) -> (tour, length)."""
    xy = np.ascontiguousarray(xy, dtype=float)
    if xy.shape[0] <= 1:
        return np.zeros(xy.shape[0], dtype=np.int64), 0.0
    tour, length = _solve(xy)
    return tour, float(length)


def solve_many(point_sets, depot):
    sizes = [len(p) for p in point_sets]
    offsets = np.zeros(len(sizes) + 1, dtype=np.int64)
    offsets[1:] = np.cumsum(sizes)
    if offsets[-1]:
        xy_all = np.ascontiguousarray(np.vstack([np.asarray(p, dtype=float).reshape(-1, 2) for p in point_sets]))
    else:
        xy_all = np.zeros((0, 2))
    return _solve_many(xy_all, offsets, np.asarray(depot, dtype=float))
