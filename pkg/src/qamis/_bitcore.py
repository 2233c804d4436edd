"""Bit-parallel kernels for exact independent-set computations.

Graphs live here as adjacency bitsets: row ``v`` of an ``(n, words)``
uint64 array has bit ``u`` set when ``{v, u}`` is an edge. Vertex subsets
(the set of still-undecided vertices, partial solutions, ...) are single
``(words,)`` uint64 rows. Everything below is numba-compiled and works on
these raw arrays; the friendly wrappers are in :mod:`qamis.solver`.
"""

import numpy as np
from numba import njit

U0 = np.uint64(0)
U1 = np.uint64(1)
U2 = np.uint64(2)
U4 = np.uint64(4)
U56 = np.uint64(56)
_M1 = np.uint64(0x5555555555555555)
_M2 = np.uint64(0x3333333333333333)
_M4 = np.uint64(0x0F0F0F0F0F0F0F0F)
_H01 = np.uint64(0x0101010101010101)

BRANCH_MAX_DEGREE = 0
BRANCH_RANDOM = 1

STATUS_OK = 0
STATUS_BUDGET = 1


@njit(cache=True, inline="always")
def _popcnt(x):
    x = x - ((x >> U1) & _M1)
    x = (x & _M2) + ((x >> U2) & _M2)
    x = (x + (x >> U4)) & _M4
    return np.int64((x * _H01) >> U56)


@njit(cache=True, inline="always")
def _ctz(x):
    # index of the lowest set bit; undefined for x == 0
    return _popcnt((x & (~x + U1)) - U1)


@njit(cache=True, inline="always")
def _testbit(mask, v):
    return (mask[v >> 6] >> np.uint64(v & 63)) & U1 != U0


@njit(cache=True, inline="always")
def _setbit(mask, v):
    mask[v >> 6] |= U1 << np.uint64(v & 63)


@njit(cache=True, inline="always")
def _clearbit(mask, v):
    mask[v >> 6] &= ~(U1 << np.uint64(v & 63))


@njit(cache=True, inline="always")
def _count(mask):
    t = 0
    for w in range(mask.shape[0]):
        t += _popcnt(mask[w])
    return t


@njit(cache=True, inline="always")
def _degree(adj, alive, v):
    d = 0
    for w in range(alive.shape[0]):
        d += _popcnt(adj[v, w] & alive[w])
    return d


@njit(cache=True, inline="always")
def _first_neighbor(adj, alive, v):
    for w in range(alive.shape[0]):
        x = adj[v, w] & alive[w]
        if x != U0:
            return (w << 6) + _ctz(x)
    return -1


@njit(cache=True)
def lr_reduce(adj, alive, s, k):
    """Leaf removal: take undecided degree<2 vertices until a core remains.

    Degree-0 vertices are taken; for a degree-1 vertex the vertex is taken
    and its neighbor excluded. Mutates ``alive`` and ``s``; returns the
    updated running set size ``k``.
    """
    n = adj.shape[0]
    progress = True
    while progress:
        progress = False
        for v in range(n):
            if not _testbit(alive, v):
                continue
            d = _degree(adj, alive, v)
            if d == 0:
                s[v] = 1
                k += 1
                _clearbit(alive, v)
                progress = True
            elif d == 1:
                u = _first_neighbor(adj, alive, v)
                s[v] = 1
                s[u] = -1
                k += 1
                _clearbit(alive, v)
                _clearbit(alive, u)
                progress = True
    return k


@njit(cache=True)
def _pick_max_degree(adj, alive):
    best_v = -1
    best_d = -1
    for v in range(adj.shape[0]):
        if _testbit(alive, v):
            d = _degree(adj, alive, v)
            if d > best_d:
                best_d = d
                best_v = v
    return best_v


@njit(cache=True)
def _pick_random(adj, alive, rng):
    cnt = _count(alive)
    if cnt == 0:
        return -1
    j = rng.integers(0, cnt)
    idx = 0
    for v in range(adj.shape[0]):
        if _testbit(alive, v):
            if idx == j:
                return v
            idx += 1
    return -1


@njit(cache=True)
def branch_reduce(adj, alive, s, k, counters, budget, branch_rule, rng):
    """One solver invocation: leaf removal, then branch on a core vertex.

    Explores include/exclude of the branching vertex recursively and keeps
    the larger set (ties prefer include). ``s`` is left holding the witness
    marks of the winning branch. ``counters[0]`` counts invocations; when it
    exceeds ``budget`` the recursion unwinds returning -1.
    """
    counters[0] += 1
    if counters[0] > budget:
        return np.int64(-1)
    k = lr_reduce(adj, alive, s, k)
    if branch_rule == BRANCH_RANDOM:
        v = _pick_random(adj, alive, rng)
    else:
        v = _pick_max_degree(adj, alive)
    if v < 0:
        return k
    words = alive.shape[0]

    a_inc = alive.copy()
    s_inc = s.copy()
    for w in range(words):
        x = adj[v, w] & alive[w]
        while x != U0:
            lsb = x & (~x + U1)
            s_inc[(w << 6) + _popcnt(lsb - U1)] = -1
            x ^= lsb
        a_inc[w] &= ~adj[v, w]
    _clearbit(a_inc, v)
    s_inc[v] = 1
    k_inc = branch_reduce(adj, a_inc, s_inc, k, counters, budget, branch_rule, rng)

    a_exc = alive.copy()
    s_exc = s.copy()
    _clearbit(a_exc, v)
    s_exc[v] = -1
    k_exc = branch_reduce(adj, a_exc, s_exc, k, counters, budget, branch_rule, rng)

    if k_inc < 0 or k_exc < 0:
        return np.int64(-1)
    if k_inc + 1 >= k_exc:
        s[:] = s_inc
        return k_inc + 1
    s[:] = s_exc
    return k_exc


@njit(cache=True)
def _greedy_matching(adj, alive, scratch):
    """Greedy matching size on the alive subgraph (upper-bound helper)."""
    words = alive.shape[0]
    for w in range(words):
        scratch[w] = alive[w]
    m = 0
    for w in range(words):
        x = scratch[w]
        while x != U0:
            lsb = x & (~x + U1)
            v = (w << 6) + _popcnt(lsb - U1)
            x ^= lsb
            if not _testbit(scratch, v):
                continue
            u = -1
            for w2 in range(words):
                y = adj[v, w2] & scratch[w2]
                if y != U0:
                    u = (w2 << 6) + _ctz(y)
                    break
            if u >= 0:
                _clearbit(scratch, v)
                _clearbit(scratch, u)
                m += 1
                x = scratch[w]  # v's word may have lost bits
    return m


@njit(cache=True)
def enum_exact(adj, alive, taken, need, counters, node_budget, solution_cap,
               and_mask, or_mask, sample, buf, collect, rng):
    """Enumerate all independent sets of exactly ``need`` vertices in ``alive``.

    Streams every solution through the backbone accumulators (``and_mask``,
    ``or_mask``) and keeps one uniform random solution in ``sample`` via
    reservoir sampling. With ``collect`` nonzero, solutions are also copied
    into ``buf`` (rows). ``counters``: [0] = search nodes, [1] = solutions.
    Returns STATUS_OK or STATUS_BUDGET (node budget or solution cap hit).
    """
    counters[0] += 1
    if counters[0] > node_budget:
        return STATUS_BUDGET
    words = alive.shape[0]
    if need == 0:
        counters[1] += 1
        if counters[1] > solution_cap:
            return STATUS_BUDGET
        for w in range(words):
            and_mask[w] &= taken[w]
            or_mask[w] |= taken[w]
        if collect != 0:
            for w in range(words):
                buf[counters[1] - 1, w] = taken[w]
        if rng.random() * counters[1] < 1.0:
            for w in range(words):
                sample[w] = taken[w]
        return STATUS_OK

    alive_cnt = _count(alive)
    if alive_cnt < need:
        return STATUS_OK
    scratch = np.empty(words, np.uint64)
    if alive_cnt - _greedy_matching(adj, alive, scratch) < need:
        return STATUS_OK

    # isolated vertices belong to every solution of a live branch
    n_iso = 0
    for w in range(words):
        x = alive[w]
        while x != U0:
            lsb = x & (~x + U1)
            v = (w << 6) + _popcnt(lsb - U1)
            x ^= lsb
            if _degree(adj, alive, v) == 0:
                n_iso += 1
    if n_iso > 0:
        if n_iso > need:
            return STATUS_OK
        a_next = alive.copy()
        t_next = taken.copy()
        for w in range(words):
            x = alive[w]
            while x != U0:
                lsb = x & (~x + U1)
                v = (w << 6) + _popcnt(lsb - U1)
                x ^= lsb
                if _degree(adj, alive, v) == 0:
                    _clearbit(a_next, v)
                    _setbit(t_next, v)
        return enum_exact(adj, a_next, t_next, need - n_iso, counters,
                          node_budget, solution_cap, and_mask, or_mask,
                          sample, buf, collect, rng)

    v = _pick_max_degree(adj, alive)
    # include v
    a_in = alive.copy()
    t_in = taken.copy()
    for w in range(words):
        a_in[w] &= ~adj[v, w]
    _clearbit(a_in, v)
    _setbit(t_in, v)
    st = enum_exact(adj, a_in, t_in, need - 1, counters, node_budget,
                    solution_cap, and_mask, or_mask, sample, buf, collect, rng)
    if st != STATUS_OK:
        return st
    # exclude v
    a_out = alive.copy()
    _clearbit(a_out, v)
    return enum_exact(adj, a_out, taken, need, counters, node_budget,
                      solution_cap, and_mask, or_mask, sample, buf, collect, rng)


@njit(cache=True)
def brute_force_all(adj_single, n, cap, buf):
    """Exhaustive scan over all 2^n subsets (single-word adjacency, n <= 24).

    Fills ``buf`` with every maximum independent set as a bitmask and returns
    (best_size, count, status); status is STATUS_BUDGET when count exceeds cap.
    """
    best = -1
    cnt = 0
    for mask in range(1 << n):
        m = np.uint64(mask)
        ok = True
        x = m
        while x != U0:
            lsb = x & (~x + U1)
            v = _popcnt(lsb - U1)
            x ^= lsb
            if adj_single[v] & m != U0:
                ok = False
                break
        if not ok:
            continue
        size = _popcnt(m)
        if size > best:
            best = size
            cnt = 0
        if size == best:
            if cnt < cap:
                buf[cnt] = mask
            cnt += 1
    status = STATUS_BUDGET if cnt > cap else STATUS_OK
    return best, cnt, status
