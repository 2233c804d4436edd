"""Exact maximum-independent-set solving.

Two routes are provided on purpose: a leaf-removal + branch-and-reduce
solver with an invocation counter (the hardness proxy used by the scaling
experiments), and an independent brute-force subset scan used as the test
oracle. A third entry point enumerates *all* maximum independent sets,
which the unique-solution instance generator needs for backbone labels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _bitcore as bc

DEFAULT_STEP_BUDGET = 10 ** 9
DEFAULT_SOLUTION_CAP = 2 * 10 ** 6

BRANCH_RULES = {"max-degree": bc.BRANCH_MAX_DEGREE, "random": bc.BRANCH_RANDOM}


class RecursionBudgetExceeded(Exception):
    """Solver hit its invocation budget; the instance is too hard."""


class BudgetExceeded(Exception):
    """Solution enumeration exceeded its solution cap or node budget."""


class SizeTooLarge(Exception):
    """Instance too large for the requested exhaustive routine."""


@dataclass
class SolverState:
    """Working state of the branch-and-reduce solver.

    ``s`` marks each vertex -1 (out), 0 (undecided) or +1 (in); ``alive``
    is the bitset of undecided vertices still present in the working graph;
    ``k`` counts vertices taken so far.
    """

    adj: np.ndarray
    alive: np.ndarray
    s: np.ndarray
    k: int

    @classmethod
    def fresh(cls, graph) -> "SolverState":
        adj = adjacency_bits(graph)
        return cls(adj=adj, alive=full_mask(graph.n), s=np.zeros(graph.n, np.int8), k=0)


@dataclass(frozen=True)
class SolveResult:
    mis_size: int
    config: np.ndarray  # 0/1 per vertex
    steps: int


def adjacency_bits(graph) -> np.ndarray:
    """Adjacency rows as uint64 bitsets, one row per vertex."""
    words = max(1, (graph.n + 63) // 64)
    adj = np.zeros((graph.n, words), np.uint64)
    for i, j in graph.edges:
        adj[i, j >> 6] |= np.uint64(1) << np.uint64(j & 63)
        adj[j, i >> 6] |= np.uint64(1) << np.uint64(i & 63)
    return adj


def full_mask(n: int) -> np.ndarray:
    words = max(1, (n + 63) // 64)
    mask = np.zeros(words, np.uint64)
    for w in range(words):
        hi = min(64, n - 64 * w)
        if hi > 0:
            mask[w] = (np.uint64(1) << np.uint64(hi)) - np.uint64(1) if hi < 64 else np.uint64(0xFFFFFFFFFFFFFFFF)
    return mask


def mask_to_bits(mask: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros(n, np.int8)
    for v in range(n):
        if (int(mask[v >> 6]) >> (v & 63)) & 1:
            out[v] = 1
    return out


def bits_to_mask(bits) -> np.ndarray:
    n = len(bits)
    words = max(1, (n + 63) // 64)
    mask = np.zeros(words, np.uint64)
    for v, b in enumerate(bits):
        if b:
            mask[v >> 6] |= np.uint64(1) << np.uint64(v & 63)
    return mask


def leaf_removal(state: SolverState) -> SolverState:
    """Apply the two leaf rules exhaustively; pure (returns a new state)."""
    alive = state.alive.copy()
    s = state.s.copy()
    k = bc.lr_reduce(state.adj, alive, s, int(state.k))
    return SolverState(adj=state.adj, alive=alive, s=s, k=int(k))


def solve_mis(graph, branch: str = "max-degree", seed: int = 0,
              budget: int = DEFAULT_STEP_BUDGET) -> SolveResult:
    """Exact MIS via leaf removal + branch-and-reduce, counting invocations."""
    if branch not in BRANCH_RULES:
        raise ValueError(f"unknown branch rule {branch!r}")
    state = SolverState.fresh(graph)
    counters = np.zeros(1, np.int64)
    rng = np.random.default_rng(seed)
    k = bc.branch_reduce(state.adj, state.alive, state.s, 0, counters,
                         budget, BRANCH_RULES[branch], rng)
    if k < 0:
        raise RecursionBudgetExceeded(f"step budget {budget} exhausted")
    config = (state.s == 1).astype(np.int8)
    return SolveResult(mis_size=int(k), config=config, steps=int(counters[0]))


def mis_size_of_mask(graph, alive_mask: np.ndarray, adj: np.ndarray | None = None,
                     budget: int = DEFAULT_STEP_BUDGET) -> int:
    """MIS size restricted to the vertices in ``alive_mask``."""
    if adj is None:
        adj = adjacency_bits(graph)
    s = np.zeros(graph.n, np.int8)
    counters = np.zeros(1, np.int64)
    rng = np.random.default_rng(0)
    k = bc.branch_reduce(adj, alive_mask.copy(), s, 0, counters, budget,
                         bc.BRANCH_MAX_DEGREE, rng)
    if k < 0:
        raise RecursionBudgetExceeded(f"step budget {budget} exhausted")
    return int(k)


@dataclass
class EnumStats:
    """Streaming view of one exact enumeration (no solution list)."""

    count: int
    and_mask: np.ndarray   # vertices present in every solution
    or_mask: np.ndarray    # vertices present in at least one solution
    sample: np.ndarray     # one uniform random solution


def enumerate_stats(graph, alive_mask: np.ndarray, need: int, rng,
                    adj: np.ndarray | None = None,
                    solution_cap: int = DEFAULT_SOLUTION_CAP,
                    node_budget: int | None = None) -> EnumStats:
    """Stream all size-``need`` independent sets within ``alive_mask``.

    Raises BudgetExceeded when the solution cap or node budget is hit.
    """
    if adj is None:
        adj = adjacency_bits(graph)
    if node_budget is None:
        node_budget = 32 * solution_cap
    words = adj.shape[1]
    counters = np.zeros(2, np.int64)
    and_mask = np.full(words, np.uint64(0xFFFFFFFFFFFFFFFF), np.uint64)
    or_mask = np.zeros(words, np.uint64)
    sample = np.zeros(words, np.uint64)
    taken = np.zeros(words, np.uint64)
    dummy = np.zeros((1, words), np.uint64)
    status = bc.enum_exact(adj, alive_mask.copy(), taken, need, counters,
                           node_budget, solution_cap, and_mask, or_mask,
                           sample, dummy, 0, rng)
    if status != bc.STATUS_OK:
        raise BudgetExceeded(
            f"enumeration exceeded budget (nodes={int(counters[0])}, "
            f"solutions={int(counters[1])})")
    and_mask &= alive_mask  # meaningless bits outside the region
    return EnumStats(count=int(counters[1]), and_mask=and_mask,
                     or_mask=or_mask, sample=sample)


def enumerate_solutions(graph, solution_cap: int = DEFAULT_SOLUTION_CAP,
                        node_budget: int | None = None):
    """All maximum independent sets of ``graph`` as 0/1 arrays.

    Returns (mis_size, [config, ...]). Raises BudgetExceeded past the cap.
    """
    adj = adjacency_bits(graph)
    if node_budget is None:
        node_budget = 32 * solution_cap
    alive = full_mask(graph.n)
    opt = mis_size_of_mask(graph, alive, adj=adj)
    words = adj.shape[1]
    counters = np.zeros(2, np.int64)
    and_mask = np.full(words, np.uint64(0xFFFFFFFFFFFFFFFF), np.uint64)
    or_mask = np.zeros(words, np.uint64)
    sample = np.zeros(words, np.uint64)
    taken = np.zeros(words, np.uint64)
    buf = np.zeros((solution_cap, words), np.uint64)
    rng = np.random.default_rng(0)
    status = bc.enum_exact(adj, alive.copy(), taken, opt, counters,
                           node_budget, solution_cap, and_mask, or_mask,
                           sample, buf, 1, rng)
    if status != bc.STATUS_OK:
        raise BudgetExceeded(
            f"enumeration exceeded budget (nodes={int(counters[0])}, "
            f"solutions={int(counters[1])})")
    count = int(counters[1])
    sols = [mask_to_bits(buf[i], graph.n) for i in range(count)]
    return opt, sols


def brute_force_mis(graph, cap: int = DEFAULT_SOLUTION_CAP):
    """Oracle: exhaustive subset scan, n <= 24. Returns (size, configs)."""
    if graph.n > 24:
        raise SizeTooLarge(f"brute force capped at n=24, got {graph.n}")
    adj1 = np.zeros(graph.n, np.uint64)
    for i, j in graph.edges:
        adj1[i] |= np.uint64(1) << np.uint64(j)
        adj1[j] |= np.uint64(1) << np.uint64(i)
    buf = np.zeros(min(cap, 1 << graph.n), np.int64)
    best, cnt, status = bc.brute_force_all(adj1, graph.n, buf.shape[0], buf)
    if status != bc.STATUS_OK:
        raise BudgetExceeded(f"more than {cap} maximum independent sets")
    configs = []
    for idx in range(cnt):
        m = int(buf[idx])
        configs.append(np.array([(m >> v) & 1 for v in range(graph.n)], np.int8))
    return int(best), configs
