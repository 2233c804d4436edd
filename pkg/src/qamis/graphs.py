"""Random graphs and the unique-solution instance ensemble.

Instances start as Erdos-Renyi draws G(n, p) with p = d/(n-1). Graphs whose
maximum independent set is degenerate are post-processed by adding edges
inside a randomly chosen optimal solution until exactly one optimal solution
survives; the additions are arranged so the optimal size never shrinks, and
the graph is discarded if it does (or if no legal addition exists).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from . import solver
from .solver import BudgetExceeded, DEFAULT_SOLUTION_CAP


class Discarded(Exception):
    """Uniquification had to give up on this graph (reason attached)."""

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


class VertexLabel(IntEnum):
    BACKBONE_IN = 0      # in every maximum independent set
    BACKBONE_OUT = 1     # in none
    NON_BACKBONE = 2     # in some but not all


@dataclass(frozen=True)
class Graph:
    """Simple undirected graph; edges normalized to sorted (i, j) with i < j."""

    n: int
    edges: tuple

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("need at least one vertex")
        seen = set()
        for i, j in self.edges:
            if i == j:
                raise ValueError(f"self-loop at {i}")
            if not (0 <= i < j < self.n):
                raise ValueError(f"bad edge ({i}, {j})")
            if (i, j) in seen:
                raise ValueError(f"duplicate edge ({i}, {j})")
            seen.add((i, j))

    @classmethod
    def from_edges(cls, n: int, edges) -> "Graph":
        norm = tuple(sorted((min(i, j), max(i, j)) for i, j in edges))
        return cls(n=n, edges=norm)

    def degree(self, v: int) -> int:
        return sum(1 for i, j in self.edges if v in (i, j))

    def degrees(self) -> np.ndarray:
        d = np.zeros(self.n, np.int64)
        for i, j in self.edges:
            d[i] += 1
            d[j] += 1
        return d

    def adjacency(self):
        adj = [set() for _ in range(self.n)]
        for i, j in self.edges:
            adj[i].add(j)
            adj[j].add(i)
        return adj

    def with_edges(self, extra) -> "Graph":
        return Graph.from_edges(self.n, list(self.edges) + list(extra))

    def components(self):
        """Connected components as sorted vertex lists."""
        adj = self.adjacency()
        seen = [False] * self.n
        comps = []
        for start in range(self.n):
            if seen[start]:
                continue
            stack = [start]
            seen[start] = True
            comp = []
            while stack:
                v = stack.pop()
                comp.append(v)
                for u in adj[v]:
                    if not seen[u]:
                        seen[u] = True
                        stack.append(u)
            comps.append(sorted(comp))
        return comps


@dataclass(frozen=True)
class MISInstance:
    graph: Graph
    answer: tuple          # 0/1 per vertex, 1 = in the independent set
    mis_size: int
    seed: int
    added_edges: int
    verified_unique: bool

    def __post_init__(self):
        if len(self.answer) != self.graph.n:
            raise ValueError("answer length mismatch")
        for i, j in self.graph.edges:
            if self.answer[i] and self.answer[j]:
                raise ValueError(f"answer not independent: edge ({i}, {j})")
        if sum(self.answer) != self.mis_size:
            raise ValueError("mis_size does not match answer popcount")

    def to_json(self) -> str:
        doc = {
            "n": self.graph.n,
            "edges": [[i, j] for i, j in self.graph.edges],
            "answer": [int(b) for b in self.answer],
            "mis_size": self.mis_size,
            "seed": self.seed,
            "added_edges": self.added_edges,
        }
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text: str) -> "MISInstance":
        doc = json.loads(text)
        g = Graph.from_edges(doc["n"], [tuple(e) for e in doc["edges"]])
        return cls(graph=g, answer=tuple(int(b) for b in doc["answer"]),
                   mis_size=int(doc["mis_size"]), seed=int(doc["seed"]),
                   added_edges=int(doc["added_edges"]), verified_unique=True)


def generate_er_graph(n: int, d: float, rng) -> Graph:
    """G(n, p) with p = d/(n-1): each pair an edge independently."""
    if n < 2:
        raise ValueError("need n >= 2")
    if not (0 < d <= n - 1):
        raise ValueError("need 0 < d <= n-1")
    p = d / (n - 1)
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    hits = rng.random(len(pairs)) < p
    return Graph(n=n, edges=tuple(p_ for p_, h in zip(pairs, hits) if h))


def labels_from_masks(n: int, and_mask, or_mask) -> list:
    """Backbone labels from the intersection/union over all solutions."""
    out = []
    for v in range(n):
        inside_all = (int(and_mask[v >> 6]) >> (v & 63)) & 1
        inside_any = (int(or_mask[v >> 6]) >> (v & 63)) & 1
        if inside_all:
            out.append(VertexLabel.BACKBONE_IN)
        elif inside_any:
            out.append(VertexLabel.NON_BACKBONE)
        else:
            out.append(VertexLabel.BACKBONE_OUT)
    return out


def enumerate_all_mis(graph: Graph, solution_cap: int = DEFAULT_SOLUTION_CAP):
    """All maximum independent sets plus per-vertex backbone labels.

    Returns (mis_size, solutions, labels); raises BudgetExceeded past the cap.
    """
    size, sols = solver.enumerate_solutions(graph, solution_cap=solution_cap)
    and_mask = solver.bits_to_mask([1] * graph.n)
    or_mask = solver.bits_to_mask([0] * graph.n)
    for sol in sols:
        m = solver.bits_to_mask(sol)
        and_mask &= m
        or_mask |= m
    return size, sols, labels_from_masks(graph.n, and_mask, or_mask)


def _component_stats(graph: Graph, adj_bits, comps, rng, solution_cap, node_budget):
    """Per-component exact solve + streaming enumeration at the optimal size.

    Returns (total_opt, counts, and_mask, or_mask, sample) over the whole
    vertex set; raises BudgetExceeded if any component blows the budget.
    """
    words = adj_bits.shape[1]
    and_mask = np.zeros(words, np.uint64)
    or_mask = np.zeros(words, np.uint64)
    sample = np.zeros(words, np.uint64)
    counts = []
    total = 0
    for comp in comps:
        cmask = solver.bits_to_mask([1 if v in set(comp) else 0 for v in range(graph.n)])
        opt = solver.mis_size_of_mask(graph, cmask, adj=adj_bits)
        st = solver.enumerate_stats(graph, cmask, opt, rng, adj=adj_bits,
                                    solution_cap=solution_cap,
                                    node_budget=node_budget)
        total += opt
        counts.append(st.count)
        and_mask |= st.and_mask
        or_mask |= st.or_mask
        sample |= st.sample
    return total, counts, and_mask, or_mask, sample


def uniquify(graph: Graph, rng, solution_cap: int = DEFAULT_SOLUTION_CAP,
             node_budget: int | None = None, seed: int = 0) -> MISInstance:
    """Add edges until the maximum independent set is unique.

    Each cycle enumerates all optimal solutions, picks one at random, and
    pairs up the non-backbone vertices inside it with new edges (a lone
    leftover non-backbone is tied to a random backbone vertex inside the
    solution). Discards when the optimal size drops or when a lone
    non-backbone has no backbone partner.
    """
    g = graph
    adj_bits = solver.adjacency_bits(g)
    comps = g.components()
    orig_total, counts, and_m, or_m, sample = _component_stats(
        g, adj_bits, comps, rng, solution_cap, node_budget)
    added = 0
    while True:
        if all(c == 1 for c in counts):
            answer = tuple(int(b) for b in solver.mask_to_bits(sample, g.n))
            return MISInstance(graph=g, answer=answer, mis_size=orig_total,
                               seed=seed, added_edges=added, verified_unique=True)
        chosen = solver.mask_to_bits(sample, g.n)
        non_backbone = solver.mask_to_bits(or_m & ~and_m, g.n)
        backbone_in = solver.mask_to_bits(and_m, g.n)
        inside_nb = [v for v in range(g.n) if chosen[v] and non_backbone[v]]
        if not inside_nb:
            raise AssertionError("degenerate solutions but no non-backbone inside")
        order = list(rng.permutation(len(inside_nb)))
        inside_nb = [inside_nb[i] for i in order]
        new_edges = []
        while len(inside_nb) >= 2:
            u = inside_nb.pop()
            v = inside_nb.pop()
            new_edges.append((min(u, v), max(u, v)))
        if len(inside_nb) == 1:
            u = inside_nb.pop()
            partners = [v for v in range(g.n) if chosen[v] and backbone_in[v]]
            if not partners:
                raise Discarded("lone_nonbackbone_without_backbone")
            b = partners[int(rng.integers(0, len(partners)))]
            new_edges.append((min(u, b), max(u, b)))
        g = g.with_edges(new_edges)
        added += len(new_edges)
        adj_bits = solver.adjacency_bits(g)
        comps = g.components()
        total, counts, and_m, or_m, sample = _component_stats(
            g, adj_bits, comps, rng, solution_cap, node_budget)
        if total < orig_total:
            raise Discarded("solutions_of_original_size_vanished")


def generate_unique_instance(n: int, d: float, seed: int,
                             solution_cap: int = DEFAULT_SOLUTION_CAP,
                             node_budget: int | None = None,
                             max_attempts: int = 1000):
    """Fresh unique-solution instance; retries new graphs on discards.

    Returns (instance, discard_reasons) where discard_reasons lists the
    reason for every failed attempt before the success.
    """
    rng = np.random.default_rng(seed)
    reasons = []
    for _ in range(max_attempts):
        g = generate_er_graph(n, d, rng)
        try:
            inst = uniquify(g, rng, solution_cap=solution_cap,
                            node_budget=node_budget, seed=seed)
            return inst, reasons
        except Discarded as exc:
            reasons.append(exc.reason)
        except BudgetExceeded:
            reasons.append("enumeration_budget")
    raise Discarded(f"no instance after {max_attempts} attempts")
