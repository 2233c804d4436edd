"""Stochastic series expansion sampler for the annealing Hamiltonian.

One Monte Carlo sweep = a diagonal update over the fixed-length operator
string, a Swendsen-Wang cluster update built on the operator-leg graph,
and a free flip of sites untouched by any operator. Clusters are grown
over vertical spin segments: transverse-site units terminate segments
(their role toggles between the diagonal constant and the spin flip when
exactly one side flips), bond units merge the clusters of all four legs,
and field units merge their two legs and freeze the cluster - a frozen
cluster is never flipped, which keeps every field weight nonzero.

Operator string encoding: -1 is an identity slot, otherwise 2*unit + role
with role 1 only for the spin-flip form of a transverse unit.
"""

from __future__ import annotations

import json

import numpy as np
from numba import njit

from .hamiltonian import OperatorTable

CHECKPOINT_VERSION = 1
CUTOFF_FILL = 0.75
CUTOFF_PAD = 16


@njit(cache=True, inline="always")
def _find(parent, v):
    while parent[v] != v:
        parent[v] = parent[parent[v]]
        v = parent[v]
    return v


@njit(cache=True, inline="always")
def _union(parent, a, b):
    ra = _find(parent, a)
    rb = _find(parent, b)
    if ra != rb:
        parent[rb] = ra


@njit(cache=True, inline="always")
def _link_site(parent, first_in, last_out, site, v_in, v_out):
    if last_out[site] >= 0:
        _union(parent, last_out[site], v_in)
    else:
        first_in[site] = v_in
    last_out[site] = v_out


@njit(cache=True)
def diagonal_update(string, sigma, n_ops, k_trans, beta, n_sites,
                    bond_sites, field_sites, field_signs, cum_w, total_w, rng):
    """Insert/remove diagonal units; spin-flip units propagate the state.

    Insertion draws a unit proportional to its maximal weight and rejects
    draws whose weight vanishes on the local spins, giving the heat-bath
    acceptance beta * W(state) / (M - n) whenever beta * W_total <= M - n.
    """
    m_cut = string.shape[0]
    n_bonds = bond_sites.shape[0]
    for p in range(m_cut):
        op = string[p]
        if op < 0:
            if rng.random() * (m_cut - n_ops) < beta * total_w:
                u = np.searchsorted(cum_w, rng.random() * total_w, side="right")
                ok = True
                if u >= n_sites + n_bonds:
                    f = u - n_sites - n_bonds
                    ok = sigma[field_sites[f]] == field_signs[f]
                elif u >= n_sites:
                    b = u - n_sites
                    ok = sigma[bond_sites[b, 0]] != sigma[bond_sites[b, 1]]
                if ok:
                    string[p] = 2 * u
                    n_ops += 1
                    if u < n_sites:
                        k_trans += 1
        elif op & 1 == 0:
            if rng.random() * beta * total_w < (m_cut - n_ops + 1):
                unit = op >> 1
                string[p] = -1
                n_ops -= 1
                if unit < n_sites:
                    k_trans -= 1
        else:
            site = op >> 1
            sigma[site] = -sigma[site]
    return n_ops, k_trans


@njit(cache=True)
def cluster_update(string, sigma, n_sites, bond_sites, field_sites,
                   parent, frozen, flip, first_in, last_out, rng):
    """Swendsen-Wang pass over operator legs; returns (clusters, flipped)."""
    m_cut = string.shape[0]
    n_bonds = bond_sites.shape[0]
    n_legs = 4 * m_cut
    for v in range(n_legs):
        parent[v] = -2
    for s in range(n_sites):
        first_in[s] = -1
        last_out[s] = -1

    for p in range(m_cut):
        op = string[p]
        if op < 0:
            continue
        unit = op >> 1
        base = 4 * p
        if unit < n_sites:
            parent[base] = base
            parent[base + 2] = base + 2
            _link_site(parent, first_in, last_out, unit, base, base + 2)
            # segment boundary: no union across the operator
        elif unit < n_sites + n_bonds:
            b = unit - n_sites
            for o in range(4):
                parent[base + o] = base + o
            _link_site(parent, first_in, last_out, bond_sites[b, 0], base, base + 2)
            _link_site(parent, first_in, last_out, bond_sites[b, 1], base + 1, base + 3)
            _union(parent, base, base + 1)
            _union(parent, base, base + 2)
            _union(parent, base, base + 3)
        else:
            f = unit - n_sites - n_bonds
            parent[base] = base
            parent[base + 2] = base + 2
            _link_site(parent, first_in, last_out, field_sites[f], base, base + 2)
            _union(parent, base, base + 2)

    for s in range(n_sites):
        if first_in[s] >= 0:
            _union(parent, last_out[s], first_in[s])

    for v in range(n_legs):
        frozen[v] = False
    for p in range(m_cut):
        op = string[p]
        if op >= 0 and (op >> 1) >= n_sites + n_bonds:
            frozen[_find(parent, 4 * p)] = True

    n_clusters = 0
    n_flipped = 0
    for v in range(n_legs):
        if parent[v] == v:
            n_clusters += 1
            if frozen[v]:
                flip[v] = False
            elif rng.random() < 0.5:
                flip[v] = True
                n_flipped += 1
            else:
                flip[v] = False

    for p in range(m_cut):
        op = string[p]
        if op < 0:
            continue
        if (op >> 1) < n_sites:
            below = flip[_find(parent, 4 * p)]
            above = flip[_find(parent, 4 * p + 2)]
            if below != above:
                string[p] = op ^ 1

    for s in range(n_sites):
        if first_in[s] >= 0 and flip[_find(parent, first_in[s])]:
            sigma[s] = -sigma[s]
    return n_clusters, n_flipped


@njit(cache=True)
def free_spin_flip(string, sigma, n_sites, bond_sites, field_sites, touched, rng):
    """Flip each operator-free site with probability 1/2."""
    m_cut = string.shape[0]
    n_bonds = bond_sites.shape[0]
    for s in range(n_sites):
        touched[s] = False
    for p in range(m_cut):
        op = string[p]
        if op < 0:
            continue
        unit = op >> 1
        if unit < n_sites:
            touched[unit] = True
        elif unit < n_sites + n_bonds:
            b = unit - n_sites
            touched[bond_sites[b, 0]] = True
            touched[bond_sites[b, 1]] = True
        else:
            touched[field_sites[unit - n_sites - n_bonds]] = True
    flipped = 0
    for s in range(n_sites):
        if not touched[s] and rng.random() < 0.5:
            sigma[s] = -sigma[s]
            flipped += 1
    return flipped


@njit(cache=True)
def measure_walk(string, sigma, work, ans, n_sites, n_ops, cut_m, q_level, q_out):
    """One propagation pass collecting the per-sweep estimator inputs.

    Returns (k_left, hits): transverse units among the first ``cut_m``
    operators, and the number of propagation levels (out of n_ops + 1)
    whose spins equal the answer state. The spins at level ``q_level``
    are copied into ``q_out``.
    """
    mismatch = 0
    for s in range(n_sites):
        work[s] = sigma[s]
        if work[s] != ans[s]:
            mismatch += 1
    hits = 1 if mismatch == 0 else 0
    if q_level == 0:
        for s in range(n_sites):
            q_out[s] = work[s]
    k_left = 0
    idx = 0
    for p in range(string.shape[0]):
        op = string[p]
        if op < 0:
            continue
        if op & 1 == 1:
            site = op >> 1
            if work[site] == ans[site]:
                mismatch += 1
            else:
                mismatch -= 1
            work[site] = -work[site]
        idx += 1
        if idx <= cut_m and (op >> 1) < n_sites:
            k_left += 1
        if mismatch == 0:
            hits += 1
        if q_level == idx:
            for s in range(n_sites):
                q_out[s] = work[s]
    return k_left, hits


class SSEState:
    """One SSE Markov chain: spins, operator string, and its RNG stream."""

    def __init__(self, table: OperatorTable, beta: float, rng,
                 m_init: int = 32, sigma0=None, instance_id: str = ""):
        self.table = table
        self.beta = float(beta)
        self.rng = rng
        self.instance_id = instance_id
        n = table.n_sites
        if sigma0 is None:
            self.sigma = np.where(rng.random(n) < 0.5, 1, -1).astype(np.int8)
        else:
            self.sigma = np.asarray(sigma0, np.int8).copy()
        self.string = np.full(m_init, -1, np.int64)
        self.n_ops = 0
        self.k_trans = 0
        self._alloc_workspace()

    def _alloc_workspace(self):
        m = self.string.shape[0]
        n = self.table.n_sites
        self._parent = np.empty(4 * m, np.int64)
        self._frozen = np.empty(4 * m, np.bool_)
        self._flip = np.empty(4 * m, np.bool_)
        self._first_in = np.empty(n, np.int64)
        self._last_out = np.empty(n, np.int64)
        self._touched = np.empty(n, np.bool_)
        self._work = np.empty(n, np.int8)

    @property
    def m_cut(self) -> int:
        return self.string.shape[0]

    @property
    def n_problem_ops(self) -> int:
        return self.n_ops - self.k_trans

    def adjust_cutoff(self):
        """Grow the string when it fills past 3/4; never shrinks."""
        if self.n_ops <= CUTOFF_FILL * self.m_cut:
            return
        new_m = int(np.ceil(4 * self.n_ops / 3)) + CUTOFF_PAD
        new_string = np.full(new_m, -1, np.int64)
        pos = np.sort(self.rng.choice(new_m, size=self.m_cut, replace=False))
        new_string[pos] = self.string
        self.string = new_string
        self._alloc_workspace()

    def sweep(self, adjust: bool = False):
        """One MCS: diagonal + cluster + free-spin updates."""
        t = self.table
        self.n_ops, self.k_trans = diagonal_update(
            self.string, self.sigma, self.n_ops, self.k_trans, self.beta,
            t.n_sites, t.bond_sites, t.field_sites, t.field_signs,
            t.cum_weights, t.total_weight, self.rng)
        n_cl, n_fl = cluster_update(
            self.string, self.sigma, t.n_sites, t.bond_sites, t.field_sites,
            self._parent, self._frozen, self._flip, self._first_in,
            self._last_out, self.rng)
        free_spin_flip(self.string, self.sigma, t.n_sites, t.bond_sites,
                       t.field_sites, self._touched, self.rng)
        if adjust:
            self.adjust_cutoff()
        return n_cl, n_fl

    def measure(self, ans_sigma, q_out, all_levels: bool = True):
        """Per-sweep estimator inputs after a sweep.

        Returns (k_left, l_left, k, l, n, p_ans_frac); fills ``q_out`` with
        the spins at a uniformly random propagation level.
        """
        cut = int(self.rng.binomial(self.n_ops, 0.5)) if self.n_ops else 0
        q_level = int(self.rng.integers(0, self.n_ops + 1))
        k_left, hits = measure_walk(
            self.string, self.sigma, self._work, ans_sigma,
            self.table.n_sites, self.n_ops, cut, q_level, q_out)
        if all_levels:
            p_frac = hits / (self.n_ops + 1)
        else:
            lvl = int(self.rng.integers(0, self.n_ops + 1))
            p_frac = 1.0 if self._single_level_hit(ans_sigma, lvl) else 0.0
        k = self.k_trans
        l_total = self.n_ops - k
        l_left = cut - k_left
        return k_left, k - k_left, l_left, l_total - l_left, self.n_ops, p_frac

    def _single_level_hit(self, ans_sigma, level) -> bool:
        work = self.sigma.copy()
        idx = 0
        if level == 0:
            return bool(np.array_equal(work, ans_sigma))
        for op in self.string:
            if op < 0:
                continue
            if op & 1 == 1:
                work[op >> 1] = -work[op >> 1]
            idx += 1
            if idx == level:
                return bool(np.array_equal(work, ans_sigma))
        return bool(np.array_equal(work, ans_sigma))

    def propagate_origin(self) -> np.ndarray:
        """Spins after the full string; equals sigma for a legal state."""
        work = self.sigma.copy()
        for op in self.string:
            if op >= 0 and op & 1 == 1:
                work[op >> 1] = -work[op >> 1]
        return work

    def swap_configuration(self, other: "SSEState"):
        """Exchange (sigma, string, counters) with another chain in place."""
        self.sigma, other.sigma = other.sigma, self.sigma
        self.string, other.string = other.string, self.string
        self.n_ops, other.n_ops = other.n_ops, self.n_ops
        self.k_trans, other.k_trans = other.k_trans, self.k_trans
        if self.string.shape[0] != self._parent.shape[0] // 4:
            self._alloc_workspace()
        if other.string.shape[0] != other._parent.shape[0] // 4:
            other._alloc_workspace()

    def checkpoint(self) -> str:
        doc = {
            "version": CHECKPOINT_VERSION,
            "instance_id": self.instance_id,
            "lam": self.table.lam,
            "beta": self.beta,
            "sigma": self.sigma.tolist(),
            "string": self.string.tolist(),
            "n_ops": self.n_ops,
            "k_trans": self.k_trans,
            "m_cut": self.m_cut,
            "rng_state": self.rng.bit_generator.state,
        }
        return json.dumps(doc)

    @classmethod
    def restore(cls, text: str, table: OperatorTable) -> "SSEState":
        doc = json.loads(text)
        if doc["version"] != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {doc['version']}")
        rng = np.random.default_rng(0)
        rng.bit_generator.state = doc["rng_state"]
        st = cls(table, doc["beta"], rng, m_init=doc["m_cut"],
                 sigma0=doc["sigma"], instance_id=doc["instance_id"])
        st.string = np.array(doc["string"], np.int64)
        st.n_ops = int(doc["n_ops"])
        st.k_trans = int(doc["k_trans"])
        st._alloc_workspace()
        return st


def operator_weight_on(table: OperatorTable, op: int, spins) -> float:
    """Weight of one string operator on the local spin state."""
    unit = op >> 1
    n, n_bonds = table.n_sites, table.bond_sites.shape[0]
    if unit < n:
        return table.trans_weight
    if unit < n + n_bonds:
        i, j = table.bond_sites[unit - n]
        return table.bond_weight if spins[i] != spins[j] else 0.0
    f = unit - n - n_bonds
    site, sgn = table.field_sites[f], table.field_signs[f]
    return float(table.field_weights[f]) if spins[site] == sgn else 0.0


def config_log_weight(state: SSEState) -> float:
    """Log product of operator weights along the string (test support)."""
    work = state.sigma.copy()
    total = 0.0
    for op in state.string:
        if op < 0:
            continue
        w = operator_weight_on(state.table, int(op), work)
        if w <= 0.0:
            return -np.inf
        total += np.log(w)
        if op & 1 == 1:
            work[op >> 1] = -work[op >> 1]
    return total


def validate_state(state: SSEState):
    """Assert the string invariants: periodicity, counters, weights."""
    assert state.n_ops <= state.m_cut
    n_real = int(np.sum(state.string >= 0))
    assert n_real == state.n_ops, (n_real, state.n_ops)
    k = sum(1 for op in state.string if op >= 0 and (op >> 1) < state.table.n_sites)
    assert k == state.k_trans, (k, state.k_trans)
    assert np.array_equal(state.propagate_origin(), state.sigma)
    assert np.isfinite(config_log_weight(state))
