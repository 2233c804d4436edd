"""Exchange Monte Carlo over a grid of interpolation parameters.

R chains run at equally spaced lambda values; after sweeping, adjacent
pairs swap full SSE configurations with probability

    min[1, (l_r / l_{r+1})^(T_{r+1} - T_r) * ((1-l_r)/(1-l_{r+1}))^(P_{r+1} - P_r)]

where T counts transverse-unit operators and P counts bond + field
operators in each chain's string (both roles of a transverse unit carry
the lambda prefactor; bond and field weights carry 1-lambda). Exponents
are combined in log space. Even and odd pairs alternate between rounds.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .hamiltonian import ProblemHamiltonian, build_operator_table
from .sse import SSEState

LOW_ACCEPTANCE_THRESHOLD = 0.05


@dataclass(frozen=True)
class LambdaGrid:
    low: float
    high: float
    count: int

    def __post_init__(self):
        if not (0.0 < self.low < 1.0) or not (0.0 < self.high < 1.0):
            raise ValueError("grid must stay strictly inside (0, 1)")
        if self.count < 1:
            raise ValueError("need at least one grid point")
        if self.count > 1 and not self.low < self.high:
            raise ValueError("need low < high")

    def lambdas(self) -> np.ndarray:
        if self.count == 1:
            return np.array([self.low])
        return np.linspace(self.low, self.high, self.count)


def exchange_log_prob(lam_a: float, lam_b: float, t_a: int, t_b: int,
                      p_a: int, p_b: int) -> float:
    """Log of the swap acceptance for adjacent chains a (lower) and b."""
    return ((t_b - t_a) * (np.log(lam_a) - np.log(lam_b))
            + (p_b - p_a) * (np.log(1.0 - lam_a) - np.log(1.0 - lam_b)))


class ReplicaStack:
    """R SSE chains pinned to a lambda grid, exchanged pairwise."""

    def __init__(self, ham: ProblemHamiltonian, grid: LambdaGrid, beta: float,
                 rngs, exchange_rng, m_init: int = 32, sigma0=None,
                 instance_id: str = ""):
        self.grid = grid
        lams = grid.lambdas()
        if len(rngs) != len(lams):
            raise ValueError("need one RNG per grid point")
        self.tables = [build_operator_table(ham, float(lam)) for lam in lams]
        self.states = [SSEState(t, beta, rng, m_init=m_init, sigma0=sigma0,
                                instance_id=instance_id)
                       for t, rng in zip(self.tables, rngs)]
        self.exchange_rng = exchange_rng
        self.round = 0
        r = grid.count
        self.attempts = np.zeros(max(r - 1, 0), np.int64)
        self.accepts = np.zeros(max(r - 1, 0), np.int64)
        # walker bookkeeping for round-trip monitoring
        self.walker_at = list(range(r))
        self._walker_mark = ["low" if i == 0 else ("high" if i == r - 1 else "")
                             for i in range(r)]
        self.round_trips = 0

    @property
    def count(self) -> int:
        return self.grid.count

    def sweep_all(self, adjust: bool = False):
        for st in self.states:
            st.sweep(adjust=adjust)

    def attempt_exchange(self, r: int):
        """Propose swapping the configurations at grid points r and r+1."""
        a, b = self.states[r], self.states[r + 1]
        lam_a, lam_b = self.tables[r].lam, self.tables[r + 1].lam
        logp = exchange_log_prob(lam_a, lam_b, a.k_trans, b.k_trans,
                                 a.n_problem_ops, b.n_problem_ops)
        self.attempts[r] += 1
        if logp >= 0.0 or self.exchange_rng.random() < np.exp(logp):
            a.swap_configuration(b)
            self.accepts[r] += 1
            w = self.walker_at[r]
            self.walker_at[r] = self.walker_at[r + 1]
            self.walker_at[r + 1] = w
            self._update_walker_marks()

    def _update_walker_marks(self):
        r = self.count
        for pos in (0, r - 1):
            w = self.walker_at[pos]
            mark = "low" if pos == 0 else "high"
            if mark == "low" and self._walker_mark[w] == "high_after_low":
                self.round_trips += 1
                self._walker_mark[w] = "low"
            elif mark == "high" and self._walker_mark[w] == "low":
                self._walker_mark[w] = "high_after_low"
            elif self._walker_mark[w] == "":
                self._walker_mark[w] = mark

    def exchange_pass(self):
        start = self.round % 2
        for r in range(start, self.count - 1, 2):
            self.attempt_exchange(r)
        self.round += 1

    def emc_round(self, sweeps_between: int, adjust: bool = False):
        """sweeps_between MCS on every chain, then one alternating pass."""
        for _ in range(sweeps_between):
            self.sweep_all(adjust=adjust)
        if self.count > 1:
            self.exchange_pass()

    def acceptance_rates(self) -> np.ndarray:
        with np.errstate(invalid="ignore"):
            return np.where(self.attempts > 0, self.accepts / np.maximum(self.attempts, 1),
                            np.nan)

    def low_acceptance_pairs(self):
        rates = self.acceptance_rates()
        return [(r, float(rates[r])) for r in range(len(rates))
                if self.attempts[r] > 0 and rates[r] < LOW_ACCEPTANCE_THRESHOLD]
