"""Problem Hamiltonian and its decomposition into non-negative SSE operators.

The classical cost encodes maximum-independent-set: an antiferromagnetic
bond of strength c/4 per edge plus a per-vertex longitudinal field
(2 - c*degree)/4, with the convention

    E(sigma) = sum_bonds J sigma_i sigma_j - sum_i h_i sigma_i .

The annealing Hamiltonian interpolates (1-lambda) * problem + lambda *
transverse driver. For sampling, every term is shifted by the smallest
constant that makes its matrix elements non-negative in the z basis, and
the driver is taken in the gauge where its off-diagonal weight is +lambda
(a sublattice-free spin-flip gauge that leaves the spectrum and every
z-diagonal observable unchanged).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ProblemHamiltonian:
    n: int
    bonds: tuple           # ((i, j), ...) sorted
    coupling: float        # J = c/4, same for every bond
    fields: np.ndarray     # h_i = (2 - c*degree_i)/4
    penalty: float         # c

    def __post_init__(self):
        if self.penalty <= 1:
            raise ValueError("penalty constant must exceed 1")


def build_problem(graph, c: float = 2.0) -> ProblemHamiltonian:
    degrees = graph.degrees()
    fields = (2.0 - c * degrees) / 4.0
    return ProblemHamiltonian(n=graph.n, bonds=tuple(graph.edges),
                              coupling=c / 4.0, fields=fields, penalty=c)


def classical_energy(ham: ProblemHamiltonian, sigma) -> float:
    """E(sigma) for sigma in {-1,+1}^n."""
    sigma = np.asarray(sigma, dtype=np.float64)
    if sigma.shape[0] != ham.n or not np.all(np.abs(sigma) == 1):
        raise ValueError("sigma must be +-1 of length n")
    e = 0.0
    for i, j in ham.bonds:
        e += ham.coupling * sigma[i] * sigma[j]
    e -= float(np.dot(ham.fields, sigma))
    return e


@dataclass(frozen=True)
class OperatorTable:
    """SSE operator units at a fixed interpolation parameter.

    Unit numbering: u in [0, n) are transverse site units (diagonal role
    weight lam, spin-flip role weight lam); u in [n, n+B) are bond units
    with weight profile {0, (1-lam)*c/2} (nonzero on antiparallel spins);
    u in [n+B, n+B+F) are field units on the vertices with h_i != 0, weight
    profile {0, 2(1-lam)|h_i|} (nonzero when sigma_i aligns with sign h_i).
    ``constant`` is the total shift C(lam) so that the unit sum equals
    -H(lam) + C(lam).
    """

    lam: float
    n_sites: int
    bond_sites: np.ndarray    # (B, 2) int64
    field_sites: np.ndarray   # (F,) int64
    field_signs: np.ndarray   # (F,) int8
    trans_weight: float
    bond_weight: float
    field_weights: np.ndarray  # (F,) float64
    cum_weights: np.ndarray    # cumulative max weights over all units
    total_weight: float
    constant: float
    beta_independent_id: tuple  # (n, bonds, penalty) to detect table mismatch

    @property
    def n_units(self) -> int:
        return self.n_sites + self.bond_sites.shape[0] + self.field_sites.shape[0]


def build_operator_table(ham: ProblemHamiltonian, lam: float) -> OperatorTable:
    if not (0.0 <= lam <= 1.0):
        raise ValueError("lambda must lie in [0, 1]")
    bond_sites = np.array([[i, j] for i, j in ham.bonds], np.int64).reshape(-1, 2)
    field_idx = [i for i in range(ham.n) if ham.fields[i] != 0.0]
    field_sites = np.array(field_idx, np.int64)
    field_signs = np.array([1 if ham.fields[i] > 0 else -1 for i in field_idx], np.int8)
    trans_w = lam
    bond_w = (1.0 - lam) * ham.penalty / 2.0
    field_w = np.array([2.0 * (1.0 - lam) * abs(ham.fields[i]) for i in field_idx])
    weights = np.concatenate([
        np.full(ham.n, trans_w),
        np.full(bond_sites.shape[0], bond_w),
        field_w,
    ])
    cum = np.cumsum(weights)
    total = float(cum[-1]) if cum.size else 0.0
    constant = (len(ham.bonds) * (1.0 - lam) * ham.penalty / 4.0
                + (1.0 - lam) * float(np.sum(np.abs(ham.fields)))
                + lam * ham.n)
    return OperatorTable(
        lam=lam, n_sites=ham.n, bond_sites=bond_sites,
        field_sites=field_sites, field_signs=field_signs,
        trans_weight=trans_w, bond_weight=bond_w, field_weights=field_w,
        cum_weights=cum, total_weight=total, constant=constant,
        beta_independent_id=(ham.n, ham.bonds, ham.penalty))


def spin_of_basis(state: int, site: int) -> int:
    """z-spin of ``site`` in computational basis index ``state`` (bit set = +1)."""
    return 1 if (state >> site) & 1 else -1


def operator_sum_dense(table: OperatorTable) -> np.ndarray:
    """Assemble sum of all unit operators as a dense matrix (test support).

    The identity to check is  sum_k W_k == -H(lam) + C(lam).
    """
    dim = 1 << table.n_sites
    out = np.zeros((dim, dim))
    for m in range(dim):
        diag = 0.0
        for b in range(table.bond_sites.shape[0]):
            i, j = table.bond_sites[b]
            si = spin_of_basis(m, int(i))
            sj = spin_of_basis(m, int(j))
            diag += 0.5 * table.bond_weight * (1 - si * sj)
        for f in range(table.field_sites.shape[0]):
            site = int(table.field_sites[f])
            sgn = int(table.field_signs[f])
            diag += 0.5 * table.field_weights[f] * (1 + sgn * spin_of_basis(m, site))
        diag += table.trans_weight * table.n_sites  # diagonal role of every site unit
        out[m, m] += diag
        for site in range(table.n_sites):
            out[m ^ (1 << site), m] += table.trans_weight
    return out
