"""Dense exact-diagonalization oracle for small instances.

Full-spectrum diagonalization gives exact finite-temperature references for
every quantity the Monte Carlo engine estimates: energy, overlap parameter,
answer probability, and the fidelity susceptibility via the finite-T state
fidelity evaluated at pairs of nearby interpolation parameters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .hamiltonian import ProblemHamiltonian

MAX_DENSE_N = 14


class SizeTooLarge(Exception):
    pass


@dataclass(frozen=True)
class DenseSpectrum:
    lam: float
    eigenvalues: np.ndarray   # ascending
    eigenvectors: np.ndarray  # columns


def build_dense(ham: ProblemHamiltonian, lam: float, transverse_sign: float = -1.0,
                max_n: int = MAX_DENSE_N) -> np.ndarray:
    """H(lam) in the z basis (bit set = spin up = vertex in the set).

    ``transverse_sign`` is the sign of the driver sum of sigma^x terms; the
    default -1 matches the gauge used by the sampler. Both signs are unitarily
    equivalent.
    """
    if ham.n > max_n:
        raise SizeTooLarge(f"dense build capped at n={max_n}, got {ham.n}")
    n = ham.n
    dim = 1 << n
    spins = np.empty((dim, n))
    for site in range(n):
        spins[:, site] = np.where((np.arange(dim) >> site) & 1, 1.0, -1.0)
    diag = np.zeros(dim)
    for i, j in ham.bonds:
        diag += ham.coupling * spins[:, i] * spins[:, j]
    diag -= spins @ ham.fields
    h = np.zeros((dim, dim))
    np.fill_diagonal(h, (1.0 - lam) * diag)
    basis = np.arange(dim)
    for site in range(n):
        h[basis ^ (1 << site), basis] += lam * transverse_sign
    return h


def spectrum(ham: ProblemHamiltonian, lam: float, **kw) -> DenseSpectrum:
    evals, evecs = np.linalg.eigh(build_dense(ham, lam, **kw))
    return DenseSpectrum(lam=lam, eigenvalues=evals, eigenvectors=evecs)


def gap_profile(ham: ProblemHamiltonian, lambdas):
    """Per-lambda (E0, E1 - E0); returns (rows, min_gap, lam_at_min)."""
    rows = []
    for lam in lambdas:
        evals = np.linalg.eigvalsh(build_dense(ham, lam))
        rows.append((float(lam), float(evals[0]), float(evals[1] - evals[0])))
    gaps = [r[2] for r in rows]
    k = int(np.argmin(gaps))
    return rows, gaps[k], rows[k][0]


def _shifted_boltzmann(spec: DenseSpectrum, beta: float, half: bool = False):
    e = spec.eigenvalues - spec.eigenvalues[0]
    return np.exp(-(beta / 2.0 if half else beta) * e)


def finite_t_fidelity(ham: ProblemHamiltonian, lam1: float, lam2: float,
                      beta: float, max_n: int = 12) -> float:
    """Mixed-state fidelity between thermal states at lam1 and lam2.

    F = sqrt( Tr[e^{-beta H1/2} e^{-beta H2/2}] / sqrt(Z1 Z2) ); ground-state
    energies are factored out analytically so large beta is safe.
    """
    if ham.n > max_n:
        raise SizeTooLarge(f"fidelity capped at n={max_n}, got {ham.n}")
    s1 = spectrum(ham, lam1)
    s2 = spectrum(ham, lam2)
    d1 = _shifted_boltzmann(s1, beta, half=True)
    d2 = _shifted_boltzmann(s2, beta, half=True)
    overlap = s1.eigenvectors.T @ s2.eigenvectors
    num = float(d1 @ (overlap ** 2) @ d2)
    z1 = float(np.sum(_shifted_boltzmann(s1, beta)))
    z2 = float(np.sum(_shifted_boltzmann(s2, beta)))
    return float(np.sqrt(num / np.sqrt(z1 * z2)))


def chi_f_exact(ham: ProblemHamiltonian, lam: float, beta: float,
                eps: float = 1e-2, levels: int = 3, max_n: int = 12) -> float:
    """Fidelity susceptibility as the eps->0 limit of 2(1-F)/eps^2.

    Symmetric evaluation around lam with Richardson extrapolation over
    eps, eps/2, ... (``levels`` rungs, default eps ladder 1e-2, 5e-3, 2.5e-3).
    """
    g = []
    for k in range(levels):
        e = eps / (2 ** k)
        f = finite_t_fidelity(ham, lam - e / 2.0, lam + e / 2.0, beta, max_n=max_n)
        g.append(2.0 * (1.0 - f) / e ** 2)
    # eliminate eps^2 then eps^4 errors
    while len(g) > 1:
        order = 2 * (levels - len(g) + 1)
        g = [(2 ** order * g[i + 1] - g[i]) / (2 ** order - 1) for i in range(len(g) - 1)]
    return float(g[0])


def chi_f_perturbative(ham: ProblemHamiltonian, lam: float, max_n: int = 12) -> float:
    """Zero-temperature chi_F from second-order perturbation theory.

    Requires a non-degenerate ground state. Independent of the fidelity
    route; used to pin the large-beta limit.
    """
    if ham.n > max_n:
        raise SizeTooLarge(f"perturbative chi_F capped at n={max_n}")
    spec = spectrum(ham, lam)
    dh = build_dense(ham, 1.0) - build_dense(ham, 0.0)  # d/dlam of H(lam)
    v0 = spec.eigenvectors[:, 0]
    amp = spec.eigenvectors.T @ (dh @ v0)
    de = spec.eigenvalues - spec.eigenvalues[0]
    out = 0.0
    for m in range(1, len(de)):
        out += amp[m] ** 2 / de[m] ** 2
    return float(out)


def thermal_observables(ham: ProblemHamiltonian, answer, lam: float, beta: float,
                        max_n: int = 12):
    """Exact thermal (energy, q, p_ans) at (lam, beta).

    q = (1/N) sum_i <sigma_i>^2 and p_ans is the thermal weight of the
    answer basis state.
    """
    if ham.n > max_n:
        raise SizeTooLarge(f"thermal observables capped at n={max_n}")
    spec = spectrum(ham, lam)
    w = _shifted_boltzmann(spec, beta)
    w /= w.sum()
    probs = (spec.eigenvectors ** 2) @ w  # thermal weight of each basis state
    energy = float(np.dot(spec.eigenvalues, w))
    n = ham.n
    dim = 1 << n
    q = 0.0
    for site in range(n):
        sz = np.where((np.arange(dim) >> site) & 1, 1.0, -1.0)
        q += float(np.dot(probs, sz)) ** 2
    q /= n
    ans_index = 0
    for site, bit in enumerate(answer):
        if bit:
            ans_index |= 1 << site
    return energy, q, float(probs[ans_index])


def ground_state_renyi_bits(ham: ProblemHamiltonian, lam: float, order: float,
                            max_n: int = 12) -> float:
    """Renyi entropy (base 2) of the ground state in the z basis."""
    if ham.n > max_n:
        raise SizeTooLarge(f"capped at n={max_n}")
    spec = spectrum(ham, lam)
    p = spec.eigenvectors[:, 0] ** 2
    if np.isinf(order):
        return float(-np.log2(np.max(p)))
    return float(np.log2(np.sum(p ** order)) / (1.0 - order))
