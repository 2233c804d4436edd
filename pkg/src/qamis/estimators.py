"""Measurement accumulation and estimates from SSE configurations.

Per sweep each chain contributes one "string sample": the operator counts
split at a binomial cut (for the fidelity susceptibility), the total
operator number (energy), and the fraction of propagation levels equal to
the answer state. Overlap samples come from pairs of independent chains at
the same interpolation parameter. Samples are pooled into equal bins; the
nonlinear estimates and their errors come from jackknife over bins.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

STRING_COLS = ("k_l", "k_r", "l_l", "l_r", "klkr", "lllr", "kllr", "llkr",
               "n_ops", "p_ans")
CSV_COLUMNS = ("instance_id", "lambda", "q", "q_err", "chiF", "chiF_err",
               "p_ans", "p_ans_err", "energy", "energy_err", "n_mean", "samples")


class ReplicaMismatch(Exception):
    """Overlap requested between chains of different instance or lambda."""


def overlap_contribution(state_a, state_b, spins_a, spins_b) -> float:
    """(1/N) sum_i sigma_i^(1) sigma_i^(2) from two independent chains."""
    if state_a.instance_id != state_b.instance_id:
        raise ReplicaMismatch(
            f"instances differ: {state_a.instance_id!r} vs {state_b.instance_id!r}")
    if state_a.table.lam != state_b.table.lam:
        raise ReplicaMismatch(
            f"lambdas differ: {state_a.table.lam} vs {state_b.table.lam}")
    return float(np.mean(spins_a.astype(np.float64) * spins_b))


def chi_f_from_moments(m, lam: float) -> float:
    """Fidelity susceptibility from the accumulated split-count moments.

    ``m`` maps the STRING_COLS names to sample means.
    """
    cov_kk = m["klkr"] - m["k_l"] * m["k_r"]
    cov_ll = m["lllr"] - m["l_l"] * m["l_r"]
    cov_kl = m["kllr"] - m["k_l"] * m["l_r"]
    cov_lk = m["llkr"] - m["l_l"] * m["k_r"]
    return (cov_kk / (2 * lam ** 2)
            + cov_ll / (2 * (1 - lam) ** 2)
            - cov_kl / (2 * lam * (1 - lam))
            - cov_lk / (2 * lam * (1 - lam)))


@dataclass
class MeasurementRecord:
    """Binned measurements for one (instance, lambda) pair."""

    instance_id: str
    lam: float
    beta: float
    n_sites: int
    constant: float                 # C(lambda) of the operator table
    string_sums: np.ndarray         # (bins, len(STRING_COLS))
    string_counts: np.ndarray       # (bins,)
    q_sums: np.ndarray              # (bins,)
    q_counts: np.ndarray            # (bins,)

    @classmethod
    def empty(cls, instance_id, lam, beta, n_sites, constant, bins):
        return cls(instance_id=instance_id, lam=lam, beta=beta,
                   n_sites=n_sites, constant=constant,
                   string_sums=np.zeros((bins, len(STRING_COLS))),
                   string_counts=np.zeros(bins),
                   q_sums=np.zeros(bins), q_counts=np.zeros(bins))

    def add_string_sample(self, bin_idx, k_l, k_r, l_l, l_r, n_ops, p_frac):
        row = self.string_sums[bin_idx]
        row[0] += k_l
        row[1] += k_r
        row[2] += l_l
        row[3] += l_r
        row[4] += k_l * k_r
        row[5] += l_l * l_r
        row[6] += k_l * l_r
        row[7] += l_l * k_r
        row[8] += n_ops
        row[9] += p_frac
        self.string_counts[bin_idx] += 1

    def add_q_sample(self, bin_idx, q):
        self.q_sums[bin_idx] += q
        self.q_counts[bin_idx] += 1

    @property
    def samples(self) -> int:
        return int(self.string_counts.sum())

    def merge(self, other: "MeasurementRecord") -> "MeasurementRecord":
        """Pool bins from another record of the same (instance, lambda)."""
        if (other.instance_id, other.lam, other.beta) != (self.instance_id, self.lam, self.beta):
            raise ReplicaMismatch("records belong to different runs")
        return MeasurementRecord(
            instance_id=self.instance_id, lam=self.lam, beta=self.beta,
            n_sites=self.n_sites, constant=self.constant,
            string_sums=np.vstack([self.string_sums, other.string_sums]),
            string_counts=np.concatenate([self.string_counts, other.string_counts]),
            q_sums=np.concatenate([self.q_sums, other.q_sums]),
            q_counts=np.concatenate([self.q_counts, other.q_counts]))

    def _pooled_estimates(self, skip: int = -1) -> dict:
        keep = np.arange(self.string_sums.shape[0]) != skip
        cnt = self.string_counts[keep].sum()
        if cnt == 0:
            raise ValueError("no samples")
        means = {c: float(self.string_sums[keep, i].sum() / cnt)
                 for i, c in enumerate(STRING_COLS)}
        qc = self.q_counts[keep].sum()
        out = {
            "chiF": chi_f_from_moments(means, self.lam),
            "energy": self.constant - means["n_ops"] / self.beta,
            "p_ans": means["p_ans"],
            "n_mean": means["n_ops"],
            "q": float(self.q_sums[keep].sum() / qc) if qc > 0 else np.nan,
        }
        return out

    def estimates(self) -> dict:
        """Point estimates plus jackknife-over-bins errors."""
        live = np.flatnonzero(self.string_counts > 0)
        if live.size == 0:
            raise ValueError("empty record")
        center = self._pooled_estimates()
        errs = {k: 0.0 for k in ("chiF", "energy", "p_ans", "q")}
        if live.size >= 2:
            parts = [self._pooled_estimates(skip=b) for b in live]
            nb = live.size
            for key in errs:
                vals = np.array([p[key] for p in parts])
                if np.any(np.isnan(vals)):
                    errs[key] = np.nan
                    continue
                errs[key] = float(np.sqrt((nb - 1) / nb * np.sum((vals - vals.mean()) ** 2)))
        out = dict(center)
        out.update({f"{k}_err": v for k, v in errs.items()})
        out["samples"] = self.samples
        return out

    def csv_row(self) -> dict:
        est = self.estimates()
        return {
            "instance_id": self.instance_id,
            "lambda": self.lam,
            "q": est["q"],
            "q_err": est["q_err"],
            "chiF": est["chiF"],
            "chiF_err": est["chiF_err"],
            "p_ans": est["p_ans"],
            "p_ans_err": est["p_ans_err"],
            "energy": est["energy"],
            "energy_err": est["energy_err"],
            "n_mean": est["n_mean"],
            "samples": est["samples"],
        }


def s_ans_bits(p_ans: float, samples: int):
    """-log2 p_ans; a zero-hit run returns the resolution bound instead.

    Returns (value, is_bound): with no hits the true probability is only
    known to be below 1/samples, so the entropy is reported as the
    corresponding lower bound.
    """
    if p_ans > 0:
        return float(-np.log2(p_ans)), False
    return float(np.log2(max(samples, 1))), True
