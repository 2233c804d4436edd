"""Ensemble orchestration: runs, aggregation, scaling fits, figure data.

A run couples two independent exchange stacks per instance (the overlap
estimator needs two systems with the same disorder) and streams per-sweep
measurements into binned records, one per lambda grid point. Results are
written to an append-only store keyed by a hash of the resolved
configuration; identical reruns are byte-identical and never overwrite.
"""

from __future__ import annotations

import configparser
import csv
import hashlib
import io
import json
import multiprocessing
import os
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.optimize import curve_fit

from . import __version__
from .estimators import CSV_COLUMNS, MeasurementRecord, overlap_contribution
from .exchange import LambdaGrid, ReplicaStack
from .graphs import MISInstance, generate_er_graph, generate_unique_instance
from .hamiltonian import build_problem
from . import solver


class InsufficientSamples(Exception):
    pass


class FitDiverged(Exception):
    pass


@dataclass(frozen=True)
class EnsembleParams:
    sizes: tuple = (12, 16, 20)
    samples: int = 100
    degree: float = 3.0
    seed: int = 1
    solution_cap: int = solver.DEFAULT_SOLUTION_CAP
    max_attempts: int = 1000


@dataclass(frozen=True)
class SSEParams:
    beta_mult: float = 3.5
    mcs: int = 10_000
    therm: int = -1            # -1: same as mcs
    bins: int = 20
    grid_low: float = 0.02
    grid_high: float = 0.98
    replicas: int = 32
    exchange_every: int = 1
    m_init: int = 32
    p_ans_all_levels: bool = True
    penalty: float = 2.0
    start: str = "answer"      # or "random"; answer starts cut equilibration

    @property
    def therm_sweeps(self) -> int:
        return self.mcs if self.therm < 0 else self.therm


@dataclass(frozen=True)
class AnalysisParams:
    bootstrap: int = 1000
    seed: int = 99


@dataclass(frozen=True)
class ExperimentConfig:
    ensemble: EnsembleParams = field(default_factory=EnsembleParams)
    sse: SSEParams = field(default_factory=SSEParams)
    analysis: AnalysisParams = field(default_factory=AnalysisParams)

    def to_dict(self) -> dict:
        return {"ensemble": asdict(self.ensemble), "sse": asdict(self.sse),
                "analysis": asdict(self.analysis)}

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:12]

    @classmethod
    def from_ini(cls, path: str) -> "ExperimentConfig":
        cp = configparser.ConfigParser()
        with open(path) as fh:
            cp.read_file(fh)
        ens, sse, ana = EnsembleParams(), SSEParams(), AnalysisParams()
        if cp.has_section("ensemble"):
            s = cp["ensemble"]
            ens = EnsembleParams(
                sizes=tuple(int(t) for t in s.get("sizes", "12 16 20").split()),
                samples=s.getint("samples", ens.samples),
                degree=s.getfloat("degree", ens.degree),
                seed=s.getint("seed", ens.seed),
                solution_cap=s.getint("solution_cap", ens.solution_cap),
                max_attempts=s.getint("max_attempts", ens.max_attempts))
        if cp.has_section("sse"):
            s = cp["sse"]
            sse = SSEParams(
                beta_mult=s.getfloat("beta_mult", sse.beta_mult),
                mcs=s.getint("mcs", sse.mcs),
                therm=s.getint("therm", sse.therm),
                bins=s.getint("bins", sse.bins),
                grid_low=s.getfloat("grid_low", sse.grid_low),
                grid_high=s.getfloat("grid_high", sse.grid_high),
                replicas=s.getint("replicas", sse.replicas),
                exchange_every=s.getint("exchange_every", sse.exchange_every),
                m_init=s.getint("m_init", sse.m_init),
                p_ans_all_levels=s.getboolean("p_ans_all_levels", True),
                penalty=s.getfloat("penalty", sse.penalty),
                start=s.get("start", sse.start))
        if cp.has_section("analysis"):
            s = cp["analysis"]
            ana = AnalysisParams(bootstrap=s.getint("bootstrap", ana.bootstrap),
                                 seed=s.getint("seed", ana.seed))
        return cls(ensemble=ens, sse=sse, analysis=ana)


def derive_rng(master_seed: int, *key) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=tuple(key)))


def instance_seed_for(master_seed: int, n: int, sample: int) -> int:
    ss = np.random.SeedSequence([master_seed, n, sample])
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass
class RunStats:
    acceptance: list
    low_pairs: list
    round_trips: int
    max_fill: float
    mean_n: list


def run_instance_pair(instance: MISInstance, sse: SSEParams, master_seed: int,
                      sample_key: tuple, instance_id: str,
                      checkpoint_dir: str | None = None,
                      checkpoint_every: int = 0):
    """Two independent exchange stacks on one instance; binned records per lambda."""
    ham = build_problem(instance.graph, c=sse.penalty)
    n = instance.graph.n
    beta = sse.beta_mult * n
    grid = LambdaGrid(sse.grid_low, sse.grid_high, sse.replicas)
    if sse.start == "answer":
        sigma0 = [1 if b else -1 for b in instance.answer]
    elif sse.start == "random":
        sigma0 = None
    else:
        raise ValueError(f"unknown start mode {sse.start!r}")
    stacks = []
    for stack_idx in (0, 1):
        rngs = [derive_rng(master_seed, *sample_key, stack_idx, r)
                for r in range(grid.count)]
        ex_rng = derive_rng(master_seed, *sample_key, stack_idx, 1_000_000)
        stacks.append(ReplicaStack(ham, grid, beta, rngs, ex_rng,
                                   m_init=sse.m_init, sigma0=sigma0,
                                   instance_id=instance_id))
    therm_rounds = max(1, sse.therm_sweeps // sse.exchange_every)
    for _ in range(therm_rounds):
        for stack in stacks:
            stack.emc_round(sse.exchange_every, adjust=True)

    lams = grid.lambdas()
    records = [MeasurementRecord.empty(instance_id, float(lams[r]), beta, n,
                                       stacks[0].tables[r].constant, sse.bins)
               for r in range(grid.count)]
    ans_sigma = np.array([1 if b else -1 for b in instance.answer], np.int8)
    q_buf = [[np.empty(n, np.int8) for _ in range(grid.count)] for _ in stacks]
    max_fill = 0.0
    sum_n = np.zeros(grid.count)
    for sweep in range(sse.mcs):
        bin_idx = sweep * sse.bins // sse.mcs
        for stack in stacks:
            stack.sweep_all(adjust=False)
        if (sweep + 1) % sse.exchange_every == 0 and grid.count > 1:
            for stack in stacks:
                stack.exchange_pass()
        for r in range(grid.count):
            for si, stack in enumerate(stacks):
                st = stack.states[r]
                k_l, k_r, l_l, l_r, n_ops, p = st.measure(
                    ans_sigma, q_buf[si][r], all_levels=sse.p_ans_all_levels)
                records[r].add_string_sample(bin_idx, k_l, k_r, l_l, l_r, n_ops, p)
                max_fill = max(max_fill, n_ops / st.m_cut)
            records[r].add_q_sample(bin_idx, overlap_contribution(
                stacks[0].states[r], stacks[1].states[r],
                q_buf[0][r], q_buf[1][r]))
            sum_n[r] += (stacks[0].states[r].n_ops + stacks[1].states[r].n_ops) / 2.0
        if (checkpoint_dir and checkpoint_every
                and (sweep + 1) % checkpoint_every == 0):
            _write_checkpoints(checkpoint_dir, instance_id, stacks)
    stats = RunStats(
        acceptance=[stack.acceptance_rates().tolist() for stack in stacks],
        low_pairs=[stack.low_acceptance_pairs() for stack in stacks],
        round_trips=sum(stack.round_trips for stack in stacks),
        max_fill=max_fill,
        mean_n=(sum_n / sse.mcs).tolist())
    return records, stats


def _write_checkpoints(cdir: str, instance_id: str, stacks):
    os.makedirs(cdir, exist_ok=True)
    for si, stack in enumerate(stacks):
        for r, st in enumerate(stack.states):
            path = os.path.join(cdir, f"{instance_id}_stack{si}_r{r:03d}.json")
            tmp = path + ".tmp"
            with open(tmp, "w") as fh:
                fh.write(st.checkpoint())
            os.replace(tmp, path)


def format_float(x) -> str:
    if isinstance(x, float) and np.isnan(x):
        return "nan"
    return f"{x:.12g}" if isinstance(x, float) else str(x)


def write_result_csv(path: str, records):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for rec in records:
            row = rec.csv_row()
            w.writerow([format_float(row[c]) for c in CSV_COLUMNS])


def _run_one_sample(args):
    """Worker task: generate one instance, run the paired stacks, write files."""
    (cfg_dict, n, sample, out_dir, digest, checkpoint_every) = args
    cfg = _config_from_dict(cfg_dict)
    instance_id = f"N{n:03d}_s{sample:05d}"
    res_dir = os.path.join(out_dir, "results", digest)
    res_path = os.path.join(res_dir, f"{instance_id}.csv")
    inst_path = os.path.join(out_dir, "instances", f"{instance_id}.json")
    if os.path.exists(res_path):
        return {"instance_id": instance_id, "skipped": True}
    seed = instance_seed_for(cfg.ensemble.seed, n, sample)
    instance, reasons = generate_unique_instance(
        n, cfg.ensemble.degree, seed, solution_cap=cfg.ensemble.solution_cap,
        max_attempts=cfg.ensemble.max_attempts)
    records, stats = run_instance_pair(
        instance, cfg.sse, cfg.ensemble.seed, (n, sample), instance_id,
        checkpoint_dir=os.path.join(out_dir, "checkpoints") if checkpoint_every else None,
        checkpoint_every=checkpoint_every)
    os.makedirs(res_dir, exist_ok=True)
    os.makedirs(os.path.dirname(inst_path), exist_ok=True)
    if not os.path.exists(inst_path):
        with open(inst_path, "w") as fh:
            fh.write(instance.to_json())
    write_result_csv(res_path, records)
    return {
        "instance_id": instance_id, "skipped": False, "seed": seed,
        "attempts_discarded": reasons, "added_edges": instance.added_edges,
        "mis_size": instance.mis_size, "round_trips": stats.round_trips,
        "max_fill": stats.max_fill, "low_acceptance": stats.low_pairs,
        "acceptance": stats.acceptance,
    }


def _config_from_dict(d: dict) -> ExperimentConfig:
    return ExperimentConfig(ensemble=EnsembleParams(**{**d["ensemble"],
                                                       "sizes": tuple(d["ensemble"]["sizes"])}),
                            sse=SSEParams(**d["sse"]),
                            analysis=AnalysisParams(**d["analysis"]))


def run_ensemble(cfg: ExperimentConfig, out_dir: str, workers: int = 1,
                 checkpoint_every: int = 0) -> dict:
    """Generate + simulate the whole ensemble; returns the manifest."""
    digest = cfg.digest()
    os.makedirs(out_dir, exist_ok=True)
    tasks = [(cfg.to_dict(), n, sample, out_dir, digest, checkpoint_every)
             for n in cfg.ensemble.sizes
             for sample in range(cfg.ensemble.samples)]
    if workers > 1:
        with multiprocessing.Pool(workers) as pool:
            fragments = pool.map(_run_one_sample, tasks)
    else:
        fragments = [_run_one_sample(t) for t in tasks]
    fragments.sort(key=lambda f: f["instance_id"])
    manifest = {
        "version": __version__,
        "config": cfg.to_dict(),
        "config_digest": digest,
        "samples": fragments,
    }
    man_path = os.path.join(out_dir, f"manifest_{digest}.json")
    with open(man_path, "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    return manifest


def read_store(out_dir: str, digest: str | None = None):
    """All result rows in the store as a list of dicts (sorted by file)."""
    base = os.path.join(out_dir, "results")
    rows = []
    if not os.path.isdir(base):
        return rows
    digests = sorted(os.listdir(base)) if digest is None else [digest]
    for d in digests:
        ddir = os.path.join(base, d)
        if not os.path.isdir(ddir):
            continue
        for name in sorted(os.listdir(ddir)):
            if not name.endswith(".csv"):
                continue
            with open(os.path.join(ddir, name)) as fh:
                for row in csv.DictReader(fh):
                    row["n"] = int(row["instance_id"].split("_")[0][1:])
                    rows.append(row)
    return rows


def bootstrap_error(values: np.ndarray, b: int, rng) -> float:
    """Std of the mean over ``b`` bootstrap resamples."""
    if b < 2:
        raise InsufficientSamples("bootstrap needs B >= 2 resamples")
    idx = rng.integers(0, len(values), size=(b, len(values)))
    return float(np.std(values[idx].mean(axis=1)))


def aggregate(out_dir: str, bootstrap_b: int = 1000, seed: int = 99,
              digest: str | None = None):
    """Sample means with bootstrap errors per (n, lambda), plus peak table."""
    rows = read_store(out_dir, digest)
    if not rows:
        raise InsufficientSamples("empty result store")
    if bootstrap_b < 2:
        raise InsufficientSamples("bootstrap needs B >= 2 resamples")
    rng = np.random.default_rng(seed)
    by_key = {}
    for row in rows:
        by_key.setdefault((row["n"], float(row["lambda"])), []).append(row)
    agg_rows = []
    for (n, lam) in sorted(by_key):
        group = by_key[(n, lam)]
        if len(group) < 2:
            raise InsufficientSamples(
                f"need >= 2 samples at n={n} lambda={lam}, found {len(group)}")
        out = {"n": n, "lambda": lam, "samples": len(group)}
        for col in ("q", "chiF", "p_ans", "energy"):
            vals = np.array([float(g[col]) for g in group])
            out[f"{col}_mean"] = float(vals.mean())
            out[f"{col}_err"] = bootstrap_error(vals, bootstrap_b, rng)
        chif_n = np.array([float(g["chiF"]) / n for g in group])
        out["chiF_over_n_mean"] = float(chif_n.mean())
        out["chiF_over_n_err"] = bootstrap_error(chif_n, bootstrap_b, rng)
        s_vals = np.array([-np.log2(float(g["p_ans"])) / n for g in group
                           if float(g["p_ans"]) > 0])
        out["s_ans_over_n_mean"] = float(s_vals.mean()) if s_vals.size else float("nan")
        out["s_ans_zero_hits"] = len(group) - s_vals.size
        agg_rows.append(out)

    peaks = []
    for n in sorted({r["n"] for r in agg_rows}):
        sub = [r for r in agg_rows if r["n"] == n]
        sub.sort(key=lambda r: r["lambda"])
        lams = np.array([r["lambda"] for r in sub])
        curve = np.array([r["chiF_over_n_mean"] for r in sub])
        k = int(np.argmax(curve))
        # peak uncertainty: bootstrap whole curves over instances
        by_lam = []
        for r in sub:
            grp = by_key[(n, r["lambda"])]
            by_lam.append(np.array([float(g["chiF"]) / n for g in grp]))
        m = min(len(v) for v in by_lam)
        vals_peak, lams_peak = [], []
        for _ in range(min(bootstrap_b, 400)):
            idx = rng.integers(0, m, size=m)
            c = np.array([v[idx].mean() for v in by_lam])
            j = int(np.argmax(c))
            vals_peak.append(c[j])
            lams_peak.append(lams[j])
        peaks.append({
            "n": n, "lambda_peak": float(lams[k]),
            "peak_chiF_over_n": float(curve[k]),
            "peak_err": float(np.std(vals_peak)),
            "lambda_peak_err": float(np.std(lams_peak)),
        })
    return agg_rows, peaks


def write_dict_csv(path: str, rows, columns):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([format_float(r[c]) for c in columns])


# ---------------------------------------------------------------------------
# solver-scaling experiment

@dataclass(frozen=True)
class FitResult:
    model: str
    params: tuple
    errors: tuple
    residual_sum: float


def _stretched(n, a, b, c):
    return a * np.power(n, b) + c


def fit_stretched(sizes, y) -> FitResult:
    x = np.asarray(sizes, float)
    y = np.asarray(y, float)
    if not np.all(np.isfinite(y)):
        raise FitDiverged(f"non-finite fit input {y}")
    try:
        p, _ = curve_fit(_stretched, x, y, p0=[0.5, 0.5, 0.0], maxfev=50_000)
    except (RuntimeError, ValueError) as exc:
        raise FitDiverged(str(exc)) from exc
    if not np.all(np.isfinite(p)):
        raise FitDiverged(f"non-finite parameters {p}")
    res = float(np.sum((_stretched(x, *p) - y) ** 2))
    return FitResult(model="stretched", params=tuple(float(v) for v in p),
                     errors=(float("nan"),) * 3, residual_sum=res)


def fit_logarithmic(sizes, y) -> FitResult:
    x = np.asarray(sizes, float)
    y = np.asarray(y, float)
    if not np.all(np.isfinite(y)):
        raise FitDiverged(f"non-finite fit input {y}")
    design = np.vstack([np.ones_like(x), np.log(x)]).T
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    if not np.all(np.isfinite(coef)):
        raise FitDiverged("singular normal equations")
    res = float(np.sum((design @ coef - y) ** 2))
    return FitResult(model="logarithmic", params=tuple(float(v) for v in coef),
                     errors=(float("nan"),) * 2, residual_sum=res)


def scaling_steps(sizes, samples: int, degree: float, seed: int,
                  ensemble: str, branch: str = "random",
                  solution_cap: int = solver.DEFAULT_SOLUTION_CAP,
                  budget: int = solver.DEFAULT_STEP_BUDGET) -> dict:
    """Solver step counts per size for the raw or unique-solution ensemble."""
    if ensemble not in ("er", "unique"):
        raise ValueError("ensemble must be 'er' or 'unique'")
    out = {}
    for n in sizes:
        steps = np.empty(samples, np.int64)
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(n,)))
        for i in range(samples):
            if ensemble == "er":
                g = generate_er_graph(n, degree, rng)
            else:
                inst, _ = generate_unique_instance(
                    n, degree, instance_seed_for(seed, n, i),
                    solution_cap=solution_cap)
                g = inst.graph
            steps[i] = solver.solve_mis(g, branch=branch,
                                        seed=instance_seed_for(seed + 1, n, i),
                                        budget=budget).steps
        out[n] = steps
    return out


def fit_scaling(steps_by_size: dict, bootstrap_b: int = 1000, seed: int = 99):
    """Fit log(median steps) against size with both models.

    Parameter errors are the std over bootstrap resamples of the per-size
    step samples (medians recomputed, both fits redone per resample).
    """
    sizes = sorted(steps_by_size)
    if len(sizes) < 4:
        raise InsufficientSamples("need >= 4 sizes for the scaling fit")
    y = np.log([np.median(steps_by_size[n]) for n in sizes])
    stretched = fit_stretched(sizes, y)
    logfit = fit_logarithmic(sizes, y)
    rng = np.random.default_rng(seed)
    boot_s, boot_l = [], []
    for _ in range(bootstrap_b):
        yb = []
        for n in sizes:
            v = steps_by_size[n]
            yb.append(np.log(np.median(v[rng.integers(0, len(v), len(v))])))
        try:
            boot_s.append(fit_stretched(sizes, np.array(yb)).params)
            boot_l.append(fit_logarithmic(sizes, np.array(yb)).params)
        except FitDiverged:
            continue
    if len(boot_s) < max(2, bootstrap_b // 2):
        raise FitDiverged("bootstrap refits mostly diverged")
    s_err = tuple(float(v) for v in np.std(np.array(boot_s), axis=0))
    l_err = tuple(float(v) for v in np.std(np.array(boot_l), axis=0))
    stretched = replace(stretched, errors=s_err)
    logfit = replace(logfit, errors=l_err)
    return stretched, logfit


# ---------------------------------------------------------------------------
# figure data


def emit_figures(out_dir: str, fig_dir: str, bootstrap_b: int = 1000,
                 seed: int = 99, digest: str | None = None):
    """Write plot-ready CSVs for the overlap, susceptibility and answer data."""
    rows = read_store(out_dir, digest)
    if not rows:
        raise InsufficientSamples("empty result store")
    os.makedirs(fig_dir, exist_ok=True)
    agg_rows, peaks = aggregate(out_dir, bootstrap_b=bootstrap_b, seed=seed,
                                digest=digest)

    per_sample_cols = ("instance_id", "n", "lambda", "value")
    for name, col, transform in (
            ("fig_q_samples.csv", "q", lambda v, n: v),
            ("fig_chif_samples.csv", "chiF", lambda v, n: v),
            ("fig_fans_samples.csv", "p_ans", lambda v, n: v)):
        out = [{"instance_id": r["instance_id"], "n": r["n"],
                "lambda": float(r["lambda"]),
                "value": transform(float(r[col]), r["n"])}
               for r in sorted(rows, key=lambda r: (r["instance_id"], float(r["lambda"])))]
        write_dict_csv(os.path.join(fig_dir, name), out, per_sample_cols)

    mean_cols = ("n", "lambda", "mean", "err")
    write_dict_csv(os.path.join(fig_dir, "fig_q_mean.csv"),
                   [{"n": r["n"], "lambda": r["lambda"], "mean": r["q_mean"],
                     "err": r["q_err"]} for r in agg_rows], mean_cols)
    write_dict_csv(os.path.join(fig_dir, "fig_chif_over_n_mean.csv"),
                   [{"n": r["n"], "lambda": r["lambda"],
                     "mean": r["chiF_over_n_mean"], "err": r["chiF_over_n_err"]}
                    for r in agg_rows], mean_cols)
    write_dict_csv(os.path.join(fig_dir, "fig_sans_over_n_mean.csv"),
                   [{"n": r["n"], "lambda": r["lambda"],
                     "mean": r["s_ans_over_n_mean"], "err": float("nan")}
                    for r in agg_rows], mean_cols)

    # centered derivative of the mean overlap on the uniform grid
    dq_rows = []
    for n in sorted({r["n"] for r in agg_rows}):
        sub = sorted([r for r in agg_rows if r["n"] == n], key=lambda r: r["lambda"])
        lams = np.array([r["lambda"] for r in sub])
        if len(lams) >= 3:
            spacing = np.diff(lams)
            if not np.allclose(spacing, spacing[0], rtol=1e-6):
                raise ValueError("derivative needs a uniform lambda grid")
            q = np.array([r["q_mean"] for r in sub])
            qe = np.array([r["q_err"] for r in sub])
            for i in range(1, len(lams) - 1):
                d = (q[i + 1] - q[i - 1]) / (lams[i + 1] - lams[i - 1])
                de = np.sqrt(qe[i + 1] ** 2 + qe[i - 1] ** 2) / (lams[i + 1] - lams[i - 1])
                dq_rows.append({"n": n, "lambda": float(lams[i]),
                                "dq_dlambda": float(d), "err": float(de),
                                "grid_spacing": float(spacing[0])})
    write_dict_csv(os.path.join(fig_dir, "fig_dq_dlambda.csv"), dq_rows,
                   ("n", "lambda", "dq_dlambda", "err", "grid_spacing"))

    write_dict_csv(os.path.join(fig_dir, "fig_chif_peaks.csv"), peaks,
                   ("n", "lambda_peak", "peak_chiF_over_n", "peak_err",
                    "lambda_peak_err"))
    return agg_rows, peaks
