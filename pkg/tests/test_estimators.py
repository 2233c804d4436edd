import numpy as np
import pytest

from qamis import ed
from qamis.estimators import (CSV_COLUMNS, MeasurementRecord, ReplicaMismatch,
                              chi_f_from_moments, overlap_contribution,
                              s_ans_bits)
from qamis.graphs import Graph, generate_unique_instance
from qamis.hamiltonian import build_operator_table, build_problem
from qamis.sse import SSEState


def _record(bins=4):
    return MeasurementRecord.empty("x", 0.5, 8.0, 2, 3.0, bins)


def test_chi_f_of_constant_string_is_zero():
    rec = _record()
    for i in range(40):
        rec.add_string_sample(i % 4, 3, 4, 5, 6, 18, 0.5)
        rec.add_q_sample(i % 4, 0.25)
    est = rec.estimates()
    assert est["chiF"] == pytest.approx(0.0, abs=1e-12)
    assert est["chiF_err"] == pytest.approx(0.0, abs=1e-12)
    assert est["q"] == pytest.approx(0.25)
    assert est["energy"] == pytest.approx(3.0 - 18 / 8.0)
    assert est["samples"] == 40


def test_chi_f_moment_combination():
    m = {"k_l": 1.0, "k_r": 2.0, "l_l": 3.0, "l_r": 4.0,
         "klkr": 2.5, "lllr": 12.5, "kllr": 4.5, "llkr": 6.5}
    lam = 0.25
    expect = (0.5 / (2 * lam ** 2) + 0.5 / (2 * (1 - lam) ** 2)
              - 0.5 / (2 * lam * (1 - lam)) - 0.5 / (2 * lam * (1 - lam)))
    assert chi_f_from_moments(m, lam) == pytest.approx(expect)


def test_merge_is_order_independent():
    rng = np.random.default_rng(0)
    recs = []
    for _ in range(3):
        r = _record(bins=3)
        for i in range(30):
            vals = rng.integers(0, 6, size=4)
            r.add_string_sample(i % 3, *vals, int(vals.sum()), rng.random())
            r.add_q_sample(i % 3, rng.random() * 2 - 1)
        recs.append(r)
    a = recs[0].merge(recs[1]).merge(recs[2])
    b = recs[2].merge(recs[0].merge(recs[1]))
    c = recs[1].merge(recs[2]).merge(recs[0])
    ea, eb, ec = a.estimates(), b.estimates(), c.estimates()
    for k in ea:
        assert ea[k] == pytest.approx(eb[k], rel=1e-12)
        assert ea[k] == pytest.approx(ec[k], rel=1e-12)


def test_merge_rejects_mismatched_records():
    a = _record()
    b = MeasurementRecord.empty("x", 0.6, 8.0, 2, 3.0, 4)
    with pytest.raises(ReplicaMismatch):
        a.merge(b)


def test_overlap_requires_matching_instance_and_lambda():
    g = Graph.from_edges(2, [(0, 1)])
    ham = build_problem(g, 2.0)
    t1 = build_operator_table(ham, 0.4)
    t2 = build_operator_table(ham, 0.6)
    s1 = SSEState(t1, 4.0, np.random.default_rng(0), instance_id="a")
    s2 = SSEState(t2, 4.0, np.random.default_rng(1), instance_id="a")
    s3 = SSEState(t1, 4.0, np.random.default_rng(2), instance_id="b")
    spins = np.ones(2, np.int8)
    with pytest.raises(ReplicaMismatch):
        overlap_contribution(s1, s2, spins, spins)
    with pytest.raises(ReplicaMismatch):
        overlap_contribution(s1, s3, spins, spins)
    s4 = SSEState(t1, 4.0, np.random.default_rng(3), instance_id="a")
    assert overlap_contribution(s1, s4, spins, -spins) == -1.0
    assert -1.0 <= overlap_contribution(s1, s4, spins, np.array([1, -1], np.int8)) <= 1.0


def test_s_ans_bits_zero_hit_bound():
    val, is_bound = s_ans_bits(0.25, 1000)
    assert val == pytest.approx(2.0) and not is_bound
    val, is_bound = s_ans_bits(0.0, 1024)
    assert is_bound and val == pytest.approx(10.0)


def test_csv_row_schema():
    rec = _record()
    for i in range(8):
        rec.add_string_sample(i % 4, 1, 1, 2, 2, 6, 0.1)
        rec.add_q_sample(i % 4, 0.0)
    row = rec.csv_row()
    assert tuple(row.keys()) == CSV_COLUMNS
    assert row["instance_id"] == "x"
    assert row["lambda"] == 0.5


def test_estimates_require_samples():
    with pytest.raises(ValueError):
        _record().estimates()


def test_jackknife_error_scale():
    # two-point bins with a known spread: jackknife must reproduce the
    # standard error of the mean
    rec = _record(bins=2)
    rec.add_string_sample(0, 0, 0, 0, 0, 10, 0.0)
    rec.add_string_sample(1, 0, 0, 0, 0, 14, 0.0)
    rec.add_q_sample(0, 0.0)
    rec.add_q_sample(1, 0.4)
    est = rec.estimates()
    # energy = C - <n>/beta; bin means 10, 14 -> jackknife err = |e1-e2|/2
    assert est["energy_err"] == pytest.approx(abs(14 - 10) / 2 / 8.0)
    assert est["q_err"] == pytest.approx(0.2)


def test_chi_f_against_oracle_on_bond_instance():
    g = Graph.from_edges(2, [(0, 1)])
    ham = build_problem(g, 2.0)
    beta = 16.0
    ans = np.array([1, -1], np.int8)
    rng_pool = np.random.default_rng(5)
    for lam in (0.25, 0.5, 0.75):
        table = build_operator_table(ham, lam)
        rec = MeasurementRecord.empty("g2", lam, beta, 2, table.constant, 20)
        sa = SSEState(table, beta, np.random.default_rng((1, int(lam * 100))), instance_id="g2")
        sb = SSEState(table, beta, np.random.default_rng((2, int(lam * 100))), instance_id="g2")
        for _ in range(3000):
            sa.sweep(adjust=True)
            sb.sweep(adjust=True)
        qa, qb = np.empty(2, np.int8), np.empty(2, np.int8)
        sweeps = 50000
        for i in range(sweeps):
            sa.sweep()
            sb.sweep()
            b = i * 20 // sweeps
            rec.add_string_sample(b, *sa.measure(ans, qa))
            rec.add_string_sample(b, *sb.measure(ans, qb))
            rec.add_q_sample(b, overlap_contribution(sa, sb, qa, qb))
        est = rec.estimates()
        ref = ed.chi_f_exact(ham, lam, beta)
        assert abs(est["chiF"] - ref) < 3 * max(est["chiF_err"], 1e-3), (lam, est, ref)
        e_ref, q_ref, p_ref = ed.thermal_observables(ham, (1, 0), lam, beta)
        assert abs(est["energy"] - e_ref) < 3 * max(est["energy_err"], 1e-3)
        assert abs(est["q"] - q_ref) < 3 * max(est["q_err"], 2e-3)
        assert abs(est["p_ans"] - p_ref) < 3 * max(est["p_ans_err"], 1e-3)


def test_s_ans_matches_ground_state_max_amplitude_entropy():
    # at small lambda the answer basis state carries the maximal amplitude,
    # so -log2 p_ans from sampling approaches the order-infinity entropy
    inst, _ = generate_unique_instance(6, 2.5, seed=9)
    ham = build_problem(inst.graph, 2.0)
    lam, beta = 0.15, 40.0
    table = build_operator_table(ham, lam)
    s_inf = ed.ground_state_renyi_bits(ham, lam, np.inf)
    sigma0 = [1 if b else -1 for b in inst.answer]
    st = SSEState(table, beta, np.random.default_rng(17), sigma0=sigma0,
                  instance_id="s")
    for _ in range(4000):
        st.sweep(adjust=True)
    ans = np.array(sigma0, np.int8)
    qbuf = np.empty(6, np.int8)
    ps = np.empty(40000)
    for i in range(ps.shape[0]):
        st.sweep()
        ps[i] = st.measure(ans, qbuf)[5]
    s_est, is_bound = s_ans_bits(float(ps.mean()), ps.shape[0])
    assert not is_bound
    assert s_est == pytest.approx(s_inf, abs=0.1)
