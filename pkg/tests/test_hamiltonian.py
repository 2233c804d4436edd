import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qamis import ed, solver
from qamis.graphs import Graph, generate_er_graph
from qamis.hamiltonian import (build_operator_table, build_problem,
                               classical_energy, operator_sum_dense)


def test_isolated_vertex_coefficients():
    ham = build_problem(Graph.from_edges(1, []), 2.0)
    assert ham.fields[0] == 0.5
    assert classical_energy(ham, [1]) == -0.5
    assert classical_energy(ham, [-1]) == 0.5


def test_single_edge_coefficients():
    ham = build_problem(Graph.from_edges(2, [(0, 1)]), 2.0)
    assert list(ham.fields) == [0.0, 0.0]
    assert ham.coupling == 0.5
    assert classical_energy(ham, [1, -1]) == -0.5
    assert classical_energy(ham, [-1, 1]) == -0.5
    assert classical_energy(ham, [1, 1]) == 0.5


def test_triangle_energy_value_and_dense_diagonal():
    g = Graph.from_edges(3, [(0, 1), (0, 2), (1, 2)])
    ham = build_problem(g, 2.0)
    sigma = [1, -1, -1]
    assert classical_energy(ham, sigma) == pytest.approx(-1.0)
    dense = ed.build_dense(ham, 0.0)
    idx = 0b001  # bit set = +1
    assert dense[idx, idx] == pytest.approx(-1.0)


def test_empty_graph_energy():
    ham = build_problem(Graph.from_edges(5, []), 2.0)
    rng = np.random.default_rng(0)
    for _ in range(10):
        sigma = np.where(rng.random(5) < 0.5, 1, -1)
        assert classical_energy(ham, sigma) == pytest.approx(-0.5 * sigma.sum())


def test_adding_isolated_vertex_shifts_energy():
    g = Graph.from_edges(3, [(0, 1), (1, 2)])
    ham = build_problem(g, 2.0)
    g2 = Graph.from_edges(4, [(0, 1), (1, 2)])
    ham2 = build_problem(g2, 2.0)
    rng = np.random.default_rng(1)
    for _ in range(8):
        sigma = list(np.where(rng.random(3) < 0.5, 1, -1))
        assert classical_energy(ham2, sigma + [1]) == pytest.approx(
            classical_energy(ham, sigma) - 0.5)


def test_classical_ground_states_are_the_maximum_independent_sets():
    rng = np.random.default_rng(5)
    graphs = [generate_er_graph(n, d, rng)
              for n in (4, 6, 8, 10) for d in (2.0, 3.0)]
    for g in graphs:
        ham = build_problem(g, 2.0)
        energies = {}
        for bits in itertools.product((0, 1), repeat=g.n):
            sigma = [1 if b else -1 for b in bits]
            energies[bits] = classical_energy(ham, sigma)
        e_min = min(energies.values())
        ground = {b for b, e in energies.items() if abs(e - e_min) < 1e-12}
        _, sols = solver.brute_force_mis(g)
        assert ground == {tuple(int(x) for x in s) for s in sols}


def test_classical_energy_validates_input():
    ham = build_problem(Graph.from_edges(2, [(0, 1)]), 2.0)
    with pytest.raises(ValueError):
        classical_energy(ham, [1, 0])
    with pytest.raises(ValueError):
        classical_energy(ham, [1])


def test_penalty_must_exceed_one():
    with pytest.raises(ValueError):
        build_problem(Graph.from_edges(2, [(0, 1)]), 1.0)


def test_table_endpoints():
    g = Graph.from_edges(3, [(0, 1), (1, 2)])
    ham = build_problem(g, 2.0)
    t1 = build_operator_table(ham, 1.0)
    assert t1.trans_weight == 1.0
    assert t1.bond_weight == 0.0
    assert np.all(t1.field_weights == 0.0)
    t0 = build_operator_table(ham, 0.0)
    assert t0.trans_weight == 0.0
    assert t0.bond_weight == 1.0


def test_zero_field_vertices_have_no_field_unit():
    # degree-1 vertices at c=2 have h=0 and must be skipped
    g = Graph.from_edges(3, [(0, 1), (1, 2)])
    ham = build_problem(g, 2.0)
    t = build_operator_table(ham, 0.3)
    assert list(t.field_sites) == [1]  # only the degree-2 vertex
    assert ham.fields[1] == -0.5


def test_operator_sum_identity():
    rng = np.random.default_rng(9)
    for n in (2, 4, 6, 8):
        g = generate_er_graph(n, min(3.0, n - 1.5), rng)
        ham = build_problem(g, 2.0)
        for lam in (0.0, 0.25, 0.5, 0.75, 1.0):
            t = build_operator_table(ham, lam)
            lhs = operator_sum_dense(t)
            rhs = -ed.build_dense(ham, lam) + t.constant * np.eye(1 << n)
            assert np.allclose(lhs, rhs, atol=1e-12)


def test_all_weights_non_negative_across_lambda_grid():
    rng = np.random.default_rng(12)
    for _ in range(10):
        g = generate_er_graph(8, 3.0, rng)
        ham = build_problem(g, 2.0)
        for lam in np.linspace(0, 1, 11):
            t = build_operator_table(ham, lam)
            assert t.trans_weight >= 0
            assert t.bond_weight >= 0
            assert np.all(t.field_weights >= 0)
            assert np.all(np.diff(t.cum_weights) >= 0)
            # every matrix element of the assembled operator sum is >= 0
            mat = operator_sum_dense(t)
            assert mat.min() >= -1e-12


def test_gauge_leaves_spectrum_unchanged():
    rng = np.random.default_rng(21)
    for n in (3, 4, 6, 8):
        g = generate_er_graph(n, 2.0, rng)
        ham = build_problem(g, 2.0)
        for lam in (0.2, 0.5, 0.9):
            minus = np.linalg.eigvalsh(ed.build_dense(ham, lam, transverse_sign=-1.0))
            plus = np.linalg.eigvalsh(ed.build_dense(ham, lam, transverse_sign=+1.0))
            assert np.allclose(minus, plus, atol=1e-10)


def test_table_rejects_lambda_outside_unit_interval():
    ham = build_problem(Graph.from_edges(2, [(0, 1)]), 2.0)
    with pytest.raises(ValueError):
        build_operator_table(ham, 1.5)


@given(st.integers(min_value=0, max_value=2 ** 32 - 1),
       st.integers(min_value=2, max_value=10))
@settings(max_examples=30, deadline=None)
def test_field_formula(seed, n):
    g = generate_er_graph(n, min(3.0, n - 1.2), np.random.default_rng(seed))
    ham = build_problem(g, 2.0)
    deg = g.degrees()
    for i in range(n):
        assert ham.fields[i] == pytest.approx((2 - 2.0 * deg[i]) / 4)
        if deg[i] == 1:
            assert ham.fields[i] == 0.0
    assert ham.coupling > 0
