import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from genforest.circuit import ProductNode, SumNode, check_decomposable, check_smooth, enumerate_states, make_query
from genforest.data import CATEGORICAL, CLASS, CONTINUOUS, Column, Schema
from genforest.forest import Cell, SplitRule
from genforest.leaves import (
    SIGMA_FLOOR,
    Categorical,
    ClassFactorized,
    Gaussian,
    LearnSPNLite,
    LeafFitError,
    UnboundedCell,
    ZeroVolume,
    fit_class_factorized,
    fit_learnspn_lite,
    fit_uniform,
    leaf_marginal,
)


def schema(kinds, n_classes=2):
    cols = [Column(f"x{j}", CATEGORICAL, tuple(str(i) for i in range(k))) if k else Column(f"x{j}", CONTINUOUS)
            for j, k in enumerate(kinds)]
    return Schema.build(cols, Column("y", CLASS, tuple(str(i) for i in range(n_classes))))


def box(lo, hi, s):
    return Cell(np.array(lo, float), np.array(hi, float), [None] * len(lo))


# ---- class-factorised


def test_toy_leaf_class_vector(toy):
    tree, d, _ = toy
    leaf = tree.leaves[1]
    dens = fit_class_factorized(d.X[leaf.rows], d.y[leaf.rows], leaf.cell, d.schema)
    np.testing.assert_array_equal(dens.class_probs, [0.25, 0.75])
    assert leaf_marginal(dens, np.zeros(2), np.ones(2, bool), 1) == pytest.approx(math.log(0.75), abs=1e-15)


def test_single_row_uses_sigma_floor():
    s = schema([0])
    dens = fit_class_factorized(np.array([[2.0]]), np.array([0]), Cell.full(s), s)
    g = dens.components[0]
    assert g.mean == 2.0 and g.std == SIGMA_FLOOR


def test_laplace_smoothing_on_allowed_states():
    s = schema([2])
    dens = fit_class_factorized(np.zeros((4, 1)), np.zeros(4, int), Cell.full(s), s, alpha=0.01)
    np.testing.assert_allclose(dens.components[0].probs, [4.01 / 4.02, 0.01 / 4.02], rtol=0, atol=1e-15)


def test_disallowed_states_get_zero():
    s = schema([3])
    cell = Cell.full(s).split(SplitRule(0, left_set=frozenset({0, 2})))[0]
    dens = fit_class_factorized(np.array([[0.0], [2.0]]), np.array([0, 1]), cell, s)
    p = dens.components[0].probs
    assert p[1] == 0.0 and p.sum() == pytest.approx(1.0)


def test_class_fractions_are_unsmoothed():
    s = schema([2])
    dens = fit_class_factorized(np.zeros((3, 1)), np.array([1, 1, 1]), Cell.full(s), s)
    np.testing.assert_array_equal(dens.class_probs, [0.0, 1.0])


def test_empty_rows_rejected():
    s = schema([0])
    with pytest.raises(LeafFitError):
        fit_class_factorized(np.empty((0, 1)), np.empty(0, int), Cell.full(s), s)


def test_outside_cell_is_zero_density():
    s = schema([0])
    dens = fit_class_factorized(np.array([[0.2]]), np.array([0]), box([0.0], [1.0], s), s)
    assert leaf_marginal(dens, np.array([1.5]), None, None) == -np.inf


def test_factorised_all_observed_equals_sum_of_factors():
    s = schema([0, 3])
    rng = np.random.default_rng(0)
    X = np.column_stack([rng.normal(size=40), rng.integers(0, 3, 40)])
    y = rng.integers(0, 2, 40)
    dens = fit_class_factorized(X, y, Cell.full(s), s)
    x = np.array([0.3, 2.0])
    g, c = dens.components[0], dens.components[1]
    want = (-0.5 * math.log(2 * math.pi) - math.log(g.std) - 0.5 * ((0.3 - g.mean) / g.std) ** 2
            + math.log(c.probs[2]) + math.log(dens.class_probs[1]))
    assert leaf_marginal(dens, x, None, 1) == pytest.approx(want, abs=1e-12)
    assert leaf_marginal(dens, x, np.array([True, True]), None) == 0.0


@given(st.integers(0, 10_000))
def test_categorical_components_normalise(seed):
    rng = np.random.default_rng(seed)
    s = schema([2, 3, 4])
    X = np.column_stack([rng.integers(0, k, 20) for k in (2, 3, 4)]).astype(float)
    dens = fit_class_factorized(X, rng.integers(0, 2, 20), Cell.full(s), s)
    for comp in dens.components.values():
        assert comp.probs.sum() == pytest.approx(1.0, abs=1e-12)


@given(st.integers(0, 10_000), st.integers(0, 15))
def test_discrete_leaf_marginal_matches_enumeration(seed, pattern):
    rng = np.random.default_rng(seed)
    s = schema([2, 3, 2])
    X = np.column_stack([rng.integers(0, k, 15) for k in (2, 3, 2)]).astype(float)
    dens = fit_class_factorized(X, rng.integers(0, 2, 15), Cell.full(s), s)
    miss = np.array([(pattern >> j) & 1 for j in range(4)], dtype=bool)
    x = np.array([1.0, 2.0, 0.0, 1.0])
    states = enumerate_states([2, 3, 2, 2])
    keep = np.all(states[:, ~miss] == x[~miss], axis=1)
    vals, m = states[keep], np.zeros((keep.sum(), 4), bool)
    brute = np.exp(dens.log_density(vals, m)).sum()
    got = leaf_marginal(dens, x[:3], miss[:3], None if miss[3] else x[3])
    assert math.exp(got) == pytest.approx(brute, rel=1e-9)


def test_gaussian_integrates_to_one():
    g = Gaussian(0, 0.4, 0.7)
    xs = np.linspace(-8, 8, 20001)
    vals, miss = make_query(xs[:, None], None, None)
    dens = np.exp(g.log_density(vals, miss))
    assert np.trapezoid(dens, xs) == pytest.approx(1.0, abs=1e-8)


# ---- uniform


def test_uniform_unit_square():
    s = schema([0, 0])
    dens = fit_uniform(box([0, 0], [1, 1], s), [1, 1])
    for y in (0, 1):
        assert leaf_marginal(dens, np.array([0.5, 0.5]), None, y) == pytest.approx(math.log(0.5), abs=1e-15)


def test_uniform_reciprocal_volume():
    s = schema([0, 0])
    dens = fit_uniform(box([0, 0], [2, 1], s), [3, 1])
    assert leaf_marginal(dens, np.array([1.0, 0.5]), None, None) == pytest.approx(math.log(0.5), abs=1e-15)


def test_uniform_outside_cell():
    s = schema([0, 0])
    dens = fit_uniform(box([0, 0], [1, 1], s), [1, 1])
    assert leaf_marginal(dens, np.array([1.5, 0.5]), None, 0) == -np.inf


def test_uniform_marginal_drops_side():
    s = schema([0])
    dens = fit_uniform(box([0], [2], s), [1, 1])
    assert leaf_marginal(dens, np.array([1.0]), None, None) == pytest.approx(math.log(0.5), abs=1e-15)
    assert leaf_marginal(dens, np.array([9.0]), np.array([True]), None) == 0.0


def test_uniform_errors():
    s = schema([0])
    with pytest.raises(UnboundedCell):
        fit_uniform(Cell.full(s), [1, 1])
    with pytest.raises(ZeroVolume):
        fit_uniform(box([1.0], [1.0], s), [1, 1])


def test_uniform_sample_stays_in_cell():
    s = schema([0, 3])
    cell = Cell(np.array([0.0, np.nan]), np.array([2.0, np.nan]), [None, np.array([True, False, True])])
    dens = fit_uniform(cell, [2, 6])
    X, y = dens.sample(2000, 0)
    assert cell.contains(X).all()
    assert abs(y.mean() - 0.75) < 0.05


# ---- LearnSPN-lite


def test_small_leaf_falls_back_to_factorised():
    rng = np.random.default_rng(0)
    s = schema([0, 2])
    X = np.column_stack([rng.normal(size=10), rng.integers(0, 2, 10)])
    y = rng.integers(0, 2, 10)
    a = fit_learnspn_lite(X, y, Cell.full(s), s)
    b = fit_class_factorized(X, y, Cell.full(s), s)
    assert isinstance(a, ClassFactorized)
    Q = np.column_stack([rng.normal(size=20), rng.integers(0, 2, 20), rng.integers(0, 2, 20)])
    miss = rng.random(Q.shape) < 0.3
    np.testing.assert_array_equal(a.log_density(Q, miss), b.log_density(Q, miss))


def test_independent_variables_give_product():
    rng = np.random.default_rng(1)
    s = schema([2, 2])
    X = rng.integers(0, 2, (1000, 2)).astype(float)
    dens = fit_learnspn_lite(X, rng.integers(0, 2, 1000), Cell.full(s), s)
    assert isinstance(dens, LearnSPNLite)
    c = dens.circuit
    assert isinstance(c.nodes[c.root], ProductNode)


def test_correlated_variables_give_sum():
    rng = np.random.default_rng(2)
    s = schema([2, 2])
    a = rng.integers(0, 2, 1000)
    X = np.column_stack([a, a]).astype(float)
    dens = fit_learnspn_lite(X, a, Cell.full(s), s)
    c = dens.circuit
    assert isinstance(c.nodes[c.root], SumNode)


@given(st.integers(0, 1000))
def test_learnspn_structure_and_normalisation(seed):
    rng = np.random.default_rng(seed)
    s = schema([2, 3, 0])
    n = 120
    a = rng.integers(0, 2, n)
    X = np.column_stack([a, (a + rng.integers(0, 2, n)) % 3, rng.normal(size=n) + a])
    y = (a ^ (rng.random(n) < 0.1)).astype(int)
    dens = fit_learnspn_lite(X, y, Cell.full(s), s)
    if isinstance(dens, LearnSPNLite):
        assert check_smooth(dens.circuit) and check_decomposable(dens.circuit)
    assert leaf_marginal(dens, np.zeros(3), np.ones(3, bool), None) == pytest.approx(0.0, abs=1e-12)


def test_serialisation_roundtrip_of_components():
    g = Gaussian(0, 0.1, 0.3)
    c = Categorical(1, [0.2, 0.8])
    assert Gaussian.from_dict(g.to_dict()).mean == g.mean
    np.testing.assert_array_equal(Categorical.from_dict(c.to_dict()).probs, c.probs)
