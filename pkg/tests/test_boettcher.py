from __future__ import annotations

import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gwlower.boettcher import (
    boettcher_data,
    boundary_rows,
    check_c1,
    k1_and_mu,
    k_functional,
    min_offspring,
    minimal_boundary,
    minimal_vector,
    support_set,
    theorem25_cdf_statistic,
    theorem25_statistic,
    theorem26_marginal_statistic,
    verify_k_recursion,
    zero_lower_tail,
)
from gwlower.corpus import spec_b, spec_c1_fail, spec_s
from gwlower.errors import DomainError, RegimeError, UnavailableError
from gwlower.model import spectral_data

B = spec_b()
C1F = spec_c1_fail()


@pytest.fixture(scope="module")
def data():
    return boettcher_data(B)


def test_support_examples():
    assert support_set(B, 0, 1).as_set() == {(2, 0), (2, 2)}
    assert support_set(B, 0, 0).as_set() == {(1, 0)}
    two = support_set(B, 0, 2)
    assert (4, 0) in two and (8, 8) in two
    assert (3, 0) not in two
    assert all(p % 2 == 0 for p in two.points.ravel())


def _brute_support(laws, i, n):
    if n == 0:
        return {tuple(int(j == i) for j in range(len(laws)))}
    prev = [_brute_support(laws, j, n - 1) for j in range(len(laws))]
    out = set()
    for s in laws[i]:
        parts = [prev[j] for j, c in enumerate(s) for _ in range(c)]
        for combo in itertools.product(*parts):
            out.add(tuple(int(x) for x in np.sum(combo, axis=0)))
    return out


@pytest.mark.parametrize("spec", [B, C1F])
@pytest.mark.parametrize("n", [1, 2, 3])
def test_support_recursion_against_brute_force(spec, n):
    laws = [[k for k, _ in law.atoms] for law in spec.laws]
    for i in range(2):
        assert support_set(spec, i, n).as_set() == _brute_support(laws, i, n)


def test_boundary_examples():
    assert minimal_boundary([(2, 0), (2, 2)]).tolist() == [[2, 0]]
    assert minimal_boundary([(2, 0), (1, 1), (2, 2)]).tolist() == [[1, 1], [2, 0]]
    assert [r.tolist() for r in boundary_rows(B, 1)] == [[[2, 0]], [[0, 2]]]
    with pytest.raises(DomainError):
        minimal_boundary([])


@settings(max_examples=150, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 6), st.integers(0, 6), st.integers(0, 3)), min_size=1, max_size=15))
def test_boundary_is_the_minimal_antichain(points):
    got = {tuple(p) for p in minimal_boundary(points).tolist()}
    pts = set(points)
    expected = {p for p in pts if not any(q != p and all(a <= b for a, b in zip(q, p)) for q in pts)}
    assert got == expected


def test_k1_and_mu():
    d = k1_and_mu(B)
    assert d.K1 == (((2, 0), (0, 2)),)
    assert d.mu == pytest.approx(2.0)
    f = k1_and_mu(C1F)
    assert len(f.K1) == 4
    for mat in f.K1:
        assert f.mu <= np.linalg.norm(np.array(mat, dtype=float), 2) + 1e-12


def test_schroeder_spec_refused():
    with pytest.raises(RegimeError):
        k1_and_mu(spec_s())
    with pytest.raises(RegimeError):
        boettcher_data(spec_s())


def test_k_functional(data):
    assert k_functional(data, (1, 1)) == (2, 2)
    assert k_functional(data, (Fraction(1, 3), 1)) == (Fraction(2, 3), 2)
    with pytest.raises(DomainError):
        k_functional(data, (0, 1))


def test_k_iterates_scale_x0(data):
    x0 = data.x0
    for n in range(1, 5):
        assert k_functional(boundary_rows(B, n), x0) == tuple(2**n * v for v in x0)


@pytest.mark.parametrize("spec", [B, C1F])
def test_k_recursion(spec):
    report = verify_k_recursion(spec, n_max=4)
    assert report["ok"]
    assert len(report["rows"]) == 12


def test_c1_yes_for_b(data):
    assert data.c1_holds == "yes"
    assert data.mu0 == 2
    assert data.x0 == (1, 1)
    assert data.B0 == ((2, 0), (0, 2))
    assert data.lambdas == ((1.0, 1.0), (1.0, 1.0))
    assert data.lambda_u == pytest.approx(1.0)
    assert data.certificate["x0_unique"] is False  # B0 = 2I has a two-dimensional eigenspace


def test_c1_no_when_every_mu_equals_rho():
    data = check_c1(k1_and_mu(C1F), spectral_data(C1F).rho)
    assert data.c1_holds == "no"
    assert all(c["mu_B"] == "2" and not c["mu_in_(1,rho)"] for c in data.certificate["candidates"])
    assert data.as_dict()["x0"] is None


def test_min_offspring(data):
    for n in range(0, 7):
        res = min_offspring(B, 0, n, data)
        assert res.r_hat == (2**n, 0)
        assert res.bounds_hold
        assert res.scaled_size == pytest.approx(1.0)
    assert min_offspring(B, 1, 3, data).r_hat == (0, 8)


def test_min_offspring_needs_c1():
    with pytest.raises(UnavailableError):
        min_offspring(C1F, 0, 2)
    res = minimal_vector(C1F, 0, 2)
    assert res.r_hat == (1, 3)  # lexicographically first of the size-4 ties
    assert res.ties == ((1, 3), (2, 2), (3, 1), (4, 0))


@pytest.mark.parametrize("spec", [B, C1F])
def test_zero_lower_tail(spec):
    for i in range(2):
        for n in range(1, 5):
            assert zero_lower_tail(spec, i, n)


def test_statistic_flags_points_outside_support(data):
    table = theorem25_statistic(B, 0, {4: (17, 0), 5: (32, 0)}, [4, 5], data)
    assert table.rows[0].zero and table.rows[0].statistic == -math.inf
    assert not table.rows[1].zero
    assert not table.band()["all_finite"]


def test_statistic_guards(data):
    with pytest.raises(DomainError):
        theorem25_statistic(B, 0, {4: (8, 0)}, [4], data)  # below |r_hat|
    with pytest.raises(DomainError):
        theorem25_statistic(B, 0, {4: (60, 0)}, [4], data)  # above c_n^0.8
    with pytest.raises(UnavailableError):
        theorem25_statistic(C1F, 0, {4: (16, 0)}, [4])


def test_cdf_statistic_example(data):
    table = theorem25_cdf_statistic(B, 0, {4: 16, 5: 32}, [4, 5], data)
    for row in table.rows:
        assert row.log_prob == pytest.approx(-(2**row.n - 1) * math.log(2), rel=1e-12)


def test_marginal_guards(data):
    with pytest.raises(DomainError):
        theorem26_marginal_statistic(B, 0, 1, {4: 0}, [4], data=data)
    with pytest.raises(DomainError):
        theorem26_marginal_statistic(B, 0, 0, {4: 20, 5: 20}, [4, 5], data=data)


def test_marginal_symmetry(data):
    a = theorem26_marginal_statistic(B, 0, 0, {4: 20, 5: 40}, [4, 5], data=data)
    b = theorem26_marginal_statistic(B, 1, 1, {4: 20, 5: 40}, [4, 5], data=data)
    assert [r.statistic for r in a.rows] == pytest.approx([r.statistic for r in b.rows], rel=1e-12)
    c = theorem26_marginal_statistic(B, 0, 0, {4: 20, 5: 40}, [4, 5], cdf=True, data=data)
    assert all(r.log_prob <= 0 for r in c.rows)


def test_band_summary():
    from gwlower.boettcher import StatRow, StatTable

    table = StatTable((StatRow(3, 0, 1, -1.0, -1.0, False), StatRow(4, 0, 1, -2.5, -2.5, False)), "x")
    band = table.band()
    assert band["all_negative"] and band["within_factor_3"]
    table = StatTable(table.rows + (StatRow(5, 0, 1, -4.0, -4.0, False),), "x")
    assert not table.band()["within_factor_3"]
