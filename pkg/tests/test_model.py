from __future__ import annotations

import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gwlower.config import dump_spec, load_spec, parse_spec, write_spec
from gwlower.corpus import spec_b, spec_c1_fail, spec_s
from gwlower.errors import DomainError, IndexRangeError, SpecStructureError, ValidationFailed
from gwlower.model import (
    EXACT,
    FLOAT,
    Boettcher,
    Intermediate,
    ProcessSpec,
    Schroeder,
    a_index,
    b_index,
    b_index_total,
    classify_regime,
    dominates_v,
    epsilon_v,
    require_valid,
    spectral_data,
    validate_spec,
)

H = Fraction(1, 2)


def test_validate_spec_s_all_pass():
    report = validate_spec(spec_s())
    assert report.ok
    assert all(f.passed for f in report.findings)


def test_zero_vector_atom_is_structural_error():
    with pytest.raises(SpecStructureError):
        ProcessSpec.from_atoms([{(0, 0): 1}, {(0, 1): 1}])


def test_block_diagonal_mean_matrix_is_reducible():
    spec = ProcessSpec.from_atoms([{(1, 0): H, (2, 0): H}, {(0, 1): H, (0, 2): H}])
    report = validate_spec(spec)
    assert not report.ok
    assert any("irreducible" in f.name and not f.passed for f in report.findings)
    with pytest.raises(ValidationFailed):
        require_valid(spec)


def test_probabilities_must_sum_to_one():
    spec = ProcessSpec.from_atoms([{(1, 0): H, (1, 1): Fraction(1, 3)}, {(0, 1): H, (1, 1): H}])
    assert not validate_spec(spec).ok


def test_negative_probability_rejected():
    with pytest.raises(SpecStructureError):
        ProcessSpec.from_atoms([{(1, 0): Fraction(3, 2), (1, 1): -H}, {(0, 1): 1}])


def test_subcritical_spec_fails_validation():
    spec = ProcessSpec.from_atoms([{(1, 0): H, (0, 1): H}, {(0, 1): H, (1, 0): H}])
    assert not validate_spec(spec).ok  # rho = 1


def test_spectral_data_spec_s():
    sd = spectral_data(spec_s())
    assert sd.rho == Fraction(3, 2)
    assert tuple(sd.u) == (1, 1)
    assert tuple(sd.v) == (H, H)
    assert np.array_equal(sd.M_array, [[1, 0.5], [0.5, 1]])
    assert np.array_equal(sd.A_array, [[0.5, 0], [0, 0.5]])
    assert sd.regime == Schroeder(H, 1)


def test_spectral_data_spec_b():
    sd = spectral_data(spec_b())
    assert sd.rho == 3
    assert np.array_equal(sd.M_array, [[2, 1], [1, 2]])
    assert np.allclose(sd.v_array, [0.5, 0.5], atol=1e-10)
    assert np.allclose(sd.u_array, [1, 1], atol=1e-10)
    assert not sd.A_array.any()


@pytest.mark.parametrize("factory", [spec_s, spec_b, spec_c1_fail])
@pytest.mark.parametrize("mode", [EXACT, FLOAT])
def test_spectral_normalizations(factory, mode):
    sd = spectral_data(factory(mode))
    u, v = sd.u_array, sd.v_array
    assert float(sd.rho) > 1
    assert abs(v @ u - 1) < 1e-10
    assert abs(v.sum() - 1) < 1e-10
    assert (u > 0).all() and (v > 0).all()
    if isinstance(sd.regime, Schroeder):
        assert float(sd.regime.gamma) < 1 < float(sd.rho)


def test_swap_symmetric_laws_have_uniform_v():
    spec = ProcessSpec.from_atoms([{(1, 0): H, (2, 1): H}, {(0, 1): H, (1, 2): H}])
    assert np.allclose(spectral_data(spec).v_array, [0.5, 0.5], atol=1e-10)


def test_float_mode_matches_exact_mode():
    a, b = spectral_data(spec_s(EXACT)), spectral_data(spec_s(FLOAT))
    assert abs(float(a.rho) - float(b.rho)) < 1e-12
    assert np.allclose(a.v_array, b.v_array, atol=1e-10)


def test_classify_examples():
    assert classify_regime([[H, 0], [0, H]]) == Schroeder(H, 1)
    assert classify_regime([[0, 0], [0, 0]]) == Boettcher(1)
    inter = classify_regime([[H, Fraction(1)], [Fraction(0), H]])
    assert isinstance(inter, Intermediate)
    assert inter.gamma_hat == H and inter.h_hat == 1


def test_classify_float_intermediate():
    assert isinstance(classify_regime(np.array([[0.5, 1.0], [0.0, 0.5]])), Intermediate)


def test_classify_nilpotent_index_two():
    assert classify_regime([[0, 1], [0, 0]]) == Boettcher(2)


def test_classify_stable_under_spectrum_preserving_rescaling():
    # a different law with the same zero pattern and spectrum of A
    spec = ProcessSpec.from_atoms([{(1, 0): H, (2, 2): H}, {(0, 1): H, (2, 2): H}])
    assert spectral_data(spec).regime == Schroeder(H, 1)


def test_epsilon_v_examples():
    v = (0.5, 0.5)
    assert epsilon_v((1, 1), v) == 0
    assert math.isclose(epsilon_v((1, 0), v), math.sqrt(2) / 2)
    assert math.isclose(epsilon_v((3, 1), v), math.sqrt(2) / 4)
    assert not dominates_v((3, 1), (1, 1), v)
    assert not dominates_v((1, 1), (3, 1), v)  # smaller size
    assert dominates_v((2, 2), (3, 1), v)
    with pytest.raises(DomainError):
        epsilon_v((0, 0), v)


def test_a_index_examples():
    c = [1.5**n for n in range(20)]
    assert a_index(2, c) == 2
    assert a_index(1, c) == 1
    assert a_index(100, c) == 12
    with pytest.raises(IndexRangeError):
        a_index(10**9, c)


def test_b_index_examples():
    c = [3.0**l for l in range(7)]
    assert b_index(128, 6, c, 2.0, 1.0) == 2
    assert b_index(64, 6, c, 2.0, 1.0) == 1
    assert b_index(1, 6, c, 2.0, 1.0) == 1
    assert b_index_total(64, 6, c, 2.0, 1.0, 2) == b_index(128, 6, c, 2.0, 1.0)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(1.01, 3.0), min_size=3, max_size=15), st.integers(1, 400))
def test_a_index_minimality(steps, k):
    c = [1.0]
    for s in steps:
        c.append(c[-1] * s)
    try:
        a = a_index(k, c)
    except IndexRangeError:
        assert c[-1] < k
        return
    assert c[a] >= k
    assert a == 1 or c[a - 1] < k


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 8), st.floats(1.2, 4.0), st.floats(1.05, 3.0), st.floats(0.5, 3.0), st.integers(1, 5000))
def test_b_index_minimality(n, rho, mu, lam, k):
    mu = min(mu, rho)
    c = [rho**l for l in range(n + 1)]
    try:
        b = b_index(k, n, c, mu, lam)
    except IndexRangeError:
        assert c[n] < lam * k
        return
    assert c[b] * mu ** (n - b) >= lam * k
    assert b == 1 or c[b - 1] * mu ** (n - b + 1) < lam * k


vectors = st.lists(st.tuples(st.integers(0, 6), st.integers(0, 6)).filter(any), min_size=1, max_size=12)


@settings(max_examples=150, deadline=None)
@given(vectors)
def test_dominance_is_reflexive_and_transitive(points):
    v = (0.5, 0.5)
    for a in points:
        assert dominates_v(a, a, v)
        for b in points:
            for c in points:
                if dominates_v(a, b, v) and dominates_v(b, c, v):
                    assert dominates_v(a, c, v)


@settings(max_examples=150, deadline=None)
@given(st.tuples(st.integers(0, 40), st.integers(0, 40)).filter(any))
def test_epsilon_zero_iff_multiple_of_v(k):
    assert (epsilon_v(k, (0.5, 0.5)) == 0) == (k[0] == k[1])


def test_config_roundtrip(tmp_path):
    path = tmp_path / "s.toml"
    write_spec(spec_s(), path)
    loaded = load_spec(path)
    assert loaded.content_hash() == spec_s().content_hash()
    assert "spec_version = 1" in dump_spec(spec_s())


def test_config_rejects_float_probabilities():
    data = {"spec_version": 1, "type": [{"atoms": [{"k": [1, 0], "p": 0.5}]}]}
    with pytest.raises(SpecStructureError):
        parse_spec(data)


def test_config_rejects_unknown_version():
    with pytest.raises(SpecStructureError):
        parse_spec({"spec_version": 2, "type": []})


def test_content_hash_depends_on_laws():
    assert spec_s().content_hash() != spec_b().content_hash()
    assert spec_s().content_hash() == spec_s().content_hash()
