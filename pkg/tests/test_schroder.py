from __future__ import annotations

import math

import numpy as np
import pytest

from gwlower.corpus import spec_b, spec_s
from gwlower.errors import DomainError, IndexRangeError, RegimeError
from gwlower.genfun import generation_distribution
from gwlower.model import FLOAT
from gwlower.schroder import (
    char_fn_W,
    char_fn_pair,
    convolution_density,
    default_x_grid,
    density_w,
    functional_residual,
    identity_check,
    normalization_seq,
    schroeder_alpha,
    small_t_slope,
    theorem31_cdf_ratio,
    theorem31_ratio,
    theorem34_ratio,
)
from gwlower.simulate import simulate


@pytest.fixture(scope="module")
def spec():
    return spec_s(FLOAT)


@pytest.fixture(scope="module")
def char(spec):
    return char_fn_W(spec, default_x_grid(spec))


@pytest.fixture(scope="module")
def dens(spec, char):
    return density_w(spec, char)


def test_normalization_examples():
    assert normalization_seq(spec_s(), 5).values == (1, 1.5, 2.25, 3.375, 5.0625, 7.59375)
    assert normalization_seq(spec_b(), 3).values == (1, 3, 9, 27)
    assert normalization_seq(spec_s(), 0)[0] == 1


def test_user_normalization_checked():
    assert normalization_seq(spec_s(), 2, [1, 1.2, 1.5]).mode == "user_supplied"
    with pytest.raises(DomainError):
        normalization_seq(spec_s(), 2, [1, 2.0, 2.5])  # c_1 > rho c_0
    with pytest.raises(DomainError):
        normalization_seq(spec_s(), 2, [2, 2.5, 3])


def test_char_fn_at_zero_and_hermitian(char):
    zero = np.flatnonzero(char.grid == 0)[0]
    assert np.allclose(char.values[:, zero], 1)
    assert np.allclose(char.values, np.conj(char.values[:, ::-1]), atol=1e-15)
    assert np.abs(char.values).max() <= 1 + 1e-12


def test_char_fn_slope_is_mean(spec):
    grid = np.array([0.0, 1e-4])
    phi = char_fn_W(spec, grid)
    slope = phi.values[0, -1].imag / 1e-4
    assert abs(slope - 1) < 1e-3


def test_functional_equation_residual(spec, char):
    assert functional_residual(spec, char) < 1e-6


def test_two_constructions_agree(spec):
    _, _, gap = char_fn_pair(spec, np.linspace(0, 50, 501))
    assert gap < 1e-4


def test_char_fn_decay_matches_alpha(spec):
    x = np.array([1e3, 1e4])
    phi = np.abs(char_fn_W(spec, x).values[0, -2:])
    exponent = -math.log(phi[1] / phi[0]) / math.log(10)
    assert abs(exponent - schroeder_alpha(spec)) < 0.05


def test_density_properties(spec, dens):
    assert abs(schroeder_alpha(spec) - math.log(2) / math.log(1.5)) < 1e-12
    assert all(abs(m - 1) <= 1e-3 for m in dens.mass)
    # beyond t ~ 4.8 the density drops below the ~1e-7 inversion error
    interior = dens.values[:, (dens.t > 0) & (dens.t <= 4.5)]
    assert (interior > 0).all()
    assert abs(small_t_slope(dens, 0) - (schroeder_alpha(spec) - 1)) <= 0.1 * (schroeder_alpha(spec) - 1)


def test_density_outside_range(dens):
    with pytest.raises(IndexRangeError):
        dens.at(0, 50.0)


def test_density_mean_is_u(dens):
    mean = float(np.sum(dens.t * dens.values[0]) * dens.dt)
    assert abs(mean - 1) < 5e-3


def test_convolution_examples(dens):
    single = convolution_density(dens, (1, 0))
    assert np.array_equal(single.values, dens.values[0])
    double = convolution_density(dens, (2, 0))
    mass = float(np.sum(double.values) * dens.dt)
    assert abs(mass - 1) <= 2e-3


def test_convolution_matches_simulation(spec, dens):
    n = 12
    samples = simulate(spec, (1, 1), n, 1_000_000, seed=99).sum(axis=1) / 1.5**n
    width = 0.1
    edges = np.arange(0, 8 + width, width)
    hist, _ = np.histogram(samples, bins=edges, density=False)
    hist = hist / (len(samples) * width)
    mids = (edges[:-1] + edges[1:]) / 2
    conv = convolution_density(dens, (1, 1))
    smooth = np.array([np.mean(conv.at(np.linspace(a, a + width, 21))) for a in edges[:-1]])
    assert np.abs(hist - smooth).max() < 0.05
    assert mids[np.argmax(smooth)] == pytest.approx(mids[np.argmax(hist)], abs=0.3)


@pytest.mark.parametrize("j", [1, 2])
def test_identity(spec, dens, j):
    res = identity_check(spec, dens, j, np.linspace(0.5, 3, 251))
    assert res["sup_gap"] <= 2e-2


def test_ratios_are_finite_and_positive(spec, dens):
    for m in (2, 4, 8):
        for j in (0, 1, 2):
            r = theorem31_ratio(spec, (m, m), j, dens)
            assert math.isfinite(r.ratio) and r.ratio > 0
            assert r.prob > 0


def test_point_ratio_j_dependence_shrinks(spec, dens):
    spread = []
    for m in (2, 4, 8):
        vals = [theorem31_ratio(spec, (m, m), j, dens).ratio for j in (0, 1, 2)]
        spread.append(max(vals) - min(vals))
    assert spread[0] > spread[1] > spread[2]


def test_direction_selectivity(spec):
    on = generation_distribution(spec, (1, 0), 5, box=(6, 6), budget=None).prob((6, 6))
    off = generation_distribution(spec, (1, 0), 5, box=(8, 4), budget=None).prob((8, 4))
    assert off < on


def test_cdf_ratio_tends_to_one(spec, dens):
    dev = [abs(theorem31_cdf_ratio(spec, k, 0, dens).ratio - 1) for k in (2, 4, 8, 16, 32)]
    assert all(b <= a for a, b in zip(dev, dev[1:]))
    assert dev[-1] < 0.02


def test_marginal_ratios(spec, dens):
    rows = [theorem34_ratio(spec, 0, k, 0, dens) for k in (4, 8, 16, 32)]
    cdf_dev = [abs(q.ratio - 1) for _, q in rows]
    assert cdf_dev[-1] < cdf_dev[0]
    corrected = [abs(p.ratio_corrected - 1) for p, _ in rows]
    assert corrected[-1] < corrected[0]
    assert abs(rows[-1][0].ratio - 2) < abs(rows[0][0].ratio - 2)  # uncorrected drifts to 1 / v^(1)


def test_marginal_symmetry(spec, dens):
    a = theorem34_ratio(spec, 0, 8, 1, dens)
    b = theorem34_ratio(spec, 1, 8, 1, dens, i=1)
    assert a[0].ratio == pytest.approx(b[0].ratio, rel=1e-12)
    assert a[1].ratio == pytest.approx(b[1].ratio, rel=1e-12)


def test_marginal_arguments_reproduce_total_argument(spec, dens):
    m = 8
    total = theorem31_ratio(spec, (m, m), 0, dens)
    per_type = [m / (1.5 ** total.a * 0.5) for _ in range(2)]
    assert per_type[0] == pytest.approx(total.argument)
    assert per_type[1] == pytest.approx(total.argument)


def test_regime_guards(dens):
    with pytest.raises(RegimeError):
        theorem31_cdf_ratio(spec_b(FLOAT), 4, 0, dens)
    with pytest.raises(RegimeError):
        identity_check(spec_b(FLOAT), dens, 1, [1.0])
