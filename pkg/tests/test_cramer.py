from __future__ import annotations

import math
from fractions import Fraction

import numpy as np
import pytest

from gwlower.corpus import spec_b, spec_s
from gwlower.cramer import (
    _sum_measure,
    charfn_bound,
    event_total_le,
    importance_sampling_estimate,
    levy_concentration,
    local_clt_check,
    parse_event,
    solve_h,
    tilt_dist,
    tilt_stats,
    tilted_mean,
    untilt_identity_check,
)
from gwlower.errors import DomainError, InfeasibleError
from gwlower.genfun import DistVector, generation_distribution, reachable_bound, total_law
from gwlower.model import FLOAT, ProcessSpec

S = spec_s(FLOAT)
B = spec_b(FLOAT)


def _law(points, probs, box=None):
    points = np.asarray(points)
    box = tuple(int(x) for x in points.max(axis=0)) if box is None else box
    return DistVector(points, np.asarray(probs, dtype=float), box, 0.0, FLOAT)


def test_tilt_example():
    law = tilt_dist(S, 0, [1.5 * math.log(2)] * 2, 1)
    got = law.dist.as_dict()
    assert got[(1, 0)] == pytest.approx(2 / 3, abs=1e-15)
    assert got[(1, 1)] == pytest.approx(1 / 3, abs=1e-15)


def test_zero_tilt_is_identity():
    law = tilt_dist(B, 1, (0, 0), 2)
    base = generation_distribution(B, (0, 1), 2, mode=FLOAT)
    assert np.array_equal(law.dist.points, base.points)
    assert np.array_equal(law.dist.probs, base.probs)


@pytest.mark.parametrize("spec", [S, B])
def test_tilted_mass(spec):
    for h in [(0.3, 2.0), (4.0, 4.0)]:
        assert abs(tilt_dist(spec, 0, h, 3).dist.probs.sum() - 1) <= 1e-12


def test_negative_h_rejected():
    with pytest.raises(DomainError):
        tilt_dist(S, 0, (-1, 0), 1)


def test_tilted_mean_decreases_in_each_coordinate():
    grid = [0.0, 0.5, 1.0, 2.0, 4.0]
    for a in range(len(grid) - 1):
        for b in grid:
            lo = tilted_mean(S, 0, (grid[a], b), 3)
            hi = tilted_mean(S, 0, (grid[a + 1], b), 3)
            assert (hi < lo).all()
            lo = tilted_mean(S, 0, (b, grid[a]), 3)
            hi = tilted_mean(S, 0, (b, grid[a + 1]), 3)
            assert (hi < lo).all()


def test_identity_examples():
    assert untilt_identity_check(S, (1, 0), (0, 0), 2) == 0
    assert untilt_identity_check(S, (1, 0), (1, 1), 2) < 1e-13
    assert untilt_identity_check(B, (1, 1), (0.5, 0.5), 1) < 1e-13


def test_identity_at_single_point():
    assert untilt_identity_check(S, (2, 1), (0.7, 1.9), 3, k=(3, 3)) < 1e-13


def test_whitening_and_variance_limit():
    for n in (2, 4):
        stats = tilt_stats(S, (1, 1), n, (1, 1))
        assert np.allclose(stats.B @ stats.B @ stats.V, np.eye(2), atol=1e-8)
        assert np.allclose(stats.B, stats.B.T)
    v = [tilt_stats(S, (1, 1), n, (1, 1)).V / 1.5 ** (2 * n) for n in (4, 6, 8)]
    # the off-diagonal entry converges geometrically, so successive differences shrink
    assert np.abs(v[2] - v[1]).max() < 0.5 * np.abs(v[1] - v[0]).max()
    assert np.abs(v[2] / v[1] - 1).max() < 0.1


def test_liapounov_scaling():
    scaled = [tilt_stats(S, (1, 1), 2, (m, m)).L3 * math.sqrt(2 * m) for m in (8, 16, 32, 64)]
    assert max(scaled) / min(scaled) < 1 + 1e-9  # |l|^{1/2} L3 is constant along l = m(1,1)


def _curve(m=2, n=6):
    from gwlower.boettcher import minimal_vector
    from gwlower.cramer import _MeanCurve

    return _MeanCurve(B, minimal_vector(B, 0, n - m).r_hat, m)


def test_solve_h_zero_tilt():
    untilted = _curve().mean(0.0)
    sol = solve_h(B, 0, untilted, 6, 2)
    assert sol.scalar == 0.0
    assert sol.scalar_residual < 1e-9
    near = solve_h(B, 0, 0.999 * untilted, 6, 2)
    assert 0 < near.scalar < 0.1


def test_solve_h_monotone_and_residual():
    curve = _curve()
    sizes = [curve.mean(h).sum() for h in np.linspace(0, 5, 26)]
    assert all(b < a for a, b in zip(sizes, sizes[1:]))
    target = tuple(int(x) for x in np.round(0.8 * curve.mean(0.0)))
    sol = solve_h(B, 0, target, 6, 2)
    assert sol.scalar > 0
    assert sol.scalar_residual <= 1


def test_solve_h_infeasible():
    with pytest.raises(InfeasibleError):
        solve_h(B, 0, (1, 0), 6, 2)  # below the minimal reachable tilted mean
    with pytest.raises(DomainError):
        solve_h(B, 0, (10, 0), 6, 0)


def test_levy_examples():
    assert levy_concentration(_law([[2, 3]], [1.0]), 0) == 1
    assert levy_concentration(_law([[2, 3]], [1.0]), 5) == 1
    square = _law([[0, 0], [3, 0], [0, 3], [3, 3]], [0.25] * 4)
    assert levy_concentration(square, 1) == 0.25
    assert levy_concentration(square, 1.5) == 0.5
    assert levy_concentration(square, 3 * math.sqrt(2) / 2) == 1.0


def test_levy_two_point_disc_is_found():
    # sides 2, sqrt5, sqrt5 with circumradius 1.25
    tri = _law([[0, 0], [2, 0], [1, 2]], [0.2, 0.3, 0.5])
    assert levy_concentration(tri, 1.05) == pytest.approx(0.5)
    assert levy_concentration(tri, 1.2) == pytest.approx(0.8)


def test_levy_monotone_in_r():
    law = tilt_dist(S, 0, (1, 1), 3).dist
    values = [levy_concentration(law, r) for r in (0, 0.5, 1, 1.5, 2, 3)]
    assert all(b >= a for a, b in zip(values, values[1:]))


def test_levy_subadditivity():
    rng = np.random.Generator(np.random.PCG64(5))
    for _ in range(20):
        px = rng.dirichlet(np.ones(4))
        py = rng.dirichlet(np.ones(4))
        xs = rng.integers(0, 4, size=(4, 2))
        ys = rng.integers(0, 4, size=(4, 2))
        sums: dict = {}
        for a, pa in zip(xs, px):
            for b, pb in zip(ys, py):
                key = tuple(int(v) for v in a + b)
                sums[key] = sums.get(key, 0.0) + pa * pb
        x = _law(*zip(*_merge(xs, px)))
        y = _law(*zip(*_merge(ys, py)))
        z = _law(list(sums), list(sums.values()))
        assert levy_concentration(z, 1) <= min(levy_concentration(x, 1), levy_concentration(y, 1)) + 1e-12


def _merge(points, probs):
    out: dict = {}
    for k, p in zip(points, probs):
        out[tuple(int(v) for v in k)] = out.get(tuple(int(v) for v in k), 0.0) + p
    return [(list(k), p) for k, p in out.items()]


def test_sum_measure_matches_generation_law():
    l = (2, 1)
    laws = [tilt_dist(S, i, (0, 0), 2) for i in range(2)]
    box = reachable_bound(S, l, 2)
    s = _sum_measure(S, laws, l, box)
    direct = generation_distribution(S, l, 2, mode=FLOAT)
    assert np.array_equal(s.points, direct.points)
    assert np.allclose(s.probs, direct.probs, atol=1e-15)


def test_local_clt_examples():
    assert abs((2 * math.pi) ** -1 - 0.1592) < 1e-4
    centre_gaps, far_gaps, sups = [], [], []
    for m in (16, 32, 64):
        table = local_clt_check(S, (1, 1), 2, (m, m))
        lhs, gauss = table.row(tuple(int(x) for x in np.round(table.mean)))
        centre_gaps.append(abs(lhs - gauss))
        far_gaps.append(table.gap[np.linalg.norm(table.x, axis=1) > 2].max())
        sups.append(table.sup_gap)
    for seq in (centre_gaps, far_gaps, sups):
        assert seq[0] > seq[1] > seq[2]
    assert sups[-1] < 0.005


def test_local_clt_gaussian_at_centre():
    table = local_clt_check(S, (1, 1), 2, (16, 16))
    best = np.argmin(np.linalg.norm(table.x, axis=1))
    expected = (2 * math.pi) ** -1 * math.exp(-0.5 * float(np.sum(table.x[best] ** 2)))
    assert table.gaussian[best] == pytest.approx(expected)


def test_charfn_bound_strictly_below_one_after_first_generation():
    for spec in (S, B):
        rows = charfn_bound(spec, h_values=(0.0, 1.0, 2.5, 5.0))["per_k"]
        for row in rows[1:]:
            assert row["max_modulus"] < 1
        for row in rows:
            assert row["max_modulus_h_positive"] < 1 - 1e-3


def test_charfn_bound_first_generation_is_degenerate():
    # Z_1 from type 1 has a deterministic first coordinate, so |f_1| = 1 on t = (t1, 0)
    rows = charfn_bound(S)["per_k"]
    assert rows[0]["max_modulus"] == pytest.approx(1.0, abs=1e-12)


@pytest.mark.xfail(strict=True, reason="k=1 is degenerate and SPEC-B at h=0 exceeds 1 - 1e-3 for k >= 4")
def test_charfn_bound_uniform_margin():
    for spec in (S, B):
        assert charfn_bound(spec, h_values=(0.0, 1.0, 2.5, 5.0))["max_modulus"] < 1 - 1e-3


def test_is_naive_matches_exact():
    exact = float(total_law(S, 0, 4, 6).cdf(6))
    res = importance_sampling_estimate(S, 0, 4, (0, 0), event_total_le(6), 20_000, seed=11)
    assert abs(res.estimate - exact) <= 4 * res.std_error


def test_is_tilted_is_unbiased_and_better():
    h = 1.5**6 * math.log(4)
    event = parse_event("eq:1,0")
    runs = [importance_sampling_estimate(S, 0, 6, (h, h), event, 10_000, seed) for seed in range(50)]
    est = np.array([r.estimate for r in runs])
    t = (est.mean() - 2**-6) / (est.std(ddof=1) / math.sqrt(len(est)))
    assert abs(t) <= 3
    naive = importance_sampling_estimate(S, 0, 6, (0, 0), event, 10_000, seed=0)
    assert runs[0].std_error < naive.std_error


def test_is_deterministic_and_reports():
    a = importance_sampling_estimate(S, 0, 5, (2, 2), parse_event("total_le:4"), 3000, seed=4)
    b = importance_sampling_estimate(S, 0, 5, (2, 2), parse_event("total_le:4"), 3000, seed=4)
    assert a == b
    report = a.as_dict()
    assert {"estimate", "std_error", "effective_sample_size", "weight_quantiles", "rng"} <= set(report)


def test_parse_event_errors():
    with pytest.raises(DomainError):
        parse_event("gt:3")


def test_custom_spec_identity():
    q, h = Fraction(1, 4), Fraction(1, 2)
    spec = ProcessSpec.from_atoms([{(1, 0): q, (0, 2): h, (1, 1): q}, {(1, 0): h, (2, 1): h}], FLOAT)
    assert untilt_identity_check(spec, (2, 2), (0.9, 0.2), 3) < 1e-12
