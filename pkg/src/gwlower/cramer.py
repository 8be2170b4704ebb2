"""Cramer transform of the n-step law, tilt statistics and tilted importance sampling.

For h >= 0 the tilted law is

    P(X_i(h, n) = k) = exp(-h.k / c_n) P_i(Z_n = k) / f_n^(i)(exp(-h / c_n)).

Only float arithmetic is supported: exp(-h/c_n) is irrational for generic h.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize, minimize_scalar
from scipy.spatial import cKDTree

from .errors import DomainError, InfeasibleError, NumericError, ResourceError, TruncationError
from .genfun import DistVector, eval_fn_many, generation_distribution, reachable_bound
from .kernel import DenseAlgebra, Lattice
from .model import FLOAT, ProcessSpec, spectral_data
from .simulate import block_sizes, make_rngs, simulate_block


def _unit(d: int, i: int) -> tuple[int, ...]:
    return tuple(1 if j == i else 0 for j in range(d))


def _c(spec: ProcessSpec, n: int) -> float:
    return float(spectral_data(spec).rho) ** n


def _check_h(h, d: int) -> np.ndarray:
    h = np.asarray(h, dtype=float).reshape(-1)
    if h.shape != (d,):
        raise DomainError(f"h must be a {d}-vector")
    if np.any(h < 0) or not np.all(np.isfinite(h)):
        raise DomainError("h must be finite and componentwise nonnegative")
    return h


@dataclass(frozen=True)
class TiltedLaw:
    spec_hash: str
    i: int
    n: int
    h: tuple[float, ...]
    normalizer: float
    dist: DistVector

    def mean(self) -> np.ndarray:
        return (self.dist.probs[:, None] * self.dist.points).sum(axis=0)

    def covariance(self) -> np.ndarray:
        centred = self.dist.points - self.mean()
        return (self.dist.probs[:, None, None] * centred[:, :, None] * centred[:, None, :]).sum(axis=0)


def _tilt(base: DistVector, spec: ProcessSpec, i: int, n: int, h: np.ndarray) -> TiltedLaw:
    c_n = _c(spec, n)
    tau = np.exp(-h / c_n)
    normalizer = float(eval_fn_many(spec.with_mode(FLOAT), n, tau)[i])
    weights = np.exp(-(base.points @ h) / c_n)
    probs = base.float_probs() * weights / normalizer
    dist = DistVector(base.points, probs, base.box, 0.0, FLOAT, False, {"tilt": tuple(h), "i": i, "n": n})
    return TiltedLaw(spec.content_hash(), i, n, tuple(float(x) for x in h), normalizer, dist)


def _base_law(spec: ProcessSpec, i: int, n: int, box=None) -> DistVector:
    return generation_distribution(spec, _unit(spec.d, i), n, box, mode=FLOAT, budget=0.0)


def tilt_dist(spec: ProcessSpec, i: int, h: Sequence[float], n: int, box: Sequence[int] | None = None) -> TiltedLaw:
    """Law of X_i(h, n); the base law must be untruncated."""
    h = _check_h(h, spec.d)
    try:
        base = _base_law(spec, i, n, box)
    except TruncationError as exc:
        raise TruncationError("tilting needs the untruncated n-step law", exc.escaped_mass, exc.dist) from exc
    return _tilt(base, spec, i, n, h)


def _sum_measure(spec: ProcessSpec, tilted: Sequence[TiltedLaw], l: Sequence[int], box) -> DistVector:
    """Law of S_l = sum of l_i independent copies of X_i (dense lattice convolution)."""
    alg = DenseAlgebra(spec.d, spec.lattice_stride(), box)
    memo: dict = {}
    total = alg.unit((0,) * spec.d)
    for i, li in enumerate(l):
        if not li:
            continue
        law = tilted[i].dist
        measure = alg.combine([(float(p), alg.unit(k)) for k, p in zip(law.points, law.probs)])
        total = alg.mul(total, alg.power(measure, int(li), memo, i))
    pts, vals = alg.items(total)
    escaped = max(0.0, 1.0 - float(np.sum(vals))) if alg.crossed else 0.0
    return DistVector(pts, vals, tuple(box), escaped, FLOAT, alg.crossed)


def untilt_identity_check(spec: ProcessSpec, l: Sequence[int], h: Sequence[float], n: int,
                          k: Sequence[int] | None = None) -> float:
    """max_k |P(Z_n=k | Z_0=l) - exp(h.k/c_n) prod_i f_n^(i)(exp(-h/c_n))^{l_i} P(S_l(h,n)=k)|."""
    h = _check_h(h, spec.d)
    l = tuple(int(x) for x in l)
    box = reachable_bound(spec, l, n)
    lhs = generation_distribution(spec, l, n, box, mode=FLOAT, budget=0.0)
    tilted = [tilt_dist(spec, i, h, n) for i in range(spec.d)]
    s_l = _sum_measure(spec, tilted, l, box)
    c_n = _c(spec, n)
    log_norm = sum(li * math.log(t.normalizer) for li, t in zip(l, tilted))
    if k is not None:
        keys = [tuple(int(x) for x in k)]
    else:
        keys = sorted(set(lhs.as_dict()) | set(s_l.as_dict()))
    worst = 0.0
    for key in keys:
        rhs = math.exp(float(np.dot(h, key)) / c_n + log_norm) * float(s_l.prob(key))
        worst = max(worst, abs(float(lhs.prob(key)) - rhs))
    return worst


# ---------------------------------------------------------------------------
# statistics of the tilted laws


@dataclass(frozen=True)
class TiltStats:
    mean_matrix: np.ndarray
    V: np.ndarray
    B: np.ndarray
    rho3_hat: float
    L3: float
    covariances: tuple[np.ndarray, ...] = field(repr=False, default=())


def _whitening(V: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh((V + V.T) / 2)
    if vals.min() <= 1e-14 * max(1.0, vals.max()):
        raise NumericError("average covariance V is singular", float(vals.min()))
    return (vecs * vals**-0.5) @ vecs.T


def _sphere_points(d: int, count: int = 2048) -> np.ndarray:
    if d == 2:
        theta = np.linspace(0.0, np.pi, count, endpoint=False)
        return np.stack([np.cos(theta), np.sin(theta)], axis=1)
    rng = np.random.Generator(np.random.PCG64(20240601))
    pts = rng.standard_normal((count, d))
    return pts / np.linalg.norm(pts, axis=1, keepdims=True)


def _liapounov(laws: Sequence[TiltedLaw], l: Sequence[int]) -> float:
    size = sum(l)
    centred = [(t.dist.points - t.mean(), t.dist.probs) for t in laws]

    def ratio(direction):
        direction = np.asarray(direction, dtype=float)
        direction = direction / np.linalg.norm(direction)
        third = second = 0.0
        for li, (pts, probs) in zip(l, centred):
            if li:
                proj = pts @ direction
                third += li * float(np.sum(probs * np.abs(proj) ** 3))
                second += li * float(np.sum(probs * proj**2))
        return (third / size) / (second / size) ** 1.5

    d = len(l)
    grid = _sphere_points(d)
    scores = np.array([ratio(p) for p in grid])
    best = grid[int(np.argmax(scores))]
    if d == 2:
        theta0 = math.atan2(best[1], best[0])
        step = math.pi / len(grid)
        res = minimize_scalar(lambda th: -ratio((math.cos(th), math.sin(th))), bounds=(theta0 - step, theta0 + step),
                              method="bounded", options={"xatol": 1e-12})
        top = max(float(scores.max()), -float(res.fun))
    else:
        res = minimize(lambda x: -ratio(x), best, method="Nelder-Mead", options={"xatol": 1e-10, "fatol": 1e-14})
        top = max(float(scores.max()), -float(res.fun))
    return top * size**-0.5


def tilt_stats(spec: ProcessSpec, h: Sequence[float], n: int, l: Sequence[int]) -> TiltStats:
    """M(h, n), V, B with B^2 = V^{-1}, rho3_hat and the third-order Liapounov coefficient."""
    h = _check_h(h, spec.d)
    l = tuple(int(x) for x in l)
    if len(l) != spec.d or any(x < 0 for x in l) or not any(l):
        raise DomainError("l must be a nonzero nonnegative vector")
    laws = [tilt_dist(spec, i, h, n) for i in range(spec.d)]
    size = sum(l)
    mean_matrix = np.array([t.mean() for t in laws])
    covs = tuple(t.covariance() for t in laws)
    V = sum(li * cov for li, cov in zip(l, covs)) / size
    B = _whitening(V)
    rho3 = sum(li * float(np.sum(t.dist.probs * np.linalg.norm(t.dist.points - t.mean(), axis=1) ** 3))
               for li, t in zip(l, laws)) / size
    return TiltStats(mean_matrix, V, B, rho3, _liapounov(laws, l), covs)


def tilted_mean(spec: ProcessSpec, i: int, h: Sequence[float], n: int) -> np.ndarray:
    return tilt_dist(spec, i, h, n).mean()


# ---------------------------------------------------------------------------
# matching the tilted mean to a target


@dataclass(frozen=True)
class HSolution:
    h: np.ndarray
    scalar: float
    bracket: tuple[float, float]
    scalar_residual: float
    vector_residual: float
    mean: np.ndarray
    r_hat: tuple[int, ...]
    b_n: int
    iterations: int


class _MeanCurve:
    """E S_r(h 1, m) as a function of the scalar h, from cached base laws."""

    def __init__(self, spec: ProcessSpec, r: Sequence[int], m: int):
        self.spec = spec
        self.r = np.asarray(r, dtype=float)
        self.m = m
        self.c_m = _c(spec, m)
        self.bases = [_base_law(spec, i, m) for i in range(spec.d)]
        self.work = spec.with_mode(FLOAT)

    def row_means(self, h: float) -> np.ndarray:
        rows = []
        for base in self.bases:
            sizes = base.points.sum(axis=1)
            logw = np.log(base.float_probs()) - h * sizes / self.c_m
            w = np.exp(logw - logw.max())
            rows.append((w[:, None] * base.points).sum(axis=0) / w.sum())
        return np.array(rows)

    def limit_rows(self) -> np.ndarray:
        rows = []
        for base in self.bases:
            sizes = base.points.sum(axis=1)
            keep = sizes == sizes.min()
            p = base.float_probs()[keep]
            rows.append((p[:, None] * base.points[keep]).sum(axis=0) / p.sum())
        return np.array(rows)

    def mean(self, h: float) -> np.ndarray:
        return self.r @ self.row_means(h)


def solve_h(spec: ProcessSpec, i: int, k_target: Sequence[int], n: int, b_n: int, h_max: float = 1e6,
            tol: float = 1e-10) -> HSolution:
    """Scalar h with |E S_r(h 1, b_n)| = |k_target|, r = r_hat_{n - b_n, i}, by bisection."""
    from .boettcher import minimal_vector

    if not 1 <= b_n <= n:
        raise DomainError("need 1 <= b_n <= n")
    k_target = np.asarray(k_target, dtype=float)
    r_hat = minimal_vector(spec, i, n - b_n).r_hat
    curve = _MeanCurve(spec, r_hat, b_n)
    target = float(k_target.sum())
    top = float(curve.mean(0.0).sum())
    bottom = float((np.asarray(r_hat) @ curve.limit_rows()).sum())
    if not bottom <= target <= top:
        raise InfeasibleError(
            f"|k_target|={target:g} outside the reachable tilted-mean range [{bottom:g}, {top:g}] "
            f"(untilted mean from r_hat={r_hat} over {b_n} generations)"
        )
    lo, hi = 0.0, 1.0
    while float(curve.mean(hi).sum()) > target:
        lo, hi = hi, hi * 2
        if hi > h_max:
            raise InfeasibleError(f"no h <= {h_max:g} brings the tilted mean down to {target:g}")
    iterations = 0
    while hi - lo > tol * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if float(curve.mean(mid).sum()) > target:
            lo = mid
        else:
            hi = mid
        iterations += 1
    h = 0.5 * (lo + hi) if target < top else 0.0
    mean = curve.mean(h)
    return HSolution(
        h * np.ones(spec.d), h, (lo, hi), abs(float(mean.sum()) - target), float(np.abs(mean - k_target).sum()),
        mean, tuple(r_hat), b_n, iterations,
    )


# ---------------------------------------------------------------------------
# Levy concentration


def levy_concentration(dist: DistVector, r: float) -> float:
    """max over balls of radius r of the contained mass.

    In d = 2 this is exact: an optimal closed disc can be moved until it is
    centred on a support point or has two support points on its boundary, so
    those centres are the only candidates.  In d >= 3 the candidates are the
    support points and pairwise midpoints (a lower bound).
    """
    if r < 0:
        raise DomainError("radius must be nonnegative")
    pts = dist.points.astype(float)
    probs = dist.float_probs()
    if len(pts) == 0:
        return 0.0
    tree = cKDTree(pts)
    eps = 1e-9 * max(1.0, r)
    centres = [pts]
    if r > 0:
        pairs = tree.query_pairs(2 * r + eps, output_type="ndarray")
        if len(pairs) > 5_000_000:
            raise ResourceError(f"{len(pairs)} candidate pairs exceed the budget")
        if len(pairs):
            a, b = pts[pairs[:, 0]], pts[pairs[:, 1]]
            mid = (a + b) / 2
            if dist.d == 2:
                half = np.linalg.norm(b - a, axis=1) / 2
                offset = np.sqrt(np.maximum(r**2 - half**2, 0.0))
                normal = np.stack([-(b - a)[:, 1], (b - a)[:, 0]], axis=1)
                normal /= np.maximum(np.linalg.norm(normal, axis=1, keepdims=True), 1e-300)
                centres += [mid + offset[:, None] * normal, mid - offset[:, None] * normal]
            else:
                centres.append(mid)
    best = 0.0
    for block in centres:
        for start in range(0, len(block), 20000):
            hits = tree.query_ball_point(block[start : start + 20000], r + eps)
            for idx in hits:
                if idx:
                    best = max(best, float(probs[idx].sum()))
    return min(best, 1.0)


# ---------------------------------------------------------------------------
# local CLT diagnostic


@dataclass(frozen=True)
class LocalCLTTable:
    points: np.ndarray
    lhs: np.ndarray
    gaussian: np.ndarray
    x: np.ndarray
    mean: np.ndarray
    B: np.ndarray
    l: tuple[int, ...]

    @property
    def gap(self) -> np.ndarray:
        return np.abs(self.lhs - self.gaussian)

    @property
    def sup_gap(self) -> float:
        return float(self.gap.max())

    def row(self, k: Sequence[int]) -> tuple[float, float]:
        idx = np.flatnonzero((self.points == np.asarray(k)).all(axis=1))
        if len(idx) == 0:
            return 0.0, float("nan")
        return float(self.lhs[idx[0]]), float(self.gaussian[idx[0]])


def local_clt_check(spec: ProcessSpec, h: Sequence[float], n: int, l: Sequence[int]) -> LocalCLTTable:
    """Rows |l|^{d/2} |B|^{-1} P(S_l = k) against (2 pi)^{-d/2} exp(-|x_{l,k}|^2 / 2)."""
    h = _check_h(h, spec.d)
    l = tuple(int(x) for x in l)
    stats = tilt_stats(spec, h, n, l)
    laws = [tilt_dist(spec, i, h, n) for i in range(spec.d)]
    box = reachable_bound(spec, l, n)
    s_l = _sum_measure(spec, laws, l, box)
    if s_l.escaped_mass > 1e-12:
        raise TruncationError("sum law overflowed the box", s_l.escaped_mass, s_l)
    size = sum(l)
    d = spec.d
    mean = np.asarray(l, dtype=float) @ stats.mean_matrix
    x = (s_l.points - mean) @ stats.B / math.sqrt(size)
    lhs = size ** (d / 2) / np.linalg.det(stats.B) * s_l.probs
    gaussian = (2 * math.pi) ** (-d / 2) * np.exp(-0.5 * np.sum(x**2, axis=1))
    return LocalCLTTable(s_l.points, lhs, gaussian, x, mean, stats.B, l)


# ---------------------------------------------------------------------------
# characteristic-function bound on J_eps


def charfn_bound(spec: ProcessSpec, k_max: int = 6, h_values: Sequence[float] = (0.0, 1.0, 2.5, 5.0),
                 radii: int = 8, angles: int = 64) -> dict:
    """max |f_k^(i)(exp(-h/c_k + i t/c_k))| over t with |t| in [eps pi, pi], 1 <= k <= k_max, h on a grid."""
    if spec.d != 2:
        raise DomainError("the J_eps grid is implemented for d = 2")
    rho = float(spectral_data(spec).rho)
    eps = 1.0 / rho  # min_k c_{k-1} / c_k for c_k = rho^k
    rad = np.linspace(eps * math.pi, math.pi, radii)
    ang = np.linspace(0.0, 2 * math.pi, angles, endpoint=False)
    tt = np.stack([np.outer(rad, np.cos(ang)).ravel(), np.outer(rad, np.sin(ang)).ravel()])
    hh = np.array([(a, b) for a in h_values for b in h_values]).T
    work = spec.with_mode(FLOAT)
    per_k = []
    for k in range(1, k_max + 1):
        c_k = rho**k
        s = np.exp((-hh[:, :, None] + 1j * tt[:, None, :]) / c_k)
        vals = np.abs(eval_fn_many(work, k, s.reshape(2, -1))).reshape(2, hh.shape[1], -1)
        per_h = vals.max(axis=(0, 2))
        per_k.append({"k": k, "max_modulus": float(per_h.max()),
                      "argmax_h": [float(x) for x in hh[:, int(np.argmax(per_h))]],
                      "max_modulus_h_positive": float(per_h[(hh > 0).all(axis=0)].max()) if (hh > 0).all(axis=0).any() else None})
    return {"max_modulus": max(r["max_modulus"] for r in per_k), "epsilon": eps, "k_max": k_max, "per_k": per_k}


# ---------------------------------------------------------------------------
# importance sampling


@dataclass(frozen=True)
class ISResult:
    estimate: float
    std_error: float
    samples: int
    seed: int
    blocks: int
    h: tuple[float, ...]
    ess: float
    weight_quantiles: dict
    rng: str = "PCG64"

    def as_dict(self) -> dict:
        return {
            "estimate": self.estimate, "std_error": self.std_error, "samples": self.samples, "seed": self.seed,
            "blocks": self.blocks, "h": list(self.h), "effective_sample_size": self.ess,
            "weight_quantiles": self.weight_quantiles, "rng": self.rng,
        }


def _chan_merge(a, b):
    na, ma, sa = a
    nb, mb, sb = b
    n = na + nb
    if n == 0:
        return a
    delta = mb - ma
    return n, ma + delta * nb / n, sa + sb + delta**2 * na * nb / n


def importance_sampling_estimate(spec: ProcessSpec, i: int, n: int, h: Sequence[float],
                                 event: Callable[[np.ndarray], np.ndarray], samples: int, seed: int,
                                 blocks: int = 16) -> ISResult:
    """Unbiased estimate of P_i(event(Z_n)) from paths drawn under the tilted path measure.

    A type-j individual in generation g picks atom k with probability
    p_j(k) sigma_{n-g-1}^k / sigma_{n-g}^(j), sigma_m = f_m(exp(-h/c_n)),
    so that Z_n has the law of X_i(h, n); the likelihood ratio of a path is
    f_n^(i)(exp(-h/c_n)) exp(h.Z_n / c_n).
    """
    h = _check_h(h, spec.d)
    work = spec.with_mode(FLOAT)
    c_n = _c(spec, n)
    tau = np.exp(-h / c_n)
    sigma = [tau]
    for _ in range(n):
        sigma.append(eval_fn_many(work, 1, sigma[-1]))
    ks = [np.array([k for k, _ in law.atoms], dtype=np.int64) for law in work.laws]
    ps = [np.array([float(p) for _, p in law.atoms]) for law in work.laws]

    def pvals(g: int, j: int) -> np.ndarray:
        s = sigma[n - g - 1]
        logw = np.log(ps[j]) + ks[j] @ np.log(s)
        w = np.exp(logw - logw.max())
        return w / w.sum()

    log_norm = math.log(float(sigma[n][i]))
    rngs = make_rngs(seed, blocks)
    sizes = block_sizes(samples, blocks)
    acc = (0, 0.0, 0.0)
    all_w = []
    initial = _unit(spec.d, i)
    for b in range(blocks):
        z = simulate_block(work, initial, n, sizes[b], rngs[b], None if not h.any() else pvals)
        logw = log_norm + (z @ h) / c_n
        if logw.size and logw.max() > 700:
            raise NumericError(f"likelihood weight exp({logw.max():.1f}) overflows; reduce h", float(logw.max()))
        hit = np.asarray(event(z), dtype=bool)
        vals = np.where(hit, np.exp(logw), 0.0)
        all_w.append(vals)
        if len(vals):
            m = float(vals.mean())
            acc = _chan_merge(acc, (len(vals), m, float(((vals - m) ** 2).sum())))
    count, mean, m2 = acc
    var = m2 / (count - 1) if count > 1 else math.inf
    w = np.concatenate(all_w)
    pos = w[w > 0]
    ess = float(pos.sum() ** 2 / (pos**2).sum()) if len(pos) else 0.0
    quant = {str(q): float(np.quantile(pos, q)) for q in (0.01, 0.25, 0.5, 0.75, 0.99)} if len(pos) else {}
    return ISResult(mean, math.sqrt(var / count), samples, int(seed), blocks, tuple(float(x) for x in h), ess, quant)


def event_equals(k: Sequence[int]) -> Callable[[np.ndarray], np.ndarray]:
    target = np.asarray(k, dtype=np.int64)
    return lambda z: (z == target).all(axis=1)


def event_total_le(k: int) -> Callable[[np.ndarray], np.ndarray]:
    return lambda z: z.sum(axis=1) <= k


def parse_event(text: str) -> Callable[[np.ndarray], np.ndarray]:
    """``eq:1,0`` (Z_n equals a vector) or ``total_le:6`` (|Z_n| <= 6)."""
    kind, _, arg = text.partition(":")
    if kind == "eq":
        return event_equals([int(x) for x in arg.split(",")])
    if kind == "total_le":
        return event_total_le(int(arg))
    raise DomainError(f"unknown event {text!r}; use eq:k1,k2,... or total_le:k")
