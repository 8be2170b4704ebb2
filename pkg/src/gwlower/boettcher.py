"""Support-set combinatorics of the Boettcher regime and the bounded-log statistics.

Supports are computed with a boolean lattice closure (no probabilities), so
they are exact regardless of how small the underlying probabilities are.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .errors import DomainError, RegimeError, ResourceError, UnavailableError
from .genfun import generation_distribution, marginal_law, reachable_bound, support_measure, total_law
from .model import EXACT, FLOAT, Boettcher, ProcessSpec, b_index, spectral_data

K1_BUDGET = 100_000
CAUCHY_TOL = 1e-10
CAUCHY_STEPS = 40
SMALL_O_EXPONENT = 0.8
EXACT_CELL_LIMIT = 20_000


def _unit(d: int, i: int) -> tuple[int, ...]:
    return tuple(1 if j == i else 0 for j in range(d))


def _boettcher_or_raise(spec: ProcessSpec):
    sd = spectral_data(spec)
    if not isinstance(sd.regime, Boettcher):
        raise RegimeError(f"operation needs the Boettcher regime, got {sd.regime.kind}")
    return sd


@dataclass(frozen=True)
class SupportSet:
    n: int
    i: int
    points: np.ndarray  # lexicographically sorted, shape (N, d)

    def __contains__(self, k) -> bool:
        return bool((self.points == np.asarray(k)).all(axis=1).any())

    def as_set(self) -> set[tuple[int, ...]]:
        return {tuple(int(x) for x in p) for p in self.points}


def support_set(spec: ProcessSpec, i: int, n: int, box: Sequence[int] | None = None) -> SupportSet:
    """J_{n,i} (restricted to ``box`` when given; the default box holds the whole support)."""
    if n < 0:
        raise DomainError("n must be nonnegative")
    box = tuple(box) if box is not None else reachable_bound(spec, _unit(spec.d, i), n)
    try:
        pts, _ = support_measure(spec, i, n, box)
    except ResourceError as exc:
        raise ResourceError(f"support of generation {n} exceeds the memory budget: {exc}", reached=n - 1) from exc
    return SupportSet(n, i, pts)


def minimal_boundary(points) -> np.ndarray:
    """Componentwise-minimal elements, sorted lexicographically."""
    if len(points) == 0:
        raise DomainError("minimal boundary of an empty set")
    pts = np.unique(np.asarray(points, dtype=np.int64).reshape(len(points), -1), axis=0)
    order = np.lexsort((*pts.T[::-1], pts.sum(axis=1)))
    kept: list[np.ndarray] = []
    for p in pts[order]:
        if kept and (np.asarray(kept) <= p).all(axis=1).any():
            continue
        kept.append(p)
    out = np.array(kept)
    return out[np.lexsort(out.T[::-1])]


def boundary_rows(spec: ProcessSpec, n: int = 1) -> list[np.ndarray]:
    """The lower boundaries of J_{n,i} for every type i."""
    return [minimal_boundary(support_set(spec, i, n).points) for i in range(spec.d)]


# ---------------------------------------------------------------------------
# K_1, mu and condition (C1)


@dataclass(frozen=True)
class BoettcherData:
    K1: tuple[tuple[tuple[int, ...], ...], ...]
    boundaries: tuple[tuple[tuple[int, ...], ...], ...]
    mu: float
    x0: tuple | None = None
    B0: tuple | None = None
    mu0: float | Fraction | None = None
    c1_holds: str = "undetermined"
    lambdas: tuple[tuple[float, float], ...] | None = None
    lambda_u: float | None = None
    certificate: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        conv = lambda v: str(v) if isinstance(v, Fraction) else v
        return {
            "K1": [[list(r) for r in B] for B in self.K1],
            "boundaries": [[list(r) for r in rows] for rows in self.boundaries],
            "mu": self.mu,
            "x0": None if self.x0 is None else [conv(v) for v in self.x0],
            "B0": None if self.B0 is None else [list(r) for r in self.B0],
            "mu0": conv(self.mu0),
            "c1_holds": self.c1_holds,
            "lambda": None if self.lambdas is None else [list(p) for p in self.lambdas],
            "lambda_u": self.lambda_u,
            "certificate": self.certificate,
        }


def k1_and_mu(spec: ProcessSpec) -> BoettcherData:
    """K_1 (all row selections from the boundaries of J_{1,i}) and mu = min spectral norm."""
    _boettcher_or_raise(spec)
    rows = boundary_rows(spec, 1)
    count = math.prod(len(r) for r in rows)
    if count > K1_BUDGET:
        raise ResourceError(f"|K_1| = {count} exceeds the budget {K1_BUDGET}")
    K1 = tuple(tuple(tuple(int(x) for x in row) for row in choice) for choice in itertools.product(*rows))
    mu = min(float(np.linalg.norm(np.array(B, dtype=float), 2)) for B in K1)
    boundaries = tuple(tuple(tuple(int(x) for x in r) for r in rs) for rs in rows)
    return BoettcherData(K1, boundaries, mu)


def k_functional(rows, x: Sequence) -> tuple:
    """K^(i)(x) = min over boundary rows s of type i of s.x (exact for rational x).

    ``rows`` is a BoettcherData (uses the generation-1 boundaries) or a list of
    per-type boundary arrays.
    """
    if isinstance(rows, BoettcherData):
        rows = rows.boundaries
    if any(v <= 0 for v in x):
        raise DomainError("K needs a strictly positive x")
    return tuple(min(sum(int(a) * b for a, b in zip(s, x)) for s in rs) for rs in rows)


def verify_k_recursion(spec: ProcessSpec, n_max: int = 4, xs: Sequence[Sequence] | None = None) -> dict:
    """Check K_n(x) = K_1(K_{n-1}(x)) exactly, with K_n taken from the boundary of J_{n,i}."""
    _boettcher_or_raise(spec)
    if xs is None:
        xs = [(1, 1), (1, 2), (2, 1)] if spec.d == 2 else [tuple([1] * spec.d)]
    xs = [tuple(Fraction(v) for v in x) for x in xs]
    first = boundary_rows(spec, 1)
    rows_out = []
    prev = {x: x for x in xs}  # K_0 is the identity
    for n in range(1, n_max + 1):
        rows_n = boundary_rows(spec, n)
        for x in xs:
            lhs = k_functional(rows_n, x)
            rhs = k_functional(first, prev[x])
            rows_out.append({"n": n, "x": [str(v) for v in x], "lhs": [str(v) for v in lhs],
                             "rhs": [str(v) for v in rhs], "ok": lhs == rhs})
            prev[x] = lhs
    return {"ok": all(r["ok"] for r in rows_out), "rows": rows_out}


def _limit_projector(B: np.ndarray, mu: float):
    """mu^{-n} B^n for n <= CAUCHY_STEPS: (final power, bounded, Cauchy gap)."""
    scaled = B / mu
    power = np.eye(B.shape[0])
    gaps = []
    biggest = 0.0
    for _ in range(CAUCHY_STEPS):
        nxt = power @ scaled
        gaps.append(float(np.abs(nxt - power).max()))
        biggest = max(biggest, float(np.abs(nxt).max()))
        power = nxt
    return power, biggest, gaps[-1]


def _exact_perron(B) -> tuple[object, bool]:
    import sympy

    mat = sympy.Matrix(B)
    eigs = mat.eigenvals()
    real = [e for e in eigs if e.is_real]
    top = max(real, key=lambda e: float(e))
    simple = eigs[top] == 1
    return top, simple


def check_c1(data: BoettcherData, rho) -> BoettcherData:
    """Condition (C1) verdict with certificates; x0 normalized to max component 1."""
    candidates = []
    ambiguous = []
    details = []
    rho_f = float(rho)
    for B in data.K1:
        Bf = np.array(B, dtype=float)
        top, simple = _exact_perron(B)
        mu_b = float(top)
        info = {"B": [list(r) for r in B], "mu_B": str(top), "simple": bool(simple)}
        if mu_b <= 0:
            info["reason"] = "zero spectral radius"
            details.append(info)
            continue
        limit, bounded, gap = _limit_projector(Bf, mu_b)
        info.update({"limit_bounded": bounded, "cauchy_gap": gap})
        converges = gap <= CAUCHY_TOL and np.isfinite(bounded)
        x = limit @ np.ones(len(B)) if converges else None
        if x is None or not np.all(x > 1e-12):
            vals, vecs = np.linalg.eig(Bf)
            idx = int(np.argmin(np.abs(vals - mu_b)))
            vec = np.real(vecs[:, idx])
            vec = vec if vec.sum() > 0 else -vec
            x = vec if np.all(vec > 1e-12) else None
        if x is None:
            info["reason"] = "no positive eigenvector"
            details.append(info)
            continue
        x = x / x.max()
        exact_x = tuple(Fraction(v).limit_denominator(10**6) for v in x)
        top_rational = top.is_Rational
        if top_rational:
            mu_exact = Fraction(int(top.p), int(top.q))
            bx = tuple(sum(int(a) * b for a, b in zip(row, exact_x)) for row in B)
            exact_eigen = all(v == mu_exact * xv for v, xv in zip(bx, exact_x))
        else:
            exact_eigen = False
        if exact_eigen:
            kx = k_functional(data, exact_x)
            eq_k = kx == bx
            x_used, mu_used, mode = exact_x, mu_exact, "exact"
        else:
            bx_f = Bf @ x
            kx_f = np.array(k_functional(data, tuple(x)), dtype=float)
            diff = float(np.abs(bx_f - kx_f).max())
            eq_k = diff <= CAUCHY_TOL
            if 0 < diff <= 1e-6 and not eq_k:
                ambiguous.append(B)
            x_used, mu_used, mode = tuple(float(v) for v in x), mu_b, "tolerance"
        in_range = 1 < mu_b < rho_f
        info.update({"x": [str(v) for v in x_used], "Bx_equals_Kx": bool(eq_k), "mu_in_(1,rho)": in_range,
                     "limit_exists": bool(converges), "arithmetic": mode})
        details.append(info)
        if eq_k and in_range and converges:
            candidates.append((B, x_used, mu_used, simple))
    cert = {"candidates": details, "rho": str(rho), "cauchy_steps": CAUCHY_STEPS, "cauchy_tol": CAUCHY_TOL,
            "limit_check": "bounded + Cauchy proxy over n <= 40"}
    if len(candidates) == 1 and not ambiguous:
        B0, x0, mu0, simple = candidates[0]
        cert["x0_unique"] = bool(simple)
        if not simple:
            cert["x0_choice"] = "Perron eigenspace is degenerate; x0 = lim mu0^-n B0^n 1, normalized to max 1"
        return _with_lambdas(data, B0, x0, mu0, "yes", cert)
    verdict = "no" if not candidates and not ambiguous else "undetermined"
    cert["winners"] = len(candidates)
    return BoettcherData(data.K1, data.boundaries, data.mu, c1_holds=verdict, certificate=cert)


def _with_lambdas(data, B0, x0, mu0, verdict, cert) -> BoettcherData:
    xf = [float(v) for v in x0]
    lambdas = tuple((v / max(xf), v / min(xf)) for v in xf)
    return BoettcherData(data.K1, data.boundaries, data.mu, tuple(x0), B0, mu0, verdict, lambdas, None, cert)


def boettcher_data(spec: ProcessSpec) -> BoettcherData:
    """K_1, mu, the (C1) verdict and lambda_u = 1 / (min_i lambda_i * min_k u_k)."""
    sd = _boettcher_or_raise(spec)
    data = check_c1(k1_and_mu(spec), sd.rho)
    if data.c1_holds != "yes":
        return data
    lam_u = 1.0 / (min(l for l, _ in data.lambdas) * float(min(sd.u)))
    cert = dict(data.certificate)
    cert["lambda_u_choice"] = "min over i of lambda_i"
    return BoettcherData(data.K1, data.boundaries, data.mu, data.x0, data.B0, data.mu0, data.c1_holds,
                         data.lambdas, lam_u, cert)


# ---------------------------------------------------------------------------
# minimal offspring vectors


@dataclass(frozen=True)
class MinOffspring:
    r_hat: tuple[int, ...]
    ties: tuple[tuple[int, ...], ...]
    scaled_size: float | None = None
    lambdas: tuple[float, float] | None = None
    bounds_hold: bool | None = None


def minimal_vector(spec: ProcessSpec, i: int, n: int) -> MinOffspring:
    """r_hat_{n,i}: support point of minimal l1 size (lexicographically first among ties)."""
    d = spec.d
    if n == 0:
        e = _unit(d, i)
        return MinOffspring(e, (e,))
    full = reachable_bound(spec, _unit(d, i), n)
    T = 2
    while True:
        box = tuple(min(T, b) for b in full)
        pts = support_set(spec, i, n, box).points
        sizes = pts.sum(axis=1) if len(pts) else np.array([], dtype=np.int64)
        if len(pts) and (sizes.min() <= T or box == full):
            low = sizes.min()
            ties = pts[sizes == low]
            ties = ties[np.lexsort(ties.T[::-1])]
            as_tuples = tuple(tuple(int(x) for x in t) for t in ties)
            return MinOffspring(as_tuples[0], as_tuples)
        T *= 2


def min_offspring(spec: ProcessSpec, i: int, n: int, data: BoettcherData | None = None) -> MinOffspring:
    """r_hat_{n,i} together with the check lambda_i <= mu^{-n} |r_hat| <= lambda'_i."""
    data = data or boettcher_data(spec)
    if data.c1_holds != "yes":
        raise UnavailableError(f"lambda bounds need condition (C1); verdict is {data.c1_holds}")
    base = minimal_vector(spec, i, n)
    scaled = sum(base.r_hat) / float(data.mu) ** n
    lo, hi = data.lambdas[i]
    ok = lo - 1e-12 <= scaled <= hi + 1e-12
    return MinOffspring(base.r_hat, base.ties, scaled, (lo, hi), ok)


def zero_lower_tail(spec: ProcessSpec, i: int, n: int) -> bool:
    """P_i(|Z_n| < |r_hat_{n,i}|) == 0, evaluated in exact arithmetic from the law of |Z_n|."""
    r = minimal_vector(spec, i, n).r_hat
    size = sum(r)
    if size == 0:
        return True
    law = total_law(spec.with_mode(EXACT), i, n, size - 1, mode=EXACT)
    return law.cdf(size - 1) == 0


# ---------------------------------------------------------------------------
# bounded-log statistics


@dataclass(frozen=True)
class StatRow:
    n: int
    k: object
    b: int
    log_prob: float
    statistic: float
    zero: bool


@dataclass(frozen=True)
class StatTable:
    rows: tuple[StatRow, ...]
    kind: str
    params: dict = field(default_factory=dict)

    def finite_values(self) -> list[float]:
        return [r.statistic for r in self.rows if math.isfinite(r.statistic)]

    def band(self) -> dict:
        vals = self.finite_values()
        all_finite = len(vals) == len(self.rows) and bool(vals)
        negative = all_finite and all(v < 0 for v in vals)
        ratio = (max(vals) / min(vals)) if negative else math.inf
        return {
            "all_finite": all_finite,
            "all_negative": negative,
            "min": min(vals) if vals else None,
            "max": max(vals) if vals else None,
            "max_over_min": ratio if negative else None,
            "within_factor_3": negative and max(abs(v) for v in vals) / min(abs(v) for v in vals) <= 3,
        }


def _log_prob_point(spec: ProcessSpec, i: int, n: int, k: tuple[int, ...]) -> float:
    cells = math.prod(x + 1 for x in k)
    mode = EXACT if cells <= EXACT_CELL_LIMIT else FLOAT
    dist = generation_distribution(spec, _unit(spec.d, i), n, box=k, mode=mode, budget=None)
    p = dist.prob(k)
    if p == 0:
        if mode == FLOAT and k in support_set(spec, i, n, box=k):
            dist = generation_distribution(spec, _unit(spec.d, i), n, box=k, mode=EXACT, budget=None)
            p = dist.prob(k)
        else:
            return -math.inf
    return _log(p)


def _log(p) -> float:
    if p == 0:
        return -math.inf
    if isinstance(p, Fraction):
        return math.log(p.numerator) - math.log(p.denominator)
    return math.log(p)


def _stat_context(spec: ProcessSpec, data: BoettcherData | None):
    sd = _boettcher_or_raise(spec)
    data = data or boettcher_data(spec)
    if data.c1_holds != "yes":
        raise UnavailableError(f"statistic needs condition (C1); verdict is {data.c1_holds}")
    return sd, data


def theorem25_statistic(spec: ProcessSpec, i: int, k_seq: dict[int, Sequence[int]], n_range: Sequence[int],
                        data: BoettcherData | None = None) -> StatTable:
    """mu^{b_n - n} log[c_n^d P_i(Z_n = k_n)] for n in n_range (-inf flags k_n outside J_{n,i})."""
    sd, data = _stat_context(spec, data)
    rho, mu, lam_u, d = float(sd.rho), float(data.mu), data.lambda_u, spec.d
    rows = []
    for n in n_range:
        k = tuple(int(x) for x in k_seq[n])
        size = sum(k)
        c = [rho**l for l in range(n + 1)]
        r_hat = minimal_vector(spec, i, n).r_hat
        if size < sum(r_hat):
            raise DomainError(f"|k_{n}|={size} below |r_hat|={sum(r_hat)}")
        if size > c[n] ** SMALL_O_EXPONENT:
            raise DomainError(f"|k_{n}|={size} violates the o(c_n) guard |k_n| <= c_n^{SMALL_O_EXPONENT}")
        b = b_index(size, n, c, mu, lam_u)
        lp = _log_prob_point(spec, i, n, k)
        stat = mu ** (b - n) * (d * math.log(c[n]) + lp) if math.isfinite(lp) else -math.inf
        rows.append(StatRow(n, k, b, lp, stat, not math.isfinite(lp)))
    return StatTable(tuple(rows), "theorem25", {"mu": mu, "lambda_u": lam_u, "i": i})


def theorem25_cdf_statistic(spec: ProcessSpec, i: int, k_seq: dict[int, int], n_range: Sequence[int],
                            data: BoettcherData | None = None) -> StatTable:
    """mu^{b'_n - n} log P_i(|Z_n| <= k_n), b'_n = b(k_n 1)."""
    sd, data = _stat_context(spec, data)
    rho, mu, lam_u, d = float(sd.rho), float(data.mu), data.lambda_u, spec.d
    rows = []
    for n in n_range:
        k = int(k_seq[n])
        c = [rho**l for l in range(n + 1)]
        if k < sum(minimal_vector(spec, i, n).r_hat):
            raise DomainError(f"k_{n}={k} below |r_hat|")
        if d * k > c[n] ** SMALL_O_EXPONENT:
            raise DomainError(f"k_{n}={k} violates the o(c_n) guard")
        b = b_index(d * k, n, c, mu, lam_u)
        law = total_law(spec.with_mode(EXACT), i, n, k, mode=EXACT)
        lp = _log(law.cdf(k))
        stat = mu ** (b - n) * lp if math.isfinite(lp) else -math.inf
        rows.append(StatRow(n, k, b, lp, stat, not math.isfinite(lp)))
    return StatTable(tuple(rows), "theorem25_cdf", {"mu": mu, "lambda_u": lam_u, "i": i})


def theorem26_marginal_statistic(spec: ProcessSpec, i: int, m: int, k_seq: dict[int, int], n_range: Sequence[int],
                                 cdf: bool = False, data: BoettcherData | None = None) -> StatTable:
    """mu^{b_n - n} log[c_n P_i(Z_n^(m) = k_n)] (or log P_i(Z_n^(m) <= k_n) with ``cdf``)."""
    sd, data = _stat_context(spec, data)
    rho, mu, lam_u = float(sd.rho), float(data.mu), data.lambda_u
    rows = []
    previous = None
    for n in n_range:
        k = int(k_seq[n])
        if k <= 0 or (previous is not None and k <= previous):
            raise DomainError("marginal statistic needs k_n >= 1 increasing to infinity")
        previous = k
        c = [rho**l for l in range(n + 1)]
        floor_m = int(support_set(spec, i, n).points[:, m].min())
        if k < floor_m:
            raise DomainError(f"k_{n}={k} below min_(s in J) s^({m})={floor_m}")
        if k > c[n] ** SMALL_O_EXPONENT:
            raise DomainError(f"k_{n}={k} violates the o(c_n) guard")
        b = b_index(k, n, c, mu, lam_u)
        law = marginal_law(spec.with_mode(EXACT), i, n, m, k, mode=EXACT)
        if cdf:
            lp = _log(law.cdf(k))
        else:
            p = law.prob(k)
            lp = _log(p) + math.log(c[n]) if p != 0 else -math.inf
        stat = mu ** (b - n) * lp if math.isfinite(lp) else -math.inf
        rows.append(StatRow(n, k, b, lp, stat, not math.isfinite(lp)))
    return StatTable(tuple(rows), "theorem26_cdf" if cdf else "theorem26", {"mu": mu, "lambda_u": lam_u, "i": i, "m": m})
