"""Martingale limit W: normalization, characteristic function, density and ratio statistics.

Finite-support laws always satisfy E|Z_1| log|Z_1| < inf, so the canonical
normalization is c_n = rho^n and E_i W = u_i.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConvergenceError, DomainError, IndexRangeError, NumericError, RegimeError
from .genfun import apply_one_minus_f, generation_distribution, marginal_law, one_minus_fn, total_law
from .model import FLOAT, Boettcher, ProcessSpec, Schroeder, a_index, spectral_data

CROSS_TOL = 1e-4
NEG_TOL = 1e-6


@dataclass(frozen=True)
class NormalizationSeq:
    values: tuple[float, ...]
    rho: float
    mode: str = "rho_power"

    def __getitem__(self, n: int) -> float:
        return self.values[n]

    def __len__(self) -> int:
        return len(self.values)


def normalization_seq(spec: ProcessSpec, N: int, values: Sequence[float] | None = None) -> NormalizationSeq:
    """c_0..c_N; rho^n unless a user sequence is supplied (then checked against c_n <= c_{n+1} <= rho c_n)."""
    rho = float(spectral_data(spec).rho)
    if values is None:
        return NormalizationSeq(tuple(rho**n for n in range(N + 1)), rho)
    vals = tuple(float(x) for x in values)
    if len(vals) < N + 1:
        raise DomainError(f"user sequence has {len(vals)} terms, need {N + 1}")
    if vals[0] != 1.0:
        raise DomainError("c_0 must equal 1")
    for n in range(len(vals) - 1):
        if not vals[n] <= vals[n + 1] <= rho * vals[n] * (1 + 1e-12):
            raise DomainError(f"c_{n + 1}={vals[n + 1]} violates c_n <= c_(n+1) <= rho c_n")
    return NormalizationSeq(vals[: N + 1], rho, "user_supplied")


def _schroeder_or_raise(spec: ProcessSpec):
    sd = spectral_data(spec)
    if not isinstance(sd.regime, Schroeder):
        raise RegimeError(f"operation needs the Schroeder regime, got {sd.regime.kind}")
    if sd.regime.h != 1:
        raise RegimeError(f"Schroeder period h={sd.regime.h} > 1 is not supported")
    return sd


# ---------------------------------------------------------------------------
# characteristic function of W


@dataclass(frozen=True)
class CharFnGrid:
    grid: np.ndarray
    values: np.ndarray  # shape (d, len(grid))
    method: str
    params: dict = field(default_factory=dict)

    def nonnegative(self) -> tuple[np.ndarray, np.ndarray]:
        keep = self.grid >= 0
        return self.grid[keep], self.values[:, keep]


def _symmetric(x_pos: np.ndarray) -> np.ndarray:
    x_pos = np.asarray(x_pos, dtype=float)
    if np.any(x_pos < 0):
        raise DomainError("pass nonnegative abscissae; the grid is mirrored automatically")
    x_pos = np.unique(np.concatenate([[0.0], x_pos]))
    return np.concatenate([-x_pos[:0:-1], x_pos])


def _direct_y(x: np.ndarray, rho: float, n: int, d: int) -> np.ndarray:
    theta = x / rho**n
    y0 = 2.0 * np.sin(theta / 2.0) ** 2 - 1j * np.sin(theta)  # 1 - exp(i theta)
    return np.tile(y0, (d, 1))


def default_n_limit(rho: float, x_max: float) -> int:
    return int(min(5000, math.ceil(math.log(1e13 * max(1.0, x_max)) / math.log(rho))))


def _phi_pos(spec, sd, x_pos, method, n_limit=None, x_seed=1e-12):
    rho, d = float(sd.rho), spec.d
    x_max = float(np.max(np.abs(x_pos))) if len(x_pos) else 1.0
    if method == "direct_limit":
        n = n_limit or default_n_limit(rho, x_max)
        y = one_minus_fn(spec, n, _direct_y(x_pos, rho, n, d))
        return 1.0 - y, {"n_limit": n}
    if method == "functional_equation":
        m = max(0, math.ceil(math.log(max(x_max, x_seed) / x_seed) / math.log(rho)))
        theta = x_pos / rho**m
        u = sd.u_array
        y = np.stack([-np.expm1(1j * theta * u[i]) for i in range(d)])
        y = one_minus_fn(spec, m, y)
        return 1.0 - y, {"steps": m, "x_seed": x_seed}
    raise DomainError(f"unknown method {method!r}")


def char_fn_W(spec: ProcessSpec, grid: Sequence[float], n_limit: int | None = None,
              method: str = "direct_limit") -> CharFnGrid:
    """phi_i(x) = E_i exp(i x W) on the symmetric grid generated by the nonnegative abscissae."""
    sd = spectral_data(spec)
    if not isinstance(sd.regime, (Schroeder, Boettcher)):
        raise RegimeError(f"W machinery needs the Schroeder or Boettcher regime, got {sd.regime.kind}")
    work = spec.with_mode(FLOAT)
    full = _symmetric(grid)
    pos = full[full >= 0]
    vals_pos, params = _phi_pos(work, sd, pos, method, n_limit)
    values = np.concatenate([np.conj(vals_pos[:, :0:-1]), vals_pos], axis=1)
    return CharFnGrid(full, values, method, params)


def char_fn_pair(spec: ProcessSpec, grid: Sequence[float], n_limit: int | None = None,
                 tol: float = CROSS_TOL) -> tuple[CharFnGrid, CharFnGrid, float]:
    """Both constructions plus their sup-norm gap; raises ConvergenceError beyond ``tol``."""
    direct = char_fn_W(spec, grid, n_limit, "direct_limit")
    functional = char_fn_W(spec, grid, n_limit, "functional_equation")
    gap = float(np.max(np.abs(direct.values - functional.values)))
    if gap > tol:
        raise ConvergenceError(f"phi constructions disagree by {gap:.3e}", gap, (direct, functional))
    return direct, functional, gap


def functional_residual(spec: ProcessSpec, char: CharFnGrid) -> float:
    """sup |phi(rho x) - f(phi(x))| with phi(rho x) recomputed by the same method."""
    sd = spectral_data(spec)
    work = spec.with_mode(FLOAT)
    x_pos, vals = char.nonnegative()
    scaled, _ = _phi_pos(work, sd, float(sd.rho) * x_pos, char.method, char.params.get("n_limit"))
    mapped = 1.0 - apply_one_minus_f(work, 1.0 - vals)
    return float(np.max(np.abs(scaled - mapped)))


def adaptive_x_max(spec: ProcessSpec, tol: float = 1e-5, start: float = 8.0, limit: float = 1e7) -> float:
    """Smallest doubling X with max_i |phi_i| < tol on [X, 2X]; returns 2X."""
    sd = spectral_data(spec)
    work = spec.with_mode(FLOAT)
    x = start
    while x < limit:
        probe = np.linspace(x, 2 * x, 257)
        vals, _ = _phi_pos(work, sd, probe, "direct_limit")
        if np.max(np.abs(vals)) < tol:
            return 2 * x
        x *= 2
    raise ConvergenceError(f"|phi| stays above {tol} up to x={limit:g}")


def default_x_grid(spec: ProcessSpec, dx: float = 0.05, tol: float = 1e-5) -> np.ndarray:
    x_max = adaptive_x_max(spec, tol)
    return np.arange(0.0, x_max + dx / 2, dx)


# ---------------------------------------------------------------------------
# density of W


@dataclass(frozen=True)
class DensityGrid:
    t: np.ndarray  # uniform, starting at 0
    values: np.ndarray  # shape (d, len(t)); values[:, 0] = 0
    alpha: float | None
    mass: tuple[float, ...]
    tail_bound: tuple[float, ...]
    params: dict = field(default_factory=dict)

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0])

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        if np.any(x < 0) or np.any(x > self.t[-1]):
            raise IndexRangeError(f"density requested outside the covered range [0, {self.t[-1]:g}]")
        return x

    def at(self, i: int, x):
        return np.interp(self._check(x), self.t, self.values[i])

    def cdf_values(self, i: int) -> np.ndarray:
        w = self.values[i]
        return np.concatenate([[0.0], np.cumsum((w[1:] + w[:-1]) * self.dt / 2)])

    def cdf(self, i: int, x):
        return np.interp(self._check(x), self.t, self.cdf_values(i))


def _chernoff_tail(spec: ProcessSpec, sd, T: float, lam: float = 1.0) -> tuple[float, ...]:
    """P_i(W > T) <= E_i exp(lam W) exp(-lam T), with E exp(lam W) from f_n(exp(lam / rho^n))."""
    rho = float(sd.rho)
    n = default_n_limit(rho, lam)
    y = np.full((spec.d, 1), -np.expm1(lam / rho**n))
    with np.errstate(over="ignore", invalid="ignore"):
        mgf = 1.0 - one_minus_fn(spec.with_mode(FLOAT), n, y)[:, 0]
    return tuple(float(m * math.exp(-lam * T)) if np.isfinite(m) else math.inf for m in mgf)


def density_w(spec: ProcessSpec, char: CharFnGrid, t_grid: Sequence[float] | None = None) -> DensityGrid:
    """w_i(t) = (1/pi) int_0^X Re(exp(-ixt) phi_i(x)) dx by the trapezoid rule."""
    sd = spectral_data(spec)
    if t_grid is None:
        t_grid = np.arange(0.0, 12.0 + 1e-9, 0.01)
    t = np.asarray(t_grid, dtype=float)
    if t[0] != 0 or np.any(np.diff(t) <= 0) or not np.allclose(np.diff(t), t[1] - t[0]):
        raise DomainError("t_grid must be uniform and start at 0")
    x, phi = char.nonnegative()
    dx = np.diff(x)
    if not np.allclose(dx, dx[0]):
        raise DomainError("density inversion needs a uniform x grid")
    weights = np.full(len(x), dx[0])
    weights[0] = weights[-1] = dx[0] / 2
    values = np.zeros((spec.d, len(t)))
    tt = t[1:]
    for start in range(0, len(tt), 64):
        chunk = tt[start : start + 64]
        phase = np.outer(chunk, x)
        c, s = np.cos(phase) * weights, np.sin(phase) * weights
        # Re(exp(-ixt) phi) = cos(xt) Re phi + sin(xt) Im phi
        values[:, 1 + start : 1 + start + len(chunk)] = (c @ phi.real.T + s @ phi.imag.T).T / np.pi
    worst = float(values.min())
    if worst < -NEG_TOL:
        raise NumericError(f"density inversion produced {worst:.3e} < -{NEG_TOL}; extend or refine the x grid")
    values = np.maximum(values, 0.0)
    dt = t[1] - t[0]
    mass = tuple(float(np.sum((v[1:] + v[:-1]) * dt / 2)) for v in values)
    alpha = None
    if isinstance(sd.regime, Schroeder):
        alpha = -math.log(float(sd.regime.gamma)) / math.log(float(sd.rho))
    params = {"x_max": float(x[-1]), "dx": float(dx[0]), "char_method": char.method}
    return DensityGrid(t, values, alpha, mass, _chernoff_tail(spec, sd, float(t[-1])), params)


def schroeder_alpha(spec: ProcessSpec) -> float:
    sd = _schroeder_or_raise(spec)
    return -math.log(float(sd.regime.gamma)) / math.log(float(sd.rho))


def small_t_slope(density: DensityGrid, i: int = 0, t_lo: float = 0.01, t_hi: float = 0.1, points: int = 25) -> float:
    """Least-squares slope of log w_i(t) against log t on a geometric grid in [t_lo, t_hi]."""
    t = np.geomspace(t_lo, t_hi, points)
    w = density.at(i, t)
    if np.any(w <= 0):
        raise NumericError("density not positive on the fitting window")
    return float(np.polyfit(np.log(t), np.log(w), 1)[0])


# ---------------------------------------------------------------------------
# convolution densities and the identity over one or two generations


@dataclass(frozen=True)
class ConvDensity:
    t: np.ndarray
    values: np.ndarray
    l: tuple[int, ...]
    a0: float  # fitted constant in w^{*l}(x) <= A0 prod_i F_i(x)^{l_i}

    def at(self, x):
        x = np.asarray(x, dtype=float)
        if np.any(x < 0) or np.any(x > self.t[-1]):
            raise IndexRangeError("convolution density requested outside its range")
        return np.interp(x, self.t, self.values)


def _conv_grid(a: np.ndarray, b: np.ndarray, dt: float) -> np.ndarray:
    # both vanish at t=0, so the Riemann sum equals the trapezoid rule
    return np.convolve(a, b)[: len(a)] * dt


def convolution_density(densities: DensityGrid, l: Sequence[int]) -> ConvDensity:
    l = tuple(int(x) for x in l)
    if len(l) != densities.values.shape[0] or any(x < 0 for x in l) or not any(l):
        raise DomainError("l must be a nonzero nonnegative vector of the spec dimension")
    dt = densities.dt
    result = None
    for i, li in enumerate(l):
        for _ in range(li):
            result = densities.values[i] if result is None else _conv_grid(result, densities.values[i], dt)
    bound = np.ones_like(result)
    for i, li in enumerate(l):
        bound = bound * densities.cdf_values(i) ** li
    mask = bound > 1e-300
    a0 = float(np.max(result[mask] / bound[mask])) if mask.any() else math.inf
    return ConvDensity(densities.t, result, l, a0)


def identity_check(spec: ProcessSpec, densities: DensityGrid, j: int, y: Sequence[float], i: int = 0) -> dict:
    """Compare sum_l P_i(Z_j = l) w^{*l}(y) against rho^{-j} w_i(y / rho^j)."""
    sd = _schroeder_or_raise(spec)
    rho = float(sd.rho)
    y = np.asarray(y, dtype=float)
    dist = generation_distribution(spec, tuple(1 if c == i else 0 for c in range(spec.d)), j, mode=FLOAT, budget=0)
    lhs = np.zeros_like(y)
    for l, p in zip(dist.points, dist.float_probs()):
        lhs += p * convolution_density(densities, l).at(y)
    rhs = densities.at(i, y / rho**j) / rho**j
    return {"j": j, "lhs": lhs, "rhs": rhs, "sup_gap": float(np.max(np.abs(lhs - rhs)))}


# ---------------------------------------------------------------------------
# ratio statistics


@dataclass(frozen=True)
class RatioResult:
    ratio: float
    ratio_single_power: float
    prob: float
    density: float
    a: int
    n: int
    argument: float
    ratio_corrected: float | None = None


def _c_seq(spec, n_needed):
    return normalization_seq(spec, n_needed).values


def theorem31_ratio(spec: ProcessSpec, k: Sequence[int], j: int, densities: DensityGrid, i: int = 0) -> RatioResult:
    """rho^j c_{a_k}^d P_i(Z_{a_k+j} = k) / w_i(|k| / (rho^j c_{a_k})), plus the c_{a_k}^1 variant."""
    sd = _schroeder_or_raise(spec)
    rho = float(sd.rho)
    k = tuple(int(x) for x in k)
    size = sum(k)
    if size <= 0:
        raise DomainError("k must be nonzero")
    c = _c_seq(spec, int(math.log(max(size, 2)) / math.log(rho)) + 3)
    a = a_index(size, c)
    n = a + j
    dist = generation_distribution(spec, tuple(1 if q == i else 0 for q in range(spec.d)), n, box=k,
                                   mode=FLOAT, budget=None)
    prob = float(dist.prob(k))
    arg = size / (rho**j * c[a])
    dens = float(densities.at(i, arg))
    if dens <= 0:
        raise NumericError(f"density vanishes at {arg}")
    return RatioResult(rho**j * c[a] ** spec.d * prob / dens, rho**j * c[a] * prob / dens, prob, dens, a, n, arg)


def theorem31_cdf_ratio(spec: ProcessSpec, k: int, j: int, densities: DensityGrid, i: int = 0) -> RatioResult:
    """P_i(|Z_{a'_k+j}| <= k) / P_i(0 < W < k / (rho^j c_{a'_k})), a'_k = a(k 1)."""
    sd = _schroeder_or_raise(spec)
    rho = float(sd.rho)
    size = spec.d * int(k)
    c = _c_seq(spec, int(math.log(max(size, 2)) / math.log(rho)) + 3)
    a = a_index(size, c)
    n = a + j
    law = total_law(spec, i, n, int(k), mode=FLOAT)
    prob = float(law.cdf(int(k)))
    arg = k / (rho**j * c[a])
    cdf = float(densities.cdf(i, arg))
    return RatioResult(prob / cdf, prob / cdf, prob, cdf, a, n, arg)


def theorem34_ratio(spec: ProcessSpec, m: int, k: int, j: int, densities: DensityGrid,
                    i: int = 0) -> tuple[RatioResult, RatioResult]:
    """Marginal point and cdf ratios with the v^(m) scaling, a_k = min{l : c_l >= k}.

    Z_n^(m) = k corresponds to W near k / (c_n v^(m)), so the point ratio as
    written tends to 1 / v^(m); ``ratio_corrected`` carries the extra v^(m)
    factor and tends to 1.
    """
    sd = _schroeder_or_raise(spec)
    rho = float(sd.rho)
    vm = float(sd.v[m])
    c = _c_seq(spec, int(math.log(max(k, 2)) / math.log(rho)) + 3)
    a = a_index(int(k), c)
    n = a + j
    law = marginal_law(spec, i, n, m, int(k), mode=FLOAT)
    arg = k / (rho**j * c[a] * vm)
    point = float(law.prob(int(k)))
    dens = float(densities.at(i, arg))
    point_ratio = rho**j * c[a] * point / dens
    cdf_prob = float(law.cdf(int(k)))
    cdf = float(densities.cdf(i, arg))
    return (
        RatioResult(point_ratio, point_ratio, point, dens, a, n, arg, point_ratio * vm),
        RatioResult(cdf_prob / cdf, cdf_prob / cdf, cdf_prob, cdf, a, n, arg),
    )
