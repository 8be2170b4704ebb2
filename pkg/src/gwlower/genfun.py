"""Exact finite-horizon laws of Z_n and evaluation of the iterated generating function f_n.

The n-step law from type i is obtained by backward composition,

    D_n(e_i) = sum_k p_i(k) * D_{n-1}(e_1)^{*k_1} * ... * D_{n-1}(e_d)^{*k_d},

with every product clipped to the target box.  Clipping is exact for points
inside the box (each subtree contributes a vector below the total), so only
the mass outside the box is lost and it is reported as ``escaped_mass``.  The
forward recursion sum_l P(Z_{n-1}=l) * law(Z_1 | Z_0=l) is also available as
an independent cross-check.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import DegenerateOutputError, DomainError, NumericError, RegimeError, TruncationError
from .kernel import DenseAlgebra, SparseAlgebra
from .model import EXACT, FLOAT, Boettcher, ProcessSpec, Schroeder, require_valid, spectral_data

CODE_VERSION = "gwlower-engine-1"
DEFAULT_BUDGET = 1e-9


@dataclass
class DistVector:
    """Law of a Z_+^d valued variable restricted to ``box`` plus the escaped mass."""

    points: np.ndarray
    probs: np.ndarray
    box: tuple[int, ...]
    escaped_mass: float | Fraction
    mode: str = FLOAT
    crossed: bool = False
    meta: dict = field(default_factory=dict)
    _index: dict | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.int64).reshape(-1, len(self.box))
        if len(self.points):
            order = np.lexsort(self.points.T[::-1])
            self.points = self.points[order]
            self.probs = np.asarray(self.probs, dtype=object if self.mode == EXACT else float)[order]
        else:
            self.probs = np.asarray(self.probs, dtype=object if self.mode == EXACT else float)
        if len(self.points) and (self.points > np.array(self.box)).any():
            raise DomainError("support point outside the truncation box")

    @property
    def d(self) -> int:
        return len(self.box)

    def __len__(self) -> int:
        return len(self.points)

    def mass(self):
        if self.mode == EXACT:
            return sum(self.probs, Fraction(0))
        return float(self.probs.sum())

    def as_dict(self) -> dict[tuple[int, ...], float | Fraction]:
        if self._index is None:
            self._index = {tuple(int(x) for x in k): p for k, p in zip(self.points, self.probs)}
        return self._index

    def prob(self, k: Sequence[int]):
        k = tuple(int(x) for x in k)
        if any(a > b for a, b in zip(k, self.box)):
            raise DomainError(f"{k} lies outside the box {self.box}; its probability is not resolved")
        return self.as_dict().get(k, Fraction(0) if self.mode == EXACT else 0.0)

    def float_probs(self) -> np.ndarray:
        return np.array([float(p) for p in self.probs]) if self.mode == EXACT else self.probs

    def mean(self) -> np.ndarray:
        w = self.float_probs()
        return (w[:, None] * self.points).sum(axis=0) / w.sum()

    def to_csv(self, path) -> None:
        header = [f"k{j + 1}" for j in range(self.d)] + ["prob"]
        with _atomic(path) as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for k, p in zip(self.points, self.probs):
                writer.writerow([*(int(x) for x in k), str(p) if self.mode == EXACT else repr(float(p))])

    def save(self, path) -> None:
        payload = {
            "points": self.points,
            "box": np.array(self.box, dtype=np.int64),
            "crossed": np.array(self.crossed),
            "mode": np.array(self.mode),
        }
        if self.mode == EXACT:
            payload["probs_text"] = np.array([str(p) for p in self.probs], dtype=str)
            payload["escaped_text"] = np.array(str(self.escaped_mass))
        else:
            payload["probs"] = self.probs
            payload["escaped"] = np.array(float(self.escaped_mass))
        directory = os.path.dirname(os.path.abspath(path))
        os.makedirs(directory, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=directory, suffix=".npz")
        os.close(fd)
        with open(tmp, "wb") as fh:
            np.savez_compressed(fh, **payload)
        os.replace(tmp, path)

    @classmethod
    def load(cls, path) -> "DistVector":
        with np.load(path, allow_pickle=False) as z:
            mode = str(z["mode"])
            if mode == EXACT:
                probs = np.array([Fraction(s) for s in z["probs_text"]], dtype=object)
                escaped = Fraction(str(z["escaped_text"]))
            else:
                probs, escaped = z["probs"], float(z["escaped"])
            return cls(z["points"], probs, tuple(int(b) for b in z["box"]), escaped, mode, bool(z["crossed"]))


class _atomic:
    """Text file context manager that writes to a temp file and renames on success."""

    def __init__(self, path):
        self.path = os.path.abspath(path)

    def __enter__(self):
        directory = os.path.dirname(self.path)
        os.makedirs(directory, exist_ok=True)
        fd, self.tmp = tempfile.mkstemp(dir=directory)
        self.fh = os.fdopen(fd, "w", newline="")
        return self.fh

    def __exit__(self, exc_type, exc, tb):
        self.fh.close()
        if exc_type is None:
            os.replace(self.tmp, self.path)
        else:
            os.unlink(self.tmp)
        return False


@dataclass(frozen=True)
class Dist1D:
    """Law of a Z_+ valued variable on 0..kmax plus the mass beyond kmax."""

    probs: tuple
    escaped_mass: float | Fraction

    @property
    def kmax(self) -> int:
        return len(self.probs) - 1

    def prob(self, k: int):
        if k < 0:
            return 0 * self.probs[0]
        if k > self.kmax:
            raise DomainError(f"k={k} beyond the resolved range {self.kmax}")
        return self.probs[k]

    def cdf(self, k: int):
        if k > self.kmax:
            raise DomainError(f"k={k} beyond the resolved range {self.kmax}")
        return sum(self.probs[: k + 1], 0 * self.probs[0])

    def as_dict(self) -> dict:
        return {k: p for k, p in enumerate(self.probs) if p != 0}


@dataclass(frozen=True)
class ComplexPoint:
    components: tuple[complex, ...]

    def __post_init__(self):
        comps = tuple(complex(c) for c in self.components)
        if any(not np.isfinite(c.real) or not np.isfinite(c.imag) for c in comps):
            raise DomainError("ComplexPoint components must be finite")
        if any(abs(c) > 1 + 1e-12 for c in comps):
            raise DomainError("ComplexPoint components must lie in the closed unit disk")
        object.__setattr__(self, "components", comps)

    def as_array(self) -> np.ndarray:
        return np.array(self.components, dtype=complex)


# ---------------------------------------------------------------------------
# boxes and algebras


def _unit_vec(d: int, i: int) -> tuple[int, ...]:
    return tuple(1 if j == i else 0 for j in range(d))


def reachable_bound(spec: ProcessSpec, initial: Sequence[int], n: int) -> tuple[int, ...]:
    """Componentwise maximum of Z_n over all trees started from ``initial``."""
    d = spec.d
    bound = [_unit_vec(d, i) for i in range(d)]
    for _ in range(n):
        bound = [
            tuple(max(sum(k[j] * bound[j][c] for j in range(d)) for k, _ in law.atoms) for c in range(d))
            for law in spec.laws
        ]
    return tuple(sum(initial[i] * bound[i][c] for i in range(d)) for c in range(d))


def _make_algebra(spec: ProcessSpec, box, mode: str, boolean: bool = False):
    if mode == EXACT and not boolean:
        return SparseAlgebra(spec.d, box)
    return DenseAlgebra(spec.d, spec.lattice_stride(), box, boolean=boolean)


def _weight(p, alg):
    return float(p) if isinstance(alg, DenseAlgebra) else p


def _law_measure(alg, law):
    terms = [(_weight(p, alg), alg.unit(k)) for k, p in law.atoms]
    return alg.combine(terms)


def compose_measures(spec: ProcessSpec, alg, n: int) -> list:
    """D_n(e_i) for every type i, each clipped to the algebra's box."""
    d = spec.d
    current = [alg.unit(_unit_vec(d, j)) for j in range(d)]
    for g in range(n):
        memo: dict = {}
        nxt = []
        for law in spec.laws:
            terms = []
            for k, p in law.atoms:
                prod = None
                for j, kj in enumerate(k):
                    if kj == 0:
                        continue
                    factor = alg.power(current[j], kj, memo, (g, j))
                    prod = factor if prod is None else alg.mul(prod, factor)
                    if prod is None:
                        break
                terms.append((_weight(p, alg), prod))
            nxt.append(alg.combine(terms))
        current = nxt
    return current


def _population_measure(spec, alg, per_type, initial):
    memo: dict = {}
    result = alg.unit((0,) * spec.d)
    for i, li in enumerate(initial):
        if li:
            result = alg.mul(result, alg.power(per_type[i], li, memo, ("pop", i)))
    return result


def _to_distvector(alg, measure, mode, box, meta) -> DistVector:
    pts, vals = alg.items(measure)
    if mode == EXACT:
        probs = np.array(vals, dtype=object)
        escaped = Fraction(1) - sum(vals, Fraction(0)) if alg.crossed else Fraction(0)
    else:
        probs = np.asarray(vals, dtype=float)
        escaped = max(0.0, 1.0 - float(probs.sum())) if alg.crossed else 0.0
    return DistVector(pts, probs, tuple(box), escaped, mode, alg.crossed, dict(meta))


def _check_initial(spec: ProcessSpec, initial) -> tuple[int, ...]:
    initial = tuple(int(x) for x in initial)
    if len(initial) != spec.d or any(x < 0 for x in initial):
        raise DomainError(f"initial population must be a nonnegative {spec.d}-vector")
    return initial


def step_distribution(spec: ProcessSpec, from_population: Sequence[int], box: Sequence[int] | None = None,
                      mode: str | None = None) -> DistVector:
    """Law of Z_1 given Z_0 = from_population (convolution powers by repeated squaring)."""
    require_valid(spec)
    mode = mode or spec.mode
    l = _check_initial(spec, from_population)
    if not any(l):
        raise DomainError("from_population must be nonzero")
    box = tuple(box) if box is not None else reachable_bound(spec, l, 1)
    alg = _make_algebra(spec, box, mode)
    per_type = [_law_measure(alg, law) for law in spec.with_mode(mode).laws]
    measure = _population_measure(spec, alg, per_type, l)
    if measure is None:
        raise DegenerateOutputError(f"box {box} excludes every point reachable in one step from {l}")
    return _to_distvector(alg, measure, mode, box, {"initial": l, "n": 1})


def _cache_key(spec: ProcessSpec, initial, n, box, mode, method) -> str:
    blob = json.dumps(
        {"spec": spec.content_hash(), "initial": list(initial), "n": n, "box": list(box), "mode": mode,
         "method": method, "code": CODE_VERSION},
        sort_keys=True,
    ).encode()
    return hashlib.sha256(blob).hexdigest()


def generation_distribution(spec: ProcessSpec, initial: Sequence[int], n: int, box: Sequence[int] | None = None,
                            *, mode: str | None = None, method: str = "compose",
                            budget: float | None = DEFAULT_BUDGET, cache_dir: str | None = None) -> DistVector:
    """Law of Z_n given Z_0 = initial, clipped to ``box`` (default: the full reachable box).

    ``budget`` bounds the escaped mass (``None`` disables the check, 0 demands
    an untruncated law).  ``method`` is ``compose`` (backward composition) or
    ``forward`` (sum over the law of Z_{n-1}, sparse, for cross-checks).
    """
    require_valid(spec)
    if n < 0:
        raise DomainError("n must be nonnegative")
    mode = mode or spec.mode
    initial = _check_initial(spec, initial)
    box = tuple(int(b) for b in box) if box is not None else reachable_bound(spec, initial, n)
    if len(box) != spec.d:
        raise DomainError("box dimension does not match the spec")
    path = None
    if cache_dir:
        path = os.path.join(cache_dir, _cache_key(spec, initial, n, box, mode, method) + ".npz")
        if os.path.exists(path):
            dist = DistVector.load(path)
            dist.meta.update({"initial": initial, "n": n, "cache": "hit"})
            return _enforce_budget(dist, budget)
    work = spec.with_mode(mode)
    meta = {"initial": initial, "n": n, "method": method}
    if method == "compose":
        alg = _make_algebra(work, box, mode)
        if n == 0:
            measure = alg.unit(initial)
        else:
            per_type = compose_measures(work, alg, n)
            measure = _population_measure(work, alg, per_type, initial)
        dist = _to_distvector(alg, measure, mode, box, meta)
    elif method == "forward":
        dist = _forward(work, initial, n, box, mode, meta)
    else:
        raise DomainError(f"unknown method {method!r}")
    if path:
        dist.save(path)
        dist.meta["cache"] = "miss"
    return _enforce_budget(dist, budget)


def _enforce_budget(dist: DistVector, budget):
    if budget is not None and dist.escaped_mass > budget:
        raise TruncationError(f"box {dist.box} loses more than the budget {budget:g}", dist.escaped_mass, dist)
    return dist


def _forward(spec: ProcessSpec, initial, n, box, mode, meta) -> DistVector:
    alg = SparseAlgebra(spec.d, box)
    one = Fraction(1) if mode == EXACT else 1.0
    laws = [{k: p for k, p in law.atoms} for law in spec.laws]
    current = alg.unit(initial, one)
    memo: dict = {}
    for _ in range(n):
        if current is None:
            break
        terms = []
        for l, pl in sorted(current.items()):
            step = alg.unit((0,) * spec.d, one)
            for i, li in enumerate(l):
                if li:
                    step = alg.mul(step, alg.power(laws[i], li, memo, i))
            terms.append((pl, step))
        current = alg.combine(terms)
    pts, vals = alg.items(current)
    if mode == EXACT:
        probs = np.array(vals, dtype=object)
        escaped = Fraction(1) - sum(vals, Fraction(0)) if alg.crossed else Fraction(0)
    else:
        probs = np.asarray(vals, dtype=float)
        escaped = max(0.0, 1.0 - float(probs.sum())) if alg.crossed else 0.0
    return DistVector(pts, probs, tuple(box), escaped, mode, alg.crossed, meta)


def support_measure(spec: ProcessSpec, i: int, n: int, box: Sequence[int]):
    """Boolean support indicator of Z_n from type i inside ``box`` as (points, crossed)."""
    alg = _make_algebra(spec, box, FLOAT, boolean=True)
    if n == 0:
        measure = alg.unit(_unit_vec(spec.d, i))
    else:
        measure = compose_measures(spec, alg, n)[i]
    pts, _ = alg.items(measure)
    return pts, alg.crossed


# ---------------------------------------------------------------------------
# pushforwards


def marginal(dist: DistVector, m: int) -> Dist1D:
    """Law of the type-m coordinate (mass beyond the box stays escaped)."""
    if not 0 <= m < dist.d:
        raise DomainError(f"type index {m} out of range")
    return _pushforward(dist, dist.points[:, m], dist.box[m])


def total(dist: DistVector) -> Dist1D:
    """Law of |Z| (the l1 size)."""
    return _pushforward(dist, dist.points.sum(axis=1), int(sum(dist.box)))


def _pushforward(dist: DistVector, keys: np.ndarray, kmax: int) -> Dist1D:
    if dist.mode == EXACT:
        out = [Fraction(0)] * (kmax + 1)
        for key, p in zip(keys, dist.probs):
            out[int(key)] += p
        return Dist1D(tuple(out), dist.escaped_mass)
    out = np.bincount(keys, weights=dist.probs, minlength=kmax + 1)
    return Dist1D(tuple(float(x) for x in out), dist.escaped_mass)


def _series_mul(a, b, kmax):
    if isinstance(a, np.ndarray):
        return np.convolve(a, b)[: kmax + 1]
    out = [Fraction(0)] * min(len(a) + len(b) - 1, kmax + 1)
    for i, x in enumerate(a):
        if x == 0:
            continue
        for j, y in enumerate(b[: kmax + 1 - i]):
            out[i + j] += x * y
    return out


def _series_pow(a, r, kmax, memo, key):
    if (key, r) in memo:
        return memo[(key, r)]
    if r == 1:
        res = a
    else:
        half = _series_pow(a, r // 2, kmax, memo, key)
        res = _series_mul(half, half, kmax)
        if r % 2:
            res = _series_mul(res, a, kmax)
    memo[(key, r)] = res
    return res


def _projected_law(spec: ProcessSpec, i: int, n: int, kmax: int, weights: Sequence[int], mode: str) -> Dist1D:
    """Law of w.Z_n from type i on 0..kmax, via f_n evaluated along s -> (s^{w_1}, ..., s^{w_d})."""
    require_valid(spec)
    d = spec.d
    work = spec.with_mode(mode)
    exact = mode == EXACT

    def mono(power):
        if exact:
            coeffs = [Fraction(0)] * (kmax + 1)
            if power <= kmax:
                coeffs[power] = Fraction(1)
            return coeffs
        coeffs = np.zeros(kmax + 1)
        if power <= kmax:
            coeffs[power] = 1.0
        return coeffs

    series = [mono(weights[j]) for j in range(d)]
    for _ in range(n):
        memo: dict = {}
        nxt = []
        for law in work.laws:
            acc = mono(kmax + 1)  # zero series of the right length
            for k, p in law.atoms:
                prod = None
                for j, kj in enumerate(k):
                    if kj:
                        f = _series_pow(series[j], kj, kmax, memo, j)
                        prod = f if prod is None else _series_mul(prod, f, kmax)
                if exact:
                    for idx, c in enumerate(prod):
                        acc[idx] += p * c
                else:
                    acc[: len(prod)] += p * prod
            nxt.append(acc)
        series = nxt
    probs = series[i]
    if exact:
        probs = list(probs) + [Fraction(0)] * (kmax + 1 - len(probs))
        return Dist1D(tuple(probs), Fraction(1) - sum(probs, Fraction(0)))
    probs = np.pad(probs, (0, kmax + 1 - len(probs)))
    return Dist1D(tuple(float(x) for x in probs), max(0.0, 1.0 - float(np.sum(probs))))


def marginal_law(spec: ProcessSpec, i: int, n: int, m: int, kmax: int, mode: str | None = None) -> Dist1D:
    """P_i(Z_n^{(m)} = k) for k <= kmax from the marginal generating function f_n(1,..,s,..,1)."""
    weights = [1 if j == m else 0 for j in range(spec.d)]
    return _projected_law(spec, i, n, kmax, weights, mode or spec.mode)


def total_law(spec: ProcessSpec, i: int, n: int, kmax: int, mode: str | None = None) -> Dist1D:
    """P_i(|Z_n| = k) for k <= kmax from f_n(s, ..., s)."""
    return _projected_law(spec, i, n, kmax, [1] * spec.d, mode or spec.mode)


# ---------------------------------------------------------------------------
# generating-function evaluation


def _atom_arrays(spec: ProcessSpec):
    out = []
    for law in spec.laws:
        ks = np.array([k for k, _ in law.atoms], dtype=np.int64)
        ps = np.array([float(p) for _, p in law.atoms])
        out.append((ks, ps))
    return out


def apply_f(spec: ProcessSpec, s: np.ndarray, atoms=None) -> np.ndarray:
    """One application of f to points s of shape (d, ...)."""
    atoms = atoms or _atom_arrays(spec)
    out = np.empty_like(s)
    for i, (ks, ps) in enumerate(atoms):
        acc = np.zeros_like(s[0])
        for k, p in zip(ks, ps):
            term = np.full_like(s[0], p)
            for j, kj in enumerate(k):
                if kj:
                    term = term * s[j] ** int(kj)
            acc = acc + term
        out[i] = acc
    return out


def eval_fn_many(spec: ProcessSpec, n: int, s: np.ndarray) -> np.ndarray:
    """f_n at an array of points of shape (d, ...) by n-fold composition."""
    if n < 0:
        raise DomainError("n must be nonnegative")
    s = np.array(s, dtype=complex if np.iscomplexobj(s) else float)
    atoms = _atom_arrays(spec)
    for _ in range(n):
        s = apply_f(spec, s, atoms)
    if np.isnan(s).any():
        raise NumericError("NaN while composing f")
    return s


def eval_fn(spec: ProcessSpec, n: int, s) -> np.ndarray:
    """f_n(s) for a single point s in the closed unit polydisk."""
    point = s if isinstance(s, ComplexPoint) else ComplexPoint(tuple(s))
    if len(point.components) != spec.d:
        raise DomainError("point dimension does not match the spec")
    arr = point.as_array()
    if np.all(arr.imag == 0):
        arr = arr.real
    return eval_fn_many(spec, n, arr)


def apply_one_minus_f(spec: ProcessSpec, y: np.ndarray, atoms=None) -> np.ndarray:
    """1 - f(1 - y), written so that it stays accurate when y is tiny."""
    atoms = atoms or _atom_arrays(spec)
    q = 1.0 - y
    out = np.empty_like(y)
    for i, (ks, ps) in enumerate(atoms):
        acc = np.zeros_like(y[0])
        for k, p in zip(ks, ps):
            term = np.zeros_like(y[0])
            prefix = np.ones_like(y[0])
            for j, kj in enumerate(k):
                if kj == 0:
                    continue
                geo = np.zeros_like(y[0])
                qp = np.ones_like(y[0])
                for _ in range(int(kj)):
                    geo = geo + qp
                    qp = qp * q[j]
                term = term + y[j] * geo * prefix
                prefix = prefix * qp
            acc = acc + p * term
        out[i] = acc
    return out


def one_minus_fn(spec: ProcessSpec, n: int, y: np.ndarray) -> np.ndarray:
    """1 - f_n(1 - y) by n-fold composition of the accurate one-step map."""
    atoms = _atom_arrays(spec)
    y = np.array(y, dtype=complex if np.iscomplexobj(y) else float)
    for _ in range(n):
        y = apply_one_minus_f(spec, y, atoms)
    if np.isnan(y).any():
        raise NumericError("NaN while composing 1 - f(1 - y)")
    return y


def log_fn(spec: ProcessSpec, n: int, s: Sequence[float]) -> np.ndarray:
    """log f_n(s) for real s in (0, 1]^d, iterated in the log domain."""
    s = np.asarray(s, dtype=float)
    if s.shape[0] != spec.d:
        raise DomainError("point dimension does not match the spec")
    if np.any(s <= 0) or np.any(s > 1):
        raise DomainError("log f_n needs every coordinate in (0, 1]")
    if np.all(s == 1):
        return np.zeros(spec.d)
    logs = np.log(s)
    atoms = _atom_arrays(spec)
    for _ in range(n):
        logs = np.array([logsumexp(np.log(ps) + ks @ logs) for ks, ps in atoms])
    return np.minimum(logs, 0.0)


def q_schroder(spec: ProcessSpec, n: int, s: Sequence[float]) -> np.ndarray:
    """Q_n(s) = f_n(s) / gamma^n (Schroeder regime with h = 1)."""
    regime = spectral_data(spec).regime
    if not isinstance(regime, Schroeder):
        raise RegimeError(f"Q_n needs the Schroeder regime, got {regime.kind}")
    if regime.h != 1:
        raise RegimeError(f"Schroeder period h={regime.h} > 1 is not supported")
    s = np.asarray(s, dtype=float)
    if np.any(s < 0) or np.any(s >= 1):
        raise DomainError("Q_n is evaluated on [0, 1)^d")
    return eval_fn_many(spec, n, s) / float(regime.gamma) ** n


def g_boettcher(spec: ProcessSpec, n: int, s: Sequence[float], mu: float | None = None) -> np.ndarray:
    """-mu^{-n} log f_n(s) (Boettcher regime)."""
    regime = spectral_data(spec).regime
    if not isinstance(regime, Boettcher):
        raise RegimeError(f"G_n needs the Boettcher regime, got {regime.kind}")
    if mu is None:
        from .boettcher import k1_and_mu

        mu = k1_and_mu(spec).mu
    return -log_fn(spec, n, s) / float(mu) ** n
