"""Process definition, validation, Perron data, regime classification and index helpers.

Type indices are 0-based throughout the Python API (the config file and the
CLI use 1-based indices).
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Sequence, Union

import numpy as np

from .errors import DomainError, IndexRangeError, ModelError, NumericError, SpecStructureError, ValidationFailed

Number = Union[Fraction, float]
Point = tuple[int, ...]

EXACT = "exact"
FLOAT = "float"

PERRON_TOL = 1e-12
PERRON_MAX_ITER = 100_000
JORDAN_TOL = 1e-9
JORDAN_AMBIGUOUS = 1e-6


def _as_prob(p, mode: str) -> Number:
    if isinstance(p, str):
        p = Fraction(p.strip())
    elif isinstance(p, float):
        p = Fraction(p) if mode == EXACT else p
    elif isinstance(p, int):
        p = Fraction(p)
    if mode == EXACT:
        return Fraction(p)
    return float(p)


@dataclass(frozen=True)
class OffspringLaw:
    """Offspring law of one type: a finite map from offspring vectors to probabilities."""

    type_index: int
    atoms: tuple[tuple[Point, Number], ...]

    @classmethod
    def from_mapping(cls, type_index: int, atoms: Mapping[Sequence[int], object], mode: str = EXACT) -> "OffspringLaw":
        items: dict[Point, Number] = {}
        d = None
        for k, p in atoms.items():
            k = tuple(int(x) for x in k)
            if d is None:
                d = len(k)
            if len(k) != d:
                raise SpecStructureError(f"type {type_index}: atoms of mixed dimension")
            if any(x < 0 for x in k):
                raise SpecStructureError(f"type {type_index}: negative offspring count in {k}")
            if not any(k):
                raise SpecStructureError(f"type {type_index}: zero vector is not allowed as an atom (f(0) must be 0)")
            q = _as_prob(p, mode)
            if not q > 0:
                raise SpecStructureError(f"type {type_index}: probability of {k} must be strictly positive, got {p}")
            if k in items:
                raise SpecStructureError(f"type {type_index}: duplicate atom {k}")
            items[k] = q
        if not items:
            raise SpecStructureError(f"type {type_index}: empty law")
        return cls(type_index, tuple(sorted(items.items())))

    @property
    def d(self) -> int:
        return len(self.atoms[0][0])

    def points(self) -> np.ndarray:
        return np.array([k for k, _ in self.atoms], dtype=np.int64)

    def probs(self) -> np.ndarray:
        return np.array([float(p) for _, p in self.atoms])

    def total(self) -> Number:
        return sum((p for _, p in self.atoms), Fraction(0) if isinstance(self.atoms[0][1], Fraction) else 0.0)


@dataclass(frozen=True)
class ProcessSpec:
    """A d-type Galton-Watson process given by one offspring law per type."""

    laws: tuple[OffspringLaw, ...]
    mode: str = EXACT
    name: str = ""

    def __post_init__(self):
        if self.mode not in (EXACT, FLOAT):
            raise SpecStructureError(f"unknown arithmetic mode {self.mode!r}")
        if len(self.laws) < 2:
            raise SpecStructureError("a multi-type process needs d >= 2 types")
        d = len(self.laws)
        for idx, law in enumerate(self.laws):
            if law.type_index != idx:
                raise SpecStructureError(f"law at position {idx} carries type index {law.type_index}")
            if law.d != d:
                raise SpecStructureError(f"type {idx}: atoms have dimension {law.d}, expected {d}")
            for _, p in law.atoms:
                if isinstance(p, Fraction) != (self.mode == EXACT):
                    raise SpecStructureError(f"type {idx}: probability type does not match mode {self.mode}")

    @classmethod
    def from_atoms(cls, atoms: Sequence[Mapping[Sequence[int], object]], mode: str = EXACT, name: str = "") -> "ProcessSpec":
        return cls(tuple(OffspringLaw.from_mapping(i, a, mode) for i, a in enumerate(atoms)), mode, name)

    @property
    def d(self) -> int:
        return len(self.laws)

    def with_mode(self, mode: str) -> "ProcessSpec":
        if mode == self.mode:
            return self
        atoms = [{k: (Fraction(p) if mode == EXACT else float(p)) for k, p in law.atoms} for law in self.laws]
        return ProcessSpec.from_atoms(atoms, mode, self.name)

    def canonical(self) -> dict:
        return {
            "spec_version": 1,
            "mode": self.mode,
            "types": [
                [{"k": list(k), "p": str(Fraction(p)) if isinstance(p, Fraction) else repr(p)} for k, p in law.atoms]
                for law in self.laws
            ],
        }

    def content_hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()

    def zero(self) -> Number:
        return Fraction(0) if self.mode == EXACT else 0.0

    def mean_matrix(self) -> tuple[tuple[Number, ...], ...]:
        d = self.d
        rows = []
        for law in self.laws:
            row = [self.zero()] * d
            for k, p in law.atoms:
                for j in range(d):
                    row[j] += p * k[j]
            rows.append(tuple(row))
        return tuple(rows)

    def a_matrix(self) -> tuple[tuple[Number, ...], ...]:
        """First derivatives of the offspring PGFs at 0: a_ij = P_i(Z_1 = e_j)."""
        d = self.d
        rows = []
        for law in self.laws:
            row = [self.zero()] * d
            for k, p in law.atoms:
                if sum(k) == 1:
                    row[k.index(1)] += p
            rows.append(tuple(row))
        return tuple(rows)

    def max_offspring_matrix(self) -> np.ndarray:
        """Entry (i, j): largest type-j count among the atoms of law i."""
        return np.array([[max(k[j] for k, _ in law.atoms) for j in range(self.d)] for law in self.laws], dtype=np.int64)

    def lattice_stride(self) -> tuple[int, ...]:
        """Per-coordinate gcd of every atom; Z_n (n >= 1) lives on this lattice."""
        g = [0] * self.d
        for law in self.laws:
            for k, _ in law.atoms:
                g = [math.gcd(a, b) for a, b in zip(g, k)]
        return tuple(x if x > 0 else 1 for x in g)


def as_float_matrix(m) -> np.ndarray:
    return np.array([[float(x) for x in row] for row in m], dtype=float)


# ---------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class Finding:
    name: str
    passed: bool
    detail: str = ""


@dataclass(frozen=True)
class ValidationReport:
    findings: tuple[Finding, ...]
    period: int | None = None

    @property
    def ok(self) -> bool:
        return all(f.passed for f in self.findings)

    def raise_if_failed(self) -> None:
        if not self.ok:
            raise ValidationFailed(self)

    def as_dict(self) -> dict:
        return {
            "ok": self.ok,
            "period": self.period,
            "findings": [{"name": f.name, "passed": f.passed, "detail": f.detail} for f in self.findings],
        }


def _reachability(pattern: np.ndarray) -> np.ndarray:
    d = pattern.shape[0]
    reach = pattern.astype(bool).copy()
    for k in range(d):
        reach |= reach[:, [k]] & reach[[k], :]
    return reach


def is_irreducible(m) -> bool:
    pattern = np.array([[x != 0 for x in row] for row in m], dtype=bool)
    return bool(_reachability(pattern).all())


def matrix_period(m) -> int:
    """Period of an irreducible nonnegative matrix (gcd of cycle lengths)."""
    pattern = np.array([[x != 0 for x in row] for row in m], dtype=bool)
    d = pattern.shape[0]
    level = [-1] * d
    level[0] = 0
    queue = [0]
    while queue:
        a = queue.pop(0)
        for b in range(d):
            if pattern[a, b] and level[b] < 0:
                level[b] = level[a] + 1
                queue.append(b)
    g = 0
    for a in range(d):
        for b in range(d):
            if pattern[a, b] and level[a] >= 0 and level[b] >= 0:
                g = math.gcd(g, level[a] + 1 - level[b])
    return g


def validate_spec(spec: ProcessSpec) -> ValidationReport:
    """Fail-closed model checks; structural problems are raised at construction time."""
    findings = []
    findings.append(Finding("f(0)=0", all(any(k) for law in spec.laws for k, _ in law.atoms)))
    for law in spec.laws:
        total = law.total()
        ok = total == 1 if spec.mode == EXACT else abs(total - 1.0) <= 1e-12
        findings.append(Finding(f"law of type {law.type_index + 1} sums to 1", bool(ok), f"sum={total}"))
    m = spec.mean_matrix()
    irreducible = is_irreducible(m)
    findings.append(Finding("M irreducible", irreducible))
    nonsingular = any(sum(k) != 1 for law in spec.laws for k, _ in law.atoms)
    findings.append(Finding("nonsingular", nonsingular, "" if nonsingular else "every atom has |k| = 1, f(s) = Ms"))
    period = matrix_period(m) if irreducible else None
    if irreducible:
        rho = _perron_float(as_float_matrix(m))[0]
        findings.append(Finding("supercritical", rho > 1.0, f"rho={rho:.12g}"))
    else:
        findings.append(Finding("supercritical", False, "Perron root undefined for reducible M"))
    return ValidationReport(tuple(findings), period)


def require_valid(spec: ProcessSpec) -> None:
    validate_spec(spec).raise_if_failed()


# ---------------------------------------------------------------------------
# Perron data


def _power_iteration(m: np.ndarray, tol: float = PERRON_TOL, max_iter: int = PERRON_MAX_ITER):
    d = m.shape[0]
    shifted = m + np.eye(d)  # irreducible + I is primitive, same eigenvectors
    x = np.ones(d) / d
    lam = 0.0
    for _ in range(max_iter):
        y = shifted @ x
        lam = float(x @ y / (x @ x))
        y /= y.sum()
        if np.max(np.abs(y - x)) < tol:
            x = y
            break
        x = y
    else:
        residual = float(np.max(np.abs(shifted @ x - lam * x)))
        raise NumericError("power iteration did not converge", residual)
    lam = float(x @ (shifted @ x) / (x @ x))
    return lam - 1.0, x


def _perron_float(m: np.ndarray):
    rho, u = _power_iteration(m)
    _, v = _power_iteration(m.T)
    return rho, u, v


def _rational_sqrt(q: Fraction) -> Fraction | None:
    if q < 0:
        return None
    a, b = math.isqrt(q.numerator), math.isqrt(q.denominator)
    if a * a == q.numerator and b * b == q.denominator:
        return Fraction(a, b)
    return None


def _perron_exact_2x2(m):
    (a, b), (c, dd) = m
    tr, det = a + dd, a * dd - b * c
    root = _rational_sqrt(tr * tr - 4 * det)
    if root is None or b == 0 or c == 0:
        return None
    rho = (tr + root) / 2
    u = (b, rho - a)
    v = (c, rho - a)
    return rho, u, v


@dataclass(frozen=True)
class Schroeder:
    gamma: Number
    h: int
    kind: str = field(default="schroeder", init=False)


@dataclass(frozen=True)
class Boettcher:
    nilpotency_index: int
    kind: str = field(default="boettcher", init=False)


@dataclass(frozen=True)
class Intermediate:
    gamma_hat: Number
    h_hat: int
    kind: str = field(default="intermediate", init=False)


@dataclass(frozen=True)
class Unresolved:
    reason: str
    kind: str = field(default="unresolved", init=False)


Regime = Union[Schroeder, Boettcher, Intermediate, Unresolved]


def regime_as_dict(regime: Regime) -> dict:
    out = {"kind": regime.kind}
    for key, val in regime.__dict__.items():
        if key == "kind":
            continue
        out[key] = str(val) if isinstance(val, Fraction) else val
    return out


@dataclass(frozen=True)
class SpectralData:
    M: tuple[tuple[Number, ...], ...]
    A: tuple[tuple[Number, ...], ...]
    rho: Number
    u: tuple[Number, ...]
    v: tuple[Number, ...]
    regime: Regime
    period: int
    exact: bool

    @property
    def M_array(self) -> np.ndarray:
        return as_float_matrix(self.M)

    @property
    def A_array(self) -> np.ndarray:
        return as_float_matrix(self.A)

    @property
    def u_array(self) -> np.ndarray:
        return np.array([float(x) for x in self.u])

    @property
    def v_array(self) -> np.ndarray:
        return np.array([float(x) for x in self.v])

    def as_dict(self) -> dict:
        conv = (lambda x: str(x)) if self.exact else float
        return {
            "M": [[str(x) if isinstance(x, Fraction) else float(x) for x in row] for row in self.M],
            "A": [[str(x) if isinstance(x, Fraction) else float(x) for x in row] for row in self.A],
            "rho": conv(self.rho),
            "u": [conv(x) for x in self.u],
            "v": [conv(x) for x in self.v],
            "regime": regime_as_dict(self.regime),
            "period": self.period,
            "exact": self.exact,
        }


def spectral_data(spec: ProcessSpec) -> SpectralData:
    """Mean matrix, A, Perron root and the normalized eigenvectors (v.1 = 1, v.u = 1)."""
    require_valid(spec)
    m, a = spec.mean_matrix(), spec.a_matrix()
    exact_pair = _perron_exact_2x2(m) if spec.mode == EXACT and spec.d == 2 else None
    if exact_pair is not None:
        rho, u, v = exact_pair
        sv = sum(v)
        v = tuple(x / sv for x in v)
        vu = sum(x * y for x, y in zip(v, u))
        u = tuple(x / vu for x in u)
        exact = True
    else:
        rho, u, v = _perron_float(as_float_matrix(m))
        v = v / v.sum()
        u = u / (v @ u)
        rho, u, v = float(rho), tuple(float(x) for x in u), tuple(float(x) for x in v)
        exact = False
    if not all(x > 0 for x in u) or not all(x > 0 for x in v):
        raise NumericError("Perron vectors are not strictly positive")
    regime = classify_regime(a)
    return SpectralData(m, a, rho, u, v, regime, matrix_period(m), exact)


# ---------------------------------------------------------------------------
# regime classification


def _nilpotency_index(a) -> int | None:
    pattern = np.array([[x != 0 for x in row] for row in a], dtype=np.int64)
    d = pattern.shape[0]
    power = pattern.copy()
    for j in range(1, d + 1):
        if not power.any():
            return j
        power = np.minimum(power @ pattern, 1)
    return None


def _exact_regime(a) -> Regime | None:
    import sympy

    mat = sympy.Matrix([[sympy.Rational(x.numerator, x.denominator) for x in row] for row in a])
    eigs = mat.eigenvals()
    reals = [lam for lam in eigs if lam.is_real]
    if not reals:
        return None
    gamma = max(reals, key=lambda z: float(sympy.N(z, 50)))
    gamma_f = sympy.N(gamma, 60)
    if gamma_f >= 1:
        raise ModelError(f"spectral radius of A is {gamma} >= 1")
    d = mat.shape[0]
    h = 1
    for lam in eigs:
        if abs(sympy.N(sympy.Abs(lam), 60) - gamma_f) > sympy.Float("1e-45"):
            continue
        omega = lam / gamma
        for k in range(1, d + 1):
            if abs(sympy.N(omega**k - 1, 60)) < sympy.Float("1e-45"):
                h = h * k // math.gcd(h, k)
                break
        else:
            return Unresolved("peripheral eigenvalue is not a root of unity of order <= d")
    shifted = mat**h - gamma**h * sympy.eye(d)
    r1, r2 = shifted.rank(simplify=True), (shifted * shifted).rank(simplify=True)
    g = Fraction(int(gamma.p), int(gamma.q)) if gamma.is_Rational else float(gamma_f)
    if r2 < r1:
        return Intermediate(g, h)
    return Schroeder(g, h)


def _float_regime(a: np.ndarray) -> Regime:
    d = a.shape[0]
    eig = np.linalg.eigvals(a)
    gamma = float(np.max(np.abs(eig)))
    if gamma >= 1:
        raise ModelError(f"spectral radius of A is {gamma:.6g} >= 1")
    h = 1
    for lam in eig[np.abs(eig) >= gamma * (1 - JORDAN_TOL)]:
        omega = lam / gamma
        for k in range(1, d + 1):
            if abs(omega**k - 1) < JORDAN_TOL:
                h = h * k // math.gcd(h, k)
                break
        else:
            return Unresolved("peripheral eigenvalue is not a root of unity of order <= d")
    shifted = np.linalg.matrix_power(a, h) - gamma**h * np.eye(d)
    scale = max(1.0, float(np.abs(a).max()) ** h)
    ranks = []
    for mat in (shifted, shifted @ shifted):
        sv = np.linalg.svd(mat, compute_uv=False) / scale
        if np.any((sv > JORDAN_TOL) & (sv < JORDAN_AMBIGUOUS)):
            return Unresolved(f"singular value {sv[(sv > JORDAN_TOL) & (sv < JORDAN_AMBIGUOUS)][0]:.3e} inside the ambiguity band")
        ranks.append(int(np.sum(sv >= JORDAN_AMBIGUOUS)))
    if ranks[1] < ranks[0]:
        return Intermediate(gamma, h)
    return Schroeder(gamma, h)


def classify_regime(a) -> Regime:
    """Schroeder / Boettcher / Intermediate from the matrix A of first derivatives at 0."""
    rows = [list(r) for r in a]
    if any(x < 0 for row in rows for x in row):
        raise DomainError("A must be nonnegative")
    nil = _nilpotency_index(rows)
    if nil is not None:
        return Boettcher(nil)
    if all(isinstance(x, Fraction) for row in rows for x in row):
        regime = _exact_regime(rows)
        if regime is not None:
            return regime
    return _float_regime(as_float_matrix(rows))


# ---------------------------------------------------------------------------
# direction distance and index functions


def epsilon_v(k: Sequence[int], v: Sequence[float]) -> float:
    """Euclidean distance between k/|k| and the direction v."""
    k = np.asarray(k, dtype=float)
    total = k.sum()
    if total <= 0:
        raise DomainError("epsilon_v needs a nonzero vector")
    return float(np.linalg.norm(k / total - np.asarray(v, dtype=float)))


def dominates_v(k1: Sequence[int], k2: Sequence[int], v: Sequence[float]) -> bool:
    """k1 >=_v k2: at least as large in l1 norm and at least as close to v."""
    return sum(k1) >= sum(k2) and epsilon_v(k1, v) <= epsilon_v(k2, v)


def a_index(k_abs: int, c: Sequence[float]) -> int:
    """min{l >= 1 : c_l >= k_abs}, with c[0] = c_0."""
    for l in range(1, len(c)):
        if c[l] >= k_abs:
            return l
    raise IndexRangeError(f"|k|={k_abs} exceeds c at the longest horizon {len(c) - 1}; extend the sequence")


def b_index(k_abs: float, n: int, c: Sequence[float], mu: float, lambda_u: float) -> int:
    """min{1 <= l <= n : c_l mu^(n-l) >= lambda_u * k_abs}."""
    if not mu > 1:
        raise DomainError(f"mu must exceed 1, got {mu}")
    if n >= len(c):
        raise IndexRangeError(f"n={n} beyond the normalization horizon {len(c) - 1}")
    target = lambda_u * k_abs
    for l in range(1, n + 1):
        if c[l] * mu ** (n - l) >= target:
            return l
    raise IndexRangeError(f"no l <= {n} satisfies c_l mu^(n-l) >= {target}; k_n too large relative to c_n")


def b_index_total(k: int, n: int, c: Sequence[float], mu: float, lambda_u: float, d: int) -> int:
    """b'_n = b(k * 1)."""
    return b_index(d * k, n, c, mu, lambda_u)
