"""Convolution algebras for measures on Z_+^d restricted to a box.

Two interchangeable backends share one small interface (unit, mul, combine,
power, items, total):

* ``DenseAlgebra`` stores a measure as a dense array on the sub-lattice
  ``origin + stride * index``.  Multiplication is a direct (non-FFT)
  convolution done one leading slice at a time as a Toeplitz matrix product,
  so tiny probabilities are never polluted by round-off from large ones.
  With ``boolean=True`` it tracks support indicators instead of masses.
* ``SparseAlgebra`` stores ``{point: mass}`` dicts and works with Fractions.

Both clip products to the box ``k <= box`` and record in ``crossed`` whether
any product ever had a nonzero contribution outside it.  Clipping is exact
for in-box points because every summand is componentwise below its sum.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ResourceError

DEFAULT_MAX_CELLS = 60_000_000


@dataclass(frozen=True)
class Lattice:
    origin: tuple[int, ...]
    values: np.ndarray


def _trim(origin: Sequence[int], values: np.ndarray, stride: Sequence[int]) -> Lattice | None:
    nz = np.nonzero(values)
    if len(nz[0]) == 0:
        return None
    lo = [int(ix.min()) for ix in nz]
    hi = [int(ix.max()) + 1 for ix in nz]
    sl = tuple(slice(a, b) for a, b in zip(lo, hi))
    new_origin = tuple(o + s * a for o, s, a in zip(origin, stride, lo))
    return Lattice(new_origin, np.ascontiguousarray(values[sl]))


def _conv_capped(a: np.ndarray, b: np.ndarray, cap: Sequence[int]) -> np.ndarray:
    """Full linear convolution of a and b, keeping output indices < cap."""
    if a.shape[-1] > b.shape[-1]:
        a, b = b, a
    out_shape = tuple(min(x + y - 1, c) for x, y, c in zip(a.shape, b.shape, cap))
    out = np.zeros(out_shape)
    a_last, c_last = a.shape[-1], out_shape[-1]
    lead_out = out_shape[:-1]
    for idx in np.ndindex(*b.shape[:-1]):
        if any(i >= c for i, c in zip(idx, lead_out)):
            continue
        row = b[idx]
        if not row.any():
            continue
        a_sub = a[tuple(slice(0, min(x, c - i)) for x, c, i in zip(a.shape[:-1], lead_out, idx))]
        pad = np.zeros(a_last - 1 + c_last)
        m = min(row.shape[0], c_last)
        pad[a_last - 1 : a_last - 1 + m] = row[:m]
        toeplitz = np.ascontiguousarray(sliding_window_view(pad, c_last)[a_last - 1 :: -1])
        prod = a_sub.reshape(-1, a_last) @ toeplitz
        prod = prod.reshape(a_sub.shape[:-1] + (c_last,))
        dst = tuple(slice(i, i + x) for i, x in zip(idx, a_sub.shape[:-1]))
        out[dst] += prod
    return out


class DenseAlgebra:
    """Dense lattice measures clipped to ``box`` (inclusive upper corner)."""

    def __init__(self, d: int, stride: Sequence[int], box: Sequence[int], boolean: bool = False,
                 max_cells: int = DEFAULT_MAX_CELLS):
        self.d = d
        self.stride = tuple(int(s) for s in stride)
        self.box = tuple(int(b) for b in box)
        self.boolean = boolean
        self.max_cells = max_cells
        self.crossed = False

    def unit(self, point: Sequence[int], mass: float = 1.0) -> Lattice | None:
        point = tuple(int(x) for x in point)
        if any(p > b for p, b in zip(point, self.box)):
            self.crossed = True
            return None
        return Lattice(point, np.full((1,) * self.d, float(mass)))

    def _cap(self, origin: Sequence[int]) -> tuple[int, ...]:
        return tuple((b - o) // s + 1 for b, o, s in zip(self.box, origin, self.stride))

    def _check_cells(self, shape: Sequence[int]) -> None:
        cells = int(np.prod(shape, dtype=np.float64))
        if cells > self.max_cells:
            raise ResourceError(f"dense array of {cells} cells exceeds budget {self.max_cells}")

    def mul(self, x: Lattice | None, y: Lattice | None) -> Lattice | None:
        if x is None or y is None:
            return None
        origin = tuple(a + b for a, b in zip(x.origin, y.origin))
        cap = self._cap(origin)
        full = tuple(p + q - 1 for p, q in zip(x.values.shape, y.values.shape))
        if any(f > c for f, c in zip(full, cap)):
            # arrays are trimmed, so the extreme index of each factor is nonzero
            self.crossed = True
        if any(c <= 0 for c in cap):
            return None
        self._check_cells(tuple(min(f, c) for f, c in zip(full, cap)))
        values = _conv_capped(x.values, y.values, cap)
        if self.boolean:
            values = (values > 0).astype(float)
        return _trim(origin, values, self.stride)

    def combine(self, terms: Iterable[tuple[float, Lattice | None]]) -> Lattice | None:
        terms = [(w, t) for w, t in terms if t is not None]
        if not terms:
            return None
        lo = tuple(min(t.origin[j] for _, t in terms) for j in range(self.d))
        hi = tuple(max(t.origin[j] + self.stride[j] * (t.values.shape[j] - 1) for _, t in terms) for j in range(self.d))
        shape = tuple((h - l) // s + 1 for h, l, s in zip(hi, lo, self.stride))
        self._check_cells(shape)
        out = np.zeros(shape)
        for w, t in terms:
            off = tuple((o - l) // s for o, l, s in zip(t.origin, lo, self.stride))
            sl = tuple(slice(a, a + n) for a, n in zip(off, t.values.shape))
            out[sl] += float(w) * t.values
        if self.boolean:
            out = (out > 0).astype(float)
        return _trim(lo, out, self.stride)

    def power(self, x: Lattice | None, r: int, memo: dict | None = None, key=None) -> Lattice | None:
        return _binary_power(self, x, r, memo, key)

    def items(self, x: Lattice | None) -> tuple[np.ndarray, np.ndarray]:
        if x is None:
            return np.zeros((0, self.d), dtype=np.int64), np.zeros(0)
        idx = np.nonzero(x.values)
        pts = np.stack(idx, axis=1).astype(np.int64) * np.array(self.stride) + np.array(x.origin)
        return pts, x.values[idx]

    def total(self, x: Lattice | None) -> float:
        return 0.0 if x is None else float(x.values.sum())


class SparseAlgebra:
    """Dict-backed measures (exact with Fractions) clipped to ``box``."""

    def __init__(self, d: int, box: Sequence[int], boolean: bool = False, max_points: int = 5_000_000):
        self.d = d
        self.box = tuple(int(b) for b in box)
        self.boolean = boolean
        self.max_points = max_points
        self.crossed = False

    def unit(self, point: Sequence[int], mass=Fraction(1)):
        point = tuple(int(x) for x in point)
        if any(p > b for p, b in zip(point, self.box)):
            self.crossed = True
            return None
        return {point: (True if self.boolean else mass)}

    def mul(self, x, y):
        if x is None or y is None:
            return None
        out: dict = {}
        box = self.box
        for ka, pa in x.items():
            for kb, pb in y.items():
                k = tuple(a + b for a, b in zip(ka, kb))
                if any(c > b for c, b in zip(k, box)):
                    self.crossed = True
                    continue
                if self.boolean:
                    out[k] = True
                else:
                    out[k] = out.get(k, 0) + pa * pb
            if len(out) > self.max_points:
                raise ResourceError(f"sparse measure exceeds {self.max_points} points")
        return out or None

    def combine(self, terms):
        out: dict = {}
        for w, t in terms:
            if t is None:
                continue
            for k, p in t.items():
                if self.boolean:
                    out[k] = True
                else:
                    out[k] = out.get(k, 0) + w * p
        return out or None

    def power(self, x, r: int, memo: dict | None = None, key=None):
        return _binary_power(self, x, r, memo, key)

    def items(self, x):
        if not x:
            return np.zeros((0, self.d), dtype=np.int64), []
        keys = sorted(x)
        return np.array(keys, dtype=np.int64).reshape(-1, self.d), [x[k] for k in keys]

    def total(self, x):
        if not x:
            return Fraction(0)
        return sum(x.values(), Fraction(0)) if not self.boolean else len(x)


def _binary_power(alg, x, r: int, memo: dict | None, key):
    """x^{*r} by repeated squaring; squares and results cached under (key, power)."""
    if r < 0:
        raise ValueError("negative convolution power")
    if memo is not None and (key, r) in memo:
        return memo[(key, r)]
    if r == 0:
        result = alg.unit((0,) * alg.d)
    elif r == 1:
        result = x
    else:
        half = _binary_power(alg, x, r // 2, memo, key)
        result = alg.mul(half, half)
        if r % 2:
            result = alg.mul(result, x)
    if memo is not None:
        memo[(key, r)] = result
    return result
