"""Vectorized Monte Carlo simulation of whole populations.

Randomness comes from numpy's PCG64 bit generator.  A run with seed ``s`` and
``blocks`` blocks uses ``SeedSequence(s).spawn(blocks)``, so results depend
only on (seed, block count, block sizes) and never on the worker count.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence

import numpy as np

from .model import ProcessSpec

RNG_NAME = "PCG64"


def make_rngs(seed: int, blocks: int) -> list[np.random.Generator]:
    children = np.random.SeedSequence(int(seed)).spawn(blocks)
    return [np.random.Generator(np.random.PCG64(c)) for c in children]


def block_sizes(samples: int, blocks: int) -> list[int]:
    base, extra = divmod(samples, blocks)
    return [base + (1 if b < extra else 0) for b in range(blocks)]


def simulate_block(spec: ProcessSpec, initial: Sequence[int], n: int, size: int, rng: np.random.Generator,
                   pvals: Callable[[int, int], np.ndarray] | None = None) -> np.ndarray:
    """Z_n for ``size`` independent populations; returns an int64 array (size, d).

    ``pvals(g, i)`` overrides the atom probabilities of type i during the step
    from generation g to g + 1 (used for tilted sampling).
    """
    d = spec.d
    ks = [np.array([k for k, _ in law.atoms], dtype=np.int64) for law in spec.laws]
    base = [np.array([float(p) for _, p in law.atoms]) for law in spec.laws]
    z = np.tile(np.asarray(initial, dtype=np.int64), (size, 1))
    for g in range(n):
        nxt = np.zeros_like(z)
        for i in range(d):
            p = base[i] if pvals is None else pvals(g, i)
            counts = rng.multinomial(z[:, i], p / p.sum())
            nxt += counts @ ks[i]
        z = nxt
    return z


def simulate(spec: ProcessSpec, initial: Sequence[int], n: int, samples: int, seed: int, blocks: int = 16,
             workers: int = 1, pvals=None) -> np.ndarray:
    """Z_n for ``samples`` populations, concatenated in block order."""
    rngs = make_rngs(seed, blocks)
    sizes = block_sizes(samples, blocks)

    def run(b):
        return simulate_block(spec, initial, n, sizes[b], rngs[b], pvals)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, range(blocks)))
    else:
        parts = [run(b) for b in range(blocks)]
    return np.concatenate(parts, axis=0)


def empirical_frequencies(samples: np.ndarray) -> dict[tuple[int, ...], int]:
    pts, counts = np.unique(samples, axis=0, return_counts=True)
    return {tuple(int(x) for x in p): int(c) for p, c in zip(pts, counts)}


def simulate_martingale_limit(spec: ProcessSpec, initial: Sequence[int], n: int, samples: int, seed: int,
                              rho: float, blocks: int = 16) -> np.ndarray:
    """|Z_n| / rho^n, a draw from (approximately) the law of W."""
    z = simulate(spec, initial, n, samples, seed, blocks)
    return z.sum(axis=1) / float(rho) ** n
