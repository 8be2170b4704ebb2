"""The acceptance checks, shared by the test suite and the ``verify-all`` command.

Each check returns a CheckResult with a boolean verdict and the numbers it was
decided on.  Checks never adjust their thresholds to the data.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .corpus import spec_b, spec_s
from .model import EXACT, FLOAT, Boettcher, Intermediate, Schroeder, classify_regime, spectral_data

MC_SEED = 12345
MC_SAMPLES = 1_000_000
IS_SEEDS = 50
IS_SAMPLES = 10_000


@dataclass
class CheckResult:
    number: int
    title: str
    passed: bool
    details: dict = field(default_factory=dict)
    seconds: float = 0.0
    budget: float | None = None

    @property
    def verdict(self) -> str:
        return "pass" if self.passed else "fail"

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} criterion {self.number}: {self.title} ({self.seconds:.1f}s)"

    def as_dict(self) -> dict:
        return {"number": self.number, "title": self.title, "verdict": self.verdict, "seconds": self.seconds,
                "budget_seconds": self.budget, "details": _jsonable(self.details)}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, (int, float, str, bool)) or obj is None:
        return obj
    return str(obj)


def engine_vs_monte_carlo(n_values=range(1, 7), samples: int = MC_SAMPLES, seed: int = MC_SEED) -> dict:
    from .genfun import generation_distribution
    from .simulate import empirical_frequencies, simulate

    rows = []
    ok = True
    for name, spec in (("SPEC-S", spec_s(FLOAT)), ("SPEC-B", spec_b(FLOAT))):
        for n in n_values:
            dist = generation_distribution(spec, (1, 0), n, mode=FLOAT, budget=0)
            freq = empirical_frequencies(simulate(spec, (1, 0), n, samples, seed))
            worst = 0.0
            atoms = 0
            for k, p in zip(dist.points, dist.probs):
                if p < 1e-4:
                    continue
                atoms += 1
                se = math.sqrt(p * (1 - p) / samples)
                z = abs(freq.get(tuple(int(x) for x in k), 0) / samples - p) / se
                worst = max(worst, z)
            rows.append({"spec": name, "n": n, "atoms_checked": atoms, "max_z": worst})
            ok = ok and bool(worst <= 4)
    return {"ok": ok, "rows": rows}


def check_1() -> CheckResult:
    out = engine_vs_monte_carlo()
    return CheckResult(1, "engine vs 1e6-sample Monte Carlo within 4 standard errors", out["ok"], out, budget=60)


def check_2(cases: int = 20, seed: int = 2024) -> CheckResult:
    from .cramer import untilt_identity_check

    rng = np.random.Generator(np.random.PCG64(seed))
    rows = []
    for name, spec in (("SPEC-S", spec_s(FLOAT)), ("SPEC-B", spec_b(FLOAT))):
        for _ in range(cases):
            l = tuple(int(x) for x in rng.integers(0, 4, size=2))
            if not any(l):
                l = (1, 0)
            h = tuple(float(x) for x in rng.uniform(0, 3, size=2))
            n = int(rng.integers(1, 4))
            rows.append({"spec": name, "l": l, "h": h, "n": n, "residual": untilt_identity_check(spec, l, h, n)})
    worst = max(r["residual"] for r in rows)
    return CheckResult(2, "tilt identity residual < 1e-12 on 20 random cases per spec", worst < 1e-12,
                       {"max_residual": worst, "cases": rows}, budget=30)


def check_3() -> CheckResult:
    s = spectral_data(spec_s(EXACT)).regime
    b = spectral_data(spec_b(EXACT)).regime
    from fractions import Fraction

    inter = classify_regime([[Fraction(1, 2), Fraction(1)], [Fraction(0), Fraction(1, 2)]])
    ok = (isinstance(s, Schroeder) and s.gamma == Fraction(1, 2) and isinstance(b, Boettcher)
          and b.nilpotency_index == 1 and isinstance(inter, Intermediate))
    return CheckResult(3, "regime classification (exact)", ok,
                       {"SPEC-S": s.kind, "gamma": str(getattr(s, "gamma", None)), "SPEC-B": b.kind,
                        "nilpotency_index": getattr(b, "nilpotency_index", None), "intermediate": inter.kind})


def check_4() -> CheckResult:
    s = spectral_data(spec_s(FLOAT))
    b = spectral_data(spec_b(FLOAT))
    gaps = {
        "rho_S": abs(float(s.rho) - 1.5),
        "rho_B": abs(float(b.rho) - 3.0),
        "u_S": float(np.abs(s.u_array - 1).max()),
        "v_S": float(np.abs(s.v_array - 0.5).max()),
    }
    return CheckResult(4, "spectral data within 1e-10", max(gaps.values()) <= 1e-10, gaps)


_DENSITY_CACHE: dict = {}


def schroeder_density():
    """Density grid of W for SPEC-S (t in [0, 12], step 0.01), cached per process."""
    from .schroder import char_fn_W, default_x_grid, density_w

    if "S" not in _DENSITY_CACHE:
        spec = spec_s(FLOAT)
        char = char_fn_W(spec, default_x_grid(spec), method="direct_limit")
        _DENSITY_CACHE["S"] = (char, density_w(spec, char))
    return _DENSITY_CACHE["S"]


def check_5() -> CheckResult:
    from .schroder import char_fn_W, schroeder_alpha, small_t_slope

    spec = spec_s(FLOAT)
    char, dens = schroeder_density()
    other = char_fn_W(spec, char.grid[char.grid >= 0], method="functional_equation")
    gap = float(np.abs(char.values - other.values).max())
    masses = [float(m) for m in dens.mass]
    slope = small_t_slope(dens, 0)
    target = schroeder_alpha(spec) - 1
    rel = abs(slope - target) / target
    ok = all(abs(m - 1) <= 1e-3 for m in masses) and gap <= 1e-4 and rel <= 0.1
    return CheckResult(5, "density mass, two characteristic-function methods, small-t slope", ok,
                       {"mass": masses, "phi_gap": gap, "slope": slope, "alpha_minus_1": target,
                        "slope_rel_error": rel}, budget=120)


def check_6() -> CheckResult:
    from .schroder import identity_check

    _, dens = schroeder_density()
    y = np.linspace(0.5, 3.0, 251)
    gaps = {j: identity_check(spec_s(FLOAT), dens, j, y)["sup_gap"] for j in (1, 2)}
    return CheckResult(6, "convolution identity within 2e-2 on [0.5, 3]", max(gaps.values()) <= 2e-2,
                       {"sup_gap": gaps})


def ratio_table(m_values=(2, 4, 8), j_values=(0, 1, 2)) -> dict:
    from .schroder import theorem31_ratio

    spec = spec_s(FLOAT)
    _, dens = schroeder_density()
    table = {}
    for m in m_values:
        for j in j_values:
            r = theorem31_ratio(spec, (m, m), j, dens)
            table[(m, j)] = {"ratio": r.ratio, "ratio_single_power": r.ratio_single_power, "a": r.a, "n": r.n}
    return table


def check_7() -> CheckResult:
    m_values, j_values = (2, 4, 8), (0, 1, 2)
    table = ratio_table(m_values, j_values)
    dev = {j: [abs(table[(m, j)]["ratio"] - 1) for m in m_values] for j in j_values}
    non_increasing = all(all(b <= a for a, b in zip(v, v[1:])) for v in dev.values())
    spread = [max(table[(m, j)]["ratio"] for j in j_values) - min(table[(m, j)]["ratio"] for j in j_values)
              for m in m_values]
    shrinking = all(b < a for a, b in zip(spread, spread[1:]))
    rows = [{"m": m, "j": j, **v} for (m, j), v in table.items()]
    return CheckResult(7, "point-ratio trend along m(1,1)", non_increasing and shrinking,
                       {"abs_ratio_minus_1": dev, "non_increasing": non_increasing, "j_spread": spread,
                        "j_spread_shrinks": shrinking, "rows": rows})


def random_antichain_trials(trials: int = 1000, seed: int = 7) -> dict:
    from .boettcher import minimal_boundary

    rng = np.random.Generator(np.random.PCG64(seed))
    failures = 0
    for _ in range(trials):
        d = int(rng.integers(1, 4))
        pts = rng.integers(0, 6, size=(int(rng.integers(1, 30)), d))
        fast = {tuple(int(x) for x in p) for p in minimal_boundary(pts)}
        uniq = {tuple(int(x) for x in p) for p in pts}
        brute = {p for p in uniq if not any(q != p and all(a <= b for a, b in zip(q, p)) for q in uniq)}
        failures += fast != brute
    return {"trials": trials, "failures": failures}


def check_8() -> CheckResult:
    from .boettcher import boettcher_data, min_offspring, verify_k_recursion, zero_lower_tail

    spec = spec_b(EXACT)
    rec = verify_k_recursion(spec, 4)
    anti = random_antichain_trials()
    data = boettcher_data(spec)
    cert_ok = (data.c1_holds == "yes" and data.B0 == ((2, 0), (0, 2)) and tuple(data.x0) == (1, 1)
               and data.mu0 == 2)
    lam = [min_offspring(spec, 0, n, data) for n in range(0, 5)]
    lam_ok = data.lambdas[0] == (1.0, 1.0) and all(r.bounds_hold for r in lam)
    tails = {n: zero_lower_tail(spec, 0, n) for n in range(1, 5)}
    ok = rec["ok"] and anti["failures"] == 0 and cert_ok and lam_ok and all(tails.values())
    return CheckResult(8, "Boettcher combinatorics", ok,
                       {"k_recursion": rec["ok"], "antichain": anti, "c1": data.as_dict(),
                        "lambda_bounds": [{"n": n, "r_hat": r.r_hat, "scaled": r.scaled_size, "ok": r.bounds_hold}
                                          for n, r in enumerate(lam)],
                        "zero_lower_tail": tails}, budget=60)


def check_9() -> CheckResult:
    from .boettcher import theorem25_statistic

    spec = spec_b(EXACT)
    n_range = range(3, 7)
    table = theorem25_statistic(spec, 0, {n: (2**n, 0) for n in n_range}, n_range)
    oracle = {r.n: abs(r.log_prob + (2**r.n - 1) * math.log(2)) for r in table.rows}
    band = table.band()
    ok = band["all_finite"] and band["all_negative"] and band["within_factor_3"] and max(oracle.values()) < 1e-9
    return CheckResult(9, "bounded-log band along (2^n, 0)", ok,
                       {"rows": [r.__dict__ for r in table.rows], "band": band, "oracle_log_gap": oracle})


def check_10() -> CheckResult:
    from .cramer import local_clt_check

    spec = spec_s(FLOAT)
    small = local_clt_check(spec, (1, 1), 2, (8, 8)).sup_gap
    large = local_clt_check(spec, (1, 1), 2, (32, 32)).sup_gap
    ratio = large / small
    return CheckResult(10, "local CLT sup gap shrinks by <= 0.7 from |l|=16 to 64", ratio <= 0.7,
                       {"sup_gap_16": small, "sup_gap_64": large, "ratio": ratio})


def is_study(seeds: int = IS_SEEDS, samples: int = IS_SAMPLES) -> dict:
    from .cramer import event_equals, importance_sampling_estimate

    spec = spec_s(FLOAT)
    exact = 2.0**-6
    h = 1.5**6 * math.log(4)
    event = event_equals((1, 0))
    tilted = [importance_sampling_estimate(spec, 0, 6, (h, h), event, samples, s) for s in range(seeds)]
    naive = importance_sampling_estimate(spec, 0, 6, (0.0, 0.0), event, samples, 0)
    est = np.array([r.estimate for r in tilted])
    t_stat = float((est.mean() - exact) / (est.std(ddof=1) / math.sqrt(seeds)))
    return {"exact": exact, "h": h, "mean": float(est.mean()), "t_statistic": t_stat,
            "tilted_std_error": tilted[0].std_error, "naive_std_error": naive.std_error,
            "tilted_ess": tilted[0].ess, "naive_ess": naive.ess}


def check_11() -> CheckResult:
    out = is_study()
    ok = abs(out["t_statistic"]) <= 3 and out["tilted_std_error"] < out["naive_std_error"]
    return CheckResult(11, "importance sampling unbiased and better than naive", ok, out)


CHECKS: dict[int, Callable[[], CheckResult]] = {
    1: check_1, 2: check_2, 3: check_3, 4: check_4, 5: check_5, 6: check_6,
    7: check_7, 8: check_8, 9: check_9, 10: check_10, 11: check_11,
}


def run_check(number: int) -> CheckResult:
    start = time.perf_counter()
    try:
        result = CHECKS[number]()
    except Exception as exc:  # a crashing check is a failed check, with the error recorded
        result = CheckResult(number, CHECKS[number].__name__, False, {"error": f"{type(exc).__name__}: {exc}"})
    result.seconds = time.perf_counter() - start
    if result.budget is not None and result.seconds > result.budget:
        result.passed = False
        result.details["over_budget"] = True
    return result

