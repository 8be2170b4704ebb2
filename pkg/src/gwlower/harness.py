"""Experiment plans, their execution, run records and golden comparisons.

A plan is a JSON document (kind, spec reference, parameters, mode, seed, emit
formats).  Type indices inside plans are 1-based, like the CLI and the TOML
spec files.  Every run writes its artifacts under ``<out>/<kind>-<hash12>/``
and appends one line to ``<out>/runs.jsonl``.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import time
import traceback
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable

import numpy as np

from .config import load_spec
from .corpus import CORPUS
from .errors import DomainError, GWError
from .genfun import CODE_VERSION, _atomic
from .model import FLOAT, ProcessSpec, epsilon_v, regime_as_dict, spectral_data, validate_spec

KINDS = ("classify", "dist", "density", "schroder-check", "boettcher-check", "tilt", "is-estimate", "report")
EMITS = ("csv", "json", "plot-data")
CACHE_ENV = "GWLOWER_CACHE"
FLOAT_TOL = 1e-9
EXACT_PREFIXES = ("support", "boundary")
VERIFY_BUDGET = 300.0


# ---------------------------------------------------------------------------
# plans and records


@dataclass(frozen=True)
class ExperimentPlan:
    kind: str
    spec: str | None = None
    params: dict = field(default_factory=dict)
    mode: str | None = None
    seed: int = 12345
    emit: tuple[str, ...] = ("csv",)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DomainError(f"unknown experiment kind {self.kind!r}; expected one of {', '.join(KINDS)}")
        bad = [e for e in self.emit if e not in EMITS]
        if bad:
            raise DomainError(f"unknown emit format(s) {bad}")
        if self.kind != "report" and not self.spec:
            raise DomainError(f"a {self.kind} plan needs a spec reference")

    def as_dict(self) -> dict:
        out = asdict(self)
        out["emit"] = list(self.emit)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentPlan":
        known = {"kind", "spec", "params", "mode", "seed", "emit"}
        extra = set(data) - known
        if extra:
            raise DomainError(f"unknown plan fields {sorted(extra)}")
        data = dict(data)
        data["emit"] = tuple(data.get("emit", ("csv",)))
        return cls(**data)

    @classmethod
    def load(cls, path) -> "ExperimentPlan":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def canonical(self) -> str:
        return json.dumps({**self.as_dict(), "code": CODE_VERSION}, sort_keys=True, default=str)

    def plan_hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()


@dataclass
class RunRecord:
    plan_hash: str
    spec_hash: str | None
    started: str
    finished: str
    artifacts: list[str]
    verdicts: dict[str, str]
    summary: dict
    error: dict | None = None
    directory: str | None = None
    cache: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.error is None and all(v == "pass" for v in self.verdicts.values())

    def as_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def load(cls, path) -> "RunRecord":
        with open(path) as fh:
            return cls(**json.load(fh))


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def resolve_spec(ref: str, mode: str | None = None) -> ProcessSpec:
    """A corpus name (SPEC-S, SPEC-B, SPEC-C1-FAIL) or a path to a TOML spec file."""
    if ref.upper() in CORPUS:
        spec = CORPUS[ref.upper()]()
        return spec.with_mode(mode) if mode else spec
    if not os.path.exists(ref):
        raise DomainError(f"spec file {ref!r} does not exist and is not a corpus name ({', '.join(CORPUS)})")
    return load_spec(ref, mode)


# ---------------------------------------------------------------------------
# artifact writing


def _jsonable(obj):
    from .checks import _jsonable as conv

    return conv(obj)


class Sink:
    """Writes the tables and documents of one run, honouring the emit formats."""

    def __init__(self, directory: Path, emit: tuple[str, ...]):
        self.directory = directory
        self.emit = emit
        self.paths: list[str] = []

    def _write(self, name: str, text: str) -> None:
        path = self.directory / name
        with _atomic(path) as fh:
            fh.write(text)
        self.paths.append(name)

    def document(self, name: str, data) -> None:
        self._write(f"{name}.json", json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n")

    def table(self, name: str, header: list[str], rows: list, force_csv: bool = False) -> None:
        if "csv" in self.emit or force_csv:
            buf = io.StringIO()
            writer = csv.writer(buf, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([_cell(v) for v in row])
            self._write(f"{name}.csv", buf.getvalue())
        if "json" in self.emit:
            self.document(name, [dict(zip(header, row)) for row in rows])

    def series(self, name: str, x, ys: dict) -> None:
        """Column data for plotting (written only with --emit plot-data)."""
        if "plot-data" not in self.emit:
            return
        header = ["x", *ys]
        rows = list(zip(np.asarray(x).tolist(), *(np.asarray(v).tolist() for v in ys.values())))
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        writer.writerows([[_cell(v) for v in r] for r in rows])
        self._write(f"plot/{name}.csv", buf.getvalue())


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (list, tuple, np.ndarray)):
        return " ".join(str(_cell(x)) for x in v)
    return v


# ---------------------------------------------------------------------------
# experiments


@dataclass
class Context:
    spec: ProcessSpec | None
    params: dict
    sink: Sink
    cache_dir: str | None
    threads: int
    seed: int
    out_dir: Path
    verdicts: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)
    cache_events: dict = field(default_factory=dict)

    def type_index(self, key: str = "type", default: int = 1) -> int:
        value = int(self.params.get(key, default))
        if not 1 <= value <= self.spec.d:
            raise DomainError(f"{key}={value} outside 1..{self.spec.d}")
        return value - 1

    def verdict(self, name: str, ok) -> None:
        self.verdicts[name] = "unresolved" if ok is None else ("pass" if bool(ok) else "fail")


def _vector(value, d: int, name: str) -> tuple:
    if isinstance(value, str):
        value = [float(x) if "." in x or "e" in x else int(x) for x in value.split(",")]
    value = tuple(value)
    if len(value) != d:
        raise DomainError(f"{name} needs {d} components")
    return value


def run_classify(ctx: Context) -> None:
    report = validate_spec(ctx.spec)
    ctx.summary["validation"] = report.as_dict()
    ctx.verdict("validation", report.ok)
    if not report.ok:
        return
    sd = spectral_data(ctx.spec)
    ctx.summary.update(sd.as_dict())
    ctx.summary["regime"] = regime_as_dict(sd.regime)
    ctx.sink.document("spectral", sd.as_dict())
    ctx.verdict("classify", sd.regime.kind != "unresolved" or None)


def run_dist(ctx: Context) -> None:
    from .genfun import DEFAULT_BUDGET, generation_distribution, marginal, total

    spec, d = ctx.spec, ctx.spec.d
    initial = tuple(int(x) for x in _vector(ctx.params.get("initial", [1] + [0] * (d - 1)), d, "initial"))
    n = int(ctx.params.get("n", 1))
    box = ctx.params.get("box")
    box = tuple(int(x) for x in _vector(box, d, "box")) if box is not None else None
    budget = ctx.params.get("budget", DEFAULT_BUDGET)
    dist = generation_distribution(spec, initial, n, box, mode=spec.mode, method=ctx.params.get("method", "compose"),
                                   budget=budget, cache_dir=ctx.cache_dir)
    if "csv" in ctx.sink.emit:
        dist.to_csv(ctx.sink.directory / "dist.csv")
        ctx.sink.paths.append("dist.csv")
    if "json" in ctx.sink.emit:
        ctx.sink.document("dist", [{"k": list(map(int, k)), "p": str(p)} for k, p in zip(dist.points, dist.probs)])
    tot = total(dist)
    ctx.sink.series("total", np.arange(len(tot.probs)), {"prob": [float(p) for p in tot.probs]})
    for m in range(d):
        mg = marginal(dist, m)
        ctx.sink.series(f"marginal_{m + 1}", np.arange(len(mg.probs)), {"prob": [float(p) for p in mg.probs]})
    ctx.summary.update({"points": len(dist), "mass": str(dist.mass()), "escaped_mass": str(dist.escaped_mass),
                        "box": list(dist.box), "mean": dist.mean().tolist()})
    ctx.cache_events["dist"] = dist.meta.get("cache", "miss" if ctx.cache_dir else "disabled")
    ctx.verdict("dist", True)


def run_density(ctx: Context) -> None:
    from .schroder import char_fn_pair, default_x_grid, density_w, schroeder_alpha, small_t_slope

    spec = ctx.spec.with_mode(FLOAT)
    grid = default_x_grid(spec, float(ctx.params.get("dx", 0.05)), float(ctx.params.get("tol", 1e-5)))
    direct, functional, gap = char_fn_pair(spec, grid)
    t_max = float(ctx.params.get("t_max", 12.0))
    t_grid = np.arange(0.0, t_max + 1e-9, float(ctx.params.get("dt", 0.01)))
    dens = density_w(spec, direct, t_grid)
    header = ["t"] + [f"w{i + 1}" for i in range(spec.d)]
    ctx.sink.table("density", header, [[t, *dens.values[:, k]] for k, t in enumerate(dens.t)])
    ctx.sink.series("density", dens.t, {f"w{i + 1}": dens.values[i] for i in range(spec.d)})
    pos = direct.grid >= 0
    ctx.sink.series("charfn", direct.grid[pos], {f"abs_phi{i + 1}": np.abs(direct.values[i, pos]) for i in range(spec.d)})
    ctx.summary.update({"mass": list(dens.mass), "phi_gap": gap, "x_max": float(grid.max()), "alpha": dens.alpha,
                        "tail_bound": list(dens.tail_bound)})
    ctx.verdict("mass", all(abs(m - 1) <= 1e-3 for m in dens.mass))
    ctx.verdict("phi_methods_agree", gap <= 1e-4)
    if dens.alpha is not None:
        slopes = [small_t_slope(dens, i) for i in range(spec.d)]
        target = schroeder_alpha(spec) - 1
        ctx.summary.update({"small_t_slope": slopes, "alpha_minus_1": target})
        ctx.verdict("small_t_slope", all(abs(s - target) <= 0.1 * target for s in slopes))


def run_schroder_check(ctx: Context) -> None:
    from .genfun import generation_distribution
    from .schroder import (char_fn_W, default_x_grid, density_w, identity_check, theorem31_cdf_ratio,
                           theorem31_ratio, theorem34_ratio)

    spec = ctx.spec.with_mode(FLOAT)
    d = spec.d
    i = ctx.type_index()
    js = [int(j) for j in ctx.params.get("j", [1, 2])]
    ms = [int(m) for m in ctx.params.get("m", [2, 4, 8])]
    unit = tuple(1 if q == i else 0 for q in range(d))
    if ctx.params.get("box") is not None:
        box = tuple(int(x) for x in _vector(ctx.params["box"], d, "box"))
        generation_distribution(spec, unit, max(js), box, mode=FLOAT, cache_dir=ctx.cache_dir)
    dens = density_w(spec, char_fn_W(spec, default_x_grid(spec)))
    y = np.linspace(0.5, 3.0, 251)
    rows = []
    for j in js:
        res = identity_check(spec, dens, j, y, i)
        rows.append(res["sup_gap"])
        ctx.sink.series(f"identity_j{j}", y, {"lhs": res["lhs"], "rhs": res["rhs"]})
    ctx.summary["identity_sup_gap"] = dict(zip(map(str, js), rows))
    ctx.verdict("identity", max(rows) <= 2e-2)

    ratio_rows, cdf_rows, marg_rows = [], [], []
    for m in ms:
        for j in (0, *js):
            r = theorem31_ratio(spec, tuple([m] * d), j, dens, i)
            ratio_rows.append([m, j, r.a, r.n, r.prob, r.density, r.ratio, r.ratio_single_power])
            c = theorem31_cdf_ratio(spec, m, j, dens, i)
            cdf_rows.append([m, j, c.a, c.n, c.prob, c.density, c.ratio])
            p, q = theorem34_ratio(spec, 0, m, j, dens, i)
            marg_rows.append([m, j, p.a, p.n, p.ratio, p.ratio_corrected, q.ratio])
    ctx.sink.table("point_ratio", ["m", "j", "a", "n", "prob", "density", "ratio", "ratio_single_power"], ratio_rows)
    ctx.sink.table("cdf_ratio", ["m", "j", "a", "n", "prob", "cdf", "ratio"], cdf_rows)
    ctx.sink.table("marginal_ratio", ["m", "j", "a", "n", "point_ratio", "point_ratio_corrected", "cdf_ratio"],
                   marg_rows)

    def trend(rows, col):
        dev = {}
        for row in rows:
            dev.setdefault(row[1], []).append(abs(row[col] - 1))
        return all(all(b <= a for a, b in zip(v, v[1:])) for v in dev.values()), dev

    point_ok, point_dev = trend(ratio_rows, 6)
    cdf_ok, cdf_dev = trend(cdf_rows, 6)
    ctx.summary.update({"point_ratio_deviation": point_dev, "cdf_ratio_deviation": cdf_dev})
    ctx.verdict("point_ratio_trend", point_ok)
    ctx.verdict("cdf_ratio_trend", cdf_ok)


def run_boettcher_check(ctx: Context) -> None:
    from .boettcher import (boettcher_data, minimal_boundary, minimal_vector, support_set, theorem25_statistic,
                            verify_k_recursion)

    spec = ctx.spec
    i = ctx.type_index()
    sd = spectral_data(spec)
    data = boettcher_data(spec)
    ctx.sink.document("boettcher", data.as_dict())
    ctx.summary["c1_holds"] = data.c1_holds
    ctx.verdict("c1", {"yes": True, "no": False}.get(data.c1_holds))
    n_max = int(ctx.params.get("n_max", 4))
    rec = verify_k_recursion(spec, n_max)
    ctx.sink.document("k_recursion", rec)
    ctx.verdict("k_recursion", rec["ok"])
    for n in range(1, int(ctx.params.get("support_n", 3)) + 1):
        pts = support_set(spec, i, n).points
        header = [f"k{q + 1}" for q in range(spec.d)]
        ctx.sink.table(f"support_n{n}", header, pts.tolist(), force_csv=True)
        ctx.sink.table(f"boundary_n{n}", header, minimal_boundary(pts).tolist(), force_csv=True)
    if data.c1_holds != "yes":
        return
    lo, hi = (int(x) for x in ctx.params.get("n_range", [3, 6]))
    n_range = range(lo, hi + 1)
    stride = np.array(spec.lattice_stride())
    bands = []
    for level in ctx.params.get("tilt_levels", [0.0, 0.5, 1.0]):
        targets = {}
        for n in n_range:
            r = np.array(minimal_vector(spec, i, n).r_hat)
            step = np.round(float(level) * r.sum() / (spec.d * stride)).astype(int) * stride
            targets[n] = tuple(int(x) for x in r + step)
        try:
            table = theorem25_statistic(spec, i, targets, n_range, data)
        except GWError as exc:
            bands.append({"level": level, "error": str(exc)})
            continue
        rows = [[r.n, list(r.k), epsilon_v(r.k, sd.v_array), r.b, r.log_prob, r.statistic] for r in table.rows]
        ctx.sink.table(f"band_level{level}", ["n", "k", "epsilon_v", "b", "log_prob", "statistic"], rows)
        bands.append({"level": level, **table.band()})
    ctx.summary["bands"] = bands
    primary = next((b for b in bands if b["level"] == 0.0 and "error" not in b), None)
    if primary is not None:
        ctx.verdict("band", primary["all_negative"] and primary["within_factor_3"])


def run_tilt(ctx: Context) -> None:
    from .cramer import charfn_bound, local_clt_check, tilt_dist, tilt_stats, untilt_identity_check

    spec = ctx.spec.with_mode(FLOAT)
    d = spec.d
    i = ctx.type_index()
    h = tuple(float(x) for x in _vector(ctx.params.get("h", [1.0] * d), d, "h"))
    n = int(ctx.params.get("n", 2))
    law = tilt_dist(spec, i, h, n)
    ctx.sink.table("tilted", [f"k{q + 1}" for q in range(d)] + ["prob"],
                   [[*map(int, k), p] for k, p in zip(law.dist.points, law.dist.probs)])
    l = tuple(int(x) for x in _vector(ctx.params.get("l", [1] * d), d, "l"))
    residual = untilt_identity_check(spec, l, h, n)
    stats = tilt_stats(spec, h, n, l)
    ctx.summary.update({"normalizer": law.normalizer, "mass": float(law.dist.probs.sum()), "identity_residual": residual,
                        "mean_matrix": stats.mean_matrix.tolist(), "V": stats.V.tolist(), "B": stats.B.tolist(),
                        "rho3_hat": stats.rho3_hat, "L3": stats.L3})
    ctx.verdict("identity", residual < 1e-12)
    ctx.verdict("mass", abs(float(law.dist.probs.sum()) - 1) <= 1e-12)
    clt_l = ctx.params.get("clt_l")
    if clt_l is not None:
        table = local_clt_check(spec, h, n, tuple(int(x) for x in _vector(clt_l, d, "clt_l")))
        ctx.sink.table("local_clt", [f"k{q + 1}" for q in range(d)] + ["lhs", "gaussian", "gap"],
                       [[*map(int, k), a, b, abs(a - b)] for k, a, b in zip(table.points, table.lhs, table.gaussian)])
        ctx.summary["local_clt_sup_gap"] = table.sup_gap
    if d == 2 and ctx.params.get("charfn_bound", True):
        bound = charfn_bound(spec)
        ctx.sink.document("charfn_bound", bound)
        ctx.summary["charfn_bound"] = bound["max_modulus"]


def run_is_estimate(ctx: Context) -> None:
    from .cramer import importance_sampling_estimate, parse_event

    spec = ctx.spec.with_mode(FLOAT)
    d = spec.d
    i = ctx.type_index()
    h = tuple(float(x) for x in _vector(ctx.params.get("h", [0.0] * d), d, "h"))
    n = int(ctx.params.get("n", 1))
    event = ctx.params.get("event", "total_le:1")
    res = importance_sampling_estimate(spec, i, n, h, parse_event(event), int(ctx.params.get("samples", 10_000)),
                                       ctx.seed, int(ctx.params.get("blocks", 16)))
    ctx.sink.document("is", {**res.as_dict(), "event": event, "n": n, "type": i + 1})
    ctx.summary.update(res.as_dict())
    exact = ctx.params.get("exact")
    if exact is not None:
        z = abs(res.estimate - float(exact)) / max(res.std_error, 1e-300)
        ctx.summary["z_vs_exact"] = z
        ctx.verdict("within_4_sigma", z <= 4)
    else:
        ctx.verdict("is_estimate", math.isfinite(res.estimate))


def run_report(ctx: Context) -> None:
    log = ctx.out_dir / "runs.jsonl"
    records = []
    if log.exists():
        with open(log) as fh:
            records = [json.loads(line) for line in fh if line.strip()]
    rows = [[r["started"], r.get("directory"), r["plan_hash"][:12],
             ";".join(f"{k}={v}" for k, v in sorted(r["verdicts"].items())), (r.get("error") or {}).get("type", "")]
            for r in records]
    ctx.sink.table("report", ["started", "directory", "plan", "verdicts", "error"], rows, force_csv=True)
    counts: dict[str, int] = {}
    for r in records:
        for v in r["verdicts"].values():
            counts[v] = counts.get(v, 0) + 1
    ctx.summary.update({"runs": len(records), "verdict_counts": counts})
    ctx.verdict("report", True)


EXECUTORS: dict[str, Callable[[Context], None]] = {
    "classify": run_classify,
    "dist": run_dist,
    "density": run_density,
    "schroder-check": run_schroder_check,
    "boettcher-check": run_boettcher_check,
    "tilt": run_tilt,
    "is-estimate": run_is_estimate,
    "report": run_report,
}


def default_cache_dir(explicit: str | None = None) -> str | None:
    return explicit or os.environ.get(CACHE_ENV) or None


def run_plan(plan: ExperimentPlan, out_dir, cache_dir: str | None = None, threads: int = 1) -> RunRecord:
    """Execute one plan; module errors become a fail verdict with the error embedded."""
    out_dir = Path(out_dir)
    plan_hash = plan.plan_hash()
    directory = out_dir / f"{plan.kind}-{plan_hash[:12]}"
    directory.mkdir(parents=True, exist_ok=True)
    sink = Sink(directory, plan.emit)
    sink.document("plan", plan.as_dict())
    started = _now()
    spec = None
    ctx = None
    error = None
    try:
        spec = resolve_spec(plan.spec, plan.mode) if plan.spec else None
        ctx = Context(spec, dict(plan.params), sink, default_cache_dir(cache_dir), threads, plan.seed, out_dir)
        EXECUTORS[plan.kind](ctx)
    except GWError as exc:
        error = {"type": type(exc).__name__, "message": str(exc)}
        for attr in ("escaped_mass", "gap", "residual", "reached"):
            if getattr(exc, attr, None) is not None:
                error[attr] = _jsonable(getattr(exc, attr))
    except Exception as exc:  # unexpected failures are still recorded, with a traceback
        error = {"type": type(exc).__name__, "message": str(exc), "traceback": traceback.format_exc()}
    verdicts = dict(ctx.verdicts) if ctx else {}
    if error is not None:
        verdicts[plan.kind] = "fail"
    summary = _jsonable(ctx.summary) if ctx else {}
    record = RunRecord(plan_hash, spec.content_hash() if spec else None, started, _now(), sorted(set(sink.paths)),
                       verdicts, summary, error, directory.name, dict(ctx.cache_events) if ctx else {})
    sink.document("record", record.as_dict())
    with open(out_dir / "runs.jsonl", "a") as fh:
        fh.write(json.dumps(record.as_dict(), sort_keys=True) + "\n")
    return record


# ---------------------------------------------------------------------------
# acceptance suite


def verify_all(out_dir, only: list[int] | None = None, threads: int = 1) -> RunRecord:
    """Run the acceptance checks, then the overall criterion (all pass within the time budget)."""
    from .checks import CHECKS, run_check, schroeder_density

    out_dir = Path(out_dir)
    directory = out_dir / "verify-all"
    directory.mkdir(parents=True, exist_ok=True)
    numbers = sorted(only) if only else sorted(CHECKS)
    started = _now()
    t0 = time.perf_counter()
    schroeder_density()  # shared by several checks; build it once before any threads start
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run_check, numbers))
    else:
        results = [run_check(n) for n in numbers]
    elapsed = time.perf_counter() - t0
    verdicts = {f"criterion_{r.number}": r.verdict for r in results}
    if not only:
        overall = all(r.passed for r in results) and elapsed < VERIFY_BUDGET
        verdicts["criterion_12"] = "pass" if overall else "fail"
    sink = Sink(directory, ("json",))
    sink.document("checks", [r.as_dict() for r in results])
    lines = [r.line() for r in results]
    if not only:
        lines.append(f"{'PASS' if overall else 'FAIL'} criterion 12: verify-all passes within "
                     f"{VERIFY_BUDGET:.0f}s ({elapsed:.1f}s)")
    sink._write("summary.txt", "\n".join(lines) + "\n")
    record = RunRecord(hashlib.sha256(json.dumps(numbers).encode()).hexdigest(), None, started, _now(),
                       sorted(sink.paths), verdicts, {"seconds": elapsed, "lines": lines}, None, directory.name)
    sink.document("record", record.as_dict())
    with open(out_dir / "runs.jsonl", "a") as fh:
        fh.write(json.dumps(record.as_dict(), sort_keys=True) + "\n")
    return record


# ---------------------------------------------------------------------------
# golden comparison


@dataclass
class DiffReport:
    status: str  # "match", "drift" or "no baseline"
    drifts: list[dict] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.status == "match"

    def as_dict(self) -> dict:
        return {"status": self.status, "drifts": self.drifts}


_VOLATILE = {"record.json"}
_VOLATILE_KEYS = {"started", "finished", "seconds"}


def _exact_class(name: str) -> bool:
    return Path(name).name.startswith(EXACT_PREFIXES)


def _num(text: str):
    try:
        return float(text)
    except ValueError:
        return None


def _compare_csv(name: str, new: str, old: str, drifts: list) -> None:
    if _exact_class(name):
        if new != old:
            drifts.append({"artifact": name, "class": "exact", "detail": "content differs"})
        return
    a, b = list(csv.reader(io.StringIO(new))), list(csv.reader(io.StringIO(old)))
    if len(a) != len(b):
        drifts.append({"artifact": name, "class": "float", "detail": f"row count {len(a)} vs {len(b)}"})
        return
    for r, (ra, rb) in enumerate(zip(a, b)):
        if len(ra) != len(rb):
            drifts.append({"artifact": name, "row": r, "detail": "column count differs"})
            continue
        for c, (x, y) in enumerate(zip(ra, rb)):
            fx, fy = _num(x), _num(y)
            if fx is not None and fy is not None:
                if not (abs(fx - fy) <= FLOAT_TOL or (math.isnan(fx) and math.isnan(fy))):
                    drifts.append({"artifact": name, "row": r, "column": c, "new": x, "golden": y,
                                   "abs_diff": abs(fx - fy)})
            elif x != y:
                drifts.append({"artifact": name, "row": r, "column": c, "new": x, "golden": y})


def _compare_json(name: str, new, old, drifts: list, path: str = "") -> None:
    if isinstance(new, dict) and isinstance(old, dict):
        for key in sorted(set(new) | set(old)):
            if key in _VOLATILE_KEYS:
                continue
            if key not in new or key not in old:
                drifts.append({"artifact": name, "path": f"{path}/{key}", "detail": "key missing on one side"})
            else:
                _compare_json(name, new[key], old[key], drifts, f"{path}/{key}")
    elif isinstance(new, list) and isinstance(old, list):
        if len(new) != len(old):
            drifts.append({"artifact": name, "path": path, "detail": f"length {len(new)} vs {len(old)}"})
        else:
            for k, (x, y) in enumerate(zip(new, old)):
                _compare_json(name, x, y, drifts, f"{path}/{k}")
    elif isinstance(new, (int, float)) and isinstance(old, (int, float)) and not isinstance(new, bool):
        if abs(new - old) > FLOAT_TOL:
            drifts.append({"artifact": name, "path": path, "new": new, "golden": old, "abs_diff": abs(new - old)})
    elif new != old:
        drifts.append({"artifact": name, "path": path, "new": new, "golden": old})


def golden_diff(record: RunRecord, golden, run_root=None) -> DiffReport:
    """Compare a run's artifacts with ``<golden>/<directory>/``; never creates a baseline."""
    base = Path(golden) / record.directory
    if not base.is_dir():
        return DiffReport("no baseline")
    run_dir = Path(run_root) / record.directory if run_root else None
    if run_dir is None or not run_dir.is_dir():
        raise DomainError("run directory not found; pass the output root of the run")
    drifts: list[dict] = []
    names = sorted(set(record.artifacts) | {str(p.relative_to(base)) for p in base.rglob("*") if p.is_file()})
    for name in names:
        if name in _VOLATILE:
            continue
        new_path, old_path = run_dir / name, base / name
        if not new_path.exists() or not old_path.exists():
            drifts.append({"artifact": name, "detail": "missing in run" if not new_path.exists() else "missing in golden"})
            continue
        new, old = new_path.read_text(), old_path.read_text()
        if name.endswith(".csv"):
            _compare_csv(name, new, old, drifts)
        elif name.endswith(".json"):
            _compare_json(name, json.loads(new), json.loads(old), drifts)
        elif new != old:
            drifts.append({"artifact": name, "detail": "content differs"})
    return DiffReport("match" if not drifts else "drift", drifts)


def bless(record: RunRecord, golden, run_root) -> Path:
    """Explicitly copy a run's artifacts into the golden directory."""
    src = Path(run_root) / record.directory
    dst = Path(golden) / record.directory
    for name in record.artifacts:
        if name in _VOLATILE:
            continue
        target = dst / name
        with _atomic(target) as fh:
            fh.write((src / name).read_text())
    return dst

