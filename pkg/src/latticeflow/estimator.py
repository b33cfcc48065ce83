"""Monte Carlo driver: replicated min-cut solves, flow-constant estimates and diagnostics.

Every replicate is addressed by ``(master_seed, replicate_id)`` with
``replicate_id = rung_index * replicates + r``, so any record can be
regenerated alone and the output does not depend on how work is split
across processes.
"""
from __future__ import annotations

import csv
import json
import math
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field as dc_field
from fractions import Fraction
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import stats

from .capacity import DEFAULT_EPSILON, DEFAULT_SCALE, CapacityField, DistributionSpec, bernoulli, sample_field
from .cutset import Cutset, connectivity_structure, default_beta_bar, size_stats, tail_histogram, TailReport
from .errors import InvalidSpecError, PreconditionError
from .flow import DEFAULT_MAX_VERTICES, FlowResult, canonical_min_cut, verify_flow
from .lattice import BoxSpec
from .patch import check_nested, mirror_patch_check
from .renorm import (decompose, disjoint_3t_packing, packing_bound_holds, renorm_window,
                     verify_cube_properties, verify_gamma_zero_cutset)

DEFAULT_DELTA = 0.5
DEFAULT_P_C = {2: 0.5, 3: 0.2488}


def log_growth_ok(k: Sequence[int], m: int, delta: float) -> bool:
    """The height rule ``log m <= max_i k_i^(1 - delta)``."""
    return m >= 1 and math.log(m) <= max(k) ** (1 - delta)


@dataclass(frozen=True)
class ExperimentPlan:
    dist: DistributionSpec
    d: int
    rungs: tuple[tuple[tuple[int, ...], int], ...]
    replicates: int
    master_seed: int = 0
    epsilon: Fraction = DEFAULT_EPSILON
    t: int = 4
    delta: float = DEFAULT_DELTA
    margin: int = 8
    scale: int = DEFAULT_SCALE
    beta_bar: float | None = None
    max_vertices: int = DEFAULT_MAX_VERTICES
    growth_rule: str = "log"

    def __post_init__(self) -> None:
        rungs = []
        for entry in self.rungs:
            k, m = entry
            k = tuple(int(x) for x in k)
            if len(k) != self.d - 1:
                raise InvalidSpecError(f"rung {entry} needs {self.d - 1} base sides")
            if min(k) < 1 or m < 1:
                raise InvalidSpecError(f"rung {entry} has a non-positive side")
            if self.growth_rule == "log" and not log_growth_ok(k, m, self.delta):
                raise InvalidSpecError(f"rung k={k}, m={m} violates log m <= max k^(1-delta) with delta={self.delta}")
            if self.growth_rule not in ("log", "none"):
                raise InvalidSpecError(f"unknown growth rule {self.growth_rule!r}")
            rungs.append((k, int(m)))
        if not rungs:
            raise InvalidSpecError("a plan needs at least one rung")
        if self.replicates < 0:
            raise InvalidSpecError("replicates must be non-negative")
        if not 0 < self.delta < 1:
            raise InvalidSpecError("delta must lie in (0, 1)")
        object.__setattr__(self, "rungs", tuple(rungs))
        object.__setattr__(self, "epsilon", Fraction(self.epsilon))

    def box(self, rung_index: int) -> BoxSpec:
        k, m = self.rungs[rung_index]
        return BoxSpec(self.d, k, m)

    def replicate_id(self, rung_index: int, r: int) -> int:
        return rung_index * self.replicates + r

    @property
    def bar_beta(self) -> float:
        return self.beta_bar if self.beta_bar is not None else default_beta_bar(self.d)


@dataclass(frozen=True)
class Record:
    rung_index: int
    replicate: int
    replicate_id: int
    tau: int
    ratio: float
    n_bar: int
    n_plus: int
    n_minus: int
    zero: bool
    regular: bool
    runtime: float = dc_field(default=0.0, compare=False)

    def to_json(self) -> str:
        rec = asdict(self)
        del rec["runtime"]
        return json.dumps(rec, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "Record":
        return cls(**json.loads(line))


@dataclass
class SampleSeries:
    plan: ExperimentPlan
    records: list[Record]
    skipped: list[tuple[int, str]] = dc_field(default_factory=list)

    def rung(self, rung_index: int) -> list[Record]:
        return [r for r in self.records if r.rung_index == rung_index]

    @property
    def rung_indices(self) -> list[int]:
        return sorted({r.rung_index for r in self.records})


def replicate_field(plan: ExperimentPlan, rung_index: int, r: int) -> CapacityField:
    box = plan.box(rung_index)
    return sample_field(box.grid, plan.dist, plan.master_seed, plan.replicate_id(rung_index, r), plan.scale)


def run_replicate(plan: ExperimentPlan, rung_index: int, r: int) -> Record:
    t0 = time.perf_counter()
    box = plan.box(rung_index)
    field = replicate_field(plan, rung_index, r)
    res, cut = canonical_min_cut(box.grid, field, plan.max_vertices)
    st = size_stats(cut, plan.epsilon, plan.scale)
    ratio = Fraction(res.value, plan.scale * box.volume)
    return Record(rung_index, r, plan.replicate_id(rung_index, r), int(res.value), float(ratio), st.n_bar,
                  st.n_plus, st.n_minus, res.value == 0, st.n_vertices <= plan.bar_beta * box.volume,
                  time.perf_counter() - t0)


def _run_task(args) -> Record:
    return run_replicate(*args)


def run_plan(plan: ExperimentPlan, workers: int = 1) -> SampleSeries:
    """Solve every replicate of every rung; output order is by replicate id whatever ``workers`` is."""
    tasks, skipped = [], []
    for i in range(len(plan.rungs)):
        n = plan.box(i).n_vertices
        if n > plan.max_vertices:
            skipped.append((i, f"box of {n} vertices exceeds the budget of {plan.max_vertices}"))
            continue
        tasks.extend((plan, i, r) for r in range(plan.replicates))
    if workers <= 1 or len(tasks) < 2:
        records = [_run_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_run_task, tasks, chunksize=max(1, len(tasks) // (4 * workers))))
    records.sort(key=lambda rec: rec.replicate_id)
    return SampleSeries(plan, records, skipped)


def replay(plan: ExperimentPlan, record: Record) -> Record:
    return run_replicate(plan, record.rung_index, record.replicate)


# summaries ----------------------------------------------------------------


@dataclass(frozen=True)
class RungSummary:
    rung_index: int
    d: int
    k: tuple[int, ...]
    m: int
    replicates: int
    mean_ratio: float
    sd_ratio: float
    ci_low: float
    ci_high: float
    zero_fraction: float
    mean_n_bar: float
    irregular: int


def _z(level: float) -> float:
    return float(stats.norm.ppf(0.5 + level / 2))


def summarize_rung(plan: ExperimentPlan, records: Sequence[Record], rung_index: int,
                   level: float = 0.95) -> RungSummary:
    k, m = plan.rungs[rung_index]
    n = len(records)
    vol = math.prod(k)
    if n == 0:
        nan = float("nan")
        return RungSummary(rung_index, plan.d, k, m, 0, nan, nan, nan, nan, nan, nan, 0)
    exact = [Fraction(r.tau, plan.scale * vol) for r in records]
    mean = float(sum(exact, Fraction(0)) / n)
    ratios = np.array([float(x) for x in exact])
    sd = float(ratios.std(ddof=1)) if n > 1 else 0.0
    half = _z(level) * sd / math.sqrt(n)
    return RungSummary(rung_index, plan.d, k, m, n, mean, sd, mean - half, mean + half,
                       sum(r.zero for r in records) / n, float(np.mean([r.n_bar for r in records])),
                       sum(not r.regular for r in records))


def summaries(series: SampleSeries, level: float = 0.95) -> list[RungSummary]:
    return [summarize_rung(series.plan, series.rung(i), i, level) for i in series.rung_indices]


@dataclass(frozen=True)
class FlowConstantEstimate:
    nu_hat: float
    ci: tuple[float, float]
    table: list[RungSummary]
    cauchy_gaps: list[float]
    warning: str | None = None

    @property
    def ci_excludes_zero(self) -> bool:
        return self.ci[0] > 0 or self.ci[1] < 0

    @property
    def monotone_from_above(self) -> bool:
        means = [row.mean_ratio for row in self.table]
        return all(a >= b for a, b in zip(means, means[1:]))


def flow_constant_estimate(series: SampleSeries, level: float = 0.95) -> FlowConstantEstimate:
    """Mean ratio at the largest rung with a normal-approximation interval and the gaps between rungs."""
    table = summaries(series, level)
    if not table:
        raise PreconditionError("no records to estimate from")
    warning = None
    if len(table) < 2:
        warning = "single rung: no evidence of convergence"
        warnings.warn(warning, stacklevel=2)
    last = table[-1]
    gaps = [abs(b.mean_ratio - a.mean_ratio) for a, b in zip(table, table[1:])]
    return FlowConstantEstimate(last.mean_ratio, (last.ci_low, last.ci_high), table, gaps, warning)


@dataclass(frozen=True)
class CriticalityPoint:
    p_open: float
    nu_hat: float
    ci_low: float
    ci_high: float
    zero_fraction: float


@dataclass(frozen=True)
class CriticalityScan:
    points: list[CriticalityPoint]
    p_c: float
    bracket: tuple[float, float] | None
    monotone_within_noise: bool

    @property
    def bracket_contains_reference(self) -> bool:
        return self.bracket is not None and self.bracket[0] <= self.p_c <= self.bracket[1]


def criticality_scan(p_grid: Iterable[float], d: int, k: Sequence[int], m: int, replicates: int,
                     master_seed: int = 0, c=1, p_c: float | None = None, workers: int = 1,
                     level: float = 0.95) -> CriticalityScan:
    """Flow-constant estimates along a grid of open probabilities at one box size.

    The bracket is the last p whose interval contains 0 and the next p
    whose interval lies above 0.
    """
    p_c = DEFAULT_P_C.get(d, float("nan")) if p_c is None else p_c
    pts = []
    for p in sorted(p_grid):
        if not 0 <= p <= 1:
            raise InvalidSpecError(f"open probability {p} outside [0, 1]")
        plan = ExperimentPlan(bernoulli(p, c), d, ((tuple(k), m),), replicates, master_seed, growth_rule="none")
        s = summarize_rung(plan, run_plan(plan, workers).records, 0, level)
        pts.append(CriticalityPoint(float(p), s.mean_ratio, s.ci_low, s.ci_high, s.zero_fraction))
    bracket = None
    for a, b in zip(pts, pts[1:]):
        if a.ci_low <= 0 and b.ci_low > 0:
            bracket = (a.p_open, b.p_open)
    monotone = all(b.ci_high >= a.ci_low for a, b in zip(pts, pts[1:]))
    return CriticalityScan(pts, p_c, bracket, monotone)


@dataclass(frozen=True)
class ConcentrationRow:
    rung_index: int
    volume: int
    sd: float
    sd_over_volume: float
    u: np.ndarray
    exceedance: np.ndarray
    exceedance_at_3sd: float
    fitted_c: float


@dataclass(frozen=True)
class ConcentrationReport:
    rows: list[ConcentrationRow]
    warning: str | None

    @property
    def sd_ratio_shrinks(self) -> bool:
        v = [r.sd_over_volume for r in self.rows]
        return all(b < a for a, b in zip(v, v[1:]))


def concentration_diagnostic(series: SampleSeries, n_u: int = 12) -> ConcentrationReport:
    """Spread of the minimal passage time per rung against the shape ``exp(-c min(u^2/V, u))``.

    Passage times and ``u`` are in capacity units.
    """
    plan = series.plan
    rows, warning = [], None
    idx = series.rung_indices
    if len(idx) < 2 or any(len(series.rung(i)) < 30 for i in idx):
        warning = "concentration needs at least 30 replicates on at least 2 rungs"
        warnings.warn(warning, stacklevel=2)
    for i in idx:
        vol = plan.box(i).volume
        tau = np.array([r.tau for r in series.rung(i)], dtype=float) / plan.scale
        dev = np.abs(tau - tau.mean())
        sd = float(tau.std(ddof=1)) if tau.size > 1 else 0.0
        top = max(float(dev.max()), 1e-12)
        u = np.linspace(top / n_u, top, n_u)
        freq = np.array([(dev >= x).mean() for x in u])
        at3 = float((dev >= 3 * sd).mean()) if sd > 0 else 0.0
        g = np.minimum(u ** 2 / vol, u)
        sel = freq > 0
        c = float(-(g[sel] * np.log(freq[sel])).sum() / (g[sel] ** 2).sum()) if sel.any() else float("nan")
        rows.append(ConcentrationRow(i, vol, sd, sd / vol, u, freq, at3, c))
    return ConcentrationReport(rows, warning)


@dataclass(frozen=True)
class AreaLawReport:
    volumes: list[int]
    frequencies: list[float]
    rate: float

    @property
    def strictly_decreasing(self) -> bool:
        f = self.frequencies
        return all(b < a for a, b in zip(f, f[1:]))


def area_law_frequency(series: SampleSeries) -> AreaLawReport:
    """Fraction of zero-cost minimal cuts per rung and the fitted decay rate in the base volume."""
    vols, freqs = [], []
    for i in series.rung_indices:
        rec = series.rung(i)
        vols.append(series.plan.box(i).volume)
        freqs.append(sum(r.zero for r in rec) / len(rec))
    v = np.array(vols, dtype=float)
    f = np.array(freqs)
    sel = f > 0
    rate = float("nan")
    if sel.sum() >= 2:
        rate = float(-np.polyfit(v[sel], np.log(f[sel]), 1)[0])
    return AreaLawReport(vols, freqs, rate)


def surface_law_tail(series: SampleSeries, rung_index: int = 0, fit_from: float | None = None) -> TailReport:
    """Empirical tail of the minimal cut's edge count at one rung."""
    return tail_histogram([r.n_bar for r in series.rung(rung_index)], fit_from=fit_from)


# per-realization structural checks -----------------------------------------

CHECK_NAMES = ("duality", "nested_boxes", "exit_disjoint", "exit_boundary", "exit_closure", "patch",
               "cut_structure", "gamma_zero_cutset", "cube_property", "packing")


@dataclass
class CheckTally:
    passed: dict[str, int] = dc_field(default_factory=lambda: {n: 0 for n in CHECK_NAMES})
    failed: dict[str, int] = dc_field(default_factory=lambda: {n: 0 for n in CHECK_NAMES})
    skipped: dict[str, int] = dc_field(default_factory=lambda: {n: 0 for n in CHECK_NAMES})
    first_failure: dict[str, str] = dc_field(default_factory=dict)

    def add(self, name: str, ok: bool | None, where: str) -> None:
        if ok is None:
            self.skipped[name] += 1
        elif ok:
            self.passed[name] += 1
        else:
            self.failed[name] += 1
            self.first_failure.setdefault(name, where)

    @property
    def ok(self) -> bool:
        return not any(self.failed.values())

    def merge(self, other: "CheckTally") -> None:
        for n in CHECK_NAMES:
            self.passed[n] += other.passed[n]
            self.failed[n] += other.failed[n]
            self.skipped[n] += other.skipped[n]
        for n, w in other.first_failure.items():
            self.first_failure.setdefault(n, w)


Tamper = Callable[[CapacityField, FlowResult, Cutset], CapacityField]


def flip_one_capacity(field: CapacityField, result: FlowResult, cut: Cutset) -> CapacityField:
    """Fault injection: close the first edge carrying flow, or open the first cut edge if nothing flows."""
    vals = field.values.copy()
    busy = np.flatnonzero(result.edge_flow != 0)
    if busy.size:
        vals[int(busy[0])] = 0
    else:
        vals[int(cut.edges[0])] += 1
    return field.with_values(vals)


def check_replicate(plan: ExperimentPlan, rung_index: int, r: int, gamma_p_open: float = 0.2,
                    gamma_k: int | None = None, tamper: Tamper | None = None) -> CheckTally:
    """Run the structural checks on one replicate; ``tamper`` alters the field after the solve."""
    tally = CheckTally()
    where = f"rung {rung_index} replicate {r}"
    box = plan.box(rung_index)
    field = replicate_field(plan, rung_index, r)
    res, cut = canonical_min_cut(box.grid, field, plan.max_vertices)
    seen = tamper(field, res, cut) if tamper is not None else field
    tally.add("duality", bool(verify_flow(res, seen)) and cut.passage_time == res.value
              and int(seen.on(box.grid)[cut.edges].sum()) == res.value, where)
    inner = tuple(max(1, x // 2) for x in box.k)
    tally.add("nested_boxes", check_nested(field, box.k, inner, box.m).ok, where)
    mp = mirror_patch_check(field, box)
    tally.add("exit_disjoint", mp.exits_disjoint, where)
    tally.add("exit_boundary", mp.boundaries_in_cut, where)
    tally.add("exit_closure", mp.exits_closed, where)
    tally.add("patch", mp.patch_ok and mp.flow_invariant, where)
    tally.add("cut_structure", connectivity_structure(cut).ok, where)

    t = plan.t
    gk = gamma_k or 2 * t
    gbox = BoxSpec(plan.d, (gk,) * (plan.d - 1), gk)
    win = renorm_window(gbox, t, max(plan.margin, 2 * t))
    gfield = sample_field(win, bernoulli(gamma_p_open), plan.master_seed, plan.replicate_id(rung_index, r),
                          plan.scale)
    try:
        dec = decompose(gfield, gbox, t)
    except PreconditionError:
        for n in ("gamma_zero_cutset", "cube_property", "packing"):
            tally.add(n, None, where)
        return tally
    inv = dec.invariants()
    tally.add("gamma_zero_cutset", all(inv.values()) and verify_gamma_zero_cutset(dec, gfield), where)
    tally.add("cube_property", verify_cube_properties(dec, gfield), where)
    packed = disjoint_3t_packing(dec.gamma_cubes())
    tally.add("packing", packing_bound_holds(int(dec.gamma.sum()), len(packed), plan.d), where)
    return tally


def _check_task(args) -> CheckTally:
    plan, i, r, gp, gk, tamper = args
    return check_replicate(plan, i, r, gp, gk, tamper)


def run_checks(plan: ExperimentPlan, budget: int, gamma_p_open: float = 0.2, gamma_k: int | None = None,
               tamper: Tamper | None = None, workers: int = 1) -> CheckTally:
    """Structural checks on the first ``budget`` replicates of every rung."""
    tasks = [(plan, i, r, gamma_p_open, gamma_k, tamper)
             for i in range(len(plan.rungs)) for r in range(budget)
             if plan.box(i).n_vertices <= plan.max_vertices]
    if workers <= 1 or len(tasks) < 2:
        parts = [_check_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_check_task, tasks))
    total = CheckTally()
    for p in parts:
        total.merge(p)
    return total


# persistence --------------------------------------------------------------

SUMMARY_COLUMNS = ("rung_index", "d", "k", "m", "replicates", "mean_ratio", "sd_ratio", "ci_low", "ci_high",
                   "zero_fraction", "mean_Nbar")


def write_jsonl(path: str | Path, records: Iterable[Record]) -> None:
    with open(path, "w", newline="\n") as fh:
        for r in records:
            fh.write(r.to_json() + "\n")


def read_jsonl(path: str | Path) -> list[Record]:
    with open(path) as fh:
        return [Record.from_json(line) for line in fh if line.strip()]


def write_summary_csv(path: str | Path, rows: Iterable[RungSummary]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SUMMARY_COLUMNS)
        for s in rows:
            w.writerow([s.rung_index, s.d, ";".join(map(str, s.k)), s.m, s.replicates, repr(s.mean_ratio),
                        repr(s.sd_ratio), repr(s.ci_low), repr(s.ci_high), repr(s.zero_fraction),
                        repr(s.mean_n_bar)])
