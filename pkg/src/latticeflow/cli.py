"""Command-line harness: ``run``, ``verify`` and ``plot`` over a flat key = value config."""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import platform
import sys
import warnings
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__
from .capacity import DEFAULT_EPSILON, DEFAULT_SCALE, format_number, parse_distribution
from .errors import InvalidSpecError
from .estimator import (CHECK_NAMES, DEFAULT_DELTA, ExperimentPlan, SampleSeries, flip_one_capacity,
                        flow_constant_estimate, read_jsonl, replicate_field, run_checks, run_plan, summaries,
                        write_jsonl, write_summary_csv)
from .flow import DEFAULT_MAX_VERTICES, canonical_min_cut

log = logging.getLogger("latticeflow")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
VERIFICATION_LEVELS = ("off", "lemma-checks", "full")
FORMATS = ("jsonl", "csv", "svg")


class ConfigError(ValueError):
    pass


def _parse_rungs(text: str) -> tuple[tuple[tuple[int, ...], int | None], ...]:
    """``8:8, 16`` or ``4x4:4``; a missing height means the largest base side."""
    out = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        base, _, m = item.partition(":")
        k = tuple(int(x) for x in base.split("x"))
        out.append((k, int(m) if m else max(k)))
    if not out:
        raise ConfigError("rungs is empty")
    return tuple(out)


def _format_rungs(rungs) -> str:
    return ", ".join(f"{'x'.join(map(str, k))}:{m}" for k, m in rungs)


@dataclass(frozen=True)
class RunConfig:
    dist: str = "bernoulli(0.8)"
    d: int = 2
    rungs: tuple = (((8,), 8), ((16,), 16))
    replicates: int = 8
    master_seed: int = 0
    epsilon: Fraction = DEFAULT_EPSILON
    t: int = 4
    delta: float = DEFAULT_DELTA
    margin: int = 8
    scale: int = DEFAULT_SCALE
    max_vertices: int = DEFAULT_MAX_VERTICES
    growth_rule: str = "log"
    p_c: float = 0.5
    out_dir: str = "out"
    formats: tuple = ("jsonl", "csv", "svg")
    verification: str = "off"
    verify_replicates: int = 4
    gamma_p_open: float = 0.2
    gamma_k: int = 8
    workers: int = 1

    def plan(self) -> ExperimentPlan:
        return ExperimentPlan(parse_distribution(self.dist), self.d, self.rungs, self.replicates, self.master_seed,
                              self.epsilon, self.t, self.delta, self.margin, self.scale, None, self.max_vertices,
                              self.growth_rule)

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if f.name == "rungs":
                v = _format_rungs(v)
            elif f.name == "formats":
                v = ",".join(v)
            elif f.name == "epsilon":
                v = f"{v.numerator}/{v.denominator}"
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if f.name == "rungs":
                v = [[list(k), m] for k, m in v]
            elif f.name == "formats":
                v = list(v)
            elif f.name == "epsilon":
                v = format_number(v)
            out[f.name] = v
        return out


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(RunConfig)}


def _convert(key: str, raw: str):
    raw = raw.strip()
    if key == "rungs":
        return _parse_rungs(raw)
    if key == "formats":
        fmts = tuple(x.strip() for x in raw.split(",") if x.strip())
        bad = [x for x in fmts if x not in FORMATS]
        if bad:
            raise ConfigError(f"unknown format {bad[0]!r}")
        return fmts
    if key == "epsilon":
        return Fraction(raw)
    if key == "verification":
        if raw not in VERIFICATION_LEVELS:
            raise ConfigError(f"verification must be one of {', '.join(VERIFICATION_LEVELS)}")
        return raw
    if key == "dist":
        parse_distribution(raw)
        return raw
    kind = _FIELD_TYPES[key]
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    return raw


def parse_config(text: str) -> RunConfig:
    values = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, raw = line.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError(f"line {n}: expected key = value")
        if key not in _FIELD_TYPES:
            raise ConfigError(f"line {n}: unknown key {key!r}")
        try:
            values[key] = _convert(key, raw)
        except (ValueError, InvalidSpecError) as exc:
            raise ConfigError(f"line {n}: bad value for {key}: {exc}") from exc
    return RunConfig(**values)


def load_config(path: str | Path, seed: int | None = None, workers: int | None = None,
                out: str | None = None) -> RunConfig:
    cfg = parse_config(Path(path).read_text())
    over = {}
    if seed is not None:
        over["master_seed"] = seed
    if workers is not None:
        over["workers"] = workers
    if out is not None:
        over["out_dir"] = out
    return dataclasses.replace(cfg, **over) if over else cfg


# plotting -----------------------------------------------------------------


def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def plot_convergence(rows, path: Path) -> None:
    plt = _pyplot()
    plt.rcParams["svg.hashsalt"] = "latticeflow"
    fig, ax = plt.subplots(figsize=(5, 3.5))
    vol = [int(np.prod(r.k)) for r in rows]
    mean = np.array([r.mean_ratio for r in rows])
    err = np.array([[r.mean_ratio - r.ci_low for r in rows], [r.ci_high - r.mean_ratio for r in rows]])
    ax.errorbar(vol, mean, yerr=err, marker="o", capsize=3)
    ax.set_xlabel("base volume")
    ax.set_ylabel("min passage time / base volume")
    ax.set_xscale("log")
    fig.tight_layout()
    fig.savefig(path, metadata={"Date": None})
    plt.close(fig)


def plot_cut(cfg: RunConfig, path: Path, rung_index: int | None = None) -> None:
    """Box capacities in grayscale with the canonical minimum cut in red (d = 2 only)."""
    plan = cfg.plan()
    i = len(plan.rungs) - 1 if rung_index is None else rung_index
    box = plan.box(i)
    field = replicate_field(plan, i, 0)
    _, cut = canonical_min_cut(box.grid, field, plan.max_vertices)
    g = box.grid
    u, v = g.endpoints
    xy = g.coords
    caps = field.on(g).astype(float)
    top = caps.max() if caps.size and caps.max() > 0 else 1.0
    plt = _pyplot()
    plt.rcParams["svg.hashsalt"] = "latticeflow"
    fig, ax = plt.subplots(figsize=(5, 5))
    from matplotlib.collections import LineCollection
    segs = np.stack([xy[u], xy[v]], axis=1)
    shade = [str(1 - 0.85 * c / top) for c in caps]
    ax.add_collection(LineCollection(segs, colors=shade, linewidths=1.2))
    ax.add_collection(LineCollection(segs[cut.edges], colors="red", linewidths=2.4))
    ax.set_xlim(-0.5, g.hi[0] + 0.5)
    ax.set_ylim(-0.5, g.hi[1] + 0.5)
    ax.set_aspect("equal")
    ax.set_title(f"{box.label()}  passage time {format_number(Fraction(cut.passage_time, plan.scale))}")
    fig.tight_layout()
    fig.savefig(path, metadata={"Date": None})
    plt.close(fig)


# verbs --------------------------------------------------------------------


def _checks(cfg: RunConfig, budget: int, inject_fault: bool):
    plan = cfg.plan()
    return run_checks(plan, budget, cfg.gamma_p_open, cfg.gamma_k,
                      flip_one_capacity if inject_fault else None, cfg.workers)


def cmd_run(cfg: RunConfig, inject_fault: bool = False) -> int:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    plan = cfg.plan()
    series = run_plan(plan, cfg.workers)
    for i, reason in series.skipped:
        log.warning("rung %d skipped: %s", i, reason)
    rows = summaries(series)
    if "jsonl" in cfg.formats:
        write_jsonl(out / "samples.jsonl", series.records)
    if "csv" in cfg.formats:
        write_summary_csv(out / "summary.csv", rows)
    manifest = {
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "master_seed": cfg.master_seed,
        "scale": cfg.scale,
        "config": cfg.to_dict(),
        "config_text": cfg.to_text(),
        "records": len(series.records),
        "skipped_rungs": [{"rung_index": i, "reason": r} for i, r in series.skipped],
    }
    status = EXIT_OK
    if cfg.verification != "off":
        tally = _checks(cfg, cfg.verify_replicates, inject_fault)
        manifest["checks"] = {"passed": tally.passed, "failed": tally.failed, "skipped": tally.skipped,
                              "first_failure": tally.first_failure}
        status = EXIT_OK if tally.ok else EXIT_FAIL
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    if "svg" in cfg.formats and rows:
        plot_convergence(rows, out / "convergence.svg")
        if cfg.d == 2:
            plot_cut(cfg, out / "cut.svg")
    if len(rows) >= 1:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            est = flow_constant_estimate(series)
        print(f"nu_hat = {est.nu_hat!r}  CI = [{est.ci[0]!r}, {est.ci[1]!r}]")
    return status


def cmd_verify(cfg: RunConfig, inject_fault: bool = False) -> int:
    if cfg.verify_replicates <= 0:
        log.warning("verification budget is empty; nothing checked")
        return EXIT_OK
    tally = _checks(cfg, cfg.verify_replicates, inject_fault)
    for name in CHECK_NAMES:
        print(f"{name:18s} passed {tally.passed[name]:4d}  failed {tally.failed[name]:4d}  "
              f"skipped {tally.skipped[name]:4d}")
    if not tally.ok:
        for name, where in tally.first_failure.items():
            print(f"violated: {name} ({where})", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def cmd_plot(out_dir: str | Path) -> int:
    out = Path(out_dir)
    manifest = json.loads((out / "manifest.json").read_text())
    cfg = parse_config(manifest["config_text"])
    plan = cfg.plan()
    records = read_jsonl(out / "samples.jsonl")
    rows = summaries(SampleSeries(plan, records))
    plot_convergence(rows, out / "convergence.svg")
    if cfg.d == 2:
        plot_cut(cfg, out / "cut.svg")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="latticeflow", description="Maximum flow through random lattice boxes.")
    sub = p.add_subparsers(dest="verb", required=True)
    for verb in ("run", "verify"):
        s = sub.add_parser(verb)
        s.add_argument("--config", required=True)
        s.add_argument("--workers", type=int)
        s.add_argument("--seed", type=int)
        s.add_argument("--out")
        s.add_argument("--inject-fault", action="store_true",
                       help="tamper with one capacity after each solve (negative control)")
    s = sub.add_parser("plot")
    s.add_argument("--out", required=True)
    s.add_argument("--config", help="ignored; the manifest in --out is used")
    return p


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        if args.verb == "plot":
            return cmd_plot(args.out)
        cfg = load_config(args.config, args.seed, args.workers, args.out)
        if args.verb == "run":
            return cmd_run(cfg, args.inject_fault)
        return cmd_verify(cfg, args.inject_fault)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InvalidSpecError as exc:
        print(f"invalid plan: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_FAIL
