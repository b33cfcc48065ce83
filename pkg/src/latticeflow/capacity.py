"""Capacity distributions and reproducible capacity fields.

Capacities are stored as integers in units of ``1/scale`` with ``scale`` a
power of two. Every edge value is a pure function of the master seed, the
replicate id and the edge's lattice coordinates, so the same physical edge
gets the same capacity in every window that contains it.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .errors import InvalidSpecError
from .lattice import Grid, as_grid

DEFAULT_SCALE = 2**20
DEFAULT_EPSILON = Fraction(1, 16)
_U_BITS = 53
_KINDS = ("dirac", "bernoulli", "uniform", "exponential", "mixture")

CLOSED = "closed"
EPS_MINUS = "eps_minus"
EPS_PLUS = "eps_plus"


def to_fraction(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, float):
        # go through repr so that 0.7 means 7/10, not the binary double
        return Fraction(repr(x))
    return Fraction(str(x).strip())


def format_number(x: Fraction) -> str:
    """Exact decimal text for terminating fractions, ``p/q`` otherwise."""
    x = Fraction(x)
    if x.denominator == 1:
        return str(x.numerator)
    n = 0
    while (10**n) % x.denominator:
        n += 1
        if n > 60:
            return f"{x.numerator}/{x.denominator}"
    digits = str(abs(x.numerator) * (10**n // x.denominator)).rjust(n + 1, "0")
    sign = "-" if x < 0 else ""
    return f"{sign}{digits[:-n]}.{digits[-n:]}"


@dataclass(frozen=True)
class DistributionSpec:
    """Capacity law F with an exactly representable atom at zero."""

    kind: str
    params: tuple[Fraction, ...]
    positive: "DistributionSpec | None" = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "params", tuple(to_fraction(p) for p in self.params))
        p = self.params
        if self.kind not in _KINDS:
            raise InvalidSpecError(f"unknown distribution kind {self.kind!r}")
        arity = {"dirac": 1, "bernoulli": 2, "uniform": 2, "exponential": 1, "mixture": 1}[self.kind]
        if len(p) != arity:
            raise InvalidSpecError(f"{self.kind} takes {arity} parameters, got {len(p)}")
        if self.kind == "dirac" and p[0] < 0:
            raise InvalidSpecError("dirac capacity must be non-negative")
        if self.kind == "bernoulli" and (not 0 <= p[0] <= 1 or p[1] < 0):
            raise InvalidSpecError("bernoulli needs p_open in [0, 1] and c >= 0")
        if self.kind == "uniform" and (p[0] < 0 or p[0] > p[1]):
            raise InvalidSpecError("uniform needs 0 <= a <= b")
        if self.kind == "exponential" and p[0] <= 0:
            raise InvalidSpecError("exponential rate must be positive")
        if self.kind == "mixture":
            if not 0 <= p[0] <= 1:
                raise InvalidSpecError("mixture zero weight must lie in [0, 1]")
            if self.positive is None or self.positive.kind == "mixture":
                raise InvalidSpecError("mixture needs a non-mixture positive part")
        elif self.positive is not None:
            raise InvalidSpecError("only mixtures carry a positive part")

    @property
    def zero_mass(self) -> Fraction:
        """F(0), the probability of an exactly closed edge."""
        k, p = self.kind, self.params
        if k == "dirac":
            return Fraction(1) if p[0] == 0 else Fraction(0)
        if k == "bernoulli":
            return 1 - p[0] if p[1] > 0 else Fraction(1)
        if k == "uniform":
            return Fraction(1) if p[1] == 0 else Fraction(0)
        if k == "exponential":
            return Fraction(0)
        w = p[0]
        return w + (1 - w) * self.positive.zero_mass

    @property
    def p_open(self) -> Fraction:
        return 1 - self.zero_mass

    @property
    def mean(self) -> float:
        k, p = self.kind, self.params
        if k == "dirac":
            return float(p[0])
        if k == "bernoulli":
            return float(p[0] * p[1])
        if k == "uniform":
            return float((p[0] + p[1]) / 2)
        if k == "exponential":
            return 1.0 / float(p[0])
        return float(1 - p[0]) * self.positive.mean

    def __str__(self) -> str:
        args = ", ".join(format_number(x) for x in self.params)
        if self.kind == "mixture":
            return f"mixture({args}, {self.positive})"
        return f"{self.kind}({args})"

    def _positive_quanta(self, v: np.ndarray, scale: int) -> np.ndarray:
        """Quantized capacities for the open part, ``v`` uniform in [0, 1)."""
        k, p = self.kind, self.params
        if k == "mixture":
            return self.positive._positive_quanta(v, scale)
        if k in ("dirac", "bernoulli"):
            c = p[0] if k == "dirac" else p[1]
            q = max(1, math.floor(c * scale + Fraction(1, 2)))
            return np.full(v.shape, q, dtype=np.int64)
        if k == "uniform":
            x = float(p[0]) + (float(p[1]) - float(p[0])) * v
        else:
            x = -np.log1p(-v) / float(p[0])
        q = np.floor(x * scale + 0.5).astype(np.int64)
        # a positive draw never rounds onto the zero atom
        return np.maximum(q, 1)


def dirac(c=1) -> DistributionSpec:
    return DistributionSpec("dirac", (c,))


def bernoulli(p_open, c=1) -> DistributionSpec:
    return DistributionSpec("bernoulli", (p_open, c))


def uniform(a, b) -> DistributionSpec:
    return DistributionSpec("uniform", (a, b))


def exponential(rate) -> DistributionSpec:
    return DistributionSpec("exponential", (rate,))


def mixture(zero_weight, positive: DistributionSpec) -> DistributionSpec:
    return DistributionSpec("mixture", (zero_weight,), positive)


_CALL = re.compile(r"^\s*([a-z_]+)\s*\((.*)\)\s*$")


def parse_distribution(text: str) -> DistributionSpec:
    """Parse ``dirac(1)``, ``bernoulli(0.7, 1)``, ``mixture(0.3, uniform(1, 2))`` and so on."""
    m = _CALL.match(text)
    if not m:
        raise InvalidSpecError(f"cannot parse distribution {text!r}")
    kind, body = m.group(1), m.group(2)
    if kind == "mixture":
        head, sep, rest = body.partition(",")
        if not sep:
            raise InvalidSpecError("mixture needs a weight and a positive part")
        try:
            return mixture(to_fraction(head), parse_distribution(rest))
        except (ValueError, ZeroDivisionError) as exc:
            raise InvalidSpecError(str(exc)) from exc
    try:
        args = [to_fraction(a) for a in body.split(",")] if body.strip() else []
    except (ValueError, ZeroDivisionError) as exc:
        raise InvalidSpecError(f"bad number in {text!r}") from exc
    if kind == "bernoulli" and len(args) == 1:
        args.append(Fraction(1))
    return DistributionSpec(kind, tuple(args))


# counter-based hashing ------------------------------------------------------

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_C1 = np.uint64(0xBF58476D1CE4E5B9)
_C2 = np.uint64(0x94D049BB133111EB)


def _mix(z: np.ndarray) -> np.ndarray:
    z = z + _GOLDEN
    z = (z ^ (z >> np.uint64(30))) * _C1
    z = (z ^ (z >> np.uint64(27))) * _C2
    return z ^ (z >> np.uint64(31))


def edge_hashes(master_seed: int, replicate_id: int, coords: np.ndarray, axis: np.ndarray) -> np.ndarray:
    """64-bit hash of (seed, replicate, lower endpoint, axis) for each edge."""
    n = coords.shape[0]
    with np.errstate(over="ignore"):
        h = np.full(n, np.uint64(master_seed & (2**64 - 1)), dtype=np.uint64)
        h = _mix(h)
        h = _mix(h ^ np.uint64(replicate_id & (2**64 - 1)))
        for a in range(coords.shape[1]):
            h = _mix(h ^ coords[:, a].astype(np.int64).view(np.uint64))
        h = _mix(h ^ axis.astype(np.uint64))
    return h


def quantize_draws(dist: DistributionSpec, hashes: np.ndarray, scale: int) -> np.ndarray:
    u = (hashes >> np.uint64(64 - _U_BITS)).astype(np.int64)
    f0 = dist.zero_mass
    thresh = math.ceil(f0 * 2**_U_BITS)
    out = np.zeros(u.shape, dtype=np.int64)
    is_open = u >= thresh
    if is_open.any():
        v = (u[is_open] - thresh).astype(np.float64) / float(2**_U_BITS - thresh)
        out[is_open] = dist._positive_quanta(v, scale)
    return out


def _check_scale(scale: int) -> None:
    if scale < 1 or scale & (scale - 1):
        raise InvalidSpecError("quantization scale must be a power of two")


@dataclass(frozen=True, eq=False)
class CapacityField:
    """A realized configuration: one fixed-point capacity per edge of ``grid``."""

    grid: Grid
    values: np.ndarray
    dist: DistributionSpec | None = None
    master_seed: int = 0
    replicate_id: int = 0
    scale: int = DEFAULT_SCALE

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=np.int64).copy()
        if vals.shape != (self.grid.n_edges,):
            raise InvalidSpecError("one value per edge is required")
        if vals.size and vals.min() < 0:
            raise InvalidSpecError("capacities must be non-negative")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def on(self, region) -> np.ndarray:
        """Capacities of the edges of a sub-region, in the sub-region's edge order."""
        g = as_grid(region)
        if g == self.grid:
            return self.values
        return self.values[self.grid.edges_of(g)]

    def value(self, coord: Sequence[int], axis: int) -> int:
        return int(self.values[self.grid.edge_id(coord, axis)])

    def units(self, quanta) -> float:
        return float(quanta) / self.scale

    def with_values(self, values: np.ndarray) -> "CapacityField":
        return CapacityField(self.grid, values, self.dist, self.master_seed, self.replicate_id, self.scale)

    def restricted(self, region) -> "CapacityField":
        g = as_grid(region)
        return CapacityField(g, self.on(g), self.dist, self.master_seed, self.replicate_id, self.scale)

    def opened_inside(self, box_grid: Grid, quanta: int = 1) -> "CapacityField":
        """Copy where closed edges with both endpoints in ``box_grid`` become open."""
        inside = box_grid.contains(self.grid.coords)
        emask = self.grid.induced_edges(inside)
        vals = self.values.copy()
        vals[emask & (vals == 0)] = quanta
        return self.with_values(vals)


def sample_field(window, dist: DistributionSpec, master_seed: int, replicate_id: int = 0,
                 scale: int = DEFAULT_SCALE) -> CapacityField:
    _check_scale(scale)
    g = as_grid(window)
    coords, axis = g.edge_coords(np.arange(g.n_edges))
    vals = quantize_draws(dist, edge_hashes(master_seed, replicate_id, coords, axis), scale)
    return CapacityField(g, vals, dist, master_seed, replicate_id, scale)


def field_from_values(region, values, scale: int = DEFAULT_SCALE) -> CapacityField:
    _check_scale(scale)
    return CapacityField(as_grid(region), values, None, 0, 0, scale)


def constant_field(region, quanta: int, scale: int = DEFAULT_SCALE) -> CapacityField:
    g = as_grid(region)
    return field_from_values(g, np.full(g.n_edges, quanta, dtype=np.int64), scale)


def epsilon_quanta(epsilon, scale: int) -> int:
    """Largest capacity (in quanta) that still counts as an eps-minus edge."""
    eps = to_fraction(epsilon)
    if eps <= 0:
        raise InvalidSpecError("epsilon must be positive")
    return math.floor(eps * scale)


def classify_values(values: np.ndarray, epsilon, scale: int) -> np.ndarray:
    """0 for closed, 1 for eps-minus, 2 for eps-plus."""
    eq = epsilon_quanta(epsilon, scale)
    v = np.asarray(values)
    return np.where(v == 0, 0, np.where(v <= eq, 1, 2))


def classify_edge(field: CapacityField, e: int, epsilon=DEFAULT_EPSILON) -> str:
    return (CLOSED, EPS_MINUS, EPS_PLUS)[int(classify_values(field.values[e:e + 1], epsilon, field.scale)[0])]


@dataclass(frozen=True)
class MomentEstimate:
    mean: float
    stderr: float
    n_samples: int
    divergent: bool


def estimate_moment(dist: DistributionSpec, eta: float, n_samples: int, seed: int = 0,
                    scale: int = DEFAULT_SCALE) -> MomentEstimate:
    """Monte Carlo estimate of E exp(eta * tau) with a crude divergence flag."""
    if eta <= 0 or n_samples < 1:
        raise InvalidSpecError("eta must be positive and n_samples at least 1")
    g = Grid((0,), (n_samples,))
    x = sample_field(g, dist, seed, 0, scale).values.astype(np.float64) / scale
    with np.errstate(over="ignore"):
        terms = np.exp(eta * x)
    if not np.all(np.isfinite(terms)):
        return MomentEstimate(math.inf, math.inf, n_samples, True)
    mean = float(terms.mean())
    stderr = float(terms.std(ddof=1) / math.sqrt(n_samples)) if n_samples > 1 else 0.0
    half = terms[: max(1, n_samples // 2)].mean()
    drift = abs(mean - half) / mean if mean > 0 else 0.0
    dominated = float(terms.max() / terms.sum()) > 0.1 if n_samples >= 100 else False
    return MomentEstimate(mean, stderr, n_samples, bool(dominated and drift > 0.1))
