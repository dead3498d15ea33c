"""Response-time bound for guarded dispatching and single-server M/G/1 formulas.

All M/G/1 formulas are in speed-1 units unless ``speed`` is given.  The
guarded bound is stated for k servers of speed 1/k, so its terms already
carry the factor k.

Rank classes are the half-open intervals ``[c**r, c**(r+1))``, so loads and
partial moments at class edges use strict inequalities.  For distributions
with atoms the formulas use left limits where a job of size x is preempted
only by strictly smaller jobs.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy import integrate

from .guardrail import rank_of, rank_width
from .server import Discipline
from .sizedist import SizeDistribution


class DivergentBound(ArithmeticError):
    """A load term reached 1, so the requested quantity is infinite."""


def _gap(rho: float) -> float:
    if not rho < 1.0:
        raise DivergentBound(f"load {rho!r} >= 1")
    return 1.0 - rho


def _quad(fn, a: float, b: float, epsrel: float = 1e-10) -> float:
    """Adaptive quadrature, split geometrically when [a, b] spans decades."""
    if b <= a:
        return 0.0
    if a > 0 and b / a > 10:
        pts = np.geomspace(a, b, int(math.ceil(math.log10(b / a))) * 2 + 1)
    else:
        pts = np.array([a, b])
    total = 0.0
    for lo, hi in zip(pts[:-1], pts[1:]):
        val, _ = integrate.quad(fn, lo, hi, epsabs=0.0, epsrel=epsrel, limit=200)
        total += val
    return total


def _is_atomic(dist: SizeDistribution) -> bool:
    atoms = dist.atoms()
    return bool(atoms) and abs(sum(p for _, p in atoms) - 1.0) < 1e-12


# ---------------------------------------------------------------------------
# Guarded bound


@dataclass(frozen=True)
class BoundInputs:
    dist: SizeDistribution
    lam: float
    k: int
    g: float
    c: float

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("arrival rate must be positive")
        if self.k < 1:
            raise ValueError("k must be positive")
        if self.g < 0:
            raise ValueError("g must be nonnegative")
        if not self.c > 1:
            raise ValueError("c must exceed 1")

    @classmethod
    def from_rho(cls, dist: SizeDistribution, rho: float, k: int, g: float = 1.0,
                 c: float | None = None) -> "BoundInputs":
        if not 0.0 < rho < 1.0:
            raise ValueError(f"rho must lie strictly inside (0, 1), got {rho!r}")
        return cls(dist, rho / dist.mean(), k, g, rank_width(rho) if c is None else c)

    @property
    def rho(self) -> float:
        return self.lam * self.dist.mean()

    def rank_terms(self, r: int) -> tuple[float, float]:
        """(A, B) with bound(x) = A + B*x for every x of rank r."""
        c, lam, k = self.c, self.lam, self.k
        lo, hi = c**r, c ** (r + 1)
        gap_lo = _gap(self.dist.partial_load(lam, lo, strict=True))
        gap_hi = _gap(self.dist.partial_load(lam, hi, strict=True))
        waiting = 0.5 * lam * self.dist.partial_second(hi, strict=True) / (gap_lo * gap_hi)
        guard = (4 * c + 2) * self.g * k * hi / (c - 1) / gap_lo
        return waiting + guard, k / gap_lo


def guarded_prio_bound(x: float, inp: BoundInputs) -> float:
    """Upper bound on E[T(x)] for a guarded policy with Prio servers."""
    if not x > 0:
        raise ValueError("x must be positive")
    a, b = inp.rank_terms(rank_of(x, inp.c))
    return a + b * x


def _rank_span(dist: SizeDistribution, c: float) -> tuple[int, int]:
    lo, hi = dist.integration_range()
    if _is_atomic(dist):
        xs = [a for a, _ in dist.atoms()]
        lo, hi = min(xs), max(xs)
    lo = max(lo, hi * 1e-15)
    return rank_of(lo, c), rank_of(hi, c)


def mean_guarded_prio_bound(inp: BoundInputs) -> float:
    """E_X of ``guarded_prio_bound``, summed exactly rank by rank.

    On each rank the bound is affine in x, so only the rank's probability
    and first partial moment are needed.  Mass below the lowest rank of the
    integration range (at most ~1e-15 of it) is charged at that rank.
    """
    dist, c = inp.dist, inp.c
    r0, r1 = _rank_span(dist, c)
    total = 0.0
    for r in range(r0, r1 + 1):
        lo, hi = c**r, c ** (r + 1)
        p_lo = 1.0 if r == r0 else dist.sf(lo, strict=True)
        p = p_lo - dist.sf(hi, strict=True)
        m1 = dist.partial_first(hi, strict=True) - (0.0 if r == r0 else dist.partial_first(lo, strict=True))
        if p <= 0 and m1 <= 0:
            continue
        a, b = inp.rank_terms(r)
        total += a * p + b * m1
    return total


def mean_guarded_prio_bound_quad(inp: BoundInputs) -> float:
    """Same quantity by direct quadrature of the per-size bound (slow oracle)."""
    dist, c = inp.dist, inp.c
    r0, r1 = _rank_span(dist, c)
    edges = [c**r for r in range(r0, r1 + 2)]
    a0, b0 = inp.rank_terms(r0)

    def fn(x):
        # same convention as the closed form below the lowest rank
        return a0 + b0 * x if x < edges[0] else guarded_prio_bound(x, inp)
    return dist.expect(fn, breakpoints=edges, epsrel=1e-9)


# ---------------------------------------------------------------------------
# Single-server formulas


def _srpt_residence(x: float, dist: SizeDistribution, lam: float) -> float:
    """Integral over [0, x] of dt / (1 - rho_{t-})."""
    if _is_atomic(dist):
        total, prev, load = 0.0, 0.0, 0.0
        for a, p in sorted(dist.atoms()):
            if a >= x:
                break
            total += (a - prev) / _gap(load)
            load += lam * p * a
            prev = a
        return total + (x - prev) / _gap(load)
    lo = dist.integration_range()[0]
    head = min(x, lo)
    return head + _quad(lambda t: 1.0 / _gap(dist.partial_load(lam, t)), lo, x)


def mg1_response(x: float, dist: SizeDistribution, lam: float,
                 discipline: Discipline | str, c: float | None = None,
                 speed: float = 1.0) -> float:
    """E[T(x)] in an M/G/1 queue of the given speed.

    ``c`` is the rank width for Prio (defaults to the load-based width).
    """
    if not x > 0:
        raise ValueError("x must be positive")
    if not speed > 0:
        raise ValueError("speed must be positive")
    if speed != 1.0:
        return mg1_response(x, dist, lam / speed, discipline, c) / speed
    d = Discipline.parse(discipline)
    rho = lam * dist.mean()
    _gap(rho)
    if d is Discipline.FCFS:
        return x + lam * dist.second_moment() / (2 * _gap(rho))
    if d is Discipline.PSJF:
        below = _gap(dist.partial_load(lam, x, strict=True))
        upto = _gap(dist.partial_load(lam, x))
        return x / below + lam * dist.partial_second(x) / (2 * upto * below)
    if d is Discipline.SRPT:
        below = _gap(dist.partial_load(lam, x, strict=True))
        upto = _gap(dist.partial_load(lam, x))
        seen = dist.partial_second(x) + x * x * dist.sf(x)
        return _srpt_residence(x, dist, lam) + lam * seen / (2 * upto * below)
    # Prio over rank classes [c^r, c^(r+1))
    c = rank_width(rho) if c is None else c
    r = rank_of(x, c)
    lo, hi = c**r, c ** (r + 1)
    gap_lo = _gap(dist.partial_load(lam, lo, strict=True))
    gap_hi = _gap(dist.partial_load(lam, hi, strict=True))
    return 0.5 * lam * dist.partial_second(hi, strict=True) / (gap_lo * gap_hi) + x / gap_lo


def _breakpoints(dist: SizeDistribution, d: Discipline, c: float) -> list[float]:
    lo, hi = dist.integration_range()
    pts: list[float] = []
    if d is Discipline.PRIO:
        r0, r1 = _rank_span(dist, c)
        pts += [c**r for r in range(r0, r1 + 2)]
    if lo > 0 and hi / lo > 10:
        pts += list(np.geomspace(lo, hi, int(math.ceil(math.log10(hi / lo))) * 2 + 1))
    return pts


def mean_mg1_response(dist: SizeDistribution, lam: float, discipline: Discipline | str,
                      c: float | None = None, speed: float = 1.0) -> float:
    """E[T] in an M/G/1 queue, averaged over the size distribution."""
    if not speed > 0:
        raise ValueError("speed must be positive")
    if speed != 1.0:
        return mean_mg1_response(dist, lam / speed, discipline, c) / speed
    d = Discipline.parse(discipline)
    rho = lam * dist.mean()
    _gap(rho)
    if d is Discipline.FCFS:
        return dist.mean() + lam * dist.second_moment() / (2 * _gap(rho))
    c = rank_width(rho) if c is None else c
    if d is Discipline.SRPT:
        # residence part via E[int_0^X dt/(1-rho_t)] = int_0^inf P(X>t)/(1-rho_t) dt
        if _is_atomic(dist):
            residence = dist.expect(lambda x: _srpt_residence(x, dist, lam))
        else:
            lo, hi = dist.integration_range()
            residence = min(lo, hi) + _quad(
                lambda t: dist.sf(t) / _gap(dist.partial_load(lam, t)), lo, hi)

        def waiting(x):
            seen = dist.partial_second(x) + x * x * dist.sf(x)
            return lam * seen / (2 * _gap(dist.partial_load(lam, x))
                                 * _gap(dist.partial_load(lam, x, strict=True)))
        return residence + dist.expect(waiting, _breakpoints(dist, d, c))
    return dist.expect(lambda x: mg1_response(x, dist, lam, d, c) if x > 0 else 0.0,
                       _breakpoints(dist, d, c))


def prio_psjf_factor(c: float) -> float:
    """Worst-case ratio of single-server Prio to PSJF mean response: c + 2*sqrt(c-1)."""
    return c + 2.0 * math.sqrt(c - 1.0)


# ---------------------------------------------------------------------------
# Sweep output


BOUND_SWEEP_COLUMNS = ("rho", "x", "rank", "guarded_bound", "prio", "psjf", "srpt", "fcfs")


def bound_sweep(dist: SizeDistribution, k: int, g: float, rhos: Iterable[float],
                xs: Sequence[float]) -> list[dict]:
    """Per-size bound next to k-scaled single-server formulas (speed 1/k)."""
    rows = []
    for rho in rhos:
        inp = BoundInputs.from_rho(dist, rho, k, g)
        for x in xs:
            row = {"rho": rho, "x": float(x), "rank": rank_of(x, inp.c),
                   "guarded_bound": guarded_prio_bound(x, inp)}
            for name, d in (("prio", Discipline.PRIO), ("psjf", Discipline.PSJF),
                            ("srpt", Discipline.SRPT), ("fcfs", Discipline.FCFS)):
                row[name] = k * mg1_response(x, dist, inp.lam, d, inp.c)
            rows.append(row)
    return rows


def write_bound_sweep(path, rows: Sequence[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=BOUND_SWEEP_COLUMNS)
        w.writeheader()
        for row in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
