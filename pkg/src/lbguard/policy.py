"""Base dispatching policies.

Each policy answers ``dispatch(x, candidates, obs, rng)`` with a member of
``candidates``.  Ties go to the lowest server index.  ``rng`` only needs a
``random()`` method returning a uniform in [0, 1).
"""
from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from typing import Sequence

from .sizedist import SizeDistribution


@dataclass
class ServerObservation:
    job_count: list[int]
    remaining_work: list[float]
    last_dispatch_time: list[float]

    def __post_init__(self):
        n = len(self.job_count)
        if len(self.remaining_work) != n or len(self.last_dispatch_time) != n:
            raise ValueError("observation arrays must have equal length")

    @classmethod
    def idle(cls, k: int) -> "ServerObservation":
        return cls([0] * k, [0.0] * k, [-math.inf] * k)


@dataclass(frozen=True)
class PolicySpec:
    name: str
    d: int = 2
    cutoffs: tuple[float, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "name", canonical_name(self.name))
        if self.name == "JSQd" and self.d < 1:
            raise ValueError("JSQ-d needs d >= 1")

    @property
    def label(self) -> str:
        return f"JSQ-{self.d}" if self.name == "JSQd" else self.name


_NAMES = {
    "random": "Random", "rr": "RR", "roundrobin": "RR", "round_robin": "RR",
    "lwl": "LWL", "leastworkleft": "LWL", "jsq": "JSQ", "jsqd": "JSQd",
    "sitae": "SITA-E", "sita": "SITA-E", "sita_e": "SITA-E",
}


def canonical_name(name: str) -> str:
    key = str(name).lower().replace("-", "").replace(" ", "")
    if key.startswith("jsq") and key[3:].isdigit():
        return "JSQd"
    if key not in _NAMES:
        raise ValueError(f"unknown dispatching policy {name!r}")
    return _NAMES[key]


class Policy:
    name = "base"
    code = -1

    def dispatch(self, x: float, candidates: Sequence[int], obs: ServerObservation, rng) -> int:
        raise NotImplementedError


class RandomPolicy(Policy):
    name, code = "Random", 0

    def dispatch(self, x, candidates, obs, rng):
        if not candidates:
            raise AssertionError("empty candidate set")
        u = rng.random()
        return candidates[min(int(u * len(candidates)), len(candidates) - 1)]


class RoundRobin(Policy):
    """Least-recently-dispatched candidate."""
    name, code = "RR", 1

    def dispatch(self, x, candidates, obs, rng):
        if not candidates:
            raise AssertionError("empty candidate set")
        return min(candidates, key=lambda s: (obs.last_dispatch_time[s], s))


class LeastWorkLeft(Policy):
    name, code = "LWL", 2

    def dispatch(self, x, candidates, obs, rng):
        if not candidates:
            raise AssertionError("empty candidate set")
        return min(candidates, key=lambda s: (obs.remaining_work[s], s))


class JoinShortestQueue(Policy):
    name, code = "JSQ", 3

    def dispatch(self, x, candidates, obs, rng):
        if not candidates:
            raise AssertionError("empty candidate set")
        return min(candidates, key=lambda s: (obs.job_count[s], s))


class JSQd(Policy):
    """JSQ among min(d, |candidates|) candidates sampled without replacement."""
    name, code = "JSQd", 4

    def __init__(self, d: int = 2):
        if d < 1:
            raise ValueError("JSQ-d needs d >= 1")
        self.d = d

    def dispatch(self, x, candidates, obs, rng):
        if not candidates:
            raise AssertionError("empty candidate set")
        pool = list(candidates)
        n = len(pool)
        m = min(self.d, n)
        for i in range(m):
            j = i + min(int(rng.random() * (n - i)), n - i - 1)
            pool[i], pool[j] = pool[j], pool[i]
        return min(pool[:m], key=lambda s: (obs.job_count[s], s))


@dataclass
class SITAE(Policy):
    """Size-interval assignment with load-equalizing cutoffs.

    Server ``i`` owns sizes in ``(cutoffs[i-1], cutoffs[i]]``.  A size that
    is an atom of the distribution occupies a slab ``[lo, hi)`` of the
    cumulative load fraction; a uniform coin picks the point in the slab, and
    the server owning that point gets the job, so atoms split across
    adjacent servers in proportion to the load each still needs.
    """
    cutoffs: tuple[float, ...]
    atom_slabs: dict = field(default_factory=dict)  # size -> (lo, hi) load fractions
    name = "SITA-E"
    code = 5

    @property
    def k(self) -> int:
        return len(self.cutoffs) + 1

    @classmethod
    def from_distribution(cls, dist: SizeDistribution, lam: float, k: int) -> "SITAE":
        cutoffs = tuple(sitae_cutoffs(dist, lam, k))
        rho = lam * dist.mean()
        slabs = {}
        for a, p in dist.atoms():
            if p > 0:
                slabs[a] = (dist.partial_load(lam, a, strict=True) / rho,
                            dist.partial_load(lam, a) / rho)
        return cls(cutoffs, slabs)

    def interval(self, s: int) -> tuple[float, float]:
        lo = self.cutoffs[s - 1] if s > 0 else 0.0
        hi = self.cutoffs[s] if s < len(self.cutoffs) else math.inf
        return lo, hi

    def designated(self, x: float, rng) -> int:
        k = self.k
        slab = self.atom_slabs.get(x)
        if slab is not None:
            v = slab[0] + rng.random() * (slab[1] - slab[0])
            return min(int(v * k), k - 1)
        return bisect.bisect_left(self.cutoffs, x)

    def dispatch(self, x, candidates, obs, rng):
        if not candidates:
            raise AssertionError("empty candidate set")
        s = self.designated(x, rng)
        if s in candidates:
            return s

        def dist_to(c):
            lo, hi = self.interval(c)
            if lo <= x <= hi:
                return 0.0
            return min(abs(x - lo), abs(x - hi))
        return min(candidates, key=lambda c: (dist_to(c), c))


def sitae_cutoffs(dist: SizeDistribution, lam: float, k: int, tol: float = 1e-9) -> list[float]:
    """Sizes y_1 <= ... <= y_{k-1} with partial_load(y_i) = i*rho/k.

    For atomic laws each cutoff is the smallest atom whose cumulative load
    reaches the target (the atom is then split by ``SITAE``).
    """
    if k < 2:
        raise ValueError("SITA-E needs k >= 2")
    rho = lam * dist.mean()
    atoms = dist.atoms()
    if atoms and abs(sum(p for _, p in atoms) - 1.0) < 1e-12:
        out = []
        for i in range(1, k):
            target = i * rho / k
            for a, _ in sorted(atoms):
                if dist.partial_load(lam, a) >= target * (1 - 1e-12):
                    out.append(a)
                    break
        return out
    lo0, hi0 = dist.integration_range()
    out = []
    for i in range(1, k):
        target = i * rho / k
        lo, hi = lo0, hi0
        while hi - lo > tol * max(1.0, hi):
            mid = 0.5 * (lo + hi)
            if dist.partial_load(lam, mid) < target:
                lo = mid
            else:
                hi = mid
        out.append(0.5 * (lo + hi))
    return out


def build_policy(spec: PolicySpec, k: int, dist: SizeDistribution | None = None,
                 lam: float | None = None) -> Policy:
    name = spec.name
    if name == "Random":
        return RandomPolicy()
    if name == "RR":
        return RoundRobin()
    if name == "LWL":
        return LeastWorkLeft()
    if name == "JSQ":
        return JoinShortestQueue()
    if name == "JSQd":
        if not 1 <= spec.d <= k:
            raise ValueError(f"JSQ-d needs 1 <= d <= k, got d={spec.d}, k={k}")
        return JSQd(spec.d)
    if name == "SITA-E":
        if spec.cutoffs is not None:
            if len(spec.cutoffs) != k - 1:
                raise ValueError("SITA-E needs exactly k-1 cutoffs")
            return SITAE(tuple(spec.cutoffs))
        if dist is None or lam is None:
            raise ValueError("SITA-E needs a size distribution and arrival rate")
        return SITAE.from_distribution(dist, lam, k)
    raise ValueError(f"unknown policy {name!r}")


def dispatch(policy: Policy, x: float, candidates: Sequence[int], obs: ServerObservation, rng) -> int:
    return policy.dispatch(x, candidates, obs, rng)
