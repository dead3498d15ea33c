"""Job-size distributions with exact sampling and partial-moment integrals.

Every distribution exposes the pieces the guardrail analysis needs:
``partial_first(y)`` is the integral of ``t f(t)`` over sizes ``<= y`` and
``partial_second(y)`` the same for ``t**2 f(t)``.  Atomic laws (Bimodal,
Deterministic) use atom sums.  Passing ``strict=True`` restricts to sizes
``< y``, which is what rank classes ``[c**r, c**(r+1))`` need.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate, special


class SizeDistribution:
    """Base class.  Subclasses are frozen dataclasses."""

    name = "base"

    # -- moments ---------------------------------------------------------
    def mean(self) -> float:
        return self.partial_first(math.inf)

    def second_moment(self) -> float:
        return self.partial_second(math.inf)

    def moments(self) -> tuple[float, float]:
        return self.mean(), self.second_moment()

    def scv(self) -> float:
        m1, m2 = self.moments()
        return m2 / m1**2 - 1.0

    # -- distribution functions -----------------------------------------
    def support(self) -> tuple[float, float]:
        raise NotImplementedError

    def pdf(self, x: float) -> float:
        """Density of the continuous part (0 for purely atomic laws)."""
        return 0.0

    def atoms(self) -> list[tuple[float, float]]:
        return []

    def sf(self, y: float, strict: bool = False) -> float:
        """P(X > y), or P(X >= y) when ``strict``."""
        raise NotImplementedError

    def partial_first(self, y: float, strict: bool = False) -> float:
        raise NotImplementedError

    def partial_second(self, y: float, strict: bool = False) -> float:
        raise NotImplementedError

    def partial_load(self, lam: float, y: float, strict: bool = False) -> float:
        return lam * self.partial_first(y, strict)

    # -- sampling --------------------------------------------------------
    def sample_array(self, rng: np.random.Generator, n: int) -> np.ndarray:
        raise NotImplementedError

    def sample(self, rng: np.random.Generator) -> float:
        return float(self.sample_array(rng, 1)[0])

    # -- integration -----------------------------------------------------
    def integration_range(self) -> tuple[float, float]:
        """Finite interval carrying all but ~1e-16 of the mass."""
        return self.support()

    def expect(self, fn: Callable[[float], float],
               breakpoints: Sequence[float] | None = None,
               epsrel: float = 1e-10) -> float:
        """E[fn(X)]: piecewise adaptive quadrature plus atom sums.

        ``breakpoints`` split the continuous range where ``fn`` jumps
        (rank boundaries, typically).
        """
        total = sum(p * fn(a) for a, p in self.atoms())
        lo, hi = self.integration_range()
        if hi <= lo:
            return total
        pts = [lo] + sorted(b for b in (breakpoints or ()) if lo < b < hi) + [hi]
        for a, b in zip(pts[:-1], pts[1:]):
            val, _ = integrate.quad(lambda t: fn(t) * self.pdf(t), a, b,
                                    epsabs=0.0, epsrel=epsrel, limit=200)
            total += val
        return total

    def describe(self) -> dict:
        raise NotImplementedError


def _check_positive(**kw):
    for k, v in kw.items():
        if not (v > 0 and math.isfinite(v)):
            raise ValueError(f"{k} must be positive and finite, got {v!r}")


@dataclass(frozen=True)
class Deterministic(SizeDistribution):
    value: float
    name = "deterministic"

    def __post_init__(self):
        _check_positive(value=self.value)

    def support(self):
        return (self.value, self.value)

    def atoms(self):
        return [(self.value, 1.0)]

    def sf(self, y, strict=False):
        return float(self.value >= y if strict else self.value > y)

    def partial_first(self, y, strict=False):
        inside = self.value < y if strict else self.value <= y
        return self.value if inside else 0.0

    def partial_second(self, y, strict=False):
        inside = self.value < y if strict else self.value <= y
        return self.value**2 if inside else 0.0

    def sample_array(self, rng, n):
        return np.full(n, self.value, dtype=float)

    def describe(self):
        return {"name": self.name, "value": self.value}


@dataclass(frozen=True)
class Bimodal(SizeDistribution):
    small: float
    large: float
    p_small: float
    name = "bimodal"

    def __post_init__(self):
        _check_positive(small=self.small, large=self.large)
        if not 0.0 <= self.p_small <= 1.0:
            raise ValueError("p_small must lie in [0, 1]")
        if not self.small < self.large:
            raise ValueError("Bimodal requires small < large")

    def support(self):
        return (self.small, self.large)

    def atoms(self):
        return [(self.small, self.p_small), (self.large, 1.0 - self.p_small)]

    def sf(self, y, strict=False):
        return sum(p for a, p in self.atoms() if (a >= y if strict else a > y))

    def partial_first(self, y, strict=False):
        return sum(p * a for a, p in self.atoms() if (a < y if strict else a <= y))

    def partial_second(self, y, strict=False):
        return sum(p * a * a for a, p in self.atoms() if (a < y if strict else a <= y))

    def sample_array(self, rng, n):
        u = rng.random(n)
        return np.where(u < self.p_small, float(self.small), float(self.large))

    def describe(self):
        return {"name": self.name, "small": self.small, "large": self.large,
                "p_small": self.p_small}


@dataclass(frozen=True)
class Exponential(SizeDistribution):
    mean_size: float = 1.0
    name = "exponential"

    def __post_init__(self):
        _check_positive(mean=self.mean_size)

    def support(self):
        return (0.0, math.inf)

    def integration_range(self):
        return (0.0, 45.0 * self.mean_size)

    def pdf(self, x):
        if x < 0:
            return 0.0
        return math.exp(-x / self.mean_size) / self.mean_size

    def sf(self, y, strict=False):
        return 1.0 if y <= 0 else math.exp(-y / self.mean_size)

    def _partial(self, n, y):
        # int_0^y t^n f(t) dt = m^n n! P(n+1, y/m)
        if y <= 0:
            return 0.0
        m = self.mean_size
        if math.isinf(y):
            return m**n * math.factorial(n)
        return m**n * math.factorial(n) * float(special.gammainc(n + 1, y / m))

    def partial_first(self, y, strict=False):
        return self._partial(1, y)

    def partial_second(self, y, strict=False):
        return self._partial(2, y)

    def sample_array(self, rng, n):
        return rng.exponential(self.mean_size, n)

    def describe(self):
        return {"name": self.name, "mean": self.mean_size}


@dataclass(frozen=True)
class Hyperexponential(SizeDistribution):
    branch_rates: tuple[float, ...]
    branch_probs: tuple[float, ...]
    name = "hyperexponential"

    def __post_init__(self):
        object.__setattr__(self, "branch_rates", tuple(float(r) for r in self.branch_rates))
        object.__setattr__(self, "branch_probs", tuple(float(p) for p in self.branch_probs))
        if len(self.branch_rates) != len(self.branch_probs) or not self.branch_rates:
            raise ValueError("branch_rates and branch_probs must be nonempty and equal length")
        for r in self.branch_rates:
            _check_positive(rate=r)
        if any(p < 0 or p > 1 for p in self.branch_probs):
            raise ValueError("branch probabilities must lie in [0, 1]")
        if abs(sum(self.branch_probs) - 1.0) > 1e-12:
            raise ValueError("branch probabilities must sum to 1")

    @classmethod
    def balanced(cls, mean: float, scv: float) -> "Hyperexponential":
        """Two-branch H2 with balanced means (each branch carries half the mean)."""
        _check_positive(mean=mean)
        if scv <= 1:
            raise ValueError("balanced H2 needs C^2 > 1")
        p1 = 0.5 * (1.0 + math.sqrt((scv - 1.0) / (scv + 1.0)))
        p2 = 1.0 - p1
        return cls((2.0 * p1 / mean, 2.0 * p2 / mean), (p1, p2))

    def _branches(self):
        return [Exponential(1.0 / r) for r in self.branch_rates]

    def support(self):
        return (0.0, math.inf)

    def integration_range(self):
        return (0.0, 45.0 / min(self.branch_rates))

    def pdf(self, x):
        return sum(p * b.pdf(x) for p, b in zip(self.branch_probs, self._branches()))

    def sf(self, y, strict=False):
        return sum(p * b.sf(y) for p, b in zip(self.branch_probs, self._branches()))

    def partial_first(self, y, strict=False):
        return sum(p * b.partial_first(y) for p, b in zip(self.branch_probs, self._branches()))

    def partial_second(self, y, strict=False):
        return sum(p * b.partial_second(y) for p, b in zip(self.branch_probs, self._branches()))

    def expect(self, fn, breakpoints=None, epsrel=1e-10):
        # breakpoints at each branch scale keep quad from missing the slow branch
        extra = [1.0 / r for r in self.branch_rates]
        return super().expect(fn, list(breakpoints or ()) + extra, epsrel)

    def sample_array(self, rng, n):
        branch = rng.choice(len(self.branch_rates), size=n, p=self.branch_probs)
        scale = 1.0 / np.asarray(self.branch_rates)
        return rng.exponential(1.0, n) * scale[branch]

    def describe(self):
        return {"name": self.name, "branch_rates": list(self.branch_rates),
                "branch_probs": list(self.branch_probs)}


@dataclass(frozen=True)
class BoundedPareto(SizeDistribution):
    alpha: float
    lower: float
    upper: float
    name = "bounded_pareto"
    _norm: float = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        _check_positive(alpha=self.alpha, lower=self.lower, upper=self.upper)
        if not self.lower < self.upper:
            raise ValueError("BoundedPareto requires lower < upper")
        a, lo, hi = self.alpha, self.lower, self.upper
        object.__setattr__(self, "_norm", a * lo**a / (1.0 - (lo / hi) ** a))

    def support(self):
        return (self.lower, self.upper)

    def pdf(self, x):
        if x < self.lower or x > self.upper:
            return 0.0
        return self._norm * x ** (-self.alpha - 1.0)

    def sf(self, y, strict=False):
        if y <= self.lower:
            return 1.0
        if y >= self.upper:
            return 0.0
        a, lo, hi = self.alpha, self.lower, self.upper
        return (lo**a * y**-a - lo**a * hi**-a) / (1.0 - (lo / hi) ** a)

    def _partial(self, n, y):
        # int_L^y t^n C t^(-a-1) dt
        y = min(y, self.upper)
        if y <= self.lower:
            return 0.0
        e = n - self.alpha
        if abs(e) < 1e-12:
            return self._norm * math.log(y / self.lower)
        return self._norm * (y**e - self.lower**e) / e

    def partial_first(self, y, strict=False):
        return self._partial(1, y)

    def partial_second(self, y, strict=False):
        return self._partial(2, y)

    def sample_array(self, rng, n):
        a, lo, hi = self.alpha, self.lower, self.upper
        u = rng.random(n)
        return lo * (1.0 - u * (1.0 - (lo / hi) ** a)) ** (-1.0 / a)

    def describe(self):
        return {"name": self.name, "alpha": self.alpha, "lower": self.lower,
                "upper": self.upper}


@dataclass(frozen=True)
class LoadSpec:
    rho: float
    arrival_rate: float

    @classmethod
    def from_rho(cls, dist: SizeDistribution, rho: float) -> "LoadSpec":
        if not 0.0 < rho < 1.0:
            raise ValueError(f"rho must lie strictly inside (0, 1), got {rho!r}")
        return cls(rho, rho / dist.mean())


# Module-level conveniences mirroring the method API.

def sample(dist: SizeDistribution, rng: np.random.Generator) -> float:
    return dist.sample(rng)


def partial_load(dist: SizeDistribution, lam: float, y: float) -> float:
    if y < 0:
        raise ValueError("y must be nonnegative")
    return dist.partial_load(lam, y)


def partial_second_moment(dist: SizeDistribution, y: float) -> float:
    if y < 0:
        raise ValueError("y must be nonnegative")
    return dist.partial_second(y)


def moments(dist: SizeDistribution) -> tuple[float, float]:
    return dist.moments()


def quad_partial(dist: SizeDistribution, n: int, y: float) -> float:
    """Quadrature oracle for int_0^y t^n f(t) dt; independent of the closed forms."""
    total = sum(p * a**n for a, p in dist.atoms() if a <= y)
    lo, hi = dist.integration_range()
    hi = min(hi, y)
    if hi > lo:
        pts = [lo, hi]
        if isinstance(dist, Hyperexponential):
            pts = sorted({lo, hi, *(min(hi, 1.0 / r) for r in dist.branch_rates)})
        for a, b in zip(pts[:-1], pts[1:]):
            if b > a:
                val, _ = integrate.quad(lambda t: t**n * dist.pdf(t), a, b,
                                        epsabs=0.0, epsrel=1e-12, limit=400)
                total += val
    return total


_REGISTRY = {
    "deterministic": lambda p: Deterministic(float(p["value"])),
    "bimodal": lambda p: Bimodal(float(p["small"]), float(p["large"]), float(p["p_small"])),
    "exponential": lambda p: Exponential(float(p.get("mean", 1.0))),
    "bounded_pareto": lambda p: BoundedPareto(float(p["alpha"]), float(p["lower"]), float(p["upper"])),
    "hyperexponential": lambda p: (
        Hyperexponential.balanced(float(p["mean"]), float(p["scv"]))
        if "scv" in p else Hyperexponential(tuple(p["branch_rates"]), tuple(p["branch_probs"]))),
}


def from_config(cfg: dict) -> SizeDistribution:
    """Build a distribution from ``{"name": ..., **params}``."""
    params = dict(cfg)
    name = str(params.pop("name", "")).lower().replace("-", "_")
    aliases = {"bp": "bounded_pareto", "pareto": "bounded_pareto", "exp": "exponential",
               "h2": "hyperexponential", "hyperexp": "hyperexponential"}
    name = aliases.get(name, name)
    if name not in _REGISTRY:
        raise ValueError(f"unknown distribution {name!r}")
    return _REGISTRY[name](params)
