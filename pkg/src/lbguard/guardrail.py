"""Guardrail work counters and the dispatch constraint they enforce.

For each rank ``r`` and server ``s`` the dispatcher keeps a counter
``G[r][s]`` of rank-``r`` work sent to ``s``.  A dispatch of a job of size
``x`` (rank ``r``) may only go to a server whose counter stays within
``g * c**(r+1)`` of the rank minimum.  When a server empties, its counters
drop to the per-rank minima (a reset).
"""
from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

# Slack for float comparisons against counter thresholds, relative to the
# magnitude of the counters involved.
REL_TOL = 1e-9


def rank_of(x: float, c: float) -> int:
    """floor(log_c x), repaired so that c**r <= x < c**(r+1) holds exactly."""
    if not x > 0:
        raise ValueError(f"rank_of needs x > 0, got {x!r}")
    if not c > 1:
        raise ValueError(f"rank_of needs c > 1, got {c!r}")
    r = math.floor(math.log(x) / math.log(c))
    while c**r > x:
        r -= 1
    while c ** (r + 1) <= x:
        r += 1
    return r


def rank_width(rho: float) -> float:
    """c = 1 + 1/(1 + ln(1/(1-rho)))."""
    if not 0.0 < rho < 1.0:
        raise ValueError(f"rho must lie strictly inside (0, 1), got {rho!r}")
    return 1.0 + 1.0 / (1.0 - math.log1p(-rho))


@dataclass(frozen=True)
class GuardrailConfig:
    tightness: float
    rank_width: float
    server_count: int
    server_speeds: tuple[float, ...] | None = None

    def __post_init__(self):
        if not self.tightness >= 1:
            raise ValueError("tightness g must be >= 1")
        if not 1.0 < self.rank_width <= 2.0:
            raise ValueError("rank width c must lie in (1, 2]")
        if self.server_count < 1:
            raise ValueError("need at least one server")
        if self.server_speeds is not None:
            speeds = tuple(float(s) for s in self.server_speeds)
            if len(speeds) != self.server_count or min(speeds) <= 0:
                raise ValueError("server_speeds must list one positive speed per server")
            object.__setattr__(self, "server_speeds", speeds)

    @property
    def heterogeneous(self) -> bool:
        return self.server_speeds is not None

    @property
    def time_scale(self) -> float:
        # Counters are in time units when speeds are explicit; widen the
        # threshold by 1/min speed so the rank-minimum server is always safe.
        if self.server_speeds is None:
            return 1.0
        return 1.0 / min(self.server_speeds)

    def weight(self, s: int) -> float:
        return 1.0 if self.server_speeds is None else 1.0 / self.server_speeds[s]


@dataclass(frozen=True)
class Violation:
    bin: int
    server_hi: int
    server_lo: int
    spread: float
    threshold: float


class GuardrailState:
    """Sparse per-rank counters.  Absent ranks read as all zeros."""

    def __init__(self, config: GuardrailConfig):
        self.config = config
        self.k = config.server_count
        self.counters: dict[int, list[float]] = {}

    # -- binning ---------------------------------------------------------
    def bin_of(self, x: float) -> int:
        return rank_of(x, self.config.rank_width)

    def threshold(self, b: int) -> float:
        cfg = self.config
        return cfg.tightness * cfg.rank_width ** (b + 1) * cfg.time_scale

    # -- queries ---------------------------------------------------------
    def get(self, b: int) -> list[float]:
        return list(self.counters.get(b, [0.0] * self.k))

    def safe_set(self, x: float) -> list[int]:
        if not x > 0:
            raise ValueError("job size must be positive")
        b = self.bin_of(x)
        row = self.counters.get(b)
        if row is None:
            return list(range(self.k))
        limit = min(row) + self.threshold(b)
        return [s for s in range(self.k) if row[s] + x * self.config.weight(s) <= limit]

    def check_tightness(self, scale: float = 1.0) -> list[Violation]:
        """Every (bin, server pair) whose spread exceeds ``scale * threshold``."""
        out = []
        for b in sorted(self.counters):
            out.extend(_row_violations(b, self.counters[b], scale * self.threshold(b)))
        return out

    # -- mutations -------------------------------------------------------
    def record_dispatch(self, s: int, x: float, check: bool = True) -> None:
        if check and s not in self.safe_set(x):
            raise AssertionError(f"server {s} is outside the safe set for size {x}")
        b = self.bin_of(x)
        row = self.counters.setdefault(b, [0.0] * self.k)
        row[s] += x * self.config.weight(s)

    def reset(self, s: int) -> None:
        for row in self.counters.values():
            row[s] = min(row)

    def renormalize(self) -> None:
        """Subtract each rank's minimum; differences are all that matter."""
        for row in self.counters.values():
            m = min(row)
            for i in range(self.k):
                row[i] -= m

    def snapshot(self) -> dict[str, list[float]]:
        return {str(b): list(row) for b, row in sorted(self.counters.items())}


def _row_violations(b: int, row: Sequence[float], threshold: float) -> list[Violation]:
    hi = max(range(len(row)), key=lambda i: (row[i], -i))
    tol = REL_TOL * max(1.0, abs(row[hi]))
    out = []
    for s_hi, v_hi in enumerate(row):
        for s_lo, v_lo in enumerate(row):
            if v_hi - v_lo > threshold + tol:
                out.append(Violation(b, s_hi, s_lo, v_hi - v_lo, threshold))
    return out


class ClassGuardrailState(GuardrailState):
    """Finite-class variant: class ``i`` covers ``[b_{i-1}, b_i)`` (the last class
    also includes its top boundary) and its counter spread is capped at ``b_i``.
    """

    def __init__(self, boundaries: Sequence[float], server_count: int,
                 server_speeds: Sequence[float] | None = None):
        bounds = [float(b) for b in boundaries]
        if len(bounds) < 2 or any(b2 <= b1 for b1, b2 in zip(bounds, bounds[1:])):
            raise ValueError("class boundaries must be strictly increasing, at least two")
        if bounds[0] < 0:
            raise ValueError("class boundaries must be nonnegative")
        self.boundaries = bounds
        cfg = GuardrailConfig(1.0, 2.0, server_count,
                              tuple(server_speeds) if server_speeds else None)
        super().__init__(cfg)

    @property
    def n_classes(self) -> int:
        return len(self.boundaries) - 1

    def bin_of(self, x: float) -> int:
        if not x > 0:
            raise ValueError("job size must be positive")
        if x > self.boundaries[-1]:
            raise ValueError(f"size {x} exceeds the top class boundary {self.boundaries[-1]}")
        if x < self.boundaries[0]:
            raise ValueError(f"size {x} is below the bottom class boundary")
        i = bisect.bisect_right(self.boundaries, x)
        return min(i, self.n_classes)

    def threshold(self, b: int) -> float:
        return self.boundaries[b] * self.config.time_scale

    def class_safe_set(self, x: float) -> list[int]:
        return self.safe_set(x)


def safe_set(state: GuardrailState, x: float) -> list[int]:
    return state.safe_set(x)


def record_dispatch(state: GuardrailState, s: int, x: float) -> GuardrailState:
    state.record_dispatch(s, x)
    return state


def reset(state: GuardrailState, s: int) -> GuardrailState:
    state.reset(s)
    return state


def check_tightness(state: GuardrailState) -> list[Violation]:
    return state.check_tightness()


def class_safe_set(state: ClassGuardrailState, x: float) -> list[int]:
    return state.class_safe_set(x)


def summed_counters(states: Iterable[GuardrailState]) -> dict[int, list[float]]:
    """Global counters of several dispatchers sharing one server set."""
    total: dict[int, list[float]] = {}
    for st in states:
        for b, row in st.counters.items():
            acc = total.setdefault(b, [0.0] * st.k)
            for i, v in enumerate(row):
                acc[i] += v
    return total


def check_global_tightness(states: Sequence[GuardrailState]) -> list[Violation]:
    """Violations of tightness d*g for the summed counters of d dispatchers."""
    d = len(states)
    ref = states[0]
    out = []
    for b, row in sorted(summed_counters(states).items()):
        out.extend(_row_violations(b, row, d * ref.threshold(b)))
    return out
