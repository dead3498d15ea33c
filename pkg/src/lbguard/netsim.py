"""Multiple dispatchers with local guardrails and delayed, hash-validated resets.

A server that empties sends each dispatcher a reset message carrying the
digest of the job ids it has received from that dispatcher.  The dispatcher
applies the reset only if the digest matches its own digest of what it sent,
i.e. nothing new went out since the server emptied.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .guardrail import GuardrailConfig, GuardrailState

MASK64 = (1 << 64) - 1
DIGEST_SEED = 0xCBF29CE484222325
DIGEST_MULT = 0x100000001B3


def _mix64(v: int) -> int:
    # splitmix64 finalizer
    v = (v + 0x9E3779B97F4A7C15) & MASK64
    v = ((v ^ (v >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    v = ((v ^ (v >> 27)) * 0x94D049BB133111EB) & MASK64
    return v ^ (v >> 31)


def digest_update(digest: int, job_id: int) -> int:
    """Order-sensitive 64-bit polynomial rolling hash step."""
    return (digest * DIGEST_MULT + _mix64(job_id)) & MASK64


@dataclass(frozen=True)
class DelaySpec:
    kind: str = "none"  # none | deterministic | exponential
    mean: float = 0.0

    def __post_init__(self):
        if self.kind not in ("none", "deterministic", "exponential"):
            raise ValueError(f"unknown delay kind {self.kind!r}")
        if self.mean < 0 or not math.isfinite(self.mean):
            raise ValueError("delay mean must be finite and nonnegative")

    @property
    def is_zero(self) -> bool:
        return self.kind == "none" or self.mean == 0.0

    def sample_array(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.is_zero:
            return np.zeros(n)
        if self.kind == "deterministic":
            return np.full(n, self.mean)
        return rng.exponential(self.mean, n)

    @classmethod
    def from_config(cls, cfg) -> "DelaySpec | None":
        if cfg is None:
            return None
        if isinstance(cfg, (int, float)):
            return cls("deterministic", float(cfg))
        return cls(str(cfg.get("kind", "exponential")), float(cfg.get("mean", 0.0)))


@dataclass
class ResetMessage:
    server: int
    dispatcher: int
    digest: int
    emit_time: float
    deliver_time: float
    received_count: int = 0

    def __post_init__(self):
        if self.deliver_time < self.emit_time:
            raise ValueError("a reset message cannot arrive before it was sent")


@dataclass
class DispatcherNode:
    id: int
    state: GuardrailState
    digests: list[int] = field(default_factory=list)
    sent_counts: list[int] = field(default_factory=list)
    applied: int = 0
    ignored: int = 0

    def __post_init__(self):
        k = self.state.k
        if not self.digests:
            self.digests = [DIGEST_SEED] * k
        if not self.sent_counts:
            self.sent_counts = [0] * k

    @classmethod
    def create(cls, id: int, config: GuardrailConfig) -> "DispatcherNode":
        return cls(id, GuardrailState(config))

    def note_dispatch(self, server: int, job_id: int) -> None:
        self.digests[server] = digest_update(self.digests[server], job_id)
        self.sent_counts[server] += 1


def route_arrival(d: int, rng) -> int:
    """Uniform choice of the dispatcher receiving the next arrival."""
    if d < 1:
        raise ValueError("need at least one dispatcher")
    if d == 1:
        return 0
    return min(int(rng.random() * d), d - 1)


def handle_reset_message(dispatcher: DispatcherNode, msg: ResetMessage) -> bool:
    if dispatcher.digests[msg.server] != msg.digest:
        dispatcher.ignored += 1
        return False
    dispatcher.state.reset(msg.server)
    dispatcher.applied += 1
    return True
