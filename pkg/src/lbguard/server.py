"""A single preemptive server: SRPT, Prio, PSJF or FCFS at a fixed speed.

All jobs, including the one in service, live in one heap; the served job is
the heap top.  Only the top depletes, so keys of waiting jobs never cross
between events and preemption checks at arrivals/completions are exact.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from enum import Enum


class Discipline(str, Enum):
    SRPT = "SRPT"
    PRIO = "Prio"
    PSJF = "PSJF"
    FCFS = "FCFS"

    @classmethod
    def parse(cls, name: str | "Discipline") -> "Discipline":
        if isinstance(name, Discipline):
            return name
        for d in cls:
            if d.value.lower() == str(name).lower():
                return d
        raise ValueError(f"unknown scheduling discipline {name!r}")


DISCIPLINE_CODES = {Discipline.SRPT: 0, Discipline.PRIO: 1, Discipline.PSJF: 2, Discipline.FCFS: 3}


@dataclass
class Job:
    id: int
    size: float
    rank: int
    arrival_time: float
    remaining: float = -1.0
    dispatcher: int = 0

    def __post_init__(self):
        if self.remaining < 0:
            self.remaining = self.size


class ServerQueue:
    def __init__(self, discipline: Discipline | str = Discipline.SRPT, speed: float = 1.0):
        if not speed > 0:
            raise ValueError("server speed must be positive")
        self.discipline = Discipline.parse(discipline)
        self.speed = float(speed)
        self._heap: list[list] = []  # [key, id, job]
        self._ids: set[int] = set()
        self.last_touch = 0.0
        self.work = 0.0
        self.work_by_rank: dict[int, float] = {}
        self.dispatched_by_rank: dict[int, float] = {}

    def __len__(self):
        return len(self._heap)

    @property
    def empty(self) -> bool:
        return not self._heap

    def _key(self, job: Job) -> float:
        d = self.discipline
        if d is Discipline.SRPT:
            return job.remaining
        if d is Discipline.PSJF:
            return job.size
        if d is Discipline.PRIO:
            return float(job.rank)
        return 0.0

    @property
    def serving(self) -> Job | None:
        return self._heap[0][2] if self._heap else None

    def advance(self, now: float) -> None:
        """Deplete the served job up to ``now``."""
        if self._heap:
            top = self._heap[0]
            job = top[2]
            amount = (now - self.last_touch) * self.speed
            job.remaining -= amount
            self.work -= amount
            self.work_by_rank[job.rank] -= amount
            if self.discipline is Discipline.SRPT:
                top[0] = job.remaining
        self.last_touch = now

    def enqueue(self, job: Job, now: float) -> None:
        if job.id in self._ids:
            raise AssertionError(f"job {job.id} already queued")
        self.advance(now)
        self._ids.add(job.id)
        heapq.heappush(self._heap, [self._key(job), job.id, job])
        self.work += job.remaining
        self.work_by_rank[job.rank] = self.work_by_rank.get(job.rank, 0.0) + job.remaining
        self.dispatched_by_rank[job.rank] = self.dispatched_by_rank.get(job.rank, 0.0) + job.size

    def next_completion(self, now: float | None = None) -> tuple[float, int] | None:
        if not self._heap:
            return None
        job = self._heap[0][2]
        # Lazy state: the served job has depleted since last_touch.
        return self.last_touch + job.remaining / self.speed, job.id

    def complete(self, now: float) -> Job:
        """Remove the served job, which must be finishing at ``now``."""
        self.advance(now)
        _, _, job = heapq.heappop(self._heap)
        self._ids.discard(job.id)
        self.work -= job.remaining
        self.work_by_rank[job.rank] -= job.remaining
        job.remaining = 0.0
        if not self._heap:
            self.work = 0.0
            for r in self.work_by_rank:
                self.work_by_rank[r] = 0.0
        return job

    def remaining_work_below(self, r: float, now: float | None = None) -> float:
        """Remaining work of jobs with rank <= r (``math.inf`` gives the total)."""
        if now is not None:
            self.advance(now)
        if math.isinf(r) and r > 0:
            return self.work
        return sum(w for rank, w in self.work_by_rank.items() if rank <= r)

    def dispatched_work_below(self, r: float) -> float:
        return sum(v for rank, v in self.dispatched_by_rank.items() if rank <= r)

    def jobs(self) -> list[Job]:
        return [entry[2] for entry in self._heap]


def enqueue(server: ServerQueue, job: Job, now: float) -> ServerQueue:
    server.enqueue(job, now)
    return server


def next_completion(server: ServerQueue, now: float) -> tuple[float, int] | None:
    return server.next_completion(now)


def remaining_work_below(server: ServerQueue, r: float) -> float:
    return server.remaining_work_below(r)
