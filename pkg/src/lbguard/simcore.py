"""Event-driven k-server simulation with guarded dispatching.

Two engines run the same model on the same pre-drawn random inputs:

* ``engine="reference"`` glues the object API (``GuardrailState``,
  ``ServerQueue``, policies, dispatcher nodes) together with a heap calendar.
* ``engine="fast"`` is a numba kernel in :mod:`lbguard.fastsim`.

Given a seed they produce identical dispatch decisions and response times;
the test suite checks this.  Servers run at speed 1/k unless ``speeds`` is
given, so a job of size x needs k*x time alone on a server.

Simultaneous events run in the order completions (by server index), reset
message deliveries (by send order), arrivals.
"""
from __future__ import annotations

import heapq
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy import stats

from .guardrail import (ClassGuardrailState, GuardrailConfig, GuardrailState, REL_TOL,
                        rank_width, summed_counters, _row_violations)
from .netsim import (DIGEST_SEED, DelaySpec, DispatcherNode, ResetMessage, digest_update,
                     handle_reset_message, route_arrival)
from .policy import PolicySpec, ServerObservation, build_policy
from .server import Discipline, Job, ServerQueue
from .sizedist import SizeDistribution

log = logging.getLogger(__name__)

GUARD_OFF = math.inf  # tightness sentinel: safe set is always every server


class SimulationAborted(RuntimeError):
    def __init__(self, seed: int, message: str):
        super().__init__(f"trial seed {seed}: {message}")
        self.seed = seed


@dataclass
class SimConfig:
    k: int
    dist: SizeDistribution
    rho: float
    policy: PolicySpec = field(default_factory=lambda: PolicySpec("Random"))
    guarded: bool = False
    g: float = 1.0
    scheduling: Discipline | str = Discipline.SRPT
    trials: int = 1
    jobs_per_trial: int = 100_000
    warmup_fraction: float = 0.2
    seed: int = 0
    dispatchers: int = 1
    reset_delay: DelaySpec | None = None
    resets: bool = True
    speeds: tuple[float, ...] | None = None
    c: float | None = None
    class_boundaries: tuple[float, ...] | None = None
    check_invariants: bool = True
    renormalize_every: int = 65536
    max_in_system: int = 1_000_000
    engine: str = "fast"

    def __post_init__(self):
        self.scheduling = Discipline.parse(self.scheduling)
        if isinstance(self.policy, str):
            self.policy = PolicySpec(self.policy)
        if not 0.0 < self.rho < 1.0:
            raise ValueError(f"rho must lie strictly inside (0, 1), got {self.rho!r}")
        if self.k < 1:
            raise ValueError("k must be positive")
        if self.jobs_per_trial and self.jobs_per_trial < 10 * self.k:
            raise ValueError("jobs_per_trial must be 0 or at least 10*k")
        if not 0.0 <= self.warmup_fraction < 1.0:
            raise ValueError("warmup_fraction must lie in [0, 1)")
        if self.trials < 1:
            raise ValueError("trials must be positive")
        if self.dispatchers < 1:
            raise ValueError("dispatchers must be positive")
        if self.guarded and not self.g >= 1:
            raise ValueError("tightness g must be >= 1")
        if self.speeds is not None:
            self.speeds = tuple(float(s) for s in self.speeds)
            if len(self.speeds) != self.k or min(self.speeds) <= 0:
                raise ValueError("speeds must list one positive speed per server")
        if self.c is not None and not 1.0 < self.c <= 2.0:
            raise ValueError("c must lie in (1, 2]")
        if self.engine not in ("fast", "reference"):
            raise ValueError("engine must be 'fast' or 'reference'")
        if self.policy.name == "JSQd" and not 1 <= self.policy.d <= self.k:
            raise ValueError("JSQ-d needs 1 <= d <= k")

    # -- derived quantities -----------------------------------------------
    @property
    def arrival_rate(self) -> float:
        return self.rho / self.dist.mean()

    @property
    def rank_width(self) -> float:
        return self.c if self.c is not None else rank_width(self.rho)

    @property
    def server_speeds(self) -> tuple[float, ...]:
        return self.speeds if self.speeds is not None else (1.0 / self.k,) * self.k

    @property
    def effective_g(self) -> float:
        return self.g if self.guarded else GUARD_OFF

    def guardrail_config(self) -> GuardrailConfig:
        g = self.g if self.guarded else 1.0
        return GuardrailConfig(g, self.rank_width, self.k, self.speeds)

    def new_guardrail_state(self) -> GuardrailState:
        if self.class_boundaries is not None:
            return ClassGuardrailState(self.class_boundaries, self.k, self.speeds)
        return GuardrailState(self.guardrail_config())

    def label(self) -> str:
        return ("G-" if self.guarded else "") + self.policy.label

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dist"] = self.dist.describe()
        d["policy"] = {"name": self.policy.name, "d": self.policy.d,
                       "cutoffs": list(self.policy.cutoffs) if self.policy.cutoffs else None}
        d["scheduling"] = self.scheduling.value
        d["reset_delay"] = asdict(self.reset_delay) if self.reset_delay else None
        d["c_effective"] = self.rank_width
        return d


# ---------------------------------------------------------------------------
# Random inputs shared by both engines


@dataclass
class TrialInputs:
    seed: int
    arrivals: np.ndarray
    sizes: np.ndarray
    bins: np.ndarray          # guardrail/Prio bin index, 0..n_bins-1
    bin_offset: int           # rank = bin + bin_offset (rank mode)
    n_bins: int
    thresholds: np.ndarray    # counter spread limit per bin
    lemma_bounds: np.ndarray  # work-imbalance limit per bin
    policy_u: np.ndarray
    route_u: np.ndarray
    delays: np.ndarray


def ranks_array(sizes: np.ndarray, c: float) -> np.ndarray:
    """Vectorized ``rank_of`` with the same boundary repair."""
    r = np.floor(np.log(sizes) / math.log(c))
    r -= np.power(c, r) > sizes
    r += np.power(c, r + 1) <= sizes
    return r.astype(np.int64)


def make_trial_inputs(cfg: SimConfig, seed: int) -> TrialInputs:
    n = cfg.jobs_per_trial
    ss = np.random.SeedSequence(seed)
    s_arr, s_size, s_pol, s_route, s_delay = (np.random.default_rng(s) for s in ss.spawn(5))
    lam = cfg.arrival_rate
    arrivals = np.cumsum(s_arr.exponential(1.0 / lam, n)) if n else np.zeros(0)
    sizes = np.asarray(cfg.dist.sample_array(s_size, n), dtype=float) if n else np.zeros(0)
    per_job = cfg.policy.d if cfg.policy.name == "JSQd" else 1
    policy_u = s_pol.random(n * per_job) if cfg.policy.name in ("Random", "JSQd", "SITA-E") else np.zeros(0)
    route_u = s_route.random(n) if cfg.dispatchers > 1 else np.zeros(0)
    delay = cfg.reset_delay
    delays = (delay.sample_array(s_delay, n * cfg.dispatchers)
              if delay is not None and not delay.is_zero else np.zeros(0))

    g_eff = cfg.g if cfg.guarded else 1.0
    c = cfg.rank_width
    scale = 1.0 if cfg.speeds is None else 1.0 / min(cfg.speeds)
    if cfg.class_boundaries is not None:
        st = ClassGuardrailState(cfg.class_boundaries, cfg.k, cfg.speeds)
        bins = np.array([st.bin_of(x) for x in sizes], dtype=np.int64)
        offset = 0
        n_bins = st.n_classes + 1
        thresholds = np.array([st.threshold(b) for b in range(n_bins)])
        lemma = np.full(n_bins, np.nan)
    else:
        ranks = ranks_array(sizes, c) if n else np.zeros(0, dtype=np.int64)
        offset = int(ranks.min()) if n else 0
        bins = ranks - offset
        n_bins = int(bins.max()) + 1 if n else 1
        st = GuardrailState(GuardrailConfig(g_eff, c, cfg.k, cfg.speeds))
        thresholds = np.array([st.threshold(b + offset) for b in range(n_bins)])
        # max spread of rank <= r work between two servers, d dispatchers => tightness d*g
        gd = g_eff * cfg.dispatchers
        lemma = np.array([2.0 * gd * c ** (b + offset + 2) / (c - 1.0) for b in range(n_bins)])
    if not cfg.guarded:
        thresholds = np.full(n_bins, np.inf)
    return TrialInputs(seed, arrivals, sizes, bins, offset, n_bins, thresholds, lemma,
                       policy_u, route_u, delays)


class _Stream:
    """Sequential reader over a pre-drawn uniform array (``random()`` only)."""

    def __init__(self, values: np.ndarray):
        self.values = values
        self.pos = 0

    def random(self) -> float:
        v = float(self.values[self.pos])
        self.pos += 1
        return v


# ---------------------------------------------------------------------------
# Trial record and statistics


@dataclass
class TrialRecord:
    seed: int
    response: np.ndarray          # per job id
    completion_order: np.ndarray  # job ids in completion order
    server: np.ndarray
    dispatcher: np.ndarray
    bins: np.ndarray
    bin_offset: int
    arrivals: np.ndarray
    tight_violations: int = 0
    tight_max_excess: float = 0.0
    global_violations: int = 0
    global_max_excess: float = 0.0
    lemma_violations: int = 0
    lemma_max_excess: float = 0.0
    max_imbalance: np.ndarray | None = None
    resets_applied: int = 0
    resets_ignored: int = 0
    unsafe_resets: int = 0
    area_in_system: float = 0.0
    horizon: float = 0.0
    sum_seen_at_arrival: float = 0.0
    max_in_system: int = 0

    @property
    def jobs(self) -> int:
        return len(self.response)

    def kept(self, warmup_fraction: float) -> np.ndarray:
        """Job ids surviving warmup (by completion order)."""
        drop = int(math.floor(warmup_fraction * len(self.completion_order)))
        return self.completion_order[drop:]

    def mean_response(self, warmup_fraction: float = 0.0) -> float:
        ids = self.kept(warmup_fraction)
        return float(self.response[ids].mean()) if len(ids) else math.nan

    def time_avg_in_system(self) -> float:
        return self.area_in_system / self.horizon if self.horizon > 0 else 0.0

    def arrival_avg_in_system(self) -> float:
        return self.sum_seen_at_arrival / self.jobs if self.jobs else 0.0

    def decision_trace(self) -> list[tuple[int, int]]:
        return list(zip(self.dispatcher.tolist(), self.server.tolist()))


@dataclass
class RunStats:
    mean_T: float
    ci_halfwidth_95: float
    per_rank_mean_T: dict[int, float]
    per_rank_ci95: dict[int, float]
    completed: int
    max_tightness_violation: float
    max_work_imbalance_by_rank: dict[int, float]
    trial_means: list[float]
    tightness_violations: int = 0
    global_violations: int = 0
    global_max_excess: float = 0.0
    lemma_violations: int = 0
    lemma_max_excess: float = 0.0
    resets_applied: int = 0
    resets_ignored: int = 0
    unsafe_resets: int = 0
    seeds: list[int] = field(default_factory=list)

    @property
    def violations(self) -> int:
        return (self.tightness_violations + self.global_violations + self.lemma_violations
                + self.unsafe_resets)

    def summary(self) -> dict:
        return {
            "mean_T": self.mean_T, "ci95_halfwidth": self.ci_halfwidth_95,
            "completed": self.completed, "tightness_violations": self.tightness_violations,
            "max_tightness_violation": self.max_tightness_violation,
            "global_violations": self.global_violations,
            "lemma_violations": self.lemma_violations,
            "lemma_max_excess": self.lemma_max_excess,
            "resets_applied": self.resets_applied, "resets_ignored": self.resets_ignored,
            "unsafe_resets": self.unsafe_resets,
        }


def t_halfwidth(values: Sequence[float], level: float = 0.95) -> float:
    v = np.asarray(values, dtype=float)
    if len(v) < 2:
        return math.inf
    sd = v.std(ddof=1)
    if sd == 0:
        return 0.0
    return float(stats.t.ppf(0.5 + level / 2, len(v) - 1) * sd / math.sqrt(len(v)))


def aggregate(cfg: SimConfig, records: Sequence[TrialRecord]) -> RunStats:
    means, completed = [], 0
    rank_trial_means: dict[int, list[float]] = {}
    rank_sum: dict[int, float] = {}
    rank_cnt: dict[int, int] = {}
    imbalance: dict[int, float] = {}
    for rec in records:
        ids = rec.kept(cfg.warmup_fraction)
        completed += len(ids)
        if len(ids) == 0:
            continue
        resp = rec.response[ids]
        means.append(float(resp.mean()))
        b = rec.bins[ids]
        sums = np.bincount(b, weights=resp)
        cnts = np.bincount(b)
        for i in np.nonzero(cnts)[0]:
            r = int(i) + rec.bin_offset
            rank_sum[r] = rank_sum.get(r, 0.0) + float(sums[i])
            rank_cnt[r] = rank_cnt.get(r, 0) + int(cnts[i])
            rank_trial_means.setdefault(r, []).append(float(sums[i] / cnts[i]))
        if rec.max_imbalance is not None:
            for i, v in enumerate(rec.max_imbalance):
                if v > 0:
                    r = i + rec.bin_offset
                    imbalance[r] = max(imbalance.get(r, 0.0), float(v))
    return RunStats(
        mean_T=float(np.mean(means)) if means else math.nan,
        ci_halfwidth_95=t_halfwidth(means),
        per_rank_mean_T={r: rank_sum[r] / rank_cnt[r] for r in sorted(rank_sum)},
        per_rank_ci95={r: t_halfwidth(v) for r, v in sorted(rank_trial_means.items())},
        completed=completed,
        max_tightness_violation=max((r.tight_max_excess for r in records), default=0.0),
        max_work_imbalance_by_rank=dict(sorted(imbalance.items())),
        trial_means=means,
        tightness_violations=sum(r.tight_violations for r in records),
        global_violations=sum(r.global_violations for r in records),
        global_max_excess=max((r.global_max_excess for r in records), default=0.0),
        lemma_violations=sum(r.lemma_violations for r in records),
        lemma_max_excess=max((r.lemma_max_excess for r in records), default=0.0),
        resets_applied=sum(r.resets_applied for r in records),
        resets_ignored=sum(r.resets_ignored for r in records),
        unsafe_resets=sum(r.unsafe_resets for r in records),
        seeds=[r.seed for r in records],
    )


# ---------------------------------------------------------------------------
# Reference engine


def work_balance_probe(servers: Sequence[ServerQueue], r: float, now: float | None = None) -> float:
    """max over server pairs of W_s^{<=r} - W_s'^{<=r}."""
    if len(servers) < 2:
        return 0.0
    w = [srv.remaining_work_below(r, now) for srv in servers]
    return max(w) - min(w)


class ReferenceEngine:
    def __init__(self, cfg: SimConfig, inputs: TrialInputs):
        self.cfg = cfg
        self.inp = inputs
        self.k = cfg.k
        self.t = 0.0
        speeds = cfg.server_speeds
        self.servers = [ServerQueue(cfg.scheduling, speeds[s]) for s in range(self.k)]
        d = cfg.dispatchers
        self.nodes = [DispatcherNode(j, self._new_state()) for j in range(d)]
        self.policies = [build_policy(cfg.policy, self.k, cfg.dist, cfg.arrival_rate)
                         for _ in range(d)]
        self.last_dispatch = [[-math.inf] * self.k for _ in range(d)]
        # server-side view: digest and count of ids received from each dispatcher
        self.server_digest = [[DIGEST_SEED] * d for _ in range(self.k)]
        self.server_count = [[0] * d for _ in range(self.k)]
        self.held_from = [[0] * d for _ in range(self.k)]
        self.policy_rng = _Stream(inputs.policy_u)
        self.route_rng = _Stream(inputs.route_u)
        self.delay_pos = 0
        self.calendar: list[tuple] = []
        self.version = [0] * self.k
        self.messages: dict[int, ResetMessage] = {}
        self.msg_seq = 0
        self.in_system = 0
        n = len(inputs.sizes)
        self.rec = TrialRecord(
            inputs.seed, np.zeros(n), np.zeros(n, dtype=np.int64), np.zeros(n, dtype=np.int32),
            np.zeros(n, dtype=np.int32), inputs.bins, inputs.bin_offset, inputs.arrivals,
            max_imbalance=np.zeros(inputs.n_bins))
        self.n_done = 0
        self.check = cfg.check_invariants
        self.probe = cfg.check_invariants and cfg.speeds is None and cfg.class_boundaries is None

    def _new_state(self) -> GuardrailState:
        st = self.cfg.new_guardrail_state()
        if not self.cfg.guarded:
            st.threshold = lambda b: math.inf
        return st

    # -- calendar ---------------------------------------------------------
    def _schedule_completion(self, s: int) -> None:
        self.version[s] += 1
        nc = self.servers[s].next_completion()
        if nc is not None:
            heapq.heappush(self.calendar, (nc[0], 0, s, self.version[s]))

    def _account(self, t: float) -> None:
        if self.inp_idx < len(self.inp.arrivals):
            self.rec.area_in_system += self.in_system * (t - self.t)
        self.t = t

    # -- run --------------------------------------------------------------
    def run(self) -> TrialRecord:
        arr = self.inp.arrivals
        n = len(arr)
        self.inp_idx = 0
        if n:
            heapq.heappush(self.calendar, (arr[0], 2, 0, 0))
        while self.calendar:
            t, cls, idx, ver = heapq.heappop(self.calendar)
            if cls == 0:
                if ver != self.version[idx]:
                    continue
                self._account(t)
                self._completion(idx, t)
            elif cls == 1:
                self._account(t)
                self._deliver(self.messages.pop(idx))
            else:
                self._account(t)
                self._arrival(idx, t)
                self.inp_idx = idx + 1
                if idx + 1 < n:
                    heapq.heappush(self.calendar, (arr[idx + 1], 2, idx + 1, 0))
                else:
                    self.rec.horizon = t
        return self.rec

    def _arrival(self, i: int, t: float) -> None:
        cfg, inp, rec = self.cfg, self.inp, self.rec
        x = float(inp.sizes[i])
        b = int(inp.bins[i])
        for srv in self.servers:
            srv.advance(t)
        rec.sum_seen_at_arrival += self.in_system
        if self.probe and self.k > 1:
            self._probe_lemma()
        j = route_arrival(cfg.dispatchers, self.route_rng)
        node = self.nodes[j]
        st = node.state
        if cfg.guarded:
            row = st.counters.get(b)
            if row is None:
                cands = list(range(self.k))
            else:
                limit = min(row) + float(inp.thresholds[b])
                w = st.config.weight
                cands = [s for s in range(self.k) if row[s] + x * w(s) <= limit]
        else:
            cands = list(range(self.k))
        obs = ServerObservation([len(srv) for srv in self.servers],
                                [srv.work for srv in self.servers],
                                self.last_dispatch[j])
        s = self.policies[j].dispatch(x, cands, obs, self.policy_rng)
        if cfg.guarded:
            row = st.counters.setdefault(b, [0.0] * self.k)
            row[s] += x * st.config.weight(s)
            if self.check:
                self._check_bin(b)
        node.note_dispatch(s, i)
        self.server_digest[s][j] = digest_update(self.server_digest[s][j], i)
        self.server_count[s][j] += 1
        self.held_from[s][j] += 1
        self.last_dispatch[j][s] = t
        rank = b + inp.bin_offset
        self.servers[s].enqueue(Job(i, x, b, t, dispatcher=j), t)
        rec.server[i] = s
        rec.dispatcher[i] = j
        self.in_system += 1
        rec.max_in_system = max(rec.max_in_system, self.in_system)
        if self.in_system > cfg.max_in_system:
            raise SimulationAborted(inp.seed, f"{self.in_system} jobs in system; unstable?")
        for srv_idx in range(self.k):
            self._schedule_completion(srv_idx)
        if cfg.guarded and cfg.renormalize_every and (i + 1) % cfg.renormalize_every == 0:
            for nd in self.nodes:
                nd.state.renormalize()

    def _completion(self, s: int, t: float) -> None:
        srv = self.servers[s]
        job = srv.complete(t)
        self.rec.response[job.id] = t - job.arrival_time
        self.rec.completion_order[self.n_done] = job.id
        self.n_done += 1
        self.in_system -= 1
        self.held_from[s][job.dispatcher] -= 1
        if srv.empty and self.cfg.guarded and self.cfg.resets:
            delay = self.cfg.reset_delay
            for j in range(self.cfg.dispatchers):
                if delay is None or delay.is_zero:
                    msg = ResetMessage(s, j, self.server_digest[s][j], t, t, self.server_count[s][j])
                    self._deliver(msg)
                else:
                    dt = float(self.inp.delays[self.delay_pos])
                    self.delay_pos += 1
                    msg = ResetMessage(s, j, self.server_digest[s][j], t, t + dt,
                                       self.server_count[s][j])
                    self.messages[self.msg_seq] = msg
                    heapq.heappush(self.calendar, (msg.deliver_time, 1, self.msg_seq, 0))
                    self.msg_seq += 1
        self._schedule_completion(s)

    def _deliver(self, msg: ResetMessage) -> None:
        node = self.nodes[msg.dispatcher]
        if handle_reset_message(node, msg):
            self.rec.resets_applied += 1
            if (self.held_from[msg.server][msg.dispatcher] > 0
                    or node.sent_counts[msg.server] != msg.received_count):
                self.rec.unsafe_resets += 1
            if self.check:
                for b in node.state.counters:
                    self._check_bin(b)
        else:
            self.rec.resets_ignored += 1

    # -- invariants -------------------------------------------------------
    def _check_bin(self, b: int) -> None:
        rec = self.rec
        thr = float(self.inp.thresholds[b])
        for nd in self.nodes:
            row = nd.state.counters.get(b)
            if row is None:
                continue
            excess = max(row) - min(row) - thr
            if excess > REL_TOL * max(1.0, abs(max(row))):
                rec.tight_violations += 1
            rec.tight_max_excess = max(rec.tight_max_excess, max(excess, 0.0))
        d = len(self.nodes)
        if d > 1:
            total = [0.0] * self.k
            for nd in self.nodes:
                row = nd.state.counters.get(b)
                if row is not None:
                    for s in range(self.k):
                        total[s] += row[s]
            excess = max(total) - min(total) - d * thr
            if excess > REL_TOL * max(1.0, abs(max(total))):
                rec.global_violations += 1
            rec.global_max_excess = max(rec.global_max_excess, max(excess, 0.0))

    def _probe_lemma(self) -> None:
        inp, rec = self.inp, self.rec
        nb = inp.n_bins
        cum = np.zeros((self.k, nb))
        for s, srv in enumerate(self.servers):
            for b, w in srv.work_by_rank.items():
                cum[s, b] += w
        cum = np.cumsum(cum, axis=1)
        spread = cum.max(axis=0) - cum.min(axis=0)
        np.maximum(rec.max_imbalance, spread, out=rec.max_imbalance)
        if self.cfg.scheduling is Discipline.PRIO:
            excess = spread - inp.lemma_bounds
            tol = REL_TOL * np.maximum(1.0, cum.max(axis=0))
            bad = excess > tol
            if bad.any():
                rec.lemma_violations += int(bad.sum())
            rec.lemma_max_excess = max(rec.lemma_max_excess, float(max(excess.max(), 0.0)))


# ---------------------------------------------------------------------------
# Public entry points


def run_trial(cfg: SimConfig, seed: int | None = None) -> TrialRecord:
    seed = cfg.seed if seed is None else seed
    inputs = make_trial_inputs(cfg, seed)
    if cfg.engine == "reference":
        return ReferenceEngine(cfg, inputs).run()
    from .fastsim import run_fast
    return run_fast(cfg, inputs)


def run_experiment(cfg: SimConfig, keep_records: bool = False):
    """Run ``cfg.trials`` trials with seeds ``seed + i`` and aggregate.

    Returns ``RunStats``, or ``(RunStats, records)`` with ``keep_records``.
    """
    records = []
    for i in range(cfg.trials):
        rec = run_trial(cfg, cfg.seed + i)
        records.append(rec)
        log.debug("trial %d seed %d mean_T %.4g", i, cfg.seed + i,
                  rec.mean_response(cfg.warmup_fraction))
    out = aggregate(cfg, records)
    return (out, records) if keep_records else out


def with_overrides(cfg: SimConfig, **kw) -> SimConfig:
    return replace(cfg, **kw)
