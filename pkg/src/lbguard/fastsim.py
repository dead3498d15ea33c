"""Compiled simulation kernel.

Mirrors ``ReferenceEngine`` operation for operation (same float arithmetic,
same event order, same consumption of the pre-drawn uniforms) on dense
arrays: per-server binary heaps keyed by (priority, job id), guardrail
counters as a (dispatcher, bin, server) array and a heap of pending reset
messages.
"""
from __future__ import annotations

import numpy as np
from numba import njit, uint64

from .simcore import SimConfig, SimulationAborted, TrialInputs, TrialRecord
from .server import DISCIPLINE_CODES
from .netsim import DIGEST_MULT, DIGEST_SEED
from .guardrail import REL_TOL

POLICY_CODES = {"Random": 0, "RR": 1, "LWL": 2, "JSQ": 3, "JSQd": 4, "SITA-E": 5}

REL_TOL_NB = REL_TOL
_SEED = np.uint64(DIGEST_SEED)


@njit(cache=True)
def _mix64(v):
    v = v + uint64(0x9E3779B97F4A7C15)
    v = (v ^ (v >> uint64(30))) * uint64(0xBF58476D1CE4E5B9)
    v = (v ^ (v >> uint64(27))) * uint64(0x94D049BB133111EB)
    return v ^ (v >> uint64(31))


@njit(cache=True)
def digest_update_nb(digest, job_id):
    return digest * uint64(DIGEST_MULT) + _mix64(uint64(job_id))


# -- per-server heaps over (key, id) --------------------------------------

@njit(cache=True)
def _less(k1, i1, k2, i2):
    return k1 < k2 or (k1 == k2 and i1 < i2)


@njit(cache=True)
def _hpush(hkey, hid, hsz, s, key, jid):
    pos = hsz[s]
    hsz[s] += 1
    while pos > 0:
        parent = (pos - 1) >> 1
        if _less(key, jid, hkey[s, parent], hid[s, parent]):
            hkey[s, pos] = hkey[s, parent]
            hid[s, pos] = hid[s, parent]
            pos = parent
        else:
            break
    hkey[s, pos] = key
    hid[s, pos] = jid


@njit(cache=True)
def _hpop(hkey, hid, hsz, s):
    top = hid[s, 0]
    hsz[s] -= 1
    n = hsz[s]
    if n == 0:
        return top
    key = hkey[s, n]
    jid = hid[s, n]
    pos = 0
    while True:
        child = 2 * pos + 1
        if child >= n:
            break
        if child + 1 < n and _less(hkey[s, child + 1], hid[s, child + 1], hkey[s, child], hid[s, child]):
            child += 1
        if _less(hkey[s, child], hid[s, child], key, jid):
            hkey[s, pos] = hkey[s, child]
            hid[s, pos] = hid[s, child]
            pos = child
        else:
            break
    hkey[s, pos] = key
    hid[s, pos] = jid
    return top


@njit(cache=True)
def _grow(hkey, hid):
    k, cap = hkey.shape
    nk = np.empty((k, cap * 2))
    ni = np.empty((k, cap * 2), dtype=np.int64)
    nk[:, :cap] = hkey
    ni[:, :cap] = hid
    return nk, ni


# -- reset-message heap over (time, seq) ----------------------------------

@njit(cache=True)
def _mpush(mt, mq, mn, time, seq):
    pos = mn
    while pos > 0:
        parent = (pos - 1) >> 1
        if _less(time, seq, mt[parent], mq[parent]):
            mt[pos] = mt[parent]
            mq[pos] = mq[parent]
            pos = parent
        else:
            break
    mt[pos] = time
    mq[pos] = seq


@njit(cache=True)
def _mpop(mt, mq, mn):
    # mn is the size before popping
    top = mq[0]
    n = mn - 1
    if n == 0:
        return top
    key = mt[n]
    sq = mq[n]
    pos = 0
    while True:
        child = 2 * pos + 1
        if child >= n:
            break
        if child + 1 < n and _less(mt[child + 1], mq[child + 1], mt[child], mq[child]):
            child += 1
        if _less(mt[child], mq[child], key, sq):
            mt[pos] = mt[child]
            mq[pos] = mq[child]
            pos = child
        else:
            break
    mt[pos] = key
    mq[pos] = sq
    return top


@njit(cache=True)
def _check_bin(G, nd, k, b, thr, tol_rel, out):
    # out: [tight_viol, tight_excess, global_viol, global_excess]
    for j in range(nd):
        mx = G[j, b, 0]
        mn = G[j, b, 0]
        for s in range(1, k):
            v = G[j, b, s]
            if v > mx:
                mx = v
            if v < mn:
                mn = v
        excess = mx - mn - thr
        if excess > tol_rel * max(1.0, abs(mx)):
            out[0] += 1
        if excess > out[1]:
            out[1] = excess
    if nd > 1:
        mx = -np.inf
        mn = np.inf
        for s in range(k):
            tot = 0.0
            for j in range(nd):
                tot += G[j, b, s]
            if tot > mx:
                mx = tot
            if tot < mn:
                mn = tot
        excess = mx - mn - nd * thr
        if excess > tol_rel * max(1.0, abs(mx)):
            out[2] += 1
        if excess > out[3]:
            out[3] = excess


@njit(cache=True)
def _reset(G, touched, j, s, nb, k):
    # only bins that exist in the sparse reference representation
    for b in range(nb):
        if not touched[j, b]:
            continue
        mn = G[j, b, 0]
        for q in range(1, k):
            if G[j, b, q] < mn:
                mn = G[j, b, q]
        G[j, b, s] = mn


@njit(cache=True)
def simulate(arr, sizes, bins, nb, k, speeds, weights, disc, pol, pol_d,
             cutoffs, atom_vals, atom_lo, atom_hi, guarded, thresh, nd, route_u,
             pol_u, resets_on, delays, check, probe, prio_lemma, lemma_bound,
             renorm_every, max_in_system, stats_out, max_imb):
    n = arr.shape[0]
    resp = np.zeros(n)
    order = np.zeros(n, dtype=np.int64)
    srv_of = np.zeros(n, dtype=np.int32)
    disp_of = np.zeros(n, dtype=np.int32)
    rem = sizes.copy()

    cap = 64
    hkey = np.empty((k, cap))
    hid = np.empty((k, cap), dtype=np.int64)
    hsz = np.zeros(k, dtype=np.int64)
    last = np.zeros(k)
    work = np.zeros(k)
    W = np.zeros((k, nb))
    comp = np.full(k, np.inf)

    G = np.zeros((nd, nb, k))
    touched = np.zeros((nd, nb), dtype=np.bool_)
    last_disp = np.full((nd, k), -np.inf)
    dig_sent = np.full((nd, k), _SEED)
    cnt_sent = np.zeros((nd, k), dtype=np.int64)
    dig_recv = np.full((k, nd), _SEED)
    cnt_recv = np.zeros((k, nd), dtype=np.int64)
    held = np.zeros((k, nd), dtype=np.int64)

    mcap = 64
    mt = np.empty(mcap)
    mq = np.empty(mcap, dtype=np.int64)
    mn = 0
    msg_srv = np.empty(mcap, dtype=np.int64)
    msg_disp = np.empty(mcap, dtype=np.int64)
    msg_dig = np.empty(mcap, dtype=np.uint64)
    msg_cnt = np.empty(mcap, dtype=np.int64)
    msg_seq = 0
    delay_pos = 0
    delayed = delays.shape[0] > 0

    chk = np.zeros(4)
    lemma_viol = 0
    lemma_excess = 0.0
    applied = 0
    ignored = 0
    unsafe = 0
    area = 0.0
    horizon = 0.0
    seen_sum = 0.0
    in_sys = 0
    max_in = 0
    pu = 0
    n_done = 0
    i = 0
    t = 0.0
    aborted = False
    cands = np.empty(k, dtype=np.int64)
    pool = np.empty(k, dtype=np.int64)
    cmax = np.empty(nb)
    cmin = np.empty(nb)

    while True:
        # -- choose next event: completion < message < arrival on ties
        s_best = -1
        t_comp = np.inf
        for s in range(k):
            if comp[s] < t_comp:
                t_comp = comp[s]
                s_best = s
        t_msg = mt[0] if mn > 0 else np.inf
        t_arr = arr[i] if i < n else np.inf
        if s_best < 0 and mn == 0 and i >= n:
            break
        if s_best >= 0 and t_comp <= t_msg and t_comp <= t_arr:
            kind = 0
            tn = t_comp
        elif mn > 0 and t_msg <= t_arr:
            kind = 1
            tn = t_msg
        else:
            kind = 2
            tn = t_arr
        if i < n:
            area += in_sys * (tn - t)
        t = tn

        if kind == 0:
            s = s_best
            # advance
            if hsz[s] > 0:
                jt = hid[s, 0]
                amount = (t - last[s]) * speeds[s]
                rem[jt] -= amount
                work[s] -= amount
                W[s, bins[jt]] -= amount
                if disc == 0:
                    hkey[s, 0] = rem[jt]
            last[s] = t
            jid = _hpop(hkey, hid, hsz, s)
            work[s] -= rem[jid]
            W[s, bins[jid]] -= rem[jid]
            rem[jid] = 0.0
            if hsz[s] == 0:
                work[s] = 0.0
                for b in range(nb):
                    W[s, b] = 0.0
            resp[jid] = t - arr[jid]
            order[n_done] = jid
            n_done += 1
            in_sys -= 1
            held[s, disp_of[jid]] -= 1
            if hsz[s] == 0 and guarded and resets_on:
                for j in range(nd):
                    if not delayed:
                        # immediate delivery: digests agree by construction
                        if dig_sent[j, s] == dig_recv[s, j]:
                            _reset(G, touched, j, s, nb, k)
                            applied += 1
                            if held[s, j] > 0 or cnt_sent[j, s] != cnt_recv[s, j]:
                                unsafe += 1
                            if check:
                                for b in range(nb):
                                    if touched[j, b]:
                                        _check_bin(G, nd, k, b, thresh[b], REL_TOL_NB, chk)
                        else:
                            ignored += 1
                    else:
                        if mn == mt.shape[0]:
                            new_cap = mt.shape[0] * 2
                            mt2 = np.empty(new_cap)
                            mq2 = np.empty(new_cap, dtype=np.int64)
                            mt2[:mn] = mt[:mn]
                            mq2[:mn] = mq[:mn]
                            mt = mt2
                            mq = mq2
                        if msg_seq == msg_srv.shape[0]:
                            new_cap = msg_srv.shape[0] * 2
                            a1 = np.empty(new_cap, dtype=np.int64)
                            a2 = np.empty(new_cap, dtype=np.int64)
                            a3 = np.empty(new_cap, dtype=np.uint64)
                            a4 = np.empty(new_cap, dtype=np.int64)
                            a1[:msg_seq] = msg_srv[:msg_seq]
                            a2[:msg_seq] = msg_disp[:msg_seq]
                            a3[:msg_seq] = msg_dig[:msg_seq]
                            a4[:msg_seq] = msg_cnt[:msg_seq]
                            msg_srv = a1
                            msg_disp = a2
                            msg_dig = a3
                            msg_cnt = a4
                        msg_srv[msg_seq] = s
                        msg_disp[msg_seq] = j
                        msg_dig[msg_seq] = dig_recv[s, j]
                        msg_cnt[msg_seq] = cnt_recv[s, j]
                        dt = delays[delay_pos]
                        delay_pos += 1
                        _mpush(mt, mq, mn, t + dt, msg_seq)
                        mn += 1
                        msg_seq += 1
            if hsz[s] > 0:
                comp[s] = last[s] + rem[hid[s, 0]] / speeds[s]
            else:
                comp[s] = np.inf

        elif kind == 1:
            q = _mpop(mt, mq, mn)
            mn -= 1
            s = msg_srv[q]
            j = msg_disp[q]
            if dig_sent[j, s] == msg_dig[q]:
                _reset(G, touched, j, s, nb, k)
                applied += 1
                if held[s, j] > 0 or cnt_sent[j, s] != msg_cnt[q]:
                    unsafe += 1
                if check:
                    for b in range(nb):
                        if touched[j, b]:
                            _check_bin(G, nd, k, b, thresh[b], REL_TOL_NB, chk)
            else:
                ignored += 1

        else:
            x = sizes[i]
            b = bins[i]
            for s in range(k):
                if hsz[s] > 0:
                    jt = hid[s, 0]
                    amount = (t - last[s]) * speeds[s]
                    rem[jt] -= amount
                    work[s] -= amount
                    W[s, bins[jt]] -= amount
                    if disc == 0:
                        hkey[s, 0] = rem[jt]
                last[s] = t
            seen_sum += in_sys
            if probe and k > 1:
                for bb in range(nb):
                    cmax[bb] = -np.inf
                    cmin[bb] = np.inf
                for s in range(k):
                    acc = 0.0
                    for bb in range(nb):
                        acc += W[s, bb]
                        if acc > cmax[bb]:
                            cmax[bb] = acc
                        if acc < cmin[bb]:
                            cmin[bb] = acc
                for bb in range(nb):
                    spread = cmax[bb] - cmin[bb]
                    if spread > max_imb[bb]:
                        max_imb[bb] = spread
                    if prio_lemma:
                        excess = spread - lemma_bound[bb]
                        if excess > REL_TOL_NB * max(1.0, cmax[bb]):
                            lemma_viol += 1
                        if excess > lemma_excess:
                            lemma_excess = excess
            # route
            j = 0
            if nd > 1:
                j = min(int(route_u[i] * nd), nd - 1)
            # safe set
            nc = 0
            if guarded and touched[j, b]:
                gmin = G[j, b, 0]
                for s in range(1, k):
                    if G[j, b, s] < gmin:
                        gmin = G[j, b, s]
                limit = gmin + thresh[b]
                for s in range(k):
                    if G[j, b, s] + x * weights[s] <= limit:
                        cands[nc] = s
                        nc += 1
            else:
                for s in range(k):
                    cands[s] = s
                nc = k
            # base policy
            if pol == 0:
                u = pol_u[pu]
                pu += 1
                idx = min(int(u * nc), nc - 1)
                s_sel = cands[idx]
            elif pol == 1:
                s_sel = cands[0]
                for q in range(1, nc):
                    c = cands[q]
                    if last_disp[j, c] < last_disp[j, s_sel]:
                        s_sel = c
            elif pol == 2:
                s_sel = cands[0]
                for q in range(1, nc):
                    c = cands[q]
                    if work[c] < work[s_sel]:
                        s_sel = c
            elif pol == 3:
                s_sel = cands[0]
                for q in range(1, nc):
                    c = cands[q]
                    if hsz[c] < hsz[s_sel]:
                        s_sel = c
            elif pol == 4:
                for q in range(nc):
                    pool[q] = cands[q]
                m = min(pol_d, nc)
                for q in range(m):
                    u = pol_u[pu]
                    pu += 1
                    r = q + min(int(u * (nc - q)), nc - q - 1)
                    tmp = pool[q]
                    pool[q] = pool[r]
                    pool[r] = tmp
                s_sel = pool[0]
                for q in range(1, m):
                    c = pool[q]
                    if hsz[c] < hsz[s_sel] or (hsz[c] == hsz[s_sel] and c < s_sel):
                        s_sel = c
            else:
                # SITA-E
                des = -1
                for a in range(atom_vals.shape[0]):
                    if x == atom_vals[a]:
                        u = pol_u[pu]
                        pu += 1
                        v = atom_lo[a] + u * (atom_hi[a] - atom_lo[a])
                        des = min(int(v * k), k - 1)
                        break
                if des < 0:
                    des = 0
                    while des < cutoffs.shape[0] and cutoffs[des] < x:
                        des += 1
                found = False
                for q in range(nc):
                    if cands[q] == des:
                        found = True
                        break
                if found:
                    s_sel = des
                else:
                    best = np.inf
                    s_sel = cands[0]
                    for q in range(nc):
                        c = cands[q]
                        lo = cutoffs[c - 1] if c > 0 else 0.0
                        hi = cutoffs[c] if c < k - 1 else np.inf
                        if lo <= x and x <= hi:
                            dd = 0.0
                        else:
                            dd = min(abs(x - lo), abs(x - hi))
                        if dd < best:
                            best = dd
                            s_sel = c
            s = s_sel
            if guarded:
                touched[j, b] = True
                G[j, b, s] += x * weights[s]
                if check:
                    _check_bin(G, nd, k, b, thresh[b], REL_TOL_NB, chk)
            dig_sent[j, s] = digest_update_nb(dig_sent[j, s], i)
            cnt_sent[j, s] += 1
            dig_recv[s, j] = digest_update_nb(dig_recv[s, j], i)
            cnt_recv[s, j] += 1
            held[s, j] += 1
            last_disp[j, s] = t
            # enqueue
            if hsz[s] == hkey.shape[1]:
                hkey, hid = _grow(hkey, hid)
            if disc == 0:
                key = rem[i]
            elif disc == 1:
                key = float(b)
            elif disc == 2:
                key = x
            else:
                key = 0.0
            _hpush(hkey, hid, hsz, s, key, i)
            work[s] += rem[i]
            W[s, b] += rem[i]
            srv_of[i] = s
            disp_of[i] = j
            in_sys += 1
            if in_sys > max_in:
                max_in = in_sys
            if in_sys > max_in_system:
                aborted = True
                break
            for q in range(k):
                if hsz[q] > 0:
                    comp[q] = last[q] + rem[hid[q, 0]] / speeds[q]
                else:
                    comp[q] = np.inf
            if guarded and renorm_every > 0 and (i + 1) % renorm_every == 0:
                for jj in range(nd):
                    for bb in range(nb):
                        if touched[jj, bb]:
                            gm = G[jj, bb, 0]
                            for q in range(1, k):
                                if G[jj, bb, q] < gm:
                                    gm = G[jj, bb, q]
                            for q in range(k):
                                G[jj, bb, q] -= gm
            if i == n - 1:
                horizon = t
            i += 1

    stats_out[0] = chk[0]
    stats_out[1] = chk[1]
    stats_out[2] = chk[2]
    stats_out[3] = chk[3]
    stats_out[4] = lemma_viol
    stats_out[5] = lemma_excess
    stats_out[6] = applied
    stats_out[7] = ignored
    stats_out[8] = unsafe
    stats_out[9] = area
    stats_out[10] = horizon
    stats_out[11] = seen_sum
    stats_out[12] = max_in
    stats_out[13] = 1.0 if aborted else 0.0
    stats_out[14] = n_done
    return resp, order, srv_of, disp_of



def run_fast(cfg: SimConfig, inp: TrialInputs) -> TrialRecord:
    from .policy import SITAE, build_policy

    k = cfg.k
    speeds = np.asarray(cfg.server_speeds, dtype=float)
    weights = np.ones(k) if cfg.speeds is None else 1.0 / speeds
    cutoffs = np.zeros(max(k - 1, 0))
    atom_vals = np.zeros(0)
    atom_lo = np.zeros(0)
    atom_hi = np.zeros(0)
    if cfg.policy.name == "SITA-E":
        pol = build_policy(cfg.policy, k, cfg.dist, cfg.arrival_rate)
        assert isinstance(pol, SITAE)
        cutoffs = np.asarray(pol.cutoffs, dtype=float)
        items = list(pol.atom_slabs.items())
        atom_vals = np.array([a for a, _ in items], dtype=float)
        atom_lo = np.array([v[0] for _, v in items], dtype=float)
        atom_hi = np.array([v[1] for _, v in items], dtype=float)
    probe = cfg.check_invariants and cfg.speeds is None and cfg.class_boundaries is None
    prio_lemma = probe and cfg.scheduling.value == "Prio"
    stats_out = np.zeros(16)
    max_imb = np.zeros(inp.n_bins)
    resp, order, srv_of, disp_of = simulate(
        inp.arrivals, inp.sizes, inp.bins, inp.n_bins, k, speeds, weights,
        DISCIPLINE_CODES[cfg.scheduling], POLICY_CODES[cfg.policy.name], int(cfg.policy.d),
        cutoffs, atom_vals, atom_lo, atom_hi, bool(cfg.guarded), inp.thresholds,
        cfg.dispatchers, inp.route_u, inp.policy_u, bool(cfg.resets), inp.delays,
        bool(cfg.check_invariants), probe, prio_lemma, inp.lemma_bounds,
        int(cfg.renormalize_every), int(cfg.max_in_system), stats_out, max_imb)
    if stats_out[13]:
        raise SimulationAborted(inp.seed, f"more than {cfg.max_in_system} jobs in system; unstable?")
    return TrialRecord(
        inp.seed, resp, order, srv_of, disp_of, inp.bins, inp.bin_offset, inp.arrivals,
        tight_violations=int(stats_out[0]), tight_max_excess=float(stats_out[1]),
        global_violations=int(stats_out[2]), global_max_excess=float(stats_out[3]),
        lemma_violations=int(stats_out[4]), lemma_max_excess=float(stats_out[5]),
        max_imbalance=max_imb, resets_applied=int(stats_out[6]),
        resets_ignored=int(stats_out[7]), unsafe_resets=int(stats_out[8]),
        area_in_system=float(stats_out[9]), horizon=float(stats_out[10]),
        sum_seen_at_arrival=float(stats_out[11]), max_in_system=int(stats_out[12]))
