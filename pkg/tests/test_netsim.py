import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lbguard.guardrail import GuardrailConfig
from lbguard.netsim import (DIGEST_SEED, DelaySpec, DispatcherNode, ResetMessage, digest_update,
                            handle_reset_message, route_arrival)


def fold(ids):
    h = DIGEST_SEED
    for i in ids:
        h = digest_update(h, i)
    return h


def test_route_single_dispatcher(rng):
    assert all(route_arrival(1, rng) == 0 for _ in range(100))
    with pytest.raises(ValueError):
        route_arrival(0, rng)


def test_route_uniform_thinning():
    rng = np.random.default_rng(2)
    n, d = 1_000_000, 4
    u = rng.random(n)
    picks = np.minimum((u * d).astype(int), d - 1)
    counts = np.bincount(picks, minlength=d)
    sigma = np.sqrt(n * 0.25 * 0.75)
    assert np.all(np.abs(counts - n / 4) <= 3 * sigma)
    # thinned Poisson sub-stream: mean interarrival d/lambda
    lam = 2.0
    t = np.cumsum(rng.exponential(1 / lam, n))
    sub = np.diff(t[picks == 0])
    assert sub.mean() == pytest.approx(d / lam, rel=0.01)


def test_digest_basics():
    assert fold([]) == fold([]) == DIGEST_SEED
    assert fold([1, 2, 3]) == fold([1, 2, 3])
    assert fold([1, 2]) != fold([2, 1])


@settings(max_examples=200)
@given(st.lists(st.integers(0, 2**40), min_size=2, max_size=20, unique=True), st.randoms())
def test_digest_order_sensitive(ids, r):
    perm = list(ids)
    r.shuffle(perm)
    if perm != ids:
        assert fold(perm) != fold(ids)
    assert 0 <= fold(ids) < 2**64


def test_handle_reset_message():
    node = DispatcherNode.create(0, GuardrailConfig(1.0, 2.0, 2))
    node.state.record_dispatch(0, 1.0)
    node.note_dispatch(0, 17)
    server_digest = digest_update(DIGEST_SEED, 17)
    msg = ResetMessage(0, 0, server_digest, 1.0, 1.0)
    assert handle_reset_message(node, msg)
    assert node.state.counters[0] == [0.0, 0.0]
    # a new job went out after the server emptied: stale reset is ignored
    node.state.record_dispatch(0, 1.0)
    node.note_dispatch(0, 18)
    before = node.state.snapshot()
    assert not handle_reset_message(node, ResetMessage(0, 0, server_digest, 2.0, 3.0))
    assert node.state.snapshot() == before
    assert (node.applied, node.ignored) == (1, 1)


def test_reset_message_time_order():
    with pytest.raises(ValueError):
        ResetMessage(0, 0, 0, 2.0, 1.0)


def test_delay_spec():
    rng = np.random.default_rng(0)
    assert DelaySpec().is_zero and np.all(DelaySpec().sample_array(rng, 3) == 0)
    assert np.all(DelaySpec("deterministic", 2.0).sample_array(rng, 3) == 2.0)
    assert DelaySpec("exponential", 2.0).sample_array(rng, 200_000).mean() == pytest.approx(2.0, rel=0.02)
    assert DelaySpec.from_config({"kind": "exponential", "mean": 1}) == DelaySpec("exponential", 1.0)
    with pytest.raises(ValueError):
        DelaySpec("pareto", 1.0)
