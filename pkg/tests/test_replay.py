import random

import pytest
from hypothesis import given, settings, strategies as st

from conftest import make_ctx
from oracles import replay_lru_bruteforce
from revsim.core import POLICIES
from revsim.fastcache import replay_cache_fast
from revsim.replay import VirtualClient, replay_cache, replay_full
from revsim.traces import TraceSpec, gen_trace


def pairs_strategy(max_len=200):
    return st.lists(st.tuples(st.integers(0, 3), st.integers(0, 40)), max_size=max_len)


class TestCacheOnly:
    def test_single_forward_scan(self):
        m = replay_cache(list(range(96)), 48, 288, "DCL")
        assert (m.restarts, m.steps) == (2, 96)

    def test_second_pass_hits(self):
        trace = [(0, k) for k in range(50)] + [(1, k) for k in range(50)]
        m = replay_cache(trace, 10, 100, "LRU")
        assert m.misses == 50 and m.hits == 50

    def test_continuation_within_interval(self):
        # client 0 misses 0, then 3: the job keeps running and produces 1..3
        produced = []
        m = replay_cache([(0, 0), (0, 3)], 4, 10, "LRU", record=lambda *a: produced.append(a))
        assert m.restarts == 1 and m.steps == 4
        assert produced == [(0, 0, 1), (3, 1, 3)]

    def test_job_retired_with_its_client(self):
        m = replay_cache([(0, 0), (1, 2)], 4, 10, "LRU")
        # client 0's job ended with client 0, so the miss on 2 restarts and re-produces 0..2
        assert m.restarts == 2 and m.steps == 1 + 3

    @settings(max_examples=200, deadline=None)
    @given(pairs_strategy(), st.integers(1, 30), st.integers(1, 8))
    def test_matches_bruteforce(self, pairs, cap, per):
        produced = []
        m = replay_cache(pairs, per, cap, "LRU", record=lambda k, f, n: produced.append(n))
        steps, restarts, oracle_produced = replay_lru_bruteforce(pairs, per, cap)
        assert (m.steps, m.restarts) == (steps, restarts)
        assert produced == oracle_produced
        assert m.steps == sum(produced)

    @settings(max_examples=60, deadline=None)
    @given(pairs_strategy(), st.integers(1, 30), st.integers(1, 8), st.sampled_from(POLICIES))
    def test_steps_are_charged_per_miss(self, pairs, cap, per, policy):
        produced = []
        m = replay_cache(pairs, per, cap, policy, record=lambda k, f, n: produced.append(n))
        assert m.steps == sum(produced) and len(produced) == m.misses
        assert all(n >= 1 for n in produced)
        assert m.hits + m.misses == len(pairs)


class TestCompiledTwin:
    @settings(max_examples=100, deadline=None)
    @given(pairs_strategy(300), st.integers(1, 40), st.integers(1, 12), st.sampled_from(POLICIES))
    def test_identical_counters(self, pairs, cap, per, policy):
        m = replay_cache(pairs, per, cap, policy)
        fast = replay_cache_fast(pairs, per, cap, policy)
        assert tuple(int(x) for x in fast) == (m.steps, m.restarts, m.hits, m.misses,
                                                m.evictions)

    @pytest.mark.parametrize("policy", POLICIES)
    @pytest.mark.parametrize("pattern", ["random", "forward", "backward", "mixed"])
    def test_fig4_scale(self, policy, pattern):
        trace = gen_trace(TraceSpec(pattern, 1152, 50, seed=11))
        m = replay_cache(trace, 48, 288, policy)
        fast = replay_cache_fast(trace, 48, 288, policy)
        assert tuple(int(x) for x in fast) == (m.steps, m.restarts, m.hits, m.misses,
                                                m.evictions)


def toy_ctx(**kw):
    kw.setdefault("capacity_bytes", 10 ** 6)
    return make_ctx(name="toy", delta_d=1, delta_r=2, **kw)


class TestFullMode:
    def test_no_prefetch_every_miss_stalls_alpha(self):
        m, _ = replay_full(toy_ctx(prefetch=False), [list(range(40))], 2, 1, tau_cli=0.5)
        assert m.restarts == 20 and m.steps == 40
        assert [s for _, s in m.alpha_stalls] == [2.0] * 20

    def test_prefetch_masks_after_warmup(self):
        m, _ = replay_full(toy_ctx(), [list(range(40))], 2, 1, tau_cli=0.5)
        assert m.stalls_after(10) == 0
        bare, _ = replay_full(toy_ctx(prefetch=False), [list(range(40))], 2, 1, tau_cli=0.5)
        assert m.completion < bare.completion

    def test_deterministic(self):
        trace = gen_trace(TraceSpec("mixed", 200, 6, 10, 40, 1, 30.0, seed=5))
        clients = {}
        for c, k in trace:
            clients.setdefault(c, []).append(k)
        runs = [replay_full(toy_ctx(s_max=4), list(clients.values()), 2, 1, 0.25)[0]
                for _ in range(2)]
        assert runs[0].row() == runs[1].row() and runs[0].waits == runs[1].waits

    def test_level_maps(self):
        m, _ = replay_full(toy_ctx(prefetch=False), [[0, 1]], {0: 3.0}, {0: 0.5})
        assert m.completion == pytest.approx(3.0 + 2 * 0.5)

    def test_hits_need_no_job(self):
        m, _ = replay_full(toy_ctx(prefetch=False), [[0, 1], [0, 1]], 2, 1)
        assert m.restarts == 1

    def test_backward_coverage(self):
        ctx = toy_ctx(s_max=8, backward_block=4)
        m, dv = replay_full(ctx, [list(range(59, -1, -1))], 2, 1, tau_cli=0.5, trace=True)
        plans = [f for t, kind, name, f in dv.trace if kind == "evt" and name == "plan"]
        assert plans
        # every access after the first plan finds its step already produced
        first_plan = min(t for t, kind, name, f in dv.trace if kind == "evt" and name == "plan")
        assert m.stalls_after(first_plan + 2 + 4) == 0

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10 ** 6), st.integers(1, 4), st.booleans())
    def test_server_invariants_under_load(self, seed, s_max, prefetch):
        rng = random.Random(seed)
        clients = []
        for _ in range(rng.randint(1, 4)):
            start = rng.randrange(60)
            n = rng.randint(1, 30)
            step = rng.choice([1, -1, 2])
            keys = [min(79, max(0, start + i * step)) for i in range(n)]
            if rng.random() < 0.3:
                keys = [rng.randrange(80) for _ in range(n)]
            clients.append(VirtualClient(keys, rng.choice([0.0, 0.3, 1.5]), rng.random() * 5))
        ctx = toy_ctx(s_max=s_max, prefetch=prefetch, capacity_bytes=12, last_key=79)
        m, dv = replay_full(ctx, clients, 2, 1)
        cs = dv.context_state("toy")
        assert len(m.waits) == sum(len(c.keys) for c in clients)
        assert m.failures == 0
        assert cs.cache.pinned_count == 0
        assert cs.cache.used_bytes <= 12
        assert not any(cs.waiters.values())
