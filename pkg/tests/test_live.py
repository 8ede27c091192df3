import os
import threading
import time

import pytest

from livehelp import MISS_STEPS, miss_sequence, small_context, start_daemon
from revsim import client as dvlib
from revsim.client import COMPLETE, FAILED, ClientError, ClientHandle
from revsim.core import filename_of
from revsim.synth import SynthConfig, file_content, run

pytestmark = pytest.mark.live


@pytest.fixture
def ctx(tmp_path):
    return small_context(tmp_path)


@pytest.fixture
def daemon(ctx):
    d = start_daemon(ctx)
    yield d
    d.stop()


def names(ctx, *keys):
    return [filename_of(ctx, k) for k in keys]


class TestSynth:
    def test_timing_and_content(self, tmp_path):
        cfg = SynthConfig("c", str(tmp_path), 2, 3, alpha_ms=20, tau_ms={0: 10}, size=64)
        seen = []

        class Note:
            def sim_created(self, name):
                seen.append(("created", name, time.monotonic()))

            def sim_closed(self, name, size):
                seen.append(("closed", name, time.monotonic()))

        t0 = time.monotonic()
        assert run(cfg, lambda k: f"f{k}", Note()) == 0
        took = time.monotonic() - t0
        assert 0.035 <= took < 0.5
        assert [s[:2] for s in seen] == [("created", "f2"), ("closed", "f2"), ("closed", "f3")]
        assert (tmp_path / "f3").read_bytes() == file_content("c", 3, 64)

    def test_deterministic_content(self):
        assert file_content("c", 5, 100) == file_content("c", 5, 100)
        assert file_content("c", 5, 100) != file_content("c", 6, 100)
        assert len(file_content("c", 5, 100)) == 100

    def test_failure_injection(self, tmp_path):
        made = []
        cfg = SynthConfig("c", str(tmp_path), 0, 5, tau_ms={0: 1}, fail_at_key=3)
        assert run(cfg, lambda k: made.append(k) or f"f{k}") == 4
        assert made == [0, 1, 2]
        cfg = SynthConfig("c", str(tmp_path), 0, 5, fail_before_start=True)
        assert run(cfg, str) == 3

    def test_level_rates(self):
        cfg = SynthConfig("c", "/tmp", 0, 1, level=2, tau_ms={0: 30, 1: 20, 3: 5})
        assert cfg.tau() == pytest.approx(0.02)
        with pytest.raises(ValueError):
            SynthConfig("c", "/tmp", 3, 1)


class TestClient:
    def test_miss_then_hit(self, ctx, daemon):
        with ClientHandle(ctx.name, daemon.addr) as h:
            st = h.acquire(names(ctx, 3), timeout=10)
            assert st.state == COMPLETE
            data = open(h.path(names(ctx, 3)[0]), "rb").read()
            assert data == file_content(ctx.name, 3, 64)
            h.release(names(ctx, 3))
            t = time.monotonic()
            assert h.acquire(names(ctx, 2), timeout=10).state == COMPLETE
            assert time.monotonic() - t < 0.015
            h.release(names(ctx, 2))

    def test_blocking_equals_nonblocking(self, ctx, daemon):
        with ClientHandle(ctx.name, daemon.addr) as a, ClientHandle(ctx.name, daemon.addr) as b:
            sa = a.acquire(names(ctx, 5, 6), timeout=10)
            req = b.acquire_nb(names(ctx, 5, 6))
            sb = req.wait(10)
            assert (sa.state, sa.ready, sa.error) == (sb.state, sb.ready, sb.error)
            assert a.pins == b.pins == {n: 1 for n in names(ctx, 5, 6)}
            a.release(names(ctx, 5, 6))
            b.release(names(ctx, 5, 6))

    def test_waitsome_reports_each_file_once(self, ctx, daemon):
        with ClientHandle(ctx.name, daemon.addr) as h:
            req = h.acquire_nb(names(ctx, 8, 9, 10, 11))
            seen = []
            while len(seen) < 4:
                idx, st = req.waitsome(10)
                assert not st.error
                seen.extend(idx)
            assert sorted(seen) == [0, 1, 2, 3]
            assert req.testsome()[0] == []
            h.release(names(ctx, 8, 9, 10, 11))

    def test_vfile(self, ctx, daemon):
        with ClientHandle(ctx.name, daemon.addr) as h:
            t = time.monotonic()
            tok = h.vopen(names(ctx, 13)[0])
            assert time.monotonic() - t < 0.015
            assert h.vread(tok, 16, timeout=10) == (13).to_bytes(16, "big")
            assert h.vread(tok, 4, offset=16) == file_content(ctx.name, 13, 64)[16:20]
            h.vclose(tok)
            assert h.pins == {}
            with pytest.raises(ValueError):
                h.vread(tok)

    def test_release_unpinned_raises(self, ctx, daemon):
        with ClientHandle(ctx.name, daemon.addr) as h:
            with pytest.raises(ClientError) as exc:
                h.release(names(ctx, 1))
            assert exc.value.code == "refcount"

    def test_unknown_context(self, daemon):
        with pytest.raises(ClientError):
            ClientHandle("nope", daemon.addr)

    def test_env_defaults(self, ctx, daemon, monkeypatch):
        monkeypatch.setenv("REVSIM_ADDR", daemon.addr)
        monkeypatch.setenv("REVSIM_CONTEXT", ctx.name)
        h = dvlib.init()
        assert h.status()["entries"] == "0"
        dvlib.finalize(h)
        dvlib.finalize(h)

    def test_finalize_drops_pins(self, ctx, daemon):
        h = ClientHandle(ctx.name, daemon.addr)
        h.acquire(names(ctx, 20, 21), timeout=10)
        h.finalize()
        cs = daemon.dv.contexts[ctx.name]
        for _ in range(100):
            if daemon.call(lambda: cs.cache.pinned_count) == 0:
                break
            time.sleep(0.01)
        assert daemon.call(lambda: cs.cache.pinned_count) == 0

    def test_dropped_connection_drops_pins(self, ctx, daemon):
        h = ClientHandle(ctx.name, daemon.addr)
        h.acquire(names(ctx, 22), timeout=10)
        h._close_socket()
        cs = daemon.dv.contexts[ctx.name]
        for _ in range(100):
            if daemon.call(lambda: cs.cache.pinned_count) == 0:
                break
            time.sleep(0.01)
        assert daemon.call(lambda: cs.cache.pinned_count) == 0

    def test_concurrent_clients(self, ctx, daemon):
        errors = []

        def worker(keys):
            try:
                with ClientHandle(ctx.name, daemon.addr) as h:
                    for k in keys:
                        assert h.acquire(names(ctx, k), timeout=10).state == COMPLETE
                        h.release(names(ctx, k))
            except Exception as exc:     # surfaced below
                errors.append(exc)

        threads = [threading.Thread(target=worker, args=(range(30 + i, 40 + i),))
                   for i in range(3)]
        for t in threads:
            t.start()
        for t in threads:
            t.join(30)
        assert errors == []
        assert daemon.call(lambda: daemon.dv.contexts[ctx.name].cache.pinned_count) == 0


class TestFailures:
    @pytest.mark.parametrize("extra", [{"fail_before_start": 1}, {"fail_at_key": 0}])
    def test_failed_resimulation(self, tmp_path, extra):
        ctx = small_context(tmp_path, **extra)
        d = start_daemon(ctx)
        try:
            with ClientHandle(ctx.name, d.addr) as h:
                st = h.acquire(names(ctx, 1), timeout=10)
                assert st.state == FAILED and st.error == "restart"
                assert h.pins == {}
        finally:
            d.stop()

    def test_partial_failure(self, tmp_path):
        ctx = small_context(tmp_path, fail_at_key=3)
        d = start_daemon(ctx)
        try:
            with ClientHandle(ctx.name, d.addr) as h:
                st = h.acquire(names(ctx, 2, 3), timeout=10)
                assert st.state == FAILED and st.ready[0]
                assert os.path.exists(h.path(names(ctx, 2)[0]))
        finally:
            d.stop()


class TestMissSequence:
    def test_six_steps_in_order(self, ctx, daemon):
        with ClientHandle(ctx.name, daemon.addr) as h:
            h.acquire(names(ctx, 7), timeout=10)
            with open(h.path(names(ctx, 7)[0]), "rb") as fh:
                assert fh.read() == file_content(ctx.name, 7, 64)
            h.release(names(ctx, 7))
        trace = daemon.call(lambda: list(daemon.dv.trace))
        found = miss_sequence(trace, ctx, 7)
        assert list(found) == MISS_STEPS
        idx = [found[s] for s in MISS_STEPS]
        assert idx == sorted(idx)

    def test_existing_files_are_catalogued(self, tmp_path):
        ctx = small_context(tmp_path)
        os.makedirs(ctx.storage_dir, exist_ok=True)
        with open(ctx.path_of(4), "wb") as fh:
            fh.write(file_content(ctx.name, 4, 64))
        d = start_daemon(ctx)
        try:
            with ClientHandle(ctx.name, d.addr) as h:
                st = h.acquire_nb(names(ctx, 4))
                assert st.wait(5).state == COMPLETE
                assert st.wait_est == 0
        finally:
            d.stop()


class TestPrefetchLive:
    def test_forward_scan_masks_restarts(self, tmp_path):
        ctx = small_context(tmp_path, alpha_ms=40, tau_ms=5, prefetch=True, s_max=4)
        d = start_daemon(ctx)
        try:
            with ClientHandle(ctx.name, d.addr) as h:
                waits = []
                for k in range(40):
                    t = time.monotonic()
                    assert h.acquire(names(ctx, k), timeout=10).state == COMPLETE
                    waits.append(time.monotonic() - t)
                    time.sleep(0.01)
                    h.release(names(ctx, k))
            # once warmed up, no access waits a full restart latency
            assert max(waits[20:]) < 0.04
        finally:
            d.stop()
