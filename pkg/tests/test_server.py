import pytest

from revsim.checksums import ChecksumDB, file_digest
from revsim.core import DriverSpec, filename_of
from revsim.protocol import decode, encode
from revsim.server import DONE, FAILED, KILLED, DataVirtualizer, Delete, Kill, Log, Send, Spawn


class Harness:
    def __init__(self, ctx, **kw):
        self.ctx = ctx
        self.dv = DataVirtualizer([ctx], trace=True, **kw)
        self.now = 0.0
        self.ids = 0
        self.actions = []

    def _run(self, actions):
        self.actions.extend(actions)
        return actions

    def send(self, sid, verb, **fields):
        self.ids += 1
        fields.setdefault("id", self.ids)
        pairs = []
        for k, v in fields.items():
            pairs.extend((k, x) for x in (v if isinstance(v, list) else [v]))
        return self._run(self.dv.handle_line(sid, encode(verb, pairs), self.now))

    def hello(self, sid, role="analysis", **kw):
        return replies(self.send(sid, "HELLO", role=role, ctx=self.ctx.name, **kw), sid)[0]

    def acquire(self, sid, *keys):
        return self.send(sid, "ACQUIRE", file=[filename_of(self.ctx, k) for k in keys])

    def release(self, sid, *keys):
        return self.send(sid, "RELEASE", file=[filename_of(self.ctx, k) for k in keys])

    def produce(self, job, keys, write=True):
        out = []
        out += self._run(self.dv.sim_created(job.id, keys[0], self.now))
        for k in keys:
            if write:
                path = self.ctx.path_of(k)
                with open(path, "wb") as fh:
                    fh.write(f"step {k}".encode())
            out += self._run(self.dv.sim_closed(job.id, k, None, self.now))
        return out

    def cs(self):
        return self.dv.context_state(self.ctx.name)


def replies(actions, sid=None):
    return [decode(a.line) for a in actions
            if isinstance(a, Send) and (sid is None or a.session == sid)]


def spawns(actions):
    return [a for a in actions if isinstance(a, Spawn)]


@pytest.fixture
def h(ctx_factory):
    return Harness(ctx_factory(prefetch=False, capacity_bytes=4))


class TestSessions:
    def test_hello(self, h):
        m = h.hello(1)
        assert m.verb == "OK" and m.get("session") == "1"
        assert m.get("storage_dir") == h.ctx.storage_dir

    def test_unknown_context(self, h):
        m = replies(h.send(1, "HELLO", role="analysis", ctx="nope"))[0]
        assert (m.verb, m.get("code")) == ("ERROR", "ctx")

    def test_verb_before_hello(self, h):
        m = replies(h.acquire(1, 0))[0]
        assert (m.verb, m.get("code")) == ("ERROR", "proto")

    def test_garbage(self, h):
        m = replies(h.dv.handle_line(1, "what is this\n", 0.0))[0]
        assert m.get("code") == "proto"

    def test_bad_file_name(self, h):
        h.hello(1)
        m = replies(h.send(1, "ACQUIRE", file="nonsense.bin"))[0]
        assert m.verb == "ERROR"


class TestMissPath:
    def test_hit(self, h):
        h.dv.register_existing(h.ctx.name, 5, 1)
        h.hello(1)
        m = replies(h.acquire(1, 5))[0]
        assert m.verb == "OK" and m.get("ready") == filename_of(h.ctx, 5)
        assert float(m.get("wait_est")) == 0
        assert h.cs().cache.entries[5].refcount == 1

    def test_miss_launches_restart_interval(self, h):
        h.hello(1)
        out = h.acquire(1, 3)
        m = replies(out)[0]
        assert m.get("pending") == filename_of(h.ctx, 3) and m.get("wait_est") == "-1"
        (sp,) = spawns(out)
        assert (sp.job.start_key, sp.job.stop_key, sp.job.level) == (2, 3, 0)
        assert sp.command == "true 2 3"
        assert sp.env["REVSIM_JOB"] == str(sp.job.id)

    def test_ready_after_close(self, h):
        h.hello(1)
        job = spawns(h.acquire(1, 3))[0].job
        h.now = 2.0
        out = h.produce(job, [2, 3])
        ready = [m for m in replies(out, 1) if m.verb == "READY"]
        assert [m.get("file") for m in ready] == [filename_of(h.ctx, 3)]
        assert h.cs().cache.entries[3].refcount == 1
        assert h.cs().cache.entries[2].refcount == 0

    def test_overlapping_acquire_joins(self, h):
        h.hello(1)
        h.hello(2)
        job = spawns(h.acquire(1, 3))[0].job
        assert spawns(h.acquire(2, 3)) == []
        assert spawns(h.acquire(2, 2)) == []
        out = h.produce(job, [2, 3])
        assert len([m for m in replies(out, 1) if m.verb == "READY"]) == 1
        assert len([m for m in replies(out, 2) if m.verb == "READY"]) == 2

    def test_one_ready_per_waiting_request(self, h):
        h.hello(1)
        job = spawns(h.acquire(1, 2, 3))[0].job
        out = h.produce(job, [2, 3])
        assert [m.get("file") for m in replies(out, 1) if m.verb == "READY"] == \
            [filename_of(h.ctx, 2), filename_of(h.ctx, 3)]

    def test_estimates_after_seeding(self, h):
        h.hello(1)
        job = spawns(h.acquire(1, 1))[0].job
        h.now = 2.0
        h.dv.sim_created(job.id, 0, h.now)
        h.now = 3.0
        h.dv.sim_closed(job.id, 0, None, h.now)
        h.now = 4.0
        h.dv.sim_closed(job.id, 1, None, h.now)
        assert h.cs().perf.alpha_sim(0) == 2.0
        assert h.cs().perf.tau_sim_of(0) == 1.0
        h.dv.job_exited(job.id, 0, h.now)
        assert job.state == DONE
        m = replies(h.acquire(1, 3))[0]
        # restart at 2, produce 2 and 3: alpha + 2 tau
        assert float(m.get("wait_est")) == pytest.approx(4.0)

    def test_duplicate_keys_in_one_request(self, h):
        h.hello(1)
        m = replies(h.acquire(1, 3, 3))[0]
        assert m.getall("pending") == [filename_of(h.ctx, 3)]


class TestPinsAndCapacity:
    def test_release_unpinned(self, h):
        h.dv.register_existing(h.ctx.name, 1, 1)
        h.hello(1)
        m = replies(h.release(1, 1))[0]
        assert (m.verb, m.get("code")) == ("ERROR", "refcount")

    def test_release_after_acquire(self, h):
        h.dv.register_existing(h.ctx.name, 1, 1)
        h.hello(1)
        h.acquire(1, 1)
        assert replies(h.release(1, 1))[0].verb == "OK"
        assert h.cs().cache.pinned_count == 0

    def test_eviction_deletes_file(self, ctx_factory):
        h = Harness(ctx_factory(prefetch=False, capacity_bytes=4, policy="LRU"))
        for k in range(4):
            h.dv.register_existing(h.ctx.name, k, 1)
        h.hello(1)
        job = spawns(h.acquire(1, 5))[0].job
        out = h.produce(job, [4, 5], write=False)
        deleted = [a.path for a in out if isinstance(a, Delete)]
        assert deleted == [h.ctx.path_of(0), h.ctx.path_of(1)]

    def test_all_pinned_defers_until_unpin(self, h):
        for k in range(4):
            h.dv.register_existing(h.ctx.name, k, 1)
        h.hello(1)
        h.acquire(1, 0, 1, 2, 3)
        h.hello(2)
        job = spawns(h.acquire(2, 5))[0].job
        out = h.produce(job, [4, 5], write=False)
        assert not [m for m in replies(out, 2) if m.verb == "READY"]
        assert len(h.cs().deferred) == 2
        out = h.release(1, 0, 1)
        assert [m.get("file") for m in replies(out, 2) if m.verb == "READY"] == \
            [filename_of(h.ctx, 5)]
        assert h.cs().deferred == []
        assert h.cs().cache.used_bytes <= 4

    def test_disconnect_drops_pins(self, h):
        h.dv.register_existing(h.ctx.name, 1, 1)
        h.hello(1)
        h.acquire(1, 1)
        h.dv.disconnect(1, 1.0)
        assert h.cs().cache.pinned_count == 0

    def test_bye(self, h):
        h.dv.register_existing(h.ctx.name, 1, 1)
        h.hello(1)
        h.acquire(1, 1)
        assert replies(h.send(1, "BYE"))[0].verb == "OK"
        assert h.cs().cache.pinned_count == 0

    def test_status(self, h):
        h.dv.register_existing(h.ctx.name, 1, 1)
        h.hello(1)
        h.acquire(1, 1)
        m = replies(h.send(1, "STATUS"))[0]
        assert m.get("entries") == "1" and m.get("pinned") == "1" and m.get("my_pins") == "1"


class TestJobs:
    def test_bad_template_fails_waiters(self, ctx_factory):
        ctx = ctx_factory(prefetch=False, driver=DriverSpec("out_{key:04}.dat",
                                                             "run {no_such_field}"))
        h = Harness(ctx)
        h.hello(1)
        out = h.acquire(1, 3)
        msgs = replies(out, 1)
        err = [m for m in msgs if m.verb == "ERROR"][0]
        assert err.get("code") == "restart"
        assert [j.state for j in h.dv.jobs.values()] == [FAILED]

    def test_crash_fails_waiters(self, h):
        h.hello(1)
        job = spawns(h.acquire(1, 3))[0].job
        out = h.dv.job_exited(job.id, 3, 1.0)
        assert job.state == FAILED
        err = replies(out, 1)[0]
        assert (err.verb, err.get("code"), err.get("file")) == \
            ("ERROR", "restart", filename_of(h.ctx, 3))

    def test_partial_crash_serves_produced(self, h):
        h.hello(1)
        job = spawns(h.acquire(1, 2, 3))[0].job
        out = h.produce(job, [2]) + h.dv.job_exited(job.id, 4, 1.0)
        verbs = [(m.verb, m.get("file")) for m in replies(out, 1)]
        assert ("READY", filename_of(h.ctx, 2)) in verbs
        assert ("ERROR", filename_of(h.ctx, 3)) in verbs

    def test_clean_exit_without_output_is_failure(self, h):
        h.hello(1)
        job = spawns(h.acquire(1, 3))[0].job
        h.dv.job_exited(job.id, 0, 1.0)
        assert job.state == FAILED

    def test_killed_job_file_still_inserted(self, h):
        h.hello(1)
        job = spawns(h.acquire(1, 3))[0].job
        h.dv.kill(h.cs(), job)
        h.dv.sim_closed(job.id, 2, None, 1.0)
        assert 2 in h.cs().cache
        h.dv.job_exited(job.id, -9, 1.0)
        assert job.state == KILLED

    def test_tick_without_work(self, h):
        assert h.dv.tick(5.0) == []

    def test_closed_via_protocol(self, h):
        h.hello(1)
        job = spawns(h.acquire(1, 3))[0].job
        h.hello(9, role="simulator", job=job.id)
        out = h.send(9, "CREATED", file=filename_of(h.ctx, 2))
        out += h.send(9, "CLOSED", file=filename_of(h.ctx, 2), size=1)
        out += h.send(9, "CLOSED", file="garbage")
        out += h.send(9, "CLOSED", file=filename_of(h.ctx, 3), size=1)
        assert [m.verb for m in replies(out, 9)] == ["OK"] * 4
        assert [m.verb for m in replies(out, 1)] == ["READY"]


class TestPrefetch:
    def seeded(self, ctx_factory, **kw):
        h = Harness(ctx_factory(capacity_bytes=100, **kw))
        perf = h.cs().perf
        perf.record_restart_latency(0, 2.0)
        perf.record_production(0, 1.0)
        return h

    def test_plan_queued_then_scheduled(self, ctx_factory):
        h = self.seeded(ctx_factory, s_max=1)
        h.hello(1)
        for t, k in enumerate(range(3)):
            h.now = float(t)
            out = h.acquire(1, k)
        plans = [a.line for a in h.actions if isinstance(a, Log) and a.line.startswith("PLAN")]
        assert plans
        launched = [a.job for a in spawns(h.actions)]
        assert any(j.prefetched for j in launched)

    def test_s_max_limits_running_prefetch(self, ctx_factory):
        h = self.seeded(ctx_factory, s_max=2)
        h.cs().perf.record_client_access(1, 0.1)
        h.hello(1)
        for t, k in enumerate(range(3)):
            h.now = float(t)
            h.acquire(1, k)
        running = [j for j in h.dv.jobs.values()
                   if j.prefetched and j.state in ("launching", "producing")]
        assert 1 <= len(running) <= 2

    def test_reset_kills_unused_prefetch(self, ctx_factory):
        h = self.seeded(ctx_factory, s_max=1)
        h.cs().perf.record_client_access(1, 0.5)
        for k in range(3):
            h.dv.register_existing(h.ctx.name, k, 1)
        h.hello(1)
        for t, k in enumerate([0, 1, 2]):
            h.now = float(t)
            h.acquire(1, k)
        pre = [j for j in h.dv.jobs.values() if j.prefetched]
        assert pre
        h.now = 3.0
        h.acquire(1, 40)
        # nobody waits on the prefetched range, so the stride change kills it
        assert all(j.kill_requested for j in pre)
        assert any(isinstance(a, Kill) for a in h.actions)


class TestBitrep:
    def setup(self, ctx_factory, tmp_path, corrupt=False, digest=True):
        db_path = tmp_path / "db.txt"
        ctx = ctx_factory(prefetch=False, checksum_db=str(db_path))
        path = ctx.path_of(1)
        with open(path, "wb") as fh:
            fh.write(b"original")
        db = ChecksumDB()
        if digest:
            db.add(filename_of(ctx, 1), file_digest(path))
        db.save(db_path)
        if corrupt:
            with open(path, "r+b") as fh:
                fh.write(b"O")
        h = Harness(ctx)
        h.dv.register_existing(ctx.name, 1, 1)
        h.hello(1)
        return h, replies(h.send(1, "BITREP", file=filename_of(ctx, 1)))[0]

    def test_match(self, ctx_factory, tmp_path):
        _, m = self.setup(ctx_factory, tmp_path)
        assert (m.verb, m.get("match")) == ("BITREPR", "1")

    def test_flipped_byte(self, ctx_factory, tmp_path):
        _, m = self.setup(ctx_factory, tmp_path, corrupt=True)
        assert (m.verb, m.get("match")) == ("BITREPR", "0")

    def test_no_digest(self, ctx_factory, tmp_path):
        _, m = self.setup(ctx_factory, tmp_path, digest=False)
        assert (m.verb, m.get("code")) == ("ERROR", "nodigest")

    def test_no_file(self, ctx_factory, tmp_path):
        h, _ = self.setup(ctx_factory, tmp_path)
        m = replies(h.send(1, "BITREP", file=filename_of(h.ctx, 7)))[0]
        assert m.get("code") == "nofile"
