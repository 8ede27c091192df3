"""Asyncio host for the :class:`~revsim.server.DataVirtualizer` core.

The event loop owns the core; sockets, child processes and the timer only
feed it events and carry out the actions it returns.
"""
from __future__ import annotations

import asyncio
import json
import logging
import os
import shlex
import signal
import sys
import threading
import time
from typing import Optional

from .core import key_of
from .server import DataVirtualizer, Delete, Kill, Log, Send, Spawn

log = logging.getLogger(__name__)
evt_log = logging.getLogger("revsim.events")


def parse_addr(addr: str) -> tuple[str, int]:
    host, _, port = addr.rpartition(":")
    return host or "127.0.0.1", int(port)


class Daemon:
    """Serve one or more contexts over TCP.

    ``start()`` runs the loop in a background thread (used by tests and the
    live replayer); ``run()`` blocks the calling thread.  With ``dry_run``
    job commands are recorded in ``dry_run_log`` instead of executed.
    """

    def __init__(self, contexts, addr: str = "127.0.0.1:0", dry_run: bool = False,
                 tick_interval: float = 0.05, trace: bool = False, events_path=None,
                 fork_launcher: bool = True):
        self.host, self.port = parse_addr(addr)
        self.dv = DataVirtualizer(contexts, trace=trace)
        self.dry_run = dry_run
        self.dry_run_log: list[str] = []
        self.tick_interval = tick_interval
        self.events_path = events_path
        self.events: list[str] = []
        self._events_fh = None
        self._writers: dict[int, asyncio.StreamWriter] = {}
        self._procs: dict[int, asyncio.subprocess.Process] = {}
        # jobs forked by the launcher: job id -> pid (None until reported)
        self.fork_launcher = fork_launcher
        self._forked: dict[int, Optional[int]] = {}
        self._pending_kill: set = set()
        self._zygote = None
        self._sids = 0
        self._t0 = time.monotonic()
        self._loop: Optional[asyncio.AbstractEventLoop] = None
        self._server = None
        self._thread: Optional[threading.Thread] = None
        self._ready = threading.Event()
        self._stopping: Optional[asyncio.Event] = None
        self._error: Optional[BaseException] = None

    @property
    def addr(self) -> str:
        return f"{self.host}:{self.port}"

    def now(self) -> float:
        return time.monotonic() - self._t0

    # -- lifecycle ------------------------------------------------------------------

    def start(self) -> "Daemon":
        self._thread = threading.Thread(target=self.run, name="revsim-daemon", daemon=True)
        self._thread.start()
        self._ready.wait(10)
        if self._error is not None:
            raise self._error
        return self

    def run(self):
        try:
            asyncio.run(self._main())
        except BaseException as exc:     # surfaced to start()
            self._error = exc
            self._ready.set()
            if self._thread is None:
                raise

    def stop(self, timeout: float = 10):
        if self._loop is not None and self._stopping is not None:
            self._loop.call_soon_threadsafe(self._stopping.set)
        if self._thread is not None:
            self._thread.join(timeout)

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()

    def call(self, fn, *args, timeout: float = 10):
        """Run ``fn(*args)`` on the loop thread and return its result."""
        fut = asyncio.run_coroutine_threadsafe(self._call(fn, *args), self._loop)
        return fut.result(timeout)

    async def _call(self, fn, *args):
        return fn(*args)

    async def _main(self):
        self._loop = asyncio.get_running_loop()
        self._stopping = asyncio.Event()
        if self.events_path:
            self._events_fh = open(self.events_path, "a", encoding="utf-8")
        self._server = await asyncio.start_server(self._client, self.host, self.port)
        self.port = self._server.sockets[0].getsockname()[1]
        self.dv.addr = self.addr
        self._scan()
        log.info("listening on %s", self.addr)
        self._ready.set()
        ticker = asyncio.create_task(self._ticker())
        try:
            await self._stopping.wait()
        finally:
            ticker.cancel()
            self._server.close()
            for w in list(self._writers.values()):
                w.close()
            for proc in list(self._procs.values()):
                _killpg(proc)
            for pid in list(self._forked.values()):
                if pid:
                    _killpg_pid(pid)
            if self._zygote is not None:
                self._zygote.stdin.close()
                try:
                    await asyncio.wait_for(self._zygote.wait(), 5)
                except asyncio.TimeoutError:
                    self._zygote.kill()
            await self._server.wait_closed()
            if self._events_fh:
                self._events_fh.close()

    def _scan(self):
        """Catalog output steps already present in each storage area."""
        for name, cs in self.dv.contexts.items():
            d = cs.ctx.storage_dir
            if not os.path.isdir(d):
                os.makedirs(d, exist_ok=True)
                continue
            for fn in sorted(os.listdir(d)):
                k = key_of(cs.ctx, fn)
                if k is None or (cs.ctx.last_key is not None and k > cs.ctx.last_key):
                    continue
                for path in self.dv.register_existing(name, k, os.path.getsize(os.path.join(d, fn))):
                    _unlink(path)

    async def _ticker(self):
        while True:
            await asyncio.sleep(self.tick_interval)
            self._apply(self.dv.tick(self.now()))

    # -- connections -------------------------------------------------------------

    async def _client(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter):
        self._sids += 1
        sid = self._sids
        self._writers[sid] = writer
        try:
            while True:
                line = await reader.readline()
                if not line:
                    break
                try:
                    text = line.decode("utf-8")
                except UnicodeDecodeError:
                    text = "\x00"
                self._apply(self.dv.handle_line(sid, text, self.now()))
                await writer.drain()
        except (ConnectionError, asyncio.IncompleteReadError):
            pass
        finally:
            self._writers.pop(sid, None)
            self._apply(self.dv.disconnect(sid, self.now()))
            writer.close()

    # -- actions -----------------------------------------------------------------

    def _apply(self, actions):
        for act in actions:
            if isinstance(act, Send):
                w = self._writers.get(act.session)
                if w is not None and not w.is_closing():
                    w.write(act.line.encode("utf-8"))
            elif isinstance(act, Spawn):
                self._spawn(act)
            elif isinstance(act, Kill):
                proc = self._procs.get(act.job.id)
                if proc is not None:
                    _killpg(proc)
                elif act.job.id in self._forked:
                    pid = self._forked[act.job.id]
                    if pid:
                        _killpg_pid(pid)
                    else:
                        self._pending_kill.add(act.job.id)
                elif self.dry_run:
                    self._apply(self.dv.job_exited(act.job.id, -9, self.now()))
            elif isinstance(act, Delete):
                _unlink(act.path)
            elif isinstance(act, Log):
                self._event(act.line)

    def _event(self, line: str):
        self.events.append(line)
        evt_log.debug(line)
        if self._events_fh:
            self._events_fh.write(line + "\n")
            self._events_fh.flush()

    def _spawn(self, act: Spawn):
        if self.dry_run:
            self.dry_run_log.append(act.command)
            self._event(f"DRYRUN job={act.job.id} cmd={act.command}")
            return
        env = dict(os.environ)
        env.update(act.env)
        env["REVSIM_LAUNCH_TS"] = repr(time.time())
        argv = _synth_argv(act.command) if self.fork_launcher else None
        if argv is not None:
            self._forked[act.job.id] = None
            self._loop.create_task(self._fork_job(act.job.id, argv, act.env | {
                "REVSIM_LAUNCH_TS": env["REVSIM_LAUNCH_TS"]}))
            return
        self._loop.create_task(self._run_job(act.job.id, act.command, env))

    async def _fork_job(self, job_id: int, argv: list, env: dict):
        try:
            if self._zygote is None:
                self._zygote = await asyncio.create_subprocess_exec(
                    sys.executable, "-m", "revsim.zygote",
                    stdin=asyncio.subprocess.PIPE, stdout=asyncio.subprocess.PIPE)
                self._loop.create_task(self._zygote_reader(self._zygote))
            req = json.dumps({"job": job_id, "argv": argv, "env": env}) + "\n"
            self._zygote.stdin.write(req.encode())
            await self._zygote.stdin.drain()
        except (OSError, ConnectionError) as exc:
            log.error("job %s failed to start: %s", job_id, exc)
            self._forked.pop(job_id, None)
            self._apply(self.dv.spawn_failed(job_id, self.now()))

    async def _zygote_reader(self, proc):
        while True:
            line = await proc.stdout.readline()
            if not line:
                break
            msg = json.loads(line)
            job_id = msg["job"]
            if "pid" in msg:
                self._forked[job_id] = msg["pid"]
                if job_id in self._pending_kill:
                    self._pending_kill.discard(job_id)
                    _killpg_pid(msg["pid"])
            elif "exit" in msg:
                self._forked.pop(job_id, None)
                self._apply(self.dv.job_exited(job_id, msg["exit"], self.now()))
        # launcher gone: its jobs are lost
        for job_id in list(self._forked):
            self._forked.pop(job_id)
            self._apply(self.dv.job_exited(job_id, -1, self.now()))
        if self._zygote is proc:
            self._zygote = None

    async def _run_job(self, job_id: int, command: str, env: dict):
        try:
            proc = await asyncio.create_subprocess_shell(
                command, env=env, start_new_session=True,
                stdout=asyncio.subprocess.DEVNULL)
        except OSError as exc:
            log.error("job %s failed to start: %s", job_id, exc)
            self._apply(self.dv.spawn_failed(job_id, self.now()))
            return
        self._procs[job_id] = proc
        code = await proc.wait()
        self._procs.pop(job_id, None)
        self._apply(self.dv.job_exited(job_id, code, self.now()))


def _synth_argv(command: str) -> Optional[list]:
    """Arguments of a ``python -m revsim.synth`` command, else None."""
    try:
        argv = shlex.split(command)
    except ValueError:
        return None
    if len(argv) >= 3 and argv[1:3] == ["-m", "revsim.synth"] and \
            os.path.realpath(argv[0]) == os.path.realpath(sys.executable):
        return argv[3:]
    return None


def _killpg(proc):
    _killpg_pid(proc.pid)


def _killpg_pid(pid):
    try:
        os.killpg(pid, signal.SIGKILL)
    except (ProcessLookupError, PermissionError):
        # not yet a group leader
        try:
            os.kill(pid, signal.SIGKILL)
        except (ProcessLookupError, PermissionError):
            pass


def _unlink(path):
    try:
        os.remove(path)
    except FileNotFoundError:
        pass
