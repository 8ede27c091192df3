"""Client library for analyses and simulators.

Analyses call :meth:`ClientHandle.acquire` (or the non-blocking
:meth:`~ClientHandle.acquire_nb` plus :class:`Request` waits) to get output
steps pinned on disk, and :meth:`~ClientHandle.release` when done.  The
``vopen``/``vread``/``vclose`` helpers give open-does-not-block,
read-blocks semantics over plain files.  Simulators report the files they
produce with :meth:`~ClientHandle.sim_created` and
:meth:`~ClientHandle.sim_closed`.
"""
from __future__ import annotations

import itertools
import os
import socket
import threading
import time
from dataclasses import dataclass, field
from typing import Optional

from .protocol import ProtocolError, decode, encode

PENDING, PARTIAL, COMPLETE, FAILED = "pending", "partial", "complete", "failed"


class ClientError(RuntimeError):
    """The server answered with ``ERROR``; ``code`` holds its error code."""

    def __init__(self, code: str, fields=None):
        self.code = code
        self.fields = dict(fields or {})
        super().__init__(f"server error {code}: {self.fields}")


class DisconnectedError(ConnectionError):
    pass


@dataclass
class Status:
    error: Optional[str] = None
    wait_est: float = 0.0
    ready: list = field(default_factory=list)

    @property
    def state(self) -> str:
        if self.error:
            return FAILED
        if all(self.ready):
            return COMPLETE
        return PARTIAL if any(self.ready) else PENDING


class Request:
    """An outstanding acquire of one or more files."""

    def __init__(self, handle: "ClientHandle", rid: str, files):
        self.handle = handle
        self.id = rid
        self.files = list(files)
        self.ready = [False] * len(self.files)
        self.error: Optional[str] = None
        self.wait_est = 0.0
        self.answered = False
        self._reported = [False] * len(self.files)

    def status(self) -> Status:
        return Status(self.error, self.wait_est, list(self.ready))

    @property
    def done(self) -> bool:
        return self.error is not None or all(self.ready)

    def _mark(self, name: str):
        for i, f in enumerate(self.files):
            if f == name and not self.ready[i]:
                self.ready[i] = True

    def test(self) -> tuple[bool, Status]:
        with self.handle._cond:
            self.handle._check_alive(self)
            return self.done, self.status()

    def wait(self, timeout: Optional[float] = None) -> Status:
        with self.handle._cond:
            self.handle._wait_for(lambda: self.answered and self.done, timeout)
            return self.status()

    def _take_new(self) -> list[int]:
        new = [i for i, r in enumerate(self.ready) if r and not self._reported[i]]
        for i in new:
            self._reported[i] = True
        return new

    def testsome(self) -> tuple[list[int], Status]:
        """Indices that became ready since the last -some call (never blocks)."""
        with self.handle._cond:
            self.handle._check_alive(self)
            return self._take_new(), self.status()

    def waitsome(self, timeout: Optional[float] = None) -> tuple[list[int], Status]:
        """Block until at least one not yet reported file is ready (or failure)."""
        with self.handle._cond:
            def progress():
                if self.error is not None:
                    return True
                if all(self._reported):
                    return True
                return any(r and not s for r, s in zip(self.ready, self._reported))
            self.handle._wait_for(progress, timeout)
            return self._take_new(), self.status()


class VFile:
    """Token returned by :meth:`ClientHandle.vopen`."""

    def __init__(self, handle, name, request):
        self.handle = handle
        self.name = name
        self.request = request
        self.closed = False


class ClientHandle:
    """One connection bound to one simulation context."""

    def __init__(self, ctx: Optional[str] = None, addr: Optional[str] = None,
                 role: str = "analysis", job: Optional[int] = None,
                 connect_timeout: float = 10.0):
        ctx = ctx or os.environ.get("REVSIM_CONTEXT")
        addr = addr or os.environ.get("REVSIM_ADDR")
        if not ctx or not addr:
            raise ValueError("context and server address required (REVSIM_CONTEXT, REVSIM_ADDR)")
        self.ctx = ctx
        self.addr = addr
        self.role = role
        host, _, port = addr.rpartition(":")
        self._sock = socket.create_connection((host or "127.0.0.1", int(port)),
                                              timeout=connect_timeout)
        self._sock.settimeout(None)
        self._sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._rfile = self._sock.makefile("r", encoding="utf-8", newline="\n")
        self._wlock = threading.Lock()
        self._cond = threading.Condition()
        self._ids = itertools.count(1)
        self._replies: dict[str, object] = {}
        self._requests: dict[str, Request] = {}
        self.pins: dict[str, int] = {}
        self.closed = False
        self.lost: Optional[str] = None
        self._reader = threading.Thread(target=self._read_loop, daemon=True,
                                        name=f"revsim-client-{ctx}")
        self._reader.start()
        fields = [("role", role), ("ctx", ctx)]
        if job is not None:
            fields.append(("job", job))
        try:
            reply = self._call("HELLO", fields)
        except ClientError:
            self._close_socket()
            raise
        self.session = reply.get("session")
        self.storage_dir = reply.get("storage_dir")

    # -- transport -----------------------------------------------------------------

    def _read_loop(self):
        try:
            for line in self._rfile:
                try:
                    m = decode(line)
                except ProtocolError:
                    continue
                self._dispatch(m)
        except (OSError, ValueError):
            pass
        with self._cond:
            if not self.closed:
                self.lost = "connection lost"
            self._cond.notify_all()

    def _dispatch(self, m):
        rid = m.get("id")
        with self._cond:
            req = self._requests.get(rid)
            if req is not None:
                if m.verb == "OK" and not req.answered:
                    req.answered = True
                    try:
                        req.wait_est = float(m.get("wait_est", 0))
                    except ValueError:
                        req.wait_est = -1.0
                    for name in m.getall("ready"):
                        self._ready(req, name)
                elif m.verb == "READY":
                    self._ready(req, m.get("file"))
                elif m.verb == "ERROR":
                    req.answered = True
                    req.error = m.get("code", "error")
                if req.done and req.answered:
                    self._requests.pop(rid, None)
            else:
                self._replies[rid] = m
            self._cond.notify_all()

    def _ready(self, req, name):
        # the server pins a file once per request naming it
        if name in req.files and not req.ready[req.files.index(name)]:
            self.pins[name] = self.pins.get(name, 0) + 1
        req._mark(name)

    def _send(self, verb, fields):
        if self.closed or self.lost:
            raise DisconnectedError(self.lost or "handle finalized")
        data = encode(verb, fields).encode("utf-8")
        with self._wlock:
            try:
                self._sock.sendall(data)
            except OSError as exc:
                raise DisconnectedError(str(exc)) from exc

    def _wait_for(self, pred, timeout):
        """Wait on the condition (held by the caller) until ``pred()``."""
        deadline = None if timeout is None else time.monotonic() + timeout
        while not pred():
            if self.lost:
                raise DisconnectedError(self.lost)
            left = None if deadline is None else deadline - time.monotonic()
            if left is not None and left <= 0:
                raise TimeoutError("timed out waiting for the server")
            self._cond.wait(left)

    def _check_alive(self, req=None):
        if self.lost and (req is None or not req.done):
            raise DisconnectedError(self.lost)

    def _call(self, verb, fields, timeout: Optional[float] = 30.0):
        rid = str(next(self._ids))
        self._send(verb, [("id", rid)] + list(fields))
        with self._cond:
            self._wait_for(lambda: rid in self._replies, timeout)
            reply = self._replies.pop(rid)
        if reply.verb == "ERROR":
            raise ClientError(reply.get("code", "error"), reply.fields)
        return reply

    def _close_socket(self):
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()

    # -- analysis API ----------------------------------------------------------------

    def acquire_nb(self, files) -> Request:
        files = [files] if isinstance(files, str) else list(files)
        if not files:
            raise ValueError("acquire needs at least one file")
        rid = str(next(self._ids))
        req = Request(self, rid, list(dict.fromkeys(os.path.basename(f) for f in files)))
        with self._cond:
            self._requests[rid] = req
        try:
            self._send("ACQUIRE", [("id", rid)] + [("file", f) for f in req.files])
        except DisconnectedError:
            with self._cond:
                self._requests.pop(rid, None)
            raise
        return req

    def acquire(self, files, timeout: Optional[float] = None) -> Status:
        """Block until every file is on disk and pinned for this handle."""
        return self.acquire_nb(files).wait(timeout)

    def release(self, files):
        files = [files] if isinstance(files, str) else list(files)
        names = [os.path.basename(f) for f in files]
        self._call("RELEASE", [("file", n) for n in names])
        with self._cond:
            for n in names:
                left = self.pins.get(n, 0) - 1
                if left > 0:
                    self.pins[n] = left
                else:
                    self.pins.pop(n, None)

    def bitrep(self, file) -> bool:
        reply = self._call("BITREP", [("file", os.path.basename(file))])
        return reply.get("match") == "1"

    def status(self) -> dict:
        return dict(self._call("STATUS", []).fields)

    def path(self, file) -> str:
        return os.path.join(self.storage_dir, os.path.basename(file))

    def vopen(self, file) -> VFile:
        """Start fetching ``file`` and return at once."""
        return VFile(self, os.path.basename(file), self.acquire_nb([file]))

    def vread(self, token: VFile, size: int = -1, offset: int = 0,
              timeout: Optional[float] = None) -> bytes:
        """Block until the file is available, then read from it."""
        if token.closed:
            raise ValueError("read on closed file")
        st = token.request.wait(timeout)
        if st.error:
            raise ClientError(st.error, {"file": token.name, "status": st})
        with open(self.path(token.name), "rb") as fh:
            fh.seek(offset)
            return fh.read(size)

    def vclose(self, token: VFile):
        if token.closed:
            return
        token.closed = True
        st = token.request.wait()
        if not st.error:
            self.release([token.name])

    # -- simulator API ---------------------------------------------------------------

    def sim_created(self, file):
        self._call("CREATED", [("file", os.path.basename(file))])

    def sim_closed(self, file, size: Optional[int] = None):
        """Report a finished file; call only once its bytes are written."""
        fields = [("file", os.path.basename(file))]
        if size is not None:
            fields.append(("size", size))
        self._call("CLOSED", fields)

    # -- teardown ----------------------------------------------------------------------

    def finalize(self):
        """Release everything (BYE) and disconnect; safe to call twice."""
        if self.closed:
            return
        try:
            if not self.lost:
                self._call("BYE", [], timeout=10)
        except (DisconnectedError, TimeoutError, ClientError):
            pass
        finally:
            with self._cond:
                self.closed = True
                self.pins.clear()
            self._close_socket()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.finalize()


def init(ctx: Optional[str] = None, addr: Optional[str] = None, **kw) -> ClientHandle:
    return ClientHandle(ctx, addr, **kw)


def finalize(handle: ClientHandle):
    handle.finalize()
