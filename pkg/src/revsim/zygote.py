"""Pre-imported fork launcher for synthetic-simulator jobs.

Starting a fresh interpreter per re-simulation costs tens of milliseconds of
CPU, which distorts millisecond-scale restart latencies when many jobs start
at once.  The daemon keeps one of these processes around and asks it to fork
a child per ``revsim.synth`` job.

Wire format (JSON, one object per line): requests on stdin
``{"job": id, "argv": [...], "env": {...}}``; replies on stdout
``{"job": id, "pid": pid}`` once forked and ``{"job": id, "exit": code}``
when the child is reaped.
"""
from __future__ import annotations

import json
import os
import select
import sys

from . import client, core, synth  # noqa: F401  (preloaded for the children)


def _child(argv, env):
    try:
        os.setsid()
        devnull = os.open(os.devnull, os.O_RDWR)
        os.dup2(devnull, 0)
        os.dup2(devnull, 1)
        os.environ.update(env)
        code = synth.main(argv)
    except SystemExit as exc:
        code = exc.code if isinstance(exc.code, int) else 1
    except BaseException:
        code = 1
    os._exit(code or 0)


def main():
    out = sys.stdout
    fd = sys.stdin.fileno()
    buf = b""
    children = {}
    eof = False
    while not eof or children:
        ready = select.select([fd], [], [], 0.002)[0] if not eof else []
        if eof:
            select.select([], [], [], 0.002)
        if ready:
            chunk = os.read(fd, 65536)
            if not chunk:
                eof = True
            buf += chunk
            while b"\n" in buf:
                line, buf = buf.split(b"\n", 1)
                if not line.strip():
                    continue
                req = json.loads(line)
                out.flush()
                pid = os.fork()
                if pid == 0:
                    _child(req["argv"], req.get("env", {}))
                children[pid] = req["job"]
                out.write(json.dumps({"job": req["job"], "pid": pid}) + "\n")
                out.flush()
        while children:
            try:
                pid, status = os.waitpid(-1, os.WNOHANG)
            except ChildProcessError:
                break
            if pid == 0:
                break
            job = children.pop(pid, None)
            if job is not None:
                out.write(json.dumps({"job": job, "exit": os.waitstatus_to_exitcode(status)}) + "\n")
                out.flush()


if __name__ == "__main__":
    main()
