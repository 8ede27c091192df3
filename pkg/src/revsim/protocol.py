"""Line protocol shared by the daemon, the client library and simulators.

One message per newline-terminated UTF-8 line: ``VERB key=value ...``.
Values are percent-encoded so they never contain spaces or newlines; a key
may repeat (``file=a file=b``).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from urllib.parse import quote, unquote

CLIENT_VERBS = {"HELLO", "ACQUIRE", "RELEASE", "BITREP", "STATUS", "BYE", "CREATED", "CLOSED"}
SERVER_VERBS = {"OK", "READY", "ERROR", "BITREPR"}
VERBS = CLIENT_VERBS | SERVER_VERBS


class ProtocolError(ValueError):
    pass


@dataclass
class Message:
    verb: str
    fields: list = field(default_factory=list)    # [(key, value)]

    def get(self, key, default=None):
        for k, v in self.fields:
            if k == key:
                return v
        return default

    def getall(self, key) -> list:
        return [v for k, v in self.fields if k == key]

    def encode(self) -> str:
        return encode(self.verb, self.fields)


def encode(verb: str, fields=()) -> str:
    """Serialize to one line, newline included."""
    if hasattr(fields, "items"):
        fields = fields.items()
    parts = [verb]
    for k, v in fields:
        if isinstance(v, (list, tuple)):
            parts.extend(f"{k}={quote(str(x), safe='')}" for x in v)
        else:
            parts.append(f"{k}={quote(str(v), safe='')}")
    return " ".join(parts) + "\n"


def decode(line: str) -> Message:
    line = line.rstrip("\r\n")
    if not line.strip():
        raise ProtocolError("empty line")
    head, *rest = line.split(" ")
    if head not in VERBS:
        raise ProtocolError(f"unknown verb {head!r}")
    fields = []
    for tok in rest:
        if not tok:
            continue
        key, sep, value = tok.partition("=")
        if not sep or not key:
            raise ProtocolError(f"malformed field {tok!r}")
        fields.append((key, unquote(value)))
    return Message(head, fields)


def msg(verb: str, *pairs, **kw) -> str:
    """``msg("OK", ("file", "a"), ("file", "b"), id=3)`` -> encoded line."""
    return encode(verb, list(kw.items()) + list(pairs))
