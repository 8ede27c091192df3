"""Reference checksums of original output steps (for bitwise-reproducibility checks).

The database is a text file with one ``<hex-digest> <filename>`` line per
output step, written when the original simulation runs.
"""
from __future__ import annotations

import hashlib
import os


def file_digest(path, algorithm: str = "sha256") -> str:
    h = hashlib.new(algorithm)
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class ChecksumDB:
    """Append-only map from output-step filename to digest."""

    def __init__(self, entries=None):
        self.entries: dict[str, str] = dict(entries or {})

    def __len__(self):
        return len(self.entries)

    def __contains__(self, filename):
        return os.path.basename(filename) in self.entries

    def get(self, filename):
        return self.entries.get(os.path.basename(filename))

    def add(self, filename, digest: str):
        name = os.path.basename(filename)
        old = self.entries.get(name)
        if old is not None and old != digest:
            raise ValueError(f"conflicting digest for {name}")
        self.entries[name] = digest

    @classmethod
    def load(cls, path) -> "ChecksumDB":
        db = cls()
        if not os.path.exists(path):
            return db
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                digest, sep, name = line.partition(" ")
                if not sep or not name:
                    raise ValueError(f"{path}:{lineno}: expected '<digest> <filename>'")
                db.add(name.strip(), digest)
        return db

    def save(self, path):
        tmp = f"{path}.tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            for name in sorted(self.entries):
                fh.write(f"{self.entries[name]} {name}\n")
        os.replace(tmp, path)


def populate(ctx, directory, db_path=None) -> ChecksumDB:
    """Record digests of every output step found in ``directory``.

    Re-running over the same files is a no-op.  Written to ``db_path`` (or
    the context's ``checksum_db``) when one is given.
    """
    from .core import key_of

    db_path = db_path or ctx.checksum_db
    db = ChecksumDB.load(db_path) if db_path else ChecksumDB()
    for name in sorted(os.listdir(directory)):
        if key_of(ctx, name) is None:
            continue
        db.add(name, file_digest(os.path.join(directory, name)))
    if db_path:
        db.save(db_path)
    return db
