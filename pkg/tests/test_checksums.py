import hashlib

import pytest

from revsim.checksums import ChecksumDB, file_digest, populate


def test_digest(tmp_path):
    p = tmp_path / "f"
    p.write_bytes(b"abc")
    assert file_digest(p) == hashlib.sha256(b"abc").hexdigest()


def test_populate_empty(ctx_factory, tmp_path):
    ctx = ctx_factory()
    db = populate(ctx, ctx.storage_dir, tmp_path / "db.txt")
    assert len(db) == 0
    assert (tmp_path / "db.txt").read_text() == ""


def test_populate_one_and_idempotent(ctx_factory, tmp_path):
    ctx = ctx_factory()
    store = tmp_path / "store"
    (store / "out_0007.dat").write_bytes(b"seven")
    (store / "notes.txt").write_bytes(b"ignored")
    path = tmp_path / "db.txt"
    populate(ctx, store, path)
    first = path.read_text()
    assert first == f"{hashlib.sha256(b'seven').hexdigest()} out_0007.dat\n"
    populate(ctx, store, path)
    assert path.read_text() == first


def test_conflict_rejected(tmp_path):
    db = ChecksumDB({"a": "00"})
    with pytest.raises(ValueError):
        db.add("a", "11")


def test_load_errors(tmp_path):
    p = tmp_path / "db"
    p.write_text("# comment\n\nabc out_0001.dat\nbroken\n")
    with pytest.raises(ValueError, match=":4"):
        ChecksumDB.load(p)


def test_round_trip(tmp_path):
    db = ChecksumDB({"out_0002.dat": "ff", "out_0001.dat": "ee"})
    db.save(tmp_path / "db")
    again = ChecksumDB.load(tmp_path / "db")
    assert again.entries == db.entries
    assert "/x/out_0001.dat" in again and again.get("out_0002.dat") == "ff"
