"""Record-stream round-trips, canonical bytes, atomic writes."""

import pytest

from contrastaug.records import (
    append_record,
    dumps_canonical,
    read_records,
    split_known,
    write_records,
)


def test_round_trip(tmp_path):
    path = tmp_path / "out.jsonl"
    rows = [{"b": 2, "a": 1}, {"x": [1, 2, 3]}]
    write_records(path, rows)
    assert list(read_records(path)) == rows


def test_canonical_bytes_stable(tmp_path):
    p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    write_records(p1, [{"b": 2, "a": 1}])
    write_records(p2, [{"a": 1, "b": 2}])
    assert p1.read_bytes() == p2.read_bytes()


def test_unknown_fields_survive_split():
    known, extra = split_known({"id": "x", "path": "p", "custom": 1}, ("id", "path"))
    assert known == {"id": "x", "path": "p"}
    assert extra == {"custom": 1}


def test_append_record(tmp_path):
    path = tmp_path / "log.jsonl"
    append_record(path, {"n": 1})
    append_record(path, {"n": 2})
    assert [r["n"] for r in read_records(path)] == [1, 2]


def test_write_is_atomic_on_failure(tmp_path):
    path = tmp_path / "out.jsonl"
    write_records(path, [{"ok": True}])

    def exploding():
        yield {"first": 1}
        raise RuntimeError("mid-write crash")

    with pytest.raises(RuntimeError):
        write_records(path, exploding())
    # previous content intact, no temp litter
    assert list(read_records(path)) == [{"ok": True}]
    assert list(tmp_path.glob("*.tmp")) == []


def test_bad_line_reports_position(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"ok": 1}\nnot-json\n')
    with pytest.raises(ValueError, match="bad.jsonl:2"):
        list(read_records(path))


def test_dumps_canonical_sorts_keys():
    assert dumps_canonical({"b": 1, "a": 2}) == '{"a":2,"b":1}'
