import json

import pytest

from replay_forge.errors import InvalidDocument, InvariantViolation
from replay_forge.schemas import SCHEMAS, canonical, config_hash, dump
from replay_forge.stream import read_json, resolve_threads


def test_dump_validates():
    with pytest.raises(InvariantViolation):
        dump({"version": "1.0", "avg": 2.0, "ilm": 0.5, "bwt": 0.0, "per_task_final": []}, "metrics")


def test_canonical_text(tmp_path):
    doc = {"b": 1, "a": [1, 2]}
    text = canonical(doc)
    assert text == '{\n  "a": [\n    1,\n    2\n  ],\n  "b": 1\n}\n'
    dump({"version": "1.0", "row": [0.5]}, "eval_row", tmp_path / "x.json")
    assert (tmp_path / "x.json").read_text() == canonical({"version": "1.0", "row": [0.5]})


def test_no_nan():
    with pytest.raises(ValueError):
        canonical({"x": float("nan")})


def test_config_hash_key_order():
    assert config_hash({"a": 1, "b": [2]}) == config_hash({"b": [2], "a": 1})
    assert config_hash({"a": 1}) != config_hash({"a": 2})
    assert len(config_hash({})) == 64


def test_every_schema_is_object_typed():
    assert all(s["type"] == "object" for s in SCHEMAS.values())


def test_read_json_errors(tmp_path):
    (tmp_path / "a.json").write_text("{")
    with pytest.raises(InvalidDocument):
        read_json(tmp_path / "a.json")
    (tmp_path / "b.json").write_text(json.dumps({"version": "1.0"}))
    with pytest.raises(InvalidDocument):
        read_json(tmp_path / "b.json", "metrics")


def test_threads_env(monkeypatch):
    monkeypatch.setenv("REPLAY_FORGE_THREADS", "3")
    assert resolve_threads(None) == 3
    assert resolve_threads(2) == 2
    assert resolve_threads(None, 5) == 5
    monkeypatch.setenv("REPLAY_FORGE_THREADS", "many")
    with pytest.raises(InvalidDocument):
        resolve_threads(None)
