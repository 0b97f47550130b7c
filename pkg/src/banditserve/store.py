"""Keyed, persistent document storage with write-ahead logging.

One ``DocumentStore`` holds one namespace (summary state, interaction
logs, or the experiment registry) as an in-memory map backed by an
append-only log of upserts that is periodically compacted into a
snapshot. Both files are line-delimited canonical JSON, UTF-8, and start
with the versioned header line ``{"format":"theta-v1"}``:

    {"format":"theta-v1"}
    {"doc":{...},"k":"...","op":"put"}
    {"k":"...","op":"del"}

Snapshot lines omit ``op``. Storage size is O(distinct keys); the
write-ahead log is truncated at every compaction.

Concurrency contract: writes and read-modify-write transforms on a key
are serialized under the namespace lock; plain reads run lock-free and
observe either the pre- or post-state of a concurrent write, never a
torn document. Callers must treat returned documents as immutable.
"""

from __future__ import annotations

import json
import os
import threading
import time
from pathlib import Path
from typing import Callable, Iterator, Optional

from .documents import Document, canonical
from .errors import StoreCorrupt
from .stats import validate_state_doc

FORMAT_HEADER = {"format": "theta-v1"}


class DocumentStore:
    """In-memory map of string key -> document, durably logged when given a directory."""

    def __init__(self, data_dir: Optional[Path], name: str, snapshot_every: int = 10000):
        self.name = name
        self.snapshot_every = snapshot_every
        self._data: dict[str, Document] = {}
        self._lock = threading.RLock()
        self._writes_since_snapshot = 0
        self._dir = Path(data_dir) if data_dir is not None else None
        self._wal_file = None
        if self._dir is not None:
            self._dir.mkdir(parents=True, exist_ok=True)
            self._load()
            self._wal_file = open(self._wal_path, "a", encoding="utf-8")
            if self._wal_file.tell() == 0:
                self._wal_file.write(canonical(FORMAT_HEADER) + "\n")
                self._wal_file.flush()

    @property
    def _snapshot_path(self) -> Path:
        return self._dir / f"{self.name}.snapshot"

    @property
    def _wal_path(self) -> Path:
        return self._dir / f"{self.name}.wal"

    # -- reads ------------------------------------------------------------

    def get(self, key: str) -> Optional[Document]:
        return self._data.get(key)

    def __len__(self) -> int:
        return len(self._data)

    def keys(self) -> list:
        with self._lock:
            return list(self._data)

    def items(self) -> list:
        """Consistent point-in-time copy of (key, document) pairs."""
        with self._lock:
            return list(self._data.items())

    # -- writes -----------------------------------------------------------

    def put(self, key: str, doc: Document) -> None:
        with self._lock:
            self._append_wal({"op": "put", "k": key, "doc": doc})
            self._data[key] = doc
            self._after_write()

    def delete(self, key: str) -> None:
        with self._lock:
            if key not in self._data:
                return
            self._append_wal({"op": "del", "k": key})
            del self._data[key]
            self._after_write()

    def atomic_update(self, key: str, transform: Callable[[Optional[Document]], Document]) -> Document:
        """Apply get -> transform -> put with no interleaved writer on any key.

        The transform must be pure; if it raises, the stored value is left
        unchanged and the failure propagates.
        """
        with self._lock:
            new_doc = transform(self._data.get(key))
            self._append_wal({"op": "put", "k": key, "doc": new_doc})
            self._data[key] = new_doc
            self._after_write()
            return new_doc

    def _append_wal(self, record: dict) -> None:
        if self._wal_file is not None:
            self._wal_file.write(canonical(record) + "\n")
            self._wal_file.flush()

    def _after_write(self) -> None:
        self._writes_since_snapshot += 1
        if self._dir is not None and self._writes_since_snapshot >= self.snapshot_every:
            self._compact()

    # -- snapshot / restore ------------------------------------------------

    def write_snapshot(self, path) -> None:
        """Write every record to a single file, atomically replacing any previous one."""
        with self._lock:
            records = list(self._data.items())
        path = Path(path)
        tmp = path.with_suffix(path.suffix + ".tmp")
        with open(tmp, "w", encoding="utf-8") as f:
            f.write(canonical(FORMAT_HEADER) + "\n")
            for key, doc in records:
                f.write(canonical({"k": key, "doc": doc}) + "\n")
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)

    def restore(self, path) -> None:
        """Replace the whole store with the record set of a snapshot file.

        The file is validated wholesale before anything is touched; a
        malformed file leaves the store unchanged.
        """
        records = dict(_read_snapshot_file(Path(path)))
        with self._lock:
            self._data = records
            if self._dir is not None:
                self._compact()

    def _compact(self) -> None:
        self.write_snapshot(self._snapshot_path)
        if self._wal_file is not None:
            self._wal_file.close()
        self._wal_file = open(self._wal_path, "w", encoding="utf-8")
        self._wal_file.write(canonical(FORMAT_HEADER) + "\n")
        self._wal_file.flush()
        self._writes_since_snapshot = 0

    def _load(self) -> None:
        if self._snapshot_path.exists():
            self._data = dict(_read_snapshot_file(self._snapshot_path))
        if self._wal_path.exists():
            for record in _read_wal_file(self._wal_path):
                if record["op"] == "put":
                    self._data[record["k"]] = record["doc"]
                elif record["op"] == "del":
                    self._data.pop(record["k"], None)
                else:
                    raise StoreCorrupt(f"{self._wal_path}: unknown op {record['op']!r}")

    def close(self) -> None:
        with self._lock:
            if self._wal_file is not None:
                self._wal_file.flush()
                os.fsync(self._wal_file.fileno())
                self._wal_file.close()
                self._wal_file = None


def _check_header(line: str, path: Path) -> None:
    try:
        header = json.loads(line)
    except json.JSONDecodeError as e:
        raise StoreCorrupt(f"{path}: bad header line: {e}") from e
    if header != FORMAT_HEADER:
        raise StoreCorrupt(f"{path}: unsupported format header {header!r}")


def _read_snapshot_file(path: Path) -> Iterator[tuple]:
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise StoreCorrupt(f"cannot read snapshot {path}: {e}") from e
    if not lines:
        raise StoreCorrupt(f"{path}: empty snapshot file")
    _check_header(lines[0], path)
    records = []
    for i, line in enumerate(lines[1:], start=2):
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as e:
            raise StoreCorrupt(f"{path}:{i}: malformed snapshot line: {e}") from e
        if not isinstance(rec, dict) or "k" not in rec or "doc" not in rec:
            raise StoreCorrupt(f"{path}:{i}: snapshot line is not a record")
        records.append((rec["k"], rec["doc"]))
    return records


class ThetaStore:
    """Per-experiment summary state addressed by (name, key, value).

    Each record holds one serialized summary-state document plus its
    update timestamp. A fresh experiment has no records; callers build a
    zero state on absent, which keeps cold-start semantics in one place
    (the policy layer). A secondary index supports listing every value
    label under a (name, key) pair without scanning the namespace.
    """

    def __init__(self, data_dir: Optional[Path] = None, snapshot_every: int = 10000):
        self._docs = DocumentStore(data_dir, "theta", snapshot_every)
        self._index: dict[tuple, dict[str, str]] = {}
        for mapkey, record in self._docs.items():
            self._index_add(record)

    @staticmethod
    def _mapkey(experiment_id: int, name: str, key: str, value: str) -> str:
        return canonical([experiment_id, name, key, value])

    def _index_add(self, record: Document) -> None:
        k = record["key"]
        group = (k["experiment_id"], k["name"], k["key"])
        self._index.setdefault(group, {})[k["value"]] = self._mapkey(
            k["experiment_id"], k["name"], k["key"], k["value"])

    def _index_drop(self, experiment_id: int, name: str, key: str, value: str) -> None:
        group = self._index.get((experiment_id, name, key))
        if group is not None:
            group.pop(value, None)
            if not group:
                del self._index[(experiment_id, name, key)]

    def get(self, experiment_id: int, name: str, key: str, value: str) -> Optional[Document]:
        """Stored state document, or None when absent."""
        record = self._docs.get(self._mapkey(experiment_id, name, key, value))
        return None if record is None else record["state"]

    def get_all(self, experiment_id: int, name: str, key: str) -> dict:
        """Every stored state under (name, key), keyed by its value label."""
        group = self._index.get((experiment_id, name, key), {})
        out = {}
        for value, mapkey in list(group.items()):
            record = self._docs.get(mapkey)
            if record is not None:
                out[value] = record["state"]
        return out

    def set(self, experiment_id: int, name: str, key: str, value: str, state: Document) -> None:
        validate_state_doc(state)
        record = {
            "key": {"experiment_id": experiment_id, "name": name, "key": key, "value": value},
            "state": state,
            "updated_at": time.time(),
        }
        with self._docs._lock:
            self._docs.put(self._mapkey(experiment_id, name, key, value), record)
            self._index_add(record)

    def atomic_update(self, experiment_id: int, name: str, key: str, value: str,
                      transform: Callable[[Optional[Document]], Document]) -> Document:
        """Serialized read-modify-write of one state document; returns the new state."""

        def wrap(record: Optional[Document]) -> Document:
            prior = None if record is None else record["state"]
            state = transform(prior)
            validate_state_doc(state)
            return {
                "key": {"experiment_id": experiment_id, "name": name, "key": key, "value": value},
                "state": state,
                "updated_at": time.time(),
            }

        with self._docs._lock:
            record = self._docs.atomic_update(self._mapkey(experiment_id, name, key, value), wrap)
            self._index_add(record)
        return record["state"]

    def reset(self, experiment_id: int) -> None:
        """Remove every record belonging to one experiment."""
        with self._docs._lock:
            doomed = [(g, dict(values)) for g, values in self._index.items()
                      if g[0] == experiment_id]
            for (exp, name, key), values in doomed:
                for value, mapkey in values.items():
                    self._docs.delete(mapkey)
                    self._index_drop(exp, name, key, value)

    def records(self, experiment_id: Optional[int] = None) -> list:
        """Point-in-time copy of records, optionally restricted to one experiment."""
        out = []
        for _, record in self._docs.items():
            if experiment_id is None or record["key"]["experiment_id"] == experiment_id:
                out.append(record)
        out.sort(key=lambda r: (r["key"]["experiment_id"], r["key"]["name"],
                                r["key"]["key"], r["key"]["value"]))
        return out

    def state_map(self, experiment_id: Optional[int] = None) -> dict:
        """Mapping of canonical address -> state document, for equality checks."""
        return {self._mapkey(r["key"]["experiment_id"], r["key"]["name"],
                             r["key"]["key"], r["key"]["value"]): r["state"]
                for r in self.records(experiment_id)}

    def snapshot(self, path) -> None:
        self._docs.write_snapshot(path)

    def restore(self, path) -> None:
        self._docs.restore(path)
        with self._docs._lock:
            self._index = {}
            for _, record in self._docs.items():
                self._index_add(record)

    def __len__(self) -> int:
        return len(self._docs)

    def close(self) -> None:
        self._docs.close()


def _read_wal_file(path: Path) -> list:
    lines = path.read_text(encoding="utf-8").split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        return []
    _check_header(lines[0], path)
    records = []
    for i, line in enumerate(lines[1:], start=2):
        try:
            rec = json.loads(line)
        except json.JSONDecodeError:
            # A torn final line is the expected residue of a crash mid-append;
            # anything earlier means real corruption.
            if i == len(lines):
                break
            raise StoreCorrupt(f"{path}:{i}: malformed log line")
        if not isinstance(rec, dict) or "op" not in rec or "k" not in rec:
            raise StoreCorrupt(f"{path}:{i}: log line is not a record")
        records.append(rec)
    return records
