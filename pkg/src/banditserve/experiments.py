"""Experiment registry and the append-only interaction logbook.

An experiment couples a numeric id, a secret access key, and a policy
configuration. The registry hands out sequential ids, checks keys in
constant time, and refuses configurations whose delegation graph is
cyclic or deeper than the engine will follow. The logbook assigns each
experiment a gap-free interaction sequence so decision/reward pairs can
be replayed in their original order.
"""

from __future__ import annotations

import hmac
import secrets
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .documents import Document, canonical
from .errors import (
    AuthFailure,
    ConfigInvalid,
    CycleDetected,
    ExperimentNested,
    UnknownExperiment,
)
from .policies import MAX_NESTING_DEPTH, PolicyConfig
from .store import DocumentStore

KEY_HEX_CHARS = 10

_META_KEY = "meta"


@dataclass
class Experiment:
    id: int
    key: str
    name: str
    config: PolicyConfig
    created_at: float

    def to_doc(self) -> dict:
        return {"id": self.id, "key": self.key, "name": self.name,
                "config": self.config.to_doc(), "created_at": self.created_at}

    @classmethod
    def from_doc(cls, doc: dict) -> "Experiment":
        return cls(id=doc["id"], key=doc["key"], name=doc["name"],
                   config=PolicyConfig.from_doc(doc["config"]),
                   created_at=doc["created_at"])


def validate_nesting(graph: dict) -> None:
    """Reject delegation graphs the engine would refuse to follow.

    ``graph`` maps experiment id -> child ids. Children absent from the
    graph count as leaves. Raises CycleDetected for any cycle (including
    self-delegation) and ConfigInvalid when a delegation chain would
    place an experiment deeper than the engine's depth limit.
    """
    depth_of: dict = {}
    in_stack: set = set()

    def depth(node) -> int:
        if node in in_stack:
            raise CycleDetected(f"experiment {node} delegates back to itself")
        if node in depth_of:
            return depth_of[node]
        children = graph.get(node, ())
        if not children:
            depth_of[node] = 0
            return 0
        in_stack.add(node)
        d = 1 + max(depth(c) for c in children)
        in_stack.discard(node)
        depth_of[node] = d
        return d

    for node in graph:
        if depth(node) > MAX_NESTING_DEPTH:
            raise ConfigInvalid(
                f"delegation chain through experiment {node} exceeds "
                f"the depth limit of {MAX_NESTING_DEPTH}")


class ExperimentRegistry:
    """Durable id -> experiment mapping with config-graph validation."""

    def __init__(self, data_dir: Optional[Path] = None, snapshot_every: int = 10000):
        self._docs = DocumentStore(data_dir, "registry", snapshot_every=snapshot_every)
        self._lock = threading.RLock()
        self._by_id: dict = {}
        self._next_id = 1
        self._load()

    def _load(self) -> None:
        for k, doc in self._docs.items():
            if k == _META_KEY:
                continue
            exp = Experiment.from_doc(doc)
            self._by_id[exp.id] = exp
        meta = self._docs.get(_META_KEY)
        floor = meta["next_id"] if meta else 1
        if self._by_id:
            floor = max(floor, max(self._by_id) + 1)
        self._next_id = floor

    @staticmethod
    def _exp_key(experiment_id: int) -> str:
        return f"exp:{experiment_id}"

    def create(self, name: str, config_doc: Document, key: Optional[str] = None) -> Experiment:
        if not isinstance(name, str) or not name:
            raise ConfigInvalid("experiment name must be a non-empty string")
        if key is not None and (not isinstance(key, str) or not key):
            raise ConfigInvalid("explicit key must be a non-empty string")
        config = PolicyConfig.from_doc(config_doc)
        with self._lock:
            for child in config.nested_ids:
                if child not in self._by_id:
                    raise ConfigInvalid(f"nested experiment {child} does not exist")
            new_id = self._next_id
            graph = {i: e.config.nested_ids for i, e in self._by_id.items()}
            graph[new_id] = config.nested_ids
            validate_nesting(graph)
            exp = Experiment(id=new_id, key=key or secrets.token_hex(KEY_HEX_CHARS // 2),
                             name=name, config=config, created_at=time.time())
            self._by_id[new_id] = exp
            self._next_id = new_id + 1
            self._docs.put(_META_KEY, {"next_id": self._next_id})
            self._docs.put(self._exp_key(new_id), exp.to_doc())
            return exp

    def get(self, experiment_id: int) -> Experiment:
        with self._lock:
            exp = self._by_id.get(experiment_id)
        if exp is None:
            raise UnknownExperiment(f"no experiment with id {experiment_id}")
        return exp

    def authenticate(self, experiment_id, key) -> Experiment:
        """Key check that does not reveal whether the id exists."""
        with self._lock:
            exp = self._by_id.get(experiment_id)
        presented = key if isinstance(key, str) else ""
        expected = exp.key if exp is not None else secrets.token_hex(KEY_HEX_CHARS // 2)
        if not hmac.compare_digest(expected.encode(), presented.encode()) or exp is None:
            raise AuthFailure("experiment id and key do not match")
        return exp

    def list(self) -> list:
        with self._lock:
            return [self._by_id[i] for i in sorted(self._by_id)]

    def parents_of(self, experiment_id: int) -> list:
        with self._lock:
            return sorted(i for i, e in self._by_id.items()
                          if experiment_id in e.config.nested_ids)

    def delete(self, experiment_id: int) -> Experiment:
        with self._lock:
            if experiment_id not in self._by_id:
                raise UnknownExperiment(f"no experiment with id {experiment_id}")
            parents = self.parents_of(experiment_id)
            if parents:
                raise ExperimentNested(
                    f"experiment {experiment_id} is nested inside {parents}")
            exp = self._by_id.pop(experiment_id)
            self._docs.delete(self._exp_key(experiment_id))
            return exp

    def __len__(self):
        with self._lock:
            return len(self._by_id)

    def close(self) -> None:
        self._docs.close()


class LogBook:
    """Append-only interaction records, sequenced per experiment."""

    def __init__(self, data_dir: Optional[Path] = None, snapshot_every: int = 10000):
        self._docs = DocumentStore(data_dir, "logs", snapshot_every=snapshot_every)
        self._lock = threading.RLock()
        self._seq: dict = {}  # experiment id -> ascending interaction numbers
        for _, doc in self._docs.items():
            self._seq.setdefault(doc["experiment_id"], []).append(doc["t"])
        for times in self._seq.values():
            times.sort()

    @staticmethod
    def _mapkey(experiment_id: int, t: int) -> str:
        return canonical([experiment_id, t])

    def append(self, experiment_id: int, kind: str, context: Document,
               action: Document = None, reward: Document = None) -> dict:
        with self._lock:
            times = self._seq.setdefault(experiment_id, [])
            t = times[-1] + 1 if times else 1
            record = {"experiment_id": experiment_id, "t": t, "kind": kind,
                      "context": context, "logged_at": time.time()}
            if action is not None:
                record["action"] = action
            if reward is not None:
                record["reward"] = reward
            self._docs.put(self._mapkey(experiment_id, t), record)
            times.append(t)
            return record

    def page(self, experiment_id: int, limit: int = 100, offset: int = 0) -> list:
        """Most recent first; limit is capped at 10000."""
        limit = max(0, min(limit, 10000))
        with self._lock:
            times = list(self._seq.get(experiment_id, ()))
        chosen = list(reversed(times))[offset:offset + limit]
        return [self._docs.get(self._mapkey(experiment_id, t)) for t in chosen]

    def ascending(self, experiment_id: int) -> list:
        """Full history in original interaction order."""
        with self._lock:
            times = list(self._seq.get(experiment_id, ()))
        return [self._docs.get(self._mapkey(experiment_id, t)) for t in times]

    def count(self, experiment_id: int) -> int:
        with self._lock:
            return len(self._seq.get(experiment_id, ()))

    def purge(self, experiment_id: int) -> None:
        with self._lock:
            for t in self._seq.pop(experiment_id, ()):
                self._docs.delete(self._mapkey(experiment_id, t))

    def close(self) -> None:
        self._docs.close()
