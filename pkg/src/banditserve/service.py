"""Orchestration: one object owning registry, summary state, logbook, engine.

This is the process-internal face of the service; the HTTP layer and the
simulator both drive it through the same methods, so behaviour cannot
drift between the two.
"""

from __future__ import annotations

import hmac
import random
import threading
from pathlib import Path
from typing import Optional

from .documents import Document
from .errors import AdminAuthFailure
from .experiments import Experiment, ExperimentRegistry, LogBook
from .policies import PolicyEngine
from .store import ThetaStore


class DecisionService:
    def __init__(self, data_dir: Optional[Path] = None, admin_token: Optional[str] = None,
                 snapshot_every: int = 10000, seed: Optional[int] = None):
        self.theta = ThetaStore(data_dir, snapshot_every=snapshot_every)
        self.logbook = LogBook(data_dir, snapshot_every=snapshot_every)
        self.registry = ExperimentRegistry(data_dir, snapshot_every=snapshot_every)
        self.engine = PolicyEngine(self.registry.get, self.theta)
        self.admin_token = admin_token
        # decisions draw from per-request generators forked off one seeded
        # root, so a seeded service is reproducible yet handlers never
        # contend on a shared generator
        self._root_rng = random.Random(seed)
        self._rng_lock = threading.Lock()

    def _request_rng(self) -> random.Random:
        with self._rng_lock:
            return random.Random(self._root_rng.getrandbits(64))

    # ------------------------------------------------------------------
    # the two machine-facing calls

    def get_action(self, experiment_id, key, context: dict) -> dict:
        exp = self.registry.authenticate(experiment_id, key)
        outcome = self.engine.decide(exp, context, self._request_rng())
        self.logbook.append(exp.id, "decision", context, action=outcome.action)
        if outcome.log_hint is not None:
            self.logbook.append(exp.id, "custom", outcome.log_hint)
        return outcome.action

    def set_reward(self, experiment_id, key, context: dict, action: dict,
                   reward: dict) -> None:
        exp = self.registry.authenticate(experiment_id, key)
        self.engine.summarize(exp, context, action, reward)
        self.logbook.append(exp.id, "reward", context, action=action, reward=reward)

    # ------------------------------------------------------------------
    # experiment-key surfaces

    def theta_records(self, experiment_id, key, name: Optional[str] = None,
                      key_field: Optional[str] = None,
                      value: Optional[str] = None) -> list:
        exp = self.registry.authenticate(experiment_id, key)
        out = []
        for rec in self.theta.records(exp.id):
            k = rec["key"]
            if name is not None and k["name"] != name:
                continue
            if key_field is not None and k["key"] != key_field:
                continue
            if value is not None and k["value"] != value:
                continue
            out.append({"name": k["name"], "key": k["key"], "value": k["value"],
                        "state": rec["state"], "updated_at": rec["updated_at"]})
        return out

    def log_page(self, experiment_id, key, limit: int = 100, offset: int = 0) -> list:
        exp = self.registry.authenticate(experiment_id, key)
        return self.logbook.page(exp.id, limit=limit, offset=offset)

    # ------------------------------------------------------------------
    # admin surfaces

    def check_admin(self, token) -> None:
        if self.admin_token is None:
            return  # admin interface left open when no token was configured
        presented = token if isinstance(token, str) else ""
        if not hmac.compare_digest(self.admin_token.encode(), presented.encode()):
            raise AdminAuthFailure("admin token missing or wrong")

    def create_experiment(self, name: str, config_doc: Document,
                          key: Optional[str] = None) -> Experiment:
        return self.registry.create(name, config_doc, key=key)

    def list_experiments(self) -> list:
        return self.registry.list()

    def delete_experiment(self, experiment_id: int) -> Experiment:
        exp = self.registry.delete(experiment_id)
        self.theta.reset(exp.id)
        self.logbook.purge(exp.id)
        return exp

    def close(self) -> None:
        self.theta.close()
        self.logbook.close()
        self.registry.close()
