"""Synthetic environments and the in-process simulation runner.

Simulations drive the exact production decide/summarize code paths over
an in-memory state store, with HTTP left out for speed. Replication r of
a run seeded with s uses the 64-bit derived seed

    mix64(s, r) = splitmix64_finalizer(s + (r + 1) * 0x9E3779B97F4A7C15)

so replication sets are reproducible and extensible without re-running
earlier replications.
"""

from __future__ import annotations

import math
import random
from types import SimpleNamespace
from typing import Optional

from .documents import Document, is_finite_number
from .errors import ConfigInvalid
from .experiments import validate_nesting
from .policies import PolicyConfig, PolicyEngine
from .store import ThetaStore

_MASK = (1 << 64) - 1

TAIL_WINDOW = 500


def mix64(seed: int, rep: int) -> int:
    """Derived per-replication seed (splitmix64 finalizer)."""
    x = (seed + (rep + 1) * 0x9E3779B97F4A7C15) & _MASK
    x ^= x >> 30
    x = (x * 0xBF58476D1CE4E5B9) & _MASK
    x ^= x >> 27
    x = (x * 0x94D049BB133111EB) & _MASK
    x ^= x >> 31
    return x


# ---------------------------------------------------------------------------
# environments


class BernoulliArms:
    """Context-free arms; pulling arm a yields click ~ Bernoulli(p_a)."""

    def __init__(self, params: dict, rng: random.Random):
        probs = params.get("probs")
        if not isinstance(probs, dict) or not probs:
            raise ConfigInvalid("bernoulli_arms requires a non-empty probs map")
        for label, p in probs.items():
            if not isinstance(label, str) or not label:
                raise ConfigInvalid("arm labels must be non-empty strings")
            if not is_finite_number(p) or not 0 <= p <= 1:
                raise ConfigInvalid(f"success probability for {label!r} must be in [0,1]")
        self.probs = {label: float(p) for label, p in probs.items()}
        self.rng = rng

    def context(self) -> dict:
        return {}

    def reward(self, context: dict, action: dict) -> tuple:
        label = action.get("version")
        if label not in self.probs:
            raise ConfigInvalid(f"policy chose unknown arm {label!r}")
        click = 1 if self.rng.random() < self.probs[label] else 0
        return {"click": click}, float(click)


class GoalSetting:
    """Goal-response environment for the distance-goal policies.

    Achieved distance is max(0, alpha + beta1*delta + beta2*delta^2 + noise)
    where delta = set goal minus the user's mean achieved distance so far
    (per weather/user cell, starting from 0 before any activity) — the same
    baseline the policies maintain, so the policy's delta and the
    environment's delta coincide. The truncation at 0 reflects that a run
    cannot cover negative distance; it biases responses near the boundary.
    """

    def __init__(self, params: dict, rng: random.Random):
        beta2 = params.get("beta2", -1.0)
        if not is_finite_number(beta2) or beta2 >= 0:
            raise ConfigInvalid("goal_setting requires beta2 < 0")
        sigma = params.get("sigma", 0.5)
        if not is_finite_number(sigma) or sigma < 0:
            raise ConfigInvalid("sigma must be a non-negative number")
        users = params.get("users", 1)
        if isinstance(users, bool) or not isinstance(users, int) or users < 1:
            raise ConfigInvalid("users must be a positive integer")
        weathers = params.get("weathers", ["sunny", "rainy"])
        if (not isinstance(weathers, list) or not weathers
                or any(not isinstance(w, str) or not w for w in weathers)):
            raise ConfigInvalid("weathers must be a non-empty list of strings")
        for name in ("alpha", "beta1"):
            if name in params and not is_finite_number(params[name]):
                raise ConfigInvalid(f"{name} must be a finite number")
        self.alpha = float(params.get("alpha", 5.0))
        self.beta1 = float(params.get("beta1", 2.0))
        self.beta2 = float(beta2)
        self.sigma = float(sigma)
        self.users = users
        self.weathers = list(weathers)
        self.rng = rng
        self._cells: dict = {}  # (weather, user) -> [n, mean achieved]

    def context(self) -> dict:
        return {"weather": self.rng.choice(self.weathers),
                "userid": self.rng.randint(1, self.users)}

    def reward(self, context: dict, action: dict) -> tuple:
        goal = action.get("distance")
        if not is_finite_number(goal):
            raise ConfigInvalid("policy action carries no finite 'distance'")
        cell = self._cells.setdefault((context["weather"], context["userid"]), [0, 0.0])
        delta = float(goal) - cell[1]
        achieved = self.alpha + self.beta1 * delta + self.beta2 * delta * delta
        if self.sigma > 0:
            achieved += self.rng.gauss(0.0, self.sigma)
        achieved = max(0.0, achieved)
        cell[0] += 1
        cell[1] += (achieved - cell[1]) / cell[0]
        return {"km": achieved}, achieved


_ENV_KINDS = {"bernoulli_arms": BernoulliArms, "goal_setting": GoalSetting}


def make_environment(env_doc: Document, rng: random.Random):
    if not isinstance(env_doc, dict) or env_doc.get("kind") not in _ENV_KINDS:
        raise ConfigInvalid(f"environment kind must be one of {sorted(_ENV_KINDS)}")
    params = env_doc.get("params", {})
    if not isinstance(params, dict):
        raise ConfigInvalid("environment params must be an object")
    return _ENV_KINDS[env_doc["kind"]](params, rng)


# ---------------------------------------------------------------------------
# runner


def _build_engine(config: PolicyConfig, children: Optional[dict], theta: ThetaStore,
                  root_id: int = 1):
    """`root_id` runs `config`; `children` maps further ids to config docs."""
    table = {root_id: SimpleNamespace(id=root_id, config=config)}
    for cid, doc in (children or {}).items():
        if cid == root_id:
            raise ConfigInvalid(f"child id {root_id} is taken by the root experiment")
        table[cid] = SimpleNamespace(id=cid, config=PolicyConfig.from_doc(doc))
    graph = {i: e.config.nested_ids for i, e in table.items()}
    for exp in table.values():
        for child in exp.config.nested_ids:
            if child not in table:
                raise ConfigInvalid(f"nested experiment {child} has no config")
    validate_nesting(graph)

    def lookup(experiment_id):
        try:
            return table[experiment_id]
        except KeyError:
            raise ConfigInvalid(f"no experiment with id {experiment_id}")

    return PolicyEngine(lookup, theta), table[root_id]


def _action_label(action: dict) -> str:
    if "version" in action:
        return str(action["version"])
    if "type" in action:
        return str(action["type"])
    return "?"


def run_simulation(env_doc: Document, config_doc: Document, horizon: int, seed: int,
                   replications: int = 1, children: Optional[dict] = None) -> dict:
    """Measure cumulative reward R(T) over independent replications.

    Each replication builds a fresh environment and a fresh in-memory
    state store, then loops: draw context, decide, draw reward, summarize
    — through the production engine. The report also carries, for goal
    environments, tail averages over the last TAIL_WINDOW steps of the
    set goal and the policy's diagnostic delta terms.
    """
    if not isinstance(horizon, int) or horizon < 1:
        raise ConfigInvalid("horizon must be a positive integer")
    if not isinstance(replications, int) or replications < 1:
        raise ConfigInvalid("replications must be a positive integer")
    config = PolicyConfig.from_doc(config_doc)
    make_environment(env_doc, random.Random(0))  # validate before running

    per_rep = []
    freq_counts: dict = {}
    for rep in range(replications):
        rep_seed = mix64(seed, rep)
        rng = random.Random(rep_seed)
        env = make_environment(env_doc, rng)
        theta = ThetaStore()
        engine, root = _build_engine(config, children, theta)

        total = 0.0
        goals: list = []
        deltas: list = []
        stars: list = []
        for _ in range(horizon):
            ctx = env.context()
            outcome = engine.decide(root, ctx, rng)
            reward_doc, realized = env.reward(ctx, outcome.action)
            engine.summarize(root, ctx, outcome.action, reward_doc)
            total += realized
            label = _action_label(outcome.action)
            freq_counts[label] = freq_counts.get(label, 0) + 1
            if "distance" in outcome.action:
                goals.append(outcome.action["distance"])
            hint = outcome.log_hint
            if hint is not None and "delta_star" in hint:
                stars.append(hint["delta_star"])
                deltas.append(hint["delta"])

        entry = {"rep": rep, "seed": rep_seed, "R": total}
        if goals:
            entry["tail_mean_goal"] = _tail_mean(goals)
        if stars:
            entry["tail_mean_delta_star"] = _tail_mean(stars)
            entry["tail_mean_delta"] = _tail_mean(deltas)
        per_rep.append(entry)

    rewards = [e["R"] for e in per_rep]
    mean_r = sum(rewards) / len(rewards)
    if len(rewards) > 1:
        sd_r = math.sqrt(sum((x - mean_r) ** 2 for x in rewards) / (len(rewards) - 1))
    else:
        sd_r = 0.0
    steps = horizon * replications
    return {
        "env": env_doc,
        "config": config.to_doc(),
        "horizon": horizon,
        "replications": replications,
        "seed": seed,
        "mean_R": mean_r,
        "sd_R": sd_r,
        "per_rep": per_rep,
        "freq": {label: count / steps for label, count in sorted(freq_counts.items())},
    }


def _tail_mean(values: list) -> float:
    tail = values[-TAIL_WINDOW:]
    return sum(tail) / len(tail)


def replay(records: list, config_doc: Document, children: Optional[dict] = None,
           experiment_id: int = 1) -> ThetaStore:
    """Fold a log's reward records through summarize on a fresh store.

    Records are folded in ascending interaction order regardless of input
    order; decision and custom records are ignored (they never mutate
    state). `experiment_id` (and the keys of `children`) should carry the
    live experiments' ids so the returned store is namespaced identically
    to the live one. Returns the resulting store for offline comparison.
    """
    config = PolicyConfig.from_doc(config_doc)
    theta = ThetaStore()
    engine, root = _build_engine(config, children, theta, root_id=experiment_id)
    for rec in sorted(records, key=lambda r: r["t"]):
        if rec["kind"] != "reward":
            continue
        engine.summarize(root, rec["context"], rec["action"], rec["reward"])
    return theta
