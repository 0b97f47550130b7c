"""Built-in decision policies and the engine that runs them.

Every policy implements the same two bounded-cost steps:

* ``decide``    -- map (context, stored summary state) to the next action;
* ``summarize`` -- fold one observed (context, action, reward) interaction
  into the stored state via atomic read-modify-write.

Policies are configured declaratively (kind + parameters) instead of
executing user-supplied code; new kinds register themselves in
``REGISTRY`` at import time. A ``nested`` policy delegates both steps to
the experiment chosen by its router, which lets one experiment compare
several adaptation strategies against each other.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

from .documents import Document, is_finite_number
from .errors import ConfigInvalid, SchemaViolation, SingularModel
from .stats import OnlineLinearModel, RunningMean, RunningProportion, StatList
from .store import ThetaStore

MAX_NESTING_DEPTH = 8

DEFAULT_ACTIVITY_MAP = {"sunny": "run", "rainy": "swim"}


@dataclass(frozen=True)
class PolicyConfig:
    """Declarative description of which built-in policy runs and how."""

    kind: str
    params: dict = field(default_factory=dict)
    nested_ids: tuple = ()

    @classmethod
    def from_doc(cls, doc: Document) -> "PolicyConfig":
        if not isinstance(doc, dict):
            raise ConfigInvalid("policy config must be an object")
        unknown = set(doc) - {"kind", "params", "nested_ids"}
        if unknown:
            raise ConfigInvalid(f"unknown config fields: {sorted(unknown)}")
        kind = doc.get("kind")
        if kind not in REGISTRY:
            raise ConfigInvalid(f"unknown policy kind {kind!r}; "
                                f"available: {sorted(REGISTRY)}")
        params = doc.get("params", {})
        if not isinstance(params, dict):
            raise ConfigInvalid("params must be an object")
        nested_ids = doc.get("nested_ids", [])
        if not isinstance(nested_ids, list) or any(
                isinstance(i, bool) or not isinstance(i, int) for i in nested_ids):
            raise ConfigInvalid("nested_ids must be a list of integers")
        if len(set(nested_ids)) != len(nested_ids):
            raise ConfigInvalid("nested_ids must be unique")
        if kind == "nested":
            if not nested_ids:
                raise ConfigInvalid("nested policy requires nested_ids")
        elif nested_ids:
            raise ConfigInvalid(f"policy kind {kind!r} takes no nested_ids")
        normalized = REGISTRY[kind].validate_params(params, tuple(nested_ids))
        return cls(kind=kind, params=normalized, nested_ids=tuple(nested_ids))

    def to_doc(self) -> dict:
        return {"kind": self.kind, "params": dict(self.params),
                "nested_ids": list(self.nested_ids)}


@dataclass
class DecisionOutcome:
    """Selected action plus an optional diagnostic payload for the logbook."""

    action: dict
    log_hint: Optional[dict] = None


class ThetaView:
    """Summary-state access scoped to one experiment's namespace."""

    def __init__(self, store: ThetaStore, experiment_id: int):
        self._store = store
        self.experiment_id = experiment_id

    def get(self, key: str, value: str, name: str = "default") -> Optional[Document]:
        return self._store.get(self.experiment_id, name, key, value)

    def get_all(self, key: str, name: str = "default") -> dict:
        return self._store.get_all(self.experiment_id, name, key)

    def update(self, key: str, value: str, transform, name: str = "default") -> Document:
        return self._store.atomic_update(self.experiment_id, name, key, value, transform)


# ---------------------------------------------------------------------------
# parameter validation helpers

def _arms(params: dict) -> list:
    arms = params.get("arms")
    if not isinstance(arms, list) or not arms:
        raise ConfigInvalid("arms must be a non-empty list of labels")
    if any(not isinstance(a, str) or not a for a in arms):
        raise ConfigInvalid("arm labels must be non-empty strings")
    if len(set(arms)) != len(arms):
        raise ConfigInvalid("arm labels must be unique")
    return list(arms)


def _number(params: dict, name: str, default, minimum=None, strict_min=False):
    v = params.get(name, default)
    if not is_finite_number(v):
        raise ConfigInvalid(f"{name} must be a finite number")
    if minimum is not None and (v <= minimum if strict_min else v < minimum):
        op = ">" if strict_min else ">="
        raise ConfigInvalid(f"{name} must be {op} {minimum}")
    return float(v)


def _integer(params: dict, name: str, default, minimum=0) -> int:
    v = params.get(name, default)
    if isinstance(v, bool) or not isinstance(v, int) or v < minimum:
        raise ConfigInvalid(f"{name} must be an integer >= {minimum}")
    return v


def _string(params: dict, name: str, default) -> str:
    v = params.get(name, default)
    if not isinstance(v, str) or not v:
        raise ConfigInvalid(f"{name} must be a non-empty string")
    return v


def _activity_map(params: dict) -> dict:
    amap = params.get("activity_map", DEFAULT_ACTIVITY_MAP)
    if (not isinstance(amap, dict) or not amap
            or any(not isinstance(k, str) or not isinstance(v, str) for k, v in amap.items())):
        raise ConfigInvalid("activity_map must map weather strings to activity strings")
    return dict(amap)


def _reject_unknown(params: dict, allowed: set) -> None:
    unknown = set(params) - allowed
    if unknown:
        raise ConfigInvalid(f"unknown params: {sorted(unknown)}")


def _weather_label(context: dict, activity_map: dict) -> tuple:
    weather = context.get("weather")
    if not isinstance(weather, str) or weather not in activity_map:
        raise SchemaViolation(
            "context", f"weather must be one of {sorted(activity_map)}, got {weather!r}")
    userid = context.get("userid")
    if userid is None or isinstance(userid, bool) or not isinstance(userid, (str, int)):
        raise SchemaViolation("context", "userid must be a string or integer")
    return weather, weather + str(userid)


def _reward_number(reward: dict, field_name: str) -> float:
    if not isinstance(reward, dict) or field_name not in reward:
        raise SchemaViolation("reward", f"reward must carry field {field_name!r}")
    v = reward[field_name]
    if not is_finite_number(v):
        raise SchemaViolation("reward", f"reward field {field_name!r} must be a finite number")
    return float(v)


def _binary_outcome(reward: dict, field_name: str) -> int:
    if not isinstance(reward, dict) or field_name not in reward:
        raise SchemaViolation("reward", f"reward must carry field {field_name!r}")
    v = reward[field_name]
    if isinstance(v, bool):
        v = int(v)
    if v not in (0, 1):
        raise SchemaViolation("reward", f"reward field {field_name!r} must be 0 or 1")
    return v


def _action_label(action: dict, arms: list) -> str:
    if not isinstance(action, dict) or "version" not in action:
        raise SchemaViolation("action", "action must carry field 'version'")
    label = action["version"]
    if label not in arms:
        raise SchemaViolation("action", f"action version {label!r} is not a configured arm")
    return label


def _fold_proportion(outcome: int):
    def fold(doc):
        st = RunningProportion.from_doc(doc) if doc is not None else RunningProportion()
        st.update(outcome)
        return st.to_doc()
    return fold


def _fold_mean(x: float):
    def fold(doc):
        st = RunningMean.from_doc(doc) if doc is not None else RunningMean()
        st.update(x)
        return st.to_doc()
    return fold


# ---------------------------------------------------------------------------
# built-in policies

class EpsilonFirstPolicy:
    """Uniform exploration for a fixed number of interactions, then pure
    exploitation of the empirically best arm (the classic AB test)."""

    kind = "epsilon_first"

    @staticmethod
    def validate_params(params: dict, nested_ids: tuple) -> dict:
        _reject_unknown(params, {"arms", "exploration_n", "reward_field"})
        return {
            "arms": _arms(params),
            "exploration_n": _integer(params, "exploration_n", 1000),
            "reward_field": _string(params, "reward_field", "click"),
        }

    def decide(self, params, context, theta, rng, engine=None, depth=0) -> DecisionOutcome:
        lst = StatList.from_docs(theta.get_all("version"), RunningProportion, params["arms"])
        # strictly greater-than: exploration covers counts 0..exploration_n
        if lst.count() > params["exploration_n"]:
            label = lst.max()
        else:
            label = lst.random(rng)
        return DecisionOutcome(action={"version": label})

    def summarize(self, params, context, action, reward, theta, engine=None, depth=0) -> None:
        label = _action_label(action, params["arms"])
        outcome = _binary_outcome(reward, params["reward_field"])
        theta.update("version", label, _fold_proportion(outcome))


class ThompsonBernoulliPolicy:
    """Per-arm Beta(s+1, n-s+1) posterior sampling; selects the argmax draw,
    so each arm is chosen with the posterior probability that it is best."""

    kind = "thompson_bernoulli"

    @staticmethod
    def validate_params(params: dict, nested_ids: tuple) -> dict:
        _reject_unknown(params, {"arms", "reward_field"})
        return {"arms": _arms(params), "reward_field": _string(params, "reward_field", "click")}

    def decide(self, params, context, theta, rng, engine=None, depth=0) -> DecisionOutcome:
        docs = theta.get_all("version")
        lst = StatList.from_docs(docs, RunningProportion, params["arms"])
        best_label, best_draw = None, -1.0
        for label in params["arms"]:
            st = lst[label]
            draw = rng.betavariate(st.s + 1, st.n - st.s + 1)
            if draw > best_draw:
                best_label, best_draw = label, draw
        return DecisionOutcome(action={"version": best_label})

    # the summary step is identical to the AB test's
    summarize = EpsilonFirstPolicy.summarize


class MeanGoalPolicy:
    """Per-user, per-weather goal setting: suggest the running-average
    achieved distance scaled up by a fixed factor, with an explicit
    cold-start goal before any data, and the activity chosen by weather."""

    kind = "mean_goal"

    @staticmethod
    def validate_params(params: dict, nested_ids: tuple) -> dict:
        _reject_unknown(params, {"uplift", "cold_start_goal", "activity_map"})
        return {
            "uplift": _number(params, "uplift", 1.1, minimum=0, strict_min=True),
            "cold_start_goal": _number(params, "cold_start_goal", 1.0, minimum=0),
            "activity_map": _activity_map(params),
        }

    def decide(self, params, context, theta, rng, engine=None, depth=0) -> DecisionOutcome:
        weather, label = _weather_label(context, params["activity_map"])
        doc = theta.get("weather-uid", label)
        mean = RunningMean.from_doc(doc) if doc is not None else RunningMean()
        distance = mean.value() * params["uplift"]
        if distance == 0:
            distance = params["cold_start_goal"]
        return DecisionOutcome(action={"type": params["activity_map"][weather],
                                       "distance": distance})

    def summarize(self, params, context, action, reward, theta, engine=None, depth=0) -> None:
        _, label = _weather_label(context, params["activity_map"])
        km = _reward_number(reward, "km")
        theta.update("weather-uid", label, _fold_mean(km))


class LinearGoalPolicy:
    """Goal setting with the 10%-rule replaced by a learned response curve.

    The summary step regresses achieved distance on [delta, delta^2],
    where delta = set goal minus the running average achieved distance
    (read before folding the new reward, so decide and summarize agree on
    the same baseline). The decision step places the goal at the vertex
    of the fitted quadratic when it is concave, perturbed by Gaussian
    exploration noise and clamped to a configured interval.
    """

    kind = "linear_goal"

    @staticmethod
    def validate_params(params: dict, nested_ids: tuple) -> dict:
        _reject_unknown(params, {"delta_min", "delta_max", "lambda", "exploration_sd",
                                 "cold_start_goal", "activity_map"})
        delta_min = _number(params, "delta_min", -5.0)
        delta_max = _number(params, "delta_max", 5.0)
        if delta_max <= delta_min:
            raise ConfigInvalid("delta_max must be greater than delta_min")
        return {
            "delta_min": delta_min,
            "delta_max": delta_max,
            "lambda": _number(params, "lambda", 0.01, minimum=0),
            "exploration_sd": _number(params, "exploration_sd", 0.5, minimum=0),
            "cold_start_goal": _number(params, "cold_start_goal", 1.0, minimum=0),
            "activity_map": _activity_map(params),
        }

    def decide(self, params, context, theta, rng, engine=None, depth=0) -> DecisionOutcome:
        weather, label = _weather_label(context, params["activity_map"])
        activity = params["activity_map"][weather]
        mean_doc = theta.get("weather-uid", label, name="mean")
        if mean_doc is None or mean_doc["n"] == 0:
            return DecisionOutcome(action={"type": activity,
                                           "distance": params["cold_start_goal"]})
        mean = RunningMean.from_doc(mean_doc)
        model_doc = theta.get("weather-uid", label)
        model = (OnlineLinearModel.from_doc(model_doc) if model_doc is not None
                 else OnlineLinearModel(dim=3, ridge=params["lambda"]))
        try:
            beta = model.coefs()
        except SingularModel:
            # possible only at lambda=0 before the design spans the basis
            beta = (0.0, 0.0, 0.0)
        if beta[2] < 0:
            delta_star = _clamp(-beta[1] / (2 * beta[2]),
                                params["delta_min"], params["delta_max"])
        else:
            delta_star = 0.0
        delta = delta_star
        if params["exploration_sd"] > 0:
            delta += rng.gauss(0.0, params["exploration_sd"])
        delta = _clamp(delta, params["delta_min"], params["delta_max"])
        distance = max(0.0, mean.value() + delta)
        return DecisionOutcome(action={"type": activity, "distance": distance},
                               log_hint={"delta_star": delta_star, "delta": delta})

    def summarize(self, params, context, action, reward, theta, engine=None, depth=0) -> None:
        _, label = _weather_label(context, params["activity_map"])
        km = _reward_number(reward, "km")
        if not isinstance(action, dict) or not is_finite_number(action.get("distance")):
            raise SchemaViolation("action", "action must carry a finite 'distance'")
        goal = float(action["distance"])
        mean_doc = theta.get("weather-uid", label, name="mean")
        baseline = RunningMean.from_doc(mean_doc).value() if mean_doc is not None else 0.0
        delta = goal - baseline

        def fold_model(doc):
            model = (OnlineLinearModel.from_doc(doc) if doc is not None
                     else OnlineLinearModel(dim=3, ridge=params["lambda"]))
            model.update(km, [delta, delta * delta])
            return model.to_doc()

        theta.update("weather-uid", label, fold_model)
        theta.update("weather-uid", label, _fold_mean(km), name="mean")


class NestedPolicy:
    """Delegates both steps verbatim to a child experiment chosen by a
    router; the child's state namespace is used. The routed child id is
    carried back inside the action under the reserved field ``_nested_id``
    so the reward can reach the same child without server-side sessions."""

    kind = "nested"

    @staticmethod
    def validate_params(params: dict, nested_ids: tuple) -> dict:
        _reject_unknown(params, {"router"})
        router = params.get("router")
        if not isinstance(router, dict):
            raise ConfigInvalid("nested policy requires a router object")
        rkind = router.get("kind")
        if rkind == "split":
            weights = router.get("weights")
            if not isinstance(weights, dict) or not weights:
                raise ConfigInvalid("split router requires non-empty weights")
            parsed = {}
            for key, w in weights.items():
                try:
                    child = int(key)
                except (TypeError, ValueError):
                    raise ConfigInvalid(f"split weight key {key!r} is not an experiment id")
                if not is_finite_number(w) or w <= 0:
                    raise ConfigInvalid("split weights must be positive numbers")
                parsed[str(child)] = float(w)
                if child not in nested_ids:
                    raise ConfigInvalid(f"router child {child} is not in nested_ids")
            return {"router": {"kind": "split", "weights": parsed}}
        if rkind == "field":
            fname = router.get("field")
            if not isinstance(fname, str) or not fname:
                raise ConfigInvalid("field router requires a context field name")
            mapping = router.get("map")
            if not isinstance(mapping, dict) or not mapping:
                raise ConfigInvalid("field router requires a non-empty map")
            parsed = {}
            for key, child in mapping.items():
                if isinstance(child, bool) or not isinstance(child, int):
                    raise ConfigInvalid("field router map values must be experiment ids")
                if child not in nested_ids:
                    raise ConfigInvalid(f"router child {child} is not in nested_ids")
                parsed[str(key)] = child
            out = {"kind": "field", "field": fname, "map": parsed}
            if "default" in router:
                default = router["default"]
                if isinstance(default, bool) or not isinstance(default, int) \
                        or default not in nested_ids:
                    raise ConfigInvalid("router default must be one of nested_ids")
                out["default"] = default
            unknown = set(router) - {"kind", "field", "map", "default"}
            if unknown:
                raise ConfigInvalid(f"unknown router fields: {sorted(unknown)}")
            return {"router": out}
        raise ConfigInvalid("router kind must be 'split' or 'field'")

    @staticmethod
    def _route(params, context, rng) -> int:
        router = params["router"]
        if router["kind"] == "split":
            weights = router["weights"]
            children = sorted(weights, key=int)
            total = sum(weights.values())
            r = rng.random() * total
            acc = 0.0
            for child in children:
                acc += weights[child]
                if r < acc:
                    return int(child)
            return int(children[-1])
        v = context.get(router["field"])
        if v is None or isinstance(v, (dict, list)):
            if "default" in router:
                return router["default"]
            raise SchemaViolation("context",
                                  f"context must carry routable field {router['field']!r}")
        child = router["map"].get(str(v))
        if child is None:
            if "default" in router:
                return router["default"]
            raise SchemaViolation("context",
                                  f"no route for {router['field']}={v!r}")
        return child

    def decide(self, params, context, theta, rng, engine=None, depth=0) -> DecisionOutcome:
        child_id = self._route(params, context, rng)
        child = engine.lookup(child_id)
        outcome = engine.decide(child, context, rng, _depth=depth + 1)
        action = dict(outcome.action)
        action["_nested_id"] = child_id
        return DecisionOutcome(action=action, log_hint=outcome.log_hint)

    def summarize(self, params, context, action, reward, theta, engine=None, depth=0) -> None:
        if not isinstance(action, dict) or "_nested_id" not in action:
            raise SchemaViolation("action", "action must carry the '_nested_id' routing field")
        child_id = action["_nested_id"]
        if isinstance(child_id, bool) or not isinstance(child_id, int) \
                or child_id not in theta_nested_ids(engine, theta.experiment_id):
            raise SchemaViolation("action", f"_nested_id {child_id!r} is not a configured child")
        child = engine.lookup(child_id)
        inner = {k: v for k, v in action.items() if k != "_nested_id"}
        engine.summarize(child, context, inner, reward, _depth=depth + 1)


def theta_nested_ids(engine, experiment_id: int) -> tuple:
    return engine.lookup(experiment_id).config.nested_ids


def _clamp(x: float, lo: float, hi: float) -> float:
    return lo if x < lo else hi if x > hi else x


REGISTRY = {
    cls.kind: cls() for cls in
    (EpsilonFirstPolicy, ThompsonBernoulliPolicy, MeanGoalPolicy, LinearGoalPolicy, NestedPolicy)
}


class PolicyEngine:
    """Dispatches decide/summarize for an experiment, following nesting."""

    def __init__(self, lookup, theta: ThetaStore):
        # lookup: experiment id -> object with .id and .config
        self.lookup = lookup
        self.theta = theta

    def decide(self, experiment, context: dict, rng, _depth: int = 0) -> DecisionOutcome:
        if _depth > MAX_NESTING_DEPTH:
            raise ConfigInvalid("nested delegation exceeds the depth limit")
        if not isinstance(context, dict):
            raise SchemaViolation("context", "context must be a JSON object")
        handler = REGISTRY[experiment.config.kind]
        view = ThetaView(self.theta, experiment.id)
        return handler.decide(experiment.config.params, context, view, rng,
                              engine=self, depth=_depth)

    def summarize(self, experiment, context: dict, action: dict, reward: dict,
                  _depth: int = 0) -> None:
        if _depth > MAX_NESTING_DEPTH:
            raise ConfigInvalid("nested delegation exceeds the depth limit")
        if not isinstance(context, dict):
            raise SchemaViolation("context", "context must be a JSON object")
        handler = REGISTRY[experiment.config.kind]
        view = ThetaView(self.theta, experiment.id)
        handler.summarize(experiment.config.params, context, action, reward, view,
                          engine=self, depth=_depth)
