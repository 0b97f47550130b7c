"""Streaming estimators that summarize an unbounded stream into fixed-size state.

Every update is O(1) (O(d^2) for the linear model); no operation's cost
grows with the number of observations. All types serialize to plain
documents with a ``kind`` tag so they can live in the state store; the
serialized field names are a stable persistence format.
"""

from __future__ import annotations

import math
from typing import Callable, Mapping, Optional, Sequence, Union

import numpy as np

from .documents import Document
from .errors import InvalidObservation, MalformedState, SingularModel


class RunningMean:
    """Incremental arithmetic mean. A fresh instance reports mean 0 with n = 0."""

    __slots__ = ("n", "mean")
    KIND = "mean"

    def __init__(self, n: int = 0, mean: float = 0.0):
        self.n = n
        self.mean = mean

    def update(self, x: float) -> None:
        if isinstance(x, bool) or not isinstance(x, (int, float)) or not math.isfinite(x):
            raise InvalidObservation(f"mean update requires a finite number, got {x!r}")
        self.n += 1
        self.mean += (x - self.mean) / self.n

    def value(self) -> float:
        return self.mean

    def to_doc(self) -> dict:
        return {"kind": self.KIND, "n": self.n, "mean": self.mean}

    @classmethod
    def from_doc(cls, doc: Document) -> "RunningMean":
        _check_doc(doc, cls.KIND, {"n": int, "mean": (int, float)})
        return cls(n=doc["n"], mean=float(doc["mean"]))

    def __eq__(self, other):
        return isinstance(other, RunningMean) and (self.n, self.mean) == (other.n, other.mean)

    def __repr__(self):
        return f"RunningMean(n={self.n}, mean={self.mean})"


class RunningProportion:
    """Success proportion over binary trials."""

    __slots__ = ("n", "s")
    KIND = "proportion"

    def __init__(self, n: int = 0, s: int = 0):
        self.n = n
        self.s = s

    def update(self, outcome) -> None:
        if isinstance(outcome, bool):
            outcome = int(outcome)
        if outcome not in (0, 1):
            raise InvalidObservation(f"proportion update requires 0 or 1, got {outcome!r}")
        self.n += 1
        self.s += outcome

    def value(self) -> float:
        return self.s / self.n if self.n else 0.0

    def to_doc(self) -> dict:
        return {"kind": self.KIND, "n": self.n, "s": self.s}

    @classmethod
    def from_doc(cls, doc: Document) -> "RunningProportion":
        _check_doc(doc, cls.KIND, {"n": int, "s": int})
        if not 0 <= doc["s"] <= doc["n"]:
            raise MalformedState(f"proportion needs 0 <= s <= n, got s={doc['s']} n={doc['n']}")
        return cls(n=doc["n"], s=doc["s"])

    def __eq__(self, other):
        return isinstance(other, RunningProportion) and (self.n, self.s) == (other.n, other.s)

    def __repr__(self):
        return f"RunningProportion(n={self.n}, s={self.s})"


class RunningMoments:
    """Single-pass (Welford) second moments of an (x, y) stream.

    Tracks the sum of squared deviations of x and the sum of
    co-deviations of (x, y); the naive sum-of-squares form is avoided
    because it cancels catastrophically for large offsets.
    """

    __slots__ = ("n", "mean_x", "mean_y", "m2_x", "cross")
    KIND = "moments"

    def __init__(self, n: int = 0, mean_x: float = 0.0, mean_y: float = 0.0,
                 m2_x: float = 0.0, cross: float = 0.0):
        self.n = n
        self.mean_x = mean_x
        self.mean_y = mean_y
        self.m2_x = m2_x
        self.cross = cross

    def update(self, x: float, y: float = 0.0) -> None:
        for v in (x, y):
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
                raise InvalidObservation(f"moments update requires finite numbers, got {v!r}")
        self.n += 1
        dx = x - self.mean_x
        self.mean_x += dx / self.n
        self.m2_x += dx * (x - self.mean_x)
        dy = y - self.mean_y
        self.mean_y += dy / self.n
        self.cross += dx * (y - self.mean_y)

    def variance(self) -> Optional[float]:
        """Sample variance of x, or None when fewer than two observations."""
        if self.n < 2:
            return None
        return self.m2_x / (self.n - 1)

    def covariance(self) -> Optional[float]:
        """Sample covariance of (x, y), or None when fewer than two observations."""
        if self.n < 2:
            return None
        return self.cross / (self.n - 1)

    def to_doc(self) -> dict:
        return {"kind": self.KIND, "n": self.n, "mean_x": self.mean_x,
                "mean_y": self.mean_y, "m2_x": self.m2_x, "cross": self.cross}

    @classmethod
    def from_doc(cls, doc: Document) -> "RunningMoments":
        _check_doc(doc, cls.KIND, {"n": int, "mean_x": (int, float), "mean_y": (int, float),
                                   "m2_x": (int, float), "cross": (int, float)})
        return cls(n=doc["n"], mean_x=float(doc["mean_x"]), mean_y=float(doc["mean_y"]),
                   m2_x=float(doc["m2_x"]), cross=float(doc["cross"]))

    def __eq__(self, other):
        if not isinstance(other, RunningMoments):
            return NotImplemented
        return (self.n, self.mean_x, self.mean_y, self.m2_x, self.cross) == \
               (other.n, other.mean_x, other.mean_y, other.m2_x, other.cross)

    def __repr__(self):
        return f"RunningMoments(n={self.n}, mean_x={self.mean_x}, mean_y={self.mean_y})"


class OnlineLinearModel:
    """Ridge-regularized linear regression fitted in a stream.

    Maintains the d x d Gram matrix A = lambda*I + sum(x x^T) and the
    moment vector b = sum(x*y), with an intercept term prepended to every
    feature vector. Coefficients are solved on demand; dimensions stay
    small (d <= ~10) so an O(d^3) solve per decision is cheap.
    """

    KIND = "linear_model"

    def __init__(self, dim: int, ridge: float = 0.01,
                 A: Optional[np.ndarray] = None, b: Optional[np.ndarray] = None, n: int = 0):
        if dim < 1:
            raise MalformedState(f"model dimension must be >= 1, got {dim}")
        self.dim = dim
        self.ridge = float(ridge)
        self.A = np.array(A, dtype=float) if A is not None else self.ridge * np.eye(dim)
        self.b = np.array(b, dtype=float) if b is not None else np.zeros(dim)
        self.n = n
        if self.A.shape != (dim, dim) or self.b.shape != (dim,):
            raise MalformedState("model matrix shapes do not match dimension")

    def update(self, y: float, x: Sequence[float]) -> None:
        if len(x) != self.dim - 1:
            raise InvalidObservation(
                f"feature vector length {len(x)} does not match model dimension {self.dim} - 1")
        row = np.empty(self.dim)
        row[0] = 1.0
        row[1:] = x
        if not (np.all(np.isfinite(row)) and isinstance(y, (int, float))
                and not isinstance(y, bool) and math.isfinite(y)):
            raise InvalidObservation("linear model update requires finite y and features")
        self.A += np.outer(row, row)
        self.b += row * y
        self.n += 1

    def coefs(self) -> np.ndarray:
        """Solve A*beta = b. Deterministic for fixed state."""
        try:
            beta = np.linalg.solve(self.A, self.b)
        except np.linalg.LinAlgError as e:
            raise SingularModel(f"normal equations are singular: {e}") from e
        if not np.all(np.isfinite(beta)):
            raise SingularModel("normal equations produced non-finite coefficients")
        return beta

    def to_doc(self) -> dict:
        return {"kind": self.KIND, "d": self.dim, "n": self.n, "lambda": self.ridge,
                "A": self.A.tolist(), "b": self.b.tolist()}

    @classmethod
    def from_doc(cls, doc: Document) -> "OnlineLinearModel":
        _check_doc(doc, cls.KIND, {"d": int, "n": int, "lambda": (int, float),
                                   "A": list, "b": list})
        try:
            return cls(dim=doc["d"], ridge=doc["lambda"], A=doc["A"], b=doc["b"], n=doc["n"])
        except (ValueError, MalformedState) as e:
            raise MalformedState(f"bad linear model document: {e}") from e

    def __eq__(self, other):
        if not isinstance(other, OnlineLinearModel):
            return NotImplemented
        return (self.dim == other.dim and self.n == other.n and self.ridge == other.ridge
                and np.array_equal(self.A, other.A) and np.array_equal(self.b, other.b))

    def __repr__(self):
        return f"OnlineLinearModel(dim={self.dim}, n={self.n}, ridge={self.ridge})"


StatState = Union[RunningMean, RunningProportion, RunningMoments, OnlineLinearModel]

_KINDS = {cls.KIND: cls for cls in
          (RunningMean, RunningProportion, RunningMoments, OnlineLinearModel)}


def stat_from_doc(doc: Document) -> StatState:
    """Decode any serialized summary state, dispatching on its ``kind`` tag."""
    if not isinstance(doc, dict):
        raise MalformedState(f"state document must be an object, got {type(doc).__name__}")
    kind = doc.get("kind")
    cls = _KINDS.get(kind)
    if cls is None:
        raise MalformedState(f"unknown state kind {kind!r}")
    return cls.from_doc(doc)


def validate_state_doc(doc: Document) -> None:
    """Raise MalformedState unless doc decodes to a summary state."""
    stat_from_doc(doc)


def _check_doc(doc, kind, fields):
    if not isinstance(doc, dict):
        raise MalformedState(f"state document must be an object, got {type(doc).__name__}")
    if doc.get("kind") != kind:
        raise MalformedState(f"expected kind {kind!r}, got {doc.get('kind')!r}")
    for name, types in fields.items():
        if name not in doc:
            raise MalformedState(f"state document of kind {kind!r} is missing field {name!r}")
        v = doc[name]
        if isinstance(v, bool) or not isinstance(v, types):
            raise MalformedState(f"field {name!r} has wrong type in kind {kind!r} document")
    if isinstance(fields.get("n"), type) and doc["n"] < 0:
        raise MalformedState("count n cannot be negative")


class StatList:
    """Ordered view over homogeneous per-label states, e.g. one proportion per arm.

    Built from a label -> document mapping (absent labels get a fresh zero
    state) so a policy can reason over "all possible values" of a key.
    """

    def __init__(self, entries: "dict[str, StatState]"):
        self.entries = entries

    @classmethod
    def from_docs(cls, docs: Mapping[str, Document], factory: Callable[[], StatState],
                  labels: Sequence[str]) -> "StatList":
        proto_kind = factory().KIND
        entries = {}
        for label in labels:
            doc = docs.get(label)
            if doc is None:
                entries[label] = factory()
            else:
                stat = stat_from_doc(doc)
                if stat.KIND != proto_kind:
                    raise MalformedState(
                        f"label {label!r} holds kind {stat.KIND!r}, expected {proto_kind!r}")
                entries[label] = stat
        return cls(entries)

    def count(self) -> int:
        """Total observations across all entries."""
        return sum(st.n for st in self.entries.values())

    def max(self) -> str:
        """Label with the highest value(); ties go to the lexicographically smallest."""
        if not self.entries:
            raise ValueError("max() on an empty list")
        best_label, best_value = None, None
        for label in sorted(self.entries):
            v = self.entries[label].value()
            if best_value is None or v > best_value:
                best_label, best_value = label, v
        return best_label

    def random(self, rng) -> str:
        """Uniformly chosen label, drawn from the supplied generator."""
        if not self.entries:
            raise ValueError("random() on an empty list")
        labels = list(self.entries)
        return labels[rng.randrange(len(labels))]

    def labels(self) -> list:
        return list(self.entries)

    def __getitem__(self, label: str) -> StatState:
        return self.entries[label]

    def __len__(self):
        return len(self.entries)
