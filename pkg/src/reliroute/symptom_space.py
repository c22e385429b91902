"""Shared 8-node symptom representation with explicit missingness.

Node order is fixed: the seven clinical nodes followed by the auxiliary
``reliability_state`` node. Missing values are carried by the ``MISSING``
sentinel, never by 0 or NaN.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigurationError, ContractViolation, InputError

NODE_NAMES = (
    "tremor",
    "bradykinesia",
    "axial_gait",
    "motor_fluctuation",
    "cognition",
    "sleep_autonomic",
    "mood",
    "reliability_state",
)
N_NODES = len(NODE_NAMES)
RELIABILITY_NODE = 7


class _Missing:
    """Singleton marking an unobserved node. Any arithmetic on it is a bug."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "MISSING"

    def __bool__(self):
        raise ContractViolation("truth value of MISSING node is undefined")

    def _fail(self, *_):
        raise ContractViolation("arithmetic on a MISSING symptom node")

    __float__ = __int__ = __neg__ = __abs__ = _fail
    __add__ = __radd__ = __sub__ = __rsub__ = _fail
    __mul__ = __rmul__ = __truediv__ = __rtruediv__ = __pow__ = _fail
    __lt__ = __le__ = __gt__ = __ge__ = _fail

    def __reduce__(self):
        return (_Missing, ())


MISSING = _Missing()


def is_missing(value) -> bool:
    return value is MISSING


def node_index(name_or_index) -> int:
    """Resolve a node name (or ``node_<j>`` / integer) to its index."""
    if isinstance(name_or_index, (int, np.integer)):
        idx = int(name_or_index)
    elif name_or_index in NODE_NAMES:
        idx = NODE_NAMES.index(name_or_index)
    elif isinstance(name_or_index, str) and name_or_index.startswith("node_"):
        idx = int(name_or_index[5:])
    else:
        raise ConfigurationError(f"unknown symptom node {name_or_index!r}")
    if not 0 <= idx < N_NODES:
        raise ConfigurationError(f"node index {idx} out of range")
    return idx


@dataclass(frozen=True)
class SymptomRecord:
    sample_id: str
    subject_id: str
    dataset_id: str
    timestamp: float
    nodes: tuple
    clamped: tuple = ()

    def __post_init__(self):
        nodes = tuple(self.nodes)
        if len(nodes) != N_NODES:
            raise InputError(f"{self.sample_id}: expected {N_NODES} nodes, got {len(nodes)}")
        for j, v in enumerate(nodes):
            if v is MISSING:
                continue
            if not isinstance(v, (int, float, np.floating)) or not math.isfinite(v):
                raise InputError(f"{self.sample_id}: node {NODE_NAMES[j]} is not a finite number")
            if not 0.0 <= v <= 1.0:
                raise InputError(f"{self.sample_id}: node {NODE_NAMES[j]}={v} outside [0, 1]")
        object.__setattr__(self, "nodes", nodes)

    @property
    def mask(self) -> tuple[bool, ...]:
        return tuple(v is MISSING for v in self.nodes)


@dataclass(frozen=True)
class ObservableSet:
    dataset_id: str
    observable_nodes: frozenset

    def __post_init__(self):
        nodes = frozenset(node_index(j) for j in self.observable_nodes)
        if not nodes:
            raise ConfigurationError(f"dataset {self.dataset_id!r} has an empty observable set")
        if RELIABILITY_NODE not in nodes:
            raise ConfigurationError(
                f"dataset {self.dataset_id!r}: reliability_state must be observable"
            )
        object.__setattr__(self, "observable_nodes", nodes)


# Per-dataset node coverage of the five reference cohorts.
COVERAGE_PATTERNS = {
    "PPMI": frozenset(range(8)),
    "mPower": frozenset({0, 1, 2, 3, 4, 7}),
    "PADS": frozenset({0, 1, 7}),
    "Daphnet": frozenset({1, 2, 3, 7}),
    "UCI": frozenset({7}),
}


def coverage_pattern(dataset_id: str) -> ObservableSet:
    try:
        return ObservableSet(dataset_id, COVERAGE_PATTERNS[dataset_id])
    except KeyError:
        raise ConfigurationError(f"no built-in coverage pattern for {dataset_id!r}") from None


@dataclass(frozen=True)
class NormalizationSpec:
    x_min: float
    x_max: float
    epsilon: float = 1e-9
    flip_to_severity: bool = False

    def __post_init__(self):
        if not (math.isfinite(self.x_min) and math.isfinite(self.x_max)):
            raise ConfigurationError("normalization bounds must be finite")
        if self.x_max < self.x_min:
            raise ConfigurationError(f"x_max={self.x_max} < x_min={self.x_min}")
        if not self.epsilon > 0:
            raise ConfigurationError("epsilon must be positive")

    def clamps(self, x: float) -> bool:
        """True when ``x`` falls outside the unit interval before clamping."""
        raw = (x - self.x_min) / (self.x_max - self.x_min + self.epsilon)
        return raw < 0.0 or raw > 1.0


def normalize_severity(x: float, spec: NormalizationSpec) -> float:
    """Min-max normalize ``x`` into [0, 1], flipping to severity when asked.

    Values outside ``[x_min, x_max]`` are clamped rather than rejected.
    """
    if isinstance(x, _Missing) or not math.isfinite(x):
        raise InputError(f"cannot normalize non-finite value {x!r}")
    x_norm = (x - spec.x_min) / (spec.x_max - spec.x_min + spec.epsilon)
    x_norm = min(max(x_norm, 0.0), 1.0)
    return 1.0 - x_norm if spec.flip_to_severity else x_norm


def completeness(record: SymptomRecord, obs: ObservableSet) -> float:
    if obs.dataset_id != record.dataset_id:
        raise ConfigurationError(
            f"observable set for {obs.dataset_id!r} applied to record from {record.dataset_id!r}"
        )
    if not obs.observable_nodes:
        raise ConfigurationError("empty observable set")
    mask = record.mask
    n_missing = sum(mask[j] for j in obs.observable_nodes)
    return 1.0 - n_missing / len(obs.observable_nodes)


def product_reliability(c: float, q: float, u: float) -> float:
    return c * q * (1.0 - min(u, 1.0))


def reliability_state(
    c: float,
    q: float,
    u: float,
    policy: Callable[[float, float, float], float] = product_reliability,
) -> float:
    """Collapse completeness, quality and normalized uncertainty into [0, 1].

    ``u`` must already be rescaled by the branch's uncertainty normalizer;
    values above 1 are clamped. The default policy is ``c * q * (1 - u)``.
    """
    for name, v in (("c", c), ("q", q)):
        if not (math.isfinite(v) and 0.0 <= v <= 1.0):
            raise InputError(f"{name}={v} outside [0, 1]")
    if not (math.isfinite(u) and u >= 0.0):
        raise InputError(f"u={u} must be finite and nonnegative")
    r = policy(c, q, u)
    return min(max(r, 0.0), 1.0)


@dataclass(frozen=True)
class ReliabilitySignals:
    quality: float
    uncertainty: float
    ood: float
    completeness: float
    reliability: float | None = None

    def __post_init__(self):
        for name in ("quality", "uncertainty", "ood", "completeness"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise InputError(f"reliability signal {name} is not finite: {v!r}")


@dataclass(frozen=True)
class UncertaintyNormalizer:
    """Min-max map of raw uncertainty onto [0, 1], frozen on validation data."""

    u_min: float
    u_max: float

    @classmethod
    def fit(cls, values: Sequence[float]) -> "UncertaintyNormalizer":
        arr = np.asarray(values, dtype=float)
        if arr.size == 0:
            raise ConfigurationError("cannot fit uncertainty normalizer on empty data")
        return cls(float(arr.min()), float(arr.max()))

    def __call__(self, u: float) -> float:
        span = self.u_max - self.u_min
        if span <= 0:
            return 0.0 if u <= self.u_min else 1.0
        return min(max((u - self.u_min) / span, 0.0), 1.0)


def attention_aggregate(query, keys, values):
    """Softmax dot-product attention over symptom nodes.

    Returns the per-node weights and the weighted sum of ``values``.
    """
    q = np.asarray(query, dtype=float)
    k = np.asarray(keys, dtype=float)
    v = np.asarray(values, dtype=float)
    if k.ndim != 2 or v.ndim != 2 or len(k) == 0 or len(k) != len(v):
        raise InputError("keys and values must be non-empty lists of equal length")
    if q.ndim != 1 or k.shape[1] != q.shape[0]:
        raise InputError(f"query dim {q.shape} does not match key dim {k.shape[1:]}")
    logits = k @ q
    weights = softmax(logits)
    return weights, weights @ v


def softmax(logits, axis=-1):
    z = np.asarray(logits, dtype=float)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)
