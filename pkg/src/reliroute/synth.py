"""Seeded synthetic cohorts for property tests and the bundled fixture.

Randomness comes from numpy's PCG64 bit generator seeded with a 64-bit
integer, so a seed pins the cohort on any platform numpy supports.

Samples are i.i.d. given the spec, so calibration and test splits are
exchangeable. ``coupling`` ties each sample's error probability to its
emitted uncertainty (and to the OOD / low-quality flags); at 0 the error
rate is the same for every sample.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .calibration import CLASSIFICATION, REGRESSION
from .errors import ConfigurationError
from .symptom_space import (
    COVERAGE_PATTERNS,
    MISSING,
    N_NODES,
    RELIABILITY_NODE,
    SymptomRecord,
    reliability_state,
)
from .table import SampleRow, SampleTable, subject_split


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


@dataclass(frozen=True)
class SynthSpec:
    task: str = CLASSIFICATION
    n_subjects: int = 200
    samples_per_subject: int = 5
    n_classes: int = 3
    datasets: tuple = ("PADS",)
    node_missing_rate: float = 0.05
    coupling: float = 0.6
    base_accuracy: float = 0.75
    ood_fraction: float = 0.1
    low_quality_fraction: float = 0.1
    noise: float = 1.0
    band_halfwidth: float = 1.0
    split_fractions: tuple = (0.6, 0.2, 0.2)

    def __post_init__(self):
        if self.task not in (CLASSIFICATION, REGRESSION):
            raise ConfigurationError(f"unknown task {self.task!r}")
        if self.n_subjects < 1 or self.samples_per_subject < 1:
            raise ConfigurationError("cohort sizes must be positive")
        if self.n_classes < 2:
            raise ConfigurationError("need at least two classes")
        for d in self.datasets:
            if d not in COVERAGE_PATTERNS:
                raise ConfigurationError(f"no coverage pattern for dataset {d!r}")
        for name in ("node_missing_rate", "ood_fraction", "low_quality_fraction", "base_accuracy"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigurationError(f"{name} must lie in [0, 1]")


@dataclass
class Cohort:
    table: SampleTable
    truth: dict = field(default_factory=dict)


def signal_arrays(rng: np.random.Generator, n: int, spec: SynthSpec) -> dict:
    """Draw the per-sample reliability signals shared by both task kinds."""
    u = rng.uniform(0.0, 1.0, n)
    is_ood = rng.uniform(size=n) < spec.ood_fraction
    o = np.where(is_ood, rng.uniform(0.6, 1.0, n), rng.uniform(0.0, 0.55, n))
    low_q = rng.uniform(size=n) < spec.low_quality_fraction
    q = np.where(low_q, rng.uniform(0.5, 0.95, n), rng.uniform(0.95, 1.0, n))
    # centred difficulty: 0 on average for a clean, median-uncertainty sample
    difficulty = (u - 0.5) + 0.3 * is_ood + 0.2 * low_q
    return {"u": u, "o": o, "q": q, "is_ood": is_ood, "low_q": low_q, "difficulty": difficulty}


def classification_arrays(rng: np.random.Generator, n: int, spec: SynthSpec) -> dict:
    sig = signal_arrays(rng, n, spec)
    K = spec.n_classes
    p_correct = np.clip(spec.base_accuracy - spec.coupling * sig["difficulty"], 1.0 / K, 0.99)
    labels = rng.integers(0, K, n)
    correct = rng.uniform(size=n) < p_correct
    shift = rng.integers(1, K, n)
    predicted = np.where(correct, labels, (labels + shift) % K)
    logits = rng.normal(0.0, 0.5, (n, K))
    margin = 0.5 + 2.5 * (1.0 - sig["u"])
    logits[np.arange(n), predicted] += margin
    sig.update(labels=labels, logits=logits, p_correct=p_correct, correct=correct)
    return sig


def regression_arrays(rng: np.random.Generator, n: int, spec: SynthSpec) -> dict:
    sig = signal_arrays(rng, n, spec)
    x = rng.uniform(0.0, 1.0, n)
    mean = 20.0 + 10.0 * x
    sd = spec.noise * np.maximum(0.1, 1.0 + spec.coupling * 2.0 * sig["difficulty"])
    y = mean + sd * rng.normal(size=n)
    sig.update(point=mean, q_low=mean - spec.band_halfwidth, q_high=mean + spec.band_halfwidth,
               labels=y, sd=sd)
    return sig


def generate_synthetic_cohort(seed: int, spec: SynthSpec = SynthSpec()) -> Cohort:
    rng = make_rng(seed)
    n = spec.n_subjects * spec.samples_per_subject
    arrays = (classification_arrays if spec.task == CLASSIFICATION else regression_arrays)(rng, n, spec)
    node_values = rng.uniform(0.0, 1.0, (n, N_NODES))
    node_drop = rng.uniform(size=(n, N_NODES)) < spec.node_missing_rate

    width = len(str(spec.n_subjects - 1))
    subjects = [f"S{i:0{width}d}" for i in range(spec.n_subjects)]
    splits = subject_split(subjects, seed, spec.split_fractions)
    table = SampleTable(spec.task, payload="logit" if spec.task == CLASSIFICATION else "band",
                        n_classes=spec.n_classes if spec.task == CLASSIFICATION else None)
    for i in range(n):
        s_idx, visit = divmod(i, spec.samples_per_subject)
        dataset = spec.datasets[s_idx % len(spec.datasets)]
        observable = COVERAGE_PATTERNS[dataset]
        nodes = [MISSING] * N_NODES
        for j in observable:
            if j != RELIABILITY_NODE and not node_drop[i, j]:
                nodes[j] = float(node_values[i, j])
        clinical = [j for j in observable if j != RELIABILITY_NODE]
        c = 1.0 - sum(nodes[j] is MISSING for j in clinical) / len(observable)
        q, u, o = float(arrays["q"][i]), float(arrays["u"][i]), float(arrays["o"][i])
        nodes[RELIABILITY_NODE] = reliability_state(c, q, u)
        record = SymptomRecord(f"{subjects[s_idx]}-{visit}", subjects[s_idx], dataset, float(visit),
                               tuple(nodes))
        if spec.task == CLASSIFICATION:
            row = SampleRow(record, q, u, o, split=splits[subjects[s_idx]],
                            label=int(arrays["labels"][i]),
                            logits=tuple(float(v) for v in arrays["logits"][i]))
        else:
            row = SampleRow(record, q, u, o, split=splits[subjects[s_idx]],
                            label=float(arrays["labels"][i]), point=float(arrays["point"][i]),
                            q_low=float(arrays["q_low"][i]), q_high=float(arrays["q_high"][i]))
        table.rows.append(row)
    truth = {k: arrays[k] for k in ("is_ood", "low_q", "difficulty")}
    if spec.task == CLASSIFICATION:
        truth["p_correct"] = arrays["p_correct"]
    else:
        truth["sd"] = arrays["sd"]
    return Cohort(table, truth)
