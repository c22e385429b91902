import numpy as np
import pytest

from reliroute.errors import ConfigurationError
from reliroute.symptom_space import RELIABILITY_NODE, coverage_pattern
from reliroute.synth import SynthSpec, generate_synthetic_cohort
from reliroute.table import to_csv


def test_same_seed_byte_identical():
    assert to_csv(generate_synthetic_cohort(11).table) == to_csv(generate_synthetic_cohort(11).table)
    assert to_csv(generate_synthetic_cohort(11).table) != to_csv(generate_synthetic_cohort(12).table)


def test_coverage_pattern_respected():
    spec = SynthSpec(n_subjects=10, datasets=("PADS", "Daphnet"))
    for r in generate_synthetic_cohort(0, spec).table.rows:
        obs = coverage_pattern(r.record.dataset_id).observable_nodes
        for j, m in enumerate(r.record.mask):
            if j not in obs:
                assert m
        assert not r.record.mask[RELIABILITY_NODE]


def test_splits_are_subject_level():
    t = generate_synthetic_cohort(2).table
    per_subject = {}
    for r in t.rows:
        per_subject.setdefault(r.record.subject_id, set()).add(r.split)
    assert all(len(s) == 1 for s in per_subject.values())


def test_zero_coupling_flat_error_rate():
    c = generate_synthetic_cohort(0, SynthSpec(coupling=0.0))
    assert np.all(c.truth["p_correct"] == 0.75)


def test_coupling_makes_uncertainty_informative():
    c = generate_synthetic_cohort(0, SynthSpec(n_subjects=400, coupling=0.6))
    rows = c.table.rows
    u = np.array([r.uncertainty for r in rows])
    ok = np.array([np.argmax(r.logits) == r.label for r in rows])
    assert ok[u < 0.3].mean() > ok[u > 0.7].mean() + 0.2


def test_spec_validation():
    with pytest.raises(ConfigurationError):
        SynthSpec(datasets=("Nowhere",))
    with pytest.raises(ConfigurationError):
        SynthSpec(n_classes=1)
