import pytest

from reliroute.errors import InputError
from reliroute.symptom_space import MISSING, NormalizationSpec
from reliroute.synth import SynthSpec, generate_synthetic_cohort
from reliroute.table import ingest_csv, parse_csv, subject_split, to_csv

HEADER = ("sample_id,subject_id,dataset_id,timestamp,node_0,node_1,node_2,node_3,node_4,node_5,node_6,"
          "node_7,quality,uncertainty,ood,logit_0,logit_1,label")


def row(sid="a", nodes="0.1,0.2,NA,,0.5,0.6,0.7,0.9", label="1"):
    return f"{sid},p1,PADS,0,{nodes},0.99,0.1,0.2,0.3,1.2,{label}"


def test_parse_basic():
    t = parse_csv("\n".join([HEADER, row()]), "classification")
    r = t.rows[0]
    assert t.n_classes == 2 and t.payload == "logit"
    assert r.record.nodes[2] is MISSING and r.record.nodes[3] is MISSING
    assert r.record.nodes[0] == 0.1
    assert r.label == 1 and r.logits == (0.3, 1.2)


def test_duplicate_ids_name_both_lines():
    with pytest.raises(InputError, match="lines 2 and 3"):
        parse_csv("\n".join([HEADER, row("a"), row("a")]), "classification")


def test_header_only_is_empty_table():
    assert len(parse_csv(HEADER + "\n", "classification")) == 0


def test_empty_file():
    with pytest.raises(InputError, match="empty"):
        parse_csv("", "classification")


def test_missing_column_named():
    bad = HEADER.replace(",ood", ",oodx")
    with pytest.raises(InputError, match="ood"):
        parse_csv(bad + "\n", "classification")


def test_out_of_range_node_rejected_without_normalization():
    with pytest.raises(InputError, match="node_0"):
        parse_csv("\n".join([HEADER, row(nodes="3,0.2,0.3,0.4,0.5,0.6,0.7,0.9")]), "classification")


def test_normalization_clamps_and_records():
    text = "\n".join([HEADER, row(nodes="12,0.2,0.3,0.4,0.5,0.6,0.7,0.9")])
    t = parse_csv(text, "classification", {0: NormalizationSpec(0, 10)})
    assert t.rows[0].record.nodes[0] == 1.0
    assert t.rows[0].record.clamped == (0,)


def test_bad_label_and_field_count():
    with pytest.raises(InputError, match="label"):
        parse_csv("\n".join([HEADER, row(label="5")]), "classification")
    with pytest.raises(InputError, match="fields"):
        parse_csv("\n".join([HEADER, row() + ",extra"]), "classification")
    with pytest.raises(InputError, match="not numeric"):
        parse_csv("\n".join([HEADER, row(label="x")]), "classification")


def test_unreadable_path(tmp_path):
    with pytest.raises(InputError, match="cannot read"):
        ingest_csv(tmp_path / "nope.csv", "classification")


@pytest.mark.parametrize("task", ["classification", "regression"])
def test_round_trip_lossless(task):
    table = generate_synthetic_cohort(3, SynthSpec(task=task, n_subjects=6)).table
    text = to_csv(table)
    again = parse_csv(text, task)
    assert to_csv(again) == text
    assert [r.record for r in again.rows] == [r.record for r in table.rows]


def test_subject_split_deterministic_and_whole():
    subjects = [f"s{i}" for i in range(10)]
    a = subject_split(subjects * 3, seed=5)
    assert a == subject_split(list(reversed(subjects)), seed=5)
    assert sorted(a.values()).count("train") == 6
    assert set(a) == set(subjects)
