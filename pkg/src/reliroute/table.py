"""CSV sample tables: ingestion, serialization and subject-level splits.

Header layout::

    sample_id,subject_id,dataset_id,timestamp,[split,]node_0..node_7,
    quality,uncertainty,ood,<payload>,[label]

Classification payload is ``logit_0..logit_{K-1}`` or ``prob_0..prob_{K-1}``;
regression payload is ``point,q_low,q_high``. Missing node cells are empty
or ``NA``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .calibration import CLASSIFICATION, REGRESSION, ClassifierOutput, RegressorOutput
from .errors import InputError
from .symptom_space import MISSING, N_NODES, NormalizationSpec, SymptomRecord, normalize_severity

ID_COLUMNS = ("sample_id", "subject_id", "dataset_id", "timestamp")
NODE_COLUMNS = tuple(f"node_{j}" for j in range(N_NODES))
SIGNAL_COLUMNS = ("quality", "uncertainty", "ood")
REGRESSION_COLUMNS = ("point", "q_low", "q_high")
MISSING_TOKENS = ("", "NA")
SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class SampleRow:
    record: SymptomRecord
    quality: float
    uncertainty: float
    ood: float
    split: str | None = None
    label: float | int | None = None
    logits: tuple | None = None
    probabilities: tuple | None = None
    point: float | None = None
    q_low: float | None = None
    q_high: float | None = None

    @property
    def sample_id(self) -> str:
        return self.record.sample_id

    def classifier_output(self) -> ClassifierOutput:
        return ClassifierOutput(self.logits, self.probabilities,
                                None if self.label is None else int(self.label))

    def regressor_output(self) -> RegressorOutput:
        return RegressorOutput(self.point, self.q_low, self.q_high, self.label)


@dataclass
class SampleTable:
    task: str
    rows: list = field(default_factory=list)
    n_classes: int | None = None
    payload: str | None = None  # "logit" | "prob" | "band"

    def __len__(self):
        return len(self.rows)

    def by_split(self, split: str) -> list[SampleRow]:
        return [r for r in self.rows if r.split == split]

    def with_splits(self, assignment: Mapping[str, str]) -> "SampleTable":
        rows = [_replace_split(r, assignment[r.record.subject_id]) for r in self.rows]
        return SampleTable(self.task, rows, self.n_classes, self.payload)


def _replace_split(row: SampleRow, split: str) -> SampleRow:
    return replace(row, split=split)


def _float(text: str, col: str, line: int) -> float:
    try:
        v = float(text)
    except ValueError:
        raise InputError(f"line {line}: column {col!r} is not numeric: {text!r}") from None
    if not math.isfinite(v):
        raise InputError(f"line {line}: column {col!r} is not finite: {text!r}")
    return v


def _payload_columns(header: Sequence[str], task: str) -> tuple[str, list[str]]:
    if task == REGRESSION:
        return "band", list(REGRESSION_COLUMNS)
    for prefix in ("logit", "prob"):
        cols = [c for c in header if c.startswith(prefix + "_")]
        if cols:
            expected = [f"{prefix}_{k}" for k in range(len(cols))]
            if cols != expected:
                raise InputError(f"{prefix} columns must be {expected}, got {cols}")
            return prefix, cols
    raise InputError("classification table needs logit_* or prob_* columns")


def parse_csv(text: str, task: str,
              normalization: Mapping[int, NormalizationSpec] | None = None) -> SampleTable:
    if task not in (CLASSIFICATION, REGRESSION):
        raise InputError(f"unknown task kind {task!r}")
    normalization = normalization or {}
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise InputError("empty file: no header") from None
    header = [h.strip() for h in header]
    payload, payload_cols = _payload_columns(header, task)
    required = list(ID_COLUMNS) + list(NODE_COLUMNS) + list(SIGNAL_COLUMNS) + payload_cols
    missing_cols = [c for c in required if c not in header]
    if missing_cols:
        raise InputError(f"missing required column(s): {', '.join(missing_cols)}")
    pos = {c: i for i, c in enumerate(header)}
    has_label = "label" in pos
    has_split = "split" in pos

    table = SampleTable(task, payload=payload,
                        n_classes=len(payload_cols) if task == CLASSIFICATION else None)
    seen: dict[str, int] = {}
    for line, cells in enumerate(reader, start=2):
        if not cells:
            continue
        if len(cells) != len(header):
            raise InputError(f"line {line}: expected {len(header)} fields, got {len(cells)}")
        get = lambda c: cells[pos[c]].strip()  # noqa: E731
        sid = get("sample_id")
        if not sid:
            raise InputError(f"line {line}: empty sample_id")
        if sid in seen:
            raise InputError(f"duplicate sample_id {sid!r} on lines {seen[sid]} and {line}")
        seen[sid] = line

        nodes, clamped = [], []
        for j, col in enumerate(NODE_COLUMNS):
            raw = get(col)
            if raw in MISSING_TOKENS:
                nodes.append(MISSING)
                continue
            v = _float(raw, col, line)
            if j in normalization:
                spec = normalization[j]
                if spec.clamps(v):
                    clamped.append(j)
                v = normalize_severity(v, spec)
            elif not 0.0 <= v <= 1.0:
                raise InputError(f"line {line}: {col}={v} outside [0, 1]")
            nodes.append(v)
        record = SymptomRecord(sid, get("subject_id"), get("dataset_id"),
                               _float(get("timestamp"), "timestamp", line), tuple(nodes), tuple(clamped))

        split = None
        if has_split:
            split = get("split") or None
            if split is not None and split not in SPLITS:
                raise InputError(f"line {line}: split must be one of {SPLITS}, got {split!r}")
        label = None
        if has_label and get("label") not in MISSING_TOKENS:
            label = _float(get("label"), "label", line)
            if task == CLASSIFICATION:
                if label != int(label) or not 0 <= label < len(payload_cols):
                    raise InputError(f"line {line}: class label {label} invalid")
                label = int(label)

        values = [_float(get(c), c, line) for c in payload_cols]
        kw = {}
        if payload == "logit":
            kw["logits"] = tuple(values)
        elif payload == "prob":
            kw["probabilities"] = tuple(values)
        else:
            kw.update(zip(("point", "q_low", "q_high"), values))
            if kw["q_low"] > kw["q_high"]:
                raise InputError(f"line {line}: q_low > q_high")
        row = SampleRow(record, *(_float(get(c), c, line) for c in SIGNAL_COLUMNS),
                        split=split, label=label, **kw)
        if payload == "prob":
            try:
                row.classifier_output()
            except InputError as e:
                raise InputError(f"line {line}: {e}") from None
        table.rows.append(row)
    return table


def ingest_csv(path, task: str, normalization=None) -> SampleTable:
    try:
        with open(path, newline="") as fh:
            text = fh.read()
    except OSError as e:
        raise InputError(f"cannot read {path}: {e}") from None
    return parse_csv(text, task, normalization)


def _fmt(v) -> str:
    if v is None or v is MISSING:
        return "NA"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def to_csv(table: SampleTable) -> str:
    has_split = any(r.split is not None for r in table.rows)
    has_label = any(r.label is not None for r in table.rows)
    if table.task == REGRESSION:
        payload_cols = list(REGRESSION_COLUMNS)
    else:
        prefix = table.payload or "logit"
        payload_cols = [f"{prefix}_{k}" for k in range(table.n_classes or 0)]
    header = list(ID_COLUMNS) + (["split"] if has_split else []) + list(NODE_COLUMNS) \
        + list(SIGNAL_COLUMNS) + payload_cols + (["label"] if has_label else [])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in table.rows:
        rec = r.record
        cells = [rec.sample_id, rec.subject_id, rec.dataset_id, _fmt(float(rec.timestamp))]
        if has_split:
            cells.append(r.split or "")
        cells += [_fmt(v) for v in rec.nodes]
        cells += [_fmt(r.quality), _fmt(r.uncertainty), _fmt(r.ood)]
        if table.task == REGRESSION:
            cells += [_fmt(r.point), _fmt(r.q_low), _fmt(r.q_high)]
        else:
            vec = r.logits if table.payload != "prob" else r.probabilities
            cells += [_fmt(float(v)) for v in vec]
        if has_label:
            cells.append("" if r.label is None else _fmt(r.label))
        w.writerow(cells)
    return buf.getvalue()


def subject_split(subject_ids, seed: int, fractions=(0.6, 0.2, 0.2)) -> dict[str, str]:
    """Assign whole subjects to train/val/test with a seeded permutation."""
    subjects = sorted(set(subject_ids))
    rng = np.random.Generator(np.random.PCG64(seed))
    order = rng.permutation(len(subjects))
    total = sum(fractions)
    n_train = int(round(len(subjects) * fractions[0] / total))
    n_val = int(round(len(subjects) * fractions[1] / total))
    out = {}
    for rank, i in enumerate(order):
        s = subjects[i]
        out[s] = "train" if rank < n_train else "val" if rank < n_train + n_val else "test"
    return out
