"""End-to-end orchestration: calibrate, fit thresholds, freeze, route, evaluate."""

from __future__ import annotations

import contextlib
import json
import os
import tempfile
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import calibration as cal
from . import metrics as mx
from .errors import ConfigurationError, InputError, ReliabilityError
from .router import (
    DEFAULT_QUANTILES,
    PREDICT,
    RoutingDecision,
    ThresholdConfig,
    fit_thresholds,
    risk_coverage_curve,
    route_batch,
    summarize_actions,
)
from .symptom_space import (
    COVERAGE_PATTERNS,
    RELIABILITY_NODE,
    NormalizationSpec,
    ObservableSet,
    ReliabilitySignals,
    UncertaintyNormalizer,
    completeness,
    node_index,
    reliability_state,
    softmax,
)
from .table import SampleRow, SampleTable, ingest_csv, subject_split


@dataclass
class PipelineConfig:
    task: str = cal.CLASSIFICATION
    alpha: float = 0.2
    coverage_budget: float = 0.8
    quantiles: dict = field(default_factory=lambda: dict(DEFAULT_QUANTILES))
    tau_c: float = 1.0
    seed: int = 0
    input: str | None = None
    output_dir: str | None = None
    threads: int = 1
    refer_on_ood: bool = True
    refer_on_uncertainty: bool = False
    clamp_qhat: bool = False
    observable: dict | None = None
    normalization: dict | None = None
    split_fractions: tuple = (0.6, 0.2, 0.2)
    f1_average: str = "macro"
    figures: bool = False

    def __post_init__(self):
        if self.task not in (cal.CLASSIFICATION, cal.REGRESSION):
            raise ConfigurationError(f"task must be classification or regression, got {self.task!r}")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigurationError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not 0.0 < self.coverage_budget < 1.0:
            raise ConfigurationError(f"coverage_budget must lie in (0, 1), got {self.coverage_budget}")
        if self.threads < 1:
            raise ConfigurationError("threads must be >= 1")
        self.split_fractions = tuple(self.split_fractions)

    @classmethod
    def from_dict(cls, doc: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigurationError(f"unknown config key(s): {', '.join(sorted(unknown))}")
        return cls(**doc)

    def normalization_specs(self) -> dict[int, NormalizationSpec]:
        out = {}
        for node, spec in (self.normalization or {}).items():
            out[node_index(node)] = NormalizationSpec(**spec)
        return out


@contextlib.contextmanager
def stage(module: str, sample_id: str | None = None):
    """Prefix any library error with the module (and sample) it came from."""
    try:
        yield
    except ReliabilityError as e:
        where = f"[{module}]" + (f" sample {sample_id}:" if sample_id else "")
        if str(e).startswith("["):
            raise
        raise type(e)(f"{where} {e}") from e


def ensure_splits(table: SampleTable, config: PipelineConfig) -> SampleTable:
    have = [r.split is not None for r in table.rows]
    if all(have):
        return table
    if any(have):
        raise InputError("split column is only partially filled")
    assignment = subject_split([r.record.subject_id for r in table.rows], config.seed,
                               config.split_fractions)
    return table.with_splits(assignment)


def observable_sets(table: SampleTable, config: PipelineConfig) -> dict[str, ObservableSet]:
    """Configured sets win; then built-in patterns; else nodes seen in the data."""
    out = {}
    datasets = sorted({r.record.dataset_id for r in table.rows})
    for d in datasets:
        if config.observable and d in config.observable:
            out[d] = ObservableSet(d, frozenset(config.observable[d]))
        elif d in COVERAGE_PATTERNS:
            out[d] = ObservableSet(d, COVERAGE_PATTERNS[d])
        else:
            seen = {RELIABILITY_NODE}
            for r in table.rows:
                if r.record.dataset_id == d:
                    seen.update(j for j, m in enumerate(r.record.mask) if not m)
            out[d] = ObservableSet(d, frozenset(seen))
    return out


@dataclass
class Calibration:
    temperature: cal.TemperatureModel | None
    conformal: cal.ConformalModel

    def to_json(self) -> str:
        return cal.dump_models(self.temperature, self.conformal)

    @classmethod
    def from_json(cls, text: str) -> "Calibration":
        return cls(*cal.load_models(text))


def calibrate(table: SampleTable, config: PipelineConfig) -> Calibration:
    """Fit temperature (classification only), then conformal, on the val split."""
    val = [r for r in table.by_split("val") if r.label is not None]
    if not val:
        raise InputError("[calibration] no labelled rows in the val split")
    with stage("calibration"):
        if table.task == cal.CLASSIFICATION:
            outputs = [r.classifier_output() for r in val]
            temperature = cal.fit_temperature(outputs)
            tempered = [
                cal.ClassifierOutput(probabilities=tuple(temperature.apply(o.as_logits())), label=o.label)
                for o in outputs
            ]
            conformal = cal.fit_conformal_classification(tempered, config.alpha)
        else:
            temperature = None
            conformal = cal.fit_conformal_regression([r.regressor_output() for r in val], config.alpha)
    return Calibration(temperature, conformal)


def predict(rows: Sequence[SampleRow], calib: Calibration, config: PipelineConfig) -> list:
    out = []
    for r in rows:
        with stage("calibration", r.sample_id):
            if calib.conformal.score_kind == cal.CLASSIFICATION:
                logits = r.classifier_output().as_logits()
                probs = calib.temperature.apply(logits) if calib.temperature else softmax(logits)
                out.append(cal.apply_conformal_classification(probs, calib.conformal))
            else:
                out.append(cal.apply_conformal_regression(r.regressor_output(), calib.conformal,
                                                          config.clamp_qhat))
    return out


def signals_for(rows: Sequence[SampleRow], obs: dict[str, ObservableSet],
                normalizer: UncertaintyNormalizer | None = None) -> list[ReliabilitySignals]:
    out = []
    for r in rows:
        with stage("symptom_space", r.sample_id):
            c = completeness(r.record, obs[r.record.dataset_id])
            rel = None
            if normalizer is not None:
                rel = reliability_state(c, min(max(r.quality, 0.0), 1.0), normalizer(r.uncertainty))
            out.append(ReliabilitySignals(r.quality, r.uncertainty, r.ood, c, rel))
    return out


def fit_table_thresholds(table: SampleTable, calib: Calibration, config: PipelineConfig) -> ThresholdConfig:
    val = table.by_split("val")
    obs = observable_sets(table, config)
    preds = predict(val, calib, config)
    sigs = signals_for(val, obs)
    with stage("router"):
        return fit_thresholds(list(zip(sigs, preds)), config.quantiles, config.coverage_budget,
                              config.tau_c, config.refer_on_ood, config.refer_on_uncertainty)


def route_table(table: SampleTable, calib: Calibration, thresholds: ThresholdConfig,
                config: PipelineConfig, split: str = "test"):
    rows = table.by_split(split)
    obs = observable_sets(table, config)
    preds = predict(rows, calib, config)
    normalizer = UncertaintyNormalizer(thresholds.u_min, thresholds.u_max)
    sigs = signals_for(rows, obs, normalizer)
    items = [
        (r.sample_id, s, p, tuple(f"clamped:node_{j}" for j in r.record.clamped))
        for r, s, p in zip(rows, sigs, preds)
    ]
    with stage("router"):
        decisions = route_batch(items, thresholds, config.threads)
    return rows, sigs, preds, decisions


def evaluate(rows, sigs, preds, decisions: Sequence[RoutingDecision], calib: Calibration,
             config: PipelineConfig) -> tuple[dict, list]:
    """Metrics report and risk-coverage curve over the routed rows."""
    task = calib.conformal.score_kind
    labelled = [r.label is not None for r in rows]
    report = {
        "task": task,
        "n": len(rows),
        "alpha": calib.conformal.alpha,
        "conformal": {"q_hat": calib.conformal.q_hat, "n_cal": calib.conformal.n_cal,
                      "unbounded": calib.conformal.unbounded,
                      "mean_width": float(np.mean([p.width for p in preds])) if preds else None},
        "temperature": None if calib.temperature is None else asdict(calib.temperature),
    }
    if not rows or not all(labelled):
        report["routing"] = summarize_actions(decisions, task=task).to_json()
        return report, []

    y = [r.label for r in rows]
    points = [p.point for p in preds]
    with stage("metrics"):
        if task == cal.CLASSIFICATION:
            probs = np.array([p.probabilities for p in preds])
            report["classification"] = mx.classification_report(probs, y, config.f1_average).to_json()
            covered = [p.contains(lab) for p, lab in zip(preds, y)]
            correct = [pt == lab for pt, lab in zip(points, y)]
        else:
            report["regression"] = mx.regression_metrics(y, points).to_json()
            covered = [p.contains(lab) for p, lab in zip(preds, y)]
            correct = covered
            if len(y) >= 2:
                report["icc21"] = mx.icc21(np.column_stack([y, points]))
        report["coverage"] = {"empirical": float(np.mean(covered)), "target": 1.0 - calib.conformal.alpha}
        summary = summarize_actions(decisions, y, points, task)
        report["routing"] = summary.to_json()
        accepted = [c for c, d in zip(correct, decisions) if d.action == PREDICT]
        report["routing"]["predict_correct_rate"] = float(np.mean(accepted)) if accepted else None
        curve = risk_coverage_curve([s.uncertainty for s in sigs], correct)
    return report, curve


@dataclass
class PipelineResult:
    calibration: Calibration
    thresholds: ThresholdConfig
    rows: list
    signals: list
    predictions: list
    decisions: list
    report: dict
    curve: list


def run_on_table(table: SampleTable, config: PipelineConfig) -> PipelineResult:
    if table.task != config.task:
        raise ConfigurationError(f"table task {table.task!r} does not match config task {config.task!r}")
    table = ensure_splits(table, config)
    calib = calibrate(table, config)
    thresholds = fit_table_thresholds(table, calib, config)
    rows, sigs, preds, decisions = route_table(table, calib, thresholds, config)
    report, curve = evaluate(rows, sigs, preds, decisions, calib, config)
    report["config_digest"] = thresholds.digest
    return PipelineResult(calib, thresholds, rows, sigs, preds, decisions, report, curve)


# -- serialization -----------------------------------------------------------

def atomic_write(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        # mkstemp creates 0600; honour the umask like a plain open() would
        umask = os.umask(0)
        os.umask(umask)
        os.chmod(tmp, 0o666 & ~umask)
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(OSError):
            os.unlink(tmp)
        raise


def thresholds_json(thresholds: ThresholdConfig) -> str:
    doc = thresholds.to_json()
    doc["config_digest"] = thresholds.digest
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def load_thresholds(text: str) -> ThresholdConfig:
    doc = json.loads(text)
    digest = doc.pop("config_digest", None)
    config = ThresholdConfig.from_json(doc)
    if digest is not None and digest != config.digest:
        raise InputError(f"threshold snapshot digest mismatch: file says {digest}, content is {config.digest}")
    return config


def audit_jsonl(decisions: Sequence[RoutingDecision], signals: Sequence[ReliabilitySignals] = ()) -> str:
    lines = []
    for i, d in enumerate(decisions):
        doc = d.to_json()
        if signals:
            s = signals[i]
            doc["completeness"] = s.completeness
            doc["reliability_state"] = s.reliability
        lines.append(json.dumps(doc, sort_keys=True))
    return "".join(line + "\n" for line in lines)


def load_audit(text: str) -> list[RoutingDecision]:
    out = []
    for n, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        doc = json.loads(line)
        try:
            out.append(RoutingDecision(doc["sample_id"], doc["action"], doc["trigger"], doc["trigger_value"],
                                       doc["threshold_value"], doc["config_digest"],
                                       tuple(doc.get("flags", ()))))
        except KeyError as e:
            raise InputError(f"audit line {n}: missing field {e}") from None
    return out


def metrics_json(report: dict) -> str:
    return json.dumps(mx.round_floats(report), sort_keys=True, indent=2) + "\n"


def curve_csv(curve) -> str:
    return "coverage,risk\n" + "".join(f"{c:.6f},{r:.6f}\n" for c, r in curve)


def write_outputs(result: PipelineResult, outdir) -> dict[str, Path]:
    outdir = Path(outdir)
    paths = {
        "calibration": outdir / "calibration.json",
        "thresholds": outdir / "thresholds.json",
        "audit": outdir / "audit.jsonl",
        "metrics": outdir / "metrics.json",
        "risk_coverage": outdir / "risk_coverage.csv",
    }
    atomic_write(paths["calibration"], result.calibration.to_json())
    atomic_write(paths["thresholds"], thresholds_json(result.thresholds))
    atomic_write(paths["audit"], audit_jsonl(result.decisions, result.signals))
    atomic_write(paths["metrics"], metrics_json(result.report))
    atomic_write(paths["risk_coverage"], curve_csv(result.curve))
    return paths


def run_pipeline(config: PipelineConfig) -> dict[str, Path]:
    if not config.input or not config.output_dir:
        raise ConfigurationError("run needs both input and output_dir")
    with stage("cli_harness"):
        table = ingest_csv(config.input, config.task, config.normalization_specs())
    result = run_on_table(table, config)
    paths = write_outputs(result, config.output_dir)
    if config.figures:
        from .plotting import render_figures
        paths.update(render_figures(result, config.output_dir))
    return paths
