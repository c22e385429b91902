"""Command-line interface.

Exit codes: 0 success, 1 input/configuration error, 2 contract violation.
"""

from __future__ import annotations

import csv
import io
import json
import sys
from pathlib import Path

import click
import numpy as np

from . import pipeline as pl
from .anchoring import Visit, VisitSeries, evaluate_anchoring
from .errors import ContractViolation, InputError, ReliabilityError
from .metrics import round_floats
from .synth import SynthSpec, generate_synthetic_cohort
from .table import ingest_csv, to_csv
from .windows import WindowSpec, segment_windows

TASKS = click.Choice(["classification", "regression"])


def _config(ctx_params: dict, config_path: str | None) -> pl.PipelineConfig:
    """Flags first, then a JSON ``--config`` file overriding them."""
    doc = {k: v for k, v in ctx_params.items() if v is not None}
    if config_path:
        try:
            doc.update(json.loads(Path(config_path).read_text()))
        except (OSError, json.JSONDecodeError) as e:
            raise InputError(f"cannot read config {config_path}: {e}") from None
    return pl.PipelineConfig.from_dict(doc)


def _echo_json(doc):
    click.echo(json.dumps(round_floats(doc), sort_keys=True, indent=2))


def pipeline_options(f):
    opts = [
        click.option("--task", type=TASKS, default=None, help="Task kind (default classification)."),
        click.option("--alpha", type=float, default=None, help="Conformal miscoverage level."),
        click.option("--coverage-budget", type=float, default=None, help="Width quantile for tau_w."),
        click.option("--tau-c", type=float, default=None, help="Completeness floor."),
        click.option("--q-quality", type=float, default=None, help="Percentile for tau_q."),
        click.option("--q-u-abstain", type=float, default=None, help="Percentile for tau_u (abstain)."),
        click.option("--q-u-refer", type=float, default=None, help="Percentile for tau_u (refer)."),
        click.option("--q-ood", type=float, default=None, help="Percentile for tau_ood."),
        click.option("--refer-on-uncertainty/--no-refer-on-uncertainty", default=None),
        click.option("--refer-on-ood/--no-refer-on-ood", default=None),
        click.option("--clamp-qhat/--no-clamp-qhat", default=None, help="Clamp q_hat at 0."),
        click.option("--seed", type=int, default=None, help="Seed for derived subject splits."),
        click.option("--threads", type=int, default=None, help="Routing worker threads."),
        click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
                     help="JSON config overriding flags."),
    ]
    for opt in reversed(opts):
        f = opt(f)
    return f


def _collect(kw: dict) -> pl.PipelineConfig:
    config_path = kw.pop("config_path", None)
    quantiles = {}
    for flag, key in (("q_quality", "quality"), ("q_u_abstain", "u_abstain"),
                      ("q_u_refer", "u_refer"), ("q_ood", "ood")):
        v = kw.pop(flag, None)
        if v is not None:
            quantiles[key] = v
    if quantiles:
        kw["quantiles"] = {**pl.DEFAULT_QUANTILES, **quantiles}
    return _config(kw, config_path)


def _load_table(config: pl.PipelineConfig, path):
    with pl.stage("cli_harness"):
        table = ingest_csv(path, config.task, config.normalization_specs())
    return pl.ensure_splits(table, config)


@click.group()
@click.version_option(package_name="artifact")
def cli():
    """Calibrate, route and evaluate per-sample predictions."""


@cli.command()
@click.argument("input", type=click.Path(exists=True, dir_okay=False))
@pipeline_options
@click.option("--output", type=click.Path(dir_okay=False), default=None, help="Re-serialize the table here.")
def ingest(input, output, **kw):
    """Validate a sample table and print a row report."""
    config = _collect(kw)
    with pl.stage("cli_harness"):
        table = ingest_csv(input, config.task, config.normalization_specs())
    splits = {}
    for r in table.rows:
        splits[r.split or "unassigned"] = splits.get(r.split or "unassigned", 0) + 1
    missing = [sum(r.record.mask[j] for r in table.rows) for j in range(8)]
    _echo_json({"rows": len(table), "task": table.task, "n_classes": table.n_classes,
                "splits": splits, "missing_per_node": missing,
                "clamped_rows": sum(bool(r.record.clamped) for r in table.rows)})
    if output:
        pl.atomic_write(output, to_csv(table))


@cli.command()
@click.argument("input", type=click.Path(exists=True, dir_okay=False))
@pipeline_options
@click.option("--out", type=click.Path(dir_okay=False), required=True)
def calibrate(input, out, **kw):
    """Fit temperature and conformal models on the val split."""
    config = _collect(kw)
    calib = pl.calibrate(_load_table(config, input), config)
    pl.atomic_write(out, calib.to_json())


@cli.command("fit-thresholds")
@click.argument("input", type=click.Path(exists=True, dir_okay=False))
@pipeline_options
@click.option("--calibration", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
def fit_thresholds_cmd(input, calibration, out, **kw):
    """Fit and freeze routing thresholds on the val split."""
    config = _collect(kw)
    calib = pl.Calibration.from_json(Path(calibration).read_text())
    thresholds = pl.fit_table_thresholds(_load_table(config, input), calib, config)
    pl.atomic_write(out, pl.thresholds_json(thresholds))


@cli.command()
@click.argument("input", type=click.Path(exists=True, dir_okay=False))
@pipeline_options
@click.option("--calibration", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--thresholds", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--split", type=click.Choice(["train", "val", "test"]), default="test", show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
def route(input, calibration, thresholds, split, out, **kw):
    """Route every sample of a split and write the JSON-lines audit trail."""
    config = _collect(kw)
    calib = pl.Calibration.from_json(Path(calibration).read_text())
    frozen = pl.load_thresholds(Path(thresholds).read_text())
    _, sigs, _, decisions = pl.route_table(_load_table(config, input), calib, frozen, config, split)
    pl.atomic_write(out, pl.audit_jsonl(decisions, sigs))


@cli.command()
@click.argument("input", type=click.Path(exists=True, dir_okay=False))
@pipeline_options
@click.option("--calibration", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--audit", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--out-dir", type=click.Path(file_okay=False), required=True)
def evaluate(input, calibration, audit, out_dir, **kw):
    """Score routed samples: metrics report and risk-coverage CSV."""
    config = _collect(kw)
    table = _load_table(config, input)
    calib = pl.Calibration.from_json(Path(calibration).read_text())
    decisions = pl.load_audit(Path(audit).read_text())
    by_id = {r.sample_id: r for r in table.rows}
    try:
        rows = [by_id[d.sample_id] for d in decisions]
    except KeyError as e:
        raise InputError(f"audit references unknown sample {e}") from None
    obs = pl.observable_sets(table, config)
    preds = pl.predict(rows, calib, config)
    sigs = pl.signals_for(rows, obs)
    report, curve = pl.evaluate(rows, sigs, preds, decisions, calib, config)
    if decisions:
        report["config_digest"] = decisions[0].config_digest
    pl.atomic_write(Path(out_dir) / "metrics.json", pl.metrics_json(report))
    pl.atomic_write(Path(out_dir) / "risk_coverage.csv", pl.curve_csv(curve))


@cli.command()
@click.argument("input", type=click.Path(exists=True, dir_okay=False))
@pipeline_options
@click.option("--out-dir", type=click.Path(file_okay=False), required=True)
@click.option("--figures/--no-figures", default=False, help="Also render PNG report figures.")
def run(input, out_dir, figures, **kw):
    """Full pipeline: calibrate, fit thresholds, freeze, route, evaluate."""
    kw.update(input=input, output_dir=out_dir, figures=figures)
    paths = pl.run_pipeline(_collect(kw))
    for name, path in paths.items():
        click.echo(f"{name}: {path}")


def read_longitudinal(path) -> tuple[list[VisitSeries], list[float]]:
    """Rows of ``subject_id,timestamp,label[,sample_id][,split][,f_*]``."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in ("subject_id", "timestamp", "label"):
            if col not in header:
                raise InputError(f"longitudinal file missing column {col!r}")
        feat_cols = [c for c in header if c.startswith("f_")]
        visits: dict[str, list] = {}
        train_labels = []
        for line, row in enumerate(reader, start=2):
            try:
                ts, label = float(row["timestamp"]), float(row["label"])
                feats = tuple(float(row[c]) for c in feat_cols) if feat_cols else None
            except (TypeError, ValueError):
                raise InputError(f"line {line}: non-numeric timestamp, label or feature") from None
            if row.get("split") == "train":
                train_labels.append(label)
                continue
            sid = row.get("sample_id") or f"{row['subject_id']}#{line}"
            visits.setdefault(row["subject_id"], []).append(Visit(ts, label, sid, feats))
    return [VisitSeries(s, tuple(v)) for s, v in visits.items()], train_labels


@cli.command("anchor-eval")
@click.argument("input", type=click.Path(exists=True, dir_okay=False))
@click.option("--n-anchor", type=int, multiple=True, default=(0, 1, 3, 5), show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None)
def anchor_eval(input, n_anchor, out):
    """Leak-free anchoring sweep with label-only and residual baselines."""
    series, train_labels = read_longitudinal(input)
    doc = {"settings": [evaluate_anchoring(series, n, train_labels).to_json() for n in n_anchor]}
    text = json.dumps(round_floats(doc), sort_keys=True, indent=2) + "\n"
    if out:
        pl.atomic_write(out, text)
    else:
        click.echo(text, nl=False)


@cli.command()
@click.argument("input", type=click.Path(exists=True, dir_okay=False))
@click.option("--length", type=int, default=256, show_default=True)
@click.option("--stride", type=int, default=64, show_default=True)
@click.option("--fog-gamma", type=float, default=0.5, show_default=True,
              help="Positive when annotation rate is strictly above this.")
@click.option("--annotation-column", default="annotation", show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None)
def segment(input, length, stride, fog_gamma, annotation_column, out):
    """Cut a stream CSV into labelled windows."""
    with open(input, newline="") as fh:
        reader = csv.DictReader(fh)
        if annotation_column not in (reader.fieldnames or []):
            raise InputError(f"stream file missing column {annotation_column!r}")
        channels = [c for c in reader.fieldnames if c != annotation_column]
        rows = list(reader)
    try:
        data = np.array([[float(r[c]) for c in channels] for r in rows]).reshape(len(rows), len(channels))
        ann = np.array([float(r[annotation_column]) for r in rows])
    except ValueError as e:
        raise InputError(f"non-numeric stream value: {e}") from None
    windows = segment_windows(data, ann, WindowSpec(length, stride, fog_gamma))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["window", "start", "end", "positive_fraction", "label"])
    for win in windows:
        w.writerow([win.index, win.start, win.start + length, f"{win.positive_fraction:.6f}", win.label])
    if out:
        pl.atomic_write(out, buf.getvalue())
    else:
        click.echo(buf.getvalue(), nl=False)


@cli.command()
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--task", type=TASKS, default="classification", show_default=True)
@click.option("--n-subjects", type=int, default=200, show_default=True)
@click.option("--samples-per-subject", type=int, default=5, show_default=True)
@click.option("--n-classes", type=int, default=3, show_default=True)
@click.option("--dataset", "datasets", multiple=True, default=("PADS",), show_default=True)
@click.option("--coupling", type=float, default=0.6, show_default=True,
              help="Strength of the error/uncertainty link.")
@click.option("--ood-fraction", type=float, default=0.1, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
def synth(seed, task, n_subjects, samples_per_subject, n_classes, datasets, coupling, ood_fraction, out):
    """Generate a seeded synthetic cohort CSV."""
    spec = SynthSpec(task=task, n_subjects=n_subjects, samples_per_subject=samples_per_subject,
                     n_classes=n_classes, datasets=tuple(datasets), coupling=coupling,
                     ood_fraction=ood_fraction)
    cohort = generate_synthetic_cohort(seed, spec)
    pl.atomic_write(out, to_csv(cohort.table))
    click.echo(f"wrote {len(cohort.table)} rows to {out}")


def main(argv=None) -> int:
    try:
        cli.main(args=argv, prog_name="reliroute", standalone_mode=False)
    except click.exceptions.Exit as e:
        return e.exit_code
    except click.ClickException as e:
        e.show()
        return 1
    except click.Abort:
        return 1
    except ContractViolation as e:
        click.echo(f"contract violation: {e}", err=True)
        return 2
    except ReliabilityError as e:
        click.echo(f"error: {e}", err=True)
        return e.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
