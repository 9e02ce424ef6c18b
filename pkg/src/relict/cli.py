"""Command-line entry points: rank, sweep, serve, report.

Errors exit nonzero with a machine-readable JSON object on stderr:
``{"error": "<class>", "message": "<detail>"}``. Exit code 2 covers
configuration, input, and IO problems; exit code 3 marks degenerate
reference labels (a sweep cannot be scored with one class).
"""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path

import click

from . import engine, evaluation
from .engine import MeasureSpec, ThresholdConfig
from .errors import DegenerateLabelsError, RelictError
from .image_metrics import SsimParams
from .volio import load_corpus


def _fail(exc: BaseException, code: int) -> None:
    payload = {"error": type(exc).__name__, "message": str(exc)}
    click.echo(json.dumps(payload), err=True)
    sys.exit(code)


def _parse_measures(raw_measures) -> list[MeasureSpec]:
    specs = []
    for item in raw_measures:
        if isinstance(item, str):
            specs.append(MeasureSpec.from_name(item))
            continue
        name = item["name"]
        overrides = {}
        if "label" in item:
            overrides["label"] = int(item["label"])
        if "pool_shape" in item:
            overrides["pool_shape"] = tuple(int(v) for v in item["pool_shape"])
        ssim_keys = {"k1", "k2", "sigma", "data_range"}
        if name == "ssim" and ssim_keys & set(item):
            overrides["ssim_params"] = SsimParams(
                **{k: item[k] for k in ssim_keys if k in item}
            )
        specs.append(MeasureSpec.from_name(name, **overrides))
    return specs


def _worker_count(configured: int | None) -> int | None:
    env = os.environ.get("RELICT_WORKERS", "").strip()
    if env:
        return max(1, int(env))
    return configured


@click.group()
def main():
    """Replica detection toolkit for 3D image generative-model outputs."""


@main.command("rank")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option(
    "--neighbors", is_flag=True, default=False, help="also dump per-measure neighbor CSVs"
)
@click.option(
    "--timings-out",
    type=click.Path(),
    default=None,
    help="write per-measure wall seconds as JSON (off by default to keep outputs reproducible)",
)
def cmd_rank(config_path, neighbors, timings_out):
    """Rank training images against every synthetic image and write records."""
    try:
        config = json.loads(Path(config_path).read_text())
        training = load_corpus(config["training_manifest"])
        synthetic = load_corpus(config["synthetic_manifest"])
        specs = _parse_measures(config["measures"])
        if not specs:
            raise RelictError("config lists no measures")
        n = int(config.get("n", engine.DEFAULT_N_CLOSEST))
        thresholds = None
        if config.get("thresholds"):
            thresholds = ThresholdConfig(thresholds=config["thresholds"])
        out_dir = Path(config["output_dir"])
        out_dir.mkdir(parents=True, exist_ok=True)
        run = engine.execute(
            training,
            synthetic,
            specs,
            n=n,
            thresholds=thresholds,
            workers=_worker_count(config.get("worker_count")),
            memory_budget_mb=int(config.get("memory_budget_mb", 1024)),
            zscore=bool(config.get("zscore_images", False)),
        )
        engine.write_records_jsonl(run.records, out_dir / "records.jsonl")
        if neighbors:
            for measure, candidate_sets in run.candidates.items():
                engine.write_neighbors_csv(
                    candidate_sets, out_dir / f"neighbors_{measure}.csv"
                )
        for measure, seconds in run.timings.items():
            click.echo(f"{measure}: {seconds / 60:.2f} mins")
        if timings_out:
            Path(timings_out).write_text(json.dumps(run.timings, indent=2) + "\n")
    except (RelictError, OSError, KeyError, ValueError, json.JSONDecodeError) as exc:
        _fail(exc, 2)


@main.command("sweep")
@click.option("--ratings", "ratings_path", required=True, type=click.Path())
@click.option("--records", "records_path", required=True, type=click.Path())
@click.option("--out", "out_dir", required=True, type=click.Path())
def cmd_sweep(ratings_path, records_path, out_dir):
    """Calibrate thresholds from ratings; write sweep curves and thresholds."""
    try:
        ratings = evaluation.read_ratings_jsonl(ratings_path)
        labels = evaluation.aggregate_ratings(ratings)
        stats = evaluation.agreement_stats(ratings)
        records = engine.read_records_jsonl(records_path)
    except (RelictError, OSError, ValueError, json.JSONDecodeError) as exc:
        _fail(exc, 2)
    try:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        label_by_synthetic = {
            lab.pair_id.split("::", 1)[0]: lab for lab in labels
        }
        measures = []
        for record in records:
            if record.measure not in measures:
                measures.append(record.measure)
        sweeps = []
        optimal = {}
        for measure in measures:
            values = {}
            measure_labels = []
            for record in records:
                if record.measure != measure:
                    continue
                lab = label_by_synthetic.get(record.synthetic_id)
                if lab is None:
                    continue  # unrated synthetic image
                values[lab.pair_id] = record.value
                measure_labels.append(lab)
            sweep = evaluation.sweep_thresholds(values, measure_labels, measure=measure)
            sweeps.append(sweep)
            optimal[measure] = sweep.optimal_threshold
        evaluation.emit_report(records, sweeps, stats, out, labels=labels)
        evaluation.write_reference_labels_json(labels, out / "reference_labels.json")
        threshold_config = ThresholdConfig(thresholds=optimal)
        (out / "thresholds.json").write_text(
            json.dumps(threshold_config.to_json(), indent=2, sort_keys=True) + "\n"
        )
        for sweep in sweeps:
            click.echo(
                f"{sweep.measure}: optimal T={sweep.optimal_threshold!r} "
                f"BA={sweep.optimal_balanced_accuracy:.4f}"
            )
    except DegenerateLabelsError as exc:
        _fail(exc, 3)
    except (RelictError, OSError, ValueError) as exc:
        _fail(exc, 2)


@main.command("serve")
@click.option("--records", "records_path", required=True, type=click.Path())
@click.option("--training", "training_manifest", required=True, type=click.Path())
@click.option("--synthetic", "synthetic_manifest", required=True, type=click.Path())
@click.option("--ratings-log", "ratings_log", required=True, type=click.Path())
@click.option("--port", default=8080, type=int)
@click.option("--host", default="127.0.0.1")
@click.option("--queue-measure", default="rmse", show_default=True)
@click.option("--raters", default=None, help="comma-separated rater ids to register")
@click.option(
    "--frontend",
    "frontend_dir",
    type=click.Path(),
    default=None,
    help="directory of built UI assets to serve at /",
)
def cmd_serve(
    records_path,
    training_manifest,
    synthetic_manifest,
    ratings_log,
    port,
    host,
    queue_measure,
    raters,
    frontend_dir,
):
    """Serve the rating API (and optionally the browser UI)."""
    import uvicorn

    from .service import create_app

    try:
        app = create_app(
            records_path=records_path,
            training_manifest=training_manifest,
            synthetic_manifest=synthetic_manifest,
            ratings_log=ratings_log,
            queue_measure=queue_measure,
            raters=[r.strip() for r in raters.split(",") if r.strip()] if raters else None,
            frontend_dir=frontend_dir,
        )
    except (RelictError, OSError, ValueError) as exc:
        _fail(exc, 2)
    uvicorn.run(app, host=host, port=port, log_level="warning")


@main.command("report")
@click.option("--in", "in_dir", required=True, type=click.Path())
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option(
    "--timings",
    "timings_path",
    type=click.Path(),
    default=None,
    help="per-measure wall seconds JSON (as written by rank --timings-out)",
)
def cmd_report(in_dir, out_dir, timings_path):
    """Render summary, sweep curves, and scatter from a results directory."""
    try:
        in_path = Path(in_dir)
        records = engine.read_records_jsonl(in_path / "records.jsonl")
        ratings_file = in_path / "ratings.jsonl"
        sweeps = []
        stats = None
        labels = []
        if ratings_file.exists():
            ratings = evaluation.read_ratings_jsonl(ratings_file)
            labels = evaluation.aggregate_ratings(ratings)
            stats = evaluation.agreement_stats(ratings)
            label_by_synthetic = {
                lab.pair_id.split("::", 1)[0]: lab for lab in labels
            }
            measures = []
            for record in records:
                if record.measure not in measures:
                    measures.append(record.measure)
            for measure in measures:
                values = {}
                measure_labels = []
                for record in records:
                    if record.measure != measure:
                        continue
                    lab = label_by_synthetic.get(record.synthetic_id)
                    if lab is None:
                        continue
                    values[lab.pair_id] = record.value
                    measure_labels.append(lab)
                sweeps.append(
                    evaluation.sweep_thresholds(values, measure_labels, measure=measure)
                )
        runtimes = None
        if timings_path:
            runtimes = {
                k: float(v)
                for k, v in json.loads(Path(timings_path).read_text()).items()
            }
        written = evaluation.emit_report(
            records, sweeps, stats, out_dir, labels=labels, runtimes=runtimes
        )
        for path in written:
            click.echo(str(path))
    except DegenerateLabelsError as exc:
        _fail(exc, 3)
    except (RelictError, OSError, ValueError, json.JSONDecodeError) as exc:
        _fail(exc, 2)


if __name__ == "__main__":
    main()
