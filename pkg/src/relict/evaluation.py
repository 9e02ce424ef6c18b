"""Calibration of measures against human reference ratings.

Two raters score preselected (synthetic, closest-training) pairs on a
4-point scale; scores of 3 or 4 mean "replica". Agreed round-1 decisions
become reference labels directly; disagreements are re-rated in round 2 and
either resolve or stay unresolved. Measure values are then swept over a
0.01-step threshold grid and scored by balanced accuracy, replica being the
positive class.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .engine import (
    MeasureSpec,
    RankingRecord,
    pairwise_matrices,
)
from .errors import (
    DegenerateLabelsError,
    IncompleteRatingsError,
    InputError,
    IoError,
)
from .volio import Corpus

__all__ = [
    "RatingRecord",
    "ReferenceLabel",
    "SweepResult",
    "pair_id_for",
    "preselect_pairs",
    "aggregate_ratings",
    "agreement_stats",
    "sweep_thresholds",
    "emit_report",
    "read_ratings_jsonl",
    "append_rating_jsonl",
    "write_reference_labels_json",
    "read_reference_labels_json",
]

LIKERT_MIN = 1
LIKERT_MAX = 4
REPLICA_SCORE_CUTOFF = 3  # scores >= 3 mean "replica"


def pair_id_for(synthetic_id: str, training_id: str) -> str:
    return f"{synthetic_id}::{training_id}"


@dataclass(frozen=True)
class RatingRecord:
    """One rater's score for one (synthetic, training) pair in one round."""

    pair_id: str
    rater_id: str
    score: int
    round: int
    timestamp: str = ""

    def __post_init__(self):
        if not (LIKERT_MIN <= int(self.score) <= LIKERT_MAX):
            raise InputError(
                f"score must be in [{LIKERT_MIN}, {LIKERT_MAX}], got {self.score}"
            )
        if int(self.round) < 1:
            raise InputError(f"round must be >= 1, got {self.round}")
        object.__setattr__(self, "score", int(self.score))
        object.__setattr__(self, "round", int(self.round))


@dataclass(frozen=True)
class ReferenceLabel:
    pair_id: str
    label: str  # replica | not_replica | unresolved
    provenance: str  # consensus_round_1 | consensus_round_2 | unresolved


@dataclass(frozen=True)
class SweepResult:
    """Balanced-accuracy curve of one measure over a threshold grid."""

    measure: str
    thresholds: tuple[float, ...]
    sensitivity: tuple[float, ...]
    specificity: tuple[float, ...]
    balanced_accuracy: tuple[float, ...]
    optimal_threshold: float
    optimal_balanced_accuracy: float
    excluded_unresolved: int = 0


def preselect_pairs(
    training: Corpus,
    synthetic: Corpus,
    *,
    workers: int | None = None,
    memory_budget_mb: int = 1024,
    zscore: bool = False,
) -> list[tuple[str, str]]:
    """Pair each synthetic image with its lowest-RMSE training image.

    Ties are broken toward the lexicographically smaller training id.
    """
    spec = MeasureSpec.from_name("rmse")
    synth_ids, train_ids, raws, _ = pairwise_matrices(
        training,
        synthetic,
        spec,
        workers=workers,
        memory_budget_mb=memory_budget_mb,
        zscore=zscore,
    )
    ids = np.asarray(train_ids)
    pairs = []
    for s, synthetic_id in enumerate(synth_ids):
        best = np.lexsort((ids, raws[s]))[0]
        pairs.append((synthetic_id, str(ids[best])))
    return pairs


def _binarize(score: int) -> bool:
    return score >= REPLICA_SCORE_CUTOFF


def _index_ratings(
    ratings: Iterable[RatingRecord],
) -> tuple[list[str], list[str], dict[tuple[str, str, int], int]]:
    by_key: dict[tuple[str, str, int], int] = {}
    pair_order: list[str] = []
    raters: list[str] = []
    for r in ratings:
        key = (r.pair_id, r.rater_id, r.round)
        if key in by_key:
            raise InputError(
                f"duplicate rating for pair {r.pair_id!r}, rater {r.rater_id!r}, "
                f"round {r.round}"
            )
        by_key[key] = r.score
        if r.pair_id not in pair_order:
            pair_order.append(r.pair_id)
        if r.rater_id not in raters:
            raters.append(r.rater_id)
    return pair_order, sorted(raters), by_key


def aggregate_ratings(ratings: Sequence[RatingRecord]) -> list[ReferenceLabel]:
    """Turn two raters' scores into per-pair reference labels.

    Round-1 agreement (both >= 3, or both <= 2) decides directly. A
    disagreement requires round-2 scores from both raters; agreement there
    decides, a second disagreement leaves the pair unresolved.
    """
    pair_order, raters, by_key = _index_ratings(ratings)
    if len(raters) != 2:
        raise IncompleteRatingsError(
            f"exactly two raters are required, found {len(raters)}: {raters}"
        )
    labels = []
    for pair in pair_order:
        round1 = [by_key.get((pair, rater, 1)) for rater in raters]
        if any(s is None for s in round1):
            raise IncompleteRatingsError(
                f"pair {pair!r} is missing a round-1 score from one rater"
            )
        decisions = [_binarize(s) for s in round1]
        if decisions[0] == decisions[1]:
            labels.append(
                ReferenceLabel(
                    pair_id=pair,
                    label="replica" if decisions[0] else "not_replica",
                    provenance="consensus_round_1",
                )
            )
            continue
        round2 = [by_key.get((pair, rater, 2)) for rater in raters]
        if any(s is None for s in round2):
            raise IncompleteRatingsError(
                f"pair {pair!r}: round-1 disagreement requires round-2 scores "
                f"from both raters"
            )
        decisions2 = [_binarize(s) for s in round2]
        if decisions2[0] == decisions2[1]:
            labels.append(
                ReferenceLabel(
                    pair_id=pair,
                    label="replica" if decisions2[0] else "not_replica",
                    provenance="consensus_round_2",
                )
            )
        else:
            labels.append(
                ReferenceLabel(pair_id=pair, label="unresolved", provenance="unresolved")
            )
    return labels


def agreement_stats(ratings: Sequence[RatingRecord]) -> dict:
    """Round-1 inter-rater agreement and per-rater median scores."""
    pair_order, raters, by_key = _index_ratings(ratings)
    if len(raters) != 2:
        raise IncompleteRatingsError(
            f"exactly two raters are required, found {len(raters)}: {raters}"
        )
    matches = 0
    for pair in pair_order:
        round1 = [by_key.get((pair, rater, 1)) for rater in raters]
        if any(s is None for s in round1):
            raise IncompleteRatingsError(
                f"pair {pair!r} is missing a round-1 score from one rater"
            )
        if _binarize(round1[0]) == _binarize(round1[1]):
            matches += 1
    medians = {
        rater: float(
            np.median([by_key[(p, rater, 1)] for p in pair_order])
        )
        for rater in raters
    }
    return {
        "pairs": len(pair_order),
        "percent_agreement": matches / len(pair_order) if pair_order else float("nan"),
        "rater_medians": medians,
    }


def _grid_bounds(vmin: float, vmax: float) -> tuple[int, int]:
    # integer hundredths; tiny slack absorbs float noise around grid points
    k0 = math.floor(vmin * 100 + 1e-9)
    k1 = math.ceil(vmax * 100 - 1e-9) + 1
    return k0, k1


def sweep_thresholds(
    values: Mapping[str, float],
    labels: Sequence[ReferenceLabel],
    measure: str = "",
) -> SweepResult:
    """Evaluate replica classification over a 0.01-step threshold grid.

    ``values`` maps pair_id to the thresholded quantity (ratio or absolute
    distance). The grid runs from the observed minimum rounded down to the
    maximum rounded up plus one step; at each threshold T the prediction is
    "replica iff value < T". Unresolved labels are excluded and counted.
    Ties for the best balanced accuracy resolve to the smallest threshold.
    """
    resolved = [lab for lab in labels if lab.label != "unresolved"]
    excluded = len(labels) - len(resolved)
    missing = [lab.pair_id for lab in resolved if lab.pair_id not in values]
    if missing:
        raise InputError(f"no measure value for labeled pairs: {missing}")
    truth = np.array([lab.label == "replica" for lab in resolved])
    vals = np.array([float(values[lab.pair_id]) for lab in resolved])
    if truth.all() or not truth.any():
        raise DegenerateLabelsError(
            "sweep needs at least one replica and one non-replica label"
        )
    k0, k1 = _grid_bounds(float(vals.min()), float(vals.max()))
    thresholds = []
    sens_curve = []
    spec_curve = []
    ba_curve = []
    best_t = None
    best_ba = -1.0
    n_pos = int(truth.sum())
    n_neg = truth.size - n_pos
    for k in range(k0, k1 + 1):
        t = k / 100.0
        pred = vals < t
        tp = int(np.count_nonzero(pred & truth))
        tn = int(np.count_nonzero(~pred & ~truth))
        sens = tp / n_pos
        spec = tn / n_neg
        ba = (sens + spec) / 2.0
        thresholds.append(t)
        sens_curve.append(sens)
        spec_curve.append(spec)
        ba_curve.append(ba)
        if ba > best_ba:
            best_ba = ba
            best_t = t
    return SweepResult(
        measure=measure,
        thresholds=tuple(thresholds),
        sensitivity=tuple(sens_curve),
        specificity=tuple(spec_curve),
        balanced_accuracy=tuple(ba_curve),
        optimal_threshold=best_t,
        optimal_balanced_accuracy=best_ba,
        excluded_unresolved=excluded,
    )


def _runtime_text(seconds: float) -> str:
    return f"{round(seconds / 60)} mins"


def _scatter_svg(
    records: Sequence[RankingRecord], labels_by_synthetic: Mapping[str, str]
) -> str:
    """Strip plot of thresholded values per measure, colored by label."""
    measures = []
    for r in records:
        if r.measure not in measures:
            measures.append(r.measure)
    width, row_h, left, right = 800, 40, 130, 30
    height = row_h * max(len(measures), 1) + 50
    colors = {"replica": "#c0392b", "not_replica": "#27ae60", "unresolved": "#95a5a6"}
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        '<style>text{font-family:sans-serif;font-size:12px}</style>',
        f'<text x="{left}" y="20">thresholded value by measure '
        f"(red=replica, green=not replica, gray=unresolved)</text>",
    ]
    finite_vals = [r.value for r in records if math.isfinite(r.value)]
    vmin = min(finite_vals, default=0.0)
    vmax = max(finite_vals, default=1.0)
    span = (vmax - vmin) or 1.0
    for row, measure in enumerate(measures):
        cy = 50 + row * row_h
        parts.append(f'<text x="5" y="{cy + 4}">{measure}</text>')
        parts.append(
            f'<line x1="{left}" y1="{cy}" x2="{width - right}" y2="{cy}" '
            f'stroke="#ddd"/>'
        )
        for r in records:
            if r.measure != measure:
                continue
            x = left + (r.value - vmin) / span * (width - left - right)
            label = labels_by_synthetic.get(r.synthetic_id, "unresolved")
            color = colors.get(label, colors["unresolved"])
            parts.append(
                f'<circle cx="{x:.2f}" cy="{cy}" r="4" fill="{color}" '
                f'fill-opacity="0.7"/>'
            )
    parts.append("</svg>")
    return "\n".join(parts)


def emit_report(
    records: Sequence[RankingRecord],
    sweeps: Sequence[SweepResult],
    stats: dict | None,
    out_dir,
    *,
    labels: Sequence[ReferenceLabel] = (),
    runtimes: Mapping[str, float] | None = None,
) -> list[Path]:
    """Write the summary JSON, per-measure sweep CSVs, and the scatter SVG.

    ``runtimes`` maps measure name to wall seconds and is rendered in
    whole minutes. Returns the list of files written.
    """
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        probe = out_dir / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise IoError(f"cannot write report to {out_dir}: {exc}") from exc
    written: list[Path] = []
    summary = {
        "schema_version": 1,
        "record_count": len(records),
        "measures": {},
        "agreement": stats,
    }
    for sweep in sweeps:
        entry = {
            "optimal_threshold": sweep.optimal_threshold,
            "optimal_balanced_accuracy": sweep.optimal_balanced_accuracy,
            "excluded_unresolved": sweep.excluded_unresolved,
            "grid_points": len(sweep.thresholds),
        }
        if runtimes and sweep.measure in runtimes:
            entry["runtime"] = _runtime_text(runtimes[sweep.measure])
            entry["runtime_minutes"] = runtimes[sweep.measure] / 60.0
        summary["measures"][sweep.measure] = entry
        curve_path = out_dir / f"sweep_{sweep.measure}.csv"
        with open(curve_path, "w", newline="\n") as fh:
            fh.write("threshold,sensitivity,specificity,balanced_accuracy\n")
            for t, sens, spec, ba in zip(
                sweep.thresholds,
                sweep.sensitivity,
                sweep.specificity,
                sweep.balanced_accuracy,
            ):
                fh.write(f"{t!r},{sens!r},{spec!r},{ba!r}\n")
        written.append(curve_path)
    summary_path = out_dir / "summary.json"
    summary_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    written.append(summary_path)
    if records:
        labels_by_synthetic = {
            lab.pair_id.split("::", 1)[0]: lab.label for lab in labels
        }
        svg_path = out_dir / "scatter.svg"
        svg_path.write_text(_scatter_svg(records, labels_by_synthetic) + "\n")
        written.append(svg_path)
    return written


def read_ratings_jsonl(path) -> list[RatingRecord]:
    """Snapshot read of an append-only ratings log.

    A final line that fails to parse is treated as an in-flight append and
    ignored; a malformed line anywhere else is a real error.
    """
    path = Path(path)
    out = []
    lines = path.read_text().splitlines()
    for lineno, line in enumerate(lines):
        line = line.strip()
        if not line:
            continue
        try:
            doc = json.loads(line)
        except json.JSONDecodeError:
            if lineno == len(lines) - 1:
                break  # torn tail while another process appends
            raise
        out.append(
            RatingRecord(
                pair_id=doc["pair_id"],
                rater_id=doc["rater_id"],
                score=int(doc["score"]),
                round=int(doc["round"]),
                timestamp=doc.get("timestamp", ""),
            )
        )
    return out


def append_rating_jsonl(path, record: RatingRecord) -> None:
    path = Path(path)
    doc = {
        "pair_id": record.pair_id,
        "rater_id": record.rater_id,
        "score": record.score,
        "round": record.round,
        "timestamp": record.timestamp,
    }
    with open(path, "a", newline="\n") as fh:
        fh.write(json.dumps(doc) + "\n")


def write_reference_labels_json(labels: Sequence[ReferenceLabel], path) -> None:
    doc = {
        lab.pair_id: {"label": lab.label, "provenance": lab.provenance}
        for lab in labels
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def read_reference_labels_json(path) -> list[ReferenceLabel]:
    doc = json.loads(Path(path).read_text())
    return [
        ReferenceLabel(pair_id=pid, label=entry["label"], provenance=entry["provenance"])
        for pid, entry in doc.items()
    ]
