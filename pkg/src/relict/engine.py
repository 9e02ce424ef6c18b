"""All-pairs measure computation, ranking, distance ratios, and decisions.

For each synthetic image the engine computes a measure against every
training image, converts similarities to distances, sorts ascending (ties
broken by training id), and scores "abnormal closeness" as

    ratio = closest distance / mean distance of the n closest

Small ratios mean the closest training image is much closer than the local
neighborhood, i.e. the synthetic image is likely a replica. Image- and
feature-level measures are thresholded on this ratio; segmentation-level
measures are thresholded on the converted absolute value instead, since the
segmentation already isolates the region of interest.

Pairwise computations are embarrassingly parallel; results are gathered by
index so output is byte-identical regardless of worker count. Training
volumes are streamed in blocks sized to a memory budget.
"""

from __future__ import annotations

import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from decimal import Decimal
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import image_metrics, feature_metrics, segmentation_metrics
from .errors import (
    CorpusError,
    InputError,
    IoError,
    RangeError,
    RelictError,
)
from .image_metrics import SsimParams
from .volio import (
    Corpus,
    CorpusEntry,
    EmbeddingVector,
    SegmentationMask,
    Volume3D,
    load_embedding,
    load_feature_map,
    load_mask,
    load_volume,
    zscore_normalize,
)

__all__ = [
    "MEASURES",
    "MeasureSpec",
    "Neighbor",
    "CandidateSet",
    "RankingRecord",
    "ThresholdConfig",
    "ImageBundle",
    "PipelineRun",
    "to_distance",
    "rank_training",
    "distance_ratio",
    "decide",
    "run_pipeline",
    "execute",
    "load_bundle",
    "write_records_jsonl",
    "read_records_jsonl",
    "write_neighbors_csv",
]

RECORD_SCHEMA_VERSION = 1
DEFAULT_N_CLOSEST = 50
DEFAULT_POOL_SHAPE = (4, 4, 4)

# measure name -> (analysis level, polarity)
MEASURES: dict[str, tuple[str, str]] = {
    "mae": ("image", "distance"),
    "rmse": ("image", "distance"),
    "ssim": ("image", "similarity"),
    "emb_rmse": ("feature", "distance"),
    "emb_cosine": ("feature", "similarity"),
    "dice_binary": ("segmentation", "similarity"),
    "dice_multiclass": ("segmentation", "similarity"),
    "asd_binary": ("segmentation", "distance"),
    "asd_multiclass": ("segmentation", "distance"),
}

_RANGE_EPS = 1e-9


@dataclass(frozen=True)
class MeasureSpec:
    """One configured comparison measure."""

    name: str
    level: str
    polarity: str
    label: int = 1  # binary segmentation measures compare this label
    ssim_params: SsimParams | None = None
    pool_shape: tuple[int, int, int] = DEFAULT_POOL_SHAPE

    def __post_init__(self):
        if self.name not in MEASURES:
            raise InputError(
                f"unknown measure {self.name!r}; valid: {sorted(MEASURES)}"
            )
        level, polarity = MEASURES[self.name]
        if self.level != level or self.polarity != polarity:
            raise InputError(
                f"measure {self.name!r} is ({level}, {polarity}), "
                f"got ({self.level}, {self.polarity})"
            )

    @classmethod
    def from_name(cls, name: str, **overrides) -> "MeasureSpec":
        if name not in MEASURES:
            raise InputError(f"unknown measure {name!r}; valid: {sorted(MEASURES)}")
        level, polarity = MEASURES[name]
        return cls(name=name, level=level, polarity=polarity, **overrides)


@dataclass(frozen=True)
class Neighbor:
    training_id: str
    raw_value: float
    distance_value: float


@dataclass(frozen=True)
class CandidateSet:
    """All training images ordered by distance to one synthetic image."""

    synthetic_id: str
    measure: str
    neighbors: tuple[Neighbor, ...]
    n: int = DEFAULT_N_CLOSEST

    def __post_init__(self):
        if self.n < 1:
            raise InputError(f"n must be positive, got {self.n}")
        dists = [nb.distance_value for nb in self.neighbors]
        if any(d < 0 or not math.isfinite(d) for d in dists):
            raise InputError("distance values must be finite and non-negative")
        if any(dists[i] > dists[i + 1] for i in range(len(dists) - 1)):
            raise InputError("neighbors must be sorted ascending by distance")
        object.__setattr__(self, "neighbors", tuple(self.neighbors))


@dataclass(frozen=True)
class RankingRecord:
    """Result row for one (synthetic image, measure)."""

    synthetic_id: str
    measure: str
    closest_training_id: str
    closest_distance: float
    mean_of_n_closest: float
    distance_ratio: float | None
    absolute_value: float | None
    decision: str = "undecided"

    @property
    def value(self) -> float:
        """The thresholded quantity: ratio, or absolute for segmentation."""
        return self.distance_ratio if self.distance_ratio is not None else self.absolute_value


@dataclass(frozen=True)
class ThresholdConfig:
    """Per-measure replica decision thresholds.

    Image- and feature-level thresholds apply to the distance ratio;
    segmentation-level thresholds apply to the converted absolute value.
    """

    thresholds: dict[str, float]

    def __post_init__(self):
        for name, t in self.thresholds.items():
            if name not in MEASURES:
                raise InputError(f"unknown measure {name!r} in thresholds")
            if not math.isfinite(float(t)):
                raise InputError(f"threshold for {name!r} must be finite")
        object.__setattr__(
            self, "thresholds", {k: float(v) for k, v in self.thresholds.items()}
        )

    @staticmethod
    def mode_for(measure: str) -> str:
        return "absolute" if MEASURES[measure][0] == "segmentation" else "ratio"

    def get(self, measure: str) -> float | None:
        return self.thresholds.get(measure)

    def to_json(self) -> dict:
        return {
            "schema_version": RECORD_SCHEMA_VERSION,
            "thresholds": {
                name: {"threshold": t, "mode": self.mode_for(name)}
                for name, t in sorted(self.thresholds.items())
            },
        }

    @classmethod
    def from_json(cls, doc: dict) -> "ThresholdConfig":
        raw = doc.get("thresholds", {})
        return cls(
            thresholds={
                name: float(entry["threshold"]) if isinstance(entry, dict) else float(entry)
                for name, entry in raw.items()
            }
        )


@dataclass
class ImageBundle:
    """The loaded modalities of one image needed for a given level."""

    id: str
    volume: Volume3D | None = None
    mask: SegmentationMask | None = None
    embedding: EmbeddingVector | None = None


@dataclass
class PipelineRun:
    records: list[RankingRecord]
    candidates: dict[str, list[CandidateSet]]
    timings: dict[str, float]  # measure -> wall seconds


def _decimal_complement(raw: float, halve: bool) -> float:
    # computed through the shortest decimal representation so that the
    # conversion is decimal-faithful: dice 0.7 -> distance 0.3 exactly
    value = Decimal(1) - Decimal(repr(raw))
    if halve:
        value /= 2
    return float(value)


def to_distance(raw: float, spec: MeasureSpec) -> float:
    """Convert a raw measure value to a non-negative distance.

    Distance measures pass through unchanged; Dice maps to 1 - dice; SSIM
    and cosine first normalize their [-1, 1] range to [0, 1] and subtract
    from 1, i.e. (1 - raw) / 2.
    """
    raw = float(raw)
    if not math.isfinite(raw):
        raise RangeError(f"{spec.name}: raw value {raw!r} is not finite")
    if spec.polarity == "distance":
        if raw < -_RANGE_EPS:
            raise RangeError(f"{spec.name}: distance value {raw} is negative")
        return max(raw, 0.0)
    if spec.name in ("dice_binary", "dice_multiclass"):
        if raw < -_RANGE_EPS or raw > 1.0 + _RANGE_EPS:
            raise RangeError(f"{spec.name}: value {raw} outside [0, 1]")
        return _decimal_complement(min(max(raw, 0.0), 1.0), halve=False)
    # ssim, emb_cosine
    if raw < -1.0 - _RANGE_EPS or raw > 1.0 + _RANGE_EPS:
        raise RangeError(f"{spec.name}: value {raw} outside [-1, 1]")
    return _decimal_complement(min(max(raw, -1.0), 1.0), halve=True)


def compute_raw(a: ImageBundle, b: ImageBundle, spec: MeasureSpec) -> float:
    """Raw measure value between two loaded bundles."""
    name = spec.name
    if name == "mae":
        return image_metrics.mae(a.volume, b.volume)
    if name == "rmse":
        return image_metrics.rmse(a.volume, b.volume)
    if name == "ssim":
        return image_metrics.mean_ssim(a.volume, b.volume, spec.ssim_params)
    if name == "emb_rmse":
        return feature_metrics.embedding_rmse(a.embedding, b.embedding)
    if name == "emb_cosine":
        return feature_metrics.cosine_similarity(a.embedding, b.embedding)
    if name == "dice_binary":
        return segmentation_metrics.dice_binary(a.mask, b.mask, spec.label)
    if name == "dice_multiclass":
        return segmentation_metrics.dice_multiclass(a.mask, b.mask)
    if name == "asd_binary":
        return segmentation_metrics.asd_binary(a.mask, b.mask, spec.label)
    if name == "asd_multiclass":
        return segmentation_metrics.asd_multiclass(a.mask, b.mask)
    raise InputError(f"unknown measure {name!r}")


def load_bundle(
    entry: CorpusEntry,
    level: str,
    *,
    pool_shape: tuple[int, int, int] = DEFAULT_POOL_SHAPE,
    zscore: bool = False,
) -> ImageBundle:
    """Load the modality an analysis level needs for one corpus entry."""
    if level == "image":
        volume = load_volume(entry.volume, entry.id)
        if zscore:
            volume = zscore_normalize(volume)
        return ImageBundle(id=entry.id, volume=volume)
    if level == "feature":
        if entry.embedding is not None:
            emb = load_embedding(entry.embedding, entry.id)
        elif entry.feature_map is not None:
            fmap = load_feature_map(entry.feature_map, entry.id)
            emb = feature_metrics.flatten(
                feature_metrics.adaptive_avg_pool(fmap, pool_shape)
            )
        else:
            raise InputError(
                f"image {entry.id!r} has no embedding or feature map "
                f"for feature-level measures"
            )
        return ImageBundle(id=entry.id, embedding=emb)
    if level == "segmentation":
        if entry.mask is None:
            raise InputError(
                f"image {entry.id!r} has no mask for segmentation-level measures"
            )
        return ImageBundle(id=entry.id, mask=load_mask(entry.mask, entry.id))
    raise InputError(f"unknown analysis level {level!r}")


def _assemble_candidates(
    synthetic_id: str,
    training_ids: Sequence[str],
    raws: np.ndarray,
    distances: np.ndarray,
    spec: MeasureSpec,
    n: int,
) -> CandidateSet:
    ids = np.asarray(training_ids)
    order = np.lexsort((ids, distances))
    neighbors = tuple(
        Neighbor(
            training_id=str(ids[i]),
            raw_value=float(raws[i]),
            distance_value=float(distances[i]),
        )
        for i in order
    )
    return CandidateSet(
        synthetic_id=synthetic_id, measure=spec.name, neighbors=neighbors, n=n
    )


def rank_training(
    synthetic: ImageBundle,
    training: "Corpus | Sequence[ImageBundle]",
    spec: MeasureSpec,
    n: int = DEFAULT_N_CLOSEST,
) -> CandidateSet:
    """Rank the whole training corpus by distance to one synthetic bundle.

    ``training`` may be a Corpus (entries are loaded here, all at once) or a
    sequence of already-loaded bundles.
    """
    if isinstance(training, Corpus):
        training = [load_bundle(e, spec.level, pool_shape=spec.pool_shape) for e in training]
    if len(training) < 2:
        raise CorpusError(f"training corpus has {len(training)} images, need >= 2")
    if n < 2:
        raise InputError(f"n must be >= 2, got {n}")
    if n > len(training):
        raise InputError(f"n={n} exceeds training corpus size {len(training)}")
    raws = np.empty(len(training))
    for t, bundle in enumerate(training):
        raws[t] = _raw_for_pair(synthetic, bundle, spec)
    distances = np.array([to_distance(v, spec) for v in raws])
    return _assemble_candidates(
        synthetic.id, [b.id for b in training], raws, distances, spec, n
    )


def _raw_for_pair(a: ImageBundle, b: ImageBundle, spec: MeasureSpec) -> float:
    try:
        return compute_raw(a, b, spec)
    except RelictError as exc:
        raise type(exc)(
            f"{spec.name} failed for pair ({a.id!r}, {b.id!r}): {exc}"
        ) from exc


def distance_ratio(candidates: CandidateSet) -> float:
    """Closest distance divided by the mean of the n smallest distances.

    A zero mean means the n closest are all exact matches; the image is
    maximally a replica and the ratio is 0. The ratio never exceeds 1
    (the minimum of n values cannot exceed their mean).
    """
    if len(candidates.neighbors) < candidates.n:
        raise InputError(
            f"need at least n={candidates.n} neighbors, "
            f"got {len(candidates.neighbors)}"
        )
    dists = np.array(
        [nb.distance_value for nb in candidates.neighbors[: candidates.n]]
    )
    mean = float(dists.mean())
    if mean == 0.0:
        return 0.0
    if dists[0] == dists[-1]:
        return 1.0  # all n equal and positive
    return min(float(dists[0] / mean), 1.0)


def decide(value: float, threshold: float | None) -> str:
    """Binary replica decision: replica iff value < threshold."""
    if threshold is None:
        return "undecided"
    if not math.isfinite(value):
        raise RangeError(f"cannot decide on non-finite value {value!r}")
    return "replica" if value < threshold else "not_replica"


def _default_workers() -> int:
    return max(1, os.cpu_count() or 1)


def _check_embedding_dims(bundles: Sequence[ImageBundle], role: str) -> None:
    # all embeddings within one corpus must share the same dimension
    from .errors import DimensionError

    dims = {b.embedding.dim for b in bundles if b.embedding is not None}
    if len(dims) > 1:
        detail = ", ".join(
            f"{b.id}:{b.embedding.dim}" for b in bundles if b.embedding is not None
        )
        raise DimensionError(
            f"{role} corpus mixes embedding dims {sorted(dims)} ({detail})"
        )


def _block_size(level: str, sample: ImageBundle, memory_budget_mb: int) -> int:
    if level == "feature":
        return 1 << 30  # embeddings are small; no blocking needed
    array = sample.volume.voxels if level == "image" else sample.mask.labels
    per_entry = max(1, array.nbytes)
    return max(1, (memory_budget_mb * (1 << 20)) // per_entry)


def pairwise_matrices(
    training: Corpus,
    synthetic: Corpus,
    spec: MeasureSpec,
    *,
    workers: int | None = None,
    memory_budget_mb: int = 1024,
    zscore: bool = False,
) -> tuple[list[str], list[str], np.ndarray, np.ndarray]:
    """Raw and distance matrices of shape (n_synthetic, n_training).

    Synthetic bundles are held in memory; training bundles are loaded in
    blocks sized to the memory budget. Matrix cells are filled by index, so
    the result is independent of worker scheduling.
    """
    if len(training) < 2:
        raise CorpusError(f"training corpus has {len(training)} images, need >= 2")
    workers = workers or _default_workers()
    synth_bundles = [
        load_bundle(e, spec.level, pool_shape=spec.pool_shape, zscore=zscore)
        for e in synthetic
    ]
    if spec.level == "feature":
        _check_embedding_dims(synth_bundles, synthetic.role)
    raws = np.empty((len(synthetic), len(training)))
    if synth_bundles:
        block = _block_size(spec.level, synth_bundles[0], memory_budget_mb)
        train_entries = list(training)
        for t0 in range(0, len(train_entries), block):
            chunk = train_entries[t0 : t0 + block]
            bundles = [
                load_bundle(e, spec.level, pool_shape=spec.pool_shape, zscore=zscore)
                for e in chunk
            ]
            if spec.level == "feature":
                _check_embedding_dims(bundles, training.role)

            def fill_row(s: int) -> None:
                for offset, train_bundle in enumerate(bundles):
                    raws[s, t0 + offset] = _raw_for_pair(
                        synth_bundles[s], train_bundle, spec
                    )

            if workers > 1 and len(synth_bundles) > 1:
                with ThreadPoolExecutor(max_workers=workers) as pool:
                    list(pool.map(fill_row, range(len(synth_bundles))))
            else:
                for s in range(len(synth_bundles)):
                    fill_row(s)
    distances = np.empty_like(raws)
    for s in range(raws.shape[0]):
        for t in range(raws.shape[1]):
            distances[s, t] = to_distance(raws[s, t], spec)
    return list(synthetic.ids), list(training.ids), raws, distances


def execute(
    training: Corpus,
    synthetic: Corpus,
    specs: Sequence[MeasureSpec],
    *,
    n: int = DEFAULT_N_CLOSEST,
    thresholds: ThresholdConfig | None = None,
    workers: int | None = None,
    memory_budget_mb: int = 1024,
    zscore: bool = False,
) -> PipelineRun:
    """Run all measures over all (synthetic, training) pairs.

    Returns one RankingRecord per (synthetic image, measure), sorted within
    each measure ascending by the thresholded value so likely replicas come
    first; candidate sets and per-measure wall times ride along.
    """
    if not specs:
        raise InputError("at least one measure spec is required")
    if n < 2:
        raise InputError(f"n must be >= 2, got {n}")
    if n > len(training):
        raise InputError(f"n={n} exceeds training corpus size {len(training)}")
    records: list[RankingRecord] = []
    all_candidates: dict[str, list[CandidateSet]] = {}
    timings: dict[str, float] = {}
    for spec in specs:
        started = time.perf_counter()
        synth_ids, train_ids, raws, distances = pairwise_matrices(
            training,
            synthetic,
            spec,
            workers=workers,
            memory_budget_mb=memory_budget_mb,
            zscore=zscore,
        )
        spec_records: list[RankingRecord] = []
        spec_candidates: list[CandidateSet] = []
        for s, synthetic_id in enumerate(synth_ids):
            candidate_set = _assemble_candidates(
                synthetic_id, train_ids, raws[s], distances[s], spec, n
            )
            spec_candidates.append(candidate_set)
            closest = candidate_set.neighbors[0]
            n_closest = [nb.distance_value for nb in candidate_set.neighbors[:n]]
            mean_closest = float(np.mean(n_closest))
            if spec.level == "segmentation":
                ratio = None
                absolute = closest.distance_value
                value = absolute
            else:
                ratio = distance_ratio(candidate_set)
                absolute = None
                value = ratio
            threshold = thresholds.get(spec.name) if thresholds else None
            spec_records.append(
                RankingRecord(
                    synthetic_id=synthetic_id,
                    measure=spec.name,
                    closest_training_id=closest.training_id,
                    closest_distance=closest.distance_value,
                    mean_of_n_closest=mean_closest,
                    distance_ratio=ratio,
                    absolute_value=absolute,
                    decision=decide(value, threshold),
                )
            )
        spec_records.sort(key=lambda r: (r.value, r.synthetic_id))
        records.extend(spec_records)
        all_candidates[spec.name] = spec_candidates
        timings[spec.name] = time.perf_counter() - started
    return PipelineRun(records=records, candidates=all_candidates, timings=timings)


def run_pipeline(
    training: Corpus,
    synthetic: Corpus,
    specs: Sequence[MeasureSpec],
    n: int = DEFAULT_N_CLOSEST,
    thresholds: ThresholdConfig | None = None,
    **options,
) -> list[RankingRecord]:
    """Convenience wrapper around :func:`execute` returning only records."""
    return execute(
        training, synthetic, specs, n=n, thresholds=thresholds, **options
    ).records


def record_to_json(record: RankingRecord) -> dict:
    return {
        "schema_version": RECORD_SCHEMA_VERSION,
        "synthetic_id": record.synthetic_id,
        "measure": record.measure,
        "closest_training_id": record.closest_training_id,
        "closest_distance": record.closest_distance,
        "mean_of_n_closest": record.mean_of_n_closest,
        "distance_ratio": record.distance_ratio,
        "absolute_value": record.absolute_value,
        "decision": record.decision,
    }


def record_from_json(doc: dict) -> RankingRecord:
    return RankingRecord(
        synthetic_id=doc["synthetic_id"],
        measure=doc["measure"],
        closest_training_id=doc["closest_training_id"],
        closest_distance=float(doc["closest_distance"]),
        mean_of_n_closest=float(doc["mean_of_n_closest"]),
        distance_ratio=None
        if doc.get("distance_ratio") is None
        else float(doc["distance_ratio"]),
        absolute_value=None
        if doc.get("absolute_value") is None
        else float(doc["absolute_value"]),
        decision=doc.get("decision", "undecided"),
    )


def write_records_jsonl(records: Iterable[RankingRecord], path) -> None:
    path = Path(path)
    try:
        with open(path, "w", newline="\n") as fh:
            for record in records:
                fh.write(json.dumps(record_to_json(record)) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write records to {path}: {exc}") from exc


def read_records_jsonl(path) -> list[RankingRecord]:
    path = Path(path)
    records = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(record_from_json(json.loads(line)))
    return records


def write_neighbors_csv(candidate_sets: Sequence[CandidateSet], path) -> None:
    """Dump full neighbor orderings: synthetic_id,rank,training_id,raw,distance."""
    path = Path(path)
    try:
        with open(path, "w", newline="\n") as fh:
            fh.write("synthetic_id,rank,training_id,raw_value,distance_value\n")
            for cs in candidate_sets:
                for rank, nb in enumerate(cs.neighbors, start=1):
                    fh.write(
                        f"{cs.synthetic_id},{rank},{nb.training_id},"
                        f"{nb.raw_value!r},{nb.distance_value!r}\n"
                    )
    except OSError as exc:
        raise IoError(f"cannot write neighbors to {path}: {exc}") from exc
