"""HTTP rating service: pair queue, slice viewing, durable rating capture.

The service feeds the browser rating UI. The queue is built from a records
file: pairs (synthetic image, its closest training image) ordered ascending
by the configured preselection measure's value, so the most likely replicas
are rated first. Ratings are appended to a JSON Lines log and fsync'd
before the request is acknowledged; restarting the service reconstructs all
rating state from the log alone.

The pair payloads deliberately carry no measure values or ratios: raters
see only images (blinded scoring). The two-rater protocol is enforced by
registering rater ids at startup (from --raters and from the existing log);
a third distinct rater id is rejected.
"""

from __future__ import annotations

import io
import json
import os
import threading
from dataclasses import dataclass, field
from datetime import datetime, timezone
from functools import lru_cache
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Response
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from PIL import Image

from .engine import MEASURES, read_records_jsonl
from .errors import InputError, RelictError
from .evaluation import (
    LIKERT_MAX,
    LIKERT_MIN,
    RatingRecord,
    pair_id_for,
    read_ratings_jsonl,
)
from .volio import Volume3D, load_corpus, load_volume

__all__ = ["PairQueueEntry", "RatingService", "create_app", "render_slice"]

PLANES = ("axial", "coronal", "sagittal")
MAX_RATERS = 2


@dataclass
class PairQueueEntry:
    pair_id: str
    synthetic_id: str
    training_id: str
    queue_rank: int  # 1-based, contiguous, ascending by preselection value
    rated_by: list[dict] = field(default_factory=list)


def render_slice(
    volume: Volume3D,
    plane: str,
    index: int,
    lo: float | None = None,
    hi: float | None = None,
) -> bytes:
    """Extract a 2D slice, window it linearly to [0, 255], encode as PNG.

    Axial fixes z (image axes x/y), coronal fixes y (x/z), sagittal fixes x
    (y/z). The window defaults to the volume's full intensity range.
    """
    if plane not in PLANES:
        raise InputError(f"plane must be one of {PLANES}, got {plane!r}")
    nx, ny, nz = volume.dims
    extent = {"axial": nz, "coronal": ny, "sagittal": nx}[plane]
    if not (0 <= index < extent):
        raise IndexError(f"slice index {index} outside [0, {extent})")
    if plane == "axial":
        plane2d = volume.voxels[:, :, index].T
    elif plane == "coronal":
        plane2d = volume.voxels[:, index, :].T
    else:
        plane2d = volume.voxels[index, :, :].T
    if lo is None:
        lo = float(volume.voxels.min())
    if hi is None:
        hi = float(volume.voxels.max())
    if not hi > lo:
        raise InputError(f"window must satisfy lo < hi, got ({lo}, {hi})")
    scaled = np.clip((plane2d - lo) / (hi - lo), 0.0, 1.0)
    pixels = np.round(scaled * 255.0).astype(np.uint8)
    image = Image.fromarray(pixels, mode="L")
    buf = io.BytesIO()
    image.save(buf, format="PNG")
    return buf.getvalue()


class RatingService:
    """All mutable service state; one instance per running app."""

    def __init__(
        self,
        records_path,
        training_manifest,
        synthetic_manifest,
        ratings_log,
        queue_measure: str = "rmse",
        raters: list[str] | None = None,
    ):
        if queue_measure not in MEASURES:
            raise InputError(f"unknown queue measure {queue_measure!r}")
        self.ratings_log = Path(ratings_log)
        self.queue_measure = queue_measure
        self.training = load_corpus(training_manifest)
        self.synthetic = load_corpus(synthetic_manifest)
        overlap = set(self.training.ids) & set(self.synthetic.ids)
        if overlap:
            raise InputError(
                f"image ids must be unique across corpora; shared: {sorted(overlap)}"
            )
        self._entries_by_id = {e.id: e for c in (self.training, self.synthetic) for e in c}
        self.queue = self._build_queue(records_path)
        self._queue_by_pair = {q.pair_id: q for q in self.queue}
        self._write_lock = threading.Lock()
        self.ratings: list[RatingRecord] = []
        self.registered_raters: list[str] = list(raters or [])
        if len(self.registered_raters) > MAX_RATERS:
            raise InputError(
                f"at most {MAX_RATERS} raters are supported, got {self.registered_raters}"
            )
        if self.ratings_log.exists():
            for rating in read_ratings_jsonl(self.ratings_log):
                self._absorb(rating)

        @lru_cache(maxsize=8)
        def _volume_cache(image_id: str) -> Volume3D:
            entry = self._entries_by_id[image_id]
            return load_volume(entry.volume, entry.id)

        self._volume_cache = _volume_cache

    def _build_queue(self, records_path) -> list[PairQueueEntry]:
        records = [
            r
            for r in read_records_jsonl(records_path)
            if r.measure == self.queue_measure
        ]
        if not records:
            raise InputError(
                f"records file has no {self.queue_measure!r} entries to queue"
            )
        records.sort(key=lambda r: (r.value, r.synthetic_id))
        queue = []
        self._queue_values = {}
        for rank, record in enumerate(records, start=1):
            pair_id = pair_id_for(record.synthetic_id, record.closest_training_id)
            self._queue_values[pair_id] = record.value
            queue.append(
                PairQueueEntry(
                    pair_id=pair_id,
                    synthetic_id=record.synthetic_id,
                    training_id=record.closest_training_id,
                    queue_rank=rank,
                )
            )
        return queue

    def _absorb(self, rating: RatingRecord) -> None:
        if rating.rater_id not in self.registered_raters:
            self.registered_raters.append(rating.rater_id)
        self.ratings.append(rating)
        entry = self._queue_by_pair.get(rating.pair_id)
        if entry is not None:
            entry.rated_by.append(
                {"rater_id": rating.rater_id, "round": rating.round}
            )

    def volume(self, image_id: str) -> Volume3D:
        if image_id not in self._entries_by_id:
            raise KeyError(image_id)
        return self._volume_cache(image_id)

    def _round1_disagreement(self, pair_id: str) -> bool:
        round1 = {
            r.rater_id: r.score
            for r in self.ratings
            if r.pair_id == pair_id and r.round == 1
        }
        if len(round1) < 2:
            return False
        decisions = {score >= 3 for score in round1.values()}
        return len(decisions) == 2

    def round1_complete(self) -> bool:
        if len(self.registered_raters) < MAX_RATERS:
            return False
        rated = {
            (r.pair_id, r.rater_id) for r in self.ratings if r.round == 1
        }
        return all(
            (q.pair_id, rater) in rated
            for q in self.queue
            for rater in self.registered_raters
        )

    def reveal_values(self) -> list[dict]:
        """Per-pair queue-measure values; only meaningful once round 1 is done."""
        return [
            {
                "pair_id": q.pair_id,
                "queue_rank": q.queue_rank,
                "measure": self.queue_measure,
                "value": self._queue_values[q.pair_id],
            }
            for q in self.queue
        ]

    def submit_rating(self, pair_id: str, rater_id: str, score, round_no) -> None:
        """Validate and durably append one rating. Raises on rejection."""
        if pair_id not in self._queue_by_pair:
            raise InputError(f"unknown pair {pair_id!r}")
        if not isinstance(score, int) or isinstance(score, bool):
            raise InputError(f"score must be an integer, got {score!r}")
        if not (LIKERT_MIN <= score <= LIKERT_MAX):
            raise InputError(
                f"score must be in [{LIKERT_MIN}, {LIKERT_MAX}], got {score}"
            )
        if not isinstance(round_no, int) or round_no not in (1, 2):
            raise InputError(f"round must be 1 or 2, got {round_no!r}")
        with self._write_lock:
            if (
                rater_id not in self.registered_raters
                and len(self.registered_raters) >= MAX_RATERS
            ):
                raise InputError(
                    f"rater {rater_id!r} is not registered and the two-rater "
                    f"protocol is full: {self.registered_raters}"
                )
            duplicate = any(
                r.pair_id == pair_id and r.rater_id == rater_id and r.round == round_no
                for r in self.ratings
            )
            if duplicate:
                raise DuplicateRatingError(
                    f"pair {pair_id!r} already rated by {rater_id!r} in round {round_no}"
                )
            if round_no == 2 and not self._round1_disagreement(pair_id):
                raise InputError(
                    f"round 2 only applies to pairs with a round-1 disagreement "
                    f"({pair_id!r} has none)"
                )
            rating = RatingRecord(
                pair_id=pair_id,
                rater_id=rater_id,
                score=score,
                round=round_no,
                timestamp=datetime.now(timezone.utc).isoformat(),
            )
            line = json.dumps(
                {
                    "pair_id": rating.pair_id,
                    "rater_id": rating.rater_id,
                    "score": rating.score,
                    "round": rating.round,
                    "timestamp": rating.timestamp,
                }
            )
            # durable before acknowledgment: flush + fsync on the same handle
            with open(self.ratings_log, "a", newline="\n") as fh:
                fh.write(line + "\n")
                fh.flush()
                os.fsync(fh.fileno())
            self._absorb(rating)

    def progress(self) -> dict:
        counts: dict[str, dict[str, int]] = {
            rater: {"round_1": 0, "round_2": 0} for rater in self.registered_raters
        }
        for r in self.ratings:
            counts.setdefault(r.rater_id, {"round_1": 0, "round_2": 0})
            counts[r.rater_id][f"round_{r.round}"] += 1
        return {
            "total_pairs": len(self.queue),
            "registered_raters": list(self.registered_raters),
            "raters": counts,
        }


class DuplicateRatingError(RelictError):
    """The (pair, rater, round) combination was already rated."""


def create_app(
    records_path,
    training_manifest,
    synthetic_manifest,
    ratings_log,
    queue_measure: str = "rmse",
    raters: list[str] | None = None,
    frontend_dir=None,
) -> FastAPI:
    service = RatingService(
        records_path=records_path,
        training_manifest=training_manifest,
        synthetic_manifest=synthetic_manifest,
        ratings_log=ratings_log,
        queue_measure=queue_measure,
        raters=raters,
    )
    app = FastAPI(title="relict rating service")
    app.state.service = service

    @app.get("/api/pairs")
    def get_pairs():
        # needs_round2 tells a rater a second round is required without
        # exposing the other rater's scores or any measure values
        return [
            {
                "pair_id": q.pair_id,
                "synthetic_id": q.synthetic_id,
                "training_id": q.training_id,
                "queue_rank": q.queue_rank,
                "rated_by": sorted(
                    q.rated_by, key=lambda e: (e["rater_id"], e["round"])
                ),
                "needs_round2": service._round1_disagreement(q.pair_id),
            }
            for q in service.queue
        ]

    @app.get("/api/reveal")
    def get_reveal():
        # post-hoc reveal: blocked until both raters finish round 1
        if not service.round1_complete():
            return JSONResponse(
                {"error": "reveal is available after round 1 completes"},
                status_code=403,
            )
        return service.reveal_values()

    @app.get("/api/progress")
    def get_progress():
        return service.progress()

    @app.get("/api/volumes/{image_id}/meta")
    def get_meta(image_id: str):
        try:
            volume = service.volume(image_id)
        except KeyError:
            return JSONResponse(
                {"error": f"unknown volume {image_id!r}"}, status_code=404
            )
        return {
            "id": volume.id,
            "dims": list(volume.dims),
            "spacing": list(volume.spacing),
            "intensity_min": float(volume.voxels.min()),
            "intensity_max": float(volume.voxels.max()),
        }

    @app.get("/api/volumes/{image_id}/slice")
    def get_slice(
        image_id: str,
        plane: str = "axial",
        index: int = 0,
        lo: float | None = None,
        hi: float | None = None,
    ):
        try:
            volume = service.volume(image_id)
        except KeyError:
            return JSONResponse(
                {"error": f"unknown volume {image_id!r}"}, status_code=404
            )
        try:
            png = render_slice(volume, plane, index, lo, hi)
        except IndexError as exc:
            return JSONResponse({"error": str(exc)}, status_code=404)
        except InputError as exc:
            return JSONResponse({"error": str(exc)}, status_code=400)
        return Response(content=png, media_type="image/png")

    @app.post("/api/ratings", status_code=201)
    def post_rating(body: dict):
        required = {"pair_id", "rater_id", "score", "round"}
        missing = required - set(body)
        if missing:
            return JSONResponse(
                {"error": f"missing fields: {sorted(missing)}"}, status_code=400
            )
        try:
            service.submit_rating(
                pair_id=body["pair_id"],
                rater_id=str(body["rater_id"]),
                score=body["score"],
                round_no=body["round"],
            )
        except DuplicateRatingError as exc:
            return JSONResponse({"error": str(exc)}, status_code=409)
        except InputError as exc:
            return JSONResponse({"error": str(exc)}, status_code=400)
        return {"status": "accepted"}

    if frontend_dir is not None and Path(frontend_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(frontend_dir), html=True), name="ui")

    return app
