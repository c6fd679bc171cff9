"""HTTP endpoints for the human-in-the-loop annotation stage.

Serves the label queue, accepts submissions into the append-only label
store, and reports live agreement plus the threshold sweep over the pairs
labeled so far. The sweep is recomputed at most every Nth submission to
bound latency; agreement is computed on an immutable snapshot per request.
"""

from __future__ import annotations

import base64
import threading
import time
from dataclasses import dataclass
from pathlib import Path

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel

from .agreement import DuplicateLabelError, LabelRecord, LabelStore, pairwise_report
from .calibrate import select_threshold, sweep

POSITIVE_LABELS = ("antisemitic", "islamophobic")


@dataclass
class QueueItem:
    item_id: str
    kind: str  # phrase | image-pair
    phrase_id: str
    phrase_text: str
    image_id: str | None = None
    image_path: str | None = None
    cosine: float | None = None
    multi_target: bool = False


class LabelSubmission(BaseModel):
    item_id: str
    annotator_id: str
    label: str


class AnnotationService:
    def __init__(self, items: list[QueueItem], store: LabelStore,
                 image_root: str | Path | None = None,
                 sweep_every: int = 10,
                 thresholds: list[float] | None = None):
        ids = [item.item_id for item in items]
        if len(ids) != len(set(ids)):
            raise ValueError("duplicate item ids in queue")
        self.items = items
        self.by_id = {item.item_id: item for item in items}
        self.store = store
        self.image_root = Path(image_root) if image_root else None
        self.sweep_every = max(1, sweep_every)
        self.thresholds = thresholds
        self._lock = threading.Lock()
        self._submissions_since_sweep = 0
        self._cached_sweep: dict | None = None

    def next_item(self, annotator_id: str, after: str | None = None) -> QueueItem | None:
        """First unlabeled item in queue order; with after, the first unlabeled
        item past that position (wrapping), so deferred items come back last."""
        labeled = self.store.labels_for(annotator_id)
        pending = [item for item in self.items if item.item_id not in labeled]
        if not pending:
            return None
        if after is not None:
            positions = {item.item_id: i for i, item in enumerate(self.items)}
            pivot = positions.get(after)
            if pivot is not None:
                for item in pending:
                    if positions[item.item_id] > pivot:
                        return item
        return pending[0]

    def progress(self, annotator_id: str) -> dict:
        labeled = self.store.labels_for(annotator_id)
        own = [i for i in self.items if i.item_id in labeled]
        return {"labeled": len(own), "total": len(self.items)}

    def submit(self, submission: LabelSubmission) -> int:
        item = self.by_id.get(submission.item_id)
        if item is None:
            raise KeyError(submission.item_id)
        with self._lock:
            self.store.add(LabelRecord(
                item_id=submission.item_id, item_kind=item.kind,
                annotator_id=submission.annotator_id, label=submission.label,
                timestamp=time.time()))
            self._submissions_since_sweep += 1
        return len(self.store)

    def _sweep_inputs(self) -> tuple[dict, dict]:
        labels: dict[tuple[str, str], bool] = {}
        cosines: dict[tuple[str, str], float] = {}
        newest: dict[tuple[str, str], float] = {}
        for record in self.store.records():
            item = self.by_id.get(record.item_id)
            if item is None or item.kind != "image-pair" or item.cosine is None:
                continue
            key = (item.phrase_id, item.image_id or item.item_id)
            if key in newest and newest[key] >= record.timestamp:
                continue
            newest[key] = record.timestamp
            labels[key] = record.label in POSITIVE_LABELS
            cosines[key] = item.cosine
        return labels, cosines

    def sweep_state(self) -> dict:
        with self._lock:
            stale = (self._cached_sweep is None or
                     self._submissions_since_sweep >= self.sweep_every)
            if not stale:
                return self._cached_sweep or {"available": False}
            labels, cosines = self._sweep_inputs()
            if not labels:
                self._cached_sweep = {"available": False}
                return self._cached_sweep
            metrics = sweep(labels, cosines, self.thresholds)
            self._cached_sweep = {
                "available": True,
                "n_pairs": len(labels),
                "selected_threshold": select_threshold(metrics),
                "thresholds": [
                    {"threshold": tm.threshold,
                     "mean": tm.mean, "std": tm.std}
                    for tm in metrics],
            }
            self._submissions_since_sweep = 0
            return self._cached_sweep


def create_app(service: AnnotationService) -> FastAPI:
    app = FastAPI(title="hatescope annotation")

    @app.get("/api/queue/next")
    def queue_next(annotator: str, after: str | None = None):
        if not annotator:
            raise HTTPException(status_code=400, detail="annotator required")
        item = service.next_item(annotator, after=after)
        progress = service.progress(annotator)
        if item is None:
            return {"done": True, "progress": progress}
        return {"done": False, "progress": progress,
                "item": {"item_id": item.item_id, "kind": item.kind,
                         "phrase_text": item.phrase_text,
                         "cosine": item.cosine,
                         "multi_target": item.multi_target}}

    @app.post("/api/labels")
    def post_label(submission: LabelSubmission):
        try:
            n_labels = service.submit(submission)
        except KeyError:
            raise HTTPException(status_code=404, detail="unknown item")
        except DuplicateLabelError:
            raise HTTPException(status_code=409, detail="already labeled")
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return {"ok": True, "n_labels": n_labels}

    @app.get("/api/agreement")
    def get_agreement():
        report = pairwise_report(service.store)
        if report is None:
            return {"available": False}
        return {"available": True, "n_items": report.n_items,
                "percent_agreement": report.percent_agreement,
                "kappa": report.kappa, "confusion": report.confusion}

    @app.get("/api/sweep")
    def get_sweep():
        return service.sweep_state()

    @app.get("/api/item/{item_id}")
    def get_item(item_id: str):
        item = service.by_id.get(item_id)
        if item is None:
            raise HTTPException(status_code=404, detail="unknown item")
        payload: dict = {"item_id": item.item_id, "kind": item.kind,
                         "phrase_id": item.phrase_id,
                         "phrase_text": item.phrase_text}
        if item.kind == "image-pair":
            payload["cosine"] = item.cosine
            if item.image_path and service.image_root is not None:
                path = service.image_root / item.image_path
                try:
                    data = path.read_bytes()
                except OSError:
                    raise HTTPException(status_code=404, detail="image missing")
                suffix = path.suffix.lstrip(".").lower() or "png"
                payload["image_b64"] = base64.b64encode(data).decode("ascii")
                payload["media_type"] = f"image/{'jpeg' if suffix == 'jpg' else suffix}"
        return payload

    return app


def serve_annotation_api(service: AnnotationService, host: str = "127.0.0.1",
                         port: int = 8400) -> None:
    import uvicorn

    uvicorn.run(create_app(service), host=host, port=port, log_level="warning")
