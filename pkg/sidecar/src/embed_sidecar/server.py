"""HTTP protocol: POST /v1/embed/text, POST /v1/embed/image, GET /v1/health.

JSON bodies throughout; images travel as standard-alphabet base64. Batches
over the configured maximum are refused with 413, empty batches with 400.
Undecodable images produce a per-item error entry with the position
preserved; the other items in the batch still succeed.
"""

from __future__ import annotations

import argparse
import base64
import binascii
import threading

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel

from .models import ImageDecodeFailure, load_model

DEFAULT_MAX_BATCH = 64


class EmbedRequest(BaseModel):
    texts: list[str] | None = None
    images: list[str] | None = None


def create_app(model, max_batch: int = DEFAULT_MAX_BATCH) -> FastAPI:
    app = FastAPI(title="hatescope embedding sidecar")
    # serialize inference: model backends are not assumed thread-safe
    inference_lock = threading.Lock()

    def check_batch(items: list | None, expected: str, other: str):
        if items is None:
            raise HTTPException(status_code=400,
                                detail=f"request must carry {expected!r}")
        if not items:
            raise HTTPException(status_code=400, detail="batch is empty")
        if len(items) > max_batch:
            raise HTTPException(status_code=413,
                                detail=f"batch of {len(items)} exceeds max {max_batch}")

    @app.get("/v1/health")
    def health():
        return {"model_id": model.model_id, "dim": model.dim, "ready": True}

    @app.post("/v1/embed/text")
    def embed_text(request: EmbedRequest):
        if request.images is not None and request.texts is not None:
            raise HTTPException(status_code=400,
                                detail="exactly one of texts/images allowed")
        check_batch(request.texts, "texts", "images")
        with inference_lock:
            vectors = model.embed_texts(list(request.texts))
        return {"vectors": [v.tolist() for v in vectors],
                "dim": model.dim, "model_id": model.model_id}

    @app.post("/v1/embed/image")
    def embed_image(request: EmbedRequest):
        if request.images is not None and request.texts is not None:
            raise HTTPException(status_code=400,
                                detail="exactly one of texts/images allowed")
        check_batch(request.images, "images", "texts")
        vectors = []
        errors = []
        for index, payload in enumerate(request.images):
            try:
                data = base64.b64decode(payload, validate=True)
            except (binascii.Error, ValueError) as exc:
                vectors.append(None)
                errors.append({"index": index, "message": f"bad base64: {exc}"})
                continue
            try:
                with inference_lock:
                    vector = model.embed_image(data)
            except ImageDecodeFailure as exc:
                vectors.append(None)
                errors.append({"index": index, "message": str(exc)})
                continue
            vectors.append(vector.tolist())
        return {"vectors": vectors, "errors": errors,
                "dim": model.dim, "model_id": model.model_id}

    return app


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="hatescope-sidecar",
                                     description="embedding microservice")
    parser.add_argument("--model", default="stub",
                        help="'stub' or a pretrained contrastive model name")
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--dim", type=int, default=64, help="stub dimension")
    parser.add_argument("--seed", type=int, default=1234, help="stub seed")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8500)
    parser.add_argument("--max-batch", type=int, default=DEFAULT_MAX_BATCH)
    args = parser.parse_args(argv)

    import uvicorn

    model = load_model(args.model, dim=args.dim, seed=args.seed, device=args.device)
    uvicorn.run(create_app(model, max_batch=args.max_batch),
                host=args.host, port=args.port, log_level="info")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
