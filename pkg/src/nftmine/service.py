"""HTTP recommendation service.

The app loads an immutable (model, catalog, vocabulary) snapshot at
construction and serves three endpoints: GET /health, GET /recommend,
and POST /score. Responses are plain JSON; identical requests against
the same snapshot produce byte-identical bodies. Model updates require
a restart.
"""

from __future__ import annotations

import logging
import uuid
from typing import Optional

from fastapi import FastAPI, Query, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from .ffm import FfmRow, Vocabulary
from .serving import Catalog, LoadedModel, recommend

log = logging.getLogger(__name__)


class HealthResponse(BaseModel):
    status: str
    model_version: str


class RecommendationItem(BaseModel):
    asset_key: str
    collection_slug: str
    probability: float


class RecommendResponse(BaseModel):
    user: str
    k: int
    collection: Optional[str] = None
    items: list[RecommendationItem]


class ScoreRow(BaseModel):
    entries: list[tuple[int, int, float]] = Field(default_factory=list)


class ScoreResponse(BaseModel):
    probabilities: list[float]


def create_app(model_path, catalog_path, vocab_path) -> FastAPI:
    model = LoadedModel.load(model_path)
    catalog = Catalog.load(catalog_path)
    vocab = Vocabulary.load(vocab_path)
    app = FastAPI(title="nftmine", docs_url=None, redoc_url=None)

    @app.exception_handler(RequestValidationError)
    async def on_validation_error(request: Request, exc: RequestValidationError):
        reasons = [
            {"location": [str(p) for p in err["loc"]], "message": err["msg"]}
            for err in exc.errors()
        ]
        return JSONResponse(
            status_code=400, content={"error": "validation", "reasons": reasons}
        )

    @app.exception_handler(Exception)
    async def on_internal_error(request: Request, exc: Exception):
        error_id = uuid.uuid4().hex
        log.error("request failed [%s]: %s", error_id, exc, exc_info=exc)
        return JSONResponse(
            status_code=500, content={"error": "internal", "error_id": error_id}
        )

    @app.get("/health", response_model=HealthResponse)
    async def health():
        return HealthResponse(status="ok", model_version=model.model_version)

    @app.get("/recommend", response_model=RecommendResponse)
    async def recommend_endpoint(
        user: str = Query(min_length=1),
        k: int = Query(default=10, ge=1),
        collection: Optional[str] = Query(default=None),
        exclude_owned: bool = Query(default=False),
    ):
        result = recommend(user, k, collection, model, catalog, vocab, exclude_owned)
        return RecommendResponse(
            user=user,
            k=k,
            collection=collection,
            items=[
                RecommendationItem(asset_key=a, collection_slug=c, probability=p)
                for a, c, p in result.items
            ],
        )

    @app.post("/score", response_model=ScoreResponse)
    async def score(rows: list[ScoreRow]):
        ffm_rows = []
        for i, row in enumerate(rows):
            seen = set()
            for fid, feat, value in row.entries:
                if fid < 0 or feat < 0:
                    return JSONResponse(
                        status_code=400,
                        content={"error": "validation", "reasons": [
                            {"location": ["body", i], "message": "negative id"}
                        ]},
                    )
                if fid in seen:
                    return JSONResponse(
                        status_code=400,
                        content={"error": "validation", "reasons": [
                            {"location": ["body", i],
                             "message": f"duplicate field id {fid}"}
                        ]},
                    )
                seen.add(fid)
            entries = sorted(row.entries, key=lambda e: e[0])
            ffm_rows.append(FfmRow(label=0, entries=entries))
        try:
            probs = model.predict(ffm_rows)
        except ValueError as exc:
            return JSONResponse(
                status_code=400,
                content={"error": "validation", "reasons": [
                    {"location": ["body"], "message": str(exc)}
                ]},
            )
        return ScoreResponse(probabilities=[float(p) for p in probs])

    return app


def serve_http(model_path, catalog_path, vocab_path, host: str, port: int) -> None:
    """Blocking server entry point used by the CLI."""
    import uvicorn

    app = create_app(model_path, catalog_path, vocab_path)
    uvicorn.run(app, host=host, port=port, log_level="warning")
