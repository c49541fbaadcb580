"""HTTP facade: retrieval, stats, crops, and judgments under /v1.

The app is a thin adapter: every behavior lives in the library modules and
is exercised here over JSON. Searches additionally cache their ranked
image-id lists per query fingerprint so the curve endpoint can join them
with journal verdicts later, which is the whole human evaluation loop:
search, judge, watch the curve.
"""

from __future__ import annotations

import hmac
import io
import mimetypes
import threading
import time
from collections import OrderedDict
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Optional

from fastapi import Depends, FastAPI, Header, HTTPException, Response
from pydantic import BaseModel, ConfigDict, Field

from .core import Query
from .errors import (
    CapabilityError,
    ConfigurationError,
    InputError,
    QueryError,
    TransportError,
)
from .evaluation import Judgment, JudgmentJournal, cumulative_tp_curve
from .index import Index
from .pipeline import load_image_rgb, regenerate_crop
from .preprocess import load_annotation_file
from .retrieval import MODE_FULL_IMAGE, MODE_OBJECT, TextEncoder, run_query

_MODE_ALIASES = {
    "object": MODE_OBJECT,
    "object_level": MODE_OBJECT,
    "full": MODE_FULL_IMAGE,
    "full_image": MODE_FULL_IMAGE,
}

_RANKING_CACHE_CAP = 1024


class SearchRequest(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    class_label: Optional[str] = Field(default=None, alias="class")
    text: str
    k: int = 10
    mode: str = MODE_OBJECT
    min_confidence: float = 0.0


class JudgmentRequest(BaseModel):
    query_id: str
    image_id: str
    verdict: str
    judge: str = ""


@dataclass
class _Metrics:
    searches_total: int = 0
    search_seconds_total: float = 0.0
    judgments_total: int = 0

    def __post_init__(self) -> None:
        self._lock = threading.Lock()

    def note_search(self, seconds: float) -> None:
        with self._lock:
            self.searches_total += 1
            self.search_seconds_total += seconds

    def note_judgment(self) -> None:
        with self._lock:
            self.judgments_total += 1


class _RankingCache:
    """Ranked image-id lists per query fingerprint, bounded FIFO."""

    def __init__(self, cap: int = _RANKING_CACHE_CAP):
        self._cap = cap
        self._entries: OrderedDict[str, list[str]] = OrderedDict()
        self._lock = threading.Lock()

    def put(self, query_id: str, ranked: list[str]) -> None:
        with self._lock:
            self._entries.pop(query_id, None)
            self._entries[query_id] = ranked
            while len(self._entries) > self._cap:
                self._entries.popitem(last=False)

    def get(self, query_id: str) -> Optional[list[str]]:
        with self._lock:
            ranked = self._entries.get(query_id)
            return list(ranked) if ranked is not None else None


def _error_body(message: str, **extra) -> dict:
    body = {"message": message}
    body.update(extra)
    return body


def create_app(
    index: Index,
    encoder: TextEncoder,
    journal: JudgmentJournal,
    *,
    annotations_dir: Optional[Path] = None,
    api_token: Optional[str] = None,
    static_dir: Optional[Path] = None,
) -> FastAPI:
    """Wire a live index, text encoder, and journal into the /v1 API."""
    app = FastAPI(title="objsearch", docs_url=None, redoc_url=None)
    metrics = _Metrics()
    rankings = _RankingCache()

    def require_token(authorization: str = Header(default="")) -> None:
        if api_token is None:
            return
        expected = f"Bearer {api_token}"
        if not hmac.compare_digest(authorization, expected):
            raise HTTPException(401, detail=_error_body("missing or invalid bearer token"))

    guarded = [Depends(require_token)]

    @lru_cache(maxsize=256)
    def crop_png(image_id: str, object_index: int) -> bytes:
        # Crops are derived data: recomputed from source image plus
        # annotation on demand, cached, never persisted.
        entry = index.image_record(image_id)
        if entry is None:
            raise HTTPException(404, detail=_error_body(f"unknown image id {image_id!r}"))
        if annotations_dir is None:
            raise HTTPException(
                404, detail=_error_body("no annotation directory configured; crops unavailable")
            )
        ann_path = Path(annotations_dir) / f"{image_id}.json"
        source = Path(entry.source_uri)
        if not ann_path.exists() or not source.exists() or source.suffix == ".json":
            raise HTTPException(
                404, detail=_error_body(f"no pixel source for image {image_id!r}")
            )
        _, ann = load_annotation_file(ann_path)
        try:
            buf = regenerate_crop(source, ann, object_index)
        except InputError as exc:
            raise HTTPException(404, detail=_error_body(str(exc)))
        from PIL import Image

        img = Image.frombytes("RGB", (buf.width, buf.height), buf.data)
        out = io.BytesIO()
        img.save(out, format="PNG")
        return out.getvalue()

    @app.get("/v1/classes", dependencies=guarded)
    def classes():
        stats = index.stats()
        return {
            "classes": [
                {"label": label, "object_count": count}
                for label, count in stats.classes.items()
            ],
            "image_count": stats.image_count,
            "object_count": stats.object_count,
            "dim": stats.dim,
            "encoder_id": stats.encoder_id,
        }

    @app.post("/v1/search", dependencies=guarded)
    def search(req: SearchRequest):
        mode = _MODE_ALIASES.get(req.mode)
        if mode is None:
            raise HTTPException(
                400,
                detail=_error_body(
                    f"unknown mode {req.mode!r}; expected one of {sorted(set(_MODE_ALIASES))}"
                ),
            )
        try:
            query = Query(class_label=req.class_label, text=req.text)
            started = time.perf_counter()
            outcome = run_query(
                index,
                encoder,
                query,
                req.k,
                mode=mode,
                min_confidence=req.min_confidence,
            )
            metrics.note_search(time.perf_counter() - started)
        except QueryError as exc:
            raise HTTPException(
                400, detail=_error_body(str(exc), valid_classes=exc.valid_classes)
            )
        except (InputError, CapabilityError, ConfigurationError) as exc:
            raise HTTPException(400, detail=_error_body(str(exc)))
        except TransportError as exc:
            raise HTTPException(
                503,
                detail=_error_body(
                    f"encoder unavailable: {exc}", attempts=exc.attempts
                ),
            )
        rankings.put(outcome.query_id, [r.image_id for r in outcome.results])
        rows = []
        for r in outcome.results:
            bbox = None
            if r.best_object_index is not None:
                info = index.object_info(r.image_id, r.best_object_index)
                if info is not None:
                    bbox = list(info[1])
            rows.append(
                {
                    "image_id": r.image_id,
                    "score": r.score,
                    "best_object_index": r.best_object_index,
                    "bbox": bbox,
                }
            )
        return {
            "results": rows,
            "exhausted": outcome.exhausted,
            "query_id": outcome.query_id,
        }

    @app.get("/v1/images/{image_id}", dependencies=guarded)
    def image_bytes(image_id: str):
        entry = index.image_record(image_id)
        if entry is None:
            raise HTTPException(404, detail=_error_body(f"unknown image id {image_id!r}"))
        source = Path(entry.source_uri)
        if not source.exists() or source.suffix == ".json":
            raise HTTPException(
                404, detail=_error_body(f"no pixel source for image {image_id!r}")
            )
        media_type = mimetypes.guess_type(source.name)[0] or "application/octet-stream"
        return Response(content=source.read_bytes(), media_type=media_type)

    @app.get("/v1/images/{image_id}/objects/{object_index}", dependencies=guarded)
    def object_crop(image_id: str, object_index: int):
        return Response(content=crop_png(image_id, object_index), media_type="image/png")

    @app.post("/v1/judgments", dependencies=guarded)
    def post_judgment(req: JudgmentRequest):
        try:
            judgment = Judgment(
                query_id=req.query_id,
                image_id=req.image_id,
                verdict=req.verdict,
                judge=req.judge,
            )
        except InputError as exc:
            raise HTTPException(400, detail=_error_body(str(exc)))
        journal.append(judgment)
        metrics.note_judgment()
        return {"status": "recorded", "query_id": judgment.query_id, "ts": judgment.ts}

    @app.get("/v1/curves", dependencies=guarded)
    def curves(query_id: str, n: int = 100):
        ranked = rankings.get(query_id)
        if ranked is None:
            raise HTTPException(
                404,
                detail=_error_body(
                    f"no cached ranking for query_id {query_id!r}; run the search first"
                ),
            )
        try:
            curve = cumulative_tp_curve(ranked, journal.verdicts_for(query_id), n)
        except InputError as exc:
            raise HTTPException(400, detail=_error_body(str(exc)))
        return {"query_id": query_id, "n": n, "curve": curve}

    @app.get("/v1/healthz")
    def healthz():
        stats = index.stats()
        return {
            "status": "ok",
            "index_version": f"{stats.image_count}i/{stats.object_count}o",
            "encoder_id": stats.encoder_id,
        }

    @app.get("/v1/metrics")
    def metrics_text():
        stats = index.stats()
        scan = index.scan_stats
        lines = [
            "# HELP objsearch_searches_total Number of /search requests served.",
            "# TYPE objsearch_searches_total counter",
            f"objsearch_searches_total {metrics.searches_total}",
            "# HELP objsearch_search_seconds_total Cumulative /search wall time.",
            "# TYPE objsearch_search_seconds_total counter",
            f"objsearch_search_seconds_total {metrics.search_seconds_total:.6f}",
            "# HELP objsearch_scan_rows_total Partition rows visited by all searches.",
            "# TYPE objsearch_scan_rows_total counter",
            f"objsearch_scan_rows_total {scan.rows_visited_total}",
            "# HELP objsearch_scan_rows_last Partition rows visited by the latest search.",
            "# TYPE objsearch_scan_rows_last gauge",
            f"objsearch_scan_rows_last {scan.last_rows_visited}",
            "# HELP objsearch_judgments_total Judgments appended via the API.",
            "# TYPE objsearch_judgments_total counter",
            f"objsearch_judgments_total {metrics.judgments_total}",
            "# HELP objsearch_index_images Images in the index.",
            "# TYPE objsearch_index_images gauge",
            f"objsearch_index_images {stats.image_count}",
            "# HELP objsearch_index_objects Objects in the index.",
            "# TYPE objsearch_index_objects gauge",
            f"objsearch_index_objects {stats.object_count}",
        ]
        return Response(content="\n".join(lines) + "\n", media_type="text/plain")

    if static_dir is not None and Path(static_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="ui")

    return app


@dataclass
class ServiceConfig:
    index_path: Path
    encoder_spec: str = "toy"
    host: str = "127.0.0.1"
    port: int = 8080
    journal_path: Optional[Path] = None
    annotations_dir: Optional[Path] = None
    api_token: Optional[str] = None
    static_dir: Optional[Path] = None


def build_app(config: ServiceConfig) -> FastAPI:
    from .encoder import encoder_from_spec

    index = Index.load(config.index_path)
    encoder = encoder_from_spec(config.encoder_spec, dim=index.dim)
    if not hasattr(encoder, "encode_text"):
        raise ConfigurationError(
            f"encoder {config.encoder_spec!r} cannot encode query text; "
            f"use toy or remote:URL for serving"
        )
    journal_path = config.journal_path or (Path(config.index_path) / "judgments.jsonl")
    journal = JudgmentJournal(journal_path)
    return create_app(
        index,
        encoder,
        journal,
        annotations_dir=config.annotations_dir,
        api_token=config.api_token,
        static_dir=config.static_dir,
    )


def serve(config: ServiceConfig) -> None:
    """Blocking entry point: load everything, then run the HTTP server."""
    import uvicorn

    app = build_app(config)
    uvicorn.run(app, host=config.host, port=config.port, log_level="info")
