"""HTTP backend for the annotation UI.

Serves session definitions, item image bytes, judgment submission, and
agreement stats, using the same field names as the on-disk record files.
The single-page client (if built) is served from a static directory; all
annotation state lives server-side in the session store.
"""

from __future__ import annotations

from pathlib import Path

from fastapi import FastAPI, HTTPException, Query
from fastapi.responses import FileResponse, Response
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .corpus import CorpusManifest, ImageAsset
from .errors import AnnotationConflictError, IncompleteSessionError
from .human_eval import SessionStore, agreement_stats


class RecordBody(BaseModel):
    annotator: str
    item_index: int
    judgment: str


def create_app(
    manifest: CorpusManifest,
    root: Path,
    store: SessionStore,
    synthetic_assets: dict[str, ImageAsset] | None = None,
    static_dir: Path | None = None,
    show_concepts: bool = False,
) -> FastAPI:
    root = Path(root)
    synthetic_assets = synthetic_assets or {}
    app = FastAPI(title="annotation backend")

    def resolve_asset(asset_id: str) -> ImageAsset:
        asset = manifest.assets.get(asset_id) or synthetic_assets.get(asset_id)
        if asset is None:
            raise HTTPException(status_code=404, detail=f"unknown asset {asset_id}")
        return asset

    def load_session(session_id: str):
        try:
            return store.load_session(session_id)
        except FileNotFoundError:
            raise HTTPException(status_code=404, detail=f"unknown session {session_id}") from None

    @app.get("/session/{session_id}")
    def get_session(session_id: str, annotator: str = Query(default="")):
        session = load_session(session_id)
        answered: dict[int, str] = {}
        if annotator:
            for record in store.load_records(session_id):
                if record.annotator == annotator:
                    answered[record.item_index] = record.judgment
        items = []
        for index, item in enumerate(session.items):
            view = {
                "item_index": index,
                "image": item["image"],
                "feature_text": item["feature_text"],
                "answered": index in answered,
            }
            if index in answered:
                view["judgment"] = answered[index]
            if show_concepts and "concept" in item:
                view["concept"] = item["concept"]
            items.append(view)
        return {
            "id": session.id,
            "condition": session.condition,
            "annotators": session.annotators,
            "seed": session.seed,
            "n_items": len(session.items),
            "items": items,
        }

    @app.get("/item/{asset_id}/image")
    def get_image(asset_id: str):
        asset = resolve_asset(asset_id)
        path = root / asset.path
        if not path.is_file():
            raise HTTPException(status_code=404, detail=f"image file missing for {asset_id}")
        return Response(content=path.read_bytes(), media_type="application/octet-stream")

    @app.post("/session/{session_id}/record")
    def post_record(session_id: str, body: RecordBody):
        session = load_session(session_id)
        try:
            record = store.record(session, body.annotator, body.item_index, body.judgment)
        except AnnotationConflictError as exc:
            raise HTTPException(status_code=409, detail=str(exc)) from exc
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        return record.to_record()

    @app.get("/session/{session_id}/stats")
    def get_stats(session_id: str):
        session = load_session(session_id)
        records = store.load_records(session_id)
        try:
            stats = agreement_stats(session, records)
        except IncompleteSessionError as exc:
            return {
                "complete": False,
                "incomplete_items": exc.incomplete_items,
                "n_records": len(records),
            }
        except ValueError as exc:
            raise HTTPException(status_code=409, detail=str(exc)) from exc
        return {
            "complete": True,
            "positive_rate": stats.positive_rate,
            "fleiss_kappa": stats.fleiss_kappa,
            "n_items": stats.n_items,
            "n_annotators": stats.n_annotators,
            "unanimous": stats.unanimous,
        }

    if static_dir is not None and Path(static_dir).is_dir():
        index = Path(static_dir) / "index.html"

        @app.get("/")
        def root_page():
            if index.is_file():
                return FileResponse(index)
            raise HTTPException(status_code=404, detail="UI not built")

        app.mount("/ui", StaticFiles(directory=str(static_dir)), name="ui")

    return app
