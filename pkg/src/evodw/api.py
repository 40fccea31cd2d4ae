"""HTTP JSON API over one Engine (the programmatic face of the metadata
management tool). Every error body is ``{"error": {"code", "message"}}``
with a stable code; mutations funnel into the engine's single writer."""

from __future__ import annotations

import json

from fastapi import FastAPI, Request, Response
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from .engine import Engine
from .errors import EngineError

STATUS_BY_CODE = {
    "NOT_FOUND": 404,
    "UNKNOWN_SOURCE": 404,
    "UNKNOWN_DATASET": 404,
    "UNKNOWN_CUBE": 404,
    "VERSION_CONFLICT": 409,
    "DUPLICATE_SOURCE": 409,
    "DUPLICATE_FIELD": 409,
    "ILLEGAL_TRANSITION": 409,
    "ALREADY_RESOLVED": 409,
    "RULE_CONFLICT": 409,
    "MISSING_PARAMETER": 422,
    "INVALID_PARAMETER": 422,
    "APPLY_FAILED": 500,
}


def error_status(code: str) -> int:
    return STATUS_BY_CODE.get(code, 400)


def create_app(engine: Engine) -> FastAPI:
    app = FastAPI(title="evodw", docs_url=None, redoc_url=None)
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )

    @app.exception_handler(EngineError)
    async def engine_error(_request: Request, exc: EngineError):
        return JSONResponse(
            status_code=error_status(exc.code),
            content={"error": {"code": exc.code, "message": exc.message}},
        )

    async def read_json(request: Request) -> dict:
        body = await request.body()
        if not body:
            return {}
        try:
            doc = json.loads(body)
        except json.JSONDecodeError as exc:
            raise EngineError("MALFORMED_DOCUMENT", f"request body is not JSON: {exc.msg}") from exc
        if not isinstance(doc, dict):
            raise EngineError("MALFORMED_DOCUMENT", "request body must be a JSON object")
        return doc

    # -- sources --------------------------------------------------------------

    @app.post("/sources")
    async def register_source(request: Request):
        return engine.register_source(await read_json(request)).to_doc()

    @app.get("/sources")
    async def list_sources():
        return engine.list_sources()

    @app.post("/sources/{source_id}/batches")
    async def ingest(source_id: str, request: Request):
        return engine.ingest(source_id, await request.body())

    # -- highway ---------------------------------------------------------------

    @app.post("/elt/tick")
    async def tick():
        return engine.tick()

    @app.get("/levels/{level}/datasets")
    async def level_datasets(level: int):
        return engine.level_datasets(level)

    @app.get("/levels/{level}/datasets/{dataset_id}/records")
    async def dataset_records(level: int, dataset_id: str, table: str | None = None):
        return engine.dataset_records(level, dataset_id, table)

    # -- evolution ---------------------------------------------------------------

    @app.get("/changes")
    async def list_changes(status: str | None = None):
        return engine.list_changes(status)

    @app.post("/changes/{change_id}/propose")
    async def propose(change_id: str):
        return engine.propose(change_id)

    @app.get("/changes/{change_id}/options")
    async def options(change_id: str):
        return engine.options_for_change(change_id)

    @app.get("/options/{pc_id}/preview")
    async def preview(pc_id: str):
        return engine.preview(pc_id)

    @app.post("/changes/{change_id}/options/{pc_id}/apply")
    async def apply(change_id: str, pc_id: str, request: Request):
        doc = await read_json(request)
        pc = engine.store.get_potential_change(pc_id)
        expected = pc.change_id if pc.change_id is not None else "none"
        if change_id != expected:
            raise EngineError("NOT_FOUND", f"option {pc_id} does not belong to change {change_id}")
        return engine.apply(pc_id, doc.get("parameters") or {}, doc.get("actor", "developer"))

    @app.post("/options/{pc_id}/reject")
    async def reject(pc_id: str, request: Request):
        doc = await read_json(request)
        return engine.reject(pc_id, doc.get("actor", "developer"))

    @app.post("/options")
    async def create_manual(request: Request):
        doc = await read_json(request)
        if "option_kind" not in doc:
            raise EngineError("MISSING_PARAMETER", "option_kind is required")
        return engine.create_manual_option(
            doc["option_kind"], doc.get("parameters") or {}, doc.get("actor", "developer")
        )

    # -- cubes ---------------------------------------------------------------------

    @app.post("/cubes")
    async def create_cube(request: Request):
        return engine.create_cube(await read_json(request))

    @app.post("/cubes/{cube_id}/materialize")
    async def materialize(cube_id: str):
        return engine.materialize(cube_id)

    @app.post("/cubes/{cube_id}/query")
    async def query(cube_id: str, request: Request):
        return engine.query(cube_id, await read_json(request))

    @app.post("/cubes/{cube_id}/navigate")
    async def navigate(cube_id: str, request: Request):
        return engine.navigate(cube_id, await read_json(request))

    # -- metadata -----------------------------------------------------------------

    @app.get("/metadata/export")
    async def export():
        return Response(content=engine.export_bytes(), media_type="application/json")

    @app.post("/metadata/import")
    async def import_(request: Request):
        body = await request.body()
        try:
            doc = json.loads(body)
        except json.JSONDecodeError as exc:
            raise EngineError("MALFORMED_DOCUMENT", f"not JSON: {exc.msg}") from exc
        return {"loaded": engine.import_document(doc)}

    @app.get("/history")
    async def history():
        return engine.history()

    return app


def serve(engine: Engine) -> None:
    """Run the API with uvicorn; blocks until shutdown, then flushes."""
    import uvicorn

    app = create_app(engine)
    uvicorn.run(app, host="127.0.0.1", port=engine.config.http_port, log_level="warning")
