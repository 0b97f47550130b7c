"""HTTP wire protocol over a DecisionService.

The two machine-facing calls follow the classic query-string shape

    GET /:exp_id/getaction.json?key=K&context={...}
    GET /:exp_id/setreward.json?key=K&context={...}&action={...}&reward={...}

with POST + JSON body accepted as an equivalent spelling (query values
win when both are present). Every error body is ``{"error": code,
"message": text}``; an unknown experiment id and a wrong key share one
401 response so the wire never reveals which ids exist.
"""

from __future__ import annotations

import json
from typing import Optional

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from starlette.concurrency import run_in_threadpool
from starlette.exceptions import HTTPException as StarletteHTTPException
from starlette.middleware.cors import CORSMiddleware

from .errors import (
    AdminAuthFailure,
    AuthFailure,
    BanditError,
    ConfigInvalid,
    CycleDetected,
    ExperimentNested,
    SchemaViolation,
    UnknownExperiment,
)
from .service import DecisionService

MAX_URL_BYTES = 16384


class ApiJSONResponse(JSONResponse):
    media_type = "application/json; charset=utf-8"


class ApiFail(Exception):
    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message


def _error(status: int, code: str, message: str) -> ApiJSONResponse:
    return ApiJSONResponse({"error": code, "message": message}, status_code=status)


class UrlLengthLimit:
    """Raw ASGI guard: oversized request targets never reach the router."""

    def __init__(self, app, limit: int = MAX_URL_BYTES):
        self.app = app
        self.limit = limit

    async def __call__(self, scope, receive, send):
        if scope["type"] == "http":
            size = len(scope.get("path", "")) + len(scope.get("query_string", b""))
            if size > self.limit:
                response = _error(414, "url_too_long",
                                  f"request target exceeds {self.limit} bytes; "
                                  "use POST with a JSON body")
                await response(scope, receive, send)
                return
        await self.app(scope, receive, send)


def _parse_exp_id(raw: str) -> int:
    try:
        return int(raw)
    except ValueError:
        # same refusal as a wrong key: the wire must not reveal id structure
        raise AuthFailure("experiment id and key do not match")


async def _read_body(request: Request) -> Optional[dict]:
    if request.method != "POST":
        return None
    raw = await request.body()
    if not raw:
        return None
    try:
        body = json.loads(raw)
    except ValueError:
        raise ApiFail(400, "malformed_body", "request body is not valid JSON")
    if not isinstance(body, dict):
        raise ApiFail(400, "malformed_body", "request body must be a JSON object")
    return body


def _string_param(name: str, query_value, body: Optional[dict]):
    if query_value is not None:
        return query_value
    if body is not None:
        return body.get(name)
    return None


def _document_param(name: str, query_value, body: Optional[dict]) -> dict:
    value = _string_param(name, query_value, body)
    if value is None:
        raise ApiFail(400, f"malformed_{name}", f"missing {name} parameter")
    if isinstance(value, str):
        try:
            value = json.loads(value)
        except ValueError:
            raise ApiFail(400, f"malformed_{name}",
                          f"{name} parameter is not valid JSON")
    if not isinstance(value, dict):
        raise ApiFail(400, f"malformed_{name}", f"{name} must be a JSON object")
    return value


def _int_param(name: str, raw, default: int) -> int:
    if raw is None:
        return default
    try:
        return int(raw)
    except (TypeError, ValueError):
        raise ApiFail(400, f"malformed_{name}", f"{name} must be an integer")


def create_app(service: DecisionService) -> FastAPI:
    app = FastAPI(title="banditserve", docs_url=None, redoc_url=None, openapi_url=None,
                  default_response_class=ApiJSONResponse)
    app.state.service = service

    # ------------------------------------------------------------------
    # error rendering

    @app.exception_handler(ApiFail)
    async def _on_api_fail(request, exc: ApiFail):
        return _error(exc.status, exc.code, exc.message)

    @app.exception_handler(BanditError)
    async def _on_bandit_error(request, exc: BanditError):
        if isinstance(exc, AuthFailure):
            return _error(401, "invalid_experiment_or_key", str(exc))
        if isinstance(exc, AdminAuthFailure):
            return _error(401, "admin_token", str(exc))
        if isinstance(exc, UnknownExperiment):
            return _error(404, "unknown_experiment", str(exc))
        if isinstance(exc, ExperimentNested):
            return _error(409, "experiment_nested", str(exc))
        if isinstance(exc, CycleDetected):
            return _error(400, "config_cycle", str(exc))
        if isinstance(exc, ConfigInvalid):
            return _error(400, "invalid_config", str(exc))
        if isinstance(exc, SchemaViolation):
            return _error(422, f"{exc.part}_schema", str(exc))
        return _error(500, "internal", str(exc))

    @app.exception_handler(StarletteHTTPException)
    async def _on_http_exception(request, exc: StarletteHTTPException):
        code = {404: "not_found", 405: "method_not_allowed"}.get(
            exc.status_code, "http_error")
        return _error(exc.status_code, code, str(exc.detail))

    # ------------------------------------------------------------------
    # machine-facing calls

    @app.get("/{exp_id}/getaction.json")
    @app.post("/{exp_id}/getaction.json")
    async def getaction(exp_id: str, request: Request,
                        key: Optional[str] = None, context: Optional[str] = None):
        body = await _read_body(request)
        eid = _parse_exp_id(exp_id)
        ctx = _document_param("context", context, body)
        action = service.get_action(eid, _string_param("key", key, body), ctx)
        return {"action": action}

    @app.get("/{exp_id}/setreward.json")
    @app.post("/{exp_id}/setreward.json")
    async def setreward(exp_id: str, request: Request, key: Optional[str] = None,
                        context: Optional[str] = None, action: Optional[str] = None,
                        reward: Optional[str] = None):
        body = await _read_body(request)
        eid = _parse_exp_id(exp_id)
        ctx = _document_param("context", context, body)
        act = _document_param("action", action, body)
        rew = _document_param("reward", reward, body)
        # summaries fold in worker threads so concurrent writers genuinely
        # contend on the store's atomic-update path
        await run_in_threadpool(service.set_reward, eid,
                                _string_param("key", key, body), ctx, act, rew)
        return {"status": "ok"}

    # ------------------------------------------------------------------
    # experiment-key inspection

    @app.get("/{exp_id}/theta.json")
    async def theta(exp_id: str, key: Optional[str] = None,
                    name: Optional[str] = None, key_field: Optional[str] = None,
                    value: Optional[str] = None):
        eid = _parse_exp_id(exp_id)
        records = service.theta_records(eid, key, name=name,
                                        key_field=key_field, value=value)
        return {"theta": records}

    @app.get("/{exp_id}/log.json")
    async def log(exp_id: str, key: Optional[str] = None,
                  limit: Optional[str] = None, offset: Optional[str] = None):
        eid = _parse_exp_id(exp_id)
        records = service.log_page(eid, key,
                                   limit=_int_param("limit", limit, 100),
                                   offset=_int_param("offset", offset, 0))
        return {"logs": records}

    # ------------------------------------------------------------------
    # management (admin token)

    @app.post("/management/exp")
    async def management_create(request: Request):
        service.check_admin(request.headers.get("X-Admin-Token"))
        body = await _read_body(request)
        if body is None:
            raise ApiFail(400, "malformed_body", "missing JSON body")
        exp = service.create_experiment(body.get("name"), body.get("config"),
                                        key=body.get("key"))
        return {"id": exp.id, "key": exp.key}

    @app.get("/management/exp")
    async def management_list(request: Request):
        service.check_admin(request.headers.get("X-Admin-Token"))
        return {"experiments": [e.to_doc() for e in service.list_experiments()]}

    @app.delete("/management/exp/{exp_id}")
    async def management_delete(exp_id: str, request: Request):
        service.check_admin(request.headers.get("X-Admin-Token"))
        try:
            eid = int(exp_id)
        except ValueError:
            raise UnknownExperiment(f"no experiment with id {exp_id!r}")
        service.delete_experiment(eid)
        return {"status": "ok"}

    app.add_middleware(CORSMiddleware, allow_origins=["*"], allow_methods=["*"],
                       allow_headers=["*"])
    app.add_middleware(UrlLengthLimit)
    return app
