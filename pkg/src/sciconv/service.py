"""HTTP facade over session runtimes.

Each session is one conversation: upload, commands, recovery chat, download.
Pipeline work runs on a small thread pool; while a session is busy its
mutating endpoints answer 409 so a client can only ever have one event in
flight per session.
"""

from __future__ import annotations

import tempfile
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from fastapi import FastAPI, Request, Response
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from . import driver as driver_mod
from .errors import IllegalTransition, SciconvError, TooLarge
from .workflow import PipelineEvent, SessionConfig, Step

IDLE_EXPIRY_S = 24 * 3600


class ApiError(Exception):
    """Error with a stable machine-readable code and an HTTP status."""

    def __init__(self, code: str, message: str, status: int) -> None:
        super().__init__(message)
        self.code = code
        self.status = status

    @classmethod
    def not_found(cls, what: str) -> "ApiError":
        return cls("NotFound", f"{what} not found", 404)

    @classmethod
    def conflict(cls, message: str) -> "ApiError":
        return cls("Conflict", message, 409)

    @classmethod
    def bad_input(cls, message: str) -> "ApiError":
        return cls("BadInput", message, 400)

    @classmethod
    def internal(cls, message: str) -> "ApiError":
        return cls("Internal", message, 500)


@dataclass
class SessionEntry:
    runtime: driver_mod.SessionRuntime
    lock: threading.Lock = field(default_factory=threading.Lock)
    busy: bool = False
    last_touched: float = field(default_factory=time.monotonic)

    def touch(self) -> None:
        self.last_touched = time.monotonic()


class SessionRegistry:
    """Holds live sessions and serializes work per session."""

    def __init__(self, config_template: SessionConfig, workers: int = 2) -> None:
        self._template = config_template
        self._sessions: dict[str, SessionEntry] = {}
        self._registry_lock = threading.Lock()
        self._pool = ThreadPoolExecutor(max_workers=workers)

    def create(self) -> SessionEntry:
        self._evict_idle()
        config = SessionConfig(
            workdir=self._template.workdir,
            engine=self._template.engine,
            assistant=self._template.assistant,
            transcript_path=self._template.transcript_path,
            network=self._template.network,
            embed_image=self._template.embed_image,
        )
        runtime = driver_mod.create_runtime(config)
        entry = SessionEntry(runtime=runtime)
        with self._registry_lock:
            self._sessions[runtime.state.session_id] = entry
        return entry

    def get(self, session_id: str) -> SessionEntry:
        with self._registry_lock:
            entry = self._sessions.get(session_id)
        if entry is None:
            raise ApiError.not_found(f"session {session_id}")
        entry.touch()
        return entry

    def _evict_idle(self) -> None:
        cutoff = time.monotonic() - IDLE_EXPIRY_S
        with self._registry_lock:
            stale = [k for k, e in self._sessions.items() if e.last_touched < cutoff]
            for key in stale:
                del self._sessions[key]

    def submit(self, entry: SessionEntry, work) -> None:
        """Run one unit of session work on the pool; 409 if one is in flight."""
        with entry.lock:
            if entry.busy:
                raise ApiError.conflict("the session is processing a previous event")
            entry.busy = True

        def _run() -> None:
            try:
                work()
            except Exception:  # noqa: BLE001 - the transcript already records failures
                pass
            finally:
                with entry.lock:
                    entry.busy = False
                entry.touch()

        self._pool.submit(_run)

    def shutdown(self) -> None:
        self._pool.shutdown(wait=True)


class MessageBody(BaseModel):
    text: str


def _state_payload(entry: SessionEntry) -> dict:
    state = entry.runtime.state
    return {
        "session_id": state.session_id,
        "step": state.current.value,
        "failed_step": state.failed_step.value if state.failed_step else None,
        "busy": entry.busy,
        "commands": list(state.commands),
        "turn_count": len(state.transcript),
        "package_ready": state.current is Step.COMPLETED
        and state.package_path is not None,
    }


def create_app(
    config: SessionConfig | None = None,
    registry: SessionRegistry | None = None,
) -> FastAPI:
    if config is None:
        config = SessionConfig(workdir=Path(tempfile.mkdtemp(prefix="sciconv-")))
    if registry is None:
        registry = SessionRegistry(config)

    app = FastAPI(title="sciconv", version="0.1.0")
    app.state.registry = registry
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )

    @app.exception_handler(ApiError)
    async def _api_error(_request: Request, exc: ApiError) -> JSONResponse:
        return JSONResponse(
            status_code=exc.status,
            content={"error": {"code": exc.code, "message": str(exc)}},
        )

    @app.post("/sessions", status_code=201)
    def create_session() -> dict:
        entry = registry.create()
        return _state_payload(entry)

    @app.get("/sessions/{session_id}/state")
    def get_state(session_id: str) -> dict:
        return _state_payload(registry.get(session_id))

    @app.get("/sessions/{session_id}/events")
    def get_events(session_id: str, since: int = 0) -> dict:
        entry = registry.get(session_id)
        turns = [
            t.to_wire() for t in entry.runtime.state.transcript if t.seq > since
        ]
        return {"turns": turns, "busy": entry.busy}

    @app.post("/sessions/{session_id}/upload", status_code=202)
    async def upload(session_id: str, request: Request) -> dict:
        entry = registry.get(session_id)
        if entry.runtime.state.current is not Step.PROJECT_LOCATION:
            raise ApiError.conflict("this session already received an archive")
        body = await request.body()
        if not body:
            raise ApiError.bad_input("the request body is empty")
        if len(body) > entry.runtime.state.config.max_upload_bytes:
            raise ApiError.bad_input("the archive exceeds the upload limit")

        def work() -> None:
            try:
                driver_mod.submit_upload(entry.runtime, body)
            except (TooLarge, IllegalTransition):
                pass

        registry.submit(entry, work)
        return {"accepted": True}

    @app.post("/sessions/{session_id}/message", status_code=202)
    def post_message(session_id: str, body: MessageBody) -> dict:
        entry = registry.get(session_id)
        text = body.text.strip()
        if not text:
            raise ApiError.bad_input("the message is empty")
        step = entry.runtime.state.current
        if step is Step.PARAMETERS_TO_USE:
            commands = [line.strip() for line in text.splitlines() if line.strip()]
            event = PipelineEvent.commands_provided(commands)
        elif step in (Step.WAIT_FOR_CHAT, Step.COMPLETED):
            event = PipelineEvent.user_message(text)
        else:
            raise ApiError.conflict(
                f"the pipeline is in {step} and does not take messages now"
            )

        def work() -> None:
            try:
                driver_mod.drive(entry.runtime, event)
            except IllegalTransition:
                pass

        registry.submit(entry, work)
        return {"accepted": True}

    @app.get("/sessions/{session_id}/artifact")
    def get_artifact(session_id: str) -> Response:
        entry = registry.get(session_id)
        state = entry.runtime.state
        if state.current is not Step.COMPLETED or state.package_path is None:
            raise ApiError.not_found("the package for this session")
        data = Path(state.package_path).read_bytes()
        return Response(
            content=data,
            media_type="application/zip",
            headers={
                "Content-Disposition": (
                    f'attachment; filename="reproducibility-{state.session_id}.zip"'
                )
            },
        )

    @app.exception_handler(SciconvError)
    async def _domain_error(_request: Request, exc: SciconvError) -> JSONResponse:
        return JSONResponse(
            status_code=500,
            content={"error": {"code": "Internal", "message": exc.as_chat_text()}},
        )

    return app


def serve(
    host: str = "127.0.0.1",
    port: int = 8000,
    config: Optional[SessionConfig] = None,
) -> None:
    import uvicorn

    uvicorn.run(create_app(config), host=host, port=port)
