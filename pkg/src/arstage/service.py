"""HTTP/WebSocket front end for a staging session.

Thin adapter: every WebSocket connection becomes a send-bytes callable on
the sans-io Session core, all message handling runs on the event loop
thread, and background tasks drive the monitoring tick and project
autosave.  The designer console's static bundle is served from ``/``.
"""

from __future__ import annotations

import asyncio
import contextlib
import logging
import time
from pathlib import Path
from typing import Optional, Union

from fastapi import FastAPI, WebSocket, WebSocketDisconnect
from fastapi.staticfiles import StaticFiles

from .config import ServerConfig
from .registry import Project
from .session import Session

log = logging.getLogger(__name__)


def _now_ms() -> float:
    return time.monotonic() * 1000.0


async def _tick_loop(session: Session, tick_hz: float) -> None:
    interval = 1.0 / tick_hz
    while True:
        await asyncio.sleep(interval)
        session.tick(_now_ms())


async def _autosave_loop(session: Session, path: Path, interval_s: float) -> None:
    last_saved = session.project.revision
    while True:
        await asyncio.sleep(interval_s)
        if session.project.revision != last_saved:
            try:
                session.project.save(path)
                last_saved = session.project.revision
                log.info("autosaved project at revision %d", last_saved)
            except OSError:
                log.exception("autosave to %s failed", path)


def create_app(
    session: Session,
    static_dir: Optional[Union[str, Path]] = None,
    project_path: Optional[Union[str, Path]] = None,
) -> FastAPI:
    config = session.config

    @contextlib.asynccontextmanager
    async def lifespan(app: FastAPI):
        tasks = [asyncio.create_task(_tick_loop(session, config.tick_hz))]
        if project_path is not None:
            tasks.append(
                asyncio.create_task(
                    _autosave_loop(session, Path(project_path), config.autosave_s)
                )
            )
        try:
            yield
        finally:
            for task in tasks:
                task.cancel()
            await asyncio.gather(*tasks, return_exceptions=True)

    app = FastAPI(title="arstage", lifespan=lifespan)

    @app.get("/healthz")
    def healthz() -> dict:
        return session.healthz()

    @app.websocket("/ws")
    async def websocket_endpoint(ws: WebSocket) -> None:
        await ws.accept()
        outbox: asyncio.Queue[bytes] = asyncio.Queue()
        conn_id = session.connect(outbox.put_nowait)

        async def writer() -> None:
            while True:
                data = await outbox.get()
                await ws.send_text(data.decode("utf-8"))

        writer_task = asyncio.create_task(writer())
        try:
            while True:
                text = await ws.receive_text()
                session.receive(conn_id, text.encode("utf-8"), _now_ms())
                if not session.connection_open(conn_id):
                    # flush anything queued (e.g. the rejection Error) first
                    while not outbox.empty():
                        await ws.send_text(outbox.get_nowait().decode("utf-8"))
                    await ws.close()
                    break
        except WebSocketDisconnect:
            pass
        finally:
            writer_task.cancel()
            with contextlib.suppress(asyncio.CancelledError):
                await writer_task
            session.disconnect(conn_id, _now_ms())

    if static_dir is not None and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="console")

    return app


def serve(
    config: ServerConfig,
    project: Project,
    project_path: Optional[Union[str, Path]] = None,
    static_dir: Optional[Union[str, Path]] = None,
) -> None:
    """Run the staging server until interrupted (blocking)."""
    import uvicorn

    session = Session(project, config)
    app = create_app(session, static_dir=static_dir, project_path=project_path)
    uvicorn.run(app, host=config.host, port=config.port, log_level="info")
