"""HTTP surface, one route per conversational operation.

The app is a thin adapter over an Orchestrator: sessions are created and
addressed by id, utterances go in, structured turn results come out.
"""

from __future__ import annotations

from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel, Field

from . import __version__
from .orchestrator import Orchestrator, TurnResult


class UtteranceIn(BaseModel):
    text: str = Field(min_length=1)


def turn_payload(result: TurnResult) -> dict:
    return {
        "response": result.response,
        "action": result.action,
        "route": result.route,
        "phase": result.phase_after,
        "current_step": result.current_step,
        "screen": result.screen,
        "latency_ms": result.latency_ms,
        "turn": result.turn,
        "fallback_reason": result.fallback_reason,
        "rejection": result.rejection,
        "question_type": result.question_type,
        "pending_replacement": result.pending_replacement,
    }


def create_app(orchestrator: Orchestrator) -> FastAPI:
    app = FastAPI(title="taskbot", version=__version__)
    # The browser UI is served from its own dev server during development.
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )
    app.state.orchestrator = orchestrator

    @app.get("/v1/health")
    def health() -> dict:
        return {"status": "ok"}

    @app.post("/v1/sessions", status_code=201)
    def create_session() -> dict:
        return {"session_id": orchestrator.create_session()}

    @app.get("/v1/sessions/{session_id}")
    def get_session(session_id: str) -> dict:
        try:
            return orchestrator.session_snapshot(session_id)
        except KeyError:
            raise HTTPException(status_code=404, detail="unknown or expired session")

    @app.post("/v1/sessions/{session_id}/utterances")
    def post_utterance(session_id: str, body: UtteranceIn) -> dict:
        try:
            result = orchestrator.handle_utterance(session_id, body.text)
        except KeyError:
            raise HTTPException(status_code=404, detail="unknown or expired session")
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return turn_payload(result)

    @app.get("/v1/metrics")
    def metrics() -> dict:
        return orchestrator.metrics()

    return app
