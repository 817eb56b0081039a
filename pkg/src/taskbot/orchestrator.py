"""Turn orchestration: one user utterance in, one system response out.

Every turn runs the same pipeline: decode the utterance into an action
code, validate it against the action space, gate it against any pending
replacement proposal, then dispatch. Each stage is deadline-bound and the
whole turn observes a global budget, so a slow or dead backend degrades
into a default response instead of a hang.
"""

from __future__ import annotations

import json
import logging
import threading
import time
import uuid
from collections import Counter, deque
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

from . import adaptation, gateway, qa
from .action_dsl import (
    DEFAULT_ACTION_SPACE,
    ActionSpace,
    ParseError,
    parse_action,
    render_action,
    validate_action,
)
from .gateway import (
    DEFAULT_GUARD_RULES,
    Backend,
    BackendError,
    GenerateRequest,
    GenerationTimeout,
    GuardRule,
    TemplateLibrary,
    guard_response,
)
from .qa import classify_question
from .taskgraph import NotStartedError, RangeError, Task, navigate, search_tasks

logger = logging.getLogger(__name__)

PHASES = ("exploration", "execution")
ROUTES = ("in_space", "fallback", "timeout_default")
FALLBACK_REASONS = ("parse_error", "out_of_space", "arity_or_type_mismatch", "action")
REJECTION_CATEGORIES = (
    "new_search",
    "another_replacement_request",
    "exit",
    "ignored_replacement",
    "system_parsing_error",
)

BACKEND_ROLES = ("ndp", "fallback", "qa", "adaptation")

#: Idle sessions are evicted after this long.
IDLE_TIMEOUT_S = 30 * 60

#: Turns of history rendered into prompts.
HISTORY_WINDOW = 4

SEARCH_K = 3

#: Rotating per-stage default responses; consecutive substitutions within a
#: session never repeat because each session keeps its own rotation index.
DEFAULT_RESPONSES: Mapping[str, tuple[str, ...]] = {
    "ndp": (
        "Sorry, I didn't catch that. Could you say it another way?",
        "I'm having trouble understanding right now. Could you rephrase?",
        "Hmm, that went over my head. Want to try different words?",
    ),
    "fallback": (
        "I can search for recipes or DIY projects, walk you through the steps, and answer questions about them.",
        "I'm best at cooking and DIY tasks. Ask me to search for something, or ask about the current task.",
        "Not sure about that one. We could search for a recipe, or keep going with the task.",
    ),
    "qa": (
        "Sorry, I couldn't find that answer fast enough. Mind asking again?",
        "I don't have a quick answer to that one. Could you rephrase the question?",
        "That's taking me too long to look up. Want to try asking differently?",
    ),
    "replace": (
        "I couldn't work out a good replacement just now. Want to try asking again?",
        "No luck finding a substitution this time. Maybe ask once more?",
        "Sorry, no substitution is coming to mind right now. Try me again in a moment.",
    ),
}

_PENDING_REPROMPT = (
    "Sorry, I didn't follow that. Should I go ahead with the replacement? "
    "Please say yes or no."
)


@dataclass
class Budgets:
    """Per-stage and whole-turn deadlines, milliseconds."""

    ndp_ms: float = 200.0
    llm_ms: float = 2000.0
    global_ms: float = 4500.0

    def __post_init__(self):
        if min(self.ndp_ms, self.llm_ms, self.global_ms) <= 0:
            raise ValueError("budgets must be positive")


@dataclass
class PendingReplacement:
    proposal: adaptation.StructuredProposal
    request_text: str


@dataclass(frozen=True)
class TurnResult:
    session_id: str
    turn: int
    response: str
    action: str | None
    action_name: str | None
    route: str
    phase: str
    phase_after: str
    current_step: int | None
    screen: dict
    latency_ms: float
    fallback_reason: str | None = None
    rejection: str | None = None
    question_type: str | None = None
    guard_blocked: bool = False
    pending_replacement: list[dict] | None = None


class Session:
    """Per-conversation state; all mutation happens under ``lock``."""

    def __init__(self, session_id: str, now: float):
        self.session_id = session_id
        self.created = now
        self.last_active = now
        self.lock = threading.Lock()
        self.phase = "exploration"
        self.current_task: Task | None = None
        self.current_step: int | None = None
        self.search_results: list[Task] = []
        self.pending: PendingReplacement | None = None
        self.history: deque[tuple[str, str]] = deque(maxlen=20)
        self.turn = 0
        self.default_idx: dict[str, int] = {}
        self.action_counts: Counter = Counter()
        self.fallback_reasons: Counter = Counter()
        self.rejections: Counter = Counter()
        self.question_types: Counter = Counter()

    def check_invariants(self) -> None:
        """State sanity; violated means an orchestrator bug, so assert hard."""
        assert self.phase in PHASES, self.phase
        assert (self.phase == "execution") == (self.current_task is not None)
        if self.current_step is not None:
            assert self.current_task is not None
            assert 1 <= self.current_step <= self.current_task.n_steps
        if self.pending is not None:
            assert self.current_task is not None


class TurnLogger:
    """Append-only JSONL log of user and system turns."""

    FIELDS = ("session_id", "speaker", "text", "action", "route", "latency_ms", "phase", "ts")

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path else None
        self.records: list[dict] = []
        self._lock = threading.Lock()
        self._fh = open(self.path, "a", encoding="utf-8") if self.path else None

    def log(self, **fields) -> None:
        record = {key: fields.get(key) for key in self.FIELDS}
        with self._lock:
            self.records.append(record)
            if self._fh:
                self._fh.write(json.dumps(record, ensure_ascii=False) + "\n")
                self._fh.flush()

    def close(self) -> None:
        with self._lock:
            if self._fh:
                self._fh.close()
                self._fh = None


def action_distribution(records: Iterable[Mapping]) -> dict[str, dict[str, float]]:
    """Per-phase action-name fractions from turn log records.

    Works on the in-memory record list or lines read back from the JSONL
    log. System turns with a decoded action count under the action's name;
    fallback turns without one (unparseable output) count as
    "unparseable"; timeout defaults never decoded anything and are skipped.
    Fractions sum to 1 per phase.
    """
    counts: Counter = Counter()
    for rec in records:
        if rec.get("speaker") != "system":
            continue
        action = rec.get("action")
        if action:
            name = action.split("(", 1)[0]
        elif rec.get("route") == "fallback":
            name = "unparseable"
        else:
            continue
        counts[(rec.get("phase"), name)] += 1
    out: dict[str, dict[str, float]] = {}
    for phase in PHASES:
        phase_counts = {name: n for (ph, name), n in counts.items() if ph == phase}
        total = sum(phase_counts.values())
        out[phase] = (
            {name: n / total for name, n in sorted(phase_counts.items())} if total else {}
        )
    return out


class Orchestrator:
    """Owns sessions, backends, budgets, and the turn pipeline."""

    def __init__(
        self,
        catalog: Sequence[Task],
        backends: Mapping[str, Backend],
        budgets: Budgets | None = None,
        action_space: ActionSpace = DEFAULT_ACTION_SPACE,
        templates: TemplateLibrary | None = None,
        log_path: str | Path | None = None,
        clock: Callable[[], float] = time.monotonic,
        idle_timeout_s: float = IDLE_TIMEOUT_S,
        search_k: int = SEARCH_K,
        context_budget_tokens: int = 1000,
        guard_rules: Sequence[GuardRule] = DEFAULT_GUARD_RULES,
    ):
        missing = [role for role in BACKEND_ROLES if role not in backends]
        if missing:
            raise ValueError(f"missing backend roles: {missing}")
        self.catalog = list(catalog)
        self.backends = dict(backends)
        self.budgets = budgets or Budgets()
        self.space = action_space
        self.templates = templates or gateway.default_templates()
        self.log = TurnLogger(log_path)
        self.clock = clock
        self.idle_timeout_s = idle_timeout_s
        self.search_k = search_k
        self.context_budget_tokens = context_budget_tokens
        self.guard_rules = tuple(guard_rules)
        self._lock = threading.Lock()
        self._sessions: dict[str, Session] = {}
        self._created = 0
        self._evicted = 0
        self._action_counts: Counter = Counter()
        self._fallback_reasons: Counter = Counter()
        self._rejections: Counter = Counter()
        self._question_types: Counter = Counter()
        self._evicted_action_counts: Counter = Counter()
        self._latencies: list[tuple[str, str, float]] = []
        self._handlers: dict[str, Callable] = {
            "search": self._do_search,
            "select": self._do_select,
            "step_select": self._do_step_select,
            "next": self._do_next,
            "previous": self._do_previous,
            "repeat": self._do_repeat,
            "answer_question": self._do_answer_question,
            "replace": self._do_replace,
            "confirm": self._do_confirm,
            "stop": self._do_stop,
        }
        unhandled = set(self.space.names()) - set(self._handlers) - {"chit_chat", "fallback"}
        if unhandled:
            raise ValueError(f"actions without handlers: {sorted(unhandled)}")

    # -- session lifecycle --------------------------------------------------

    def create_session(self) -> str:
        self.evict_idle()
        session_id = uuid.uuid4().hex
        with self._lock:
            self._sessions[session_id] = Session(session_id, self.clock())
            self._created += 1
        return session_id

    def _get(self, session_id: str) -> Session:
        with self._lock:
            if session_id not in self._sessions:
                raise KeyError(f"unknown or expired session: {session_id}")
            session = self._sessions[session_id]
            session.last_active = self.clock()
            return session

    def evict_idle(self, now: float | None = None) -> list[str]:
        now = self.clock() if now is None else now
        with self._lock:
            stale = [
                sid
                for sid, sess in self._sessions.items()
                if now - sess.last_active >= self.idle_timeout_s
            ]
            for sid in stale:
                sess = self._sessions.pop(sid)
                self._evicted += 1
                self._evicted_action_counts.update(sess.action_counts)
        return stale

    def session_snapshot(self, session_id: str) -> dict:
        session = self._get(session_id)
        with session.lock:
            task = session.current_task
            return {
                "session_id": session.session_id,
                "phase": session.phase,
                "task": {"id": task.id, "title": task.title} if task else None,
                "current_step": session.current_step,
                "step_text": (
                    task.step_text(session.current_step)
                    if task and session.current_step
                    else None
                ),
                "n_steps": task.n_steps if task else None,
                "pending_replacement": (
                    [
                        {"original": p.original, "replacement": p.replacement}
                        for p in session.pending.proposal.pairs
                    ]
                    if session.pending
                    else None
                ),
                "search_results": [
                    {"rank": i + 1, "id": t.id, "title": t.title}
                    for i, t in enumerate(session.search_results)
                ],
                "turns": session.turn,
                "history": list(session.history)[-HISTORY_WINDOW:],
                "screen": self._screen(session),
            }

    # -- turn pipeline -------------------------------------------------------

    def handle_utterance(self, session_id: str, text: str) -> TurnResult:
        if not text or not text.strip():
            raise ValueError("utterance must be non-empty")
        self.evict_idle()
        session = self._get(session_id)
        with session.lock:
            return self._turn(session, text.strip())

    def _turn(self, session: Session, text: str) -> TurnResult:
        t0 = time.perf_counter()
        deadline = t0 + self.budgets.global_ms / 1000.0
        phase_before = session.phase
        session.turn += 1
        turn_no = session.turn
        self.log.log(
            session_id=session.session_id,
            speaker="user",
            text=text,
            action=None,
            route=None,
            latency_ms=None,
            phase=phase_before,
            ts=time.time(),
        )
        history_before = list(session.history)[-HISTORY_WINDOW:]
        session.history.append(("user", text))

        def remaining_ms() -> float:
            return (deadline - time.perf_counter()) * 1000.0

        outcome = self._decode_and_dispatch(session, text, history_before, remaining_ms)
        latency_ms = (time.perf_counter() - t0) * 1000.0

        session.history.append(("system", outcome["response"]))
        action_name = outcome.get("action_name")
        dist_name = action_name if action_name else (
            "unparseable" if outcome.get("fallback_reason") == "parse_error" else None
        )
        if dist_name:
            session.action_counts[(phase_before, dist_name)] += 1
        reason = outcome.get("fallback_reason")
        rejection = outcome.get("rejection")
        qtype = outcome.get("question_type")
        with self._lock:
            if dist_name:
                self._action_counts[(phase_before, dist_name)] += 1
            if reason:
                self._fallback_reasons[reason] += 1
                session.fallback_reasons[reason] += 1
            if rejection:
                self._rejections[rejection] += 1
                session.rejections[rejection] += 1
            if qtype:
                self._question_types[qtype] += 1
                session.question_types[qtype] += 1
            self._latencies.append((action_name or "none", outcome["route"], latency_ms))
        self.log.log(
            session_id=session.session_id,
            speaker="system",
            text=outcome["response"],
            action=outcome.get("action"),
            route=outcome["route"],
            latency_ms=round(latency_ms, 3),
            phase=phase_before,
            ts=time.time(),
        )
        session.check_invariants()
        return TurnResult(
            session_id=session.session_id,
            turn=turn_no,
            response=outcome["response"],
            action=outcome.get("action"),
            action_name=action_name,
            route=outcome["route"],
            phase=phase_before,
            phase_after=session.phase,
            current_step=session.current_step,
            screen=self._screen(session),
            latency_ms=latency_ms,
            fallback_reason=reason,
            rejection=rejection,
            question_type=qtype,
            guard_blocked=outcome.get("guard_blocked", False),
            pending_replacement=(
                [
                    {"original": p.original, "replacement": p.replacement}
                    for p in session.pending.proposal.pairs
                ]
                if session.pending
                else None
            ),
        )

    def _decode_and_dispatch(
        self,
        session: Session,
        text: str,
        history: list[tuple[str, str]],
        remaining_ms: Callable[[], float],
    ) -> dict:
        raw = self._run_ndp(session, text, history, remaining_ms)
        if raw is None:
            return {
                "response": self._default(session, "ndp"),
                "action": None,
                "action_name": None,
                "route": "timeout_default",
            }
        try:
            action = parse_action(raw)
        except ParseError as exc:
            logger.info("unparseable action %r: %s", raw, exc)
            out = self._fallback_flow(session, text, "parse_error", remaining_ms)
            if session.pending is not None:
                # A decoding failure must not silently discard the proposal.
                out["rejection"] = "system_parsing_error"
                out["response"] = _PENDING_REPROMPT
            return out
        verdict = validate_action(action, self.space)
        canonical = render_action(action)
        if not verdict.in_space:
            out = self._fallback_flow(session, text, verdict.kind, remaining_ms)
            out["action"] = canonical
            out["action_name"] = action.name
            if session.pending is not None:
                out["rejection"] = "system_parsing_error"
                out["response"] = _PENDING_REPROMPT
            return out

        rejection: str | None = None
        prefix = ""
        if session.pending is not None and action.name != "confirm":
            if action.name == "search":
                rejection = "new_search"
            elif action.name == "replace":
                rejection = "another_replacement_request"
            elif action.name == "stop":
                rejection = "exit"
            else:
                rejection = "ignored_replacement"
            session.pending = None
            if rejection in ("new_search", "ignored_replacement", "another_replacement_request"):
                prefix = "Okay, I'll leave the ingredients as they are. "

        if action.name in ("chit_chat", "fallback"):
            out = self._fallback_flow(session, text, "action", remaining_ms)
            out["action"] = canonical
            out["action_name"] = action.name
            if rejection:
                out["rejection"] = rejection
                out["response"] = prefix + out["response"]
            return out

        handler = self._handlers[action.name]
        try:
            out = handler(session, action, text, history, remaining_ms)
        except AssertionError:
            raise
        except Exception:
            logger.exception("handler for %s failed", action.name)
            out = {
                "response": "Sorry, something went wrong on my end with that one. "
                "Let's try again.",
            }
        out.setdefault("route", "in_space")
        out["action"] = canonical
        out["action_name"] = action.name
        if rejection:
            out["rejection"] = rejection
            out["response"] = prefix + out["response"]
        return out

    def _run_ndp(
        self,
        session: Session,
        text: str,
        history: list[tuple[str, str]],
        remaining_ms: Callable[[], float],
    ) -> str | None:
        deadline = min(self.budgets.ndp_ms, remaining_ms())
        if deadline <= 0:
            return None
        variables = {
            "phase": session.phase,
            "current_step": str(session.current_step) if session.current_step else "-",
            "history": _render_history(history),
            "utterance": text,
        }
        try:
            response = gateway.generate(
                self.backends["ndp"],
                GenerateRequest("ndp", variables, deadline_ms=deadline, max_output_chars=200),
                self.templates,
            )
        except BackendError as exc:
            logger.warning("ndp backend failed: %s", exc)
            return None
        if response.timed_out:
            return None
        return response.text

    def _llm_text(
        self,
        session: Session,
        role: str,
        template_id: str,
        variables: Mapping[str, str],
        remaining_ms: Callable[[], float],
        stage: str,
        max_output_chars: int = 2000,
    ) -> tuple[str, bool]:
        """(text, substituted): substituted means a rotating default was used."""
        deadline = min(self.budgets.llm_ms, remaining_ms())
        if deadline <= 0:
            return self._default(session, stage), True
        try:
            response = gateway.generate(
                self.backends[role],
                GenerateRequest(template_id, variables, deadline_ms=deadline, max_output_chars=max_output_chars),
                self.templates,
            )
        except BackendError as exc:
            logger.warning("%s backend failed: %s", role, exc)
            return self._default(session, stage), True
        if response.timed_out:
            return self._default(session, stage), True
        return response.text, False

    def _fallback_flow(
        self, session: Session, text: str, reason: str, remaining_ms: Callable[[], float]
    ) -> dict:
        assert reason in FALLBACK_REASONS, reason
        variables = {
            "last_system_response": _last_system_text(session),
            "user_utterance": text,
        }
        raw, substituted = self._llm_text(
            session, "fallback", "fallback", variables, remaining_ms, "fallback"
        )
        if substituted:
            return {
                "response": raw,
                "route": "fallback",
                "fallback_reason": reason,
                "action": None,
                "action_name": None,
            }
        guarded = guard_response(raw, self.guard_rules)
        return {
            "response": guarded.text,
            "route": "fallback",
            "fallback_reason": reason,
            "guard_blocked": guarded.blocked,
            "action": None,
            "action_name": None,
        }

    def _default(self, session: Session, stage: str) -> str:
        options = DEFAULT_RESPONSES[stage]
        idx = session.default_idx.get(stage, 0)
        session.default_idx[stage] = idx + 1
        return options[idx % len(options)]

    def _screen(self, session: Session) -> dict:
        if session.current_task is not None and session.current_step is not None:
            task = session.current_task
            return {
                "kind": "step",
                "task_id": task.id,
                "task_title": task.title,
                "task_description": task.description,
                "step_index": session.current_step,
                "n_steps": task.n_steps,
                "step_text": task.step_text(session.current_step),
                "requirements": [req.display() for req in task.requirements],
            }
        if session.search_results:
            return {
                "kind": "search_results",
                "items": [
                    {
                        "rank": i + 1,
                        "id": t.id,
                        "title": t.title,
                        "description": t.description,
                    }
                    for i, t in enumerate(session.search_results)
                ],
            }
        return {"kind": "none"}

    # -- action handlers ------------------------------------------------------

    def _do_search(self, session, action, text, history, remaining_ms) -> dict:
        query = action.args[0]
        results = search_tasks(query, self.catalog, k=self.search_k) if self.catalog else []
        session.search_results = [task for task, _ in results]
        if not session.search_results:
            return {"response": "I couldn't find anything for that. Want to try different words?"}
        listing = " ".join(
            f"{i + 1}) {task.title}." for i, task in enumerate(session.search_results)
        )
        count = len(session.search_results)
        if count == 3:
            lead = "How about these three matches"
        elif count == 1:
            lead = "I found one match"
        else:
            lead = f"I found {count} matches"
        return {
            "response": f"{lead}: {listing} Say select 1 to {count} to pick one."
            if count > 1
            else f"{lead}: {listing} Say select 1 to start it.",
        }

    def _do_select(self, session, action, text, history, remaining_ms) -> dict:
        n = action.args[0]
        if not session.search_results:
            return {"response": "There's nothing to select yet. Try searching for something first."}
        if not 1 <= n <= len(session.search_results):
            return {
                "response": f"I only have {len(session.search_results)} results. "
                f"Pick a number from 1 to {len(session.search_results)}."
            }
        task = session.search_results[n - 1]
        session.current_task = task
        session.phase = "execution"
        session.current_step = 1
        session.pending = None
        return {
            "response": f"Let's do {task.title}! Step 1 of {task.n_steps}: {task.step_text(1)}"
        }

    def _nav_response(self, session, step: int, at_boundary: bool, command: str) -> str:
        task = session.current_task
        assert task is not None
        body = f"Step {step} of {task.n_steps}: {task.step_text(step)}"
        if at_boundary and command == "next":
            return f"That was the last step. {body}"
        if at_boundary and command == "previous":
            return f"We're at the first step. {body}"
        return body

    def _do_step_select(self, session, action, text, history, remaining_ms) -> dict:
        if session.current_task is None:
            return {"response": "We haven't started a task yet. Search for something first."}
        target = action.args[0]
        try:
            step, flag = navigate(
                session.current_step, "goto", session.current_task.n_steps, target=target
            )
        except RangeError:
            return {
                "response": f"That step doesn't exist. This task has steps 1 to "
                f"{session.current_task.n_steps}."
            }
        session.current_step = step
        return {"response": self._nav_response(session, step, flag, "goto")}

    def _do_nav(self, session, command: str) -> dict:
        if session.current_task is None:
            return {"response": "We haven't started a task yet. Search for something first."}
        try:
            step, flag = navigate(session.current_step, command, session.current_task.n_steps)
        except NotStartedError:
            return {"response": "We haven't opened a step yet. Say select to start the task."}
        session.current_step = step
        return {"response": self._nav_response(session, step, flag, command)}

    def _do_next(self, session, action, text, history, remaining_ms) -> dict:
        return self._do_nav(session, "next")

    def _do_previous(self, session, action, text, history, remaining_ms) -> dict:
        return self._do_nav(session, "previous")

    def _do_repeat(self, session, action, text, history, remaining_ms) -> dict:
        return self._do_nav(session, "repeat")

    def _do_answer_question(self, session, action, text, history, remaining_ms) -> dict:
        qtype = classify_question(text)
        if session.current_task is None:
            # No task context to ground in; treat as open chat, guarded.
            out = self._fallback_flow(session, text, "action", remaining_ms)
            out.pop("fallback_reason", None)
            out["route"] = "in_space"
            out["question_type"] = qtype
            return out
        deadline = min(self.budgets.llm_ms, remaining_ms())
        if deadline <= 0:
            return {"response": self._default(session, "qa"), "question_type": qtype}
        try:
            answer = qa.answer_question(
                session.current_task,
                history,
                text,
                mode="extractive",
                backend=self.backends["qa"],
                token_budget=self.context_budget_tokens,
                deadline_ms=deadline,
                templates=self.templates,
                guard_rules=self.guard_rules,
            )
        except GenerationTimeout:
            return {"response": self._default(session, "qa"), "question_type": qtype}
        except BackendError as exc:
            logger.warning("qa backend failed: %s", exc)
            return {"response": self._default(session, "qa"), "question_type": qtype}
        if answer.grounded:
            return {"response": answer.text, "question_type": qtype}
        # Ungrounded output gets the abstractive treatment: capability guard,
        # then served as free text.
        guarded = guard_response(answer.text, self.guard_rules)
        return {
            "response": guarded.text,
            "question_type": qtype,
            "guard_blocked": guarded.blocked,
        }

    def _do_replace(self, session, action, text, history, remaining_ms) -> dict:
        if session.current_task is None:
            return {
                "response": "We need an active task before swapping ingredients. "
                "Search for something first."
            }
        requested = action.args[0]
        deadline = min(self.budgets.llm_ms, remaining_ms())
        if deadline <= 0:
            return {"response": self._default(session, "replace")}
        try:
            proposal = adaptation.propose_replacement(
                session.current_task,
                requested,
                self.backends["adaptation"],
                deadline,
                self.templates,
            )
        except adaptation.AdaptationFailure as exc:
            if exc.kind == "unknown_requirement":
                return {
                    "response": f"This task doesn't seem to use {requested}, "
                    "so there's nothing to swap."
                }
            logger.info("replacement proposal failed (%s): %s", exc.kind, exc)
            return {"response": self._default(session, "replace")}
        except BackendError as exc:
            logger.warning("adaptation backend failed: %s", exc)
            return {"response": self._default(session, "replace")}
        session.pending = PendingReplacement(proposal=proposal, request_text=requested)
        offers = " and ".join(
            f"{p.replacement} instead of {p.original}" for p in proposal.pairs
        )
        return {
            "response": f"You could use {offers}. Should I update the task? (yes/no)"
        }

    def _do_confirm(self, session, action, text, history, remaining_ms) -> dict:
        answer = action.args[0].strip().lower()
        if session.pending is None:
            return {"response": "There's nothing waiting for a yes or no right now."}
        if answer in ("yes", "y", "ok", "sure"):
            pending = session.pending
            session.pending = None
            deadline = min(self.budgets.llm_ms, remaining_ms())
            if deadline <= 0:
                return {"response": self._default(session, "replace")}
            assert session.current_task is not None
            try:
                result = adaptation.rewrite_steps(
                    session.current_task,
                    pending.proposal,
                    self.backends["adaptation"],
                    deadline,
                    self.templates,
                )
                new_task, _summary = adaptation.apply_rewrites(
                    session.current_task, pending.proposal, result
                )
            except adaptation.AdaptationFailure as exc:
                logger.info("adaptation failed (%s): %s", exc.kind, exc)
                return {
                    "response": "I couldn't rewrite the steps cleanly, so I've kept "
                    "the original recipe. Everything is unchanged."
                }
            except BackendError as exc:
                logger.warning("adaptation backend failed: %s", exc)
                return {
                    "response": "I couldn't reach my helper to rewrite the steps, so "
                    "the recipe is unchanged."
                }
            session.current_task = new_task
            changed = ", ".join(
                f"{p.original} is now {p.replacement}" for p in pending.proposal.pairs
            )
            step_note = ""
            if session.current_step is not None:
                step_note = (
                    f" Step {session.current_step} now reads: "
                    f"{new_task.step_text(session.current_step)}"
                )
            return {"response": f"Done! {changed}.{step_note}"}
        if answer in ("no", "n"):
            session.pending = None
            return {
                "response": "No problem, I'll keep the original ingredients. What's next?",
                "rejection": "ignored_replacement",
            }
        return {"response": "Should I update the task? Please say yes or no."}

    def _do_stop(self, session, action, text, history, remaining_ms) -> dict:
        session.current_task = None
        session.current_step = None
        session.phase = "exploration"
        session.pending = None
        session.search_results = []
        return {
            "response": "Okay, stopping here. Search for something new whenever you're ready!"
        }

    # -- metrics ---------------------------------------------------------------

    def action_distribution(self) -> dict[str, dict[str, float]]:
        """Fraction of decoded actions per phase; each split sums to 1."""
        with self._lock:
            counts = Counter(self._action_counts)
        out: dict[str, dict[str, float]] = {}
        for phase in PHASES:
            phase_counts = {
                name: n for (ph, name), n in counts.items() if ph == phase
            }
            total = sum(phase_counts.values())
            out[phase] = (
                {name: n / total for name, n in sorted(phase_counts.items())}
                if total
                else {}
            )
        return out

    def metrics(self) -> dict:
        from .evals import latency_report

        with self._lock:
            latencies = list(self._latencies)
            global_counts = Counter(self._action_counts)
            evicted_counts = Counter(self._evicted_action_counts)
            sessions = list(self._sessions.values())
            created, evicted = self._created, self._evicted
            fallback_reasons = dict(self._fallback_reasons)
            rejections = dict(self._rejections)
            question_types = dict(self._question_types)
        per_session = Counter()
        for sess in sessions:
            per_session.update(sess.action_counts)
        per_session.update(evicted_counts)
        by_action: dict[str, dict[str, float]] = {}
        for name in sorted({name for name, _, _ in latencies}):
            values = [ms for n, _, ms in latencies if n == name]
            by_action[name] = {
                "count": len(values),
                "mean_ms": sum(values) / len(values),
            }
        route_counts = Counter(route for _, route, _ in latencies)
        samples = [ms for _, _, ms in latencies]
        return {
            "turns": len(latencies),
            "sessions": {"active": len(sessions), "created": created, "evicted": evicted},
            "latency": latency_report(samples, threshold_ms=self.budgets.global_ms)
            if samples
            else None,
            "by_action": by_action,
            "routes": dict(route_counts),
            "action_distribution": self.action_distribution(),
            "fallback_reasons": fallback_reasons,
            "rejections": rejections,
            "question_types": question_types,
            "telemetry_consistent": per_session == global_counts,
        }


def _render_history(history: Sequence[tuple[str, str]]) -> str:
    if not history:
        return "(none)"
    return "\n".join(f"{speaker}: {text}" for speaker, text in history)


def _last_system_text(session: Session) -> str:
    for speaker, text in reversed(session.history):
        if speaker == "system":
            return text
    return "Hi! What would you like to cook or build today?"
