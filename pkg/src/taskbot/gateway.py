"""Uniform, deadline-bound interface to generative and specialized backends.

Every model call goes through :func:`generate`, which renders a prompt
template, runs the backend in a worker thread, and abandons the call once
its deadline expires. Backends are interchangeable: a deterministic rule
NDP, a scripted queue for tests, or a remote HTTP completion endpoint.
"""

from __future__ import annotations

import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

logger = logging.getLogger(__name__)

TEMPLATE_IDS = ("ndp", "fallback", "qa", "replacement_proposal", "task_rewrite")

#: Wall-clock slack allowed on top of a deadline; hard ceilings are
#: untestable to the exact millisecond.
SCHEDULING_SLACK_MS = 100.0

_PLACEHOLDER_RE = re.compile(r"\{([A-Za-z_][A-Za-z0-9_]*)\}")


class MissingVariable(ValueError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"missing template variable: {name}")


class BackendError(RuntimeError):
    """Base for backend failures that are not deadline expiries."""


class BackendUnavailable(BackendError):
    """The backend could not be reached; distinct from a timeout."""


class ScriptExhausted(BackendError):
    """A scripted backend ran out of canned outputs."""


class GenerationTimeout(RuntimeError):
    """Raised by callers that cannot proceed past a timed-out generation."""


class TemplateLibrary:
    """Loads prompt templates from a directory of ``<id>.txt`` files."""

    def __init__(self, template_dir: str | Path | None = None):
        self.template_dir = Path(template_dir) if template_dir else _default_template_dir()
        self._cache: dict[str, str] = {}

    def template_text(self, template_id: str) -> str:
        if template_id not in TEMPLATE_IDS:
            raise KeyError(f"unknown template id: {template_id}")
        if template_id not in self._cache:
            path = self.template_dir / f"{template_id}.txt"
            self._cache[template_id] = path.read_text(encoding="utf-8")
        return self._cache[template_id]

    def render(self, template_id: str, variables: Mapping[str, str]) -> str:
        return render_template(self.template_text(template_id), variables)


def _default_template_dir() -> Path:
    return Path(__file__).parent / "templates"


def render_template(template: str, variables: Mapping[str, str]) -> str:
    """Substitute every ``{name}`` placeholder; unknown names raise.

    Braces that do not form a bare-identifier placeholder (JSON examples in
    the instructions, for instance) pass through untouched.
    """

    def sub(m: re.Match) -> str:
        name = m.group(1)
        if name not in variables:
            raise MissingVariable(name)
        return str(variables[name])

    return _PLACEHOLDER_RE.sub(sub, template)


_default_library: TemplateLibrary | None = None


def default_templates() -> TemplateLibrary:
    global _default_library
    if _default_library is None:
        _default_library = TemplateLibrary()
    return _default_library


def render_prompt(
    template_id: str, variables: Mapping[str, str], templates: TemplateLibrary | None = None
) -> str:
    return (templates or default_templates()).render(template_id, variables)


@dataclass(frozen=True)
class GenerateRequest:
    template_id: str
    variables: Mapping[str, str]
    deadline_ms: float
    max_output_chars: int = 4000

    def __post_init__(self):
        if self.template_id not in TEMPLATE_IDS:
            raise ValueError(f"unknown template id: {self.template_id}")
        if self.deadline_ms <= 0:
            raise ValueError("deadline_ms must be positive")
        if self.max_output_chars <= 0:
            raise ValueError("max_output_chars must be positive")


@dataclass(frozen=True)
class GenerateResponse:
    text: str
    latency_ms: float
    timed_out: bool
    backend_id: str


class Backend:
    """A text-completion backend; implementations must be concurrency-safe."""

    backend_id: str = "backend"

    def complete(self, prompt: str, cancel: threading.Event | None = None) -> str:
        raise NotImplementedError


@dataclass
class ScriptedOutput:
    text: str
    delay_ms: float = 0.0


class ScriptedBackend(Backend):
    """Replays canned outputs in order; optional injected delay per output.

    Raises ScriptExhausted when the queue runs dry unless constructed with
    ``loop=True`` (demo convenience). Queue pops are serialized; delays are
    slept outside the lock so concurrent calls overlap.
    """

    def __init__(self, outputs: Sequence[ScriptedOutput], loop: bool = False, backend_id: str = "scripted"):
        self._outputs = list(outputs)
        self._pos = 0
        self._loop = loop
        self._lock = threading.Lock()
        self.backend_id = backend_id

    @classmethod
    def from_file(cls, path: str | Path, backend_id: str | None = None) -> "ScriptedBackend":
        """Load ``{"outputs": [{"text", "delay_ms"}...], "loop": bool}`` JSON."""
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        if isinstance(doc, list):
            doc = {"outputs": doc}
        outputs = [
            ScriptedOutput(text=o["text"], delay_ms=float(o.get("delay_ms", 0.0)))
            for o in doc["outputs"]
        ]
        return cls(outputs, loop=bool(doc.get("loop", False)),
                   backend_id=backend_id or f"scripted:{Path(path).stem}")

    def remaining(self) -> int:
        with self._lock:
            return len(self._outputs) - self._pos

    def complete(self, prompt: str, cancel: threading.Event | None = None) -> str:
        with self._lock:
            if self._pos >= len(self._outputs):
                if not self._loop or not self._outputs:
                    raise ScriptExhausted(f"{self.backend_id} has no outputs left")
                self._pos = 0
            out = self._outputs[self._pos]
            self._pos += 1
        if out.delay_ms > 0:
            if cancel is not None:
                cancel.wait(out.delay_ms / 1000.0)
            else:
                time.sleep(out.delay_ms / 1000.0)
        return out.text


class RuleNDPBackend(Backend):
    """Deterministic pattern-table NDP; reads its inputs back out of the
    standard ndp prompt so it is a drop-in for generative backends."""

    backend_id = "rule-ndp"

    _PHASE_RE = re.compile(r"^Phase: (.*)$", re.MULTILINE)
    _STEP_RE = re.compile(r"^Current step: (.*)$", re.MULTILINE)
    _USER_RE = re.compile(r"^User: (.*)$", re.MULTILINE)

    def complete(self, prompt: str, cancel: threading.Event | None = None) -> str:
        phase_m = self._PHASE_RE.search(prompt)
        step_m = self._STEP_RE.search(prompt)
        user_ms = self._USER_RE.findall(prompt)
        phase = phase_m.group(1).strip() if phase_m else "exploration"
        step_raw = step_m.group(1).strip() if step_m else "-"
        current_step = int(step_raw) if step_raw.isdigit() else None
        utterance = user_ms[-1] if user_ms else ""
        return rule_ndp(phase, current_step, utterance)


class RemoteBackend(Backend):
    """Generic completion HTTP API: POST {"prompt", "max_tokens"} -> {"text"}."""

    def __init__(self, url: str, token_env: str | None = None,
                 timeout_s: float = 10.0, max_tokens: int = 256):
        self.url = url
        self.token_env = token_env
        self.timeout_s = timeout_s
        self.max_tokens = max_tokens
        self.backend_id = f"remote:{url}"

    def complete(self, prompt: str, cancel: threading.Event | None = None) -> str:
        import httpx

        headers = {}
        if self.token_env:
            token = os.environ.get(self.token_env, "")
            if token:
                headers["Authorization"] = f"Bearer {token}"
        try:
            resp = httpx.post(
                self.url,
                json={"prompt": prompt, "max_tokens": self.max_tokens},
                headers=headers,
                timeout=self.timeout_s,
            )
            resp.raise_for_status()
            return resp.json()["text"]
        except httpx.HTTPError as exc:
            raise BackendUnavailable(f"{self.url}: {exc}") from exc


def generate(
    backend: Backend,
    request: GenerateRequest,
    templates: TemplateLibrary | None = None,
) -> GenerateResponse:
    """Run one deadline-bound completion.

    Returns within deadline_ms plus scheduling slack; on expiry the worker is
    cancelled/abandoned and ``timed_out`` is set (the caller substitutes a
    default response). Backend errors surface as exceptions, never as fake
    text.
    """
    prompt = render_prompt(request.template_id, request.variables, templates)
    cancel = threading.Event()
    box: dict[str, object] = {}

    def run():
        try:
            box["text"] = backend.complete(prompt, cancel=cancel)
        except Exception as exc:  # surfaced below on the caller thread
            box["error"] = exc

    start = time.perf_counter()
    worker = threading.Thread(target=run, daemon=True)
    worker.start()
    worker.join(request.deadline_ms / 1000.0)
    latency_ms = (time.perf_counter() - start) * 1000.0
    if worker.is_alive():
        cancel.set()
        logger.info("backend %s timed out after %.0fms", backend.backend_id, latency_ms)
        return GenerateResponse("", latency_ms, True, backend.backend_id)
    if "error" in box:
        err = box["error"]
        if isinstance(err, BackendError):
            raise err
        raise BackendUnavailable(str(err)) from err  # type: ignore[arg-type]
    text = str(box.get("text", ""))[: request.max_output_chars]
    return GenerateResponse(text, latency_ms, False, backend.backend_id)


# --- rule-based NDP -------------------------------------------------------

_ORDINALS = {"first": 1, "second": 2, "third": 3, "fourth": 4, "fifth": 5}

_ARTICLES_RE = re.compile(r"^(?:the|a|an|any|some|my|more)\s+", re.IGNORECASE)


def _clean_arg(raw: str) -> str:
    arg = raw.strip().strip(".!?,")
    arg = re.sub(r"\s+please$", "", arg)
    prev = None
    while prev != arg:
        prev = arg
        arg = _ARTICLES_RE.sub("", arg)
    return arg.strip()


_STOP_RE = re.compile(r"^(?:stop|exit|quit|goodbye|bye|end|end task)$")
_YES_RE = re.compile(r"^(?:yes|yeah|yep|sure|ok|okay|yes please|go ahead|do it|sounds good)$")
_NO_RE = re.compile(r"^(?:no|nope|no thanks|no thank you|keep it|leave it|not now)$")
_PLAY_RE = re.compile(r"^play\b")
_TURN_RE = re.compile(r"^turn (?:on|off)\b")
_ASKME_RE = re.compile(r"^place an ingredient$")
_REPLACE_RE = re.compile(
    r"^(?:can you |could you |please )*(?:replace|substitute|swap)\s+(?P<x>.+?)"
    r"(?:\s+(?:with|for|by)\s+.+)?$"
)
_DONT_HAVE_RE = re.compile(r"^i (?:don'?t|do not) have\s+(?P<x>.+)$|^i have no\s+(?P<x2>.+)$")
_INSTEAD_RE = re.compile(r"^(?:can you |could you |please )*use\s+.+?\s+instead of\s+(?P<x>.+)$")
_SELECT_RE = re.compile(
    r"^(?:select|choose|pick|take)(?:\s+(?:option|number|recipe|task))?\s+(?P<n>\d+)$"
    r"|^(?:option|number)\s+(?P<n2>\d+)$"
)
_ORDINAL_RE = re.compile(r"^(?:the\s+)?(?P<ord>first|second|third|fourth|fifth)(?:\s+(?:one|option))?$")
_STEP_AFTER_RE = re.compile(r"\bstep after\b")
_GOTO_STEP_RE = re.compile(r"^(?:go to |jump to |take me to )?step\s+(?P<n>\d+)$")
_NEXT_RE = re.compile(r"^(?:next|next step|go on|move on|continue|carry on|proceed|onwards?)$")
_PREV_RE = re.compile(r"^(?:previous|previous step|go back|back|last step)$")
_REPEAT_RE = re.compile(r"^(?:repeat|repeat that|say that again|what was that|again|once more)$")
_SEARCH_RES = (
    re.compile(r"^do you have(?: any)?\s+(?P<q>.+)$"),
    re.compile(r"^(?:search|look)(?:\s+(?:for|up))?\s+(?P<q>.+)$"),
    re.compile(r"^(?:find|show|get)(?:\s+me)?\s+(?P<q>.+)$"),
    re.compile(r"^i(?:'d| would)?\s*(?:want|like|love)\s+to\s+(?:make|cook|bake|build|try)\s+(?P<q>.+)$"),
    re.compile(r"^how about\s+(?P<q>.+)$"),
    re.compile(r"^new\s+(?P<q>recipes?|tasks?|search)$"),
)
_QUESTION_RE = re.compile(
    r"^(?:what|how|why|when|where|which|who|whose|whom|is|are|was|were|can|could|"
    r"should|would|will|does|do|did|am|may|might)\b"
)


def rule_ndp(phase: str, current_step: int | None, utterance: str) -> str:
    """Deterministic utterance-to-action translation.

    Pattern table, first match wins:

    1.  stop words                          -> stop()
    2.  bare yes / no                       -> confirm("yes") / confirm("no")
    3.  "play ...", "turn on/off ...",
        "place an ingredient"               -> play_music() / turn_on() / ask_me()
        (deliberately out-of-space, mirroring decoder slips; the fallback
        handler picks them up)
    4.  replacement phrasings               -> replace("<original>")
    5.  option choices incl. ordinals       -> select(n)
    6.  step navigation                     -> step_select(n) / next() /
                                               previous() / repeat()
    7.  search phrasings                    -> search("<query>")
    8.  question word or "?"                -> answer_question()
    9.  otherwise                           -> chit_chat() in exploration,
                                               fallback() in execution
    """
    if not utterance.strip():
        raise ValueError("utterance must be non-empty")
    text = re.sub(r"\s+", " ", utterance.strip().lower()).strip()
    bare = text.strip(".!?,")

    if _STOP_RE.match(bare):
        return "stop()"
    if _YES_RE.match(bare):
        return 'confirm("yes")'
    if _NO_RE.match(bare):
        return 'confirm("no")'
    if _PLAY_RE.match(bare):
        return "play_music()"
    if _TURN_RE.match(bare):
        return "turn_on()"
    if _ASKME_RE.match(bare):
        return "ask_me()"

    m = _DONT_HAVE_RE.match(bare)
    if m:
        x = m.group("x") or m.group("x2")
        return f'replace("{_clean_arg(x)}")'
    m = _INSTEAD_RE.match(bare)
    if m:
        return f'replace("{_clean_arg(m.group("x"))}")'
    m = _REPLACE_RE.match(bare)
    if m:
        return f'replace("{_clean_arg(m.group("x"))}")'

    m = _SELECT_RE.match(bare)
    if m:
        n = m.group("n") or m.group("n2")
        return f"select({int(n)})"
    m = _ORDINAL_RE.match(bare)
    if m:
        return f"select({_ORDINALS[m.group('ord')]})"

    if _STEP_AFTER_RE.search(bare):
        if current_step is not None:
            return f"step_select({current_step + 1})"
        return "next()"
    m = _GOTO_STEP_RE.match(bare)
    if m:
        return f"step_select({int(m.group('n'))})"
    if _NEXT_RE.match(bare):
        return "next()"
    if _PREV_RE.match(bare):
        return "previous()"
    if _REPEAT_RE.match(bare):
        return "repeat()"

    for pattern in _SEARCH_RES:
        m = pattern.match(bare)
        if m:
            query = _clean_arg(m.group("q"))
            escaped = query.replace("\\", "\\\\").replace('"', '\\"')
            return f'search("{escaped}")'

    if "?" in text or _QUESTION_RE.match(bare):
        return "answer_question()"

    return "chit_chat()" if phase == "exploration" else "fallback()"


# --- capability guard -----------------------------------------------------


@dataclass(frozen=True)
class GuardRule:
    name: str
    pattern: str
    response: str
    _compiled: re.Pattern = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_compiled", re.compile(self.pattern, re.IGNORECASE))

    def matches(self, text: str) -> bool:
        return self._compiled.search(text) is not None


@dataclass(frozen=True)
class GuardResult:
    text: str
    blocked: bool
    rule: str | None = None


_OFFER = r"\bi (?:can|could|will|would|am able to|am happy to|am going to)(?: certainly| definitely)? "

#: Prohibitions mirrored from the fallback instruction: music, games,
#: quizzes, news, lights, name disclosure. Corrections are phrased so that
#: guarding a guarded output changes nothing.
DEFAULT_GUARD_RULES = (
    GuardRule(
        "music",
        _OFFER + r"(?:play|put on|stream)\b.*\b(?:music|song|jazz|playlist|radio|tunes?)",
        "I can't play music, but I can help with cooking and DIY.",
    ),
    GuardRule(
        "games",
        _OFFER + r"(?:play|start|run|host)\b.*\b(?:games?|quiz(?:zes)?|trivia)",
        "Games and quizzes are outside what I do, but I'm great with cooking and DIY questions.",
    ),
    GuardRule(
        "news",
        _OFFER + r"(?:read|get|fetch|check|tell)\b.*\bnews\b",
        "I can't read the news. I can help with your cooking or DIY task, though.",
    ),
    GuardRule(
        "lights",
        _OFFER + r"(?:turn|switch|dim)\b.*\b(?:lights?|lamps?)\b",
        "I can't control lights or other devices, but I'm happy to help with the task.",
    ),
    GuardRule(
        "name",
        r"\bmy name is\b|\bi am called\b|\byou can call me\b",
        "I can't share my name, but I'm here to help with cooking and DIY.",
    ),
)

#: Never emit an empty response.
EMPTY_RESPONSE_TEXT = "Sorry, I don't have a good answer for that one. What would you like to do next?"


def load_guard_rules(path: str | Path) -> tuple[GuardRule, ...]:
    """Load capability rules from a JSON list of {name, pattern, response}."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    return tuple(GuardRule(r["name"], r["pattern"], r["response"]) for r in doc)


def guard_response(text: str, rules: Sequence[GuardRule] = DEFAULT_GUARD_RULES) -> GuardResult:
    """Replace capability-claiming output with a canned correction.

    Idempotent: corrections never re-trigger any rule. Empty input becomes a
    stock apology instead of an empty reply.
    """
    if not text.strip():
        return GuardResult(EMPTY_RESPONSE_TEXT, blocked=False)
    for rule in rules:
        if rule.matches(text):
            logger.info("capability guard blocked output via rule %r", rule.name)
            return GuardResult(rule.response, blocked=True, rule=rule.name)
    return GuardResult(text, blocked=False)
