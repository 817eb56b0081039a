"""Question answering over an active task.

Three concerns live here: assembling a budget-bound prompt context from a
task, classifying the user's question, and grounding model answers back into
that context so extractive answers are always verbatim spans.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from typing import Callable, Sequence

from .gateway import (
    DEFAULT_GUARD_RULES,
    GenerateRequest,
    GenerationTimeout,
    GuardRule,
    TemplateLibrary,
    generate,
    guard_response,
)
from .taskgraph import StepNode, Task
from .textutil import overlap_score, ws_token_count

logger = logging.getLogger(__name__)

TokenCounter = Callable[[str], int]

QUESTION_TYPES = (
    "factoid",
    "navigation",
    "confirmation",
    "causal",
    "complex",
    "history",
    "listing",
)

ANSWER_MODES = ("extractive", "abstractive")

#: History turns considered for the context tail.
MAX_HISTORY_TURNS = 4

#: Token allowance for the section labels around the two mandatory fields.
_SCAFFOLD_TOKENS = 8


class BudgetTooSmall(ValueError):
    """The budget cannot fit even the mandatory title and description."""

    def __init__(self, needed: int, budget: int):
        self.needed = needed
        self.budget = budget
        super().__init__(f"context needs >= {needed} tokens, budget is {budget}")


class NotGrounded(RuntimeError):
    """An answer string does not occur in the serialized context."""


@dataclass(frozen=True)
class QAContext:
    """A serialized context plus a record of what made it in."""

    serialized_text: str
    included_step_indices: tuple[int, ...]
    token_budget: int
    #: Rendered "speaker: text" lines that fit, oldest first.
    history_window: tuple[str, ...]
    title_block: str
    description_block: str
    ingredients_block: str
    steps_block: str
    history_block: str
    ingredients_included: bool
    token_count: int


def rank_steps(question: str, steps: Sequence[StepNode]) -> list[tuple[int, float]]:
    """Rank steps by lexical overlap with the question.

    Returns (index, score) pairs sorted by score descending, index ascending
    on ties, so the order is total and deterministic.
    """
    scored = [(node.index, overlap_score(question, node.text)) for node in steps]
    scored.sort(key=lambda pair: (-pair[1], pair[0]))
    return scored


def assemble_context(
    task: Task,
    history: Sequence[tuple[str, str]],
    question: str,
    token_budget: int,
    counter: TokenCounter = ws_token_count,
) -> QAContext:
    """Render the task into the fixed section layout under a token budget.

    Title and description always ship (BudgetTooSmall otherwise). The
    ingredient list is all-or-nothing. Steps are admitted in rank_steps
    order until the budget is exhausted, but always rendered in ascending
    index order. History is lowest priority: the last few turns are
    appended only with leftover budget, oldest dropped first.
    """
    if token_budget < 1:
        raise ValueError("token_budget must be positive")
    title_block = f"Title:\n{task.title}"
    description_block = f"|Description:\n {task.description}"
    mandatory = counter(title_block) + counter(description_block) + _SCAFFOLD_TOKENS
    if mandatory > token_budget:
        raise BudgetTooSmall(needed=mandatory, budget=token_budget)

    parts = [title_block, description_block]

    def total(extra: list[str]) -> int:
        return counter("\n\n".join(parts + [p for p in extra if p]))

    ingredients_block = ""
    if task.requirements:
        lines = "\n".join(req.display() for req in task.requirements)
        candidate = f"|Ingredients:\n{lines}"
        if total([candidate]) <= token_budget:
            ingredients_block = candidate
    if ingredients_block:
        parts.append(ingredients_block)

    included: list[int] = []
    steps_block = ""
    for idx, _score in rank_steps(question, task.steps):
        trial = sorted(set(included) | {idx})
        candidate = "|Steps:\n" + ";\n".join(task.step_text(i) for i in trial)
        if total([candidate]) > token_budget:
            break
        included = trial
        steps_block = candidate
    if steps_block:
        parts.append(steps_block)

    kept = [f"{speaker}: {text}" for speaker, text in list(history)[-MAX_HISTORY_TURNS:]]
    history_block = ""
    while kept:
        candidate = "|History:\n" + "\n".join(kept)
        if total([candidate]) <= token_budget:
            history_block = candidate
            break
        kept.pop(0)
    if history_block:
        parts.append(history_block)

    text = "\n\n".join(parts)
    return QAContext(
        serialized_text=text,
        included_step_indices=tuple(included),
        token_budget=token_budget,
        history_window=tuple(kept) if history_block else (),
        title_block=title_block,
        description_block=description_block,
        ingredients_block=ingredients_block,
        steps_block=steps_block,
        history_block=history_block,
        ingredients_included=bool(ingredients_block),
        token_count=counter(text),
    )


def qa_prompt_variables(context: QAContext, question: str) -> dict[str, str]:
    """Map an assembled context onto the QA template's slots.

    The template keeps the published slot names; the title rides along with
    the description and any history tail rides with the steps.
    """
    steps = context.steps_block
    if context.history_block:
        steps = f"{steps}\n\n{context.history_block}" if steps else context.history_block
    return {
        "Description": f"{context.title_block}\n\n{context.description_block}",
        "Steps": steps,
        "Ingredients": context.ingredients_block,
        "Question": question,
    }


# --- question classification ----------------------------------------------

_HISTORY_RE = re.compile(
    r"^sorry\b|\b(?:repeat that|say that again|what was that|what did you (?:say|just say))\b"
    r"|\bwhat do i need to do\b"
)
_NAV_RE = re.compile(
    r"\bsteps?\b.*\b(?:next|after|before|previous|back)\b"
    r"|\b(?:next|previous|which|what)\b.*\bsteps?\b"
    r"|\bwhat(?:'s| is)? comes? next\b"
)
_LISTING_RE = re.compile(
    r"\bhow (?:much|many)\b.*\band\b"
    r"|\blist (?:of|the|all)\b"
    r"|\bwhat (?:ingredients|tools|supplies|items)\b"
    r"|\bwhat else do i need\b"
)
_CONFIRM_START_RE = re.compile(
    r"^(?:would|should|could|can|is|are|do|does|did|will|am|was|were|may|might|shall)\b"
)
_MEAN_RE = re.compile(r"\b(?:that|it|this)\b[^.?!]*\bmean\b|\bmean\b[^.?!]*\b(?:that|it|this)\b")
_CAUSAL_RE = re.compile(r"\bwhy\b|\bwhat happens if\b|\bwhat'?s the reason\b")


def classify_question(utterance: str) -> str:
    """Bucket a question for telemetry and answer shaping.

    Rule cascade, first hit wins: history recall, step navigation, listing,
    yes/no confirmation (skipped for alternative "... or ..." questions and
    for "does that mean ..." inferences), causal, complex inference; factoid
    is the default bucket.
    """
    text = re.sub(r"\s+", " ", utterance.strip().lower())
    if not text:
        raise ValueError("utterance must be non-empty")
    if _HISTORY_RE.search(text):
        return "history"
    if _NAV_RE.search(text):
        return "navigation"
    if _LISTING_RE.search(text):
        return "listing"
    if _CONFIRM_START_RE.match(text) and " or " not in text and not _MEAN_RE.search(text):
        return "confirmation"
    if _CAUSAL_RE.search(text):
        return "causal"
    if _MEAN_RE.search(text):
        return "complex"
    return "factoid"


# --- span grounding ---------------------------------------------------------


@dataclass(frozen=True)
class GroundingResult:
    grounded: bool
    start: int | None = None
    length: int | None = None
    case_mismatch: bool = False


def locate_span(answer_text: str, context: str | QAContext) -> GroundingResult:
    """Locate an answer in the context without raising.

    Case-sensitive first occurrence wins; a case-insensitive retry still
    grounds but is flagged. Empty answers never ground.
    """
    haystack = context.serialized_text if isinstance(context, QAContext) else context
    needle = answer_text.strip()
    if not needle:
        return GroundingResult(grounded=False)
    pos = haystack.find(needle)
    if pos >= 0:
        return GroundingResult(True, pos, len(needle), case_mismatch=False)
    pos = haystack.lower().find(needle.lower())
    if pos >= 0:
        return GroundingResult(True, pos, len(needle), case_mismatch=True)
    return GroundingResult(grounded=False)


def ground_span(answer_text: str, context: str | QAContext) -> tuple[int, int]:
    """Return (start, length) of the answer inside the context.

    Raises NotGrounded when the answer does not occur even after the
    case-insensitive retry; a retry hit is logged so hallucination audits
    can tell exact matches from case-normalized ones.
    """
    result = locate_span(answer_text, context)
    if not result.grounded:
        raise NotGrounded(f"answer not found in context: {answer_text!r}")
    if result.case_mismatch:
        logger.info("grounded only after case-insensitive retry: %r", answer_text)
    assert result.start is not None and result.length is not None
    return result.start, result.length


@dataclass(frozen=True)
class QAAnswer:
    """A resolved answer; grounded answers are verbatim context spans."""

    text: str
    grounded: bool
    span: tuple[int, int] | None  # (start char offset, length)
    category: str
    case_mismatch: bool = False

    def __post_init__(self):
        if self.category not in QUESTION_TYPES:
            raise ValueError(f"unknown question category: {self.category}")
        if self.grounded != (self.span is not None):
            raise ValueError("grounded answers carry a span; ungrounded never do")


def answer_question(
    task: Task,
    history: Sequence[tuple[str, str]],
    question: str,
    mode: str,
    backend,
    token_budget: int = 1000,
    deadline_ms: float = 2000.0,
    templates: TemplateLibrary | None = None,
    counter: TokenCounter = ws_token_count,
    guard_rules: Sequence[GuardRule] = DEFAULT_GUARD_RULES,
) -> QAAnswer:
    """Ask the backend about the task and resolve the reply into an answer.

    Extractive mode grounds the model output in the serialized context and
    canonicalizes the text to the exact substring at the span, so
    ``answer.text == context[start:start+length]`` holds whenever
    ``grounded`` is true; output that cannot be grounded comes back raw
    with ``grounded=False`` for the caller's fallback policy. Abstractive
    mode skips grounding and runs the capability guard instead. Backend
    timeouts raise GenerationTimeout; the caller owns the default response.
    """
    if mode not in ANSWER_MODES:
        raise ValueError(f"unknown answer mode: {mode}")
    category = classify_question(question)
    context = assemble_context(task, history, question, token_budget, counter)
    request = GenerateRequest(
        template_id="qa",
        variables=qa_prompt_variables(context, question),
        deadline_ms=deadline_ms,
    )
    response = generate(backend, request, templates)
    if response.timed_out:
        raise GenerationTimeout(f"qa backend exceeded {deadline_ms:.0f}ms")
    raw = response.text.strip()

    if mode == "extractive":
        found = locate_span(raw, context)
        if found.grounded:
            assert found.start is not None and found.length is not None
            exact = context.serialized_text[found.start : found.start + found.length]
            if found.case_mismatch:
                logger.info("grounded only after case-insensitive retry: %r", raw)
            return QAAnswer(
                text=exact,
                grounded=True,
                span=(found.start, found.length),
                category=category,
                case_mismatch=found.case_mismatch,
            )
        return QAAnswer(text=raw, grounded=False, span=None, category=category)

    guarded = guard_response(raw, guard_rules)
    return QAAnswer(text=guarded.text, grounded=False, span=None, category=category)
