"""Requirement replacement driven by a generative backend.

The flow is propose -> confirm -> rewrite -> apply. Model output is parsed
strictly (exact JSON shape, no extra keys), retries are bounded, and
application is all-or-nothing: a task is never left half rewritten.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field

from . import gateway
from .gateway import Backend, GenerateRequest, TemplateLibrary
from .taskgraph import (
    ReplacementMapping,
    Task,
    UnknownRequirement,
    apply_replacement,
    build_mapping,
)
from .textutil import contains_whole_word, whole_word_pattern

logger = logging.getLogger(__name__)

FAILURE_KINDS = ("format", "unknown_requirement", "timeout", "rewrite")

SCHEMAS = ("proposal", "rewrite")

#: Model calls allowed per proposal and per step rewrite.
MAX_ATTEMPTS = 2


class FormatError(ValueError):
    """Model output did not contain the required JSON shape."""


class AdaptationFailure(RuntimeError):
    def __init__(self, kind: str, message: str):
        if kind not in FAILURE_KINDS:
            raise ValueError(f"unknown failure kind: {kind}")
        self.kind = kind
        super().__init__(message)


@dataclass(frozen=True)
class ProposalPair:
    original: str
    replacement: str


@dataclass(frozen=True)
class StructuredProposal:
    """A validated replacement mapping proposed by the backend."""

    pairs: tuple[ProposalPair, ...]
    rationale: str | None = None

    def __post_init__(self):
        if not self.pairs:
            raise ValueError("proposal needs at least one pair")
        originals = [p.original.lower() for p in self.pairs]
        if len(set(originals)) != len(originals):
            raise ValueError("proposal originals must be distinct")


@dataclass(frozen=True)
class RewriteEdit:
    """One parsed step-edit reply."""

    step: int
    text: str


@dataclass(frozen=True)
class RewriteResult:
    """Outcome of rewriting every affected step.

    Each affected step lands in exactly one of ``texts`` (accepted new text)
    or ``failures`` (reason string). ``applied`` marks, per original term,
    whether every step that pair touches was rewritten successfully.
    """

    texts: dict[int, str] = field(default_factory=dict)
    failures: dict[int, str] = field(default_factory=dict)
    applied: dict[str, bool] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.failures


def parse_structured(text: str, schema: str) -> StructuredProposal | RewriteEdit:
    """Extract and validate the one JSON object in model output.

    Prose before or after the object is tolerated; the first position where
    a JSON object parses is taken as the object. ``schema`` selects the
    shape: "proposal" wants {"pairs": [...]} (optional "rationale"),
    "rewrite" wants {"step": int, "text": str}. Anything else is a
    FormatError naming the problem.
    """
    if schema not in SCHEMAS:
        raise ValueError(f"unknown schema: {schema}")
    obj = _first_json_object(text)
    if schema == "proposal":
        return _validate_proposal(obj)
    return _validate_rewrite_edit(obj)


def _first_json_object(text: str) -> dict:
    decoder = json.JSONDecoder()
    idx = text.find("{")
    while idx != -1:
        try:
            obj, _ = decoder.raw_decode(text, idx)
        except ValueError:
            idx = text.find("{", idx + 1)
            continue
        if not isinstance(obj, dict):
            raise FormatError("top-level JSON value is not an object")
        return obj
    raise FormatError("no JSON object in output")


def _validate_proposal(obj: dict) -> StructuredProposal:
    allowed = {"pairs", "rationale"}
    if "pairs" not in obj:
        raise FormatError("missing field: pairs")
    extra = set(obj) - allowed
    if extra:
        raise FormatError(f"unexpected top-level fields: {sorted(extra)}")
    rationale = obj.get("rationale")
    if rationale is not None and not isinstance(rationale, str):
        raise FormatError("rationale must be a string")
    pairs = obj["pairs"]
    if not isinstance(pairs, list) or not pairs:
        raise FormatError("pairs must be a non-empty list")
    out: list[ProposalPair] = []
    for i, pair in enumerate(pairs):
        if not isinstance(pair, dict) or set(pair) != {"original", "replacement"}:
            raise FormatError(f"pairs[{i}] must have exactly original and replacement")
        original, replacement = pair["original"], pair["replacement"]
        if not isinstance(original, str) or not original.strip():
            raise FormatError(f"pairs[{i}].original must be a non-empty string")
        if not isinstance(replacement, str) or not replacement.strip():
            raise FormatError(f"pairs[{i}].replacement must be a non-empty string")
        out.append(ProposalPair(original.strip(), replacement.strip()))
    originals = [p.original.lower() for p in out]
    if len(set(originals)) != len(originals):
        raise FormatError("pairs name the same original more than once")
    return StructuredProposal(pairs=tuple(out), rationale=rationale)


def _validate_rewrite_edit(obj: dict) -> RewriteEdit:
    if set(obj) != {"step", "text"}:
        raise FormatError(f"expected keys ['step', 'text'], got {sorted(obj)}")
    step, text = obj["step"], obj["text"]
    if isinstance(step, bool) or not isinstance(step, int):
        raise FormatError("step must be an integer")
    if not isinstance(text, str):
        raise FormatError("text must be a string")
    return RewriteEdit(step=step, text=text)


def to_mapping(task: Task, proposal: StructuredProposal) -> ReplacementMapping:
    """Ground a proposal against the task, computing affected steps.

    Raises UnknownRequirement when an original names nothing in the task.
    """
    return build_mapping(task, [(p.original, p.replacement) for p in proposal.pairs])


def _check_no_collisions(task: Task, proposal: StructuredProposal) -> None:
    """Reject proposals whose application would duplicate a requirement."""
    final = {name.lower() for name in task.requirement_names()}
    for pair in proposal.pairs:
        final.discard(pair.original.lower())
    for pair in proposal.pairs:
        if pair.replacement.lower() in final:
            raise UnknownRequirement(
                f"replacement {pair.replacement!r} collides with an existing requirement"
            )
        final.add(pair.replacement.lower())


def propose_replacement(
    task: Task,
    request: str,
    backend: Backend,
    deadline_ms: float = 2000.0,
    templates: TemplateLibrary | None = None,
) -> StructuredProposal:
    """Ask the backend which requirement(s) to swap for the user's request.

    At most MAX_ATTEMPTS calls; only malformed output earns a retry. A
    proposal naming a requirement the task does not have (or colliding with
    one it does) fails immediately as unknown_requirement. Deadline covers
    all attempts together.
    """
    if not request.strip():
        raise ValueError("request must be non-empty")
    variables = {
        "title": task.title,
        "requirements": "\n".join(f"- {req.display()}" for req in task.requirements),
        "request": request,
    }
    start = time.perf_counter()
    last_format: FormatError | None = None
    for attempt in range(MAX_ATTEMPTS):
        remaining = deadline_ms - (time.perf_counter() - start) * 1000.0
        if remaining <= 0:
            raise AdaptationFailure("timeout", "proposal deadline exhausted")
        response = gateway.generate(
            backend,
            GenerateRequest("replacement_proposal", variables, deadline_ms=remaining),
            templates,
        )
        if response.timed_out:
            raise AdaptationFailure("timeout", "proposal generation timed out")
        try:
            proposal = parse_structured(response.text, "proposal")
        except FormatError as exc:
            logger.info("proposal attempt %d unparseable: %s", attempt + 1, exc)
            last_format = exc
            continue
        assert isinstance(proposal, StructuredProposal)
        try:
            _check_no_collisions(task, proposal)
            to_mapping(task, proposal)  # raises on unknown originals
        except UnknownRequirement as exc:
            raise AdaptationFailure("unknown_requirement", str(exc)) from exc
        return proposal
    raise AdaptationFailure(
        "format", f"proposal unparseable after {MAX_ATTEMPTS} attempts: {last_format}"
    )


def _validate_rewrite(text: str, step_index: int, mapping: ReplacementMapping) -> str | None:
    """Reason the rewritten text is unacceptable, or None if it is fine."""
    if not text.strip():
        return "rewritten text is empty"
    # Mask replacement phrases before scanning for leftover originals, so a
    # replacement that embeds its original ("eggs" -> "eggs substitute") is
    # not flagged as a leftover.
    masked = text
    for pair in mapping.pairs:
        masked = whole_word_pattern(pair.replacement).sub("\x00", masked)
    for pair in mapping.pairs:
        if step_index in pair.affected_steps and not contains_whole_word(text, pair.replacement):
            return f"replacement {pair.replacement!r} missing from rewrite"
        if contains_whole_word(masked, pair.original):
            return f"original {pair.original!r} still present in rewrite"
    return None


def _rewrite_one(
    task: Task,
    mapping: ReplacementMapping,
    step_index: int,
    backend: Backend,
    deadline_ms: float,
    templates: TemplateLibrary | None,
) -> str:
    """Rewrite one affected step, raising AdaptationFailure when it cannot.

    Retries once on malformed or invalid output; a timeout fails
    immediately. Valid output must target the requested step, contain every
    relevant replacement, and contain no original from any pair.
    """
    variables = {
        "pairs": "\n".join(
            f'- replace "{p.original}" with "{p.replacement}"' for p in mapping.pairs
        ),
        "step_index": str(step_index),
        "step_text": task.step_text(step_index),
    }
    start = time.perf_counter()
    last_reason = "no attempts made"
    for attempt in range(MAX_ATTEMPTS):
        remaining = deadline_ms - (time.perf_counter() - start) * 1000.0
        if remaining <= 0:
            raise AdaptationFailure("timeout", f"rewrite deadline exhausted at step {step_index}")
        response = gateway.generate(
            backend,
            GenerateRequest("task_rewrite", variables, deadline_ms=remaining),
            templates,
        )
        if response.timed_out:
            raise AdaptationFailure("timeout", f"rewrite generation timed out at step {step_index}")
        try:
            edit = parse_structured(response.text, "rewrite")
        except FormatError as exc:
            last_reason = str(exc)
            logger.info(
                "rewrite attempt %d for step %d unparseable: %s", attempt + 1, step_index, exc
            )
            continue
        assert isinstance(edit, RewriteEdit)
        if edit.step != step_index:
            last_reason = f"rewrite targeted step {edit.step}, wanted {step_index}"
            logger.info("rewrite attempt %d: %s", attempt + 1, last_reason)
            continue
        reason = _validate_rewrite(edit.text, step_index, mapping)
        if reason is None:
            return edit.text.strip()
        last_reason = reason
        logger.info(
            "rewrite attempt %d for step %d rejected: %s", attempt + 1, step_index, reason
        )
    raise AdaptationFailure(
        "rewrite", f"step {step_index} not rewritten after {MAX_ATTEMPTS} attempts: {last_reason}"
    )


def rewrite_steps(
    task: Task,
    proposal: StructuredProposal,
    backend: Backend,
    deadline_ms: float = 2000.0,
    templates: TemplateLibrary | None = None,
) -> RewriteResult:
    """Rewrite every step the proposal touches, collecting per-step outcomes.

    Failures (bad output after retry, per-step timeout) are recorded, never
    raised, and leave that step's text unchanged; the task itself is never
    mutated here. A pair counts as applied only if every step it affects
    was rewritten successfully.
    """
    mapping = to_mapping(task, proposal)
    texts: dict[int, str] = {}
    failures: dict[int, str] = {}
    start = time.perf_counter()
    for step_index in mapping.all_affected_steps():
        remaining = deadline_ms - (time.perf_counter() - start) * 1000.0
        try:
            if remaining <= 0:
                raise AdaptationFailure(
                    "timeout", f"rewrite deadline exhausted before step {step_index}"
                )
            texts[step_index] = _rewrite_one(
                task, mapping, step_index, backend, remaining, templates
            )
        except AdaptationFailure as exc:
            failures[step_index] = str(exc)
    applied = {
        pair.original: all(idx in texts for idx in pair.affected_steps)
        for pair in mapping.pairs
    }
    return RewriteResult(texts=texts, failures=failures, applied=applied)


def apply_rewrites(
    task: Task, proposal: StructuredProposal, result: RewriteResult
) -> tuple[Task, dict]:
    """Apply a fully successful rewrite result, or fail without touching the task.

    Requirements are swapped alongside the step texts; when the proposal
    affects no steps at all this is a pure requirement swap.
    """
    if not result.ok:
        failed = ", ".join(f"step {idx}" for idx in sorted(result.failures))
        raise AdaptationFailure("rewrite", f"rewrites failed for {failed}")
    mapping = to_mapping(task, proposal)
    new_task = apply_replacement(task, mapping, dict(result.texts))
    summary = {
        "pairs": [
            {
                "original": p.original,
                "replacement": p.replacement,
                "applied": result.applied.get(p.original, True),
            }
            for p in proposal.pairs
        ],
        "rewritten_steps": sorted(result.texts),
    }
    return new_task, summary


def adapt(
    task: Task,
    request: str,
    backend: Backend,
    deadline_ms: float = 4000.0,
    templates: TemplateLibrary | None = None,
) -> tuple[Task, dict]:
    """One-shot propose -> rewrite -> apply, atomically.

    The input task is never mutated; on any stage failure nothing is
    applied and the AdaptationFailure propagates so the caller keeps the
    original task. Interactive flows should instead call
    propose_replacement, confirm with the user, then rewrite_steps and
    apply_rewrites.
    """
    start = time.perf_counter()
    proposal = propose_replacement(task, request, backend, deadline_ms, templates)
    remaining = deadline_ms - (time.perf_counter() - start) * 1000.0
    if remaining <= 0:
        raise AdaptationFailure("timeout", "deadline exhausted after proposal stage")
    result = rewrite_steps(task, proposal, backend, remaining, templates)
    return apply_rewrites(task, proposal, result)
