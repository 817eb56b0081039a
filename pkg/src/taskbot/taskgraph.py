"""Task data model, catalog search, step navigation and replacement rewrites.

Tasks are immutable values after load; every operation here is pure. Steps
are 1-based, matching the user-visible "Step 1".
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace as dc_replace
from pathlib import Path
from typing import Mapping, Sequence

from .textutil import overlap_score, whole_word_pattern

logger = logging.getLogger(__name__)

DOMAINS = ("cooking", "diy")

NAV_COMMANDS = ("next", "previous", "repeat", "goto")


class SchemaError(ValueError):
    """A task document violated the schema; names the offending field."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class RangeError(ValueError):
    """goto target outside [1, n_steps]."""


class NotStartedError(ValueError):
    """Relative navigation before any step is current."""


class UnknownRequirement(ValueError):
    """A replacement names an original that the task does not have."""


@dataclass(frozen=True)
class StepNode:
    index: int
    text: str


@dataclass(frozen=True)
class Requirement:
    name: str
    quantity_text: str | None = None

    def display(self) -> str:
        if self.quantity_text:
            return f"{self.quantity_text} {self.name}"
        return self.name


@dataclass(frozen=True)
class Task:
    id: str
    title: str
    description: str
    domain: str
    steps: tuple[StepNode, ...]
    requirements: tuple[Requirement, ...]
    source_url: str | None = None

    @property
    def n_steps(self) -> int:
        return len(self.steps)

    def step_text(self, index: int) -> str:
        return self.steps[index - 1].text

    def requirement_names(self) -> tuple[str, ...]:
        return tuple(r.name for r in self.requirements)


@dataclass(frozen=True)
class ReplacementPair:
    """One original requirement mapped to its replacement, with the steps it touches."""

    original: str
    replacement: str
    affected_steps: tuple[int, ...] = ()


@dataclass(frozen=True)
class ReplacementMapping:
    pairs: tuple[ReplacementPair, ...]

    def all_affected_steps(self) -> tuple[int, ...]:
        seen: set[int] = set()
        for p in self.pairs:
            seen.update(p.affected_steps)
        return tuple(sorted(seen))


def _norm_name(name: str) -> str:
    return name.strip().lower()


def load_task(document: Mapping) -> Task:
    """Validate a JSON task record and build a Task.

    Raises SchemaError naming the violated field.
    """
    if not isinstance(document, Mapping):
        raise SchemaError("document", "expected a JSON object")

    def need_str(field: str) -> str:
        v = document.get(field)
        if not isinstance(v, str) or not v.strip():
            raise SchemaError(field, "required non-empty string")
        return v

    task_id = need_str("id")
    title = need_str("title")
    description = need_str("description")
    domain = document.get("domain")
    if domain not in DOMAINS:
        raise SchemaError("domain", f"must be one of {DOMAINS}")

    raw_steps = document.get("steps")
    if not isinstance(raw_steps, Sequence) or isinstance(raw_steps, str) or len(raw_steps) == 0:
        raise SchemaError("steps", "required non-empty list")
    steps = []
    for i, text in enumerate(raw_steps, 1):
        if not isinstance(text, str) or not text.strip():
            raise SchemaError(f"steps[{i}]", "step text must be a non-empty string")
        steps.append(StepNode(index=i, text=text))

    raw_reqs = document.get("requirements", [])
    if not isinstance(raw_reqs, Sequence) or isinstance(raw_reqs, str):
        raise SchemaError("requirements", "must be a list")
    requirements = []
    seen_names: set[str] = set()
    for i, rec in enumerate(raw_reqs):
        if not isinstance(rec, Mapping) or not isinstance(rec.get("name"), str) or not rec["name"].strip():
            raise SchemaError(f"requirements[{i}].name", "required non-empty string")
        name = rec["name"]
        key = _norm_name(name)
        if key in seen_names:
            raise SchemaError(f"requirements[{i}].name", f"duplicate requirement {name!r}")
        seen_names.add(key)
        qt = rec.get("quantity_text")
        if qt is not None and not isinstance(qt, str):
            raise SchemaError(f"requirements[{i}].quantity_text", "must be a string or null")
        requirements.append(Requirement(name=name, quantity_text=qt))

    source_url = document.get("source_url")
    if source_url is not None and not isinstance(source_url, str):
        raise SchemaError("source_url", "must be a string or null")

    return Task(
        id=task_id,
        title=title,
        description=description,
        domain=domain,
        steps=tuple(steps),
        requirements=tuple(requirements),
        source_url=source_url,
    )


def task_to_document(task: Task) -> dict:
    return {
        "id": task.id,
        "title": task.title,
        "description": task.description,
        "domain": task.domain,
        "steps": [s.text for s in task.steps],
        "requirements": [
            {"name": r.name, "quantity_text": r.quantity_text} for r in task.requirements
        ],
        "source_url": task.source_url,
    }


def load_catalog(path: str | Path) -> list[Task]:
    """Load every ``*.json`` task file under a directory, sorted by filename."""
    root = Path(path)
    if not root.is_dir():
        raise FileNotFoundError(f"catalog directory not found: {root}")
    tasks = []
    for fp in sorted(root.glob("*.json")):
        with open(fp, encoding="utf-8") as fh:
            tasks.append(load_task(json.load(fh)))
    return tasks


def search_tasks(query: str, catalog: Sequence[Task], k: int) -> list[tuple[Task, float]]:
    """Top-k catalog entries by lexical score over title + description.

    Score is the fraction of distinct query tokens present in the entry;
    ties keep catalog order.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    scored = [
        (task, overlap_score(query, f"{task.title} {task.description}")) for task in catalog
    ]
    ranked = sorted(enumerate(scored), key=lambda item: (-item[1][1], item[0]))
    return [pair for _, pair in ranked[:k]]


def navigate(
    current: int | None, command: str, n_steps: int, target: int | None = None
) -> tuple[int, bool]:
    """Resolve a navigation command to (new index, boundary_flag).

    next/previous clamp to [1, n_steps] and flag the clamp; repeat returns the
    current index; goto(n) must land inside the task.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    if command not in NAV_COMMANDS:
        raise ValueError(f"unknown navigation command: {command!r}")
    if command == "goto":
        if target is None:
            raise ValueError("goto requires a target step")
        if not 1 <= target <= n_steps:
            raise RangeError(f"step {target} outside [1, {n_steps}]")
        return target, False
    if current is None:
        raise NotStartedError("no current step")
    if not 1 <= current <= n_steps:
        raise ValueError(f"current step {current} outside [1, {n_steps}]")
    if command == "repeat":
        return current, False
    if command == "next":
        if current == n_steps:
            return n_steps, True
        return current + 1, False
    # previous
    if current == 1:
        return 1, True
    return current - 1, False


def affected_steps(task: Task, requirement_name: str) -> list[int]:
    """Indices of steps mentioning the requirement, whole-word and case-insensitive.

    Multi-word requirement names match as a phrase. An absent name yields [].
    """
    if not requirement_name.strip():
        raise ValueError("requirement_name must be non-empty")
    pattern = whole_word_pattern(requirement_name.strip())
    return [s.index for s in task.steps if pattern.search(s.text)]


def build_mapping(task: Task, pairs: Sequence[tuple[str, str]]) -> ReplacementMapping:
    """Construct a validated ReplacementMapping, computing affected steps."""
    names = {_norm_name(r.name): r.name for r in task.requirements}
    seen: set[str] = set()
    built = []
    for original, replacement in pairs:
        key = _norm_name(original)
        if key in seen:
            raise ValueError(f"duplicate original {original!r}")
        seen.add(key)
        if key not in names:
            raise UnknownRequirement(f"requirement {original!r} not in task")
        built.append(
            ReplacementPair(
                original=names[key],
                replacement=replacement,
                affected_steps=tuple(affected_steps(task, names[key])),
            )
        )
    return ReplacementMapping(pairs=tuple(built))


def apply_replacement(
    task: Task, mapping: ReplacementMapping, rewritten_steps: Mapping[int, str]
) -> Task:
    """Pure application of a replacement mapping plus rewritten step texts.

    Requirements are swapped in place (position preserved); steps in
    rewritten_steps carry their new text; everything else is untouched and
    the input task is never modified.
    """
    valid_targets = set(mapping.all_affected_steps())
    for idx in rewritten_steps:
        if idx not in valid_targets:
            raise IndexError(f"rewritten step {idx} is not an affected step")

    by_original = {_norm_name(p.original): p for p in mapping.pairs}
    task_names = {_norm_name(r.name) for r in task.requirements}
    for key, pair in by_original.items():
        if key not in task_names:
            raise UnknownRequirement(f"requirement {pair.original!r} not in task")

    new_reqs = []
    for req in task.requirements:
        pair = by_original.get(_norm_name(req.name))
        if pair is not None:
            new_reqs.append(dc_replace(req, name=pair.replacement))
        else:
            new_reqs.append(req)
    seen: set[str] = set()
    for req in new_reqs:
        key = _norm_name(req.name)
        if key in seen:
            raise SchemaError("requirements", f"replacement creates duplicate {req.name!r}")
        seen.add(key)

    new_steps = tuple(
        StepNode(index=s.index, text=rewritten_steps.get(s.index, s.text)) for s in task.steps
    )
    return dc_replace(task, steps=new_steps, requirements=tuple(new_reqs))
