"""Action-code DSL: grammar, parser, renderer and action-space validation.

An action code is a single call expression such as ``search("veggie pizza")``
or ``step_select(2)``. The grammar is deliberately tiny::

    action := name "(" [arg ("," arg)*] ")"
    name   := [a-z][a-z0-9_]*
    arg    := string | integer
    string := '"' (escape | any char except '"' and '\\')* '"'
    int    := ["-"|"+"] digits

Whitespace between tokens is tolerated on parse and stripped on render.
Generative backends may append prose after the action; the parser takes the
first complete action and logs a warning about trailing text.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from typing import Iterable, Union

logger = logging.getLogger(__name__)

ArgValue = Union[str, int]

ARG_KINDS = ("str", "int")

_NAME_RE = re.compile(r"[a-z][a-z0-9_]*")


class ParseError(ValueError):
    """Raised when a string is not a well-formed action code."""

    def __init__(self, reason: str, text: str, pos: int):
        # pos is a character index; report the byte offset into the utf-8 form
        self.offset = len(text[:pos].encode("utf-8"))
        self.reason = reason
        super().__init__(f"{reason} at offset {self.offset}")


@dataclass(frozen=True)
class ActionCode:
    """A parsed system action: lowercase name plus ordered literal args."""

    name: str
    args: tuple[ArgValue, ...] = ()

    def __post_init__(self):
        if not _NAME_RE.fullmatch(self.name):
            raise ValueError(f"invalid action name: {self.name!r}")
        for a in self.args:
            if isinstance(a, bool) or not isinstance(a, (str, int)):
                raise ValueError(f"invalid argument literal: {a!r}")

    @property
    def arg_kinds(self) -> tuple[str, ...]:
        return tuple("str" if isinstance(a, str) else "int" for a in self.args)


@dataclass(frozen=True)
class Signature:
    """A registered executable action: name plus expected argument kinds."""

    name: str
    arg_kinds: tuple[str, ...] = ()

    def __post_init__(self):
        if not _NAME_RE.fullmatch(self.name):
            raise ValueError(f"invalid signature name: {self.name!r}")
        for k in self.arg_kinds:
            if k not in ARG_KINDS:
                raise ValueError(f"unknown argument kind: {k!r}")


@dataclass(frozen=True)
class ValidationVerdict:
    """Outcome of checking an action against the action space.

    ``kind`` is one of ``in_space``, ``out_of_space`` or
    ``arity_or_type_mismatch``. The two non-in-space kinds both route to the
    fallback handler but are logged distinctly.
    """

    kind: str
    name: str
    expected: tuple[str, ...] | None = None
    got: tuple[str, ...] | None = None

    @property
    def in_space(self) -> bool:
        return self.kind == "in_space"


class ActionSpace:
    """Immutable registry of executable action signatures, unique by name."""

    def __init__(self, signatures: Iterable[Signature]):
        self._by_name: dict[str, Signature] = {}
        for sig in signatures:
            if sig.name in self._by_name:
                raise ValueError(f"duplicate signature name: {sig.name}")
            self._by_name[sig.name] = sig
        if not self._by_name:
            raise ValueError("action space must not be empty")

    def lookup(self, name: str) -> Signature | None:
        return self._by_name.get(name)

    def names(self) -> tuple[str, ...]:
        return tuple(self._by_name)

    def __len__(self) -> int:
        return len(self._by_name)

    def __contains__(self, name: str) -> bool:
        return name in self._by_name

    @classmethod
    def from_config_text(cls, text: str) -> "ActionSpace":
        """Parse one signature per line: ``name(kind,...)`` with kinds str|int.

        Blank lines and ``#`` comments are ignored.
        """
        line_re = re.compile(r"^([a-z][a-z0-9_]*)\(([a-z, ]*)\)$")
        sigs = []
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            m = line_re.match(line)
            if not m:
                raise ValueError(f"line {lineno}: bad signature {line!r}")
            name, kinds_part = m.group(1), m.group(2).strip()
            kinds = tuple(k.strip() for k in kinds_part.split(",") if k.strip())
            sigs.append(Signature(name, kinds))
        return cls(sigs)


#: Default executable space; configurable per deployment via a signature file.
DEFAULT_ACTION_SPACE = ActionSpace(
    [
        Signature("search", ("str",)),
        Signature("select", ("int",)),
        Signature("step_select", ("int",)),
        Signature("next", ()),
        Signature("previous", ()),
        Signature("repeat", ()),
        Signature("answer_question", ()),
        Signature("replace", ("str",)),
        Signature("confirm", ("str",)),
        Signature("stop", ()),
        Signature("chit_chat", ()),
        Signature("fallback", ()),
    ]
)


def _skip_ws(text: str, pos: int) -> int:
    while pos < len(text) and text[pos].isspace():
        pos += 1
    return pos


def parse_action(text: str) -> ActionCode:
    """Parse a raw generation string into a canonical ActionCode.

    Total over arbitrary input: returns an ActionCode or raises ParseError,
    never anything else. When a complete action is followed by extra text,
    the extra text is ignored with a warning (decoder-style backends like to
    append explanations).
    """
    if not isinstance(text, str):
        raise ParseError("input is not a string", "", 0)
    pos = _skip_ws(text, 0)
    if pos >= len(text):
        raise ParseError("empty input", text, pos)
    m = _NAME_RE.match(text, pos)
    if not m:
        raise ParseError("expected action name", text, pos)
    name = m.group(0)
    pos = _skip_ws(text, m.end())
    if pos >= len(text) or text[pos] != "(":
        raise ParseError("expected '(' after action name", text, pos)
    pos = _skip_ws(text, pos + 1)
    args: list[ArgValue] = []
    if pos < len(text) and text[pos] == ")":
        pos += 1
    else:
        while True:
            arg, pos = _parse_arg(text, pos)
            args.append(arg)
            pos = _skip_ws(text, pos)
            if pos >= len(text):
                raise ParseError("unterminated argument list", text, pos)
            if text[pos] == ",":
                pos = _skip_ws(text, pos + 1)
                continue
            if text[pos] == ")":
                pos += 1
                break
            raise ParseError("expected ',' or ')'", text, pos)
    rest = text[pos:]
    if rest.strip():
        logger.warning("ignoring trailing text after action: %r", rest.strip()[:80])
    return ActionCode(name, tuple(args))


def _parse_arg(text: str, pos: int) -> tuple[ArgValue, int]:
    if pos >= len(text):
        raise ParseError("expected argument", text, pos)
    ch = text[pos]
    if ch == '"':
        return _parse_string(text, pos)
    if ch in "+-" or ch.isdigit():
        m = re.compile(r"[+-]?[0-9]+").match(text, pos)
        if not m:
            raise ParseError("malformed integer", text, pos)
        return int(m.group(0)), m.end()
    raise ParseError("unquoted string argument", text, pos)


def _parse_string(text: str, pos: int) -> tuple[str, int]:
    # pos sits on the opening quote
    out: list[str] = []
    i = pos + 1
    while i < len(text):
        ch = text[i]
        if ch == "\\":
            if i + 1 >= len(text):
                raise ParseError("dangling escape", text, i)
            out.append(text[i + 1])
            i += 2
            continue
        if ch == '"':
            return "".join(out), i + 1
        out.append(ch)
        i += 1
    raise ParseError("unterminated string", text, pos)


def render_action(action: ActionCode) -> str:
    """Canonical serialization: double-quoted strings, no space around commas.

    ``parse_action(render_action(a)) == a`` for every valid ActionCode.
    """
    parts = []
    for a in action.args:
        if isinstance(a, str):
            escaped = a.replace("\\", "\\\\").replace('"', '\\"')
            parts.append(f'"{escaped}"')
        else:
            parts.append(str(a))
    return f"{action.name}({','.join(parts)})"


def validate_action(action: ActionCode, space: ActionSpace) -> ValidationVerdict:
    """Check an action against the space: in-space, unknown, or bad signature."""
    sig = space.lookup(action.name)
    if sig is None:
        return ValidationVerdict("out_of_space", action.name)
    if action.arg_kinds != sig.arg_kinds:
        return ValidationVerdict(
            "arity_or_type_mismatch",
            action.name,
            expected=sig.arg_kinds,
            got=action.arg_kinds,
        )
    return ValidationVerdict("in_space", action.name)
