"""A small s-expression reader shared by the classical and real-valued grammars."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union


class ParseError(ValueError):
    def __init__(self, message: str, position: int | None = None) -> None:
        where = f" at offset {position}" if position is not None else ""
        super().__init__(f"{message}{where}")
        self.position = position


@dataclass(frozen=True)
class Symbol:
    name: str
    pos: int = 0

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True)
class String:
    value: str
    pos: int = 0


@dataclass(frozen=True)
class SList:
    items: tuple["SExpr", ...]
    pos: int = 0

    @property
    def head(self) -> str | None:
        if self.items and isinstance(self.items[0], Symbol):
            return self.items[0].name
        return None


SExpr = Union[Symbol, String, SList]


def _tokens(text: str):
    i, n = 0, len(text)
    while i < n:
        c = text[i]
        if c.isspace():
            i += 1
        elif c in "()":
            yield c, c, i
            i += 1
        elif c == '"':
            start = i
            i += 1
            buf: list[str] = []
            while i < n and text[i] != '"':
                if text[i] == "\\" and i + 1 < n:
                    i += 1
                buf.append(text[i])
                i += 1
            if i >= n:
                raise ParseError("unterminated string", start)
            i += 1
            yield "str", "".join(buf), start
        else:
            start = i
            while i < n and not text[i].isspace() and text[i] not in '()"':
                i += 1
            yield "sym", text[start:i], start


def read(text: str) -> SExpr:
    """Parse exactly one s-expression."""
    stack: list[tuple[int, list[SExpr]]] = []
    result: SExpr | None = None
    for kind, value, pos in _tokens(text):
        if result is not None:
            raise ParseError("trailing input", pos)
        if kind == "(":
            stack.append((pos, []))
            continue
        if kind == ")":
            if not stack:
                raise ParseError("unbalanced ')'", pos)
            start, items = stack.pop()
            node: SExpr = SList(tuple(items), start)
        elif kind == "str":
            node = String(value, pos)
        else:
            node = Symbol(value, pos)
        if stack:
            stack[-1][1].append(node)
        else:
            result = node
    if stack:
        raise ParseError("unbalanced '('", stack[-1][0])
    if result is None:
        raise ParseError("empty input", 0)
    return result


def quote(text: str) -> str:
    return '"' + text.replace("\\", "\\\\").replace('"', '\\"') + '"'
