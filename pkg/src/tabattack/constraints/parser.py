"""Recursive-descent parser for the constraint DSL.

One constraint per line, ``#`` starts a comment. Precedence from loosest to
tightest: ``or``, ``and``, comparison / ``in``, ``+ -``, ``* /``, unary minus.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .nodes import And, BinOp, Cmp, Const, Feature, Member, Or, OrigFeature


class ConstraintSyntaxError(ValueError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class UnknownFeatureError(ConstraintSyntaxError):
    def __init__(self, name: str, line: int, column: int):
        super().__init__(f"unknown feature {name!r}", line, column)
        self.name = name


class ConstraintTypeError(ConstraintSyntaxError):
    pass


_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_.]*)
  | (?P<op><=|>=|!=|==|≤|≥|≠|∧|∨|∈|[<>=+\-*/(){},])
    """,
    re.VERBOSE,
)
_ALIASES = {"==": "=", "≤": "<=", "≥": ">=", "≠": "!=", "∧": "and", "∨": "or", "∈": "in"}
_KEYWORDS = {"and", "or", "in", "orig"}
_CMP = {"<", "<=", "=", "!=", ">=", ">"}


@dataclass
class _Tok:
    kind: str  # num, ident, op, kw, end
    text: str
    col: int


def _tokenize(src: str, line: int) -> list[_Tok]:
    toks = []
    pos = 0
    while pos < len(src):
        m = _TOKEN_RE.match(src, pos)
        if m is None:
            raise ConstraintSyntaxError(f"unexpected character {src[pos]!r}", line, pos + 1)
        kind = m.lastgroup
        text = m.group()
        if kind != "ws":
            text = _ALIASES.get(text, text)
            if kind == "ident" and text in _KEYWORDS:
                kind = "kw"
            elif kind == "op" and text in ("and", "or", "in"):
                kind = "kw"
            toks.append(_Tok(kind, text, pos + 1))
        pos = m.end()
    toks.append(_Tok("end", "", len(src) + 1))
    return toks


_BOOL = (Cmp, Member, And, Or)


class _Parser:
    def __init__(self, src: str, line: int, index: dict[str, int]):
        self.toks = _tokenize(src, line)
        self.i = 0
        self.line = line
        self.index = index

    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def error(self, msg, tok=None, cls=ConstraintSyntaxError):
        tok = tok or self.tok
        return cls(msg, self.line, tok.col)

    def accept(self, text) -> _Tok | None:
        if self.tok.text == text and self.tok.kind in ("op", "kw"):
            t = self.tok
            self.i += 1
            return t
        return None

    def expect(self, text) -> _Tok:
        t = self.accept(text)
        if t is None:
            found = self.tok.text or "end of line"
            raise self.error(f"expected {text!r}, found {found!r}")
        return t

    def feature(self, tok: _Tok) -> int:
        if tok.text not in self.index:
            raise UnknownFeatureError(tok.text, self.line, tok.col)
        return self.index[tok.text]

    def numeric(self, node, tok):
        if isinstance(node, _BOOL):
            raise self.error("boolean where numeric expected", tok, ConstraintTypeError)
        return node

    def boolean(self, node, tok):
        if not isinstance(node, _BOOL):
            raise self.error("numeric where boolean expected", tok, ConstraintTypeError)
        return node

    def parse(self):
        start = self.tok
        node = self.boolean(self.disjunction(), start)
        if self.tok.kind != "end":
            raise self.error(f"unexpected {self.tok.text!r}")
        return node

    def disjunction(self):
        start = self.tok
        node = self.conjunction()
        while self.accept("or") is not None:
            rhs_tok = self.tok
            node = Or(self.boolean(node, start), self.boolean(self.conjunction(), rhs_tok))
        return node

    def conjunction(self):
        start = self.tok
        node = self.comparison()
        while self.accept("and") is not None:
            rhs_tok = self.tok
            node = And(self.boolean(node, start), self.boolean(self.comparison(), rhs_tok))
        return node

    def comparison(self):
        start = self.tok
        left = self.additive()
        if self.tok.kind == "op" and self.tok.text in _CMP:
            op = self.tok.text
            self.i += 1
            rhs_tok = self.tok
            right = self.additive()
            return Cmp(op, self.numeric(left, start), self.numeric(right, rhs_tok))
        if self.accept("in") is not None:
            if not isinstance(left, Feature):
                raise self.error("membership needs a feature name on the left", start)
            self.expect("{")
            values = [self.numeric(self.additive(), self.tok)]
            while self.accept(",") is not None:
                values.append(self.numeric(self.additive(), self.tok))
            self.expect("}")
            return Member(left.index, tuple(values))
        return left

    def additive(self):
        start = self.tok
        node = self.multiplicative()
        while self.tok.kind == "op" and self.tok.text in ("+", "-"):
            op = self.tok.text
            self.i += 1
            rhs_tok = self.tok
            node = BinOp(op, self.numeric(node, start), self.numeric(self.multiplicative(), rhs_tok))
        return node

    def multiplicative(self):
        start = self.tok
        node = self.unary()
        while self.tok.kind == "op" and self.tok.text in ("*", "/"):
            op = self.tok.text
            self.i += 1
            rhs_tok = self.tok
            node = BinOp(op, self.numeric(node, start), self.numeric(self.unary(), rhs_tok))
        return node

    def unary(self):
        if self.accept("-") is not None:
            tok = self.tok
            operand = self.numeric(self.unary(), tok)
            if isinstance(operand, Const):
                return Const(-operand.value)
            return BinOp("-", Const(0.0), operand)
        return self.primary()

    def primary(self):
        tok = self.tok
        if tok.kind == "num":
            self.i += 1
            return Const(float(tok.text))
        if tok.kind == "kw" and tok.text == "orig":
            self.i += 1
            self.expect("(")
            name = self.tok
            if name.kind != "ident":
                raise self.error("expected a feature name inside orig(...)")
            self.i += 1
            self.expect(")")
            return OrigFeature(self.feature(name))
        if tok.kind == "ident":
            self.i += 1
            return Feature(self.feature(tok))
        if self.accept("(") is not None:
            node = self.disjunction()
            self.expect(")")
            return node
        found = tok.text or "end of line"
        raise self.error(f"unexpected {found!r}")


def parse_constraint(text: str, names, line: int = 1):
    """Parse a single constraint formula."""
    index = {n: i for i, n in enumerate(names)}
    return _Parser(text, line, index).parse()


def parse_lines(text: str, names) -> list:
    out = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0]
        if body.strip():
            out.append(parse_constraint(body, names, lineno))
    return out
