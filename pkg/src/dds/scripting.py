"""Sandboxed expression language for workflow conditions and consequences.

Expression-only: no loops, no user functions, no I/O, no access to anything
outside the evaluation context. Conditions evaluate to a boolean; consequence
scripts evaluate to a list of predefined-step requests that the execution
engine applies afterwards. Scripts themselves can never mutate state.

Grammar (informal):

    expr     := "if" expr "then" expr "else" expr | or
    or       := and ("or" and)*
    and      := not ("and" not)*
    not      := "not" not | cmp
    cmp      := add (("=="|"!="|"<"|"<="|">"|">=") add)?
    add      := mul (("+"|"-") mul)*
    mul      := unary (("*"|"/") unary)*
    unary    := "-" unary | postfix
    postfix  := primary ("." IDENT | "[" expr "]")*
    primary  := INT | FLOAT | STRING | "true" | "false" | IDENT
              | "(" expr ")" | "[" (expr ("," expr)*)? "]"
              | "step" KIND "(" (expr ("," expr)*)? ")"

Numeric semantics are strict: integers and floats never mix, comparisons and
arithmetic across kinds raise TypeMismatch. Integer division floors.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .errors import DivisionByZero, ParseError, ScriptError, TypeMismatch, UnknownPath
from .model import PredefinedStep

MAX_EVAL_STEPS = 10_000

KEYWORDS = {"if", "then", "else", "and", "or", "not", "true", "false", "step"}

# Positional parameters per step constructor; trailing ones may be omitted.
STEP_SIGNATURES = {
    "WriteProperty": (("name", "value"), 2),
    "AddMemberToCollection": (("collection", "target", "slot", "member-properties"), 2),
    "RemoveMemberFromCollection": (("collection", "slot"), 2),
    "CreateItemFromDescription": (("description", "version", "name", "properties"), 3),
    "ImportModule": (("module", "version"), 2),
}


# --- AST ---------------------------------------------------------------


@dataclass(frozen=True)
class Lit:
    value: object


@dataclass(frozen=True)
class Name:
    ident: str


@dataclass(frozen=True)
class Attr:
    obj: object
    name: str


@dataclass(frozen=True)
class Index:
    obj: object
    index: object


@dataclass(frozen=True)
class Unary:
    op: str
    operand: object


@dataclass(frozen=True)
class Binary:
    op: str
    left: object
    right: object


@dataclass(frozen=True)
class Cond:
    test: object
    then: object
    orelse: object


@dataclass(frozen=True)
class ListExpr:
    items: tuple


@dataclass(frozen=True)
class StepCtor:
    kind: str
    args: tuple


# --- Tokenizer ---------------------------------------------------------


@dataclass(frozen=True)
class _Token:
    kind: str  # "num" | "str" | "ident" | "op" | "end"
    text: str
    value: object
    pos: int


_TWO_CHAR_OPS = ("==", "!=", "<=", ">=")
_ONE_CHAR_OPS = "<>+-*/()[].,"


def _tokenize(source: str) -> list[_Token]:
    tokens = []
    i, n = 0, len(source)
    while i < n:
        ch = source[i]
        if ch.isspace():
            i += 1
            continue
        if source[i : i + 2] in _TWO_CHAR_OPS:
            tokens.append(_Token("op", source[i : i + 2], None, i))
            i += 2
            continue
        if ch in _ONE_CHAR_OPS:
            tokens.append(_Token("op", ch, None, i))
            i += 1
            continue
        if ch.isdigit():
            j = i
            while j < n and source[j].isdigit():
                j += 1
            if j < n and source[j] == "." and j + 1 < n and source[j + 1].isdigit():
                j += 1
                while j < n and source[j].isdigit():
                    j += 1
                tokens.append(_Token("num", source[i:j], float(source[i:j]), i))
            else:
                tokens.append(_Token("num", source[i:j], int(source[i:j]), i))
            i = j
            continue
        if ch == '"':
            j = i + 1
            out = []
            while j < n and source[j] != '"':
                if source[j] == "\\":
                    if j + 1 >= n:
                        raise ParseError("unterminated escape", j)
                    esc = source[j + 1]
                    mapped = {"n": "\n", "t": "\t", '"': '"', "\\": "\\"}.get(esc)
                    if mapped is None:
                        raise ParseError(f"bad escape \\{esc}", j)
                    out.append(mapped)
                    j += 2
                else:
                    out.append(source[j])
                    j += 1
            if j >= n:
                raise ParseError("unterminated string", i)
            tokens.append(_Token("str", source[i : j + 1], "".join(out), i))
            i = j + 1
            continue
        if ch.isalpha() or ch == "_":
            j = i
            while j < n and (source[j].isalnum() or source[j] == "_"):
                j += 1
            tokens.append(_Token("ident", source[i:j], source[i:j], i))
            i = j
            continue
        raise ParseError(f"unexpected character {ch!r}", i)
    tokens.append(_Token("end", "", None, n))
    return tokens


# --- Parser ------------------------------------------------------------


class _Parser:
    def __init__(self, tokens: list[_Token]):
        self.tokens = tokens
        self.i = 0

    @property
    def cur(self) -> _Token:
        return self.tokens[self.i]

    def _advance(self) -> _Token:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def _eat_op(self, text: str) -> None:
        if self.cur.kind != "op" or self.cur.text != text:
            raise ParseError(f"expected {text!r}", self.cur.pos)
        self._advance()

    def _eat_kw(self, word: str) -> None:
        if self.cur.kind != "ident" or self.cur.text != word:
            raise ParseError(f"expected {word!r}", self.cur.pos)
        self._advance()

    def _at_kw(self, word: str) -> bool:
        return self.cur.kind == "ident" and self.cur.text == word

    def parse(self):
        node = self.expr()
        if self.cur.kind != "end":
            raise ParseError(f"trailing input {self.cur.text!r}", self.cur.pos)
        return node

    def expr(self):
        if self._at_kw("if"):
            self._advance()
            test = self.expr()
            self._eat_kw("then")
            then = self.expr()
            self._eat_kw("else")
            orelse = self.expr()
            return Cond(test, then, orelse)
        return self.or_expr()

    def or_expr(self):
        node = self.and_expr()
        while self._at_kw("or"):
            self._advance()
            node = Binary("or", node, self.and_expr())
        return node

    def and_expr(self):
        node = self.not_expr()
        while self._at_kw("and"):
            self._advance()
            node = Binary("and", node, self.not_expr())
        return node

    def not_expr(self):
        if self._at_kw("not"):
            self._advance()
            return Unary("not", self.not_expr())
        return self.cmp_expr()

    def cmp_expr(self):
        node = self.add_expr()
        if self.cur.kind == "op" and self.cur.text in ("==", "!=", "<", "<=", ">", ">="):
            op = self._advance().text
            node = Binary(op, node, self.add_expr())
        return node

    def add_expr(self):
        node = self.mul_expr()
        while self.cur.kind == "op" and self.cur.text in ("+", "-"):
            op = self._advance().text
            node = Binary(op, node, self.mul_expr())
        return node

    def mul_expr(self):
        node = self.unary_expr()
        while self.cur.kind == "op" and self.cur.text in ("*", "/"):
            op = self._advance().text
            node = Binary(op, node, self.unary_expr())
        return node

    def unary_expr(self):
        if self.cur.kind == "op" and self.cur.text == "-":
            pos = self._advance().pos
            return Unary("-", self.unary_expr())
        return self.postfix_expr()

    def postfix_expr(self):
        node = self.primary()
        while True:
            if self.cur.kind == "op" and self.cur.text == ".":
                self._advance()
                if self.cur.kind != "ident":
                    raise ParseError("expected attribute name after '.'", self.cur.pos)
                node = Attr(node, self._advance().text)
            elif self.cur.kind == "op" and self.cur.text == "[":
                self._advance()
                idx = self.expr()
                self._eat_op("]")
                node = Index(node, idx)
            else:
                return node

    def primary(self):
        tok = self.cur
        if tok.kind == "num" or tok.kind == "str":
            self._advance()
            return Lit(tok.value)
        if tok.kind == "op" and tok.text == "(":
            self._advance()
            node = self.expr()
            self._eat_op(")")
            return node
        if tok.kind == "op" and tok.text == "[":
            self._advance()
            items = []
            if not (self.cur.kind == "op" and self.cur.text == "]"):
                items.append(self.expr())
                while self.cur.kind == "op" and self.cur.text == ",":
                    self._advance()
                    items.append(self.expr())
            self._eat_op("]")
            return ListExpr(tuple(items))
        if tok.kind == "ident":
            if tok.text == "true":
                self._advance()
                return Lit(True)
            if tok.text == "false":
                self._advance()
                return Lit(False)
            if tok.text == "step":
                self._advance()
                if self.cur.kind != "ident" or self.cur.text not in STEP_SIGNATURES:
                    raise ParseError("expected predefined step kind after 'step'", self.cur.pos)
                kind = self._advance().text
                self._eat_op("(")
                args = []
                if not (self.cur.kind == "op" and self.cur.text == ")"):
                    args.append(self.expr())
                    while self.cur.kind == "op" and self.cur.text == ",":
                        self._advance()
                        args.append(self.expr())
                self._eat_op(")")
                params, min_arity = STEP_SIGNATURES[kind]
                if not (min_arity <= len(args) <= len(params)):
                    raise ParseError(
                        f"{kind} takes {min_arity}..{len(params)} arguments, got {len(args)}",
                        tok.pos,
                    )
                return StepCtor(kind, tuple(args))
            if tok.text in KEYWORDS:
                raise ParseError(f"unexpected keyword {tok.text!r}", tok.pos)
            self._advance()
            return Name(tok.text)
        raise ParseError(f"unexpected token {tok.text!r}" if tok.text else "unexpected end of input", tok.pos)


def parse_script(source: str):
    """Parse a script source string into an AST. Raises ParseError."""
    return _Parser(_tokenize(source)).parse()


def to_source(node) -> str:
    """Render an AST back to source. Fully parenthesized; reparsing yields a
    structurally equal tree."""
    if isinstance(node, Lit):
        v = node.value
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, str):
            escaped = v.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n").replace("\t", "\\t")
            return f'"{escaped}"'
        if isinstance(v, float):
            text = repr(v)
            return text if "." in text else text + ".0"
        return repr(v)
    if isinstance(node, Name):
        return node.ident
    if isinstance(node, Attr):
        return f"{to_source(node.obj)}.{node.name}"
    if isinstance(node, Index):
        return f"{to_source(node.obj)}[{to_source(node.index)}]"
    if isinstance(node, Unary):
        if node.op == "not":
            return f"(not {to_source(node.operand)})"
        return f"(-{to_source(node.operand)})"
    if isinstance(node, Binary):
        return f"({to_source(node.left)} {node.op} {to_source(node.right)})"
    if isinstance(node, Cond):
        return f"(if {to_source(node.test)} then {to_source(node.then)} else {to_source(node.orelse)})"
    if isinstance(node, ListExpr):
        return "[" + ", ".join(to_source(i) for i in node.items) + "]"
    if isinstance(node, StepCtor):
        return f"step {node.kind}(" + ", ".join(to_source(a) for a in node.args) + ")"
    raise TypeError(f"not an AST node: {node!r}")


# --- Evaluation --------------------------------------------------------


@dataclass(frozen=True)
class EvalContext:
    """Read-only bindings visible to a script. ``outcome`` is the document
    just submitted, ``item`` a view of the executing item, ``iteration`` the
    loop counter at the evaluation point."""

    outcome: object = None
    item: object = None
    iteration: int = 0

    def bindings(self) -> dict:
        return {"outcome": self.outcome, "item": self.item, "iteration": self.iteration}


def _kind_of(value) -> str:
    if isinstance(value, bool):
        return "boolean"
    if isinstance(value, int):
        return "integer"
    if isinstance(value, float):
        return "number"
    if isinstance(value, str):
        return "string"
    if isinstance(value, (list, tuple)):
        return "list"
    if isinstance(value, dict):
        return "record"
    if isinstance(value, PredefinedStep):
        return "step"
    return type(value).__name__


class _Evaluator:
    def __init__(self, ctx: EvalContext):
        self.bindings = ctx.bindings()
        self.steps = 0

    def run(self, node):
        self.steps += 1
        if self.steps > MAX_EVAL_STEPS:
            raise ScriptError("evaluation step budget exceeded")
        if isinstance(node, Lit):
            return node.value
        if isinstance(node, Name):
            if node.ident not in self.bindings:
                raise UnknownPath(node.ident)
            return self.bindings[node.ident]
        if isinstance(node, Attr):
            obj = self.run(node.obj)
            if not isinstance(obj, dict):
                raise TypeMismatch(f"cannot read '.{node.name}' on {_kind_of(obj)}")
            if node.name not in obj:
                raise UnknownPath(node.name)
            return obj[node.name]
        if isinstance(node, Index):
            obj = self.run(node.obj)
            idx = self.run(node.index)
            if not isinstance(obj, (list, tuple)):
                raise TypeMismatch(f"cannot index {_kind_of(obj)}")
            if isinstance(idx, bool) or not isinstance(idx, int):
                raise TypeMismatch(f"list index must be integer, got {_kind_of(idx)}")
            if not (0 <= idx < len(obj)):
                raise UnknownPath(f"index {idx} out of range")
            return obj[idx]
        if isinstance(node, Unary):
            if node.op == "not":
                val = self.run(node.operand)
                if not isinstance(val, bool):
                    raise TypeMismatch(f"'not' needs boolean, got {_kind_of(val)}")
                return not val
            val = self.run(node.operand)
            if isinstance(val, bool) or not isinstance(val, (int, float)):
                raise TypeMismatch(f"unary '-' needs a number, got {_kind_of(val)}")
            return -val
        if isinstance(node, Binary):
            return self._binary(node)
        if isinstance(node, Cond):
            test = self.run(node.test)
            if not isinstance(test, bool):
                raise TypeMismatch(f"condition must be boolean, got {_kind_of(test)}")
            return self.run(node.then) if test else self.run(node.orelse)
        if isinstance(node, ListExpr):
            return [self.run(i) for i in node.items]
        if isinstance(node, StepCtor):
            return self._step(node)
        raise ScriptError(f"not an AST node: {node!r}")

    def _binary(self, node: Binary):
        op = node.op
        if op in ("and", "or"):
            left = self.run(node.left)
            if not isinstance(left, bool):
                raise TypeMismatch(f"'{op}' needs booleans, got {_kind_of(left)}")
            if op == "and" and not left:
                return False
            if op == "or" and left:
                return True
            right = self.run(node.right)
            if not isinstance(right, bool):
                raise TypeMismatch(f"'{op}' needs booleans, got {_kind_of(right)}")
            return right
        left = self.run(node.left)
        right = self.run(node.right)
        lk, rk = _kind_of(left), _kind_of(right)
        if lk != rk:
            raise TypeMismatch(f"{lk} {op} {rk}")
        if op == "==":
            return left == right
        if op == "!=":
            return left != right
        if op in ("<", "<=", ">", ">="):
            if lk not in ("integer", "number", "string"):
                raise TypeMismatch(f"cannot order {lk} values")
            if op == "<":
                return left < right
            if op == "<=":
                return left <= right
            if op == ">":
                return left > right
            return left >= right
        if op == "+":
            if lk not in ("integer", "number", "string"):
                raise TypeMismatch(f"cannot add {lk} values")
            return left + right
        if lk not in ("integer", "number"):
            raise TypeMismatch(f"cannot apply '{op}' to {lk} values")
        if op == "-":
            return left - right
        if op == "*":
            return left * right
        if op == "/":
            if right == 0:
                raise DivisionByZero(f"{left} / {right}")
            if lk == "integer":
                return left // right
            return left / right
        raise ScriptError(f"unknown operator {op!r}")

    def _step(self, node: StepCtor) -> PredefinedStep:
        params, _ = STEP_SIGNATURES[node.kind]
        values = [self.run(a) for a in node.args]
        args = {}
        for name, value in zip(params, values):
            args[name] = value
        _check_step_args(node.kind, args)
        return PredefinedStep(kind=node.kind, args=args)


def _check_step_args(kind: str, args: dict) -> None:
    def need(name, kinds):
        if name in args and _kind_of(args[name]) not in kinds:
            raise TypeMismatch(f"{kind} argument '{name}' must be {' or '.join(kinds)}")

    need("name", ("string",))
    need("collection", ("string",))
    need("target", ("string",))
    need("description", ("string",))
    need("version", ("string",))
    need("module", ("string",))
    need("slot", ("integer",))
    need("member-properties", ("list",))
    need("properties", ("list",))
    if kind == "WriteProperty" and _kind_of(args.get("value")) not in (
        "string",
        "integer",
        "number",
        "boolean",
    ):
        raise TypeMismatch("WriteProperty value must be a scalar")


def evaluate(ast, ctx: EvalContext):
    """Evaluate an AST in a context. Pure; bounded by MAX_EVAL_STEPS."""
    return _Evaluator(ctx).run(ast)


def eval_condition(ast, ctx: EvalContext) -> bool:
    value = evaluate(ast, ctx)
    if not isinstance(value, bool):
        raise TypeMismatch(f"condition evaluated to {_kind_of(value)}, expected boolean")
    return value


def eval_consequence(ast, ctx: EvalContext) -> list[PredefinedStep]:
    value = evaluate(ast, ctx)
    if isinstance(value, PredefinedStep):
        return [value]
    if isinstance(value, list) and all(isinstance(v, PredefinedStep) for v in value):
        return value
    raise TypeMismatch("consequence script must return predefined step requests")


@dataclass(frozen=True)
class ScriptDef:
    """A named, versioned script document."""

    name: str
    version: int
    source: str
    kind: str  # "condition" | "consequence"

    def to_doc(self) -> dict:
        return {
            "$kind": "script-def",
            "kind": self.kind,
            "name": self.name,
            "source": self.source,
            "version": self.version,
        }


def parse_script_doc(doc: dict) -> ScriptDef:
    if not isinstance(doc, dict):
        raise ParseError("script-def must be a record", 0)
    name = doc.get("name")
    kind = doc.get("kind")
    source = doc.get("source")
    if not isinstance(name, str) or not name:
        raise ParseError("script-def needs a non-empty name", 0)
    if kind not in ("condition", "consequence"):
        raise ParseError("script-def kind must be condition or consequence", 0)
    if not isinstance(source, str):
        raise ParseError("script-def source must be a string", 0)
    parse_script(source)  # must parse
    return ScriptDef(name=name, version=int(doc.get("version", 0)), source=source, kind=kind)
