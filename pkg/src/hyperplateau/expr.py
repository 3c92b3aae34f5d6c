"""Expressions psi(x1..xn, u): tokenizer, recursive-descent parser, printer,
symbolic derivatives and vectorized evaluation.

Grammar (loosest first)::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | power
    power  := atom ('^' unary)?          # right associative
    atom   := NUMBER | NAME | NAME '(' expr ')' | '(' expr ')'
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

FUNCTIONS = ("sqrt", "exp", "log")


class ParseError(ValueError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{message} at line {line}, column {column}")
        self.message = message
        self.line = line
        self.column = column


class EvaluationError(ValueError):
    def __init__(self, tag: str, message: str):
        super().__init__(f"{tag}: {message}")
        self.tag = tag


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Unary:
    op: str  # '-', 'sqrt', 'exp', 'log'
    arg: "Node"


@dataclass(frozen=True)
class Binary:
    op: str  # '+', '-', '*', '/', '^'
    left: "Node"
    right: "Node"


Node = Const | Var | Unary | Binary


# tokenizer -----------------------------------------------------------------

_TOKEN = re.compile(
    r"(?P<ws>[ \t\r]+)|(?P<nl>\n)|(?P<num>(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^(),])"
)


@dataclass
class Token:
    kind: str
    text: str
    line: int
    column: int


def tokenize(text: str) -> list[Token]:
    tokens = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        if kind == "nl":
            line += 1
            line_start = m.end()
        elif kind != "ws":
            tokens.append(Token(kind, m.group(), line, pos - line_start + 1))
        pos = m.end()
    tokens.append(Token("end", "", line, pos - line_start + 1))
    return tokens


class _Parser:
    def __init__(self, text: str, variables: set[str]):
        self.tokens = tokenize(text)
        self.i = 0
        self.variables = variables

    def peek(self) -> Token:
        return self.tokens[self.i]

    def take(self) -> Token:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def fail(self, message: str, tok: Token | None = None):
        tok = tok or self.peek()
        raise ParseError(message, tok.line, tok.column)

    def expect(self, text: str) -> Token:
        tok = self.peek()
        if tok.text != text:
            what = "end of input" if tok.kind == "end" else repr(tok.text)
            self.fail(f"expected {text!r}, found {what}")
        return self.take()

    def parse(self) -> Node:
        node = self.expr()
        if self.peek().kind != "end":
            self.fail(f"unexpected {self.peek().text!r}")
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.peek().text in ("+", "-"):
            op = self.take().text
            node = Binary(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.peek().text in ("*", "/"):
            op = self.take().text
            node = Binary(op, node, self.unary())
        return node

    def unary(self) -> Node:
        if self.peek().text == "-":
            self.take()
            nxt, after = self.tokens[self.i], self.tokens[min(self.i + 1, len(self.tokens) - 1)]
            if nxt.kind == "num" and after.text != "^":
                self.take()
                return Const(-float(nxt.text))
            return Unary("-", self.unary())
        return self.power()

    def power(self) -> Node:
        base = self.atom()
        if self.peek().text == "^":
            self.take()
            return Binary("^", base, self.unary())
        return base

    def atom(self) -> Node:
        tok = self.peek()
        if tok.kind == "num":
            self.take()
            return Const(float(tok.text))
        if tok.kind == "name":
            self.take()
            if tok.text in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                if self.peek().text == ",":
                    self.fail(f"{tok.text} takes exactly one argument")
                self.expect(")")
                return Unary(tok.text, arg)
            if tok.text not in self.variables:
                self.fail(f"unknown identifier {tok.text!r}", tok)
            if self.peek().text == "(":
                self.fail(f"{tok.text!r} is not a function")
            return Var(tok.text)
        if tok.text == "(":
            self.take()
            node = self.expr()
            self.expect(")")
            return node
        what = "end of input" if tok.kind == "end" else repr(tok.text)
        self.fail(f"unexpected {what}")


def variables_for(n: int) -> set[str]:
    return {"u"} | {f"x{i + 1}" for i in range(n)}


def parse(text: str, n: int = 2) -> Node:
    return _Parser(text, variables_for(n)).parse()


# printing ------------------------------------------------------------------

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4}


def _fmt_const(v: float) -> str:
    s = repr(float(v))
    return s[:-2] if s.endswith(".0") else s


def to_string(node: Node) -> str:
    s, _ = _print(node)
    return s


def _print(node: Node) -> tuple[str, int]:
    if isinstance(node, Const):
        if node.value < 0 or (node.value == 0 and np.signbit(node.value)):
            return f"({_fmt_const(node.value)})", 5
        return _fmt_const(node.value), 5
    if isinstance(node, Var):
        return node.name, 5
    if isinstance(node, Unary):
        if node.op == "-":
            s, p = _print(node.arg)
            # -(2) stays a negation; a bare -2 would read back as a literal
            if p < _PREC["neg"] or isinstance(node.arg, Const) and not s.startswith("("):
                s = f"({s})"
            return f"-{s}", _PREC["neg"]
        s, _ = _print(node.arg)
        return f"{node.op}({s})", 5
    op = node.op
    prec = _PREC[op]
    ls, lp = _print(node.left)
    rs, rp = _print(node.right)
    if op == "^":
        if lp <= prec:
            ls = f"({ls})"
        if rp < _PREC["neg"]:
            rs = f"({rs})"
        return f"{ls}^{rs}", prec
    if lp < prec:
        ls = f"({ls})"
    if rp <= prec:
        rs = f"({rs})"
    return f"{ls} {op} {rs}", prec


# simplifying constructors ----------------------------------------------------


def _c(node: Node, value: float) -> bool:
    return isinstance(node, Const) and node.value == value


def add(a: Node, b: Node) -> Node:
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value + b.value)
    if _c(a, 0):
        return b
    if _c(b, 0):
        return a
    return Binary("+", a, b)


def sub(a: Node, b: Node) -> Node:
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value - b.value)
    if _c(b, 0):
        return a
    if _c(a, 0):
        return neg(b)
    return Binary("-", a, b)


def neg(a: Node) -> Node:
    if isinstance(a, Const):
        return Const(-a.value)
    if isinstance(a, Unary) and a.op == "-":
        return a.arg
    return Unary("-", a)


def mul(a: Node, b: Node) -> Node:
    if isinstance(b, Const) and not isinstance(a, Const):
        a, b = b, a
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value * b.value)
    if _c(a, 0):
        return Const(0.0)
    if _c(a, 1):
        return b
    if _c(a, -1):
        return neg(b)
    if isinstance(a, Const) and isinstance(b, Binary) and b.op == "*" and isinstance(b.left, Const):
        return mul(Const(a.value * b.left.value), b.right)
    if isinstance(a, Const) and isinstance(b, Unary) and b.op == "-":
        return mul(Const(-a.value), b.arg)
    return Binary("*", a, b)


def div(a: Node, b: Node) -> Node:
    if isinstance(a, Const) and isinstance(b, Const) and b.value != 0:
        return Const(a.value / b.value)
    if _c(a, 0):
        return Const(0.0)
    if _c(b, 1):
        return a
    return Binary("/", a, b)


def power(a: Node, b: Node) -> Node:
    if isinstance(a, Const) and isinstance(b, Const) and a.value > 0:
        return Const(a.value**b.value)
    if _c(b, 0):
        return Const(1.0)
    if _c(b, 1):
        return a
    return Binary("^", a, b)


def depends_on(node: Node, var: str) -> bool:
    if isinstance(node, Const):
        return False
    if isinstance(node, Var):
        return node.name == var
    if isinstance(node, Unary):
        return depends_on(node.arg, var)
    return depends_on(node.left, var) or depends_on(node.right, var)


def differentiate(node: Node, var: str) -> Node:
    """Exact symbolic derivative, folding constants as it goes."""
    if not depends_on(node, var):
        return Const(0.0)
    if isinstance(node, Var):
        return Const(1.0)
    if isinstance(node, Unary):
        da = differentiate(node.arg, var)
        if node.op == "-":
            return neg(da)
        if node.op == "sqrt":
            return div(da, mul(Const(2.0), node))
        if node.op == "exp":
            return mul(da, node)
        if node.op == "log":
            return div(da, node.arg)
        raise ValueError(node.op)
    a, b = node.left, node.right
    da, db = differentiate(a, var), differentiate(b, var)
    if node.op == "+":
        return add(da, db)
    if node.op == "-":
        return sub(da, db)
    if node.op == "*":
        return add(mul(da, b), mul(a, db))
    if node.op == "/":
        return div(sub(mul(da, b), mul(a, db)), power(b, Const(2.0)))
    # power
    if not depends_on(b, var):
        if isinstance(b, Const):
            return mul(mul(b, power(a, Const(b.value - 1.0))), da)
        return mul(mul(b, power(a, sub(b, Const(1.0)))), da)
    # d(a^b) = a^b (b' log a + b a'/a)
    return mul(node, add(mul(db, Unary("log", a)), div(mul(b, da), a)))


# evaluation ------------------------------------------------------------------


def evaluate(node: Node, env: dict[str, np.ndarray]):
    if isinstance(node, Const):
        return node.value
    if isinstance(node, Var):
        return env[node.name]
    if isinstance(node, Unary):
        a = evaluate(node.arg, env)
        if node.op == "-":
            return -a
        if node.op == "sqrt":
            if np.any(np.asarray(a) < 0):
                raise EvaluationError("domain", "sqrt of a negative number")
            return np.sqrt(a)
        if node.op == "exp":
            return np.exp(a)
        if np.any(np.asarray(a) <= 0):
            raise EvaluationError("domain", "log of a nonpositive number")
        return np.log(a)
    a = evaluate(node.left, env)
    b = evaluate(node.right, env)
    if node.op == "+":
        return a + b
    if node.op == "-":
        return a - b
    if node.op == "*":
        return a * b
    if node.op == "/":
        if np.any(np.asarray(b) == 0):
            raise EvaluationError("division", "division by zero")
        return a / b
    aa = np.asarray(a, dtype=float)
    bb = np.asarray(b, dtype=float)
    integral = np.all(bb == np.round(bb))
    if np.any(aa < 0) and not integral:
        raise EvaluationError("domain", "negative base with non-integer exponent")
    if np.any((aa == 0) & (bb < 0)):
        raise EvaluationError("division", "zero to a negative power")
    return np.power(aa, bb)


class RhsSpec:
    """psi(x, u) with symbolic partials psi_u and psi_{x_i}."""

    def __init__(self, text: str, n: int = 2):
        self.text = text
        self.n = n
        self.ast = parse(text, n)
        self.ast_u = differentiate(self.ast, "u")
        self.ast_x = [differentiate(self.ast, f"x{i + 1}") for i in range(n)]

    def __repr__(self) -> str:
        return f"RhsSpec({self.text!r}, n={self.n})"

    def _env(self, x, u):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        env = {"u": u}
        for i in range(self.n):
            env[f"x{i + 1}"] = x[..., i]
        return env, np.broadcast_shapes(x.shape[:-1], u.shape)

    def _eval(self, node, x, u):
        env, shape = self._env(x, u)
        return np.broadcast_to(np.asarray(evaluate(node, env), dtype=float), shape)[()]

    def value(self, x, u):
        return self._eval(self.ast, x, u)

    def d_u(self, x, u):
        return self._eval(self.ast_u, x, u)

    def d_x(self, i: int, x, u):
        return self._eval(self.ast_x[i], x, u)

    def check_positive(self, x, u) -> float:
        vals = self.value(x, u)
        lo = float(np.min(vals))
        if lo <= 0:
            raise EvaluationError("positivity", f"psi is not positive on the probe sample (min {lo:g})")
        return lo

    def scaled(self, factor: float) -> "RhsSpec":
        return RhsSpec(f"{_fmt_const(factor)} * ({self.text})", self.n)
