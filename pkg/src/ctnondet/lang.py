"""Source language: AST, parser, formatter and static checks.

Programs are a set of functions written in a small C-like syntax:

    fn swap(a, b) {
        x = load(a);
        y = load(b);
        store(a, y);
        store(b, x);
    }

Memory reads live in statements (`x = load(e);`, `x = load1(e);`), never in
expressions, so the order of memory events is fixed by statement order.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Union

DEFAULT_WIDTH = 32
WIDTHS = (8, 16, 32)


def mask(value: int, width: int = DEFAULT_WIDTH) -> int:
    return value & ((1 << width) - 1)


def to_signed(value: int, width: int) -> int:
    value = mask(value, width)
    return value - (1 << width) if value >> (width - 1) else value


def word_bytes(width: int) -> int:
    return width // 8


def apply_op(op: str, lhs: int, rhs: int, width: int = DEFAULT_WIDTH) -> int:
    """Evaluate a binary operator on already-masked words."""
    full = (1 << width) - 1
    shift = rhs & (width - 1)
    if op == "add":
        return (lhs + rhs) & full
    if op == "sub":
        return (lhs - rhs) & full
    if op == "mul":
        return (lhs * rhs) & full
    if op == "divu":
        return full if rhs == 0 else lhs // rhs
    if op == "remu":
        return lhs if rhs == 0 else lhs % rhs
    if op == "and":
        return lhs & rhs
    if op == "or":
        return lhs | rhs
    if op == "xor":
        return lhs ^ rhs
    if op == "shl":
        return (lhs << shift) & full
    if op == "shr":
        return lhs >> shift
    if op == "eq":
        return int(lhs == rhs)
    if op == "ne":
        return int(lhs != rhs)
    if op == "ltu":
        return int(lhs < rhs)
    if op == "lts":
        return int(to_signed(lhs, width) < to_signed(rhs, width))
    raise ValueError(f"unknown operator {op!r}")


# operators that leak both operands when evaluated
LEAKY_OPS = frozenset({"divu", "remu"})


# --- expressions -----------------------------------------------------------

@dataclass(frozen=True)
class Literal:
    value: int


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class BinOp:
    op: str
    lhs: "Expr"
    rhs: "Expr"


Expr = Union[Literal, Var, BinOp]


# --- statements ------------------------------------------------------------

@dataclass(frozen=True)
class Skip:
    pass


@dataclass(frozen=True)
class Assign:
    var: str
    expr: Expr


@dataclass(frozen=True)
class Load:
    """var = load(addr); width is in bytes (1 or one word)."""
    var: str
    addr: Expr
    size: int


@dataclass(frozen=True)
class Store:
    addr: Expr
    value: Expr
    size: int


@dataclass(frozen=True)
class StackAlloc:
    nbytes: int
    var: str
    body: "Stmt"


@dataclass(frozen=True)
class Random:
    var: str


@dataclass(frozen=True)
class Input:
    var: str


@dataclass(frozen=True)
class Output:
    expr: Expr


@dataclass(frozen=True)
class If:
    cond: Expr
    then: "Stmt"
    orelse: "Stmt"


@dataclass(frozen=True)
class While:
    cond: Expr
    body: "Stmt"


@dataclass(frozen=True)
class Call:
    results: tuple[str, ...]
    fname: str
    args: tuple[Expr, ...]


@dataclass(frozen=True)
class Seq:
    first: "Stmt"
    second: "Stmt"


Stmt = Union[Skip, Assign, Load, Store, StackAlloc, Random, Input, Output,
             If, While, Call, Seq]


@dataclass(frozen=True)
class FnDef:
    name: str
    params: tuple[str, ...]
    returns: tuple[str, ...]
    body: Stmt


@dataclass(frozen=True)
class Program:
    functions: tuple[FnDef, ...]
    entry: str = "main"

    def __post_init__(self):
        object.__setattr__(self, "_by_name", {f.name: f for f in self.functions})

    def __getitem__(self, name: str) -> FnDef:
        return self._by_name[name]

    def __contains__(self, name: str) -> bool:
        return name in self._by_name

    def with_entry(self, entry: str) -> "Program":
        return Program(self.functions, entry)

    def replace_function(self, fn: FnDef) -> "Program":
        fns = tuple(fn if f.name == fn.name else f for f in self.functions)
        return Program(fns, self.entry)


def seq(*stmts: Stmt) -> Stmt:
    """Right-nested sequence; the empty sequence is Skip."""
    stmts = [s for s in stmts]
    if not stmts:
        return Skip()
    out = stmts[-1]
    for s in reversed(stmts[:-1]):
        out = Seq(s, out)
    return out


def flatten_seq(stmt: Stmt) -> list[Stmt]:
    if isinstance(stmt, Seq):
        return flatten_seq(stmt.first) + flatten_seq(stmt.second)
    return [stmt]


# --- lexer -----------------------------------------------------------------

class ParseError(Exception):
    def __init__(self, line: int, column: int, expected: str, found: str):
        self.line = line
        self.column = column
        self.expected = expected
        self.found = found
        super().__init__(f"{line}:{column}: expected {expected}, found {found}")


KEYWORDS = {"fn", "skip", "if", "else", "while", "stackalloc", "as", "random",
            "input", "output", "load", "load1", "store", "store1"}

_TOKEN_RE = re.compile(r"""
    (?P<ws>[ \t\r\n]+|//[^\n]*)
  | (?P<num>0[xX][0-9a-fA-F]+|[0-9]+)
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op><\$|<<|>>|==|!=|->|[-+*/%&|^<(){},;=])
""", re.VERBOSE)


@dataclass(frozen=True)
class Token:
    kind: str  # num, name, op, eof
    text: str
    line: int
    column: int


def tokenize(text: str) -> list[Token]:
    tokens = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError(line, pos - line_start + 1, "a token", repr(text[pos]))
        kind = m.lastgroup
        if kind != "ws":
            tokens.append(Token(kind, m.group(), line, pos - line_start + 1))
        for i, ch in enumerate(m.group()):
            if ch == "\n":
                line, line_start = line + 1, pos + i + 1
        pos = m.end()
    tokens.append(Token("eof", "", line, pos - line_start + 1))
    return tokens


# binary operator levels, loosest first
_LEVELS = [
    {"|": "or"},
    {"^": "xor"},
    {"&": "and"},
    {"==": "eq", "!=": "ne"},
    {"<": "ltu", "<$": "lts"},
    {"<<": "shl", ">>": "shr"},
    {"+": "add", "-": "sub"},
    {"*": "mul", "/": "divu", "%": "remu"},
]
_SYMBOL = {name: sym for level in _LEVELS for sym, name in level.items()}
_PRECEDENCE = {name: i for i, level in enumerate(_LEVELS) for name in level.values()}


class _Parser:
    def __init__(self, text: str, width: int):
        self.tokens = tokenize(text)
        self.i = 0
        self.width = width

    @property
    def tok(self) -> Token:
        return self.tokens[self.i]

    def peek(self, offset: int = 1) -> Token:
        return self.tokens[min(self.i + offset, len(self.tokens) - 1)]

    def fail(self, expected: str):
        t = self.tok
        found = "end of input" if t.kind == "eof" else repr(t.text)
        raise ParseError(t.line, t.column, expected, found)

    def at(self, text: str) -> bool:
        return self.tok.kind in ("op", "name") and self.tok.text == text

    def expect(self, text: str) -> Token:
        if not self.at(text):
            self.fail(repr(text))
        t = self.tok
        self.i += 1
        return t

    def ident(self) -> str:
        t = self.tok
        if t.kind != "name" or t.text in KEYWORDS:
            self.fail("an identifier")
        self.i += 1
        return t.text

    def number(self) -> int:
        t = self.tok
        if t.kind != "num":
            self.fail("a number")
        self.i += 1
        return int(t.text, 0)

    def name_list(self, close: str) -> tuple[str, ...]:
        names = []
        if not self.at(close):
            names.append(self.ident())
            while self.at(","):
                self.i += 1
                names.append(self.ident())
        return tuple(names)

    def program(self) -> Program:
        fns = []
        while self.tok.kind != "eof":
            fns.append(self.function())
        if not fns:
            self.fail("'fn'")
        entry = "main" if any(f.name == "main" for f in fns) else fns[-1].name
        return Program(tuple(fns), entry)

    def function(self) -> FnDef:
        self.expect("fn")
        name = self.ident()
        self.expect("(")
        params = self.name_list(")")
        self.expect(")")
        returns: tuple[str, ...] = ()
        if self.at("->"):
            self.i += 1
            if self.at("("):
                self.i += 1
                returns = self.name_list(")")
                self.expect(")")
            else:
                returns = (self.ident(),)
        return FnDef(name, params, returns, self.block())

    def block(self) -> Stmt:
        self.expect("{")
        stmts = []
        while not self.at("}"):
            if self.tok.kind == "eof":
                self.fail("'}'")
            stmts.append(self.statement())
        self.expect("}")
        return seq(*stmts)

    def statement(self) -> Stmt:
        t = self.tok
        if self.at("skip"):
            self.i += 1
            self.expect(";")
            return Skip()
        if self.at("if"):
            return self.if_stmt()
        if self.at("while"):
            self.i += 1
            cond = self.paren_expr()
            return While(cond, self.block())
        if self.at("stackalloc"):
            self.i += 1
            n = self.number()
            self.expect("as")
            var = self.ident()
            return StackAlloc(n, var, self.block())
        if self.at("random"):
            self.i += 1
            self.expect("as")
            var = self.ident()
            self.expect(";")
            return Random(var)
        if self.at("output"):
            self.i += 1
            e = self.paren_expr()
            self.expect(";")
            return Output(e)
        if self.at("store") or self.at("store1"):
            size = 1 if t.text == "store1" else word_bytes(self.width)
            self.i += 1
            self.expect("(")
            addr = self.expr()
            self.expect(",")
            value = self.expr()
            self.expect(")")
            self.expect(";")
            return Store(addr, value, size)
        if t.kind == "name" and t.text not in KEYWORDS:
            return self.assignment_or_call()
        self.fail("a statement")

    def if_stmt(self) -> Stmt:
        self.expect("if")
        cond = self.paren_expr()
        then = self.block()
        orelse: Stmt = Skip()
        if self.at("else"):
            self.i += 1
            orelse = self.if_stmt() if self.at("if") else self.block()
        return If(cond, then, orelse)

    def assignment_or_call(self) -> Stmt:
        # f(args);  |  x = ...;  |  a, b = f(args);
        if self.peek().text == "(":
            fname = self.ident()
            stmt = Call((), fname, self.args())
            self.expect(";")
            return stmt
        targets = [self.ident()]
        while self.at(","):
            self.i += 1
            targets.append(self.ident())
        self.expect("=")
        t = self.tok
        if len(targets) == 1 and t.text in ("load", "load1", "input") and t.kind == "name":
            self.i += 1
            self.expect("(")
            if t.text == "input":
                stmt: Stmt = Input(targets[0])
            else:
                size = 1 if t.text == "load1" else word_bytes(self.width)
                stmt = Load(targets[0], self.expr(), size)
            self.expect(")")
        elif t.kind == "name" and t.text not in KEYWORDS and self.peek().text == "(":
            fname = self.ident()
            stmt = Call(tuple(targets), fname, self.args())
        elif len(targets) == 1:
            stmt = Assign(targets[0], self.expr())
        else:
            self.fail("a function call")
        self.expect(";")
        return stmt

    def args(self) -> tuple[Expr, ...]:
        self.expect("(")
        args = []
        if not self.at(")"):
            args.append(self.expr())
            while self.at(","):
                self.i += 1
                args.append(self.expr())
        self.expect(")")
        return tuple(args)

    def paren_expr(self) -> Expr:
        self.expect("(")
        e = self.expr()
        self.expect(")")
        return e

    def expr(self, level: int = 0) -> Expr:
        if level == len(_LEVELS):
            return self.atom()
        lhs = self.expr(level + 1)
        ops = _LEVELS[level]
        while self.tok.kind == "op" and self.tok.text in ops:
            op = ops[self.tok.text]
            self.i += 1
            lhs = BinOp(op, lhs, self.expr(level + 1))
        return lhs

    def atom(self) -> Expr:
        t = self.tok
        if t.kind == "num":
            return Literal(self.number())
        if t.kind == "name" and t.text not in KEYWORDS:
            self.i += 1
            return Var(t.text)
        if self.at("("):
            return self.paren_expr()
        self.fail("an expression")


def parse(text: str, width: int = DEFAULT_WIDTH) -> Program:
    return _Parser(text, width).program()


# --- formatter -------------------------------------------------------------

def format_expr(e: Expr, parent: int = -1, right: bool = False) -> str:
    if isinstance(e, Literal):
        return str(e.value)
    if isinstance(e, Var):
        return e.name
    prec = _PRECEDENCE[e.op]
    text = f"{format_expr(e.lhs, prec)} {_SYMBOL[e.op]} {format_expr(e.rhs, prec, True)}"
    # operators are left-associative: a right operand at equal precedence needs parens
    if prec < parent or (right and prec == parent):
        return f"({text})"
    return text


def _load_kw(size: int, width: int) -> str:
    return "1" if size == 1 and width != 8 else ""


def _format_block(stmt: Stmt, indent: int, width: int) -> list[str]:
    lines = []
    for s in flatten_seq(stmt):
        lines.extend(_format_stmt(s, indent, width))
    return lines


def _braced(head: str, body: Stmt, indent: int, width: int) -> list[str]:
    pad = "    " * indent
    inner = _format_block(body, indent + 1, width)
    if len(inner) == 1 and "{" not in inner[0]:
        return [f"{pad}{head} {{ {inner[0].strip()} }}"]
    return [f"{pad}{head} {{", *inner, f"{pad}}}"]


def _format_stmt(s: Stmt, indent: int, width: int) -> list[str]:
    pad = "    " * indent
    if isinstance(s, Skip):
        return [f"{pad}skip;"]
    if isinstance(s, Assign):
        return [f"{pad}{s.var} = {format_expr(s.expr)};"]
    if isinstance(s, Load):
        return [f"{pad}{s.var} = load{_load_kw(s.size, width)}({format_expr(s.addr)});"]
    if isinstance(s, Store):
        return [f"{pad}store{_load_kw(s.size, width)}({format_expr(s.addr)}, {format_expr(s.value)});"]
    if isinstance(s, Random):
        return [f"{pad}random as {s.var};"]
    if isinstance(s, Input):
        return [f"{pad}{s.var} = input();"]
    if isinstance(s, Output):
        return [f"{pad}output({format_expr(s.expr)});"]
    if isinstance(s, Call):
        call = f"{s.fname}({', '.join(format_expr(a) for a in s.args)});"
        if s.results:
            return [f"{pad}{', '.join(s.results)} = {call}"]
        return [f"{pad}{call}"]
    if isinstance(s, StackAlloc):
        return _braced(f"stackalloc {s.nbytes} as {s.var}", s.body, indent, width)
    if isinstance(s, While):
        return _braced(f"while ({format_expr(s.cond)})", s.body, indent, width)
    if isinstance(s, If):
        lines = _braced(f"if ({format_expr(s.cond)})", s.then, indent, width)
        if s.orelse != Skip():
            lines[-1:] = _braced(f"{lines[-1].strip()} else", s.orelse, indent, width)
        return lines
    if isinstance(s, Seq):
        return _format_block(s, indent, width)
    raise TypeError(f"not a statement: {s!r}")


def format_program(p: Program, width: int = DEFAULT_WIDTH) -> str:
    chunks = []
    for fn in p.functions:
        head = f"fn {fn.name}({', '.join(fn.params)})"
        if len(fn.returns) == 1:
            head += f" -> {fn.returns[0]}"
        elif fn.returns:
            head += f" -> ({', '.join(fn.returns)})"
        chunks.append("\n".join(_braced(head, fn.body, 0, width)))
    return "\n\n".join(chunks)


# --- validation ------------------------------------------------------------

@dataclass(frozen=True)
class UndefinedFunction:
    name: str


@dataclass(frozen=True)
class UndefinedVariable:
    name: str
    function: str


@dataclass(frozen=True)
class ArityMismatch:
    name: str
    expected: tuple[int, int]
    found: tuple[int, int]


@dataclass(frozen=True)
class BadAllocSize:
    nbytes: int


@dataclass(frozen=True)
class BadAccessSize:
    size: int


@dataclass(frozen=True)
class DuplicateName:
    function: str
    name: str


Diagnostic = Union[UndefinedFunction, UndefinedVariable, ArityMismatch,
                   BadAllocSize, BadAccessSize, DuplicateName]


def expr_vars(e: Expr) -> set[str]:
    if isinstance(e, Var):
        return {e.name}
    if isinstance(e, BinOp):
        return expr_vars(e.lhs) | expr_vars(e.rhs)
    return set()


def _check_body(p: Program, fn: FnDef, s: Stmt, defined: frozenset[str],
                out: list, width: int) -> frozenset[str]:
    """Walk `s` with the set of definitely-assigned names; returns the set after."""

    def need(e: Expr):
        for v in sorted(expr_vars(e)):
            if v not in defined:
                out.append(UndefinedVariable(v, fn.name))

    if isinstance(s, (Skip,)):
        return defined
    if isinstance(s, Assign):
        need(s.expr)
        return defined | {s.var}
    if isinstance(s, Load):
        need(s.addr)
        if s.size not in (1, word_bytes(width)):
            out.append(BadAccessSize(s.size))
        return defined | {s.var}
    if isinstance(s, Store):
        need(s.value)
        need(s.addr)
        if s.size not in (1, word_bytes(width)):
            out.append(BadAccessSize(s.size))
        return defined
    if isinstance(s, (Random, Input)):
        return defined | {s.var}
    if isinstance(s, Output):
        need(s.expr)
        return defined
    if isinstance(s, StackAlloc):
        if s.nbytes <= 0 or s.nbytes % word_bytes(width):
            out.append(BadAllocSize(s.nbytes))
        return _check_body(p, fn, s.body, defined | {s.var}, out, width)
    if isinstance(s, If):
        need(s.cond)
        a = _check_body(p, fn, s.then, defined, out, width)
        b = _check_body(p, fn, s.orelse, defined, out, width)
        return a & b
    if isinstance(s, While):
        need(s.cond)
        _check_body(p, fn, s.body, defined, out, width)
        return defined
    if isinstance(s, Call):
        for a in s.args:
            need(a)
        if s.fname not in p:
            out.append(UndefinedFunction(s.fname))
        else:
            callee = p[s.fname]
            expected = (len(callee.params), len(callee.returns))
            found = (len(s.args), len(s.results))
            if expected != found:
                out.append(ArityMismatch(s.fname, expected, found))
        return defined | set(s.results)
    if isinstance(s, Seq):
        mid = _check_body(p, fn, s.first, defined, out, width)
        return _check_body(p, fn, s.second, mid, out, width)
    raise TypeError(f"not a statement: {s!r}")


def validate(p: Program, width: int = DEFAULT_WIDTH) -> list[Diagnostic]:
    out: list[Diagnostic] = []
    if p.entry not in p:
        out.append(UndefinedFunction(p.entry))
    seen = set()
    for fn in p.functions:
        if fn.name in seen:
            out.append(DuplicateName(fn.name, fn.name))
        seen.add(fn.name)
        for dup in sorted({n for n in fn.params if fn.params.count(n) > 1}
                          | {n for n in fn.returns if fn.returns.count(n) > 1}):
            out.append(DuplicateName(fn.name, dup))
        after = _check_body(p, fn, fn.body, frozenset(fn.params), out, width)
        for r in fn.returns:
            if r not in after:
                out.append(UndefinedVariable(r, fn.name))
    return out
