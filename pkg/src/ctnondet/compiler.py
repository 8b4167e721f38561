"""Compiler passes that carry their own leakage bookkeeping.

Each pass returns a `PassArtifact` holding the compiled program and three
functions that relate source and target observations:

* `gamma(k, ctx)` maps a source leakage trace to the target's,
* `oracle_transform(a)` builds a source oracle from a target oracle,
* `predictor_transform(p)` builds a target predictor from a source predictor.

All three are replays of the pass input, steered by the trace alone; none of
them sees memory, locals or inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence, Union

from . import machine as m
from .interp import (ChoiceUniverse, ConstantFill, ExecEnv, Scripted, Terminated, exec_oracle,
                     exec_oracle_all, explore)
from .lang import (LEAKY_OPS, Assign, BinOp, Call, Expr, FnDef, If, Input, Literal, Load,
                   Output, Program, Random, Seq, Skip, StackAlloc, Stmt, Store, Var, While,
                   expr_vars, flatten_seq, seq, validate)
from .predict import (CONSTANT_END, Derived, PBranch, PEnd, PLeak, Predictor, predicts,
                      run_predictor)
from .trace import CompNonDet, DerivedOracle, In, Leak, Oracle, Out, nondet_prefixes


class CompileError(Exception):
    pass


class PatternMismatch(CompileError):
    pass


class ReplayError(Exception):
    """The trace handed to a transformation function is not a trace of the program."""


@dataclass(frozen=True)
class LowContext:
    oracle: Optional[Oracle] = None
    sp: Optional[int] = None
    code_position: Optional[int] = None


@dataclass(frozen=True, eq=False)
class PassArtifact:
    name: str
    source: Program
    target: Union[Program, m.MachineProgram]
    gamma: Callable[[Sequence, LowContext], tuple]
    oracle_transform: Optional[Callable[[Optional[Oracle]], Oracle]]
    predictor_transform: Callable[[Predictor], Predictor]
    low_context_schema: frozenset = frozenset()
    manifest: dict = field(default_factory=dict)


def _identity_gamma(k, ctx=None):
    return tuple(k)


def _identity(x):
    return x


# --- replay machinery --------------------------------------------------------

class _Stop(Exception):
    """A prefix ran out at statement `at`, which wanted an event of `kind`."""

    def __init__(self, at, kind):
        self.at = at
        self.kind = kind


class _Answer(Exception):
    def __init__(self, out):
        self.out = out


class _TraceSource:
    def __init__(self, trace, partial: bool = False):
        self.trace = tuple(trace)
        self.i = 0
        self.partial = partial

    def take(self, at, kind, resolve=None):
        if self.i >= len(self.trace):
            if self.partial:
                raise _Stop(at, kind)
            raise ReplayError(f"trace ended while replaying {type(at).__name__}")
        e = self.trace[self.i]
        if not isinstance(e, Leak if kind == "leak" else CompNonDet):
            raise ReplayError(f"expected a {kind} event at position {self.i}, found {e}")
        self.i += 1
        return e

    def finish(self):
        if self.i != len(self.trace):
            raise ReplayError("trace continues past the end of the program")


class _PredictorSource:
    """Source events drawn from a source predictor; branch payloads come from `resolve`."""

    def __init__(self, predictor):
        self.p = predictor
        self.k: tuple = ()

    def take(self, at, kind, resolve=None):
        out = self.p(self.k)
        if kind == "leak":
            if not isinstance(out, PLeak):
                raise _Answer(PEnd())
            e = Leak(out.word)
        else:
            if not isinstance(out, PBranch):
                raise _Answer(PEnd())
            e = CompNonDet(resolve())
        self.k += (e,)
        return e

    def finish(self):
        pass


class _ListSink:
    def __init__(self):
        self.events: list = []

    def emit(self, e):
        self.events.append(e)

    def emit_nondet(self, value_fn):
        v = value_fn()
        self.events.append(CompNonDet(v))
        return v

    def peek_nondet(self):
        raise ReplayError("no target trace to read a choice from")


class _PredictorSink:
    """Compares emitted events with a target prefix; the first event past it is the answer."""

    def __init__(self, target):
        self.target = tuple(target)
        self.events: list = []

    def emit(self, e):
        i = len(self.events)
        if i == len(self.target):
            if isinstance(e, CompNonDet):
                raise _Answer(PBranch())
            raise _Answer(PLeak(e.word if isinstance(e, Leak) else e))
        if self.target[i] != e:
            raise _Answer(PEnd())
        self.events.append(e)

    def emit_nondet(self, value_fn):
        v = self.peek_nondet()
        self.events.append(CompNonDet(v))
        return v

    def peek_nondet(self):
        i = len(self.events)
        if i == len(self.target):
            raise _Answer(PBranch())
        if not isinstance(self.target[i], CompNonDet):
            raise _Answer(PEnd())
        return self.target[i].word


class _Walker:
    """Replays a program along its leakage, copying events to the sink by default."""

    def __init__(self, program: Program, source, sink):
        self.p = program
        self.src = source
        self.out = sink

    def run(self):
        self.function(self.p.entry)
        self.src.finish()

    def function(self, name: str):
        if name not in self.p:
            raise ReplayError(f"call to unknown function {name}")
        self.stmt(self.p[name].body)

    def leak(self, at) -> Leak:
        return self.src.take(at, "leak")

    def nondet(self, at) -> CompNonDet:
        return self.src.take(at, "nondet", lambda: self.resolve(at))

    def resolve(self, at) -> int:
        return self.out.peek_nondet()

    def expr_events(self, e: Expr, at) -> list:
        if isinstance(e, BinOp):
            ev = self.expr_events(e.lhs, at) + self.expr_events(e.rhs, at)
            if e.op in LEAKY_OPS:
                ev += [self.leak(at), self.leak(at)]
            return ev
        return []

    def simple(self, s, events):
        for e in events:
            self.out.emit(e)

    def alloc(self, s: StackAlloc):
        self.out.emit(self.nondet(s))
        self.stmt(s.body)

    def random(self, s: Random):
        self.out.emit(self.nondet(s))

    def stmt(self, s: Stmt):
        if isinstance(s, Seq):
            self.stmt(s.first)
            self.stmt(s.second)
        elif isinstance(s, Skip):
            pass
        elif isinstance(s, Assign):
            self.simple(s, self.expr_events(s.expr, s))
        elif isinstance(s, Output):
            self.simple(s, self.expr_events(s.expr, s))
        elif isinstance(s, Load):
            self.simple(s, self.expr_events(s.addr, s) + [self.leak(s)])
        elif isinstance(s, Store):
            ev = self.expr_events(s.value, s) + self.expr_events(s.addr, s)
            self.simple(s, ev + [self.leak(s)])
        elif isinstance(s, Input):
            self.simple(s, [])
        elif isinstance(s, If):
            ev = self.expr_events(s.cond, s)
            bit = self.leak(s)
            self.simple(s, ev + [bit])
            self.stmt(s.then if bit.word else s.orelse)
        elif isinstance(s, While):
            while True:
                ev = self.expr_events(s.cond, s)
                bit = self.leak(s)
                self.simple(s, ev + [bit])
                if not bit.word:
                    break
                self.stmt(s.body)
        elif isinstance(s, StackAlloc):
            self.alloc(s)
        elif isinstance(s, Random):
            self.random(s)
        elif isinstance(s, Call):
            self.simple(s, [e for a in s.args for e in self.expr_events(a, s)])
            self.function(s.fname)
        else:
            raise TypeError(f"not a statement: {s!r}")


def _replay(make_walker, trace) -> tuple:
    sink = _ListSink()
    make_walker(_TraceSource(trace), sink).run()
    return tuple(sink.events)


def _replay_prefix(make_walker, prefix, answer: Callable[[object, "_Walker"], int]) -> int:
    """Source-oracle answer at `prefix`: replay it and ask `answer` where it stopped."""
    sink = _ListSink()
    walker = make_walker(_TraceSource(prefix, partial=True), sink)
    try:
        walker.run()
    except _Stop as stop:
        if stop.kind == "nondet":
            return answer(stop.at, walker)
        return 0
    except ReplayError:
        return 0
    # not a query point of any execution; any answer will do
    return 0


def _predictor_by_replay(make_walker, label: str) -> Callable[[Predictor], Predictor]:
    def transform(source_predictor):
        def target_predictor(k):
            walker = make_walker(_PredictorSource(source_predictor), _PredictorSink(k))
            try:
                walker.run()
            except _Answer as a:
                return a.out
            except ReplayError:
                return PEnd()
            return PEnd()
        return Derived(target_predictor, label)
    return transform


# --- helpers -----------------------------------------------------------------

def _rebuild(s: Stmt) -> Stmt:
    """Fresh node objects throughout, so statement identity is positional."""
    if isinstance(s, Seq):
        return Seq(_rebuild(s.first), _rebuild(s.second))
    if isinstance(s, If):
        return If(s.cond, _rebuild(s.then), _rebuild(s.orelse))
    if isinstance(s, While):
        return While(s.cond, _rebuild(s.body))
    if isinstance(s, StackAlloc):
        return StackAlloc(s.nbytes, s.var, _rebuild(s.body))
    return type(s)(**s.__dict__)


def _rebuild_program(p: Program) -> Program:
    return Program(tuple(FnDef(f.name, f.params, f.returns, _rebuild(f.body)) for f in p.functions),
                   p.entry)


def _names(p: Program) -> set[str]:
    names = set()

    def walk(s):
        for v in s.__dict__.values():
            if isinstance(v, str):
                names.add(v)
            elif isinstance(v, tuple):
                for x in v:
                    if isinstance(x, str):
                        names.add(x)
                    else:
                        walk(x)
            elif hasattr(v, "__dict__"):
                walk(v)

    for f in p.functions:
        names.update(f.params)
        names.update(f.returns)
        walk(f.body)
    return names


def _fresh_prefix(p: Program, stem: str) -> str:
    taken = _names(p)
    prefix = f"_{stem}"
    while any(n.startswith(prefix) for n in taken):
        prefix = "_" + prefix
    return prefix


def _check_valid(p: Program, width: int):
    problems = validate(p, width)
    if problems:
        raise CompileError(f"program does not validate: {problems}")


# --- flatten -----------------------------------------------------------------

class _Flattener:
    def __init__(self, prefix: str):
        self.prefix = prefix
        self.n = 0

    def temp(self) -> str:
        self.n += 1
        return f"{self.prefix}{self.n}"

    def atom(self, e: Expr, out: list) -> Var:
        """Emit statements computing e; return the variable holding it."""
        if isinstance(e, Var):
            return e
        t = self.temp()
        out.append(Assign(t, self.rhs(e, out)))
        return Var(t)

    def rhs(self, e: Expr, out: list) -> Expr:
        if isinstance(e, BinOp):
            lhs = self.atom(e.lhs, out)
            rhs = self.atom(e.rhs, out)
            return BinOp(e.op, lhs, rhs)
        return e

    def stmt(self, s: Stmt) -> Stmt:
        out: list[Stmt] = []
        if isinstance(s, Seq):
            return Seq(self.stmt(s.first), self.stmt(s.second))
        if isinstance(s, (Skip, Input, Random)):
            return s
        if isinstance(s, Assign):
            out.append(Assign(s.var, self.rhs(s.expr, out)))
        elif isinstance(s, Load):
            out.append(Load(s.var, self.atom(s.addr, out), s.size))
        elif isinstance(s, Store):
            value = self.atom(s.value, out)
            addr = self.atom(s.addr, out)
            out.append(Store(addr, value, s.size))
        elif isinstance(s, Output):
            out.append(Output(self.atom(s.expr, out)))
        elif isinstance(s, If):
            c = self.atom(s.cond, out)
            out.append(If(c, self.stmt(s.then), self.stmt(s.orelse)))
        elif isinstance(s, While):
            c = self.atom(s.cond, out)
            recompute: list[Stmt] = []
            if not isinstance(s.cond, Var):
                # same temps, fresh statement objects
                self.n -= self._count(s.cond)
                c2 = self.atom(s.cond, recompute)
                assert c2 == c
            out.append(While(c, seq(self.stmt(s.body), *recompute)))
        elif isinstance(s, StackAlloc):
            return StackAlloc(s.nbytes, s.var, self.stmt(s.body))
        elif isinstance(s, Call):
            args = tuple(self.atom(a, out) for a in s.args)
            out.append(Call(s.results, s.fname, args))
        else:
            raise TypeError(f"not a statement: {s!r}")
        return seq(*out)

    @staticmethod
    def _count(e: Expr) -> int:
        if isinstance(e, BinOp):
            return 1 + _Flattener._count(e.lhs) + _Flattener._count(e.rhs)
        return 1 if isinstance(e, Literal) else 0


def flatten(p: Program, width: int = 32) -> PassArtifact:
    _check_valid(p, width)
    fl = _Flattener(_fresh_prefix(p, "t"))
    target = Program(tuple(FnDef(f.name, f.params, f.returns, fl.stmt(f.body))
                           for f in p.functions), p.entry)
    return PassArtifact("flatten", p, target, _identity_gamma, _identity, _identity)


def is_flat(p: Program) -> bool:
    def atom(e):
        return isinstance(e, (Var, Literal))

    def ok(s) -> bool:
        if isinstance(s, Seq):
            return ok(s.first) and ok(s.second)
        if isinstance(s, Assign):
            return atom(s.expr) or (isinstance(s.expr, BinOp) and atom(s.expr.lhs) and atom(s.expr.rhs))
        if isinstance(s, Load):
            return atom(s.addr)
        if isinstance(s, Store):
            return atom(s.addr) and atom(s.value)
        if isinstance(s, Output):
            return atom(s.expr)
        if isinstance(s, If):
            return atom(s.cond) and ok(s.then) and ok(s.orelse)
        if isinstance(s, While):
            return atom(s.cond) and ok(s.body)
        if isinstance(s, StackAlloc):
            return ok(s.body)
        if isinstance(s, Call):
            return all(atom(a) for a in s.args)
        return True

    return all(ok(f.body) for f in p.functions)


# --- use_immediates ----------------------------------------------------------

def _fold(s: Stmt, known: dict[str, int]) -> Stmt:
    """Substitute variables known to hold literals into binary operands."""

    def sub(e):
        if isinstance(e, Var) and e.name in known:
            return Literal(known[e.name])
        return e

    if isinstance(s, Seq):
        return Seq(_fold(s.first, known), _fold(s.second, known))
    if isinstance(s, Assign):
        expr = s.expr
        if isinstance(expr, BinOp):
            expr = BinOp(expr.op, sub(expr.lhs), sub(expr.rhs))
        known.pop(s.var, None)
        if isinstance(expr, Literal):
            known[s.var] = expr.value
        return Assign(s.var, expr)
    if isinstance(s, (Load, Input, Random)):
        known.pop(s.var, None)
        return s
    if isinstance(s, (Store, Output, Skip)):
        return s
    # control flow: fold inside with nothing known, forget everything afterwards
    if isinstance(s, If):
        out = If(s.cond, _fold(s.then, {}), _fold(s.orelse, {}))
    elif isinstance(s, While):
        out = While(s.cond, _fold(s.body, {}))
    elif isinstance(s, StackAlloc):
        known.pop(s.var, None)
        out = StackAlloc(s.nbytes, s.var, _fold(s.body, dict(known)))
    elif isinstance(s, Call):
        out = s
    else:
        raise TypeError(f"not a statement: {s!r}")
    known.clear()
    return out


def use_immediates(p: Program) -> PassArtifact:
    target = Program(tuple(FnDef(f.name, f.params, f.returns, _fold(f.body, {}))
                           for f in p.functions), p.entry)
    return PassArtifact("use_immediates", p, target, _identity_gamma, _identity, _identity)


# --- dead code elimination ---------------------------------------------------

class _Liveness:
    def __init__(self):
        self.removed: set[int] = set()

    def run(self, s: Stmt, live: frozenset, final: bool) -> tuple[Stmt, frozenset]:
        if isinstance(s, Seq):
            second, mid = self.run(s.second, live, final)
            first, before = self.run(s.first, mid, final)
            return Seq(first, second), before
        if isinstance(s, (Assign, Load)):
            if s.var not in live:
                if final:
                    self.removed.add(id(s))
                return Skip(), live
            used = expr_vars(s.expr if isinstance(s, Assign) else s.addr)
            return s, (live - {s.var}) | used
        if isinstance(s, Store):
            return s, live | expr_vars(s.addr) | expr_vars(s.value)
        if isinstance(s, Output):
            return s, live | expr_vars(s.expr)
        if isinstance(s, (Input, Random)):
            return s, live - {s.var}
        if isinstance(s, Skip):
            return s, live
        if isinstance(s, If):
            then, a = self.run(s.then, live, final)
            orelse, b = self.run(s.orelse, live, final)
            return If(s.cond, then, orelse), a | b | expr_vars(s.cond)
        if isinstance(s, While):
            head = live | expr_vars(s.cond)
            while True:
                _, body_in = self.run(s.body, head, False)
                nxt = head | body_in
                if nxt == head:
                    break
                head = nxt
            body, _ = self.run(s.body, head, final)
            return While(s.cond, body), head
        if isinstance(s, StackAlloc):
            body, inner = self.run(s.body, live, final)
            return StackAlloc(s.nbytes, s.var, body), inner - {s.var}
        if isinstance(s, Call):
            used = set().union(*(expr_vars(a) for a in s.args)) if s.args else set()
            return s, (live - set(s.results)) | used
        raise TypeError(f"not a statement: {s!r}")


def _drop_skips(s: Stmt) -> Stmt:
    if isinstance(s, Seq):
        parts = [_drop_skips(x) for x in flatten_seq(s)]
        return seq(*[x for x in parts if not isinstance(x, Skip)])
    if isinstance(s, If):
        return If(s.cond, _drop_skips(s.then), _drop_skips(s.orelse))
    if isinstance(s, While):
        return While(s.cond, _drop_skips(s.body))
    if isinstance(s, StackAlloc):
        return StackAlloc(s.nbytes, s.var, _drop_skips(s.body))
    return s


def dead_code_elim(p: Program) -> PassArtifact:
    src = _rebuild_program(p)
    lv = _Liveness()
    fns = []
    for f in src.functions:
        body, _ = lv.run(f.body, frozenset(f.returns), True)
        fns.append(FnDef(f.name, f.params, f.returns, _drop_skips(body)))
    target = Program(tuple(fns), p.entry)
    removed = frozenset(lv.removed)

    class Walker(_Walker):
        def simple(self, s, events):
            if id(s) not in removed:
                super().simple(s, events)

    def gamma(k, ctx=None):
        return _replay(lambda so, si: Walker(src, so, si), k)

    def oracle_transform(low: Oracle) -> Oracle:
        def answer(at, walker):
            return low(tuple(walker.out.events))
        return DerivedOracle(lambda k: _replay_prefix(lambda so, si: Walker(src, so, si), k, answer),
                             "dead_code_elim", low.width)

    return PassArtifact("dead_code_elim", src, target, gamma, oracle_transform,
                        _predictor_by_replay(lambda so, si: Walker(src, so, si), "dead_code_elim"),
                        frozenset({"oracle"}), {"removed": len(removed)})


# --- frame allocation --------------------------------------------------------

def _frame_layout(s: Stmt, base: int, offsets: dict[int, int]) -> int:
    """Assign pre-order offsets to allocations; return bytes used from `base`."""
    if isinstance(s, StackAlloc):
        offsets[id(s)] = base
        return s.nbytes + _frame_layout(s.body, base + s.nbytes, offsets)
    if isinstance(s, Seq):
        first = _frame_layout(s.first, base, offsets)
        return first + _frame_layout(s.second, base + first, offsets)
    if isinstance(s, If):
        return max(_frame_layout(s.then, base, offsets), _frame_layout(s.orelse, base, offsets))
    if isinstance(s, While):
        return _frame_layout(s.body, base, offsets)
    return 0


def _hoist(s: Stmt, fp: str, offsets: dict[int, int]) -> Stmt:
    if isinstance(s, StackAlloc):
        addr = Assign(s.var, BinOp("add", Var(fp), Literal(offsets[id(s)])))
        return Seq(addr, _hoist(s.body, fp, offsets))
    if isinstance(s, Seq):
        return Seq(_hoist(s.first, fp, offsets), _hoist(s.second, fp, offsets))
    if isinstance(s, If):
        return If(s.cond, _hoist(s.then, fp, offsets), _hoist(s.orelse, fp, offsets))
    if isinstance(s, While):
        return While(s.cond, _hoist(s.body, fp, offsets))
    return s


def frame_alloc(p: Program) -> PassArtifact:
    src = _rebuild_program(p)
    fp = _fresh_prefix(src, "fp")
    offsets: dict[int, int] = {}
    sizes: dict[str, int] = {}
    fns = []
    for f in src.functions:
        size = _frame_layout(f.body, 0, offsets)
        sizes[f.name] = size
        body = _hoist(f.body, fp, offsets)
        if size:
            body = StackAlloc(size, fp, body)
        fns.append(FnDef(f.name, f.params, f.returns, body))
    target = Program(tuple(fns), p.entry)

    class Walker(_Walker):
        def __init__(self, program, source, sink, low: Optional[Oracle] = None):
            super().__init__(program, source, sink)
            self.low = low
            self.fps: list = []

        def function(self, name):
            if name not in self.p:
                raise ReplayError(f"call to unknown function {name}")
            if sizes[name]:
                self.fps.append(self.out.emit_nondet(lambda: self.low(tuple(self.out.events))))
            else:
                self.fps.append(None)
            self.stmt(self.p[name].body)
            self.fps.pop()

        def resolve(self, at):
            if isinstance(at, StackAlloc):
                return self.fps[-1] + offsets[id(at)]
            return self.out.peek_nondet()

        def alloc(self, s):
            self.nondet(s)
            self.stmt(s.body)

    def gamma(k, ctx: LowContext):
        if ctx is None or ctx.oracle is None:
            raise ValueError("frame_alloc's gamma needs the low-level oracle")
        return _replay(lambda so, si: Walker(src, so, si, ctx.oracle), k)

    def oracle_transform(low: Oracle) -> Oracle:
        def answer(at, walker):
            if isinstance(at, StackAlloc):
                return walker.fps[-1] + offsets[id(at)]
            return low(tuple(walker.out.events))
        return DerivedOracle(
            lambda k: _replay_prefix(lambda so, si: Walker(src, so, si, low), k, answer),
            "frame_alloc", low.width)

    return PassArtifact("frame_alloc", src, target, gamma, oracle_transform,
                        _predictor_by_replay(lambda so, si: Walker(src, so, si), "frame_alloc"),
                        frozenset({"oracle"}), {"frame_sizes": dict(sizes)})


# --- code generation ---------------------------------------------------------

# registers that hold variables; a-registers and t-registers stay free for calls and scratch
VAR_REGS = (3, 4, 8, 9) + tuple(range(18, 32))


@dataclass(frozen=True)
class FrameLayout:
    """Stack frame of one function, offsets from the frame's sp.

    The hoisted allocation sits at the bottom, then one save slot per used
    variable register, then spill slots, then the return address.
    """
    regs: dict  # variable -> register
    slots: dict  # spilled variable -> offset
    saves: tuple  # (register, offset) pairs restored on return
    alloc: int
    ra: int
    size: int


def _assigned(s: Stmt, out: list):
    if isinstance(s, Seq):
        _assigned(s.first, out)
        _assigned(s.second, out)
    elif isinstance(s, (Assign, Load, Input, Random)):
        out.append(s.var)
    elif isinstance(s, StackAlloc):
        out.append(s.var)
        _assigned(s.body, out)
    elif isinstance(s, If):
        _assigned(s.then, out)
        _assigned(s.orelse, out)
    elif isinstance(s, While):
        _assigned(s.body, out)
    elif isinstance(s, Call):
        out.extend(s.results)


def _layout(f: FnDef) -> FrameLayout:
    names: list[str] = list(f.params) + list(f.returns)
    _assigned(f.body, names)
    order = list(dict.fromkeys(names))
    in_regs, spilled = order[:len(VAR_REGS)], order[len(VAR_REGS):]
    regs = {n: VAR_REGS[i] for i, n in enumerate(in_regs)}
    alloc = f.body.nbytes if isinstance(f.body, StackAlloc) else 0
    saves = tuple((r, alloc + 4 * i) for i, r in enumerate(regs.values()))
    top = alloc + 4 * len(saves)
    slots = {n: top + 4 * i for i, n in enumerate(spilled)}
    ra = top + 4 * len(spilled)
    return FrameLayout(regs, slots, saves, alloc, ra, ra + 4)


def _count_allocs(s: Stmt) -> int:
    if isinstance(s, StackAlloc):
        return 1 + _count_allocs(s.body)
    if isinstance(s, Seq):
        return _count_allocs(s.first) + _count_allocs(s.second)
    if isinstance(s, If):
        return _count_allocs(s.then) + _count_allocs(s.orelse)
    if isinstance(s, While):
        return _count_allocs(s.body)
    return 0


class _Codegen:
    """Emits machine code plus, per statement, the instruction indices it runs and
    a recipe telling the replay how each instruction's leakage is obtained."""

    def __init__(self, p: Program):
        self.p = p
        self.code: list = []
        self.plans: dict[int, dict] = {}
        self.layouts = {f.name: _layout(f) for f in p.functions}
        self.entries: dict[str, int] = {}
        self.calls: list[tuple[int, str]] = []
        self.frame: FrameLayout = None

    def emit(self, instr, recipe: str = "fixed") -> tuple[int, str]:
        self.code.append(instr)
        return len(self.code) - 1, recipe

    def patch_jump(self, index: int, target: int, rd: int = m.ZERO):
        self.code[index] = m.Jal(rd, 4 * (target - index))

    def read(self, e: Expr, scratch: int, plan: list) -> int:
        """Register holding the atom's value, loading it into `scratch` if needed."""
        if isinstance(e, Var):
            if e.name in self.frame.regs:
                return self.frame.regs[e.name]
            plan.append(self.emit(m.Lw(scratch, m.SP, self.frame.slots[e.name]), "slot"))
            return scratch
        if isinstance(e, Literal):
            if e.value == 0:
                return m.ZERO
            plan.append(self.emit(m.Addi(scratch, m.ZERO, e.value)))
            return scratch
        raise CompileError("code generation needs flat code (operands must be variables or literals)")

    def dest(self, name: str) -> int:
        return self.frame.regs.get(name, m.T2)

    def finish(self, name: str, reg: int, plan: list):
        """Spill a result computed into T2 when the variable lives on the stack."""
        if name not in self.frame.regs:
            plan.append(self.emit(m.Sw(reg, m.SP, self.frame.slots[name]), "slot"))

    def move(self, rd: int, rs: int, plan: list):
        plan.append(self.emit(m.Addi(rd, rs, 0)))

    def function(self, f: FnDef):
        if len(f.params) > m.NARGS or len(f.returns) > m.NARGS:
            raise CompileError(f"{f.name}: at most {m.NARGS} parameters and results")
        if _count_allocs(f.body) > (1 if isinstance(f.body, StackAlloc) else 0):
            raise CompileError(f"{f.name}: run frame_alloc first (one entry allocation per function)")
        self.frame = lay = self.layouts[f.name]
        self.entries[f.name] = len(self.code)
        pro: list = [self.emit(m.Addi(m.SP, m.SP, -lay.size)),
                     self.emit(m.Sw(m.RA, m.SP, lay.ra), "slot")]
        for reg, off in lay.saves:
            pro.append(self.emit(m.Sw(reg, m.SP, off), "slot"))
        for i, name in enumerate(f.params):
            if name in lay.regs:
                self.move(lay.regs[name], m.A0 + i, pro)
            else:
                pro.append(self.emit(m.Sw(m.A0 + i, m.SP, lay.slots[name]), "slot"))
        self.stmt(f.body)
        epi: list = []
        for i, name in enumerate(f.returns):
            if name in lay.regs:
                self.move(m.A0 + i, lay.regs[name], epi)
            else:
                epi.append(self.emit(m.Lw(m.A0 + i, m.SP, lay.slots[name]), "slot"))
        for reg, off in lay.saves:
            epi.append(self.emit(m.Lw(reg, m.SP, off), "slot"))
        epi.append(self.emit(m.Lw(m.RA, m.SP, lay.ra), "slot"))
        epi.append(self.emit(m.Addi(m.SP, m.SP, lay.size)))
        epi.append(self.emit(m.Jalr(m.ZERO, m.RA, 0), "ret"))
        self.plans[id(f)] = {"prologue": pro, "epilogue": epi}

    def test(self, cond: Expr, plan: list):
        r = self.read(cond, m.T0, plan)
        plan.append(self.emit(m.Sltu(m.T0, m.ZERO, r)))
        plan.append(self.emit(m.Blt(m.ZERO, m.T0, 8), "branch"))

    def binop(self, e: BinOp, rd: int, plan: list):
        lhs = self.read(e.lhs, m.T0, plan)
        if e.op == "add" and isinstance(e.rhs, Literal):
            plan.append(self.emit(m.Addi(rd, lhs, e.rhs.value)))
            return
        rhs = self.read(e.rhs, m.T1, plan)
        if e.op in ("eq", "ne"):
            plan.append(self.emit(m.Xor(m.T2, lhs, rhs)))
            if e.op == "ne":
                plan.append(self.emit(m.Sltu(rd, m.ZERO, m.T2)))
                return
            plan.append(self.emit(m.Sltu(m.T2, m.ZERO, m.T2)))
            plan.append(self.emit(m.Addi(m.T1, m.ZERO, 1)))
            plan.append(self.emit(m.Xor(rd, m.T2, m.T1)))
            return
        recipe = "div" if e.op in LEAKY_OPS else "fixed"
        plan.append(self.emit(m.RType(e.op, rd, lhs, rhs), recipe))

    def stmt(self, s: Stmt):
        plan: list = []
        if isinstance(s, Seq):
            self.stmt(s.first)
            self.stmt(s.second)
            return
        if isinstance(s, Skip):
            pass
        elif isinstance(s, Assign):
            rd = self.dest(s.var)
            if isinstance(s.expr, BinOp):
                self.binop(s.expr, rd, plan)
            elif isinstance(s.expr, Literal):
                plan.append(self.emit(m.Addi(rd, m.ZERO, s.expr.value)))
            else:
                self.move(rd, self.read(s.expr, m.T0, plan), plan)
            self.finish(s.var, rd, plan)
        elif isinstance(s, Load):
            if s.size not in (1, 4):
                raise CompileError(f"unsupported access size {s.size}")
            addr = self.read(s.addr, m.T0, plan)
            rd = self.dest(s.var)
            plan.append(self.emit((m.Lw if s.size == 4 else m.Lb)(rd, addr, 0), "mem"))
            self.finish(s.var, rd, plan)
        elif isinstance(s, Store):
            if s.size not in (1, 4):
                raise CompileError(f"unsupported access size {s.size}")
            value = self.read(s.value, m.T0, plan)
            addr = self.read(s.addr, m.T1, plan)
            plan.append(self.emit((m.Sw if s.size == 4 else m.Sb)(value, addr, 0), "mem"))
        elif isinstance(s, Input):
            rd = self.dest(s.var)
            plan.append(self.emit(m.EIn(rd)))
            self.finish(s.var, rd, plan)
        elif isinstance(s, Output):
            plan.append(self.emit(m.EOut(self.read(s.expr, m.T0, plan))))
        elif isinstance(s, Random):
            # the compiler resolves the draw once and for all: always zero
            rd = self.dest(s.var)
            plan.append(self.emit(m.Addi(rd, m.ZERO, 0), "random"))
            self.finish(s.var, rd, plan)
        elif isinstance(s, StackAlloc):
            rd = self.dest(s.var)
            plan.append(self.emit(m.Addi(rd, m.SP, self.frame.alloc - s.nbytes), "alloc"))
            self.finish(s.var, rd, plan)
            self.plans[id(s)] = {"code": plan}
            self.stmt(s.body)
            return
        elif isinstance(s, If):
            self.test(s.cond, plan)
            to_else = self.emit(None)
            self.stmt(s.then)
            then_exit = self.emit(None)
            self.patch_jump(to_else[0], len(self.code))
            self.stmt(s.orelse)
            self.patch_jump(then_exit[0], len(self.code))
            self.plans[id(s)] = {"test": plan, "to_else": to_else, "then_exit": then_exit}
            return
        elif isinstance(s, While):
            head = len(self.code)
            self.test(s.cond, plan)
            exit_ = self.emit(None)
            self.stmt(s.body)
            back = self.emit(None)
            self.patch_jump(back[0], head)
            self.patch_jump(exit_[0], len(self.code))
            self.plans[id(s)] = {"test": plan, "exit": exit_, "back": back}
            return
        elif isinstance(s, Call):
            if s.fname not in self.p:
                raise CompileError(f"call to undefined function {s.fname}")
            for i, a in enumerate(s.args):
                self.move(m.A0 + i, self.read(a, m.T0, plan), plan)
            jal = self.emit(None)
            self.calls.append((jal[0], s.fname))
            results: list = []
            for i, r in enumerate(s.results):
                if r in self.frame.regs:
                    self.move(self.frame.regs[r], m.A0 + i, results)
                else:
                    results.append(self.emit(m.Sw(m.A0 + i, m.SP, self.frame.slots[r]), "slot"))
            self.plans[id(s)] = {"args": plan, "jal": jal, "results": results}
            return
        else:
            raise TypeError(f"not a statement: {s!r}")
        self.plans[id(s)] = {"code": plan}

    def program(self, base: int) -> m.MachineProgram:
        entry = self.p[self.p.entry]
        for f in [entry] + [f for f in self.p.functions if f is not entry]:
            self.function(f)
        for index, fname in self.calls:
            self.patch_jump(index, self.entries[fname], m.RA)
        entries = tuple((name, base + 4 * i) for name, i in self.entries.items())
        return m.MachineProgram(tuple(self.code), base, entries)



DEFAULT_CODE_BASE = 0x1000
DEFAULT_SP = 0x8000
STACK_BYTES = 0x1000


def codegen(p: Program, base: int = DEFAULT_CODE_BASE, sp0: int = DEFAULT_SP,
            width: int = 32) -> PassArtifact:
    if width != m.WIDTH:
        raise CompileError(f"the machine has {m.WIDTH}-bit words")
    src = _rebuild_program(p)
    if not is_flat(src):
        raise CompileError("code generation needs flat code; run flatten first")
    gen = _Codegen(src)
    prog = gen.program(base)
    plans, layouts = gen.plans, gen.layouts

    class Walker(_Walker):
        def __init__(self, program, source, sink, sp: int, position: int):
            super().__init__(program, source, sink)
            self.base = position
            self.sps = [sp]
            self.returns = [m.HALT]
            self.frames = [layouts[program.entry]]

        def piece(self, piece, at):
            index, recipe = piece
            instr = prog.instrs[index]
            self.out.emit(m.Fetch(self.base + 4 * index))
            if recipe == "fixed":
                for e in m.instr_leakage(instr, (0,) * m.NREGS):
                    self.out.emit(e)
            elif recipe == "slot":
                addr = (self.sps[-1] + instr.imm) & 0xFFFFFFFF
                self.out.emit(m.LeakLw(addr) if isinstance(instr, (m.Lw, m.Lb)) else m.LeakSw(addr))
            elif recipe == "mem":
                addr = self.leak(at).word
                self.out.emit(m.LeakLw(addr) if isinstance(instr, (m.Lw, m.Lb)) else m.LeakSw(addr))
            elif recipe == "div":
                a, b = self.leak(at), self.leak(at)
                self.out.emit(m.LeakDiv(a.word, b.word))
            elif recipe == "branch":
                bit = self.leak(at)
                self.out.emit(m.LeakBlt(bool(bit.word)))
                return bit.word
            elif recipe == "ret":
                self.out.emit(m.LeakJalr(self.returns[-1]))
            elif recipe in ("alloc", "random"):
                self.nondet(at)
                self.out.emit(m.LeakOp())

        def pieces(self, ps, at):
            for piece in ps:
                self.piece(piece, at)

        def function(self, name, ret=None):
            f = self.p[name]
            plan = plans[id(f)]
            if ret is not None:
                self.sps.append(self.sps[-1] - layouts[name].size)
                self.returns.append(ret)
                self.frames.append(layouts[name])
            self.pieces(plan["prologue"], f)
            self.stmt(f.body)
            self.pieces(plan["epilogue"], f)
            if ret is not None:
                self.sps.pop()
                self.returns.pop()
                self.frames.pop()

        def resolve(self, at):
            raise ReplayError("codegen replays only concrete traces")

        def stmt(self, s):
            if isinstance(s, Seq):
                self.stmt(s.first)
                self.stmt(s.second)
                return
            plan = plans.get(id(s))
            if isinstance(s, If):
                # the branch is taken into the then-part, else falls through to a jump
                bit = [self.piece(x, s) for x in plan["test"]][-1]
                if bit:
                    self.stmt(s.then)
                    self.piece(plan["then_exit"], s)
                else:
                    self.piece(plan["to_else"], s)
                    self.stmt(s.orelse)
            elif isinstance(s, While):
                while True:
                    bit = [self.piece(x, s) for x in plan["test"]][-1]
                    if not bit:
                        self.piece(plan["exit"], s)
                        break
                    self.stmt(s.body)
                    self.piece(plan["back"], s)
            elif isinstance(s, Call):
                self.pieces(plan["args"], s)
                index = plan["jal"][0]
                self.piece(plan["jal"], s)
                self.function(s.fname, self.base + 4 * index + 4)
                self.pieces(plan["results"], s)
            elif isinstance(s, StackAlloc):
                self.pieces(plan["code"], s)
                self.stmt(s.body)
            elif plan is not None:
                self.pieces(plan["code"], s)

    def gamma(k, ctx: LowContext = None):
        ctx = ctx or LowContext()
        sp = sp0 if ctx.sp is None else ctx.sp
        pos = base if ctx.code_position is None else ctx.code_position
        return _replay(lambda so, si: Walker(src, so, si, sp, pos), k)

    def oracle_transform(unit=None) -> Oracle:
        def answer(at, walker):
            if isinstance(at, StackAlloc):
                return walker.sps[-1] + (walker.frames[-1].alloc - at.nbytes)
            return 0
        return DerivedOracle(
            lambda k: _replay_prefix(lambda so, si: Walker(src, so, si, sp0, base), k, answer),
            "codegen")

    def predictor_transform(source_predictor):
        k_src = run_predictor(source_predictor, oracle_transform(None))
        if k_src is None:
            return CONSTANT_END
        try:
            k_machine = gamma(k_src)
        except ReplayError:
            return CONSTANT_END
        return chain_predictor(k_machine)

    entry_frame = layouts[src.entry].size
    manifest = {
        "code_base": base,
        "sp0": sp0,
        "initial_sp": sp0 + entry_frame,
        "entries": dict(prog.entries),
        "frames": {name: lay.size for name, lay in layouts.items()},
        "stack": [max(0, sp0 - STACK_BYTES), sp0 + entry_frame],
    }
    return PassArtifact("codegen", src, prog, gamma, oracle_transform, predictor_transform,
                        frozenset({"sp", "code_position"}), manifest)


def chain_predictor(events: Sequence) -> Predictor:
    """Predicts exactly one all-leak trace."""
    events = tuple(events)

    def p(k):
        n = len(k)
        if n < len(events) and tuple(k) == events[:n]:
            e = events[n]
            return PLeak(e.word if isinstance(e, Leak) else e)
        return PEnd()

    return Derived(p, "chain")


def machine_state(art: PassArtifact, args: Sequence[int], mem=None) -> m.MachineState:
    """Initial machine state for running a compiled program with the given arguments."""
    lo, hi = art.manifest["stack"]
    memory = {a: 0 for a in range(lo, hi)}
    memory.update(mem or {})
    regs = {m.SP: art.manifest["initial_sp"], m.RA: m.HALT}
    regs.update({m.A0 + i: a for i, a in enumerate(args)})
    return m.MachineState.initial(art.target.entry(art.source.entry), regs, memory)


# --- reordering demo ---------------------------------------------------------

def _leak_free(s: Stmt) -> bool:
    def pure(e):
        return not isinstance(e, BinOp) or (e.op not in LEAKY_OPS and pure(e.lhs) and pure(e.rhs))
    if isinstance(s, (Skip, Input)):
        return True
    if isinstance(s, Assign):
        return pure(s.expr)
    if isinstance(s, Output):
        return pure(s.expr)
    return False


def _static_leaks(s: Stmt) -> Optional[int]:
    """Number of leak events of a straight-line statement, if fixed."""
    def count(e):
        if isinstance(e, BinOp):
            return count(e.lhs) + count(e.rhs) + (2 if e.op in LEAKY_OPS else 0)
        return 0
    if isinstance(s, Assign):
        return count(s.expr)
    if isinstance(s, Load):
        return count(s.addr) + 1
    if isinstance(s, Store):
        return count(s.addr) + count(s.value) + 1
    return None


def reorder_random(p: Program) -> PassArtifact:
    """Moves a leading `random as x;` below the next statement when that one ignores x."""
    entry = p[p.entry] if p.entry in p else None
    body = flatten_seq(entry.body) if entry else []
    if len(body) < 2 or not isinstance(body[0], Random):
        raise PatternMismatch("entry function must start with `random as x;` and another statement")
    draw, nxt, rest = body[0], body[1], body[2:]
    n_leaks = _static_leaks(nxt)
    mentions = expr_vars(getattr(nxt, "expr", Literal(0))) | expr_vars(getattr(nxt, "addr", Literal(0))) \
        | expr_vars(getattr(nxt, "value", Literal(0))) | {getattr(nxt, "var", None)}
    if n_leaks is None or draw.var in mentions:
        raise PatternMismatch("the statement after the draw must be a load, store or assignment "
                              "that does not involve the drawn variable")
    if not all(_leak_free(s) for s in rest):
        raise PatternMismatch("statements after the swapped pair must not leak")
    target = p.replace_function(FnDef(entry.name, entry.params, entry.returns,
                                      seq(nxt, draw, *rest)))
    if any(isinstance(s, Call) for s in body):
        raise PatternMismatch("calls are not supported around the draw")

    def gamma(k, ctx: LowContext):
        k = tuple(k)
        if len(k) != 1 + n_leaks or not isinstance(k[0], CompNonDet):
            raise ReplayError("not a trace of the reordered program")
        moved = k[1:1 + n_leaks]
        return moved + (CompNonDet(ctx.oracle(moved)),)

    def predictor_transform(source_predictor):
        first = CompNonDet(0)  # the swapped statement's leakage does not depend on the draw

        def q(k):
            k = tuple(k)
            if len(k) < n_leaks:
                return source_predictor((first,) + k)
            if len(k) == n_leaks:
                return PBranch()
            if isinstance(k[n_leaks], CompNonDet):
                return source_predictor((first,) + k[:n_leaks] + k[n_leaks + 1:])
            return PEnd()
        return Derived(q, "reorder_random")

    return PassArtifact("reorder_random", p, target, gamma, None, predictor_transform,
                        frozenset({"oracle"}))


# --- pipeline ----------------------------------------------------------------

PASS_ORDER = ("flatten", "use_immediates", "dead_code_elim", "frame_alloc", "codegen")


def run_passes(p: Program, base: int = DEFAULT_CODE_BASE, sp0: int = DEFAULT_SP,
               width: int = 32, stages: Sequence[str] = PASS_ORDER) -> list[PassArtifact]:
    arts = []
    cur = p
    for name in stages:
        if name == "flatten":
            art = flatten(cur, width)
        elif name == "use_immediates":
            art = use_immediates(cur)
        elif name == "dead_code_elim":
            art = dead_code_elim(cur)
        elif name == "frame_alloc":
            art = frame_alloc(cur)
        elif name == "codegen":
            art = codegen(cur, base, sp0, width)
        elif name == "reorder_random":
            art = reorder_random(cur)
        else:
            raise CompileError(f"unknown pass {name!r}")
        arts.append(art)
        cur = art.target
    return arts


def compose(arts: Sequence[PassArtifact]) -> PassArtifact:
    """Chain artifacts: gammas forward, oracle transforms backward, predictor transforms forward."""
    arts = list(arts)
    if any(a.oracle_transform is None for a in arts):
        raise CompileError("every stage must provide an oracle transform to be composed")

    def level_oracles(low: Optional[Oracle]) -> list:
        # oracles[i] is the oracle for the target of stage i
        oracles = [None] * len(arts)
        cur = low
        for i in range(len(arts) - 1, -1, -1):
            oracles[i] = cur
            cur = arts[i].oracle_transform(cur)
        return oracles

    def gamma(k, ctx: LowContext = None):
        ctx = ctx or LowContext()
        oracles = level_oracles(ctx.oracle)
        for art, a in zip(arts, oracles):
            k = art.gamma(k, LowContext(a, ctx.sp, ctx.code_position))
        return tuple(k)

    def oracle_transform(low):
        cur = low
        for art in reversed(arts):
            cur = art.oracle_transform(cur)
        return cur

    def predictor_transform(p):
        for art in arts:
            p = art.predictor_transform(p)
        return p

    schema = frozenset().union(*(a.low_context_schema for a in arts[-1:]))
    manifest = dict(arts[-1].manifest)
    manifest["stages"] = [a.name for a in arts]
    return PassArtifact("+".join(a.name for a in arts), arts[0].source, arts[-1].target, gamma,
                        oracle_transform, predictor_transform, schema, manifest)


def compose_pipeline(p: Program, base: int = DEFAULT_CODE_BASE, sp0: int = DEFAULT_SP,
                     width: int = 32) -> PassArtifact:
    return compose(run_passes(p, base, sp0, width))


# --- contract checking -------------------------------------------------------

@dataclass(frozen=True)
class ContractReport:
    """Result of checking gamma against concrete source/target execution pairs."""
    pass_name: str
    runs: int
    skipped: int
    failures: tuple = ()

    @property
    def ok(self) -> bool:
        return not self.failures

    @property
    def vacuous(self) -> bool:
        return self.runs == 0


def _inputs_of(io) -> tuple[int, ...]:
    return tuple(e.word for e in io if isinstance(e, In))


def check_contract(art: PassArtifact, env: ExecEnv, args: Sequence[int], mem=None,
                   low: Optional[Oracle] = None) -> ContractReport:
    """Runs source and target side by side and compares io and gamma-mapped leakage.

    Both sides use zero-filled allocations. Source runs range over `env.inputs`;
    the target replays the inputs the source consumed.
    """
    mem = dict(mem or {})
    source_env = replace(env, program=art.source, fill=ConstantFill(0))
    runs = skipped = 0
    failures = []
    if art.oracle_transform is None:
        return _check_backward(art, env, args, mem, low)
    to_machine = isinstance(art.target, m.MachineProgram)
    a_src = art.oracle_transform(low)
    for o in exec_oracle_all(source_env, args, a_src, mem):
        if not isinstance(o, Terminated):
            skipped += 1
            continue
        runs += 1
        scripted = _inputs_of(o.io)
        try:
            expected = art.gamma(o.leak, LowContext(low, art.manifest.get("sp0"),
                                                    art.manifest.get("code_base")))
        except ReplayError as e:
            failures.append(f"gamma rejected a source trace: {e}")
            continue
        if to_machine:
            t = m.mrun(art.target, machine_state(art, args, mem), scripted, env.fuel)
            if t.status != "terminated":
                failures.append(f"machine run ended with {t.status} {t.reason}")
                continue
            if tuple(t.regs[m.A0:m.A0 + len(o.returns)]) != tuple(o.returns):
                failures.append("machine return values differ from the source")
        else:
            target_env = replace(env, program=art.target, inputs=Scripted(scripted),
                                 fill=ConstantFill(0))
            t = exec_oracle(target_env, args, low, mem)
            if not isinstance(t, Terminated):
                failures.append(f"target run ended with {t.status}")
                continue
        if tuple(t.io) != tuple(o.io):
            failures.append(f"io differs: {o.io} vs {t.io}")
        elif tuple(t.leak) != tuple(expected):
            failures.append(f"target leakage is not gamma of the source leakage (args {list(args)})")
    return ContractReport(art.name, runs, skipped, tuple(failures))


def _check_backward(art, env, args, mem, low) -> ContractReport:
    """For passes without an oracle transform: each target run must be explained by a source run."""
    target_env = replace(env, program=art.target, fill=ConstantFill(0))
    runs = skipped = 0
    failures = []
    for t in exec_oracle_all(target_env, args, low, mem):
        if not isinstance(t, Terminated):
            skipped += 1
            continue
        runs += 1
        answers = [e.word for e in t.leak if isinstance(e, CompNonDet)]
        replay = iter(answers)
        a_src = DerivedOracle(lambda k, it=replay: next(it, 0), "replayed target choices", low.width)
        source_env = replace(env, program=art.source, inputs=Scripted(_inputs_of(t.io)),
                             fill=ConstantFill(0))
        o = exec_oracle(source_env, args, a_src, mem)
        if not isinstance(o, Terminated):
            failures.append(f"no source run matches a target run ({o.status})")
            continue
        try:
            mapped = art.gamma(o.leak, LowContext(low))
        except ReplayError as e:
            failures.append(f"gamma rejected a source trace: {e}")
            continue
        if tuple(o.io) != tuple(t.io) or tuple(mapped) != tuple(t.leak):
            failures.append("target run is not the gamma image of its source run")
    return ContractReport(art.name, runs, skipped, tuple(failures))


# a placeholder allocation address, far from anything the corpus touches
_FAR_ADDRESS = 0x4000_0000


def program_predictor(env: ExecEnv, args: Sequence[int], mem=None) -> Predictor:
    """Predictor read off the program itself for one fixed input and memory.

    Branch answers are taken from the queried prefix; the next event is whatever
    a run replaying those answers produces at that position.
    """
    mem = dict(mem or {})
    runs: dict[tuple, tuple] = {}

    def run(answers: tuple) -> tuple:
        if answers not in runs:
            def oracle(q):
                n = sum(isinstance(e, CompNonDet) for e in q)
                return answers[n] if n < len(answers) else _FAR_ADDRESS
            runs[answers] = tuple(exec_oracle(env, args, DerivedOracle(oracle, "replay", env.width),
                                              mem).leak)
        return runs[answers]

    def p(k):
        trace = run(tuple(e.word for e in k if isinstance(e, CompNonDet)))
        if trace[:len(k)] != tuple(k) or len(trace) == len(k):
            return PEnd()
        e = trace[len(k)]
        return PBranch() if isinstance(e, CompNonDet) else PLeak(e.word)

    return Derived(p, "program")


def check_predictor_contract(art: PassArtifact, env: ExecEnv, args: Sequence[int], mem=None,
                             universe: ChoiceUniverse = ChoiceUniverse()) -> ContractReport:
    """Whenever a source predictor predicts every source trace, its transform predicts
    every target trace with the same inputs."""
    mem = dict(mem or {})
    source_env = replace(env, program=art.source, fill=ConstantFill(0))
    runs = skipped = 0
    failures = []
    by_inputs: dict[tuple, list] = {}
    for o in explore(source_env, args, universe, mem):
        if isinstance(o, Terminated):
            by_inputs.setdefault(_inputs_of(o.io), []).append(o)
        else:
            skipped += 1
    to_machine = isinstance(art.target, m.MachineProgram)
    for inputs, outcomes in sorted(by_inputs.items()):
        scripted = replace(source_env, inputs=Scripted(inputs))
        source_predictor = program_predictor(scripted, args, mem)
        if not all(predicts(source_predictor, o.leak) for o in outcomes):
            failures.append(f"precondition: source predictor misses a source trace (inputs {inputs})")
            continue
        target_predictor = art.predictor_transform(source_predictor)
        if to_machine:
            targets = [m.mrun(art.target, machine_state(art, args, mem), inputs, env.fuel)]
            targets = [t for t in targets if t.status == "terminated"]
        else:
            target_env = replace(env, program=art.target, inputs=Scripted(inputs), fill=ConstantFill(0))
            targets = [t for t in explore(target_env, args, universe, mem) if isinstance(t, Terminated)]
        for t in targets:
            runs += 1
            if not predicts(target_predictor, t.leak):
                failures.append(f"transformed predictor misses a target trace (inputs {inputs})")
                break
    return ContractReport(art.name, runs, skipped, tuple(failures))


def check_oracle_purity(art: PassArtifact, env: ExecEnv, args: Sequence[int],
                        mems: Sequence, low: Optional[Oracle] = None) -> ContractReport:
    """Source-oracle answers depend only on the low oracle and the queried prefix."""
    if art.oracle_transform is None:
        return ContractReport(art.name, 0, 0, ("pass provides no oracle transform",))
    source_env = replace(env, program=art.source, fill=ConstantFill(0))
    prefixes: set = set()
    for mem in mems:
        for o in exec_oracle_all(source_env, args, art.oracle_transform(low), mem):
            prefixes.update(nondet_prefixes(o.leak))
    failures = []
    answers = [{k: art.oracle_transform(low)(k) for k in prefixes} for _ in mems]
    if any(a != answers[0] for a in answers):
        failures.append("oracle transform answers differ between memory configurations")
    return ContractReport(art.name, len(prefixes), 0, tuple(failures))


@dataclass(frozen=True)
class OracleCounterexample:
    """Target runs whose choices no single source oracle can reproduce."""
    prefix: tuple  # the source query point both runs share
    required: dict  # argument tuple -> answer the source oracle would have to give there
    target_outputs: dict
    source_outputs: dict

    @property
    def contradiction(self) -> bool:
        return len(set(self.required.values())) > 1

    def explain(self) -> str:
        words = sorted(set(self.required.values()))
        return (f"any source oracle must answer {len(words)} different words "
                f"{words} at {list(self.prefix)}")


def reorder_oracle_counterexample(art: PassArtifact, env: ExecEnv, arg_sets: Sequence,
                                  low: Oracle, mem=None) -> Optional[OracleCounterexample]:
    """Searches for two argument sets forcing different source-oracle answers at one prefix.

    For each target run the source run must draw the same word the target drew;
    the source asks for it at its own query prefix. Two runs sharing that prefix
    but needing different words refute every candidate oracle transform.
    """
    mem = dict(mem or {})
    target_env = replace(env, program=art.target, fill=ConstantFill(0))
    source_env = replace(env, program=art.source, fill=ConstantFill(0))
    needs: dict[tuple, dict] = {}
    target_out, source_out = {}, {}
    for args in arg_sets:
        args = tuple(args)
        t = exec_oracle(target_env, args, low, mem)
        source_out[args] = [e.word for e in exec_oracle(source_env, args, low, mem).io
                            if isinstance(e, Out)]
        if not isinstance(t, Terminated):
            continue
        target_out[args] = [e.word for e in t.io if isinstance(e, Out)]
        drawn = [e.word for e in t.leak if isinstance(e, CompNonDet)]
        it = iter(drawn)
        matched = exec_oracle(source_env, args, DerivedOracle(lambda k: next(it, 0)), mem)
        for q, word in zip(nondet_prefixes(matched.leak), drawn):
            needs.setdefault(tuple(q), {})[args] = word
    for prefix, required in needs.items():
        if len(set(required.values())) > 1:
            return OracleCounterexample(prefix, required, target_out, source_out)
    return None
