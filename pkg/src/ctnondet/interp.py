"""Leakage-instrumented execution of source programs.

Three executors share one engine:

* `exec_oracle` resolves allocation addresses and `random` through an oracle,
* `exec_enumerate` explores every resolution drawn from a `ChoiceUniverse`,
* `step` is a small-step relation used to cross-check the big-step engine.

Inputs and fresh allocation contents are a separate source of nondeterminism
and are never resolved by the oracle.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace
from typing import Callable, Iterable, Mapping, Optional, Sequence, Union

from . import lang
from .lang import (Assign, Call, Expr, If, Input, Literal, Load, Output,
                   Program, Random, Seq, Skip, StackAlloc, Stmt, Store, Var, While,
                   apply_op, mask, word_bytes)
from .trace import CompNonDet, In, Leak, Oracle, Out, compatible

DEFAULT_FUEL = 10**6
DEFAULT_BASES = (64, 128, 192)
DEFAULT_RANDOM_VALUES = (0, 1)
DEFAULT_CONTENT_DOMAIN = (0x00, 0xAA)


# --- environment -----------------------------------------------------------

@dataclass(frozen=True)
class Scripted:
    values: tuple[int, ...] = ()


@dataclass(frozen=True)
class InputDomain:
    """The i-th input draws from per_call[i]; inputs past the end are unavailable."""
    per_call: tuple[tuple[int, ...], ...] = ()


@dataclass(frozen=True)
class ConstantFill:
    byte: int = 0


@dataclass(frozen=True)
class SeededFill:
    seed: int


@dataclass(frozen=True)
class DomainFill:
    values: tuple[int, ...] = DEFAULT_CONTENT_DOMAIN


@dataclass(frozen=True)
class ExecEnv:
    program: Program
    inputs: Union[Scripted, InputDomain] = Scripted()
    fill: Union[ConstantFill, SeededFill, DomainFill] = ConstantFill()
    fuel: int = DEFAULT_FUEL
    width: int = lang.DEFAULT_WIDTH

    def __post_init__(self):
        if self.fuel <= 0:
            raise ValueError("fuel must be positive")


@dataclass(frozen=True)
class ChoiceUniverse:
    bases: tuple[int, ...] = DEFAULT_BASES
    random_values: tuple[int, ...] = DEFAULT_RANDOM_VALUES

    def __post_init__(self):
        if not self.bases or not self.random_values:
            raise ValueError("choice universe must be nonempty")


# --- outcomes --------------------------------------------------------------

@dataclass(frozen=True)
class Terminated:
    mem: tuple[tuple[int, int], ...]
    locals: tuple[tuple[str, int], ...]
    io: tuple
    leak: tuple
    returns: tuple[int, ...]
    status = "terminated"

    @property
    def memory(self) -> dict[int, int]:
        return dict(self.mem)


@dataclass(frozen=True)
class BenignStuck:
    reason: str  # "OutOfMemory" | "NoInput"
    io: tuple
    leak: tuple
    status = "benign_stuck"
    returns = ()


@dataclass(frozen=True)
class ErrorStuck:
    reason: str
    io: tuple
    leak: tuple
    status = "error_stuck"
    returns = ()


@dataclass(frozen=True)
class FuelExhausted:
    io: tuple = ()
    leak: tuple = ()
    status = "fuel_exhausted"
    returns = ()


Outcome = Union[Terminated, BenignStuck, ErrorStuck, FuelExhausted]


def outcome_to_json(o: Outcome) -> dict:
    from .trace import event_to_json
    return {
        "status": o.status,
        "io": [event_to_json(e) for e in o.io],
        "leak": [event_to_json(e) for e in o.leak],
        "returns": list(o.returns),
    }


# --- expression evaluation -------------------------------------------------

class _Stuck(Exception):
    def __init__(self, kind: str, reason: str):
        self.kind = kind
        self.reason = reason


def _error(reason: str) -> _Stuck:
    return _Stuck("error", reason)


def _eval(e: Expr, env: Mapping[str, int], width: int, leak: list) -> int:
    if isinstance(e, Literal):
        return mask(e.value, width)
    if isinstance(e, Var):
        if e.name not in env:
            raise _error(f"UndefinedVariable {e.name}")
        return env[e.name]
    lhs = _eval(e.lhs, env, width, leak)
    rhs = _eval(e.rhs, env, width, leak)
    if e.op in lang.LEAKY_OPS:
        leak.append(Leak(lhs))
        leak.append(Leak(rhs))
    return apply_op(e.op, lhs, rhs, width)


def eval_expr(e: Expr, env: Mapping[str, int], mem: Mapping[int, int] = None,
              width: int = lang.DEFAULT_WIDTH) -> tuple[int, tuple] | ErrorStuck:
    """Value and leakage of an expression; `mem` is unused since loads are statements."""
    leak: list = []
    try:
        value = _eval(e, env, width, leak)
    except _Stuck as s:
        return ErrorStuck(s.reason, (), tuple(leak))
    return value, tuple(leak)


# --- memory helpers --------------------------------------------------------

def _read(mem: Mapping[int, int], addr: int, size: int, width: int) -> int:
    value = 0
    for i in range(size):
        a = mask(addr + i, width)
        if a not in mem:
            raise _error(f"load outside memory at {a}")
        value |= mem[a] << (8 * i)
    return value


def _write(mem: dict, addr: int, value: int, size: int, width: int):
    cells = [mask(addr + i, width) for i in range(size)]
    for a in cells:
        if a not in mem:
            raise _error(f"store outside memory at {a}")
    for i, a in enumerate(cells):
        mem[a] = (value >> (8 * i)) & 0xFF


def alloc_fits(mem: Mapping[int, int], addr: int, nbytes: int, width: int) -> bool:
    if addr % word_bytes(width) or addr + nbytes > (1 << width):
        return False
    return not any(addr + i in mem for i in range(nbytes))


def seeded_byte(seed: int, addr: int, serial: int) -> int:
    h = hashlib.blake2b(f"{seed}:{addr}:{serial}".encode(), digest_size=1)
    return h.digest()[0]


# --- big-step engine -------------------------------------------------------

Chooser = Callable[[Sequence[int]], int]


class _Run:
    """One execution; every nondeterministic choice goes through `choose`."""

    def __init__(self, env: ExecEnv, oracle: Optional[Oracle], universe: Optional[ChoiceUniverse],
                 choose: Chooser, mem: Mapping[int, int]):
        self.env = env
        self.width = env.width
        self.oracle = oracle
        self.universe = universe
        self.choose = choose
        self.mem = dict(mem)
        self.io: list = []
        self.leak: list = []
        self.fuel = env.fuel
        self.allocs = 0
        self.inputs_used = 0

    def tick(self):
        self.fuel -= 1
        if self.fuel < 0:
            raise _Stuck("fuel", "")

    def eval(self, e: Expr, env: Mapping[str, int]) -> int:
        return _eval(e, env, self.width, self.leak)

    def resolve(self, options: Sequence[int]) -> int:
        if self.oracle is not None:
            return self.oracle(tuple(self.leak))
        return self.choose(options)

    def next_input(self) -> int:
        policy = self.env.inputs
        i = self.inputs_used
        if isinstance(policy, Scripted):
            if i >= len(policy.values):
                raise _Stuck("benign", "NoInput")
            value = policy.values[i]
        else:
            if i >= len(policy.per_call) or not policy.per_call[i]:
                raise _Stuck("benign", "NoInput")
            value = self.choose(policy.per_call[i])
        self.inputs_used += 1
        return mask(value, self.width)

    def fill(self, addr: int, nbytes: int):
        policy = self.env.fill
        for i in range(nbytes):
            if isinstance(policy, ConstantFill):
                b = policy.byte
            elif isinstance(policy, SeededFill):
                b = seeded_byte(policy.seed, addr + i, self.allocs)
            else:
                b = self.choose(policy.values)
            self.mem[addr + i] = b & 0xFF

    def call(self, fname: str, args: Sequence[int]) -> tuple[dict, list[int]]:
        fn = self.env.program[fname]
        if len(args) != len(fn.params):
            raise _error(f"arity mismatch calling {fname}")
        local = dict(zip(fn.params, args))
        self.exec(fn.body, local)
        missing = [r for r in fn.returns if r not in local]
        if missing:
            raise _error(f"UndefinedVariable {missing[0]}")
        return local, [local[r] for r in fn.returns]

    def exec(self, s: Stmt, local: dict):
        self.tick()
        if isinstance(s, Seq):
            self.exec(s.first, local)
            self.exec(s.second, local)
        elif isinstance(s, Skip):
            pass
        elif isinstance(s, Assign):
            local[s.var] = self.eval(s.expr, local)
        elif isinstance(s, Load):
            addr = self.eval(s.addr, local)
            self.leak.append(Leak(addr))
            local[s.var] = _read(self.mem, addr, s.size, self.width)
        elif isinstance(s, Store):
            value = self.eval(s.value, local)
            addr = self.eval(s.addr, local)
            self.leak.append(Leak(addr))
            _write(self.mem, addr, value, s.size, self.width)
        elif isinstance(s, If):
            b = int(self.eval(s.cond, local) != 0)
            self.leak.append(Leak(b))
            self.exec(s.then if b else s.orelse, local)
        elif isinstance(s, While):
            while True:
                b = int(self.eval(s.cond, local) != 0)
                self.leak.append(Leak(b))
                if not b:
                    break
                self.exec(s.body, local)
                self.tick()
        elif isinstance(s, StackAlloc):
            addr = mask(self.resolve(self.universe.bases if self.universe else ()), self.width)
            if not alloc_fits(self.mem, addr, s.nbytes, self.width):
                raise _Stuck("benign", "OutOfMemory")
            self.leak.append(CompNonDet(addr))
            self.fill(addr, s.nbytes)
            self.allocs += 1
            local[s.var] = addr
            self.exec(s.body, local)
            for i in range(s.nbytes):
                self.mem.pop(addr + i, None)
        elif isinstance(s, Random):
            value = mask(self.resolve(self.universe.random_values if self.universe else ()), self.width)
            self.leak.append(CompNonDet(value))
            local[s.var] = value
        elif isinstance(s, Input):
            value = self.next_input()
            self.io.append(In(value))
            local[s.var] = value
        elif isinstance(s, Output):
            self.io.append(Out(self.eval(s.expr, local)))
        elif isinstance(s, Call):
            if s.fname not in self.env.program:
                raise _error(f"UndefinedFunction {s.fname}")
            args = [self.eval(a, local) for a in s.args]
            _, results = self.call(s.fname, args)
            if len(results) != len(s.results):
                raise _error(f"arity mismatch calling {s.fname}")
            local.update(zip(s.results, results))
        else:
            raise TypeError(f"not a statement: {s!r}")

    def outcome(self, args: Sequence[int]) -> Outcome:
        io, leak = tuple(self.io), tuple(self.leak)
        try:
            if self.env.program.entry not in self.env.program:
                raise _error(f"UndefinedFunction {self.env.program.entry}")
            local, returns = self.call(self.env.program.entry, [mask(a, self.width) for a in args])
        except _Stuck as s:
            io, leak = tuple(self.io), tuple(self.leak)
            if s.kind == "benign":
                return BenignStuck(s.reason, io, leak)
            if s.kind == "fuel":
                return FuelExhausted(io, leak)
            return ErrorStuck(s.reason, io, leak)
        except RecursionError:
            return FuelExhausted(tuple(self.io), tuple(self.leak))
        return Terminated(tuple(sorted(self.mem.items())), tuple(sorted(local.items())),
                          tuple(self.io), tuple(self.leak), tuple(returns))


def _no_choice(options: Sequence[int]) -> int:
    raise ValueError("this execution needs a choice; use Scripted inputs and a non-Domain fill")


def _explore(run_once: Callable[[Chooser], Outcome]) -> dict[Outcome, tuple[int, ...]]:
    """Depth-first enumeration of every choice sequence by replay.

    Maps each distinct outcome to the first choice sequence that produced it.
    """
    seen: dict[Outcome, tuple[int, ...]] = {}
    pending: list[list[int]] = [[]]
    while pending:
        prefix = pending.pop()
        picks: list[int] = []
        widths: list[int] = []

        def choose(options: Sequence[int]) -> int:
            i = len(picks)
            pick = prefix[i] if i < len(prefix) else 0
            picks.append(pick)
            widths.append(len(options))
            return options[pick]

        seen.setdefault(run_once(choose), tuple(picks))
        for i in range(len(widths) - 1, len(prefix) - 1, -1):
            for alt in range(widths[i] - 1, 0, -1):
                pending.append(picks[:i] + [alt])
    return seen


def exec_oracle(env: ExecEnv, args: Sequence[int], a: Oracle,
                mem: Mapping[int, int] = None) -> Outcome:
    """Single deterministic run; env must use Scripted inputs and a non-Domain fill."""
    return _Run(env, a, None, _no_choice, mem or {}).outcome(args)


def exec_oracle_all(env: ExecEnv, args: Sequence[int], a: Oracle,
                    mem: Mapping[int, int] = None) -> list[Outcome]:
    """All runs under oracle `a`, ranging over input and content choices only."""
    return list(explore_oracle(env, args, a, mem))


def explore_oracle(env: ExecEnv, args: Sequence[int], a: Oracle,
                   mem: Mapping[int, int] = None) -> dict[Outcome, tuple[int, ...]]:
    return _explore(lambda choose: _Run(env, a, None, choose, mem or {}).outcome(args))


def exec_enumerate(env: ExecEnv, args: Sequence[int], u: ChoiceUniverse = ChoiceUniverse(),
                   mem: Mapping[int, int] = None) -> list[Outcome]:
    """Every distinct outcome over all resolutions drawn from `u`."""
    return list(explore(env, args, u, mem))


def explore(env: ExecEnv, args: Sequence[int], u: ChoiceUniverse = ChoiceUniverse(),
            mem: Mapping[int, int] = None) -> dict[Outcome, tuple[int, ...]]:
    """Like exec_enumerate, but keeps the choice indices that replay each outcome."""
    return _explore(lambda choose: _Run(env, None, u, choose, mem or {}).outcome(args))


def exec_with_choices(env: ExecEnv, args: Sequence[int], choices: Sequence[int],
                      u: ChoiceUniverse = ChoiceUniverse(), oracle: Optional[Oracle] = None,
                      mem: Mapping[int, int] = None) -> Outcome:
    """Replay one execution from explicit choice indices (used to replay witnesses)."""
    it = iter(choices)
    return _Run(env, oracle, u, lambda options: options[next(it, 0)], mem or {}).outcome(args)


# --- postcondition checking ------------------------------------------------

@dataclass(frozen=True)
class OmniAll:
    pass


@dataclass(frozen=True)
class OracleRun:
    oracle: Oracle


@dataclass(frozen=True)
class OracleStar:
    oracle: Oracle


@dataclass(frozen=True)
class Verdict:
    holds: bool
    counterexample: Optional[Outcome] = None

    def __bool__(self):
        return self.holds


def _judge(outcomes: Iterable[Outcome], post: Callable[[Outcome], bool],
           guard: Callable[[Outcome], bool] = lambda o: True) -> Verdict:
    for o in outcomes:
        if isinstance(o, (ErrorStuck, FuelExhausted)):
            return Verdict(False, o)
        if isinstance(o, Terminated) and guard(o) and not post(o):
            return Verdict(False, o)
    return Verdict(True)


def check_post(env: ExecEnv, args: Sequence[int], u: ChoiceUniverse,
               post: Callable[[Outcome], bool], mode=OmniAll(),
               mem: Mapping[int, int] = None, outcomes: Sequence[Outcome] = None) -> Verdict:
    """Judge `post` over executions.

    OracleRun ranges only over input and content choices. `outcomes` may pass a
    precomputed enumeration for OmniAll/OracleStar.
    """
    if isinstance(mode, OracleRun):
        return _judge(exec_oracle_all(env, args, mode.oracle, mem), post)
    if outcomes is None:
        outcomes = exec_enumerate(env, args, u, mem)
    if isinstance(mode, OracleStar):
        a = mode.oracle
        return _judge(outcomes, post, lambda o: compatible(o.leak, a))
    return _judge(outcomes, post)


# --- small-step stepper ----------------------------------------------------

@dataclass(frozen=True)
class EndAlloc:
    addr: int
    nbytes: int


@dataclass(frozen=True)
class Return:
    fname: str
    results: Optional[tuple[str, ...]]  # None for the entry call
    caller: tuple[tuple[str, int], ...]


@dataclass(frozen=True)
class Config:
    cont: tuple  # statements and markers, next item first
    mem: tuple[tuple[int, int], ...]
    locals: tuple[tuple[str, int], ...]
    io: tuple = ()
    leak: tuple = ()
    inputs_used: int = 0
    returns: Optional[tuple[int, ...]] = None

    @property
    def finished(self) -> bool:
        return not self.cont and self.returns is not None


@dataclass(frozen=True)
class StepContext:
    env: ExecEnv
    universe: ChoiceUniverse = ChoiceUniverse()


def initial_config(env: ExecEnv, args: Sequence[int], mem: Mapping[int, int] = None) -> Config:
    fn = env.program[env.program.entry]
    local = tuple(sorted(zip(fn.params, (mask(a, env.width) for a in args))))
    return Config((fn.body, Return(fn.name, None, ())), tuple(sorted((mem or {}).items())), local)


def _fills(policy, addr: int, nbytes: int) -> list[tuple[int, ...]]:
    if isinstance(policy, ConstantFill):
        return [(policy.byte & 0xFF,) * nbytes]
    if isinstance(policy, SeededFill):
        raise ValueError("the stepper does not model seeded fills; use Constant or Domain")
    out: list[tuple[int, ...]] = [()]
    for _ in range(nbytes):
        out = [prefix + (b & 0xFF,) for prefix in out for b in policy.values]
    return out


def step(c: Config, ctx: StepContext) -> list[Config]:
    """Successor configurations; empty when finished or stuck."""
    if not c.cont:
        return []
    env, width = ctx.env, ctx.env.width
    head, rest = c.cont[0], c.cont[1:]
    local = dict(c.locals)
    leak = list(c.leak)

    def nxt(cont=rest, mem=c.mem, loc=None, io=c.io, **kw) -> Config:
        return replace(c, cont=cont, mem=mem, locals=c.locals if loc is None else loc,
                       io=io, leak=tuple(leak), **kw)

    def pack(d: Mapping) -> tuple:
        return tuple(sorted(d.items()))

    try:
        if isinstance(head, Seq):
            return [nxt((head.first, head.second) + rest)]
        if isinstance(head, Skip):
            return [nxt()]
        if isinstance(head, Assign):
            local[head.var] = _eval(head.expr, local, width, leak)
            return [nxt(loc=pack(local))]
        if isinstance(head, Load):
            addr = _eval(head.addr, local, width, leak)
            leak.append(Leak(addr))
            local[head.var] = _read(dict(c.mem), addr, head.size, width)
            return [nxt(loc=pack(local))]
        if isinstance(head, Store):
            value = _eval(head.value, local, width, leak)
            addr = _eval(head.addr, local, width, leak)
            leak.append(Leak(addr))
            mem = dict(c.mem)
            _write(mem, addr, value, head.size, width)
            return [nxt(mem=pack(mem))]
        if isinstance(head, If):
            b = int(_eval(head.cond, local, width, leak) != 0)
            leak.append(Leak(b))
            return [nxt(((head.then if b else head.orelse),) + rest)]
        if isinstance(head, While):
            b = int(_eval(head.cond, local, width, leak) != 0)
            leak.append(Leak(b))
            return [nxt((head.body, head) + rest if b else rest)]
        if isinstance(head, Output):
            value = _eval(head.expr, local, width, leak)
            return [nxt(io=c.io + (Out(value),))]
        if isinstance(head, Input):
            policy = env.inputs
            i = c.inputs_used
            if isinstance(policy, Scripted):
                options = policy.values[i:i + 1]
            else:
                options = policy.per_call[i] if i < len(policy.per_call) else ()
            out = []
            for v in options:
                v = mask(v, width)
                out.append(nxt(loc=pack({**local, head.var: v}), io=c.io + (In(v),),
                               inputs_used=i + 1))
            return out
        if isinstance(head, Random):
            return [replace(c, cont=rest, locals=pack({**local, head.var: mask(v, width)}),
                            leak=c.leak + (CompNonDet(mask(v, width)),))
                    for v in ctx.universe.random_values]
        if isinstance(head, StackAlloc):
            out = []
            mem = dict(c.mem)
            for base in ctx.universe.bases:
                base = mask(base, width)
                if not alloc_fits(mem, base, head.nbytes, width):
                    continue
                for contents in _fills(env.fill, base, head.nbytes):
                    m2 = {**mem, **{base + i: b for i, b in enumerate(contents)}}
                    out.append(replace(c, cont=(head.body, EndAlloc(base, head.nbytes)) + rest,
                                       mem=pack(m2), locals=pack({**local, head.var: base}),
                                       leak=c.leak + (CompNonDet(base),)))
            return out
        if isinstance(head, EndAlloc):
            mem = {a: b for a, b in c.mem if not head.addr <= a < head.addr + head.nbytes}
            return [nxt(mem=pack(mem))]
        if isinstance(head, Call):
            if head.fname not in env.program:
                return []
            fn = env.program[head.fname]
            args = [_eval(a, local, width, leak) for a in head.args]
            if len(args) != len(fn.params) or len(head.results) != len(fn.returns):
                return []
            callee = pack(dict(zip(fn.params, args)))
            return [nxt((fn.body, Return(fn.name, head.results, c.locals)) + rest, loc=callee)]
        if isinstance(head, Return):
            fn = env.program[head.fname]
            if any(r not in local for r in fn.returns):
                return []
            values = tuple(local[r] for r in fn.returns)
            if head.results is None:
                return [nxt(returns=values)]
            caller = dict(head.caller)
            caller.update(zip(head.results, values))
            return [nxt(loc=pack(caller))]
    except _Stuck:
        return []
    raise TypeError(f"cannot step {head!r}")


def run_small_step(env: ExecEnv, args: Sequence[int], u: ChoiceUniverse = ChoiceUniverse(),
                   mem: Mapping[int, int] = None, max_steps: int = DEFAULT_FUEL) -> set[tuple]:
    """(io, leak, returns) of every finished configuration reachable by `step`."""
    ctx = StepContext(env, u)
    frontier = {initial_config(env, args, mem)}
    finished = set()
    for _ in range(max_steps):
        if not frontier:
            return finished
        successors = set()
        for c in frontier:
            if c.finished:
                finished.add((c.io, c.leak, c.returns))
            else:
                successors.update(step(c, ctx))
        frontier = successors
    raise RuntimeError("small-step search did not finish within its step budget")
