"""Example programs shipped with the package, each with a default run setup."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Mapping

from itertools import product

from ..ctcheck import Assignment
from ..interp import ConstantFill, DomainFill, ExecEnv, InputDomain, Scripted
from ..lang import DEFAULT_WIDTH, Program, parse
from ..trace import In, PublicProjection, args_projection


def words_to_bytes(base: int, words, size: int = 4) -> dict[int, int]:
    mem = {}
    for i, w in enumerate(words):
        for j in range(size):
            mem[base + i * size + j] = (w >> (8 * j)) & 0xFF
    return mem


@dataclass(frozen=True)
class Example:
    name: str
    file: str
    args: tuple[int, ...] = ()
    mem: Mapping[int, int] = field(default_factory=dict)
    inputs: object = Scripted()
    fill: object = DomainFill()
    entry: str | None = None
    # default labeling for constant-time checks
    public: PublicProjection = args_projection()
    secrets: tuple = ()
    variants: tuple = ()  # alternative argument tuples, used when searching for counterexamples

    def secret_space(self) -> tuple[Assignment, ...]:
        return self.secrets or (Assignment(self.args, dict(self.mem)),)

    def source(self) -> str:
        return resources.files(__package__).joinpath(self.file).read_text(encoding="utf-8")

    def program(self, width: int = DEFAULT_WIDTH) -> Program:
        p = _parse_cached(self.file, width)
        return p.with_entry(self.entry) if self.entry else p

    def env(self, **overrides) -> ExecEnv:
        kw = dict(program=self.program(overrides.get("width", DEFAULT_WIDTH)),
                  inputs=self.inputs, fill=self.fill)
        kw.update(overrides)
        return ExecEnv(**kw)


@lru_cache(maxsize=None)
def _parse_cached(file: str, width: int) -> Program:
    text = resources.files(__package__).joinpath(file).read_text(encoding="utf-8")
    return parse(text, width)


PASSWORD = b"hunter22"


def _inputs(io) -> list[int]:
    return [e.word for e in io if isinstance(e, In)]


def _read_word(mem, addr: int) -> int:
    return sum(mem.get(addr + j, 0) << (8 * j) for j in range(4))


# login: the username alone, or the username plus the declassified comparison bit
LOGIN_BY_USER = PublicProjection(lambda args, mem, io: _inputs(io)[0], name="username")
LOGIN_BY_USER_AND_MATCH = PublicProjection(
    lambda args, mem, io: (_inputs(io)[0], _inputs(io)[1] == _read_word(mem, args[0] + 4 * _inputs(io)[0])),
    name="username+match")
# getline stops at a newline, so only the typed length is public
LINE_LENGTH = PublicProjection(
    lambda args, mem, io: next((i for i, c in enumerate(_inputs(io)) if c == 10), len(_inputs(io))),
    name="line length")

SWAP_SECRETS = tuple(Assignment((16, 20), words_to_bytes(16, [a, b]))
                     for a, b in product((0, 1), repeat=2))
FILL_SECRETS = tuple(Assignment((), {}, fill=ConstantFill(b)) for b in (0x00, 0x11, 0xAA, 0xFF))
MEMEQUAL_SECRETS = tuple(
    Assignment((16, 48, 2), {16: a0, 17: a1, 48: b0, 49: b1})
    for a0, a1, b0, b1 in product((0, 1), repeat=4))

EXAMPLES: dict[str, Example] = {e.name: e for e in [
    Example("swap", "swap.ct", (16, 20), words_to_bytes(16, [0, 1]),
            public=args_projection(0, 1), secrets=SWAP_SECRETS),
    Example("stack_swap", "stack_swap.ct", secrets=FILL_SECRETS),
    Example("stackalloc_and_print", "stackalloc_and_print.ct"),
    Example("login", "login.ct", (16,), words_to_bytes(16, [1000, 2000]),
            InputDomain(((0, 1), (1000, 2000))), public=LOGIN_BY_USER),
    # allocation contents never reach the leakage, so zero-fill keeps enumeration small
    Example("countdown", "countdown.ct", (2,), fill=ConstantFill(0),
            secrets=tuple(Assignment((x,)) for x in (1, 2, 3))),
    Example("memequal", "memequal.ct", (16, 48, 2),
            {16: 1, 17: 0, 48: 1, 49: 1}, public=args_projection(0, 1, 2), secrets=MEMEQUAL_SECRETS),
    # eight prompt characters, each either a letter or the newline that ends the line;
    # the buffer is zero-filled so enumeration stays small
    Example("password_checker", "password_checker.ct", (16,),
            {16 + i: b for i, b in enumerate(PASSWORD)},
            InputDomain(((0x68, 10),) * 9), ConstantFill(0), public=LINE_LENGTH,
            secrets=tuple(Assignment((16,), {16 + i: b for i, b in enumerate(pw)})
                          for pw in (PASSWORD, b"hhhhhhhh"))),
    Example("semiprime", "semiprime.ct", (), {},
            InputDomain(((3, 5), (5, 7))),
            secrets=tuple(Assignment((), words_to_bytes(64, [v])) for v in (0, 1, 0xDEAD, 0xFFFFFFFF))),
    Example("mod_const", "mod_const.ct", (1234,),
            secrets=(Assignment((1234,)), Assignment((4321,)))),
    Example("reorder_p", "reorder_p.ct", (16,), words_to_bytes(16, [7, 9]), public=args_projection(0),
            variants=((20,),)),
    Example("reorder_p_prime", "reorder_p_prime.ct", (16,), words_to_bytes(16, [7, 9]),
            public=args_projection(0)),
]}


def load(name: str, width: int = DEFAULT_WIDTH) -> Program:
    return EXAMPLES[name].program(width)


def names() -> list[str]:
    return list(EXAMPLES)
