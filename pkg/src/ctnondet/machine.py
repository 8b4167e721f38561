"""A small RISC-V-flavored register machine that records its own leakage.

Every executed instruction leaks the fetch address, then whatever the
instruction itself reveals: memory addresses, branch decisions, division
operands and indirect-jump targets. Register contents otherwise stay hidden.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional, Sequence, Union

from .lang import apply_op, mask, to_signed
from .trace import In, Out

WIDTH = 32
NREGS = 32
HALT = 0xFFFF_FFF0  # return address that ends a run

ZERO, RA, SP = 0, 1, 2
T0, T1, T2 = 5, 6, 7
A0 = 10
NARGS = 8


# --- instructions ----------------------------------------------------------

@dataclass(frozen=True)
class Addi:
    rd: int
    rs: int
    imm: int


@dataclass(frozen=True)
class RType:
    """Register-register ALU instruction; `op` uses the source-language operator names."""
    op: str
    rd: int
    rs1: int
    rs2: int


def Add(rd, rs1, rs2): return RType("add", rd, rs1, rs2)
def Sub(rd, rs1, rs2): return RType("sub", rd, rs1, rs2)
def And(rd, rs1, rs2): return RType("and", rd, rs1, rs2)
def Or(rd, rs1, rs2): return RType("or", rd, rs1, rs2)
def Xor(rd, rs1, rs2): return RType("xor", rd, rs1, rs2)
def Mul(rd, rs1, rs2): return RType("mul", rd, rs1, rs2)
def Divu(rd, rs1, rs2): return RType("divu", rd, rs1, rs2)
def Remu(rd, rs1, rs2): return RType("remu", rd, rs1, rs2)
def Sll(rd, rs1, rs2): return RType("shl", rd, rs1, rs2)
def Srl(rd, rs1, rs2): return RType("shr", rd, rs1, rs2)
def Sltu(rd, rs1, rs2): return RType("ltu", rd, rs1, rs2)
def Slt(rd, rs1, rs2): return RType("lts", rd, rs1, rs2)


ALU_OPS = ("add", "sub", "and", "or", "xor", "mul", "divu", "remu", "shl", "shr", "ltu", "lts")
MNEMONIC = {"add": "add", "sub": "sub", "and": "and", "or": "or", "xor": "xor", "mul": "mul",
            "divu": "divu", "remu": "remu", "shl": "sll", "shr": "srl", "ltu": "sltu", "lts": "slt"}


@dataclass(frozen=True)
class Lw:
    rd: int
    rs1: int
    imm: int


@dataclass(frozen=True)
class Lb:
    rd: int
    rs1: int
    imm: int


@dataclass(frozen=True)
class Sw:
    rs2: int
    rs1: int
    imm: int


@dataclass(frozen=True)
class Sb:
    rs2: int
    rs1: int
    imm: int


@dataclass(frozen=True)
class Beq:
    rs1: int
    rs2: int
    offset: int


@dataclass(frozen=True)
class Bne:
    rs1: int
    rs2: int
    offset: int


@dataclass(frozen=True)
class Blt:
    rs1: int
    rs2: int
    offset: int


@dataclass(frozen=True)
class Jal:
    rd: int
    offset: int


@dataclass(frozen=True)
class Jalr:
    rd: int
    rs1: int
    imm: int


@dataclass(frozen=True)
class EIn:
    rd: int


@dataclass(frozen=True)
class EOut:
    rs: int


Instr = Union[Addi, RType, Lw, Lb, Sw, Sb, Beq, Bne, Blt, Jal, Jalr, EIn, EOut]


# --- events ----------------------------------------------------------------

@dataclass(frozen=True)
class Fetch:
    addr: int


@dataclass(frozen=True)
class LeakAdd:
    pass


@dataclass(frozen=True)
class LeakOp:
    pass


@dataclass(frozen=True)
class LeakLw:
    addr: int


@dataclass(frozen=True)
class LeakSw:
    addr: int


@dataclass(frozen=True)
class LeakBlt:
    taken: bool


@dataclass(frozen=True)
class LeakBeq:
    taken: bool


@dataclass(frozen=True)
class LeakBne:
    taken: bool


@dataclass(frozen=True)
class LeakDiv:
    lhs: int
    rhs: int


@dataclass(frozen=True)
class LeakJalr:
    target: int


MachineEvent = Union[Fetch, LeakAdd, LeakOp, LeakLw, LeakSw, LeakBlt, LeakBeq, LeakBne,
                     LeakDiv, LeakJalr]


def instr_leakage(i: Instr, regs: Sequence[int]) -> list[MachineEvent]:
    """Events an instruction reveals beyond its fetch address."""
    if isinstance(i, RType):
        if i.op == "add":
            return [LeakAdd()]
        if i.op in ("divu", "remu"):
            return [LeakDiv(regs[i.rs1], regs[i.rs2])]
        return [LeakOp()]
    if isinstance(i, Addi):
        return [LeakOp()]
    if isinstance(i, (Lw, Lb)):
        return [LeakLw(mask(regs[i.rs1] + i.imm, WIDTH))]
    if isinstance(i, (Sw, Sb)):
        return [LeakSw(mask(regs[i.rs1] + i.imm, WIDTH))]
    if isinstance(i, Blt):
        return [LeakBlt(to_signed(regs[i.rs1], WIDTH) < to_signed(regs[i.rs2], WIDTH))]
    if isinstance(i, Beq):
        return [LeakBeq(regs[i.rs1] == regs[i.rs2])]
    if isinstance(i, Bne):
        return [LeakBne(regs[i.rs1] != regs[i.rs2])]
    if isinstance(i, Jalr):
        return [LeakJalr(mask(regs[i.rs1] + i.imm, WIDTH) & ~1)]
    return []


# --- programs and states ---------------------------------------------------

@dataclass(frozen=True)
class MachineProgram:
    instrs: tuple[Instr, ...]
    base: int = 0
    entries: tuple[tuple[str, int], ...] = ()  # function name -> code position

    def position(self, index: int) -> int:
        return self.base + 4 * index

    def entry(self, name: str) -> int:
        return dict(self.entries)[name]

    def fetch(self, pc: int) -> Optional[Instr]:
        index, rem = divmod(pc - self.base, 4)
        if rem or not 0 <= index < len(self.instrs):
            return None
        return self.instrs[index]


@dataclass(frozen=True)
class MachineState:
    regs: tuple[int, ...]
    mem: tuple[tuple[int, int], ...]
    pc: int
    io: tuple = ()
    leak: tuple = ()

    @staticmethod
    def initial(pc: int, regs: Mapping[int, int] = None, mem: Mapping[int, int] = None) -> "MachineState":
        r = [0] * NREGS
        for k, v in (regs or {}).items():
            if k:
                r[k] = mask(v, WIDTH)
        return MachineState(tuple(r), tuple(sorted((mem or {}).items())), pc)


@dataclass(frozen=True)
class MachineOutcome:
    status: str  # terminated | error_stuck | fuel_exhausted | no_input
    state: MachineState
    steps: int
    reason: str = ""

    @property
    def leak(self):
        return self.state.leak

    @property
    def io(self):
        return self.state.io

    @property
    def regs(self):
        return self.state.regs


class _MachineStuck(Exception):
    pass


def mrun(prog: MachineProgram, s0: MachineState, inputs: Sequence[int] = (),
         fuel: int = 10**6) -> MachineOutcome:
    regs = list(s0.regs)
    mem = dict(s0.mem)
    pc = s0.pc
    io = list(s0.io)
    leak = list(s0.leak)
    pending = list(inputs)
    steps = 0

    def state():
        return MachineState(tuple(regs), tuple(sorted(mem.items())), pc, tuple(io), tuple(leak))

    def cells(addr, size):
        out = [mask(addr + j, WIDTH) for j in range(size)]
        if any(a not in mem for a in out):
            raise _MachineStuck(f"memory access outside domain at {addr}")
        return out

    try:
        while pc != HALT:
            if steps >= fuel:
                return MachineOutcome("fuel_exhausted", state(), steps)
            i = prog.fetch(pc)
            if i is None:
                raise _MachineStuck(f"no instruction at {pc}")
            leak.append(Fetch(pc))
            leak.extend(instr_leakage(i, regs))
            nxt = mask(pc + 4, WIDTH)
            rd, value = None, None
            if isinstance(i, Addi):
                rd, value = i.rd, mask(regs[i.rs] + i.imm, WIDTH)
            elif isinstance(i, RType):
                rd, value = i.rd, apply_op(i.op, regs[i.rs1], regs[i.rs2], WIDTH)
            elif isinstance(i, (Lw, Lb)):
                size = 4 if isinstance(i, Lw) else 1
                addrs = cells(regs[i.rs1] + i.imm, size)
                rd, value = i.rd, sum(mem[a] << (8 * j) for j, a in enumerate(addrs))
            elif isinstance(i, (Sw, Sb)):
                size = 4 if isinstance(i, Sw) else 1
                for j, a in enumerate(cells(regs[i.rs1] + i.imm, size)):
                    mem[a] = (regs[i.rs2] >> (8 * j)) & 0xFF
            elif isinstance(i, (Beq, Bne, Blt)):
                if instr_leakage(i, regs)[0].taken:
                    nxt = mask(pc + i.offset, WIDTH)
            elif isinstance(i, Jal):
                rd, value = i.rd, nxt
                nxt = mask(pc + i.offset, WIDTH)
            elif isinstance(i, Jalr):
                target = mask(regs[i.rs1] + i.imm, WIDTH) & ~1
                rd, value = i.rd, nxt
                nxt = target
            elif isinstance(i, EIn):
                if not pending:
                    return MachineOutcome("no_input", state(), steps)
                rd, value = i.rd, mask(pending.pop(0), WIDTH)
                io.append(In(value))
            elif isinstance(i, EOut):
                io.append(Out(regs[i.rs]))
            if rd:
                regs[rd] = value
            pc = nxt
            steps += 1
            if pc % 4:
                raise _MachineStuck(f"unaligned pc {pc}")
    except _MachineStuck as e:
        return MachineOutcome("error_stuck", state(), steps, str(e))
    return MachineOutcome("terminated", state(), steps)


# --- serialization ---------------------------------------------------------

def instr_to_json(i: Instr) -> dict:
    if isinstance(i, RType):
        return {"op": MNEMONIC[i.op], "rd": i.rd, "rs1": i.rs1, "rs2": i.rs2}
    d = {"op": type(i).__name__.lower()}
    d.update(i.__dict__)
    return d


def format_instr(i: Instr) -> str:
    if isinstance(i, RType):
        return f"{MNEMONIC[i.op]} x{i.rd}, x{i.rs1}, x{i.rs2}"
    if isinstance(i, Addi):
        return f"addi x{i.rd}, x{i.rs}, {i.imm}"
    if isinstance(i, (Lw, Lb)):
        return f"{type(i).__name__.lower()} x{i.rd}, {i.imm}(x{i.rs1})"
    if isinstance(i, (Sw, Sb)):
        return f"{type(i).__name__.lower()} x{i.rs2}, {i.imm}(x{i.rs1})"
    if isinstance(i, (Beq, Bne, Blt)):
        return f"{type(i).__name__.lower()} x{i.rs1}, x{i.rs2}, {i.offset}"
    if isinstance(i, Jal):
        return f"jal x{i.rd}, {i.offset}"
    if isinstance(i, Jalr):
        return f"jalr x{i.rd}, {i.imm}(x{i.rs1})"
    if isinstance(i, EIn):
        return f"ein x{i.rd}"
    return f"eout x{i.rs}"


def event_to_json(e: MachineEvent) -> dict:
    return {type(e).__name__: dict(e.__dict__)}


def machine_program_to_json(p: MachineProgram) -> dict:
    return {
        "base": p.base,
        "entries": dict(p.entries),
        "instrs": [{"pos": p.position(n), **instr_to_json(i)} for n, i in enumerate(p.instrs)],
    }


def listing(p: MachineProgram) -> str:
    labels = {pos: name for name, pos in p.entries}
    lines = []
    for n, i in enumerate(p.instrs):
        pos = p.position(n)
        if pos in labels:
            lines.append(f"{labels[pos]}:")
        lines.append(f"  {pos:#06x}  {format_instr(i)}")
    return "\n".join(lines)
