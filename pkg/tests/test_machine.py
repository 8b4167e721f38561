import json

from hypothesis import given, settings, strategies as st

from ctnondet import corpus, machine as m
from ctnondet.compiler import compose_pipeline, machine_state
from ctnondet.trace import In, Out

REGS = [0] * m.NREGS


def regs(**values):
    r = list(REGS)
    for name, v in values.items():
        r[int(name[1:])] = v
    return r


def run(instrs, pc=0, inputs=(), mem=None, fuel=1000, **initial):
    prog = m.MachineProgram(tuple(instrs) + (m.Jalr(0, m.RA, 0),))
    state = m.MachineState.initial(pc, {m.RA: m.HALT, **{int(k[1:]): v for k, v in initial.items()}},
                                   mem)
    return m.mrun(prog, state, inputs, fuel)


# --- leakage of single instructions --------------------------------------------

def test_add_leaks_its_kind_only():
    assert m.instr_leakage(m.Add(5, 6, 7), regs(x6=1, x7=2)) == [m.LeakAdd()]


def test_load_leaks_address():
    assert m.instr_leakage(m.Lw(5, 2, 8), regs(x2=40)) == [m.LeakLw(48)]


def test_branch_leaks_outcome():
    assert m.instr_leakage(m.Blt(1, 2, -8), regs(x1=3, x2=7)) == [m.LeakBlt(True)]
    assert m.instr_leakage(m.Blt(1, 2, -8), regs(x1=0xFFFFFFFF, x2=0)) == [m.LeakBlt(True)]


def test_division_leaks_operands():
    assert m.instr_leakage(m.Divu(5, 6, 7), regs(x6=9, x7=2)) == [m.LeakDiv(9, 2)]


# --- runs ------------------------------------------------------------------------

def test_immediate_then_return():
    out = run([m.Addi(5, 0, 5)])
    assert out.status == "terminated" and out.regs[5] == 5
    assert out.leak == (m.Fetch(0), m.LeakOp(), m.Fetch(4), m.LeakJalr(m.HALT))


def test_register_zero_stays_zero():
    out = run([m.Addi(0, 0, 5)])
    assert out.regs[0] == 0


def test_output_event():
    out = run([m.Addi(5, 0, 15), m.EOut(5)])
    assert out.io == (Out(15),)


def test_input_event_and_missing_input():
    out = run([m.EIn(5), m.EOut(5)], inputs=(7,))
    assert out.io == (In(7), Out(7))
    assert run([m.EIn(5)]).status == "no_input"


def test_word_store_and_load_are_little_endian():
    mem = {a: 0 for a in range(16, 20)}
    out = run([m.Addi(5, 0, 0x0102), m.Sw(5, 0, 16), m.Lb(6, 0, 17)], mem=mem)
    assert dict(out.state.mem)[16] == 2 and out.regs[6] == 1


def test_access_outside_memory_is_stuck():
    out = run([m.Lw(5, 0, 16)], mem={16: 0, 17: 0, 18: 0})
    assert out.status == "error_stuck"
    assert out.leak[-1] == m.LeakLw(16)


def test_jump_outside_program_is_stuck():
    assert run([m.Jal(0, 400)]).status == "error_stuck"


def test_fuel_limit():
    out = run([m.Beq(0, 0, 0)], fuel=10)
    assert out.status == "fuel_exhausted" and out.steps == 10


def test_compiled_swap_memory_events():
    ex = corpus.EXAMPLES["swap"]
    art = compose_pipeline(ex.program())
    out = m.mrun(art.target, machine_state(art, ex.args, ex.mem))
    data = [e for e in out.leak if isinstance(e, (m.LeakLw, m.LeakSw))
            and e.addr in (16, 20)]
    assert data == [m.LeakLw(16), m.LeakLw(20), m.LeakSw(16), m.LeakSw(20)]
    mem = dict(out.state.mem)
    assert (mem[16], mem[20]) == (ex.mem[20], ex.mem[16])


# --- serialization ---------------------------------------------------------------

def test_listing_labels_entries():
    prog = m.MachineProgram((m.Addi(5, 0, 1), m.Jalr(0, 1, 0)), 0x1000, (("main", 0x1000),))
    assert m.listing(prog) == "main:\n  0x1000  addi x5, x0, 1\n  0x1004  jalr x0, 0(x1)"


def test_program_json():
    prog = m.MachineProgram((m.Add(5, 6, 7),), 0x1000)
    d = m.machine_program_to_json(prog)
    assert d["instrs"] == [{"pos": 0x1000, "op": "add", "rd": 5, "rs1": 6, "rs2": 7}]
    json.dumps(d)


def test_event_json():
    assert m.event_to_json(m.LeakLw(48)) == {"LeakLw": {"addr": 48}}


# --- arithmetic against Python integers ------------------------------------------

WORDS = st.integers(0, 2 ** 32 - 1)
REFERENCE = {
    "add": lambda a, b: (a + b) % 2 ** 32,
    "sub": lambda a, b: (a - b) % 2 ** 32,
    "xor": lambda a, b: a ^ b,
    "mul": lambda a, b: (a * b) % 2 ** 32,
    "divu": lambda a, b: a // b if b else 2 ** 32 - 1,
    "remu": lambda a, b: a % b if b else a,
    "ltu": lambda a, b: int(a < b),
    "lts": lambda a, b: int((a - (a >> 31 << 32)) < (b - (b >> 31 << 32))),
}


@given(st.sampled_from(sorted(REFERENCE)), WORDS, WORDS)
def test_alu_matches_reference(op, a, b):
    out = run([m.RType(op, 5, 6, 7)], x6=a, x7=b)
    assert out.regs[5] == REFERENCE[op](a, b)


@settings(max_examples=50)
@given(st.lists(st.tuples(st.integers(3, 9), st.integers(0, 9), st.integers(-50, 50)), max_size=12))
def test_straight_line_fetches(addis):
    out = run([m.Addi(rd, rs, imm) for rd, rs, imm in addis])
    fetches = [e.addr for e in out.leak if isinstance(e, m.Fetch)]
    assert fetches == [4 * i for i in range(len(addis) + 1)]
