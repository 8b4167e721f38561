from dataclasses import replace

import pytest
from hypothesis import given, settings

from ctnondet import corpus, machine as m
from ctnondet.compiler import (CompileError, LowContext, PatternMismatch, ReplayError, check_contract,
                               check_oracle_purity, check_predictor_contract, codegen, compose,
                               compose_pipeline, dead_code_elim, flatten, frame_alloc, is_flat,
                               machine_state, reorder_random, run_passes, use_immediates)
from ctnondet.interp import ConstantFill, ExecEnv, InputDomain, Scripted, Terminated, exec_oracle
from ctnondet.lang import Assign, BinOp, Literal, Load, StackAlloc, Var, flatten_seq, parse
from ctnondet.trace import BumpOracle, CompNonDet, Leak, SeededOracle

from strategies import INITIAL_MEMORY, programs

EX = corpus.EXAMPLES


def body(art, fname="main"):
    return flatten_seq(art.target[fname].body)


def leak_of(program, args=(), oracle=BumpOracle(64, 16), mem=None):
    o = exec_oracle(ExecEnv(program, fill=ConstantFill(0)), args, oracle, mem or {})
    assert isinstance(o, Terminated), o
    return o.leak


# --- flatten ----------------------------------------------------------------------

def test_flatten_splits_nested_expression():
    art = flatten(parse("fn main(a, b, c) -> x { x = (a + b) + c; }"))
    stmts = body(art)
    assert len(stmts) == 2 and all(isinstance(s, Assign) for s in stmts)
    assert is_flat(art.target) and not is_flat(art.source)
    out = exec_oracle(ExecEnv(art.target), (1, 2, 3), BumpOracle(0, 0))
    assert out.returns == (6,)


def test_flatten_keeps_swap_leakage():
    ex = EX["swap"]
    art = flatten(ex.program())
    k = leak_of(ex.program(), ex.args, mem=ex.mem)
    assert leak_of(art.target, ex.args, mem=ex.mem) == k
    assert art.gamma(k, LowContext()) == k


# --- use_immediates -----------------------------------------------------------------

def test_use_immediates_folds_constant():
    art = use_immediates(parse("fn main(a) -> x { t = 1; x = a + t; }"))
    assert Assign("x", BinOp("add", Var("a"), Literal(1))) in body(art)


def test_use_immediates_keeps_memequal_leakage():
    ex = EX["memequal"]
    art = use_immediates(flatten(ex.program()).target)
    assert leak_of(art.target, ex.args, mem=ex.mem) == leak_of(art.source, ex.args, mem=ex.mem)


def test_use_immediates_is_idempotent_on_traces():
    ex = EX["memequal"]
    once = use_immediates(ex.program())
    twice = use_immediates(once.target)
    assert leak_of(twice.target, ex.args, mem=ex.mem) == leak_of(once.target, ex.args, mem=ex.mem)


# --- dead code elimination ----------------------------------------------------------

def test_dce_removes_dead_load():
    art = dead_code_elim(parse("fn main(v) { t = load(16); store(20, v); }"))
    assert not any(isinstance(s, Load) for s in body(art))
    assert art.gamma((Leak(16), Leak(20)), LowContext()) == (Leak(20),)


def test_dce_inside_taken_branch():
    art = dead_code_elim(parse("fn main(c) { if (c) { t = load(16); } else { skip; } }"))
    assert art.gamma((Leak(1), Leak(16)), LowContext()) == (Leak(1),)


def test_dce_without_dead_code_is_identity():
    ex = EX["swap"]
    art = dead_code_elim(ex.program())
    k = (Leak(16), Leak(20), Leak(16), Leak(20))
    assert art.gamma(k, LowContext()) == k


def test_gamma_rejects_foreign_trace():
    art = dead_code_elim(EX["swap"].program())
    with pytest.raises(ReplayError):
        art.gamma((CompNonDet(3),), LowContext())


# --- frame allocation --------------------------------------------------------------

def test_frame_alloc_merges_stack_swap_allocation():
    art = frame_alloc(EX["stack_swap"].program())
    allocs = [s for s in flatten_seq(art.target["stack_swap"].body) if isinstance(s, StackAlloc)]
    assert len(allocs) == 1
    assert art.oracle_transform(BumpOracle(64, 16))(()) == 64


def test_frame_alloc_offsets_sequential_allocations():
    p = parse("fn main() { stackalloc 4 as x { store(x, 1); } stackalloc 4 as y { store(y, 2); } }")
    art = frame_alloc(p)
    src = exec_oracle(ExecEnv(p, fill=ConstantFill(0)), (), art.oracle_transform(BumpOracle(64, 16)))
    assert [e.word for e in src.leak if isinstance(e, CompNonDet)] == [64, 68]


def test_frame_alloc_without_allocations_is_identity():
    ex = EX["swap"]
    art = frame_alloc(ex.program())
    assert not any(isinstance(s, StackAlloc) for s in body(art, "swap"))
    k = (Leak(16), Leak(20), Leak(16), Leak(20))
    assert art.gamma(k, LowContext(BumpOracle(64, 16))) == k


# --- code generation ---------------------------------------------------------------

def test_codegen_allocation_answer_is_stack_address():
    art = codegen(parse("fn main() { stackalloc 4 as x { skip; } }"), sp0=1024)
    assert art.oracle_transform(None)(()) == 1024
    assert art.manifest["stack"][0] >= 0


def test_codegen_rejects_nested_expressions():
    with pytest.raises(CompileError):
        codegen(parse("fn main(a, b, c) -> x { x = (a + b) + c; }"))


def test_codegen_loop_leaks_branch_bits():
    p = flatten(parse("fn main(n) -> i { i = 0; while (i <$ n) { i = i + 1; } }")).target
    art = codegen(p)
    t = m.mrun(art.target, machine_state(art, (2,), {}), (), 10_000)
    bits = [e.taken for e in t.leak if isinstance(e, m.LeakBlt)]
    assert bits == [True, True, False]
    assert t.regs[m.A0] == 2


def test_codegen_add_statement():
    art = codegen(parse("fn main(a, b) -> x { x = a + b; }"))
    adds = [i for i, ins in enumerate(art.target.instrs)
            if isinstance(ins, m.RType) and ins.op == "add"]
    assert len(adds) == 1
    k = art.gamma((), LowContext())
    pos = k.index(m.Fetch(art.target.base + 4 * adds[0]))
    assert k[pos + 1] == m.LeakAdd()


def test_codegen_gamma_matches_machine():
    ex = EX["swap"]
    art = compose_pipeline(ex.program())
    src = exec_oracle(ex.env(), ex.args, BumpOracle(64, 16), ex.mem)
    t = m.mrun(art.target, machine_state(art, ex.args, ex.mem), (), 10_000)
    assert t.status == "terminated"
    assert tuple(t.leak) == art.gamma(src.leak, LowContext(None, art.manifest["sp0"],
                                                          art.manifest["code_base"]))


def test_compiled_swap_leak_ignores_contents():
    ex = EX["swap"]
    art = compose_pipeline(ex.program())
    traces = {tuple(m.mrun(art.target, machine_state(art, ex.args, mem), (), 10_000).leak)
              for mem in (ex.mem, {a: 0 for a in ex.mem}, {a: 0xFF for a in ex.mem})}
    assert len(traces) == 1


def test_invalid_program_does_not_compile():
    with pytest.raises(CompileError):
        run_passes(parse("fn main() { x = y; }"))


# --- reordering ----------------------------------------------------------------------

def test_reorder_moves_draw_below_load():
    ex = EX["reorder_p"]
    art = reorder_random(ex.program())
    assert art.oracle_transform is None
    low = BumpOracle(64, 16)
    mapped = art.gamma((CompNonDet(5), Leak(16)), LowContext(low))
    assert mapped == (Leak(16), CompNonDet(low((Leak(16),))))


def test_reorder_pattern_mismatch():
    with pytest.raises(PatternMismatch):
        reorder_random(EX["reorder_p_prime"].program())


# --- composition -------------------------------------------------------------------

def test_memequal_pipeline_gamma_is_exact():
    ex = EX["memequal"]
    art = compose_pipeline(ex.program())
    src = exec_oracle(ex.env(), ex.args, BumpOracle(64, 16), ex.mem)
    t = m.mrun(art.target, machine_state(art, ex.args, ex.mem), (), 100_000)
    assert tuple(t.leak) == art.gamma(src.leak, LowContext(None, art.manifest["sp0"],
                                                          art.manifest["code_base"]))
    assert t.regs[m.A0] == src.returns[0]


def test_compose_of_one_stage_is_that_stage():
    art = flatten(EX["swap"].program())
    k = (Leak(16), Leak(20), Leak(16), Leak(20))
    assert compose([art]).gamma(k) == art.gamma(k, LowContext())


# --- contracts on random programs ----------------------------------------------------

def _env(p):
    return ExecEnv(p, InputDomain(((1, 2), (3,))), ConstantFill(0), fuel=5_000)


@settings(max_examples=40, deadline=None)
@given(programs())
def test_source_passes_meet_contract(p):
    env = _env(p)
    for art in run_passes(p)[:-1]:
        for low in (BumpOracle(64, 16), SeededOracle(7)):
            r = check_contract(art, env, (5, 6), INITIAL_MEMORY, low)
            assert r.ok, (art.name, r.failures)
            r = check_oracle_purity(art, env, (5, 6), [INITIAL_MEMORY, {}], low)
            assert r.ok, (art.name, r.failures)


@settings(max_examples=30, deadline=None)
@given(programs(allow_nondet=False))
def test_pipeline_meets_contract(p):
    env = _env(p)
    art = compose_pipeline(p)
    r = check_contract(art, env, (5, 6), INITIAL_MEMORY)
    assert r.ok, r.failures
    r = check_predictor_contract(art, replace(env, inputs=Scripted((1, 3))), (5, 6), INITIAL_MEMORY)
    assert r.ok, r.failures
