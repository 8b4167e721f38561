import json
from dataclasses import replace

import pytest
from hypothesis import given, settings

from ctnondet import corpus
from ctnondet.interp import (BenignStuck, ChoiceUniverse, ConstantFill, DomainFill, ErrorStuck,
                             ExecEnv, FuelExhausted, InputDomain, OmniAll, OracleRun, OracleStar,
                             Scripted, SeededFill, StepContext, Terminated, check_post, eval_expr,
                             exec_enumerate, exec_oracle, exec_oracle_all, exec_with_choices,
                             explore, initial_config, outcome_to_json, run_small_step, step)
from ctnondet.lang import (Assign, BinOp, Call, FnDef, Literal, Program, Skip, StackAlloc, Var, parse,
                           seq)
from ctnondet.trace import BumpOracle, CompNonDet, DerivedOracle, In, Leak, TableOracle, compatible

from strategies import INITIAL_MEMORY, programs

STACK_SWAP = corpus.EXAMPLES["stack_swap"]


def stack_swap_leak(x):
    return (CompNonDet(x), Leak(x), Leak(x + 1), Leak(x), Leak(x + 1))


# --- expressions --------------------------------------------------------------

def test_arithmetic_leaks_nothing():
    assert eval_expr(BinOp("add", Literal(3), Literal(4)), {}) == (7, ())


def test_division_leaks_operands():
    assert eval_expr(BinOp("divu", Var("x"), Var("y")), {"x": 7, "y": 2}) == (3, (Leak(7), Leak(2)))


def test_undefined_variable_is_stuck():
    o = eval_expr(Var("z"), {})
    assert isinstance(o, ErrorStuck) and o.reason == "UndefinedVariable z"


# --- oracle runs ----------------------------------------------------------------

def test_swap_leak():
    ex = corpus.EXAMPLES["swap"]
    o = exec_oracle(ex.env(), (16, 20), BumpOracle(64, 16), ex.mem)
    assert o.leak == (Leak(16), Leak(20), Leak(16), Leak(20))
    # and the words really are exchanged
    assert (o.memory[16], o.memory[20]) == (1, 0)


def test_stack_swap_under_bump():
    o = exec_oracle(STACK_SWAP.env(fill=ConstantFill(0)), (), BumpOracle(64, 16))
    assert o.leak == stack_swap_leak(64)
    assert o.mem == ()  # the allocation is gone after its scope


def test_countdown_trace():
    o = exec_oracle(corpus.EXAMPLES["countdown"].env(), (2,), BumpOracle(64, 16))
    assert o.leak == (Leak(1), CompNonDet(64), Leak(1), CompNonDet(80), Leak(0))


def test_oracle_sees_the_current_trace():
    seen = []
    recording = DerivedOracle(lambda k: seen.append(k) or 64)
    exec_oracle(corpus.EXAMPLES["countdown"].env(), (2,), recording)
    assert seen == [(Leak(1),), (Leak(1), CompNonDet(64), Leak(1))]


def test_overlapping_allocation_is_benign():
    env = STACK_SWAP.env(fill=ConstantFill(0))
    o = exec_oracle(env, (), BumpOracle(64, 16), {65: 0})
    assert isinstance(o, BenignStuck) and o.reason == "OutOfMemory"
    o = exec_oracle(env, (), BumpOracle(66, 16))
    assert isinstance(o, BenignStuck) and o.reason == "OutOfMemory"


def test_missing_input_is_benign():
    env = corpus.EXAMPLES["semiprime"].env(inputs=Scripted((3,)))
    o = exec_oracle(env, (), BumpOracle(64, 16))
    assert isinstance(o, BenignStuck) and o.reason == "NoInput"
    assert o.io == (In(3),)


def test_out_of_domain_load_is_an_error():
    o = exec_oracle(corpus.EXAMPLES["swap"].env(), (16, 20), BumpOracle(64, 16), {})
    assert isinstance(o, ErrorStuck) and o.leak == (Leak(16),)


def test_fuel_exhaustion():
    p = parse("fn main() { x = 1; while (x) { skip; } }")
    o = exec_oracle(ExecEnv(p, fuel=100), (), BumpOracle(64, 16))
    assert isinstance(o, FuelExhausted)


def test_fuel_must_be_positive():
    with pytest.raises(ValueError):
        ExecEnv(parse("fn main() { skip; }"), fuel=0)


def test_seeded_fill_is_reproducible():
    p = parse("fn main() -> r { stackalloc 4 as x { r = load(x); } }")
    env = ExecEnv(p, fill=SeededFill(3))
    a, b = (exec_oracle(env, (), BumpOracle(64, 16)) for _ in range(2))
    assert a == b
    assert exec_oracle(ExecEnv(p, fill=ConstantFill(0xAA)), (), BumpOracle(64, 16)).returns == (0xAAAAAAAA,)


def test_outcome_json_field_order():
    o = exec_oracle(STACK_SWAP.env(fill=ConstantFill(0)), (), BumpOracle(64, 16))
    text = json.dumps(outcome_to_json(o))
    assert text == ('{"status": "terminated", "io": [], "leak": [{"nondet": 64}, {"leak": 64}, '
                    '{"leak": 65}, {"leak": 64}, {"leak": 65}], "returns": []}')


# --- enumeration ------------------------------------------------------------------

def test_stack_swap_enumeration():
    outs = exec_enumerate(STACK_SWAP.env(), (), ChoiceUniverse((64, 128)))
    assert all(isinstance(o, Terminated) for o in outs)
    assert {o.leak for o in outs} == {stack_swap_leak(64), stack_swap_leak(128)}
    assert len(outs) == 2


def test_deterministic_program_has_one_outcome():
    ex = corpus.EXAMPLES["swap"]
    assert len(exec_enumerate(ex.env(), ex.args, mem=ex.mem)) == 1


def test_login_input_resolutions():
    ex = corpus.EXAMPLES["login"]
    env = ex.env(inputs=InputDomain(((0,), (1000, 2000))))
    outs = exec_enumerate(env, ex.args, mem=ex.mem)
    assert len(outs) == 2
    a, b = sorted(outs, key=lambda o: o.io[1].word)
    assert a.io[0] == b.io[0] and a.io[1] != b.io[1]


def test_choices_replay():
    env = corpus.EXAMPLES["countdown"].env()
    for o, choices in explore(env, (2,)).items():
        assert exec_with_choices(env, (2,), choices) == o


# --- postconditions ---------------------------------------------------------------

def test_omni_no_io():
    assert check_post(STACK_SWAP.env(), (), ChoiceUniverse(), lambda o: o.io == ())


def test_star_filters_incompatible_branches():
    post = lambda o: o.leak == stack_swap_leak(64)
    u = ChoiceUniverse((64, 128))
    assert check_post(STACK_SWAP.env(), (), u, post, OracleStar(BumpOracle(64, 16)))
    assert not check_post(STACK_SWAP.env(), (), u, post, OmniAll())


def test_omni_counterexample():
    env = corpus.EXAMPLES["countdown"].env()
    p = env.program
    wrapper = Program(p.functions + (FnDef("main", ("s",), (), Call((), "countdown", (Var("s"),))),),
                      "main")
    env = replace(env, program=wrapper)
    for x, holds in ((1, True), (2, False)):
        v = check_post(env, (x,), ChoiceUniverse(), lambda o: len(o.leak) == 3)
        assert v.holds == holds
        if not holds:
            assert len(v.counterexample.leak) == 5


def test_oracle_run_single_execution():
    v = check_post(STACK_SWAP.env(fill=ConstantFill(0)), (), ChoiceUniverse(),
                   lambda o: o.leak == stack_swap_leak(128), OracleRun(BumpOracle(128, 16)))
    assert v


def test_benign_stuck_passes_vacuously():
    env = corpus.EXAMPLES["semiprime"].env(inputs=Scripted(()))
    assert check_post(env, (), ChoiceUniverse(), lambda o: False)


def test_error_stuck_fails():
    env = corpus.EXAMPLES["swap"].env()
    v = check_post(env, (16, 20), ChoiceUniverse(), lambda o: True)
    assert not v and isinstance(v.counterexample, ErrorStuck)


# --- small-step ---------------------------------------------------------------------

def _config(body, fill=ConstantFill(0)):
    env = ExecEnv(Program((FnDef("main", (), (), body),)), fill=fill)
    return env, initial_config(env, ())


def test_step_skip_sequence():
    env, c = _config(seq(Skip(), Skip()))
    (c1,) = step(c, StepContext(env))
    (c2,) = step(c1, StepContext(env))
    assert c2.cont[0] == Skip() and c2.locals == c.locals and c2.leak == ()


def test_step_assignment():
    env, c = _config(Assign("x", BinOp("add", Literal(1), Literal(2))))
    (c1,) = step(c, StepContext(env))
    assert dict(c1.locals) == {"x": 3} and c1.leak == ()


def test_step_allocation_branches_on_bases():
    env, c = _config(StackAlloc(4, "x", Skip()))
    succ = step(c, StepContext(env, ChoiceUniverse((64, 128))))
    assert {s.leak for s in succ} == {(CompNonDet(64),), (CompNonDet(128),)}


def test_step_allocation_branches_on_contents():
    env, c = _config(StackAlloc(4, "x", Skip()), DomainFill((0, 1)))
    assert len(step(c, StepContext(env, ChoiceUniverse((64,))))) == 16


def test_finished_config_has_no_successors():
    env, c = _config(Skip())
    ctx = StepContext(env)
    while step(c, ctx):
        (c,) = step(c, ctx)
    assert c.finished


# --- properties on random programs -------------------------------------------------

UNIVERSE = ChoiceUniverse((64, 128, 192), (64, 128, 192))


def _env(p, inputs=InputDomain(((1, 2), (3,))), fill=ConstantFill(0)):
    return ExecEnv(p, inputs, fill, fuel=5_000)


@settings(max_examples=60, deadline=None)
@given(programs())
def test_small_step_prefix_monotone(p):
    env = _env(p)
    ctx = StepContext(env, UNIVERSE)
    frontier = [initial_config(env, (5, 6), INITIAL_MEMORY)]
    for _ in range(400):
        if not frontier:
            break
        nxt = []
        for c in frontier[:50]:
            for s in step(c, ctx):
                assert s.leak[:len(c.leak)] == c.leak
                assert s.io[:len(c.io)] == c.io
                nxt.append(s)
        frontier = nxt


@settings(max_examples=60, deadline=None)
@given(programs())
def test_big_and_small_step_agree(p):
    env = _env(p)
    big = exec_enumerate(env, (5, 6), UNIVERSE, INITIAL_MEMORY)
    if any(isinstance(o, FuelExhausted) for o in big):
        return
    expected = {(o.io, o.leak, o.returns) for o in big if isinstance(o, Terminated)}
    assert run_small_step(env, (5, 6), UNIVERSE, INITIAL_MEMORY) == expected


@settings(max_examples=60, deadline=None)
@given(programs())
def test_oracle_runs_refine_enumeration(p):
    env = _env(p)
    enumerated = set(exec_enumerate(env, (5, 6), UNIVERSE, INITIAL_MEMORY))
    for a in (BumpOracle(64, 64), TableOracle({}, 128)):
        for o in exec_oracle_all(env, (5, 6), a, INITIAL_MEMORY):
            if isinstance(o, Terminated) and all(w in UNIVERSE.bases for w in
                                                 (e.word for e in o.leak if isinstance(e, CompNonDet))):
                assert o in enumerated
                assert compatible(o.leak, a)


@settings(max_examples=40, deadline=None)
@given(programs(allow_io=False))
def test_oracle_run_is_deterministic(p):
    env = ExecEnv(p, Scripted(), ConstantFill(0), fuel=5_000)
    assert exec_oracle(env, (1, 2), BumpOracle(64, 16), INITIAL_MEMORY) == \
        exec_oracle(env, (1, 2), BumpOracle(64, 16), INITIAL_MEMORY)
