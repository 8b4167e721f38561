"""Brute-force constant-time checks over finite secret spaces.

Every checker runs the program once per secret assignment (and per oracle or
choice resolution), groups the runs by their public key, and compares what an
observer would see inside each group.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any, Callable, Iterable, Mapping, Optional, Sequence, Union

from .interp import (ChoiceUniverse, ErrorStuck, ExecEnv, FuelExhausted, Outcome,
                     Terminated, exec_with_choices, explore, explore_oracle, outcome_to_json)
from .lang import Call, If, Program, Random, Seq, StackAlloc, While
from .predict import (END, Conflict, LeakageTree, trie_from_traces, trie_to_tree,
                      conflict_to_json, tree_to_json)
from .trace import (Oracle, Out, PublicProjection, split_events, oracle_to_json, trace_to_json)


@dataclass(frozen=True)
class Assignment:
    """One point of the secret space: entry arguments, initial memory and, optionally,
    the input and allocation-fill policies."""
    args: tuple[int, ...]
    mem: Mapping[int, int] = field(default_factory=dict)
    inputs: Any = None
    fill: Any = None

    def env(self, base: ExecEnv) -> ExecEnv:
        if self.inputs is not None:
            base = replace(base, inputs=self.inputs)
        if self.fill is not None:
            base = replace(base, fill=self.fill)
        return base


SecretSpace = Sequence[Assignment]


@dataclass(frozen=True)
class Run:
    """An execution plus what is needed to replay it."""
    assignment: Assignment
    outcome: Outcome
    choices: tuple[int, ...]
    oracle: Optional[Oracle] = None
    universe: Optional[ChoiceUniverse] = None

    def replay(self, env: ExecEnv) -> Outcome:
        return exec_with_choices(self.assignment.env(env), self.assignment.args, self.choices,
                                 self.universe or ChoiceUniverse(), self.oracle, self.assignment.mem)


@dataclass(frozen=True)
class ConstantTime:
    witness: dict
    verdict = "constant_time"


@dataclass(frozen=True)
class Leaky:
    first: Run
    second: Run
    conflict: Optional[Conflict] = None
    verdict = "leaky"


@dataclass(frozen=True)
class Inconclusive:
    reason: str
    run: Optional[Run] = None
    verdict = "inconclusive"


CtVerdict = Union[ConstantTime, Leaky, Inconclusive]


def _uses_compiler_nondeterminism(p: Program) -> bool:
    """Whether any function reachable from the entry allocates or draws."""
    seen: set[str] = set()
    todo = [p.entry]

    def walk(s) -> bool:
        if isinstance(s, (StackAlloc, Random)):
            return True
        if isinstance(s, Call):
            todo.append(s.fname)
        if isinstance(s, Seq):
            return walk(s.first) or walk(s.second)
        if isinstance(s, If):
            return walk(s.then) or walk(s.orelse)
        if isinstance(s, While):
            return walk(s.body)
        return False

    while todo:
        name = todo.pop()
        if name in seen or name not in p:
            continue
        seen.add(name)
        if walk(p[name].body):
            return True
    return False


def _runs(env: ExecEnv, secrets: SecretSpace, oracle: Optional[Oracle] = None,
          u: Optional[ChoiceUniverse] = None) -> list[Run]:
    if not secrets:
        raise ValueError("secret space must be nonempty")
    out = []
    for s in secrets:
        e = s.env(env)
        if oracle is not None:
            found = explore_oracle(e, s.args, oracle, s.mem)
        else:
            found = explore(e, s.args, u or ChoiceUniverse(), s.mem)
        out.extend(Run(s, o, c, oracle, None if oracle else (u or ChoiceUniverse()))
                   for o, c in found.items())
    return out


def _compare(runs: Iterable[Run], publics: PublicProjection,
             observe: Callable[[Outcome], Any], tag: Any = None) -> CtVerdict:
    """ConstantTime iff `observe` is constant on each public-key class of terminated runs."""
    classes: dict[Any, Run] = {}
    any_terminated = False
    for r in runs:
        o = r.outcome
        if isinstance(o, (ErrorStuck, FuelExhausted)):
            return Inconclusive(o.status if isinstance(o, FuelExhausted) else o.reason, r)
        if not isinstance(o, Terminated):
            continue
        any_terminated = True
        key = (tag, publics.key(r.assignment.args, r.assignment.mem, o.io))
        first = classes.setdefault(key, r)
        if observe(first.outcome) != observe(o):
            return Leaky(first, r)
    if not any_terminated:
        return Inconclusive("no terminating execution")
    return ConstantTime({key: observe(r.outcome) for key, r in classes.items()})


def check_naive_ct(env: ExecEnv, publics: PublicProjection, secrets: SecretSpace) -> CtVerdict:
    if _uses_compiler_nondeterminism(env.program):
        return Inconclusive("program allocates or draws random words; naive CT does not apply")
    return _compare(_runs(env, secrets), publics, lambda o: o.leak)


def check_oracle_ct(env: ExecEnv, publics: PublicProjection, secrets: SecretSpace,
                    oracles: Sequence[Oracle]) -> CtVerdict:
    witness = {}
    for i, a in enumerate(oracles):
        v = _compare(_runs(env, secrets, oracle=a), publics, lambda o: o.leak, tag=i)
        if not isinstance(v, ConstantTime):
            return v
        witness.update(v.witness)
    return ConstantTime(witness)


def _outputs(o: Outcome) -> tuple[int, ...]:
    return tuple(e.word for e in o.io if isinstance(e, Out))


def check_output_independence(env: ExecEnv, publics: PublicProjection, secrets: SecretSpace,
                              oracles: Sequence[Oracle]) -> CtVerdict:
    witness = {}
    for i, a in enumerate(oracles):
        v = _compare(_runs(env, secrets, oracle=a), publics, _outputs, tag=i)
        if not isinstance(v, ConstantTime):
            return v
        witness.update(v.witness)
    return ConstantTime(witness)


def _pooled(env, publics, secrets, u) -> Union[dict[Any, list[Run]], Inconclusive]:
    pools: dict[Any, list[Run]] = {}
    for r in _runs(env, secrets, u=u):
        o = r.outcome
        if isinstance(o, (ErrorStuck, FuelExhausted)):
            return Inconclusive(o.status if isinstance(o, FuelExhausted) else o.reason, r)
        if isinstance(o, Terminated):
            pools.setdefault(publics.key(r.assignment.args, r.assignment.mem, o.io), []).append(r)
    if not pools:
        return Inconclusive("no terminating execution")
    return pools


def _runs_through(runs: list[Run], prefix: tuple, nxt) -> Run:
    n = len(prefix)
    for r in runs:
        k = r.outcome.leak
        if k[:n] == prefix and (k[n:n + 1] == (nxt,) if nxt != END else len(k) == n):
            return r
    raise AssertionError("conflict does not correspond to a recorded run")


def check_predictor_ct(env: ExecEnv, publics: PublicProjection, secrets: SecretSpace,
                       u: ChoiceUniverse = ChoiceUniverse()) -> CtVerdict:
    pools = _pooled(env, publics, secrets, u)
    if isinstance(pools, Inconclusive):
        return pools
    witness: dict[Any, LeakageTree] = {}
    for key, runs in pools.items():
        tree = trie_to_tree(trie_from_traces(r.outcome.leak for r in runs))
        if isinstance(tree, Conflict):
            a, b = sorted(tree.events, key=repr)[:2]
            return Leaky(_runs_through(runs, tree.prefix, a), _runs_through(runs, tree.prefix, b),
                         tree)
        witness[key] = tree
    return ConstantTime(witness)


def check_flawed_ct(env: ExecEnv, publics: PublicProjection, secrets: SecretSpace,
                    u: ChoiceUniverse = ChoiceUniverse()) -> CtVerdict:
    """Accepts iff the Leak payloads are a function of the CompNonDet payloads.

    This notion forgets the interleaving of the two kinds of event and so
    accepts programs that branch on secrets; it exists to show that gap.
    """
    pools = _pooled(env, publics, secrets, u)
    if isinstance(pools, Inconclusive):
        return pools
    witness = {}
    for key, runs in pools.items():
        table: dict[tuple, tuple[tuple, Run]] = {}
        for r in runs:
            branches, leaks = map(tuple, split_events(r.outcome.leak))
            seen = table.setdefault(branches, (leaks, r))
            if seen[0] != leaks:
                return Leaky(seen[1], r)
        witness[key] = {b: l for b, (l, _) in table.items()}
    return ConstantTime(witness)


# --- JSON ------------------------------------------------------------------

def _jsonable(x):
    if isinstance(x, tuple) and x and hasattr(x[0], "word"):
        return trace_to_json(x)
    if isinstance(x, tuple):
        return [_jsonable(v) for v in x]
    if isinstance(x, dict):
        return [{"key": _jsonable(k), "value": _jsonable(v)} for k, v in x.items()]
    if hasattr(x, "__dataclass_fields__") and type(x).__name__ in ("Leaf", "LeakNode", "BranchNode"):
        return tree_to_json(x)
    return x


def run_to_json(r: Run) -> dict:
    d = {"args": list(r.assignment.args), "choices": list(r.choices),
         "outcome": outcome_to_json(r.outcome)}
    if r.oracle is not None:
        d["oracle"] = oracle_to_json(r.oracle)
    return d


def verdict_to_json(v: CtVerdict) -> dict:
    if isinstance(v, ConstantTime):
        return {"verdict": v.verdict, "witness": _jsonable(v.witness)}
    if isinstance(v, Leaky):
        d = {"verdict": v.verdict, "first": run_to_json(v.first), "second": run_to_json(v.second)}
        if v.conflict is not None:
            d["conflict"] = conflict_to_json(v.conflict)
        return d
    d = {"verdict": v.verdict, "reason": v.reason}
    if v.run is not None:
        d["run"] = run_to_json(v.run)
    return d
