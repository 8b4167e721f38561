"""Batch command-line frontend.

Every command reads a run spec (a JSON file, or a corpus example via
``--example``), prints JSON on stdout and a one-line summary on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Optional, Sequence

from . import corpus, machine
from .compiler import (PASS_ORDER, CompileError, PatternMismatch, PassArtifact,
                       check_contract, check_oracle_purity, check_predictor_contract, compose,
                       reorder_oracle_counterexample, reorder_random, run_passes, _identity_gamma)
from .ctcheck import (Assignment, ConstantTime, Leaky, check_flawed_ct,
                      check_naive_ct, check_oracle_ct, check_output_independence,
                      check_predictor_ct, verdict_to_json)
from .interp import (BenignStuck, ChoiceUniverse, ConstantFill, DomainFill, ExecEnv, InputDomain,
                     Scripted, SeededFill, Terminated, exec_with_choices, explore, explore_oracle,
                     outcome_to_json)
from .lang import DEFAULT_WIDTH, ParseError, Program, format_program, parse, validate
from .trace import (BumpOracle, In, Oracle, PublicProjection, SeededOracle, oracle_from_json,
                    oracle_to_json, trace_to_json)

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_INCONCLUSIVE = 0, 1, 2, 3
DEFAULT_ORACLE = BumpOracle(64, 16)


class ConfigError(Exception):
    pass


@dataclass(frozen=True)
class RunSpec:
    """Everything a command needs to know about one program run."""
    program: Program
    name: str
    args: tuple = ()
    mem: dict = field(default_factory=dict)
    oracle: Optional[Oracle] = None
    inputs: Any = Scripted()
    fill: Any = DomainFill()
    universe: ChoiceUniverse = ChoiceUniverse()
    width: int = DEFAULT_WIDTH
    fuel: int = 10**6
    seed: int = 0
    public: PublicProjection = field(default_factory=lambda: PublicProjection(lambda a, m, io: ()))
    secrets: tuple = ()
    variants: tuple = ()

    def env(self) -> ExecEnv:
        return ExecEnv(self.program, self.inputs, self.fill, self.fuel, self.width)

    def secret_space(self) -> tuple:
        return self.secrets or (Assignment(self.args, dict(self.mem)),)

    def oracles(self) -> list[Oracle]:
        if self.oracle is not None:
            return [self.oracle]
        return [BumpOracle(64, 16, self.width), SeededOracle(self.seed, self.width, self.width // 8)]


def _int_keys(d) -> dict[int, int]:
    return {int(k, 0) if isinstance(k, str) else int(k): int(v) for k, v in (d or {}).items()}


def _memory(d: dict) -> dict[int, int]:
    mem = _int_keys(d.get("mem"))
    for base, words in _int_keys_lists(d.get("mem_words")).items():
        mem.update(corpus.words_to_bytes(base, words))
    return mem


def _int_keys_lists(d) -> dict[int, list]:
    return {int(k, 0) if isinstance(k, str) else int(k): [int(w) for w in v] for k, v in (d or {}).items()}


def _inputs(v):
    if v is None:
        return None
    if isinstance(v, list):
        return Scripted(tuple(int(x) for x in v))
    if isinstance(v, dict) and "domains" in v:
        return InputDomain(tuple(tuple(int(x) for x in dom) for dom in v["domains"]))
    raise ConfigError(f"inputs must be a list or {{'domains': [...]}}, got {v!r}")


def _fill(v):
    if v is None:
        return None
    ((tag, body),) = v.items()
    if tag == "constant":
        return ConstantFill(int(body))
    if tag == "seeded":
        return SeededFill(int(body))
    if tag == "domain":
        return DomainFill(tuple(int(x) for x in body))
    raise ConfigError(f"unknown fill {tag!r}")


def _public(v, nargs: int) -> PublicProjection:
    arg_idx = tuple(int(i) for i in v.get("args", ()))
    regions = tuple((int(lo), int(hi)) for lo, hi in v.get("regions", ()))
    with_inputs = bool(v.get("inputs", False))

    def key(args, mem, io):
        return (tuple(args[i] for i in arg_idx),
                tuple(mem.get(a, 0) for lo, hi in regions for a in range(lo, hi)),
                tuple(e.word for e in io if isinstance(e, In)) if with_inputs else ())
    return PublicProjection(key, arg_idx, regions, name=json.dumps(v, sort_keys=True))


def _parse_ints(text: Optional[str]) -> Optional[tuple]:
    if text is None:
        return None
    text = text.strip()
    return tuple(int(x, 0) for x in text.split(",")) if text else ()


def load_spec(ns: argparse.Namespace) -> RunSpec:
    width = ns.word_width or DEFAULT_WIDTH
    raw: dict = {}
    base_dir = Path.cwd()
    if ns.spec:
        path = Path(ns.spec)
        try:
            raw = json.loads(path.read_text())
        except FileNotFoundError:
            raise ConfigError(f"no such spec file: {path}")
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: {e}")
        base_dir = path.parent
        width = ns.word_width or int(raw.get("word_width", DEFAULT_WIDTH))
    example_name = ns.example or raw.get("example")
    if example_name:
        if example_name not in corpus.EXAMPLES:
            raise ConfigError(f"unknown example {example_name!r}; try `ctnondet list`")
        ex = corpus.EXAMPLES[example_name]
        spec = RunSpec(ex.program(width), ex.name, ex.args, dict(ex.mem), None, ex.inputs, ex.fill,
                       width=width, public=ex.public, secrets=ex.secrets, variants=ex.variants)
    elif "program" in raw:
        src = base_dir / raw["program"]
        try:
            program = parse(src.read_text(), width)
        except FileNotFoundError:
            raise ConfigError(f"no such program file: {src}")
        spec = RunSpec(program, src.stem, width=width)
    else:
        raise ConfigError("give a spec file with a 'program' or 'example', or --example NAME")
    if raw.get("entry"):
        if raw["entry"] not in spec.program:
            raise ConfigError(f"no function {raw['entry']!r}")
        spec = replace(spec, program=spec.program.with_entry(raw["entry"]))
    updates: dict = {}
    if "args" in raw:
        updates["args"] = tuple(int(a) for a in raw["args"])
    if "mem" in raw or "mem_words" in raw:
        updates["mem"] = _memory(raw)
    if "oracle" in raw:
        updates["oracle"] = oracle_from_json(raw["oracle"], width)
    if "inputs" in raw:
        updates["inputs"] = _inputs(raw["inputs"])
    if "fill" in raw:
        updates["fill"] = _fill(raw["fill"])
    if "universe" in raw:
        u = raw["universe"]
        updates["universe"] = ChoiceUniverse(tuple(u.get("bases", ChoiceUniverse().bases)),
                                             tuple(u.get("random_values", ChoiceUniverse().random_values)))
    if "fuel" in raw:
        updates["fuel"] = int(raw["fuel"])
    if "public" in raw:
        updates["public"] = _public(raw["public"], len(spec.args))
    if "secrets" in raw:
        updates["secrets"] = tuple(
            Assignment(tuple(int(a) for a in s.get("args", raw.get("args", spec.args))), _memory(s),
                       _inputs(s.get("inputs")), _fill(s.get("fill")))
            for s in raw["secrets"])
    if "variants" in raw:
        updates["variants"] = tuple(tuple(int(a) for a in v) for v in raw["variants"])
    # command-line flags win over the file
    if getattr(ns, "args", None) is not None:
        updates["args"] = _parse_ints(ns.args)
    if getattr(ns, "inputs", None) is not None:
        updates["inputs"] = Scripted(_parse_ints(ns.inputs))
    if getattr(ns, "oracle", None):
        updates["oracle"] = oracle_from_json(json.loads(ns.oracle), width)
    if ns.fuel is not None:
        updates["fuel"] = ns.fuel
    if ns.seed is not None:
        updates["seed"] = ns.seed
        updates.setdefault("oracle", SeededOracle(ns.seed, width, width // 8))
    if updates.get("fuel", 1) <= 0:
        raise ConfigError("fuel must be positive")
    spec = replace(spec, **updates)
    problems = validate(spec.program, width)
    if problems:
        raise ConfigError(f"program does not validate: {problems}")
    return spec


# --- output ------------------------------------------------------------------

def _emit(ns, payload: dict, summary: str):
    text = json.dumps(payload, indent=None if ns.json else 2, sort_keys=False)
    if ns.output:
        Path(ns.output).parent.mkdir(parents=True, exist_ok=True)
        Path(ns.output).write_text(text + "\n")
    else:
        print(text)
    if not ns.json:
        print(summary, file=sys.stderr)


def _plot_dir(ns) -> Optional[Path]:
    if ns.plot:
        return Path(ns.plot)
    return None


# --- commands ----------------------------------------------------------------

def cmd_run(ns) -> int:
    spec = load_spec(ns)
    oracle = spec.oracle or DEFAULT_ORACLE
    if isinstance(spec.inputs, InputDomain):
        raise ConfigError("run needs scripted inputs (use --inputs or `enumerate`)")
    # domain fills resolve to their first value so that a run is a single execution
    o = exec_with_choices(spec.env(), spec.args, (), spec.universe, oracle, spec.mem)
    payload = {"program": spec.name, "args": list(spec.args), "oracle": oracle_to_json(oracle),
               "outcome": outcome_to_json(o)}
    if _plot_dir(ns):
        from .report import trace_timeline
        path = trace_timeline({spec.name: o.leak}, _plot_dir(ns) / f"{spec.name}_run.png",
                              f"{spec.name}: leakage")
        payload["figures"] = [str(path)]
    _emit(ns, payload, f"{spec.name}: {o.status}, {len(o.leak)} leakage events")
    return EXIT_OK if isinstance(o, (Terminated, BenignStuck)) else EXIT_FAIL


def cmd_enumerate(ns) -> int:
    spec = load_spec(ns)
    if spec.oracle is not None:
        found = explore_oracle(spec.env(), spec.args, spec.oracle, spec.mem)
    else:
        found = explore(spec.env(), spec.args, spec.universe, spec.mem)
    runs = [{"choices": list(c), "outcome": outcome_to_json(o)} for o, c in found.items()]
    payload = {"program": spec.name, "args": list(spec.args), "executions": runs}
    if spec.oracle is not None:
        payload["oracle"] = oracle_to_json(spec.oracle)
    if _plot_dir(ns):
        from .report import trace_timeline
        traces = {f"run {i}": o.leak for i, o in enumerate(list(found)[:12])}
        payload["figures"] = [str(trace_timeline(traces, _plot_dir(ns) / f"{spec.name}_runs.png",
                                                 f"{spec.name}: enumerated executions"))]
    bad = [o for o in found if not isinstance(o, (Terminated, BenignStuck))]
    _emit(ns, payload, f"{spec.name}: {len(found)} distinct executions, {len(bad)} erroneous")
    return EXIT_FAIL if bad else EXIT_OK


NOTIONS = ("naive", "oracle", "predictor", "flawed", "output")


def cmd_check_ct(ns) -> int:
    spec = load_spec(ns)
    env, secrets = spec.env(), spec.secret_space()
    if ns.notion == "naive":
        v = check_naive_ct(env, spec.public, secrets)
    elif ns.notion == "oracle":
        v = check_oracle_ct(env, spec.public, secrets, spec.oracles())
    elif ns.notion == "output":
        v = check_output_independence(env, spec.public, secrets, spec.oracles())
    elif ns.notion == "predictor":
        v = check_predictor_ct(env, spec.public, secrets, spec.universe)
    else:
        v = check_flawed_ct(env, spec.public, secrets, spec.universe)
    payload = {"program": spec.name, "notion": ns.notion, "public": spec.public.name,
               "secrets": len(secrets), **verdict_to_json(v)}
    if _plot_dir(ns):
        from .report import verdict_figure
        path = verdict_figure(v, _plot_dir(ns) / f"{spec.name}_{ns.notion}.png",
                              f"{spec.name}, {ns.notion} notion: {v.verdict}")
        payload["figures"] = [str(path)]
    _emit(ns, payload, f"{spec.name}: {ns.notion} notion says {v.verdict}")
    if isinstance(v, ConstantTime):
        return EXIT_OK
    return EXIT_FAIL if isinstance(v, Leaky) else EXIT_INCONCLUSIVE


def _stages(text: Optional[str]) -> list[str]:
    if not text:
        return list(PASS_ORDER)
    return [s.strip() for s in text.split(",") if s.strip()]


def _artifacts(spec: RunSpec, stages: Sequence[str], ns) -> list[PassArtifact]:
    return run_passes(spec.program, ns.code_base, ns.sp0, spec.width, stages)


def cmd_compile(ns) -> int:
    spec = load_spec(ns)
    stages = _stages(ns.stages)
    try:
        arts = _artifacts(spec, stages, ns)
    except CompileError as e:
        kind = "PatternMismatch" if isinstance(e, PatternMismatch) else "CompileError"
        _emit(ns, {"program": spec.name, "error": kind, "message": str(e)}, f"{kind}: {e}")
        return EXIT_FAIL
    final = arts[-1].target
    files: dict[str, str] = {}
    for i, art in enumerate(arts):
        stem = f"{i:02d}_{art.name}"
        if isinstance(art.target, machine.MachineProgram):
            files[f"{stem}.s"] = machine.listing(art.target) + "\n"
            files[f"{stem}.json"] = json.dumps(machine.machine_program_to_json(art.target), indent=1) + "\n"
        else:
            files[f"{stem}.ct"] = format_program(art.target, spec.width)
    manifest = {"program": spec.name, "stages": [a.name for a in arts],
                "word_width": spec.width, "files": sorted(files)}
    for art in arts:
        if art.manifest:
            manifest[art.name] = _jsonable(art.manifest)
    if ns.output_dir:
        out = Path(ns.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        for name, text in files.items():
            (out / name).write_text(text)
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    emit = ns.emit or "json"
    if emit == "flat":
        flat = [a.target for a in arts if isinstance(a.target, Program)]
        if not flat:
            raise ConfigError("no flat program among the requested stages")
        print(format_program(flat[-1], spec.width), end="")
    elif emit == "machine":
        if not isinstance(final, machine.MachineProgram):
            raise ConfigError("--emit machine needs the codegen stage")
        print(machine.listing(final))
    else:
        payload = dict(manifest)
        if isinstance(final, machine.MachineProgram):
            payload["machine"] = machine.machine_program_to_json(final)
        else:
            payload["flat"] = format_program(final, spec.width)
        print(json.dumps(payload, indent=None if ns.json else 2))
    if not ns.json:
        print(f"{spec.name}: compiled through {', '.join(manifest['stages'])}", file=sys.stderr)
    return EXIT_OK


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    return x


PASSES = PASS_ORDER + ("reorder_random", "pipeline")
CONTRACTS = ("leakage", "oracle", "predictor")


def _artifact_for(spec: RunSpec, pass_name: str, ns) -> PassArtifact:
    if pass_name == "reorder_random":
        return reorder_random(spec.program)
    if pass_name == "pipeline":
        return compose(_artifacts(spec, PASS_ORDER, ns))
    upto = PASS_ORDER[:PASS_ORDER.index(pass_name) + 1]
    return _artifacts(spec, upto, ns)[-1]


def _report_row(context: str, r) -> dict:
    return {"context": context, "runs": r.runs, "skipped": r.skipped,
            "failures": list(r.failures[:1]), "failure_count": len(r.failures)}


def cmd_check_pass(ns) -> int:
    spec = load_spec(ns)
    try:
        art = _artifact_for(spec, ns.pass_name, ns)
    except CompileError as e:
        kind = "PatternMismatch" if isinstance(e, PatternMismatch) else "CompileError"
        _emit(ns, {"program": spec.name, "pass": ns.pass_name, "error": kind, "message": str(e)},
              f"{kind}: {e}")
        return EXIT_FAIL
    machine_level = isinstance(art.target, machine.MachineProgram)
    contexts = [None] if machine_level else spec.oracles()
    env = spec.env()
    rows: list[dict] = []
    extra: dict = {}
    if ns.contract == "leakage" or (ns.contract == "oracle" and art.oracle_transform is not None):
        for low in contexts:
            name = "machine" if low is None else json.dumps(oracle_to_json(low), sort_keys=True)
            rows.append(_report_row(name, check_contract(art, env, spec.args, spec.mem, low)))
        if ns.contract == "oracle":
            zeroed = {a: 0 for a in spec.mem}
            for low in contexts:
                name = "purity" if low is None else f"purity {json.dumps(oracle_to_json(low))}"
                rows.append(_report_row(name, check_oracle_purity(art, env, spec.args,
                                                                  [spec.mem, zeroed], low)))
        if art.gamma is _identity_gamma:
            extra["gamma"] = "identity"
    elif ns.contract == "oracle":
        # no oracle transform exists; show why none can
        arg_sets = list(dict.fromkeys((spec.args,) + tuple(spec.variants)
                                      + tuple(s.args for s in spec.secrets)))
        found = None
        for low in contexts:
            found = reorder_oracle_counterexample(art, env, arg_sets, low, spec.mem)
            if found:
                extra["counterexample"] = {
                    "low_oracle": oracle_to_json(low),
                    "source_prefix": trace_to_json(found.prefix),
                    "required_answers": [{"args": list(a), "word": w} for a, w in found.required.items()],
                    "target_outputs": [{"args": list(a), "out": o} for a, o in found.target_outputs.items()],
                    "source_outputs": [{"args": list(a), "out": o} for a, o in found.source_outputs.items()],
                    "contradiction": found.explain(),
                }
                break
        rows.append({"context": "oracle transform", "runs": len(arg_sets), "skipped": 0,
                     "failures": [found.explain()] if found else ["pass provides no oracle transform"],
                     "failure_count": 1})
    else:
        rows.append(_report_row("predictor", check_predictor_contract(art, env, spec.args, spec.mem,
                                                                      spec.universe)))
    ok = all(r["failure_count"] == 0 for r in rows)
    payload = {"program": spec.name, "pass": art.name, "contract": ns.contract, "ok": ok,
               "expect_fail": ns.expect_fail, "cases": rows, **extra}
    if _plot_dir(ns):
        from .report import contract_figure
        path = contract_figure(rows, _plot_dir(ns) / f"{spec.name}_{ns.pass_name}_{ns.contract}.png",
                               f"{spec.name}: {art.name}, {ns.contract} contract")
        payload["figures"] = [str(path)]
    status = "holds" if ok else "fails"
    _emit(ns, payload, f"{spec.name}: {ns.contract} contract of {art.name} {status}")
    if ns.expect_fail:
        return EXIT_OK if not ok else EXIT_FAIL
    return EXIT_OK if ok else EXIT_FAIL


DEMOS = ("countdown", "reorder", "memequal", "login")


def cmd_demo(ns) -> int:
    """Canned walkthroughs of the corpus; each prints its findings as JSON."""
    plot = _plot_dir(ns)
    figures: list[str] = []
    if ns.name == "countdown":
        ex = corpus.EXAMPLES["countdown"]
        env, secrets = ex.env(), ex.secret_space()
        strict = check_predictor_ct(env, ex.public, secrets)
        flawed = check_flawed_ct(env, ex.public, secrets)
        payload = {"demo": "countdown", "predictor": verdict_to_json(strict),
                   "flawed": verdict_to_json(flawed)}
        if plot:
            from .report import verdict_figure
            figures.append(str(verdict_figure(strict, plot / "countdown_predictor.png",
                                              "countdown: runs the predictor notion separates")))
        ok = isinstance(strict, Leaky) and isinstance(flawed, ConstantTime)
    elif ns.name == "reorder":
        ex = corpus.EXAMPLES["reorder_p"]
        art = reorder_random(ex.program())
        pred = check_predictor_contract(art, ex.env(), ex.args, ex.mem)
        from .trace import Leak, TableOracle
        low = TableOracle({(Leak(16),): 7, (Leak(20),): 9}, 3)
        ce = reorder_oracle_counterexample(art, ex.env(), [(16,), (20,)], low, ex.mem)
        payload = {"demo": "reorder", "predictor_contract": _report_row("predictor", pred),
                   "oracle_counterexample": None if ce is None else {
                       "target_outputs": [{"w": a[0], "out": o} for a, o in ce.target_outputs.items()],
                       "source_outputs": [{"w": a[0], "out": o} for a, o in ce.source_outputs.items()],
                       "contradiction": ce.explain()}}
        ok = pred.ok and ce is not None
    elif ns.name == "memequal":
        ex = corpus.EXAMPLES["memequal"]
        art = compose(run_passes(ex.program()))
        leaks = {}
        for s in ex.secret_space():
            out = machine.mrun(art.target, _machine_state(art, s.args, s.mem))
            leaks[tuple(sorted(s.mem.items()))] = (out.leak, out.regs[machine.A0])
        distinct = {k for k, _ in leaks.values()}
        payload = {"demo": "memequal", "assignments": len(leaks), "distinct_machine_traces": len(distinct),
                   "trace_length": len(next(iter(distinct)))}
        if plot:
            from .report import trace_timeline
            sample = list(leaks.values())[:2]
            figures.append(str(trace_timeline({f"contents {i}": k for i, (k, _) in enumerate(sample)},
                                              plot / "memequal_machine.png",
                                              "memequal: machine leakage for two secrets",
                                              annotate=False)))
        ok = len(distinct) == 1
    else:
        ex = corpus.EXAMPLES["login"]
        by_user = check_naive_ct(ex.env(), corpus.LOGIN_BY_USER, ex.secret_space())
        refined = check_naive_ct(ex.env(), corpus.LOGIN_BY_USER_AND_MATCH, ex.secret_space())
        payload = {"demo": "login", "username_public": verdict_to_json(by_user),
                   "username_and_match_public": verdict_to_json(refined)}
        if plot:
            from .report import verdict_figure
            figures.append(str(verdict_figure(by_user, plot / "login_username.png",
                                              "login: the comparison bit leaks")))
        ok = isinstance(by_user, Leaky) and isinstance(refined, ConstantTime)
    if figures:
        payload["figures"] = figures
    payload["as_expected"] = ok
    _emit(ns, payload, f"demo {ns.name}: {'as expected' if ok else 'UNEXPECTED'}")
    return EXIT_OK if ok else EXIT_FAIL


def _machine_state(art, args, mem):
    from .compiler import machine_state
    return machine_state(art, args, mem)


def cmd_list(ns) -> int:
    rows = [{"name": e.name, "file": e.file, "args": list(e.args)} for e in corpus.EXAMPLES.values()]
    _emit(ns, {"examples": rows}, f"{len(rows)} examples")
    return EXIT_OK


# --- argument parsing --------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--example", "-e", help="use a corpus example instead of a spec file")
    common.add_argument("--args", help="comma-separated entry arguments")
    common.add_argument("--inputs", help="comma-separated scripted inputs")
    common.add_argument("--oracle", help='oracle as JSON, e.g. \'{"bump": {"base": 64, "stride": 16}}\'')
    common.add_argument("--word-width", type=int, choices=(8, 16, 32))
    common.add_argument("--fuel", type=int)
    common.add_argument("--seed", type=int, help="seeded oracle (and seeded contexts) to use")
    common.add_argument("--json", action="store_true", help="compact JSON, no summary line")
    common.add_argument("-o", "--output", help="write the JSON here instead of stdout")
    common.add_argument("--plot", metavar="DIR", help="also render PNG figures into DIR")

    spec_arg = argparse.ArgumentParser(add_help=False)
    spec_arg.add_argument("spec", nargs="?", help="JSON run spec")

    layout = argparse.ArgumentParser(add_help=False)
    layout.add_argument("--code-base", type=lambda s: int(s, 0), default=0x1000)
    layout.add_argument("--sp0", type=lambda s: int(s, 0), default=0x8000)

    p = argparse.ArgumentParser(prog="ctnondet", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[spec_arg, common], help="run once and print the outcome")
    sub.add_parser("enumerate", parents=[spec_arg, common], help="enumerate all executions")
    c = sub.add_parser("check-ct", parents=[spec_arg, common], help="constant-time check")
    c.add_argument("--notion", choices=NOTIONS, default="predictor")
    c = sub.add_parser("compile", parents=[spec_arg, common, layout], help="compile and dump artifacts")
    c.add_argument("--stages", help=f"comma-separated passes (default: {','.join(PASS_ORDER)})")
    c.add_argument("--emit", choices=("flat", "machine", "json"))
    c.add_argument("--output-dir", "-d", help="write IR, machine code and manifest here")
    c = sub.add_parser("check-pass", parents=[spec_arg, common, layout], help="check a pass contract")
    c.add_argument("--pass", dest="pass_name", choices=PASSES, required=True)
    c.add_argument("--contract", choices=CONTRACTS, default="leakage")
    c.add_argument("--expect-fail", action="store_true",
                   help="succeed exactly when the contract fails")
    c = sub.add_parser("demo", parents=[common], help="canned corpus walkthroughs")
    c.add_argument("name", choices=DEMOS)
    sub.add_parser("list", parents=[common], help="list corpus examples")
    return p


COMMANDS = {"run": cmd_run, "enumerate": cmd_enumerate, "check-ct": cmd_check_ct,
            "compile": cmd_compile, "check-pass": cmd_check_pass, "demo": cmd_demo, "list": cmd_list}


def main(argv: Optional[Sequence[str]] = None) -> int:
    ns = build_parser().parse_args(argv)
    try:
        return COMMANDS[ns.command](ns)
    except (ConfigError, ParseError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
