"""Leakage and IO events, oracles, and the oracle-compatibility relation."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Any, Callable, Iterable, Mapping, Union

from .lang import DEFAULT_WIDTH, mask


@dataclass(frozen=True)
class Leak:
    word: int


@dataclass(frozen=True)
class CompNonDet:
    word: int


LeakEvent = Union[Leak, CompNonDet]
LeakTrace = tuple  # tuple[LeakEvent, ...], oldest first


@dataclass(frozen=True)
class In:
    word: int


@dataclass(frozen=True)
class Out:
    word: int


IOEvent = Union[In, Out]
IOTrace = tuple


# --- oracles ---------------------------------------------------------------

class Oracle:
    """Deterministic map from a leakage-trace prefix to a word."""

    width: int = DEFAULT_WIDTH

    def __call__(self, k: LeakTrace) -> int:
        raise NotImplementedError


@dataclass(frozen=True)
class TableOracle(Oracle):
    table: Mapping[tuple, int]
    default: int
    width: int = DEFAULT_WIDTH

    def __call__(self, k):
        return mask(self.table.get(tuple(k), self.default), self.width)

    def __hash__(self):
        return hash((tuple(sorted(self.table.items(), key=repr)), self.default))


@dataclass(frozen=True)
class SeededOracle(Oracle):
    seed: int
    width: int = DEFAULT_WIDTH
    align: int = 4

    def __call__(self, k):
        key = (self.seed & (2**64 - 1)).to_bytes(8, "little")
        digest = hashlib.blake2b(encode_trace(k).encode(), key=key, digest_size=8).digest()
        # aligned so that answers are usable as allocation addresses
        return mask(int.from_bytes(digest, "little"), self.width) // self.align * self.align


@dataclass(frozen=True)
class BumpOracle(Oracle):
    base: int
    stride: int
    width: int = DEFAULT_WIDTH

    def __call__(self, k):
        n = sum(isinstance(e, CompNonDet) for e in k)
        return mask(self.base + self.stride * n, self.width)


@dataclass(frozen=True, eq=False)
class DerivedOracle(Oracle):
    fn: Callable[[LeakTrace], int]
    label: str = "derived"
    width: int = DEFAULT_WIDTH

    def __call__(self, k):
        return mask(self.fn(tuple(k)), self.width)


def oracle_query(a: Oracle, k: Iterable[LeakEvent]) -> int:
    return a(tuple(k))


def compatible(k: Iterable[LeakEvent], a: Oracle) -> bool:
    k = tuple(k)
    return all(a(k[:i]) == e.word for i, e in enumerate(k) if isinstance(e, CompNonDet))


def split_events(k: Iterable[LeakEvent]) -> tuple[list[int], list[int]]:
    branches, leaks = [], []
    for e in k:
        (branches if isinstance(e, CompNonDet) else leaks).append(e.word)
    return branches, leaks


def nondet_prefixes(k: Iterable[LeakEvent]) -> list[tuple]:
    """The prefixes of k at which an oracle was consulted."""
    k = tuple(k)
    return [k[:i] for i, e in enumerate(k) if isinstance(e, CompNonDet)]


# --- JSON ------------------------------------------------------------------

_EVENT_TAGS = {Leak: "leak", CompNonDet: "nondet", In: "in", Out: "out"}
_TAG_EVENTS = {v: k for k, v in _EVENT_TAGS.items()}


def event_to_json(e) -> dict:
    return {_EVENT_TAGS[type(e)]: e.word}


def event_from_json(d: Mapping[str, int]):
    ((tag, word),) = d.items()
    return _TAG_EVENTS[tag](int(word))


def trace_to_json(k) -> list:
    return [event_to_json(e) for e in k]


def trace_from_json(items) -> tuple:
    return tuple(event_from_json(d) for d in items)


def encode_trace(k) -> str:
    return json.dumps(trace_to_json(k), separators=(",", ":"))


def oracle_to_json(a: Oracle) -> dict:
    if isinstance(a, BumpOracle):
        return {"bump": {"base": a.base, "stride": a.stride}}
    if isinstance(a, SeededOracle):
        return {"seeded": {"seed": a.seed}}
    if isinstance(a, TableOracle):
        entries = [{"trace": trace_to_json(k), "word": w} for k, w in a.table.items()]
        return {"table": {"entries": entries, "default": a.default}}
    return {"derived": {"label": getattr(a, "label", "derived")}}


def oracle_from_json(d: Mapping[str, Any], width: int = DEFAULT_WIDTH) -> Oracle:
    ((tag, body),) = d.items()
    if tag == "bump":
        return BumpOracle(int(body["base"]), int(body["stride"]), width)
    if tag == "seeded":
        return SeededOracle(int(body["seed"]), width, width // 8)
    if tag == "table":
        table = {trace_from_json(e["trace"]): int(e["word"]) for e in body.get("entries", [])}
        return TableOracle(table, int(body.get("default", 0)), width)
    raise ValueError(f"oracle kind {tag!r} cannot be deserialized")


# --- public projections ----------------------------------------------------

@dataclass(frozen=True, eq=False)
class PublicProjection:
    """Names the public part of a run.

    `key` receives the entry arguments, the initial memory and the IO trace and
    returns a hashable value; two runs with equal keys must leak identically.
    It may read secret state to declassify a predicate such as an equality bit.
    """
    key: Callable[[tuple, Mapping[int, int], tuple], Any]
    public_args: tuple[int, ...] = ()
    public_regions: tuple[tuple[int, int], ...] = ()
    name: str = ""


def args_projection(*indices: int) -> PublicProjection:
    return PublicProjection(lambda args, mem, io: tuple(args[i] for i in indices), tuple(indices),
                            name=f"args{list(indices)}")
