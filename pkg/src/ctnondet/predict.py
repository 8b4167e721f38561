"""Predictors, leakage trees and trace tries.

A predictor looks at the trace so far and says what comes next: a specific
leak, a nondeterministic branch, or the end. A leakage tree is the inductive
form of the same information; a trie is a finite set of traces that may or may
not be describable by a tree.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Optional, Union

from .trace import CompNonDet, Leak, LeakTrace, Oracle, event_to_json


@dataclass(frozen=True)
class PLeak:
    word: int


@dataclass(frozen=True)
class PBranch:
    pass


@dataclass(frozen=True)
class PEnd:
    pass


PredictorOut = Union[PLeak, PBranch, PEnd]


# --- trees -----------------------------------------------------------------

@dataclass(frozen=True)
class Leaf:
    pass


@dataclass(frozen=True)
class LeakNode:
    word: int
    child: "LeakageTree"


@dataclass(frozen=True)
class BranchNode:
    cases: tuple[tuple[int, "LeakageTree"], ...]
    default: "LeakageTree" = Leaf()

    @staticmethod
    def of(cases: Mapping[int, "LeakageTree"], default: "LeakageTree" = Leaf()) -> "BranchNode":
        return BranchNode(tuple(sorted(cases.items())), default)

    def child(self, x: int) -> "LeakageTree":
        for w, t in self.cases:
            if w == x:
                return t
        return self.default


LeakageTree = Union[Leaf, LeakNode, BranchNode]


def tree_member(k: Iterable, t: LeakageTree) -> bool:
    for e in k:
        if isinstance(t, LeakNode) and e == Leak(t.word):
            t = t.child
        elif isinstance(t, BranchNode) and isinstance(e, CompNonDet):
            t = t.child(e.word)
        else:
            return False
    return isinstance(t, Leaf)


def tree_depth(t: LeakageTree) -> int:
    if isinstance(t, Leaf):
        return 0
    if isinstance(t, LeakNode):
        return 1 + tree_depth(t.child)
    return 1 + max([tree_depth(c) for _, c in t.cases] + [tree_depth(t.default)])


def tree_to_json(t: LeakageTree) -> dict:
    if isinstance(t, Leaf):
        return {"leaf": {}}
    if isinstance(t, LeakNode):
        return {"leak": {"w": t.word, "then": tree_to_json(t.child)}}
    return {"branch": {"cases": {str(w): tree_to_json(c) for w, c in t.cases},
                       "default": tree_to_json(t.default)}}


def tree_from_json(d: Mapping) -> LeakageTree:
    ((tag, body),) = d.items()
    if tag == "leaf":
        return Leaf()
    if tag == "leak":
        return LeakNode(int(body["w"]), tree_from_json(body["then"]))
    return BranchNode.of({int(w): tree_from_json(c) for w, c in body["cases"].items()},
                         tree_from_json(body["default"]))


# --- predictors ------------------------------------------------------------

class Predictor:
    def __call__(self, k: LeakTrace) -> PredictorOut:
        raise NotImplementedError


@dataclass(frozen=True)
class FromTree(Predictor):
    tree: LeakageTree

    def __call__(self, k):
        # a Leak edge is followed whatever its payload; off-tree prefixes give PEnd
        t = self.tree
        for e in k:
            if isinstance(t, LeakNode) and isinstance(e, Leak):
                t = t.child
            elif isinstance(t, BranchNode) and isinstance(e, CompNonDet):
                t = t.child(e.word)
            else:
                return PEnd()
        if isinstance(t, Leaf):
            return PEnd()
        if isinstance(t, LeakNode):
            return PLeak(t.word)
        return PBranch()


@dataclass(frozen=True, eq=False)
class Derived(Predictor):
    fn: Callable[[LeakTrace], PredictorOut]
    label: str = "derived"

    def __call__(self, k):
        return self.fn(tuple(k))


def tree_to_predictor(t: LeakageTree) -> Predictor:
    return FromTree(t)


CONSTANT_END = Derived(lambda k: PEnd(), "end")


def expected_output(e) -> PredictorOut:
    """What a predictor must say right before event e; machine events predict as themselves."""
    if isinstance(e, Leak):
        return PLeak(e.word)
    if isinstance(e, CompNonDet):
        return PBranch()
    return PLeak(e)


def predicts(p: Callable[[LeakTrace], PredictorOut], k: Iterable) -> bool:
    k = tuple(k)
    for i, e in enumerate(k):
        expected = expected_output(e)
        if p(k[:i]) != expected:
            return False
    return p(k) == PEnd()


def run_predictor(p: Callable[[LeakTrace], PredictorOut], a: Oracle,
                  fuel: int = 10_000) -> Optional[LeakTrace]:
    if fuel <= 0:
        raise ValueError("fuel must be positive")
    k: tuple = ()
    for _ in range(fuel):
        out = p(k)
        if isinstance(out, PEnd):
            return k
        if isinstance(out, PLeak):
            k += (Leak(out.word),)
        else:
            k += (CompNonDet(a(k)),)
    return None


def predictor_concat(p1: Callable[[LeakTrace], PredictorOut],
                     p2: Callable[[LeakTrace], Callable[[LeakTrace], PredictorOut]]) -> Predictor:
    """Run p1 until it first answers PEnd at a prefix k1, then hand the rest to p2(k1)."""

    def q(k):
        for i in range(len(k) + 1):
            out = p1(k[:i])
            if isinstance(out, PEnd):
                return p2(k[:i])(k[i:])
        return out

    return Derived(q, "concat")


# --- tries -----------------------------------------------------------------

@dataclass
class TrieNode:
    children: dict = field(default_factory=dict)  # event -> TrieNode
    is_end: bool = False


@dataclass
class TraceTrie:
    root: TrieNode = field(default_factory=TrieNode)

    def insert(self, k: Iterable):
        node = self.root
        for e in k:
            node = node.children.setdefault(e, TrieNode())
        node.is_end = True

    def traces(self) -> list[tuple]:
        out = []

        def walk(node, prefix):
            if node.is_end:
                out.append(prefix)
            for e, child in node.children.items():
                walk(child, prefix + (e,))

        walk(self.root, ())
        return out

    def __len__(self):
        return len(self.traces())


def trie_from_traces(ks: Iterable[Iterable]) -> TraceTrie:
    trie = TraceTrie()
    for k in ks:
        trie.insert(k)
    return trie


END = "end"


@dataclass(frozen=True)
class Conflict:
    """Traces that share `prefix` but continue differently; END marks a trace ending there."""
    prefix: tuple
    events: frozenset


def trie_to_tree(tr: TraceTrie) -> Union[LeakageTree, Conflict]:
    def build(node: TrieNode, prefix: tuple):
        edges = list(node.children)
        if not edges:
            return Leaf()
        nexts = set(edges) | ({END} if node.is_end else set())
        if all(isinstance(e, CompNonDet) for e in edges) and not node.is_end:
            cases = {}
            for e in edges:
                sub = build(node.children[e], prefix + (e,))
                if isinstance(sub, Conflict):
                    return sub
                cases[e.word] = sub
            return BranchNode.of(cases)
        if len(edges) == 1 and isinstance(edges[0], Leak) and not node.is_end:
            sub = build(node.children[edges[0]], prefix + (edges[0],))
            return sub if isinstance(sub, Conflict) else LeakNode(edges[0].word, sub)
        return Conflict(prefix, frozenset(nexts))

    return build(tr.root, ())


def trie_predictor(tr: TraceTrie) -> Predictor:
    """Predictor read directly off a trie; PEnd off the trie and at ambiguous nodes."""

    def p(k):
        node = tr.root
        for e in k:
            if e not in node.children:
                return PEnd()
            node = node.children[e]
        edges = list(node.children)
        if node.is_end or not edges:
            return PEnd()
        if all(isinstance(e, CompNonDet) for e in edges):
            return PBranch()
        return PLeak(edges[0].word) if len(edges) == 1 else PEnd()

    return Derived(p, "trie")


def conflict_to_json(c: Conflict) -> dict:
    events = sorted((END if e == END else event_to_json(e) for e in c.events), key=str)
    return {"prefix": [event_to_json(e) for e in c.prefix], "events": events}
