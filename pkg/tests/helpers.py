"""Shared generators for the test suite."""

import itertools

from ctnondet.predict import BranchNode, Leaf, LeakNode
from ctnondet.trace import CompNonDet, Leak

WORDS = (0, 1, 2)


def all_traces(words, max_len):
    """Every leakage trace of length <= max_len over Leak/CompNonDet events of `words`."""
    events = [Leak(w) for w in sorted(words)] + [CompNonDet(w) for w in sorted(words)]
    for n in range(max_len + 1):
        yield from itertools.product(events, repeat=n)


def random_tree(rng, depth, fanout, words=WORDS):
    """A random leakage tree at most `depth` deep whose branch nodes have <= `fanout` children."""
    if depth == 0 or rng.random() < 0.2:
        return Leaf()
    if rng.random() < 0.5:
        return LeakNode(rng.choice(words), random_tree(rng, depth - 1, fanout, words))
    n_cases = rng.randrange(0, fanout)
    keys = rng.sample(words, min(n_cases, len(words)))
    cases = {w: random_tree(rng, depth - 1, fanout, words) for w in keys}
    return BranchNode.of(cases, random_tree(rng, depth - 1, fanout, words))


def tree_paths(t, fresh=99):
    """Member traces of t; a branch's default child is reached through `fresh`."""
    if isinstance(t, Leaf):
        return [()]
    if isinstance(t, LeakNode):
        return [(Leak(t.word),) + k for k in tree_paths(t.child, fresh)]
    out = []
    for w, child in t.cases:
        out.extend((CompNonDet(w),) + k for k in tree_paths(child, fresh))
    out.extend((CompNonDet(fresh),) + k for k in tree_paths(t.default, fresh))
    return out
