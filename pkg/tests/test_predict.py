import random

from hypothesis import given, settings, strategies as st

from ctnondet import corpus
from ctnondet.interp import ChoiceUniverse, Terminated, exec_enumerate
from ctnondet.predict import (CONSTANT_END, END, BranchNode, Conflict, Derived, FromTree, Leaf,
                              LeakNode, PBranch, PEnd, PLeak, predictor_concat, predicts,
                              run_predictor, tree_from_json, tree_member, tree_to_json,
                              tree_to_predictor, trie_from_traces, trie_predictor, trie_to_tree)
from ctnondet.trace import BumpOracle, CompNonDet, Leak, SeededOracle, TableOracle, compatible

from helpers import all_traces, random_tree, tree_paths

SWAP_SHAPE = lambda x: (CompNonDet(x), Leak(x), Leak(x + 1), Leak(x), Leak(x + 1))


def stack_swap_listing(k):
    k = tuple(k)
    if not k:
        return PBranch()
    if not isinstance(k[0], CompNonDet) or not all(isinstance(e, Leak) for e in k[1:]):
        return PEnd()
    x = k[0].word
    return {1: PLeak(x), 2: PLeak(x + 1), 3: PLeak(x), 4: PLeak(x + 1)}.get(len(k), PEnd())


LISTING = Derived(stack_swap_listing, "listing")
ALPHABET = (5, 6, 7)


def stack_swap_tree(words=ALPHABET):
    def chain(x):
        return LeakNode(x, LeakNode(x + 1, LeakNode(x, LeakNode(x + 1, Leaf()))))
    return BranchNode.of({x: chain(x) for x in words})


def random_trees(depth=4, fanout=3):
    return st.integers(0, 2 ** 32).map(lambda seed: random_tree(random.Random(seed), depth, fanout))


# --- predicts -----------------------------------------------------------------------

def test_constant_end_predicts_empty():
    assert predicts(CONSTANT_END, ())
    assert not predicts(CONSTANT_END, (Leak(1),))


def test_listing_predicts_stack_swap_trace():
    assert predicts(LISTING, SWAP_SHAPE(5))
    assert not predicts(LISTING, (CompNonDet(5), Leak(9)))


def test_predicts_by_definition():
    """Compare with a direct transcription of the three conditions."""
    def by_definition(p, k):
        for i, e in enumerate(k):
            want = PLeak(e.word) if isinstance(e, Leak) else PBranch()
            if p(k[:i]) != want:
                return False
        return p(k) == PEnd()

    for k in all_traces((5, 6), 5):
        assert predicts(LISTING, k) == by_definition(LISTING, k)


# --- run_predictor --------------------------------------------------------------------

def test_run_constant_end():
    assert run_predictor(CONSTANT_END, BumpOracle(1, 1)) == ()


def test_run_stack_swap():
    assert run_predictor(LISTING, BumpOracle(64, 16)) == SWAP_SHAPE(64)


def test_run_diverging_predictor():
    assert run_predictor(Derived(lambda k: PLeak(0)), BumpOracle(0, 0), fuel=100) is None


PREDICTORS = {
    "listing": LISTING,
    "tree": FromTree(stack_swap_tree((64, 128, 5))),
    "two branches": FromTree(BranchNode.of({}, LeakNode(1, BranchNode.of({}, Leaf())))),
    "end": CONSTANT_END,
}


def test_run_predictor_biconditional():
    for name, p in PREDICTORS.items():
        for a in (BumpOracle(64, 16), SeededOracle(3), TableOracle({(): 5}, 6)):
            result = run_predictor(p, a)
            for k in all_traces((5, 6, 64), 5):
                assert (predicts(p, k) and compatible(k, a)) == (k == result), (name, k)


# --- trees ------------------------------------------------------------------------------

def test_tree_membership_examples():
    assert tree_member((), Leaf())
    assert tree_member(SWAP_SHAPE(5), stack_swap_tree())
    assert not tree_member((Leak(1),), Leaf())
    assert not tree_member(SWAP_SHAPE(9), stack_swap_tree())


def test_default_child():
    t = BranchNode.of({1: Leaf()}, LeakNode(3, Leaf()))
    assert tree_member((CompNonDet(1),), t)
    assert tree_member((CompNonDet(42), Leak(3)), t)
    assert not tree_member((CompNonDet(42),), t)


def test_tree_predictor_examples():
    assert tree_to_predictor(Leaf())(()) == PEnd()
    p = tree_to_predictor(LeakNode(7, Leaf()))
    assert p(()) == PLeak(7) and p((Leak(7),)) == PEnd()


def test_tree_predictor_agrees_with_listing():
    p = tree_to_predictor(stack_swap_tree())
    for k in all_traces(ALPHABET, 5):
        if not k or (isinstance(k[0], CompNonDet) and k[0].word in ALPHABET):
            assert p(k) == LISTING(k), k


@settings(max_examples=60, deadline=None)
@given(random_trees())
def test_membership_equals_prediction(t):
    p = tree_to_predictor(t)
    for k in all_traces({0, 1, 2}, 4):
        assert tree_member(k, t) == predicts(p, k)


@settings(max_examples=60, deadline=None)
@given(random_trees())
def test_tree_json_round_trip(t):
    assert tree_from_json(tree_to_json(t)) == t


def test_tree_json_shape():
    t = BranchNode.of({64: LeakNode(64, Leaf())})
    assert tree_to_json(t) == {"branch": {"cases": {"64": {"leak": {"w": 64, "then": {"leaf": {}}}}},
                                          "default": {"leaf": {}}}}


# --- tries ---------------------------------------------------------------------------------

def test_empty_trie():
    assert len(trie_from_traces([])) == 0


def test_idempotent_insert():
    tr = trie_from_traces([(Leak(1),), (Leak(1),)])
    assert tr.traces() == [(Leak(1),)]


def _stack_swap_traces():
    outs = exec_enumerate(corpus.EXAMPLES["stack_swap"].env(), (), ChoiceUniverse((64, 128)))
    return [o.leak for o in outs if isinstance(o, Terminated)]


def test_stack_swap_trie_and_tree():
    tr = trie_from_traces(_stack_swap_traces())
    assert set(tr.root.children) == {CompNonDet(64), CompNonDet(128)}
    t = trie_to_tree(tr)
    assert t == stack_swap_tree((64, 128))


def test_two_leaks_conflict():
    c = trie_to_tree(trie_from_traces([(Leak(1),), (Leak(2),)]))
    assert c == Conflict((), frozenset({Leak(1), Leak(2)}))


def test_countdown_conflict():
    ex = corpus.EXAMPLES["countdown"]
    traces = []
    for x in (1, 2):
        traces += [o.leak for o in exec_enumerate(ex.env(), (x,), ChoiceUniverse((64,)))]
    c = trie_to_tree(trie_from_traces(traces))
    assert isinstance(c, Conflict)
    assert c.prefix == (Leak(1), CompNonDet(64))
    assert c.events == {Leak(0), Leak(1)}


def test_end_versus_leak_conflict():
    c = trie_to_tree(trie_from_traces([(Leak(1),), (Leak(1), Leak(2))]))
    assert c == Conflict((Leak(1),), frozenset({END, Leak(2)}))


@settings(max_examples=60, deadline=None)
@given(random_trees(depth=3))
def test_trie_reconstruction_is_sound(t):
    traces = tree_paths(t)
    rebuilt = trie_to_tree(trie_from_traces(traces))
    assert not isinstance(rebuilt, Conflict)
    for k in traces:
        assert tree_member(k, rebuilt)
        assert predicts(tree_to_predictor(rebuilt), k)
        assert predicts(trie_predictor(trie_from_traces(traces)), k)


def test_predictor_without_a_tree():
    """End exactly after a zero answer, otherwise keep branching: no finite tree exists."""
    p = Derived(lambda k: PEnd() if k and k[-1] == CompNonDet(0) else PBranch())
    for depth in range(1, 6):
        # all predicted traces with at most `depth` nonzero answers before the zero
        traces = [tuple(CompNonDet(w) for w in prefix) + (CompNonDet(0),)
                  for n in range(depth) for prefix in _nonzero_words(n)]
        assert all(predicts(p, k) for k in traces)
        t = trie_to_tree(trie_from_traces(traces))
        assert not isinstance(t, Conflict)
        # the reconstructed tree misses the next-longer predicted trace
        longer = (CompNonDet(1),) * depth + (CompNonDet(0),)
        assert predicts(p, longer) and not tree_member(longer, t)


def _nonzero_words(n):
    if n == 0:
        return [()]
    return [w + (1,) for w in _nonzero_words(n - 1)]


# --- concatenation ---------------------------------------------------------------------

def test_concat_identities():
    p = FromTree(stack_swap_tree())
    left = predictor_concat(CONSTANT_END, lambda k: p)
    right = predictor_concat(p, lambda k: CONSTANT_END)
    for k in all_traces(ALPHABET, 5):
        assert predicts(left, k) == predicts(p, k)
        assert predicts(right, k) == predicts(p, k)


def test_concat_depends_on_first_trace():
    p1 = FromTree(LeakNode(1, Leaf()))
    q = predictor_concat(p1, lambda k1: FromTree(LeakNode(k1[0].word, Leaf())))
    assert predicts(q, (Leak(1), Leak(1)))
    assert not predicts(q, (Leak(1),))


@settings(max_examples=100, deadline=None)
@given(random_trees(depth=3), st.lists(random_trees(depth=3), min_size=1, max_size=3))
def test_concat_predicts_joined_traces(t1, seconds):
    p2 = lambda k1: FromTree(seconds[len(k1) % len(seconds)])
    q = predictor_concat(FromTree(t1), p2)
    for k1 in tree_paths(t1):
        for k2 in tree_paths(p2(k1).tree):
            assert predicts(q, k1 + k2)
