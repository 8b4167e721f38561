from ctnondet import corpus
from ctnondet.ctcheck import Inconclusive, check_naive_ct, check_predictor_ct
from ctnondet.report import contract_figure, trace_timeline, verdict_figure
from ctnondet.trace import CompNonDet, Leak, Out, args_projection

PNG = b"\x89PNG\r\n\x1a\n"


def is_png(path):
    return path.read_bytes()[:8] == PNG


def test_timeline_with_mixed_events(tmp_path):
    path = trace_timeline({"a": (CompNonDet(64), Leak(64), Out(3)), "b": (CompNonDet(128),), "c": ()},
                          tmp_path / "sub" / "t.png", "mixed")
    assert is_png(path)


def test_verdict_figures(tmp_path):
    ex = corpus.EXAMPLES["countdown"]
    leaky = check_predictor_ct(ex.env(), ex.public, ex.secret_space())
    ct = check_naive_ct(corpus.EXAMPLES["swap"].env(), args_projection(0, 1), corpus.SWAP_SECRETS)
    for i, v in enumerate((leaky, ct, Inconclusive("nothing terminated"))):
        assert is_png(verdict_figure(v, tmp_path / f"v{i}.png"))


def test_contract_figure(tmp_path):
    rows = [{"context": "bump", "runs": 3, "skipped": 1, "failures": []},
            {"context": "seeded", "runs": 2, "skipped": 0, "failures": ["x"], "failure_count": 1}]
    assert is_png(contract_figure(rows, tmp_path / "c.png", "contract"))
