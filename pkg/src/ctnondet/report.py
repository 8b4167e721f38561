"""PNG figures for the command-line reports, written next to their JSON."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .trace import CompNonDet, In, Leak, Out  # noqa: E402

KIND_STYLE = {
    "leak": ("tab:blue", "o"),
    "nondet": ("tab:orange", "D"),
    "io": ("tab:green", "s"),
    "machine": ("tab:gray", "."),
}


def _kind(e) -> str:
    if isinstance(e, Leak):
        return "leak"
    if isinstance(e, CompNonDet):
        return "nondet"
    if isinstance(e, (In, Out)):
        return "io"
    return "machine"


def _label(e) -> str:
    if hasattr(e, "word"):
        return str(e.word)
    fields = getattr(e, "__dict__", {})
    return ",".join(str(v) for v in fields.values())


def _save(fig, path) -> Path:
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def _first_difference(a: Sequence, b: Sequence) -> int:
    for i, (x, y) in enumerate(zip(a, b)):
        if x != y:
            return i
    return min(len(a), len(b))


def trace_timeline(traces: Mapping[str, Sequence], path: Path, title: str = "",
                   annotate: bool = True) -> Path:
    """One row per trace, one marker per event; a dashed line marks where the first two diverge."""
    rows = list(traces.items())
    longest = max((len(k) for _, k in rows), default=0)
    fig, ax = plt.subplots(figsize=(min(max(6.0, 2 + 0.45 * longest), 18), 1.4 + 0.7 * len(rows)))
    seen = set()
    for y, (_, k) in enumerate(rows):
        for x, e in enumerate(k):
            kind = _kind(e)
            color, marker = KIND_STYLE[kind]
            ax.scatter(x, y, color=color, marker=marker, s=40, zorder=3,
                       label=kind if kind not in seen else None)
            seen.add(kind)
            if annotate and longest <= 40 and kind != "machine":
                ax.annotate(_label(e), (x, y), textcoords="offset points", xytext=(0, 7),
                            ha="center", fontsize=7)
        ax.plot([0, max(len(k) - 1, 0)], [y, y], color="lightgray", lw=1, zorder=1)
    if len(rows) >= 2:
        split = _first_difference(rows[0][1], rows[1][1])
        ax.axvline(split - 0.5, color="tab:red", ls="--", lw=1, label="first difference")
    ax.set_yticks(range(len(rows)), [name for name, _ in rows])
    ax.set_xlabel("event index")
    ax.set_ylim(len(rows) - 0.3, -0.6)
    ax.set_title(title)
    ax.legend(loc="upper left", bbox_to_anchor=(1.0, 1.0), fontsize=8, frameon=False)
    return _save(fig, path)


def verdict_figure(verdict, path: Path, title: str = "") -> Path:
    """Leaky verdicts show the two conflicting runs; the others show trace lengths per public class."""
    from .ctcheck import ConstantTime, Leaky

    if isinstance(verdict, Leaky):
        return trace_timeline({"first run": verdict.first.outcome.leak,
                               "second run": verdict.second.outcome.leak},
                              path, title or "leaky: conflicting runs")
    fig, ax = plt.subplots(figsize=(6, 3))
    if isinstance(verdict, ConstantTime):
        keys = [str(k) for k in verdict.witness]
        sizes = [len(v) if hasattr(v, "__len__") else 1 for v in verdict.witness.values()]
        ax.bar(range(len(keys)), sizes, color="tab:blue")
        ax.set_xticks(range(len(keys)), keys, rotation=45, ha="right", fontsize=7)
        ax.set_ylabel("witness size")
        ax.set_title(title or "constant time: one witness per public class")
    else:
        ax.text(0.5, 0.5, f"inconclusive: {verdict.reason}", ha="center", va="center")
        ax.set_axis_off()
    return _save(fig, path)


def contract_figure(rows: Sequence[Mapping], path: Path, title: str = "") -> Path:
    """Stacked bars of checked, skipped and failing cases per context."""
    labels = [r["context"] for r in rows]
    runs = [r["runs"] for r in rows]
    skipped = [r["skipped"] for r in rows]
    failed = [r.get("failure_count", len(r["failures"])) for r in rows]
    fig, ax = plt.subplots(figsize=(max(4, 1.2 * len(rows)), 3))
    xs = range(len(rows))
    ax.bar(xs, runs, color="tab:green", label="checked")
    ax.bar(xs, skipped, bottom=runs, color="lightgray", label="skipped")
    ax.bar(xs, failed, bottom=[a + b for a, b in zip(runs, skipped)], color="tab:red",
           label="failing")
    ax.set_xticks(list(xs), labels, fontsize=8)
    ax.set_ylabel("cases")
    ax.set_title(title)
    ax.legend(fontsize=8, frameon=False)
    return _save(fig, path)
