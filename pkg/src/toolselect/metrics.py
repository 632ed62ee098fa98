"""Accuracy, hallucination, recall@K and format accuracy, overall and per subset.

The first sample of each instruction is its single-inference prediction for
accuracy, hallucination and format accuracy; recall uses all samples. A
sample with no extractable name counts as incorrect and hallucinated.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from fractions import Fraction
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from ._jsonl import SCHEMA_VERSION
from .dataset import SUBSET_AXES, AMBIGUITY_KINDS, Instruction, SubsetKey
from .errors import ValidationError
from .outparse import ParsedPrediction, parse_prediction
from .selector import PredictionRecord

FOOTER = (
    "Rates are percentages. Accuracy, hallucination and format accuracy use the first sample "
    "per instruction; a response with no extractable API name counts as incorrect and as a "
    "hallucination."
)


@dataclass(frozen=True)
class ScoredInstruction:
    instruction_id: str
    gold: tuple[str, ...]
    samples: tuple[ParsedPrediction, ...]

    def __post_init__(self) -> None:
        if not self.gold:
            raise ValueError(f"{self.instruction_id}: empty gold list")
        if not self.samples:
            raise ValueError(f"{self.instruction_id}: no samples")

    @property
    def first(self) -> ParsedPrediction:
        return self.samples[0]


@dataclass(frozen=True)
class Scores:
    n: int
    acc: float | None = None
    hallu: float | None = None
    format_acc: float | None = None
    recall: float | None = None

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"n": self.n}
        if self.n:
            out.update(acc=self.acc, hallu=self.hallu, format_acc=self.format_acc)
            if self.recall is not None:
                out["recall"] = self.recall
        return out

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Scores":
        return cls(n=d["n"], acc=d.get("acc"), hallu=d.get("hallu"),
                   format_acc=d.get("format_acc"), recall=d.get("recall"))


@dataclass
class MetricsReport:
    overall: Scores
    subsets: dict[SubsetKey, Scores] = field(default_factory=dict)
    manifest: dict[str, Any] = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.overall.n

    @property
    def acc(self) -> float | None:
        return self.overall.acc

    @property
    def hallu(self) -> float | None:
        return self.overall.hallu

    @property
    def format_acc(self) -> float | None:
        return self.overall.format_acc

    @property
    def recall(self) -> float | None:
        return self.overall.recall

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "manifest": self.manifest,
            "overall": self.overall.to_dict(),
            "subsets": [{"axis": k.axis, "value": k.value, **s.to_dict()} for k, s in self.subsets.items()],
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "MetricsReport":
        if d.get("schema_version") != SCHEMA_VERSION:
            raise ValidationError(f"unsupported report schema_version {d.get('schema_version')!r}")
        subsets = {SubsetKey(s["axis"], s["value"]): Scores.from_dict(s) for s in d.get("subsets", [])}
        return cls(overall=Scores.from_dict(d["overall"]), subsets=subsets, manifest=dict(d.get("manifest", {})))


# --------------------------------------------------------------------------
# Scoring inputs


def score_records(
    records: Iterable[PredictionRecord], gold: Mapping[str, Sequence[str]]
) -> list[ScoredInstruction]:
    """Group records per instruction (sample order) and parse each response."""
    by_id: dict[str, dict[int, PredictionRecord]] = {}
    for rec in records:
        slot = by_id.setdefault(rec.instruction_id, {})
        if rec.sample_index in slot:
            raise ValidationError(f"duplicate record {rec.instruction_id}#{rec.sample_index}")
        slot[rec.sample_index] = rec
    missing = sorted(set(gold) - set(by_id))
    if missing:
        raise ValidationError(f"no records for instructions {missing[:5]}")
    out = []
    for iid in sorted(by_id):
        if iid not in gold:
            raise ValidationError(f"record for unknown instruction {iid!r}")
        samples = by_id[iid]
        if sorted(samples) != list(range(1, len(samples) + 1)):
            raise ValidationError(f"{iid}: sample indices must be 1..K, got {sorted(samples)}")
        parsed = tuple(parse_prediction(samples[j].raw) for j in sorted(samples))
        out.append(ScoredInstruction(iid, tuple(gold[iid]), parsed))
    return out


def _require(items: Sequence[ScoredInstruction]) -> None:
    if not items:
        raise ValueError("metric over an empty instruction set")


# --------------------------------------------------------------------------
# Metrics


def accuracy(items: Sequence[ScoredInstruction]) -> float:
    _require(items)
    hits = sum(1 for s in items if s.first.api_name is not None and s.first.api_name in s.gold)
    return hits / len(items)


def hallucination(items: Sequence[ScoredInstruction], corpus: frozenset[str] | set[str]) -> float:
    _require(items)
    fabricated = sum(1 for s in items if s.first.api_name is None or s.first.api_name not in corpus)
    return fabricated / len(items)


def format_accuracy(items: Sequence[ScoredInstruction]) -> float:
    _require(items)
    return sum(1 for s in items if s.first.format_ok) / len(items)


def _recall_fraction(item: ScoredInstruction, k: int | None = None) -> Fraction:
    samples = item.samples if k is None else item.samples[:k]
    gold = set(item.gold)
    found = {p.api_name for p in samples if p.api_name is not None} & gold
    return Fraction(len(found), len(gold))


def instruction_recall(item: ScoredInstruction, k: int | None = None) -> float:
    return float(_recall_fraction(item, k))


def recall_at_k(items: Sequence[ScoredInstruction]) -> float:
    """Mean share of each gold list recovered by the union of all samples.

    Summed exactly and rounded once, so the result does not depend on order.
    """
    _require(items)
    ks = {len(s.samples) for s in items}
    if len(ks) != 1:
        raise ValueError(f"ragged sample counts {sorted(ks)}")
    return float(sum((_recall_fraction(s) for s in items), Fraction(0)) / len(items))


def _scores(items: Sequence[ScoredInstruction], corpus, with_recall: bool) -> Scores:
    if not items:
        return Scores(n=0)
    return Scores(
        n=len(items),
        acc=accuracy(items),
        hallu=hallucination(items, corpus),
        format_acc=format_accuracy(items),
        recall=recall_at_k(items) if with_recall else None,
    )


def report(
    items: Sequence[ScoredInstruction],
    partitions: Mapping[SubsetKey, Sequence[Instruction]],
    corpus: frozenset[str] | set[str],
    k: int,
    manifest: dict[str, Any] | None = None,
) -> MetricsReport:
    with_recall = k > 1
    by_id = {s.instruction_id: s for s in items}
    subsets = {}
    for key, members in partitions.items():
        subset_items = [by_id[i.id] for i in members if i.id in by_id]
        subsets[key] = _scores(subset_items, corpus, with_recall)
    return MetricsReport(overall=_scores(items, corpus, with_recall), subsets=subsets, manifest=dict(manifest or {}))


# --------------------------------------------------------------------------
# Rendering


def pct(rate: float | None) -> str:
    """Format a rate as a percentage with two decimals, rounding half up."""
    if rate is None:
        return "-"
    value = Decimal(repr(rate)) * 100
    return str(value.quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


_ROMAN = {1: "I", 2: "II", 3: "III", 4: "IV", 5: "V"}
_VALUE_LABELS = {
    **{label: f"{_ROMAN[i]} ({label.capitalize()})" for i, label in AMBIGUITY_KINDS.items()},
    "with": "With ambiguity",
    "without_nontext": "Without ambiguity (non-text)",
    "one_to_one": "One-to-one",
    "one_to_many": "One-to-many",
    "text": "Text",
    "image": "Image",
    "audio": "Audio",
    "video": "Video",
}
_AXIS_TITLES = {
    "ambiguity_kind": "Ambiguity types",
    "with_without_ambiguity": "With / without ambiguity",
    "option_cardinality": "API options",
    "modality": "Input modality",
}


def _columns(with_recall: bool) -> list[str]:
    cols = ["Acc", "Hallu", "Format Acc"]
    return cols + ["Recall"] if with_recall else cols


def _row(label: str, s: Scores, with_recall: bool, with_n: bool = False) -> str:
    cells = [label] + ([str(s.n)] if with_n else [])
    cells += [pct(s.acc), pct(s.hallu), pct(s.format_acc)]
    if with_recall:
        cells.append(pct(s.recall))
    return "| " + " | ".join(cells) + " |"


def _table(head: list[str], rows: list[str]) -> list[str]:
    return ["| " + " | ".join(head) + " |", "|" + "|".join("---" for _ in head) + "|", *rows]


def render_markdown(rep: MetricsReport, label: str | None = None) -> str:
    with_recall = rep.overall.recall is not None
    label = label or rep.manifest.get("label") or rep.manifest.get("backend") or "run"
    lines = ["## Overall", ""]
    lines += _table(["Model", *_columns(with_recall)], [_row(label, rep.overall, with_recall)])
    for axis, values in SUBSET_AXES.items():
        keys = [SubsetKey(axis, v) for v in values if SubsetKey(axis, v) in rep.subsets]
        if not keys:
            continue
        lines += ["", f"## {_AXIS_TITLES[axis]}", ""]
        rows = [_row(_VALUE_LABELS.get(k.value, k.value), rep.subsets[k], with_recall, with_n=True) for k in keys]
        lines += _table(["Subset", "n", *_columns(with_recall)], rows)
    lines += ["", FOOTER]
    return "\n".join(lines) + "\n"


def render_machine(rep: MetricsReport) -> str:
    return json.dumps(rep.to_dict(), indent=2, ensure_ascii=False) + "\n"


def render_report(rep: MetricsReport, style: str = "markdown", label: str | None = None) -> str:
    if style == "markdown":
        return render_markdown(rep, label)
    if style == "machine":
        return render_machine(rep)
    raise ValueError(f"unknown report style {style!r}")


def load_report(path: str | Path) -> MetricsReport:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        return MetricsReport.from_dict(doc)
    except (json.JSONDecodeError, KeyError, TypeError, AttributeError) as exc:
        raise ValidationError(f"{path}: not a machine report ({exc})") from None
