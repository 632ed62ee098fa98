"""Benchmark instructions: loading, gold resolution, splitting and subsets."""

from __future__ import annotations

import math
import random
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import Any, Iterable

from ._jsonl import SCHEMA_VERSION, check_version, iter_records, write_records
from .errors import CoverageError, Issue, ValidationError
from .registry import NON_TEXT_MODALITIES, UNKNOWN, GroupKey, Registry

AMBIGUITY_KINDS = {1: "domains", 2: "categories", 3: "quality", 4: "conditions", 5: "others"}

INSTRUCTION_FIELDS = frozenset({
    "schema_version", "id", "text", "attachments", "ambiguous", "ambiguity_kind", "gold", "origin_api",
})


class Specificity(str, Enum):
    STRICT = "strict"
    BROAD = "broad"


@dataclass(frozen=True)
class Attachment:
    modality: str
    uri: str

    def __post_init__(self) -> None:
        if self.modality not in NON_TEXT_MODALITIES:
            raise ValueError(f"attachment modality must be one of {NON_TEXT_MODALITIES}, got {self.modality!r}")
        if not self.uri:
            raise ValueError("attachment uri must be non-empty")


@dataclass(frozen=True)
class AmbiguityTag:
    ambiguous: bool = False
    kind: int | None = None

    def __post_init__(self) -> None:
        if self.ambiguous and self.kind not in AMBIGUITY_KINDS:
            raise ValueError("ambiguous instruction needs ambiguity_kind in 1..5")
        if not self.ambiguous and self.kind is not None:
            raise ValueError("ambiguity_kind given for an unambiguous instruction")

    @property
    def label(self) -> str | None:
        return AMBIGUITY_KINDS.get(self.kind) if self.kind else None


@dataclass(frozen=True)
class GoldSpec:
    """Either an explicit API list or a reference to a functionality group.

    For ``strict`` group references, ``strict_members`` carries the
    annotated subset of the group that satisfies the query.
    """

    explicit_apis: tuple[str, ...] | None = None
    group: GroupKey | None = None
    specificity: Specificity | None = None
    strict_members: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if (self.explicit_apis is None) == (self.group is None):
            raise ValueError("gold needs exactly one of explicit apis or a group reference")
        if self.explicit_apis is not None and not self.explicit_apis:
            raise ValueError("explicit gold list is empty")
        if self.group is not None:
            if self.specificity is None:
                raise ValueError("group gold needs a specificity")
            if self.specificity is Specificity.STRICT and not self.strict_members:
                raise ValueError("strict group gold needs strict_members")

    def to_record(self) -> dict[str, Any]:
        if self.explicit_apis is not None:
            return {"apis": list(self.explicit_apis)}
        group: dict[str, Any] = {
            "coarse": self.group[0],
            "fine": self.group[1],
            "specificity": self.specificity.value,
        }
        if self.strict_members:
            group["strict_members"] = list(self.strict_members)
        return {"group": group}


@dataclass(frozen=True)
class Instruction:
    id: str
    text: str
    attachments: tuple[Attachment, ...]
    ambiguity: AmbiguityTag
    gold: GoldSpec
    origin_api: str

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("instruction id must be non-empty")
        if not self.text.strip():
            raise ValueError("instruction text must be non-empty")
        if len(self.attachments) > 1:
            raise ValueError("at most one attachment per instruction")
        if not self.attachments and self.ambiguity.ambiguous:
            raise ValueError("text-only instruction cannot be ambiguous")

    @property
    def modality(self) -> str:
        return self.attachments[0].modality if self.attachments else "text"

    def to_record(self) -> dict[str, Any]:
        rec: dict[str, Any] = {
            "schema_version": SCHEMA_VERSION,
            "id": self.id,
            "text": self.text,
            "attachments": [{"modality": a.modality, "uri": a.uri} for a in self.attachments],
            "ambiguous": self.ambiguity.ambiguous,
        }
        if self.ambiguity.kind is not None:
            rec["ambiguity_kind"] = self.ambiguity.kind
        rec["gold"] = self.gold.to_record()
        rec["origin_api"] = self.origin_api
        return rec


@dataclass
class SplitResult:
    train_expanded: list[tuple[Instruction, str]]
    test: list[Instruction]
    seed: int
    ratio: float
    # (api, instruction id) for each test query moved to train to cover an api
    promoted: list[tuple[str, str]] = field(default_factory=list)

    @property
    def train_queries(self) -> list[Instruction]:
        seen: dict[str, Instruction] = {}
        for instr, _ in self.train_expanded:
            seen.setdefault(instr.id, instr)
        return list(seen.values())


@dataclass(frozen=True, order=True)
class SubsetKey:
    axis: str
    value: str

    def __str__(self) -> str:
        return f"{self.axis}={self.value}"


SUBSET_AXES: dict[str, tuple[str, ...]] = {
    "ambiguity_kind": tuple(AMBIGUITY_KINDS.values()),
    "with_without_ambiguity": ("with", "without_nontext"),
    "option_cardinality": ("one_to_one", "one_to_many"),
    "modality": ("text",) + NON_TEXT_MODALITIES,
}


# --------------------------------------------------------------------------
# Loading


def _parse_gold(raw: Any) -> GoldSpec:
    if not isinstance(raw, dict) or len(raw) != 1 or not ({"apis", "group"} & set(raw)):
        raise ValueError("gold must be {apis: [...]} or {group: {...}}")
    if "apis" in raw:
        apis = raw["apis"]
        if not isinstance(apis, list) or not all(isinstance(a, str) and a for a in apis):
            raise ValueError("gold.apis must be a list of non-empty names")
        return GoldSpec(explicit_apis=tuple(apis))
    group = raw["group"]
    if not isinstance(group, dict):
        raise ValueError("gold.group must be an object")
    extra = set(group) - {"coarse", "fine", "specificity", "strict_members"}
    if extra:
        raise ValueError(f"gold.group has unknown fields {sorted(extra)}")
    try:
        specificity = Specificity(group.get("specificity"))
    except ValueError:
        raise ValueError("gold.group.specificity must be 'strict' or 'broad'") from None
    members = group.get("strict_members", [])
    if not isinstance(members, list) or not all(isinstance(m, str) for m in members):
        raise ValueError("gold.group.strict_members must be a list of names")
    coarse, fine = group.get("coarse"), group.get("fine")
    if not isinstance(coarse, str) or not isinstance(fine, str):
        raise ValueError("gold.group needs string coarse and fine labels")
    return GoldSpec(group=(coarse, fine), specificity=specificity, strict_members=tuple(members))


def instruction_from_record(rec: dict[str, Any]) -> Instruction:
    """Build an :class:`Instruction`; raises ``ValueError`` naming the problem."""
    extra = set(rec) - INSTRUCTION_FIELDS - {"gold_single"}
    if extra:
        raise ValueError(f"unknown fields {sorted(extra)}")
    for name in ("id", "text", "origin_api"):
        if not isinstance(rec.get(name), str):
            raise ValueError(f"field {name!r} must be a string")
    atts = rec.get("attachments", [])
    if not isinstance(atts, list):
        raise ValueError("field 'attachments' must be a list")
    attachments = []
    for a in atts:
        if not isinstance(a, dict) or set(a) != {"modality", "uri"}:
            raise ValueError("attachment must be {modality, uri}")
        attachments.append(Attachment(a["modality"], a["uri"]))
    ambiguous = rec.get("ambiguous")
    if not isinstance(ambiguous, bool):
        raise ValueError("field 'ambiguous' must be a boolean")
    kind = rec.get("ambiguity_kind")
    if kind is not None and (isinstance(kind, bool) or not isinstance(kind, int)):
        raise ValueError("field 'ambiguity_kind' must be an integer 1..5")
    return Instruction(
        id=rec["id"],
        text=rec["text"],
        attachments=tuple(attachments),
        ambiguity=AmbiguityTag(ambiguous, kind),
        gold=_parse_gold(rec.get("gold")),
        origin_api=rec["origin_api"],
    )


def load_instructions(path: str | Path, registry: Registry | None = None) -> list[Instruction]:
    """Read an instruction file, collecting every violation before raising.

    With a registry, each record's gold must also resolve into the corpus.
    """
    source = str(path)
    out: list[Instruction] = []
    issues: list[Issue] = []
    first_seen: dict[str, int] = {}
    for line, rec, issue in iter_records(path):
        if issue:
            issues.append(issue)
            continue
        version_issue = check_version(rec, source, line)
        if version_issue:
            issues.append(version_issue)
            continue
        try:
            instr = instruction_from_record(rec)
        except ValueError as exc:
            issues.append(Issue(source, line, f"record {line}: {exc}"))
            continue
        if instr.id in first_seen:
            issues.append(Issue(source, line, f"duplicate id {instr.id!r} at records {first_seen[instr.id]} and {line}"))
            continue
        first_seen[instr.id] = line
        if registry is not None:
            try:
                resolve_gold(instr, registry)
            except ValidationError as exc:
                issues.append(Issue(source, line, f"record {line}: {exc.issues[0].message}"))
                continue
        out.append(instr)
    if issues:
        raise ValidationError(issues)
    return out


def save_instructions(path: str | Path, instrs: Iterable[Instruction]) -> int:
    return write_records(path, (i.to_record() for i in instrs))


# --------------------------------------------------------------------------
# Gold resolution


def resolve_gold(instr: Instruction, registry: Registry) -> list[str]:
    """Resolve an instruction's gold spec to its list of acceptable APIs.

    Explicit lists pass through in the given order (deduplicated). Group
    references expand to registry members in load order: every member for
    ``broad``, only the annotated members for ``strict``.
    """
    gold = instr.gold

    def fail(msg: str) -> ValidationError:
        return ValidationError([Issue(instr.id, None, msg)])

    if gold.explicit_apis is not None:
        names = list(dict.fromkeys(gold.explicit_apis))
    else:
        members = registry.group_members(gold.group)
        if gold.specificity is Specificity.BROAD:
            names = list(members)
        else:
            outside = [m for m in gold.strict_members if m not in members]
            if outside:
                raise fail(f"strict members {outside} are not in group {gold.group}")
            wanted = set(gold.strict_members)
            names = [m for m in members if m in wanted]
    if not names:
        raise fail("gold resolves to an empty API list")
    missing = [n for n in names if n not in registry.corpus]
    if missing:
        raise fail(f"gold names outside the corpus: {missing}")
    if UNKNOWN in names and len(names) > 1:
        raise fail(f"{UNKNOWN!r} may only appear alone in a gold list")
    return names


# --------------------------------------------------------------------------
# Split


def _train_count(m: int, ratio: Fraction) -> int:
    return math.ceil(ratio * m)


def split_dataset(instrs: list[Instruction], ratio: float, seed: int, registry: Registry) -> SplitResult:
    """Per-origin-API train/test split with one-to-many expansion in train.

    Each origin API's queries are shuffled by a generator seeded from
    ``(seed, api)`` and the first ``ceil(ratio * m)`` go to train. Train
    queries contribute one pair per gold API. Any API that then appears in a
    test gold list but in no train pair is covered by promoting the
    smallest-id test query that names it.

    Raises:
        CoverageError: an API still has no train pair after promotion.
    """
    if not 0 < ratio < 1:
        raise ValueError("ratio must be strictly between 0 and 1")
    exact_ratio = Fraction(str(ratio))
    gold = {i.id: resolve_gold(i, registry) for i in instrs}

    by_origin: dict[str, list[Instruction]] = {}
    for instr in sorted(instrs, key=lambda i: i.id):
        by_origin.setdefault(instr.origin_api, []).append(instr)

    train: dict[str, Instruction] = {}
    test: dict[str, Instruction] = {}
    for api in sorted(by_origin):
        queries = list(by_origin[api])
        random.Random(f"{seed}:{api}").shuffle(queries)
        k = _train_count(len(queries), exact_ratio)
        train.update((q.id, q) for q in queries[:k])
        test.update((q.id, q) for q in queries[k:])

    covered = Counter(api for qid in train for api in gold[qid])
    promoted: list[tuple[str, str]] = []
    while True:
        uncovered = sorted({a for qid in test for a in gold[qid]} - set(covered))
        if not uncovered:
            break
        api = uncovered[0]
        candidates = sorted(qid for qid in test if api in gold[qid])
        if not candidates:
            raise CoverageError([api])
        qid = candidates[0]
        train[qid] = test.pop(qid)
        covered.update(gold[qid])
        promoted.append((api, qid))

    expanded = [(train[qid], api) for qid in sorted(train) for api in gold[qid]]
    return SplitResult(
        train_expanded=expanded,
        test=[test[qid] for qid in sorted(test)],
        seed=seed,
        ratio=ratio,
        promoted=promoted,
    )


def write_split(result: SplitResult, out_dir: str | Path) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    train_path = out_dir / "train_expanded.jsonl"
    test_path = out_dir / "test.jsonl"
    write_records(train_path, ({**instr.to_record(), "gold_single": api} for instr, api in result.train_expanded))
    write_records(test_path, (i.to_record() for i in result.test))
    return train_path, test_path


def split_summary(result: SplitResult) -> dict[str, dict[str, int]]:
    """Per-modality counts: expanded train pairs, distinct train queries, test queries."""
    rows = {m: {"train_expanded": 0, "train_distinct": 0, "test": 0} for m in SUBSET_AXES["modality"]}
    for instr, _ in result.train_expanded:
        rows[instr.modality]["train_expanded"] += 1
    for instr in result.train_queries:
        rows[instr.modality]["train_distinct"] += 1
    for instr in result.test:
        rows[instr.modality]["test"] += 1
    return rows


# --------------------------------------------------------------------------
# Subsets


def partition_subsets(test: list[Instruction], registry: Registry) -> dict[SubsetKey, list[Instruction]]:
    """Group test instructions along every subset axis.

    Every key of every axis is present, possibly with an empty list. The
    with/without-ambiguity axis leaves out text-only instructions, which
    carry no multimodal ambiguity.
    """
    parts: dict[SubsetKey, list[Instruction]] = {
        SubsetKey(axis, value): [] for axis, values in SUBSET_AXES.items() for value in values
    }
    for instr in test:
        tag = instr.ambiguity
        if tag.ambiguous:
            parts[SubsetKey("ambiguity_kind", tag.label)].append(instr)
            parts[SubsetKey("with_without_ambiguity", "with")].append(instr)
        elif instr.attachments:
            parts[SubsetKey("with_without_ambiguity", "without_nontext")].append(instr)
        n_gold = len(resolve_gold(instr, registry))
        parts[SubsetKey("option_cardinality", "one_to_one" if n_gold == 1 else "one_to_many")].append(instr)
        parts[SubsetKey("modality", instr.modality)].append(instr)
    return parts
