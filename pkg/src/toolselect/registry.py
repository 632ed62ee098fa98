"""Model-card registry: loading, validation, filtering and the selectable corpus.

A registry is built once from the filtered card list and is read-only
afterwards, so it can be shared freely between worker threads.
"""

from __future__ import annotations

import hashlib
import json
import re
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from types import MappingProxyType
from typing import Any, Iterable, Mapping

from ._jsonl import SCHEMA_VERSION, check_version, iter_records, write_records
from .errors import Issue, ValidationError

UNKNOWN = "Unknown"

MODALITIES = ("text", "image", "audio", "video")
NON_TEXT_MODALITIES = MODALITIES[1:]

CARD_FLAGS = frozenset({"nsfw_risk", "restrictive_license", "low_quality"})

CARD_FIELDS = (
    "api_name",
    "domain",
    "api_call",
    "parameters",
    "example_code",
    "description",
    "coarse_functionality",
    "fine_functionality",
    "input_modalities",
    "downloads",
    "flags",
)

GroupKey = tuple[str, str]


class RejectReason(str, Enum):
    LOW_QUALITY_CARD = "low_quality_card"
    NSFW_RISK = "nsfw_risk"
    LICENSE_RESTRICTION = "license_restriction"
    IDENTICAL_DUPLICATE = "identical_duplicate"
    FUNCTIONALITY_OVERFLOW = "functionality_overflow"


# Flag-driven rejections, in priority order when a card carries several.
_FLAG_REASONS = (
    ("low_quality", RejectReason.LOW_QUALITY_CARD),
    ("nsfw_risk", RejectReason.NSFW_RISK),
    ("restrictive_license", RejectReason.LICENSE_RESTRICTION),
)


@dataclass(frozen=True)
class Parameter:
    name: str
    description: str


@dataclass(frozen=True)
class ModelCard:
    api_name: str
    domain: str
    api_call: str
    parameters: tuple[Parameter, ...]
    example_code: str
    description: str
    coarse_functionality: str
    fine_functionality: str
    input_modalities: frozenset[str]
    downloads: int
    flags: frozenset[str] = frozenset()

    def to_record(self) -> dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "api_name": self.api_name,
            "domain": self.domain,
            "api_call": self.api_call,
            "parameters": [{"name": p.name, "description": p.description} for p in self.parameters],
            "example_code": self.example_code,
            "description": self.description,
            "coarse_functionality": self.coarse_functionality,
            "fine_functionality": self.fine_functionality,
            "input_modalities": [m for m in MODALITIES if m in self.input_modalities],
            "downloads": self.downloads,
            "flags": sorted(self.flags),
        }


@dataclass(frozen=True)
class Taxonomy:
    """Two-level task tree: coarse task -> fine subtask -> exemplar API names."""

    tree: Mapping[str, Mapping[str, tuple[str, ...]]]

    def __post_init__(self) -> None:
        parent: dict[str, str] = {}
        for task, subtasks in self.tree.items():
            if not task:
                raise ValidationError("taxonomy: empty task label")
            for sub, exemplars in subtasks.items():
                if not sub:
                    raise ValidationError(f"taxonomy: empty subtask label under {task!r}")
                if sub in parent:
                    raise ValidationError(
                        f"taxonomy: subtask {sub!r} listed under both {parent[sub]!r} and {task!r}"
                    )
                if not exemplars:
                    raise ValidationError(f"taxonomy: subtask {sub!r} lists no exemplar API")
                parent[sub] = task
        object.__setattr__(self, "_parent", MappingProxyType(parent))

    @classmethod
    def from_mapping(cls, data: Mapping[str, Mapping[str, Iterable[str]]]) -> "Taxonomy":
        if not isinstance(data, Mapping):
            raise ValidationError("taxonomy: top level must be an object")
        tree: dict[str, MappingProxyType] = {}
        for task, subtasks in data.items():
            if not isinstance(subtasks, Mapping):
                raise ValidationError(f"taxonomy: task {task!r} must map to an object")
            subs = {}
            for sub, exemplars in subtasks.items():
                if isinstance(exemplars, str) or not all(isinstance(e, str) for e in exemplars):
                    raise ValidationError(f"taxonomy: exemplars of {sub!r} must be a list of names")
                subs[sub] = tuple(exemplars)
            tree[task] = MappingProxyType(subs)
        return cls(MappingProxyType(tree))

    def parent_of(self, subtask: str) -> str | None:
        return self._parent.get(subtask)  # type: ignore[attr-defined]

    def has_pair(self, coarse: str, fine: str) -> bool:
        return self.parent_of(fine) == coarse

    @property
    def tasks(self) -> list[str]:
        return list(self.tree)

    def subtasks(self, task: str) -> list[str]:
        return list(self.tree[task])


@dataclass(frozen=True)
class FilterPolicy:
    max_per_functionality: int = 5
    reject_flags: frozenset[str] = CARD_FLAGS
    dedupe_identical: bool = True

    def __post_init__(self) -> None:
        if self.max_per_functionality < 1:
            raise ValueError("max_per_functionality must be >= 1")
        unknown = set(self.reject_flags) - CARD_FLAGS
        if unknown:
            raise ValueError(f"unknown reject flags: {sorted(unknown)}")


@dataclass
class FilterOutcome:
    kept: list[ModelCard]
    rejected: list[tuple[ModelCard, RejectReason]]

    def reason_counts(self) -> dict[str, int]:
        counts = Counter(reason.value for _, reason in self.rejected)
        return {r.value: counts.get(r.value, 0) for r in RejectReason}


@dataclass(frozen=True)
class Registry:
    cards: Mapping[str, ModelCard]
    taxonomy: Taxonomy
    corpus: frozenset[str]
    groups: Mapping[GroupKey, tuple[str, ...]] = field(repr=False)

    def __contains__(self, api_name: object) -> bool:
        return api_name in self.corpus

    def __len__(self) -> int:
        return len(self.cards)

    def get(self, api_name: str) -> ModelCard | None:
        return self.cards.get(api_name)

    def group_members(self, key: GroupKey) -> tuple[str, ...]:
        return self.groups.get(key, ())

    def load_order(self) -> dict[str, int]:
        return {name: i for i, name in enumerate(self.cards)}


# --------------------------------------------------------------------------
# Taxonomy I/O


def _no_duplicate_keys(pairs: list[tuple[str, Any]]) -> dict[str, Any]:
    seen: dict[str, Any] = {}
    for key, value in pairs:
        if key in seen:
            raise ValidationError(f"taxonomy: duplicate label {key!r}")
        seen[key] = value
    return seen


def load_taxonomy(path: str | Path) -> Taxonomy:
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(text, object_pairs_hook=_no_duplicate_keys)
    except json.JSONDecodeError as exc:
        raise ValidationError([Issue(str(path), exc.lineno, f"invalid JSON: {exc.msg}")]) from None
    return Taxonomy.from_mapping(data)


def default_taxonomy() -> Taxonomy:
    """The bundled two-level task taxonomy with one exemplar API per subtask."""
    text = resources.files("toolselect").joinpath("data/taxonomy.json").read_text(encoding="utf-8")
    return Taxonomy.from_mapping(json.loads(text, object_pairs_hook=_no_duplicate_keys))


# --------------------------------------------------------------------------
# Card I/O


def _blank(value: str) -> bool:
    return not value.strip()


def _card_issues(rec: dict[str, Any], source: str, line: int) -> tuple[ModelCard | None, list[Issue]]:
    issues: list[Issue] = []

    def bad(fieldname: str, why: str) -> None:
        issues.append(Issue(source, line, f"record {line}: field {fieldname!r} {why}"))

    version_issue = check_version(rec, source, line)
    if version_issue:
        issues.append(version_issue)
    unknown = sorted(set(rec) - set(CARD_FIELDS) - {"schema_version"})
    for name in unknown:
        bad(name, "is not a model-card field")
    for name in CARD_FIELDS:
        if name not in rec:
            bad(name, "is missing")
    if issues:
        return None, issues

    for name in ("api_name", "domain", "api_call", "example_code", "description",
                 "coarse_functionality", "fine_functionality"):
        if not isinstance(rec[name], str):
            bad(name, "must be a string")
    if isinstance(rec["api_name"], str) and _blank(rec["api_name"]):
        bad("api_name", "must be non-empty")
    elif rec["api_name"] == UNKNOWN:
        bad("api_name", f"{UNKNOWN!r} is reserved")

    params = rec["parameters"]
    parsed_params: list[Parameter] = []
    if not isinstance(params, list):
        bad("parameters", "must be a list")
    else:
        for i, p in enumerate(params):
            if (not isinstance(p, dict) or set(p) != {"name", "description"}
                    or not all(isinstance(v, str) for v in p.values())):
                bad("parameters", f"entry {i} must be {{name, description}} strings")
            else:
                parsed_params.append(Parameter(p["name"], p["description"]))

    mods = rec["input_modalities"]
    if not isinstance(mods, list) or not all(isinstance(m, str) for m in mods):
        bad("input_modalities", "must be a list of strings")
    elif set(mods) - set(MODALITIES):
        bad("input_modalities", f"has unknown modality {sorted(set(mods) - set(MODALITIES))}")
    elif "text" not in mods:
        bad("input_modalities", "must contain 'text'")

    downloads = rec["downloads"]
    if isinstance(downloads, bool) or not isinstance(downloads, int) or downloads < 0:
        bad("downloads", "must be a non-negative integer")

    flags = rec["flags"]
    if not isinstance(flags, list) or not all(isinstance(f, str) for f in flags):
        bad("flags", "must be a list of strings")
    elif set(flags) - CARD_FLAGS:
        bad("flags", f"has unknown flag {sorted(set(flags) - CARD_FLAGS)}")

    if issues:
        return None, issues

    flag_set = set(flags)
    if _blank(rec["description"]) or _blank(rec["example_code"]) or _blank(rec["api_call"]):
        flag_set.add("low_quality")

    card = ModelCard(
        api_name=rec["api_name"],
        domain=rec["domain"],
        api_call=rec["api_call"],
        parameters=tuple(parsed_params),
        example_code=rec["example_code"],
        description=rec["description"],
        coarse_functionality=rec["coarse_functionality"],
        fine_functionality=rec["fine_functionality"],
        input_modalities=frozenset(mods),
        downloads=downloads,
        flags=frozenset(flag_set),
    )
    return card, []


def load_cards(path: str | Path, taxonomy: Taxonomy | None = None) -> list[ModelCard]:
    """Read a line-delimited model-card file.

    Every violation in the file is collected before raising, so one
    :class:`ValidationError` lists them all. Cards missing a description,
    example code or API call get the ``low_quality`` flag added on ingest.

    Args:
        path: UTF-8 file, one JSON card per line with ``schema_version: 1``.
        taxonomy: When given, each card's functionality pair must exist in it.

    Returns:
        Cards in file order.
    """
    source = str(path)
    cards: list[ModelCard] = []
    issues: list[Issue] = []
    first_seen: dict[str, int] = {}
    for line, rec, issue in iter_records(path):
        if issue:
            issues.append(issue)
            continue
        card, card_issues = _card_issues(rec, source, line)
        issues.extend(card_issues)
        if card is None:
            continue
        if card.api_name in first_seen:
            issues.append(Issue(source, line, (
                f"duplicate api_name {card.api_name!r} at records {first_seen[card.api_name]} and {line}"
            )))
            continue
        first_seen[card.api_name] = line
        if taxonomy is not None and not taxonomy.has_pair(card.coarse_functionality, card.fine_functionality):
            issues.append(Issue(source, line, _taxonomy_message(card, taxonomy)))
            continue
        cards.append(card)
    if issues:
        raise ValidationError(issues)
    return cards


def _taxonomy_message(card: ModelCard, taxonomy: Taxonomy) -> str:
    parent = taxonomy.parent_of(card.fine_functionality)
    if parent is None:
        return (f"{card.api_name}: fine_functionality {card.fine_functionality!r} "
                f"is not in the taxonomy")
    return (f"{card.api_name}: fine_functionality {card.fine_functionality!r} belongs to "
            f"{parent!r}, not {card.coarse_functionality!r}")


def save_cards(path: str | Path, cards: Iterable[ModelCard]) -> int:
    return write_records(path, (c.to_record() for c in cards))


# --------------------------------------------------------------------------
# Filtering and registry build


def functionality_group(card: ModelCard) -> GroupKey:
    return (card.coarse_functionality, card.fine_functionality)


def _description_digest(text: str) -> str:
    normalized = re.sub(r"\s+", " ", text).strip().lower()
    return hashlib.sha256(normalized.encode("utf-8")).hexdigest()


def _rank(card: ModelCard) -> tuple[int, str]:
    return (-card.downloads, card.api_name)


def apply_filters(cards: list[ModelCard], policy: FilterPolicy | None = None) -> FilterOutcome:
    """Apply the curation rules in order: flags, identical-duplicate, group cap.

    Within a functionality group, identical cards (same normalized
    description) keep only the most downloaded copy, then at most
    ``policy.max_per_functionality`` survivors are kept by downloads.
    Download ties go to the lexicographically smaller ``api_name``.
    Kept cards stay in input order.
    """
    policy = policy or FilterPolicy()
    reasons: dict[str, RejectReason] = {}

    for card in cards:
        for flag, reason in _FLAG_REASONS:
            if flag in card.flags and flag in policy.reject_flags:
                reasons[card.api_name] = reason
                break

    groups: dict[GroupKey, list[ModelCard]] = {}
    for card in cards:
        if card.api_name not in reasons:
            groups.setdefault(functionality_group(card), []).append(card)

    for members in groups.values():
        survivors = members
        if policy.dedupe_identical:
            best: dict[str, ModelCard] = {}
            for card in members:
                digest = _description_digest(card.description)
                if digest not in best or _rank(card) < _rank(best[digest]):
                    best[digest] = card
            winners = {c.api_name for c in best.values()}
            for card in members:
                if card.api_name not in winners:
                    reasons[card.api_name] = RejectReason.IDENTICAL_DUPLICATE
            survivors = [c for c in members if c.api_name in winners]
        for card in sorted(survivors, key=_rank)[policy.max_per_functionality:]:
            reasons[card.api_name] = RejectReason.FUNCTIONALITY_OVERFLOW

    kept = [c for c in cards if c.api_name not in reasons]
    rejected = [(c, reasons[c.api_name]) for c in cards if c.api_name in reasons]
    return FilterOutcome(kept=kept, rejected=rejected)


def build_registry(kept: list[ModelCard], taxonomy: Taxonomy) -> Registry:
    issues: list[Issue] = []
    cards: dict[str, ModelCard] = {}
    groups: dict[GroupKey, list[str]] = {}
    for i, card in enumerate(kept):
        if card.api_name in cards or card.api_name == UNKNOWN:
            issues.append(Issue("<registry>", i + 1, f"duplicate or reserved api_name {card.api_name!r}"))
            continue
        if not taxonomy.has_pair(card.coarse_functionality, card.fine_functionality):
            issues.append(Issue("<registry>", i + 1, _taxonomy_message(card, taxonomy)))
            continue
        cards[card.api_name] = card
        groups.setdefault(functionality_group(card), []).append(card.api_name)
    if issues:
        raise ValidationError(issues)
    return Registry(
        cards=MappingProxyType(cards),
        taxonomy=taxonomy,
        corpus=frozenset(cards) | {UNKNOWN},
        groups=MappingProxyType({k: tuple(v) for k, v in groups.items()}),
    )


def modality_census(registry: Registry) -> dict[str, int]:
    """Count APIs that take text only, and APIs incorporating each non-text modality."""
    census = {"text": 0, **{m: 0 for m in NON_TEXT_MODALITIES}}
    for card in registry.cards.values():
        extra = [m for m in NON_TEXT_MODALITIES if m in card.input_modalities]
        if not extra:
            census["text"] += 1
        for m in extra:
            census[m] += 1
    return census
