import json
import math
import random

import pytest

from factories import make_card, make_instr, random_dataset, registry_for
from toolselect.dataset import (
    GoldSpec,
    Specificity,
    SubsetKey,
    load_instructions,
    partition_subsets,
    resolve_gold,
    save_instructions,
    split_dataset,
    split_summary,
    write_split,
)
from toolselect.errors import ValidationError
from toolselect.registry import UNKNOWN

GROUP = ("Text-to-Image", "Text to Specific Style Image")


@pytest.fixture
def style_registry():
    cards = [make_card(f"style/m{i}", coarse=GROUP[0], fine=GROUP[1], downloads=100 - i) for i in range(5)]
    cards.append(make_card("other/x", fine="Other"))
    return registry_for(cards)


def _record(**over):
    rec = {"schema_version": 1, "id": "q1", "text": "Describe this clip", "attachments": [],
           "ambiguous": False, "gold": {"apis": ["other/x"]}, "origin_api": "other/x"}
    rec.update(over)
    return rec


def _write(path, records):
    path.write_text("".join(json.dumps(r) + "\n" for r in records))
    return path


def test_load_three_records(tmp_path, style_registry):
    path = _write(tmp_path / "i.jsonl", [_record(id=f"q{i}") for i in range(3)])
    assert [i.id for i in load_instructions(path, style_registry)] == ["q0", "q1", "q2"]


def test_ambiguous_needs_kind(tmp_path):
    path = _write(tmp_path / "i.jsonl", [_record(attachments=[{"modality": "image", "uri": "a.png"}],
                                                 ambiguous=True)])
    with pytest.raises(ValidationError, match="ambiguity_kind"):
        load_instructions(path)


def test_video_conditions_accepted(tmp_path):
    path = _write(tmp_path / "i.jsonl", [_record(attachments=[{"modality": "video", "uri": "v.mp4"}],
                                                 ambiguous=True, ambiguity_kind=4)])
    (instr,) = load_instructions(path)
    assert instr.modality == "video"
    assert instr.ambiguity.label == "conditions"


@pytest.mark.parametrize("over, needle", [
    ({"ambiguous": True, "ambiguity_kind": 1}, "text-only"),
    ({"attachments": [{"modality": "image", "uri": "a"}, {"modality": "audio", "uri": "b"}]}, "at most one"),
    ({"attachments": [{"modality": "image", "uri": ""}]}, "uri"),
    ({"attachments": [{"modality": "smell", "uri": "x"}]}, "modality"),
    ({"text": "  "}, "text"),
    ({"schema_version": 7}, "schema_version"),
    ({"bogus": 1}, "unknown fields"),
    ({"gold": {"apis": []}}, "empty"),
])
def test_structural_errors(tmp_path, over, needle):
    path = _write(tmp_path / "i.jsonl", [_record(**over)])
    with pytest.raises(ValidationError, match=needle):
        load_instructions(path)


def test_gold_errors_need_registry(tmp_path, style_registry):
    path = _write(tmp_path / "i.jsonl", [
        _record(id="a", gold={"apis": ["nobody/here"]}),
        _record(id="b", gold={"apis": [UNKNOWN, "other/x"]}),
        _record(id="a"),
    ])
    with pytest.raises(ValidationError) as exc:
        load_instructions(path, style_registry)
    msgs = [i.message for i in exc.value.issues]
    assert len(msgs) == 3
    assert "outside the corpus" in msgs[0]
    assert "only appear alone" in msgs[1]
    assert "duplicate id" in msgs[2]


def test_roundtrip(tmp_path, style_registry):
    instrs = [
        make_instr("a", ["other/x"], modality="image", ambiguous=True, kind=2),
        make_instr("b", GoldSpec(group=GROUP, specificity=Specificity.STRICT, strict_members=("style/m2",)),
                   origin="style/m2"),
    ]
    save_instructions(tmp_path / "i.jsonl", instrs)
    assert load_instructions(tmp_path / "i.jsonl", style_registry) == instrs


# --------------------------------------------------------------------------
# Gold resolution


def test_broad_group_expands_to_all_members(style_registry):
    instr = make_instr("q", GoldSpec(group=GROUP, specificity=Specificity.BROAD), origin="style/m0")
    assert resolve_gold(instr, style_registry) == [f"style/m{i}" for i in range(5)]


def test_strict_group_keeps_annotated_subset(style_registry):
    spec = GoldSpec(group=GROUP, specificity=Specificity.STRICT, strict_members=("style/m3",))
    assert resolve_gold(make_instr("q", spec, origin="style/m3"), style_registry) == ["style/m3"]


def test_strict_order_follows_registry(style_registry):
    spec = GoldSpec(group=GROUP, specificity=Specificity.STRICT, strict_members=("style/m4", "style/m1"))
    assert resolve_gold(make_instr("q", spec, origin="style/m1"), style_registry) == ["style/m1", "style/m4"]


def test_strict_member_outside_group(style_registry):
    spec = GoldSpec(group=GROUP, specificity=Specificity.STRICT, strict_members=("other/x",))
    with pytest.raises(ValidationError, match="not in group"):
        resolve_gold(make_instr("q", spec, origin="other/x"), style_registry)


def test_explicit_unknown(style_registry):
    assert resolve_gold(make_instr("q", [UNKNOWN], origin=UNKNOWN), style_registry) == [UNKNOWN]


def test_empty_group_resolution(style_registry):
    spec = GoldSpec(group=("Nope", "Nothing"), specificity=Specificity.BROAD)
    with pytest.raises(ValidationError, match="empty"):
        resolve_gold(make_instr("q", spec, origin="x"), style_registry)


def test_broad_contains_strict(style_registry):
    rng = random.Random(1)
    names = [f"style/m{i}" for i in range(5)]
    broad = set(resolve_gold(make_instr("q", GoldSpec(group=GROUP, specificity=Specificity.BROAD)), style_registry))
    for _ in range(50):
        members = tuple(rng.sample(names, rng.randint(1, 5)))
        spec = GoldSpec(group=GROUP, specificity=Specificity.STRICT, strict_members=members)
        assert set(resolve_gold(make_instr("q", spec), style_registry)) <= broad


# --------------------------------------------------------------------------
# Split


def test_one_to_one_split_counts():
    reg = registry_for([make_card("a/one")])
    instrs = [make_instr(f"q{i}", ["a/one"]) for i in range(10)]
    for seed in range(5):
        res = split_dataset(instrs, 0.8, seed, reg)
        assert len(res.train_expanded) == 8 and len(res.test) == 2


def test_one_to_many_expansion_counts():
    # ceil(0.8 * 5) = 4 train queries, each expanded into its 3 gold APIs
    reg = registry_for([make_card(n) for n in ("a/1", "a/2", "a/3")])
    instrs = [make_instr(f"q{i}", ["a/1", "a/2", "a/3"], origin="a/1") for i in range(5)]
    res = split_dataset(instrs, 0.8, 0, reg)
    assert len(res.train_expanded) == 12
    assert len(res.train_queries) == 4
    assert len(res.test) == 1
    assert sorted(api for _, api in res.train_expanded) == sorted(["a/1", "a/2", "a/3"] * 4)


def test_coverage_repair_promotes_smallest_id():
    reg = registry_for([make_card("a/1"), make_card("b/rare")])
    instrs = [make_instr(f"q{i}", ["a/1"], origin="a/1") for i in range(4)]
    instrs += [make_instr("q8", ["a/1", "b/rare"], origin="a/1"), make_instr("q9", ["a/1", "b/rare"], origin="a/1")]
    for seed in range(40):
        res = split_dataset(instrs, 0.6, seed, reg)
        natural_test = {i.id for i in res.test} | {qid for _, qid in res.promoted}
        if {"q8", "q9"} <= natural_test:
            break
    else:
        pytest.fail("no seed placed both rare queries in test")
    assert res.promoted == [("b/rare", "q8")]
    assert "b/rare" in {api for _, api in res.train_expanded}
    assert [i.id for i in res.test] == ["q9"]


def test_split_is_independent_of_input_order():
    reg, instrs = random_dataset(random.Random(5))
    a = split_dataset(instrs, 0.8, 11, reg)
    b = split_dataset(list(reversed(instrs)), 0.8, 11, reg)
    assert [(i.id, api) for i, api in a.train_expanded] == [(i.id, api) for i, api in b.train_expanded]
    assert a.test == b.test


def test_different_seeds_change_assignment():
    reg = registry_for([make_card("a/one")])
    instrs = [make_instr(f"q{i:02d}", ["a/one"]) for i in range(20)]
    tests = {tuple(i.id for i in split_dataset(instrs, 0.8, s, reg).test) for s in range(10)}
    assert len(tests) > 1


def test_ratio_bounds():
    reg = registry_for([make_card("a/one")])
    with pytest.raises(ValueError):
        split_dataset([make_instr("q", ["a/one"])], 1.0, 0, reg)


def test_write_split_files(tmp_path):
    reg = registry_for([make_card(n) for n in ("a/1", "a/2")])
    instrs = [make_instr(f"q{i}", ["a/1", "a/2"], origin="a/1") for i in range(5)]
    res = split_dataset(instrs, 0.8, 0, reg)
    train_path, test_path = write_split(res, tmp_path)
    train = [json.loads(line) for line in train_path.read_text().splitlines()]
    assert len(train) == 8
    assert {r["gold_single"] for r in train} == {"a/1", "a/2"}
    assert all(r["gold"] == {"apis": ["a/1", "a/2"]} for r in train)
    (test_rec,) = load_instructions(test_path, reg)
    assert test_rec == res.test[0]


def test_split_summary_rows():
    reg = registry_for([make_card("a/1"), make_card("a/2")])
    instrs = [make_instr(f"q{i}", ["a/1", "a/2"], origin="a/1", modality="audio") for i in range(5)]
    instrs += [make_instr(f"t{i}", ["a/2"], origin="a/2") for i in range(2)]
    rows = split_summary(split_dataset(instrs, 0.8, 0, reg))
    assert rows["audio"] == {"train_expanded": 8, "train_distinct": 4, "test": 1}
    assert rows["text"] == {"train_expanded": 2, "train_distinct": 2, "test": 0}


def test_per_api_ceiling_share():
    reg, instrs = random_dataset(random.Random(9), max_apis=6, max_queries=17)
    res = split_dataset(instrs, 0.8, 3, reg)
    per_api = {}
    for i in instrs:
        per_api.setdefault(i.origin_api, []).append(i.id)
    train_ids = {i.id for i in res.train_queries}
    promoted = {qid for _, qid in res.promoted}
    for api, ids in per_api.items():
        natural = len([q for q in ids if q in train_ids and q not in promoted])
        assert natural == math.ceil(0.8 * len(ids))


# --------------------------------------------------------------------------
# Subsets


def test_partition_axes():
    reg = registry_for([make_card("a/1"), make_card("a/2")])
    instrs = [
        make_instr("t", ["a/1"]),
        make_instr("i1", ["a/1", "a/2"], modality="image", ambiguous=True, kind=1),
        make_instr("i2", ["a/2"], modality="image"),
        make_instr("au", ["a/2"], modality="audio", ambiguous=True, kind=5),
    ]
    parts = partition_subsets(instrs, reg)
    ids = {k: [i.id for i in v] for k, v in parts.items()}
    assert ids[SubsetKey("modality", "text")] == ["t"]
    assert ids[SubsetKey("with_without_ambiguity", "with")] == ["i1", "au"]
    assert ids[SubsetKey("with_without_ambiguity", "without_nontext")] == ["i2"]
    assert ids[SubsetKey("option_cardinality", "one_to_many")] == ["i1"]
    assert ids[SubsetKey("option_cardinality", "one_to_one")] == ["t", "i2", "au"]
    assert ids[SubsetKey("ambiguity_kind", "domains")] == ["i1"]
    assert ids[SubsetKey("ambiguity_kind", "others")] == ["au"]
    assert ids[SubsetKey("ambiguity_kind", "quality")] == []
    assert len(parts) == 5 + 2 + 2 + 4
