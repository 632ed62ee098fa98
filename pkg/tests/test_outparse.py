import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from toolselect.outparse import FailureReason, parse_prediction, render_prediction

R = FailureReason


@pytest.mark.parametrize("raw, ok, name, reason", [
    ("{api_name: [google/matcha-chartqa]}", True, "google/matcha-chartqa", None),
    ("  {api_name: [ google/matcha-chartqa ]}\n", True, "google/matcha-chartqa", None),
    ("{api_name: [Unknown]}", True, "Unknown", None),
    ("api_name: [google/matcha-chartqa]", False, "google/matcha-chartqa", R.MISSING_BRACE),
    ("{api_name: google/matcha-chartqa}", False, None, R.MISSING_BRACKET),
    ("{api_name: [a/b}", False, None, R.MISSING_BRACKET),
    ("{[a/b] :api_name}", False, "a/b", R.REORDERED),
    ("[{api_name: a/b}]", False, None, R.REORDERED),
    ("{api_nme: [a/b]}", False, "a/b", R.WRONG_KEY),
    ("{model: [a/b]}", False, "a/b", R.WRONG_KEY),
    ("{api_name:[a/b]}", False, "a/b", R.WRONG_KEY),
    ("Sure! {api_name: [a/b]}", False, "a/b", R.EXTRA_PAYLOAD),
    ("{api_name: [a/b]} because it fits", False, "a/b", R.EXTRA_PAYLOAD),
    ("{api_name: [a/b], [c/d]}", False, None, R.EXTRA_PAYLOAD),
    ("{api_name: []}", False, None, R.EMPTY_NAME),
    ("{api_name: [   ]}", False, None, R.EMPTY_NAME),
    ("", False, None, R.MISSING_BRACE),
])
def test_golden_cases(raw, ok, name, reason):
    p = parse_prediction(raw)
    assert (p.format_ok, p.api_name, p.failure_reason) == (ok, name, reason)
    assert p.salvaged == (not ok and name is not None)


def test_parser_never_raises_on_garbage():
    for raw in ["}{", "][", "{[}]", "{{api_name: [x]}}", "\x00", "{api_name: [x]]}"]:
        p = parse_prediction(raw)
        assert not p.format_ok and p.failure_reason is not None


names = st.text(
    alphabet=st.characters(blacklist_characters="[]{}", blacklist_categories=("Cs",)),
    min_size=1, max_size=40,
).filter(lambda s: s == s.strip() and s)


@settings(max_examples=300)
@given(names)
def test_render_parse_roundtrip(name):
    assert parse_prediction(render_prediction(name)).api_name == name
    assert parse_prediction(render_prediction(name)).format_ok


@settings(max_examples=300)
@given(names, st.data())
def test_deleting_a_structural_character_fails(name, data):
    text = render_prediction(name)
    structural = [i for i in range(len(text)) if i < len("{api_name: [") or i >= len(text) - 2]
    i = data.draw(st.sampled_from(structural))
    assert not parse_prediction(text[:i] + text[i + 1:]).format_ok


@pytest.mark.parametrize("bad", ["", " a", "a ", "a]b", "a}b", "[a", "a{"])
def test_render_rejects_unrenderable_names(bad):
    with pytest.raises(ValueError):
        render_prediction(bad)
