import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from csk.markup import (
    DiagCode,
    Label,
    MarkupError,
    Mode,
    Phrase,
    AnnotatedDocument,
    AnnotatedSentence,
    extract_phrases,
    parse_sentence,
    serialize_sentence,
    TAG_RE,
)

EXAMPLE_3_1 = (
    "<C>Pregnant persons with gestational diabetes</C> are at "
    "<E>increased risk for maternal and fetal complications</E> and may benefit from "
    "<A>early identification and treatment</A>."
)


def test_simple_parse():
    s, diags = parse_sentence("<C>X</C> causes <E>Y</E>")
    assert s.plain == "X causes Y"
    assert [(p.label, p.text, p.start, p.end) for p in s.phrases] == [
        (Label.CAUSE, "X", 0, 1),
        (Label.EFFECT, "Y", 9, 10),
    ]
    assert diags == []


def test_example_offsets_index_plain_text():
    # "X causes Y": Y sits at offset 9. The raw-text offset would be 11+.
    s, _ = parse_sentence("<C>X</C> causes <E>Y</E>")
    for p in s.phrases:
        assert s.plain[p.start:p.end] == p.text


def test_guideline_example():
    s, diags = parse_sentence(EXAMPLE_3_1, Mode.STRICT)
    assert [p.label for p in s.phrases] == [Label.CAUSE, Label.EFFECT, Label.ACTION]
    assert s.phrases[0].text == "Pregnant persons with gestational diabetes"
    assert s.phrases[2].text == "early identification and treatment"
    assert not diags


def test_guideline_example_round_trip():
    s, _ = parse_sentence(EXAMPLE_3_1)
    assert serialize_sentence(s) == EXAMPLE_3_1


def test_unclosed_strict_and_lenient():
    with pytest.raises(MarkupError) as exc:
        parse_sentence("<C>X causes Y", Mode.STRICT)
    assert exc.value.diagnostic.code is DiagCode.UNCLOSED_TAG
    assert exc.value.diagnostic.offset == 0

    s, diags = parse_sentence("<C>X causes Y", Mode.LENIENT)
    assert s.phrases == ()
    assert s.plain == "X causes Y"
    assert len(diags) == 1


@pytest.mark.parametrize("raw, code", [
    ("X </C> y", DiagCode.UNOPENED_CLOSE),
    ("<C>X</E> y", DiagCode.MISMATCHED_CLOSE),
    ("<C>a <E>b</E> c</C>", DiagCode.NESTED_TAG),
    ("<M>may</M> cause", DiagCode.UNKNOWN_TAG),
    ("<c>lower</c>", DiagCode.UNKNOWN_TAG),
    ("<C></C>x", DiagCode.EMPTY_SPAN),
])
def test_strict_rejects(raw, code):
    with pytest.raises(MarkupError) as exc:
        parse_sentence(raw, "strict")
    assert exc.value.diagnostic.code is code


def test_lenient_nested_keeps_outer_span():
    s, diags = parse_sentence("<C>a <E>b</E> c</C> d", Mode.LENIENT)
    assert s.plain == "a b c d"
    assert [(p.label, p.text) for p in s.phrases] == [(Label.CAUSE, "a b c")]
    assert [d.code for d in diags] == [DiagCode.NESTED_TAG]


def test_lenient_unknown_tag_is_literal_warning():
    s, diags = parse_sentence("<M>may</M> <C>x</C>", Mode.LENIENT)
    assert s.plain == "<M>may</M> x"
    assert [p.text for p in s.phrases] == ["x"]
    assert [d.code for d in diags] == [DiagCode.UNKNOWN_TAG, DiagCode.UNKNOWN_TAG]
    assert all(d.severity.value == "warning" for d in diags)


def test_lenient_stray_close_dropped():
    s, diags = parse_sentence("a </C><E>b</E>", Mode.LENIENT)
    assert s.plain == "a b"
    assert [p.label for p in s.phrases] == [Label.EFFECT]
    assert len(diags) == 1


def test_diagnostic_offsets_point_into_raw():
    raw = "abc <C>def"
    _, diags = parse_sentence(raw, Mode.LENIENT)
    assert raw[diags[0].offset:].startswith("<C>")


def test_whitespace_inside_brackets_is_text():
    s, diags = parse_sentence("< C>x</ C>", Mode.STRICT)
    assert s.phrases == () and s.plain == "< C>x</ C>" and not diags


def test_serialize_basic_and_empty():
    s = AnnotatedSentence(None, "", "X causes Y", (Phrase(Label.CAUSE, "X", 0, 1),))
    assert serialize_sentence(s) == "<C>X</C> causes Y"
    s = AnnotatedSentence(None, "", "X causes Y", ())
    assert serialize_sentence(s) == "X causes Y"


def test_serialize_overlap_error():
    s = AnnotatedSentence(None, "", "abcdef", (Phrase(Label.CAUSE, "abc", 0, 3), Phrase(Label.EFFECT, "cde", 2, 5)))
    with pytest.raises(ValueError):
        serialize_sentence(s)


def test_label_surface_forms_round_trip():
    for lab in Label:
        assert Label(lab.value) is lab
    assert {lab.value for lab in Label} == {"C", "E", "CO", "A", "S", "O"}


def test_extract_phrases():
    s1, _ = parse_sentence("<C>a</C> b <E>c</E>", sentence_id="d:0")
    s2, _ = parse_sentence("<A>x</A>", sentence_id="d:1")
    doc = AnnotatedDocument("d", [s1, s2])
    phrases = extract_phrases(doc)
    assert [p.text for p in phrases] == ["a", "c", "x"]
    assert extract_phrases(AnnotatedDocument("e", [parse_sentence("plain")[0]])) == []


def test_json_record():
    s, diags = parse_sentence("<C>X</C> y <Q>", Mode.LENIENT, "d:3")
    rec = json.loads(json.dumps(s.to_dict(diags)))
    assert rec["sentence_id"] == "d:3"
    assert rec["phrases"] == [{"label": "C", "text": "X", "start": 0, "end": 1}]
    assert rec["diagnostics"][0]["code"] == "UnknownTag"


# -- properties -----------------------------------------------------------

_TEXT = st.text(alphabet="abc xyz.,()-%", min_size=0, max_size=8)
_LABELS = st.sampled_from(["C", "E", "CO", "A", "S"])


@st.composite
def tagged_sentences(draw):
    parts = [draw(_TEXT)]
    for _ in range(draw(st.integers(0, 4))):
        lab = draw(_LABELS)
        inner = draw(st.text(alphabet="abc xyz.,()", min_size=1, max_size=8))
        parts.append(f"<{lab}>{inner}</{lab}>")
        parts.append(draw(_TEXT))
    return "".join(parts)


@given(tagged_sentences())
def test_round_trip_property(raw):
    s, diags = parse_sentence(raw, Mode.STRICT)
    assert not diags
    assert serialize_sentence(s) == raw
    tag_chars = sum(len(m.group(0)) for m in TAG_RE.finditer(raw))
    assert len(s.plain) == len(raw) - tag_chars
    starts = [p.start for p in s.phrases]
    assert starts == sorted(starts)
    for p in s.phrases:
        assert s.plain[p.start:p.end] == p.text


@settings(max_examples=300)
@given(st.lists(st.sampled_from(["a", " ", "<C>", "</C>", "<E>", "</E>", "<CO>", "</A>", "<Z>", "x"]), max_size=12).map("".join))
def test_lenient_is_total(raw):
    s, diags = parse_sentence(raw, Mode.LENIENT)
    for p in s.phrases:
        assert s.plain[p.start:p.end] == p.text
    # a strict parse succeeds exactly when lenient needed no repairs
    try:
        strict, _ = parse_sentence(raw, Mode.STRICT)
    except MarkupError:
        assert diags
    else:
        assert not diags
        assert strict == s


@given(st.lists(st.sampled_from(["a", "b ", "<C>", "</C>", "<E>", "</E>", "<M>"]), max_size=15))
def test_lenient_result_reparses_cleanly(tokens):
    raw = "".join(tokens)
    s, _ = parse_sentence(raw, Mode.LENIENT)
    again = serialize_sentence(s)
    s2, diags2 = parse_sentence(again, Mode.LENIENT)
    assert s2.phrases == s.phrases
    assert s2.plain == s.plain
