import pytest
from hypothesis import given, strategies as st

from meeqa_toolkit.errors import MalformedAnnotationError, OutOfRangeError
from meeqa_toolkit.preprocess import (
    CleanReport, OffsetTable, clean_text, clean_words, complete_partial_highlight,
    filter_pre_question_answers, load_filler_lexicon, merge_multi_span, normalize_symbols,
    preprocess_meeting, remove_fillers_and_repetitions, strip_stage_comments,
)
from meeqa_toolkit.transcript import AnswerAnnotation, Meeting, Question, Utterance, extract_question_instances

from conftest import U_Q, mckay_meeting


@pytest.mark.parametrize("raw, clean", [
    ("yes <laugh> indeed", "yes indeed"),
    ("[No response.]", ""),
    ("plain text", "plain text"),
    ("we [inaudible [twice]] agree", "we agree"),
    ("ok. Secretary's note: this statement was not found in committee records. Next.", "ok. Next."),
])
def test_strip_stage_comments(raw, clean):
    assert strip_stage_comments(raw) == clean


def test_unbalanced_bracket_left_alone():
    report = CleanReport()
    words = clean_words("keep <this going on", report=report)
    assert [w.text for w in words] == ["keep", "this", "going", "on"]  # "<" dropped later as a symbol
    assert report.warnings
    assert strip_stage_comments("keep <this going on") == "keep <this going on"


@pytest.mark.parametrize("raw, clean", [
    ("Well it is it is more", "Well it is more"),
    ("uh okay hmm", "okay"),
    ("very very different meanings", "very different meanings"),
    ("The the plan", "The plan"),
    ("go to the go to the store", "go to the store"),
])
def test_fillers_and_repetitions(raw, clean):
    assert remove_fillers_and_repetitions(raw) == clean


def test_custom_filler_lexicon(tmp_path):
    path = tmp_path / "fillers.txt"
    path.write_text("# spoken fillers\nlike\nyou-know  # two-part\n")
    fillers = load_filler_lexicon(path)
    assert fillers == {"like", "you-know"}
    assert remove_fillers_and_repetitions("it was like huge", fillers) == "it was huge"


@pytest.mark.parametrize("raw, clean", [
    ("cost @ scale_x", "cost scalex"),
    ("(see notes)", "see notes"),
    ("b option", "option"),
    ("I have a plan", "I have a plan"),
])
def test_normalize_symbols(raw, clean):
    assert normalize_symbols(raw) == clean


def test_strict_mode_drops_a_and_i():
    assert normalize_symbols("I have a plan", strict=True) == "have plan"
    report = CleanReport()
    clean_words("I have a plan", report=report)
    assert report.kept_short_words == 2


def test_span_completion():
    text = U_Q
    lo = text.index("vestment advis")
    ws, we = complete_partial_highlight((lo, lo + len("vestment advis")), text)
    assert text.split()[ws:we + 1] == ["investment", "advisors."]
    w = text.split().index("agenda")
    start = text.index("agenda")
    assert complete_partial_highlight((start, start + len("agenda")), text) == (w, w)
    assert complete_partial_highlight((start + 2, start + 3), text) == (w, w)
    with pytest.raises(OutOfRangeError):
        complete_partial_highlight((0, len(text) + 1), text)
    with pytest.raises(MalformedAnnotationError):
        complete_partial_highlight((4, 5), "one  two")


def test_multi_span_merge():
    speakers = ["A"] * 6 + ["A"] + ["B"] * 6
    assert merge_multi_span([(3, 5), (7, 9)], speakers) == [(3, 9)]
    assert merge_multi_span([(3, 5), (8, 9)], speakers) == [(3, 5), (8, 9)]
    third = ["A"] * 6 + ["C"] + ["B"] * 6
    assert merge_multi_span([(3, 5), (7, 9)], third) == [(3, 5), (7, 9)]
    with pytest.raises(MalformedAnnotationError):
        merge_multi_span([(3, 5), (5, 9)], speakers)


def test_multi_span_merge_chains():
    speakers = ["A"] * 20
    assert merge_multi_span([(0, 1), (3, 4), (6, 7)], speakers) == [(0, 7)]


def _instance(annotations):
    m = Meeting("m", (
        Utterance(1, "B", "zero one two."),
        Utterance(2, "C", "three four."),
        Utterance(3, "A", "Why so?"),
        Utterance(4, "B", "Because it is."),
    ), (Question("q", 3, "Why so?", tuple(annotations)),))
    (inst,) = extract_question_instances(m, k=2, l=5)
    return inst


def test_pre_question_answers_dropped():
    inst = _instance([AnswerAnnotation("j1", ((1, 0, 2),))])
    assert filter_pre_question_answers(inst) is None


def test_after_question_answers_kept():
    inst = _instance([AnswerAnnotation("j1", ((4, 0, 2),))])
    assert filter_pre_question_answers(inst) is inst


def test_pre_question_filter_per_annotation():
    before = AnswerAnnotation("j1", ((1, 0, 2),))
    after = [AnswerAnnotation("j2", ((4, 0, 2),)), AnswerAnnotation("j3", ((4, 1, 1),))]
    out = filter_pre_question_answers(_instance([before, *after]))
    assert out is not None and out.annotations == tuple(after) and out.y_ha


def test_pre_question_portion_trimmed():
    mixed = AnswerAnnotation("j1", ((2, 0, 1), (4, 0, 0)))
    out = filter_pre_question_answers(_instance([mixed]))
    assert out.annotations[0].spans == ((4, 0, 0),)


def test_offset_table_round_trip():
    words = clean_words("uh so so we [noise] agree on it")
    table = OffsetTable(words)
    for new in range(len(words)):
        assert table.to_new(table.to_old(new)) == new


def test_pipeline_remaps_annotations():
    m = Meeting("m", (
        Utterance(1, "A", "uh <cough> Who is going going to go?"),
        Utterance(2, "B", "Well it is it is more [laugh] Jeff."),
    ), (Question("q", 1, "Who is going going to go?",
                 (AnswerAnnotation("j", ((2, 4, 6),)),)),))
    out, report = preprocess_meeting(m)
    assert out.utterances[0].text == "Who is going to go?"
    assert out.utterances[1].text == "Well it is more Jeff."
    q = out.questions[0]
    assert q.question_text == "Who is going to go?"
    # raw words 4..6 are "is more [laugh]"; only "more" survives, now word 3
    assert q.annotations[0].spans == ((2, 3, 3),)
    assert report.removed_fillers == 1 and report.removed_comments == 2
    assert report.removed_repetitions == 3  # "going", then "it is"


def test_pipeline_merges_gap_spans():
    m = Meeting("m", (
        Utterance(1, "A", "Is it?"),
        Utterance(2, "B", "w0 w1 w2 w3 w4 w5 w6 w7 w8 w9"),
    ), (Question("q", 1, "Is it?", (AnswerAnnotation("j", ((2, 3, 5), (2, 7, 9))),)),))
    out, report = preprocess_meeting(m)
    assert out.questions[0].annotations[0].spans == ((2, 3, 9),)
    assert report.merged_spans == 1


def test_pipeline_is_idempotent_on_fixture():
    m = mckay_meeting()
    once, _ = preprocess_meeting(m)
    twice, _ = preprocess_meeting(once)
    assert once == twice


text_words = st.lists(st.sampled_from(
    ["uh", "hmm", "the", "The", "plan", "b", "a", "I", "(see", "notes)", "<laugh>", "[No", "response.]",
     "it", "is", "@home", "x_y", "well.", "why?", "um,"]), max_size=25)


@given(text_words)
def test_cleaning_idempotent_and_adds_no_words(words):
    raw = " ".join(words)
    once = clean_text(raw)
    assert clean_text(once) == once
    source_chars = set(raw)
    assert set(once) <= source_chars | {" "}
