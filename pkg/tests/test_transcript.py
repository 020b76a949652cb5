import json

import pytest
from hypothesis import given, strategies as st

from meeqa_toolkit.errors import MalformedInputError, MissingAnnotationError
from meeqa_toolkit.transcript import (
    AnswerAnnotation, Meeting, Question, Utterance, derive_answerability_label,
    extract_question_instances, iter_meetings, locate_question, merge_consecutive_utterances,
    parse_meeting, meeting_to_record, split_sentences,
)

from conftest import QUESTION, U_A1, U_Q1, mckay_meeting


def ann(judge, unans=False, spans=()):
    return AnswerAnnotation(judge, tuple(spans), unans)


def test_windows_around_the_question(meeting):
    (inst,) = extract_question_instances(meeting, k=1, l=60)
    assert [s.text for s in inst.before_window] == [
        U_Q1,
        "Thank you very much. The next item on the agenda is considering and acting on the change "
        "of address notification to diversify investment advisors.",
    ]
    assert inst.question_text == QUESTION
    assert inst.suffix.text == ""
    assert inst.after_window[1].text == U_A1
    assert inst.y_ha is True


def test_first_utterance_question_clips_before_window():
    m = Meeting("m", (Utterance(1, "A", "Pre. Is it? Post."), Utterance(2, "B", "Yes.")),
                (Question("q", 1, "Is it?", (ann("j", spans=[(2, 0, 0)]),)),))
    (inst,) = extract_question_instances(m, k=2, l=60)
    assert len(inst.before_window) == 1 and inst.prefix.text == "Pre."
    assert [s.text for s in inst.after_window] == ["Post.", "Yes."]


def test_after_window_holds_everything_left():
    m = Meeting("m", tuple(Utterance(i, "A" if i % 2 else "B", f"w{i}.") for i in range(1, 4))
                + (Utterance(4, "B", "Why?"),) + tuple(Utterance(i, "A", f"x{i}.") for i in range(5, 8)),
                (Question("q", 4, "Why?", (ann("j", True),)),))
    (inst,) = extract_question_instances(m, k=1, l=60)
    assert [s.utterance_index for s in inst.after_window] == [4, 5, 6, 7]
    (inst2,) = extract_question_instances(m, k=1, l=2)
    assert [s.utterance_index for s in inst2.after_window] == [4, 5, 6]


def test_window_arguments_validated(meeting):
    with pytest.raises(ValueError):
        extract_question_instances(meeting, k=-1)
    with pytest.raises(ValueError):
        extract_question_instances(meeting, l=0)


def test_question_not_found():
    m = Meeting("m", (Utterance(1, "A", "No question here."),),
                (Question("q", 1, "Where?", (ann("j", True),)),))
    with pytest.raises(MalformedInputError):
        extract_question_instances(m)


def test_two_questions_in_one_utterance():
    text = "Is it? Or is it not? Fine."
    u = Utterance(1, "A", text)
    assert locate_question(u, "Is it?") == 0
    assert locate_question(u, "Or is it not?") == 2
    assert [s for _, s in split_sentences(text)] == ["Is it?", "Or is it not?", "Fine."]


@pytest.mark.parametrize("flags, expected", [
    ((True, True, False), False),   # 2 of 3 unanswerable
    ((False, False, False), True),
    ((True, False), False),         # exactly half counts as unanswerable
    ((True, False, False), True),
])
def test_answerability_label(flags, expected):
    anns = [ann(f"j{i}", True) if f else ann(f"j{i}", spans=[(1, 0, 0)]) for i, f in enumerate(flags)]
    assert derive_answerability_label(anns) is expected


def test_answerability_needs_annotations():
    with pytest.raises(MissingAnnotationError):
        derive_answerability_label([])


@given(st.lists(st.booleans(), min_size=1, max_size=7), st.randoms(use_true_random=False))
def test_answerability_permutation_invariant(flags, rnd):
    anns = [ann(f"j{i}", True) if f else ann(f"j{i}", spans=[(1, 0, 0)]) for i, f in enumerate(flags)]
    shuffled = anns[:]
    rnd.shuffle(shuffled)
    assert derive_answerability_label(anns) == derive_answerability_label(shuffled)


def test_merge_examples():
    m = Meeting("m", (Utterance(1, "A", "hi"), Utterance(2, "A", "there"), Utterance(3, "B", "yes")))
    merged = merge_consecutive_utterances(m)
    assert [(u.speaker, u.text) for u in merged.utterances] == [("A", "hi there"), ("B", "yes")]
    single = Meeting("m", (Utterance(1, "A", "x"),))
    assert merge_consecutive_utterances(single).utterances == single.utterances
    alt = Meeting("m", (Utterance(1, "A", "a1"), Utterance(2, "B", "b"), Utterance(3, "A", "a2")))
    assert len(merge_consecutive_utterances(alt).utterances) == 3


def test_merge_remaps_questions_and_spans():
    m = Meeting("m", (Utterance(1, "A", "one two"), Utterance(2, "A", "Why not?"), Utterance(3, "B", "x y"),
                      Utterance(4, "B", "z w")),
                (Question("q", 2, "Why not?", (ann("j", spans=[(4, 1, 1)]),)),))
    merged = merge_consecutive_utterances(m)
    q = merged.questions[0]
    assert q.utterance_index == 1 and q.word_start == 2
    assert q.annotations[0].spans == ((2, 3, 3),)


speakers = st.sampled_from("ABC")
utt_lists = st.lists(st.tuples(speakers, st.lists(st.sampled_from(["a1", "b2", "c3"]), min_size=1, max_size=3)),
                     min_size=1, max_size=8)


@given(utt_lists)
def test_merge_is_idempotent(raw):
    m = Meeting("m", tuple(Utterance(i + 1, s, " ".join(w)) for i, (s, w) in enumerate(raw)))
    once = merge_consecutive_utterances(m)
    assert merge_consecutive_utterances(once) == once
    assert " ".join(u.text for u in once.utterances) == " ".join(u.text for u in m.utterances)


@given(st.integers(0, 3), st.integers(1, 4))
def test_windows_reproduce_source_text(k, l):
    m = mckay_meeting()
    m = Meeting(m.meeting_id, m.utterances + (Utterance(5, "MR. POLGAR", "Sure thing."),), m.questions)
    (inst,) = extract_question_instances(m, k=k, l=l)
    q = 3
    lo, hi = max(1, q - k), min(len(m.utterances), q + l)
    words = [w for seg in (*inst.before_window, inst.question, *inst.after_window) for w in seg.words]
    source = [w for u in m.utterances if lo <= u.index <= hi for w in u.words]
    assert words == source


def test_jsonl_round_trip(tmp_path, meeting):
    path = tmp_path / "m.jsonl"
    path.write_text(json.dumps(meeting_to_record(meeting)) + "\n")
    (back,) = iter_meetings(path)
    assert back == meeting


def test_char_spans_are_widened():
    rec = meeting_to_record(mckay_meeting())
    text = rec["utterances"][2]["text"]
    lo = text.index("vestment")
    rec["questions"][0]["annotations"] = [{"judge_id": "j", "char_spans": [[3, lo, lo + len("vestment advis")]]}]
    m = parse_meeting(rec)
    words = m.utterances[2].words
    (utt, s, e), = m.questions[0].annotations[0].spans
    assert words[s:e + 1] == ["investment", "advisors."]


def test_malformed_line_number(tmp_path, meeting):
    path = tmp_path / "bad.jsonl"
    good = json.dumps(meeting_to_record(meeting))
    path.write_text("\n".join([good] * 6 + ['{"meeting_id": "x"}']) + "\n")
    with pytest.raises(MalformedInputError, match="line 7"):
        list(iter_meetings(path))


def test_annotation_must_be_spans_xor_unanswerable():
    with pytest.raises(MalformedInputError):
        AnswerAnnotation("j", (), False)
    with pytest.raises(MalformedInputError):
        AnswerAnnotation("j", ((1, 0, 0),), True)
