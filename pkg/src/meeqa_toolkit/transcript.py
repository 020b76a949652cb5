"""Meetings, questions and answer annotations.

Coordinates used throughout the package:

* utterances are numbered from 1 in meeting order (``Utterance.index``);
* words are whitespace tokens of an utterance's text, numbered from 0;
* an answer span is ``(utterance_index, word_start, word_end)``, inclusive.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Iterable, Iterator, Sequence

from .errors import MalformedInputError, MissingAnnotationError

SENTENCE_END = (".", "?", "!")

WordIndex = tuple[int, int]  # (utterance_index, word)
SpanTriple = tuple[int, int, int]  # (utterance_index, word_start, word_end)


@dataclass(frozen=True)
class Utterance:
    index: int
    speaker: str
    text: str

    @property
    def words(self) -> list[str]:
        return self.text.split()


@dataclass(frozen=True)
class AnswerAnnotation:
    judge_id: str
    spans: tuple[SpanTriple, ...] = ()
    is_unanswerable: bool = False

    def __post_init__(self):
        if self.is_unanswerable == bool(self.spans):
            raise MalformedInputError(
                f"annotation by {self.judge_id!r} must be either unanswerable or carry spans"
            )
        for utt, start, end in self.spans:
            if start < 0 or end < start:
                raise MalformedInputError(f"bad span {(utt, start, end)} from {self.judge_id!r}")
        object.__setattr__(self, "spans", tuple(sorted(tuple(s) for s in self.spans)))

    def word_set(self) -> frozenset[WordIndex]:
        """All (utterance, word) positions covered; empty when unanswerable."""
        return frozenset(
            (utt, w) for utt, start, end in self.spans for w in range(start, end + 1)
        )


@dataclass(frozen=True)
class Question:
    """A question as stored in a meeting record, before windowing."""

    question_id: str
    utterance_index: int
    question_text: str
    annotations: tuple[AnswerAnnotation, ...] = ()
    word_start: int | None = None
    labels: dict = field(default_factory=dict, compare=False)


@dataclass(frozen=True)
class Meeting:
    meeting_id: str
    utterances: tuple[Utterance, ...]
    questions: tuple[Question, ...] = ()

    def __post_init__(self):
        indices = [u.index for u in self.utterances]
        if any(b <= a for a, b in zip(indices, indices[1:])):
            raise MalformedInputError(f"meeting {self.meeting_id}: utterance indices not increasing")

    def utterance(self, index: int) -> Utterance:
        for u in self.utterances:
            if u.index == index:
                return u
        raise MalformedInputError(f"meeting {self.meeting_id}: no utterance {index}")


@dataclass(frozen=True)
class Segment:
    """A contiguous piece of one utterance.

    ``word_offset`` is the position of the segment's first word inside the
    source utterance, so word ``i`` of the segment is ``(utterance_index,
    word_offset + i)`` in meeting coordinates.
    """

    utterance_index: int
    speaker: str
    text: str
    word_offset: int = 0

    @property
    def words(self) -> list[str]:
        return self.text.split()

    def word_positions(self) -> list[WordIndex]:
        return [(self.utterance_index, self.word_offset + i) for i in range(len(self.words))]


@dataclass(frozen=True)
class QAInstance:
    """One question with its context windows and gold annotations.

    ``before_window`` ends with the prefix of the question utterance and
    ``after_window`` starts with its suffix; both may be empty strings.
    ``y_ha`` is the majority has-answer label, ``None`` for unannotated
    questions.
    """

    question_id: str
    meeting_id: str
    question: Segment
    before_window: tuple[Segment, ...]
    after_window: tuple[Segment, ...]
    annotations: tuple[AnswerAnnotation, ...]
    y_ha: bool | None

    @property
    def question_text(self) -> str:
        return self.question.text

    @property
    def q_index(self) -> int:
        return self.question.utterance_index

    @property
    def questioner(self) -> str:
        return self.question.speaker

    @property
    def prefix(self) -> Segment:
        return self.before_window[-1]

    @property
    def suffix(self) -> Segment:
        return self.after_window[0]

    def after_positions(self) -> list[WordIndex]:
        return [p for seg in self.after_window for p in seg.word_positions()]


def split_sentences(text: str) -> list[tuple[int, str]]:
    """Split on terminal punctuation followed by whitespace.

    Returns ``(first_word_index, sentence_text)`` pairs.
    """
    sentences = []
    current: list[str] = []
    start = 0
    for i, word in enumerate(text.split()):
        if not current:
            start = i
        current.append(word)
        if word.endswith(SENTENCE_END):
            sentences.append((start, " ".join(current)))
            current = []
    if current:
        sentences.append((start, " ".join(current)))
    return sentences


def question_candidates(utterance: Utterance) -> list[tuple[int, str]]:
    return [(i, s) for i, s in split_sentences(utterance.text) if s.endswith("?")]


def locate_question(utterance: Utterance, question_text: str, word_start: int | None = None) -> int:
    """Word index where ``question_text`` starts inside ``utterance``."""
    q_words = question_text.split()
    words = utterance.words
    if not q_words or not q_words[-1].endswith("?"):
        raise MalformedInputError(f"question {question_text!r} does not end with '?'")
    if word_start is not None:
        if words[word_start:word_start + len(q_words)] == q_words:
            return word_start
        raise MalformedInputError(
            f"question {question_text!r} not found at word {word_start} of utterance {utterance.index}"
        )
    for start, sentence in question_candidates(utterance):
        if sentence.split() == q_words:
            return start
    # questions cut out of a longer sentence by cleaning
    n = len(q_words)
    for start in range(len(words) - n + 1):
        if words[start:start + n] == q_words:
            return start
    raise MalformedInputError(
        f"question {question_text!r} not found in utterance {utterance.index}"
    )


def derive_answerability_label(annotations: Sequence[AnswerAnnotation]) -> bool:
    """Majority has-answer label.

    A question is unanswerable when at least half of its judges said so,
    i.e. ``2 * n_unanswerable >= n``; the return value is ``True`` when the
    question *has* an answer.
    """
    if not annotations:
        raise MissingAnnotationError("cannot derive a label without annotations")
    n_unanswerable = sum(a.is_unanswerable for a in annotations)
    return not (2 * n_unanswerable >= len(annotations))


def merge_consecutive_utterances(meeting: Meeting) -> Meeting:
    """Join adjacent utterances of the same speaker into one.

    Indices are reassigned 1..M' and question / annotation coordinates are
    shifted into the merged utterances.
    """
    merged: list[Utterance] = []
    # old index -> (new index, word offset inside the merged utterance)
    where: dict[int, tuple[int, int]] = {}
    for u in meeting.utterances:
        if merged and merged[-1].speaker == u.speaker:
            last = merged[-1]
            offset = len(last.words)
            merged[-1] = replace(last, text=" ".join(last.words + u.words))
            where[u.index] = (last.index, offset)
        else:
            new_index = len(merged) + 1
            merged.append(Utterance(new_index, u.speaker, " ".join(u.text.split())))
            where[u.index] = (new_index, 0)

    def move(utt: int, word: int) -> WordIndex:
        new_utt, offset = where[utt]
        return new_utt, word + offset

    questions = []
    for q in meeting.questions:
        new_utt, offset = where[q.utterance_index]
        word_start = q.word_start
        if word_start is None:
            word_start = locate_question(meeting.utterance(q.utterance_index), q.question_text)
        annotations = tuple(
            replace(a, spans=tuple((move(u, s)[0], move(u, s)[1], move(u, e)[1]) for u, s, e in a.spans))
            for a in q.annotations
        )
        questions.append(replace(q, utterance_index=new_utt, word_start=word_start + offset,
                                 annotations=annotations))
    return Meeting(meeting.meeting_id, tuple(merged), tuple(questions))


def extract_question_instances(meeting: Meeting, k: int = 1, l: int = 60) -> list[QAInstance]:
    """Cut a context window around every question of ``meeting``.

    The before-window holds up to ``k`` full utterances plus the prefix of
    the question utterance; the after-window holds its suffix plus up to
    ``l`` full utterances. Windows are clipped at the meeting boundaries.
    """
    if k < 0 or l < 1:
        raise ValueError(f"need k >= 0 and l >= 1, got k={k}, l={l}")
    position = {u.index: i for i, u in enumerate(meeting.utterances)}
    instances = []
    for q in meeting.questions:
        if q.utterance_index not in position:
            raise MalformedInputError(
                f"meeting {meeting.meeting_id}: question {q.question_id} refers to missing utterance "
                f"{q.utterance_index}"
            )
        pos = position[q.utterance_index]
        u_q = meeting.utterances[pos]
        start = locate_question(u_q, q.question_text, q.word_start)
        words = u_q.words
        n_q = len(q.question_text.split())
        prefix = Segment(u_q.index, u_q.speaker, " ".join(words[:start]), 0)
        question = Segment(u_q.index, u_q.speaker, " ".join(words[start:start + n_q]), start)
        suffix = Segment(u_q.index, u_q.speaker, " ".join(words[start + n_q:]), start + n_q)
        before = tuple(_full(u) for u in meeting.utterances[max(0, pos - k):pos]) + (prefix,)
        after = (suffix,) + tuple(_full(u) for u in meeting.utterances[pos + 1:pos + 1 + l])
        y_ha = derive_answerability_label(q.annotations) if q.annotations else None
        instances.append(QAInstance(q.question_id, meeting.meeting_id, question, before, after,
                                    q.annotations, y_ha))
    return instances


def _full(u: Utterance) -> Segment:
    return Segment(u.index, u.speaker, u.text, 0)


# -- JSONL ingestion ---------------------------------------------------------

def parse_meeting(record: dict, lineno: int | None = None) -> Meeting:
    """Build a :class:`Meeting` from one decoded JSONL record.

    Annotations may carry ``char_spans`` (``[utt, char_start, char_end)``
    ranges); those are widened to whole words on ingestion.
    """
    from .preprocess import complete_partial_highlight

    try:
        meeting_id = str(record["meeting_id"])
        utterances = tuple(
            Utterance(i, str(u["speaker"]), str(u["text"]))
            for i, u in enumerate(record["utterances"], start=1)
        )
        by_index = {u.index: u for u in utterances}
        questions = []
        for qi, q in enumerate(record.get("questions", [])):
            annotations = []
            for a in q.get("annotations", []):
                spans = [tuple(int(x) for x in s) for s in a.get("spans", [])]
                for utt, cstart, cend in a.get("char_spans", []):
                    if utt not in by_index:
                        raise MalformedInputError(f"char span refers to missing utterance {utt}")
                    text = by_index[utt].text
                    ws, we = complete_partial_highlight((cstart, cend), text)
                    spans.append((utt, ws, we))
                annotations.append(AnswerAnnotation(
                    str(a.get("judge_id", len(annotations))),
                    tuple(_coalesce(spans)),
                    bool(a.get("unanswerable", False)),
                ))
            for ann in annotations:
                for utt, _, end in ann.spans:
                    if utt not in by_index or end >= len(by_index[utt].words):
                        raise MalformedInputError(f"span {(utt, _, end)} outside utterance bounds")
            questions.append(Question(
                question_id=str(q.get("question_id", f"{meeting_id}-{qi}")),
                utterance_index=int(q["utterance_index"]),
                question_text=str(q["question_text"]),
                annotations=tuple(annotations),
                word_start=q.get("word_start"),
                labels=dict(q.get("labels", {})),
            ))
    except MalformedInputError as exc:
        if lineno is not None and exc.lineno is None:
            raise MalformedInputError(str(exc), lineno) from None
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedInputError(f"bad meeting record: {exc!r}", lineno) from None
    return Meeting(meeting_id, utterances, tuple(questions))


def _coalesce(spans: Iterable[SpanTriple]) -> list[SpanTriple]:
    """Sort spans and fuse overlapping ones inside the same utterance."""
    out: list[list[int]] = []
    for utt, s, e in sorted(spans):
        if out and out[-1][0] == utt and s <= out[-1][2]:
            out[-1][2] = max(out[-1][2], e)
        else:
            out.append([utt, s, e])
    return [tuple(x) for x in out]


def meeting_to_record(meeting: Meeting) -> dict:
    questions = []
    for q in meeting.questions:
        rec = {
            "question_id": q.question_id,
            "utterance_index": q.utterance_index,
            "question_text": q.question_text,
            "annotations": [
                {"judge_id": a.judge_id, "unanswerable": a.is_unanswerable,
                 "spans": [list(s) for s in a.spans]}
                for a in q.annotations
            ],
        }
        if q.word_start is not None:
            rec["word_start"] = q.word_start
        if q.labels:
            rec["labels"] = q.labels
        questions.append(rec)
    return {
        "meeting_id": meeting.meeting_id,
        "utterances": [{"speaker": u.speaker, "text": u.text} for u in meeting.utterances],
        "questions": questions,
    }


def iter_meetings(path) -> Iterator[Meeting]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedInputError(f"invalid JSON: {exc.msg}", lineno) from None
            yield parse_meeting(record, lineno)


def load_meetings(path) -> list[Meeting]:
    return list(iter_meetings(path))


def dump_meetings(meetings: Iterable[Meeting], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for m in meetings:
            fh.write(json.dumps(meeting_to_record(m), ensure_ascii=False, sort_keys=True) + "\n")
