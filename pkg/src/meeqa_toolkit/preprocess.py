"""Spoken-language cleanup applied to transcripts before representation.

Every cleaning rule only deletes characters or whole words, so each output
word can be traced back to the contiguous range of input words it came
from. That trace (:class:`OffsetTable`) is what keeps annotation spans
valid after cleaning.
"""

from __future__ import annotations

import logging
import re
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable, NamedTuple, Sequence

from .errors import MalformedAnnotationError, OutOfRangeError
from .transcript import (
    AnswerAnnotation,
    Meeting,
    QAInstance,
    Question,
    Utterance,
    derive_answerability_label,
    locate_question,
    merge_consecutive_utterances,
)

log = logging.getLogger(__name__)

DEFAULT_FILLERS = frozenset({"uh", "um", "hmm", "huh", "er", "erm"})
BRACKET_CHARS = "()[]{}<>"
SYMBOL_CHARS = "@_"
COMMENT_PAIRS = {"<": ">", "[": "]"}
KEPT_SHORT_WORDS = frozenset({"a", "i"})
MAX_REPEAT_NGRAM = 3

_SECRETARY_NOTE = re.compile(r"secretary['’]?s\s+note\s*:[^.!?]*[.!?]?", re.IGNORECASE)


@dataclass
class CleanReport:
    removed_comments: int = 0
    removed_fillers: int = 0
    removed_repetitions: int = 0
    removed_symbols: int = 0
    merged_spans: int = 0
    dropped_instances: int = 0
    # one-character words kept on purpose ("a", "I"); zero in strict mode
    kept_short_words: int = 0
    dropped_annotations: int = 0
    warnings: list[str] = field(default_factory=list)

    def add(self, other: "CleanReport") -> None:
        for name, value in asdict(other).items():
            if name == "warnings":
                self.warnings.extend(value)
            else:
                setattr(self, name, getattr(self, name) + value)

    def to_dict(self) -> dict:
        return asdict(self)


class Word(NamedTuple):
    """An output word and the inclusive range of input words it came from."""

    text: str
    lo: int
    hi: int


def _words(text: str) -> list[Word]:
    return [Word(w, i, i) for i, w in enumerate(text.split())]


def _join(words: Iterable[Word]) -> str:
    return " ".join(w.text for w in words)


# -- comments -----------------------------------------------------------------

def _strip_comments(words: list[Word], report: CleanReport) -> list[Word]:
    chars: list[str] = []
    src: list[int | None] = []
    for k, w in enumerate(words):
        if k:
            chars.append(" ")
            src.append(None)
        chars.extend(w.text)
        src.extend([w.lo] * (len(w.text) - 1) + [w.hi] if w.text else [])
    text = "".join(chars)

    drop = [False] * len(text)
    i = 0
    while i < len(text):
        opener = text[i]
        if opener not in COMMENT_PAIRS:
            i += 1
            continue
        closer = COMMENT_PAIRS[opener]
        depth, j = 0, i
        while j < len(text):
            if text[j] == opener:
                depth += 1
            elif text[j] == closer:
                depth -= 1
                if depth == 0:
                    break
            j += 1
        if j == len(text):
            msg = f"unbalanced {opener!r} at char {i}; rest of text left as is"
            log.warning(msg)
            report.warnings.append(msg)
            break
        drop[i:j + 1] = [True] * (j + 1 - i)
        report.removed_comments += 1
        i = j + 1
    for m in _SECRETARY_NOTE.finditer(text):
        if not any(drop[m.start():m.end()]):
            report.removed_comments += 1
        drop[m.start():m.end()] = [True] * (m.end() - m.start())
    return _rebuild(text, src, drop)


def _rebuild(text: str, src: list[int | None], drop: list[bool]) -> list[Word]:
    out: list[Word] = []
    buf: list[str] = []
    lo = hi = None
    for ch, s, d in zip(text, src, drop):
        if d:
            continue
        if ch.isspace():
            if buf:
                out.append(Word("".join(buf), lo, hi))
                buf, lo, hi = [], None, None
            continue
        buf.append(ch)
        lo = s if lo is None else min(lo, s)
        hi = s if hi is None else max(hi, s)
    if buf:
        out.append(Word("".join(buf), lo, hi))
    return out


def strip_stage_comments(text: str) -> str:
    """Remove ``<...>`` / ``[...]`` stage comments and secretary's notes.

    >>> strip_stage_comments("yes <laugh> indeed")
    'yes indeed'
    """
    return _join(_strip_comments(_words(text), CleanReport()))


# -- fillers and repetitions --------------------------------------------------

def _remove_fillers(words: list[Word], fillers: frozenset[str], report: CleanReport) -> list[Word]:
    # a filler carrying '.', '?' or '!' is kept so sentence boundaries survive
    out = [w for w in words if w.text.lower().rstrip(",;:") not in fillers]
    report.removed_fillers += len(words) - len(out)
    return out


def _collapse_repetitions(words: list[Word], report: CleanReport, max_n: int = MAX_REPEAT_NGRAM) -> list[Word]:
    out: list[Word] = []
    keys: list[str] = []
    for w in words:
        out.append(w)
        keys.append(w.text.lower())
        changed = True
        while changed:
            changed = False
            for n in range(1, max_n + 1):
                if len(keys) >= 2 * n and keys[-n:] == keys[-2 * n:-n]:
                    del out[-n:], keys[-n:]
                    report.removed_repetitions += n
                    changed = True
                    break
    return out


def remove_fillers_and_repetitions(text: str, fillers: Iterable[str] = DEFAULT_FILLERS) -> str:
    """Drop filler words, then collapse adjacent repeated 1-3 word n-grams.

    >>> remove_fillers_and_repetitions("Well it is it is more")
    'Well it is more'
    """
    report = CleanReport()
    words = _remove_fillers(_words(text), frozenset(f.lower() for f in fillers), report)
    return _join(_collapse_repetitions(words, report))


# -- symbols ------------------------------------------------------------------

def _normalize_symbols(words: list[Word], report: CleanReport, strict: bool = False) -> list[Word]:
    out = []
    for w in words:
        stripped = "".join(ch for ch in w.text if ch not in SYMBOL_CHARS and ch not in BRACKET_CHARS)
        report.removed_symbols += len(w.text) - len(stripped)
        if not stripped:
            continue
        if len(stripped) == 1 and stripped.isalpha():
            if not strict and stripped.lower() in KEPT_SHORT_WORDS:
                report.kept_short_words += 1
            else:
                report.removed_symbols += 1
                continue
        out.append(w._replace(text=stripped))
    return out


def normalize_symbols(text: str, strict: bool = False) -> str:
    """Delete ``@``, ``_``, bracket characters and one-letter words.

    "a" and "I" survive unless ``strict`` is set.
    """
    return _join(_normalize_symbols(_words(text), CleanReport(), strict))


# -- full pipeline ------------------------------------------------------------

def clean_words(
    text: str,
    fillers: Iterable[str] = DEFAULT_FILLERS,
    strict: bool = False,
    report: CleanReport | None = None,
) -> list[Word]:
    """Run comments -> fillers/repetitions -> symbols until nothing changes.

    A later rule can expose work for an earlier one (deleting a symbol may
    leave a repeated word behind), so the three stages are iterated to a
    fixpoint; that makes the whole pipeline idempotent.
    """
    report = report if report is not None else CleanReport()
    fillers = frozenset(f.lower() for f in fillers)
    words = _words(text)
    while True:
        before = [w.text for w in words]
        words = _strip_comments(words, report)
        words = _remove_fillers(words, fillers, report)
        words = _collapse_repetitions(words, report)
        words = _normalize_symbols(words, report, strict)
        if [w.text for w in words] == before:
            return words


def clean_text(text: str, fillers: Iterable[str] = DEFAULT_FILLERS, strict: bool = False) -> str:
    return _join(clean_words(text, fillers, strict))


class OffsetTable:
    """Map between word indices before and after cleaning one utterance."""

    def __init__(self, words: Sequence[Word]):
        self.words = list(words)

    def to_old(self, new_index: int) -> int:
        return self.words[new_index].lo

    def to_new(self, old_index: int) -> int | None:
        for j, w in enumerate(self.words):
            if w.lo <= old_index <= w.hi:
                return j
        return None

    def remap_range(self, start: int, end: int) -> tuple[int, int] | None:
        """New inclusive range covering whatever survived of ``[start, end]``."""
        hits = [j for j, w in enumerate(self.words) if w.hi >= start and w.lo <= end]
        if not hits:
            return None
        return hits[0], hits[-1]


def load_filler_lexicon(path) -> frozenset[str]:
    """Read a filler lexicon: one token per line, ``#`` starts a comment."""
    with open(path, encoding="utf-8") as fh:
        tokens = (line.split("#", 1)[0].strip().lower() for line in fh)
        return frozenset(t for t in tokens if t)


# -- annotation repair --------------------------------------------------------

def _word_spans(text: str) -> list[tuple[int, int]]:
    return [(m.start(), m.end()) for m in re.finditer(r"\S+", text)]


def complete_partial_highlight(span: tuple[int, int], words) -> tuple[int, int]:
    """Smallest inclusive word range whose characters cover ``span``.

    ``span`` is a half-open character range into ``words``, which is either
    the utterance text or its word list (joined by single spaces).
    """
    text = words if isinstance(words, str) else " ".join(words)
    start, end = span
    if start < 0 or end > len(text) or start >= end:
        raise OutOfRangeError(f"character span {span} outside text of length {len(text)}")
    hits = [i for i, (s, e) in enumerate(_word_spans(text)) if s < end and e > start]
    if not hits:
        raise MalformedAnnotationError(f"character span {span} covers only whitespace")
    return hits[0], hits[-1]


def merge_multi_span(spans: Sequence[tuple[int, int]], speakers: Sequence[str]) -> list[tuple[int, int]]:
    """Fuse answer spans separated by a single word.

    ``spans`` are inclusive ranges of meeting-level word positions and
    ``speakers[w]`` is the speaker of word ``w``. Two neighbouring spans are
    joined, gap word included, when exactly one word separates them and that
    word's speaker also speaks inside one of the two spans. One left-to-right
    pass reaches the fixpoint because merging only grows a span's speaker set.
    """
    ordered = sorted((int(s), int(e)) for s, e in spans)
    for (s1, e1), (s2, e2) in zip(ordered, ordered[1:]):
        if s2 <= e1:
            raise MalformedAnnotationError(f"overlapping spans {(s1, e1)} and {(s2, e2)}")
    out: list[tuple[int, int]] = []
    for s, e in ordered:
        if out:
            ps, pe = out[-1]
            gap = pe + 1
            if s == pe + 2:
                owners = set(speakers[ps:pe + 1]) | set(speakers[s:e + 1])
                if speakers[gap] in owners:
                    out[-1] = (ps, e)
                    continue
        out.append((s, e))
    return out


def _is_after_question(utt: int, word: int, q_index: int, after_start: int) -> bool:
    return utt > q_index or (utt == q_index and word >= after_start)


def _trim_before_question(annotations, q_index: int, after_start: int):
    """Per annotation: drop span parts that precede the question's end.

    Returns ``(kept_annotations, n_dropped)``; annotations left without any
    span are dropped.
    """
    kept, dropped = [], 0
    for a in annotations:
        if a.is_unanswerable:
            kept.append(a)
            continue
        spans = []
        for utt, s, e in a.spans:
            if utt < q_index:
                continue
            if utt == q_index:
                s = max(s, after_start)
                if s > e:
                    continue
            spans.append((utt, s, e))
        if spans:
            kept.append(replace(a, spans=tuple(spans)))
        else:
            dropped += 1
    return tuple(kept), dropped


def filter_pre_question_answers(instance: QAInstance) -> QAInstance | None:
    """Remove answers located before the question.

    An annotation whose spans all precede the question is discarded; span
    parts before the question are trimmed from the rest. Returns ``None``
    when no annotation is left.
    """
    kept, dropped = _trim_before_question(instance.annotations, instance.q_index,
                                          instance.suffix.word_offset)
    if not kept:
        return None
    if not dropped and kept == instance.annotations:
        return instance
    return replace(instance, annotations=kept, y_ha=derive_answerability_label(kept))


# -- meeting-level driver -----------------------------------------------------

def preprocess_meeting(
    meeting: Meeting,
    fillers: Iterable[str] = DEFAULT_FILLERS,
    strict: bool = False,
    merge_utterances: bool = True,
) -> tuple[Meeting, CleanReport]:
    """Clean texts, repair annotations and drop unusable questions.

    Order: question positions and annotation offsets are captured on the raw
    text, the text is cleaned and offsets remapped, emptied utterances are
    removed, same-speaker neighbours merged, answers before the question
    excluded, and finally single-word gaps inside multi-span answers closed.
    """
    report = CleanReport()
    tables: dict[int, OffsetTable] = {}
    cleaned: dict[int, str] = {}
    for u in meeting.utterances:
        words = clean_words(u.text, fillers, strict, report)
        tables[u.index] = OffsetTable(words)
        cleaned[u.index] = _join(words)

    questions = []
    for q in meeting.questions:
        u = meeting.utterance(q.utterance_index)
        start = locate_question(u, q.question_text, q.word_start)
        rng = tables[u.index].remap_range(start, start + len(q.question_text.split()) - 1)
        if rng is None:
            report.dropped_instances += 1
            continue
        q_words = cleaned[u.index].split()[rng[0]:rng[1] + 1]
        if not q_words[-1].endswith("?"):
            report.dropped_instances += 1
            continue
        annotations = []
        for a in q.annotations:
            if a.is_unanswerable:
                annotations.append(a)
                continue
            spans = []
            for utt, s, e in a.spans:
                new = tables[utt].remap_range(s, e)
                if new is not None:
                    spans.append((utt, *new))
            if spans:
                annotations.append(replace(a, spans=tuple(spans)))
            else:
                report.dropped_annotations += 1
        if q.annotations and not annotations:
            report.dropped_instances += 1
            continue
        questions.append(replace(q, question_text=" ".join(q_words), word_start=rng[0],
                                 annotations=tuple(annotations)))

    # drop utterances emptied by cleaning and renumber
    renumber: dict[int, int] = {}
    utterances = []
    for u in meeting.utterances:
        if cleaned[u.index]:
            renumber[u.index] = len(utterances) + 1
            utterances.append(Utterance(renumber[u.index], u.speaker, cleaned[u.index]))
    questions = [
        replace(q, utterance_index=renumber[q.utterance_index], annotations=tuple(
            replace(a, spans=tuple((renumber[utt], s, e) for utt, s, e in a.spans))
            for a in q.annotations))
        for q in questions
    ]
    result = Meeting(meeting.meeting_id, tuple(utterances), tuple(questions))
    if merge_utterances:
        result = merge_consecutive_utterances(result)

    offsets, speakers = _global_layout(result)
    questions = []
    for q in result.questions:
        after_start = q.word_start + len(q.question_text.split())
        kept, dropped = _trim_before_question(q.annotations, q.utterance_index, after_start)
        report.dropped_annotations += dropped
        if q.annotations and not kept:
            report.dropped_instances += 1
            continue
        questions.append(replace(q, annotations=tuple(
            _merge_annotation_spans(a, offsets, speakers, report) for a in kept)))
    return Meeting(result.meeting_id, result.utterances, tuple(questions)), report


def _global_layout(meeting: Meeting) -> tuple[dict[int, int], list[str]]:
    offsets, speakers = {}, []
    for u in meeting.utterances:
        offsets[u.index] = len(speakers)
        speakers.extend([u.speaker] * len(u.words))
    return offsets, speakers


def _merge_annotation_spans(a: AnswerAnnotation, offsets, speakers, report: CleanReport) -> AnswerAnnotation:
    if len(a.spans) < 2:
        return a
    flat = [(offsets[utt] + s, offsets[utt] + e) for utt, s, e in a.spans]
    merged = merge_multi_span(flat, speakers)
    if len(merged) == len(flat):
        return a
    report.merged_spans += len(flat) - len(merged)
    starts = sorted(offsets.items(), key=lambda kv: kv[1])
    spans = []
    for gs, ge in merged:
        # split meeting-level spans back into per-utterance pieces
        for k, (utt, off) in enumerate(starts):
            end_off = starts[k + 1][1] - 1 if k + 1 < len(starts) else len(speakers) - 1
            lo, hi = max(gs, off), min(ge, end_off)
            if lo <= hi:
                spans.append((utt, lo - off, hi - off))
    return replace(a, spans=tuple(spans))


def preprocess_meetings(meetings: Iterable[Meeting], **kwargs) -> tuple[list[Meeting], CleanReport]:
    report = CleanReport()
    out = []
    for m in meetings:
        cleaned, r = preprocess_meeting(m, **kwargs)
        report.add(r)
        out.append(cleaned)
    return out, report
