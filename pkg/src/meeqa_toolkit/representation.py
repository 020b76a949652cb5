"""Model input construction: speakers, rendering, tokenization, layout.

A question becomes ``[CLS] S_B [SEP] S_A [SEP] [PAD]...`` where ``S_B`` is
the text up to and including the question and ``S_A`` the text after it.
Every ``S_A`` token remembers which transcript word it came from, so span
predictions can be scored on meeting word positions.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, replace
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidSpanError, QuestionTooLongError
from .transcript import AnswerAnnotation, QAInstance, Segment, WordIndex

PAD, UNK, CLS, SEP = "[PAD]", "[UNK]", "[CLS]", "[SEP]"
SPECIAL_TOKENS = (PAD, UNK, CLS, SEP)
PAD_ID, UNK_ID, CLS_ID, SEP_ID = range(4)

# segment_mask values
SEG_PAD, SEG_SPECIAL, SEG_B, SEG_A = 0, 1, 2, 3

_TOKEN = re.compile(r"\w+|[^\w\s]")


class SpeakerMode(str, Enum):
    ORIGINAL = "original"
    SWITCH = "switch"


@dataclass(frozen=True)
class RepresentationMode:
    """How utterance boundaries and the question context are written out.

    ``utterance_marker`` is emitted before each speaker token when set (the
    "&" utterance-start token); by default only the speaker token is shown.
    """

    speaker_mode: SpeakerMode = SpeakerMode.SWITCH
    question_k: int = 1
    utterance_marker: str = ""

    def __post_init__(self):
        object.__setattr__(self, "speaker_mode", SpeakerMode(self.speaker_mode))
        if self.question_k not in (0, 1, 2):
            raise ValueError(f"question_k must be 0, 1 or 2, got {self.question_k}")
        if self.question_k and self.speaker_mode is not SpeakerMode.SWITCH:
            raise ValueError("previous-utterance question context requires the switch speaker mode")


def speaker_token(z: int) -> str:
    return f"SPEAKER_{z}"


def normalize_speakers(instance: QAInstance) -> QAInstance:
    """Rename speakers to SPEAKER_Z by first appearance; questioner is 0."""
    names = {instance.questioner: speaker_token(0)}
    for seg in (*instance.before_window, instance.question, *instance.after_window):
        if seg.speaker not in names:
            names[seg.speaker] = speaker_token(len(names))

    def rename(seg: Segment) -> Segment:
        return replace(seg, speaker=names[seg.speaker])

    return replace(
        instance,
        question=rename(instance.question),
        before_window=tuple(map(rename, instance.before_window)),
        after_window=tuple(map(rename, instance.after_window)),
    )


@dataclass(frozen=True)
class Rendered:
    s_b: str
    s_a: str
    # per whitespace word of s_a: its (utterance, word) origin, None for markers
    a_origins: tuple[WordIndex | None, ...]


def render(instance: QAInstance, mode: RepresentationMode) -> Rendered:
    full_before = instance.before_window[:-1]
    context = full_before[len(full_before) - mode.question_k:] if mode.question_k else ()
    b_groups = [[seg] for seg in context] + [[instance.prefix, instance.question]]
    a_groups = [[instance.suffix]] + [[seg] for seg in instance.after_window[1:]]

    prev_speaker = None
    sides = []
    for groups in (b_groups, a_groups):
        words: list[str] = []
        origins: list[WordIndex | None] = []
        for group in groups:
            segs = [s for s in group if s.words]
            if not segs:
                continue
            speaker = segs[0].speaker
            if mode.speaker_mode is SpeakerMode.ORIGINAL or speaker != prev_speaker:
                marker = ([mode.utterance_marker] if mode.utterance_marker else []) + [f"{speaker}:"]
                words.extend(marker)
                origins.extend([None] * len(marker))
            prev_speaker = speaker
            for seg in segs:
                words.extend(seg.words)
                origins.extend(seg.word_positions())
        sides.append((" ".join(words), tuple(origins)))
    (s_b, _), (s_a, a_origins) = sides
    return Rendered(s_b, s_a, a_origins)


def render_sequence(instance: QAInstance, mode: RepresentationMode) -> tuple[str, str]:
    """Return ``(S_B, S_A)`` for an instance whose speakers are normalized."""
    r = render(instance, mode)
    return r.s_b, r.s_a


def tokenize(text: str) -> tuple[list[str], list[int]]:
    """Lowercase, split on whitespace, detach punctuation characters.

    Returns the tokens and, for each token, the index of its source word.
    """
    tokens: list[str] = []
    word_map: list[int] = []
    for i, word in enumerate(text.split()):
        pieces = _TOKEN.findall(word.lower())
        tokens.extend(pieces)
        word_map.extend([i] * len(pieces))
    return tokens, word_map


class Vocabulary:
    """Closed token vocabulary; unknown tokens map to ``[UNK]``."""

    def __init__(self, tokens: Sequence[str]):
        if tuple(tokens[:len(SPECIAL_TOKENS)]) != SPECIAL_TOKENS:
            raise ValueError(f"vocabulary must start with {SPECIAL_TOKENS}")
        self.itos = list(tokens)
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ValueError("duplicate tokens in vocabulary")

    @classmethod
    def build(cls, texts: Iterable[str], min_count: int = 1) -> "Vocabulary":
        counts = Counter(t for text in texts for t in tokenize(text)[0])
        kept = sorted((t for t, c in counts.items() if c >= min_count and t not in SPECIAL_TOKENS),
                      key=lambda t: (-counts[t], t))
        return cls(list(SPECIAL_TOKENS) + kept)

    def __len__(self) -> int:
        return len(self.itos)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.itos == other.itos

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.stoi.get(t, UNK_ID) for t in tokens]

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("".join(t + "\n" for t in self.itos))

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            return cls([line.rstrip("\n") for line in fh])


@dataclass(eq=False)
class EncodedInput:
    token_ids: np.ndarray  # (L_max,) int
    segment_mask: np.ndarray  # SEG_* per position
    attention_mask: np.ndarray  # bool, False on padding
    word_ids: np.ndarray  # S_A word index per token, -1 outside S_A
    a_origins: tuple[WordIndex | None, ...]
    y_s: int = 0
    y_e: int = 0
    y_ha: int | None = None
    question_id: str | None = None
    gold_truncated: bool = False
    a_truncated: bool = False
    cls_index: int = 0

    @property
    def span_mask(self) -> np.ndarray:
        """Positions a predicted span may cover (the S_A segment)."""
        return self.segment_mask == SEG_A

    @property
    def valid_mask(self) -> np.ndarray:
        """Positions the start/end distributions range over: S_A and [CLS]."""
        mask = self.span_mask.copy()
        mask[self.cls_index] = True
        return mask

    @property
    def tokens_of_word(self) -> dict[int, tuple[int, int]]:
        out: dict[int, tuple[int, int]] = {}
        for pos in np.flatnonzero(self.word_ids >= 0):
            w = int(self.word_ids[pos])
            first, _ = out.get(w, (int(pos), int(pos)))
            out[w] = (first, int(pos))
        return out


def assemble_input(
    s_b: str,
    s_a: str,
    vocab: Vocabulary,
    gold_span: tuple[int, int] | None = None,
    l_max: int = 512,
    a_origins: Sequence[WordIndex | None] | None = None,
    y_ha: int | None = None,
    question_id: str | None = None,
) -> EncodedInput:
    """Lay out ``[CLS] S_B [SEP] S_A [SEP]`` and pad to ``l_max``.

    ``gold_span`` is an inclusive range of S_A word indices. S_B is never
    truncated; the tail of S_A is. If the gold start falls outside the kept
    tokens the targets point at [CLS]; a gold end past the cut is clipped to
    the last kept token.
    """
    b_tokens, _ = tokenize(s_b)
    a_tokens, a_map = tokenize(s_a)
    room = l_max - len(b_tokens) - 3
    if room < 0:
        raise QuestionTooLongError(
            f"S_B has {len(b_tokens)} tokens; at most {l_max - 3} fit in {l_max}"
        )
    a_truncated = len(a_tokens) > room
    a_tokens, a_map = a_tokens[:room], a_map[:room]

    ids = [CLS_ID, *vocab.encode(b_tokens), SEP_ID, *vocab.encode(a_tokens), SEP_ID]
    seg = [SEG_SPECIAL] + [SEG_B] * len(b_tokens) + [SEG_SPECIAL] + [SEG_A] * len(a_tokens) + [SEG_SPECIAL]
    a_start = len(b_tokens) + 2
    word_ids = np.full(l_max, -1, dtype=np.int64)
    word_ids[a_start:a_start + len(a_map)] = a_map
    n = len(ids)
    token_ids = np.full(l_max, PAD_ID, dtype=np.int64)
    token_ids[:n] = ids
    segment_mask = np.full(l_max, SEG_PAD, dtype=np.int8)
    segment_mask[:n] = seg
    attention_mask = np.zeros(l_max, dtype=bool)
    attention_mask[:n] = True

    if a_origins is None:
        a_origins = tuple((0, i) for i in range(len(s_a.split())))
    encoded = EncodedInput(token_ids, segment_mask, attention_mask, word_ids, tuple(a_origins),
                           y_ha=y_ha, question_id=question_id, a_truncated=a_truncated)
    if gold_span is not None:
        ws, we = gold_span
        if not 0 <= ws <= we:
            raise InvalidSpanError(f"bad gold word range {gold_span}")
        hits_s = np.flatnonzero(word_ids == ws)
        if hits_s.size == 0:
            encoded.gold_truncated = True
        else:
            hits_e = np.flatnonzero(word_ids == we)
            encoded.y_s = int(hits_s[0])
            encoded.y_e = int(hits_e[-1]) if hits_e.size else a_start + len(a_map) - 1
    return encoded


def tokens_to_word_indices(encoded: EncodedInput, token_range: tuple[int, int]) -> frozenset[WordIndex]:
    """Meeting word positions covered by an inclusive S_A token range."""
    i, j = token_range
    if i > j or i < 0 or j >= len(encoded.token_ids) or not encoded.span_mask[i:j + 1].all():
        raise InvalidSpanError(f"token range {token_range} leaves the S_A segment")
    out = set()
    for w in encoded.word_ids[i:j + 1]:
        origin = encoded.a_origins[int(w)]
        if origin is not None:
            out.add(origin)
    return frozenset(out)


def gold_word_range(words: frozenset[WordIndex], a_origins: Sequence[WordIndex | None]) -> tuple[int, int] | None:
    """Smallest S_A word range covering the gold positions present in S_A."""
    hits = [i for i, o in enumerate(a_origins) if o is not None and o in words]
    if not hits:
        return None
    return hits[0], hits[-1]


def encode_instance(
    instance: QAInstance,
    mode: RepresentationMode,
    vocab: Vocabulary,
    l_max: int = 512,
    annotation: AnswerAnnotation | None = None,
) -> EncodedInput:
    """Normalize, render and assemble one instance.

    With ``annotation`` the targets come from that single judge (training
    pairs); otherwise targets stay at [CLS] and ``y_ha`` is the majority label.
    """
    rendered = render(normalize_speakers(instance), mode)
    if annotation is None:
        y_ha = None if instance.y_ha is None else int(instance.y_ha)
        span = None
    else:
        y_ha = int(not annotation.is_unanswerable)
        span = gold_word_range(annotation.word_set(), rendered.a_origins) if y_ha else None
    encoded = assemble_input(rendered.s_b, rendered.s_a, vocab, span, l_max,
                             rendered.a_origins, y_ha, instance.question_id)
    if y_ha and span is None:
        encoded.gold_truncated = True
    return encoded


@dataclass
class EncodeReport:
    encoded: int = 0
    skipped_too_long: int = 0
    gold_truncated: int = 0
    skipped_ids: list[str] | None = None


def encode_dataset(
    instances: Iterable[QAInstance],
    mode: RepresentationMode,
    vocab: Vocabulary,
    l_max: int = 512,
    per_annotation: bool = True,
) -> tuple[list[EncodedInput], EncodeReport]:
    """Encode instances; one training example per (question, annotation) pair.

    Questions whose S_B alone does not fit are skipped and counted.
    """
    report = EncodeReport(skipped_ids=[])
    out = []
    for inst in instances:
        targets = inst.annotations if per_annotation else (None,)
        for ann in targets:
            try:
                enc = encode_instance(inst, mode, vocab, l_max, ann)
            except QuestionTooLongError:
                report.skipped_too_long += 1
                report.skipped_ids.append(inst.question_id)
                break
            report.encoded += 1
            report.gold_truncated += enc.gold_truncated
            out.append(enc)
    return out, report


def instance_texts(instances: Iterable[QAInstance], mode: RepresentationMode) -> Iterable[str]:
    """All rendered text of the instances, for vocabulary building."""
    for inst in instances:
        r = render(normalize_speakers(inst), mode)
        yield r.s_b
        yield r.s_a
