"""Seeded synthetic meetings for desk-scale experiments.

Each meeting has one question. In answerable meetings a marker word appears
in one of the two utterances after the question and the answer is the run
of words that follows it, up to and including the first word ending in a
period. Unanswerable meetings have no marker anywhere after the question.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .transcript import AnswerAnnotation, Meeting, Question, Utterance

WORDS = (
    "agenda budget council motion report county policy member vote staff "
    "office review plan item issue board public notice project school "
    "housing road water park library fund program service contract permit "
    "hearing district meeting session matter proposal record detail option"
).split()
SPEAKERS = ("CHAIR", "CLERK", "MEMBER", "DIRECTOR")


@dataclass(frozen=True)
class SyntheticConfig:
    n_questions: int = 2000
    unanswerable_rate: float = 0.3
    n_judges: int = 1
    dissent_rate: float = 0.0  # chance one judge disagrees with the others
    marker: str = "marker"
    max_answer_words: int = 4
    seed: int = 0


def _phrase(rng, lo: int, hi: int) -> list[str]:
    return [WORDS[i] for i in rng.integers(0, len(WORDS), size=int(rng.integers(lo, hi + 1)))]


def _sentence(rng, lo=2, hi=5, end=".") -> list[str]:
    words = _phrase(rng, lo, hi)
    words[-1] += end
    return words


def _meeting(rng, idx: int, answerable: bool, cfg: SyntheticConfig) -> Meeting:
    asker, other, third = (SPEAKERS[i] for i in rng.permutation(len(SPEAKERS))[:3])
    u1 = _sentence(rng)
    prefix = _sentence(rng, 1, 3) if rng.random() < 0.5 else []
    question = _sentence(rng, 2, 4, "?")
    suffix = _sentence(rng, 1, 3) if rng.random() < 0.3 else []
    after = [_phrase(rng, 1, 4) + _sentence(rng), _phrase(rng, 1, 4) + _sentence(rng)]
    answer_at = None
    if answerable:
        target = int(rng.integers(0, 2))
        answer = _sentence(rng, 1, cfg.max_answer_words)
        words = after[target]
        cut = int(rng.integers(0, len(words) + 1))
        after[target] = words[:cut] + [cfg.marker] + answer + words[cut:]
        answer_at = (target, cut + 1, cut + len(answer))
    utts = [
        Utterance(1, other, " ".join(u1)),
        Utterance(2, asker, " ".join(prefix + question + suffix)),
        Utterance(3, other, " ".join(after[0])),
        Utterance(4, third, " ".join(after[1])),
    ]
    if answer_at is None:
        gold = AnswerAnnotation("j0", (), True)
        alt = AnswerAnnotation("j0", ((3, 0, len(after[0]) - 1),), False)
    else:
        t, s, e = answer_at
        gold = AnswerAnnotation("j0", ((3 + t, s, e),), False)
        alt = AnswerAnnotation("j0", (), True)
    annotations = []
    dissenter = int(rng.integers(0, cfg.n_judges)) if (cfg.n_judges >= 3 and rng.random() < cfg.dissent_rate) else -1
    for j in range(cfg.n_judges):
        base = alt if j == dissenter else gold
        annotations.append(AnswerAnnotation(f"j{j}", base.spans, base.is_unanswerable))
    q = Question(f"syn-{idx}", 2, " ".join(question), tuple(annotations), word_start=len(prefix))
    return Meeting(f"synmeet-{idx}", tuple(utts), (q,))


def synthetic_corpus(cfg: SyntheticConfig = SyntheticConfig()) -> list[Meeting]:
    """``cfg.n_questions`` meetings; exactly ``round(rate * n)`` are unanswerable."""
    rng = np.random.default_rng(cfg.seed)
    n_unans = int(round(cfg.unanswerable_rate * cfg.n_questions))
    flags = np.ones(cfg.n_questions, dtype=bool)
    flags[:n_unans] = False
    rng.shuffle(flags)
    return [_meeting(rng, i, bool(a), cfg) for i, a in enumerate(flags)]


def split(items: Sequence, fractions=(0.8, 0.1, 0.1)) -> tuple[list, ...]:
    """Contiguous train/dev/test split (the corpus is already shuffled)."""
    n = len(items)
    cuts = np.cumsum([int(round(f * n)) for f in fractions[:-1]])
    bounds = [0, *cuts, n]
    return tuple(list(items[a:b]) for a, b in zip(bounds[:-1], bounds[1:]))
