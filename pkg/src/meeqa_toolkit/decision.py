"""Turn head outputs into a final answer, and tune the decision thresholds.

A candidate span ``(i, j)`` lies inside S_A with ``i <= j`` and at most
``m`` tokens; its score is ``start_logit[i] + end_logit[j]``. ``P_best`` is
the softmax weight of the best candidate among all candidates. The question
is declared unanswerable when both ``y_hat_ha <= tau1`` and
``P_best <= tau2``.
"""

from __future__ import annotations

import itertools
import json
import logging
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import ConfigError, MalformedInputError, NoCandidateError
from .evaluation import Prediction, evaluate
from .representation import tokens_to_word_indices
from .transcript import QAInstance, WordIndex

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DecisionConfig:
    tau1: float = 0.6
    tau2: float = 0.8
    m: int = 200

    def __post_init__(self):
        if not (0.0 <= self.tau1 <= 1.0 and 0.0 <= self.tau2 <= 1.0):
            raise ConfigError(f"thresholds must lie in [0, 1], got {self.tau1}, {self.tau2}")
        if int(self.m) != self.m or self.m < 1:
            raise ConfigError(f"maximum answer length must be a positive integer, got {self.m}")


@dataclass(frozen=True)
class DecisionGrid:
    tau1: tuple[float, ...] = (0.6, 0.7)
    tau2: tuple[float, ...] = (0.8, 0.9)
    m: tuple[int, ...] = (200, 250)

    def configs(self) -> list[DecisionConfig]:
        """All combinations in ascending lexicographic (tau1, tau2, m) order."""
        return [DecisionConfig(a, b, c)
                for a, b, c in itertools.product(sorted(self.tau1), sorted(self.tau2), sorted(self.m))]


class Candidates(NamedTuple):
    starts: np.ndarray
    ends: np.ndarray
    scores: np.ndarray


@dataclass(frozen=True)
class SpanPrediction:
    """Decision for one question. ``span`` is an inclusive token range or None."""

    span: tuple[int, int] | None
    p_best: float
    y_hat_ha: float
    best_span: tuple[int, int] | None = None

    @property
    def verdict(self) -> str:
        return "NoAnswer" if self.span is None else "Span"


def candidate_scores(start_logits, end_logits, valid_mask, m: int) -> Candidates:
    """Every admissible ``(i, j)`` with its score, ordered by ``i`` then ``j``."""
    if m < 1:
        raise ConfigError(f"maximum answer length must be >= 1, got {m}")
    start_logits = np.asarray(start_logits, dtype=np.float64)
    end_logits = np.asarray(end_logits, dtype=np.float64)
    pos = np.flatnonzero(np.asarray(valid_mask, dtype=bool))
    a, b = np.triu_indices(len(pos))
    i, j = pos[a], pos[b]
    keep = (j - i + 1) <= m
    i, j = i[keep], j[keep]
    return Candidates(i, j, start_logits[i] + end_logits[j])


def best_span_probability(candidates: Candidates) -> tuple[tuple[int, int], float]:
    """Best candidate and its softmax probability among all candidates.

    Ties go to the earliest start, then the earliest end.
    """
    scores = candidates.scores
    if scores.size == 0:
        raise NoCandidateError("no admissible answer span")
    k = int(np.argmax(scores))
    top = scores[k]
    p_best = 1.0 / float(np.exp(scores - top).sum())
    return (int(candidates.starts[k]), int(candidates.ends[k])), p_best


def decide(start_logits, end_logits, span_mask, y_hat_ha: float, config: DecisionConfig) -> SpanPrediction:
    cands = candidate_scores(start_logits, end_logits, span_mask, config.m)
    best, p_best = best_span_probability(cands)
    no_answer = y_hat_ha <= config.tau1 and p_best <= config.tau2
    return SpanPrediction(None if no_answer else best, p_best, float(y_hat_ha), best)


def decide_raw(raw, config: DecisionConfig) -> Prediction:
    """Word-level prediction from a model output (``model.RawPrediction``)."""
    sp = decide(raw.start_logits, raw.end_logits, raw.span_mask, raw.y_hat_ha, config)
    words = None if sp.span is None else tokens_to_word_indices(raw.encoded, sp.span)
    return Prediction(raw.question_id, words, sp.p_best, sp.y_hat_ha)


def decide_all(raws: Iterable, config: DecisionConfig) -> list[Prediction]:
    return [decide_raw(r, config) for r in raws]


# -- tuning -------------------------------------------------------------------

@dataclass(frozen=True)
class TuneResult:
    best: DecisionConfig
    table: tuple[tuple[DecisionConfig, float], ...]


def tune_decision(dev_raw: Sequence, gold: Sequence[QAInstance],
                  grid: DecisionGrid | None = None, fixed: Sequence[Prediction] = ()) -> TuneResult:
    """Pick the configuration with the highest All-data F1 on ``gold``.

    Ties keep the lexicographically smallest ``(tau1, tau2, m)``. ``fixed``
    holds predictions that do not depend on the decision (for instance
    questions that could not be encoded).
    """
    if not dev_raw or not gold:
        raise ConfigError("cannot tune the decision on an empty development set")
    grid = grid or DecisionGrid()
    table = []
    best, best_f1 = None, -np.inf
    for cfg in grid.configs():
        f1 = evaluate(decide_all(dev_raw, cfg) + list(fixed), gold)["All"].f1
        table.append((cfg, f1))
        if f1 > best_f1:
            best, best_f1 = cfg, f1
    log.info("decision tuned to %s (All F1 %.2f)", best, best_f1)
    return TuneResult(best, tuple(table))


# -- predictions file ---------------------------------------------------------

def word_set_to_spans(words) -> list[list[int]]:
    """Compress a set of positions into inclusive ``[utt, start, end]`` runs."""
    spans: list[list[int]] = []
    for utt, w in sorted(words or ()):
        if spans and spans[-1][0] == utt and spans[-1][2] == w - 1:
            spans[-1][2] = w
        else:
            spans.append([utt, w, w])
    return spans


def spans_to_word_set(spans) -> frozenset[WordIndex]:
    return frozenset((int(u), w) for u, s, e in spans for w in range(int(s), int(e) + 1))


def prediction_to_record(p: Prediction) -> dict:
    return {
        "question_id": p.question_id,
        "verdict": "NoAnswer" if p.is_no_answer else "Span",
        "span_words": None if p.is_no_answer else word_set_to_spans(p.words),
        "p_best": p.p_best,
        "y_hat_ha": p.y_hat_ha,
    }


def write_predictions(predictions: Iterable[Prediction], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in predictions:
            fh.write(json.dumps(prediction_to_record(p), sort_keys=True) + "\n")


def read_predictions(path) -> list[Prediction]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                if rec["verdict"] not in ("NoAnswer", "Span"):
                    raise ValueError(f"unknown verdict {rec['verdict']!r}")
                spans = rec.get("span_words") if rec["verdict"] == "Span" else None
                words = spans_to_word_set(spans) if spans else None
                out.append(Prediction(str(rec["question_id"]), words or None,
                                      rec.get("p_best"), rec.get("y_hat_ha")))
            except (ValueError, KeyError, TypeError) as exc:
                raise MalformedInputError(f"bad prediction record: {exc}", lineno) from exc
    return out
