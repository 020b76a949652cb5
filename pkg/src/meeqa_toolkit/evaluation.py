"""Index-level EM/F1, answerability-aware question scores, agreement.

Answers are compared as sets of meeting word positions ``(utterance,
word)``. A prediction of "no answer" is the empty set, as is the gold set of
an unanswerable annotation.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import AlignmentError, MissingAnnotationError
from .transcript import AnswerAnnotation, QAInstance, WordIndex, derive_answerability_label

log = logging.getLogger(__name__)

WordSet = frozenset  # of WordIndex
SPLITS = ("All", "HasAns", "NoAns")


@dataclass(frozen=True)
class Prediction:
    """Final answer for one question; ``words is None`` means no answer."""

    question_id: str
    words: frozenset[WordIndex] | None
    p_best: float | None = None
    y_hat_ha: float | None = None

    @property
    def is_no_answer(self) -> bool:
        return not self.words


def _as_set(words) -> frozenset:
    return frozenset() if words is None else frozenset(words)


def f1_indices(pred, gold) -> float:
    """F1 over word positions; two empty sets agree (1.0), one empty gives 0."""
    pred, gold = _as_set(pred), _as_set(gold)
    if not pred or not gold:
        return float(pred == gold)
    common = len(pred & gold)
    if common == 0:
        return 0.0
    precision = common / len(pred)
    recall = common / len(gold)
    return 2 * precision * recall / (precision + recall)


def exact_match(pred, gold) -> int:
    return int(_as_set(pred) == _as_set(gold))


def _per_annotation(pred, annotations: Sequence[AnswerAnnotation]) -> list[tuple[int, float]]:
    return [(exact_match(pred, a.word_set()), f1_indices(pred, a.word_set())) for a in annotations]


def question_score(pred, annotations: Sequence[AnswerAnnotation]) -> tuple[int, float]:
    """Best EM and F1 of ``pred`` against any annotation.

    A question that at least half the judges marked unanswerable scores
    1 when no answer is predicted and 0 otherwise.
    """
    if not annotations:
        raise MissingAnnotationError("question has no annotations")
    if not derive_answerability_label(annotations):
        hit = int(not _as_set(pred))
        return hit, float(hit)
    scores = _per_annotation(pred, annotations)
    return max(s[0] for s in scores), max(s[1] for s in scores)


def human_comparable_score(pred, annotations: Sequence[AnswerAnnotation]) -> tuple[float, float]:
    """Mean over the ``n`` leave-one-out subsets of the best subset score.

    The answerability of the question is decided once on all ``n``
    annotations, so the result never exceeds :func:`question_score`.
    """
    n = len(annotations)
    if n < 2:
        log.warning("human-comparable score needs two annotations; using the plain question score")
        em, f1 = question_score(pred, annotations)
        return float(em), f1
    if not derive_answerability_label(annotations):
        em, f1 = question_score(pred, annotations)
        return float(em), f1
    scores = _per_annotation(pred, annotations)
    ems, f1s = [], []
    for left_out in range(n):
        rest = scores[:left_out] + scores[left_out + 1:]
        ems.append(max(s[0] for s in rest))
        f1s.append(max(s[1] for s in rest))
    return float(np.mean(ems)), float(np.mean(f1s))


# -- agreement ----------------------------------------------------------------

def krippendorff_alpha(data) -> float:
    """Krippendorff's alpha for nominal data.

    ``data`` is either a judges x units array (``nan`` where a judge did not
    code a unit) or an iterable of per-unit value lists. Units with fewer
    than two values are not pairable and are ignored.
    """
    units = _units(data)
    values = sorted({v for u in units for v in u})
    index = {v: i for i, v in enumerate(values)}
    o = np.zeros((len(values), len(values)))
    for u in units:
        m = len(u)
        if m < 2:
            continue
        counts = np.zeros(len(values))
        for v in u:
            counts[index[v]] += 1
        o += (np.outer(counts, counts) - np.diag(counts)) / (m - 1)
    n_c = o.sum(axis=1)
    n = n_c.sum()
    if n < 2:
        raise ValueError("no pairable values: need units coded by at least two judges")
    d_o = o.sum() - np.trace(o)
    d_e = (np.outer(n_c, n_c).sum() - (n_c * n_c).sum()) / (n - 1)
    if d_e == 0:
        log.warning("all pairable values identical; alpha defined as 1")
        return 1.0
    return float(1.0 - d_o / d_e)


def _units(data) -> list[list]:
    if isinstance(data, np.ndarray) and data.ndim == 2:
        return [[v for v in col if not np.isnan(v)] for col in data.T.astype(float)]
    return [list(u) for u in data]


def agreement_units(instances: Iterable[QAInstance]) -> list[list[int]]:
    """Binary word-inclusion judgments for every word after each question."""
    units = []
    for inst in instances:
        if len(inst.annotations) < 2:
            continue
        sets = [a.word_set() for a in inst.annotations]
        for pos in inst.after_positions():
            units.append([int(pos in s) for s in sets])
    return units


def corpus_alpha(instances: Iterable[QAInstance]) -> float:
    return krippendorff_alpha(agreement_units(instances))


# -- baseline -----------------------------------------------------------------

def first_utterance_baseline(instance: QAInstance, use_suffix: bool = False) -> Prediction:
    """Predict every word of the first full utterance after the question.

    With ``use_suffix`` the rest of the question utterance is used instead
    when it is not empty.
    """
    candidates = list(instance.after_window) if use_suffix else list(instance.after_window[1:])
    for seg in candidates:
        if seg.words:
            return Prediction(instance.question_id, frozenset(seg.word_positions()), 1.0, 1.0)
    log.warning("question %s: nothing after the question, predicting no answer", instance.question_id)
    return Prediction(instance.question_id, None, 0.0, 0.0)


# -- reports ------------------------------------------------------------------

@dataclass
class SplitScore:
    em: float | None
    f1: float | None
    count: int


@dataclass
class EvalReport:
    splits: dict[str, SplitScore]
    mode: str = "standard"
    per_question: list[dict] | None = field(default=None)

    def __getitem__(self, split: str) -> SplitScore:
        return self.splits[split]

    def to_dict(self) -> dict:
        out = {"mode": self.mode,
               "splits": {k: {"em": s.em, "f1": s.f1, "count": s.count} for k, s in self.splits.items()}}
        if self.per_question is not None:
            out["per_question"] = self.per_question
        return out

    def format_table(self) -> str:
        head = f"{'':>8}" + "".join(f"{name:>16}" for name in ("All Data", "HasAns", "NoAns"))
        sub = f"{'':>8}" + "".join(f"{'EM':>8}{'F1':>8}" for _ in SPLITS)

        def fmt(x):
            return f"{'-':>8}" if x is None else f"{x:8.1f}"

        row = f"{'score':>8}" + "".join(fmt(self.splits[s].em) + fmt(self.splits[s].f1) for s in SPLITS)
        count = f"{'n':>8}" + "".join(f"{self.splits[s].count:>16d}" for s in SPLITS)
        return "\n".join([head, sub, row, count])


def _pred_words(predictions) -> dict[str, frozenset | None]:
    if isinstance(predictions, Mapping):
        return {str(k): (v.words if isinstance(v, Prediction) else v) for k, v in predictions.items()}
    out = {}
    for p in predictions:
        if p.question_id in out:
            raise AlignmentError(f"duplicate prediction for {p.question_id}")
        out[p.question_id] = p.words
    return out


def evaluate(predictions, dataset: Sequence[QAInstance], mode: str = "standard",
             per_question: bool = False) -> EvalReport:
    """Macro-averaged EM/F1 (x100) over All / HasAns / NoAns questions.

    ``mode`` is ``"standard"`` (best over all annotations) or
    ``"human_comparable"`` (leave-one-out subset averaging).
    """
    mode = mode.replace("-", "_")
    if mode not in ("standard", "human_comparable"):
        raise ValueError(f"unknown evaluation mode {mode!r}")
    preds = _pred_words(predictions)
    gold_ids = [inst.question_id for inst in dataset]
    missing = [q for q in gold_ids if q not in preds]
    extra = sorted(set(preds) - set(gold_ids))
    if missing or extra:
        first = missing[0] if missing else extra[0]
        kind = "no prediction for" if missing else "prediction without gold question"
        raise AlignmentError(f"{kind} {first}")
    if len(set(gold_ids)) != len(gold_ids):
        raise AlignmentError("duplicate question ids in gold data")

    score = question_score if mode == "standard" else human_comparable_score
    rows = {s: [] for s in SPLITS}
    details = []
    for inst in dataset:
        em, f1 = score(preds[inst.question_id], inst.annotations)
        has_ans = derive_answerability_label(inst.annotations)
        split = "HasAns" if has_ans else "NoAns"
        rows["All"].append((em, f1))
        rows[split].append((em, f1))
        if per_question:
            details.append({"question_id": inst.question_id, "split": split, "em": float(em), "f1": float(f1)})
    splits = {}
    for name, vals in rows.items():
        if vals:
            arr = np.asarray(vals, dtype=float)
            splits[name] = SplitScore(100.0 * arr[:, 0].mean(), 100.0 * arr[:, 1].mean(), len(vals))
        else:
            splits[name] = SplitScore(None, None, 0)
    return EvalReport(splits, mode, details if per_question else None)
