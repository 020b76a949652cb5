"""Walkthrough: from start/end scores to answers, then to EM/F1 and agreement.

Run with ``python3 notebooks/04_decision_and_evaluation.py``.
"""

import numpy as np

from meeqa_toolkit import decision as D
from meeqa_toolkit import evaluation as E
from meeqa_toolkit import synthetic as S
from meeqa_toolkit.transcript import AnswerAnnotation, extract_question_instances

# Candidate spans are all (i, j) with i <= j and at most m tokens; each scores
# start[i] + end[j], and P_best is the softmax weight of the top one.
start = np.array([1.0, 2.0, 0.0])
end = np.array([0.0, 1.0, 3.0])
cands = D.candidate_scores(start, end, np.ones(3, bool), m=3)
for i, j, s in zip(*cands):
    print(f"  span ({i}, {j}) score {s}")
print("best and P_best:", D.best_span_probability(cands))

# No answer only when both the answerability probability and P_best are at or
# below their thresholds.
cfg = D.DecisionConfig(tau1=0.6, tau2=0.8, m=200)
for y_ha in (0.5, 0.9):
    print(f"y_ha={y_ha}:", D.decide(start, end, np.ones(3, bool), y_ha, cfg).verdict)

# Word-position F1 and the majority rule for unanswerable questions.
print("F1 of {5..9} vs {7..11}:", E.f1_indices({(1, w) for w in range(5, 10)}, {(1, w) for w in range(7, 12)}))
anns = [AnswerAnnotation("a", ((2, 0, 1),)), AnswerAnnotation("b", ((2, 0, 5),)), AnswerAnnotation("c", ((2, 8, 9),))]
pred = {(2, 0), (2, 1)}
print("best over judges:", E.question_score(pred, anns))
print("leave-one-out average:", E.human_comparable_score(pred, anns))

# Whole-corpus reports: the first-utterance baseline against NoAnswer-always.
meetings = S.synthetic_corpus(S.SyntheticConfig(n_questions=200, unanswerable_rate=0.25, n_judges=3,
                                                dissent_rate=0.3, seed=2))
dev = [i for m in meetings for i in extract_question_instances(m)]
print("\nfirst utterance baseline")
print(E.evaluate([E.first_utterance_baseline(i) for i in dev], dev).format_table())
print("\nalways NoAnswer")
print(E.evaluate([E.Prediction(i.question_id, None) for i in dev], dev).format_table())

# Agreement between the three synthetic judges over every word after each question.
print("\nKrippendorff alpha:", round(E.corpus_alpha(dev), 3))
