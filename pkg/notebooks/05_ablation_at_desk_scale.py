"""Walkthrough: full loss against the model without the answerability term.

Both models train on the same 2,000-question synthetic corpus, tune their
thresholds on dev and are scored on test. Takes about a minute on one core.
Run with ``python3 notebooks/05_ablation_at_desk_scale.py``.
"""

import time

from meeqa_toolkit import decision as D
from meeqa_toolkit import evaluation as E
from meeqa_toolkit import model as M
from meeqa_toolkit import synthetic as S
from meeqa_toolkit.representation import RepresentationMode, Vocabulary, encode_dataset, instance_texts
from meeqa_toolkit.transcript import extract_question_instances

L_MAX = 80
meetings = S.synthetic_corpus(S.SyntheticConfig(n_questions=2000, unanswerable_rate=0.3, seed=0))
insts = [i for m in meetings for i in extract_question_instances(m)]
train, dev, test = S.split(insts)
mode = RepresentationMode()
vocab = Vocabulary.build(instance_texts(train, mode))
enc_train, _ = encode_dataset(train, mode, vocab, L_MAX)
enc_dev, _ = encode_dataset(dev, mode, vocab, L_MAX, per_annotation=False)
enc_test, _ = encode_dataset(test, mode, vocab, L_MAX, per_annotation=False)

for loss in ("fhl", "no-ha"):
    t0 = time.perf_counter()
    cfg = M.TrainConfig(seed=0, lr=3e-3, batch_size=16, epochs=4, loss=loss)
    params, _ = M.train(enc_train, cfg, len(vocab), L_MAX)
    raw_dev, raw_test = M.predict_raw(params, enc_dev), M.predict_raw(params, enc_test)
    tuned = D.tune_decision(raw_dev, dev)
    mean_ha = sum(r.y_hat_ha for r in raw_test) / len(raw_test)
    print(f"\n{loss}: tuned {tuned.best}, mean answerability on test {mean_ha:.3f}, "
          f"{time.perf_counter() - t0:.0f}s")
    print(E.evaluate(D.decide_all(raw_test, tuned.best), test).format_table())
