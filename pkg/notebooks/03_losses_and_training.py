"""Walkthrough: the answerability-weighted loss, its gradients and a short training run.

Run with ``python3 notebooks/03_losses_and_training.py`` (about half a minute).
"""

import numpy as np

from meeqa_toolkit import model as M
from meeqa_toolkit import synthetic as S
from meeqa_toolkit.representation import RepresentationMode, Vocabulary, encode_dataset, instance_texts
from meeqa_toolkit.transcript import extract_question_instances

# Two questions, four positions each. The first is answerable at (1, 2), the
# second is not, so its span targets point at position 0 ([CLS]).
pred = M.Predictions.from_probs(
    start=[[0.1, 0.6, 0.2, 0.1], [0.7, 0.1, 0.1, 0.1]],
    end=[[0.1, 0.1, 0.7, 0.1], [0.6, 0.2, 0.1, 0.1]],
    ha=[0.8, 0.3],
)
target = (np.array([1, 0]), np.array([2, 0]), np.array([1, 0]))
w = M.LossWeights(alpha=0.8, beta=0.3, gamma=0.8)
print("full loss:", float(M.loss_fhl(pred, target, w).data))

# Each ablation is the full loss with one weight switched off.
for variant, zeroed in [("no-ha", M.LossWeights(0.0, 0.3, 0.8)), ("no-pse", M.LossWeights(0.8, 0.0, 0.8)),
                        ("no-lse", M.LossWeights(0.8, 0.3, 0.0))]:
    a = float(M.loss_ablation(variant, pred, target, w).data)
    b = float(M.loss_fhl(pred, target, zeroed).data)
    print(f"{variant:>7}: {a:.12f}  (zeroed weight: {b:.12f})")

# Gradients come from a small reverse-mode engine; a central difference on one
# weight agrees with the analytic value.
rng = np.random.default_rng(0)
cfg = M.ModelConfig(vocab_size=12, d=8, n_layers=1, n_heads=2, d_ff=16, l_max=10)
params = M.init_params(cfg, rng)
ids = np.array([[2, 5, 6, 3, 7, 8, 9, 3, 0, 0]])
attn = ids != 0
span = np.zeros_like(attn)
span[0, 4:7] = True
valid = span.copy()
valid[0, 0] = True
batch = M.Batch(ids, attn, valid, span, np.array([4]), np.array([5]), np.array([1]))


def loss_at(arrays):
    leaves = {k: M.Tensor(v) for k, v in arrays.items()}
    return M.compute_loss("fhl", M.forward(leaves, batch, cfg.n_heads), batch, w)


leaves = params.leaves()
grads = M.backward(M.compute_loss("fhl", M.forward(leaves, batch, cfg.n_heads), batch, w), leaves)
h = 1e-5
up = {k: v.copy() for k, v in params.arrays.items()}
down = {k: v.copy() for k, v in params.arrays.items()}
up["w_s"][3] += h
down["w_s"][3] -= h
numeric = (float(loss_at(up).data) - float(loss_at(down).data)) / (2 * h)
print(f"d loss / d w_s[3]: analytic {grads['w_s'][3]:.10f}, numeric {numeric:.10f}")

# Train a small encoder on synthetic meetings where a marker word precedes the answer.
meetings = S.synthetic_corpus(S.SyntheticConfig(n_questions=200, seed=1))
insts = [i for m in meetings for i in extract_question_instances(m)]
mode = RepresentationMode()
vocab = Vocabulary.build(instance_texts(insts, mode))
examples, _ = encode_dataset(insts, mode, vocab, l_max=80)
config = M.TrainConfig(seed=0, lr=1e-2, batch_size=16, epochs=4, d=32, d_ff=64)
_, history = M.train(examples, config, len(vocab), 80,
                     progress=lambda rec: print(f"epoch {rec['epoch']}: mean loss {rec['mean_loss']:.4f}"))
