"""Shared oracles and toy-data builders for the test suite."""

import math

import numpy as np

from meeqa_toolkit import model as M

VARIANTS = [M.LossVariant.FHL, M.LossVariant.NO_HA, M.LossVariant.NO_PSE, M.LossVariant.NO_LSE]


def toy_batch(rng, vocab_size, n, batch_size):
    """Random ``[CLS] b.. [SEP] a.. [SEP] pad..`` rows with valid targets."""
    ids = np.zeros((batch_size, n), dtype=np.int64)
    attn = np.zeros((batch_size, n), dtype=bool)
    span = np.zeros((batch_size, n), dtype=bool)
    y_s = np.zeros(batch_size, dtype=np.int64)
    y_e = np.zeros(batch_size, dtype=np.int64)
    y_ha = rng.integers(0, 2, size=batch_size)
    for b in range(batch_size):
        length = int(rng.integers(5, n + 1))
        n_b = int(rng.integers(1, length - 3))
        ids[b, :length] = rng.integers(4, vocab_size, size=length)
        ids[b, 0] = 2
        ids[b, n_b + 1] = 3
        ids[b, length - 1] = 3
        attn[b, :length] = True
        span[b, n_b + 2:length - 1] = True
        if y_ha[b]:
            pos = np.flatnonzero(span[b])
            i, j = sorted(rng.choice(pos, size=2))
            y_s[b], y_e[b] = i, j
    valid = span.copy()
    valid[:, 0] = True
    return M.Batch(ids, attn, valid, span, y_s, y_e, y_ha)


def random_config(rng):
    d = int(rng.choice([4, 8, 16]))
    heads = int(rng.choice([h for h in (1, 2, 4) if d % h == 0]))
    return M.ModelConfig(vocab_size=int(rng.integers(6, 12)), d=d, n_layers=int(rng.integers(0, 3)),
                         n_heads=heads, d_ff=int(rng.choice([4, 8, 16])), l_max=12)


def random_weights(rng):
    return M.LossWeights(*(float(x) for x in rng.uniform(0.05, 1.0, size=3)))


def all_losses(arrays, config, batch, weights):
    leaves = {k: M.Tensor(v) for k, v in arrays.items()}
    pred = M.forward(leaves, batch, config.n_heads)
    return {v: float(M.compute_loss(v, pred, batch, weights).data) for v in VARIANTS}


def finite_difference_check(params, batch, weights, rng, n_coords=20, h=1e-4):
    """Max relative error between analytic and central-difference gradients.

    Relative error is ``|a - n| / max(|a|, |n|, 1e-6)``; one perturbed
    forward pass serves all four loss variants.
    """
    analytic = {}
    for v in VARIANTS:
        leaves = params.leaves()
        pred = M.forward(leaves, batch, params.config.n_heads)
        analytic[v] = M.backward(M.compute_loss(v, pred, batch, weights), leaves)
    names = sorted(params.arrays)
    worst = 0.0
    for _ in range(n_coords):
        name = names[int(rng.integers(len(names)))]
        idx = tuple(int(rng.integers(s)) for s in params.arrays[name].shape)
        plus = {k: a.copy() for k, a in params.arrays.items()}
        minus = {k: a.copy() for k, a in params.arrays.items()}
        plus[name][idx] += h
        minus[name][idx] -= h
        fp = all_losses(plus, params.config, batch, weights)
        fm = all_losses(minus, params.config, batch, weights)
        for v in VARIANTS:
            num = (fp[v] - fm[v]) / (2 * h)
            ana = float(analytic[v][name][idx])
            worst = max(worst, abs(ana - num) / max(abs(ana), abs(num), 1e-6))
    return worst


def gelu(x):
    return 0.5 * x * (1.0 + math.tanh(math.sqrt(2.0 / math.pi) * (x + 0.044715 * x ** 3)))


def layer_norm(row, g, b, eps=1e-5):
    mu = sum(row) / len(row)
    var = sum((x - mu) ** 2 for x in row) / len(row)
    return [(x - mu) / math.sqrt(var + eps) * gi + bi for x, gi, bi in zip(row, g, b)]


def reference_encoder(arrays, ids, n_heads):
    """Token-by-token pre-LN transformer written with Python scalars."""
    A = {k: np.asarray(v).tolist() for k, v in arrays.items()}
    d = len(A["w_s"])
    dh = d // n_heads
    n_layers = sum(1 for k in A if k.endswith(".wq"))

    def affine(row, w, b):
        return [sum(row[i] * w[i][j] for i in range(len(row))) + b[j] for j in range(len(b))]

    x = [[A["embeddings"][t][c] + A["positions"][p][c] for c in range(d)] for p, t in enumerate(ids)]
    for layer in range(n_layers):
        p = f"layer{layer}."
        h = [layer_norm(row, A[p + "ln1.g"], A[p + "ln1.b"]) for row in x]
        q = [affine(r, A[p + "wq"], A[p + "bq"]) for r in h]
        k = [affine(r, A[p + "wk"], A[p + "bk"]) for r in h]
        v = [affine(r, A[p + "wv"], A[p + "bv"]) for r in h]
        ctx = [[0.0] * d for _ in x]
        for head in range(n_heads):
            cols = range(head * dh, (head + 1) * dh)
            for i in range(len(x)):
                scores = [sum(q[i][c] * k[j][c] for c in cols) / math.sqrt(dh) for j in range(len(x))]
                top = max(scores)
                e = [math.exp(s - top) for s in scores]
                z = sum(e)
                for c in cols:
                    ctx[i][c] = sum(e[j] / z * v[j][c] for j in range(len(x)))
        att = [affine(r, A[p + "wo"], A[p + "bo"]) for r in ctx]
        x = [[a + b for a, b in zip(r1, r2)] for r1, r2 in zip(x, att)]
        h = [layer_norm(row, A[p + "ln2.g"], A[p + "ln2.b"]) for row in x]
        ff = [affine([gelu(z) for z in affine(r, A[p + "ff1.w"], A[p + "ff1.b"])], A[p + "ff2.w"], A[p + "ff2.b"])
              for r in h]
        x = [[a + b for a, b in zip(r1, r2)] for r1, r2 in zip(x, ff)]
    return [layer_norm(row, A["final_ln.g"], A["final_ln.b"]) for row in x]


def brute_force_decision(start, end, mask, y_hat_ha, tau1, tau2, m):
    """Enumerate every (i, j) with plain loops; returns (span or None, p_best, best)."""
    pos = [i for i in range(len(mask)) if mask[i]]
    cands = [(i, j, start[i] + end[j]) for i in pos for j in pos if i <= j and j - i + 1 <= m]
    best = None
    for i, j, s in cands:
        if best is None or s > best[2]:
            best = (i, j, s)
    z = sum(math.exp(s - best[2]) for _, _, s in cands)
    p_best = 1.0 / z
    no_answer = y_hat_ha <= tau1 and p_best <= tau2
    return (None if no_answer else (best[0], best[1])), p_best, (best[0], best[1])


ACCEPTANCE: list[str] = []


def verdict(name: str, ok: bool, detail: str, status: str | None = None) -> bool:
    """Record and print one acceptance line."""
    line = f"{status or ('PASS' if ok else 'FAIL')}  {name}: {detail}"
    ACCEPTANCE.append(line)
    print(line)
    return ok
