"""Span/answerability model trained with the flat-hierarchical loss.

A small self-attention encoder produces token vectors ``T`` and the [CLS]
vector ``C``. Three linear heads give the start distribution
``softmax(W_S . T)``, the end distribution ``softmax(W_E . T)`` and the
has-answer probability ``softmax(W_HA . C)[yes]``. Start/end softmaxes run
over the S_A positions plus [CLS].

The flat-hierarchical loss of one example is::

    alpha * L_HA + beta * p_ha * L_SE + gamma * y_ha * L_SE

with ``L_SE`` the mean of the start and end cross-entropies and ``L_HA``
the answerability cross-entropy; the batch loss is the mean over examples.
``p_ha`` is *not* detached, so the answerability head also receives
gradient through the span term.
"""

from __future__ import annotations

import base64
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, LabelError, VocabularyError
from .representation import EncodedInput, Vocabulary

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "meeqa-toolkit-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    d: int = 64
    n_layers: int = 2
    n_heads: int = 2
    d_ff: int = 128
    l_max: int = 512

    def __post_init__(self):
        if self.d <= 0 or self.n_heads <= 0 or self.d % self.n_heads:
            raise ConfigError(f"d={self.d} must be positive and divisible by n_heads={self.n_heads}")
        if self.vocab_size < 4 or self.l_max < 4 or self.n_layers < 0 or self.d_ff <= 0:
            raise ConfigError(f"invalid model config {self}")


def _shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    d = cfg.d
    shapes = {"embeddings": (cfg.vocab_size, d), "positions": (cfg.l_max, d)}
    for i in range(cfg.n_layers):
        p = f"layer{i}."
        shapes.update({
            p + "ln1.g": (d,), p + "ln1.b": (d,),
            p + "wq": (d, d), p + "bq": (d,), p + "wk": (d, d), p + "bk": (d,),
            p + "wv": (d, d), p + "bv": (d,), p + "wo": (d, d), p + "bo": (d,),
            p + "ln2.g": (d,), p + "ln2.b": (d,),
            p + "ff1.w": (d, cfg.d_ff), p + "ff1.b": (cfg.d_ff,),
            p + "ff2.w": (cfg.d_ff, d), p + "ff2.b": (d,),
        })
    shapes.update({"final_ln.g": (d,), "final_ln.b": (d,),
                   "w_s": (d,), "w_e": (d,), "w_ha": (d, 2)})
    return shapes


@dataclass
class ModelParams:
    config: ModelConfig
    arrays: dict[str, np.ndarray]

    def __post_init__(self):
        expected = _shapes(self.config)
        if set(expected) != set(self.arrays):
            raise ConfigError(f"parameter names differ from config: {sorted(set(expected) ^ set(self.arrays))}")
        for name, shape in expected.items():
            if self.arrays[name].shape != shape:
                raise ConfigError(f"{name}: shape {self.arrays[name].shape}, expected {shape}")

    def leaves(self) -> dict[str, Tensor]:
        return {k: Tensor(v, op=k, requires_grad=True) for k, v in self.arrays.items()}

    def constants(self) -> dict[str, Tensor]:
        """Parameters as graph constants, for inference without gradients."""
        return {k: Tensor(v, op=k) for k, v in self.arrays.items()}

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: v.copy() for k, v in self.arrays.items()})

    def n_parameters(self) -> int:
        return sum(v.size for v in self.arrays.values())


def init_params(config: ModelConfig, rng: np.random.Generator | int = 0) -> ModelParams:
    """Symmetric uniform init in ``[-1/sqrt(d), 1/sqrt(d)]``; layer-norm gains 1, biases 0."""
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    scale = 1.0 / math.sqrt(config.d)
    arrays = {}
    for name, shape in _shapes(config).items():
        short = name.rsplit(".", 1)[-1]
        if short == "g":
            arrays[name] = np.ones(shape)
        elif short in ("b", "bq", "bk", "bv", "bo"):
            arrays[name] = np.zeros(shape)
        else:
            arrays[name] = rng.uniform(-scale, scale, size=shape)
    return ModelParams(config, arrays)


# -- batching -----------------------------------------------------------------

@dataclass
class Batch:
    token_ids: np.ndarray  # (B, n)
    attention_mask: np.ndarray  # (B, n) bool
    valid_mask: np.ndarray  # (B, n) bool: S_A + [CLS]
    span_mask: np.ndarray  # (B, n) bool: S_A only
    y_s: np.ndarray
    y_e: np.ndarray
    y_ha: np.ndarray

    @property
    def size(self) -> int:
        return self.token_ids.shape[0]


def make_batch(examples: Sequence[EncodedInput], trim: bool = True) -> Batch:
    """Stack encoded inputs; with ``trim`` drop trailing all-padding columns."""
    n = max(int(e.attention_mask.sum()) for e in examples) if trim else len(examples[0].token_ids)
    return Batch(
        token_ids=np.stack([e.token_ids[:n] for e in examples]),
        attention_mask=np.stack([e.attention_mask[:n] for e in examples]),
        valid_mask=np.stack([e.valid_mask[:n] for e in examples]),
        span_mask=np.stack([e.span_mask[:n] for e in examples]),
        y_s=np.array([e.y_s for e in examples], dtype=np.int64),
        y_e=np.array([e.y_e for e in examples], dtype=np.int64),
        y_ha=np.array([-1 if e.y_ha is None else e.y_ha for e in examples], dtype=np.int64),
    )


def _leaves(params) -> Mapping[str, Tensor]:
    return params.leaves() if isinstance(params, ModelParams) else params


def _config_of(leaves: Mapping[str, Tensor]) -> tuple[int, int]:
    d = leaves["w_s"].shape[0]
    n_layers = sum(1 for k in leaves if k.endswith(".wq"))
    return d, n_layers


# -- forward ------------------------------------------------------------------

def encode(params, inputs, n_heads: int | None = None):
    """Token vectors ``T`` and the [CLS] vector ``C``.

    ``inputs`` is a :class:`Batch` (returns shapes ``(B, n, d)`` and
    ``(B, d)``) or a single :class:`EncodedInput` (``(n, d)`` and ``(d,)``).
    """
    single = isinstance(inputs, EncodedInput)
    batch = make_batch([inputs], trim=False) if single else inputs
    if n_heads is None:
        if not isinstance(params, ModelParams):
            raise ValueError("n_heads is required when passing raw parameter leaves")
        n_heads = params.config.n_heads
    P = _leaves(params)
    vocab_size, d = P["embeddings"].shape
    ids = batch.token_ids
    if ids.size and (ids.max() >= vocab_size or ids.min() < 0):
        raise VocabularyError(f"token id {int(ids.max())} outside vocabulary of size {vocab_size}")
    B, n = ids.shape
    if n > P["positions"].shape[0]:
        raise VocabularyError(f"sequence length {n} exceeds position table {P['positions'].shape[0]}")
    x = ad.take_rows(P["embeddings"], ids) + P["positions"][:n]
    key_mask = batch.attention_mask[:, None, None, :]
    _, n_layers = _config_of(P)
    dh = d // n_heads
    for i in range(n_layers):
        p = f"layer{i}."
        h = ad.layer_norm(x, P[p + "ln1.g"], P[p + "ln1.b"])

        def heads(t):
            return ad.transpose(t.reshape(B, n, n_heads, dh), (0, 2, 1, 3))

        q = heads(h @ P[p + "wq"] + P[p + "bq"])
        k = heads(h @ P[p + "wk"] + P[p + "bk"])
        v = heads(h @ P[p + "wv"] + P[p + "bv"])
        scores = (q @ ad.transpose(k, (0, 1, 3, 2))) * (1.0 / math.sqrt(dh))
        att = ad.masked_softmax(scores, key_mask, axis=-1)
        ctx = ad.transpose(att @ v, (0, 2, 1, 3)).reshape(B, n, d)
        x = x + (ctx @ P[p + "wo"] + P[p + "bo"])
        h = ad.layer_norm(x, P[p + "ln2.g"], P[p + "ln2.b"])
        x = x + (ad.gelu(h @ P[p + "ff1.w"] + P[p + "ff1.b"]) @ P[p + "ff2.w"] + P[p + "ff2.b"])
    T = ad.layer_norm(x, P["final_ln.g"], P["final_ln.b"])
    C = T[:, 0]
    if single:
        return T[0], C[0]
    return T, C


@dataclass
class Predictions:
    """Head outputs for a batch, kept on the graph for the losses.

    ``start_logp`` / ``end_logp`` are log-probabilities over positions
    (``MASK_FILL`` where ``mask`` is False); ``ha_logp`` holds log
    probabilities of (no answer, has answer). ``start_logits`` and
    ``end_logits`` are the raw ``W . T`` scores used for span decoding.
    """

    start_logp: Tensor
    end_logp: Tensor
    ha_logp: Tensor
    mask: np.ndarray
    start_logits: np.ndarray | None = None
    end_logits: np.ndarray | None = None

    @property
    def y_hat_s(self) -> np.ndarray:
        return np.exp(self.start_logp.data)

    @property
    def y_hat_e(self) -> np.ndarray:
        return np.exp(self.end_logp.data)

    @property
    def y_hat_ha(self) -> np.ndarray:
        return np.exp(self.ha_logp.data[..., 1])

    @classmethod
    def from_probs(cls, start, end, ha, mask=None, requires_grad=False) -> "Predictions":
        """Wrap fixed distributions; ``ha`` is the has-answer probability per example."""
        start, end = np.atleast_2d(start).astype(float), np.atleast_2d(end).astype(float)
        ha = np.atleast_1d(np.asarray(ha, dtype=float))
        mask = start > 0 if mask is None else np.atleast_2d(mask)
        with np.errstate(divide="ignore"):
            s = np.where(mask, np.log(start), ad.MASK_FILL)
            e = np.where(mask, np.log(end), ad.MASK_FILL)
            h = np.log(np.stack([1.0 - ha, ha], axis=-1))
        return cls(Tensor(s, requires_grad=requires_grad), Tensor(e, requires_grad=requires_grad),
                   Tensor(h, requires_grad=requires_grad), mask)


def heads_forward(params, T: Tensor, C: Tensor, mask: np.ndarray) -> Predictions:
    """Start/end distributions over ``mask`` positions and has-answer probability."""
    P = _leaves(params)
    T, C = ad.lift(T), ad.lift(C)
    start_logits = T @ P["w_s"]
    end_logits = T @ P["w_e"]
    ha_logits = C @ P["w_ha"]
    return Predictions(
        start_logp=ad.masked_log_softmax(start_logits, mask, axis=-1),
        end_logp=ad.masked_log_softmax(end_logits, mask, axis=-1),
        ha_logp=ad.masked_log_softmax(ha_logits, None, axis=-1),
        mask=np.asarray(mask),
        start_logits=start_logits.data,
        end_logits=end_logits.data,
    )


def forward(params, batch: Batch, n_heads: int | None = None) -> Predictions:
    T, C = encode(params, batch, n_heads)
    return heads_forward(params, T, C, batch.valid_mask)


# -- losses -------------------------------------------------------------------

@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.8
    beta: float = 0.3
    gamma: float = 0.8

    def __post_init__(self):
        ws = (self.alpha, self.beta, self.gamma)
        if min(ws) < 0 or max(ws) <= 0 or not all(math.isfinite(w) for w in ws):
            raise ConfigError(f"loss weights must be non-negative with one positive, got {ws}")


class LossVariant(str, Enum):
    FHL = "fhl"
    NO_HA = "no-ha"
    NO_PSE = "no-pse"
    NO_LSE = "no-lse"


class Target(NamedTuple):
    y_s: np.ndarray
    y_e: np.ndarray
    y_ha: np.ndarray


def _as_target(target) -> Target:
    if isinstance(target, Batch):
        target = (target.y_s, target.y_e, target.y_ha)
    return Target(*(np.atleast_1d(np.asarray(t, dtype=np.int64)) for t in target))


def _loss_terms(pred: Predictions, target, w: LossWeights) -> tuple[Tensor, Tensor, Tensor]:
    """Per-example ``alpha*L_HA``, ``beta*p_ha*L_SE`` and ``gamma*y_ha*L_SE``."""
    y_s, y_e, y_ha = _as_target(target)
    rows = np.arange(len(y_s))
    mask = np.broadcast_to(pred.mask, pred.start_logp.shape)
    for name, y in (("start", y_s), ("end", y_e)):
        if (y < 0).any() or (y >= mask.shape[-1]).any() or not mask[rows, y].all():
            raise LabelError(f"{name} target at a masked or out-of-range position")
    if not np.isin(y_ha, (0, 1)).all():
        raise LabelError("answerability labels must be 0 or 1")
    l_se = (pred.start_logp[rows, y_s] + pred.end_logp[rows, y_e]) * -0.5
    l_ha = -pred.ha_logp[rows, y_ha]
    p_ha = ad.exp(pred.ha_logp[:, 1])
    return (l_ha * w.alpha,
            (p_ha * l_se) * w.beta,
            (l_se * y_ha.astype(float)) * w.gamma)


def loss_fhl(pred: Predictions, target, w: LossWeights) -> Tensor:
    """Flat-hierarchical loss, averaged over the batch."""
    t_ha, t_pse, t_lse = _loss_terms(pred, target, w)
    return ((t_ha + t_pse) + t_lse).mean()


def loss_ablation(variant, pred: Predictions, target, w: LossWeights) -> Tensor:
    """The flat-hierarchical loss with one of its three terms removed."""
    variant = LossVariant(variant)
    t_ha, t_pse, t_lse = _loss_terms(pred, target, w)
    if variant is LossVariant.NO_HA:
        total = t_pse + t_lse
    elif variant is LossVariant.NO_PSE:
        total = t_ha + t_lse
    elif variant is LossVariant.NO_LSE:
        total = t_ha + t_pse
    else:
        total = (t_ha + t_pse) + t_lse
    return total.mean()


def compute_loss(variant, pred: Predictions, target, w: LossWeights) -> Tensor:
    variant = LossVariant(variant)
    if variant is LossVariant.FHL:
        return loss_fhl(pred, target, w)
    return loss_ablation(variant, pred, target, w)


def backward(loss: Tensor, leaves: Mapping[str, Tensor]) -> dict[str, np.ndarray]:
    """Gradients of ``loss`` for every named leaf (zeros where unreachable)."""
    ad.backward(loss)
    return {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in leaves.items()}


# -- optimizer ----------------------------------------------------------------

@dataclass
class AdamWState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def optimizer_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: AdamWState,
    lr: float,
    weight_decay: float = 0.01,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> dict[str, np.ndarray]:
    """One AdamW update; returns new arrays and advances ``state`` in place.

    Decoupled decay ``p <- p - lr*wd*p`` is applied before the bias-corrected
    Adam step.
    """
    b1, b2 = betas
    state.step += 1
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    out = {}
    for name, p in params.items():
        g = grads[name]
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1 - b1) * g if m is None else b1 * m + (1 - b1) * g
        v = (1 - b2) * g * g if v is None else b2 * v + (1 - b2) * g * g
        state.m[name], state.v[name] = m, v
        p = p - lr * weight_decay * p
        out[name] = p - lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return out


# -- training -----------------------------------------------------------------

@dataclass
class TrainConfig:
    seed: int = 0
    lr: float = 3e-5
    batch_size: int = 8
    epochs: int = 2
    loss: LossVariant = LossVariant.FHL
    weights: LossWeights = field(default_factory=LossWeights)
    weight_decay: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    d: int = 64
    n_layers: int = 2
    n_heads: int = 2
    d_ff: int = 128
    max_grad_norm: float | None = None

    def __post_init__(self):
        self.loss = LossVariant(self.loss)
        if isinstance(self.weights, Mapping):
            self.weights = LossWeights(**self.weights)
        self.betas = tuple(self.betas)
        if self.lr < 0 or self.batch_size < 1 or self.epochs < 0:
            raise ConfigError(f"invalid training config: lr={self.lr}, batch={self.batch_size}, epochs={self.epochs}")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["loss"] = self.loss.value
        out["betas"] = list(self.betas)
        return out


def train(
    dataset: Sequence[EncodedInput],
    config: TrainConfig,
    vocab_size: int | None = None,
    l_max: int | None = None,
    params: ModelParams | None = None,
    progress=None,
) -> tuple[ModelParams, list[dict]]:
    """Train from a seeded initialization; returns params and per-epoch history.

    Initialization and every epoch's shuffle come from one PRNG seeded with
    ``config.seed``, so equal inputs give bit-identical results.
    """
    if not dataset:
        raise ConfigError("cannot train on an empty dataset")
    if any(e.y_ha is None for e in dataset):
        raise ConfigError("training examples need answerability labels")
    rng = np.random.default_rng(config.seed)
    if params is None:
        if vocab_size is None:
            raise ConfigError("vocab_size is required to initialize a new model")
        mcfg = ModelConfig(vocab_size, config.d, config.n_layers, config.n_heads, config.d_ff,
                           l_max or len(dataset[0].token_ids))
        params = init_params(mcfg, rng)
    else:
        params = params.copy()
    state = AdamWState()
    history = []
    for epoch in range(config.epochs):
        order = rng.permutation(len(dataset))
        losses = []
        for start in range(0, len(order), config.batch_size):
            batch = make_batch([dataset[i] for i in order[start:start + config.batch_size]])
            leaves = params.leaves()
            pred = forward(leaves, batch, params.config.n_heads)
            loss = compute_loss(config.loss, pred, batch, config.weights)
            grads = backward(loss, leaves)
            if config.max_grad_norm:
                norm = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
                if norm > config.max_grad_norm:
                    grads = {k: g * (config.max_grad_norm / norm) for k, g in grads.items()}
            params = ModelParams(params.config, optimizer_step(
                params.arrays, grads, state, config.lr, config.weight_decay, config.betas, config.eps))
            losses.append(float(loss.data))
        record = {"epoch": epoch + 1, "mean_loss": float(np.mean(losses))}
        history.append(record)
        log.info("epoch %d mean loss %.6f", record["epoch"], record["mean_loss"])
        if progress is not None:
            progress(record)
    return params, history


# -- inference ----------------------------------------------------------------

@dataclass
class RawPrediction:
    """Per-question head outputs needed by the answer decision."""

    question_id: str | None
    start_logits: np.ndarray
    end_logits: np.ndarray
    span_mask: np.ndarray
    y_hat_ha: float
    encoded: EncodedInput


def predict_raw(params: ModelParams, examples: Sequence[EncodedInput], batch_size: int = 16) -> list[RawPrediction]:
    out = []
    for start in range(0, len(examples), batch_size):
        chunk = examples[start:start + batch_size]
        batch = make_batch(chunk)
        pred = forward(params.constants(), batch, params.config.n_heads)
        for b, enc in enumerate(chunk):
            n = batch.token_ids.shape[1]
            out.append(RawPrediction(enc.question_id, pred.start_logits[b], pred.end_logits[b],
                                     enc.span_mask[:n], float(pred.y_hat_ha[b]), enc))
    return out


# -- checkpoints --------------------------------------------------------------

def _encode_array(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(a, dtype="<f8")
    return {"shape": list(a.shape), "dtype": "float64",
            "data": base64.b64encode(a.tobytes()).decode("ascii")}


def _decode_array(rec: dict) -> np.ndarray:
    raw = base64.b64decode(rec["data"])
    return np.frombuffer(raw, dtype="<f8").reshape(rec["shape"]).copy()


def save_checkpoint(path, params: ModelParams, vocab: Vocabulary | None = None, meta: dict | None = None) -> None:
    """JSON tensor dump: shape headers plus base64 little-endian float64 data."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "model_config": asdict(params.config),
        "tensors": {k: _encode_array(params.arrays[k]) for k in sorted(params.arrays)},
        "vocab": None if vocab is None else vocab.itos,
        "meta": meta or {},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path) -> tuple[ModelParams, Vocabulary | None, dict]:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ConfigError(f"{path}: not a checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ConfigError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    config = ModelConfig(**doc["model_config"])
    params = ModelParams(config, {k: _decode_array(v) for k, v in doc["tensors"].items()})
    vocab = Vocabulary(doc["vocab"]) if doc.get("vocab") is not None else None
    if vocab is not None and len(vocab) != config.vocab_size:
        raise VocabularyError(f"checkpoint vocabulary has {len(vocab)} tokens, embeddings {config.vocab_size}")
    return params, vocab, doc.get("meta", {})
