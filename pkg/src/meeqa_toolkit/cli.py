"""``meeqa-toolkit`` command line: preprocess, train, predict, evaluate, grid search.

Options may also come from a flat JSON file given with ``--config``; a
flag on the command line beats the file, which beats the built-in default.
Exit codes: 0 success, 2 usage or data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import itertools
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import decision as D
from . import evaluation as E
from . import model as M
from . import preprocess as P
from . import representation as R
from . import synthetic
from . import transcript as T
from .errors import MeeqaError, NumericError

log = logging.getLogger("meeqa_toolkit")

THREADS_ENV = "MEEQA_TOOLKIT_THREADS"

DEFAULTS = {
    "seed": 0,
    "speaker_mode": "switch",
    "question_k": 1,
    "utterance_marker": "",
    "k": 1,
    "l": 60,
    "l_max": 512,
    "loss": "fhl",
    "alpha": 0.8,
    "beta": 0.3,
    "gamma": 0.8,
    "lr": 3e-5,
    "batch_size": 8,
    "epochs": 2,
    "weight_decay": 0.01,
    "d": 64,
    "n_layers": 2,
    "n_heads": 2,
    "d_ff": 128,
    "tau1": 0.6,
    "tau2": 0.8,
    "max_answer_len": 200,
    "mode": "standard",
    "alpha_grid": [0.7, 0.8],
    "beta_grid": [0.2, 0.3],
    "gamma_grid": [0.7, 0.8],
    "tau1_grid": [0.6, 0.7],
    "tau2_grid": [0.8, 0.9],
    "max_answer_len_grid": [200, 250],
}


class UsageError(MeeqaError):
    pass


def worker_count() -> int:
    """Worker threads for per-question work, capped by ``MEEQA_TOOLKIT_THREADS``."""
    n = os.cpu_count() or 1
    cap = os.environ.get(THREADS_ENV)
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError as exc:
            raise UsageError(f"{THREADS_ENV} must be an integer, got {cap!r}") from exc
    return n


def _pmap(fn, items) -> list:
    items = list(items)
    n = worker_count()
    if n == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


# -- option resolution --------------------------------------------------------

class Options(dict):
    """Resolved options with attribute access."""

    __getattr__ = dict.__getitem__


def resolve(args: argparse.Namespace) -> Options:
    file_values = {}
    if getattr(args, "config", None):
        with open(args.config, encoding="utf-8") as fh:
            file_values = json.load(fh)
        if not isinstance(file_values, dict):
            raise UsageError(f"{args.config}: config must be a flat JSON object")
        unknown = sorted(set(file_values) - set(DEFAULTS))
        if unknown:
            raise UsageError(f"{args.config}: unknown config keys {unknown}")
    out = Options()
    for key, default in DEFAULTS.items():
        flag = getattr(args, key, None)
        out[key] = flag if flag is not None else file_values.get(key, default)
    for key, value in vars(args).items():
        out.setdefault(key, value)
    return out


def _mode(o: Options) -> R.RepresentationMode:
    return R.RepresentationMode(o.speaker_mode, int(o.question_k), o.utterance_marker)


def _weights(o: Options) -> M.LossWeights:
    return M.LossWeights(float(o.alpha), float(o.beta), float(o.gamma))


def _train_config(o: Options, weights: M.LossWeights | None = None) -> M.TrainConfig:
    return M.TrainConfig(
        seed=int(o.seed), lr=float(o.lr), batch_size=int(o.batch_size), epochs=int(o.epochs),
        loss=o.loss, weights=weights or _weights(o), weight_decay=float(o.weight_decay),
        d=int(o.d), n_layers=int(o.n_layers), n_heads=int(o.n_heads), d_ff=int(o.d_ff),
    )


def _decision(o: Options) -> D.DecisionConfig:
    return D.DecisionConfig(float(o.tau1), float(o.tau2), int(o.max_answer_len))


def _instances(path, k: int, l: int, annotated_only: bool = False) -> list[T.QAInstance]:
    out = []
    for meeting in T.iter_meetings(path):
        for inst in T.extract_question_instances(meeting, k, l):
            if annotated_only and not inst.annotations:
                continue
            out.append(inst)
    return out


def _write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


# -- training helpers shared by train and gridsearch --------------------------

def _fit(train_insts, o: Options, weights: M.LossWeights | None = None):
    mode = _mode(o)
    vocab = R.Vocabulary.build(R.instance_texts(train_insts, mode))
    examples, report = R.encode_dataset(train_insts, mode, vocab, int(o.l_max))
    if report.skipped_too_long:
        log.warning("skipped %d training questions longer than l_max", report.skipped_too_long)
    cfg = _train_config(o, weights)
    params, history = M.train(examples, cfg, len(vocab), int(o.l_max))
    meta = {
        "train": cfg.to_dict(),
        "representation": {"speaker_mode": mode.speaker_mode.value, "question_k": mode.question_k,
                           "utterance_marker": mode.utterance_marker},
        "window": {"k": int(o.k), "l": int(o.l), "l_max": int(o.l_max)},
        "history": history,
    }
    return params, vocab, meta


def _raw_predictions(params, vocab, insts, mode, l_max):
    examples, report = R.encode_dataset(insts, mode, vocab, l_max, per_annotation=False)
    raws = M.predict_raw(params, examples)
    skipped = [i.question_id for i in insts if i.question_id in set(report.skipped_ids or ())]
    for qid in skipped:
        log.warning("question %s does not fit in l_max; predicting no answer", qid)
    return raws, skipped


def _predictions(raws, skipped, cfg: D.DecisionConfig) -> list[E.Prediction]:
    preds = _pmap(lambda r: D.decide_raw(r, cfg), raws)
    preds += [E.Prediction(q, None, 0.0, 0.0) for q in skipped]
    return preds


# -- commands -----------------------------------------------------------------

def cmd_preprocess(o: Options) -> int:
    fillers = P.load_filler_lexicon(o.fillers) if o.fillers else P.DEFAULT_FILLERS
    meetings = T.load_meetings(o.input)
    cleaned, report = P.preprocess_meetings(meetings, fillers=fillers, strict=o.strict,
                                            merge_utterances=not o.no_merge)
    T.dump_meetings(cleaned, o.output)
    if o.report:
        _write_json(o.report, report.to_dict())
    print(json.dumps(report.to_dict(), sort_keys=True))
    return 0


def cmd_train(o: Options) -> int:
    insts = _instances(o.train, int(o.k), int(o.l), annotated_only=True)
    params, vocab, meta = _fit(insts, o)
    M.save_checkpoint(o.checkpoint, params, vocab, meta)
    _write_json(o.history or f"{o.checkpoint}.history.json", meta["history"])
    for rec in meta["history"]:
        print(f"epoch {rec['epoch']}: mean loss {rec['mean_loss']:.6f}")
    return 0


def cmd_predict(o: Options) -> int:
    params, vocab, meta = M.load_checkpoint(o.checkpoint)
    if vocab is None:
        raise UsageError(f"{o.checkpoint}: checkpoint carries no vocabulary")
    rep = meta.get("representation", {})
    win = meta.get("window", {})
    # representation and windows follow the checkpoint unless given explicitly
    for key, value in {**rep, **win}.items():
        if getattr(o["_args"], key, None) is None:
            o[key] = value
    insts = _instances(o.data, int(o.k), int(o.l))
    raws, skipped = _raw_predictions(params, vocab, insts, _mode(o), int(o.l_max))
    preds = _predictions(raws, skipped, _decision(o))
    order = {i.question_id: n for n, i in enumerate(insts)}
    preds.sort(key=lambda p: order[p.question_id])
    D.write_predictions(preds, o.output)
    print(f"wrote {len(preds)} predictions to {o.output}")
    return 0


def cmd_evaluate(o: Options) -> int:
    gold = _instances(o.gold, int(o.k), int(o.l), annotated_only=True)
    if o.baseline == "first-utterance":
        preds = _pmap(lambda i: E.first_utterance_baseline(i, o.use_suffix), gold)
    elif o.predictions:
        preds = D.read_predictions(o.predictions)
    else:
        raise UsageError("evaluate needs --predictions or --baseline")
    report = E.evaluate(preds, gold, mode=o.mode, per_question=o.per_question)
    if o.json:
        _write_json(o.json, report.to_dict())
    print(report.format_table())
    return 0


def _grid(o: Options, name: str) -> tuple:
    values = o[name]
    if not isinstance(values, (list, tuple)) or not values:
        raise UsageError(f"{name} must be a non-empty list")
    return tuple(values)


def cmd_gridsearch(o: Options) -> int:
    train = _instances(o.train, int(o.k), int(o.l), annotated_only=True)
    dev = _instances(o.dev, int(o.k), int(o.l), annotated_only=True)
    if not dev:
        raise UsageError("grid search needs a non-empty dev split")
    dgrid = D.DecisionGrid(_grid(o, "tau1_grid"), _grid(o, "tau2_grid"), _grid(o, "max_answer_len_grid"))
    out_dir = Path(o.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    board = []
    combos = sorted(itertools.product(_grid(o, "alpha_grid"), _grid(o, "beta_grid"), _grid(o, "gamma_grid")))
    for alpha, beta, gamma in combos:
        weights = M.LossWeights(float(alpha), float(beta), float(gamma))
        params, vocab, meta = _fit(train, o, weights)
        raws, skipped = _raw_predictions(params, vocab, dev, _mode(o), int(o.l_max))
        fixed = [E.Prediction(q, None, 0.0, 0.0) for q in skipped]
        tune = D.tune_decision(raws, dev, dgrid, fixed)
        dev_f1 = E.evaluate(_predictions(raws, skipped, tune.best), dev)["All"].f1
        board.append({
            "alpha": alpha, "beta": beta, "gamma": gamma,
            "tau1": tune.best.tau1, "tau2": tune.best.tau2, "max_answer_len": tune.best.m,
            "dev_f1": dev_f1,
            "decision_table": [[c.tau1, c.tau2, c.m, f1] for c, f1 in tune.table],
        })
        print(f"alpha={alpha} beta={beta} gamma={gamma}: dev All F1 {dev_f1:.2f}")
    board.sort(key=lambda r: -r["dev_f1"])  # stable: ties keep grid order
    best = board[0]
    best_config = {k: o[k] for k in DEFAULTS if not k.endswith("_grid")}
    best_config.update({k: best[k] for k in ("alpha", "beta", "gamma", "tau1", "tau2", "max_answer_len")})
    _write_json(out_dir / "leaderboard.json", board)
    _write_json(out_dir / "best_config.json", best_config)
    print(f"best: {json.dumps({k: best[k] for k in ('alpha', 'beta', 'gamma', 'tau1', 'tau2', 'max_answer_len', 'dev_f1')})}")
    return 0


def cmd_agreement(o: Options) -> int:
    insts = _instances(o.gold, int(o.k), int(o.l), annotated_only=True)
    alpha = E.corpus_alpha(insts)
    units = len(E.agreement_units(insts))
    print(json.dumps({"krippendorff_alpha": alpha, "units": units, "reference_alpha": 0.555}))
    return 0


def cmd_synth(o: Options) -> int:
    cfg = synthetic.SyntheticConfig(n_questions=o.n, unanswerable_rate=o.unanswerable_rate,
                                    n_judges=o.judges, dissent_rate=o.dissent_rate, seed=int(o.seed))
    meetings = synthetic.synthetic_corpus(cfg)
    names = ("train", "dev", "test")
    out_dir = Path(o.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, part in zip(names, synthetic.split(meetings)):
        T.dump_meetings(part, out_dir / f"{name}.jsonl")
        print(f"{name}: {len(part)} meetings")
    return 0


# -- parser -------------------------------------------------------------------

def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat JSON file of option values")
    p.add_argument("--seed", type=int)
    p.add_argument("-v", "--verbose", action="store_true")


def _add_window(p: argparse.ArgumentParser) -> None:
    p.add_argument("--k", type=int, help="utterances before the question (default 1)")
    p.add_argument("--l", type=int, help="utterances after the question (default 60)")
    p.add_argument("--l-max", dest="l_max", type=int, help="maximum input length (default 512)")


def _add_representation(p: argparse.ArgumentParser) -> None:
    p.add_argument("--speaker-mode", choices=("original", "switch"))
    p.add_argument("--question-k", type=int, choices=(0, 1, 2))
    p.add_argument("--utterance-marker", help="token written before each speaker token")


def _add_model(p: argparse.ArgumentParser) -> None:
    p.add_argument("--loss", choices=[v.value for v in M.LossVariant])
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--d", type=int)
    p.add_argument("--n-layers", type=int)
    p.add_argument("--n-heads", type=int)
    p.add_argument("--d-ff", type=int)


def _add_decision(p: argparse.ArgumentParser) -> None:
    p.add_argument("--tau1", type=float)
    p.add_argument("--tau2", type=float)
    p.add_argument("--max-answer-len", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="meeqa-toolkit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="clean transcripts and repair annotations")
    _add_common(p)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", dest="output", required=True)
    p.add_argument("--report", help="where to write the cleaning report JSON")
    p.add_argument("--fillers", help="filler lexicon file (one token per line)")
    p.add_argument("--strict", action="store_true", help="also drop 'a' and 'I'")
    p.add_argument("--no-merge", action="store_true", help="keep consecutive same-speaker utterances apart")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    _add_common(p)
    _add_window(p)
    _add_representation(p)
    _add_model(p)
    p.add_argument("--train", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--history")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="answer every question with a trained model")
    _add_common(p)
    _add_window(p)
    _add_representation(p)
    _add_decision(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", dest="output", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="score predictions against annotated meetings")
    _add_common(p)
    _add_window(p)
    p.add_argument("--gold", required=True)
    p.add_argument("--predictions")
    p.add_argument("--baseline", choices=("first-utterance",))
    p.add_argument("--use-suffix", action="store_true", help="baseline answers with the question's suffix")
    p.add_argument("--mode", choices=("standard", "human-comparable"))
    p.add_argument("--json", help="where to write the report JSON")
    p.add_argument("--per-question", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("gridsearch", help="train per loss weighting and tune the decision on dev")
    _add_common(p)
    _add_window(p)
    _add_representation(p)
    _add_model(p)
    p.add_argument("--train", required=True)
    p.add_argument("--dev", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_gridsearch)

    p = sub.add_parser("agreement", help="Krippendorff's alpha over annotated answer words")
    _add_common(p)
    _add_window(p)
    p.add_argument("--gold", required=True)
    p.set_defaults(func=cmd_agreement)

    p = sub.add_parser("synth", help="write a synthetic train/dev/test corpus")
    _add_common(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--unanswerable-rate", type=float, default=0.3)
    p.add_argument("--judges", type=int, default=1)
    p.add_argument("--dissent-rate", type=float, default=0.0)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        o = resolve(args)
        o["_args"] = args
        return args.func(o)
    except (NumericError, ArithmeticError) as exc:
        print(f"error: numeric failure: {exc}", file=sys.stderr)
        return 3
    except (MeeqaError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
