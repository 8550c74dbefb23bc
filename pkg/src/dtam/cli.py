"""Command line for the full pipeline: corpus ingestion or synthetic
sampling, training and grid search, causal evaluation, forecasting, and the
topic/timeline exports that feed external plotters.

Configuration is a flat key=value file with one section per subcommand
(configparser INI syntax); ``--set`` overrides win over file values. All
output files land in ``--output-dir`` (default: the ``DTAM_OUTPUT_DIR``
environment variable, else the working directory); input paths are used as
given. Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric
failure.

Heavy imports happen inside the subcommand handlers so that ``--threads``
and ``--deterministic`` can pin the BLAS thread pools through environment
variables before numpy loads.
"""

from __future__ import annotations

import argparse
import ast
import configparser
import hashlib
import os
import sys
from pathlib import Path

from dtam import CHECKPOINT_FORMAT_VERSION
from dtam.errors import DataError, DtamError, NumericError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

OUTPUT_DIR_ENV = "DTAM_OUTPUT_DIR"
_THREAD_ENV_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS", "VECLIB_MAXIMUM_THREADS",
                    "NUMEXPR_NUM_THREADS")


class UsageError(Exception):
    """Bad flags, unknown keys, or malformed override syntax."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{message}\n\n{self.format_help()}")


# ---- configuration -----------------------------------------------------------


def parse_config_value(text: str):
    """Literal-style coercion: numbers, tuples, booleans, None, else string."""
    t = text.strip()
    low = t.lower()
    if low == "true":
        return True
    if low == "false":
        return False
    if low in ("none", ""):
        return None
    try:
        return ast.literal_eval(t)
    except (ValueError, SyntaxError):
        return t


class CommandConfig:
    """Per-section key=value store merged from a file and --set overrides.

    Unqualified overrides (``key=value``) target the active subcommand's
    section; qualified ones (``section.key=value``) reach any section.
    """

    def __init__(self, path: str | None, overrides):
        self._parser = configparser.ConfigParser()
        self._parser.optionxform = str
        if path is not None:
            p = Path(path)
            if not p.exists():
                raise DataError(f"no such config file: {p}")
            self._parser.read(p, encoding="utf-8")
        self._overrides = []
        for item in overrides or []:
            if "=" not in item:
                raise UsageError(f"override {item!r} is not key=value")
            key, _, value = item.partition("=")
            key = key.strip()
            section = None
            if "." in key:
                section, _, key = key.partition(".")
            if not key:
                raise UsageError(f"override {item!r} has an empty key")
            self._overrides.append((section, key, value))

    def section(self, name: str, active: str | None = None) -> dict:
        out = {}
        if self._parser.has_section(name):
            for key, value in self._parser.items(name):
                out[key] = parse_config_value(value)
        target = active if active is not None else name
        for section, key, value in self._overrides:
            if section == name or (section is None and name == target):
                out[key] = parse_config_value(value)
        return out


def _pop(sec: dict, key: str, default):
    return sec.pop(key) if key in sec else default


def _out_path(args, name: str) -> Path:
    base = Path(args.output_dir)
    base.mkdir(parents=True, exist_ok=True)
    p = Path(name)
    return p if p.is_absolute() else base / p


# ---- shared plumbing ----------------------------------------------------------


def _load_vocab_pair(stem: Path):
    """(tm_vocab, lm_vocab) from a data stem, or (None, None) when absent."""
    from dtam.corpus import Vocabulary
    tm_path = Path(str(stem) + ".tm_vocab.tsv")
    lm_path = Path(str(stem) + ".lm_vocab.tsv")
    tm = Vocabulary.load_tsv(tm_path) if tm_path.exists() else None
    lm = Vocabulary.load_tsv(lm_path) if lm_path.exists() else None
    return tm, lm


def _causal_splits(timeline, sec: dict):
    """temporal_split + in-slice random split driven by shared config keys."""
    from dtam.corpus import random_split, temporal_split
    n_prediction = int(_pop(sec, "n_prediction", 10))
    ratios = _pop(sec, "split_ratios", (0.8, 0.1, 0.1))
    split_seed = int(_pop(sec, "split_seed", 0))
    if n_prediction > 0:
        up_to_date, prediction = temporal_split(timeline, n_prediction)
    else:
        up_to_date, prediction = timeline, None
    train_tl, val_tl, test_tl = random_split(up_to_date, tuple(ratios),
                                             split_seed)
    return up_to_date, prediction, train_tl, val_tl, test_tl


def _replace_docs(timeline, replacements: dict):
    """Same slice structure with documents swapped (dropped when absent)."""
    from dtam.corpus import CorpusTimeline
    slices = [[replacements[d.doc_id] for d in sl if d.doc_id in replacements]
              for sl in timeline.slices]
    return CorpusTimeline(slices=slices, boundaries=timeline.boundaries.copy(),
                          vocab_size=timeline.vocab_size,
                          first_index=timeline.first_index,
                          granularity=timeline.granularity)


def _scaled_training_data(train_tl, val_docs, label_cap: float):
    """Fit the label scaler on the training split only; None when ratings
    already exist everywhere."""
    from dtam.corpus import normalize_labels
    train_docs = train_tl.all_documents()
    if all(d.rating is not None for d in train_docs + list(val_docs)):
        return train_tl, list(val_docs), None
    scaled, scaler = normalize_labels(train_docs, cap=label_cap)
    train_tl = _replace_docs(train_tl, {d.doc_id: d for d in scaled})
    return train_tl, scaler.apply(val_docs, cap=label_cap, clip=True), scaler


def _write_scaler(path: Path, scaler) -> None:
    path.write_text(f"low {scaler.low!r}\nhigh {scaler.high!r}\n",
                    encoding="utf-8")


def _read_scaler(path: Path):
    from dtam.corpus import LabelScaler
    fields = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.strip():
            key, _, value = line.partition(" ")
            fields[key] = float(value)
    if set(fields) != {"low", "high"}:
        raise DataError(f"malformed scaler file {path}")
    return LabelScaler(low=fields["low"], high=fields["high"])


def _train_config(conf: CommandConfig, active: str):
    from dtam.trainer import config_from_dict
    sec = conf.section("train", active)
    extras = {
        "n_prediction": _pop(sec, "n_prediction", 10),
        "split_ratios": _pop(sec, "split_ratios", (0.8, 0.1, 0.1)),
        "split_seed": _pop(sec, "split_seed", 0),
        "label_cap": _pop(sec, "label_cap", 50000.0),
    }
    return config_from_dict(sec), extras


def _prepare_training(args, conf: CommandConfig, active: str):
    from dtam.corpus import load_timeline
    config, extras = _train_config(conf, active)
    timeline = load_timeline(args.data)
    split_keys = {k: extras[k] for k in ("n_prediction", "split_ratios",
                                         "split_seed")}
    _, _, train_tl, val_tl, _ = _causal_splits(timeline, split_keys)
    train_tl, val_docs, scaler = _scaled_training_data(
        train_tl, val_tl.all_documents(), float(extras["label_cap"]))
    tm_vocab, lm_vocab = _load_vocab_pair(Path(args.data))
    vocab_hash = tm_vocab.content_hash() if tm_vocab is not None else ""
    lm_vocab_size = len(lm_vocab) if lm_vocab is not None else None
    return config, timeline, train_tl, val_docs, scaler, vocab_hash, \
        lm_vocab_size


def _infer_lm_vocab_size(docs) -> int:
    top = 0
    for d in docs:
        if len(d.lm_token_ids):
            top = max(top, int(max(d.lm_token_ids)))
    return top + 1


def _file_fingerprint(*paths) -> str:
    digest = hashlib.sha256()
    for p in paths:
        digest.update(Path(p).read_bytes())
    return digest.hexdigest()[:16]


# ---- subcommands ---------------------------------------------------------------


def cmd_sample(args, conf: CommandConfig) -> int:
    import numpy as np

    from dtam.corpus import UNK_TOKEN, Vocabulary, save_timeline
    from dtam.synthgen import (ScenarioConfig, generate_scenario,
                               write_scenario_jsonl)

    sec = conf.section("sample")
    try:
        scenario = ScenarioConfig(**sec)
    except TypeError as e:
        raise UsageError(f"bad [sample] key: {e}")
    timeline, latents = generate_scenario(scenario)
    stem = _out_path(args, args.stem)
    save_timeline(stem, timeline)
    latents.save_npz(str(stem) + ".latents.npz")
    n = write_scenario_jsonl(timeline, str(stem) + ".jsonl")

    V = timeline.vocab_size
    words = [f"w{v:04d}" for v in range(V)]
    df = np.zeros(V, dtype=np.int64)
    for d in timeline.all_documents():
        df[d.bow.ids] += 1
    tm = Vocabulary(token_to_id={w: i for i, w in enumerate(words)},
                    id_to_token=words, doc_frequency=df.tolist())
    lm = Vocabulary(
        token_to_id={w: i for i, w in enumerate([UNK_TOKEN] + words)},
        id_to_token=[UNK_TOKEN] + words, doc_frequency=[0] + df.tolist())
    tm.save_tsv(str(stem) + ".tm_vocab.tsv")
    lm.save_tsv(str(stem) + ".lm_vocab.tsv")
    print(f"sampled {n} documents over {timeline.num_slices} slices "
          f"(vocabulary {V}) -> {stem}")
    return EXIT_OK


def cmd_ingest(args, conf: CommandConfig) -> int:
    from dtam.corpus import (build_lm_vocabulary, build_tm_vocabulary,
                             encode_documents, ingest_jsonl, save_timeline,
                             time_bucketize, tokenize)

    sec = conf.section("ingest")
    min_words = int(_pop(sec, "min_words", 20))
    min_df = int(_pop(sec, "min_df", 5))
    max_size = int(_pop(sec, "max_size", 5000))
    min_freq = int(_pop(sec, "min_freq", 2))
    granularity = _pop(sec, "granularity", "weekly")
    width_seconds = _pop(sec, "width_seconds", None)
    subsample = _pop(sec, "subsample_per_slice", None)
    seed = _pop(sec, "seed", None)
    if sec:
        raise UsageError(f"unknown [ingest] keys: {sorted(sec)}")

    raw_docs = ingest_jsonl(args.input, min_words=min_words)
    if not raw_docs:
        raise DataError("no documents survive ingestion filters")
    token_lists = [tokenize(r.text) for r in raw_docs]
    tm = build_tm_vocabulary(token_lists, min_df=min_df, max_size=max_size)
    lm = build_lm_vocabulary(token_lists, min_freq=min_freq)
    docs = encode_documents(raw_docs, tm, lm)
    kept = [d for d in docs if d.bow.total > 0]
    dropped = len(docs) - len(kept)
    timeline = time_bucketize(
        kept, granularity=granularity,
        width_seconds=None if width_seconds is None else float(width_seconds),
        subsample_per_slice=None if subsample is None else int(subsample),
        seed=None if seed is None else int(seed))

    stem = _out_path(args, args.stem)
    save_timeline(stem, timeline)
    tm.save_tsv(str(stem) + ".tm_vocab.tsv")
    lm.save_tsv(str(stem) + ".lm_vocab.tsv")
    print(f"ingested {len(kept)} documents ({dropped} fully out of "
          f"vocabulary) into {timeline.num_slices} slices; "
          f"tm vocabulary {len(tm)}, lm vocabulary {len(lm)} -> {stem}")
    return EXIT_OK


def cmd_train(args, conf: CommandConfig) -> int:
    from dtam.trainer import save_checkpoint, train

    config, timeline, train_tl, val_docs, scaler, vocab_hash, lm_size = \
        _prepare_training(args, conf, "train")
    if args.deterministic:
        from dataclasses import replace
        config = replace(config, deterministic=True)
    model, history = train(config, train_tl, val_docs,
                           lm_vocab_size=lm_size)
    if lm_size is None:
        lm_size = _infer_lm_vocab_size(timeline.all_documents())
    out = _out_path(args, args.out)
    save_checkpoint(out, model, config, vocab_size=timeline.vocab_size,
                    lm_vocab_size=lm_size, vocab_hash=vocab_hash)
    Path(str(out) + ".history.csv").write_text(history.to_csv(),
                                               encoding="utf-8")
    if scaler is not None:
        _write_scaler(Path(str(out) + ".scaler"), scaler)
    best = min(e.val_rmse for e in history.epochs) if history.epochs \
        else float("nan")
    flag = " (diverged; best snapshot restored)" if history.diverged else ""
    print(f"trained {config.model_kind} for {len(history.epochs)} epochs; "
          f"best validation RMSE {best:.6f}{flag} -> {out}")
    return EXIT_OK


def cmd_gridsearch(args, conf: CommandConfig) -> int:
    from dtam.trainer import grid_search, leaderboard_to_csv

    sec = conf.section("gridsearch")
    budget = _pop(sec, "budget", None)
    if not sec:
        raise UsageError("the [gridsearch] section must list at least one "
                         "swept key, e.g. learning_rate = 1e-3, 5e-4")
    space = {}
    for key, value in sec.items():
        space[key] = list(value) if isinstance(value, (list, tuple)) \
            else [value]
    base, timeline, train_tl, val_docs, _, _, lm_size = \
        _prepare_training(args, conf, "gridsearch")
    best, leaderboard = grid_search(
        space, train_tl, val_docs, base,
        budget=None if budget is None else int(budget),
        lm_vocab_size=lm_size)

    out = _out_path(args, args.out)
    Path(str(out) + ".leaderboard.csv").write_text(
        leaderboard_to_csv(leaderboard), encoding="utf-8")
    from dataclasses import asdict
    lines = ["[train]"]
    for key, value in sorted(asdict(best).items()):
        lines.append(f"{key} = {value!r}")
    Path(str(out) + ".best.config").write_text("\n".join(lines) + "\n",
                                               encoding="utf-8")
    overrides, val, _ = leaderboard[0]
    print(f"grid searched {len(leaderboard)} cells; best validation RMSE "
          f"{val:.6f} at {overrides} -> {out}")
    return EXIT_OK


def _prediction_targets(docs, ckpt_stem: Path):
    """Ratings for evaluation; fall back to the training-time label scaler."""
    if all(d.rating is not None for d in docs):
        return docs
    scaler_path = Path(str(ckpt_stem) + ".scaler")
    if not scaler_path.exists():
        raise DataError(
            "prediction documents lack ratings and no label scaler sits "
            f"next to the checkpoint ({scaler_path})")
    scaler = _read_scaler(scaler_path)
    return scaler.apply(docs, clip=True)


def cmd_eval(args, conf: CommandConfig) -> int:
    import numpy as np

    from dtam.corpus import load_timeline, temporal_split
    from dtam.errors import DomainError
    from dtam.forecast import (ForecastConfig, ModelScorer,
                               ppl_p_forecast, predict_future_ratings)
    from dtam.metrics import (EvalReport, per_slice_r2_series, ppl_dc, r2,
                              topic_coherence)
    from dtam.numcore import no_grad
    from dtam.trainer import load_checkpoint

    sec = conf.section("eval")
    n_prediction = int(_pop(sec, "n_prediction", 10))
    n_samples = int(_pop(sec, "ppl_samples", 32))
    seed = int(_pop(sec, "seed", 0))
    top_n = int(_pop(sec, "top_n", 10))
    if sec:
        raise UsageError(f"unknown [eval] keys: {sorted(sec)}")

    timeline = load_timeline(args.data)
    history, prediction = temporal_split(timeline, n_prediction)
    tm_vocab, _ = _load_vocab_pair(Path(args.data))
    expected = tm_vocab.content_hash() if tm_vocab is not None else None
    model, config, meta = load_checkpoint(args.checkpoint,
                                          expected_vocab_hash=expected)
    if int(meta["vocab-size"]) != timeline.vocab_size:
        raise DataError(
            f"checkpoint vocabulary size {meta['vocab-size']} != timeline "
            f"vocabulary size {timeline.vocab_size}")
    if model.kind == "mlp":
        raise DomainError(
            "the bag-of-words baseline has no topic metrics; use `predict` "
            "and score ratings externally")

    docs = [d for d in prediction.all_documents() if d.bow.total > 0]
    if not docs:
        raise DataError("prediction split has no scorable documents")
    docs = _prediction_targets(docs, Path(args.checkpoint))

    preds, _ = predict_future_ratings(
        docs, history, model, ForecastConfig(mode="mean", seed=seed))
    targets = np.array([d.rating for d in docs])
    times = [d.time_index for d in docs]
    r2_value = r2(preds, targets)
    per_slice = per_slice_r2_series(preds, targets, times)
    ppl_p = ppl_p_forecast(docs, history, model,
                           ForecastConfig(n_samples=n_samples, seed=seed))
    with no_grad():
        scorer = ModelScorer(model, history)
        ppl_dc_value = ppl_dc(scorer, docs)
        beta = scorer.beta_for(docs[0].time_index)
    tc = topic_coherence(beta, docs, top_n=top_n)

    report = EvalReport(
        r2=r2_value, ppl_dc=ppl_dc_value, ppl_p=ppl_p, tc=tc,
        per_slice=per_slice,
        fingerprint=_file_fingerprint(
            Path(args.checkpoint).with_suffix(".manifest"),
            Path(args.checkpoint).with_suffix(".bin"),
            Path(args.data).with_suffix(".docs.jsonl")))
    out = _out_path(args, args.out)
    report.save(out)
    sys.stdout.write(report.to_text())
    return EXIT_OK


def cmd_predict(args, conf: CommandConfig) -> int:
    from dataclasses import replace

    from dtam.corpus import (assign_time_index, encode_documents,
                             ingest_jsonl, load_timeline)
    from dtam.forecast import (ForecastConfig, predict_future_ratings,
                               predictions_to_csv)
    from dtam.trainer import load_checkpoint

    sec = conf.section("predict")
    fc = ForecastConfig(
        n_samples=int(_pop(sec, "n_samples", 32)),
        horizon=int(_pop(sec, "horizon", 1)),
        mode=_pop(sec, "mode", "mean"),
        condition_future_bow=bool(_pop(sec, "condition_future_bow", False)),
        seed=int(_pop(sec, "seed", 0)))
    min_words = int(_pop(sec, "min_words", 1))
    if sec:
        raise UsageError(f"unknown [predict] keys: {sorted(sec)}")

    history = load_timeline(args.data)
    tm_vocab, lm_vocab = _load_vocab_pair(Path(args.data))
    if tm_vocab is None or lm_vocab is None:
        raise DataError(
            f"predict needs {args.data}.tm_vocab.tsv and .lm_vocab.tsv to "
            "encode new documents")
    expected = tm_vocab.content_hash()
    model, config, meta = load_checkpoint(args.checkpoint,
                                          expected_vocab_hash=expected)

    raw = ingest_jsonl(args.docs, min_words=min_words)
    docs = encode_documents(raw, tm_vocab, lm_vocab)
    docs = [replace(d, time_index=assign_time_index(history, d.timestamp))
            for d in docs]
    scaler_path = Path(str(args.checkpoint) + ".scaler")
    if scaler_path.exists():
        docs = _read_scaler(scaler_path).apply(docs, clip=True)

    means, stds = predict_future_ratings(docs, history, model, fc)
    out = _out_path(args, args.out)
    out.write_text(predictions_to_csv(docs, means, stds), encoding="utf-8")
    print(f"predicted {len(docs)} documents -> {out}")
    return EXIT_OK


def cmd_topics(args, conf: CommandConfig) -> int:
    from dtam.dtm import topic_word_matrix
    from dtam.errors import DomainError
    from dtam.metrics import _top_word_ids
    from dtam.numcore import no_grad
    from dtam.trainer import load_checkpoint

    model, config, meta = load_checkpoint(args.checkpoint)
    if model.kind == "mlp":
        raise DomainError("the bag-of-words baseline has no topics to list")
    tm_vocab = None
    if args.vocab is not None:
        from dtam.corpus import Vocabulary
        tm_vocab = Vocabulary.load_tsv(args.vocab)
    with no_grad():
        beta = topic_word_matrix(model.gen.alpha, model.gen.rho_tm).data
    rows = []
    for k in range(beta.shape[0]):
        ids = _top_word_ids(beta[k], args.n)
        if tm_vocab is not None:
            tokens = [tm_vocab.id_to_token[int(v)] for v in ids]
        else:
            tokens = [str(int(v)) for v in ids]
        rows.append(" ".join(tokens))
    text = "\n".join(rows) + "\n"
    out = _out_path(args, args.out)
    out.write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


def cmd_timeline(args, conf: CommandConfig) -> int:
    import numpy as np

    from dtam.corpus import collapse_timeline, load_timeline
    from dtam.dtm import decode_theta, encode_global, encode_local
    from dtam.errors import DomainError
    from dtam.numcore import no_grad
    from dtam.trainer import load_checkpoint

    timeline = load_timeline(args.data)
    model, config, meta = load_checkpoint(args.checkpoint)
    if model.kind == "mlp":
        raise DomainError("the bag-of-words baseline has no topic activity "
                          "to export")
    work = collapse_timeline(timeline) if model.kind == "tam-static" \
        else timeline
    K = model.gen.dims.n_topics
    rows = ["time_index,topic,theta_mean,theta_two_std"]
    with no_grad():
        traj = encode_global(work.slice_bows(), model.inf, model.gen)
        for t, slice_docs in enumerate(work.slices):
            index = work.first_index + t
            if not slice_docs:
                for k in range(K):
                    rows.append(f"{index},{k},,")
                continue
            w = np.stack([d.bow.dense(work.vocab_size) for d in slice_docs])
            _, zeta = encode_local(w, traj.eta[t], model.inf)
            theta = decode_theta(zeta, model.gen).data
            mean = theta.mean(axis=0)
            two_std = 2.0 * theta.std(axis=0)
            for k in range(K):
                rows.append(f"{index},{k},{float(mean[k])!r},"
                            f"{float(two_std[k])!r}")
    out = _out_path(args, args.out)
    out.write_text("\n".join(rows) + "\n", encoding="utf-8")
    print(f"exported {work.num_slices * K} topic-activity rows -> {out}")
    return EXIT_OK


# ---- argument parsing and dispatch ----------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="dtam",
                     description="dynamic topic attention model pipeline")
    parser.add_argument("--version", action="version",
                        version=f"dtam checkpoint-format "
                                f"{CHECKPOINT_FORMAT_VERSION}")
    parser.add_argument("--config", default=None,
                        help="key=value config file with per-subcommand "
                             "sections")
    parser.add_argument("--set", action="append", default=[],
                        metavar="KEY=VALUE",
                        help="override a config key ([section.]key=value); "
                             "repeatable")
    parser.add_argument("--output-dir", default=None,
                        help=f"directory for outputs (default: "
                             f"${OUTPUT_DIR_ENV} or '.')")
    parser.add_argument("--threads", type=int, default=None,
                        help="bound BLAS/OpenMP thread pools")
    parser.add_argument("--deterministic", action="store_true",
                        help="single-threaded reductions and zeroed "
                             "wall-clock telemetry")

    sub = parser.add_subparsers(dest="subcommand", metavar="SUBCOMMAND")

    p = sub.add_parser("ingest", help="build vocabularies and a timeline "
                                      "from raw JSONL")
    p.add_argument("input", help="raw JSONL file")
    p.add_argument("--stem", required=True, help="output stem")

    p = sub.add_parser("sample", help="generate a synthetic drifting corpus")
    p.add_argument("--stem", required=True, help="output stem")

    p = sub.add_parser("train", help="train a model on the causal split")
    p.add_argument("--data", required=True, help="timeline stem from "
                                                 "ingest/sample")
    p.add_argument("--out", required=True, help="checkpoint stem")

    p = sub.add_parser("gridsearch", help="sweep hyperparameters, rank by "
                                          "validation RMSE")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="leaderboard stem")

    p = sub.add_parser("eval", help="R2/PPL-DC/PPL-P/TC on the prediction "
                                    "split")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True, help="report stem")

    p = sub.add_parser("predict", help="score future documents from raw "
                                       "JSONL")
    p.add_argument("--data", required=True, help="history timeline stem")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--docs", required=True, help="future documents JSONL")
    p.add_argument("--out", required=True, help="predictions CSV path")

    p = sub.add_parser("topics", help="top words per topic")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--vocab", default=None, help="tm vocabulary TSV "
                                                 "(token ids otherwise)")
    p.add_argument("-n", "--n", type=int, default=30,
                   help="words per topic (default 30)")

    p = sub.add_parser("timeline", help="per-slice topic activity bands CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)

    return parser


_HANDLERS = {
    "ingest": cmd_ingest,
    "sample": cmd_sample,
    "train": cmd_train,
    "gridsearch": cmd_gridsearch,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "topics": cmd_topics,
    "timeline": cmd_timeline,
}


def _pin_threads(n: int) -> None:
    for var in _THREAD_ENV_VARS:
        os.environ[var] = str(n)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        try:
            args = parser.parse_args(argv)
        except SystemExit as e:        # --help / --version exit normally
            return int(e.code or 0)
        if args.subcommand is None:
            raise UsageError(parser.format_help())
        if args.deterministic:
            _pin_threads(1)
        elif args.threads is not None:
            if args.threads < 1:
                raise UsageError("--threads must be at least 1")
            _pin_threads(args.threads)
        if args.output_dir is None:
            args.output_dir = os.environ.get(OUTPUT_DIR_ENV, ".")
        conf = CommandConfig(args.config, args.set)
        return _HANDLERS[args.subcommand](args, conf)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except DtamError as e:             # domain and shape misuse
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
