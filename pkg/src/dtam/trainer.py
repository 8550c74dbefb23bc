"""Joint training: optimizers, early stopping, grid search, checkpoints.

Four model kinds share one loop. "dtam" is the dynamic topic model with
attention pooling; "tam-static" is the identical architecture trained on the
timeline collapsed to a single slice; "dst" regresses straight off the local
latent; "mlp" is the bag-of-words regressor with no topic model at all.

Minibatches are drawn within a slice, but every optimizer step re-runs the
global recurrence over the full W_1..T so the eta chain always sees slices
in time order. The step objective is the per-document ELBO estimate: the
batch-mean local terms plus the chain KL spread across documents
(kl_global / N), plus alpha_y times the batch RMSE. Summed over an epoch
this counts each corpus term once.
"""

from __future__ import annotations

import itertools
import json
import time
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from dtam import CHECKPOINT_FORMAT_VERSION
from dtam.corpus import CorpusTimeline, collapse_timeline
from dtam.dtm import (
    GenerativeParams,
    InferenceParams,
    ModelDims,
    TrendParams,
    decode_theta,
    dynamic_topic_embeddings,
    encode_global,
    encode_local,
    eta_prior_step,
    generative_init,
    inference_init,
    topic_word_matrix,
    trend_init,
    xi_prior_step,
    xi_trajectory,
    bow_log_likelihood,
    elbo,
)
from dtam.errors import DataError, DomainError, NumericError, ShapeError
from dtam.numcore import (
    DiagGaussian,
    MlpParams,
    Tensor,
    kl_diag_gaussian,
    load_tensor_blob,
    mlp_init,
    no_grad,
    save_tensor_blob,
    tile_rows,
)
from dtam.tam import (
    AttentionRegressorParams,
    attention_regressor_init,
    dst_forward,
    encode_words_batch,
    mlp_bow_forward,
    predict_rating_batch,
    regression_loss,
    topic_attention_pool_batch,
)

MODEL_KINDS = ("dtam", "tam-static", "dst", "mlp")
OPTIMIZER_KINDS = ("adam", "sgd")

_TUPLE_FIELDS = ("transition_hidden", "decoder_hidden", "encoder_hidden",
                 "query_hidden", "regressor_hidden")


@dataclass
class TrainConfig:
    model_kind: str = "dtam"
    n_topics: int = 25
    learning_rate: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 50
    patience: int = 5
    optimizer: str = "adam"
    alpha_y: float = 1.0
    delta_tr: float | None = None     # None: chosen from the topic count
    delta_att: float = 0.1
    seed: int = 0
    # architecture
    embed_dim: int = 300
    eta_dim: int = 64
    zeta_dim: int | None = None       # None: equals n_topics
    transition_hidden: tuple = (64, 64)
    decoder_hidden: tuple = ()
    encoder_hidden: tuple = (256, 256)
    recurrence_hidden: int = 400
    recurrence_layers: int = 4
    cell_kind: str = "lstm"
    word_hidden: int = 128
    word_layers: int = 1
    lm_embed_dim: int = 128
    query_hidden: tuple = ()
    regressor_hidden: tuple = ()
    dropout_rate: float = 0.0
    grad_clip: float = 5.0
    # feature flags
    delta_is_variance: bool = False
    per_step_conditioning: bool = False
    trend: bool = False
    xi_dim: int = 8
    gate_clamp: bool = False
    residual_outside: bool = False
    deterministic: bool = True

    def __post_init__(self):
        if self.model_kind not in MODEL_KINDS:
            raise DomainError(f"unknown model kind {self.model_kind!r}")
        if self.optimizer not in OPTIMIZER_KINDS:
            raise DomainError(f"unknown optimizer {self.optimizer!r}")
        if self.learning_rate <= 0:
            raise DomainError("learning_rate must be positive")
        if self.batch_size < 1 or self.n_topics < 1:
            raise DomainError("batch_size and n_topics must be positive")
        if self.max_epochs < 0:
            raise DomainError("max_epochs must be nonnegative")
        if self.patience < 1:
            raise DomainError("patience must be at least 1")
        if self.alpha_y < 0:
            raise DomainError("alpha_y must be nonnegative")
        for name in _TUPLE_FIELDS:
            setattr(self, name, tuple(getattr(self, name)))


def config_from_dict(raw: dict) -> TrainConfig:
    names = {f.name for f in fields(TrainConfig)}
    unknown = set(raw) - names
    if unknown:
        raise DataError(f"unknown config keys: {sorted(unknown)}")
    return TrainConfig(**raw)


@dataclass
class ModelParams:
    """Parameter bundle for one model kind; unused parts stay None."""

    kind: str
    gen: GenerativeParams | None = None
    inf: InferenceParams | None = None
    att: AttentionRegressorParams | None = None
    trend: TrendParams | None = None
    dst_head: MlpParams | None = None
    bow_encoder: MlpParams | None = None
    bow_regressor: MlpParams | None = None

    def named_tensors(self) -> dict:
        out = {}
        for part, prefix in ((self.gen, "gen"), (self.inf, "inf"),
                             (self.att, "att"), (self.trend, "trend"),
                             (self.dst_head, "dst_head"),
                             (self.bow_encoder, "bow_encoder"),
                             (self.bow_regressor, "bow_regressor")):
            if part is not None:
                out.update(dict(part.named_tensors(prefix)))
        return out

    @property
    def uses_topic_model(self) -> bool:
        return self.kind != "mlp"

    def snapshot(self) -> dict:
        return {k: t.data.copy() for k, t in self.named_tensors().items()}

    def restore(self, snap: dict) -> None:
        named = self.named_tensors()
        if set(named) != set(snap):
            raise ShapeError("snapshot does not match this model's tensors")
        for k, t in named.items():
            t.data[...] = snap[k]


def build_model(config: TrainConfig, vocab_size: int, lm_vocab_size: int,
                rng: np.random.Generator) -> ModelParams:
    kind = config.model_kind
    if kind == "mlp":
        return ModelParams(
            kind=kind,
            bow_encoder=mlp_init([vocab_size, config.word_hidden], rng),
            bow_regressor=mlp_init(
                [config.word_hidden, *config.regressor_hidden, 1], rng),
        )
    zeta_dim = config.n_topics if config.zeta_dim is None else config.zeta_dim
    dims = ModelDims(n_topics=config.n_topics, vocab_size=vocab_size,
                     embed_dim=config.embed_dim, eta_dim=config.eta_dim,
                     zeta_dim=zeta_dim)
    gen = generative_init(dims, rng,
                          transition_hidden=config.transition_hidden,
                          decoder_hidden=config.decoder_hidden,
                          delta_tr=config.delta_tr,
                          delta_is_variance=config.delta_is_variance)
    inf = inference_init(dims, rng, encoder_hidden=config.encoder_hidden,
                         recurrence_hidden=config.recurrence_hidden,
                         recurrence_layers=config.recurrence_layers,
                         cell_kind=config.cell_kind,
                         dropout_rate=config.dropout_rate,
                         per_step_conditioning=config.per_step_conditioning)
    model = ModelParams(kind=kind, gen=gen, inf=inf)
    if kind == "dst":
        model.dst_head = mlp_init([zeta_dim, *config.regressor_hidden, 1], rng)
    else:
        model.att = attention_regressor_init(
            lm_vocab_size, config.embed_dim, rng,
            word_hidden=config.word_hidden, word_layers=config.word_layers,
            lm_embed_dim=config.lm_embed_dim,
            query_hidden=config.query_hidden,
            regressor_hidden=config.regressor_hidden,
            delta_att=config.delta_att, alpha_y=config.alpha_y,
            dropout_rate=config.dropout_rate)
    if config.trend:
        model.trend = trend_init(dims, rng, xi_dim=config.xi_dim,
                                 word_hidden=config.word_hidden,
                                 gate_clamp=config.gate_clamp)
    return model


# ---- optimizers ------------------------------------------------------------------


@dataclass
class OptimizerState:
    kind: str
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def optimizer_init(named: dict, kind: str = "adam",
                   learning_rate: float = 1e-3) -> OptimizerState:
    if kind not in OPTIMIZER_KINDS:
        raise DomainError(f"unknown optimizer {kind!r}")
    state = OptimizerState(kind=kind, learning_rate=learning_rate)
    if kind == "adam":
        for name, t in named.items():
            state.m[name] = np.zeros_like(t.data)
            state.v[name] = np.zeros_like(t.data)
    return state


def clip_global_norm(named: dict, max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most max_norm."""
    total = 0.0
    for t in named.values():
        if t.grad is not None:
            total += float((t.grad * t.grad).sum())
    norm = float(np.sqrt(total))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for t in named.values():
            if t.grad is not None:
                t.grad *= scale
    return norm


def optimizer_step(state: OptimizerState, named: dict) -> None:
    state.step_count += 1
    lr = state.learning_rate
    for name, t in named.items():
        g = t.grad
        if g is None:
            continue
        if state.kind == "sgd":
            t.data -= lr * g
        else:
            m = state.m[name]
            v = state.v[name]
            m *= state.beta1
            m += (1.0 - state.beta1) * g
            v *= state.beta2
            v += (1.0 - state.beta2) * g * g
            mhat = m / (1.0 - state.beta1 ** state.step_count)
            vhat = v / (1.0 - state.beta2 ** state.step_count)
            t.data -= lr * mhat / (np.sqrt(vhat) + state.eps)


def zero_grads(named: dict) -> None:
    for t in named.values():
        t.grad = None


# ---- forward passes ---------------------------------------------------------------


def _rating_targets(docs) -> np.ndarray:
    targets = []
    for d in docs:
        if d.rating is None:
            raise DataError(f"document {d.doc_id} has no rating")
        targets.append(d.rating)
    return np.asarray(targets, dtype=np.float64)


def batch_step_loss(model: ModelParams, config: TrainConfig, W: np.ndarray,
                    t: int, docs, n_total: int, rng) -> tuple:
    """Per-document training objective on one single-slice minibatch.

    Returns (loss Tensor, stats dict). The full eta chain is recomputed so
    its KL is exact; it enters at weight 1/n_total per document.
    """
    B = len(docs)
    targets = _rating_targets(docs)
    if model.kind == "mlp":
        wd = np.stack([d.bow.dense(W.shape[1]) for d in docs])
        preds = mlp_bow_forward(wd, model.bow_encoder, model.bow_regressor)
        reg = regression_loss(preds, targets)
        return reg, {"recon": 0.0, "kl_local": 0.0, "kl_global": 0.0,
                     "reg_loss": reg.item(), "n_docs": B}

    gen, inf = model.gen, model.inf
    dims = gen.dims
    global_noise = rng.standard_normal((W.shape[0], dims.eta_dim))
    traj = encode_global(W, inf, gen, noise=global_noise, rng=rng, training=True)

    kl_global = kl_diag_gaussian(traj.eta_posteriors[0], eta_prior_step(None, gen))
    for i in range(1, traj.num_steps):
        kl_global = kl_global + kl_diag_gaussian(
            traj.eta_posteriors[i], eta_prior_step(traj.eta[i - 1], gen))

    xis = None
    kl_trend = None
    if model.trend is not None:
        trend_noise = rng.standard_normal((W.shape[0], model.trend.xi_dim))
        xis, xi_posts = xi_trajectory(W, model.trend, noise=trend_noise,
                                      rng=rng, training=True)
        kl_trend = kl_diag_gaussian(xi_posts[0], xi_prior_step(None, model.trend))
        for i in range(1, len(xis)):
            kl_trend = kl_trend + kl_diag_gaussian(
                xi_posts[i], xi_prior_step(xis[i - 1], model.trend))

    wd = np.stack([d.bow.dense(dims.vocab_size) for d in docs])
    eps = rng.standard_normal((B, dims.zeta_dim))
    q_zeta, zeta = encode_local(wd, traj.eta[t], inf, noise=eps, rng=rng,
                                training=True)
    prior_mean = tile_rows(traj.eta[t] @ gen.zeta_weight + gen.zeta_bias, B)
    p_zeta = DiagGaussian(prior_mean, Tensor(np.ones((B, dims.zeta_dim))))
    kl_local = kl_diag_gaussian(q_zeta, p_zeta)
    theta = decode_theta(zeta, gen)
    if model.trend is not None:
        alpha_t = dynamic_topic_embeddings(xis[t], gen.alpha, model.trend)
        beta = topic_word_matrix(alpha_t, gen.rho_tm)
    else:
        beta = topic_word_matrix(gen.alpha, gen.rho_tm)
    recon = bow_log_likelihood(wd, theta, beta)

    if model.kind == "dst":
        preds = dst_forward(zeta, model.dst_head)
    else:
        u, mask = encode_words_batch([d.lm_token_ids for d in docs], model.att,
                                     rng=rng, training=True)
        alpha_pool = alpha_t if model.trend is not None else gen.alpha
        s = topic_attention_pool_batch(u, mask, theta, alpha_pool, model.att)
        preds = predict_rating_batch(s, model.att)
    reg = regression_loss(preds, targets)

    loss = (kl_local - recon) * (1.0 / B) + kl_global * (1.0 / n_total)
    if kl_trend is not None:
        loss = loss + kl_trend * (1.0 / n_total)
    loss = loss + config.alpha_y * reg
    stats = {"recon": recon.item() / B, "kl_local": kl_local.item() / B,
             "kl_global": kl_global.item(), "reg_loss": reg.item(),
             "n_docs": B}
    return loss, stats


def predict_ratings(model: ModelParams, etas, docs, first_index: int = 0,
                    batch_size: int = 256) -> np.ndarray:
    """Deterministic rating predictions (posterior means, eval mode).

    ``etas`` is the list of per-slice eta tensors from the training
    timeline; the static kind always reads slice 0. Gradients are not
    recorded.
    """
    preds = np.zeros(len(docs))
    with no_grad():
        order = list(range(len(docs)))
        if model.kind == "mlp":
            V = model.bow_encoder.in_size
            for lo in range(0, len(docs), batch_size):
                chunk = [docs[i] for i in order[lo:lo + batch_size]]
                wd = np.stack([d.bow.dense(V) for d in chunk])
                out = mlp_bow_forward(wd, model.bow_encoder, model.bow_regressor)
                preds[lo:lo + len(chunk)] = np.atleast_1d(out.data)
            return preds
        by_slice = {}
        for i, d in enumerate(docs):
            if model.kind == "tam-static":
                key = 0
            else:
                key = d.time_index - first_index
                if not 0 <= key < len(etas):
                    raise DataError(
                        f"document {d.doc_id} falls outside the encoded "
                        f"timeline (slice {d.time_index})")
            by_slice.setdefault(key, []).append(i)
        gen = model.gen
        beta_alpha = gen.alpha
        V = gen.dims.vocab_size
        for key in sorted(by_slice):
            idx = by_slice[key]
            for lo in range(0, len(idx), batch_size):
                sel = idx[lo:lo + batch_size]
                chunk = [docs[i] for i in sel]
                wd = np.stack([d.bow.dense(V) for d in chunk])
                _, zeta = encode_local(wd, etas[key], model.inf, noise=None)
                if model.kind == "dst":
                    out = dst_forward(zeta, model.dst_head)
                else:
                    theta = decode_theta(zeta, gen)
                    u, mask = encode_words_batch(
                        [d.lm_token_ids for d in chunk], model.att)
                    s = topic_attention_pool_batch(u, mask, theta, beta_alpha,
                                                   model.att)
                    out = predict_rating_batch(s, model.att)
                preds[sel] = np.atleast_1d(out.data)
    return preds


def posterior_eta_means(model: ModelParams, timeline: CorpusTimeline):
    """Eval-mode eta chain (posterior means) over a timeline's slice BoWs."""
    with no_grad():
        traj = encode_global(timeline.slice_bows(), model.inf, model.gen,
                             noise=None)
    return traj.eta


def train_objective(model: ModelParams, config: TrainConfig,
                    timeline: CorpusTimeline) -> float:
    """Deterministic per-document training objective at posterior means.

    Unlike the stochastic step losses this is directly comparable across
    epochs, so it is what convergence checks should read.
    """
    docs = timeline.all_documents()
    targets = _rating_targets(docs)
    if model.kind == "mlp":
        preds = predict_ratings(model, None, docs)
        return float(np.sqrt(np.mean((preds - targets) ** 2)))
    with no_grad():
        res = elbo(timeline, model.gen, model.inf, trend=model.trend)
        per_doc = res.loss.item() / res.num_documents
        etas = posterior_eta_means(model, timeline)
        preds = predict_ratings(model, etas, docs,
                                first_index=timeline.first_index)
    rmse = float(np.sqrt(np.mean((preds - targets) ** 2)))
    return per_doc + config.alpha_y * rmse


def validation_rmse(model: ModelParams, train_timeline: CorpusTimeline,
                    val_docs, first_index: int = 0) -> float:
    targets = _rating_targets(val_docs)
    if model.kind == "mlp":
        preds = predict_ratings(model, None, val_docs)
    else:
        etas = posterior_eta_means(model, train_timeline)
        preds = predict_ratings(model, etas, val_docs, first_index=first_index)
    return float(np.sqrt(np.mean((preds - targets) ** 2)))


# ---- the loop --------------------------------------------------------------------


@dataclass
class EpochStats:
    epoch: int
    recon: float
    kl_local: float
    kl_global: float
    reg_loss: float
    val_rmse: float
    seconds: float
    step_loss_mean: float = 0.0
    train_objective: float = 0.0


@dataclass
class TrainHistory:
    epochs: list = field(default_factory=list)
    best_epoch: int = -1
    diverged: bool = False

    def to_csv(self, zero_seconds: bool = False) -> str:
        rows = ["epoch,recon,kl_local,kl_global,reg_loss,val_rmse,seconds"]
        for e in self.epochs:
            secs = 0.0 if zero_seconds else e.seconds
            rows.append(f"{e.epoch},{e.recon!r},{e.kl_local!r},"
                        f"{e.kl_global!r},{e.reg_loss!r},{e.val_rmse!r},"
                        f"{secs!r}")
        return "\n".join(rows) + "\n"


def _epoch_batches(timeline: CorpusTimeline, batch_size: int, rng):
    batches = []
    for t, docs in enumerate(timeline.slices):
        if not docs:
            continue
        order = rng.permutation(len(docs))
        for lo in range(0, len(docs), batch_size):
            batches.append((t, [docs[i] for i in order[lo:lo + batch_size]]))
    batch_order = rng.permutation(len(batches))
    return [batches[i] for i in batch_order]


def train(config: TrainConfig, timeline: CorpusTimeline, val_docs,
          lm_vocab_size: int | None = None):
    """Optimize the joint objective; returns (ModelParams, TrainHistory).

    The returned parameters are the best-validation snapshot. A non-finite
    loss aborts the run and returns the last good snapshot.
    """
    work = collapse_timeline(timeline) if config.model_kind == "tam-static" \
        else timeline
    if lm_vocab_size is None:
        top = 0
        for d in list(work.all_documents()) + list(val_docs):
            if len(d.lm_token_ids):
                top = max(top, int(np.max(d.lm_token_ids)))
        lm_vocab_size = top + 1
    rng = np.random.default_rng(config.seed)
    model = build_model(config, work.vocab_size, lm_vocab_size, rng)
    named = model.named_tensors()
    history = TrainHistory()
    if config.max_epochs == 0:
        return model, history

    opt = optimizer_init(named, kind=config.optimizer,
                         learning_rate=config.learning_rate)
    W = work.slice_bows()
    n_total = sum(len(s) for s in work.slices)
    best_snap = model.snapshot()
    best_rmse = float("inf")
    bad_epochs = 0

    for epoch in range(1, config.max_epochs + 1):
        t0 = time.perf_counter()
        sums = {"recon": 0.0, "kl_local": 0.0, "kl_global": 0.0,
                "reg_loss": 0.0}
        n_seen = 0
        step_losses = []
        try:
            for t, docs in _epoch_batches(work, config.batch_size, rng):
                zero_grads(named)
                loss, stats = batch_step_loss(model, config, W, t, docs,
                                              n_total, rng)
                if not np.isfinite(loss.data):
                    raise NumericError("non-finite training loss")
                loss.backward()
                clip_global_norm(named, config.grad_clip)
                optimizer_step(opt, named)
                b = stats["n_docs"]
                n_seen += b
                step_losses.append(loss.item())
                for key in ("recon", "kl_local", "reg_loss"):
                    sums[key] += stats[key] * b
                sums["kl_global"] += stats["kl_global"] * b
        except NumericError:
            model.restore(best_snap)
            history.diverged = True
            return model, history
        val = validation_rmse(model, work, val_docs,
                              first_index=work.first_index)
        if not np.isfinite(val):
            model.restore(best_snap)
            history.diverged = True
            return model, history
        history.epochs.append(EpochStats(
            epoch=epoch,
            recon=sums["recon"] / n_seen,
            kl_local=sums["kl_local"] / n_seen,
            kl_global=sums["kl_global"] / n_seen,
            reg_loss=sums["reg_loss"] / n_seen,
            val_rmse=val,
            seconds=0.0 if config.deterministic else time.perf_counter() - t0,
            step_loss_mean=float(np.mean(step_losses)),
            train_objective=train_objective(model, config, work),
        ))
        if val < best_rmse:
            best_rmse = val
            best_snap = model.snapshot()
            history.best_epoch = epoch
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= config.patience:
                break
    model.restore(best_snap)
    return model, history


# ---- grid search ------------------------------------------------------------------

DEFAULT_GRID = {
    "learning_rate": [1e-3, 5e-4],
    "batch_size": [32, 128],
    "alpha_y": [1.0, 100.0, 500.0, 1000.0],
    "n_topics": [25, 50, 100],
}


def grid_search(space: dict, timeline: CorpusTimeline, val_docs,
                base_config: TrainConfig, budget: int | None = None,
                lm_vocab_size: int | None = None):
    """Train every cell of a finite cartesian grid; rank by validation RMSE.

    Returns (best TrainConfig, leaderboard), the leaderboard sorted best
    first as (overrides dict, val_rmse, epochs_run) rows. ``budget`` caps
    the number of cells trained, taken in deterministic key order.
    """
    if not space:
        raise DomainError("grid space is empty")
    keys = sorted(space)
    for k in keys:
        if not list(space[k]):
            raise DomainError(f"grid dimension {k!r} has no values")
    cells = list(itertools.product(*(space[k] for k in keys)))
    if budget is not None:
        cells = cells[:budget]
    rows = []
    for cell in cells:
        overrides = dict(zip(keys, cell))
        config = replace(base_config, **overrides)
        model, history = train(config, timeline, val_docs,
                               lm_vocab_size=lm_vocab_size)
        work = collapse_timeline(timeline) if config.model_kind == "tam-static" \
            else timeline
        val = validation_rmse(model, work, val_docs,
                              first_index=work.first_index)
        rows.append((overrides, val, len(history.epochs)))
    order = sorted(range(len(rows)), key=lambda i: (rows[i][1], i))
    leaderboard = [rows[i] for i in order]
    best_config = replace(base_config, **leaderboard[0][0])
    return best_config, leaderboard


def leaderboard_to_csv(leaderboard) -> str:
    keys = sorted(leaderboard[0][0]) if leaderboard else []
    rows = [",".join(keys + ["val_rmse", "epochs"])]
    for overrides, val, epochs in leaderboard:
        cells = [repr(overrides[k]) for k in keys] + [repr(val), str(epochs)]
        rows.append(",".join(cells))
    return "\n".join(rows) + "\n"


# ---- checkpoints ------------------------------------------------------------------


def _config_to_json(config: TrainConfig) -> str:
    return json.dumps(asdict(config), sort_keys=True)


def _config_from_json(text: str) -> TrainConfig:
    raw = json.loads(text)
    for name in _TUPLE_FIELDS:
        if name in raw and raw[name] is not None:
            raw[name] = tuple(raw[name])
    return config_from_dict(raw)


def save_checkpoint(stem, model: ModelParams, config: TrainConfig,
                    vocab_size: int, lm_vocab_size: int,
                    vocab_hash: str = "") -> None:
    arrays = {name: t.data for name, t in model.named_tensors().items()}
    meta = {
        "format-version": str(CHECKPOINT_FORMAT_VERSION),
        "model-kind": model.kind,
        "vocab-hash": vocab_hash,
        "vocab-size": str(vocab_size),
        "lm-vocab-size": str(lm_vocab_size),
        "config": _config_to_json(config),
    }
    save_tensor_blob(stem, arrays, meta)


def load_checkpoint(stem, expected_vocab_hash: str | None = None):
    """Rebuild (ModelParams, TrainConfig, meta) from a saved checkpoint.

    Refuses to load when the stored vocabulary hash does not match the
    caller's expectation, or when the format version is unknown.
    """
    arrays, meta = load_tensor_blob(stem)
    version = meta.get("format-version", "")
    if version != str(CHECKPOINT_FORMAT_VERSION):
        raise DataError(
            f"unsupported checkpoint format version {version!r}; "
            f"this build reads version {CHECKPOINT_FORMAT_VERSION}")
    if expected_vocab_hash is not None and \
            meta.get("vocab-hash", "") != expected_vocab_hash:
        raise DataError(
            "checkpoint was trained against a different vocabulary "
            f"(hash {meta.get('vocab-hash', '')!r}); refusing to load")
    config = _config_from_json(meta["config"])
    model = build_model(config, int(meta["vocab-size"]),
                        int(meta["lm-vocab-size"]),
                        np.random.default_rng(0))
    named = model.named_tensors()
    if set(named) != set(arrays):
        raise DataError("checkpoint tensor names do not match the "
                        "architecture recorded in its config")
    for name, t in named.items():
        if arrays[name].shape != t.data.shape:
            raise DataError(
                f"checkpoint tensor {name} has shape {arrays[name].shape}, "
                f"expected {t.data.shape}")
        t.data[...] = arrays[name]
    return model, config, meta
