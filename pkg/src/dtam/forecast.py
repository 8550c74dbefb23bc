"""Rating and likelihood forecasts for documents beyond the training window.

The predictive distribution conditions on history through the variational
posterior over eta_{1:T}, rolls the prior transition forward to the target
slice, and draws the per-document latent from its prior (the future BoW is
not licensed for conditioning; an explicit flag enables it anyway). Every
Monte-Carlo quantity processes documents in sorted doc_id order, so results
are invariant to the order in which callers list documents.

The static model kind has a single global state and no transition, so it
scores every future document with that one state; the bag-of-words baseline
is deterministic and predicts with zero spread.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from math import exp

import numpy as np

from dtam.corpus import CorpusTimeline, collapse_timeline
from dtam.dtm import (
    bow_log_likelihood,
    decode_theta,
    dynamic_topic_embeddings,
    encode_global,
    encode_local,
    eta_prior_step,
    topic_word_matrix,
    xi_prior_step,
    xi_trajectory,
    zeta_prior,
)
from dtam.errors import DataError, DomainError, ShapeError
from dtam.numcore import Tensor, gaussian_reparam_sample, no_grad, tile_rows
from dtam.tam import (
    dst_forward,
    encode_words_batch,
    mlp_bow_forward,
    predict_rating,
    predict_rating_batch,
    topic_attention_pool_batch,
    trendy_attention_pool,
)
from dtam.trainer import ModelParams

ROLLOUT_MODES = ("mean", "sampled")


@dataclass
class ForecastConfig:
    n_samples: int = 32
    horizon: int = 1
    mode: str = "sampled"
    condition_future_bow: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.n_samples < 1:
            raise DomainError("n_samples must be at least 1")
        if self.horizon < 1:
            raise DomainError("horizon must be at least 1")
        if self.mode not in ROLLOUT_MODES:
            raise DomainError(f"unknown rollout mode {self.mode!r}")


def rollout_eta(eta_t: Tensor, n: int, gen, mode: str = "mean",
                noise=None) -> list:
    """Iterate the prior transition n steps from eta_t.

    mode="mean" follows transition means; "sampled" perturbs each step by
    ``noise`` (an (n, eta_dim) array) scaled by the transition stddev.
    """
    if n < 1:
        raise DomainError("rollout horizon must be at least 1")
    if mode not in ROLLOUT_MODES:
        raise DomainError(f"unknown rollout mode {mode!r}")
    d = gen.dims.eta_dim
    if mode == "sampled":
        if noise is None:
            raise DomainError("sampled rollout needs a noise array")
        noise = np.asarray(noise, dtype=np.float64)
        if noise.shape != (n, d):
            raise ShapeError(f"rollout noise shape {noise.shape} != {(n, d)}")
    out = []
    prev = eta_t
    for i in range(n):
        prior = eta_prior_step(prev, gen)
        if mode == "mean":
            nxt = prior.mean
        else:
            nxt = gaussian_reparam_sample(prior, noise[i])
        out.append(nxt)
        prev = nxt
    return out


def _canonical_order(docs) -> list:
    return sorted(range(len(docs)), key=lambda i: docs[i].doc_id)


def _doc_horizons(docs, last_global: int, model_kind: str,
                  default_horizon: int) -> list:
    """Rollout distance per document; 0 means 'use the last history state'."""
    if model_kind == "tam-static":
        return [0] * len(docs)
    horizons = []
    for d in docs:
        if d.time_index < 0:
            horizons.append(default_horizon)
        else:
            h = d.time_index - last_global
            if h < 1:
                raise DataError(
                    f"document {d.doc_id} (slice {d.time_index}) is not in "
                    f"the future of the history ending at {last_global}")
            horizons.append(h)
    return horizons


def _warn_all_unk(docs) -> None:
    for d in docs:
        ids = np.asarray(d.lm_token_ids)
        if ids.size and np.all(ids == 0):
            warnings.warn(
                f"document {d.doc_id} is entirely out of vocabulary; "
                f"predicting from UNK tokens")


def predict_future_ratings(docs, history: CorpusTimeline, model: ModelParams,
                           config: ForecastConfig):
    """Monte-Carlo rating forecasts; returns (means, stddevs) over samples.

    mode="mean" is the deterministic point path (posterior means, mean
    rollout, prior-mean latent) with zero reported spread.
    """
    if not docs:
        raise DataError("no documents to predict")
    if model.kind == "mlp":
        V = model.bow_encoder.in_size
        with no_grad():
            wd = np.stack([d.bow.dense(V) for d in docs])
            out = mlp_bow_forward(wd, model.bow_encoder, model.bow_regressor)
        preds = np.atleast_1d(out.data)
        return preds.copy(), np.zeros(len(docs))

    hist = collapse_timeline(history) if model.kind == "tam-static" else history
    gen, inf = model.gen, model.inf
    dims = gen.dims
    W = hist.slice_bows()
    T = W.shape[0]
    last_global = hist.first_index + T - 1
    order = _canonical_order(docs)
    horizons = _doc_horizons([docs[i] for i in order], last_global,
                             model.kind, config.horizon)
    _warn_all_unk(docs)

    groups = {}
    for pos, h in enumerate(horizons):
        groups.setdefault(h, []).append(pos)
    max_h = max(horizons)
    mean_mode = config.mode == "mean"
    S = 1 if mean_mode else config.n_samples
    rng = np.random.default_rng(config.seed)

    with no_grad():
        cached_words = {}
        if model.kind != "dst":
            for h, positions in sorted(groups.items()):
                token_lists = [docs[order[p]].lm_token_ids for p in positions]
                cached_words[h] = encode_words_batch(token_lists, model.att)

        samples = np.zeros((S, len(docs)))
        for s in range(S):
            chain_noise = None if mean_mode else \
                rng.standard_normal((T, dims.eta_dim))
            traj = encode_global(W, inf, gen, noise=chain_noise)
            future = []
            if max_h >= 1:
                roll_noise = None if mean_mode else \
                    rng.standard_normal((max_h, dims.eta_dim))
                future = rollout_eta(traj.eta[-1], max_h, gen,
                                     mode=config.mode, noise=roll_noise)
            xi_future = None
            if model.trend is not None:
                xi_noise = None if mean_mode else \
                    rng.standard_normal((T, model.trend.xi_dim))
                xis, _ = xi_trajectory(W, model.trend, noise=xi_noise)
                xi_prev = xis[-1]
                xi_future = []
                for i in range(max_h):
                    prior = xi_prior_step(xi_prev, model.trend)
                    if mean_mode:
                        xi_prev = prior.mean
                    else:
                        xi_prev = gaussian_reparam_sample(
                            prior, rng.standard_normal(model.trend.xi_dim))
                    xi_future.append(xi_prev)
                xi_at = {0: xis[-1]}
                for i, x in enumerate(xi_future):
                    xi_at[i + 1] = x

            for h, positions in sorted(groups.items()):
                eta_h = traj.eta[-1] if h == 0 else future[h - 1]
                chunk = [docs[order[p]] for p in positions]
                B = len(chunk)
                wd = np.stack([d.bow.dense(dims.vocab_size) for d in chunk])
                eps = None if mean_mode else \
                    rng.standard_normal((B, dims.zeta_dim))
                if config.condition_future_bow:
                    _, zeta = encode_local(wd, eta_h, inf, noise=eps)
                else:
                    prior = zeta_prior(eta_h, gen)
                    mean_block = tile_rows(prior.mean, B)
                    if eps is None:
                        zeta = mean_block
                    else:
                        zeta = mean_block + Tensor(eps)
                theta = decode_theta(zeta, gen)
                if model.kind == "dst":
                    out = np.atleast_1d(dst_forward(zeta, model.dst_head).data)
                elif model.trend is not None:
                    alpha_t = dynamic_topic_embeddings(xi_at[h], gen.alpha,
                                                       model.trend)
                    u, mask = cached_words[h]
                    vals = []
                    for b, doc in enumerate(chunk):
                        m = int(mask[b].sum())
                        u_doc = u[b, :m]
                        pooled = trendy_attention_pool(
                            u_doc, theta[b], alpha_t, model.trend,
                            residual_outside=False)
                        vals.append(predict_rating(pooled, model.att).item())
                    out = np.array(vals)
                else:
                    u, mask = cached_words[h]
                    pooled = topic_attention_pool_batch(u, mask, theta,
                                                        gen.alpha, model.att)
                    out = np.atleast_1d(
                        predict_rating_batch(pooled, model.att).data)
                for b, p in enumerate(positions):
                    samples[s, order[p]] = out[b]

    means = samples.mean(axis=0)
    stds = samples.std(axis=0)
    return means, stds


def predictions_to_csv(docs, means, stds) -> str:
    if not (len(docs) == len(means) == len(stds)):
        raise ShapeError("docs, means, stds must align")
    rows = ["doc_id,time_index,r_hat_mean,r_hat_std,r_true_if_known"]
    for d, m, sd in zip(docs, means, stds):
        truth = "" if d.rating is None else repr(float(d.rating))
        rows.append(f"{d.doc_id},{d.time_index},{float(m)!r},"
                    f"{float(sd)!r},{truth}")
    return "\n".join(rows) + "\n"


class ModelScorer:
    """Completion scorer backed by a trained model.

    ``theta_for`` conditions the local posterior on the first-half BoW and
    the document slice's global state: the posterior mean inside the history
    window, the mean transition rollout beyond it. ``beta_for`` is the mean
    topic-word matrix, time-varying only under the trend extension.
    """

    def __init__(self, model: ModelParams, history: CorpusTimeline):
        if model.kind == "mlp":
            raise DomainError("the bag-of-words baseline has no topic model "
                              "to score completions with")
        self._model = model
        self._static = model.kind == "tam-static"
        hist = collapse_timeline(history) if self._static else history
        self._hist = hist
        with no_grad():
            traj = encode_global(hist.slice_bows(), model.inf, model.gen)
            self._etas = list(traj.eta)
            self._xis = None
            if model.trend is not None:
                xis, _ = xi_trajectory(hist.slice_bows(), model.trend)
                self._xis = list(xis)
        self._beta_cache = {}

    def _offset(self, time_index: int) -> int:
        if self._static:
            return 0
        off = time_index - self._hist.first_index
        if off < 0:
            raise DataError(
                f"slice {time_index} precedes the scorer's history window")
        return off

    def _eta_at(self, off: int) -> Tensor:
        with no_grad():
            while off >= len(self._etas):
                prior = eta_prior_step(self._etas[-1], self._model.gen)
                self._etas.append(prior.mean)
        return self._etas[off]

    def theta_for(self, doc, first_bow) -> np.ndarray:
        gen = self._model.gen
        eta = self._eta_at(self._offset(doc.time_index))
        with no_grad():
            w = first_bow.dense(gen.dims.vocab_size)
            _, zeta = encode_local(w, eta, self._model.inf)
            theta = decode_theta(zeta, gen)
        return np.asarray(theta.data, dtype=np.float64)

    def beta_for(self, time_index: int) -> np.ndarray:
        off = self._offset(time_index)
        key = off if self._xis is not None else 0
        if key not in self._beta_cache:
            gen = self._model.gen
            with no_grad():
                if self._xis is None:
                    beta = topic_word_matrix(gen.alpha, gen.rho_tm)
                else:
                    while off >= len(self._xis):
                        prior = xi_prior_step(self._xis[-1], self._model.trend)
                        self._xis.append(prior.mean)
                    alpha_t = dynamic_topic_embeddings(self._xis[off],
                                                       gen.alpha,
                                                       self._model.trend)
                    beta = topic_word_matrix(alpha_t, gen.rho_tm)
            self._beta_cache[key] = np.asarray(beta.data, dtype=np.float64)
        return self._beta_cache[key]


def ppl_p_forecast(future_docs, history: CorpusTimeline, model: ModelParams,
                   config: ForecastConfig) -> float:
    """Predictive perplexity of future documents.

    exp(-(1/Ntok) * mean_s log p(W_future | Gamma_s)) where Gamma_s couples
    a posterior sample over history, sampled prior transitions out to each
    document's slice, and prior draws of the local latent.
    """
    if not future_docs:
        raise DataError("predictive perplexity needs a non-empty future slice")
    if model.kind == "mlp":
        raise DomainError("the bag-of-words baseline has no topic model to "
                          "score perplexity with")
    hist = collapse_timeline(history) if model.kind == "tam-static" else history
    gen, inf = model.gen, model.inf
    dims = gen.dims
    W = hist.slice_bows()
    T = W.shape[0]
    last_global = hist.first_index + T - 1
    order = _canonical_order(future_docs)
    horizons = _doc_horizons([future_docs[i] for i in order], last_global,
                             model.kind, config.horizon)
    n_tokens = float(sum(d.bow.total for d in future_docs))
    if n_tokens <= 0:
        raise DataError("future documents carry no in-vocabulary tokens")

    groups = {}
    for pos, h in enumerate(horizons):
        groups.setdefault(h, []).append(pos)
    max_h = max(horizons)
    rng = np.random.default_rng(config.seed)
    S = config.n_samples

    log_probs = np.zeros(S)
    with no_grad():
        for s in range(S):
            chain_noise = rng.standard_normal((T, dims.eta_dim))
            traj = encode_global(W, inf, gen, noise=chain_noise)
            future = []
            if max_h >= 1:
                roll_noise = rng.standard_normal((max_h, dims.eta_dim))
                future = rollout_eta(traj.eta[-1], max_h, gen, mode="sampled",
                                     noise=roll_noise)
            xi_at = None
            if model.trend is not None:
                xis, _ = xi_trajectory(
                    W, model.trend,
                    noise=rng.standard_normal((T, model.trend.xi_dim)))
                xi_at = {0: xis[-1]}
                xi_prev = xis[-1]
                for i in range(max_h):
                    prior = xi_prior_step(xi_prev, model.trend)
                    xi_prev = gaussian_reparam_sample(
                        prior, rng.standard_normal(model.trend.xi_dim))
                    xi_at[i + 1] = xi_prev
            total = 0.0
            for h, positions in sorted(groups.items()):
                eta_h = traj.eta[-1] if h == 0 else future[h - 1]
                chunk = [future_docs[order[p]] for p in positions]
                B = len(chunk)
                wd = np.stack([d.bow.dense(dims.vocab_size) for d in chunk])
                prior = zeta_prior(eta_h, gen)
                zeta = tile_rows(prior.mean, B) + \
                    Tensor(rng.standard_normal((B, dims.zeta_dim)))
                theta = decode_theta(zeta, gen)
                if model.trend is not None:
                    alpha_t = dynamic_topic_embeddings(xi_at[h], gen.alpha,
                                                       model.trend)
                    beta = topic_word_matrix(alpha_t, gen.rho_tm)
                else:
                    beta = topic_word_matrix(gen.alpha, gen.rho_tm)
                total += bow_log_likelihood(wd, theta, beta).item()
            log_probs[s] = total
    return exp(-float(log_probs.mean()) / n_tokens)
