"""Dynamic topic model: generative densities, structured posterior, ELBO.

The generative story per time slice t and document d:

    eta_t   ~ N(transition(eta_{t-1}), delta_tr^2 I)   (eta_1 ~ N(0, I))
    zeta    ~ N(W_z eta_t + c_z, I)
    theta   = softmax(decoder(zeta))
    word    ~ Categorical(theta^T beta),  beta = rowsoftmax(alpha rho^T)

Inference mirrors it with a structured posterior: a recurrence over the
slice BoW sequence produces hidden states h_t; q(eta_t | eta_{t-1}, h)
and q(zeta | w, eta_t) are diagonal Gaussians read off MLP heads. All
sampling is reparameterized; passing ``noise=None`` anywhere means zero
noise, i.e. the posterior mean.

A feature-flagged "trendiness" extension adds a second global chain xi_t
that modulates the topic embeddings multiplicatively over time.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from dtam.errors import DomainError, NumericError, ShapeError
from dtam.numcore import (
    DiagGaussian,
    GruParams,
    LstmParams,
    MlpParams,
    Tensor,
    clip,
    concat,
    exp,
    gaussian_reparam_sample,
    gru_init,
    kl_diag_gaussian,
    log,
    clip_min,
    lstm_init,
    mlp_apply,
    mlp_init,
    recurrence_hidden_size,
    recurrence_sequence,
    softmax,
    tile_rows,
)

LOGSTD_CLAMP = 8.0
PROB_FLOOR = 1e-12

# Appendix-style transition noise defaults keyed by topic count.
DELTA_BY_TOPICS = {25: 0.2, 50: 0.1, 100: 0.005}


def default_delta(n_topics: int) -> float:
    return DELTA_BY_TOPICS.get(n_topics, 0.1)


@dataclass
class ModelDims:
    """Size bundle shared by generative and inference parameters."""

    n_topics: int
    vocab_size: int
    embed_dim: int
    eta_dim: int
    zeta_dim: int

    def __post_init__(self):
        for name in ("n_topics", "vocab_size", "embed_dim", "eta_dim", "zeta_dim"):
            if getattr(self, name) < 1:
                raise ShapeError(f"{name} must be positive")


@dataclass
class GenerativeParams:
    alpha: Tensor            # (K, E) topic embeddings
    rho_tm: Tensor           # (V, E) word embeddings
    eta_transition: MlpParams
    delta_tr: float
    zeta_weight: Tensor      # (eta_dim, zeta_dim)
    zeta_bias: Tensor        # (zeta_dim,)
    theta_decoder: MlpParams
    dims: ModelDims
    delta_is_variance: bool = False

    def __post_init__(self):
        if self.delta_tr <= 0:
            raise DomainError("delta_tr must be positive")

    @property
    def transition_stddev(self) -> float:
        if self.delta_is_variance:
            return float(np.sqrt(self.delta_tr))
        return float(self.delta_tr)

    def named_tensors(self, prefix: str = "gen"):
        yield f"{prefix}.alpha", self.alpha
        yield f"{prefix}.rho_tm", self.rho_tm
        yield from self.eta_transition.named_tensors(f"{prefix}.eta_transition")
        yield f"{prefix}.zeta_weight", self.zeta_weight
        yield f"{prefix}.zeta_bias", self.zeta_bias
        yield from self.theta_decoder.named_tensors(f"{prefix}.theta_decoder")


@dataclass
class InferenceParams:
    local_mean: MlpParams      # [w_norm, eta] -> zeta mean
    local_logstd: MlpParams
    global_mean: MlpParams     # [eta_prev, h] -> eta mean
    global_logstd: MlpParams
    bow_recurrence: object     # GruParams or LstmParams over W_1..W_T
    per_step_conditioning: bool = False

    def named_tensors(self, prefix: str = "inf"):
        yield from self.local_mean.named_tensors(f"{prefix}.local_mean")
        yield from self.local_logstd.named_tensors(f"{prefix}.local_logstd")
        yield from self.global_mean.named_tensors(f"{prefix}.global_mean")
        yield from self.global_logstd.named_tensors(f"{prefix}.global_logstd")
        yield from self.bow_recurrence.named_tensors(f"{prefix}.bow_recurrence")


@dataclass
class LatentTrajectory:
    """Posterior samples and distributions for the global chain."""

    eta: list                  # T tensors of shape (eta_dim,)
    eta_posteriors: list       # T DiagGaussian
    h: list                    # T recurrence states

    def __post_init__(self):
        if not (len(self.eta) == len(self.eta_posteriors) == len(self.h)):
            raise ShapeError("trajectory fields must share length")

    @property
    def num_steps(self) -> int:
        return len(self.eta)


@dataclass
class TrendParams:
    """Second global chain xi plus topic/word projection matrices."""

    xi_transition: MlpParams
    delta_xi: float
    xi_mean: MlpParams
    xi_logstd: MlpParams
    xi_recurrence: object
    m_alpha_q: Tensor   # (xi_dim, E)
    m_alpha_k: Tensor   # (E, E)
    m_alpha_v: Tensor   # (E, E)
    m_u_q: Tensor       # (E, E), applied to dynamic topic embeddings
    m_u_k: Tensor       # (H, E), applied to word representations
    m_u_v: Tensor       # (H, H)
    gate_clamp: bool = False

    def __post_init__(self):
        if self.delta_xi <= 0:
            raise DomainError("delta_xi must be positive")

    @property
    def xi_dim(self) -> int:
        return self.m_alpha_q.shape[0]

    def named_tensors(self, prefix: str = "trend"):
        yield from self.xi_transition.named_tensors(f"{prefix}.xi_transition")
        yield from self.xi_mean.named_tensors(f"{prefix}.xi_mean")
        yield from self.xi_logstd.named_tensors(f"{prefix}.xi_logstd")
        yield from self.xi_recurrence.named_tensors(f"{prefix}.xi_recurrence")
        for name in ("m_alpha_q", "m_alpha_k", "m_alpha_v", "m_u_q", "m_u_k", "m_u_v"):
            yield f"{prefix}.{name}", getattr(self, name)


# ---- initialization ------------------------------------------------------------


def generative_init(dims: ModelDims, rng: np.random.Generator,
                    transition_hidden=(64, 64), decoder_hidden=(),
                    delta_tr: float | None = None,
                    delta_is_variance: bool = False) -> GenerativeParams:
    def bounded(fan_in, fan_out, shape):
        a = np.sqrt(6.0 / (fan_in + fan_out))
        return Tensor(rng.uniform(-a, a, size=shape), requires_grad=True)

    if delta_tr is None:
        delta_tr = default_delta(dims.n_topics)
    transition_sizes = [dims.eta_dim, *transition_hidden, dims.eta_dim]
    decoder_sizes = [dims.zeta_dim, *decoder_hidden, dims.n_topics]
    return GenerativeParams(
        alpha=bounded(dims.n_topics, dims.embed_dim, (dims.n_topics, dims.embed_dim)),
        rho_tm=bounded(dims.vocab_size, dims.embed_dim, (dims.vocab_size, dims.embed_dim)),
        eta_transition=mlp_init(transition_sizes, rng),
        delta_tr=float(delta_tr),
        zeta_weight=bounded(dims.eta_dim, dims.zeta_dim, (dims.eta_dim, dims.zeta_dim)),
        zeta_bias=Tensor(np.zeros(dims.zeta_dim), requires_grad=True),
        theta_decoder=mlp_init(decoder_sizes, rng),
        dims=dims,
        delta_is_variance=delta_is_variance,
    )


def inference_init(dims: ModelDims, rng: np.random.Generator,
                   encoder_hidden=(256, 256), recurrence_hidden: int = 400,
                   recurrence_layers: int = 4, cell_kind: str = "lstm",
                   dropout_rate: float = 0.0,
                   per_step_conditioning: bool = False) -> InferenceParams:
    local_sizes = [dims.vocab_size + dims.eta_dim, *encoder_hidden, dims.zeta_dim]
    global_sizes = [dims.eta_dim + recurrence_hidden, *encoder_hidden, dims.eta_dim]
    if cell_kind == "gru":
        recurrence = gru_init(dims.vocab_size, recurrence_hidden,
                              recurrence_layers, rng, dropout_rate=dropout_rate)
    elif cell_kind == "lstm":
        recurrence = lstm_init(dims.vocab_size, recurrence_hidden,
                               recurrence_layers, rng, dropout_rate=dropout_rate)
    else:
        raise DomainError(f"unknown recurrence cell kind {cell_kind!r}")
    return InferenceParams(
        local_mean=mlp_init(local_sizes, rng),
        local_logstd=mlp_init(local_sizes, rng),
        global_mean=mlp_init(global_sizes, rng),
        global_logstd=mlp_init(global_sizes, rng),
        bow_recurrence=recurrence,
        per_step_conditioning=per_step_conditioning,
    )


def trend_init(dims: ModelDims, rng: np.random.Generator, xi_dim: int,
               word_hidden: int, encoder_hidden=(64,), recurrence_hidden: int = 32,
               delta_xi: float = 0.1, gate_clamp: bool = False) -> TrendParams:
    def bounded(fan_in, fan_out):
        a = np.sqrt(6.0 / (fan_in + fan_out))
        return Tensor(rng.uniform(-a, a, size=(fan_in, fan_out)), requires_grad=True)

    e = dims.embed_dim
    return TrendParams(
        xi_transition=mlp_init([xi_dim, *encoder_hidden, xi_dim], rng),
        delta_xi=delta_xi,
        xi_mean=mlp_init([xi_dim + recurrence_hidden, *encoder_hidden, xi_dim], rng),
        xi_logstd=mlp_init([xi_dim + recurrence_hidden, *encoder_hidden, xi_dim], rng),
        xi_recurrence=gru_init(dims.vocab_size, recurrence_hidden, 1, rng),
        m_alpha_q=bounded(xi_dim, e),
        m_alpha_k=bounded(e, e),
        m_alpha_v=bounded(e, e),
        m_u_q=bounded(e, e),
        m_u_k=bounded(word_hidden, e),
        m_u_v=bounded(word_hidden, word_hidden),
        gate_clamp=gate_clamp,
    )


# ---- generative pieces -----------------------------------------------------------


def topic_word_matrix(alpha: Tensor, rho_tm: Tensor) -> Tensor:
    """beta = rowwise softmax(alpha rho^T), shape (K, V)."""
    if alpha.shape[-1] != rho_tm.shape[-1]:
        raise ShapeError(
            f"embedding dims differ: alpha {alpha.shape}, rho {rho_tm.shape}"
        )
    return softmax(alpha @ rho_tm.T, axis=-1)


def eta_prior_step(eta_prev, gen: GenerativeParams) -> DiagGaussian:
    """p(eta_t | eta_{t-1}); with eta_prev=None, the standard-normal start."""
    d = gen.dims.eta_dim
    if eta_prev is None:
        return DiagGaussian(Tensor(np.zeros(d)), Tensor(np.ones(d)))
    mean = mlp_apply(gen.eta_transition, eta_prev)
    stddev = Tensor(np.full(d, gen.transition_stddev))
    return DiagGaussian(mean, stddev)


def zeta_prior(eta_t: Tensor, gen: GenerativeParams) -> DiagGaussian:
    """p(zeta | eta_t) = N(W_z eta_t + c_z, I)."""
    mean = eta_t @ gen.zeta_weight + gen.zeta_bias
    return DiagGaussian(mean, Tensor(np.ones(mean.shape)))


def decode_theta(zeta: Tensor, gen: GenerativeParams) -> Tensor:
    """theta = softmax(decoder(zeta)); batched along leading axis if present."""
    return softmax(mlp_apply(gen.theta_decoder, zeta), axis=-1)


def bow_log_likelihood(w, theta: Tensor, beta: Tensor) -> Tensor:
    """Sum_v w_v log(theta^T beta[:, v]), the exact mixture marginal over z.

    ``w`` is a count array (V,) or (n, V); theta matches with shape (K,) or
    (n, K). Mixture probabilities are floored at 1e-12 inside the log.
    """
    w_arr = np.asarray(w, dtype=np.float64)
    if np.any(w_arr < 0):
        raise DomainError("BoW counts must be nonnegative")
    probs = theta @ beta
    return (Tensor(w_arr) * log(clip_min(probs, PROB_FLOOR))).sum()


def top_words(beta, n: int = 30, vocab=None) -> list:
    """Per-topic ids of the n largest beta entries, ties lexicographic."""
    b = beta.data if isinstance(beta, Tensor) else np.asarray(beta)
    k, v = b.shape
    n = min(n, v)
    out = []
    for i in range(k):
        if vocab is not None:
            key = lambda j: (-b[i, j], vocab.id_to_token[j])
        else:
            key = lambda j: (-b[i, j], j)
        out.append(sorted(range(v), key=key)[:n])
    return out


# ---- inference pieces ----------------------------------------------------------------


def normalize_bow(w: np.ndarray) -> np.ndarray:
    """L1-normalize count rows; zero rows stay zero."""
    w = np.asarray(w, dtype=np.float64)
    total = w.sum(axis=-1, keepdims=True)
    return w / np.where(total > 0, total, 1.0)


def _gaussian_heads(mean_net: MlpParams, logstd_net: MlpParams, x: Tensor,
                    rng=None, training=False) -> DiagGaussian:
    mean = mlp_apply(mean_net, x, rng=rng, training=training)
    logstd = clip(mlp_apply(logstd_net, x, rng=rng, training=training),
                  -LOGSTD_CLAMP, LOGSTD_CLAMP)
    return DiagGaussian(mean, exp(logstd))


def encode_global(slice_bows, inf: InferenceParams, gen: GenerativeParams,
                  noise=None, rng=None, training=False) -> LatentTrajectory:
    """Run the BoW recurrence and sample the posterior eta chain.

    ``slice_bows`` is the (T, V) count matrix; ``noise`` is a (T, eta_dim)
    standard-normal array or None for the posterior mean. The step-t
    posterior conditions on [eta_{t-1}, h_T] (h_t instead when per-step
    conditioning is configured); the eta_0 context is a zero vector.
    """
    W = np.atleast_2d(np.asarray(slice_bows, dtype=np.float64))
    T = W.shape[0]
    if T == 0:
        raise ShapeError("encode_global needs at least one slice")
    if noise is not None:
        noise = np.asarray(noise, dtype=np.float64)
        if noise.shape != (T, gen.dims.eta_dim):
            raise ShapeError(
                f"global noise shape {noise.shape} != {(T, gen.dims.eta_dim)}"
            )
    W_norm = normalize_bow(W)
    steps = [Tensor(W_norm[t]) for t in range(T)]
    h = recurrence_sequence(inf.bow_recurrence, steps, rng=rng, training=training)
    eta_prev = Tensor(np.zeros(gen.dims.eta_dim))
    etas, posteriors = [], []
    for t in range(T):
        context = h[t] if inf.per_step_conditioning else h[-1]
        q_t = _gaussian_heads(inf.global_mean, inf.global_logstd,
                              concat([eta_prev, context]), rng=rng, training=training)
        eps = np.zeros(gen.dims.eta_dim) if noise is None else noise[t]
        eta_t = gaussian_reparam_sample(q_t, eps)
        etas.append(eta_t)
        posteriors.append(q_t)
        eta_prev = eta_t
    return LatentTrajectory(eta=etas, eta_posteriors=posteriors, h=h)


def encode_local(w, eta_t: Tensor, inf: InferenceParams, noise=None,
                 rng=None, training=False):
    """q(zeta | w, eta_t): returns (DiagGaussian, reparameterized sample).

    Accepts a single BoW (V,) or a batch (n, V); eta_t is a single (eta_dim,)
    vector shared by the batch.
    """
    w_arr = np.asarray(w, dtype=np.float64)
    batched = w_arr.ndim == 2
    w_norm = Tensor(normalize_bow(w_arr))
    if batched:
        eta_block = tile_rows(eta_t, w_arr.shape[0])
        x = concat([w_norm, eta_block], axis=1)
    else:
        x = concat([w_norm, eta_t])
    q = _gaussian_heads(inf.local_mean, inf.local_logstd, x, rng=rng, training=training)
    if noise is None:
        eps = np.zeros(q.mean.shape)
    else:
        eps = np.asarray(noise, dtype=np.float64)
    sample = gaussian_reparam_sample(q, eps)
    return q, sample


# ---- trend extension ---------------------------------------------------------------


def xi_trajectory(slice_bows, trend: TrendParams | None, noise=None,
                  rng=None, training=False):
    """Posterior chain for the trendiness latent xi; per-step conditioning.

    Returns (xi samples, posteriors). Mirrors encode_global except the step-t
    posterior reads the step-t recurrence state, as the extension defines it.
    """
    if trend is None:
        raise DomainError("trend extension is disabled; no TrendParams supplied")
    W = np.atleast_2d(np.asarray(slice_bows, dtype=np.float64))
    T = W.shape[0]
    d = trend.xi_dim
    if noise is not None:
        noise = np.asarray(noise, dtype=np.float64)
        if noise.shape != (T, d):
            raise ShapeError(f"xi noise shape {noise.shape} != {(T, d)}")
    steps = [Tensor(normalize_bow(W)[t]) for t in range(T)]
    h = recurrence_sequence(trend.xi_recurrence, steps, rng=rng, training=training)
    xi_prev = Tensor(np.zeros(d))
    xis, posteriors = [], []
    for t in range(T):
        q_t = _gaussian_heads(trend.xi_mean, trend.xi_logstd,
                              concat([xi_prev, h[t]]), rng=rng, training=training)
        eps = np.zeros(d) if noise is None else noise[t]
        xi_t = gaussian_reparam_sample(q_t, eps)
        xis.append(xi_t)
        posteriors.append(q_t)
        xi_prev = xi_t
    return xis, posteriors


def xi_prior_step(xi_prev, trend: TrendParams) -> DiagGaussian:
    d = trend.xi_dim
    if xi_prev is None:
        return DiagGaussian(Tensor(np.zeros(d)), Tensor(np.ones(d)))
    mean = mlp_apply(trend.xi_transition, xi_prev)
    return DiagGaussian(mean, Tensor(np.full(d, trend.delta_xi)))


def dynamic_topic_embeddings(xi_t: Tensor, alpha: Tensor,
                             trend: TrendParams | None) -> Tensor:
    """alpha_t[i] = exp(q . k_i / sqrt(E)) * (M_v alpha[i]).

    The gate is a literal exponential (not a softmax over topics); exponent
    overflow raises unless the clamp flag caps exponents at +/-20.
    """
    if trend is None:
        raise DomainError("trend extension is disabled; no TrendParams supplied")
    e_dim = alpha.shape[1]
    q = xi_t @ trend.m_alpha_q               # (E,)
    keys = alpha @ trend.m_alpha_k           # (K, E)
    logits = (keys @ q) / np.sqrt(e_dim)     # (K,)
    if trend.gate_clamp:
        logits = clip(logits, -20.0, 20.0)
    elif np.any(np.abs(logits.data) > 700.0):
        raise NumericError(
            "trend gate exponent overflow; enable the gate clamp flag"
        )
    gate = exp(logits)
    values = alpha @ trend.m_alpha_v         # (K, E)
    return values * gate.reshape(-1, 1)


# ---- the evidence lower bound ---------------------------------------------------------


@dataclass
class ElboResult:
    """Negated bound (the training loss) plus per-component values."""

    loss: Tensor
    reconstruction: float
    kl_local: float
    kl_global: float
    kl_trend: float = 0.0
    num_documents: int = 0
    num_tokens: float = 0.0

    def components(self) -> dict:
        return {
            "reconstruction": self.reconstruction,
            "kl_local": self.kl_local,
            "kl_global": self.kl_global,
            "kl_trend": self.kl_trend,
        }


def _check_finite(value: float, component: str) -> None:
    if not np.isfinite(value):
        raise NumericError(f"non-finite ELBO component: {component} = {value}")


def elbo(timeline, gen: GenerativeParams, inf: InferenceParams,
         global_noise=None, local_noise=None, trend: TrendParams | None = None,
         trend_noise=None, rng=None, training=False) -> ElboResult:
    """Negative ELBO over a full timeline (slice 1 starts the eta chain).

    ``local_noise`` is an (N_docs, zeta_dim) array in timeline document
    order, or None for posterior means. Reconstruction and the local KL sum
    over documents; the global KL sums over the chain.
    """
    V = timeline.vocab_size
    if V != gen.dims.vocab_size:
        raise ShapeError(
            f"timeline vocab {V} != model vocab {gen.dims.vocab_size}"
        )
    W = timeline.slice_bows()
    traj = encode_global(W, inf, gen, noise=global_noise, rng=rng, training=training)
    beta_static = None
    xis = xi_posts = None
    if trend is not None:
        xis, xi_posts = xi_trajectory(W, trend, noise=trend_noise, rng=rng,
                                      training=training)
    else:
        beta_static = topic_word_matrix(gen.alpha, gen.rho_tm)

    recon_terms, kl_local_terms = [], []
    n_docs = 0
    n_tokens = 0.0
    offset = 0
    for t, docs in enumerate(timeline.slices):
        if not docs:
            continue
        wd = np.stack([d.bow.dense(V) for d in docs])
        n_t = len(docs)
        if local_noise is None:
            eps = None
        else:
            eps = np.asarray(local_noise, dtype=np.float64)[offset:offset + n_t]
        offset += n_t
        q_zeta, zeta = encode_local(wd, traj.eta[t], inf, noise=eps,
                                    rng=rng, training=training)
        prior_mean = tile_rows(traj.eta[t] @ gen.zeta_weight + gen.zeta_bias, n_t)
        p_zeta = DiagGaussian(prior_mean, Tensor(np.ones((n_t, gen.dims.zeta_dim))))
        kl_local_terms.append(kl_diag_gaussian(q_zeta, p_zeta))
        theta = decode_theta(zeta, gen)
        if trend is not None:
            alpha_t = dynamic_topic_embeddings(xis[t], gen.alpha, trend)
            beta_t = topic_word_matrix(alpha_t, gen.rho_tm)
        else:
            beta_t = beta_static
        recon_terms.append(bow_log_likelihood(wd, theta, beta_t))
        n_docs += n_t
        n_tokens += float(wd.sum())

    if n_docs == 0:
        raise ShapeError("ELBO needs at least one document")

    recon = recon_terms[0]
    for term in recon_terms[1:]:
        recon = recon + term
    kl_local = kl_local_terms[0]
    for term in kl_local_terms[1:]:
        kl_local = kl_local + term

    kl_global = kl_diag_gaussian(traj.eta_posteriors[0], eta_prior_step(None, gen))
    for t in range(1, traj.num_steps):
        prior_t = eta_prior_step(traj.eta[t - 1], gen)
        kl_global = kl_global + kl_diag_gaussian(traj.eta_posteriors[t], prior_t)

    kl_trend_value = 0.0
    if trend is not None:
        kl_trend = kl_diag_gaussian(xi_posts[0], xi_prior_step(None, trend))
        for t in range(1, len(xis)):
            kl_trend = kl_trend + kl_diag_gaussian(xi_posts[t],
                                                   xi_prior_step(xis[t - 1], trend))
        kl_trend_value = kl_trend.item()
        _check_finite(kl_trend_value, "kl_trend")

    _check_finite(recon.item(), "reconstruction")
    _check_finite(kl_local.item(), "kl_local")
    _check_finite(kl_global.item(), "kl_global")

    loss = kl_local + kl_global - recon
    if trend is not None:
        loss = loss + kl_trend
    return ElboResult(
        loss=loss,
        reconstruction=recon.item(),
        kl_local=kl_local.item(),
        kl_global=kl_global.item(),
        kl_trend=kl_trend_value,
        num_documents=n_docs,
        num_tokens=n_tokens,
    )
