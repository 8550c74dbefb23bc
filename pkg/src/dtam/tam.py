"""Topic-attention document pooling and rating regression.

A document's tokens are embedded and run through a word-level GRU giving
contextual representations u_1..u_M. Each topic i attends over the words:

    a[i, j] = softmax_j( query(u_j) . alpha[i] )
    s       = sum_j sum_i (theta_i - delta_att) * a[i, j] * u_j

and the regressor reads the pooled s through a logistic squash, since
ratings are min-max scaled into [0, 1]. The joint objective is the topic
model loss plus alpha_y times the regression RMSE.

Baseline paths: a regressor straight on zeta (no attention), and a plain
MLP on the normalized BoW.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from dtam.dtm import TrendParams, normalize_bow
from dtam.errors import DomainError, ShapeError
from dtam.numcore import (
    GruParams,
    MlpParams,
    Tensor,
    gather_rows,
    gru_init,
    mlp_apply,
    mlp_init,
    recurrence_sequence,
    sigmoid,
    softmax,
    sqrt,
    stack,
    tanh,
)


@dataclass
class AttentionRegressorParams:
    lm_embeddings: Tensor        # (LM vocab, E_lm)
    word_encoder: GruParams
    query_mlp: MlpParams         # word hidden -> topic embedding dim E
    delta_att: float
    regressor: MlpParams         # pooled hidden -> 1
    alpha_y: float

    def __post_init__(self):
        if not 0.0 <= self.delta_att < 1.0:
            raise DomainError(f"delta_att must be in [0, 1), got {self.delta_att}")
        if self.alpha_y < 0.0:
            raise DomainError("alpha_y must be nonnegative")

    @property
    def word_hidden(self) -> int:
        return self.word_encoder.hidden_size

    def named_tensors(self, prefix: str = "att"):
        yield f"{prefix}.lm_embeddings", self.lm_embeddings
        yield from self.word_encoder.named_tensors(f"{prefix}.word_encoder")
        yield from self.query_mlp.named_tensors(f"{prefix}.query_mlp")
        yield from self.regressor.named_tensors(f"{prefix}.regressor")


@dataclass
class SummaryRepresentation:
    s: Tensor                    # (hidden,)
    attention_weights: Tensor    # (K, M), rows sum to 1 over words
    theta_used: Tensor           # (K,)


def attention_regressor_init(lm_vocab_size: int, embed_dim: int,
                             rng: np.random.Generator, word_hidden: int = 128,
                             word_layers: int = 1, lm_embed_dim: int = 128,
                             query_hidden=(), regressor_hidden=(),
                             delta_att: float = 0.1, alpha_y: float = 1.0,
                             dropout_rate: float = 0.0) -> AttentionRegressorParams:
    a = np.sqrt(6.0 / (lm_vocab_size + lm_embed_dim))
    return AttentionRegressorParams(
        lm_embeddings=Tensor(rng.uniform(-a, a, (lm_vocab_size, lm_embed_dim)),
                             requires_grad=True),
        word_encoder=gru_init(lm_embed_dim, word_hidden, word_layers, rng,
                              dropout_rate=dropout_rate),
        query_mlp=mlp_init([word_hidden, *query_hidden, embed_dim], rng),
        delta_att=delta_att,
        regressor=mlp_init([word_hidden, *regressor_hidden, 1], rng),
        alpha_y=alpha_y,
    )


# ---- single-document path ---------------------------------------------------


def encode_words(token_ids, params: AttentionRegressorParams,
                 rng=None, training=False) -> Tensor:
    """Contextual word representations, shape (M, hidden)."""
    ids = np.asarray(token_ids, dtype=np.int64)
    if ids.size == 0:
        raise ShapeError("cannot encode an empty token sequence")
    emb = gather_rows(params.lm_embeddings, ids)      # (M, E_lm)
    steps = [emb[j] for j in range(ids.size)]
    hidden = recurrence_sequence(params.word_encoder, steps, rng=rng,
                                 training=training)
    return stack(hidden, axis=0)


def topic_attention_pool(u: Tensor, theta: Tensor, alpha: Tensor,
                         params: AttentionRegressorParams) -> SummaryRepresentation:
    """Pool word representations by offset topic proportions.

    u is (M, hidden), theta a (K,) simplex vector, alpha the (K, E) topic
    embeddings. The softmax normalizes over the M words separately per topic.
    """
    queries = mlp_apply(params.query_mlp, u)          # (M, E)
    scores = (queries @ alpha.T).T                    # (K, M)
    attn = softmax(scores, axis=-1)                   # rows over words
    coeff = (theta - params.delta_att).reshape(-1, 1) * attn   # (K, M)
    s = (coeff.sum(axis=0).reshape(-1, 1) * u).sum(axis=0)     # (hidden,)
    return SummaryRepresentation(s=s, attention_weights=attn, theta_used=theta)


def trendy_attention_pool(u: Tensor, theta: Tensor, alpha_t: Tensor,
                          trend: TrendParams | None,
                          residual_outside: bool = False) -> Tensor:
    """Trend-extension pooling with its own query/key/value projections.

    Written form: s = sum_i sum_j [theta_i * a[i,j] * (M_v u_j) + u_j]. The
    trailing residual sits inside the double sum, so it contributes
    K * sum_j u_j; ``residual_outside`` replaces that with mean_j u_j.
    """
    if trend is None:
        raise DomainError("trend extension is disabled; no TrendParams supplied")
    e_dim = alpha_t.shape[1]
    k = alpha_t.shape[0]
    queries = alpha_t @ trend.m_u_q                   # (K, E)
    keys = u @ trend.m_u_k                            # (M, E)
    scores = (queries @ keys.T) / np.sqrt(e_dim)      # (K, M)
    attn = softmax(scores, axis=-1)
    values = u @ trend.m_u_v                          # (M, hidden)
    weighted = theta.reshape(-1, 1) * attn            # (K, M)
    pooled = (weighted.sum(axis=0).reshape(-1, 1) * values).sum(axis=0)
    if residual_outside:
        return pooled + u.mean(axis=0)
    return pooled + float(k) * u.sum(axis=0)


def predict_rating(s: Tensor, params: AttentionRegressorParams) -> Tensor:
    """Logistic-squashed regressor readout; scalar for a single document."""
    return sigmoid(mlp_apply(params.regressor, s)).reshape(())


# ---- batched path (training) ---------------------------------------------------


def encode_words_batch(token_id_lists, params: AttentionRegressorParams,
                       rng=None, training=False):
    """Shared-length batch encoding with right padding.

    Returns (u, mask): u is (B, M_max, hidden), mask a boolean (B, M_max)
    marking real tokens. The recurrence is causal, so padded junk never
    contaminates valid prefix positions.
    """
    lengths = [len(ids) for ids in token_id_lists]
    if not lengths or min(lengths) == 0:
        raise ShapeError("every document in a batch needs at least one token")
    b, m_max = len(lengths), max(lengths)
    padded = np.zeros((b, m_max), dtype=np.int64)
    mask = np.zeros((b, m_max), dtype=bool)
    for i, ids in enumerate(token_id_lists):
        padded[i, :len(ids)] = ids
        mask[i, :len(ids)] = True
    emb = gather_rows(params.lm_embeddings, padded)   # (B, M, E_lm)
    steps = [emb[:, j] for j in range(m_max)]
    hidden = recurrence_sequence(params.word_encoder, steps, rng=rng,
                                 training=training)
    return stack(hidden, axis=1), mask                # (B, M, H)


def topic_attention_pool_batch(u: Tensor, mask: np.ndarray, theta: Tensor,
                               alpha: Tensor, params: AttentionRegressorParams) -> Tensor:
    """Batched pooling: u (B, M, H), theta (B, K) -> s (B, H)."""
    b, m, h = u.shape
    k = alpha.shape[0]
    queries = mlp_apply(params.query_mlp, u.reshape(b * m, h))   # (B*M, E)
    scores = (queries @ alpha.T).reshape(b, m, k)                # (B, M, K)
    attn = softmax(scores, axis=1, mask=np.broadcast_to(mask[:, :, None],
                                                        (b, m, k)))
    coeff = (attn * (theta - params.delta_att).reshape(b, 1, k)).sum(axis=2)
    return (coeff.reshape(b, m, 1) * u).sum(axis=1)              # (B, H)


def predict_rating_batch(s: Tensor, params: AttentionRegressorParams) -> Tensor:
    return sigmoid(mlp_apply(params.regressor, s)).reshape(-1)


# ---- losses ----------------------------------------------------------------------


def regression_loss(r_hat: Tensor, targets) -> Tensor:
    """Root-mean-squared error between predictions and targets."""
    t = np.asarray(targets, dtype=np.float64)
    if t.size == 0:
        raise ShapeError("regression loss needs at least one pair")
    if r_hat.size != t.size:
        raise ShapeError(f"prediction count {r_hat.size} != target count {t.size}")
    diff = r_hat.reshape(-1) - Tensor(t.reshape(-1))
    return sqrt((diff * diff).mean())


def full_loss(elbo_loss: Tensor, reg_loss: Tensor, alpha_y: float) -> Tensor:
    return elbo_loss + alpha_y * reg_loss


# ---- baseline paths -----------------------------------------------------------------


def dst_forward(zeta: Tensor, regressor: MlpParams) -> Tensor:
    """Regressor straight on the local latent; no attention."""
    out = sigmoid(mlp_apply(regressor, zeta))
    if out.ndim == 2:
        return out.reshape(-1)
    return out.reshape(())


def mlp_bow_forward(w, encoder: MlpParams, regressor: MlpParams) -> Tensor:
    """MLP on the L1-normalized BoW, then the logistic regressor head.

    The encoder output gets a tanh so the stacked encoder/regressor pair
    cannot collapse into one linear map.
    """
    w_norm = Tensor(normalize_bow(np.asarray(w, dtype=np.float64)))
    hidden = tanh(mlp_apply(encoder, w_norm))
    out = sigmoid(mlp_apply(regressor, hidden))
    if out.ndim == 2:
        return out.reshape(-1)
    return out.reshape(())


# ---- attention export -----------------------------------------------------------------


def attention_to_csv(summary: SummaryRepresentation, tokens=None) -> str:
    """K x M CSV of post-softmax attention; header row names the words."""
    w = summary.attention_weights.data
    k, m = w.shape
    if tokens is None:
        header = ",".join(f"w{j}" for j in range(m))
    else:
        if len(tokens) != m:
            raise ShapeError("token list length != attention width")
        header = ",".join(str(t).replace(",", "_") for t in tokens)
    lines = ["topic," + header]
    for i in range(k):
        lines.append(f"{i}," + ",".join(repr(float(x)) for x in w[i]))
    return "\n".join(lines) + "\n"
