"""Synthetic drifting corpora sampled from the generative model itself.

Global trajectories eta_t are scripted (linear drift, sinusoid, localized
burst, or constant) rather than random walks so tests control exactly how
much non-stationarity a scenario carries. Everything downstream of eta --
zeta, theta, topic assignments, words -- follows the model's ancestral
process with dim(zeta) = dim(eta) = K, an identity zeta link, and an
identity theta decoder, so theta = softmax(zeta) and zeta ~ N(eta_t, I).

Ratings are planted through a logistic link on theta; the model family can
represent that map, which makes the corpus a usable oracle for regression
metrics. All sampling is driven by one seeded generator.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from dtam.corpus import BagOfWords, CorpusTimeline, Document, timeline_from_documents
from dtam.errors import DataError, DomainError

DYNAMICS_KINDS = ("trend", "seasonal", "burst", "stationary")


@dataclass
class ScenarioConfig:
    n_topics: int = 3
    vocab_size: int = 100
    embed_dim: int = 16
    n_slices: int = 30
    docs_per_slice: int = 100
    tokens_per_doc: int = 50
    dynamics: tuple = ("trend", "stationary", "stationary")
    rating_link: tuple = (4.0, -2.0, -2.0)
    rating_noise_std: float = 0.05
    zeta_noise_std: float = 1.0
    amplitude: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if len(self.dynamics) != self.n_topics:
            raise DomainError("one dynamics kind required per topic")
        for kind in self.dynamics:
            if kind not in DYNAMICS_KINDS:
                raise DomainError(f"unknown dynamics kind {kind!r}")
        if len(self.rating_link) != self.n_topics:
            raise DomainError("rating link weight required per topic")
        for name in ("n_topics", "vocab_size", "embed_dim", "n_slices",
                     "docs_per_slice", "tokens_per_doc"):
            if getattr(self, name) < 1:
                raise DomainError(f"{name} must be positive")


@dataclass
class PlantedLatents:
    """Ground truth kept aside for oracle checks."""

    config: ScenarioConfig
    eta: np.ndarray           # (T, K) scripted global states
    alpha: np.ndarray         # (K, E)
    rho: np.ndarray           # (V, E)
    beta: np.ndarray          # (K, V) row-stochastic
    theta: dict = field(default_factory=dict)   # doc_id -> (K,)
    zeta: dict = field(default_factory=dict)    # doc_id -> (K,)
    rating_link: np.ndarray | None = None
    rating_noise_std: float = 0.0

    def theta_for(self, doc_id: str) -> np.ndarray:
        return self.theta[doc_id]

    def save_npz(self, path) -> None:
        doc_ids = sorted(self.theta)
        np.savez(
            path,
            eta=self.eta, alpha=self.alpha, rho=self.rho, beta=self.beta,
            doc_ids=np.array(doc_ids),
            theta=np.stack([self.theta[d] for d in doc_ids]),
            zeta=np.stack([self.zeta[d] for d in doc_ids]),
            rating_link=(np.zeros(0) if self.rating_link is None
                         else self.rating_link),
            rating_noise_std=np.float64(self.rating_noise_std),
        )

    @classmethod
    def load_npz(cls, path, config: ScenarioConfig) -> "PlantedLatents":
        with np.load(path, allow_pickle=False) as z:
            doc_ids = [str(d) for d in z["doc_ids"]]
            link = z["rating_link"]
            return cls(
                config=config,
                eta=z["eta"], alpha=z["alpha"], rho=z["rho"], beta=z["beta"],
                theta={d: z["theta"][i] for i, d in enumerate(doc_ids)},
                zeta={d: z["zeta"][i] for i, d in enumerate(doc_ids)},
                rating_link=None if link.size == 0 else link,
                rating_noise_std=float(z["rating_noise_std"]),
            )


def scripted_eta(config: ScenarioConfig) -> np.ndarray:
    """Deterministic (T, K) trajectories, one dynamics kind per topic."""
    T, A = config.n_slices, config.amplitude
    t = np.arange(T, dtype=np.float64)
    out = np.zeros((T, config.n_topics))
    for k, kind in enumerate(config.dynamics):
        if kind == "trend":
            out[:, k] = np.linspace(-A, A, T) if T > 1 else 0.0
        elif kind == "seasonal":
            period = max(4.0, T / 3.0)
            out[:, k] = A * np.sin(2.0 * np.pi * t / period)
        elif kind == "burst":
            center, width = (T - 1) / 2.0, max(1.0, T / 10.0)
            out[:, k] = A * np.exp(-((t - center) ** 2) / (2.0 * width ** 2))
        # stationary stays zero
    return out


def _row_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _doc_timestamp(t: int, i: int) -> float:
    # slices are 10000 s wide starting at 10000, so fixed-seconds ingestion
    # with width 10000 reproduces the slice structure
    return 10000.0 * (t + 1) + float(i)


def sample_timeline(config: ScenarioConfig):
    """Ancestral-sample a corpus; returns (CorpusTimeline, PlantedLatents)."""
    rng = np.random.default_rng(config.seed)
    K, V, E, T = (config.n_topics, config.vocab_size, config.embed_dim,
                  config.n_slices)
    eta = scripted_eta(config)
    alpha = rng.normal(size=(K, E))
    rho = rng.normal(size=(V, E))
    beta = _row_softmax(alpha @ rho.T)
    latents = PlantedLatents(config=config, eta=eta, alpha=alpha, rho=rho,
                             beta=beta)
    docs = []
    for t in range(T):
        for i in range(config.docs_per_slice):
            doc_id = f"t{t:03d}_d{i:04d}"
            zeta = eta[t] + config.zeta_noise_std * rng.standard_normal(K)
            theta = _row_softmax(zeta)
            z = rng.choice(K, size=config.tokens_per_doc, p=theta)
            words = np.empty(config.tokens_per_doc, dtype=np.int64)
            for k in range(K):
                idx = np.nonzero(z == k)[0]
                if idx.size:
                    words[idx] = rng.choice(V, size=idx.size, p=beta[k])
            words = words[rng.permutation(config.tokens_per_doc)]
            latents.theta[doc_id] = theta
            latents.zeta[doc_id] = zeta
            docs.append(Document(
                doc_id=doc_id,
                timestamp=_doc_timestamp(t, i),
                raw_label=0.0,
                lm_token_ids=words + 1,   # LM id 0 is reserved for UNK
                tm_token_ids=words,
                bow=BagOfWords.from_token_ids(words),
                time_index=t,
            ))
    boundaries = 10000.0 * (np.arange(T + 1) + 1)
    timeline = timeline_from_documents(docs, vocab_size=V, boundaries=boundaries)
    return timeline, latents


def _logistic(x):
    return 1.0 / (1.0 + np.exp(-x))


def plant_ratings(timeline: CorpusTimeline, latents: PlantedLatents,
                  rating_link=None, rating_noise_std: float | None = None,
                  seed: int = 0) -> CorpusTimeline:
    """Attach r = logistic(v . theta + eps) to every document.

    Defaults come from the scenario config; the raw label equals the rating
    so JSONL round trips carry the same value.
    """
    v = np.asarray(latents.config.rating_link if rating_link is None
                   else rating_link, dtype=np.float64)
    std = (latents.config.rating_noise_std if rating_noise_std is None
           else rating_noise_std)
    if v.shape != (latents.config.n_topics,):
        raise DomainError("rating link length must equal the topic count")
    rng = np.random.default_rng(seed)
    new_slices = []
    for docs in timeline.slices:
        row = []
        for d in docs:
            theta = latents.theta[d.doc_id]
            r = _logistic(float(v @ theta) + std * rng.standard_normal())
            r = float(np.clip(r, 0.0, 1.0))
            row.append(replace(d, rating=r, raw_label=r))
        new_slices.append(row)
    latents.rating_link = v
    latents.rating_noise_std = std
    out = CorpusTimeline(
        slices=new_slices, boundaries=timeline.boundaries.copy(),
        vocab_size=timeline.vocab_size, first_index=timeline.first_index,
        granularity=timeline.granularity)
    out.validate()
    return out


def write_scenario_jsonl(timeline: CorpusTimeline, path) -> int:
    """Emit the standard ingestion format; token v becomes the word 'w%04d'."""
    path = Path(path)
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for d in timeline.all_documents():
            if d.rating is None:
                raise DataError(f"doc {d.doc_id} lacks a rating; plant ratings first")
            text = " ".join(f"w{v:04d}" for v in d.tm_token_ids)
            fh.write(json.dumps({
                "id": d.doc_id,
                "text": text,
                "timestamp": d.timestamp,
                "label": d.rating,
                "author": "synthgen",
            }) + "\n")
            n += 1
    return n


def generate_scenario(config: ScenarioConfig):
    """Sample a corpus and plant ratings in one call."""
    timeline, latents = sample_timeline(config)
    rated = plant_ratings(timeline, latents, seed=config.seed + 1)
    return rated, latents
