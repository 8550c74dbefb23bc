"""Evaluation metrics: rating R-squared, completion perplexity, coherence.

Every metric is a pure fold over document collections with deterministic
reduction order, so repeated evaluation of the same inputs is bit-identical.

``ppl_dc`` speaks to models through a small scorer protocol (``theta_for``
and ``beta_for``) so the same fold evaluates a trained checkpoint, the
synthetic generator's planted truth, or a uniform baseline.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import exp, log
from pathlib import Path

import numpy as np

from dtam.corpus import completion_split
from dtam.dtm import PROB_FLOOR
from dtam.errors import DataError, DomainError

NPMI_EPSILON = 1e-12


def r2(predictions, targets) -> float:
    """Coefficient of determination, 1 - SS_res / SS_tot. May be negative."""
    preds = np.asarray(predictions, dtype=np.float64).reshape(-1)
    targ = np.asarray(targets, dtype=np.float64).reshape(-1)
    if preds.shape != targ.shape:
        raise DomainError(
            f"prediction/target length mismatch: {preds.shape} vs {targ.shape}")
    if targ.size < 2:
        raise DomainError("r2 needs at least 2 observations")
    ss_tot = float(np.sum((targ - targ.mean()) ** 2))
    if ss_tot == 0.0:
        raise DomainError("r2 undefined: targets have zero variance")
    ss_res = float(np.sum((targ - preds) ** 2))
    return 1.0 - ss_res / ss_tot


def per_slice_r2_series(predictions, targets, time_indices):
    """Per-slice and cumulative R-squared rows, ordered by time index.

    Returns [(time_index, slice_r2_or_None, cumulative_r2_or_None)]; an entry
    is None where R-squared is undefined (fewer than 2 docs or zero target
    variance within the pool).
    """
    preds = np.asarray(predictions, dtype=np.float64).reshape(-1)
    targ = np.asarray(targets, dtype=np.float64).reshape(-1)
    idx = np.asarray(time_indices, dtype=np.int64).reshape(-1)
    if not (preds.shape == targ.shape == idx.shape):
        raise DomainError("predictions, targets, time_indices must align")
    if idx.size == 0:
        return []

    def safe_r2(p, t):
        try:
            return r2(p, t)
        except DomainError:
            return None

    rows = []
    seen = np.zeros(idx.shape, dtype=bool)
    for t in np.unique(idx):
        here = idx == t
        seen |= here
        rows.append((int(t), safe_r2(preds[here], targ[here]),
                     safe_r2(preds[seen], targ[seen])))
    return rows


class UniformScorer:
    """Baseline scorer: uniform theta and uniform beta."""

    def __init__(self, n_topics: int, vocab_size: int):
        self._theta = np.full(n_topics, 1.0 / n_topics)
        self._beta = np.full((n_topics, vocab_size), 1.0 / vocab_size)

    def theta_for(self, doc, first_bow) -> np.ndarray:
        return self._theta

    def beta_for(self, time_index: int) -> np.ndarray:
        return self._beta


class OracleScorer:
    """Scores with a synthetic generator's planted latents (self-evaluation)."""

    def __init__(self, latents):
        self._theta = latents.theta
        self._beta = np.asarray(latents.beta, dtype=np.float64)

    def theta_for(self, doc, first_bow) -> np.ndarray:
        return self._theta[doc.doc_id]

    def beta_for(self, time_index: int) -> np.ndarray:
        return self._beta


def ppl_dc(scorer, docs) -> float:
    """Document-completion perplexity.

    Each document's in-vocab token sequence is split in half; theta is
    inferred from the first half only and the second half is scored under
    the mixture theta . beta. Documents without a scorable second half are
    excluded. Corpus-level: exp(-sum log p / sum tokens).
    """
    total_ll = 0.0
    total_tokens = 0
    for doc in docs:
        split = completion_split(doc)
        if split is None:
            continue
        first, second = split
        theta = np.asarray(scorer.theta_for(doc, first), dtype=np.float64)
        beta = np.asarray(scorer.beta_for(doc.time_index), dtype=np.float64)
        mix = theta @ beta
        probs = np.maximum(mix[second.ids], PROB_FLOOR)
        total_ll += float(second.counts @ np.log(probs))
        total_tokens += int(round(second.total))
    if total_tokens == 0:
        raise DataError("no documents eligible for completion perplexity")
    return exp(-total_ll / total_tokens)


def _top_word_ids(beta_row: np.ndarray, top_n: int) -> np.ndarray:
    # stable sort on the negated row: ties resolve to the lower word id
    order = np.argsort(-beta_row, kind="stable")
    return order[: min(top_n, beta_row.shape[0])]


def topic_coherence(beta, docs, top_n: int = 10,
                    epsilon: float = NPMI_EPSILON) -> float:
    """Mean NPMI over each topic's top-word pairs, then over topics.

    Co-occurrence is document-level presence in the reference collection. A
    pair is skipped when either word never occurs in the reference; a pair
    of words present in every single document scores 1 by the perfect
    co-occurrence limit.
    """
    beta = np.asarray(beta, dtype=np.float64)
    if beta.ndim != 2:
        raise DomainError("beta must be (n_topics, vocab_size)")
    if top_n < 2:
        raise DomainError("coherence needs top_n >= 2")
    doc_list = list(docs)
    n_docs = len(doc_list)
    if n_docs == 0:
        raise DataError("coherence needs a non-empty reference collection")

    needed = set()
    tops = []
    for k in range(beta.shape[0]):
        ids = _top_word_ids(beta[k], top_n)
        tops.append(ids)
        needed.update(int(v) for v in ids)

    presence = {w: set() for w in needed}
    for i, doc in enumerate(doc_list):
        bow = getattr(doc, "bow", doc)
        for w in bow.ids:
            w = int(w)
            if w in presence:
                presence[w].add(i)

    topic_scores = []
    skipped_all = True
    for ids in tops:
        pair_scores = []
        for a in range(len(ids)):
            for b in range(a + 1, len(ids)):
                wi, wj = int(ids[a]), int(ids[b])
                di, dj = presence[wi], presence[wj]
                if not di or not dj:
                    continue
                skipped_all = False
                dij = len(di & dj)
                if dij == n_docs:
                    pair_scores.append(1.0)
                    continue
                p_i = len(di) / n_docs
                p_j = len(dj) / n_docs
                p_ij = dij / n_docs + epsilon
                npmi = log(p_ij / (p_i * p_j)) / (-log(p_ij))
                pair_scores.append(float(np.clip(npmi, -1.0, 1.0)))
        if pair_scores:
            topic_scores.append(sum(pair_scores) / len(pair_scores))
    if skipped_all:
        raise DataError(
            "every top-word pair was skipped: topics share no vocabulary "
            "with the reference collection")
    return sum(topic_scores) / len(topic_scores)


@dataclass
class EvalReport:
    """The four headline numbers plus the per-slice R-squared series."""

    r2: float
    ppl_dc: float
    ppl_p: float
    tc: float
    per_slice: list = field(default_factory=list)
    fingerprint: str = ""

    def validate(self) -> None:
        if not -1.0 <= self.tc <= 1.0:
            raise DomainError(f"topic coherence {self.tc} outside [-1, 1]")

    def to_text(self) -> str:
        lines = [
            f"r2 = {self.r2!r}",
            f"ppl_dc = {self.ppl_dc!r}",
            f"ppl_p = {self.ppl_p!r}",
            f"tc = {self.tc!r}",
            f"fingerprint = {self.fingerprint}",
        ]
        return "\n".join(lines) + "\n"

    def per_slice_csv(self) -> str:
        rows = ["time_index,r2,cumulative_r2"]
        for t, s, c in self.per_slice:
            rows.append(f"{t},{'' if s is None else repr(s)},"
                        f"{'' if c is None else repr(c)}")
        return "\n".join(rows) + "\n"

    def save(self, stem) -> None:
        stem = Path(stem)
        self.validate()
        with open(stem.with_suffix(".report.txt"), "w", encoding="utf-8") as fh:
            fh.write(self.to_text())
        with open(stem.with_suffix(".r2.csv"), "w", encoding="utf-8") as fh:
            fh.write(self.per_slice_csv())
