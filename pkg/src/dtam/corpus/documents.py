"""Raw records, vocabularies, encoded documents, and label scaling."""

from __future__ import annotations

import hashlib
import json
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from dtam.corpus.text import tokenize
from dtam.errors import DataError

UNK_TOKEN = "<unk>"
DEFAULT_AUTOMATED_AUTHORS = frozenset({"AutoModerator"})


@dataclass
class RawDocument:
    """One ingested record before tokenization."""

    doc_id: str
    text: str
    timestamp: float
    label: float
    author: str | None = None


def ingest_jsonl(path, automated_authors=DEFAULT_AUTOMATED_AUTHORS,
                 min_words: int = 20) -> list:
    """Read JSONL records, dropping automated authors, short texts, bad bytes.

    Records keep their input order. A line that is not valid JSON or lacks a
    required key is a hard error naming the line; a line that is not valid
    UTF-8 is silently dropped (it cannot be attributed to a record).
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such input file: {path}")
    out = []
    with open(path, "rb") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                line = raw.decode("utf-8")
            except UnicodeDecodeError:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from exc
            for key in ("id", "text", "timestamp", "label"):
                if key not in rec:
                    raise DataError(f"{path}:{lineno}: missing required key {key!r}")
            author = rec.get("author")
            if author is not None and author in automated_authors:
                continue
            text = str(rec["text"])
            if len(text.split()) < min_words:
                continue
            timestamp = float(rec["timestamp"])
            if not text.strip() or timestamp <= 0:
                raise DataError(f"{path}:{lineno}: empty text or non-positive timestamp")
            out.append(RawDocument(
                doc_id=str(rec["id"]),
                text=text,
                timestamp=timestamp,
                label=float(rec["label"]),
                author=author,
            ))
    return out


# ---- vocabularies -----------------------------------------------------------


@dataclass
class Vocabulary:
    """Dense token ids with per-token document frequency."""

    token_to_id: dict
    id_to_token: list
    doc_frequency: list

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def id_of(self, token: str) -> int | None:
        return self.token_to_id.get(token)

    def content_hash(self) -> str:
        """Stable fingerprint of the id -> token mapping."""
        joined = "\n".join(self.id_to_token).encode("utf-8")
        return hashlib.sha256(joined).hexdigest()

    def save_tsv(self, path) -> None:
        lines = [f"{i}\t{tok}\t{df}" for i, (tok, df) in
                 enumerate(zip(self.id_to_token, self.doc_frequency))]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load_tsv(cls, path) -> "Vocabulary":
        token_to_id, id_to_token, doc_frequency = {}, [], []
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise DataError(f"{path}:{lineno}: expected 3 tab-separated fields")
            idx, tok, df = int(parts[0]), parts[1], int(parts[2])
            if idx != len(id_to_token):
                raise DataError(f"{path}:{lineno}: ids must be dense and ordered")
            token_to_id[tok] = idx
            id_to_token.append(tok)
            doc_frequency.append(df)
        if not id_to_token:
            raise DataError(f"{path}: empty vocabulary file")
        return cls(token_to_id, id_to_token, doc_frequency)


def _token_stats(token_lists):
    doc_freq = Counter()
    total_freq = Counter()
    for tokens in token_lists:
        total_freq.update(tokens)
        doc_freq.update(set(tokens))
    return doc_freq, total_freq


def build_tm_vocabulary(token_lists, min_df: int = 5, max_size: int = 5000,
                        ascending: bool = False) -> Vocabulary:
    """Topic-model vocabulary: document frequency >= min_df, then the top
    ``max_size`` tokens by total frequency (descending unless ``ascending``),
    ties broken lexicographically. Ids follow the ranking order."""
    doc_freq, total_freq = _token_stats(token_lists)
    survivors = [tok for tok, df in doc_freq.items() if df >= min_df]
    if not survivors:
        raise DataError(
            f"no token reaches document frequency {min_df}; corpus too small"
        )
    sign = 1 if ascending else -1
    survivors.sort(key=lambda tok: (sign * total_freq[tok], tok))
    survivors = survivors[:max_size]
    return Vocabulary(
        token_to_id={tok: i for i, tok in enumerate(survivors)},
        id_to_token=list(survivors),
        doc_frequency=[doc_freq[tok] for tok in survivors],
    )


def build_lm_vocabulary(token_lists, min_freq: int = 2) -> Vocabulary:
    """Language-model vocabulary: every token with total frequency >= min_freq,
    frequency-descending with lexicographic ties, plus UNK at id 0."""
    doc_freq, total_freq = _token_stats(token_lists)
    kept = [tok for tok, freq in total_freq.items() if freq >= min_freq]
    kept.sort(key=lambda tok: (-total_freq[tok], tok))
    id_to_token = [UNK_TOKEN] + kept
    return Vocabulary(
        token_to_id={tok: i for i, tok in enumerate(id_to_token)},
        id_to_token=id_to_token,
        doc_frequency=[0] + [doc_freq[tok] for tok in kept],
    )


# ---- encoded documents ---------------------------------------------------------


@dataclass
class BagOfWords:
    """Sparse count vector: sorted unique ids with positive counts."""

    ids: np.ndarray
    counts: np.ndarray

    @classmethod
    def from_token_ids(cls, token_ids) -> "BagOfWords":
        ids, counts = np.unique(np.asarray(token_ids, dtype=np.int64), return_counts=True)
        return cls(ids=ids, counts=counts.astype(np.float64))

    @classmethod
    def empty(cls) -> "BagOfWords":
        return cls(ids=np.zeros(0, dtype=np.int64), counts=np.zeros(0))

    def dense(self, size: int) -> np.ndarray:
        out = np.zeros(size)
        out[self.ids] = self.counts
        return out

    @property
    def total(self) -> float:
        return float(self.counts.sum())

    def __eq__(self, other) -> bool:
        return (isinstance(other, BagOfWords)
                and np.array_equal(self.ids, other.ids)
                and np.array_equal(self.counts, other.counts))


def bow_encode(tokens, vocab: Vocabulary) -> BagOfWords:
    """Count in-vocabulary tokens; order-invariant, OOV skipped."""
    ids = [vocab.token_to_id[t] for t in tokens if t in vocab.token_to_id]
    if not ids:
        return BagOfWords.empty()
    return BagOfWords.from_token_ids(ids)


@dataclass
class Document:
    """Encoded document: the tuple (token sequence, BoW, slice index, rating)."""

    doc_id: str
    timestamp: float
    raw_label: float
    lm_token_ids: np.ndarray = field(repr=False)
    tm_token_ids: np.ndarray = field(repr=False)
    bow: BagOfWords = field(repr=False)
    time_index: int = -1
    rating: float | None = None

    def validate(self, vocab_size: int) -> None:
        if self.bow.ids.size and self.bow.ids.max() >= vocab_size:
            raise DataError(f"doc {self.doc_id}: BoW id exceeds vocabulary size")
        if self.bow.total != len(self.tm_token_ids):
            raise DataError(f"doc {self.doc_id}: BoW mass != in-vocab token count")
        if self.rating is not None and not (0.0 <= self.rating <= 1.0):
            raise DataError(f"doc {self.doc_id}: rating {self.rating} outside [0,1]")


def encode_documents(raw_docs, tm_vocab: Vocabulary, lm_vocab: Vocabulary,
                     lemmatizer=None, stopwords=None) -> list:
    """Tokenize and encode against both vocabularies. Fully OOV docs are kept
    (zero BoW) so ingestion counts stay auditable; later stages filter them."""
    unk = lm_vocab.token_to_id[UNK_TOKEN]
    out = []
    for raw in raw_docs:
        tokens = tokenize(raw.text, lemmatizer=lemmatizer, stopwords=stopwords)
        lm_ids = np.array([lm_vocab.token_to_id.get(t, unk) for t in tokens],
                          dtype=np.int64)
        tm_ids = np.array([tm_vocab.token_to_id[t] for t in tokens
                           if t in tm_vocab.token_to_id], dtype=np.int64)
        bow = (BagOfWords.from_token_ids(tm_ids) if tm_ids.size
               else BagOfWords.empty())
        out.append(Document(
            doc_id=raw.doc_id,
            timestamp=raw.timestamp,
            raw_label=raw.label,
            lm_token_ids=lm_ids,
            tm_token_ids=tm_ids,
            bow=bow,
        ))
    return out


# ---- label scaling ---------------------------------------------------------------


@dataclass
class LabelScaler:
    """Min-max map fitted on training labels only."""

    low: float
    high: float

    def __post_init__(self):
        if not self.high > self.low:
            raise DataError(f"degenerate label range [{self.low}, {self.high}]")

    def forward(self, x: float) -> float:
        return (x - self.low) / (self.high - self.low)

    def inverse(self, y: float) -> float:
        return y * (self.high - self.low) + self.low

    def apply(self, docs, cap: float = 50000.0, clip: bool = True) -> list:
        """Scale a non-training split: same cap, values clipped into [0,1]."""
        out = []
        for d in docs:
            if d.raw_label > cap:
                continue
            r = self.forward(d.raw_label)
            if clip:
                r = min(1.0, max(0.0, r))
            out.append(replace(d, rating=r))
        return out


def normalize_labels(docs, cap: float = 50000.0):
    """Drop labels above ``cap``, then min-max scale the survivors to [0,1].

    Fit and transform in one step; call this on the training split and use the
    returned scaler's ``apply`` for validation/test/prediction splits.
    """
    kept = [d for d in docs if d.raw_label <= cap]
    if not kept:
        raise DataError(f"every label exceeds the cap {cap}")
    labels = [d.raw_label for d in kept]
    low, high = min(labels), max(labels)
    if high == low:
        raise DataError("all training labels identical; scaler undefined")
    scaler = LabelScaler(low=low, high=high)
    scaled = [replace(d, rating=scaler.forward(d.raw_label)) for d in kept]
    return scaled, scaler
