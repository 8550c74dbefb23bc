"""Corpus pipeline: ingestion, vocabularies, BoW timelines, causal splits."""

from dtam.corpus.text import tokenize
from dtam.corpus.documents import (
    UNK_TOKEN,
    BagOfWords,
    Document,
    LabelScaler,
    RawDocument,
    Vocabulary,
    bow_encode,
    build_lm_vocabulary,
    build_tm_vocabulary,
    encode_documents,
    ingest_jsonl,
    normalize_labels,
)
from dtam.corpus.timeline import (
    CorpusTimeline,
    assign_time_index,
    collapse_timeline,
    completion_split,
    load_timeline,
    random_split,
    save_timeline,
    temporal_split,
    time_bucketize,
    timeline_from_documents,
)

__all__ = [
    "tokenize",
    "UNK_TOKEN",
    "BagOfWords",
    "Document",
    "LabelScaler",
    "RawDocument",
    "Vocabulary",
    "bow_encode",
    "build_lm_vocabulary",
    "build_tm_vocabulary",
    "encode_documents",
    "ingest_jsonl",
    "normalize_labels",
    "CorpusTimeline",
    "assign_time_index",
    "collapse_timeline",
    "completion_split",
    "load_timeline",
    "random_split",
    "save_timeline",
    "temporal_split",
    "time_bucketize",
    "timeline_from_documents",
]
