"""Time bucketing, causal splits, and timeline persistence."""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np

from dtam.corpus.documents import BagOfWords, Document
from dtam.errors import DataError

WEEK_SECONDS = 7 * 24 * 3600.0


@dataclass
class CorpusTimeline:
    """Ordered time slices; each slice holds documents, W_t is their BoW sum.

    ``first_index`` keeps the global slice numbering intact across temporal
    splits so a prediction timeline knows its offset from the history.
    """

    slices: list
    boundaries: np.ndarray
    vocab_size: int
    first_index: int = 0
    granularity: str = "fixed-seconds"

    @property
    def num_slices(self) -> int:
        return len(self.slices)

    def slice_bows(self) -> np.ndarray:
        """Dense (T, V) matrix of per-slice aggregated counts."""
        out = np.zeros((len(self.slices), self.vocab_size))
        for t, docs in enumerate(self.slices):
            for d in docs:
                out[t, d.bow.ids] += d.bow.counts
        return out

    def all_documents(self) -> list:
        return [d for docs in self.slices for d in docs]

    def document_count(self) -> int:
        return sum(len(docs) for docs in self.slices)

    def validate(self) -> None:
        if not self.slices:
            raise DataError("timeline must hold at least one slice")
        if len(self.boundaries) != len(self.slices) + 1:
            raise DataError("boundaries must be fence-posts (one more than slices)")
        if np.any(np.diff(self.boundaries) <= 0):
            raise DataError("slice boundaries must strictly increase")
        for t, docs in enumerate(self.slices):
            for d in docs:
                d.validate(self.vocab_size)
                if d.time_index != self.first_index + t:
                    raise DataError(
                        f"doc {d.doc_id} carries slice {d.time_index}, "
                        f"stored in slice {self.first_index + t}"
                    )


def _weekly_origin(ts: float) -> float:
    """Monday 00:00 UTC at or before ts."""
    dt = datetime.fromtimestamp(ts, tz=timezone.utc)
    monday = (dt - timedelta(days=dt.weekday())).replace(
        hour=0, minute=0, second=0, microsecond=0)
    return monday.timestamp()


def _month_index(ts: float) -> int:
    dt = datetime.fromtimestamp(ts, tz=timezone.utc)
    return dt.year * 12 + (dt.month - 1)


def _month_start(index: int) -> float:
    year, month = divmod(index, 12)
    return datetime(year, month + 1, 1, tzinfo=timezone.utc).timestamp()


def time_bucketize(docs, granularity: str = "weekly",
                   width_seconds: float | None = None,
                   subsample_per_slice: int | None = None,
                   seed: int | None = None) -> CorpusTimeline:
    """Assign every document to a UTC-anchored slice and aggregate.

    Weekly slices start on Mondays, monthly slices on calendar months, and
    ``fixed-seconds`` slices at multiples of ``width_seconds`` from the epoch.
    Gap slices between occupied ones are kept as empty (zero W_t). With
    ``subsample_per_slice`` set, each slice keeps at most that many documents,
    drawn without replacement by a single seeded generator in slice order.
    """
    if not docs:
        raise DataError("cannot bucketize an empty document list")
    if granularity not in ("weekly", "monthly", "fixed-seconds"):
        raise DataError(f"unknown granularity {granularity!r}")
    if granularity == "fixed-seconds":
        if not width_seconds or width_seconds <= 0:
            raise DataError("fixed-seconds granularity needs a positive width")

    timestamps = [d.timestamp for d in docs]
    t_min = min(timestamps)

    if granularity == "monthly":
        base = _month_index(t_min)
        indices = [_month_index(ts) - base for ts in timestamps]
        n_slices = max(indices) + 1
        boundaries = np.array([_month_start(base + i) for i in range(n_slices + 1)])
    else:
        if granularity == "weekly":
            origin = _weekly_origin(t_min)
            width = WEEK_SECONDS
        else:
            width = float(width_seconds)
            origin = math.floor(t_min / width) * width
        indices = [int((ts - origin) // width) for ts in timestamps]
        n_slices = max(indices) + 1
        boundaries = origin + width * np.arange(n_slices + 1)

    slices = [[] for _ in range(n_slices)]
    for doc, idx in zip(docs, indices):
        slices[idx].append(replace(doc, time_index=idx))

    if subsample_per_slice is not None:
        rng = np.random.default_rng(seed)
        for t in range(n_slices):
            if len(slices[t]) > subsample_per_slice:
                pick = rng.choice(len(slices[t]), size=subsample_per_slice,
                                  replace=False)
                pick.sort()
                slices[t] = [slices[t][i] for i in pick]

    vocab_size = _infer_vocab_size(docs)
    tl = CorpusTimeline(slices=slices, boundaries=boundaries,
                        vocab_size=vocab_size, granularity=granularity)
    tl.validate()
    return tl


def _infer_vocab_size(docs) -> int:
    top = 0
    for d in docs:
        if d.bow.ids.size:
            top = max(top, int(d.bow.ids.max()) + 1)
    return max(top, 1)


def assign_time_index(timeline: CorpusTimeline, timestamp: float) -> int:
    """Global slice index of a timestamp on this timeline's axis.

    Timestamps beyond the last boundary extrapolate the existing grid, which
    is how future documents get their horizon. Timestamps before the first
    boundary are an error: nothing can precede the training window's axis.
    """
    b = timeline.boundaries
    if timestamp < b[0]:
        raise DataError(
            f"timestamp {timestamp} precedes the timeline origin {b[0]}")
    if timeline.granularity == "monthly":
        return timeline.first_index + _month_index(timestamp) - _month_index(b[0])
    width = float(b[1] - b[0])
    return timeline.first_index + int((timestamp - b[0]) // width)


def timeline_from_documents(docs, vocab_size: int, boundaries=None,
                            first_index: int = 0,
                            granularity: str = "fixed-seconds") -> CorpusTimeline:
    """Assemble a timeline from documents that already carry time indices."""
    if not docs:
        raise DataError("cannot build a timeline from no documents")
    indices = [d.time_index for d in docs]
    lo, hi = min(indices), max(indices)
    if lo < first_index:
        raise DataError("document slice index precedes first_index")
    n = hi - first_index + 1
    slices = [[] for _ in range(n)]
    for d in docs:
        slices[d.time_index - first_index].append(d)
    if boundaries is None:
        boundaries = np.arange(first_index, first_index + n + 1, dtype=np.float64)
    tl = CorpusTimeline(slices=slices, boundaries=np.asarray(boundaries, dtype=np.float64),
                        vocab_size=vocab_size, first_index=first_index,
                        granularity=granularity)
    tl.validate()
    return tl


def collapse_timeline(timeline: CorpusTimeline) -> CorpusTimeline:
    """Merge all slices into one (the static-model view of the corpus)."""
    docs = [replace(d, time_index=0) for d in timeline.all_documents()]
    slices = [docs]
    boundaries = np.array([timeline.boundaries[0], timeline.boundaries[-1]])
    tl = CorpusTimeline(slices=slices, boundaries=boundaries,
                        vocab_size=timeline.vocab_size, first_index=0,
                        granularity=timeline.granularity)
    tl.validate()
    return tl


# ---- causal splits ---------------------------------------------------------


def temporal_split(timeline: CorpusTimeline, n_prediction: int = 20):
    """Last ``n_prediction`` slices become the prediction set; the rest is
    the up-to-date set. Global slice indices are preserved on both sides."""
    T = timeline.num_slices
    if T <= n_prediction:
        raise DataError(
            f"need more than {n_prediction} slices for a temporal split, have {T}"
        )
    cut = T - n_prediction
    up_to_date = CorpusTimeline(
        slices=timeline.slices[:cut],
        boundaries=timeline.boundaries[:cut + 1].copy(),
        vocab_size=timeline.vocab_size,
        first_index=timeline.first_index,
        granularity=timeline.granularity,
    )
    prediction = CorpusTimeline(
        slices=timeline.slices[cut:],
        boundaries=timeline.boundaries[cut:].copy(),
        vocab_size=timeline.vocab_size,
        first_index=timeline.first_index + cut,
        granularity=timeline.granularity,
    )
    return up_to_date, prediction


def _largest_remainder_counts(n: int, ratios) -> list:
    raw = [r * n for r in ratios]
    counts = [int(math.floor(x)) for x in raw]
    short = n - sum(counts)
    remainders = sorted(range(len(ratios)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in remainders[:short]:
        counts[i] += 1
    return counts


def random_split(timeline: CorpusTimeline, ratios=(0.8, 0.1, 0.1),
                 seed: int = 0):
    """Stratified in-slice split into (train, val, test) timelines.

    Each slice is shuffled and partitioned by largest-remainder rounding of
    the ratios; slices with fewer than 3 documents go wholly to train with a
    warning. All three outputs keep the full slice structure (possibly with
    empty slices) so the global chain stays aligned.
    """
    if len(ratios) != 3:
        raise DataError("expected exactly three ratios (train, val, test)")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise DataError(f"split ratios must sum to 1, got {ratios}")
    rng = np.random.default_rng(seed)
    parts = [[], [], []]
    for t, docs in enumerate(timeline.slices):
        n = len(docs)
        if n == 0:
            for p in parts:
                p.append([])
            continue
        if n < 3:
            warnings.warn(
                f"slice {timeline.first_index + t} has {n} document(s); "
                "assigning all to train", stacklevel=2)
            parts[0].append(list(docs))
            parts[1].append([])
            parts[2].append([])
            continue
        order = rng.permutation(n)
        counts = _largest_remainder_counts(n, ratios)
        lo = 0
        for k, c in enumerate(counts):
            chosen = sorted(order[lo:lo + c])
            parts[k].append([docs[i] for i in chosen])
            lo += c
    out = []
    for part in parts:
        out.append(CorpusTimeline(
            slices=part,
            boundaries=timeline.boundaries.copy(),
            vocab_size=timeline.vocab_size,
            first_index=timeline.first_index,
            granularity=timeline.granularity,
        ))
    return tuple(out)


def completion_split(doc: Document):
    """Split a document's in-vocab token sequence at ceil(M/2).

    Returns (first_bow, second_bow), or None when fewer than 2 in-vocab
    tokens exist (such documents are excluded from completion evaluation).
    """
    m = len(doc.tm_token_ids)
    if m < 2:
        return None
    cut = (m + 1) // 2
    first = BagOfWords.from_token_ids(doc.tm_token_ids[:cut])
    second = BagOfWords.from_token_ids(doc.tm_token_ids[cut:])
    return first, second


# ---- persistence --------------------------------------------------------------


def save_timeline(stem, timeline: CorpusTimeline) -> None:
    """Write ``<stem>.timeline`` (structure) and ``<stem>.docs.jsonl`` (content)."""
    stem = Path(stem)
    lines = [
        "timeline-format 1",
        f"granularity {timeline.granularity}",
        f"first-index {timeline.first_index}",
        f"vocab-size {timeline.vocab_size}",
        f"slices {timeline.num_slices}",
        "boundaries " + " ".join(repr(float(b)) for b in timeline.boundaries),
    ]
    for t, docs in enumerate(timeline.slices):
        ids = " ".join(d.doc_id for d in docs)
        lines.append(f"slice {timeline.first_index + t} {len(docs)}"
                     + (f" {ids}" if ids else ""))
    stem.with_suffix(".timeline").write_text("\n".join(lines) + "\n", encoding="utf-8")
    with open(stem.with_suffix(".docs.jsonl"), "w", encoding="utf-8") as fh:
        for d in timeline.all_documents():
            fh.write(json.dumps({
                "id": d.doc_id,
                "timestamp": d.timestamp,
                "raw_label": d.raw_label,
                "rating": d.rating,
                "time_index": d.time_index,
                "lm_ids": [int(x) for x in d.lm_token_ids],
                "tm_ids": [int(x) for x in d.tm_token_ids],
            }) + "\n")


def load_timeline(stem) -> CorpusTimeline:
    stem = Path(stem)
    manifest_path = stem.with_suffix(".timeline")
    docs_path = stem.with_suffix(".docs.jsonl")
    if not manifest_path.exists() or not docs_path.exists():
        raise DataError(f"missing timeline files for stem {stem}")
    lines = manifest_path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != "timeline-format 1":
        raise DataError(f"unrecognized timeline header in {manifest_path}")
    header = {}
    slice_ids = {}
    for line in lines[1:]:
        if not line.strip():
            continue
        parts = line.split(" ")
        if parts[0] == "slice":
            idx, count = int(parts[1]), int(parts[2])
            ids = parts[3:]
            if len(ids) != count:
                raise DataError(f"slice {idx}: manifest count mismatch")
            slice_ids[idx] = ids
        elif parts[0] == "boundaries":
            header["boundaries"] = np.array([float(x) for x in parts[1:]])
        else:
            header[parts[0]] = parts[1]
    first_index = int(header["first-index"])
    vocab_size = int(header["vocab-size"])
    n_slices = int(header["slices"])

    by_id = {}
    with open(docs_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            rec = json.loads(line)
            tm_ids = np.array(rec["tm_ids"], dtype=np.int64)
            bow = (BagOfWords.from_token_ids(tm_ids) if tm_ids.size
                   else BagOfWords.empty())
            by_id[rec["id"]] = Document(
                doc_id=rec["id"],
                timestamp=float(rec["timestamp"]),
                raw_label=float(rec["raw_label"]),
                lm_token_ids=np.array(rec["lm_ids"], dtype=np.int64),
                tm_token_ids=tm_ids,
                bow=bow,
                time_index=int(rec["time_index"]),
                rating=None if rec["rating"] is None else float(rec["rating"]),
            )
    slices = []
    for t in range(n_slices):
        ids = slice_ids.get(first_index + t, [])
        try:
            slices.append([by_id[i] for i in ids])
        except KeyError as exc:
            raise DataError(f"slice {first_index + t}: unknown doc id {exc}") from exc
    tl = CorpusTimeline(
        slices=slices,
        boundaries=header["boundaries"],
        vocab_size=vocab_size,
        first_index=first_index,
        granularity=header.get("granularity", "fixed-seconds"),
    )
    tl.validate()
    return tl
