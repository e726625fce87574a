"""Behavioural traces: per-user entity counts and cleaned document sets."""

from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable
from urllib.parse import urldefrag

from .ingest import Corpus, TweetRecord, clean_text

TRACE_KINDS = ("co_retweet", "co_url", "hashtag_seq", "fast_retweet")
TEXT_KIND = "text_sim"
ALL_KINDS = TRACE_KINDS + (TEXT_KIND,)

# hashtags never contain control characters, so this cannot collide
HASHTAG_SEPARATOR = "\x1f"


@dataclass(frozen=True, order=True)
class TraceEvent:
    user_id: str
    entity_id: str
    count: int


@dataclass(frozen=True)
class TraceParams:
    min_hashtags: int | None = None
    max_delay_seconds: int | None = None


@dataclass(frozen=True)
class Document:
    user_id: str
    tweet_id: str
    timestamp: int
    cleaned_text: str
    word_count: int


@dataclass(frozen=True)
class DocumentSet:
    docs: tuple[Document, ...]
    min_words: int = 4

    def __len__(self) -> int:
        return len(self.docs)

    def __iter__(self):
        return iter(self.docs)


def normalize_url(url: str) -> str:
    return urldefrag(url.strip())[0].rstrip("/")


def _co_retweet(rec: TweetRecord, params: TraceParams):
    if rec.retweet is not None:
        yield rec.retweet.source_tweet_id


def _co_url(rec: TweetRecord, params: TraceParams):
    for url in rec.urls:
        norm = normalize_url(url)
        if norm:
            yield norm


def _hashtag_seq(rec: TweetRecord, params: TraceParams):
    if len(rec.hashtags) >= params.min_hashtags:
        yield HASHTAG_SEPARATOR.join(h.lower() for h in rec.hashtags)


def _fast_retweet(rec: TweetRecord, params: TraceParams):
    rt = rec.retweet
    if rt is not None and rec.timestamp - rt.source_timestamp <= params.max_delay_seconds:
        yield rt.source_author_id


_EXTRACTORS = {
    "co_retweet": (_co_retweet, ()),
    "co_url": (_co_url, ()),
    "hashtag_seq": (_hashtag_seq, ("min_hashtags",)),
    "fast_retweet": (_fast_retweet, ("max_delay_seconds",)),
}


def extract_events(
    corpus: Corpus | Iterable[TweetRecord], kind: str, params: TraceParams | None = None
) -> list[TraceEvent]:
    """Aggregate (user, entity) occurrence counts for one trace.

    Events come back sorted by (user_id, entity_id) so downstream matrices are
    laid out identically however the corpus was ordered.
    """
    try:
        extractor, required = _EXTRACTORS[kind]
    except KeyError:
        raise ValueError(f"unknown trace kind {kind!r}; expected one of {TRACE_KINDS}") from None
    params = params or TraceParams()
    for name in required:
        if getattr(params, name) is None:
            raise ValueError(f"trace {kind!r} requires parameter {name!r}")
    records = corpus.records if isinstance(corpus, Corpus) else corpus
    counts: Counter[tuple[str, str]] = Counter()
    for rec in records:
        for entity in extractor(rec, params):
            counts[(rec.author_id, entity)] += 1
    return [TraceEvent(u, e, c) for (u, e), c in sorted(counts.items())]


def extract_documents(
    corpus: Corpus | Iterable[TweetRecord],
    min_words: int = 4,
    stopwords: frozenset[str] | None = None,
) -> DocumentSet:
    if min_words < 1:
        raise ValueError("min_words must be >= 1")
    records = corpus.records if isinstance(corpus, Corpus) else corpus
    docs = []
    for rec in records:
        if rec.is_retweet:
            continue
        cleaned = clean_text(rec.text, stopwords)
        n_words = len(cleaned.split())
        if n_words >= min_words:
            docs.append(Document(rec.author_id, rec.tweet_id, rec.timestamp, cleaned, n_words))
    docs.sort(key=lambda d: (d.timestamp, d.tweet_id))
    return DocumentSet(tuple(docs), min_words)


def write_events(events: Iterable[TraceEvent], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["user_id", "entity_id", "count"])
        for ev in events:
            writer.writerow([ev.user_id, ev.entity_id, ev.count])
