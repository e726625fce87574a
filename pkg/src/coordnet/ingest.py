"""Corpus and label loading, plus the text normalisation shared by every trace."""

from __future__ import annotations

import csv
import json
import logging
import re
import unicodedata
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Iterator

logger = logging.getLogger(__name__)

LABEL_VALUES = ("io_driver", "control")
LABEL_HEADER = ("user_id", "label", "country", "first_active_year")


@dataclass(frozen=True)
class Retweet:
    source_tweet_id: str
    source_author_id: str
    source_timestamp: int


@dataclass(frozen=True)
class TweetRecord:
    tweet_id: str
    author_id: str
    timestamp: int
    text: str = ""
    hashtags: tuple[str, ...] = ()
    urls: tuple[str, ...] = ()
    retweet: Retweet | None = None

    @property
    def is_retweet(self) -> bool:
        return self.retweet is not None

    def to_json(self) -> dict:
        obj = {
            "tweet_id": self.tweet_id,
            "author_id": self.author_id,
            "timestamp": self.timestamp,
            "text": self.text,
            "hashtags": list(self.hashtags),
            "urls": list(self.urls),
        }
        if self.retweet is not None:
            obj["retweet"] = {
                "source_tweet_id": self.retweet.source_tweet_id,
                "source_author_id": self.retweet.source_author_id,
                "source_timestamp": self.retweet.source_timestamp,
            }
        return obj


@dataclass(frozen=True)
class LabelRecord:
    user_id: str
    label: str
    country: str
    first_active_year: int

    @property
    def is_driver(self) -> bool:
        return self.label == "io_driver"


@dataclass(frozen=True)
class Corpus:
    records: tuple[TweetRecord, ...]
    users: frozenset[str] = field(default=frozenset())
    n_skipped: int = 0

    def __post_init__(self):
        # users is always derived from the records; passing it is only a shortcut
        object.__setattr__(self, "users", frozenset(r.author_id for r in self.records))

    @classmethod
    def from_records(cls, records: Iterable[TweetRecord]) -> "Corpus":
        records = tuple(records)
        seen: set[str] = set()
        for r in records:
            if r.tweet_id in seen:
                raise ValueError(f"duplicate tweet_id {r.tweet_id!r}")
            seen.add(r.tweet_id)
        return cls(records)

    def __len__(self) -> int:
        return len(self.records)

    def filter(self, predicate) -> "Corpus":
        return Corpus(tuple(r for r in self.records if predicate(r)))


class MalformedRecord(ValueError):
    pass


def _as_int(value, name: str) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise MalformedRecord(f"{name} must be an integer")
    if isinstance(value, float) and not value.is_integer():
        raise MalformedRecord(f"{name} must be an integer")
    return int(value)


def _as_str(value, name: str) -> str:
    if not isinstance(value, str):
        raise MalformedRecord(f"{name} must be a string")
    return value


def _str_list(value, name: str) -> tuple[str, ...]:
    if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
        raise MalformedRecord(f"{name} must be a list of strings")
    return tuple(value)


def parse_record(obj) -> TweetRecord:
    """Validate one decoded corpus line and build a TweetRecord."""
    if not isinstance(obj, dict):
        raise MalformedRecord("record is not an object")
    try:
        tweet_id = _as_str(obj["tweet_id"], "tweet_id")
        author_id = _as_str(obj["author_id"], "author_id")
        timestamp = _as_int(obj["timestamp"], "timestamp")
    except KeyError as exc:
        raise MalformedRecord(f"missing key {exc.args[0]!r}") from None
    if not tweet_id or not author_id:
        raise MalformedRecord("empty identifier")
    text = _as_str(obj.get("text", ""), "text")
    hashtags = tuple(h.lower() for h in _str_list(obj.get("hashtags", []), "hashtags"))
    urls = _str_list(obj.get("urls", []), "urls")
    retweet = None
    rt = obj.get("retweet")
    if rt is not None:
        if not isinstance(rt, dict):
            raise MalformedRecord("retweet must be an object")
        try:
            retweet = Retweet(
                _as_str(rt["source_tweet_id"], "source_tweet_id"),
                _as_str(rt["source_author_id"], "source_author_id"),
                _as_int(rt["source_timestamp"], "source_timestamp"),
            )
        except KeyError as exc:
            raise MalformedRecord(f"retweet missing key {exc.args[0]!r}") from None
        if retweet.source_timestamp > timestamp:
            raise MalformedRecord("retweet precedes its source")
    return TweetRecord(tweet_id, author_id, timestamp, text, hashtags, urls, retweet)


def iter_corpus_lines(path: str | Path) -> Iterator[tuple[int, str]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.strip():
                yield lineno, line


def load_corpus(path: str | Path) -> Corpus:
    """Stream a newline-delimited JSON corpus.

    Malformed lines and duplicate tweet ids are skipped with a warning; an
    unreadable file raises ``OSError``.
    """
    records: list[TweetRecord] = []
    seen: set[str] = set()
    skipped = 0
    for lineno, line in iter_corpus_lines(path):
        try:
            rec = parse_record(json.loads(line))
            if rec.tweet_id in seen:
                raise MalformedRecord(f"duplicate tweet_id {rec.tweet_id!r}")
        except (json.JSONDecodeError, MalformedRecord) as exc:
            skipped += 1
            logger.warning("%s:%d skipped: %s", path, lineno, exc)
            continue
        seen.add(rec.tweet_id)
        records.append(rec)
    if skipped:
        logger.warning("%s: skipped %d malformed line(s)", path, skipped)
    return Corpus(tuple(records), n_skipped=skipped)


def write_corpus(corpus: Corpus | Iterable[TweetRecord], path: str | Path) -> None:
    records = corpus.records if isinstance(corpus, Corpus) else corpus
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json(), ensure_ascii=False, sort_keys=True))
            fh.write("\n")


def load_labels(path: str | Path) -> dict[str, LabelRecord]:
    labels: dict[str, LabelRecord] = {}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(LABEL_HEADER) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: label file lacks column(s) {sorted(missing)}")
        for row in reader:
            user = row["user_id"]
            if user in labels:
                raise ValueError(f"{path}: duplicate user_id {user!r}")
            if row["label"] not in LABEL_VALUES:
                raise ValueError(
                    f"{path}: unknown label {row['label']!r} for {user!r}; "
                    f"expected one of {LABEL_VALUES}"
                )
            labels[user] = LabelRecord(
                user, row["label"], row["country"], int(row["first_active_year"])
            )
    return labels


def write_labels(labels: dict[str, LabelRecord] | Iterable[LabelRecord], path: str | Path) -> None:
    rows = labels.values() if isinstance(labels, dict) else labels
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LABEL_HEADER)
        for rec in sorted(rows, key=lambda r: r.user_id):
            writer.writerow([rec.user_id, rec.label, rec.country, rec.first_active_year])


# --- text cleaning ---------------------------------------------------------

_URL_RE = re.compile(r"(?:https?://|www\.)\S+")

_EMOJI_RANGES = (
    (0x1F000, 0x1FAFF),  # mahjong .. symbols & pictographs ext-A
    (0x2600, 0x27BF),  # misc symbols, dingbats
    (0x2300, 0x23FF),  # misc technical (watch, hourglass, ...)
    (0x2B00, 0x2BFF),  # arrows, stars
    (0x1F1E6, 0x1F1FF),  # regional indicators
    (0xFE00, 0xFE0F),  # variation selectors
    (0x200D, 0x200D),  # zero width joiner
    (0x20E3, 0x20E3),  # keycap
    (0xE0020, 0xE007F),  # tag characters
)


def _is_emoji(ch: str) -> bool:
    cp = ord(ch)
    return any(lo <= cp <= hi for lo, hi in _EMOJI_RANGES)


@lru_cache(maxsize=None)
def default_stopwords() -> frozenset[str]:
    text = resources.files("coordnet").joinpath("data/stopwords.txt").read_text("utf-8")
    return frozenset(w.strip() for w in text.splitlines() if w.strip())


def load_stopwords(path: str | Path) -> frozenset[str]:
    with open(path, encoding="utf-8") as fh:
        return frozenset(w.strip().lower() for w in fh if w.strip())


def clean_text(text: str, stopwords: frozenset[str] | None = None) -> str:
    """Lowercase, then drop URLs, emoji, punctuation and stopwords.

    Characters are deleted rather than replaced, so the word count never grows.
    """
    if stopwords is None:
        stopwords = default_stopwords()
    text = _URL_RE.sub("", text.lower())
    kept = [
        ch
        for ch in text
        if not unicodedata.category(ch).startswith("P") and not _is_emoji(ch)
    ]
    return " ".join(w for w in "".join(kept).split() if w not in stopwords)
