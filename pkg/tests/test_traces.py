from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from coordnet.ingest import Corpus, Retweet, TweetRecord
from coordnet.traces import (
    HASHTAG_SEPARATOR,
    TraceEvent,
    TraceParams,
    extract_documents,
    extract_events,
    normalize_url,
    write_events,
)

OPT = TraceParams(min_hashtags=3, max_delay_seconds=60)


def rec(tid, author, ts, text="", hashtags=(), urls=(), rt=None):
    return TweetRecord(tid, author, ts, text, tuple(hashtags), tuple(urls), Retweet(*rt) if rt else None)


def test_repeated_retweet_counts_twice():
    corpus = Corpus((rec("1", "A", 10, rt=("T", "S", 5)), rec("2", "A", 20, rt=("T", "S", 5))))
    assert extract_events(corpus, "co_retweet") == [TraceEvent("A", "T", 2)]


def test_hashtag_sequence_needs_min_count():
    corpus = Corpus((rec("1", "A", 1, hashtags=["x", "y", "z"]),))
    assert extract_events(corpus, "hashtag_seq", TraceParams(min_hashtags=5)) == []
    events = extract_events(corpus, "hashtag_seq", OPT)
    assert events == [TraceEvent("A", HASHTAG_SEPARATOR.join("xyz"), 1)]


def test_hashtag_sequence_is_ordered():
    corpus = Corpus((rec("1", "A", 1, hashtags="xyz"), rec("2", "B", 1, hashtags="zyx")))
    assert len({e.entity_id for e in extract_events(corpus, "hashtag_seq", OPT)}) == 2


def test_fast_retweet_delay_boundary():
    corpus = Corpus((rec("1", "A", 160, rt=("T", "S", 100)), rec("2", "B", 161, rt=("T", "S", 100))))
    events = extract_events(corpus, "fast_retweet", OPT)
    assert events == [TraceEvent("A", "S", 1)]


def test_urls_normalized_and_counted_per_occurrence():
    corpus = Corpus((rec("1", "A", 1, urls=["https://x.org/a/", "https://x.org/a#frag"]),))
    assert extract_events(corpus, "co_url") == [TraceEvent("A", "https://x.org/a", 2)]
    assert normalize_url(" https://x.org/b/#top ") == "https://x.org/b"


def test_unknown_kind_and_missing_params():
    corpus = Corpus(())
    with pytest.raises(ValueError, match="unknown trace"):
        extract_events(corpus, "co_follow")
    with pytest.raises(ValueError, match="min_hashtags"):
        extract_events(corpus, "hashtag_seq")
    with pytest.raises(ValueError, match="max_delay_seconds"):
        extract_events(corpus, "fast_retweet", TraceParams(min_hashtags=3))


def test_documents_min_words_and_retweets():
    corpus = Corpus((
        rec("1", "A", 1, "gato perro casa"),
        rec("2", "A", 2, "gato perro casa libro"),
        rec("3", "B", 3, "gato perro casa libro mesa silla", rt=("T", "S", 1)),
    ))
    docs = extract_documents(corpus, 4)
    assert [(d.tweet_id, d.word_count) for d in docs] == [("2", 4)]
    assert docs.docs[0].cleaned_text == "gato perro casa libro"


def test_documents_reject_bad_min_words():
    with pytest.raises(ValueError):
        extract_documents(Corpus(()), 0)


def test_event_dump(tmp_path):
    write_events([TraceEvent("A", "e", 2)], tmp_path / "ev.csv")
    assert (tmp_path / "ev.csv").read_text() == "user_id,entity_id,count\nA,e,2\n"


# --- properties --------------------------------------------------------------------------------

_records = st.lists(
    st.tuples(
        st.sampled_from("ABCD"),
        st.integers(0, 500),
        st.one_of(st.none(), st.tuples(st.sampled_from(["T1", "T2", "T3"]), st.sampled_from("XY"), st.integers(0, 500))),
        st.lists(st.sampled_from(["h1", "h2", "h3", "h4"]), max_size=5),
    ),
    max_size=30,
)


def _corpus(rows) -> Corpus:
    out = []
    for i, (author, ts, rt, tags) in enumerate(rows):
        if rt is not None:
            rt = (rt[0], rt[1], min(rt[2], ts))
        out.append(rec(str(i), author, ts, hashtags=tags, rt=rt))
    return Corpus(tuple(out))


@given(_records)
def test_co_retweet_counts_sum_to_retweets(rows):
    corpus = _corpus(rows)
    total = sum(e.count for e in extract_events(corpus, "co_retweet"))
    assert total == sum(r.is_retweet for r in corpus.records)


@given(_records, st.integers(0, 300), st.integers(0, 300))
def test_fast_retweet_monotone_in_delay(rows, t1, t2):
    t1, t2 = sorted((t1, t2))
    corpus = _corpus(rows)
    small = {(e.user_id, e.entity_id) for e in extract_events(corpus, "fast_retweet", TraceParams(max_delay_seconds=t1))}
    large = {(e.user_id, e.entity_id) for e in extract_events(corpus, "fast_retweet", TraceParams(max_delay_seconds=t2))}
    assert small <= large


@given(_records)
def test_hashtag_sequence_at_most_one_per_tweet(rows):
    corpus = _corpus(rows)
    total = sum(e.count for e in extract_events(corpus, "hashtag_seq", TraceParams(min_hashtags=1)))
    assert total == sum(1 for r in corpus.records if r.hashtags)


@given(_records, st.randoms(use_true_random=False))
def test_events_independent_of_record_order(rows, rnd):
    corpus = _corpus(rows)
    shuffled = list(corpus.records)
    rnd.shuffle(shuffled)
    for kind in ("co_retweet", "hashtag_seq", "fast_retweet"):
        assert extract_events(corpus, kind, OPT) == extract_events(Corpus(tuple(shuffled)), kind, OPT)
