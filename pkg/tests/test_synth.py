from __future__ import annotations

import datetime as dt
import json

import pytest

from coordnet.ingest import load_corpus, load_labels
from coordnet.synth import (
    TACTICS,
    ScenarioConfig,
    Subgroup,
    generate_scenario,
    merge_scenarios,
    pseudo_words,
    standard_config,
    standard_subgroups,
    write_scenario,
)
from coordnet.traces import TraceParams, extract_events


def small(seed=0, intensity=0.6, **kw):
    groups = (Subgroup(10, ("co_url_pool", "co_retweet_pool"), intensity), Subgroup(10, ("text_duplication",), intensity))
    return ScenarioConfig(n_organic=80, n_drivers=20, driver_subgroups=groups, seed=seed, **kw)


def test_same_config_same_corpus():
    a, b = generate_scenario(small(3)), generate_scenario(small(3))
    assert a.corpus.records == b.corpus.records and a.labels == b.labels
    assert generate_scenario(small(4)).corpus.records != a.corpus.records


def test_label_counts_and_roles():
    scn = generate_scenario(small())
    drivers = [u for u, r in scn.labels.items() if r.is_driver]
    assert len(scn.labels) == 100 and len(drivers) == 20
    assert {scn.subgroup[u] for u in drivers} == {0, 1}
    assert all(2015 <= r.first_active_year <= 2019 for r in scn.labels.values())


def test_records_are_well_formed():
    scn = generate_scenario(small())
    seen = set()
    for r in scn.corpus.records:
        assert r.tweet_id not in seen
        seen.add(r.tweet_id)
        if r.retweet is not None:
            assert r.retweet.source_timestamp <= r.timestamp
        assert r.author_id in scn.labels
    times = [r.timestamp for r in scn.corpus.records]
    assert times == sorted(times)


def test_users_start_in_their_first_year():
    scn = generate_scenario(small())
    first = {}
    for r in scn.corpus.records:
        first.setdefault(r.author_id, r.timestamp)
    for u, t in first.items():
        year = dt.datetime.fromtimestamp(t, dt.timezone.utc).year
        assert year >= scn.labels[u].first_active_year


def test_pool_urls_belong_to_pool_drivers():
    scn = generate_scenario(small(intensity=1.0))
    users = {e.user_id for e in extract_events(scn.corpus, "co_url", TraceParams()) if "op-news.example" in e.entity_id}
    pool_users = {u for u, g in scn.subgroup.items() if g == 0}
    assert users <= pool_users
    assert len(users) >= 8


def test_zero_intensity_drivers_look_organic():
    scn = generate_scenario(small(intensity=0.0))
    assert not any("op-news.example" in url for r in scn.corpus.records for url in r.urls)
    assert not any(r.retweet and r.retweet.source_tweet_id.startswith("op-pool") for r in scn.corpus.records)


@pytest.mark.parametrize(
    "kw, msg",
    [
        ({"n_drivers": 5}, "subgroup sizes"),
        ({"driver_subgroups": (Subgroup(20, ("mind_control",)),)}, "unknown or missing"),
        ({"driver_subgroups": (Subgroup(20, ("co_url_pool",), 1.5),)}, "intensity"),
        ({"years": (2019, 2015)}, "years"),
        ({"campaign": "a-b"}, "campaign"),
    ],
)
def test_invalid_configs(kw, msg):
    base = dict(n_organic=10, n_drivers=20, driver_subgroups=(Subgroup(20, ("co_url_pool",)),))
    with pytest.raises(ValueError, match=msg):
        generate_scenario(ScenarioConfig(**{**base, **kw}))


def test_config_dict_roundtrip():
    cfg = standard_config(seed=7, intensity=0.3)
    assert ScenarioConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg


def test_standard_subgroups_cover_every_tactic():
    groups = standard_subgroups(0.6, 100)
    assert sum(g.size for g in groups) == 100
    assert set().union(*(g.tactics for g in groups)) == set(TACTICS)


def test_pseudo_words_unique():
    words = pseudo_words(3000)
    assert len(set(words)) == 3000


def test_written_files_load_back(tmp_path):
    scn = generate_scenario(small())
    paths = write_scenario(scn, tmp_path)
    assert load_corpus(paths["corpus"]).records == scn.corpus.records
    assert load_labels(paths["labels"]) == scn.labels
    manifest = json.loads(paths["manifest"].read_text())
    assert manifest["n_records"] == len(scn.corpus) and manifest["seed"] == 0


def test_merge_rejects_clashing_ids():
    a = generate_scenario(small(campaign="alpha"))
    b = generate_scenario(small(campaign="beta", country="elsewhere"))
    corpus, labels = merge_scenarios([a, b])
    assert len(labels) == 200 and len(corpus) == len(a.corpus) + len(b.corpus)
    with pytest.raises(ValueError, match="collide"):
        merge_scenarios([a, a])
