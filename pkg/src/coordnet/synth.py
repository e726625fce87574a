"""Labelled synthetic corpora with planted coordination tactics.

Organic users draw retweet authors and URL domains from Zipf-distributed
populations and words/hashtags from Zipf vocabularies. Individual tweets and
URL paths come from per-(author, day) catalogs whose size scales with
popularity, which keeps accidental co-sharing rare but nonzero.

Each driver event is coordinated with probability ``intensity``: it then uses
one of its subgroup's tactics, drawing from a campaign-wide pool. Otherwise it
is generated exactly like an organic event, so intensity 0 leaves drivers
statistically indistinguishable from organic users.
"""

from __future__ import annotations

import calendar
import itertools
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from ._io import config_hash, dump_json
from .ingest import Corpus, LabelRecord, Retweet, TweetRecord, default_stopwords, write_corpus, write_labels

TACTICS = ("co_retweet_pool", "co_url_pool", "hashtag_template", "fast_retweet_ring", "text_duplication")
RETWEET_TACTICS = ("co_retweet_pool", "fast_retweet_ring")

DAY = 86400
YEAR_SECONDS = 365 * DAY


@dataclass(frozen=True)
class Subgroup:
    size: int
    tactics: tuple[str, ...]
    intensity: float = 0.6


@dataclass(frozen=True)
class PoolSizes:
    co_retweet: int = 20
    co_url: int = 20
    hashtag_templates: int = 10
    ring_targets: int = 5
    text_templates: int = 20


@dataclass(frozen=True)
class ScenarioConfig:
    n_organic: int = 1000
    n_drivers: int = 100
    driver_subgroups: tuple[Subgroup, ...] = ()
    years: tuple[int, int] = (2015, 2019)
    pool_sizes: PoolSizes = field(default_factory=PoolSizes)
    organic_popularity: float = 1.5
    vocabulary_exponent: float = 1.0
    tweets_per_year: float = 8.0
    activity_sigma: float = 0.7
    retweet_fraction: float = 0.5
    url_probability: float = 0.3
    hashtag_continue: float = 0.5
    retweet_delay_median: float = 1800.0
    retweet_delay_sigma: float = 1.0
    ring_delay_max: int = 50
    n_source_authors: int = 2000
    n_domains: int = 300
    n_words: int = 5000
    n_hashtags: int = 3000
    retweet_catalog_scale: float = 8000.0
    url_catalog_scale: float = 20000.0
    campaign: str = "op"
    country: str = "synthetic"
    seed: int = 0

    def validate(self) -> None:
        if self.n_organic < 0 or self.n_drivers < 0:
            raise ValueError("user counts must be nonnegative")
        if sum(g.size for g in self.driver_subgroups) != self.n_drivers:
            raise ValueError(
                f"subgroup sizes sum to {sum(g.size for g in self.driver_subgroups)}, "
                f"but n_drivers is {self.n_drivers}"
            )
        for g in self.driver_subgroups:
            if g.size < 1:
                raise ValueError("subgroup size must be >= 1")
            if not 0 <= g.intensity <= 1:
                raise ValueError("intensity must lie in [0, 1]")
            bad = set(g.tactics) - set(TACTICS)
            if bad or not g.tactics:
                raise ValueError(f"unknown or missing tactics {sorted(bad)}; expected a subset of {TACTICS}")
        if self.years[0] > self.years[1]:
            raise ValueError("years must be (first, last) with first <= last")
        if min(asdict(self.pool_sizes).values()) < 1:
            raise ValueError("pool sizes must be >= 1")
        if "-" in self.campaign or not self.campaign:
            raise ValueError("campaign tag must be nonempty and free of '-'")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["driver_subgroups"] = [asdict(g) for g in self.driver_subgroups]
        d["years"] = list(self.years)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        d = dict(d)
        d["driver_subgroups"] = tuple(
            Subgroup(g["size"], tuple(g["tactics"]), g.get("intensity", 0.6))
            for g in d.get("driver_subgroups", ())
        )
        if "years" in d:
            d["years"] = tuple(d["years"])
        if "pool_sizes" in d:
            d["pool_sizes"] = PoolSizes(**d["pool_sizes"])
        return cls(**d)


def standard_subgroups(intensity: float = 0.6, n_drivers: int = 100) -> tuple[Subgroup, ...]:
    """Four subgroups whose tactic sets overlap pairwise along a chain."""
    tactic_sets = (
        ("co_retweet_pool", "fast_retweet_ring"),
        ("co_url_pool", "hashtag_template"),
        ("text_duplication", "co_retweet_pool"),
        ("hashtag_template", "co_url_pool", "text_duplication"),
    )
    sizes = [n_drivers // 4 + (1 if i < n_drivers % 4 else 0) for i in range(4)]
    return tuple(Subgroup(s, t, intensity) for s, t in zip(sizes, tactic_sets))


def standard_config(seed: int = 0, intensity: float = 0.6, **overrides) -> ScenarioConfig:
    cfg = ScenarioConfig(driver_subgroups=standard_subgroups(intensity), seed=seed)
    return replace(cfg, **overrides) if overrides else cfg


def standard_suite(n: int = 10, intensity: float = 0.6, **overrides) -> list[ScenarioConfig]:
    return [standard_config(seed, intensity, **overrides) for seed in range(n)]


# --- vocabularies -----------------------------------------------------------------------

_ONSETS = "b c d f g k l m n p r s t v z".split()
_VOWELS = "a e i o u".split()


def pseudo_words(n: int) -> list[str]:
    """``n`` distinct pronounceable tokens, none of them a bundled stopword."""
    stop = default_stopwords()
    syllables = [c + v for c, v in itertools.product(_ONSETS, _VOWELS)]
    out: list[str] = []
    for k in itertools.count(2):
        for combo in itertools.product(syllables, repeat=k):
            w = "".join(combo)
            if w not in stop:
                out.append(w)
                if len(out) == n:
                    return out
    raise AssertionError("unreachable")


def _zipf_weights(n: int, exponent: float) -> np.ndarray:
    w = np.arange(1, n + 1, dtype=np.float64) ** -exponent
    return w / w.sum()


# --- generator ----------------------------------------------------------------------------


@dataclass(frozen=True)
class Scenario:
    corpus: Corpus
    labels: dict[str, LabelRecord]
    subgroup: dict[str, int]  # driver -> subgroup index; organic users map to -1
    config: ScenarioConfig

    def binary_labels(self) -> dict[str, int]:
        return {u: int(r.is_driver) for u, r in self.labels.items()}


class _Generator:
    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        self.rng = np.random.default_rng([cfg.seed, 0xC0FFEE])
        self.t0 = _year_start(cfg.years[0])
        self.t_end = _year_start(cfg.years[1] + 1)
        self.author_w = _zipf_weights(cfg.n_source_authors, cfg.organic_popularity)
        self.domain_w = _zipf_weights(cfg.n_domains, cfg.organic_popularity)
        self.word_w = _zipf_weights(cfg.n_words, cfg.vocabulary_exponent)
        self.tag_w = _zipf_weights(cfg.n_hashtags, cfg.vocabulary_exponent)
        self.words = pseudo_words(cfg.n_words)
        self.tags = ["tag" + w for w in pseudo_words(cfg.n_hashtags)]
        rt_per_day = max(cfg.retweet_catalog_scale, 1.0)
        self.author_catalog = np.maximum(1, np.round(self.author_w * rt_per_day)).astype(np.int64)
        self.domain_catalog = np.maximum(1, np.round(self.domain_w * cfg.url_catalog_scale)).astype(np.int64)
        self._build_pools()

    def _build_pools(self):
        cfg, rng, camp = self.cfg, self.rng, self.cfg.campaign
        ps = cfg.pool_sizes
        # pool tweets are posted on the first days of the scenario and re-shared later
        self.cr_pool = [
            (f"{camp}-pool-{k}", f"{camp}-amp{k % 5}", self.t0 + k * 3600 + 60)
            for k in range(ps.co_retweet)
        ]
        self.cu_pool = [f"https://{camp}-news.example/story/{k}" for k in range(ps.co_url)]
        camp_tags = [f"{camp}tag{k}" for k in range(max(6, ps.hashtag_templates))]
        self.hs_pool = []
        for _ in range(ps.hashtag_templates):
            n = int(rng.integers(3, 6))
            self.hs_pool.append(tuple(rng.choice(camp_tags, size=n, replace=False).tolist()))
        self.ring = [f"{camp}-ring{k}" for k in range(ps.ring_targets)]
        self.ts_pool = []
        for _ in range(ps.text_templates):
            n = int(rng.integers(8, 13))
            self.ts_pool.append(" ".join(self.words[i] for i in rng.integers(0, cfg.n_words, size=n)))

    # organic-style events

    def organic_text(self) -> str:
        n = int(self.rng.integers(4, 13))
        idx = self.rng.choice(self.cfg.n_words, size=n, p=self.word_w)
        words = [self.words[i] for i in idx]
        # sprinkle a stopword and punctuation so cleaning has something to do
        if self.rng.random() < 0.5:
            words.insert(int(self.rng.integers(0, n)), "the")
        return " ".join(words) + ("!" if self.rng.random() < 0.3 else "")

    def organic_hashtags(self) -> tuple[str, ...]:
        n = int(self.rng.geometric(1 - self.cfg.hashtag_continue)) - 1
        if n == 0:
            return ()
        idx = self.rng.choice(self.cfg.n_hashtags, size=min(n, 10), replace=False, p=self.tag_w)
        return tuple(self.tags[i] for i in idx)

    def organic_urls(self, t: int) -> tuple[str, ...]:
        if self.rng.random() >= self.cfg.url_probability:
            return ()
        d = int(self.rng.choice(self.cfg.n_domains, p=self.domain_w))
        day = t // DAY
        k = int(self.rng.integers(0, self.domain_catalog[d]))
        return (f"https://site{d}.example/{day}/{k}",)

    def organic_original(self, author: str, t: int) -> dict:
        return dict(
            author_id=author, timestamp=t, text=self.organic_text(),
            hashtags=self.organic_hashtags(), urls=self.organic_urls(t), retweet=None,
        )

    def organic_retweet(self, author: str, lo: int, hi: int) -> dict | None:
        cfg, rng = self.cfg, self.rng
        a = int(rng.choice(cfg.n_source_authors, p=self.author_w))
        delay = int(round(cfg.retweet_delay_median * math.exp(cfg.retweet_delay_sigma * rng.standard_normal())))
        t_src = int(rng.integers(lo, hi))
        day = t_src // DAY
        k = int(rng.integers(0, self.author_catalog[a]))
        # creation time is a fixed function of (author, day, k) so every retweet agrees
        created = day * DAY + (k * 7919 + a * 104729) % DAY
        t = created + max(delay, 1)
        if t >= self.t_end:
            return None
        rt = Retweet(f"src{a}-{day}-{k}", f"src{a}", created)
        return dict(author_id=author, timestamp=t, text="", hashtags=(), urls=(), retweet=rt)

    # coordinated events

    def coordinated(self, tactic: str, author: str, lo: int, hi: int) -> dict | None:
        rng = self.rng
        if tactic == "co_retweet_pool":
            sid, sauthor, created = self.cr_pool[int(rng.integers(len(self.cr_pool)))]
            t = int(rng.integers(max(lo, created + 1), hi)) if hi > max(lo, created + 1) else None
            if t is None:
                return None
            rt = Retweet(sid, sauthor, created)
            return dict(author_id=author, timestamp=t, text="", hashtags=(), urls=(), retweet=rt)
        if tactic == "fast_retweet_ring":
            target = self.ring[int(rng.integers(len(self.ring)))]
            created = int(rng.integers(lo, hi))
            t = created + int(rng.integers(1, self.cfg.ring_delay_max + 1))
            if t >= self.t_end:
                return None
            rt = Retweet(f"{target}-{created}", target, created)
            return dict(author_id=author, timestamp=t, text="", hashtags=(), urls=(), retweet=rt)
        t = int(rng.integers(lo, hi))
        if tactic == "co_url_pool":
            url = self.cu_pool[int(rng.integers(len(self.cu_pool)))]
            return dict(author_id=author, timestamp=t, text=self.organic_text(), hashtags=(), urls=(url,), retweet=None)
        if tactic == "hashtag_template":
            tags = self.hs_pool[int(rng.integers(len(self.hs_pool)))]
            return dict(author_id=author, timestamp=t, text=self.organic_text(), hashtags=tags, urls=(), retweet=None)
        if tactic == "text_duplication":
            text = self.ts_pool[int(rng.integers(len(self.ts_pool)))]
            return dict(author_id=author, timestamp=t, text=text, hashtags=(), urls=(), retweet=None)
        raise ValueError(tactic)

    def user_events(self, author: str, first_year: int, tactics: tuple[str, ...], intensity: float) -> list[dict]:
        cfg, rng = self.cfg, self.rng
        rate = cfg.tweets_per_year * math.exp(cfg.activity_sigma * rng.standard_normal())
        events = []
        for year in range(first_year, cfg.years[1] + 1):
            lo, hi = _year_start(year), _year_start(year + 1)
            for _ in range(int(rng.poisson(rate))):
                if tactics and rng.random() < intensity:
                    ev = self.coordinated(tactics[int(rng.integers(len(tactics)))], author, lo, hi)
                elif rng.random() < cfg.retweet_fraction:
                    ev = self.organic_retweet(author, lo, hi)
                else:
                    ev = self.organic_original(author, int(rng.integers(lo, hi)))
                if ev is not None:
                    events.append(ev)
        return events


def _year_start(year: int) -> int:
    return calendar.timegm((year, 1, 1, 0, 0, 0))


def generate_scenario(cfg: ScenarioConfig) -> Scenario:
    """Generate a corpus and labels; identical configs give identical output."""
    cfg.validate()
    gen = _Generator(cfg)
    rng = gen.rng
    n_users = cfg.n_organic + cfg.n_drivers
    # ids are shuffled so that sorted order carries no label information
    ids = [f"{cfg.campaign}-u{k:05d}" for k in rng.permutation(n_users)]
    roles: list[tuple[int, tuple[str, ...], float]] = [(-1, (), 0.0)] * cfg.n_organic
    for gi, g in enumerate(cfg.driver_subgroups):
        roles += [(gi, tuple(g.tactics), g.intensity)] * g.size
    years = np.arange(cfg.years[0], cfg.years[1] + 1)
    raw: list[dict] = []
    labels: dict[str, LabelRecord] = {}
    subgroup: dict[str, int] = {}
    for uid, (gi, tactics, intensity) in zip(ids, roles):
        first = int(rng.choice(years))
        labels[uid] = LabelRecord(uid, "io_driver" if gi >= 0 else "control", cfg.country, first)
        subgroup[uid] = gi
        raw.extend(gen.user_events(uid, first, tactics, intensity))
    raw.sort(key=lambda e: (e["timestamp"], e["author_id"]))
    records = tuple(
        TweetRecord(f"{cfg.campaign}-t{k:07d}", **ev) for k, ev in enumerate(raw)
    )
    return Scenario(Corpus(records), labels, subgroup, cfg)


def scenario_manifest(scn: Scenario) -> dict:
    cfg = scn.config.to_dict()
    n_drivers_seen = sum(1 for u in scn.corpus.users if scn.labels[u].is_driver)
    return {
        "config": cfg,
        "config_hash": config_hash(cfg),
        "seed": scn.config.seed,
        "n_records": len(scn.corpus),
        "n_users_with_activity": len(scn.corpus.users),
        "n_drivers_with_activity": n_drivers_seen,
    }


def write_scenario(scn: Scenario, outdir: str | Path) -> dict[str, Path]:
    """Write ``corpus.jsonl``, ``labels.csv``, ``subgroups.csv`` and ``manifest.json``."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = {
        "corpus": outdir / "corpus.jsonl",
        "labels": outdir / "labels.csv",
        "subgroups": outdir / "subgroups.csv",
        "manifest": outdir / "manifest.json",
    }
    write_corpus(scn.corpus, paths["corpus"])
    write_labels(scn.labels, paths["labels"])
    with open(paths["subgroups"], "w", encoding="utf-8", newline="\n") as fh:
        fh.write("user_id,subgroup\n")
        for u in sorted(scn.subgroup):
            fh.write(f"{u},{scn.subgroup[u]}\n")
    dump_json(scenario_manifest(scn), paths["manifest"])
    return paths


def merge_scenarios(scenarios: Sequence[Scenario]) -> tuple[Corpus, dict[str, LabelRecord]]:
    """Concatenate corpora and labels of several campaigns (ids must not clash)."""
    records = tuple(r for s in scenarios for r in s.corpus.records)
    labels: dict[str, LabelRecord] = {}
    for s in scenarios:
        clash = labels.keys() & s.labels.keys()
        if clash:
            raise ValueError(f"user ids collide across scenarios: {sorted(clash)[:3]}")
        labels.update(s.labels)
    return Corpus.from_records(records), labels
