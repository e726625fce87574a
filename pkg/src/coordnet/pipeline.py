"""Run configuration and the end-to-end pipeline shared by the CLI and tests."""

from __future__ import annotations

import calendar
import json
import logging
import os
import warnings
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Mapping, Sequence


from ._io import config_hash
from .classify import FeatureMatrix, ForestParams, cross_validate, holdout_report
from .detect import DetectionResult, backbone_filter, edge_filter, fuse, node_prune
from .embed import EmbeddingMatrix, EmbedParams, embed_network
from .evaluate import EvalReport
from .ingest import Corpus, LabelRecord, default_stopwords
from .simnet import (
    FusedNetwork,
    HashingTfidfEmbedder,
    PrecomputedEmbedder,
    SimilarityNetwork,
    embed_documents,
    text_similarity_network,
    trace_network,
)
from .traces import ALL_KINDS, TEXT_KIND, TraceParams, extract_documents, extract_events

logger = logging.getLogger(__name__)

OUTPUT_ROOT_ENV = "COORDNET_OUTPUT_ROOT"
DETECT_METHODS = ("node-prune", "edge-filter", "backbone")


class ConfigError(ValueError):
    """Invalid run configuration; the message names the offending field."""


@dataclass(frozen=True)
class TraceSettings:
    enabled: tuple[str, ...] = ALL_KINDS
    fast_retweet_delay: int = 60
    fast_retweet_percentile: float = 50.0
    co_retweet_percentile: float = 80.0
    co_url_percentile: float = 80.0
    hashtag_min: int = 3
    hashtag_percentile: float = 65.0
    text_threshold: float = 0.95
    text_percentile: float = 96.0
    text_window_days: int = 365
    text_min_words: int = 4
    text_vectors: str | None = None  # precomputed document vectors; hashed tf-idf otherwise

    def percentile(self, kind: str) -> float:
        return {
            "co_retweet": self.co_retweet_percentile,
            "co_url": self.co_url_percentile,
            "hashtag_seq": self.hashtag_percentile,
            "fast_retweet": self.fast_retweet_percentile,
            TEXT_KIND: self.text_percentile,
        }[kind]

    def params(self) -> TraceParams:
        return TraceParams(min_hashtags=self.hashtag_min, max_delay_seconds=self.fast_retweet_delay)


PRESETS: dict[str, TraceSettings] = {
    "optimized": TraceSettings(),
    "prior": TraceSettings(
        fast_retweet_delay=10,
        fast_retweet_percentile=0.0,
        co_retweet_percentile=99.5,
        co_url_percentile=99.5,
        hashtag_min=5,
        hashtag_percentile=0.0,
        text_threshold=0.7,
        text_percentile=0.0,
    ),
}


@dataclass(frozen=True)
class DetectSettings:
    method: str = "node-prune"
    centrality_threshold: float = 1e-2
    use_weights: bool = False
    alpha: float = 0.05
    network: str = "fused"  # or a trace kind


@dataclass(frozen=True)
class TemporalSettings:
    cutoffs: tuple[int, ...] = ()
    include_test_activity: bool = True


@dataclass(frozen=True)
class RunConfig:
    corpus: str | None = None
    labels: str | None = None
    output_dir: str = "run"
    seed: int = 0
    preset: str = "optimized"
    traces: TraceSettings = field(default_factory=TraceSettings)
    detect: DetectSettings = field(default_factory=DetectSettings)
    embed: EmbedParams = field(default_factory=EmbedParams)
    forest: ForestParams = field(default_factory=ForestParams)
    folds: int = 10
    temporal: TemporalSettings = field(default_factory=TemporalSettings)

    # seeds of the nested stages always follow the run seed
    def embed_params(self) -> EmbedParams:
        return replace(self.embed, seed=self.seed)

    def forest_params(self) -> ForestParams:
        return replace(self.forest, seed=self.seed)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["traces"]["enabled"] = list(self.traces.enabled)
        d["temporal"]["cutoffs"] = list(self.temporal.cutoffs)
        d["embed"].pop("seed")
        d["forest"].pop("seed")
        return d

    def hash(self) -> str:
        """Hash of everything that determines artifact content (paths excluded)."""
        d = self.to_dict()
        for key in ("corpus", "labels", "output_dir"):
            d.pop(key)
        return config_hash(d)

    def output_path(self) -> Path:
        root = os.environ.get(OUTPUT_ROOT_ENV)
        out = Path(self.output_dir)
        return out if out.is_absolute() or not root else Path(root) / out

    def validate(self, check_paths: bool = True) -> None:
        t = self.traces
        unknown = set(t.enabled) - set(ALL_KINDS)
        if unknown or not t.enabled:
            raise ConfigError(f"traces.enabled: unknown or empty trace list {sorted(unknown)}")
        for name in ("fast_retweet", "co_retweet", "co_url", "hashtag", "text"):
            pct = getattr(t, f"{name}_percentile")
            if not 0 <= pct <= 100:
                raise ConfigError(f"traces.{name}_percentile: {pct} not in [0, 100]")
        if t.hashtag_min < 1:
            raise ConfigError("traces.hashtag_min: must be >= 1")
        if t.fast_retweet_delay < 0:
            raise ConfigError("traces.fast_retweet_delay: must be >= 0")
        if not 0 < t.text_threshold <= 1:
            raise ConfigError("traces.text_threshold: must lie in (0, 1]")
        if t.text_min_words < 1:
            raise ConfigError("traces.text_min_words: must be >= 1")
        if self.detect.method not in DETECT_METHODS:
            raise ConfigError(f"detect.method: {self.detect.method!r} not one of {DETECT_METHODS}")
        if self.detect.network != "fused" and self.detect.network not in ALL_KINDS:
            raise ConfigError(f"detect.network: {self.detect.network!r} is neither 'fused' nor a trace kind")
        if not 0 < self.detect.alpha < 1:
            raise ConfigError("detect.alpha: must lie in (0, 1)")
        e = self.embed
        if min(e.dim, e.walks_per_node, e.walk_len, e.window, e.epochs) < 1 or e.negatives < 0:
            raise ConfigError("embed: dim, walks_per_node, walk_len, window, epochs must be >= 1")
        if e.p <= 0 or e.q <= 0:
            raise ConfigError("embed.p / embed.q: must be positive")
        if self.forest.n_trees < 1:
            raise ConfigError("forest.n_trees: must be >= 1")
        if self.folds < 2:
            raise ConfigError("folds: must be >= 2")
        if check_paths:
            for name in ("corpus", "labels"):
                path = getattr(self, name)
                if path is not None and not Path(path).is_file():
                    raise ConfigError(f"{name}: file not found: {path}")
            if t.text_vectors is not None and not Path(t.text_vectors).is_file():
                raise ConfigError(f"traces.text_vectors: file not found: {t.text_vectors}")

    @classmethod
    def from_dict(cls, d: Mapping) -> "RunConfig":
        """Build from a (possibly partial) mapping; a preset fills unset trace fields."""
        d = dict(d)
        preset = d.get("preset", "optimized")
        if preset not in PRESETS:
            raise ConfigError(f"preset: {preset!r} not one of {sorted(PRESETS)}")
        nested = {
            "traces": (TraceSettings, PRESETS[preset]),
            "detect": (DetectSettings, DetectSettings()),
            "embed": (EmbedParams, EmbedParams()),
            "forest": (ForestParams, ForestParams()),
            "temporal": (TemporalSettings, TemporalSettings()),
        }
        for key, (klass, base) in nested.items():
            sub = d.get(key, {})
            if isinstance(sub, klass):
                continue
            if not isinstance(sub, Mapping):
                raise ConfigError(f"{key}: expected a mapping")
            d[key] = _merge(klass, base, sub, key)
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"{sorted(extra)[0]}: unknown configuration field")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                body = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from None
        return cls.from_dict(body)

    def save(self, path: str | Path) -> None:
        from ._io import dump_json

        dump_json(self.to_dict(), path)


def _merge(klass, base, overrides: Mapping, prefix: str):
    names = {f.name: f for f in fields(klass)}
    values = asdict(base)
    for k, v in overrides.items():
        if k not in names:
            raise ConfigError(f"{prefix}.{k}: unknown configuration field")
        if k == "seed":
            continue
        default = values[k]
        if isinstance(default, (tuple, list)):
            if not isinstance(v, (list, tuple)):
                raise ConfigError(f"{prefix}.{k}: expected a list")
            v = tuple(v)
        elif isinstance(default, bool):
            if not isinstance(v, bool):
                raise ConfigError(f"{prefix}.{k}: expected true/false")
        elif isinstance(default, (int, float)) and default is not None:
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ConfigError(f"{prefix}.{k}: expected a number, got {v!r}")
            if isinstance(default, int) and not isinstance(default, bool) and isinstance(v, float):
                if not v.is_integer():
                    raise ConfigError(f"{prefix}.{k}: expected an integer, got {v!r}")
                v = int(v)
        values[k] = v
    return klass(**values)


# --- network construction ------------------------------------------------------------------


def build_networks(
    corpus: Corpus, settings: TraceSettings | None = None, stopwords: frozenset[str] | None = None
) -> dict[str, SimilarityNetwork]:
    """One similarity network per enabled trace, keyed by trace kind."""
    settings = settings or TraceSettings()
    params = settings.params()
    nets: dict[str, SimilarityNetwork] = {}
    for kind in settings.enabled:
        if kind == TEXT_KIND:
            docs = extract_documents(corpus, settings.text_min_words, stopwords or default_stopwords())
            if len(docs) == 0:
                nets[kind] = SimilarityNetwork.from_arrays((), [], [], [], kind)
                continue
            embedder = (
                PrecomputedEmbedder(settings.text_vectors) if settings.text_vectors else HashingTfidfEmbedder()
            )
            vectors = embed_documents(docs, embedder)
            nets[kind] = text_similarity_network(
                docs, vectors, settings.text_threshold, settings.text_window_days
            )
        else:
            nets[kind] = trace_network(extract_events(corpus, kind, params), kind)
    return nets


def fused_network(nets: Mapping[str, SimilarityNetwork]) -> FusedNetwork:
    return fuse([nets[k] for k in sorted(nets)])


def run_detector(
    net: SimilarityNetwork, settings: DetectSettings, percentile: float | None = None
) -> DetectionResult:
    if settings.method == "node-prune":
        return node_prune(net, settings.centrality_threshold, settings.use_weights)
    if settings.method == "edge-filter":
        if percentile is None:
            raise ValueError("edge filtering needs a percentile")
        return edge_filter(net, percentile)
    if settings.method == "backbone":
        return backbone_filter(net, settings.alpha)
    raise ValueError(f"unknown detector {settings.method!r}")


def binary_labels(labels: Mapping[str, LabelRecord]) -> dict[str, int]:
    return {u: int(r.is_driver) for u, r in labels.items()}


# --- supervised tasks -------------------------------------------------------------------------


def supervised_cv(
    net: SimilarityNetwork,
    labels: Mapping[str, int],
    cfg: RunConfig | None = None,
    embedding: EmbeddingMatrix | None = None,
) -> EvalReport:
    """Embed ``net`` and cross-validate a forest over every labelled user."""
    cfg = cfg or RunConfig()
    emb = embedding if embedding is not None else embed_network(net, cfg.embed_params())
    data = FeatureMatrix.from_embedding(emb, labels)
    return cross_validate(data, cfg.folds, cfg.forest_params())


def temporal_forecast(
    corpus: Corpus,
    labels: Mapping[str, LabelRecord],
    cutoff_year: int,
    cfg: RunConfig | None = None,
    embedding: EmbeddingMatrix | None = None,
) -> EvalReport | None:
    """Train on users first active up to ``cutoff_year``, test on later ones.

    With ``include_test_activity`` (default) a single network built from all
    activity featurises both sides; otherwise only tweets before the cutoff
    year ends are used and later users mostly get zero vectors. Returns None
    (with a warning) when a partition is empty or training has one class.
    """
    cfg = cfg or RunConfig()
    train_users = sorted(u for u, r in labels.items() if r.first_active_year <= cutoff_year)
    test_users = sorted(u for u, r in labels.items() if r.first_active_year > cutoff_year)
    y = binary_labels(labels)
    if not train_users or not test_users:
        warnings.warn(f"cutoff {cutoff_year}: empty train or test partition; skipped", stacklevel=2)
        return None
    if len({y[u] for u in train_users}) < 2:
        warnings.warn(f"cutoff {cutoff_year}: training users have a single class; skipped", stacklevel=2)
        return None
    if embedding is None:
        if cfg.temporal.include_test_activity:
            source = corpus
        else:
            end = _year_end(cutoff_year)
            source = corpus.filter(lambda r: r.timestamp < end)
        embedding = embed_network(fused_network(build_networks(source, cfg.traces)), cfg.embed_params())
    train = FeatureMatrix.from_embedding(embedding, y, train_users)
    test = FeatureMatrix.from_embedding(embedding, y, test_users)
    return holdout_report(
        train, test, cfg.forest_params(), task="temporal_forecast", cutoff_year=cutoff_year,
        n_train=len(train_users), n_test=len(test_users),
        include_test_activity=cfg.temporal.include_test_activity,
    )


def temporal_curve(
    corpus: Corpus,
    labels: Mapping[str, LabelRecord],
    cutoffs: Sequence[int],
    cfg: RunConfig | None = None,
) -> dict[int, EvalReport | None]:
    cfg = cfg or RunConfig()
    shared = None
    if cfg.temporal.include_test_activity:
        shared = embed_network(fused_network(build_networks(corpus, cfg.traces)), cfg.embed_params())
    return {c: temporal_forecast(corpus, labels, c, cfg, shared) for c in cutoffs}


def _year_end(year: int) -> int:
    return calendar.timegm((year + 1, 1, 1, 0, 0, 0))


def global_classification(
    corpora: Sequence[tuple[Corpus, Mapping[str, LabelRecord]]], cfg: RunConfig | None = None
) -> EvalReport:
    """Merge several campaigns into one corpus, fuse once, cross-validate."""
    cfg = cfg or RunConfig()
    records, labels = [], {}
    for corpus, lab in corpora:
        records.extend(corpus.records)
        labels.update(lab)
    merged = Corpus.from_records(records)
    net = fused_network(build_networks(merged, cfg.traces))
    return supervised_cv(net, binary_labels(labels), cfg)


def ablation(
    nets: Mapping[str, SimilarityNetwork], labels: Mapping[str, int], cfg: RunConfig | None = None
) -> dict[str, dict]:
    """Fused embed+classify with every network, then with each one left out."""
    if len(nets) < 2:
        raise ValueError("ablation needs at least two networks")
    cfg = cfg or RunConfig()
    full = supervised_cv(fuse([nets[k] for k in sorted(nets)]), labels, cfg)
    out = {"all": {"report": full, "delta_auc": 0.0, "delta_f1": 0.0}}
    for left_out in sorted(nets):
        rest = [nets[k] for k in sorted(nets) if k != left_out]
        rep = supervised_cv(fuse(rest), labels, cfg)
        out[f"without:{left_out}"] = {
            "report": rep,
            "delta_auc": rep.auc - full.auc,
            "delta_f1": rep.f1 - full.f1,
        }
    return out
