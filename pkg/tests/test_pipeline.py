from __future__ import annotations

import warnings

import pytest

from coordnet.detect import DetectionResult
from coordnet.ingest import LabelRecord
from coordnet.pipeline import (
    PRESETS,
    ConfigError,
    DetectSettings,
    RunConfig,
    ablation,
    binary_labels,
    build_networks,
    fused_network,
    run_detector,
    supervised_cv,
    temporal_forecast,
)
from coordnet.synth import ScenarioConfig, Subgroup, generate_scenario
from coordnet.traces import ALL_KINDS

FAST = {"embed": {"dim": 16, "walks_per_node": 4, "walk_len": 20, "epochs": 2}, "forest": {"n_trees": 20}, "folds": 3}


@pytest.fixture(scope="module")
def scenario():
    groups = (Subgroup(15, ("co_url_pool", "co_retweet_pool"), 1.0), Subgroup(15, ("text_duplication",), 1.0))
    return generate_scenario(ScenarioConfig(n_organic=120, n_drivers=30, driver_subgroups=groups, seed=1))


def test_defaults_validate():
    cfg = RunConfig()
    cfg.validate()
    assert cfg.traces == PRESETS["optimized"] and cfg.detect.method == "node-prune"


def test_prior_preset_fills_unset_fields():
    cfg = RunConfig.from_dict({"preset": "prior", "traces": {"co_url_percentile": 90}})
    assert cfg.traces.co_url_percentile == 90
    assert cfg.traces.fast_retweet_delay == 10 and cfg.traces.hashtag_min == 5


@pytest.mark.parametrize(
    "body, field",
    [
        ({"preset": "bogus"}, "preset"),
        ({"traces": {"co_url_percentile": 120}}, "traces.co_url_percentile"),
        ({"traces": {"enabled": ["co_follow"]}}, "traces.enabled"),
        ({"traces": {"hashtag_min": "three"}}, "traces.hashtag_min"),
        ({"detect": {"method": "magic"}}, "detect.method"),
        ({"embed": {"p": 0}}, "embed.p"),
        ({"folds": 1}, "folds"),
        ({"colour": "blue"}, "colour"),
        ({"forest": {"depth": 3}}, "forest.depth"),
    ],
)
def test_invalid_fields_are_named(body, field):
    with pytest.raises(ConfigError, match=field.replace(".", r"\.")):
        RunConfig.from_dict(body).validate(check_paths=False)


def test_missing_corpus_path():
    with pytest.raises(ConfigError, match="corpus"):
        RunConfig(corpus="/nonexistent/corpus.jsonl").validate()


def test_hash_ignores_paths_and_tracks_settings(tmp_path):
    a = RunConfig.from_dict({"output_dir": "x"})
    b = RunConfig.from_dict({"output_dir": "y", "corpus": "c.jsonl"})
    c = RunConfig.from_dict({"detect": {"alpha": 0.01}})
    assert a.hash() == b.hash() != c.hash()
    a.save(tmp_path / "cfg.json")
    assert RunConfig.load(tmp_path / "cfg.json").hash() == a.hash()


def test_nested_seeds_follow_run_seed():
    cfg = RunConfig.from_dict({"seed": 7, "embed": {"seed": 3}})
    assert cfg.embed_params().seed == 7 and cfg.forest_params().seed == 7


def test_output_root(monkeypatch, tmp_path):
    monkeypatch.setenv("COORDNET_OUTPUT_ROOT", str(tmp_path))
    assert RunConfig(output_dir="run1").output_path() == tmp_path / "run1"
    assert RunConfig(output_dir="/abs").output_path().as_posix() == "/abs"


def test_build_networks_per_kind(scenario):
    nets = build_networks(scenario.corpus)
    assert set(nets) == set(ALL_KINDS)
    for kind, net in nets.items():
        assert net.kind == kind
        net.check()
    fused = fused_network(nets)
    assert fused.n_edges == len(set().union(*(n.edge_dict() for n in nets.values())))


def test_run_detector_dispatch(scenario):
    net = build_networks(scenario.corpus, PRESETS["optimized"])["co_url"]
    for method in ("node-prune", "edge-filter", "backbone"):
        res = run_detector(net, DetectSettings(method=method), 80.0)
        assert isinstance(res, DetectionResult)
    with pytest.raises(ValueError):
        run_detector(net, DetectSettings(method="edge-filter"))


def test_supervised_cv_small(scenario):
    cfg = RunConfig.from_dict(FAST)
    nets = build_networks(scenario.corpus)
    rep = supervised_cv(fused_network(nets), scenario.binary_labels(), cfg)
    assert rep.auc > 0.8 and len(rep.per_fold) == 3


def test_temporal_forecast_edge_cases(scenario):
    cfg = RunConfig.from_dict(FAST)
    with pytest.warns(UserWarning, match="empty"):
        assert temporal_forecast(scenario.corpus, scenario.labels, 2030, cfg) is None
    one_class = {u: LabelRecord(u, "control", "x", 2015 if i % 2 else 2018) for i, u in enumerate(scenario.labels)}
    with pytest.warns(UserWarning, match="single class"):
        assert temporal_forecast(scenario.corpus, one_class, 2016, cfg) is None


def test_temporal_forecast_without_future_activity(scenario):
    cfg = RunConfig.from_dict({**FAST, "temporal": {"include_test_activity": False}})
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rep = temporal_forecast(scenario.corpus, scenario.labels, 2017, cfg)
    assert rep is not None and rep.config["include_test_activity"] is False
    assert rep.config["n_train"] + rep.config["n_test"] == len(scenario.labels)


def test_ablation_rows(scenario):
    cfg = RunConfig.from_dict(FAST)
    nets = build_networks(scenario.corpus)
    nets = {k: nets[k] for k in ("co_url", "text_sim")}
    out = ablation(nets, binary_labels(scenario.labels), cfg)
    assert set(out) == {"all", "without:co_url", "without:text_sim"}
    assert out["all"]["delta_auc"] == 0.0
    with pytest.raises(ValueError):
        ablation({"co_url": nets["co_url"]}, binary_labels(scenario.labels), cfg)
