from __future__ import annotations

import json
import warnings
from collections import defaultdict
from pathlib import Path

import numpy as np
import pytest

from coordnet.detect import backbone_filter, edge_filter, node_prune
from coordnet.pipeline import PRESETS, build_networks, fused_network
from coordnet.synth import generate_scenario, standard_suite

# --- acceptance bookkeeping -------------------------------------------------------------------

_CRITERIA: dict[int, str] = {}
_OUTCOMES: dict[int, list[tuple[str, str]]] = defaultdict(list)
_DETAILS: dict[int, list[str]] = defaultdict(list)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    _CRITERIA[number] = title
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _OUTCOMES[number].append((item.name, report.outcome))
        for name, value in item.user_properties:
            if name == "detail":
                _DETAILS[number].append(str(value))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        outcomes = _OUTCOMES.get(number, [])
        ok = bool(outcomes) and all(o == "passed" for _, o in outcomes)
        line = f"{'PASS' if ok else 'FAIL'} criterion {number:>2}: {_CRITERIA[number]}"
        terminalreporter.write_line(line)
        for detail in _DETAILS.get(number, []):
            terminalreporter.write_line(f"      {detail}")


# --- shared data --------------------------------------------------------------------------------


def write_jsonl(path: Path, rows) -> Path:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(row if isinstance(row, str) else json.dumps(row))
            fh.write("\n")
    return path


def tweet(tid, author, ts, text="", hashtags=(), urls=(), retweet=None) -> dict:
    row = {"tweet_id": tid, "author_id": author, "timestamp": ts, "text": text,
           "hashtags": list(hashtags), "urls": list(urls)}
    if retweet is not None:
        row["retweet"] = dict(zip(("source_tweet_id", "source_author_id", "source_timestamp"), retweet))
    return row


class SuiteRun:
    """One standard scenario with its networks and detector outputs."""

    def __init__(self, cfg):
        self.scenario = generate_scenario(cfg)
        self.labels = self.scenario.binary_labels()
        self.users = sorted(self.labels)
        self.y = np.array([self.labels[u] for u in self.users])
        self.nets = build_networks(self.scenario.corpus)
        self.fused = fused_network(self.nets)
        settings = PRESETS["optimized"]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            self.node_prune = {k: node_prune(n, 1e-2) for k, n in self.nets.items()}
            self.edge_filter = {k: edge_filter(n, settings.percentile(k)) for k, n in self.nets.items()}
            self.backbone = {k: backbone_filter(n, 0.05) for k, n in self.nets.items()}
            self.fused_prune = node_prune(self.fused, 1e-2)
            self.fused_backbone = backbone_filter(self.fused, 0.05)


@pytest.fixture(scope="session")
def standard_runs() -> list[SuiteRun]:
    return [SuiteRun(cfg) for cfg in standard_suite(10)]
