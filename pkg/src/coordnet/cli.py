"""Command-line driver: synth, build, detect, embed, train, evaluate, report.

Every stage reads a run configuration (JSON file plus flag overrides), writes
its artifacts into ``<output_dir>/<stage>/`` and records a ``manifest.json``
holding the config hash, the seed and sha256 digests of inputs and outputs.
Nothing time-dependent is written, so identical configs give identical bytes.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from dataclasses import replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import __version__
from ._io import config_hash, dump_json, file_hash, load_arrays, save_arrays
from .classify import FeatureMatrix, train_forest
from .detect import DetectionResult, write_detection
from .embed import EmbeddingMatrix, embed_network, load_embeddings_npz, save_embeddings_npz, write_embeddings
from .evaluate import (
    EvalReport,
    coverage,
    detector_report,
    membership,
    nmi,
    roc_points,
    write_curve,
    write_report,
)
from .ingest import LabelRecord, load_corpus, load_labels, write_corpus, write_labels
from .pipeline import (
    DETECT_METHODS,
    PRESETS,
    ConfigError,
    RunConfig,
    ablation,
    binary_labels,
    build_networks,
    fused_network,
    global_classification,
    run_detector,
    supervised_cv,
    temporal_forecast,
)
from .simnet import SimilarityNetwork, load_network_npz, network_hash, save_network_npz, write_network
from .synth import ScenarioConfig, generate_scenario, merge_scenarios, standard_config, write_scenario
from .traces import ALL_KINDS

logger = logging.getLogger("coordnet")

EXIT_CONFIG = 2
EXIT_PREREQ = 3


class MissingPrerequisite(RuntimeError):
    def __init__(self, what: str, subcommand: str):
        super().__init__(f"{what} not found; run `coordnet {subcommand}` first")


# --- manifests ---------------------------------------------------------------------------


def _stage_dir(cfg: RunConfig, stage: str) -> Path:
    out = cfg.output_path() / stage
    out.mkdir(parents=True, exist_ok=True)
    return out


# config sections that determine each stage's content; upstream mismatches are warned about
_STAGE_SECTIONS = {
    "networks": ("traces",),
    "detect": ("traces", "detect"),
    "embed": ("traces", "embed", "seed"),
    "train": ("traces", "embed", "forest", "folds", "seed"),
    "evaluate": ("traces", "detect", "embed", "forest", "folds", "temporal", "seed"),
    "report": ("traces", "detect", "embed", "forest", "folds", "temporal", "seed"),
}


def _stage_hash(cfg: RunConfig, stage: str) -> str:
    d = cfg.to_dict()
    return config_hash({k: d[k] for k in _STAGE_SECTIONS[stage]})


def _write_manifest(
    cfg: RunConfig, stage: str, outdir: Path, inputs: Mapping[str, Path], extra: Mapping | None = None
) -> Path:
    outputs = sorted(p for p in outdir.iterdir() if p.is_file() and p.name != "manifest.json")
    manifest = {
        "stage": stage,
        "version": __version__,
        "config_hash": cfg.hash(),
        "stage_hash": _stage_hash(cfg, stage),
        "seed": cfg.seed,
        "config": {k: v for k, v in cfg.to_dict().items() if k not in ("corpus", "labels", "output_dir")},
        "inputs": {name: file_hash(p) for name, p in sorted(inputs.items())},
        "outputs": {p.name: file_hash(p) for p in outputs},
        **(extra or {}),
    }
    path = outdir / "manifest.json"
    dump_json(manifest, path)
    return path


def _require_stage(cfg: RunConfig, stage: str, subcommand: str | None = None) -> Path:
    path = cfg.output_path() / stage
    manifest = path / "manifest.json"
    if not manifest.is_file():
        raise MissingPrerequisite(f"{stage} artifacts in {path}", subcommand or stage)
    with open(manifest, encoding="utf-8") as fh:
        upstream = json.load(fh).get("stage_hash")
    if upstream != _stage_hash(cfg, stage):
        logger.warning("%s artifacts were produced with different settings; rerun `coordnet %s`",
                       stage, subcommand or stage)
    return path


# --- inputs ----------------------------------------------------------------------------------


def _synth_default(cfg: RunConfig, name: str) -> Path:
    return cfg.output_path() / "data" / name


def _corpus_path(cfg: RunConfig) -> Path:
    if cfg.corpus:
        return Path(cfg.corpus)
    path = _synth_default(cfg, "corpus.jsonl")
    if not path.is_file():
        raise MissingPrerequisite("corpus (no --corpus given and no synthetic corpus)", "synth")
    return path


def _labels_path(cfg: RunConfig, required: bool = True) -> Path | None:
    if cfg.labels:
        return Path(cfg.labels)
    path = _synth_default(cfg, "labels.csv")
    if path.is_file():
        return path
    if required:
        raise MissingPrerequisite("labels (no --labels given and no synthetic labels)", "synth")
    return None


def _load_networks(cfg: RunConfig) -> tuple[dict[str, SimilarityNetwork], SimilarityNetwork, Path]:
    stage = _require_stage(cfg, "networks", "build")
    nets = {}
    for kind in cfg.traces.enabled:
        path = stage / f"{kind}.npz"
        if not path.is_file():
            raise MissingPrerequisite(f"network {path.name}", "build")
        nets[kind] = load_network_npz(path)
    return nets, load_network_npz(stage / "fused.npz"), stage


def _load_embedding(cfg: RunConfig) -> tuple[EmbeddingMatrix, Path]:
    stage = _require_stage(cfg, "embed")
    return load_embeddings_npz(stage / "embeddings.npz"), stage / "embeddings.npz"


# --- subcommands -------------------------------------------------------------------------------


def cmd_synth(cfg: RunConfig, args: argparse.Namespace) -> None:
    if args.scenario_config:
        with open(args.scenario_config, encoding="utf-8") as fh:
            base = ScenarioConfig.from_dict(json.load(fh))
        base = replace(base, seed=cfg.seed)
    else:
        base = standard_config(cfg.seed, args.intensity)
        if args.n_organic is not None:
            base = replace(base, n_organic=args.n_organic)
    try:
        base.validate()
    except ValueError as exc:
        raise ConfigError(f"scenario: {exc}") from None
    outdir = Path(args.out) if args.out else _stage_dir(cfg, "data")
    if args.campaigns == 1:
        scn = generate_scenario(base)
        write_scenario(scn, outdir)
        logger.info("wrote %d records for %d users to %s", len(scn.corpus), len(scn.labels), outdir)
        return
    # several campaigns share one corpus; each gets its own tag, country and seed stream
    scenarios = [
        generate_scenario(replace(base, campaign=f"op{i}", country=f"country{i}", seed=base.seed * 1000 + i))
        for i in range(args.campaigns)
    ]
    for i, scn in enumerate(scenarios):
        write_scenario(scn, outdir / f"campaign{i}")
    corpus, labels = merge_scenarios(scenarios)
    outdir.mkdir(parents=True, exist_ok=True)
    write_corpus(corpus, outdir / "corpus.jsonl")
    write_labels(labels, outdir / "labels.csv")
    dump_json(
        {
            "campaigns": [s.config.to_dict() for s in scenarios],
            "seed": base.seed,
            "n_records": len(corpus),
        },
        outdir / "manifest.json",
    )
    logger.info("wrote %d campaigns (%d records) to %s", args.campaigns, len(corpus), outdir)


def cmd_build(cfg: RunConfig, args: argparse.Namespace) -> None:
    corpus_path = _corpus_path(cfg)
    corpus = load_corpus(corpus_path)
    nets = build_networks(corpus, cfg.traces)
    fused = fused_network(nets)
    outdir = _stage_dir(cfg, "networks")
    summary = {}
    labels_path = _labels_path(cfg, required=False)
    labels = binary_labels(load_labels(labels_path)) if labels_path else None
    for kind, net in list(nets.items()) + [("fused", fused)]:
        save_network_npz(net, outdir / f"{kind}.npz")
        if args.edgelists:
            write_network(net, outdir / kind)
        row = {"n_nodes": net.n_nodes, "n_edges": net.n_edges, "hash": network_hash(net)}
        if labels is not None and any(labels.values()):
            row["coverage"] = coverage(net, labels)
        summary[kind] = row
    dump_json(summary, outdir / "summary.json")
    inputs = {"corpus": corpus_path}
    if labels_path:
        inputs["labels"] = labels_path
    _write_manifest(cfg, "networks", outdir, inputs)
    logger.info("fused network: %d nodes, %d edges", fused.n_nodes, fused.n_edges)


def _detect_one(cfg: RunConfig, nets, fused, network: str, method: str) -> tuple[DetectionResult, SimilarityNetwork]:
    net = fused if network == "fused" else nets[network]
    settings = replace(cfg.detect, method=method)
    pct = None if network == "fused" else cfg.traces.percentile(network)
    if method == "edge-filter" and network == "fused":
        raise ConfigError("detect.method: edge filtering needs a weighted trace network, not the fused one")
    return run_detector(net, settings, pct), net


def cmd_detect(cfg: RunConfig, args: argparse.Namespace) -> None:
    nets, fused, net_dir = _load_networks(cfg)
    network = cfg.detect.network
    if network != "fused" and network not in nets:
        raise ConfigError(f"detect.network: trace {network!r} is not enabled")
    result, net = _detect_one(cfg, nets, fused, network, cfg.detect.method)
    outdir = _stage_dir(cfg, "detect")
    labels_path = _labels_path(cfg, required=False)
    universe = None
    inputs = {"network": net_dir / f"{network}.npz"}
    name = f"{network}-{cfg.detect.method}"
    if labels_path:
        labels = binary_labels(load_labels(labels_path))
        universe = sorted(labels)
        inputs["labels"] = labels_path
        if any(labels.values()) and not all(labels.values()):
            write_report(detector_report(result, labels, network=network), outdir / f"{name}.report.json")
    write_detection(result, outdir / f"{name}.csv", universe, [net])
    _write_manifest(cfg, "detect", outdir, inputs)
    logger.info("%s on %s flagged %d users", cfg.detect.method, network, len(result.flagged))


def cmd_embed(cfg: RunConfig, args: argparse.Namespace) -> None:
    _, fused, net_dir = _load_networks(cfg)
    emb = embed_network(fused, cfg.embed_params())
    outdir = _stage_dir(cfg, "embed")
    save_embeddings_npz(emb, outdir / "embeddings.npz")
    write_embeddings(emb, outdir / "embeddings.csv")
    dump_json({"losses": list(emb.losses)}, outdir / "losses.json")
    _write_manifest(cfg, "embed", outdir, {"fused": net_dir / "fused.npz"})


def cmd_train(cfg: RunConfig, args: argparse.Namespace) -> None:
    emb, emb_path = _load_embedding(cfg)
    labels_path = _labels_path(cfg)
    labels = binary_labels(load_labels(labels_path))
    data = FeatureMatrix.from_embedding(emb, labels)
    outdir = _stage_dir(cfg, "train")
    # k-fold CV over all labelled users, then a final model on everyone
    _, fused, _ = _load_networks(cfg)
    report = supervised_cv(fused, labels, cfg, emb)
    write_report(report, outdir / "cv_report.json")
    train_forest(data, cfg.forest_params()).save(outdir / "model.json")
    _write_manifest(cfg, "train", outdir, {"embeddings": emb_path, "labels": labels_path})
    logger.info("cv AUC %.3f precision %.3f recall %.3f", report.auc, report.precision, report.recall)


def _report_row(name: str, rep: EvalReport | None, **extra) -> dict:
    row = {"name": name, **extra}
    if rep is None:
        return {**row, "precision": float("nan"), "recall": float("nan"), "f1": float("nan"), "auc": float("nan")}
    return {**row, "precision": rep.precision, "recall": rep.recall, "f1": rep.f1, "auc": rep.auc}


def _default_cutoffs(records: Mapping[str, LabelRecord]) -> tuple[int, ...]:
    years = sorted({r.first_active_year for r in records.values()})
    return tuple(years[:-1])


def cmd_evaluate(cfg: RunConfig, args: argparse.Namespace) -> None:
    nets, fused, net_dir = _load_networks(cfg)
    labels_path = _labels_path(cfg)
    records = load_labels(labels_path)
    labels = binary_labels(records)
    users = sorted(labels)
    y = np.array([labels[u] for u in users])
    outdir = _stage_dir(cfg, "evaluate")
    metrics: dict = {"unsupervised": [], "coverage": {}, "nmi": {}}
    scores = {"users": np.array(users, dtype=str), "labels": y}

    for network in list(nets) + ["fused"]:
        for method in DETECT_METHODS:
            if method == "edge-filter" and network == "fused":
                continue
            result, _ = _detect_one(cfg, nets, fused, network, method)
            rep = detector_report(result, labels)
            metrics["unsupervised"].append(_report_row(f"{network}/{method}", rep, network=network, method=method))
            scores[f"{network}/{method}"] = result.score_array(users)
        metrics["coverage"][network] = coverage(nets.get(network, fused), labels)

    groups = {kind: membership(net, users) for kind, net in nets.items()}
    kinds = sorted(groups)
    for i, a in enumerate(kinds):
        for b in kinds[i + 1:]:
            metrics["nmi"][f"{a}|{b}"] = nmi(groups[a], groups[b], users)

    emb, emb_path = _load_embedding(cfg)
    train_dir = cfg.output_path() / "train"
    if (train_dir / "cv_report.json").is_file():
        with open(train_dir / "cv_report.json", encoding="utf-8") as fh:
            metrics["cross_validation"] = json.load(fh)
    else:
        metrics["cross_validation"] = supervised_cv(fused, labels, cfg, emb).to_dict()

    countries = sorted({r.country for r in records.values()})
    if len(countries) > 1:
        corpus = load_corpus(_corpus_path(cfg))
        parts = []
        for c in countries:
            lab_c = {u: r for u, r in records.items() if r.country == c}
            parts.append((corpus.filter(lambda r, keep=lab_c: r.author_id in keep), lab_c))
        metrics["pooled_campaigns"] = global_classification(parts, cfg).to_dict()

    cutoffs = cfg.temporal.cutoffs or _default_cutoffs(records)
    temporal = []
    if cutoffs:
        corpus = load_corpus(_corpus_path(cfg))
        shared = emb if cfg.temporal.include_test_activity else None
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            for c in cutoffs:
                rep = temporal_forecast(corpus, records, c, cfg, shared)
                temporal.append(_report_row(str(c), rep, cutoff_year=c))
    metrics["temporal"] = temporal

    if not args.no_ablation and len(nets) > 1:
        abl = ablation(nets, labels, cfg)
        metrics["ablation"] = [
            _report_row(name, entry["report"], delta_auc=entry["delta_auc"], delta_f1=entry["delta_f1"])
            for name, entry in abl.items()
        ]

    write_report({}, outdir / "metrics.json", **metrics)
    save_arrays(outdir / "scores.npz", **{k.replace("/", "__"): v for k, v in scores.items()})
    inputs = {"fused": net_dir / "fused.npz", "embeddings": emb_path, "labels": labels_path}
    _write_manifest(cfg, "evaluate", outdir, inputs)


def _load_metrics(run_dir: Path) -> dict:
    path = run_dir / "evaluate" / "metrics.json"
    if not path.is_file():
        raise MissingPrerequisite(f"metrics in {path.parent}", "evaluate")
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def cmd_report(cfg: RunConfig, args: argparse.Namespace) -> None:
    eval_dir = _require_stage(cfg, "evaluate")
    metrics = _load_metrics(cfg.output_path())
    outdir = _stage_dir(cfg, "report")
    write_curve([_nan_row(r) for r in metrics["unsupervised"]], outdir / "detectors.csv")
    write_curve([{"network": k, "coverage": v} for k, v in metrics["coverage"].items()], outdir / "coverage.csv")
    write_curve(
        [{"trace_a": k.split("|")[0], "trace_b": k.split("|")[1], "nmi": v} for k, v in metrics["nmi"].items()],
        outdir / "nmi.csv",
    )
    write_curve([_nan_row(r) for r in metrics.get("temporal", [])], outdir / "temporal.csv")
    write_curve([_nan_row(r) for r in metrics.get("ablation", [])], outdir / "ablation.csv")

    arrays = load_arrays(eval_dir / "scores.npz")
    y = arrays.pop("labels")
    arrays.pop("users")
    rows = []
    for key in sorted(arrays):
        fpr, tpr, thr = roc_points(arrays[key], y)
        rows.extend(
            {"detector": key.replace("__", "/"), "fpr": f, "tpr": t, "threshold": h}
            for f, t, h in zip(fpr.tolist(), tpr.tolist(), thr.tolist())
        )
    write_curve(rows, outdir / "roc.csv")

    summary = {
        name: {k: metrics[name][k] for k in ("precision", "recall", "f1", "auc")}
        for name in ("cross_validation", "pooled_campaigns") if metrics.get(name)
    }
    summary["best_unsupervised"] = max(
        metrics["unsupervised"], key=lambda r: r["auc"] if r["auc"] is not None else -1
    )
    if args.compare:
        other = _load_metrics(Path(args.compare))
        theirs = {r["name"]: r for r in other["unsupervised"]}
        diff = [
            {"name": r["name"], "auc": r["auc"], "auc_other": theirs[r["name"]]["auc"],
             "delta_auc": _delta(r["auc"], theirs[r["name"]]["auc"])}
            for r in metrics["unsupervised"] if r["name"] in theirs
        ]
        write_curve(diff, outdir / "compare.csv")
        summary["compared_with"] = str(args.compare)
    dump_json(summary, outdir / "summary.json")
    _write_manifest(cfg, "report", outdir, {"metrics": eval_dir / "metrics.json"})
    print(json.dumps(summary, indent=2, sort_keys=True))


_LEAD_COLUMNS = ("name", "network", "method", "cutoff_year")


def _nan_row(row: Mapping) -> dict:
    # identifying columns first; metrics.json sorts keys alphabetically
    keys = [k for k in _LEAD_COLUMNS if k in row] + [k for k in row if k not in _LEAD_COLUMNS]
    return {k: (float("nan") if row[k] is None else row[k]) for k in keys}


def _delta(a, b):
    return None if a is None or b is None else a - b


# --- argument parsing --------------------------------------------------------------------------


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _apply_sets(body: dict, assignments: Sequence[str]) -> None:
    for item in assignments:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set {item!r}: expected key=value")
        parts = key.split(".")
        node = body
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"{key}: cannot set a field below a scalar")
        node[parts[-1]] = _parse_value(value)


def config_from_args(args: argparse.Namespace) -> RunConfig:
    body: dict = {}
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise ConfigError(f"config: file not found: {path}")
        try:
            body = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config: {path} is not valid JSON ({exc})") from None
    for name in ("corpus", "labels", "output_dir", "seed", "preset", "folds"):
        value = getattr(args, name, None)
        if value is not None:
            body[name] = value
    if getattr(args, "traces", None):
        body.setdefault("traces", {})["enabled"] = args.traces
    detect = {}
    for flag, field_name in (("method", "method"), ("threshold", "centrality_threshold"),
                             ("alpha", "alpha"), ("network", "network")):
        value = getattr(args, flag, None)
        if value is not None:
            detect[field_name] = value
    if getattr(args, "use_weights", False):
        detect["use_weights"] = True
    if detect:
        body.setdefault("detect", {}).update(detect)
    if getattr(args, "cutoffs", None):
        body.setdefault("temporal", {})["cutoffs"] = args.cutoffs
    _apply_sets(body, args.set or [])
    cfg = RunConfig.from_dict(body)
    cfg.validate()
    return cfg


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--corpus", help="JSONL corpus (default: <output-dir>/data/corpus.jsonl)")
    common.add_argument("--labels", help="labels CSV (default: <output-dir>/data/labels.csv)")
    common.add_argument("--output-dir", help="run directory (relative paths resolve under $COORDNET_OUTPUT_ROOT)")
    common.add_argument("--seed", type=int)
    common.add_argument("--preset", choices=sorted(PRESETS), help="trace parameter regime")
    common.add_argument("--traces", nargs="+", choices=ALL_KINDS, help="enabled traces")
    common.add_argument("--folds", type=int)
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override any config field, e.g. embed.dim=64 (repeatable)")
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = argparse.ArgumentParser(prog="coordnet", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a labelled synthetic scenario")
    p.add_argument("--out", help="directory for corpus/labels (default: <output-dir>/data)")
    p.add_argument("--intensity", type=float, default=0.6)
    p.add_argument("--n-organic", type=int)
    p.add_argument("--campaigns", type=int, default=1, help="number of campaigns merged into one corpus")
    p.add_argument("--scenario-config", help="JSON ScenarioConfig (overrides the standard scenario)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("build", parents=[common], help="similarity networks per trace plus the fused network")
    p.add_argument("--edgelists", action="store_true", help="also write CSV edge and node lists")
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("detect", parents=[common], help="unsupervised detection on one network")
    p.add_argument("--method", choices=DETECT_METHODS)
    p.add_argument("--threshold", type=float, help="centrality threshold for node pruning")
    p.add_argument("--alpha", type=float, help="significance level for the backbone filter")
    p.add_argument("--network", help="'fused' or a trace kind")
    p.add_argument("--use-weights", action="store_true", help="weighted eigenvector centrality")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("embed", parents=[common], help="node2vec embedding of the fused network")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("train", parents=[common], help="cross-validate and fit the forest classifier")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", parents=[common], help="detector metrics, NMI, coverage, tasks, ablation")
    p.add_argument("--cutoffs", nargs="+", type=int, help="temporal forecasting cutoff years")
    p.add_argument("--no-ablation", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", parents=[common], help="aggregate metrics into plot-ready files")
    p.add_argument("--compare", help="another run directory to diff detector AUCs against")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
        args.func(cfg, args)
    except ConfigError as exc:
        print(f"coordnet {args.command}: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingPrerequisite as exc:
        print(f"coordnet {args.command}: {exc}", file=sys.stderr)
        return EXIT_PREREQ
    return 0


if __name__ == "__main__":
    sys.exit(main())
