"""Unsupervised detectors over similarity networks."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ._io import dump_json
from .simnet import FusedNetwork, SimilarityNetwork, network_hash


class ConvergenceWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class CentralityScores:
    """Max-normalised eigenvector centrality; users not in the network score 0."""

    scores: dict[str, float]
    converged: bool = True
    iterations: int = 0

    def __getitem__(self, user: str) -> float:
        return self.scores.get(user, 0.0)

    def get(self, user: str, default: float = 0.0) -> float:
        return self.scores.get(user, default)

    def __len__(self) -> int:
        return len(self.scores)


@dataclass(frozen=True)
class DetectionResult:
    flagged: frozenset[str]
    scores: dict[str, float]
    method: str
    params: dict = field(default_factory=dict)

    def score(self, user: str) -> float:
        return self.scores.get(user, 0.0)

    def score_array(self, users: Sequence[str]) -> np.ndarray:
        return np.array([self.scores.get(u, 0.0) for u in users], dtype=np.float64)


# --- edge filtering ------------------------------------------------------------


def _max_incident(net: SimilarityNetwork, values: np.ndarray) -> np.ndarray:
    out = np.zeros(net.n_nodes)
    np.maximum.at(out, net.src, values)
    np.maximum.at(out, net.dst, values)
    return out


def edge_filter(net: SimilarityNetwork, percentile: float) -> DetectionResult:
    """Keep edges at or above the given weight percentile (linear interpolation).

    A user is flagged if any retained edge touches it; the ranking score is the
    user's strongest incident edge.
    """
    if not 0 <= percentile <= 100:
        raise ValueError("percentile must lie in [0, 100]")
    params = {"percentile": float(percentile)}
    if net.n_edges == 0:
        return DetectionResult(frozenset(), {u: 0.0 for u in net.nodes}, "edge_filter", params)
    threshold = float(np.percentile(net.weight, percentile))
    kept = net.weight >= threshold
    flagged = {net.nodes[i] for i in np.concatenate([net.src[kept], net.dst[kept]]).tolist()}
    best = _max_incident(net, net.weight)
    params["weight_threshold"] = threshold
    return DetectionResult(
        frozenset(flagged), dict(zip(net.nodes, best.tolist())), "edge_filter", params
    )


# --- eigenvector centrality ----------------------------------------------------


def eigenvector_centrality(
    net: SimilarityNetwork,
    use_weights: bool = False,
    tol: float = 1e-10,
    max_iter: int = 1000,
) -> CentralityScores:
    """Power iteration on ``A + I`` from the all-ones vector, max-normalised.

    The identity shift leaves the eigenvectors unchanged but removes the
    +/- lambda oscillation that plain iteration shows on bipartite graphs.
    Isolated nodes score 0, and so does anything that has decayed below
    ``tol``: components outside the dominant one are exactly 0 in the true
    eigenvector, and the iteration only approximates that limit.
    """
    n = net.n_nodes
    if n == 0:
        return CentralityScores({}, True, 0)
    if net.n_edges == 0:
        return CentralityScores(dict.fromkeys(net.nodes, 0.0), True, 0)
    adj = net.adjacency(weighted=use_weights)
    x = np.ones(n)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        y = adj @ x + x
        y /= y.max()
        delta = np.abs(y - x).max()
        x = y
        if delta < tol:
            converged = True
            break
    if not converged:
        warnings.warn(
            f"eigenvector centrality did not converge in {max_iter} iterations "
            f"(last change {delta:.3g})",
            ConvergenceWarning,
            stacklevel=2,
        )
    x[net.degree() == 0] = 0.0
    x[x < tol] = 0.0
    return CentralityScores(dict(zip(net.nodes, x.tolist())), converged, it)


def node_prune(
    net: SimilarityNetwork,
    centrality_threshold: float,
    use_weights: bool = False,
    centrality: CentralityScores | None = None,
) -> DetectionResult:
    """Flag users whose eigenvector centrality is at least the threshold."""
    if centrality is None:
        centrality = eigenvector_centrality(net, use_weights=use_weights)
    flagged = frozenset(u for u, c in centrality.scores.items() if c >= centrality_threshold)
    params = {
        "centrality_threshold": float(centrality_threshold),
        "use_weights": bool(use_weights),
        "converged": centrality.converged,
    }
    return DetectionResult(flagged, dict(centrality.scores), "node_prune", params)


# --- fusion ------------------------------------------------------------------------


def fuse(nets: Sequence[SimilarityNetwork]) -> FusedNetwork:
    """Union of nodes and edges; every fused edge has weight 1.

    Provenance records which input kinds contributed each edge (inputs that are
    themselves fused contribute their own provenance).
    """
    if not nets:
        raise ValueError("fuse needs at least one network")
    nodes = tuple(sorted(set().union(*(n.nodes for n in nets))))
    index = {u: i for i, u in enumerate(nodes)}
    prov: dict[tuple[int, int], set[str]] = {}
    for pos, net in enumerate(nets):
        remap = np.array([index[u] for u in net.nodes], dtype=np.int64)
        if isinstance(net, FusedNetwork) and net.provenance:
            labels = net.provenance
        else:
            labels = [frozenset([net.kind or f"net{pos}"])] * net.n_edges
        a, b = remap[net.src], remap[net.dst]
        lo, hi = np.minimum(a, b), np.maximum(a, b)
        for key, lab in zip(zip(lo.tolist(), hi.tolist()), labels):
            prov.setdefault(key, set()).update(lab)
    keys = sorted(prov)
    src = np.array([k[0] for k in keys], dtype=np.int64)
    dst = np.array([k[1] for k in keys], dtype=np.int64)
    return FusedNetwork(
        nodes,
        src,
        dst,
        np.ones(len(keys)),
        "fused",
        provenance=tuple(frozenset(prov[k]) for k in keys),
    )


# --- disparity filter --------------------------------------------------------------


def disparity_pvalues(net: SimilarityNetwork) -> tuple[np.ndarray, np.ndarray]:
    """Per-edge p-values ``(1 - w/s)^(k - 1)`` seen from the src and dst endpoint."""
    strength = np.zeros(net.n_nodes)
    np.add.at(strength, net.src, net.weight)
    np.add.at(strength, net.dst, net.weight)
    k = net.degree().astype(np.float64)

    def side(end):
        p = net.weight / strength[end]
        return np.power(np.clip(1.0 - p, 0.0, 1.0), k[end] - 1.0)

    return side(net.src), side(net.dst)


def backbone_filter(net: SimilarityNetwork, alpha: float) -> DetectionResult:
    """Disparity-filter backbone: an edge survives if it is significant at either end."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    params = {"alpha": float(alpha)}
    if net.n_edges == 0:
        return DetectionResult(frozenset(), {u: 0.0 for u in net.nodes}, "backbone", params)
    pv_src, pv_dst = disparity_pvalues(net)
    pv = np.minimum(pv_src, pv_dst)
    kept = pv < alpha
    flagged = {net.nodes[i] for i in np.concatenate([net.src[kept], net.dst[kept]]).tolist()}
    best = _max_incident(net, 1.0 - pv)
    return DetectionResult(frozenset(flagged), dict(zip(net.nodes, best.tolist())), "backbone", params)


# --- diagnostics -------------------------------------------------------------------


def diagnostic_centralities(net: SimilarityNetwork) -> dict[str, dict[str, float]]:
    """Degree, betweenness and closeness centrality (diagnostic output only)."""
    import networkx as nx

    g = nx.Graph()
    g.add_nodes_from(net.nodes)
    g.add_edges_from((u, v) for u, v, _ in net.edges())
    return {
        "degree": nx.degree_centrality(g) if len(g) > 1 else dict.fromkeys(g, 0.0),
        "betweenness": nx.betweenness_centrality(g),
        "closeness": nx.closeness_centrality(g),
    }


# --- export ------------------------------------------------------------------------


def write_detection(
    result: DetectionResult,
    path: str | Path,
    universe: Iterable[str] | None = None,
    inputs: Sequence[SimilarityNetwork] = (),
) -> Path:
    """Write ``user_id,score,flagged`` rows plus a ``<path>.manifest.json``."""
    path = Path(path)
    users = sorted(set(universe) if universe is not None else set(result.scores))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["user_id", "score", "flagged"])
        for u in users:
            writer.writerow([u, repr(result.score(u)), int(u in result.flagged)])
    manifest = {
        "method": result.method,
        "params": result.params,
        "n_flagged": len(result.flagged),
        "inputs": {net.kind or f"net{i}": network_hash(net) for i, net in enumerate(inputs)},
    }
    manifest_path = path.with_name(path.name + ".manifest.json")
    dump_json(manifest, manifest_path)
    return manifest_path
