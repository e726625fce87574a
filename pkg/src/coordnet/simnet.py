"""Similarity networks: TF-IDF bipartite projection and text similarity."""

from __future__ import annotations

import csv
import hashlib
from collections.abc import Mapping
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, Iterable, Iterator

import numpy as np
import scipy.sparse as sp

from ._io import load_arrays, save_arrays
from .traces import DocumentSet, TraceEvent

SECONDS_PER_DAY = 86400


# --- networks --------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SimilarityNetwork:
    """Undirected weighted user graph.

    ``nodes`` is sorted; every edge is stored once as ``src < dst`` (node
    indices) and edges are sorted by ``(src, dst)``.
    """

    nodes: tuple[str, ...]
    src: np.ndarray
    dst: np.ndarray
    weight: np.ndarray
    kind: str = ""

    @classmethod
    def from_edges(
        cls,
        edges: Iterable[tuple[str, str, float]],
        nodes: Iterable[str] = (),
        kind: str = "",
    ) -> "SimilarityNetwork":
        edges = list(edges)
        node_set = set(nodes)
        for u, v, _ in edges:
            node_set.add(u)
            node_set.add(v)
        ordered = tuple(sorted(node_set))
        index = {u: i for i, u in enumerate(ordered)}
        pairs: dict[tuple[int, int], float] = {}
        for u, v, w in edges:
            if u == v:
                raise ValueError(f"self-loop on {u!r}")
            a, b = sorted((index[u], index[v]))
            pairs[(a, b)] = float(w)
        return cls._from_index_pairs(ordered, pairs, kind)

    @classmethod
    def _from_index_pairs(cls, nodes, pairs: dict[tuple[int, int], float], kind: str):
        keys = sorted(pairs)
        src = np.fromiter((k[0] for k in keys), dtype=np.int64, count=len(keys))
        dst = np.fromiter((k[1] for k in keys), dtype=np.int64, count=len(keys))
        weight = np.fromiter((pairs[k] for k in keys), dtype=np.float64, count=len(keys))
        return cls(tuple(nodes), src, dst, weight, kind)

    @classmethod
    def from_arrays(cls, nodes, src, dst, weight, kind: str = "") -> "SimilarityNetwork":
        """Build from index arrays, canonicalising orientation and order."""
        src = np.asarray(src, dtype=np.int64)
        dst = np.asarray(dst, dtype=np.int64)
        weight = np.asarray(weight, dtype=np.float64)
        lo, hi = np.minimum(src, dst), np.maximum(src, dst)
        order = np.lexsort((hi, lo))
        return cls(tuple(nodes), lo[order], hi[order], weight[order], kind)

    @cached_property
    def index(self) -> dict[str, int]:
        return {u: i for i, u in enumerate(self.nodes)}

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_edges(self) -> int:
        return len(self.weight)

    def __len__(self) -> int:
        return self.n_nodes

    def __contains__(self, user: str) -> bool:
        return user in self.index

    def edges(self) -> Iterator[tuple[str, str, float]]:
        for a, b, w in zip(self.src.tolist(), self.dst.tolist(), self.weight.tolist()):
            yield self.nodes[a], self.nodes[b], w

    def edge_dict(self) -> dict[tuple[str, str], float]:
        return {(u, v): w for u, v, w in self.edges()}

    def adjacency(self, weighted: bool = True) -> sp.csr_matrix:
        n = self.n_nodes
        data = self.weight if weighted else np.ones_like(self.weight)
        rows = np.concatenate([self.src, self.dst])
        cols = np.concatenate([self.dst, self.src])
        return sp.csr_matrix((np.concatenate([data, data]), (rows, cols)), shape=(n, n))

    def degree(self) -> np.ndarray:
        return np.bincount(np.concatenate([self.src, self.dst]), minlength=self.n_nodes)

    def connected_nodes(self) -> set[str]:
        deg = self.degree()
        return {u for u, d in zip(self.nodes, deg) if d > 0}

    def check(self, tol: float = 1e-9) -> None:
        """Raise if the network violates its structural invariants."""
        if list(self.nodes) != sorted(set(self.nodes)):
            raise ValueError("nodes must be sorted and unique")
        if np.any(self.src >= self.dst):
            raise ValueError("edges must satisfy src < dst (no self-loops)")
        if self.n_edges and (self.weight.min() <= 0 or self.weight.max() > 1 + tol):
            raise ValueError("edge weights must lie in (0, 1]")
        keys = self.src * max(self.n_nodes, 1) + self.dst
        if np.any(np.diff(keys) <= 0):
            raise ValueError("edges must be sorted and unique")


@dataclass(frozen=True, eq=False)
class FusedNetwork(SimilarityNetwork):
    provenance: tuple[frozenset[str], ...] = field(default=())


# --- bipartite / tf-idf ------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BipartiteGraph:
    users: tuple[str, ...]
    entities: tuple[str, ...]
    weights: sp.csr_matrix

    @cached_property
    def user_index(self) -> dict[str, int]:
        return {u: i for i, u in enumerate(self.users)}

    @cached_property
    def entity_index(self) -> dict[str, int]:
        return {e: i for i, e in enumerate(self.entities)}


@dataclass(frozen=True, eq=False)
class UserVectors:
    users: tuple[str, ...]
    vectors: sp.csr_matrix
    kind: str = ""


def build_bipartite(events: Iterable[TraceEvent]) -> BipartiteGraph:
    events = list(events)
    users = tuple(sorted({e.user_id for e in events}))
    entities = tuple(sorted({e.entity_id for e in events}))
    uidx = {u: i for i, u in enumerate(users)}
    eidx = {e: i for i, e in enumerate(entities)}
    rows = np.fromiter((uidx[e.user_id] for e in events), dtype=np.int64, count=len(events))
    cols = np.fromiter((eidx[e.entity_id] for e in events), dtype=np.int64, count=len(events))
    data = np.fromiter((e.count for e in events), dtype=np.float64, count=len(events))
    # duplicate (user, entity) pairs are summed by the csr constructor
    weights = sp.csr_matrix((data, (rows, cols)), shape=(len(users), len(entities)))
    weights.sum_duplicates()
    weights.eliminate_zeros()
    return BipartiteGraph(users, entities, weights)


def tfidf_transform(g: BipartiteGraph, kind: str = "") -> UserVectors:
    """Raw-count tf times ``ln(N / df)``; users left with an all-zero row are dropped."""
    n_users = len(g.users)
    if n_users == 0:
        return UserVectors((), sp.csr_matrix((0, len(g.entities))), kind)
    df = np.bincount(g.weights.indices, minlength=len(g.entities))
    with np.errstate(divide="ignore"):
        idf = np.where(df > 0, np.log(n_users / np.maximum(df, 1)), 0.0)
    x = (g.weights @ sp.diags(idf)).tocsr()
    x.eliminate_zeros()
    keep = np.flatnonzero(x.getnnz(axis=1) > 0)
    return UserVectors(tuple(g.users[i] for i in keep), x[keep].tocsr(), kind)


def _row_normalize(x: sp.csr_matrix) -> sp.csr_matrix:
    norms = np.sqrt(np.asarray(x.multiply(x).sum(axis=1)).ravel())
    norms[norms == 0] = 1.0
    return sp.diags(1.0 / norms) @ x


def cosine_project(v: UserVectors) -> SimilarityNetwork:
    """Project user vectors onto a cosine-similarity network.

    The sparse product walks each row's entities and their posting lists, so
    only pairs that share at least one entity are ever scored.
    """
    x = _row_normalize(v.vectors).tocsr()
    sims = sp.triu(x @ x.T, k=1).tocoo()
    keep = sims.data > 0
    rows, cols, data = sims.row[keep], sims.col[keep], np.minimum(sims.data[keep], 1.0)
    return SimilarityNetwork.from_arrays(v.users, rows, cols, data, v.kind)


def trace_network(events: Iterable[TraceEvent], kind: str = "") -> SimilarityNetwork:
    return cosine_project(tfidf_transform(build_bipartite(events), kind))


# --- text similarity ---------------------------------------------------------


class DocumentVectors(Mapping):
    """Unit-norm document vectors keyed by tweet id (rows of ``matrix``)."""

    def __init__(self, ids: Iterable[str], matrix):
        self.ids = tuple(ids)
        if sp.issparse(matrix):
            matrix = sp.csr_matrix(matrix, dtype=np.float64)
        else:
            matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.shape[0] != len(self.ids):
            raise ValueError("one vector per id required")
        self.matrix = matrix
        self._index = {t: i for i, t in enumerate(self.ids)}

    def __getitem__(self, tweet_id: str) -> np.ndarray:
        row = self.matrix[self._index[tweet_id]]
        return np.asarray(row.toarray()).ravel() if sp.issparse(row) else np.array(row)

    def __iter__(self):
        return iter(self.ids)

    def __len__(self) -> int:
        return len(self.ids)

    def rows(self, tweet_ids: Iterable[str]):
        idx = np.array([self._index[t] for t in tweet_ids], dtype=np.int64)
        return self.matrix[idx]


class HashingTfidfEmbedder:
    """TF-IDF over hashed word unigrams and bigrams (smoothed idf, L2 rows)."""

    def __init__(self, n_features: int = 4096, ngram_range: tuple[int, int] = (1, 2)):
        self.n_features = n_features
        self.ngram_range = ngram_range

    def __call__(self, docs: DocumentSet) -> DocumentVectors:
        from sklearn.feature_extraction.text import HashingVectorizer, TfidfTransformer

        hasher = HashingVectorizer(
            n_features=self.n_features,
            ngram_range=self.ngram_range,
            alternate_sign=False,
            norm=None,
            lowercase=False,
            token_pattern=r"(?u)\S+",
        )
        counts = hasher.transform([d.cleaned_text for d in docs])
        tfidf = TfidfTransformer(norm="l2", smooth_idf=True).fit_transform(counts)
        return DocumentVectors((d.tweet_id for d in docs), tfidf.tocsr())


class PrecomputedEmbedder:
    """Vectors from an external encoder, stored as ``tweet_id,x0,x1,...``."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._vectors: dict[str, np.ndarray] | None = None

    def _load(self) -> dict[str, np.ndarray]:
        if self._vectors is None:
            vectors = {}
            with open(self.path, encoding="utf-8", newline="") as fh:
                reader = csv.reader(fh)
                header = next(reader, None)
                if header and header[0] != "tweet_id":
                    vectors[header[0]] = np.array(header[1:], dtype=np.float64)
                for row in reader:
                    if row:
                        vectors[row[0]] = np.array(row[1:], dtype=np.float64)
            self._vectors = vectors
        return self._vectors

    def __call__(self, docs: DocumentSet) -> DocumentVectors:
        vectors = self._load()
        missing = [d.tweet_id for d in docs if d.tweet_id not in vectors]
        if missing:
            raise KeyError(f"{self.path}: no vector for {len(missing)} tweet(s), e.g. {missing[0]!r}")
        mat = np.vstack([vectors[d.tweet_id] for d in docs]) if len(docs) else np.zeros((0, 0))
        norms = np.linalg.norm(mat, axis=1, keepdims=True)
        if np.any(norms == 0):
            raise ValueError(f"{self.path}: zero vector cannot be normalised")
        return DocumentVectors((d.tweet_id for d in docs), mat / norms)


Embedder = Callable[[DocumentSet], DocumentVectors]


def embed_documents(docs: DocumentSet, embedder: Embedder | None = None) -> DocumentVectors:
    if not len(docs):
        raise ValueError("cannot embed an empty document set")
    return (embedder or HashingTfidfEmbedder())(docs)


def _block_pairs(x, start: int, stop: int, hi: int, threshold: float):
    """Row/col/value triples with value >= threshold in x[start:stop] . x[start:hi]^T."""
    # identical unit vectors can land a few ulps below 1
    threshold = threshold - 1e-12
    prod = x[start:stop] @ x[start:hi].T
    if sp.issparse(prod):
        prod = prod.tocoo()
        keep = prod.data >= threshold
        return prod.row[keep] + start, prod.col[keep] + start, prod.data[keep]
    rows, cols = np.nonzero(prod >= threshold)
    return rows + start, cols + start, prod[rows, cols]


def text_similarity_network(
    docs: DocumentSet,
    vectors: DocumentVectors,
    sim_threshold: float = 0.7,
    window_days: int = 365,
    block_size: int = 512,
) -> SimilarityNetwork:
    """Link users who posted at least one pair of similar documents.

    Documents are compared when their timestamps are at most ``window_days``
    apart; the edge weight is the mean cosine over all similar pairs.
    """
    if not 0 < sim_threshold <= 1:
        raise ValueError("sim_threshold must lie in (0, 1]")
    ordered = sorted(docs, key=lambda d: (d.timestamp, d.tweet_id))
    nodes = tuple(sorted({d.user_id for d in ordered}))
    if len(ordered) < 2:
        return SimilarityNetwork.from_arrays(nodes, [], [], [], "text_sim")
    node_idx = {u: i for i, u in enumerate(nodes)}
    owner = np.array([node_idx[d.user_id] for d in ordered], dtype=np.int64)
    ts = np.array([d.timestamp for d in ordered], dtype=np.int64)
    x = vectors.rows(d.tweet_id for d in ordered)
    window = int(window_days) * SECONDS_PER_DAY

    pair_keys, pair_sims = [], []
    n_nodes = len(nodes)
    for start in range(0, len(ordered), block_size):
        stop = min(start + block_size, len(ordered))
        hi = int(np.searchsorted(ts, ts[stop - 1] + window, side="right"))
        i, j, s = _block_pairs(x, start, stop, hi, sim_threshold)
        keep = (j > i) & (ts[j] - ts[i] <= window) & (owner[i] != owner[j])
        i, j, s = i[keep], j[keep], s[keep]
        a, b = np.minimum(owner[i], owner[j]), np.maximum(owner[i], owner[j])
        pair_keys.append(a * n_nodes + b)
        pair_sims.append(s)
    keys = np.concatenate(pair_keys)
    sims = np.minimum(np.concatenate(pair_sims), 1.0)
    uniq, inverse = np.unique(keys, return_inverse=True)
    totals = np.bincount(inverse, weights=sims, minlength=len(uniq))
    counts = np.bincount(inverse, minlength=len(uniq))
    return SimilarityNetwork.from_arrays(
        nodes, uniq // n_nodes, uniq % n_nodes, np.minimum(totals / counts, 1.0), "text_sim"
    )


# --- export ------------------------------------------------------------------


def write_network(net: SimilarityNetwork, prefix: str | Path) -> tuple[Path, Path]:
    """Write ``<prefix>.edges.csv`` (6-decimal weights) and ``<prefix>.nodes.csv``."""
    prefix = Path(prefix)
    edge_path = prefix.with_name(prefix.name + ".edges.csv")
    node_path = prefix.with_name(prefix.name + ".nodes.csv")
    with open(edge_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["user_a", "user_b", "weight"])
        for u, v, w in net.edges():
            writer.writerow([u, v, f"{w:.6f}"])
    with open(node_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["user_id"])
        for u in net.nodes:
            writer.writerow([u])
    return edge_path, node_path


def read_network(prefix: str | Path, kind: str = "") -> SimilarityNetwork:
    prefix = Path(prefix)
    with open(prefix.with_name(prefix.name + ".nodes.csv"), encoding="utf-8", newline="") as fh:
        nodes = [row["user_id"] for row in csv.DictReader(fh)]
    edges = []
    with open(prefix.with_name(prefix.name + ".edges.csv"), encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            # weights below the printed resolution come back as 0
            edges.append((row["user_a"], row["user_b"], max(float(row["weight"]), 1e-6)))
    return SimilarityNetwork.from_edges(edges, nodes, kind)


def save_network_npz(net: SimilarityNetwork, path: str | Path) -> None:
    """Lossless network storage used between pipeline stages."""
    extra = {}
    if isinstance(net, FusedNetwork):
        extra["provenance"] = np.array(["|".join(sorted(p)) for p in net.provenance], dtype=str)
    save_arrays(
        path,
        nodes=np.array(net.nodes, dtype=str),
        src=net.src,
        dst=net.dst,
        weight=net.weight,
        kind=np.array(net.kind),
        **extra,
    )


def load_network_npz(path: str | Path) -> SimilarityNetwork:
    z = load_arrays(path)
    nodes = tuple(str(u) for u in z["nodes"])
    args = (nodes, z["src"].astype(np.int64), z["dst"].astype(np.int64), z["weight"], str(z["kind"]))
    if "provenance" in z:
        prov = tuple(frozenset(p.split("|")) if p else frozenset() for p in z["provenance"].tolist())
        return FusedNetwork(*args, provenance=prov)
    return SimilarityNetwork(*args)


def network_hash(net: SimilarityNetwork) -> str:
    """Content hash over nodes, edges and exact weights."""
    h = hashlib.sha256()
    h.update(net.kind.encode("utf-8") + b"\0")
    h.update("\n".join(net.nodes).encode("utf-8") + b"\0")
    for arr in (net.src.astype("<i8"), net.dst.astype("<i8"), net.weight.astype("<f8")):
        h.update(arr.tobytes())
    return h.hexdigest()
