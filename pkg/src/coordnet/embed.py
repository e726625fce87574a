"""node2vec walks and skip-gram with negative sampling."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from numba import njit

from ._io import load_arrays, save_arrays
from .simnet import SimilarityNetwork


@dataclass(frozen=True)
class EmbedParams:
    dim: int = 128
    walks_per_node: int = 16
    walk_len: int = 16
    p: float = 1.0
    q: float = 1.0
    window: int = 5
    negatives: int = 5
    epochs: int = 5
    learning_rate: float = 0.025
    weighted: bool = False
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class WalkCorpus:
    """Walks as node indices; row ``i`` holds ``lengths[i]`` valid entries, then -1."""

    nodes: tuple[str, ...]
    walks: np.ndarray
    lengths: np.ndarray

    def __len__(self) -> int:
        return len(self.lengths)

    def as_lists(self) -> list[list[str]]:
        return [
            [self.nodes[i] for i in row[:n].tolist()]
            for row, n in zip(self.walks, self.lengths.tolist())
        ]


@dataclass(frozen=True, eq=False)
class EmbeddingMatrix:
    users: tuple[str, ...]
    vectors: np.ndarray
    losses: tuple[float, ...] = ()

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def index(self) -> dict[str, int]:
        return {u: i for i, u in enumerate(self.users)}

    def lookup(self, users: Sequence[str]) -> np.ndarray:
        """Rows for ``users``; users without a row get the zero vector."""
        idx = self.index()
        out = np.zeros((len(users), self.dim))
        for k, u in enumerate(users):
            i = idx.get(u)
            if i is not None:
                out[k] = self.vectors[i]
        return out


# --- walks -------------------------------------------------------------------------


@njit(cache=True)
def _has_edge(indptr, indices, a, b):
    lo, hi = indptr[a], indptr[a + 1]
    pos = np.searchsorted(indices[lo:hi], b)
    return pos < hi - lo and indices[lo + pos] == b


@njit(cache=True)
def _walk_kernel(indptr, indices, weights, uniforms, walk_len, inv_p, inv_q, biased):
    n, n_rounds = uniforms.shape[0], uniforms.shape[1]
    walks = np.full((n_rounds * n, walk_len), -1, dtype=np.int64)
    lengths = np.zeros(n_rounds * n, dtype=np.int64)
    probs = np.empty(indices.shape[0] + 1)
    for r in range(n_rounds):
        for s in range(n):
            row = r * n + s
            walks[row, 0] = s
            length = 1
            prev = -1
            cur = s
            while length < walk_len:
                lo, hi = indptr[cur], indptr[cur + 1]
                k = hi - lo
                if k == 0:
                    break
                total = 0.0
                for t in range(k):
                    nxt = indices[lo + t]
                    w = weights[lo + t]
                    if biased and prev >= 0:
                        if nxt == prev:
                            w *= inv_p
                        elif not _has_edge(indptr, indices, prev, nxt):
                            w *= inv_q
                    total += w
                    probs[t] = total
                u = uniforms[s, r, length - 1] * total
                pick = k - 1
                for t in range(k):
                    if u < probs[t]:
                        pick = t
                        break
                prev = cur
                cur = indices[lo + pick]
                walks[row, length] = cur
                length += 1
            lengths[row] = length
    return walks, lengths


def generate_walks(
    net: SimilarityNetwork,
    walks_per_node: int = 16,
    walk_len: int = 16,
    p: float = 1.0,
    q: float = 1.0,
    seed: int = 0,
    weighted: bool = False,
) -> WalkCorpus:
    """Second-order node2vec walks.

    Each start node draws its uniforms from ``default_rng([seed, node_rank])``,
    so the corpus does not depend on how start nodes are scheduled. Walks are
    ordered round by round, nodes in sorted order within a round.
    """
    if walks_per_node < 1 or walk_len < 1:
        raise ValueError("walks_per_node and walk_len must be >= 1")
    if p <= 0 or q <= 0:
        raise ValueError("p and q must be positive")
    adj = net.adjacency(weighted=weighted).tocsr()
    adj.sort_indices()
    n = net.n_nodes
    uniforms = np.empty((n, walks_per_node, max(walk_len - 1, 1)))
    for rank in range(n):
        uniforms[rank] = np.random.default_rng([seed, rank]).random(uniforms.shape[1:])
    walks, lengths = _walk_kernel(
        adj.indptr.astype(np.int64),
        adj.indices.astype(np.int64),
        adj.data.astype(np.float64),
        uniforms,
        walk_len,
        1.0 / p,
        1.0 / q,
        not (p == 1.0 and q == 1.0),
    )
    return WalkCorpus(net.nodes, walks, lengths)


# --- skip-gram -----------------------------------------------------------------------


@njit(cache=True)
def _lcg_uniform(state):
    state = state * np.uint64(6364136223846793005) + np.uint64(1442695040888963407)
    return state, (state >> np.uint64(11)) * (1.0 / 9007199254740992.0)


@njit(cache=True)
def _draw_negative(cdf, u):
    t = np.searchsorted(cdf, u, side="right")
    return min(t, cdf.shape[0] - 1)


@njit(cache=True, fastmath=True)
def _objective(walks, lengths, w_in, w_out, cdf, window, negatives, seed):
    """Mean negative-sampling loss over the corpus with a fixed negative stream."""
    dim = w_in.shape[1]
    state = np.uint64(seed) + np.uint64(0x9E3779B97F4A7C15)
    loss = 0.0
    n_terms = 0
    for wi in range(lengths.shape[0]):
        n = lengths[wi]
        for i in range(n):
            center = walks[wi, i]
            for j in range(max(0, i - window), min(n, i + window + 1)):
                if j == i:
                    continue
                ctx = walks[wi, j]
                for s in range(negatives + 1):
                    if s == 0:
                        target = ctx
                    else:
                        state, u = _lcg_uniform(state)
                        target = _draw_negative(cdf, u)
                        if target == ctx:
                            continue
                    f = 0.0
                    for d in range(dim):
                        f += w_in[center, d] * w_out[target, d]
                    if s != 0:
                        f = -f
                    # -log(sigmoid(f)), computed stably
                    if f > 0:
                        loss += np.log1p(np.exp(-f))
                    else:
                        loss += -f + np.log1p(np.exp(f))
                    n_terms += 1
    return loss / max(n_terms, 1)


@njit(cache=True, fastmath=True)
def _sgns_kernel(walks, lengths, w_in, w_out, cdf, window, negatives, epochs, lr0, seed):
    np.random.seed(seed)
    dim = w_in.shape[1]
    total_tokens = 0
    for i in range(lengths.shape[0]):
        total_tokens += lengths[i]
    budget = max(epochs * total_tokens, 1)
    processed = 0
    losses = np.zeros(epochs)
    grad = np.empty(dim)
    for ep in range(epochs):
        for wi in range(lengths.shape[0]):
            n = lengths[wi]
            for i in range(n):
                lr = lr0 * max(1e-4, 1.0 - processed / budget)
                processed += 1
                center = walks[wi, i]
                for j in range(max(0, i - window), min(n, i + window + 1)):
                    if j == i:
                        continue
                    ctx = walks[wi, j]
                    for d in range(dim):
                        grad[d] = 0.0
                    for s in range(negatives + 1):
                        if s == 0:
                            target = ctx
                            label = 1.0
                        else:
                            target = _draw_negative(cdf, np.random.random())
                            if target == ctx:
                                continue
                            label = 0.0
                        f = 0.0
                        for d in range(dim):
                            f += w_in[center, d] * w_out[target, d]
                        if f > 30.0:
                            f = 30.0
                        elif f < -30.0:
                            f = -30.0
                        g = (label - 1.0 / (1.0 + np.exp(-f))) * lr
                        for d in range(dim):
                            grad[d] += g * w_out[target, d]
                            w_out[target, d] += g * w_in[center, d]
                    for d in range(dim):
                        w_in[center, d] += grad[d]
        losses[ep] = _objective(walks, lengths, w_in, w_out, cdf, window, negatives, seed)
    return losses


def train_embeddings(
    walks: WalkCorpus,
    dim: int = 128,
    window: int = 5,
    negatives: int = 5,
    epochs: int = 5,
    learning_rate: float = 0.025,
    seed: int = 0,
) -> EmbeddingMatrix:
    """Skip-gram with negative sampling, single-threaded and seed-deterministic.

    Negatives come from the unigram distribution raised to 0.75; the learning
    rate decays linearly to ``1e-4 * learning_rate``. One row per walk node.
    ``losses`` holds the full objective after each epoch, evaluated with the
    same negative draws every time so epochs are comparable.
    """
    if len(walks) == 0:
        raise ValueError("empty walk corpus")
    n = len(walks.nodes)
    valid = walks.walks[walks.walks >= 0]
    freq = np.bincount(valid, minlength=n).astype(np.float64) ** 0.75
    cdf = np.cumsum(freq) / freq.sum()
    rng = np.random.default_rng([seed, 0x5EED])
    w_in = (rng.random((n, dim)) - 0.5) / dim
    w_out = np.zeros((n, dim))
    losses = _sgns_kernel(
        walks.walks, walks.lengths, w_in, w_out, cdf, window, negatives, epochs,
        learning_rate, np.uint32(seed % 2**32),
    )
    return EmbeddingMatrix(walks.nodes, w_in, tuple(float(x) for x in losses))


def embed_network(net: SimilarityNetwork, params: EmbedParams | None = None) -> EmbeddingMatrix:
    params = params or EmbedParams()
    walks = generate_walks(
        net, params.walks_per_node, params.walk_len, params.p, params.q, params.seed,
        weighted=params.weighted,
    )
    return train_embeddings(
        walks, params.dim, params.window, params.negatives, params.epochs,
        params.learning_rate, params.seed,
    )


# --- export ------------------------------------------------------------------------


def write_embeddings(emb: EmbeddingMatrix, path: str | Path) -> None:
    """CSV with header ``user_id,x0..x{d-1}``; values use ``repr`` so they round-trip."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["user_id"] + [f"x{i}" for i in range(emb.dim)])
        for u, row in zip(emb.users, emb.vectors.tolist()):
            writer.writerow([u] + [repr(v) for v in row])


def read_embeddings(path: str | Path) -> EmbeddingMatrix:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        users, rows = [], []
        for row in reader:
            users.append(row[0])
            rows.append([float(v) for v in row[1:]])
    vectors = np.array(rows, dtype=np.float64).reshape(len(users), len(header) - 1)
    return EmbeddingMatrix(tuple(users), vectors)


def save_embeddings_npz(emb: EmbeddingMatrix, path: str | Path) -> None:
    save_arrays(
        path,
        users=np.array(emb.users, dtype=str),
        vectors=emb.vectors,
        losses=np.array(emb.losses, dtype=np.float64),
    )


def load_embeddings_npz(path: str | Path) -> EmbeddingMatrix:
    z = load_arrays(path)
    return EmbeddingMatrix(
        tuple(str(u) for u in z["users"]), z["vectors"], tuple(z["losses"].tolist())
    )
