from __future__ import annotations

import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from coordnet.simnet import (
    DocumentVectors,
    HashingTfidfEmbedder,
    PrecomputedEmbedder,
    SimilarityNetwork,
    UserVectors,
    build_bipartite,
    cosine_project,
    embed_documents,
    load_network_npz,
    network_hash,
    read_network,
    save_network_npz,
    text_similarity_network,
    tfidf_transform,
    trace_network,
    write_network,
)
from coordnet.traces import Document, DocumentSet, TraceEvent

from oracles import brute_cosine_edges, brute_tfidf, brute_text_edges

DAY = 86400


def ev(*triples):
    return [TraceEvent(u, e, c) for u, e, c in triples]


def test_bipartite_raw_counts():
    g = build_bipartite(ev(("A", "e1", 2), ("B", "e1", 1)))
    assert g.users == ("A", "B") and g.entities == ("e1",)
    assert g.weights.toarray().tolist() == [[2.0], [1.0]]


def test_bipartite_single_and_empty():
    assert build_bipartite(ev(("A", "e", 1))).weights.toarray().tolist() == [[1.0]]
    empty = build_bipartite([])
    assert empty.weights.shape == (0, 0)


def test_bipartite_block_diagonal():
    g = build_bipartite(ev(("A", "e1", 1), ("B", "e2", 3)))
    assert g.weights.toarray().tolist() == [[1.0, 0.0], [0.0, 3.0]]


def test_tfidf_hand_value():
    v = tfidf_transform(build_bipartite(ev(("A", "e", 3), ("B", "f", 1))))
    assert v.vectors[0, 0] == pytest.approx(3 * math.log(2), abs=1e-12)
    assert v.vectors[0, 0] == pytest.approx(2.0794, abs=1e-4)


def test_tfidf_shared_entity_vanishes_and_user_dropped():
    v = tfidf_transform(build_bipartite(ev(("A", "all", 1), ("B", "all", 2), ("B", "own", 1))))
    assert v.users == ("B",)
    dense = v.vectors.toarray()
    assert dense[0, 0] == 0.0 and dense[0, 1] > 0


def test_cosine_examples():
    x = sp.csr_matrix(np.array([[1.0, 1.0], [1.0, 0.0], [1.0, 1.0], [0.0, 0.0]]))
    net = cosine_project(UserVectors(("u", "w", "z", "o"), x))
    edges = net.edge_dict()
    assert edges[("u", "w")] == pytest.approx(1 / math.sqrt(2), abs=1e-12)
    assert edges[("u", "z")] == pytest.approx(1.0, abs=1e-12)
    ortho = cosine_project(UserVectors(("a", "b"), sp.csr_matrix(np.eye(2))))
    assert ortho.n_edges == 0


_counts = st.dictionaries(
    st.sampled_from([f"u{i}" for i in range(12)]),
    st.dictionaries(st.sampled_from([f"e{i}" for i in range(8)]), st.integers(1, 4), min_size=1, max_size=5),
    min_size=1,
)


def _events(counts):
    return [TraceEvent(u, e, c) for u, ents in counts.items() for e, c in ents.items()]


@given(_counts)
def test_projection_matches_oracle(counts):
    net = trace_network(_events(counts))
    net.check()
    expected = brute_cosine_edges(counts)
    got = net.edge_dict()
    assert set(got) == set(expected)
    for key, w in expected.items():
        assert abs(got[key] - w) <= 1e-9


@given(_counts)
def test_tfidf_sparsity_pattern(counts):
    v = tfidf_transform(build_bipartite(_events(counts)))
    oracle = brute_tfidf(counts)
    assert set(v.users) == set(oracle)
    for i, u in enumerate(v.users):
        row = v.vectors.getrow(i)
        ents = {build_bipartite(_events(counts)).entities[j] for j in row.indices[row.data > 0]}
        assert ents == set(oracle[u])


@given(_counts)
def test_network_structure_invariants(counts):
    net = trace_network(_events(counts))
    assert np.all(net.src < net.dst)
    if net.n_edges:
        assert net.weight.min() > 0 and net.weight.max() <= 1 + 1e-9
    adj = net.adjacency().toarray()
    assert np.array_equal(adj, adj.T)


# --- text similarity ------------------------------------------------------------------------------


def doc(user, tid, ts, text):
    return Document(user, tid, ts, text, len(text.split()))


def test_hashed_vectors_unit_norm_and_identical_texts():
    docs = DocumentSet((doc("a", "1", 0, "gato negro come pescado"), doc("b", "2", 0, "gato negro come pescado"),
                        doc("c", "3", 0, "lluvia fuerte sobre montaña hoy")))
    vecs = embed_documents(docs)
    for t in vecs:
        assert np.linalg.norm(vecs[t]) == pytest.approx(1.0, abs=1e-6)
    assert float(vecs["1"] @ vecs["2"]) == pytest.approx(1.0, abs=1e-12)


def test_disjoint_vocabulary_collision_floor():
    docs = DocumentSet((doc("a", "1", 0, "alfa bravo charlie delta echo"),
                        doc("b", "2", 0, "foxtrot golf hotel india juliet")))
    vecs = embed_documents(docs, HashingTfidfEmbedder(4096))
    assert float(vecs["1"] @ vecs["2"]) < 0.05


def test_embed_empty_rejected():
    with pytest.raises(ValueError):
        embed_documents(DocumentSet(()))


def test_precomputed_vectors(tmp_path):
    path = tmp_path / "vec.csv"
    path.write_text("tweet_id,x0,x1\n1,3,4\n2,0,2\n")
    docs = DocumentSet((doc("a", "1", 0, "w w w w"), doc("b", "2", 0, "w w w w")))
    vecs = embed_documents(docs, PrecomputedEmbedder(path))
    assert vecs["1"].tolist() == pytest.approx([0.6, 0.8])
    missing = DocumentSet((doc("a", "9", 0, "w w w w"),))
    with pytest.raises(KeyError, match="no vector"):
        embed_documents(missing, PrecomputedEmbedder(path))


def _vectors(rows: dict[str, list[float]]) -> DocumentVectors:
    ids = list(rows)
    mat = np.array([rows[i] for i in ids], dtype=float)
    return DocumentVectors(ids, mat / np.linalg.norm(mat, axis=1, keepdims=True))


def test_identical_tweets_same_day():
    docs = DocumentSet((doc("a", "1", 0, "x"), doc("b", "2", 10, "x")))
    net = text_similarity_network(docs, _vectors({"1": [1, 0], "2": [1, 0]}))
    assert net.edge_dict() == {("a", "b"): pytest.approx(1.0)}


def test_below_threshold_pair_ignored():
    c = 0.69
    docs = DocumentSet((doc("a", "1", 0, "x"), doc("b", "2", 0, "x")))
    vecs = _vectors({"1": [1, 0], "2": [c, math.sqrt(1 - c * c)]})
    assert text_similarity_network(docs, vecs, 0.7).n_edges == 0
    assert text_similarity_network(docs, vecs, 0.6).n_edges == 1


def test_edge_weight_is_mean_of_pairs():
    def unit(c):
        return [c, math.sqrt(1 - c * c)]

    docs = DocumentSet((doc("a", "1", 0, "x"), doc("b", "2", 0, "x"), doc("b", "3", 0, "x")))
    vecs = _vectors({"1": [1, 0], "2": unit(0.8), "3": unit(0.9)})
    assert text_similarity_network(docs, vecs, 0.7).edge_dict()[("a", "b")] == pytest.approx(0.85, abs=1e-12)


def test_window_limits_pairs():
    docs = DocumentSet((doc("a", "1", 0, "x"), doc("b", "2", 366 * DAY, "x")))
    vecs = _vectors({"1": [1, 0], "2": [1, 0]})
    assert text_similarity_network(docs, vecs, 0.7, 365).n_edges == 0
    assert text_similarity_network(docs, vecs, 0.7, 366).n_edges == 1


def test_same_user_pairs_excluded():
    docs = DocumentSet((doc("a", "1", 0, "x"), doc("a", "2", 0, "x")))
    assert text_similarity_network(docs, _vectors({"1": [1, 0], "2": [1, 0]})).n_edges == 0


def test_threshold_validated():
    with pytest.raises(ValueError):
        text_similarity_network(DocumentSet(()), _vectors({"1": [1, 0]}), 0.0)


_text_docs = st.lists(
    st.tuples(st.sampled_from("abcde"), st.integers(0, 800), st.lists(st.integers(0, 3), min_size=3, max_size=3)),
    min_size=2,
    max_size=25,
)


@settings(max_examples=60, deadline=None)
@given(_text_docs, st.sampled_from([0.5, 0.7, 0.9]), st.randoms(use_true_random=False), st.sampled_from([3, 512]))
def test_text_network_matches_oracle_and_order_free(rows, threshold, rnd, block):
    docs, vec_rows = [], {}
    for k, (user, day, raw) in enumerate(rows):
        docs.append(doc(user, f"t{k}", day * DAY, "w"))
        vec_rows[f"t{k}"] = [float(r) + 0.5 for r in raw]
    vecs = _vectors(vec_rows)
    expected = brute_text_edges(docs, vecs, threshold, 365)
    shuffled = list(docs)
    rnd.shuffle(shuffled)
    for order in (docs, shuffled):
        got = text_similarity_network(DocumentSet(tuple(order)), vecs, threshold, 365, block).edge_dict()
        assert set(got) == set(expected)
        for key, w in expected.items():
            assert got[key] == pytest.approx(min(w, 1.0), abs=1e-12)


# --- storage ---------------------------------------------------------------------------------------


def _net():
    return SimilarityNetwork.from_edges([("a", "b", 0.5), ("b", "c", 1 / 3)], nodes=["z"], kind="co_url")


def test_npz_roundtrip_is_lossless(tmp_path):
    net = _net()
    save_network_npz(net, tmp_path / "n.npz")
    back = load_network_npz(tmp_path / "n.npz")
    assert network_hash(back) == network_hash(net)
    save_network_npz(back, tmp_path / "m.npz")
    assert (tmp_path / "n.npz").read_bytes() == (tmp_path / "m.npz").read_bytes()


def test_edge_list_export(tmp_path):
    edges, nodes = write_network(_net(), tmp_path / "net")
    assert edges.read_text().splitlines() == ["user_a,user_b,weight", "a,b,0.500000", "b,c,0.333333"]
    assert "z" in nodes.read_text().split()
    back = read_network(tmp_path / "net")
    assert back.nodes == _net().nodes
    assert back.edge_dict()[("b", "c")] == pytest.approx(1 / 3, abs=1e-6)


def test_self_loop_rejected():
    with pytest.raises(ValueError, match="self-loop"):
        SimilarityNetwork.from_edges([("a", "a", 1.0)])
