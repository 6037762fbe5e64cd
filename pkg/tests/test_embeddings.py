"""FastText-format table loading and sum pooling."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from subrank.embeddings import (
    EmbeddingTable,
    featurize_pair,
    load_embeddings,
    pool,
    save_embeddings,
)
from subrank.errors import DataError


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def test_load_two_words(tmp_path):
    path = write(tmp_path / "v.vec", "2 3\na 1 0 0\nb 0 1 0\n")
    table = load_embeddings(path)
    assert table.dim == 3
    assert len(table) == 2
    assert np.array_equal(table.vectors["a"], [1.0, 0.0, 0.0])


def test_load_rejects_dimension_mismatch(tmp_path):
    path = write(tmp_path / "v.vec", "2 3\na 1 0 0\nb 0 1\n")
    with pytest.raises(DataError, match=":3"):
        load_embeddings(path)


def test_load_rejects_duplicate_word(tmp_path):
    path = write(tmp_path / "v.vec", "2 2\na 1 0\na 0 1\n")
    with pytest.raises(DataError, match="duplicate"):
        load_embeddings(path)


def test_load_rejects_bad_header(tmp_path):
    with pytest.raises(DataError, match=":1"):
        load_embeddings(write(tmp_path / "a.vec", "3\na 1 0\n"))
    with pytest.raises(DataError, match=":1"):
        load_embeddings(write(tmp_path / "b.vec", "x y\na 1 0\n"))


def test_load_rejects_count_mismatch(tmp_path):
    path = write(tmp_path / "v.vec", "3 2\na 1 0\nb 0 1\n")
    with pytest.raises(DataError, match="declares 3"):
        load_embeddings(path)


def test_load_rejects_non_numeric(tmp_path):
    path = write(tmp_path / "v.vec", "1 2\na 1 zz\n")
    with pytest.raises(DataError, match=":2"):
        load_embeddings(path)


@pytest.fixture
def table():
    return EmbeddingTable(dim=2, vectors={
        "a": np.array([1.0, 2.0]),
        "b": np.array([3.0, -1.0]),
    })


def test_pool_sums(table):
    assert np.array_equal(pool(["a", "b"], table), [4.0, 1.0])


def test_pool_empty_is_zero(table):
    assert np.array_equal(pool([], table), [0.0, 0.0])


def test_pool_skips_oov(table):
    assert np.array_equal(pool(["a", "zzz_oov", "b"], table), pool(["a", "b"], table))


def test_pool_counts_repeats(table):
    assert np.array_equal(pool(["a", "a"], table), [2.0, 4.0])


def test_featurize_pair_concatenates(table):
    feat = featurize_pair(["a", "b"], [], table)
    assert np.array_equal(feat, [4.0, 1.0, 0.0, 0.0])
    assert feat.shape == (4,)


def test_featurize_pair_is_order_sensitive(table):
    fwd = featurize_pair(["a"], ["b"], table)
    rev = featurize_pair(["b"], ["a"], table)
    assert np.array_equal(fwd[:2], rev[2:])
    assert not np.array_equal(fwd, rev)


def test_featurize_pair_both_empty(table):
    assert np.array_equal(featurize_pair([], [], table), np.zeros(4))


vocab_words = st.sampled_from(["a", "b", "c", "d", "oov1", "oov2"])


@given(st.lists(vocab_words, max_size=12), st.randoms(use_true_random=False))
def test_pool_is_permutation_invariant(tokens, rnd):
    rng = np.random.default_rng(99)
    big = EmbeddingTable(dim=3, vectors={
        w: rng.normal(size=3) for w in ["a", "b", "c", "d"]
    })
    shuffled = list(tokens)
    rnd.shuffle(shuffled)
    np.testing.assert_allclose(
        pool(shuffled, big), pool(tokens, big), rtol=0, atol=1e-12
    )


def test_round_trip_exact(tmp_path):
    rng = np.random.default_rng(0)
    table = EmbeddingTable(dim=4, vectors={
        f"w{i}": rng.normal(size=4) for i in range(10)
    })
    path = tmp_path / "table.vec"
    save_embeddings(table, path)
    loaded = load_embeddings(path)
    assert loaded.dim == table.dim
    assert set(loaded.vectors) == set(table.vectors)
    for word, vec in table.vectors.items():
        assert np.array_equal(loaded.vectors[word], vec)  # repr round-trips floats
