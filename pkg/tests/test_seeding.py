"""Named sub-seed derivation."""

import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from subrank.seeding import derive_seed, rng_for


def test_derive_seed_is_deterministic():
    assert derive_seed(0, "split") == derive_seed(0, "split")
    assert derive_seed(123456789, "negatives") == derive_seed(123456789, "negatives")


def test_distinct_names_give_distinct_streams():
    names = ["world", "traffic", "negatives", "split", "gbdt", "crossenc",
             "init", "shuffle", "dropout", "functionality-eval", "embeddings"]
    seeds = [derive_seed(7, name) for name in names]
    assert len(set(seeds)) == len(names)


def test_distinct_bases_give_distinct_seeds():
    seeds = [derive_seed(base, "split") for base in range(50)]
    assert len(set(seeds)) == 50


def test_rng_for_reproducible():
    a = rng_for(3, "shuffle").integers(0, 1 << 30, size=16)
    b = rng_for(3, "shuffle").integers(0, 1 << 30, size=16)
    c = rng_for(3, "init").integers(0, 1 << 30, size=16)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


@given(st.integers(min_value=-(1 << 70), max_value=1 << 70), st.text(max_size=40))
def test_derived_seed_fits_in_63_bits(base, name):
    seed = derive_seed(base, name)
    assert 0 <= seed < 1 << 63
    # numpy accepts it directly
    np.random.default_rng(seed)
