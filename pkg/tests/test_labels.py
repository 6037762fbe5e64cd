"""Label engineering: signals, transforms, thresholds, and pair building."""

import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from subrank.data import Catalog, PairKind, ProductRecord, TrafficRecord
from subrank.errors import ConfigError, UndefinedSignalError
from subrank.labels import (
    LabelConfig,
    LabelSpec,
    Signal,
    Task,
    Transform,
    build_labeled_pairs,
    compute_signal,
    default_negative_label,
    transform_label,
)

REC = TrafficRecord("P0", "P1", 250, 10, 5, 100.0)


def catalog_for(*ids):
    return Catalog([ProductRecord(pid, f"title {pid}", "US", "en") for pid in ids])


def test_signal_definitions():
    assert compute_signal(REC, Signal.PR) == 5 / 250
    assert compute_signal(REC, Signal.CVR) == 0.5
    assert compute_signal(REC, Signal.CTR) == 10 / 250
    assert compute_signal(REC, Signal.GMV) == 100.0 / 250


def test_cvr_undefined_with_zero_clicks():
    rec = TrafficRecord("P0", "P1", 100, 0, 0, 0.0)
    with pytest.raises(UndefinedSignalError):
        compute_signal(rec, Signal.CVR)


def test_signal_undefined_with_zero_impressions():
    rec = TrafficRecord("P0", "P1", 0, 0, 0, 0.0)
    with pytest.raises(UndefinedSignalError):
        compute_signal(rec, Signal.CTR)


def test_transform_identity():
    assert transform_label(0.3, Transform.IDENTITY) == 0.3


def test_transform_log_at_zero():
    assert transform_label(0.0, Transform.LOG, epsilon=1e-4) == math.log(1e-4)
    assert transform_label(0.0, Transform.LOG, epsilon=1e-4) == pytest.approx(-9.21034, abs=1e-5)


@given(
    st.floats(min_value=0.0, max_value=10.0),
    st.floats(min_value=1e-6, max_value=10.0),
    st.sampled_from([Transform.IDENTITY, Transform.LOG]),
)
def test_transform_strictly_monotone(x1, gap, transform):
    x2 = x1 + gap
    assert transform_label(x1, transform) < transform_label(x2, transform)


def test_label_spec_names():
    assert LabelSpec().name() == "pr+log"
    assert LabelSpec(signal=Signal.CTR, transform=Transform.IDENTITY).name() == "ctr"
    assert LabelSpec(task=Task.CLASSIFICATION).name() == "purchase>0"


def test_label_spec_rejects_bad_epsilon():
    with pytest.raises(ConfigError):
        LabelSpec(epsilon=0.0)


def test_label_config_rejects_bad_threshold():
    with pytest.raises(ConfigError):
        LabelConfig(min_impressions=0)


def test_default_negative_labels():
    assert default_negative_label(LabelSpec(task=Task.CLASSIFICATION)) == 0.0
    assert default_negative_label(LabelSpec()) == math.log(1e-4) - 1.0
    assert default_negative_label(
        LabelSpec(signal=Signal.PR, transform=Transform.IDENTITY)
    ) == -0.1


def test_build_drops_below_threshold():
    catalog = catalog_for("P0", "P1", "P2")
    traffic = [
        TrafficRecord("P0", "P1", 249, 5, 1, 10.0),
        TrafficRecord("P0", "P2", 250, 5, 1, 10.0),
    ]
    pairs, summary = build_labeled_pairs(traffic, catalog, LabelConfig())
    assert [p.candidate_id for p in pairs] == ["P2"]
    assert summary.n_below_threshold == 1
    assert summary.n_emitted == 1
    assert summary.n_input == 2


def test_build_zero_purchase_log_label_is_hard_negative():
    catalog = catalog_for("P0", "P1")
    traffic = [TrafficRecord("P0", "P1", 1000, 30, 0, 0.0)]
    pairs, _ = build_labeled_pairs(traffic, catalog, LabelConfig())
    [pair] = pairs
    assert pair.label == math.log(1e-4)
    assert pair.kind is PairKind.HARD_NEGATIVE
    assert pair.query_title == "title P0"
    assert pair.candidate_title == "title P1"


def test_build_classification_labels():
    catalog = catalog_for("P0", "P1", "P2")
    traffic = [
        TrafficRecord("P0", "P1", 1000, 100, 20, 200.0),
        TrafficRecord("P0", "P2", 1000, 100, 0, 0.0),
    ]
    config = LabelConfig(spec=LabelSpec(task=Task.CLASSIFICATION))
    pairs, _ = build_labeled_pairs(traffic, catalog, config)
    assert [(p.label, p.kind) for p in pairs] == [
        (1.0, PairKind.POSITIVE),
        (0.0, PairKind.HARD_NEGATIVE),
    ]


def test_build_skips_and_counts_undefined_cvr():
    catalog = catalog_for("P0", "P1", "P2")
    traffic = [
        TrafficRecord("P0", "P1", 500, 0, 0, 0.0),
        TrafficRecord("P0", "P2", 500, 10, 1, 5.0),
    ]
    config = LabelConfig(spec=LabelSpec(signal=Signal.CVR, transform=Transform.IDENTITY))
    pairs, summary = build_labeled_pairs(traffic, catalog, config)
    assert [p.candidate_id for p in pairs] == ["P2"]
    assert summary.n_undefined_signal == 1
    assert summary.n_input == summary.n_below_threshold + summary.n_undefined_signal + summary.n_emitted


counts = st.integers(min_value=250, max_value=5000).flatmap(
    lambda imp: st.integers(min_value=0, max_value=imp).flatmap(
        lambda clk: st.integers(min_value=0, max_value=clk).map(
            lambda pur: (imp, clk, pur)
        )
    )
)


@given(st.lists(counts, min_size=2, max_size=20),
       st.sampled_from([Signal.CTR, Signal.PR, Signal.GMV]),
       st.sampled_from([Transform.IDENTITY, Transform.LOG]))
def test_regression_labels_preserve_signal_order(count_list, signal, transform):
    catalog = catalog_for("Q", *[f"C{i}" for i in range(len(count_list))])
    traffic = [
        TrafficRecord("Q", f"C{i}", imp, clk, pur, float(pur) * 3.0)
        for i, (imp, clk, pur) in enumerate(count_list)
    ]
    config = LabelConfig(spec=LabelSpec(signal=signal, transform=transform))
    pairs, _ = build_labeled_pairs(traffic, catalog, config)
    by_id = {p.candidate_id: p.label for p in pairs}
    for a in traffic:
        for b in traffic:
            sa, sb = compute_signal(a, signal), compute_signal(b, signal)
            if sa < sb:
                assert by_id[a.candidate_id] <= by_id[b.candidate_id]
                if transform is Transform.IDENTITY or sb - sa > 1e-12:
                    assert by_id[a.candidate_id] < by_id[b.candidate_id]


@given(st.lists(counts, min_size=1, max_size=30), st.integers(1, 1000))
def test_every_emitted_pair_meets_threshold(count_list, min_impressions):
    catalog = catalog_for("Q", *[f"C{i}" for i in range(len(count_list))])
    traffic = [
        TrafficRecord("Q", f"C{i}", imp, clk, pur, 0.0)
        for i, (imp, clk, pur) in enumerate(count_list)
    ]
    config = LabelConfig(min_impressions=min_impressions)
    pairs, summary = build_labeled_pairs(traffic, catalog, config)
    emitted = {p.candidate_id for p in pairs}
    for rec in traffic:
        assert (rec.impressions >= min_impressions) == (rec.candidate_id in emitted)
    assert summary.n_emitted == len(pairs)
