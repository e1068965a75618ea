import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fairseg.core import (
    AttributeRecord,
    GroupPartition,
    LabelMask,
    SoftPrediction,
    derive_region,
    vertical_cdr,
)

from conftest import record


def ring_mask():
    labels = np.ones((4, 4), dtype=np.uint8)
    labels[1:3, 1:3] = 2
    return LabelMask(labels)


def test_background_mask_has_empty_regions():
    m = LabelMask(np.zeros((5, 7)))
    for region in ("cup", "rim", "disc"):
        assert not derive_region(m, region).any()


def test_all_rim_mask():
    m = LabelMask(np.ones((3, 3)))
    assert derive_region(m, "disc").all()
    assert not derive_region(m, "cup").any()


def test_ring_mask_counts():
    m = ring_mask()
    assert derive_region(m, "cup").sum() == 4
    assert derive_region(m, "rim").sum() == 12
    assert derive_region(m, "disc").sum() == 16


def test_unknown_region():
    with pytest.raises(ValueError, match="unknown region"):
        derive_region(ring_mask(), "vessel")


@settings(max_examples=100)
@given(arrays(np.uint8, st.tuples(st.integers(1, 12), st.integers(1, 12)), elements=st.integers(0, 2)))
def test_disc_is_rim_or_cup(labels):
    m = LabelMask(labels)
    np.testing.assert_array_equal(derive_region(m, "disc"), derive_region(m, "rim") | derive_region(m, "cup"))


def test_label_mask_rejects_bad_labels():
    with pytest.raises(ValueError):
        LabelMask(np.full((2, 2), 3))
    with pytest.raises(ValueError):
        LabelMask(np.zeros(4))


def test_label_mask_is_read_only():
    m = ring_mask()
    with pytest.raises(ValueError):
        m.labels[0, 0] = 2
    assert (m.height, m.width) == (4, 4)


def test_cdr_row_spans():
    labels = np.zeros((30, 30), dtype=np.uint8)
    labels[5:25, 8:22] = 1
    labels[10:20, 12:18] = 2
    assert vertical_cdr(LabelMask(labels)) == 0.5


def test_cdr_ignores_column_alignment():
    labels = np.zeros((30, 30), dtype=np.uint8)
    labels[5:25, 0:4] = 1
    labels[10:20, 25:28] = 2  # cup far to the side still counts by rows
    assert vertical_cdr(LabelMask(labels)) == 0.5


def test_cdr_empty_cup_and_disc():
    labels = np.zeros((10, 10), dtype=np.uint8)
    assert vertical_cdr(LabelMask(labels)) is None
    labels[2:5, 2:5] = 1
    assert vertical_cdr(LabelMask(labels)) == 0.0


def test_soft_prediction_invariants():
    SoftPrediction(np.full((2, 2, 3), 1 / 3))
    with pytest.raises(ValueError):
        SoftPrediction(np.full((2, 2, 3), 0.3))
    with pytest.raises(ValueError):
        SoftPrediction(np.array([[[1.2, -0.2, 0.0]]]))


def test_argmax_tie_breaks_to_lowest_class():
    assert (SoftPrediction(np.full((3, 3, 3), 1 / 3)).argmax().labels == 0).all()


def test_attribute_record_vocabulary():
    r = record("s1", race="black")
    assert r.group("race") == "black"
    with pytest.raises(ValueError, match="race"):
        AttributeRecord("s2", "martian", "male", "hispanic", "english", "train")
    with pytest.raises(ValueError, match="split"):
        AttributeRecord("s2", "asian", "male", "hispanic", "english", "val")


def test_partition_order_and_membership():
    recs = [record("a", race="white"), record("b", race="asian"), record("c", race="black")]
    p = GroupPartition.from_records(recs, "race")
    assert p.groups == ("asian", "black", "white")
    assert [p.group_of(s) for s in "abc"] == [2, 0, 1]
    with pytest.raises(KeyError):
        p.group_of("zzz")
    with pytest.raises(ValueError, match="duplicate"):
        GroupPartition.from_records(recs + [record("a")], "race")
