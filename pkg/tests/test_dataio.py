import struct

import numpy as np
import pytest

from fairseg.core import ATTRIBUTE_GROUPS, AttributeRecord, LabelMask
from fairseg import dataio
import malformed
from fairseg.dataio import (
    BadMagicError,
    CategoryError,
    ClassCountError,
    ColumnError,
    DimensionLimitError,
    DuplicateIdError,
    HeaderError,
    LabelRangeError,
    NormalizationError,
    PayloadSizeError,
    ProbabilityRangeError,
    decode_attributes,
    decode_image,
    decode_mask,
    decode_pred,
    encode_attributes,
    encode_image,
    encode_mask,
    encode_pred,
)

HEADER = "id,race,gender,ethnicity,language,split\n"


def random_probs(rng, h, w):
    raw = rng.random((h, w, 3)).astype(np.float32) + np.float32(1e-3)
    return raw / raw.sum(axis=-1, keepdims=True)


def random_records(rng, n):
    out = []
    for i in range(n):
        values = {a: g[rng.integers(len(g))] for a, g in ATTRIBUTE_GROUPS.items()}
        out.append(AttributeRecord(f"r{i}-{rng.integers(1 << 30)}", split=("train", "test")[rng.integers(2)], **values))
    return out


def test_one_pixel_mask_bytes():
    data = encode_mask(LabelMask(np.array([[2]])))
    assert data == b"P5\n1 1\n255\n\x02"
    assert decode_mask(data).labels.tolist() == [[2]]


def test_image_quantisation_round_trip():
    img = np.array([[0.0, 0.5, 1.0]])
    out = decode_image(encode_image(img))
    np.testing.assert_array_equal(out, np.array([[0, 128, 255]]) / 255)
    assert encode_image(out) == encode_image(img)


def test_pgm_header_with_comment():
    data = b"P5\n# made by hand\n2 1\n255\n\x01\x00"
    assert decode_mask(data).labels.tolist() == [[1, 0]]


@pytest.mark.parametrize("data, error", malformed.MASKS)
def test_bad_masks(data, error):
    with pytest.raises(error) as info:
        decode_mask(data)
    assert info.value.code == error.code


def test_label_error_names_offset():
    with pytest.raises(LabelRangeError) as info:
        decode_mask(b"P5\n3 1\n255\n\x00\x01\x07")
    assert info.value.offset == 2 and info.value.field == "label"


def test_pred_layout():
    probs = np.array([[[0.25, 0.25, 0.5]]], dtype=np.float32)
    data = encode_pred(probs)
    assert data == b"FSPRED1\n1 1 3\n" + struct.pack("<3f", 0.25, 0.25, 0.5)
    np.testing.assert_array_equal(decode_pred(data), probs)


@pytest.mark.parametrize("data, error", malformed.PREDS)
def test_bad_preds(data, error):
    with pytest.raises(error) as info:
        decode_pred(data)
    assert info.value.code == error.code


def test_pred_sum_point_nine_rejected():
    with pytest.raises(NormalizationError, match="normali|sums"):
        encode_pred(np.array([[[0.3, 0.3, 0.3]]]))


def test_attribute_row_parses():
    (r,) = decode_attributes(HEADER + "s1,black,female,hispanic,english,train\n")
    assert r == AttributeRecord("s1", "black", "female", "hispanic", "english", "train")


def test_unknown_race_names_column():
    with pytest.raises(CategoryError) as info:
        decode_attributes(HEADER + "s1,martian,female,hispanic,english,train\n")
    assert info.value.field == "race" and info.value.code == "unknown_category"


@pytest.mark.parametrize("text, error, field", malformed.ATTRIBUTES)
def test_bad_attribute_tables(text, error, field):
    with pytest.raises(error) as info:
        decode_attributes(text)
    assert info.value.field == field


def test_required_column():
    with pytest.raises(ColumnError) as info:
        decode_attributes("id,gender,ethnicity,language,split\n", required=("race",))
    assert info.value.field == "race"


def test_error_codes_distinct():
    classes = [
        BadMagicError, HeaderError, DimensionLimitError, PayloadSizeError, LabelRangeError,
        ProbabilityRangeError, NormalizationError, ClassCountError, DuplicateIdError, CategoryError, ColumnError,
    ]
    assert len({c.code for c in classes}) == len(classes)


def test_round_trips_random(rng):
    for _ in range(100):
        h, w = rng.integers(1, 12, 2)
        mask = LabelMask(rng.integers(0, 3, (h, w)))
        data = encode_mask(mask)
        assert encode_mask(decode_mask(data)) == data
        np.testing.assert_array_equal(decode_mask(data).labels, mask.labels)
        probs = random_probs(rng, h, w)
        pdata = encode_pred(probs)
        assert encode_pred(decode_pred(pdata)) == pdata
        np.testing.assert_array_equal(decode_pred(pdata), probs)
        recs = random_records(rng, int(rng.integers(0, 6)))
        text = encode_attributes(recs)
        assert decode_attributes(text) == recs
        assert encode_attributes(decode_attributes(text)) == text


def test_dataset_directory(tmp_path):
    from fairseg.synth import SynthConfig, generate

    images, masks, records = generate(SynthConfig(n_samples=5, image_size=(48, 48), disc_radius=(8, 10), center_jitter=4))
    dataio.write_dataset(tmp_path, images, masks, records, visual=True)
    imgs2, masks2, recs2 = dataio.load_dataset(tmp_path)
    assert recs2 == records
    for a, b in zip(images, imgs2):
        np.testing.assert_array_equal(a, b)
    for a, b in zip(masks, masks2):
        np.testing.assert_array_equal(a.labels, b.labels)
    assert (tmp_path / "masks_visual" / f"{records[0].id}.pgm").exists()
