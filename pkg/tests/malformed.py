"""Malformed inputs for each on-disk format, paired with the error they must raise."""

import numpy as np

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
)

HEADER = "id,race,gender,ethnicity,language,split\n"


def pred_bytes(values, h=1, w=1, k=3):
    return b"FSPRED1\n%d %d %d\n" % (h, w, k) + np.asarray(values, "<f4").tobytes()


MASKS = [
    (b"P2\n1 1\n255\n\x00", BadMagicError),
    (b"P5\n1 x\n255\n\x00", HeaderError),
    (b"P5\n1 1\n65535\n\x00\x00", HeaderError),
    (b"P5\n1 1\n255", HeaderError),
    (b"P5\n2 2\n255\n\x00\x00\x00", PayloadSizeError),
    (b"P5\n20000 1\n255\n", DimensionLimitError),
    (b"P5\n0 1\n255\n", DimensionLimitError),
    (b"P5\n2 1\n255\n\x01\x03", LabelRangeError),
]

PREDS = [
    (b"FSPRED2\n1 1 3\n" + b"\x00" * 12, BadMagicError),
    (b"FSPRED1\n1 1\n" + b"\x00" * 12, HeaderError),
    (b"FSPRED1\n1 1 3" + b"\x00" * 12, HeaderError),
    (pred_bytes([0.5, 0.5, 0.0, 0.0]), PayloadSizeError),
    (pred_bytes([0.5, 0.5], k=2), ClassCountError),
    (pred_bytes([0.3, 0.3, 0.3]), NormalizationError),
    (pred_bytes([1.5, -0.5, 0.0]), ProbabilityRangeError),
    (pred_bytes([np.nan, 0.5, 0.5]), ProbabilityRangeError),
    (b"FSPRED1\n99999 1 3\n", DimensionLimitError),
]

# (text, error, offending field)
ATTRIBUTES = [
    (HEADER + "s1,asian,male,hispanic,english,train\ns1,white,male,hispanic,english,test\n", DuplicateIdError, "id"),
    ("id,race,gender,ethnicity,split\n", ColumnError, "language"),
    (HEADER + "s1,asian,male,hispanic,english\n", ColumnError, "row"),
    (HEADER + "s1,asian,male,hispanic,english,valid\n", CategoryError, "split"),
    (HEADER + "s1,asian,nonbinary,hispanic,english,train\n", CategoryError, "gender"),
    (HEADER + "s1,martian,female,hispanic,english,train\n", CategoryError, "race"),
    ("", ColumnError, "header"),
]
