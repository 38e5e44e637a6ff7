"""Transport-format reader/writer tests.

The IBM floating-point vectors are hand-encoded from the format layout
(sign bit, 7-bit base-16 exponent biased by 64, 56-bit hex fraction) before
any decoder existed, and the reader is additionally cross-checked against
pandas' independent transport parser.
"""
import io
import math

import numpy as np
import pandas as pd
import pytest

from riskscreen.tables import Column, RawTable
from riskscreen.xport import (
    FormatError,
    TruncationError,
    UnsupportedFormatError,
    ibm_to_ieee,
    ieee_to_ibm,
    parse_xport,
    write_xport,
)

# value -> IBM bytes, worked out by hand from the field layout
IBM_VECTORS = {
    1.0: bytes.fromhex("4110000000000000"),
    -1.0: bytes.fromhex("c110000000000000"),
    0.0: bytes.fromhex("0000000000000000"),
    2.0: bytes.fromhex("4120000000000000"),
    16.0: bytes.fromhex("4210000000000000"),
    0.5: bytes.fromhex("4080000000000000"),
    -3.0: bytes.fromhex("c130000000000000"),
}


def make_table(name="DEMO", rows=None, cycle=""):
    columns = [Column("SEQN", "numeric"), Column("VALUE", "numeric"), Column("TAG", "text")]
    if rows is None:
        rows = [(1.0, 2.5, "a"), (2.0, None, "bc"), (3.0, -0.125, "")]
    return RawTable(name=name, columns=columns, rows=rows, cycle=cycle)


class TestIbmFloat:
    def test_hand_encoded_vectors_decode(self):
        for value, raw in IBM_VECTORS.items():
            assert ibm_to_ieee(raw) == value

    def test_hand_encoded_vectors_encode(self):
        for value, raw in IBM_VECTORS.items():
            assert ieee_to_ibm(value) == raw

    def test_missing_sentinels(self):
        for first in (b".", b"_", b"A", b"Z"):
            assert ibm_to_ieee(first + b"\x00" * 7) is None

    def test_missing_encodes_as_dot(self):
        assert ieee_to_ibm(None) == b"." + b"\x00" * 7
        assert ieee_to_ibm(float("nan")) == b"." + b"\x00" * 7

    def test_short_field_zero_padded(self):
        assert ibm_to_ieee(bytes.fromhex("4110")) == 1.0

    def test_round_trip_is_exact_for_doubles(self):
        rng = np.random.RandomState(20)
        values = np.concatenate([
            rng.standard_normal(200) * 10.0 ** rng.randint(-6, 7, 200),
            np.array([1e-30, 1e30, math.pi, -math.e, 6.5, 126.0]),
        ])
        for value in values:
            assert ibm_to_ieee(ieee_to_ibm(float(value))) == float(value)

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            ieee_to_ibm(float("inf"))


class TestParseErrors:
    def test_bad_library_magic_names_offset(self):
        with pytest.raises(FormatError, match="offset 0"):
            parse_xport(b"X" * 240)

    def test_truncated_stream(self):
        good = write_xport([make_table()])
        with pytest.raises(TruncationError):
            parse_xport(good[:-7])

    def test_truncated_member(self):
        good = write_xport([make_table()])
        # cut inside the namestr block, at a record boundary
        with pytest.raises((TruncationError, FormatError)):
            parse_xport(good[:400])

    def test_v8_layout_rejected(self):
        header = b"HEADER RECORD*******LIBV8   HEADER RECORD!!!!!!!".ljust(80, b"0")
        with pytest.raises(UnsupportedFormatError):
            parse_xport(bytes(header) + b" " * 160)

    def test_member_header_expected(self):
        good = write_xport([make_table()])
        mangled = good[:240] + b"Y" * 80 + good[240:]
        with pytest.raises(FormatError, match="member"):
            parse_xport(mangled)


class TestRoundTrip:
    def test_single_member(self):
        table = make_table()
        parsed = parse_xport(write_xport([table]))
        assert len(parsed) == 1
        out = parsed[0]
        assert out.name == "DEMO"
        assert [c.name for c in out.columns] == ["SEQN", "VALUE", "TAG"]
        assert [c.kind for c in out.columns] == ["numeric", "numeric", "text"]
        assert out.rows == table.rows

    def test_multiple_members(self):
        t1 = make_table("DEMO")
        t2 = RawTable(
            name="BMX",
            columns=[Column("SEQN", "numeric"), Column("BMXBMI", "numeric")],
            rows=[(1.0, 27.5), (2.0, 31.25)],
        )
        parsed = parse_xport(write_xport([t1, t2]))
        assert [t.name for t in parsed] == ["DEMO", "BMX"]
        assert parsed[1].rows == t2.rows

    def test_empty_table(self):
        table = RawTable(name="EMPTY", columns=[Column("X", "numeric")], rows=[])
        parsed = parse_xport(write_xport([table]))
        assert parsed[0].rows == []

    def test_integers_value_exact(self):
        rows = [(float(i), float(i * 1000 - 5), str(i)) for i in range(1, 60)]
        parsed = parse_xport(write_xport([make_table(rows=rows)]))
        assert parsed[0].rows == rows

    def test_reals_within_one_ulp(self):
        rng = np.random.RandomState(7)
        values = rng.standard_normal(257) * 10.0 ** rng.randint(-8, 9, 257)
        rows = [(float(i), float(v), "") for i, v in enumerate(values)]
        parsed = parse_xport(write_xport([make_table(rows=rows)]))
        for (_, expected, _), (_, got, _) in zip(rows, parsed[0].rows):
            assert abs(got - expected) <= math.ulp(expected)

    def test_row_count_not_divisible_by_record(self):
        # 3 columns * 8ish bytes per row never aligns with 80; padding rows
        # must not leak in.
        for n in (1, 2, 5, 9, 10, 11):
            rows = [(float(i), 0.25 * i, "t") for i in range(n)]
            parsed = parse_xport(write_xport([make_table(rows=rows)]))
            assert len(parsed[0].rows) == n


class TestPandasCrossCheck:
    def test_agrees_with_pandas_reader(self):
        table = make_table(rows=[(1.0, 1.5, "ab"), (2.0, None, "c"), (3.0, 1e6, "")])
        blob = write_xport([table])
        frame = pd.read_sas(io.BytesIO(blob), format="xport")
        assert list(frame.columns) == ["SEQN", "VALUE", "TAG"]
        assert frame["SEQN"].tolist() == [1.0, 2.0, 3.0]
        assert frame["VALUE"][0] == 1.5
        assert math.isnan(frame["VALUE"][1])
        assert frame["VALUE"][2] == 1e6
        tags = [
            t.decode() if isinstance(t, bytes) else t for t in frame["TAG"].tolist()
        ]
        assert [t.strip() for t in tags] == ["ab", "c", ""]
