"""SAS Transport (XPORT) version 5 reader and writer.

The transport layout is a sequence of 80-byte records. A library header and
two "real" header records open the file; each member dataset then contributes
a member header, a descriptor header, two member-data records, a NAMESTR
header followed by one 140-byte NAMESTR entry per variable (the block padded
to an 80-byte boundary), an observation header, and finally the observation
stream padded with ASCII blanks to an 80-byte boundary.

Numeric values are stored as truncated IBM System/360 doubles: 1 sign bit,
a 7-bit base-16 exponent biased by 64, and a 56-bit hex fraction. Missing
numerics carry a sentinel byte (``.``, ``_``, or ``A``-``Z``) followed by
zeros. Character values are ASCII, blank padded on the right.

Only version 5 transport files are handled; the version 8/9 layout is
rejected explicitly.
"""
from __future__ import annotations

import math
import struct
from datetime import datetime

import numpy as np

from .tables import NUMERIC, TEXT, Column, RawTable

RECORD_LEN = 80

_LIBRARY_MAGIC = b"HEADER RECORD*******LIBRARY HEADER RECORD!!!!!!!"
_MEMBER_MAGIC = b"HEADER RECORD*******MEMBER  HEADER RECORD!!!!!!!"
_DSCRPTR_MAGIC = b"HEADER RECORD*******DSCRPTR HEADER RECORD!!!!!!!"
_NAMESTR_MAGIC = b"HEADER RECORD*******NAMESTR HEADER RECORD!!!!!!!"
_OBS_MAGIC = b"HEADER RECORD*******OBS     HEADER RECORD!!!!!!!"
_V8_MARKERS = (b"LIBV8", b"LIBV9", b"MEMBV8", b"MEMBV9")

# NAMESTR entry: type, name-hash, field length, variable number, name, label,
# format name/length/decimals/justification, filler, informat name/length/
# decimals, position in the observation record, then reserved padding.
_NAMESTR_FMT = ">hhhh8s40s8shhh2s8shhi"
_NAMESTR_USED = struct.calcsize(_NAMESTR_FMT)  # 88; rest of the entry is padding

_MONTHS = ("JAN", "FEB", "MAR", "APR", "MAY", "JUN",
           "JUL", "AUG", "SEP", "OCT", "NOV", "DEC")


class XportError(ValueError):
    """Base class for transport-file failures."""


class FormatError(XportError):
    """Header magic or record structure does not match the v5 layout."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset


class TruncationError(XportError):
    """The byte stream ends before a required record."""


class UnsupportedFormatError(XportError):
    """The file uses the version 8/9 transport layout."""


# ---------------------------------------------------------------------------
# IBM <-> IEEE floating point


def ibm_to_ieee(raw: bytes) -> float | None:
    """Decode one IBM-format double; ``None`` for a missing-value sentinel.

    Fields shorter than 8 bytes are zero-padded on the right before decoding.
    """
    if not 2 <= len(raw) <= 8:
        raise ValueError(f"numeric field must be 2-8 bytes, got {len(raw)}")
    data = raw.ljust(8, b"\x00")
    first = data[0]
    fraction = int.from_bytes(data[1:8], "big")
    if fraction == 0:
        if first == 0x2E or first == 0x5F or 0x41 <= first <= 0x5A:
            return None
        return 0.0  # includes unnormalized zeros with a stray exponent
    sign = first & 0x80
    exponent = first & 0x7F
    value = math.ldexp(fraction, 4 * (exponent - 64) - 56)
    return -value if sign else value


def ieee_to_ibm(value: float | None) -> bytes:
    """Encode a double (or ``None``/NaN missing) as 8 IBM-format bytes."""
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return b"." + b"\x00" * 7
    value = float(value)
    if not math.isfinite(value):
        raise ValueError("cannot encode non-finite value in transport format")
    if value == 0.0:
        return b"\x00" * 8
    sign = 0x80 if value < 0 else 0x00
    mantissa, exp2 = math.frexp(abs(value))  # abs(value) = mantissa * 2**exp2
    exp16 = -((-exp2) // 4)  # ceil(exp2 / 4)
    ibm_exponent = exp16 + 64
    if not 0 <= ibm_exponent <= 127:
        raise ValueError(f"value {value!r} outside the IBM-representable range")
    # Shift the 53-bit mantissa into a 56-bit hex fraction; the shift is at
    # most 3 bits so the conversion is exact.
    fraction = int(math.ldexp(mantissa, 56 + exp2 - 4 * exp16))
    return bytes([sign | ibm_exponent]) + fraction.to_bytes(7, "big")


def _decode_numeric_block(block: np.ndarray) -> np.ndarray:
    """Vectorized IBM decode of an (n, width) uint8 array; NaN for missing."""
    n, width = block.shape
    padded = np.zeros((n, 8), dtype=np.uint8)
    padded[:, :width] = block
    first = padded[:, 0].astype(np.int64)
    fraction = np.zeros(n, dtype=np.uint64)
    for k in range(1, 8):
        fraction = (fraction << np.uint64(8)) | padded[:, k].astype(np.uint64)
    exponent = first & 0x7F
    # Fractions from real data fit in 56 bits; float64 rounding here is at
    # most half an ulp, matching the scalar decoder's contract.
    values = np.ldexp(fraction.astype(np.float64), 4 * (exponent - 64) - 56)
    values[first >= 0x80] *= -1.0
    sentinel = (first == 0x2E) | (first == 0x5F) | ((first >= 0x41) & (first <= 0x5A))
    missing = (fraction == 0) & sentinel
    values[missing] = np.nan
    return values


# ---------------------------------------------------------------------------
# Reading


def parse_xport(data: bytes) -> list[RawTable]:
    """Parse a complete transport-file image into member tables.

    The ``cycle`` field of the returned tables is left empty; callers that
    know the survey period are expected to assign it.
    """
    if len(data) % RECORD_LEN != 0:
        raise TruncationError(
            f"file length {len(data)} is not a multiple of {RECORD_LEN}"
        )
    if len(data) < 3 * RECORD_LEN:
        raise TruncationError("file shorter than the library header block")
    library = data[:RECORD_LEN]
    if not library.startswith(_LIBRARY_MAGIC):
        if any(marker in library for marker in _V8_MARKERS):
            raise UnsupportedFormatError(
                "version 8/9 transport layout is not supported"
            )
        raise FormatError("library header magic mismatch", 0)

    tables: list[RawTable] = []
    pos = 3 * RECORD_LEN  # skip library header and the two real header records
    while pos < len(data):
        record = data[pos:pos + RECORD_LEN]
        if not record.startswith(_MEMBER_MAGIC):
            if any(marker in record for marker in _V8_MARKERS):
                raise UnsupportedFormatError(
                    "version 8/9 member layout is not supported"
                )
            raise FormatError("expected member header", pos)
        try:
            namestr_size = int(record[75:78])
        except ValueError as exc:
            raise FormatError("member header lacks descriptor size", pos) from exc
        pos += RECORD_LEN

        table, pos = _parse_member(data, pos, namestr_size)
        tables.append(table)
    return tables


def _require(data: bytes, pos: int, count: int, what: str) -> bytes:
    chunk = data[pos:pos + count]
    if len(chunk) < count:
        raise TruncationError(f"file ends inside {what} (offset {pos})")
    return chunk


def _parse_member(data: bytes, pos: int, namestr_size: int) -> tuple[RawTable, int]:
    record = _require(data, pos, RECORD_LEN, "descriptor header")
    if not record.startswith(_DSCRPTR_MAGIC):
        raise FormatError("expected descriptor header", pos)
    pos += RECORD_LEN

    member_data = _require(data, pos, 2 * RECORD_LEN, "member data records")
    name = member_data[8:16].decode("ascii", "replace").strip()
    pos += 2 * RECORD_LEN

    record = _require(data, pos, RECORD_LEN, "namestr header")
    if not record.startswith(_NAMESTR_MAGIC):
        raise FormatError("expected namestr header", pos)
    try:
        nvars = int(record[48:58])
    except ValueError as exc:
        raise FormatError("namestr header lacks variable count", pos) from exc
    pos += RECORD_LEN

    block_len = -(-nvars * namestr_size // RECORD_LEN) * RECORD_LEN
    block = _require(data, pos, block_len, "namestr block")
    pos += block_len
    variables = []
    for i in range(nvars):
        entry = block[i * namestr_size:(i + 1) * namestr_size]
        (vtype, _, length, varnum, vname, _label, *_rest, position) = struct.unpack(
            _NAMESTR_FMT, entry[:_NAMESTR_USED]
        )
        if vtype not in (1, 2):
            raise FormatError(f"variable {i} has unknown type {vtype}", pos)
        variables.append((
            varnum,
            vname.decode("ascii", "replace").strip(),
            NUMERIC if vtype == 1 else TEXT,
            length,
            position,
        ))
    variables.sort(key=lambda v: v[0])

    record = _require(data, pos, RECORD_LEN, "observation header")
    if not record.startswith(_OBS_MAGIC):
        raise FormatError("expected observation header", pos)
    pos += RECORD_LEN

    end = pos
    while end < len(data) and not data[end:end + RECORD_LEN].startswith(_MEMBER_MAGIC):
        end += RECORD_LEN
    rows = _decode_observations(data[pos:end], variables)

    columns = [Column(name=v[1], kind=v[2]) for v in variables]
    return RawTable(name=name, columns=columns, rows=rows), end


def _decode_observations(obs: bytes, variables: list[tuple]) -> list[tuple]:
    if not variables:
        return []
    record_len = max(v[4] + v[3] for v in variables)
    nobs = len(obs) // record_len
    # The observation stream is blank-padded to an 80-byte boundary, so a
    # trailing all-blank record is padding only if it starts inside the final
    # 80-byte block. (An all-blank record cannot be a real numeric value.)
    while nobs > 0:
        start = (nobs - 1) * record_len
        chunk = obs[start:nobs * record_len]
        if start >= len(obs) - RECORD_LEN and chunk.strip(b" ") == b"":
            nobs -= 1
        else:
            break
    if nobs == 0:
        return []

    grid = np.frombuffer(obs[:nobs * record_len], dtype=np.uint8)
    grid = grid.reshape(nobs, record_len)
    decoded: list[list] = []
    for _, _, kind, length, position in variables:
        block = grid[:, position:position + length]
        if kind == NUMERIC:
            values = _decode_numeric_block(block)
            decoded.append([None if math.isnan(v) else float(v) for v in values])
        else:
            raw = block.tobytes()
            decoded.append([
                raw[i * length:(i + 1) * length].decode("ascii", "replace").rstrip()
                for i in range(nobs)
            ])
    return [tuple(col[i] for col in decoded) for i in range(nobs)]


def load_xport(path) -> list[RawTable]:
    """Read a transport file from disk."""
    with open(path, "rb") as handle:
        return parse_xport(handle.read())


# ---------------------------------------------------------------------------
# Writing


def write_xport(
    tables: list[RawTable],
    *,
    created: datetime = datetime(2020, 1, 1, 0, 0, 0),
    sas_version: str = "9.4",
    os_name: str = "Linux",
) -> bytes:
    """Serialize tables to a version 5 transport image.

    ``created`` is embedded in the header records and defaults to a fixed
    instant so identical inputs serialize to identical bytes.
    """
    stamp = _timestamp(created)
    out = bytearray()
    out += _LIBRARY_MAGIC + b"0" * 30 + b"  "
    out += _pad80(
        b"SAS     SAS     SASLIB  "
        + _field(sas_version, 8) + _field(os_name, 8) + b" " * 24 + stamp
    )
    out += _pad80(stamp)
    for table in tables:
        out += _write_member(table, stamp, sas_version, os_name)
    return bytes(out)


def save_xport(tables: list[RawTable], path, **kwargs) -> None:
    with open(path, "wb") as handle:
        handle.write(write_xport(tables, **kwargs))


def _write_member(table: RawTable, stamp: bytes, sas_version: str, os_name: str) -> bytes:
    name = table.name.upper()
    if not 1 <= len(name) <= 8:
        raise ValueError(f"member name {table.name!r} must be 1-8 characters")
    widths = _column_widths(table)

    out = bytearray()
    out += _MEMBER_MAGIC + b"000000000000000001600000000140  "
    out += _DSCRPTR_MAGIC + b"0" * 30 + b"  "
    out += _pad80(
        b"SAS     " + _field(name, 8) + b"SASDATA "
        + _field(sas_version, 8) + _field(os_name, 8) + b" " * 24 + stamp
    )
    out += _pad80(stamp)
    out += _NAMESTR_MAGIC + b"000000" + f"{len(table.columns):04d}".encode() + b"0" * 20 + b"  "

    position = 0
    namestrs = bytearray()
    for varnum, (col, width) in enumerate(zip(table.columns, widths), start=1):
        vname = col.name.upper()
        if not 1 <= len(vname) <= 8:
            raise ValueError(f"variable name {col.name!r} must be 1-8 characters")
        entry = struct.pack(
            _NAMESTR_FMT,
            1 if col.kind == NUMERIC else 2,
            0, width, varnum,
            _field(vname, 8), _field("", 40), _field("", 8),
            0, 0, 0, b"  ", _field("", 8), 0, 0, position,
        )
        namestrs += entry + b"\x00" * (140 - _NAMESTR_USED)
        position += width
    out += _pad80(bytes(namestrs))
    out += _OBS_MAGIC + b"0" * 30 + b"  "

    obs = bytearray()
    for row in table.rows:
        for value, col, width in zip(row, table.columns, widths):
            if col.kind == NUMERIC:
                obs += ieee_to_ibm(value)
            else:
                text = "" if value is None else str(value)
                encoded = text.encode("ascii")
                if len(encoded) > width:
                    raise ValueError(f"text value too wide for column {col.name!r}")
                obs += encoded.ljust(width, b" ")
    out += _pad80(bytes(obs))
    return bytes(out)


def _column_widths(table: RawTable) -> list[int]:
    widths = []
    for col in table.columns:
        if col.kind == NUMERIC:
            widths.append(8)
            continue
        idx = table.column_index(col.name)
        longest = 1
        for row in table.rows:
            value = row[idx]
            if value is not None:
                longest = max(longest, len(str(value).encode("ascii")))
        if longest > 200:
            raise ValueError(f"text column {col.name!r} exceeds 200 bytes")
        widths.append(longest)
    return widths


def _field(text: str, width: int) -> bytes:
    encoded = text.encode("ascii")
    if len(encoded) > width:
        raise ValueError(f"{text!r} does not fit in {width} bytes")
    return encoded.ljust(width, b" ")


def _timestamp(moment: datetime) -> bytes:
    # ddMMMyy:hh:mm:ss with an uppercase month, independent of locale.
    text = (
        f"{moment.day:02d}{_MONTHS[moment.month - 1]}{moment.year % 100:02d}:"
        f"{moment.hour:02d}:{moment.minute:02d}:{moment.second:02d}"
    )
    return text.encode("ascii")


def _pad80(chunk: bytes) -> bytes:
    remainder = len(chunk) % RECORD_LEN
    if remainder:
        chunk += b" " * (RECORD_LEN - remainder)
    return chunk
