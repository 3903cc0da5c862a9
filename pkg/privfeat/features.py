"""Feature normalization and the on-disk feature formats.

Two formats are supported:

* CSV: optional ``#`` comment lines, a header ``d=<dim>[,labeled][,normalized]``
  (also accepted inside a comment line, e.g. ``# d=2``), then one row per line
  with ``d`` comma-separated decimals and a trailing integer label when
  ``labeled``.
* Binary: magic ``DPFV1``, u8 flags (bit0 labeled, bit1 normalized), u32 n,
  u32 d, n*d float64 row-major, then n int32 labels when labeled. All
  little-endian.
"""
import logging
import os
import re
import struct
from typing import Optional, Union

import numpy as np

from .base import FeatureMatrix
from .enums import FileFormat
from .exceptions import FeatureFormatError, FeatureIOError

log = logging.getLogger(__name__)

MAGIC = b"DPFV1"
FLAG_LABELED = 0x01
FLAG_NORMALIZED = 0x02
_HEADER = struct.Struct("<5sBII")

# Rows within this much of the unit sphere are left untouched, so that
# projecting a projected matrix is a no-op bit for bit.
_PROJECTION_SLACK = 1e-12

_csv_header = re.compile(r"^\s*d\s*=\s*(\d+)\s*((?:,\s*[a-z]+\s*)*)$")


def project_to_unit_ball(m: Union[FeatureMatrix, np.ndarray]) -> FeatureMatrix:
    """Replaces every row r by r / max(1, ||r||); labels are kept."""
    if not isinstance(m, FeatureMatrix):
        m = FeatureMatrix(data=m)
    norms = m.row_norms()
    scale = np.where(norms > 1.0 + _PROJECTION_SLACK, norms, 1.0)
    return FeatureMatrix(
        data=m.data / scale[:, None],
        labels=m.labels,
        normalized=True,
    )


def infer_format(path) -> FileFormat:
    ext = os.path.splitext(str(path))[1].lower()
    if ext in (".csv", ".txt"):
        return FileFormat.CSV
    return FileFormat.BINARY


def _as_format(path, fmt: Optional[Union[FileFormat, str]]) -> FileFormat:
    if fmt is None:
        return infer_format(path)
    return FileFormat(fmt)


def load_features(path, fmt: Optional[Union[FileFormat, str]] = None) -> FeatureMatrix:
    """Reads a feature file; the format is inferred from the suffix when not given."""
    fmt = _as_format(path, fmt)
    try:
        if fmt == FileFormat.CSV:
            with open(path, "r", encoding="utf-8") as f:
                text = f.read()
        else:
            with open(path, "rb") as f:
                blob = f.read()
    except OSError as err:
        raise FeatureIOError(path, err.strerror or str(err)) from err

    if fmt == FileFormat.CSV:
        m = _parse_csv(text)
    else:
        m = _parse_binary(blob)
    log.debug("loaded {0} x {1} features from {2}".format(m.n, m.d, path))
    return m


def save_features(m: FeatureMatrix, path, fmt: Optional[Union[FileFormat, str]] = None) -> None:
    fmt = _as_format(path, fmt)
    try:
        if fmt == FileFormat.CSV:
            with open(path, "w", encoding="utf-8", newline="\n") as f:
                f.write(_format_csv(m))
        else:
            with open(path, "wb") as f:
                f.write(_format_binary(m))
    except OSError as err:
        raise FeatureIOError(path, err.strerror or str(err)) from err
    log.debug("saved {0} x {1} features to {2}".format(m.n, m.d, path))


def _format_csv(m: FeatureMatrix) -> str:
    tags = ""
    if m.labeled:
        tags += ",labeled"
    if m.normalized:
        tags += ",normalized"
    lines = ["# private-feature-models feature matrix", "d={0}{1}".format(m.d, tags)]
    for i in range(m.n):
        # repr() of a float is the shortest string that reads back to the same bits
        cells = [repr(float(x)) for x in m.data[i]]
        if m.labeled:
            cells.append(str(int(m.labels[i])))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def _parse_csv(text: str) -> FeatureMatrix:
    d = None
    labeled = False
    normalized = False
    rows = []
    labels = []

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            if d is None:
                match = _csv_header.match(line.lstrip("#"))
                if match:
                    d, labeled, normalized = _read_csv_header(match, lineno)
            continue
        if d is None:
            match = _csv_header.match(line)
            if not match:
                raise FeatureFormatError("expected header 'd=<dim>[,labeled]'", line=lineno)
            d, labeled, normalized = _read_csv_header(match, lineno)
            continue

        cells = line.split(",")
        expected = d + 1 if labeled else d
        if len(cells) != expected:
            raise FeatureFormatError(
                "row has {0} cells, expected {1}".format(len(cells), expected), line=lineno
            )
        try:
            rows.append([float(c) for c in cells[:d]])
        except ValueError:
            raise FeatureFormatError("non-numeric cell", line=lineno)
        if labeled:
            try:
                labels.append(int(cells[d]))
            except ValueError:
                raise FeatureFormatError("label is not an integer", line=lineno)

    if d is None:
        raise FeatureFormatError("missing 'd=<dim>' header", line=1)

    data = np.array(rows, dtype=np.float64).reshape(len(rows), d)
    return FeatureMatrix(
        data=data,
        labels=np.array(labels, dtype=np.int64) if labeled else None,
        normalized=normalized,
    )


def _read_csv_header(match, lineno):
    d = int(match.group(1))
    tags = [t.strip() for t in match.group(2).split(",") if t.strip()]
    unknown = set(tags) - {"labeled", "normalized"}
    if unknown:
        raise FeatureFormatError("unknown header tag(s) {0}".format(sorted(unknown)), line=lineno)
    if d < 1:
        raise FeatureFormatError("dimension must be positive", line=lineno)
    return d, "labeled" in tags, "normalized" in tags


def _format_binary(m: FeatureMatrix) -> bytes:
    flags = (FLAG_LABELED if m.labeled else 0) | (FLAG_NORMALIZED if m.normalized else 0)
    parts = [
        _HEADER.pack(MAGIC, flags, m.n, m.d),
        np.ascontiguousarray(m.data, dtype="<f8").tobytes(),
    ]
    if m.labeled:
        parts.append(np.ascontiguousarray(m.labels, dtype="<i4").tobytes())
    return b"".join(parts)


def _parse_binary(blob: bytes) -> FeatureMatrix:
    if len(blob) < _HEADER.size:
        raise FeatureFormatError("file shorter than the header", offset=len(blob))
    magic, flags, n, d = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise FeatureFormatError("bad magic bytes {0!r}".format(magic), offset=0)
    if flags & ~(FLAG_LABELED | FLAG_NORMALIZED):
        raise FeatureFormatError("unknown flag bits 0x{0:02x}".format(flags), offset=5)

    labeled = bool(flags & FLAG_LABELED)
    offset = _HEADER.size
    data_bytes = n * d * 8
    label_bytes = n * 4 if labeled else 0
    expected = offset + data_bytes + label_bytes
    if len(blob) != expected:
        raise FeatureFormatError(
            "expected {0} bytes for n={1}, d={2}, found {3}".format(expected, n, d, len(blob)),
            offset=min(len(blob), expected),
        )

    data = np.frombuffer(blob, dtype="<f8", count=n * d, offset=offset).reshape(n, d)
    labels = None
    if labeled:
        labels = np.frombuffer(blob, dtype="<i4", count=n, offset=offset + data_bytes)
    return FeatureMatrix(
        data=data.astype(np.float64),
        labels=None if labels is None else labels.astype(np.int64),
        normalized=bool(flags & FLAG_NORMALIZED),
    )
