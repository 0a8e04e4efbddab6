"""Binary ``.csid`` dataset format, raw-array ingest and report files.

``.csid`` layout (all little-endian)::

    magic        4 bytes  b"CSID"
    version      u32      1
    n_samples    u32
    m            u32      subcarriers
    n_rx         u32
    n_ap         u32
    env_tag_len  u8       <= 32
    env_tag      env_tag_len bytes, UTF-8
    then per sample:
        x, y     2 x f64  meters
        csi      m*n_rx*n_ap x (re f32, im f32), ap-major, subcarrier fastest
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Sequence, TextIO

import numpy as np

from .core import Dataset, TensorDims, validate
from .errors import DataError, DimensionError, FormatError, PreconditionError

MAGIC = b"CSID"
VERSION = 1
MAX_TAG_BYTES = 32
_HEADER = struct.Struct("<4sIIIIIB")

REPORT_FIELDS = ("environment", "regime", "multiple", "method", "test_mse", "seed")


def _record_dtype(dims: TensorDims) -> np.dtype:
    return np.dtype([("label", "<f8", (2,)), ("csi", "<f4", (dims.n_entries, 2))])


def header_size(env_tag: str) -> int:
    return _HEADER.size + len(env_tag.encode("utf-8"))


def csid_size(n_samples: int, dims: TensorDims, env_tag: str) -> int:
    """Exact file size in bytes of a ``.csid`` stream."""
    return header_size(env_tag) + n_samples * (16 + 8 * dims.n_entries)


def write_csid(dataset: Dataset, dest: BinaryIO) -> int:
    """Serialize ``dataset`` to a binary sink. Returns the number of bytes written.

    CSI is stored at 32-bit precision, so only datasets whose values are
    float32-representable survive a round trip bit-exactly.
    """
    problems = validate(dataset)
    if problems:
        raise PreconditionError(f"dataset is invalid: {problems[:3]}")
    tag = dataset.env_tag.encode("utf-8")
    if len(tag) > MAX_TAG_BYTES:
        raise PreconditionError(f"env_tag is {len(tag)} bytes, max {MAX_TAG_BYTES}")
    d = dataset.dims
    head = _HEADER.pack(MAGIC, VERSION, len(dataset), d.n_subcarriers, d.n_rx, d.n_ap, len(tag)) + tag

    rec = np.empty(len(dataset), dtype=_record_dtype(d))
    rec["label"] = dataset.labels
    flat = dataset.csi.reshape(len(dataset), -1)
    rec["csi"][..., 0] = flat.real
    rec["csi"][..., 1] = flat.imag
    body = rec.tobytes()

    dest.write(head)
    dest.write(body)
    return len(head) + len(body)


def read_csid(source: BinaryIO) -> Dataset:
    """Parse a ``.csid`` stream into a :class:`Dataset` (CSI upcast to complex128)."""
    raw = source.read()
    if len(raw) < _HEADER.size:
        raise FormatError(f"stream is {len(raw)} bytes, shorter than the {_HEADER.size}-byte header")
    magic, version, n, m, n_rx, n_ap, tag_len = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    if min(m, n_rx, n_ap) == 0:
        raise FormatError(f"non-positive dims ({m}, {n_rx}, {n_ap})")
    if tag_len > MAX_TAG_BYTES:
        raise FormatError(f"env_tag_len {tag_len} exceeds {MAX_TAG_BYTES}")
    off = _HEADER.size + tag_len
    if len(raw) < off:
        raise FormatError("stream truncated inside env_tag")
    try:
        env_tag = raw[_HEADER.size:off].decode("utf-8")
    except UnicodeDecodeError as e:
        raise FormatError(f"env_tag is not UTF-8: {e}") from None

    dims = TensorDims(m, n_rx, n_ap)
    dt = _record_dtype(dims)
    expected = n * dt.itemsize
    actual = len(raw) - off
    if actual != expected:
        raise FormatError(f"payload length {actual} bytes, expected {expected} for {n} samples")
    rec = np.frombuffer(raw, dtype=dt, count=n, offset=off)

    finite = np.isfinite(rec["csi"]).reshape(n, -1).all(axis=1) & np.isfinite(rec["label"]).all(axis=1)
    if not finite.all():
        i = int(np.flatnonzero(~finite)[0])
        raise DataError(f"non-finite value in sample {i}", sample_index=i)

    pairs = rec["csi"].astype(np.float64)
    csi = (pairs[..., 0] + 1j * pairs[..., 1]).reshape(n, *dims.shape)
    return Dataset(dims, csi, rec["label"].copy(), env_tag)


def save_csid(dataset: Dataset, path: str | Path) -> int:
    with open(path, "wb") as f:
        return write_csid(dataset, f)


def load_csid(path: str | Path) -> Dataset:
    with open(path, "rb") as f:
        return read_csid(f)


# axis letters for ingest_raw: sample, ap, rx, subcarrier
_AXIS_ALIASES = {
    "n": "n", "sample": "n", "samples": "n",
    "a": "a", "ap": "a",
    "r": "r", "rx": "r", "antenna": "r",
    "m": "m", "subcarrier": "m", "sc": "m",
}


def parse_order(order: str | Sequence[str]) -> str:
    """Normalize an axis-order descriptor to a 4-letter string over ``n a r m``.

    Accepts ``"nmra"``, ``"n,m,r,a"`` or ``("sample", "subcarrier", "rx", "ap")``.
    The last axis varies fastest in the flat input.
    """
    if isinstance(order, str):
        parts = [p.strip() for p in order.split(",")] if "," in order else list(order)
    else:
        parts = list(order)
    try:
        letters = "".join(_AXIS_ALIASES[p.lower()] for p in parts)
    except KeyError as e:
        raise DimensionError(f"unknown axis name {e.args[0]!r}") from None
    if sorted(letters) != sorted("narm"):
        raise DimensionError(f"order {order!r} is not a permutation of sample/ap/rx/subcarrier")
    return letters


def ingest_raw(
    complex_values,
    labels,
    dims: TensorDims,
    env_tag: str,
    input_order: str | Sequence[str] = "narm",
) -> Dataset:
    """Build a canonical dataset from flat externally supplied arrays.

    Args:
        complex_values: flat complex sequence, or ``(K, 2)`` real ``(re, im)`` pairs.
        labels: ``(x, y)`` pairs, flat or ``(n, 2)``.
        dims: tensor dims of one sample.
        env_tag: environment tag for the result.
        input_order: axis order of the flat data, outermost first.
    """
    order = parse_order(input_order)
    vals = np.asarray(complex_values)
    if not np.iscomplexobj(vals):
        vals = vals.astype(np.float64)
        if vals.ndim != 2 or vals.shape[1] != 2:
            raise DimensionError(f"real input must be (K, 2) pairs, got shape {vals.shape}")
        vals = vals[:, 0] + 1j * vals[:, 1]
    vals = vals.astype(np.complex128).ravel()

    if vals.size % dims.n_entries:
        raise DimensionError(f"{vals.size} complex values is not a multiple of {dims.n_entries}")
    n = vals.size // dims.n_entries
    lab = np.asarray(labels, dtype=np.float64).ravel()
    if lab.size != 2 * n:
        raise DimensionError(f"labels hold {lab.size} values, expected 2*{n}")

    sizes = {"n": n, "a": dims.n_ap, "r": dims.n_rx, "m": dims.n_subcarriers}
    arr = vals.reshape([sizes[c] for c in order])
    arr = np.transpose(arr, [order.index(c) for c in "narm"])
    return Dataset(dims, np.ascontiguousarray(arr), lab.reshape(n, 2), env_tag)


@dataclass(frozen=True)
class ReportRow:
    """One cell of an experiment grid. ``test_mse`` is None for a failed cell."""

    environment: str
    regime: str
    multiple: float
    method: str
    test_mse: float | None
    seed: int

    @property
    def key(self) -> tuple:
        return (self.environment, self.regime, _fmt_multiple(self.multiple), self.method, self.seed)

    @property
    def rmse(self) -> float | None:
        return None if self.test_mse is None else math.sqrt(self.test_mse)


def _fmt_multiple(m) -> str:
    m = float(m)
    return str(int(m)) if m.is_integer() else repr(m)


def _parse_multiple(text) -> float:
    v = float(text)
    return int(v) if v.is_integer() else v


def _fmt_mse(v: float | None) -> str:
    return "" if v is None else f"{v:.6f}"


def write_report(rows: Sequence[ReportRow], dest: TextIO, fmt: str = "csv") -> int:
    """Write report rows as CSV or JSON. Returns the number of characters written."""
    if not rows:
        raise PreconditionError("report needs at least one row")
    if fmt == "csv":
        lines = [",".join(REPORT_FIELDS)]
        for r in rows:
            lines.append(",".join([
                r.environment, r.regime, _fmt_multiple(r.multiple), r.method,
                _fmt_mse(r.test_mse), str(int(r.seed)),
            ]))
        text = "\n".join(lines) + "\n"
    elif fmt == "json":
        objs = []
        for r in rows:
            mse = "null" if r.test_mse is None else _fmt_mse(r.test_mse)
            objs.append(
                "  {"
                f'"environment": {json.dumps(r.environment)}, '
                f'"regime": {json.dumps(r.regime)}, '
                f'"multiple": {_fmt_multiple(r.multiple)}, '
                f'"method": {json.dumps(r.method)}, '
                f'"test_mse": {mse}, '
                f'"seed": {int(r.seed)}'
                "}"
            )
        text = "[\n" + ",\n".join(objs) + "\n]\n"
    else:
        raise PreconditionError(f"unknown report format {fmt!r}")
    dest.write(text)
    return len(text)


def read_report(source: TextIO, fmt: str = "csv") -> list[ReportRow]:
    text = source.read()
    if fmt == "json":
        return [
            ReportRow(
                o["environment"], o["regime"], _parse_multiple(o["multiple"]), o["method"],
                None if o["test_mse"] is None else float(o["test_mse"]), int(o["seed"]),
            )
            for o in json.loads(text)
        ]
    if fmt != "csv":
        raise PreconditionError(f"unknown report format {fmt!r}")
    lines = text.splitlines()
    if not lines or lines[0] != ",".join(REPORT_FIELDS):
        raise FormatError("report CSV header mismatch")
    rows = []
    for line in lines[1:]:
        if not line:
            continue
        env, regime, mult, method, mse, seed = line.split(",")
        rows.append(ReportRow(env, regime, _parse_multiple(mult), method,
                              float(mse) if mse else None, int(seed)))
    return rows


def report_format(path: str | Path) -> str:
    return "json" if str(path).lower().endswith(".json") else "csv"

