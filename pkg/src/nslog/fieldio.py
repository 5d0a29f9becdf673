"""Field snapshots (NSL1 binary) and CSV tables."""
from __future__ import annotations

import csv
import io
import os
import struct
import tempfile
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError
from .spectral import Grid, PhysField

MAGIC = b"NSL1"
VERSION = 1


def encode_field(f: PhysField) -> bytes:
    g = f.grid
    head = MAGIC + struct.pack("<IBB", VERSION, g.rank, f.ncomp)
    head += struct.pack(f"<{g.rank}Q", *g.npts)
    head += struct.pack(f"<{g.rank}d", *g.box)
    return head + np.ascontiguousarray(f.data, dtype="<f8").tobytes()


def decode_field(buf: bytes) -> PhysField:
    if len(buf) < 10 or buf[:4] != MAGIC:
        raise DataError("not an NSL1 snapshot (bad magic)")
    version, rank, ncomp = struct.unpack_from("<IBB", buf, 4)
    if version != VERSION:
        raise DataError(f"unsupported NSL1 version {version}")
    if rank not in (2, 3):
        raise DataError(f"bad rank {rank}")
    off = 10
    try:
        npts = struct.unpack_from(f"<{rank}Q", buf, off)
        off += 8 * rank
        box = struct.unpack_from(f"<{rank}d", buf, off)
        off += 8 * rank
    except struct.error as exc:
        raise DataError("truncated NSL1 header") from exc
    count = ncomp * int(np.prod(npts))
    if len(buf) - off != 8 * count:
        raise DataError(f"NSL1 payload has {len(buf) - off} bytes, expected {8 * count}")
    data = np.frombuffer(buf, dtype="<f8", count=count, offset=off).astype(float)
    if not np.all(np.isfinite(data)):
        raise DataError("NSL1 payload contains non-finite samples")
    grid = Grid(tuple(int(n) for n in npts), tuple(box))
    return PhysField(grid, data.reshape((ncomp,) + grid.npts))


def atomic_write(path, data: bytes) -> None:
    """Write via a temporary file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_field(path, f: PhysField) -> None:
    atomic_write(path, encode_field(f))


def read_field(path) -> PhysField:
    return decode_field(Path(path).read_bytes())


def _cell(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def csv_bytes(header: Sequence[str], rows: Iterable[Sequence]) -> bytes:
    """CSV with a header row; floats use ``repr`` so values round-trip exactly."""
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_cell(v) for v in row])
    return out.getvalue().encode()


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    atomic_write(path, csv_bytes(header, rows))


def read_csv(path) -> tuple:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        rows = [[float(x) for x in row] for row in r]
    return header, np.array(rows)
