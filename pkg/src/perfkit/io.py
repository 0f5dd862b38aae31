"""Binary and CSV file formats.

CTP4 (4D series):  magic ``CTP4`` | u32 version | u32 T Z Y X | f32 dt |
payload of T*Z*Y*X little-endian float32, (t, z, y, x) order, x fastest.
VOL3 (3D volume):  magic ``VOL3`` | u32 version | u32 Z Y X | payload.
Masks are VOL3 files restricted to {0.0, 1.0}. Curves are UTF-8 CSV with
header ``t_seconds,value_hu``. All writers are atomic (temp file + rename).
"""
from __future__ import annotations

import os
import struct
import tempfile

import numpy as np

from .errors import FormatError, ValidationError
from .types import CtpVolume4D, Unit, VascularFunction, VFKind, Volume3D

MAGIC_CTP4 = b"CTP4"
MAGIC_VOL3 = b"VOL3"
FORMAT_VERSION = 1
CURVE_HEADER = "t_seconds,value_hu"


def atomic_write_bytes(path, payload: bytes) -> None:
    """Write payload to path via a temp file in the same directory."""
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(prefix=".perfkit-", dir=directory)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def write_ctp4(vol: CtpVolume4D, path) -> None:
    t, z, y, x = vol.data.shape
    header = MAGIC_CTP4 + struct.pack("<IIIIIf", FORMAT_VERSION, t, z, y, x,
                                      np.float32(vol.dt_seconds))
    payload = np.ascontiguousarray(vol.data, dtype="<f4").tobytes()
    atomic_write_bytes(path, header + payload)


def read_ctp4(path) -> CtpVolume4D:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 28:
        raise FormatError(f"{path}: truncated CTP4 header")
    if blob[:4] != MAGIC_CTP4:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}, expected {MAGIC_CTP4!r}")
    version, t, z, y, x = struct.unpack("<IIIII", blob[4:24])
    (dt,) = struct.unpack("<f", blob[24:28])
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported CTP4 version {version}")
    count = t * z * y * x
    expected = 28 + 4 * count
    if len(blob) != expected:
        raise FormatError(
            f"{path}: payload holds {(len(blob) - 28) // 4} floats, "
            f"header implies {count}")
    data = np.frombuffer(blob, dtype="<f4", count=count, offset=28).reshape(t, z, y, x)
    if not np.isfinite(data).all():
        raise FormatError(f"{path}: payload contains non-finite values")
    try:
        return CtpVolume4D(data=data, dt_seconds=float(dt))
    except ValidationError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def write_vol3(vol: Volume3D, path) -> None:
    z, y, x = vol.data.shape
    header = MAGIC_VOL3 + struct.pack("<IIII", FORMAT_VERSION, z, y, x)
    payload = np.ascontiguousarray(vol.data, dtype="<f4").tobytes()
    atomic_write_bytes(path, header + payload)


def read_vol3(path, unit: Unit) -> Volume3D:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 20:
        raise FormatError(f"{path}: truncated VOL3 header")
    if blob[:4] != MAGIC_VOL3:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}, expected {MAGIC_VOL3!r}")
    version, z, y, x = struct.unpack("<IIII", blob[4:20])
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported VOL3 version {version}")
    count = z * y * x
    if len(blob) != 20 + 4 * count:
        raise FormatError(
            f"{path}: payload holds {(len(blob) - 20) // 4} floats, "
            f"header implies {count}")
    data = np.frombuffer(blob, dtype="<f4", count=count, offset=20).reshape(z, y, x)
    if not np.isfinite(data).all():
        raise FormatError(f"{path}: payload contains non-finite values")
    try:
        return Volume3D(data=data, unit=unit)
    except ValidationError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def write_mask(mask: Volume3D, path) -> None:
    if mask.unit is not Unit.BINARY:
        raise ValidationError("masks must carry the binary unit tag")
    write_vol3(mask, path)


def read_mask(path) -> Volume3D:
    return read_vol3(path, unit=Unit.BINARY)


def write_curve_csv(curve: VascularFunction, path) -> None:
    lines = [CURVE_HEADER]
    dt = curve.dt_seconds
    for i, v in enumerate(curve.values):
        lines.append(f"{i * dt!r},{float(v)!r}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_curve_csv(path, kind: VFKind) -> VascularFunction:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or lines[0] != CURVE_HEADER:
        got = lines[0] if lines else "<empty>"
        raise FormatError(f"{path}: expected header {CURVE_HEADER!r}, got {got!r}")
    times, values = [], []
    for n, line in enumerate(lines[1:], start=2):
        cells = line.split(",")
        if len(cells) != 2:
            raise FormatError(f"{path}:{n}: expected 2 columns, got {len(cells)}")
        try:
            times.append(float(cells[0]))
            values.append(float(cells[1]))
        except ValueError as exc:
            raise FormatError(f"{path}:{n}: non-numeric cell: {exc}") from exc
    if len(values) < 2:
        raise FormatError(f"{path}: need at least 2 samples, got {len(values)}")
    times = np.asarray(times)
    dt = times[1] - times[0]
    if dt <= 0:
        raise FormatError(f"{path}: time column must be strictly increasing")
    diffs = np.diff(times)
    if np.any(np.abs(diffs - dt) > 1e-6 * abs(dt)):
        worst = int(np.argmax(np.abs(diffs - dt)))
        raise FormatError(
            f"{path}: non-uniform time spacing at row {worst + 2} "
            f"(step {diffs[worst]}, expected {dt})")
    return VascularFunction(values=np.asarray(values), dt_seconds=float(dt), kind=kind)
