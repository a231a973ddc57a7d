"""Binary containers and report serialization.

Volume files (SVOL) hold one 3D array plus voxel spacing in a fixed
little-endian layout:

    offset  size  field
    0       4     magic "SVOL"
    4       2     format version (u16, currently 1)
    6       1     dtype code: 0 = float32, 1 = uint8
    7       1     reserved, must be 0
    8       12    dims D, H, W (3 x u32)
    20      12    spacing in mm (3 x f32)
    32      4     CRC32 of bytes 0..31
    36      -     payload, row-major, W fastest

The header checksum exists so that corruption anywhere in the header is
reported instead of yielding a plausible-looking but wrong volume.

Checkpoints (CKPT) store a named float32 tensor table plus a JSON metadata
blob; round trips are bit-exact, which the determinism tests rely on.
"""

from __future__ import annotations

import json
import os
import struct
import zlib
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, FormatError

SVOL_MAGIC = b"SVOL"
SVOL_VERSION = 1
SVOL_HEADER = struct.Struct("<4sHBB3I3f")  # checksum appended separately
SVOL_HEADER_SIZE = SVOL_HEADER.size + 4

CKPT_MAGIC = b"CKPT"
CKPT_VERSION = 1

_DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("u1")}
_CODE_FOR = {np.dtype("float32"): 0, np.dtype("uint8"): 1}

MANIFEST_FIELDS = ("id", "volume", "vessels", "myo", "split", "seed")
SPLITS = ("train", "val", "test")

REPORT_COLUMNS = ("model", "DSC", "Sensitivity", "Precision", "HD95_mm")


def _check_payload(data: np.ndarray) -> int:
    if data.ndim != 3:
        raise ConfigError(f"volume must be 3D, got shape {data.shape}")
    if data.dtype not in _CODE_FOR:
        raise ConfigError(f"volume dtype must be float32 or uint8, got {data.dtype}")
    code = _CODE_FOR[data.dtype]
    if code == 0:
        if not np.isfinite(data).all():
            raise ConfigError("volume contains non-finite values")
    else:
        bad = data[(data != 0) & (data != 1)]
        if bad.size:
            raise ConfigError(f"mask must be binary, found value {int(bad.flat[0])}")
    return code


def write_volume(path, data: np.ndarray,
                 spacing: Sequence[float] = (1.0, 1.0, 1.0)) -> None:
    data = np.ascontiguousarray(data)
    code = _check_payload(data)
    sp = tuple(float(s) for s in spacing)
    if len(sp) != 3 or any(s <= 0 or not np.isfinite(s) for s in sp):
        raise ConfigError(f"spacing must be 3 positive floats, got {spacing}")
    head = SVOL_HEADER.pack(SVOL_MAGIC, SVOL_VERSION, code, 0,
                            *(int(d) for d in data.shape), *sp)
    payload = data.astype(_DTYPE_CODES[code], copy=False).tobytes()
    with open(path, "wb") as f:
        f.write(head)
        f.write(struct.pack("<I", zlib.crc32(head)))
        f.write(payload)


def read_volume(path) -> Tuple[np.ndarray, Tuple[float, float, float]]:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < SVOL_HEADER_SIZE:
        raise FormatError(
            f"{path}: truncated header, expected {SVOL_HEADER_SIZE} bytes, "
            f"got {len(blob)}")
    head = blob[:SVOL_HEADER.size]
    magic, version, code, reserved, d, h, w, s0, s1, s2 = SVOL_HEADER.unpack(head)
    if magic != SVOL_MAGIC:
        raise FormatError(f"{path}: bad magic at byte 0: {magic!r}")
    (crc_stored,) = struct.unpack_from("<I", blob, SVOL_HEADER.size)
    if crc_stored != zlib.crc32(head):
        raise FormatError(
            f"{path}: header checksum mismatch at byte {SVOL_HEADER.size}")
    if version != SVOL_VERSION:
        raise FormatError(f"{path}: unsupported version {version} at byte 4")
    if code not in _DTYPE_CODES:
        raise FormatError(f"{path}: unknown dtype code {code} at byte 6")
    if reserved != 0:
        raise FormatError(f"{path}: reserved byte at offset 7 must be 0, got {reserved}")
    spacing = (s0, s1, s2)
    if any(s <= 0 or not np.isfinite(s) for s in spacing):
        raise FormatError(f"{path}: invalid spacing {spacing} at byte 20")
    dtype = _DTYPE_CODES[code]
    expected = d * h * w * dtype.itemsize
    actual = len(blob) - SVOL_HEADER_SIZE
    if actual != expected:
        raise FormatError(
            f"{path}: payload length mismatch at byte {SVOL_HEADER_SIZE}: "
            f"expected {expected} bytes, got {actual}")
    data = np.frombuffer(blob, dtype=dtype, count=d * h * w,
                         offset=SVOL_HEADER_SIZE).reshape(d, h, w).copy()
    if code == 1:
        bad = data[(data != 0) & (data != 1)]
        if bad.size:
            raise FormatError(
                f"{path}: mask must be binary, found value {int(bad.flat[0])}")
    return data, spacing


def save_checkpoint(path, state: Dict[str, np.ndarray],
                    meta: Optional[dict] = None) -> None:
    """Write a named float32 tensor table with a JSON metadata blob.

    Byte output is a pure function of (state, meta): iteration follows the
    given dict order and the metadata JSON is canonicalized.
    """
    meta_blob = json.dumps(meta or {}, sort_keys=True,
                           separators=(",", ":")).encode()
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(struct.pack("<H", CKPT_VERSION))
        f.write(struct.pack("<I", len(meta_blob)))
        f.write(meta_blob)
        f.write(struct.pack("<I", len(state)))
        for name, arr in state.items():
            arr = np.asarray(arr, dtype="<f4")  # 0-d stays 0-d
            nb = name.encode()
            if len(nb) > 0xFFFF:
                raise ConfigError(f"parameter name too long: {name[:40]}...")
            if arr.ndim > 0xFF:
                raise ConfigError(f"too many dims for {name}: {arr.ndim}")
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())


def load_checkpoint(path) -> Tuple[Dict[str, np.ndarray], dict]:
    with open(path, "rb") as f:
        blob = f.read()
    pos = 0

    def take(n, what):
        nonlocal pos
        if pos + n > len(blob):
            raise FormatError(
                f"{path}: truncated reading {what} at byte {pos}, "
                f"need {n} bytes, have {len(blob) - pos}")
        out = blob[pos:pos + n]
        pos += n
        return out

    if take(4, "magic") != CKPT_MAGIC:
        raise FormatError(f"{path}: bad magic at byte 0")
    (version,) = struct.unpack("<H", take(2, "version"))
    if version != CKPT_VERSION:
        raise FormatError(f"{path}: unsupported version {version} at byte 4")
    (meta_len,) = struct.unpack("<I", take(4, "metadata length"))
    try:
        meta = json.loads(take(meta_len, "metadata").decode())
    except (ValueError, UnicodeDecodeError) as e:
        raise FormatError(f"{path}: bad metadata JSON: {e}") from None
    (count,) = struct.unpack("<I", take(4, "entry count"))
    state: Dict[str, np.ndarray] = {}
    for i in range(count):
        (name_len,) = struct.unpack("<H", take(2, f"entry {i} name length"))
        name = take(name_len, f"entry {i} name").decode()
        (ndim,) = struct.unpack("<B", take(1, f"{name} ndim"))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim, f"{name} shape"))
        n = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        raw = take(4 * n, f"{name} payload")
        state[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
    if pos != len(blob):
        raise FormatError(
            f"{path}: {len(blob) - pos} unexpected trailing bytes at byte {pos}")
    return state, meta


def save_manifest(path, entries: List[dict]) -> None:
    for i, e in enumerate(entries):
        _check_entry(e, i)
    with open(path, "w") as f:
        json.dump(entries, f, indent=2, sort_keys=True)
        f.write("\n")


def _check_entry(e: dict, i: int) -> None:
    if not isinstance(e, dict):
        raise FormatError(f"manifest entry {i} is not an object")
    for k in MANIFEST_FIELDS:
        if k not in e:
            raise FormatError(f"manifest entry {i} missing field '{k}'")
    for k in e:
        if k not in MANIFEST_FIELDS:
            raise FormatError(f"manifest entry {i} has unknown field '{k}'")
    if e["split"] not in SPLITS:
        raise FormatError(
            f"manifest entry {i}: split must be one of {SPLITS}, "
            f"got '{e['split']}'")


def load_manifest(path) -> List[dict]:
    """Load and validate a dataset manifest.

    Relative volume paths are resolved against the manifest's directory;
    every referenced file must exist.
    """
    with open(path) as f:
        try:
            entries = json.load(f)
        except ValueError as e:
            raise FormatError(f"{path}: not valid JSON: {e}") from None
    if not isinstance(entries, list):
        raise FormatError(f"{path}: manifest must be a JSON list")
    base = os.path.dirname(os.path.abspath(path))
    out = []
    for i, e in enumerate(entries):
        _check_entry(e, i)
        resolved = dict(e)
        for k in ("volume", "vessels", "myo"):
            p = e[k]
            if not os.path.isabs(p):
                p = os.path.join(base, p)
            if not os.path.exists(p):
                raise FormatError(
                    f"{path}: entry {i} field '{k}' points to missing file {p}")
            resolved[k] = p
        out.append(resolved)
    return out


def save_dataset(out_dir, splits, seed: int) -> str:
    """Write phantom records as SVOL triples plus a manifest.

    `splits` maps split name -> list of VolumeRecord. Returns the manifest
    path. Output bytes depend only on the records and seed.
    """
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    for split in SPLITS:
        for rec in splits.get(split, []):
            names = {}
            for suffix, arr in (("img", rec.image), ("vessels", rec.vessels),
                                ("myo", rec.myocardium)):
                fname = f"{rec.name}_{suffix}.svol"
                write_volume(os.path.join(out_dir, fname), arr, rec.spacing)
                names[suffix] = fname
            entries.append({
                "id": rec.name,
                "volume": names["img"],
                "vessels": names["vessels"],
                "myo": names["myo"],
                "split": split,
                "seed": int(seed),
            })
    manifest_path = os.path.join(out_dir, "manifest.json")
    save_manifest(manifest_path, entries)
    return manifest_path


def _fmt(x) -> str:
    if isinstance(x, str):
        return x
    return f"{float(x):.6f}"


def save_report(path, rows: List[dict]) -> None:
    """Write a metrics report; format follows the file extension.

    Columns are exactly model, DSC, Sensitivity, Precision, HD95_mm, and
    numeric cells carry six decimals.
    """
    for i, r in enumerate(rows):
        missing = [c for c in REPORT_COLUMNS if c not in r]
        if missing:
            raise ConfigError(f"report row {i} missing column '{missing[0]}'")
    ext = os.path.splitext(str(path))[1].lower()
    if ext == ".json":
        payload = [{c: (r[c] if c == "model" else float(_fmt(r[c])))
                    for c in REPORT_COLUMNS} for r in rows]
        with open(path, "w") as f:
            json.dump(payload, f, indent=2)
            f.write("\n")
    elif ext == ".csv":
        with open(path, "w") as f:
            f.write(",".join(REPORT_COLUMNS) + "\n")
            for r in rows:
                f.write(",".join(_fmt(r[c]) for c in REPORT_COLUMNS) + "\n")
    else:
        raise ConfigError(f"report path must end in .json or .csv, got {path}")


def load_report(path) -> List[dict]:
    ext = os.path.splitext(str(path))[1].lower()
    rows: List[dict] = []
    if ext == ".json":
        with open(path) as f:
            data = json.load(f)
        for r in data:
            rows.append({c: (r[c] if c == "model" else float(r[c]))
                         for c in REPORT_COLUMNS})
    elif ext == ".csv":
        with open(path) as f:
            header = f.readline().strip().split(",")
            if tuple(header) != REPORT_COLUMNS:
                raise FormatError(f"{path}: unexpected report header {header}")
            for line in f:
                cells = line.strip().split(",")
                rows.append({c: (cells[j] if c == "model" else float(cells[j]))
                             for j, c in enumerate(REPORT_COLUMNS)})
    else:
        raise ConfigError(f"report path must end in .json or .csv, got {path}")
    return rows
