"""Binary containers for embeddings and generated samples, plus labels CSV.

Embedding file ("PEMB", little-endian):

    magic b"PEMB", u32 version, u32 cohort_id length + UTF-8 cohort_id,
    u64 rows, u32 dim, rows*dim float32 row-major payload,
    then per-row patch refs: u32 length + UTF-8, one per row.

Sample file ("PSMP") is the same container with a source tag in place of
the cohort id and one extra u32 block after the payload: the per-sample
global prototype id, one per row, followed by the per-row refs.

Labels CSV: header `slide_id,patient_id,label` for subtyping or
`slide_id,patient_id,duration,event` for survival; one row per slide.
"""

import csv
import struct

import numpy as np

from .errors import ContractError
from .prototypes import EmbeddingCollection

PEMB_MAGIC = b"PEMB"
PSMP_MAGIC = b"PSMP"
VERSION = 1


def _write_string(f, s):
    b = s.encode("utf-8")
    f.write(struct.pack("<I", len(b)))
    f.write(b)


def _read_string(raw, off):
    (n,) = struct.unpack_from("<I", raw, off)
    off += 4
    return raw[off:off + n].decode("utf-8"), off + n


def write_pemb(path, collection):
    with open(path, "wb") as f:
        f.write(PEMB_MAGIC)
        f.write(struct.pack("<I", VERSION))
        _write_string(f, collection.cohort_id)
        f.write(struct.pack("<Q", collection.rows))
        f.write(struct.pack("<I", collection.dim))
        f.write(np.ascontiguousarray(collection.data, dtype="<f4").tobytes())
        for ref in collection.patch_refs:
            _write_string(f, ref)


def read_pemb(path):
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != PEMB_MAGIC:
        raise ContractError(f"bad embedding-file magic {raw[:4]!r}")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != VERSION:
        raise ContractError(f"unsupported embedding-file version {version}")
    cohort_id, off = _read_string(raw, 8)
    (rows,) = struct.unpack_from("<Q", raw, off)
    off += 8
    (dim,) = struct.unpack_from("<I", raw, off)
    off += 4
    data = np.frombuffer(raw, dtype="<f4", count=rows * dim, offset=off)
    off += 4 * rows * dim
    refs = []
    for _ in range(rows):
        ref, off = _read_string(raw, off)
        refs.append(ref)
    return EmbeddingCollection(
        cohort_id=cohort_id,
        data=data.astype(np.float64).reshape(rows, dim),
        patch_refs=refs,
    )


def write_psmp(path, source_tag, data, prototype_ids, refs):
    data = np.asarray(data, dtype=np.float64)
    prototype_ids = np.asarray(prototype_ids, dtype=np.uint32)
    if not (data.shape[0] == len(prototype_ids) == len(refs)):
        raise ContractError(
            f"rows mismatch: {data.shape[0]} samples, "
            f"{len(prototype_ids)} prototype ids, {len(refs)} refs"
        )
    with open(path, "wb") as f:
        f.write(PSMP_MAGIC)
        f.write(struct.pack("<I", VERSION))
        _write_string(f, source_tag)
        f.write(struct.pack("<Q", data.shape[0]))
        f.write(struct.pack("<I", data.shape[1]))
        f.write(np.ascontiguousarray(data, dtype="<f4").tobytes())
        f.write(np.ascontiguousarray(prototype_ids, dtype="<u4").tobytes())
        for ref in refs:
            _write_string(f, ref)


def read_psmp(path):
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != PSMP_MAGIC:
        raise ContractError(f"bad sample-file magic {raw[:4]!r}")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != VERSION:
        raise ContractError(f"unsupported sample-file version {version}")
    source_tag, off = _read_string(raw, 8)
    (rows,) = struct.unpack_from("<Q", raw, off)
    off += 8
    (dim,) = struct.unpack_from("<I", raw, off)
    off += 4
    data = np.frombuffer(raw, dtype="<f4", count=rows * dim, offset=off)
    off += 4 * rows * dim
    proto_ids = np.frombuffer(raw, dtype="<u4", count=rows, offset=off).copy()
    off += 4 * rows
    refs = []
    for _ in range(rows):
        ref, off = _read_string(raw, off)
        refs.append(ref)
    return source_tag, data.astype(np.float64).reshape(rows, dim), proto_ids, refs


def read_labels_csv(path):
    """Rows of the labels table as dicts; validates the header variant."""
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        fields = reader.fieldnames or []
        if fields[:2] != ["slide_id", "patient_id"]:
            raise ContractError(
                f"labels CSV must start with slide_id,patient_id; got {fields}"
            )
        subtype = "label" in fields
        survival = "duration" in fields and "event" in fields
        if not (subtype or survival):
            raise ContractError(
                "labels CSV needs either a label column or duration,event columns"
            )
        rows = []
        for rec in reader:
            row = {
                "slide_id": rec["slide_id"],
                "patient_id": rec["patient_id"] or rec["slide_id"],
            }
            if subtype:
                row["label"] = int(rec["label"])
            if survival:
                row["duration"] = float(rec["duration"])
                row["event"] = rec["event"].strip() in ("1", "true", "True")
            rows.append(row)
    return rows


def write_labels_csv(path, rows, survival=False):
    with open(path, "w", newline="") as f:
        if survival:
            writer = csv.writer(f)
            writer.writerow(["slide_id", "patient_id", "duration", "event"])
            for r in rows:
                writer.writerow(
                    [r["slide_id"], r["patient_id"], repr(r["duration"]),
                     int(r["event"])]
                )
        else:
            writer = csv.writer(f)
            writer.writerow(["slide_id", "patient_id", "label"])
            for r in rows:
                writer.writerow([r["slide_id"], r["patient_id"], r["label"]])
