"""On-disk formats: little-endian binary containers for features,
checkpoints and score matrices, JSON for splits and reports, JSONL for
annotations, CSV for histories and curves. All writes go through a
temp-file rename so readers never observe a half-written artifact.
"""

from __future__ import annotations

import csv
import json
import os
import struct
import tempfile

import numpy as np

from .data import VideoDataset
from .errors import FormatError, InvalidInput
from .labelspace import AnnotationRecord, LabelSpace, SplitSpec

FEATURE_MAGIC = b"C2CF"
CHECKPOINT_MAGIC = b"C2CM"
SCORES_MAGIC = b"C2CS"
FORMAT_VERSION = 1


def atomic_write_bytes(path, payload):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text):
    atomic_write_bytes(path, text.encode("utf-8"))


class _Reader:
    """Byte cursor that reports the offset of the first missing byte."""

    def __init__(self, payload, label):
        self.payload = payload
        self.offset = 0
        self.label = label

    def take(self, count):
        if self.offset + count > len(self.payload):
            raise FormatError(f"truncated {self.label}", offset=self.offset)
        chunk = self.payload[self.offset:self.offset + count]
        self.offset += count
        return chunk

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]

    def f32_array(self, count):
        return np.frombuffer(self.take(4 * count), dtype="<f4").astype(np.float64)

    def u32_array(self, count):
        return np.frombuffer(self.take(4 * count), dtype="<u4").astype(np.intp)

    def done(self):
        if self.offset != len(self.payload):
            raise FormatError(f"{self.label} has trailing bytes", offset=self.offset)


def _check_magic(reader, magic):
    got = reader.take(4)
    if got != magic:
        raise FormatError(f"bad magic {got!r}, expected {magic!r}", offset=0)
    version = reader.u32()
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {version}", offset=4)


# ------------------------------------------------------------- feature file


def write_feature_file(path, dataset):
    videos = np.ascontiguousarray(dataset.videos, dtype="<f4")
    n, t, h, w, c = videos.shape
    parts = [FEATURE_MAGIC, struct.pack("<IIIIII", FORMAT_VERSION, n, t, h, w, c)]
    for i in range(n):
        parts.append(struct.pack("<II", int(dataset.verb_indices[i]),
                                 int(dataset.object_indices[i])))
        parts.append(videos[i].tobytes())
    atomic_write_bytes(path, b"".join(parts))


def read_feature_file(path):
    with open(path, "rb") as fh:
        reader = _Reader(fh.read(), "feature file")
    _check_magic(reader, FEATURE_MAGIC)
    n, t, h, w, c = (reader.u32() for _ in range(5))
    per_sample = t * h * w * c
    videos = np.empty((n, t, h, w, c))
    verbs = np.empty(n, dtype=np.intp)
    objects = np.empty(n, dtype=np.intp)
    for i in range(n):
        verbs[i] = reader.u32()
        objects[i] = reader.u32()
        videos[i] = reader.f32_array(per_sample).reshape(t, h, w, c)
    reader.done()
    return VideoDataset(videos, verbs, objects)


# -------------------------------------------------------------- checkpoint


def write_checkpoint(path, state):
    parts = [CHECKPOINT_MAGIC, struct.pack("<I", FORMAT_VERSION)]
    for name in sorted(state):
        arr = np.ascontiguousarray(state[name], dtype="<f4")
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<I", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    atomic_write_bytes(path, b"".join(parts))


def read_checkpoint(path):
    with open(path, "rb") as fh:
        reader = _Reader(fh.read(), "checkpoint")
    _check_magic(reader, CHECKPOINT_MAGIC)
    state = {}
    while reader.offset < len(reader.payload):
        name_len = reader.u32()
        name = reader.take(name_len).decode("utf-8")
        rank = reader.u32()
        dims = tuple(reader.u32() for _ in range(rank))
        count = int(np.prod(dims)) if dims else 1
        state[name] = reader.f32_array(count).reshape(dims)
    return state


# ------------------------------------------------------------- score files


def write_score_matrix(path, matrix):
    n, n_a = matrix.scores.shape
    parts = [SCORES_MAGIC, struct.pack("<III", FORMAT_VERSION, n, n_a)]
    parts.append(np.ascontiguousarray(matrix.seen_columns, dtype=np.uint8).tobytes())
    parts.append(np.ascontiguousarray(matrix.gt_columns, dtype="<u4").tobytes())
    parts.append(np.ascontiguousarray(matrix.scores, dtype="<f4").tobytes())
    atomic_write_bytes(path, b"".join(parts))


def read_score_matrix(path):
    from .evaluation import ScoreMatrix

    with open(path, "rb") as fh:
        reader = _Reader(fh.read(), "score matrix")
    _check_magic(reader, SCORES_MAGIC)
    n = reader.u32()
    n_a = reader.u32()
    seen = np.frombuffer(reader.take(n_a), dtype=np.uint8).astype(bool)
    gts = reader.u32_array(n)
    scores = reader.f32_array(n * n_a).reshape(n, n_a)
    reader.done()
    matrix = ScoreMatrix(scores=scores, seen_columns=seen, gt_columns=gts)
    matrix.validate()
    return matrix


# -------------------------------------------------------------- annotations


def read_annotations(path):
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as err:
                raise FormatError(f"annotations line {lineno}: {err}")
            try:
                records.append(AnnotationRecord(
                    sample_id=row["sample_id"], verb=row["verb"],
                    object=row["object"], split=row["split"]))
            except (KeyError, TypeError) as err:
                raise FormatError(f"annotations line {lineno}: missing key {err}")
    if not records:
        raise FormatError("annotations file holds no records")
    return records


def write_annotations(path, records):
    lines = [json.dumps({"sample_id": r.sample_id, "verb": r.verb,
                         "object": r.object, "split": r.split})
             for r in records]
    atomic_write_text(path, "\n".join(lines) + "\n")


# -------------------------------------------------------------- split JSON


def write_split(path, space, split):
    doc = {
        "verbs": list(space.verbs),
        "objects": list(space.objects),
        "compositions": [list(pair) for pair in space.compositions],
        "splits": {
            part: {
                "compositions": sorted(split.compositions(part)),
                "samples": [[sid, comp] for sid, comp in split.samples(part)],
            }
            for part in ("train", "val", "test")
        },
    }
    atomic_write_text(path, json.dumps(doc, indent=1))


def read_split(path):
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as err:
            raise FormatError(f"split document: {err}")
    try:
        space = LabelSpace(
            verbs=tuple(doc["verbs"]),
            objects=tuple(doc["objects"]),
            compositions=tuple(tuple(pair) for pair in doc["compositions"]),
        )
        parts = {
            part: (
                frozenset(doc["splits"][part]["compositions"]),
                tuple((sid, comp) for sid, comp in doc["splits"][part]["samples"]),
            )
            for part in ("train", "val", "test")
        }
    except (KeyError, TypeError) as err:
        raise FormatError(f"split document: missing key {err}")
    space.validate()
    split = SplitSpec(
        train_compositions=parts["train"][0],
        val_compositions=parts["val"][0],
        test_compositions=parts["test"][0],
        train_samples=parts["train"][1],
        val_samples=parts["val"][1],
        test_samples=parts["test"][1],
    )
    return space, split


# ------------------------------------------------------------ CSV and JSON


def write_loss_history_csv(path, history):
    from .training import LOSS_TERMS

    rows = ["epoch," + ",".join(LOSS_TERMS)]
    for epoch, report in enumerate(history):
        values = report.as_dict()
        rows.append(str(epoch) + "," + ",".join(
            "" if values[k] is None else repr(float(values[k])) for k in LOSS_TERMS))
    atomic_write_text(path, "\n".join(rows) + "\n")


def write_curve_csv(path, curve):
    rows = ["bias,seen,unseen"]
    for bias, seen, unseen in curve.points():
        rows.append(f"{float(bias)!r},{float(seen)!r},{float(unseen)!r}")
    atomic_write_text(path, "\n".join(rows) + "\n")


def read_curve_csv(path):
    from .evaluation import SweepCurve

    with open(path, "r", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["bias", "seen", "unseen"]:
        raise FormatError("curve CSV lacks the bias,seen,unseen header")
    data = np.array([[float(x) for x in row] for row in rows[1:]])
    if data.size == 0:
        raise FormatError("curve CSV holds no points")
    return SweepCurve(biases=data[:, 0], seen_accuracy=data[:, 1],
                      unseen_accuracy=data[:, 2])


def write_json(path, payload):
    atomic_write_text(path, json.dumps(payload, indent=1) + "\n")


def read_json(path):
    with open(path, "r", encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as err:
            raise FormatError(f"{path}: {err}")


def read_embeddings(path):
    """Optional word-vector import: {"verbs": {name: [..]}, "objects": {...}}."""
    doc = read_json(path)
    if not isinstance(doc, dict):
        raise FormatError("embedding file must hold an object")
    verbs = doc.get("verbs", {})
    objects = doc.get("objects", {})
    if not isinstance(verbs, dict) or not isinstance(objects, dict):
        raise FormatError("embedding file needs 'verbs' and 'objects' tables")
    return verbs, objects
