"""Classification accuracy of exact versus approximate models."""

from __future__ import annotations

import csv
import gzip
import hashlib
import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .engine import FixedPointFormat, infer_multiplierless_batch, infer_reference_batch
from .model import NetworkModel

__all__ = [
    "DatasetError",
    "LabeledDataset",
    "EvalReport",
    "load_idx",
    "read_idx",
    "write_idx",
    "read_pgm",
    "write_pgm",
    "preprocess",
    "evaluate",
    "evaluate_scores",
    "compare",
    "relative_table",
    "roc_points",
]

_IDX_TYPES = {
    0x08: np.dtype(">u1"),
    0x09: np.dtype(">i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}


class DatasetError(ValueError):
    pass


def _open(path):
    path = Path(path)
    data = path.read_bytes()
    if data[:2] == b"\x1f\x8b":
        data = gzip.decompress(data)
    return data


def read_idx(path) -> np.ndarray:
    """Array stored in an IDX container (optionally gzip-compressed)."""
    data = _open(path)
    if len(data) < 4:
        raise DatasetError(f"{path}: truncated header at byte {len(data)}")
    zero, dtype_code, ndim = struct.unpack(">HBB", data[:4])
    if zero != 0 or dtype_code not in _IDX_TYPES:
        raise DatasetError(f"{path}: bad magic number 0x{data[:4].hex()}")
    head = 4 + 4 * ndim
    if len(data) < head:
        raise DatasetError(f"{path}: truncated header at byte {len(data)}")
    dims = struct.unpack(f">{ndim}I", data[4:head])
    dtype = _IDX_TYPES[dtype_code]
    need = head + int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    if len(data) < need:
        raise DatasetError(f"{path}: truncated payload, expected {need} bytes but file ends at byte {len(data)}")
    return np.frombuffer(data, dtype=dtype, count=int(np.prod(dims)), offset=head).reshape(dims).astype(dtype.newbyteorder("="))


def write_idx(path, array: np.ndarray, compress: bool | None = None) -> None:
    array = np.asarray(array)
    codes = {v.newbyteorder("=").str: k for k, v in _IDX_TYPES.items()}
    key = array.dtype.newbyteorder("=").str
    if array.dtype == np.uint8:
        code = 0x08
    elif key in codes:
        code = codes[key]
    else:
        raise DatasetError(f"dtype {array.dtype} has no IDX code")
    payload = struct.pack(">HBB", 0, code, array.ndim) + struct.pack(f">{array.ndim}I", *array.shape)
    payload += array.astype(_IDX_TYPES[code]).tobytes()
    path = Path(path)
    if compress is None:
        compress = path.suffix == ".gz"
    if compress:
        # fixed mtime keeps the file byte-identical across runs
        payload = gzip.compress(payload, mtime=0)
    path.write_bytes(payload)


def read_pgm(path) -> np.ndarray:
    """8-bit grayscale binary (P5) or ASCII (P2) PGM as a ``uint8`` array."""
    data = Path(path).read_bytes()
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DatasetError(f"{path}: truncated PGM header at byte {pos}")
        tokens.append(data[start:pos])
    magic, w, h, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval > 255:
        raise DatasetError(f"{path}: only 8-bit PGM is supported")
    if magic == b"P5":
        body = data[pos + 1 : pos + 1 + w * h]
        if len(body) < w * h:
            raise DatasetError(f"{path}: truncated PGM payload at byte {pos + 1 + len(body)}")
        return np.frombuffer(body, dtype=np.uint8).reshape(h, w).copy()
    if magic == b"P2":
        vals = [int(t) for t in data[pos:].split()]
        if len(vals) < w * h:
            raise DatasetError(f"{path}: truncated PGM payload")
        return np.array(vals[: w * h], dtype=np.uint8).reshape(h, w)
    raise DatasetError(f"{path}: bad PGM magic {magic!r}")


def write_pgm(path, image: np.ndarray) -> None:
    image = np.asarray(image, dtype=np.uint8)
    h, w = image.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + image.tobytes())


def preprocess(images: np.ndarray, shape: tuple[int, int] | None = None) -> np.ndarray:
    """Zero-pad (or centre-crop) 8-bit images to ``shape``, then map pixels to ``[-1, 1]``.

    Padding uses raw pixel value 0, i.e. background, so it maps to -1.
    """
    raw = np.asarray(images, dtype=float)
    if raw.ndim == 2:
        raw = raw[None]
    if shape is not None:
        th, tw = shape
        n, h, w = raw.shape
        out = np.zeros((n, th, tw))
        # crop offsets into the source, pad offsets into the target
        sy, sx = max(0, (h - th) // 2), max(0, (w - tw) // 2)
        ty, tx = max(0, (th - h) // 2), max(0, (tw - w) // 2)
        ch, cw = min(h, th), min(w, tw)
        out[:, ty : ty + ch, tx : tx + cw] = raw[:, sy : sy + ch, sx : sx + cw]
        raw = out
    return raw / 127.5 - 1.0


@dataclass
class LabeledDataset:
    images: np.ndarray  # (n, h, w) preprocessed
    labels: np.ndarray  # (n,) int
    class_count: int
    name: str = ""

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.images) != len(self.labels):
            raise DatasetError(f"{len(self.images)} images but {len(self.labels)} labels")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise DatasetError("label outside [0, class_count)")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.labels).tobytes())
        h.update(np.ascontiguousarray(self.images, dtype=np.float64).tobytes())
        return h.hexdigest()[:16]

    def subset(self, count: int) -> "LabeledDataset":
        return LabeledDataset(self.images[:count], self.labels[:count], self.class_count, self.name)


def load_idx(images_path, labels_path, shape: tuple[int, int] | None = (32, 32), class_count: int | None = None) -> LabeledDataset:
    """Read an image/label IDX pair; pixels go to ``[-1, 1]``, 28x28 is padded to ``shape``."""
    raw = read_idx(images_path)
    labels = read_idx(labels_path)
    if raw.ndim != 3:
        raise DatasetError(f"{images_path}: expected a 3-D image array, got {raw.ndim}-D")
    if labels.ndim != 1:
        raise DatasetError(f"{labels_path}: expected a 1-D label array")
    if len(raw) != len(labels):
        raise DatasetError(f"{len(raw)} images but {len(labels)} labels")
    classes = class_count if class_count is not None else int(labels.max()) + 1 if labels.size else 0
    return LabeledDataset(preprocess(raw, shape), labels.astype(np.int64), classes, Path(images_path).name)


# --------------------------------------------------------------------------
# metrics
# --------------------------------------------------------------------------


def roc_points(scores: np.ndarray, positives: np.ndarray) -> list[tuple[float, float, float]]:
    """``(threshold, fpr, tpr)`` for every distinct score, predicting positive when ``score >= threshold``."""
    scores = np.asarray(scores, dtype=float)
    positives = np.asarray(positives, dtype=bool)
    n_pos = int(positives.sum())
    n_neg = positives.size - n_pos
    thresholds = np.unique(scores)
    pos_sorted = np.sort(scores[positives])
    neg_sorted = np.sort(scores[~positives])
    out = []
    for t in thresholds:
        tp = n_pos - int(np.searchsorted(pos_sorted, t, side="left"))
        fp = n_neg - int(np.searchsorted(neg_sorted, t, side="left"))
        out.append((float(t), fp / n_neg if n_neg else 0.0, tp / n_pos if n_pos else 0.0))
    return out


@dataclass
class EvalReport:
    accuracy: float
    topk_accuracy: float
    k: int
    sample_count: int
    correct: int
    topk_correct: int
    dataset: str
    model: str
    scheme: str = "Exact"
    activation: str = "Exact"
    roc: dict = field(default_factory=dict)  # class -> [(threshold, fpr, tpr)]
    relative_accuracy: float | None = None
    relative_topk_accuracy: float | None = None

    def relative_to(self, baseline: "EvalReport") -> "EvalReport":
        if baseline.dataset != self.dataset:
            raise DatasetError("reports come from different datasets")
        rel = self.correct / baseline.correct if baseline.correct else float("nan")
        rel_k = self.topk_correct / baseline.topk_correct if baseline.topk_correct else float("nan")
        out = EvalReport(**{**self.__dict__})
        out.relative_accuracy = rel
        out.relative_topk_accuracy = rel_k
        return out

    def to_dict(self, with_roc: bool = True) -> dict:
        doc = dict(self.__dict__)
        if with_roc:
            doc["roc"] = {str(c): [list(p) for p in pts] for c, pts in self.roc.items()}
        else:
            doc.pop("roc")
        return doc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1) + "\n"

    @classmethod
    def from_dict(cls, doc: dict) -> "EvalReport":
        doc = dict(doc)
        doc["roc"] = {int(c): [tuple(p) for p in pts] for c, pts in doc.get("roc", {}).items()}
        return cls(**doc)

    def roc_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["class", "threshold", "fpr", "tpr"])
        for c in sorted(self.roc):
            for t, fpr, tpr in self.roc[c]:
                writer.writerow([c, repr(t), repr(fpr), repr(tpr)])
        return buf.getvalue()


def evaluate_scores(
    scores: np.ndarray,
    labels: np.ndarray,
    k: int = 1,
    dataset: str = "",
    model: str = "",
    with_roc: bool = True,
) -> EvalReport:
    """Metrics from an ``(n, classes)`` score matrix. Argmax ties go to the lower class index."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=np.int64)
    n, classes = scores.shape
    if len(labels) != n:
        raise DatasetError("score and label counts differ")
    k = max(1, min(k, classes))
    pred = np.argmax(scores, axis=1)
    correct = int(np.sum(pred == labels))
    # rank of the true class: strictly better scores, plus equal scores at lower index
    true = scores[np.arange(n), labels]
    better = np.sum(scores > true[:, None], axis=1)
    ties_before = np.sum((scores == true[:, None]) & (np.arange(classes)[None, :] < labels[:, None]), axis=1)
    topk = int(np.sum(better + ties_before < k))
    roc = {}
    if with_roc:
        for c in range(classes):
            roc[c] = roc_points(scores[:, c], labels == c)
    return EvalReport(
        accuracy=correct / n if n else 0.0,
        topk_accuracy=topk / n if n else 0.0,
        k=k,
        sample_count=n,
        correct=correct,
        topk_correct=topk,
        dataset=dataset,
        model=model,
        roc=roc,
    )


def evaluate(
    model: NetworkModel,
    dataset: LabeledDataset,
    k: int = 1,
    engine: str = "reference",
    fmt: FixedPointFormat | None = None,
    batch_size: int = 250,
    with_roc: bool = True,
) -> EvalReport:
    if model.output_size != dataset.class_count:
        raise DatasetError(f"model has {model.output_size} outputs but the dataset has {dataset.class_count} classes")
    run: Callable
    if engine == "reference":
        run = lambda b: infer_reference_batch(model, b)  # noqa: E731
    elif engine == "multiplierless":
        run = lambda b: infer_multiplierless_batch(model, b, fmt)[0]  # noqa: E731
    else:
        raise ValueError(f"unknown engine {engine!r}")
    parts = [run(dataset.images[i : i + batch_size]) for i in range(0, len(dataset), batch_size)]
    scores = np.concatenate(parts, axis=0) if parts else np.zeros((0, dataset.class_count))
    report = evaluate_scores(scores, dataset.labels, k, dataset.fingerprint, model.name, with_roc)
    report.scheme = model.meta.get("scheme") or "Exact"
    report.activation = _activation_label(model)
    return report


def _activation_label(model: NetworkModel) -> str:
    act = model.meta.get("activation")
    if act:
        return str(act)
    return str(model.layers[0].activation)


def compare(exact: EvalReport, approx: Sequence[EvalReport]) -> list[EvalReport]:
    """Attach relative accuracies (approximate / exact) to every report."""
    return [r.relative_to(exact) for r in approx]


def relative_table(
    exact: EvalReport,
    approx: Sequence[EvalReport],
    rows: Sequence[str] | None = None,
    columns: Sequence[str] | None = None,
    fmt: str = "csv",
) -> str:
    """Grid of relative accuracies: one row per scheme, one column per activation kind."""
    rel = compare(exact, approx)
    cells = {(r.scheme, r.activation): r.relative_accuracy for r in rel}
    rows = list(rows) if rows is not None else list(dict.fromkeys(r.scheme for r in rel))
    columns = list(columns) if columns is not None else list(dict.fromkeys(r.activation for r in rel))

    def cell(r, c):
        v = cells.get((r, c))
        return "" if v is None else f"{v:.4f}"

    body = [[r, *[cell(r, c) for c in columns]] for r in rows]
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["", *columns])
        writer.writerows(body)
        return buf.getvalue()
    if fmt in ("md", "markdown"):
        lines = ["| | " + " | ".join(columns) + " |", "|" + "---|" * (len(columns) + 1)]
        lines += ["| " + " | ".join(row) + " |" for row in body]
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown table format {fmt!r}")
