"""Dataset handles and loaders (IDX, CSV, synthetic blobs, bundled 8x8 digits)."""

from __future__ import annotations

import csv
import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError
from .nn import Batch

IDX_IMAGES_MAGIC = 2051
IDX_LABELS_MAGIC = 2049


@dataclass
class Dataset:
    inputs: np.ndarray  # N x D float64
    labels: np.ndarray  # N int64
    ids: np.ndarray  # N int64, stable sample identifiers
    num_classes: int

    def __post_init__(self):
        self.inputs = np.ascontiguousarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.ids = np.asarray(self.ids, dtype=np.int64)
        if not (len(self.inputs) == len(self.labels) == len(self.ids)):
            raise ValueError("inputs, labels and ids must have equal length")

    def __len__(self):
        return len(self.labels)

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    def subset(self, index) -> Dataset:
        index = np.asarray(index)
        return Dataset(self.inputs[index], self.labels[index], self.ids[index], self.num_classes)

    def as_batch(self) -> Batch:
        return Batch(self.inputs, self.labels, self.ids)

    def split(self, test_fraction=0.25, seed=0) -> tuple[Dataset, Dataset]:
        """Stratified, seed-determined train/test split."""
        rng = np.random.default_rng(seed)
        test_idx = []
        for c in range(self.num_classes):
            members = np.flatnonzero(self.labels == c)
            members = members[rng.permutation(len(members))]
            test_idx.extend(members[: int(round(len(members) * test_fraction))])
        mask = np.zeros(len(self), dtype=bool)
        mask[np.asarray(test_idx, dtype=np.int64)] = True
        return self.subset(np.flatnonzero(~mask)), self.subset(np.flatnonzero(mask))


def _open(path: Path):
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def read_idx(path) -> np.ndarray:
    """Read an IDX file (big-endian header, unsigned-byte payload)."""
    path = Path(path)
    with _open(path) as f:
        raw = f.read()
    if len(raw) < 4:
        raise FormatError(f"{path}: truncated header at byte offset 0")
    zero, dtype_code, ndim = struct.unpack(">HBB", raw[:4])
    if zero != 0 or dtype_code != 0x08 or ndim == 0:
        raise FormatError(f"{path}: bad magic 0x{raw[:4].hex()} at byte offset 0")
    header_end = 4 + 4 * ndim
    if len(raw) < header_end:
        raise FormatError(f"{path}: truncated dimension list at byte offset 4")
    dims = struct.unpack(">" + "I" * ndim, raw[4:header_end])
    expected = int(np.prod(dims))
    payload = np.frombuffer(raw, dtype=np.uint8, offset=header_end)
    if payload.size != expected:
        raise FormatError(
            f"{path}: payload has {payload.size} bytes, header promises {expected} "
            f"(byte offset {header_end})"
        )
    return payload.reshape(dims)


def write_idx(path, array) -> None:
    array = np.asarray(array, dtype=np.uint8)
    header = struct.pack(">HBB", 0, 0x08, array.ndim) + struct.pack(">" + "I" * array.ndim, *array.shape)
    Path(path).write_bytes(header + array.tobytes())


def _find(directory: Path, stem: str) -> Path | None:
    for name in (stem, stem + ".gz"):
        p = directory / name
        if p.exists():
            return p
    return None


def load_idx_pair(images_path, labels_path, num_classes=10) -> Dataset:
    images = read_idx(images_path)
    labels = read_idx(labels_path)
    if images.ndim < 2 or labels.ndim != 1:
        raise FormatError(f"{images_path}: unexpected IDX ranks at byte offset 3")
    if len(images) != len(labels):
        raise FormatError(f"{labels_path}: {len(labels)} labels for {len(images)} images at byte offset 4")
    x = images.reshape(len(images), -1).astype(np.float64) / 255.0
    return Dataset(x, labels.astype(np.int64), np.arange(len(labels)), num_classes)


def load_idx_dir(directory) -> tuple[Dataset, Dataset | None]:
    """MNIST-style directory: ``train-*`` and optional ``t10k-*`` image/label files."""
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(directory)
    train_x = _find(directory, "train-images-idx3-ubyte")
    train_y = _find(directory, "train-labels-idx1-ubyte")
    if train_x is None or train_y is None:
        raise FormatError(f"{directory}: missing train-images/train-labels IDX files")
    train = load_idx_pair(train_x, train_y)
    test_x = _find(directory, "t10k-images-idx3-ubyte")
    test_y = _find(directory, "t10k-labels-idx1-ubyte")
    test = None
    if test_x is not None and test_y is not None:
        test = load_idx_pair(test_x, test_y)
        test.ids = test.ids + len(train)
    num_classes = int(max(train.labels.max(), test.labels.max() if test else 0)) + 1
    train.num_classes = num_classes
    if test is not None:
        test.num_classes = num_classes
    return train, test


def load_csv(path) -> Dataset:
    """Header row required; the ``label`` column holds integer classes, every other column is a feature."""
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: line 1: empty file") from None
        if "label" not in header:
            raise FormatError(f"{path}: line 1: missing 'label' column")
        label_col = header.index("label")
        rows, labels = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise FormatError(f"{path}: line {lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                labels.append(int(row[label_col]))
                rows.append([float(v) for j, v in enumerate(row) if j != label_col])
            except ValueError as exc:
                raise FormatError(f"{path}: line {lineno}: {exc}") from None
    if not rows:
        raise FormatError(f"{path}: line 2: no data rows")
    labels = np.asarray(labels, dtype=np.int64)
    if labels.min() < 0:
        raise FormatError(f"{path}: negative label")
    x = np.asarray(rows, dtype=np.float64).reshape(len(rows), len(header) - 1)
    return Dataset(x, labels, np.arange(len(labels)), int(labels.max()) + 1)


def synthetic_blobs(classes=10, dim=784, n=1000, seed=0, spread=1.0, separation=3.0) -> Dataset:
    """Gaussian blobs around class means drawn on a sphere of radius ``separation``."""
    rng = np.random.default_rng(seed)
    means = rng.standard_normal((classes, dim))
    means *= separation / np.linalg.norm(means, axis=1, keepdims=True)
    labels = np.arange(n) % classes
    x = means[labels] + spread / np.sqrt(dim) * rng.standard_normal((n, dim))
    return Dataset(x, labels, np.arange(n), classes)


def digits28() -> Dataset:
    """The 1797-sample 8x8 handwritten digits set bundled with scikit-learn, lifted to 28x28.

    Each pixel becomes a 3x3 block and the 24x24 image gets a 2-pixel zero border,
    giving 784 features in [0, 1] like MNIST.
    """
    from sklearn.datasets import load_digits

    d = load_digits()
    imgs = d.images / 16.0
    imgs = np.kron(imgs, np.ones((1, 3, 3)))
    imgs = np.pad(imgs, ((0, 0), (2, 2), (2, 2)))
    return Dataset(imgs.reshape(len(imgs), -1), d.target, np.arange(len(imgs)), 10)


def load_dataset(source) -> Dataset | tuple[Dataset, Dataset | None]:
    """Load from a source dict ``{"kind": ..., ...}``.

    ``idx_dir`` returns a ``(train, test)`` pair; every other kind returns a single dataset.
    """
    kind = source["kind"]
    if kind == "idx_dir":
        return load_idx_dir(source["path"])
    if kind == "csv":
        return load_csv(source["path"])
    if kind == "synthetic_blobs":
        return synthetic_blobs(
            classes=int(source.get("classes", 10)),
            dim=int(source.get("dim", 784)),
            n=int(source.get("n", 1000)),
            seed=int(source.get("seed", 0)),
        )
    if kind == "digits":
        return digits28()
    raise FormatError(f"unknown dataset kind {kind!r}")


@dataclass
class Standardizer:
    """Per-feature affine map fitted on training inputs; near-constant features keep unit std."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, inputs, floor=1e-3) -> Standardizer:
        x = np.asarray(inputs, dtype=np.float64)
        std = x.std(axis=0)
        return cls(x.mean(axis=0), np.where(std < floor, 1.0, std))

    def transform(self, data: Dataset) -> Dataset:
        return Dataset((data.inputs - self.mean) / self.std, data.labels, data.ids, data.num_classes)
