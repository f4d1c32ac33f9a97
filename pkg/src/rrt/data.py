"""IDX (MNIST) and CIFAR-10 binary loaders, plus deterministic splitting."""
import gzip
import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, InvalidValueError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_RECORD = 1 + 3 * 32 * 32

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


@dataclass
class Dataset:
    images: np.ndarray  # (n, C, H, W) float32 in [0, 1]
    labels: np.ndarray  # (n,) int64
    num_classes: int = 10
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise FormatError(f"{len(self.images)} images but {len(self.labels)} labels")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise FormatError(f"label outside 0..{self.num_classes - 1}")

    def __len__(self):
        return len(self.labels)

    def subset(self, idx, note=None):
        prov = dict(self.provenance)
        if note:
            prov["subset"] = note
        return Dataset(self.images[idx], self.labels[idx], self.num_classes, prov)

    def head(self, n):
        return self.subset(np.arange(min(n, len(self))), note=f"first {n}")


def _read(path):
    """File bytes, transparently gunzipped when the gzip magic is present."""
    raw = Path(path).read_bytes()
    return gzip.decompress(raw) if raw[:2] == b"\x1f\x8b" else raw


def _idx(buf, magic, path):
    if len(buf) < 8:
        raise FormatError(f"{path}: file too short for an IDX header")
    got = struct.unpack(">I", buf[:4])[0]
    if got != magic:
        raise FormatError(f"{path}: bad IDX magic 0x{got:08X}, expected 0x{magic:08X}")
    ndim = magic & 0xFF
    head = 4 + 4 * ndim
    if len(buf) < head:
        raise FormatError(f"{path}: truncated IDX header")
    dims = struct.unpack(f">{ndim}I", buf[4:head])
    expected = int(np.prod(dims))
    actual = len(buf) - head
    if actual < expected:
        raise FormatError(f"{path}: truncated payload, expected {expected} bytes, got {actual}")
    return np.frombuffer(buf, dtype=np.uint8, count=expected, offset=head).reshape(dims)


def load_idx(images_path, labels_path):
    """MNIST-style IDX pair -> Dataset with images (n, 1, 28, 28) scaled by 1/255."""
    ibuf, lbuf = _read(images_path), _read(labels_path)
    images = _idx(ibuf, IDX_IMAGES_MAGIC, images_path)
    labels = _idx(lbuf, IDX_LABELS_MAGIC, labels_path)
    if len(images) != len(labels):
        raise FormatError(f"count mismatch: {len(images)} images vs {len(labels)} labels")
    prov = {
        "source": [str(images_path), str(labels_path)],
        "sha256": [hashlib.sha256(ibuf).hexdigest(), hashlib.sha256(lbuf).hexdigest()],
        "normalization": "x/255",
    }
    x = (images.astype(np.float32) / 255.0)[:, None, :, :]
    return Dataset(x, labels.astype(np.int64), 10, prov)


def load_cifar10_bin(paths):
    """Concatenate CIFAR-10 binary batches (label byte + 3072 R,G,B plane bytes each)."""
    if isinstance(paths, (str, Path)):
        paths = [paths]
    xs, ys, digests = [], [], []
    for path in paths:
        buf = _read(path)
        if len(buf) % CIFAR_RECORD:
            raise FormatError(f"{path}: size {len(buf)} is not a multiple of {CIFAR_RECORD}")
        rec = np.frombuffer(buf, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
        ys.append(rec[:, 0].astype(np.int64))
        xs.append(rec[:, 1:].reshape(-1, 3, 32, 32))
        digests.append(hashlib.sha256(buf).hexdigest())
    x = np.concatenate(xs).astype(np.float32) / 255.0
    prov = {"source": [str(p) for p in paths], "sha256": digests, "normalization": "x/255"}
    return Dataset(x, np.concatenate(ys), 10, prov)


def normalize(data, mean, std):
    """Per-channel standardization; recorded in provenance."""
    mean = np.asarray(mean, dtype=np.float32).reshape(1, -1, 1, 1)
    std = np.asarray(std, dtype=np.float32).reshape(1, -1, 1, 1)
    prov = dict(data.provenance, normalization=f"(x/255 - {mean.ravel().tolist()}) / {std.ravel().tolist()}")
    return Dataset((data.images - mean) / std, data.labels, data.num_classes, prov)


def split_validation(data, n, seed):
    """Draw ``n`` samples without replacement; returns ``(validation, rest)``."""
    if not 0 <= n <= len(data):
        raise InvalidValueError(f"cannot draw {n} validation samples from {len(data)}")
    perm = np.random.default_rng(seed).permutation(len(data))
    val, rest = np.sort(perm[:n]), np.sort(perm[n:])
    return data.subset(val, f"validation {n} seed {seed}"), data.subset(rest, f"rest seed {seed}")


def _find(directory, stem):
    for name in (stem, stem + ".gz", stem.replace("-idx", ".idx")):
        p = Path(directory) / name
        if p.exists():
            return p
    raise FileNotFoundError(f"{stem}[.gz] not found in {directory}")


def load_mnist_dir(directory, split="train"):
    images, labels = MNIST_FILES[split]
    return load_idx(_find(directory, images), _find(directory, labels))


def load_cifar10_dir(directory, split="train"):
    d = Path(directory)
    names = [f"data_batch_{i}.bin" for i in range(1, 6)] if split == "train" else ["test_batch.bin"]
    paths = [d / n for n in names if (d / n).exists()]
    if not paths:
        raise FileNotFoundError(f"no CIFAR-10 {split} batches in {directory}")
    return load_cifar10_bin(paths)


def detect_format(directory):
    d = Path(directory)
    if any(d.glob("train-images-idx3-ubyte*")) or any(d.glob("t10k-images-idx3-ubyte*")):
        return "mnist"
    if any(d.glob("*batch*.bin")):
        return "cifar10"
    raise FileNotFoundError(f"{directory} holds neither MNIST IDX nor CIFAR-10 binary files")


def load_dir(directory, split="train"):
    if detect_format(directory) == "mnist":
        return load_mnist_dir(directory, split)
    return load_cifar10_dir(directory, split)


def bundled_mnist_dir():
    """The repo's 5000-sample MNIST subset (4000 train / 1000 test)."""
    return Path(__file__).resolve().parents[2] / "data" / "mnist5k"
