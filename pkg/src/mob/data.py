"""Data ingestion and stream construction.

Covers the MNIST IDX binary format (plain or gzipped), the 5-task
split-digits stream (digit pairs 0/1 .. 8/9, single shared 10-class label
space), and a synthetic Gaussian-cluster stream for fast boundary-detection
tests.

When the real MNIST files are not present, an offline fallback dataset is
generated from scikit-learn's bundled 8x8 digits (upscaled to 28x28 with
random shifts) and written to disk in genuine IDX format, so the parser and
stream code paths are identical either way.
"""

import gzip
import logging
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .nn import Batch

log = logging.getLogger(__name__)

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801

MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}

# Checksum manifest: a JSON file named "manifest.json" next to the data
# files, mapping file name -> sha256 hex digest of the on-disk bytes.
MANIFEST_NAME = "manifest.json"


class IdxFormatError(ValueError):
    pass


def parse_idx(data: bytes) -> np.ndarray:
    """Decode an IDX byte string into a uint8 array (images or labels)."""
    if len(data) < 8:
        raise IdxFormatError("not an IDX file: header too short")
    (magic,) = struct.unpack(">I", data[:4])
    if magic == IMAGES_MAGIC:
        ndim = 3
    elif magic == LABELS_MAGIC:
        ndim = 1
    else:
        raise IdxFormatError(f"not an IDX file: bad magic 0x{magic:08x}")
    header = 4 + 4 * ndim
    if len(data) < header:
        raise IdxFormatError("not an IDX file: truncated dimension header")
    dims = struct.unpack(f">{ndim}I", data[4:header])
    expected = int(np.prod(dims))
    payload = data[header:]
    if len(payload) != expected:
        raise IdxFormatError(
            f"short read, expected {expected} bytes, got {len(payload)}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(dims)


def serialize_idx(array: np.ndarray) -> bytes:
    """Inverse of parse_idx; bit-exact round trip."""
    array = np.ascontiguousarray(array, dtype=np.uint8)
    if array.ndim == 3:
        magic = IMAGES_MAGIC
    elif array.ndim == 1:
        magic = LABELS_MAGIC
    else:
        raise IdxFormatError(f"unsupported rank {array.ndim}")
    header = struct.pack(">I", magic) + b"".join(
        struct.pack(">I", d) for d in array.shape)
    return header + array.tobytes()


def read_idx_file(path) -> np.ndarray:
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as f:
        return parse_idx(f.read())


def _find_idx(directory: Path, stem: str) -> Path | None:
    for name in (stem, stem + ".gz"):
        p = directory / name
        if p.exists():
            return p
    return None


def resolve_data_dir(data_dir=None) -> Path:
    if data_dir is not None:
        return Path(data_dir)
    return Path(os.environ.get("MOB_DATA_DIR", "data"))


def verify_manifest(directory) -> dict:
    """Check files against directory/manifest.json; {name: ok} per entry."""
    import hashlib
    import json

    directory = Path(directory)
    manifest = json.loads((directory / MANIFEST_NAME).read_text())
    results = {}
    for name, digest in manifest.items():
        p = directory / name
        if not p.exists():
            results[name] = False
            continue
        results[name] = hashlib.sha256(p.read_bytes()).hexdigest() == digest
    return results


def download_mnist(dest_dir, base_url, manifest: dict | None = None):
    """Optional convenience fetcher; nothing else ever touches the network."""
    import hashlib
    import urllib.request

    dest_dir = Path(dest_dir)
    dest_dir.mkdir(parents=True, exist_ok=True)
    for stem in MNIST_FILES.values():
        name = stem + ".gz"
        target = dest_dir / name
        if not target.exists():
            urllib.request.urlretrieve(base_url.rstrip("/") + "/" + name,
                                       target)
        if manifest and name in manifest:
            got = hashlib.sha256(target.read_bytes()).hexdigest()
            if got != manifest[name]:
                raise IdxFormatError(f"checksum mismatch for {name}")


@dataclass(frozen=True)
class DigitData:
    train_images: np.ndarray  # N x 28 x 28 uint8
    train_labels: np.ndarray
    test_images: np.ndarray
    test_labels: np.ndarray
    source: str               # "mnist" or "fallback"


def _upscale_and_shift(img8, dx, dy, rng):
    """8x8 digit -> 28x28 canvas: 3x nearest-neighbour upscale, shift by
    (dx, dy), plus pixel noise so augmented copies are never duplicates and
    classifiers cannot saturate on block-identical images."""
    big = np.kron(img8, np.ones((3, 3)))  # 24 x 24, values 0..16
    canvas = np.zeros((28, 28))
    x0, y0 = 2 + dx, 2 + dy
    canvas[x0:x0 + 24, y0:y0 + 24] = big
    canvas = canvas * 15.9 + rng.normal(0.0, 16.0, size=canvas.shape)
    return np.clip(canvas, 0, 255).astype(np.uint8)


def generate_fallback_dataset(out_dir, per_digit_train=2500,
                              per_digit_test=300, seed=0):
    """Write an MNIST-shaped offline dataset built from sklearn's digits.

    Base images are split per digit into disjoint train/test pools before
    augmentation, so no test example can share a source image with training.
    """
    from sklearn.datasets import load_digits

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    raw = load_digits()
    rng = np.random.default_rng(seed)

    splits = {"train": ([], []), "test": ([], [])}
    for digit in range(10):
        base = raw.images[raw.target == digit]
        order = rng.permutation(len(base))
        n_test_pool = max(1, len(base) // 5)
        pools = {"test": base[order[:n_test_pool]],
                 "train": base[order[n_test_pool:]]}
        counts = {"train": per_digit_train, "test": per_digit_test}
        for split, pool in pools.items():
            imgs, labels = splits[split]
            for _ in range(counts[split]):
                src = pool[rng.integers(len(pool))]
                dx, dy = rng.integers(-2, 3, size=2)
                imgs.append(_upscale_and_shift(src, int(dx), int(dy), rng))
                labels.append(digit)

    for split, stem_imgs, stem_labels in (
            ("train", MNIST_FILES["train_images"], MNIST_FILES["train_labels"]),
            ("test", MNIST_FILES["test_images"], MNIST_FILES["test_labels"])):
        imgs, labels = splits[split]
        order = rng.permutation(len(imgs))
        images = np.stack(imgs)[order]
        labels = np.array(labels, dtype=np.uint8)[order]
        with gzip.open(out_dir / (stem_imgs + ".gz"), "wb") as f:
            f.write(serialize_idx(images))
        with gzip.open(out_dir / (stem_labels + ".gz"), "wb") as f:
            f.write(serialize_idx(labels))
    log.info("fallback dataset written to %s", out_dir)


def load_digit_data(data_dir=None, allow_fallback=True) -> DigitData:
    """Load MNIST from data_dir; generate/use the offline fallback if absent."""
    directory = resolve_data_dir(data_dir)
    paths = {k: _find_idx(directory, stem) for k, stem in MNIST_FILES.items()}
    source = "mnist"
    if any(p is None for p in paths.values()):
        if not allow_fallback:
            missing = [MNIST_FILES[k] for k, p in paths.items() if p is None]
            raise FileNotFoundError(
                f"MNIST files not found in {directory}: expected "
                + ", ".join(missing) + " (optionally .gz)")
        fb = directory / "fallback"
        if any(_find_idx(fb, stem) is None for stem in MNIST_FILES.values()):
            log.warning("MNIST not found in %s; generating offline fallback "
                        "digits dataset", directory)
            generate_fallback_dataset(fb)
        paths = {k: _find_idx(fb, stem) for k, stem in MNIST_FILES.items()}
        source = "fallback"
    d = {k: read_idx_file(p) for k, p in paths.items()}
    return DigitData(train_images=d["train_images"],
                     train_labels=d["train_labels"],
                     test_images=d["test_images"],
                     test_labels=d["test_labels"],
                     source=source)


@dataclass(frozen=True)
class TaskStream:
    """5 sequential digit-pair tasks plus per-task held-out eval sets."""

    tasks: tuple            # tasks[t] = tuple of Batch
    eval_sets: tuple        # eval_sets[t] = (inputs, labels)
    digit_pairs: tuple

    @property
    def n_tasks(self):
        return len(self.tasks)

    def all_batches(self):
        for t, task in enumerate(self.tasks):
            for b in task:
                yield t, b


def _flatten(images):
    return images.reshape(len(images), -1).astype(np.float64) / 255.0


def build_split_mnist(data: DigitData, seed: int, per_task_train=4000,
                      per_task_eval=500, batch_size=32) -> TaskStream:
    """Tasks (0/1), (2/3), ... (8/9); labels stay in the 10-class space."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xDA7A]))
    x_train = _flatten(data.train_images)
    y_train = data.train_labels.astype(np.int64)
    x_test = _flatten(data.test_images)
    y_test = data.test_labels.astype(np.int64)

    tasks = []
    eval_sets = []
    pairs = tuple((2 * t, 2 * t + 1) for t in range(5))
    for t, pair in enumerate(pairs):
        train_idx = np.flatnonzero(np.isin(y_train, pair))
        test_idx = np.flatnonzero(np.isin(y_test, pair))
        if len(train_idx) < per_task_train:
            raise ValueError(
                f"task {t}: requested {per_task_train} train examples, "
                f"only {len(train_idx)} available")
        if len(test_idx) < per_task_eval:
            raise ValueError(
                f"task {t}: requested {per_task_eval} eval examples, "
                f"only {len(test_idx)} available")
        train_idx = rng.permutation(train_idx)[:per_task_train]
        test_idx = rng.permutation(test_idx)[:per_task_eval]
        batches = tuple(
            Batch(inputs=x_train[train_idx[i:i + batch_size]],
                  labels=y_train[train_idx[i:i + batch_size]],
                  task_id=t)
            for i in range(0, per_task_train, batch_size))
        tasks.append(batches)
        eval_sets.append((x_test[test_idx], y_test[test_idx]))
    return TaskStream(tasks=tuple(tasks), eval_sets=tuple(eval_sets),
                      digit_pairs=pairs)


@dataclass(frozen=True)
class SyntheticConfig:
    n_tasks: int = 2
    dim: int = 784
    separation: float = 10.0      # distance of each cluster mean from origin
    noise_sigma: float = 1.0
    batches_per_task: int = 500
    batch_size: int = 16
    eval_per_task: int = 200


@dataclass(frozen=True)
class SyntheticStream:
    """Gaussian-cluster tasks with known switch points."""

    batches: tuple              # flat, in stream order
    switch_points: tuple        # step index at which each new task starts
    eval_sets: tuple
    cluster_means: np.ndarray   # (n_tasks*2) x dim

    @property
    def n_tasks(self):
        return len(self.switch_points) + 1


def build_synthetic(config: SyntheticConfig, seed: int) -> SyntheticStream:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5F7]))
    n_clusters = config.n_tasks * 2
    if config.separation == 0:
        log.warning("synthetic stream with zero separation: tasks are "
                    "indistinguishable noise")
    # random directions in high dimension are nearly orthogonal, so scaling
    # to `separation` from the origin keeps pairwise margins >= separation
    means = rng.normal(size=(n_clusters, config.dim))
    means /= np.linalg.norm(means, axis=1, keepdims=True)
    means *= config.separation

    def sample(cluster, n):
        return means[cluster] + config.noise_sigma * rng.normal(
            size=(n, config.dim))

    batches = []
    for t in range(config.n_tasks):
        classes = (2 * t, 2 * t + 1)
        for _ in range(config.batches_per_task):
            labels = rng.integers(2, size=config.batch_size)
            inputs = np.empty((config.batch_size, config.dim))
            for k in (0, 1):
                idx = np.flatnonzero(labels == k)
                if idx.size:
                    inputs[idx] = sample(2 * t + k, idx.size)
            batches.append(Batch(inputs=inputs,
                                 labels=np.array([classes[k] for k in labels]),
                                 task_id=t))
    eval_sets = []
    for t in range(config.n_tasks):
        half = config.eval_per_task // 2
        xs = np.vstack([sample(2 * t, half), sample(2 * t + 1, half)])
        ys = np.array([2 * t] * half + [2 * t + 1] * half)
        eval_sets.append((xs, ys))
    switches = tuple(config.batches_per_task * t
                     for t in range(1, config.n_tasks))
    return SyntheticStream(batches=tuple(batches), switch_points=switches,
                           eval_sets=tuple(eval_sets), cluster_means=means)
