"""Datasets: MNIST IDX ingestion, synthetic Gaussian clusters, client
partitioning, and trigger-pattern construction/application."""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DataConsistencyError, DataFormatError
from .rng import stream

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass(frozen=True)
class LabeledSample:
    """One sample: feature vector with components in [0, 1] plus class label."""

    features: np.ndarray
    label: int

    def __post_init__(self):
        if self.features.ndim != 1:
            raise ConfigurationError("sample features must be a vector")
        if self.features.size and (self.features.min() < 0.0 or self.features.max() > 1.0):
            raise ConfigurationError("sample features must lie in [0, 1]")
        if self.label < 0:
            raise ConfigurationError("label must be non-negative")


@dataclass(frozen=True)
class TriggerPattern:
    """Sparse additive feature perturbation plus the label it forces.

    `magnitude` is the l2 norm of the dense (pre-clamp) delta vector.
    """

    indices: tuple[int, ...]
    values: np.ndarray
    target_label: int
    magnitude: float

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "indices", tuple(int(i) for i in self.indices))
        if len(self.indices) != values.shape[0]:
            raise ConfigurationError("trigger indices and values must align")
        if len(set(self.indices)) != len(self.indices):
            raise ConfigurationError("trigger indices must be unique")
        norm = float(np.linalg.norm(values))
        if not np.isclose(norm, self.magnitude, rtol=1e-12, atol=1e-15):
            raise ConfigurationError(
                f"declared magnitude {self.magnitude} != l2 norm of deltas {norm}"
            )

    @classmethod
    def rescaled(cls, indices, values, target_label: int, magnitude: float) -> "TriggerPattern":
        """Build a pattern whose dense delta has the requested l2 norm."""
        values = np.asarray(values, dtype=np.float64)
        norm = float(np.linalg.norm(values))
        if norm == 0.0:
            if magnitude != 0.0:
                raise ConfigurationError("cannot rescale an all-zero trigger")
            scaled = values
        else:
            scaled = values * (magnitude / norm)
        return cls(tuple(indices), scaled, target_label, float(magnitude))

    def dense(self, dim: int) -> np.ndarray:
        if self.indices and max(self.indices) >= dim:
            raise ConfigurationError("trigger index out of range for dimension")
        delta = np.zeros(dim)
        delta[list(self.indices)] = self.values
        return delta

    def apply_to_matrix(self, features: np.ndarray) -> np.ndarray:
        """Perturb rows of an (n, d) feature matrix and clamp to [0, 1]."""
        out = np.array(features, dtype=np.float64, copy=True)
        if self.indices:
            cols = list(self.indices)
            if max(cols) >= out.shape[1]:
                raise ConfigurationError("trigger index out of range for dimension")
            out[:, cols] = np.clip(out[:, cols] + self.values, 0.0, 1.0)
        return out


def default_mnist_trigger(target_label: int = 0, magnitude: float = 0.1) -> TriggerPattern:
    """3-pixel top-left corner pattern with equal deltas at the given l2 norm."""
    return TriggerPattern.rescaled((0, 1, 28), (1.0, 1.0, 1.0), target_label, magnitude)


class SampleSet:
    """Ordered, homogeneous collection of labeled samples.

    Features are held as an (n, d) float64 matrix with components in [0, 1];
    indexing and iteration yield LabeledSample views.
    """

    def __init__(self, features: np.ndarray, labels: np.ndarray, num_classes: int):
        features = np.ascontiguousarray(features, dtype=np.float64)
        labels = np.ascontiguousarray(labels, dtype=np.int64)
        if features.ndim != 2:
            raise ConfigurationError("features must be a 2-D matrix")
        if labels.shape != (features.shape[0],):
            raise ConfigurationError("labels must match the number of samples")
        if num_classes < 1:
            raise ConfigurationError("num_classes must be positive")
        if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
            raise ConfigurationError("labels must lie in [0, num_classes)")
        if features.size and (features.min() < 0.0 or features.max() > 1.0):
            raise ConfigurationError("features must lie in [0, 1]")
        features.setflags(write=False)
        labels.setflags(write=False)
        self.features = features
        self.labels = labels
        self.num_classes = int(num_classes)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def __len__(self) -> int:
        return self.features.shape[0]

    def __getitem__(self, i: int) -> LabeledSample:
        return LabeledSample(self.features[i], int(self.labels[i]))

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def subset(self, indices: np.ndarray) -> "SampleSet":
        return SampleSet(self.features[indices], self.labels[indices], self.num_classes)


class ClientDataset(SampleSet):
    """One client's local shard; non-empty by construction."""

    def __init__(self, features, labels, num_classes: int, client_id: int):
        super().__init__(features, labels, num_classes)
        if len(self) == 0:
            raise ConfigurationError("client dataset must be non-empty")
        self.client_id = int(client_id)


def _read_be_u32(buf: bytes, offset: int) -> int:
    return struct.unpack_from(">I", buf, offset)[0]


def load_mnist_idx(images_path, labels_path, num_classes: int = 10) -> SampleSet:
    """Decode a big-endian IDX image/label file pair into samples in [0, 1].

    Pixel bytes are divided by 255; sample order follows file order and each
    image is flattened row-major.
    """
    with open(images_path, "rb") as fh:
        img_buf = fh.read()
    with open(labels_path, "rb") as fh:
        lbl_buf = fh.read()

    if len(img_buf) < 16 or _read_be_u32(img_buf, 0) != IDX_IMAGES_MAGIC:
        raise DataFormatError(f"bad image magic in {images_path}")
    if len(lbl_buf) < 8 or _read_be_u32(lbl_buf, 0) != IDX_LABELS_MAGIC:
        raise DataFormatError(f"bad label magic in {labels_path}")

    n_images = _read_be_u32(img_buf, 4)
    rows = _read_be_u32(img_buf, 8)
    cols = _read_be_u32(img_buf, 12)
    n_labels = _read_be_u32(lbl_buf, 4)
    if n_images != n_labels:
        raise DataConsistencyError(
            f"image count {n_images} != label count {n_labels}"
        )
    dim = rows * cols
    if len(img_buf) - 16 != n_images * dim:
        raise DataFormatError(f"image payload size mismatch in {images_path}")
    if len(lbl_buf) - 8 != n_labels:
        raise DataFormatError(f"label payload size mismatch in {labels_path}")

    pixels = np.frombuffer(img_buf, dtype=np.uint8, offset=16).reshape(n_images, dim)
    labels = np.frombuffer(lbl_buf, dtype=np.uint8, offset=8).astype(np.int64)
    return SampleSet(pixels.astype(np.float64) / 255.0, labels, num_classes)


def generate_synthetic(
    n: int, dim: int, num_classes: int, separation: float, seed: int
) -> SampleSet:
    """Gaussian clusters around one fixed center per class, clamped to [0, 1].

    Labels are assigned round-robin so class counts are balanced within one;
    the cluster noise scale is 0.5/separation, so larger separation means
    cleaner classes.  Fully deterministic in the seed.
    """
    if n < num_classes:
        raise ConfigurationError("need at least one sample per class")
    if dim < num_classes:
        raise ConfigurationError("dimension must be at least the class count")
    if separation <= 0:
        raise ConfigurationError("separation must be positive")
    rng = stream(seed, "synthetic", n, dim, num_classes)
    centers = rng.uniform(0.1, 0.9, size=(num_classes, dim))
    labels = np.arange(n, dtype=np.int64) % num_classes
    noise = rng.normal(0.0, 0.5 / separation, size=(n, dim))
    features = np.clip(centers[labels] + noise, 0.0, 1.0)
    return SampleSet(features, labels, num_classes)


def partition_iid(
    samples: SampleSet, num_clients: int, weights_mode: str = "by-size", seed: int = 0
) -> tuple[list[ClientDataset], np.ndarray]:
    """Seeded shuffle followed by contiguous near-equal splits.

    Returns the client shards plus aggregation weights: proportional to shard
    size for "by-size", exactly 1/N for "uniform".
    """
    n = len(samples)
    if num_clients < 1:
        raise ConfigurationError("need at least one client")
    if num_clients > n:
        raise ConfigurationError(f"cannot split {n} samples across {num_clients} clients")
    if weights_mode not in ("uniform", "by-size"):
        raise ConfigurationError(f"unknown weights_mode {weights_mode!r}")

    order = stream(seed, "partition", num_clients).permutation(n)
    base, extra = divmod(n, num_clients)
    clients: list[ClientDataset] = []
    sizes = np.empty(num_clients, dtype=np.int64)
    start = 0
    for i in range(num_clients):
        size = base + (1 if i < extra else 0)
        idx = order[start : start + size]
        clients.append(
            ClientDataset(samples.features[idx], samples.labels[idx], samples.num_classes, i)
        )
        sizes[i] = size
        start += size

    if weights_mode == "uniform":
        weights = np.full(num_clients, 1.0 / num_clients)
    else:
        weights = sizes / float(n)
    return clients, weights


def apply_trigger(sample: LabeledSample, pattern: TriggerPattern) -> LabeledSample:
    """Add the pattern's deltas, clamp features to [0, 1], force the target label."""
    dim = sample.features.shape[0]
    features = np.clip(sample.features + pattern.dense(dim), 0.0, 1.0)
    return LabeledSample(features, pattern.target_label)
