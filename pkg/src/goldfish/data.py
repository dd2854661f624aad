"""Datasets and everything that slices them.

Examples carry stable 64-bit ids so that deletion requests survive
shuffling, partitioning and sharding. All datasets are immutable after
construction; subset operations return new views over copied id selections.
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, DomainError, FormatError, ShapeError
from .seeds import derive_rng

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


@dataclass(frozen=True)
class LabeledDataset:
    """Feature matrix in [0,1], integer labels, unique example ids."""

    features: np.ndarray
    labels: np.ndarray
    ids: np.ndarray
    num_classes: int

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        ids = np.asarray(self.ids, dtype=np.int64)
        if feats.ndim != 2:
            raise ShapeError(f"features must be 2-d, got {feats.shape}")
        if labels.shape != (feats.shape[0],) or ids.shape != (feats.shape[0],):
            raise DataError("features, labels and ids must have equal row counts")
        if len(np.unique(ids)) != len(ids):
            raise DataError("example ids must be unique")
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise DataError(f"labels must lie in [0, {self.num_classes})")
        for arr in (feats, labels, ids):
            arr.setflags(write=False)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "ids", ids)

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, keep_ids) -> "LabeledDataset":
        """Rows whose id is in `keep_ids`, in the dataset's own order."""
        keep = np.asarray(sorted(set(int(i) for i in keep_ids)), dtype=np.int64)
        unknown = np.setdiff1d(keep, self.ids)
        if unknown.size:
            raise DataError(f"unknown ids in subset request: {unknown[:5].tolist()}")
        mask = np.isin(self.ids, keep)
        return self.take(np.nonzero(mask)[0])

    def take(self, positions: np.ndarray) -> "LabeledDataset":
        """Rows at the given positional indices."""
        pos = np.asarray(positions, dtype=np.int64)
        return LabeledDataset(self.features[pos], self.labels[pos],
                              self.ids[pos], self.num_classes)


@dataclass(frozen=True)
class ClientPartition:
    """Per-client dataset views; disjoint by id."""

    clients: list[LabeledDataset]
    size_variance: float | None = None

    def __len__(self) -> int:
        return len(self.clients)


@dataclass(frozen=True)
class ShardSet:
    """Disjoint shards of one client's data plus optional per-shard models."""

    shards: list[LabeledDataset]
    shard_params: list | None = None   # list[ParameterVector] once trained
    shard_opts: list | None = None     # per-shard optimizer state (training-loop owned)

    def __post_init__(self):
        if not self.shards:
            raise DataError("a shard set needs at least one shard")
        all_ids = np.concatenate([s.ids for s in self.shards])
        if len(np.unique(all_ids)) != len(all_ids):
            raise DataError("shards must be disjoint by id")
        if self.shard_params is not None and len(self.shard_params) != len(self.shards):
            raise DataError("one parameter vector per shard required")

    @property
    def tau(self) -> int:
        return len(self.shards)

    @property
    def sizes(self) -> list[int]:
        return [len(s) for s in self.shards]

    @property
    def total_size(self) -> int:
        return sum(self.sizes)


@dataclass(frozen=True)
class BackdoorSpec:
    """Square trigger patch stamped at the bottom-right corner of the image."""

    target_label: int = 0
    poison_rate: float = 0.02
    trigger_size: int = 3
    trigger_value: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.poison_rate <= 1.0:
            raise DomainError(f"poison rate must be in (0, 1], got {self.poison_rate}")
        if self.target_label < 0:
            raise DomainError("target label must be non-negative")
        if self.trigger_size < 1:
            raise DomainError("trigger must cover at least one pixel")


@dataclass(frozen=True)
class DeletionRequest:
    """A client asks that a nonempty set of its examples be forgotten."""

    client_id: int
    deleted_ids: frozenset
    deletion_rate: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "deleted_ids",
                           frozenset(int(i) for i in self.deleted_ids))
        if not self.deleted_ids:
            raise DataError("deletion request must name at least one example")


def _read_be_u32(buf: bytes, offset: int, path: str) -> int:
    if offset + 4 > len(buf):
        raise FormatError(f"{path}: truncated header")
    return struct.unpack_from(">I", buf, offset)[0]


def load_idx(images_path, labels_path) -> LabeledDataset:
    """Load an IDX image/label file pair (MNIST / FMNIST layout).

    Pixels are scaled to [0,1] by /255 and flattened row-wise; ids are
    assigned 0..n-1 in file order.
    """
    with open(images_path, "rb") as f:
        img_buf = f.read()
    with open(labels_path, "rb") as f:
        lab_buf = f.read()

    if _read_be_u32(img_buf, 0, str(images_path)) != IDX_IMAGE_MAGIC:
        raise FormatError(f"{images_path}: bad image magic")
    n = _read_be_u32(img_buf, 4, str(images_path))
    rows = _read_be_u32(img_buf, 8, str(images_path))
    cols = _read_be_u32(img_buf, 12, str(images_path))
    if len(img_buf) != 16 + n * rows * cols:
        raise FormatError(f"{images_path}: payload size does not match header")

    if _read_be_u32(lab_buf, 0, str(labels_path)) != IDX_LABEL_MAGIC:
        raise FormatError(f"{labels_path}: bad label magic")
    n_labels = _read_be_u32(lab_buf, 4, str(labels_path))
    if len(lab_buf) != 8 + n_labels:
        raise FormatError(f"{labels_path}: payload size does not match header")
    if n != n_labels:
        raise FormatError(f"image count {n} != label count {n_labels}")

    pixels = np.frombuffer(img_buf, dtype=np.uint8, offset=16)
    features = pixels.reshape(n, rows * cols).astype(np.float64) / 255.0
    labels = np.frombuffer(lab_buf, dtype=np.uint8, offset=8).astype(np.int64)
    num_classes = int(labels.max()) + 1 if n else 10
    return LabeledDataset(features, labels, np.arange(n, dtype=np.int64),
                          max(num_classes, 2))


def gen_synthetic(n: int, dim: int, num_classes: int, seed: int, *,
                  std: float = 0.12, spread: float = 0.4,
                  background: float = 0.35) -> LabeledDataset:
    """Gaussian class blobs clipped to [0,1]; deterministic per seed.

    Class means sit on a scaled simplex: the background level everywhere,
    raised by `spread` at the class's own coordinate. `std` is the isotropic
    per-coordinate standard deviation. Every class gets at least one example.
    """
    if n < num_classes:
        raise DataError(f"need at least one example per class ({n} < {num_classes})")
    if num_classes < 2:
        raise DataError("need at least two classes")
    rng = derive_rng(seed, "synthetic", n, dim, num_classes)
    means = np.full((num_classes, dim), background)
    if num_classes <= dim:
        means[np.arange(num_classes), np.arange(num_classes)] += spread
    else:
        # more classes than axes: random unit directions instead of e_k
        dirs = rng.normal(size=(num_classes, dim))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        means += spread * dirs
    labels = np.concatenate([np.arange(num_classes),
                             rng.integers(0, num_classes, n - num_classes)])
    labels = labels[rng.permutation(n)].astype(np.int64)
    features = np.clip(means[labels] + rng.normal(0.0, std, (n, dim)), 0.0, 1.0)
    return LabeledDataset(features, labels, np.arange(n, dtype=np.int64), num_classes)


def _split_positions(n: int, parts: int, rng: np.random.Generator) -> list[np.ndarray]:
    order = rng.permutation(n)
    return np.array_split(order, parts)


def partition_iid(data: LabeledDataset, num_clients: int, seed: int) -> ClientPartition:
    """Shuffle and split into `num_clients` parts differing in size by <= 1."""
    if num_clients < 1:
        raise DataError("need at least one client")
    if len(data) < num_clients:
        raise DataError(f"cannot split {len(data)} rows across {num_clients} clients")
    rng = derive_rng(seed, "partition_iid", num_clients)
    parts = _split_positions(len(data), num_clients, rng)
    return ClientPartition([data.take(np.sort(p)) for p in parts])


def partition_heterogeneous(data: LabeledDataset, num_clients: int, seed: int, *,
                            size_exponent: float = 1.5,
                            label_concentration: float = 0.5) -> ClientPartition:
    """Power-law client sizes plus Dirichlet label skew.

    Sizes follow a Pareto law with the given pdf exponent, normalised to the
    dataset and floored at one example per class; each client's class mix is
    drawn from a symmetric Dirichlet. Some examples may remain unassigned
    when class pools run dry (union <= source by contract).
    """
    alpha = data.num_classes
    if num_clients < 2:
        raise DataError("heterogeneous partition needs at least two clients")
    if len(data) < num_clients * alpha:
        raise DataError("cannot give every client at least one example per class")
    rng = derive_rng(seed, "partition_het", num_clients)

    shape = size_exponent - 1.0  # Pareto shape for pdf ~ x^-(shape+1)
    raw = rng.pareto(shape, num_clients) + 1.0
    sizes = np.maximum((raw / raw.sum() * len(data)).astype(int), alpha)
    while sizes.sum() > len(data):
        sizes[int(np.argmax(sizes))] -= 1

    class_mix = rng.dirichlet([label_concentration] * alpha, num_clients)
    pools = {c: list(rng.permutation(np.nonzero(data.labels == c)[0]))
             for c in range(alpha)}
    client_rows: list[list[int]] = [[] for _ in range(num_clients)]
    for c in range(num_clients):
        want = np.maximum(np.round(class_mix[c] * sizes[c]).astype(int), 1)
        for cls in range(alpha):
            take = min(want[cls], len(pools[cls]))
            client_rows[c].extend(pools[cls][:take])
            del pools[cls][:take]
        short = sizes[c] - len(client_rows[c])
        if short > 0:  # top up from whatever classes still have examples
            leftovers = [cls for cls in range(alpha) if pools[cls]]
            for cls in leftovers:
                take = min(short, len(pools[cls]))
                client_rows[c].extend(pools[cls][:take])
                del pools[cls][:take]
                short -= take
                if short == 0:
                    break
    clients = [data.take(np.sort(np.asarray(rows, dtype=np.int64)))
               for rows in client_rows]
    if any(len(c) < alpha for c in clients):
        raise DataError("heterogeneous partition left a client with too few examples")
    realized = np.array([len(c) for c in clients], dtype=np.float64)
    return ClientPartition(clients, size_variance=float(realized.var()))


def shard_split(client_data: LabeledDataset, tau: int, seed: int) -> ShardSet:
    """Partition one client's data into tau disjoint shards (sizes differ <= 1)."""
    if tau < 1:
        raise DataError("shard count must be at least 1")
    if len(client_data) < tau:
        raise DataError(f"cannot split {len(client_data)} rows into {tau} shards")
    rng = derive_rng(seed, "shard_split", tau)
    parts = _split_positions(len(client_data), tau, rng)
    return ShardSet([client_data.take(np.sort(p)) for p in parts])


def _trigger_slice(dim: int, size: int) -> tuple[int, np.ndarray]:
    side = math.isqrt(dim)
    if side * side != dim:
        raise ShapeError(f"trigger needs a square image grid, got {dim} features")
    if size > side:
        raise ShapeError(f"trigger {size}x{size} larger than image {side}x{side}")
    rows = np.arange(side - size, side)
    flat = (rows[:, None] * side + rows[None, :]).ravel()
    return side, flat


def stamp_trigger(features: np.ndarray, spec: BackdoorSpec) -> np.ndarray:
    """Copy of `features` with the trigger patch stamped on every row."""
    _, flat = _trigger_slice(features.shape[1], spec.trigger_size)
    out = np.array(features, dtype=np.float64)
    out[:, flat] = spec.trigger_value
    return out


def inject_backdoor(data: LabeledDataset, spec: BackdoorSpec,
                    seed: int) -> tuple[LabeledDataset, frozenset]:
    """Stamp the trigger on floor(rate * n) rows and relabel them to the target.

    Returns the poisoned dataset plus the ids of the poisoned rows; all other
    rows are bit-identical to the input. Re-poisoning the same rows is a
    no-op (idempotent).
    """
    n_poison = int(spec.poison_rate * len(data))
    if n_poison < 1:
        raise DataError("poison rate selects no examples")
    if spec.target_label >= data.num_classes:
        raise DataError("backdoor target label outside the label range")
    rng = derive_rng(seed, "backdoor", spec.target_label)
    rows = np.sort(rng.choice(len(data), size=n_poison, replace=False))
    features = np.array(data.features)
    _, flat = _trigger_slice(data.dim, spec.trigger_size)
    features[np.ix_(rows, flat)] = spec.trigger_value
    labels = np.array(data.labels)
    labels[rows] = spec.target_label
    poisoned = LabeledDataset(features, labels, data.ids, data.num_classes)
    return poisoned, frozenset(data.ids[rows].tolist())


def apply_deletion(client_data: LabeledDataset,
                   request: DeletionRequest) -> tuple[LabeledDataset, LabeledDataset]:
    """Split a client's data into (forget, remain) views by requested ids."""
    requested = np.asarray(sorted(request.deleted_ids), dtype=np.int64)
    unknown = np.setdiff1d(requested, client_data.ids)
    if unknown.size:
        raise DataError(f"deletion request names unknown ids: {unknown[:5].tolist()}")
    mask = np.isin(client_data.ids, requested)
    forget = client_data.take(np.nonzero(mask)[0])
    remain = client_data.take(np.nonzero(~mask)[0])
    return forget, remain


def save_csv(data: LabeledDataset, path) -> None:
    """Write `id,label,f0..f{d-1}` rows; floats use shortest round-trip repr."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["id", "label"] + [f"f{j}" for j in range(data.dim)])
        for i in range(len(data)):
            writer.writerow([int(data.ids[i]), int(data.labels[i])]
                            + [repr(float(v)) for v in data.features[i]])


def load_csv(path, num_classes: int | None = None) -> LabeledDataset:
    """Reload a dataset written by `save_csv`."""
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if not header or header[:2] != ["id", "label"]:
            raise FormatError(f"{path}: expected 'id,label,f0..' header")
        rows = list(reader)
    if not rows:
        raise FormatError(f"{path}: no data rows")
    ids = np.array([int(r[0]) for r in rows], dtype=np.int64)
    labels = np.array([int(r[1]) for r in rows], dtype=np.int64)
    feats = np.array([[float(v) for v in r[2:]] for r in rows], dtype=np.float64)
    if num_classes is None:
        num_classes = int(labels.max()) + 1 if labels.size else 2
    return LabeledDataset(feats, labels, ids, max(num_classes, 2))
