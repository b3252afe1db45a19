"""Synthetic continual-learning benchmarks and delimited-file ingestion."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class TaskDataset:
    name: str
    task_id: int
    features: np.ndarray  # (N, d) float64
    labels: np.ndarray    # (N,) int
    class_count: int
    splits: dict = field(default_factory=dict)  # {"train"|"val"|"test": index array}

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.min(initial=0) < 0 or self.labels.max(initial=0) >= self.class_count:
            raise ValueError(f"labels out of range for class_count={self.class_count}")
        if self.splits:
            all_idx = np.concatenate([np.asarray(v) for v in self.splits.values()])
            if len(np.unique(all_idx)) != len(all_idx) or len(all_idx) != len(self.labels):
                raise ValueError("splits must be disjoint and cover the dataset")

    def split_xy(self, split: str):
        idx = self.splits[split]
        return self.features[idx], self.labels[idx]

    def train_xy(self):
        return self.split_xy("train")

    def val_xy(self):
        return self.split_xy("val")

    def test_xy(self):
        return self.split_xy("test")


@dataclass
class TaskStream:
    tasks: list[TaskDataset]
    order_name: str = "default"

    def __post_init__(self):
        for i, t in enumerate(self.tasks):
            if t.task_id != i:
                raise ValueError("task_ids must be 0..T-1 in presented order")

    def __len__(self):
        return len(self.tasks)

    def __iter__(self):
        return iter(self.tasks)

    def __getitem__(self, i):
        return self.tasks[i]


def _split_indices(n, rng):
    """Deterministic 60/20/20 split."""
    perm = rng.permutation(n)
    n_train = int(round(0.6 * n))
    n_val = int(round(0.2 * n))
    return {
        "train": np.sort(perm[:n_train]),
        "val": np.sort(perm[n_train:n_train + n_val]),
        "test": np.sort(perm[n_train + n_val:]),
    }


def _simplex_means(classes, dim, separation):
    """Class means evenly spaced on a circle in the first two coordinates."""
    means = np.zeros((classes, dim))
    angles = 2.0 * np.pi * np.arange(classes) / classes
    means[:, 0] = separation * np.cos(angles)
    means[:, 1] = separation * np.sin(angles)
    return means


def _rotate_first_two(x, theta):
    out = x.copy()
    c, s = np.cos(theta), np.sin(theta)
    out[:, 0] = c * x[:, 0] - s * x[:, 1]
    out[:, 1] = s * x[:, 0] + c * x[:, 1]
    return out


def gen_rotated_gaussians(seed, n_tasks, classes_per_task, dim, samples_per_class,
                          separation, rotation_per_task) -> TaskStream:
    """Gaussian blob tasks whose class means rotate from task to task."""
    if dim < 2:
        raise ValueError("dim must be >= 2")
    if separation <= 0:
        raise ValueError("separation must be > 0")
    rng = np.random.Generator(np.random.PCG64(seed))
    base_means = _simplex_means(classes_per_task, dim, separation)
    tasks = []
    for t in range(n_tasks):
        means = _rotate_first_two(base_means, t * rotation_per_task)
        feats, labels = [], []
        for c in range(classes_per_task):
            feats.append(rng.normal(size=(samples_per_class, dim)) + means[c])
            labels.append(np.full(samples_per_class, c))
        features = np.concatenate(feats)
        labels = np.concatenate(labels)
        splits = _split_indices(len(labels), rng)
        tasks.append(TaskDataset(f"rot{t}", t, features, labels, classes_per_task, splits))
    return TaskStream(tasks, order_name="identity")


def gen_permuted_features(seed, n_tasks, classes, dim, samples_per_class,
                          separation) -> TaskStream:
    """One base Gaussian task; task t applies a fixed coordinate permutation."""
    rng = np.random.Generator(np.random.PCG64(seed))
    means = _simplex_means(classes, dim, separation)
    feats, labels = [], []
    for c in range(classes):
        feats.append(rng.normal(size=(samples_per_class, dim)) + means[c])
        labels.append(np.full(samples_per_class, c))
    base_features = np.concatenate(feats)
    base_labels = np.concatenate(labels)
    splits = _split_indices(len(base_labels), rng)
    tasks = []
    for t in range(n_tasks):
        perm = np.arange(dim) if t == 0 else rng.permutation(dim)
        tasks.append(TaskDataset(
            f"perm{t}", t, base_features[:, perm], base_labels.copy(), classes,
            {k: v.copy() for k, v in splits.items()},
        ))
    return TaskStream(tasks, order_name="identity")


def make_order(stream: TaskStream, permutation, order_name="custom") -> TaskStream:
    """Reorder (and possibly subset) a stream; task ids renumbered to 0..k-1."""
    permutation = list(permutation)
    if len(set(permutation)) != len(permutation) or any(
            p < 0 or p >= len(stream) for p in permutation):
        raise ValueError(f"invalid permutation {permutation} over {len(stream)} tasks")
    tasks = []
    for new_id, old_id in enumerate(permutation):
        src = stream[old_id]
        tasks.append(TaskDataset(src.name, new_id, src.features, src.labels,
                                 src.class_count, src.splits))
    return TaskStream(tasks, order_name=order_name)


class DelimitedParseError(ValueError):
    pass


def save_delimited(path, features, labels):
    """Full-precision decimal serialization; round-trips exactly."""
    with open(path, "w") as f:
        f.write("# columns: features..., label\n")
        for row, y in zip(np.asarray(features, dtype=np.float64), labels):
            f.write(",".join(repr(float(v)) for v in row) + f",{int(y)}\n")


def load_delimited(path, task_id=0, name=None, class_count=None,
                   split_seed=0, split_ratios=(0.6, 0.2, 0.2)) -> TaskDataset:
    """Parse comma-separated rows of d feature columns plus an integer label."""
    rows = []
    width = None
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            cells = line.split(",")
            if width is None:
                width = len(cells)
                if width < 2:
                    raise DelimitedParseError(
                        f"{path}:{lineno}: need at least one feature and a label column")
            elif len(cells) != width:
                raise DelimitedParseError(
                    f"{path}:{lineno}: ragged row ({len(cells)} cells, expected {width})")
            try:
                feats = [float(c) for c in cells[:-1]]
            except ValueError:
                raise DelimitedParseError(
                    f"{path}:{lineno}: non-numeric feature cell") from None
            try:
                label = int(cells[-1])
            except ValueError:
                raise DelimitedParseError(
                    f"{path}:{lineno}: non-integer label cell") from None
            rows.append((feats, label))
    if not rows:
        raise DelimitedParseError(f"{path}: empty file")
    features = np.array([r[0] for r in rows], dtype=np.float64)
    labels = np.array([r[1] for r in rows], dtype=np.int64)
    if class_count is None:
        class_count = int(labels.max()) + 1
    rng = np.random.Generator(np.random.PCG64(split_seed))
    n = len(labels)
    perm = rng.permutation(n)
    n_train = int(round(split_ratios[0] * n))
    n_val = int(round(split_ratios[1] * n))
    splits = {
        "train": np.sort(perm[:n_train]),
        "val": np.sort(perm[n_train:n_train + n_val]),
        "test": np.sort(perm[n_train + n_val:]),
    }
    return TaskDataset(name or path, task_id, features, labels, class_count, splits)
