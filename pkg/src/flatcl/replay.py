"""Exemplar storage via K-means representativeness and scheduled replay."""

from __future__ import annotations

import numpy as np

from .model import Batch


def _kmeans_pp_init(features, k, rng):
    n = features.shape[0]
    centroids = np.empty((k, features.shape[1]))
    first = int(rng.integers(n))
    centroids[0] = features[first]
    d2 = np.sum((features - centroids[0]) ** 2, axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centroids[i] = features[idx]
        d2 = np.minimum(d2, np.sum((features - centroids[i]) ** 2, axis=1))
    return centroids


def select_exemplars(features, labels, k, seed, max_iters=100):
    """K-means the raw features; keep the sample nearest each centroid.

    Returns sorted row indices into `features`.  k >= dataset size keeps
    every row.  Ties go to the lowest index.
    """
    features = np.asarray(features, dtype=np.float64)
    n = features.shape[0]
    if n == 0:
        raise ValueError("task_data must be nonempty")
    if k >= n:
        return np.arange(n)
    rng = np.random.Generator(np.random.PCG64(seed))
    centroids = _kmeans_pp_init(features, k, rng)
    assign = None
    for _ in range(max_iters):
        dists = np.sum((features[:, None, :] - centroids[None, :, :]) ** 2, axis=2)
        new_assign = np.argmin(dists, axis=1)
        if assign is not None and np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for c in range(k):
            members = features[assign == c]
            if len(members):
                centroids[c] = members.mean(axis=0)
    dists = np.sum((features[:, None, :] - centroids[None, :, :]) ** 2, axis=2)
    picked = []
    for c in range(k):
        # argmin over all rows of distance-to-centroid, restricted to the
        # cluster when nonempty; np.argmin breaks ties by lowest index.
        members = np.where(assign == c)[0]
        pool = members if len(members) else np.arange(n)
        picked.append(int(pool[np.argmin(dists[pool, c])]))
    picked = list(np.unique(picked))
    # Degenerate clusters can collapse onto one sample; pad back to k so the
    # buffer size stays exactly max(1, floor(ratio * n)).
    for i in range(n):
        if len(picked) == k:
            break
        if i not in picked:
            picked.append(i)
    return np.sort(picked)


class ReplayBuffer:
    """Fixed exemplar store, filled once per finished task."""

    def __init__(self, store_ratio=0.01, replay_every=20):
        if not (0 < store_ratio <= 1):
            raise ValueError("store_ratio must be in (0, 1]")
        if replay_every < 1:
            raise ValueError("replay_every must be >= 1")
        self.store_ratio = store_ratio
        self.replay_every = replay_every
        self.exemplars: list[tuple[np.ndarray, int, int]] = []  # (feature, label, task_id)

    def __len__(self):
        return len(self.exemplars)

    def add_task(self, features, labels, task_id, seed):
        k = max(1, int(np.floor(self.store_ratio * len(labels))))
        idx = select_exemplars(features, labels, k, seed)
        for i in idx:
            self.exemplars.append((np.array(features[i], dtype=np.float64),
                                   int(labels[i]), int(task_id)))

    def task_counts(self):
        counts = {}
        for _, _, t in self.exemplars:
            counts[t] = counts.get(t, 0) + 1
        return counts

    def sample_batches(self, batch_size, rng) -> list[Batch]:
        """Uniform draw over all exemplars, grouped by task into per-head batches."""
        if not self.exemplars:
            return []
        idx = rng.integers(len(self.exemplars), size=batch_size)
        groups: dict[int, list[int]] = {}
        for i in idx:
            groups.setdefault(self.exemplars[i][2], []).append(int(i))
        batches = []
        for task_id in sorted(groups):
            rows = groups[task_id]
            feats = np.stack([self.exemplars[i][0] for i in rows])
            labels = np.array([self.exemplars[i][1] for i in rows])
            batches.append(Batch(feats, labels, task_id))
        return batches


def replay_schedule(step_index, replay_every) -> bool:
    return step_index > 0 and step_index % replay_every == 0
