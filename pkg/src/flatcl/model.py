"""Multi-head MLP classifier: shared encoder plus one output head per task."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .params import ParameterSet


@dataclass
class Batch:
    features: np.ndarray  # (batch, input_dim) float64
    labels: np.ndarray    # (batch,) int
    task_id: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.labels.ndim != 1:
            raise ValueError("features must be 2-D and labels 1-D")
        if self.features.shape[0] != self.labels.shape[0] or self.features.shape[0] < 1:
            raise ValueError("batch must be nonempty with matching features/labels")

    def __len__(self):
        return self.labels.shape[0]


def _kaiming_uniform(rng, fan_in, shape):
    bound = np.sqrt(6.0 / max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)


class MultiHeadClassifier:
    """Shared encoder with per-task affine heads.

    Parameters live as raw float64 arrays; every forward pass wraps them in
    fresh autodiff leaves, so perturb/restore is just array mutation.
    """

    def __init__(self, seed: int, input_dim: int, hidden_dims: list[int],
                 per_task_classes: list[int], activation: str = "tanh"):
        if input_dim < 1 or any(d < 1 for d in hidden_dims):
            raise ValueError("all dims must be >= 1")
        if len(per_task_classes) < 1 or any(c < 1 for c in per_task_classes):
            raise ValueError("need at least one task head with >= 1 classes")
        if activation not in ("tanh", "relu"):
            raise ValueError(f"unknown activation {activation!r}")
        self.init_seed = seed
        self.input_dim = input_dim
        self.hidden_dims = list(hidden_dims)
        self.activation = activation
        self.encoder: list[tuple[np.ndarray, np.ndarray]] = []
        rng = np.random.Generator(np.random.PCG64(seed))
        prev = input_dim
        for width in hidden_dims:
            w = _kaiming_uniform(rng, prev, (prev, width))
            b = np.zeros(width)
            self.encoder.append((w, b))
            prev = width
        self.heads: list[tuple[np.ndarray, np.ndarray]] = []
        self.head_classes: list[int] = []
        for classes in per_task_classes:
            self.add_task_head(classes)

    @property
    def encoder_dim(self) -> int:
        return self.hidden_dims[-1] if self.hidden_dims else self.input_dim

    def add_task_head(self, class_count: int) -> int:
        """Append a freshly initialized head; returns its task id."""
        if class_count < 1:
            raise ValueError("class_count must be >= 1")
        task_id = len(self.heads)
        # Head seeds derive from (init_seed, task_id) so adding heads later
        # reproduces the same weights regardless of training history.
        rng = np.random.Generator(np.random.PCG64([self.init_seed, 7919, task_id]))
        w = _kaiming_uniform(rng, self.encoder_dim, (self.encoder_dim, class_count))
        b = np.zeros(class_count)
        self.heads.append((w, b))
        self.head_classes.append(class_count)
        return task_id

    # -- parameter views -------------------------------------------------

    def parameters(self) -> ParameterSet:
        """Live view: arrays are the model's own storage, not copies."""
        ps = ParameterSet()
        for i, (w, b) in enumerate(self.encoder):
            ps[f"enc{i}.W"] = w
            ps[f"enc{i}.b"] = b
        for t, (w, b) in enumerate(self.heads):
            ps[f"head{t}.W"] = w
            ps[f"head{t}.b"] = b
        return ps

    def set_parameters(self, values: ParameterSet):
        own = self.parameters()
        own.require_aligned(values, "set_parameters")
        for name in own:
            np.copyto(own[name], values[name])

    def encoder_names(self) -> list[str]:
        return [n for n in self.parameters() if n.startswith("enc")]

    def head_names(self, task_id: int) -> list[str]:
        return [f"head{task_id}.W", f"head{task_id}.b"]

    def constrained_names(self, current_task: int) -> list[str]:
        """Encoder plus heads of tasks before `current_task`."""
        names = self.encoder_names()
        for t in range(min(current_task, len(self.heads))):
            names.extend(self.head_names(t))
        return names

    # -- forward ---------------------------------------------------------

    def _leaves(self) -> dict[str, ad.Tensor]:
        return {n: ad.leaf(a, requires_grad=True) for n, a in self.parameters().items()}

    def _forward_logits(self, leaves, features, task_id):
        if task_id >= len(self.heads):
            raise ValueError(f"no head for task {task_id} (have {len(self.heads)})")
        act = ad.tanh if self.activation == "tanh" else ad.relu
        h = ad.leaf(features)
        for i in range(len(self.encoder)):
            h = ad.add(ad.matmul(h, leaves[f"enc{i}.W"]), leaves[f"enc{i}.b"])
            h = act(h)
        return ad.add(ad.matmul(h, leaves[f"head{task_id}.W"]), leaves[f"head{task_id}.b"])

    def loss_tensor(self, batch: Batch):
        """(scalar loss tensor, leaves) for mean cross-entropy on a batch."""
        leaves = self._leaves()
        logits = self._forward_logits(leaves, batch.features, batch.task_id)
        loss = ad.nll_loss(ad.log_softmax(logits), batch.labels)
        return loss, leaves

    def task_loss(self, batch: Batch) -> float:
        loss, _ = self.loss_tensor(batch)
        return loss.item()

    def loss_gradient(self, batch: Batch):
        """(loss value, gradient ParameterSet) for mean cross-entropy."""
        loss, leaves = self.loss_tensor(batch)
        grads = ad.gradient(loss, leaves)
        return loss.item(), grads

    def log_prob_gradient(self, features, label, task_id: int) -> ParameterSet:
        """Per-sample gradient of log p(true label | x; w).

        Equals minus the gradient of the single-sample nll loss; the
        empirical-Fisher convention uses the observed label.
        """
        features = np.asarray(features, dtype=np.float64).reshape(1, -1)
        batch = Batch(features, np.array([label]), task_id)
        _, grads = self.loss_gradient(batch)
        return grads.scale(-1.0)

    def logits(self, features, task_id: int) -> np.ndarray:
        leaves = {n: ad.leaf(a) for n, a in self.parameters().items()}
        return self._forward_logits(leaves, np.asarray(features, dtype=np.float64), task_id).data

    def predict(self, features, task_id: int) -> np.ndarray:
        """Argmax class ids; ties broken by lowest class index."""
        return np.argmax(self.logits(features, task_id), axis=1)

    def accuracy(self, features, labels, task_id: int) -> float:
        pred = self.predict(features, task_id)
        return float(np.mean(pred == np.asarray(labels)))

    def clone(self) -> "MultiHeadClassifier":
        other = MultiHeadClassifier.__new__(MultiHeadClassifier)
        other.init_seed = self.init_seed
        other.input_dim = self.input_dim
        other.hidden_dims = list(self.hidden_dims)
        other.activation = self.activation
        other.encoder = [(w.copy(), b.copy()) for w, b in self.encoder]
        other.heads = [(w.copy(), b.copy()) for w, b in self.heads]
        other.head_classes = list(self.head_classes)
        return other
