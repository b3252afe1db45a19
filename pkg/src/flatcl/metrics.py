"""Continual-learning scoring from the accuracy matrix.

a[l][j] is accuracy on task j's test set after training through task l
(0-based, lower-triangular).  Intransigence compares against a jointly
trained reference; forgetting compares each task's current accuracy to the
best it ever had.
"""

from __future__ import annotations

import numpy as np


def _check_matrix(matrix):
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ValueError("accuracy matrix must be square")
    t = matrix.shape[0]
    for l in range(t):
        for j in range(l + 1):
            if not np.isfinite(matrix[l, j]):
                raise ValueError(f"incomplete accuracy matrix at [{l}][{j}]")
    return matrix


def avg_accuracy_after_last(matrix) -> float:
    """Mean accuracy over all tasks after training on the last one."""
    matrix = _check_matrix(matrix)
    return float(matrix[-1, :].mean())


def intransigence(matrix, reference):
    """Per-task I_k = reference_k - a[k][k]; returns (per-task, mean).

    Lower is better; negative means the sequential run beat the joint
    reference on that task.
    """
    matrix = _check_matrix(matrix)
    reference = np.asarray(reference, dtype=np.float64)
    if reference.shape[0] != matrix.shape[0]:
        raise ValueError("reference must cover every task")
    per_task = reference - np.diag(matrix)
    return per_task, float(per_task.mean())


def forgetting(matrix):
    """Forgetting after each task k >= 2 (0-based k >= 1).

    f_j^k = max over l < k of a[l][j], minus a[k][j]; F_k averages f_j^k
    over previously seen tasks j < k.  Returns (per-step F_k array of
    length T-1, mean over those steps).  Undefined for a single task.
    """
    matrix = _check_matrix(matrix)
    t = matrix.shape[0]
    if t < 2:
        return None, None
    per_step = []
    for k in range(1, t):
        # a[l][j] exists only for l >= j, so the max over l < k runs l = j..k-1
        f_vals = [np.max(matrix[j:k, j]) - matrix[k, j] for j in range(k)]
        per_step.append(float(np.mean(f_vals)))
    return np.array(per_step), float(np.mean(per_step))


def summarize(matrix, reference=None) -> dict:
    """JSON-friendly summary of all metrics for one run."""
    matrix = _check_matrix(matrix)
    out = {"avg_accuracy_after_last": avg_accuracy_after_last(matrix)}
    per_step, mean_f = forgetting(matrix)
    out["forgetting_per_step"] = None if per_step is None else per_step.tolist()
    out["forgetting"] = mean_f
    if reference is not None:
        per_task, mean_i = intransigence(matrix, reference)
        out["intransigence_per_task"] = per_task.tolist()
        out["intransigence"] = mean_i
    return out
