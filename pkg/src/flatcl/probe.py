"""Flatness measurement suite.

Ball sharpness (max loss increase over a rho-ball), its first-order
approximation rho * ||grad||, the additive decomposition of the perturbed
loss, the Fisher trace identity, and a largest-Hessian-eigenvalue estimate
via Lanczos on finite-difference Hessian-vector products.

Every probe perturbs weights through a save/restore window and leaves them
bitwise unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import Batch, MultiHeadClassifier
from .optim import compute_perturbation
from .params import ParameterSet


class Objective:
    """Scalar objective over a live ParameterSet.

    Probes mutate `params` in place (and restore them), so `value` and
    `gradient` must read the current array contents on every call.
    """

    def __init__(self, params: ParameterSet, value_fn, gradient_fn=None):
        self.params = params
        self._value_fn = value_fn
        self._gradient_fn = gradient_fn

    def value(self) -> float:
        return float(self._value_fn(self.params))

    def gradient(self) -> ParameterSet:
        if self._gradient_fn is None:
            raise NotImplementedError("objective has no gradient")
        return self._gradient_fn(self.params)


def model_objective(model: MultiHeadClassifier, batch: Batch) -> Objective:
    return Objective(
        model.parameters(),
        lambda _: model.task_loss(batch),
        lambda _: model.loss_gradient(batch)[1],
    )


def quadratic_objective(matrix, w0) -> Objective:
    """L(w) = 1/2 w^T A w on a single parameter named 'w' (test surrogate)."""
    matrix = np.asarray(matrix, dtype=np.float64)
    params = ParameterSet({"w": np.asarray(w0, dtype=np.float64)})
    return Objective(
        params,
        lambda p: 0.5 * float(p["w"] @ matrix @ p["w"]),
        lambda p: ParameterSet({"w": matrix @ p["w"]}),
    )


def _perturbed_value(obj: Objective, direction: ParameterSet) -> float:
    saved = obj.params.copy()
    try:
        for n in obj.params:
            obj.params[n] += direction[n]
        val = obj.value()
    finally:
        for n in obj.params:
            np.copyto(obj.params[n], saved[n])
    if not np.isfinite(val):
        raise FloatingPointError("non-finite loss at perturbed point")
    return val


def ball_sharpness(obj: Objective, rho: float, n_directions: int, seed: int) -> float:
    """Max of L(w+eps) - L(w) over random rho-sphere directions plus the
    non-adaptive gradient-ascent direction rho * g / ||g||."""
    if n_directions < 1:
        raise ValueError("n_directions must be >= 1")
    base = obj.value()
    rng = np.random.Generator(np.random.PCG64(seed))
    directions = []
    g = obj.gradient()
    gnorm = g.norm()
    if gnorm > 0:
        directions.append(g.scale(rho / gnorm))
    for _ in range(n_directions):
        d = ParameterSet((n, rng.normal(size=a.shape)) for n, a in obj.params.items())
        dnorm = d.norm()
        if dnorm > 0:
            directions.append(d.scale(rho / dnorm))
    best = 0.0 if not directions else -np.inf
    for d in directions:
        best = max(best, _perturbed_value(obj, d) - base)
    return float(best)


def first_order_sharpness(obj: Objective, rho: float) -> float:
    """First-order Taylor estimate of ball sharpness: rho * ||grad||_2."""
    return rho * obj.gradient().norm()


def create_decomposition_check(obj: Objective, rho: float):
    """(loss at w+eps_hat, its excess over the base loss, base loss).

    The excess term is the sharpness contribution; the three values satisfy
    perturbed = excess + base exactly by construction.
    """
    base = obj.value()
    grads = obj.gradient()
    eps = compute_perturbation(obj.params, grads, rho).epsilon_hat
    perturbed = _perturbed_value(obj, eps)
    return perturbed, perturbed - base, base


def fisher_trace_check(model: MultiHeadClassifier, features, labels, task_id: int):
    """Trace of the diagonal empirical Fisher vs mean squared gradient norm
    over the same samples: (trace, mean_sq_grad_norm, rel_gap)."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    if len(labels) < 1:
        raise ValueError("need at least one sample")
    # Two reduction orders: the trace sums per-coordinate Fisher values that
    # were each averaged over samples; the other side averages per-sample
    # squared gradient norms.  Algebraically equal.
    fisher = model.parameters().zeros_like()
    mean_sq = 0.0
    for i in range(len(labels)):
        g = model.log_prob_gradient(features[i], labels[i], task_id)
        for n in fisher:
            fisher[n] += g[n] * g[n]
        mean_sq += sum(float(np.sum(a * a)) for a in g.values())
    trace = sum(float(np.sum(a)) for a in fisher.values()) / len(labels)
    mean_sq /= len(labels)
    denom = max(abs(mean_sq), 1e-300)
    return trace, mean_sq, abs(trace - mean_sq) / denom


def hvp(obj: Objective, v: ParameterSet, r: float | None = None) -> ParameterSet:
    """Central-difference Hessian-vector product (g(w+rv) - g(w-rv)) / 2r."""
    vnorm = v.norm()
    if vnorm == 0:
        raise ValueError("direction must be nonzero")
    if r is None:
        wnorm = obj.params.norm()
        r = 1e-4 * (1.0 + wnorm) / vnorm
    if r <= 0:
        raise ValueError("r must be > 0")
    saved = obj.params.copy()
    try:
        for n in obj.params:
            obj.params[n] += r * v[n]
        g_plus = obj.gradient()
        for n in obj.params:
            np.copyto(obj.params[n], saved[n] - r * v[n])
        g_minus = obj.gradient()
    finally:
        for n in obj.params:
            np.copyto(obj.params[n], saved[n])
    if not (g_plus.all_finite() and g_minus.all_finite()):
        raise FloatingPointError("non-finite gradient during hvp")
    return g_plus.sub(g_minus).scale(1.0 / (2.0 * r))


@dataclass
class LanczosResult:
    lambda_max: float
    log_lambda_max: float
    iters_run: int
    breakdown: bool


def lanczos_lambda_max(obj: Objective, iters: int = 30, seed: int = 0) -> LanczosResult:
    """Largest Hessian eigenvalue via Lanczos with full reorthogonalization,
    using finite-difference HVPs as the operator."""
    if iters < 1:
        raise ValueError("iters must be >= 1")
    rng = np.random.Generator(np.random.PCG64(seed))
    q = ParameterSet((n, rng.normal(size=a.shape)) for n, a in obj.params.items())
    q = q.scale(1.0 / q.norm())
    basis = [q]
    alphas, betas = [], []
    breakdown = False
    for j in range(iters):
        w = hvp(obj, basis[j])
        alpha = w.dot(basis[j])
        alphas.append(alpha)
        w = w.add_scaled(basis[j], -alpha)
        if j > 0:
            w = w.add_scaled(basis[j - 1], -betas[-1])
        for b in basis:  # full reorthogonalization
            w = w.add_scaled(b, -w.dot(b))
        beta = w.norm()
        if j + 1 == iters:
            break
        if beta < 1e-12:
            breakdown = True
            break
        betas.append(beta)
        basis.append(w.scale(1.0 / beta))
    k = len(alphas)
    tri = np.diag(alphas)
    for i, b in enumerate(betas[:k - 1]):
        tri[i, i + 1] = tri[i + 1, i] = b
    lam = float(np.max(np.linalg.eigvalsh(tri)))
    return LanczosResult(lam, float(np.log(max(lam, 1e-30))), k, breakdown)


@dataclass
class SharpnessReport:
    ball_sharpness: float
    first_order_sharpness: float
    lambda_max: float
    log_lambda_max: float
    rho_used: float
    n_directions: int
    lanczos_iters: int

    def as_dict(self):
        return {
            "ball_sharpness": self.ball_sharpness,
            "first_order_sharpness": self.first_order_sharpness,
            "lambda_max": self.lambda_max,
            "log_lambda_max": self.log_lambda_max,
            "rho_used": self.rho_used,
            "n_directions": self.n_directions,
            "lanczos_iters": self.lanczos_iters,
        }


def sharpness_report(model: MultiHeadClassifier, batch: Batch, rho: float,
                     n_directions: int = 16, lanczos_iters: int = 30,
                     seed: int = 0) -> SharpnessReport:
    obj = model_objective(model, batch)
    ball = ball_sharpness(obj, rho, n_directions, seed)
    first = first_order_sharpness(obj, rho)
    lres = lanczos_lambda_max(obj, lanczos_iters, seed)
    return SharpnessReport(ball, first, lres.lambda_max, lres.log_lambda_max,
                           rho, n_directions, lres.iters_run)
