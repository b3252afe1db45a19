"""End-to-end acceptance gate.

Each test checks one shipped guarantee and reports a single pass/fail line
(echoed in the terminal summary).  The behavioral tests share one set of
benchmark runs on the packaged rot5 config over three seeds.
"""

import json
import os
from importlib import resources

import numpy as np
import pytest

from flatcl.autodiff import finite_diff_gradient
from flatcl.metrics import forgetting, intransigence
from flatcl.optim import compute_perturbation, create_gradient
from flatcl.probe import (ball_sharpness, create_decomposition_check,
                          fisher_trace_check, hvp, lanczos_lambda_max,
                          model_objective, quadratic_objective)
from flatcl.runner import (build_optimizer_config, build_stream,
                           read_matrix_csv, run_single_seed, _build_model)

from conftest import random_batch, random_mlp

RESULTS = []
SEEDS = [1, 2, 3]


def _record(name, ok, detail=""):
    line = f"[{'PASS' if ok else 'FAIL'}] {name}" + (f"  ({detail})" if detail else "")
    RESULTS.append(line)
    print(line)
    assert ok, line


def _rot5_config():
    with resources.files("flatcl").joinpath("configs/rot5.json").open() as f:
        return json.load(f)


@pytest.fixture(scope="module")
def bench(tmp_path_factory):
    """Benchmark runs shared by the behavioral criteria: metrics rows and
    output directories per (variant-or-sparse-setting, seed)."""
    cfg = _rot5_config()
    root = tmp_path_factory.mktemp("acceptance")
    rows, dirs = {}, {}

    def run_all(key, config, variant):
        rows[key], dirs[key] = [], []
        for seed in SEEDS:
            out = str(root / f"{key}_seed{seed}")
            rows[key].append(run_single_seed(config, variant, seed, out))
            dirs[key].append(out)

    for variant in ("seq", "replay", "cf", "cf_minus_find", "cf_minus_create",
                    "create_only"):
        run_all(variant, cfg, variant)
    for ratio in (0.1, 0.5):
        sparse_cfg = json.loads(json.dumps(cfg))
        sparse_cfg["optimizer"]["sparse_update_ratio"] = ratio
        run_all(f"sparse{ratio}", sparse_cfg, "cf")
    return {"cfg": cfg, "root": root, "rows": rows, "dirs": dirs}


def _accs(bench, key):
    return np.array([r["avg_accuracy_after_last"] for r in bench["rows"][key]])


def _forgets(bench, key):
    return np.array([r["forgetting"] for r in bench["rows"][key]])


def _std(vals):
    return float(np.std(vals, ddof=1))


# -- criterion 1: gradient correctness --------------------------------------

def test_criterion_01_gradient_correctness():
    rng = np.random.default_rng(0)
    worst = 0.0
    for trial in range(20):
        input_dim = int(rng.integers(2, 6))
        hidden = tuple(int(rng.integers(2, 7))
                       for _ in range(int(rng.integers(0, 3))))
        classes = (int(rng.integers(2, 5)),)
        activation = ["tanh", "relu"][trial % 2]
        model = random_mlp(100 + trial, input_dim=input_dim, hidden=hidden,
                           classes=classes, activation=activation)
        batch = random_batch(200 + trial, model, n=int(rng.integers(1, 9)))
        _, grads = model.loss_gradient(batch)

        def loss_fn(ps):
            model.set_parameters(ps)
            return model.task_loss(batch)

        ps0 = model.parameters().copy()
        fd = finite_diff_gradient(loss_fn, ps0, h=1e-5)
        model.set_parameters(ps0)
        for n in grads:
            denom = np.maximum(np.abs(fd[n]), 1e-6)
            worst = max(worst, float(np.max(np.abs(grads[n] - fd[n]) / denom)))
    _record("criterion 1: reverse-mode gradients vs finite differences",
            worst <= 1e-6, f"max rel err {worst:.2e}")


# -- criterion 2: create-gradient oracle ------------------------------------

def test_criterion_02_create_oracle():
    # quadratic example: L = w^2/2 at w=1, rho=0.1 -> grad 1.1, loss 0.605
    obj = quadratic_objective([[1.0]], [1.0])
    eps = compute_perturbation(obj.params, obj.gradient(), 0.1).epsilon_hat
    w_pert = 1.0 + eps["w"][0]
    quad_ok = (abs(w_pert * 1.0 - 1.1) <= 1e-12
               and abs(0.5 * w_pert ** 2 - 0.605) <= 1e-12)

    # independent-model oracle on random MLPs
    model_ok, bitwise_ok = True, True
    for trial in range(5):
        model = random_mlp(300 + trial)
        batch = random_batch(400 + trial, model)
        created, loss_c = create_gradient(model, batch, rho=0.3)
        _, g0 = model.loss_gradient(batch)
        eps = compute_perturbation(model.parameters(), g0, 0.3).epsilon_hat
        twin = model.clone()
        for n in twin.parameters():
            np.copyto(twin.parameters()[n], model.parameters()[n] + eps[n])
        loss_t, grads_t = twin.loss_gradient(batch)
        if abs(loss_c - loss_t) > 1e-12 or any(
                np.max(np.abs(created[n] - grads_t[n])) > 1e-12 for n in created):
            model_ok = False
        plain, _ = create_gradient(model, batch, rho=0.0)
        _, ref = model.loss_gradient(batch)
        if any(not np.array_equal(plain[n], ref[n]) for n in plain):
            bitwise_ok = False
    _record("criterion 2: create gradient equals independent model at w+eps; "
            "rho=0 is the plain gradient bitwise",
            quad_ok and model_ok and bitwise_ok)


# -- criterion 3: box invariant during a full cf run ------------------------

def test_criterion_03_box_invariant():
    from flatcl.optim import train_continual
    cfg = _rot5_config()
    stream = build_stream(cfg, 1)
    opt = build_optimizer_config(cfg, "cf")
    model = _build_model(cfg, stream, 1)
    worst = [0.0]
    violations = [0]

    def monitor(m, region):
        if region is None:
            return
        params = m.parameters()
        for nm in region.constrained_names:
            anchor = region.anchor[nm]
            half = region.rho * np.abs(anchor)
            over = float(np.max(np.abs(params[nm] - anchor) - half))
            worst[0] = max(worst[0], over)
            if over > 1e-12:
                violations[0] += 1

    train_continual(model, stream, opt, seed=1,
                    epochs=cfg["epochs_per_task"], step_hook=monitor)
    _record("criterion 3: every constrained weight inside the clamp box "
            "after every step of a full 5-task run",
            violations[0] == 0, f"max overshoot {worst[0]:.2e}")


# -- criterion 4: fisher trace + additive decomposition identities ----------

def test_criterion_04_identities():
    rng = np.random.default_rng(1)
    trace_ok = decomp_ok = True
    for trial in range(10):
        model = random_mlp(500 + trial,
                           hidden=(int(rng.integers(2, 7)),))
        feats = rng.normal(size=(10, model.input_dim))
        labels = rng.integers(0, 3, size=10)
        _, _, gap = fisher_trace_check(model, feats, labels, 0)
        if gap > 1e-10:
            trace_ok = False
        batch = random_batch(600 + trial, model)
        perturbed, excess, base = create_decomposition_check(
            model_objective(model, batch), 0.65)
        if abs(perturbed - (excess + base)) > 1e-12:
            decomp_ok = False
    _record("criterion 4: fisher trace identity (rel gap <= 1e-10) and "
            "additive sharpness decomposition (<= 1e-12) on 10 random models",
            trace_ok and decomp_ok)


# -- criterion 5: first-order sharpness -------------------------------------

def test_criterion_05_first_order_sharpness():
    worst = 0.0
    for trial in range(5):
        model = random_mlp(700 + trial)
        batch = random_batch(800 + trial, model)
        obj = model_objective(model, batch)
        rho = 1e-3
        first = rho * obj.gradient().norm()
        ball = ball_sharpness(obj, rho, n_directions=4, seed=trial)
        worst = max(worst, abs(ball - first) / first)
    _record("criterion 5: ball sharpness at rho=1e-3 matches rho*||grad|| "
            "within 1%", worst <= 0.01, f"max rel dev {worst:.2e}")


# -- criterion 6: lanczos accuracy ------------------------------------------

def test_criterion_06_lanczos():
    obj = quadratic_objective(np.diag([1.0, 3.0]), [0.2, 0.4])
    exact = lanczos_lambda_max(obj, iters=10, seed=0).lambda_max
    diag_ok = abs(exact - 3.0) <= 1e-6

    # small MLP (21 parameters): compare against a dense FD Hessian
    model = random_mlp(900, input_dim=2, hidden=(3,), classes=(3,))
    batch = random_batch(901, model, n=12)
    obj = model_objective(model, batch)
    dim = model.parameters().total_size()
    assert dim <= 50
    dense = np.zeros((dim, dim))
    for i in range(dim):
        e = model.parameters().zeros_like()
        offset = 0
        for n in e:
            if offset <= i < offset + e[n].size:
                e[n].ravel()[i - offset] = 1.0
            offset += e[n].size
        dense[:, i] = hvp(obj, e).flatten()
    ref = float(np.max(np.linalg.eigvalsh(0.5 * (dense + dense.T))))
    est = lanczos_lambda_max(obj, iters=25, seed=1).lambda_max
    mlp_ok = abs(est - ref) / abs(ref) <= 0.05
    _record("criterion 6: lanczos lambda_max exact on diag(1,3) and within "
            "5% of a dense Hessian on a small MLP",
            diag_ok and mlp_ok, f"mlp est {est:.4f} vs dense {ref:.4f}")


# -- criteria 7-10: behavioral benchmark ------------------------------------

def test_criterion_07_method_beats_baselines(bench):
    cf, rp, sq = (_accs(bench, k).mean() for k in ("cf", "replay", "seq"))
    acc_ok = cf > rp + 0.01 and rp > sq + 0.01
    f_cf, f_sq = _forgets(bench, "cf").mean(), _forgets(bench, "seq").mean()
    forget_ok = f_sq - f_cf >= 0.02
    f_nc = _forgets(bench, "cf_minus_create").mean()
    create_ok = f_cf <= f_nc
    _record("criterion 7: accuracy cf > replay > seq by >= 1pt; forgetting "
            "cf < seq by >= 2pt; forgetting cf <= no-create ablation",
            acc_ok and forget_ok and create_ok,
            f"acc {cf:.4f}/{rp:.4f}/{sq:.4f}, forget {f_cf:.4f}/{f_sq:.4f}/{f_nc:.4f}")


def test_criterion_08_ablation_ordering(bench):
    keys = ["cf", "cf_minus_find", "cf_minus_create", "seq"]
    means = {k: _accs(bench, k).mean() for k in keys}
    stds = {k: _std(_accs(bench, k)) for k in keys}
    soft_ok = all(
        means[a] >= means[b] - max(stds[a], stds[b])
        for a, b in zip(keys, keys[1:]))
    strict_ok = means["cf"] > means["seq"] and means["cf"] > means["cf_minus_create"]
    _record("criterion 8: ablation accuracy ordering cf >= -find >= -create "
            ">= seq within std; strict cf > seq and cf > -create",
            soft_ok and strict_ok,
            " ".join(f"{k}={means[k]:.4f}" for k in keys))


def test_criterion_09_flatness_probe(bench):
    wins = 0
    finals = []
    for i in range(len(SEEDS)):
        lam_cf = bench["rows"]["cf"][i]["sharpness_trace"][-1]["lambda_max"]
        lam_co = bench["rows"]["create_only"][i]["sharpness_trace"][-1]["lambda_max"]
        finals.append((lam_cf, lam_co))
        wins += lam_cf <= lam_co
    _record("criterion 9: final task-1 lambda_max of cf <= create_only on "
            ">= 2 of 3 seeds", wins >= 2,
            "; ".join(f"{a:.3f} vs {b:.3f}" for a, b in finals))


def test_criterion_10_sparsity_trend(bench):
    keys = ["sparse0.1", "sparse0.5", "cf"]  # ratios 0.1, 0.5, 1.0
    means = [_accs(bench, k).mean() for k in keys]
    stds = [_std(_accs(bench, k)) for k in keys]
    ok = all(means[i + 1] >= means[i] - max(stds[i], stds[i + 1])
             for i in range(len(keys) - 1))
    _record("criterion 10: accuracy non-decreasing in sparse update ratio "
            "{0.1, 0.5, 1.0} within one std", ok,
            " ".join(f"{m:.4f}" for m in means))


# -- criterion 11: determinism and resume -----------------------------------

def test_criterion_11_determinism_and_resume(bench):
    cfg = bench["cfg"]
    root = bench["root"]
    base_dir = bench["dirs"]["cf"][0]
    base_matrix = read_matrix_csv(os.path.join(base_dir, "matrix.csv"))

    rerun_dir = str(root / "cf_rerun")
    run_single_seed(cfg, "cf", SEEDS[0], rerun_dir)
    rerun_matrix = read_matrix_csv(os.path.join(rerun_dir, "matrix.csv"))
    rerun_ok = np.array_equal(base_matrix, rerun_matrix, equal_nan=True)

    resume_dir = str(root / "cf_resume")
    run_single_seed(cfg, "cf", SEEDS[0], resume_dir,
                    resume_from=os.path.join(base_dir, "ckpt_task2.bin"))
    resume_matrix = read_matrix_csv(os.path.join(resume_dir, "matrix.csv"))
    resume_ok = np.array_equal(base_matrix, resume_matrix, equal_nan=True)
    _record("criterion 11: identical config+seed reruns and mid-stream "
            "checkpoint resume reproduce the accuracy matrix bitwise",
            rerun_ok and resume_ok)


# -- criterion 12: metrics oracles ------------------------------------------

def test_criterion_12_metrics_oracles():
    matrix = np.array([
        [0.9, np.nan, np.nan],
        [0.7, 0.8, np.nan],
        [0.8, 0.6, 0.9],
    ])
    per_step, mean_f = forgetting(matrix)
    forget_ok = (abs(per_step[0] - 0.2) <= 1e-15
                 and abs(per_step[1] - 0.15) <= 1e-15
                 and abs(mean_f - 0.175) <= 1e-15)
    _, mean_i = intransigence(matrix, [0.95, 0.85, 0.95])
    intr_ok = abs(mean_i - 0.05) <= 1e-15
    _record("criterion 12: hand-worked forgetting (0.2, 0.15; mean 0.175) "
            "and intransigence (0.05) reproduce exactly",
            forget_ok and intr_ok)
