import numpy as np
import pytest

from metaprompt import metagrad as mg
from metaprompt import promptmodel as pm
from metaprompt.augment import clamp_b, curriculum_b
from metaprompt.metalearn import (
    MetaState,
    TrainConfig,
    init_state,
    inner_adapt,
    meta_train,
    outer_objective,
    outer_step,
    sample_batch,
    task_cosine,
    task_terms,
)
from metaprompt.optim import SGD
from metaprompt.taskgen import TaskError

from conftest import random_phi, random_task
from oracles import central_fd, fomaml_reference, rel_err


def test_config_validation_and_parsing():
    with pytest.raises(ValueError):
        TrainConfig(alpha1=-1)
    with pytest.raises(ValueError):
        TrainConfig(support_size=0)
    with pytest.raises(ValueError):
        TrainConfig(cosine_source="other")
    cfg = TrainConfig.from_mapping({"alpha1": "0.5", "curriculum": "off", "max_steps": "7"})
    assert cfg.alpha1 == 0.5 and cfg.curriculum is False and cfg.max_steps == 7
    with pytest.raises(ValueError):
        TrainConfig.from_mapping({"nope": "1"})


def test_inner_adapt_cases(backbone):
    rng = np.random.default_rng(0)
    task = random_task(rng)
    theta = rng.standard_normal((3, 32))
    phi = mg.RegularizerState.identity(32, 32)
    same, _, _ = inner_adapt(backbone, theta, random_phi(rng, 32, 32), task, 0.0)
    assert np.array_equal(same, theta)
    tp, g0, z = inner_adapt(backbone, theta, phi, task, 0.1)
    assert np.allclose(tp, theta - 0.1 * g0, atol=1e-15) and np.allclose(z, 0.5)


def test_inner_step_arithmetic():
    theta, g0 = np.array([[1.0]]), np.array([[0.5]])
    phi = mg.RegularizerState.identity(1, 1)
    psi = mg.transform(phi, mg.gate(phi, np.zeros(1)), g0)
    assert np.allclose(theta - 0.1 * psi, [[0.95]])


def test_task_cosine():
    v = np.array([[1.0, 2.0], [3.0, -1.0]])
    assert task_cosine(v, v) == pytest.approx(1.0)
    assert task_cosine(v, -v) == pytest.approx(-1.0)
    assert task_cosine(np.array([1.0, 0.0]), np.array([0.0, 2.0])) == 0.0
    assert task_cosine(v, np.zeros_like(v)) == 0.0


def test_alpha_zero_reduces_to_query_descent(backbone):
    rng = np.random.default_rng(1)
    tasks = [random_task(rng), random_task(rng, "mc")]
    cfg = TrainConfig(alpha1=0.0, beta1=0.2, optimizer="sgd")
    state = init_state(cfg, backbone)
    new, rec = outer_step(state, tasks, cfg, backbone)
    want = state.theta - 0.2 * sum(pm.grad_prompt(backbone.scorer, state.theta, t.query) for t in tasks)
    assert np.allclose(new.theta, want, atol=1e-15)
    terms = [task_terms(backbone, state.theta, state.phi, t, cfg, rec["b"]) for t in tasks]
    assert all(not t.grad_phi.A.any() and not t.grad_phi.c.any() for t in terms)
    assert any(t.grad_phi.b.any() for t in terms)  # the gate penalty alone


@pytest.mark.parametrize("optimizer", ["sgd", "adam"])
def test_matches_first_order_maml_reference(backbone, optimizer):
    rng = np.random.default_rng(2)
    pool = [random_task(rng, f) for f in ("sp", "mc", "ss", "sp", "mc", "ss")]
    cfg = TrainConfig(regularizer=False, augmentation=False, curriculum=False, tasks_per_batch=2,
                      max_steps=10, optimizer=optimizer, beta1=0.05, seed=3)
    res = meta_train(pool, cfg, backbone)
    batches = [sample_batch(pool, cfg, k) for k in range(10)]
    ref = fomaml_reference(backbone.scorer, init_state(cfg, backbone).theta, batches, cfg.alpha1, cfg.beta1, optimizer)
    assert np.max(np.abs(res.final.theta - ref[-1])) <= 1e-10


def test_phi_gradient_exact_through_outer_loss():
    from metaprompt.pipeline import make_backbone

    bb = make_backbone(d_p=4, d_h=3)
    rng = np.random.default_rng(4)
    tasks = [random_task(rng, "sp", d_h=3), random_task(rng, "mc", d_h=3)]
    cfg = TrainConfig(alpha1=0.3, d_p=4, reg_coeff=0.8)
    theta = rng.standard_normal((2, 4))
    phi = random_phi(rng, 4, 3)
    total = {k: 0 for k in phi.arrays()}
    for t in tasks:
        for k, v in task_terms(bb, theta, phi, t, cfg, 0.35).grad_phi.arrays().items():
            total[k] = total[k] + v
    for name, arr in phi.arrays().items():
        fd = central_fd(lambda _: outer_objective(bb, theta, phi, tasks, cfg, 0.35), arr)
        assert rel_err(total[name], fd) <= 1e-6, name


def test_first_order_error_shrinks_with_alpha(backbone):
    rng = np.random.default_rng(5)
    tasks = [random_task(rng, "sp"), random_task(rng, "ss")]
    phi = random_phi(rng, 32, 32, 0.1)
    theta = rng.standard_normal((2, 32))
    errs = []
    for a in (0.1, 0.05):
        cfg = TrainConfig(alpha1=a)
        fo = sum(task_terms(backbone, theta, phi, t, cfg, 0.5).grad_theta for t in tasks)
        fd = central_fd(lambda th: outer_objective(backbone, th, phi, tasks, cfg, 0.5), theta.copy())
        errs.append(rel_err(fo, fd))
    assert 0.3 <= errs[1] / errs[0] <= 0.8


def test_max_steps_zero_returns_initial(backbone, bundle):
    cfg = TrainConfig(max_steps=0, seed=2)
    res = meta_train(bundle.train, cfg, backbone, bundle.val)
    init = init_state(cfg, backbone)
    assert np.array_equal(res.theta, init.theta) and np.array_equal(res.phi.flat(), init.phi.flat())
    assert res.metrics == []


def test_metrics_contract_and_determinism(backbone, bundle):
    cfg = TrainConfig(max_steps=30, validate_every=10, seed=4)
    a = meta_train(bundle.train, cfg, backbone, bundle.val)
    b = meta_train(bundle.train, cfg, backbone, bundle.val)
    assert a.metrics == b.metrics and np.array_equal(a.final.theta, b.final.theta)
    keys = {"step", "loss_q", "loss_reg", "s", "b", "mean_z", "val_loss", "val_acc"}
    prev_s = -1.0
    for k, rec in enumerate(a.metrics, start=1):
        assert set(rec) == keys and rec["step"] == k
        assert rec["b"] == clamp_b(curriculum_b(prev_s, cfg.m), cfg.b_min)
        assert -1.0 <= rec["s"] <= 1.0 and 0.0 < rec["mean_z"] < 1.0
        assert (rec["val_loss"] is not None) == (k % 10 == 0)
        prev_s = rec["s"]
    assert a.best_step in (0, 10, 20, 30)


def test_resume_is_bit_identical(backbone, bundle):
    cfg = TrainConfig(max_steps=20, seed=6)
    full = meta_train(bundle.train, cfg, backbone)
    half = meta_train(bundle.train, TrainConfig(max_steps=10, seed=6), backbone)
    rest = meta_train(bundle.train, cfg.__class__(**{**cfg.to_dict(), "max_steps": 10}), backbone, state=half.final)
    assert np.array_equal(full.final.theta, rest.final.theta)
    assert full.metrics[10:] == rest.metrics


def test_errors(backbone):
    cfg = TrainConfig()
    with pytest.raises(TaskError):
        meta_train([], cfg, backbone)
    state = MetaState(np.zeros((8, 32)), mg.RegularizerState.identity(32, 32), opt_theta=SGD(0.1), opt_phi=SGD(0.1))
    with pytest.raises(TaskError):
        outer_step(state, [], cfg, backbone)
