"""Bi-level meta-training of the soft prompt and the gradient regularizer.

Per task: one regulated inner step on the support set, query loss at the
adapted prompt.  The prompt's outer update is first-order (query gradient at
the adapted prompt); the regularizer's outer gradient is exact.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import metagrad as mg
from . import promptmodel as pm
from .optim import make_optimizer
from .augment import CurriculumState, augment_batch, clamp_b, curriculum_b
from .encoder import EncoderParams, project_common
from .taskgen import MetaTask, TaskError

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    alpha1: float = 0.1  # inner lr
    beta1: float = 0.1  # outer lr, prompt
    beta2: float = 1e-4  # lr, regularizer
    m: float = 2.0
    reg_coeff: float = 1.0
    alpha_beta: float = 0.5
    b_min: float = 1e-3
    tasks_per_batch: int = 4
    support_size: int = 32
    query_size: int = 32
    max_steps: int = 2000
    validate_every: int = 100
    seed: int = 0
    n_tokens: int = 8
    d_p: int = 32
    prompt_init_std: float = 0.5
    curriculum: bool = True
    augmentation: bool = True
    regularizer: bool = True
    cosine_source: str = "regulated"  # or "raw"
    beta_swap: bool = False
    optimizer: str = "adam"  # outer-loop optimizer for theta and phi: adam | sgd

    def __post_init__(self):
        for name in ("alpha1", "beta1", "beta2"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        for name in ("tasks_per_batch", "support_size", "query_size", "validate_every", "n_tokens", "d_p"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.max_steps < 0:
            raise ValueError("max_steps must be >= 0")
        if self.cosine_source not in ("regulated", "raw"):
            raise ValueError(f"cosine_source must be 'regulated' or 'raw', got {self.cosine_source!r}")
        if self.m <= 1:
            raise ValueError("m must exceed 1")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")

    @classmethod
    def from_mapping(cls, values: dict) -> "TrainConfig":
        known = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for k, v in values.items():
            if k not in known:
                raise ValueError(f"unknown config key {k!r}")
            default = getattr(cls(), k)
            if isinstance(v, str):
                if isinstance(default, bool):
                    if v.lower() not in ("true", "false", "1", "0", "on", "off"):
                        raise ValueError(f"bad boolean for {k}: {v!r}")
                    v = v.lower() in ("true", "1", "on")
                elif isinstance(default, int):
                    v = int(v)
                elif isinstance(default, float):
                    v = float(v)
            kwargs[k] = v
        return cls(**kwargs)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class MetaState:
    theta: np.ndarray
    phi: mg.RegularizerState
    s: float = -1.0
    step: int = 0
    seed: int = 0
    opt_theta: object = None
    opt_phi: object = None

    def copy(self) -> "MetaState":
        return MetaState(self.theta.copy(), self.phi.copy(), self.s, self.step, self.seed,
                         self.opt_theta.copy(), self.opt_phi.copy())


@dataclass(frozen=True)
class Backbone:
    """The frozen parts: scorer and encoder (the latter only for gate projections)."""

    scorer: pm.ScorerParams
    encoder: EncoderParams


def init_state(cfg: TrainConfig, backbone: Backbone) -> MetaState:
    rng = stream(cfg.seed, -1, 0)
    theta = pm.init_prompt(cfg.n_tokens, cfg.d_p, rng, cfg.prompt_init_std)
    phi = mg.RegularizerState.identity(cfg.d_p, backbone.encoder.d_h)
    return MetaState(theta, phi, -1.0, 0, cfg.seed,
                     make_optimizer(cfg.optimizer, cfg.beta1), make_optimizer(cfg.optimizer, cfg.beta2))


def stream(seed: int, step: int, slot: int) -> np.random.Generator:
    """Counter-based generator for one (step, slot) cell of a run."""
    return np.random.Generator(np.random.Philox(key=[seed & 0xFFFFFFFFFFFFFFFF, ((step + 1) << 16) | slot]))


def support_hbar(backbone: Backbone, task: MetaTask) -> np.ndarray:
    return project_common(backbone.encoder, task.support.h).mean(axis=0)


def regulate(backbone: Backbone, phi, task, g, enabled: bool = True):
    """(psi(g), z); with the regularizer disabled psi is the identity and z is None."""
    if not enabled:
        return g, None
    z = mg.gate(phi, support_hbar(backbone, task))
    return mg.transform(phi, z, g), z


def inner_adapt(backbone: Backbone, theta, phi, support_task: MetaTask, alpha1: float, regularizer: bool = True):
    """One regulated gradient step on the support set: (theta', raw gradient, gate)."""
    if len(support_task.support) == 0:
        raise TaskError("empty support set")
    g0 = pm.grad_prompt(backbone.scorer, theta, support_task.support)
    psi_g, z = regulate(backbone, phi, support_task, g0, regularizer)
    return theta - alpha1 * psi_g, g0, z


def task_cosine(a, b) -> float:
    a = np.ravel(a)
    b = np.ravel(b)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na < 1e-12 or nb < 1e-12:
        return 0.0
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


@dataclass
class TaskTerms:
    s_i: float
    loss_q: float
    grad_theta: np.ndarray
    grad_phi: mg.RegularizerState | None
    reg: float
    z: np.ndarray | None


def task_terms(backbone: Backbone, theta, phi, task: MetaTask, cfg: TrainConfig, b_k: float) -> TaskTerms:
    scorer = backbone.scorer
    g_s = pm.grad_prompt(scorer, theta, task.support)
    psi_g, z = regulate(backbone, phi, task, g_s, cfg.regularizer)
    theta_p = theta - cfg.alpha1 * psi_g
    g_q = pm.grad_prompt(scorer, theta, task.query)
    s_i = task_cosine(g_q, psi_g if cfg.cosine_source == "regulated" else g_s)
    loss_q, g_qp = pm.loss_and_grad(scorer, theta_p, task.query)
    if cfg.regularizer:
        hbar = support_hbar(backbone, task)
        gphi = mg.backward_phi(phi, z, g_s, hbar, -cfg.alpha1 * g_qp, b_k, cfg.reg_coeff)
        reg = mg.reg_loss(z, b_k)
    else:
        gphi, reg = None, 0.0
    return TaskTerms(s_i, loss_q, g_qp, gphi, reg, z)


def outer_step(state: MetaState, batch, cfg: TrainConfig, backbone: Backbone, b_k: float | None = None):
    """One meta-update over ``batch``; returns (new state, step record)."""
    if not batch:
        raise TaskError("empty batch")
    if b_k is None:
        b_k = clamp_b(curriculum_b(state.s, cfg.m), cfg.b_min)
    terms = [task_terms(backbone, state.theta, state.phi, t, cfg, b_k) for t in batch]
    g_theta = np.zeros_like(state.theta)
    for t in terms:  # fixed task order
        g_theta += t.grad_theta
    opt_theta, opt_phi = state.opt_theta.copy(), state.opt_phi.copy()
    theta = opt_theta.step({"theta": state.theta}, {"theta": g_theta})["theta"]
    phi = state.phi
    if cfg.regularizer:
        acc = {k: np.zeros_like(v) for k, v in phi.arrays().items()}
        for t in terms:
            for k, v in t.grad_phi.arrays().items():
                acc[k] += v
        phi = mg.RegularizerState(**opt_phi.step(phi.arrays(), acc))
    s = float(np.clip(np.mean([t.s_i for t in terms]), -1.0, 1.0))
    new = MetaState(theta, phi, s, state.step + 1, state.seed, opt_theta, opt_phi)
    zs = [t.z for t in terms if t.z is not None]
    record = {
        "step": new.step,
        "loss_q": float(np.mean([t.loss_q for t in terms])),
        "loss_reg": float(np.mean([t.reg for t in terms])),
        "s": s,
        "b": float(b_k),
        "mean_z": float(np.mean(zs)) if zs else None,
        "val_loss": None,
        "val_acc": None,
    }
    return new, record


def outer_objective(backbone: Backbone, theta, phi, tasks, cfg: TrainConfig, b_k: float) -> float:
    """Summed adapted query loss plus the gate penalty: the function both outer updates descend."""
    total = 0.0
    for task in tasks:
        theta_p, _, z = inner_adapt(backbone, theta, phi, task, cfg.alpha1, cfg.regularizer)
        total += pm.loss(backbone.scorer, theta_p, task.query)
        if cfg.regularizer:
            total += cfg.reg_coeff * mg.reg_loss(z, b_k)
    return total


def validate(backbone: Backbone, state: MetaState, tasks, cfg: TrainConfig) -> tuple[float, float]:
    if not tasks:
        raise TaskError("no validation tasks")
    losses, accs = [], []
    for task in tasks:
        theta_p, _, _ = inner_adapt(backbone, state.theta, state.phi, task, cfg.alpha1, cfg.regularizer)
        losses.append(pm.loss(backbone.scorer, theta_p, task.query))
        accs.append(pm.accuracy(backbone.scorer, theta_p, task.query))
    return float(np.mean(losses)), float(np.mean(accs))


def sample_batch(pool, cfg: TrainConfig, step: int) -> list[MetaTask]:
    rng = stream(cfg.seed, step, 0xFFFF)
    k = min(cfg.tasks_per_batch, len(pool))
    return [pool[i] for i in rng.choice(len(pool), size=k, replace=False)]


@dataclass
class TrainResult:
    theta: np.ndarray
    phi: mg.RegularizerState
    metrics: list[dict]
    final: MetaState
    best_step: int
    best_val_loss: float | None = None
    extra: dict = field(default_factory=dict)


def meta_train(pool, cfg: TrainConfig, backbone: Backbone, val_tasks=(), state: MetaState | None = None) -> TrainResult:
    if not pool:
        raise TaskError("empty task pool")
    state = init_state(cfg, backbone) if state is None else state
    val_tasks = list(val_tasks)
    best = (state.theta.copy(), state.phi.copy())
    best_step, best_loss = state.step, math.inf
    if val_tasks:
        best_loss, _ = validate(backbone, state, val_tasks, cfg)
    metrics = []
    for _ in range(cfg.max_steps):
        step = state.step
        curr = CurriculumState(state.s, cfg.m, cfg.alpha_beta, cfg.b_min, cfg.curriculum, cfg.beta_swap)
        b_k = clamp_b(curriculum_b(state.s, cfg.m), cfg.b_min)
        batch = sample_batch(pool, cfg, step)
        if cfg.augmentation:
            rngs = [stream(cfg.seed, step, slot) for slot in range(len(batch))]
            batch, _ = augment_batch(batch, pool, curr, rngs)
        state, rec = outer_step(state, batch, cfg, backbone, b_k)
        if val_tasks and state.step % cfg.validate_every == 0:
            vl, va = validate(backbone, state, val_tasks, cfg)
            rec["val_loss"], rec["val_acc"] = vl, va
            if vl < best_loss:
                best = (state.theta.copy(), state.phi.copy())
                best_step, best_loss = state.step, vl
        metrics.append(rec)
        if not np.isfinite(state.theta).all():
            raise FloatingPointError(f"prompt diverged at step {state.step}")
    if not val_tasks:
        best = (state.theta.copy(), state.phi.copy())
        best_step = state.step
        best_loss = None
    return TrainResult(best[0], best[1], metrics, state, best_step, best_loss)
