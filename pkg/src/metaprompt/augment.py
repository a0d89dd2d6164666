"""Query-set mixup between tasks and the curriculum that sets its mixing ratio."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .taskgen import Episode, MetaTask, TaskError


@dataclass
class CurriculumState:
    s: float = -1.0
    m: float = 2.0
    alpha_beta: float = 0.5
    b_min: float = 1e-3
    curriculum: bool = True
    beta_swap: bool = False

    def __post_init__(self):
        if not -1.0 <= self.s <= 1.0:
            raise ValueError(f"alignment score {self.s} outside [-1, 1]")
        if self.m <= 1.0:
            raise ValueError("curve parameter m must exceed 1")

    def b(self) -> float:
        """Beta parameter for this step (clamped); 1 when the curriculum is off."""
        if not self.curriculum:
            return 1.0
        return clamp_b(curriculum_b(self.s, self.m), self.b_min)


def curriculum_b(s: float, m: float) -> float:
    if m <= 1.0:
        raise ValueError("curve parameter m must exceed 1")
    if not -1.0 <= s <= 1.0:
        raise ValueError(f"alignment score {s} outside [-1, 1]")
    return float((m ** ((1.0 + s) / 2.0) - 1.0) / (m - 1.0))


def clamp_b(b: float, b_min: float = 1e-3) -> float:
    return float(min(max(b, b_min), 1.0))


def _log_gamma_ge1(a: float, size: int, rng) -> np.ndarray:
    # Marsaglia-Tsang squeeze/rejection, vectorized in rounds
    d = a - 1.0 / 3.0
    c = 1.0 / np.sqrt(9.0 * d)
    out = np.empty(size)
    filled = 0
    while filled < size:
        n = max(2 * (size - filled), 16)
        x = rng.standard_normal(n)
        v = 1.0 + c * x
        ok = v > 0
        x, v = x[ok], v[ok] ** 3
        u = rng.random(len(x))
        accept = (u < 1.0 - 0.0331 * x**4) | (np.log(u) < 0.5 * x * x + d * (1.0 - v + np.log(v)))
        got = np.log(d * v[accept])[: size - filled]
        out[filled : filled + len(got)] = got
        filled += len(got)
    return out


def log_gamma_draws(shape: float, size: int, rng) -> np.ndarray:
    """log of Gamma(shape, 1) draws; shapes below 1 use the U^(1/shape) boost."""
    if not shape > 0:
        raise ValueError(f"gamma shape must be positive, got {shape}")
    if shape >= 1.0:
        return _log_gamma_ge1(shape, size, rng)
    logs = _log_gamma_ge1(shape + 1.0, size, rng)
    u = rng.random(size)
    return logs + np.log1p(-u) / shape  # 1 - u in (0, 1]: avoids log(0)


def beta_draws(a: float, b: float, size: int, rng) -> np.ndarray:
    """Beta(a, b) as X / (X + Y) with X ~ Gamma(a), Y ~ Gamma(b), computed in log space."""
    if not (a > 0 and b > 0):
        raise ValueError(f"Beta shapes must be positive, got ({a}, {b})")
    lx = log_gamma_draws(a, size, rng)
    ly = log_gamma_draws(b, size, rng)
    return expit(lx - ly)


def sample_lambda(alpha_beta: float, b: float, rng, swap: bool = False, size: int | None = None):
    if not (alpha_beta > 0 and b > 0):
        raise ValueError("non-positive Beta shape")
    a1, a2 = (b * alpha_beta, alpha_beta) if swap else (alpha_beta, b * alpha_beta)
    draws = beta_draws(a1, a2, 1 if size is None else size, rng)
    return float(draws[0]) if size is None else draws


def interpolate_query(task_i: MetaTask, task_j: MetaTask, lam: float, rng=None) -> MetaTask:
    if task_i.fmt != task_j.fmt:
        raise TaskError(f"cannot mix {task_i.fmt} with {task_j.fmt}")
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"mixing ratio {lam} outside [0, 1]")
    qi, qj = task_i.query, task_j.query
    order = rng.permutation(len(qj)) if rng is not None else np.arange(len(qj))
    n = min(len(qi), len(qj))
    if n == 0:
        raise TaskError("empty query set")
    hj, yj = qj.h[order[:n]], qj.y[order[:n]]
    mixed = Episode(qi.fmt, (1.0 - lam) * qi.h[:n] + lam * hj, (1.0 - lam) * qi.y[:n] + lam * yj)
    return MetaTask(task_i.fmt, task_i.support, mixed, task_i.anchor_cluster)


def augment_batch(batch, pool, state: CurriculumState, rngs) -> tuple[list[MetaTask], list[float]]:
    """Mix each task's query set with a same-format partner drawn from ``pool``.

    ``rngs`` is one Generator per batch slot (or a single Generator shared by
    all slots).  Returns the augmented batch and the mixing ratios used.
    """
    if not pool:
        raise TaskError("empty task pool")
    if isinstance(rngs, np.random.Generator):
        rngs = [rngs] * len(batch)
    b = state.b()
    by_fmt: dict[str, list[MetaTask]] = {}
    for t in pool:
        by_fmt.setdefault(t.fmt, []).append(t)
    out, lams = [], []
    for task, rng in zip(batch, rngs):
        partners = by_fmt.get(task.fmt)
        if not partners:
            raise TaskError(f"no {task.fmt} task in pool to mix with")
        partner = partners[int(rng.integers(len(partners)))]
        lam = sample_lambda(state.alpha_beta, b, rng, swap=state.beta_swap)
        out.append(interpolate_query(task, partner, lam, rng))
        lams.append(lam)
    return out, lams
