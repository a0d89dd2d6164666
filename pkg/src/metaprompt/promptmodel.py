"""Frozen prompt-conditioned scorer: logits, soft-label cross-entropy, and the
closed-form gradient of that loss with respect to the soft prompt.

The prompt enters only through its token mean ``pbar``; the sentence-pair head
maps ``[pbar; h]`` to 3 logits, the choice head scores each of the 4 candidates
from ``[pbar; e_query; e_candidate]`` with shared weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .taskgen import Episode

HIDDEN_WIDTH = 64


@dataclass(frozen=True)
class ScorerParams:
    W1: np.ndarray  # (width, d_p + 3 d_h)
    b1: np.ndarray
    W2: np.ndarray  # (3, width)
    b2: np.ndarray
    V1: np.ndarray  # (width, d_p + 2 d_h)
    c1: np.ndarray
    v2: np.ndarray  # (width,)
    c2: float
    d_p: int
    d_h: int
    seed: int


def make_scorer(d_p: int = 32, d_h: int = 32, width: int = HIDDEN_WIDTH, seed: int = 0,
                sentence_gain: float | None = None, product_gain: float | None = None,
                tied: bool = True) -> ScorerParams:
    """Seeded frozen scorer.

    Entries are N(0, 1/fan_in).  Columns that read unit-norm sentence vectors
    are scaled by ``sentence_gain`` (default sqrt(d_h)) and the elementwise
    product block by ``product_gain`` (default d_h), so every input block has
    unit-variance-equivalent scale.  With ``tied`` the two sentence slots of a
    head share weights (query/candidate in the choice head, e1/e2 in the pair
    head), as one encoder would read both.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5C0]))
    g = lambda shape, fan_in: rng.standard_normal(shape) / np.sqrt(fan_in)
    sg = np.sqrt(d_h) if sentence_gain is None else sentence_gain
    pg = float(d_h) if product_gain is None else product_gain
    n_sp, n_ch = d_p + 3 * d_h, d_p + 2 * d_h
    W1 = g((width, n_sp), n_sp)
    V1 = g((width, n_ch), n_ch)
    s1, s2, s3 = slice(d_p, d_p + d_h), slice(d_p + d_h, d_p + 2 * d_h), slice(d_p + 2 * d_h, n_sp)
    if tied:
        W1[:, s2] = W1[:, s1]
        V1[:, s2] = V1[:, s1]
    W1[:, s1] *= sg
    W1[:, s2] *= sg
    W1[:, s3] *= pg
    V1[:, d_p:] *= sg
    params = ScorerParams(
        W1=W1,
        b1=g(width, n_sp),
        W2=g((3, width), width),
        b2=g(3, width),
        V1=V1,
        c1=g(width, n_ch),
        v2=g(width, width),
        c2=float(g((), width)),
        d_p=d_p,
        d_h=d_h,
        seed=seed,
    )
    for a in (params.W1, params.b1, params.W2, params.b2, params.V1, params.c1, params.v2):
        a.setflags(write=False)
    return params


def init_prompt(n_tokens: int, d_p: int, rng, std: float = 0.5) -> np.ndarray:
    return std * rng.standard_normal((n_tokens, d_p))


def _check(scorer: ScorerParams, theta, H, fmt):
    theta = np.asarray(theta, dtype=float)
    if theta.ndim != 2 or theta.shape[1] != scorer.d_p:
        raise ValueError(f"prompt must be T x {scorer.d_p}, got {theta.shape}")
    want = 3 * scorer.d_h if fmt == "sp" else 5 * scorer.d_h
    if H.shape[-1] != want:
        raise ValueError(f"hidden dim {H.shape[-1]} does not match format {fmt} (expected {want})")
    return theta


def _forward(scorer: ScorerParams, pbar, H, fmt):
    d_p, d_h = scorer.d_p, scorer.d_h
    if fmt == "sp":
        u = np.tanh(scorer.W1[:, :d_p] @ pbar + H @ scorer.W1[:, d_p:].T + scorer.b1)
        return u @ scorer.W2.T + scorer.b2, u
    eq = H[:, :d_h]
    cands = H[:, d_h:].reshape(len(H), 4, d_h)
    a = (
        (scorer.V1[:, :d_p] @ pbar + scorer.c1)
        + (eq @ scorer.V1[:, d_p : d_p + d_h].T)[:, None, :]
        + cands @ scorer.V1[:, d_p + d_h :].T
    )
    u = np.tanh(a)
    return u @ scorer.v2 + scorer.c2, u


def logits(scorer: ScorerParams, theta, hidden, fmt: str) -> np.ndarray:
    """Logits for one hidden vector (1-d) or a stack of them (2-d)."""
    H = np.asarray(hidden, dtype=float)
    single = H.ndim == 1
    H = np.atleast_2d(H)
    theta = _check(scorer, theta, H, fmt)
    out, _ = _forward(scorer, theta.mean(axis=0), H, fmt)
    return out[0] if single else out


def _log_softmax(z):
    m = z.max(axis=-1, keepdims=True)
    return z - m - np.log(np.exp(z - m).sum(axis=-1, keepdims=True))


def _as_episode(episode, fmt=None) -> Episode:
    if isinstance(episode, Episode):
        return episode
    if fmt is None:
        raise ValueError("format required for a list of examples")
    return Episode.from_examples(fmt, episode)


def loss(scorer: ScorerParams, theta, episode, fmt: str | None = None) -> float:
    ep = _as_episode(episode, fmt)
    if len(ep) == 0:
        raise ValueError("empty episode")
    theta = _check(scorer, theta, ep.h, ep.fmt)
    z, _ = _forward(scorer, theta.mean(axis=0), ep.h, ep.fmt)
    return float(-(ep.y * _log_softmax(z)).sum(axis=1).mean())


def loss_and_grad(scorer: ScorerParams, theta, episode, fmt: str | None = None):
    ep = _as_episode(episode, fmt)
    if len(ep) == 0:
        raise ValueError("empty episode")
    theta = _check(scorer, theta, ep.h, ep.fmt)
    T, d_p = theta.shape
    z, u = _forward(scorer, theta.mean(axis=0), ep.h, ep.fmt)
    logp = _log_softmax(z)
    n = len(ep)
    value = float(-(ep.y * logp).sum(axis=1).mean())
    # d/dz of -sum_c y_c log softmax(z)_c for unnormalized y
    dz = (ep.y.sum(axis=1, keepdims=True) * np.exp(logp) - ep.y) / n
    if ep.fmt == "sp":
        da = (dz @ scorer.W2) * (1.0 - u * u)
        dpbar = da.sum(axis=0) @ scorer.W1[:, :d_p]
    else:
        da = dz[:, :, None] * scorer.v2 * (1.0 - u * u)
        dpbar = da.sum(axis=(0, 1)) @ scorer.V1[:, :d_p]
    return value, np.broadcast_to(dpbar / T, (T, d_p)).copy()


def grad_prompt(scorer: ScorerParams, theta, episode, fmt: str | None = None) -> np.ndarray:
    return loss_and_grad(scorer, theta, episode, fmt)[1]


def predict(scorer: ScorerParams, theta, episode: Episode) -> np.ndarray:
    return logits(scorer, theta, episode.h, episode.fmt).argmax(axis=1)


def accuracy(scorer: ScorerParams, theta, episode: Episode) -> float:
    return float((predict(scorer, theta, episode) == episode.y.argmax(axis=1)).mean())
