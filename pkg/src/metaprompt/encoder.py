"""Frozen seeded sentence encoder and per-format hidden representations."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SP = "sp"
MC_SS = "mc_ss"
N_CHOICES = 4


def _gauss(rng, shape, fan_in):
    return rng.standard_normal(shape) / np.sqrt(fan_in)


@dataclass(frozen=True)
class EncoderParams:
    E: np.ndarray  # V x d token table
    Q: np.ndarray  # d x d_h
    G_sp: np.ndarray  # d_h x 3 d_h
    G_ch: np.ndarray  # d_h x 5 d_h
    seed: int

    @property
    def d_h(self) -> int:
        return self.Q.shape[1]


def make_encoder(vocab_size: int = 512, d: int = 32, d_h: int = 32, seed: int = 0) -> EncoderParams:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xE4C]))
    # a token lookup is a one-hot input, so its fan-in is 1
    params = EncoderParams(
        E=_gauss(rng, (vocab_size, d), 1),
        Q=_gauss(rng, (d, d_h), d),
        G_sp=_gauss(rng, (d_h, 3 * d_h), 3 * d_h),
        G_ch=_gauss(rng, (d_h, 5 * d_h), 5 * d_h),
        seed=seed,
    )
    for a in (params.E, params.Q, params.G_sp, params.G_ch):
        a.setflags(write=False)
    return params


def embed(enc: EncoderParams, tokens) -> np.ndarray:
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.size == 0:
        raise ValueError("cannot embed an empty sentence")
    v = np.tanh(enc.E[tokens].mean(axis=0) @ enc.Q)
    return v / np.linalg.norm(v)


def embed_corpus(enc: EncoderParams, corpus) -> np.ndarray:
    """Row i is the embedding of ``corpus.sentences()[i]``."""
    return np.stack([embed(enc, s.tokens) for s in corpus.sentences()])


def compose_pair(e1, e2) -> np.ndarray:
    e1 = np.asarray(e1, dtype=float)
    e2 = np.asarray(e2, dtype=float)
    if e1.shape != e2.shape or e1.ndim != 1:
        raise ValueError(f"pair members must be equal-length vectors, got {e1.shape} and {e2.shape}")
    return np.concatenate([e1, e2, e1 * e2])


def compose_choice(e_query, candidates) -> np.ndarray:
    e_query = np.asarray(e_query, dtype=float)
    candidates = [np.asarray(c, dtype=float) for c in candidates]
    if len(candidates) != N_CHOICES:
        raise ValueError(f"expected {N_CHOICES} candidates, got {len(candidates)}")
    if any(c.shape != e_query.shape for c in candidates) or e_query.ndim != 1:
        raise ValueError("candidate dimension mismatch")
    return np.concatenate([e_query, *candidates])


def hidden_format(dim: int, d_h: int) -> str:
    if dim == 3 * d_h:
        return SP
    if dim == 5 * d_h:
        return MC_SS
    raise ValueError(f"hidden dimension {dim} matches no format for d_h={d_h}")


def project_common(enc: EncoderParams, h) -> np.ndarray:
    """Map sp or mc/ss hidden vectors (or a stack of them) into the d_h gate space."""
    h = np.asarray(h, dtype=float)
    G = enc.G_sp if hidden_format(h.shape[-1], enc.d_h) == SP else enc.G_ch
    return h @ G.T
