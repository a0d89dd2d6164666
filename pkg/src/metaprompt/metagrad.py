"""Gated affine gradient regularizer psi and its exact parameter gradients.

psi(g)_t = z * (A g_t + c) + (1 - z) * g_t,   z = sigmoid(W hbar + b)

``g`` is a T x d_p prompt gradient; the gate z (length d_p) is shared by all
prompt tokens.  ``hbar`` is the mean projected representation of the support
examples.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class RegularizerState:
    A: np.ndarray
    c: np.ndarray
    W: np.ndarray
    b: np.ndarray

    @classmethod
    def identity(cls, d_p: int, d_h: int) -> "RegularizerState":
        return cls(np.eye(d_p), np.zeros(d_p), np.zeros((d_p, d_h)), np.zeros(d_p))

    def copy(self) -> "RegularizerState":
        return RegularizerState(self.A.copy(), self.c.copy(), self.W.copy(), self.b.copy())

    def arrays(self) -> dict[str, np.ndarray]:
        return {"A": self.A, "c": self.c, "W": self.W, "b": self.b}

    def step(self, grads: "RegularizerState", lr: float) -> "RegularizerState":
        return RegularizerState(
            self.A - lr * grads.A, self.c - lr * grads.c, self.W - lr * grads.W, self.b - lr * grads.b
        )

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays().values()])


def sigmoid(x):
    # split by sign so neither branch overflows
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def gate(phi: RegularizerState, hbar) -> np.ndarray:
    hbar = np.asarray(hbar, dtype=float)
    if hbar.shape != (phi.W.shape[1],):
        raise ValueError(f"gate input must have length {phi.W.shape[1]}, got {hbar.shape}")
    # saturated entries are held just inside (0, 1) so the gate never fully closes or opens
    return np.clip(sigmoid(phi.W @ hbar + phi.b), np.finfo(float).tiny, 1.0 - np.finfo(float).epsneg)


def transform(phi: RegularizerState, z, g) -> np.ndarray:
    g = np.asarray(g, dtype=float)
    z = np.asarray(z, dtype=float)
    if g.ndim != 2 or g.shape[1] != len(phi.c) or z.shape != phi.c.shape:
        raise ValueError(f"shape mismatch: g {g.shape}, z {z.shape}, d_p {len(phi.c)}")
    return z * (g @ phi.A.T + phi.c) + (1.0 - z) * g


def reg_loss(z, b_k: float) -> float:
    z = np.asarray(z, dtype=float)
    return float(np.mean((z - b_k) ** 2))


def backward_phi(phi: RegularizerState, z, g, hbar, upstream, b_k: float, reg_coeff: float) -> RegularizerState:
    """Gradients of  <upstream, psi(g)> + reg_coeff * reg_loss(z, b_k)  w.r.t. (A, c, W, b).

    ``upstream`` is the sensitivity of the outer loss to psi's output, i.e.
    -alpha_1 times the query gradient at the adapted prompt.
    """
    g = np.asarray(g, dtype=float)
    U = np.asarray(upstream, dtype=float)
    if U.shape != g.shape:
        raise ValueError(f"upstream {U.shape} does not match gradient {g.shape}")
    hg = g @ phi.A.T + phi.c
    Uz = U * z
    dA = Uz.T @ g
    dc = Uz.sum(axis=0)
    dz = (U * (hg - g)).sum(axis=0) + reg_coeff * 2.0 / len(z) * (z - b_k)
    da = dz * z * (1.0 - z)
    return RegularizerState(dA, dc, np.outer(da, hbar), da)
