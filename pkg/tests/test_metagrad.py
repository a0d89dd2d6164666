import numpy as np
import pytest

from metaprompt import metagrad as mg

from conftest import random_phi


def test_gate_identity_init():
    phi = mg.RegularizerState.identity(6, 4)
    assert np.array_equal(mg.gate(phi, np.ones(4)), np.full(6, 0.5))


def test_gate_saturation_and_direct():
    phi = mg.RegularizerState.identity(3, 2)
    phi.b[:] = [800.0, -800.0, 0.0]
    z = mg.gate(phi, np.zeros(2))
    assert 0.0 < z[1] < 1e-300 and 1.0 - 1e-15 < z[0] < 1.0
    rng = np.random.default_rng(0)
    phi = random_phi(rng, 5, 3)
    h = rng.standard_normal(3)
    want = [1 / (1 + np.exp(-(sum(phi.W[j, k] * h[k] for k in range(3)) + phi.b[j]))) for j in range(5)]
    assert np.allclose(mg.gate(phi, h), want, atol=1e-14)
    with pytest.raises(ValueError):
        mg.gate(phi, np.zeros(4))


def test_transform_examples():
    rng = np.random.default_rng(1)
    g = rng.standard_normal((3, 4))
    phi = mg.RegularizerState.identity(4, 2)
    assert np.allclose(mg.transform(phi, rng.random(4), g), g)
    phi = random_phi(rng, 4, 2)
    assert np.allclose(mg.transform(phi, np.zeros(4), g), g)
    phi = mg.RegularizerState(2 * np.eye(2), np.zeros(2), np.zeros((2, 1)), np.zeros(2))
    assert np.allclose(mg.transform(phi, np.full(2, 0.5), np.array([[1.0, -2.0]])), [[1.5, -3.0]])
    with pytest.raises(ValueError):
        mg.transform(phi, np.full(2, 0.5), np.zeros((1, 3)))


def test_reg_loss():
    assert mg.reg_loss(np.full(5, 0.3), 0.3) == 0.0
    assert abs(mg.reg_loss(np.array([0.9]), 0.4) - 0.25) < 1e-15
    assert abs(mg.reg_loss(np.full(3, 0.7), 0.2) - mg.reg_loss(np.full(11, 0.7), 0.2)) < 1e-15


def test_backward_zero_and_identity_cases():
    rng = np.random.default_rng(2)
    phi = random_phi(rng, 4, 3)
    z, g, h = rng.random(4), rng.standard_normal((2, 4)), rng.standard_normal(3)
    grads = mg.backward_phi(phi, z, g, h, np.zeros((2, 4)), 0.3, 0.0)
    assert all(not v.any() for v in grads.arrays().values())
    ident = mg.RegularizerState.identity(4, 3)
    U = rng.standard_normal((2, 4))
    grads = mg.backward_phi(ident, z, g, h, U, 0.3, 1.0)
    dz_reg = 2.0 / 4 * (z - 0.3)
    assert np.allclose(grads.b, dz_reg * z * (1 - z), atol=1e-15)


def test_backward_matches_finite_differences():
    # the scalar <U, psi(g)> + reg * reg_loss(z(phi), b_k) differentiated in every phi entry
    rng = np.random.default_rng(3)
    d_p, d_h, T = 4, 3, 2
    for _ in range(5):
        phi = random_phi(rng, d_p, d_h)
        g, h, U = rng.standard_normal((T, d_p)), rng.standard_normal(d_h), rng.standard_normal((T, d_p))

        def f(p):
            z = mg.gate(p, h)
            return float((U * mg.transform(p, z, g)).sum()) + 0.7 * mg.reg_loss(z, 0.4)

        grads = mg.backward_phi(phi, mg.gate(phi, h), g, h, U, 0.4, 0.7).arrays()
        for name, arr in phi.arrays().items():
            fd = np.zeros_like(arr)
            for idx in np.ndindex(arr.shape):
                old = arr[idx]
                arr[idx] = old + 1e-6
                up = f(phi)
                arr[idx] = old - 1e-6
                dn = f(phi)
                arr[idx] = old
                fd[idx] = (up - dn) / 2e-6
            assert np.linalg.norm(grads[name] - fd) <= 1e-7 * max(np.linalg.norm(fd), 1e-3), name


def test_transform_affine_in_g():
    rng = np.random.default_rng(4)
    phi = random_phi(rng, 3, 2)
    z = rng.random(3)
    g1, g2 = rng.standard_normal((2, 3)), rng.standard_normal((2, 3))
    t0 = mg.transform(phi, z, np.zeros((2, 3)))
    lhs = mg.transform(phi, z, g1 + g2) - t0
    rhs = (mg.transform(phi, z, g1) - t0) + (mg.transform(phi, z, g2) - t0)
    assert np.allclose(lhs, rhs, atol=1e-13)


def test_state_helpers():
    rng = np.random.default_rng(5)
    phi = random_phi(rng, 3, 2)
    c = phi.copy()
    c.A[0, 0] += 1
    assert phi.A[0, 0] != c.A[0, 0]
    assert phi.flat().shape == (9 + 3 + 6 + 3,)
    stepped = phi.step(phi, 0.5)
    assert np.allclose(stepped.flat(), 0.5 * phi.flat())
