import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gplight.stgcn import (
    ShapeError,
    StgcnConfig,
    StgcnModel,
    cheb_conv,
    make_windows,
    temporal_gated_conv,
    train,
)
from oracles import dense_cheb, probe_gradients, random_scaled_laplacian


def toy_model(n=4, seed=0, **kw):
    rng = np.random.default_rng(seed)
    cfg = StgcnConfig(n_nodes=n, **kw)
    return StgcnModel(cfg, random_scaled_laplacian(rng, n), seed=seed)


def test_cheb_identity_filter():
    x = np.random.default_rng(0).normal(size=(5, 3))
    L = random_scaled_laplacian(np.random.default_rng(1), 5)
    np.testing.assert_allclose(cheb_conv(x, L, np.eye(3)[None]), x)


def test_cheb_eigenvector():
    L = random_scaled_laplacian(np.random.default_rng(2), 6)
    mu, U = np.linalg.eigh(L)
    v = U[:, [3]]
    theta = np.array([[[0.7]], [[-1.3]]])
    np.testing.assert_allclose(cheb_conv(v, L, theta), (0.7 - 1.3 * mu[3]) * v, atol=1e-12)


def test_cheb_single_node():
    theta = np.array([[[2.0]], [[3.0]], [[5.0]]])
    x = np.array([[1.5]])
    # T_0(-1) = 1, T_1(-1) = -1, T_2(-1) = 1
    np.testing.assert_allclose(cheb_conv(x, np.array([[-1.0]]), theta), (2 - 3 + 5) * x)


def test_cheb_shape_errors():
    with pytest.raises(ShapeError):
        cheb_conv(np.zeros((3, 2)), np.eye(4), np.zeros((2, 2, 1)))
    with pytest.raises(ShapeError):
        cheb_conv(np.zeros((3, 2)), np.eye(3), np.zeros((0, 2, 1)))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 8), st.integers(1, 5), st.integers(0, 2**31 - 1))
def test_cheb_matches_spectral_oracle(n, k, seed):
    rng = np.random.default_rng(seed)
    L = random_scaled_laplacian(rng, n)
    x = rng.normal(size=(n, 3))
    theta = rng.normal(size=(k, 3, 2))
    assert np.abs(cheb_conv(x, L, theta) - dense_cheb(x, L, theta)).max() <= 1e-8


def test_cheb_permutation_equivariant():
    rng = np.random.default_rng(4)
    L = random_scaled_laplacian(rng, 7)
    x = rng.normal(size=(7, 2))
    theta = rng.normal(size=(4, 2, 3))
    P = np.eye(7)[rng.permutation(7)]
    np.testing.assert_allclose(P @ cheb_conv(x, L, theta), cheb_conv(P @ x, P @ L @ P.T, theta), atol=1e-12)


def test_glu_examples():
    rng = np.random.default_rng(5)
    y = rng.normal(size=(10, 4))
    assert temporal_gated_conv(y, np.zeros((3, 4, 6))).shape == (8, 3)
    np.testing.assert_array_equal(temporal_gated_conv(y, np.zeros((3, 4, 6))), 0.0)
    gamma = rng.normal(size=(3, 4, 6))
    gamma[..., 3:] = 0.0
    half = temporal_gated_conv(y, gamma)
    gamma_lin = gamma[..., :3]
    y1 = sum(y[k : k + 8] @ gamma_lin[k] for k in range(3))
    np.testing.assert_allclose(half, 0.5 * y1)
    with pytest.raises(ShapeError):
        temporal_gated_conv(y[:2], gamma)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_glu_bound(seed):
    rng = np.random.default_rng(seed)
    y = rng.normal(size=(6, 2))
    gamma = rng.normal(size=(2, 2, 4))
    g2 = gamma.copy()
    g2[..., 2:] = 0.0
    y1 = 2.0 * temporal_gated_conv(y, g2)
    out = temporal_gated_conv(y, gamma)
    nz = y1 != 0
    assert (np.abs(out[nz]) < np.abs(y1[nz])).all()


def test_forward_shapes_and_zero_input():
    m = toy_model()
    assert m.forward(np.zeros((4, 12, 10))).shape == (4, 12, 5)
    np.testing.assert_array_equal(m.forward(np.zeros((4, 12, 10)), clamp=False), 0.0)
    assert m.forward(np.ones((3, 4, 12, 10))).shape == (3, 4, 12, 5)
    with pytest.raises(ShapeError):
        m.forward(np.zeros((4, 12, 9)))


def test_forward_clamp_and_determinism():
    m = toy_model()
    x = np.random.default_rng(0).random((4, 12, 10)) * 10
    raw = m.forward(x, clamp=False)
    assert (raw < 0).any()
    np.testing.assert_array_equal(m.forward(x), np.maximum(raw, 0))
    np.testing.assert_array_equal(m.forward(x), m.forward(x))


def test_gradients_match_finite_differences():
    m = toy_model(scale=5.0)
    rng = np.random.default_rng(1)
    for name in m.params:
        m.params[name] = m.params[name] + 0.1 * rng.normal(size=m.params[name].shape)
    x = rng.random((3, 4, 12, 10)) * 5
    y = rng.random((3, 4, 12, 5)) * 5
    _, grads = m.backward(x, y)
    assert probe_gradients(m.params, grads, lambda: m.loss(x, y), rng, 120) <= 1e-4


def test_zero_error_gives_zero_gradient():
    m = toy_model()
    x = np.random.default_rng(2).random((2, 4, 12, 10))
    y = m.forward(x, clamp=False)
    loss, grads = m.backward(x, y)
    assert loss == 0.0
    assert all(np.abs(g).max() == 0.0 for g in grads.values())


def test_masked_block_has_zero_gradient():
    m = toy_model()
    m.params["fc_W"][:] = 0.0
    x = np.random.default_rng(3).random((2, 4, 12, 10))
    _, grads = m.backward(x, np.ones((2, 4, 12, 5)))
    for name, g in grads.items():
        if name.startswith("b1_") or name.startswith("b0_"):
            assert np.abs(g).max() == 0.0
    assert np.abs(grads["fc_W"]).max() > 0


def test_train_constant_series():
    m = toy_model(n=2)
    series = np.full((40, 2, 12), 4.0)
    X, Y = make_windows(series, 10, 5)
    train(m, X, Y, epochs=150, lr=1e-2, optimizer="adam")
    pred = m.forward(X[0])
    assert np.abs(pred - 4.0).max() <= 0.05 * 4.0


def test_train_single_sample_monotone():
    m = toy_model(n=2)
    rng = np.random.default_rng(0)
    X = rng.random((1, 2, 12, 10)) * 3
    Y = rng.random((1, 2, 12, 5)) * 3
    curve = train(m, X, Y, epochs=10, lr=1e-2, batch_size=1)
    assert all(b < a for a, b in zip(curve, curve[1:]))


def test_train_lr_zero_and_errors():
    m = toy_model(n=2)
    before = {k: v.copy() for k, v in m.params.items()}
    X = np.ones((4, 2, 12, 10))
    Y = np.ones((4, 2, 12, 5))
    train(m, X, Y, epochs=2, lr=0.0)
    assert all(np.array_equal(before[k], m.params[k]) for k in before)
    with pytest.raises(ValueError):
        train(m, X[:0], Y[:0], epochs=1)


def test_train_unshuffled_is_deterministic():
    rng = np.random.default_rng(0)
    X = rng.random((6, 2, 12, 10))
    Y = rng.random((6, 2, 12, 5))
    a, b = toy_model(n=2), toy_model(n=2)
    ca = train(a, X, Y, epochs=3, lr=1e-2, shuffle=False, seed=1)
    cb = train(b, X, Y, epochs=3, lr=1e-2, shuffle=False, seed=2)
    assert ca == cb


def test_make_windows():
    series = np.arange(20 * 1 * 2, dtype=float).reshape(20, 1, 2)
    X, Y = make_windows(series, 10, 5)
    assert X.shape == (6, 1, 2, 10) and Y.shape == (6, 1, 2, 5)
    np.testing.assert_array_equal(X[1, 0, 0], series[1:11, 0, 0])
    np.testing.assert_array_equal(Y[1, 0, 0], series[11:16, 0, 0])


def test_history_too_short_rejected():
    with pytest.raises(ShapeError):
        toy_model(history=8)
