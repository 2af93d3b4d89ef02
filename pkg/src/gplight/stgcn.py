"""Spatio-temporal graph convolutional forecaster with exact reverse-mode gradients.

Activations are laid out (batch, time, node, channel). A history window enters
as N x D x T and a forecast leaves as N x D x H.
"""
from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from .optim import make_optimizer


class ShapeError(ValueError):
    pass


def sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


# -- Chebyshev graph convolution -------------------------------------------------

def cheb_basis(x: np.ndarray, L_hat: np.ndarray, K: int) -> list[np.ndarray]:
    """[T_0(L)x, ..., T_{K-1}(L)x] by the three-term recurrence; node axis is -2."""
    out = [x]
    if K > 1:
        out.append(L_hat @ x)
    for _ in range(2, K):
        out.append(2.0 * (L_hat @ out[-1]) - out[-2])
    return out


def cheb_apply_sum(coeffs: list[np.ndarray], L_hat: np.ndarray) -> np.ndarray:
    """sum_k T_k(L) c_k via Clenshaw; used to backpropagate through `cheb_basis`."""
    b1 = np.zeros_like(coeffs[0])
    b2 = np.zeros_like(coeffs[0])
    for c in reversed(coeffs[1:]):
        b1, b2 = c + 2.0 * (L_hat @ b1) - b2, b1
    return coeffs[0] + L_hat @ b1 - b2


def cheb_conv(x: np.ndarray, L_hat: np.ndarray, theta: np.ndarray, bias: np.ndarray | None = None) -> np.ndarray:
    """y = sum_k T_k(L_hat) x theta_k for x of shape (..., N, c_in)."""
    K, c_in, c_out = theta.shape
    if K < 1:
        raise ShapeError("Chebyshev order K must be >= 1")
    if x.shape[-1] != c_in or x.shape[-2] != L_hat.shape[0]:
        raise ShapeError(f"signal {x.shape} incompatible with L {L_hat.shape} / theta {theta.shape}")
    y = sum(tx @ theta[k] for k, tx in enumerate(cheb_basis(x, L_hat, K)))
    return y if bias is None else y + bias


# -- gated temporal convolution ----------------------------------------------------

def temporal_gated_conv(y_in: np.ndarray, gamma: np.ndarray, bias: np.ndarray | None = None) -> np.ndarray:
    """Causal width-K_t convolution along the time axis followed by a GLU.

    `y_in` is (m, c_in) for one node, or (B, m, N, c_in).
    """
    out, _ = _tconv_forward(y_in, gamma, bias)
    return out


def _tconv_forward(y, gamma, bias):
    kt, c_in, two_c = gamma.shape
    m = y.shape[-3] if y.ndim == 4 else y.shape[0]
    if y.shape[-1] != c_in:
        raise ShapeError(f"input channels {y.shape[-1]} != kernel c_in {c_in}")
    if m < kt:
        raise ShapeError(f"sequence length {m} shorter than kernel width {kt}")
    m_out = m - kt + 1
    if y.ndim == 2:
        pre = sum(y[k : k + m_out] @ gamma[k] for k in range(kt))
    else:
        pre = sum(y[:, k : k + m_out] @ gamma[k] for k in range(kt))
    if bias is not None:
        pre = pre + bias
    c = two_c // 2
    y1, y2 = pre[..., :c], pre[..., c:]
    gate = sigmoid(y2)
    return y1 * gate, (y, y1, gate)


def _tconv_backward(dout, gamma, cache):
    y, y1, gate = cache
    kt = gamma.shape[0]
    m_out = y1.shape[1]
    dpre = np.concatenate([dout * gate, dout * y1 * gate * (1.0 - gate)], axis=-1)
    dgamma = np.empty_like(gamma)
    dy = np.zeros_like(y)
    flat_d = dpre.reshape(-1, dpre.shape[-1])
    for k in range(kt):
        seg = y[:, k : k + m_out]
        dgamma[k] = seg.reshape(-1, seg.shape[-1]).T @ flat_d
        dy[:, k : k + m_out] += dpre @ gamma[k].T
    dbias = flat_d.sum(axis=0)
    return dy, dgamma, dbias


# -- model ----------------------------------------------------------------------

@dataclass
class StgcnConfig:
    n_nodes: int
    n_features: int = 12
    history: int = 10
    horizon: int = 5
    cheb_k: int = 3
    kt: int = 3
    blocks: tuple[tuple[int, int, int], ...] = ((32, 16, 32), (32, 16, 32))
    scale: float = 1.0

    @property
    def residual_time(self) -> int:
        return self.history - 2 * len(self.blocks) * (self.kt - 1)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["blocks"] = [list(b) for b in self.blocks]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "StgcnConfig":
        d = dict(d)
        d["blocks"] = tuple(tuple(b) for b in d["blocks"])
        return cls(**d)


@dataclass
class StgcnModel:
    config: StgcnConfig
    L_hat: np.ndarray
    seed: int = 0
    params: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        cfg = self.config
        if cfg.residual_time < 1:
            raise ShapeError(f"history {cfg.history} too short for {len(cfg.blocks)} blocks of width {cfg.kt}")
        if self.L_hat.shape != (cfg.n_nodes, cfg.n_nodes):
            raise ShapeError(f"Laplacian {self.L_hat.shape} does not match {cfg.n_nodes} nodes")
        if not self.params:
            self.params = self.init_params(np.random.default_rng(self.seed))

    def init_params(self, rng: np.random.Generator) -> dict[str, np.ndarray]:
        cfg = self.config
        p = {}
        c_in = cfg.n_features
        for j, (c1, cs, c2) in enumerate(cfg.blocks):
            p[f"b{j}_t1_G"] = rng.normal(0, np.sqrt(1.0 / (cfg.kt * c_in)), (cfg.kt, c_in, 2 * c1))
            p[f"b{j}_t1_b"] = np.zeros(2 * c1)
            p[f"b{j}_cheb_theta"] = rng.normal(0, np.sqrt(1.0 / (cfg.cheb_k * c1)), (cfg.cheb_k, c1, cs))
            p[f"b{j}_cheb_b"] = np.zeros(cs)
            p[f"b{j}_t2_G"] = rng.normal(0, np.sqrt(1.0 / (cfg.kt * cs)), (cfg.kt, cs, 2 * c2))
            p[f"b{j}_t2_b"] = np.zeros(2 * c2)
            c_in = c2
        fan_in = cfg.residual_time * c_in
        p["fc_W"] = rng.normal(0, np.sqrt(1.0 / fan_in), (fan_in, cfg.n_features * cfg.horizon))
        p["fc_b"] = np.zeros(cfg.n_features * cfg.horizon)
        return p

    def n_params(self) -> int:
        return sum(v.size for v in self.params.values())

    # -- forward / backward in scaled units
    def _to_internal(self, x: np.ndarray) -> np.ndarray:
        cfg = self.config
        x = np.asarray(x, dtype=float)
        single = x.ndim == 3
        if single:
            x = x[None]
        if x.shape[1:] != (cfg.n_nodes, cfg.n_features, cfg.history):
            raise ShapeError(f"history window {x.shape[1:]} != {(cfg.n_nodes, cfg.n_features, cfg.history)}")
        return x.transpose(0, 3, 1, 2) / cfg.scale

    def _forward(self, z: np.ndarray):
        p, cfg = self.params, self.config
        caches = []
        h = z
        for j in range(len(cfg.blocks)):
            h, c1 = _tconv_forward(h, p[f"b{j}_t1_G"], p[f"b{j}_t1_b"])
            basis = cheb_basis(h, self.L_hat, cfg.cheb_k)
            theta = p[f"b{j}_cheb_theta"]
            hs = sum(tx @ theta[k] for k, tx in enumerate(basis)) + p[f"b{j}_cheb_b"]
            h, c2 = _tconv_forward(hs, p[f"b{j}_t2_G"], p[f"b{j}_t2_b"])
            caches.append((c1, basis, c2))
        b, tr, n, c = h.shape
        feat = h.transpose(0, 2, 1, 3).reshape(b, n, tr * c)
        out = feat @ p["fc_W"] + p["fc_b"]
        return out.reshape(b, n, cfg.n_features, cfg.horizon), (caches, feat, h.shape)

    def _backward(self, dout: np.ndarray, cache) -> dict[str, np.ndarray]:
        p, cfg = self.params, self.config
        caches, feat, hshape = cache
        b, n = dout.shape[:2]
        dflat = dout.reshape(b, n, -1)
        grads = {
            "fc_W": feat.reshape(-1, feat.shape[-1]).T @ dflat.reshape(-1, dflat.shape[-1]),
            "fc_b": dflat.reshape(-1, dflat.shape[-1]).sum(axis=0),
        }
        _, tr, _, c = hshape
        dh = (dflat @ p["fc_W"].T).reshape(b, n, tr, c).transpose(0, 2, 1, 3)
        for j in reversed(range(len(cfg.blocks))):
            c1, basis, c2 = caches[j]
            dhs, grads[f"b{j}_t2_G"], grads[f"b{j}_t2_b"] = _tconv_backward(dh, p[f"b{j}_t2_G"], c2)
            theta = p[f"b{j}_cheb_theta"]
            flat = dhs.reshape(-1, dhs.shape[-1])
            grads[f"b{j}_cheb_theta"] = np.stack(
                [tx.reshape(-1, tx.shape[-1]).T @ flat for tx in basis]
            )
            grads[f"b{j}_cheb_b"] = flat.sum(axis=0)
            dh1 = cheb_apply_sum([dhs @ theta[k].T for k in range(len(basis))], self.L_hat)
            dh, grads[f"b{j}_t1_G"], grads[f"b{j}_t1_b"] = _tconv_backward(dh1, p[f"b{j}_t1_G"], c1)
        return grads

    def forward(self, x: np.ndarray, clamp: bool = True) -> np.ndarray:
        """Forecast N x D x H (or batched B x N x D x H) from an N x D x T history."""
        single = np.asarray(x).ndim == 3
        out, _ = self._forward(self._to_internal(x))
        out = out * self.config.scale
        if clamp:
            out = np.maximum(out, 0.0)
        return out[0] if single else out

    def loss(self, x: np.ndarray, y: np.ndarray) -> float:
        out, _ = self._forward(self._to_internal(x))
        return float(np.mean((out - self._target(y, out.shape)) ** 2))

    def _target(self, y, shape):
        y = np.asarray(y, dtype=float)
        if y.ndim == 3:
            y = y[None]
        if y.shape != shape:
            raise ShapeError(f"target {y.shape} != prediction {shape}")
        return y / self.config.scale

    def backward(self, x: np.ndarray, y: np.ndarray) -> tuple[float, dict[str, np.ndarray]]:
        """MSE loss and its exact gradient for every parameter."""
        out, cache = self._forward(self._to_internal(x))
        err = out - self._target(y, out.shape)
        loss = float(np.mean(err**2))
        return loss, self._backward(2.0 * err / err.size, cache)


def train(
    model: StgcnModel,
    X: np.ndarray,
    Y: np.ndarray,
    epochs: int,
    lr: float = 1e-3,
    batch_size: int = 16,
    shuffle: bool = True,
    seed: int = 0,
    optimizer: str = "sgd",
) -> list[float]:
    """Minibatch gradient descent; returns full-dataset MSE before training and after each epoch."""
    if len(X) == 0:
        raise ValueError("empty dataset")
    if len(X) != len(Y):
        raise ShapeError("X and Y lengths differ")
    rng = np.random.default_rng(seed)
    opt = make_optimizer(optimizer, lr)
    curve = [model.loss(X, Y)]
    for _ in range(epochs):
        order = rng.permutation(len(X)) if shuffle else np.arange(len(X))
        for start in range(0, len(X), batch_size):
            idx = order[start : start + batch_size]
            _, grads = model.backward(X[idx], Y[idx])
            opt.step(model.params, grads)
        curve.append(model.loss(X, Y))
    return curve


def make_windows(series: np.ndarray, history: int, horizon: int) -> tuple[np.ndarray, np.ndarray]:
    """Slice a minute series of shape (M, N, D) into (X: B x N x D x T, Y: B x N x D x H)."""
    series = np.asarray(series, dtype=float)
    xs, ys = [], []
    for s in range(len(series) - history - horizon + 1):
        xs.append(series[s : s + history].transpose(1, 2, 0))
        ys.append(series[s + history : s + history + horizon].transpose(1, 2, 0))
    if not xs:
        n, d = series.shape[1:] if series.ndim == 3 else (0, 0)
        return np.zeros((0, n, d, history)), np.zeros((0, n, d, horizon))
    return np.stack(xs), np.stack(ys)
