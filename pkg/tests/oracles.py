"""Independent reference computations shared by the unit and acceptance tests."""
import numpy as np

from gplight.netgraph import normalized_laplacian


def random_scaled_laplacian(rng, n):
    w = rng.random((n, n)) * (rng.random((n, n)) < 0.6)
    w = np.triu(w, 1)
    return normalized_laplacian(w + w.T).L_scaled


def dense_cheb(x, L_hat, theta):
    """Spectral-domain filter U T_k(Lambda) U^T x theta_k, with T_k(mu) = cos(k arccos mu)."""
    mu, U = np.linalg.eigh(L_hat)
    mu = np.clip(mu, -1.0, 1.0)
    out = 0.0
    for k in range(theta.shape[0]):
        tk = np.cos(k * np.arccos(mu))
        out = out + U @ np.diag(tk) @ U.T @ x @ theta[k]
    return out


def probe_gradients(params, grads, loss_fn, rng, n_probes, h=1e-5):
    """Worst |analytic - central difference| / max(1, |fd|) over random parameter entries."""
    names = sorted(params)
    sizes = np.array([params[k].size for k in names], dtype=float)
    worst = 0.0
    for _ in range(n_probes):
        name = names[rng.choice(len(names), p=sizes / sizes.sum())]
        arr = params[name]
        idx = tuple(int(rng.integers(s)) for s in arr.shape)
        old = arr[idx]
        arr[idx] = old + h
        up = loss_fn()
        arr[idx] = old - h
        down = loss_fn()
        arr[idx] = old
        fd = (up - down) / (2 * h)
        worst = max(worst, abs(grads[name][idx] - fd) / max(1.0, abs(fd)))
    return worst
