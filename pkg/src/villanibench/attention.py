"""Single-head softmax attention regression with exact analytic derivatives.

The model maps a token matrix X (t x d) to

    RowSoftMax_beta(X Wq Wk^T X^T / sqrt(d)) X Wv

and is scored with the half squared Frobenius error against a target Y of the
same shape.  Wv is held fixed; the trainable point is T = (Wq, Wk).

Gradients are assembled through the row-wise softmax Jacobian

    J(s) = beta * (diag(s) - s s^T),

which is block diagonal across rows, so the t^2 x t^2 operator is never
materialized.  The per-row second derivative (Hessian) entries are exposed for
verification only; the full 6th-order tensor is never built.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "AttnSample",
    "AttnParams",
    "AttnIntermediates",
    "row_softmax",
    "softmax_jacobian_row",
    "softmax_hessian_entry",
    "softmax_hessian_row",
    "attention_forward",
    "sample_loss",
    "sample_loss_grad",
    "empirical_risk",
    "empirical_risk_grad",
    "pack_qk",
    "unpack_qk",
    "attention_bound_constants",
]


@dataclass(frozen=True)
class AttnSample:
    """One regression example: token embeddings X and target Y, both t x d."""

    X: np.ndarray
    Y: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        Y = np.asarray(self.Y, dtype=float)
        if X.ndim != 2 or Y.shape != X.shape:
            raise ValueError(f"X and Y must be matching 2-d arrays, got {X.shape} and {Y.shape}")
        if X.shape[0] < 1 or X.shape[1] < 1:
            raise ValueError("need t >= 1 tokens and d >= 1 features")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
            raise ValueError("sample contains non-finite entries")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)

    @property
    def t(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class AttnParams:
    """Attention weights.  Wq, Wk are d x r; Wv is d x d and frozen in the loss."""

    W_Q: np.ndarray
    W_K: np.ndarray
    W_V: np.ndarray
    beta: float = 1.0

    def __post_init__(self):
        wq = np.asarray(self.W_Q, dtype=float)
        wk = np.asarray(self.W_K, dtype=float)
        wv = np.asarray(self.W_V, dtype=float)
        if wq.ndim != 2 or wk.shape != wq.shape:
            raise ValueError(f"Wq and Wk must be matching d x r matrices, got {wq.shape}, {wk.shape}")
        d = wq.shape[0]
        if wv.shape != (d, d):
            raise ValueError(f"Wv must be {d} x {d}, got {wv.shape}")
        if not (np.all(np.isfinite(wq)) and np.all(np.isfinite(wk)) and np.all(np.isfinite(wv))):
            raise ValueError("parameters contain non-finite entries")
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        object.__setattr__(self, "W_Q", wq)
        object.__setattr__(self, "W_K", wk)
        object.__setattr__(self, "W_V", wv)

    @property
    def d(self) -> int:
        return self.W_Q.shape[0]

    @property
    def r(self) -> int:
        return self.W_Q.shape[1]


@dataclass(frozen=True)
class AttnIntermediates:
    """Forward-pass cache: scores M, attention S, prediction Yhat, error E = Yhat - Y."""

    M: np.ndarray
    S: np.ndarray
    Yhat: np.ndarray
    E: np.ndarray


def row_softmax(M: np.ndarray, beta: float) -> np.ndarray:
    """Row-wise softmax with temperature beta.

    Subtracts the per-row maximum before exponentiating, which leaves the exact
    map unchanged (row-wise shift invariance) and prevents overflow for large
    beta * M.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2:
        raise ValueError(f"expected a 2-d score matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError("row_softmax: non-finite score entry")
    if not beta > 0:
        raise ValueError("beta must be positive")
    Z = beta * M
    Z = Z - Z.max(axis=1, keepdims=True)
    E = np.exp(Z)
    return E / E.sum(axis=1, keepdims=True)


def _check_prob_row(s: np.ndarray, tol: float = 1e-8) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    if s.ndim != 1:
        raise ValueError("expected a 1-d probability vector")
    if np.any(s <= 0.0) or np.any(s >= 1.0) or abs(s.sum() - 1.0) > tol:
        raise ValueError("input is not a probability vector with entries in (0, 1)")
    return s


def softmax_jacobian_row(s_row: np.ndarray, beta: float) -> np.ndarray:
    """Jacobian of one softmax row w.r.t. its scores: beta * (diag(s) - s s^T).

    The result is the (scaled) covariance matrix of a categorical distribution:
    symmetric, PSD, zero row sums, spectral norm at most 2*beta.
    """
    s = _check_prob_row(s_row)
    if not beta > 0:
        raise ValueError("beta must be positive")
    return beta * (np.diag(s) - np.outer(s, s))


def softmax_hessian_entry(s_row: np.ndarray, beta: float, j: int, k: int, l: int) -> float:
    """Second derivative d^2 s_j / dM_k dM_l of one softmax row (0-based indices).

    Every entry is strictly below 6 * beta^2 in absolute value.
    """
    s = _check_prob_row(s_row)
    t = s.shape[0]
    for idx in (j, k, l):
        if not 0 <= idx < t:
            raise IndexError(f"index {idx} out of range for row of length {t}")
    djk = 1.0 if j == k else 0.0
    djl = 1.0 if j == l else 0.0
    dkl = 1.0 if k == l else 0.0
    return beta**2 * s[j] * (2.0 * s[k] * s[l] + djk * djl - dkl * s[k] - djk * s[l] - djl * s[k])


def softmax_hessian_row(s_row: np.ndarray, beta: float) -> np.ndarray:
    """All t^3 second derivatives of one softmax row, as a (t, t, t) tensor.

    Index order is (j, k, l) for d^2 s_j / dM_k dM_l.  Frobenius norm is at
    most 6 * beta^2 * t^1.5.
    """
    s = _check_prob_row(s_row)
    t = s.shape[0]
    eye = np.eye(t)
    H = 2.0 * s[:, None, None] * s[None, :, None] * s[None, None, :]
    H += s[:, None, None] * eye[:, :, None] * eye[:, None, :]          # djk * djl
    H -= s[:, None, None] * eye[None, :, :] * s[None, :, None]         # dkl * s_k
    H -= s[:, None, None] * eye[:, :, None] * s[None, None, :]         # djk * s_l
    H -= s[:, None, None] * eye[:, None, :] * s[None, :, None]         # djl * s_k
    return beta**2 * H


def attention_forward(sample: AttnSample, params: AttnParams) -> AttnIntermediates:
    """Forward pass caching M, S, Yhat and the error E."""
    X = sample.X
    if params.d != sample.d:
        raise ValueError(f"feature dims differ: sample d={sample.d}, params d={params.d}")
    M = X @ params.W_Q @ params.W_K.T @ X.T / np.sqrt(params.d)
    S = row_softmax(M, params.beta)
    Yhat = S @ X @ params.W_V
    return AttnIntermediates(M=M, S=S, Yhat=Yhat, E=Yhat - sample.Y)


def sample_loss(sample: AttnSample, params: AttnParams) -> float:
    """Half squared Frobenius error of the attention prediction."""
    E = attention_forward(sample, params).E
    return 0.5 * float(np.sum(E * E))


def _softmax_backward_rows(S: np.ndarray, G_S: np.ndarray, beta: float) -> np.ndarray:
    """Apply the per-row softmax Jacobian (symmetric) to an upstream gradient.

    Row i of the result is J(s_i)^T g_i = beta * (s_i * g_i - s_i * <s_i, g_i>);
    identical to materializing softmax_jacobian_row per row, but O(t^2) total.
    """
    inner = np.sum(S * G_S, axis=1, keepdims=True)
    return beta * (S * G_S - S * inner)


def sample_loss_grad(sample: AttnSample, params: AttnParams) -> tuple[np.ndarray, np.ndarray]:
    """Exact gradients (G_Q, G_K) of the per-sample loss.

    Chain: grad_S = E Wv^T X^T, grad_M applies the row-block-diagonal softmax
    Jacobian, then
        G_Q = X^T grad_M   X Wk / sqrt(d)
        G_K = X^T grad_M^T X Wq / sqrt(d).
    """
    X = sample.X
    inter = attention_forward(sample, params)
    G_S = inter.E @ params.W_V.T @ X.T
    G_M = _softmax_backward_rows(inter.S, G_S, params.beta)
    scale = 1.0 / np.sqrt(params.d)
    G_Q = scale * (X.T @ G_M @ X @ params.W_K)
    G_K = scale * (X.T @ G_M.T @ X @ params.W_Q)
    return G_Q, G_K


def _check_batch(batch) -> list[AttnSample]:
    batch = list(batch)
    if not batch:
        raise ValueError("batch must be non-empty")
    t, d = batch[0].t, batch[0].d
    for smp in batch[1:]:
        if smp.t != t or smp.d != d:
            raise ValueError("batch samples must share shapes")
    return batch


def empirical_risk(batch, params: AttnParams) -> float:
    """Mean per-sample loss over the batch (fixed summation order)."""
    batch = _check_batch(batch)
    total = 0.0
    for smp in batch:
        total += sample_loss(smp, params)
    return total / len(batch)


def empirical_risk_grad(batch, params: AttnParams) -> tuple[np.ndarray, np.ndarray]:
    """Mean per-sample gradients (G_Q, G_K) over the batch."""
    batch = _check_batch(batch)
    G_Q = np.zeros_like(params.W_Q)
    G_K = np.zeros_like(params.W_K)
    for smp in batch:
        gq, gk = sample_loss_grad(smp, params)
        G_Q += gq
        G_K += gk
    n = len(batch)
    return G_Q / n, G_K / n


def pack_qk(W_Q: np.ndarray, W_K: np.ndarray) -> np.ndarray:
    """Flatten T = (Wq, Wk) into one vector, Wq block first, row-major."""
    return np.concatenate([np.ravel(W_Q), np.ravel(W_K)])


def unpack_qk(T: np.ndarray, d: int, r: int) -> tuple[np.ndarray, np.ndarray]:
    T = np.asarray(T, dtype=float)
    if T.shape != (2 * d * r,):
        raise ValueError(f"expected a flat vector of length {2 * d * r}, got shape {T.shape}")
    return T[: d * r].reshape(d, r), T[d * r :].reshape(d, r)


def attention_bound_constants(batch, W_V: np.ndarray, beta: float) -> dict[str, float]:
    """Constants of the gradient/Laplacian norm bounds, instantiated on a dataset.

    b_x, b_y are the max Frobenius norms over the batch, b_w = ||Wv||_F, and

        c_grad = (sqrt(t) b_x b_w + b_y) b_w b_x beta b_s1 b_x^2 / sqrt(d)
        c_lap  = b_x^4 / d * ((beta b_s1 b_x b_w)^2
                              + (sqrt(t) b_x b_w + b_y) b_x b_w beta^2 b_s2)

    with b_s1 = 2 and b_s2 = 6 t^2, so that the empirical-risk gradient and
    Laplacian obey ||grad|| <= c_grad ||T|| and |lap| <= c_lap ||T||^2.
    """
    batch = _check_batch(batch)
    t, d = batch[0].t, batch[0].d
    b_x = max(float(np.linalg.norm(smp.X)) for smp in batch)
    b_y = max(float(np.linalg.norm(smp.Y)) for smp in batch)
    b_w = float(np.linalg.norm(W_V))
    b_s1 = 2.0
    b_s2 = 6.0 * t**2
    err_bound = np.sqrt(t) * b_x * b_w + b_y
    c_grad = err_bound * b_w * b_x * beta * b_s1 * b_x**2 / np.sqrt(d)
    c_lap = (b_x**4 / d) * ((beta * b_s1 * b_x * b_w) ** 2 + err_bound * b_x * b_w * beta**2 * b_s2)
    return {
        "t": float(t),
        "d": float(d),
        "beta": float(beta),
        "b_x": b_x,
        "b_y": b_y,
        "b_w": b_w,
        "b_s1": b_s1,
        "b_s2": b_s2,
        "c_grad": float(c_grad),
        "c_lap": float(c_lap),
    }
