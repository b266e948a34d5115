"""Depth-2 network with a rank-factorized weight: z = a^T sigma(U V^T x).

Only the factors T = (U, V) are trained; the outer weights a are fixed.  The
module provides the forward pass with reusable intermediates, exact factor
gradients, the exact Laplacian of the mean squared loss over the flattened
factors, and the scaling map (U, V) -> (U A, V A^-T) that leaves the product
U V^T (and hence the loss) unchanged.

Activations must have bounded sigma, sigma' and sigma''; ReLU is excluded
because its second derivative is undefined at 0 and unbounded as a
distribution.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import expit

__all__ = [
    "BoundedActivation",
    "TANH",
    "SIGMOID",
    "ACTIVATIONS",
    "LoraParams",
    "LoraSample",
    "lora_forward",
    "lora_grad_z",
    "lora_loss",
    "lora_loss_grad",
    "lora_laplacian",
    "scaling_orbit",
    "pack_uv",
    "unpack_uv",
    "default_outer_weights",
    "lora_bound_constants",
]


@dataclass(frozen=True)
class BoundedActivation:
    """Activation with true suprema of |sigma|, |sigma'|, |sigma''|."""

    kind: str
    fn: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    d1: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    d2: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    b_sigma: float
    b_sigma1: float
    b_sigma2: float


def _tanh_d1(s):
    return 1.0 - np.tanh(s) ** 2


def _tanh_d2(s):
    th = np.tanh(s)
    return -2.0 * th * (1.0 - th * th)


def _sigmoid_d1(s):
    p = expit(s)
    return p * (1.0 - p)


def _sigmoid_d2(s):
    p = expit(s)
    return p * (1.0 - p) * (1.0 - 2.0 * p)


TANH = BoundedActivation("tanh", np.tanh, _tanh_d1, _tanh_d2,
                         b_sigma=1.0, b_sigma1=1.0, b_sigma2=4.0 / (3.0 * np.sqrt(3.0)))
SIGMOID = BoundedActivation("sigmoid", expit, _sigmoid_d1, _sigmoid_d2,
                            b_sigma=1.0, b_sigma1=0.25, b_sigma2=1.0 / (6.0 * np.sqrt(3.0)))
ACTIVATIONS = {"tanh": TANH, "sigmoid": SIGMOID}


@dataclass(frozen=True)
class LoraParams:
    """Factors U (p x r), V (d x r) and fixed outer weights a (length p)."""

    U: np.ndarray
    V: np.ndarray
    a: np.ndarray

    def __post_init__(self):
        U = np.asarray(self.U, dtype=float)
        V = np.asarray(self.V, dtype=float)
        a = np.asarray(self.a, dtype=float)
        if U.ndim != 2 or V.ndim != 2 or U.shape[1] != V.shape[1]:
            raise ValueError(f"U and V must share the inner rank, got {U.shape} and {V.shape}")
        if a.shape != (U.shape[0],):
            raise ValueError(f"a must have length p={U.shape[0]}, got shape {a.shape}")
        if not (np.all(np.isfinite(U)) and np.all(np.isfinite(V)) and np.all(np.isfinite(a))):
            raise ValueError("parameters contain non-finite entries")
        object.__setattr__(self, "U", U)
        object.__setattr__(self, "V", V)
        object.__setattr__(self, "a", a)

    @property
    def p(self) -> int:
        return self.U.shape[0]

    @property
    def d(self) -> int:
        return self.V.shape[0]

    @property
    def r(self) -> int:
        return self.U.shape[1]


@dataclass(frozen=True)
class LoraSample:
    x: np.ndarray
    y: float

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        if x.ndim != 1:
            raise ValueError("x must be a 1-d vector")
        if not (np.all(np.isfinite(x)) and np.isfinite(self.y)):
            raise ValueError("sample contains non-finite entries")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", float(self.y))


def default_outer_weights(p: int, seed: int = 0) -> np.ndarray:
    """Fixed outer weights: one seeded standard-normal draw scaled by 1/sqrt(p)."""
    return np.random.default_rng(seed).standard_normal(p) / np.sqrt(p)


def lora_forward(sample: LoraSample, params: LoraParams, act: BoundedActivation):
    """Evaluate z = a^T sigma(U V^T x); returns (z, h, s) with h = V^T x, s = U h."""
    if sample.x.shape != (params.d,):
        raise ValueError(f"x has length {sample.x.shape[0]}, expected d={params.d}")
    h = params.V.T @ sample.x
    s = params.U @ h
    z = float(params.a @ act.fn(s))
    return z, h, s


def lora_grad_z(sample: LoraSample, params: LoraParams, act: BoundedActivation):
    """Exact gradients of z w.r.t. the factors.

    With g = a * sigma'(s):  grad_U z = g h^T  and  grad_V z = x (U^T g)^T.
    """
    _, h, s = lora_forward(sample, params, act)
    g = params.a * act.d1(s)
    return np.outer(g, h), np.outer(sample.x, params.U.T @ g)


def _check_batch(batch, params: LoraParams) -> list[LoraSample]:
    batch = list(batch)
    if not batch:
        raise ValueError("batch must be non-empty")
    for smp in batch:
        if smp.x.shape != (params.d,):
            raise ValueError("batch samples must match the input dimension d")
    return batch


def lora_loss(batch, params: LoraParams, act: BoundedActivation) -> float:
    """Mean squared loss L = (1/n) sum_i (y_i - z_i)^2 / 2 (fixed summation order)."""
    batch = _check_batch(batch, params)
    total = 0.0
    for smp in batch:
        z, _, _ = lora_forward(smp, params, act)
        total += 0.5 * (smp.y - z) ** 2
    return total / len(batch)


def lora_loss_grad(batch, params: LoraParams, act: BoundedActivation) -> np.ndarray:
    """Flattened gradient of the mean squared loss over T = (U, V)."""
    batch = _check_batch(batch, params)
    Gu = np.zeros_like(params.U)
    Gv = np.zeros_like(params.V)
    for smp in batch:
        z, h, s = lora_forward(smp, params, act)
        g = params.a * act.d1(s)
        coeff = z - smp.y
        Gu += coeff * np.outer(g, h)
        Gv += coeff * np.outer(smp.x, params.U.T @ g)
    n = len(batch)
    return pack_uv(Gu / n, Gv / n)


def lora_laplacian(batch, params: LoraParams, act: BoundedActivation) -> float:
    """Exact Laplacian of the mean squared loss over the flattened T = (U, V).

    Per sample:  ||grad_T z||^2 + (z - y) * (lap_U z + lap_V z), with
        lap_U z = ||h||^2 * sum_j a_j sigma''(s_j)
        lap_V z = ||x||^2 * sum_j a_j sigma''(s_j) ||U_j||^2   (U_j = j-th row).
    """
    batch = _check_batch(batch, params)
    row_sq = np.sum(params.U * params.U, axis=1)
    total = 0.0
    for smp in batch:
        z, h, s = lora_forward(smp, params, act)
        g = params.a * act.d1(s)
        grad_sq = float(np.sum(g * g) * np.sum(h * h) + np.sum(smp.x * smp.x) * np.sum((params.U.T @ g) ** 2))
        a_d2 = params.a * act.d2(s)
        lap_z = float(np.sum(h * h) * np.sum(a_d2) + np.sum(smp.x * smp.x) * np.sum(a_d2 * row_sq))
        total += grad_sq + (z - smp.y) * lap_z
    return total / len(batch)


def scaling_orbit(params: LoraParams, A: np.ndarray) -> LoraParams:
    """Move along the loss-preserving orbit: (U, V) -> (U A, V A^-T).

    The product U V^T, and therefore the loss, is unchanged.  A must be a
    well-conditioned invertible r x r matrix.
    """
    A = np.asarray(A, dtype=float)
    r = params.r
    if A.shape != (r, r):
        raise ValueError(f"A must be {r} x {r}, got {A.shape}")
    if not np.all(np.isfinite(A)) or np.linalg.cond(A) > 1e12:
        raise ValueError("A is singular or too ill-conditioned (cond > 1e12)")
    A_inv = np.linalg.inv(A)
    return LoraParams(U=params.U @ A, V=params.V @ A_inv.T, a=params.a)


def pack_uv(U: np.ndarray, V: np.ndarray) -> np.ndarray:
    """Flatten T = (U, V) into one vector, U block first, row-major."""
    return np.concatenate([np.ravel(U), np.ravel(V)])


def unpack_uv(T: np.ndarray, p: int, d: int, r: int) -> tuple[np.ndarray, np.ndarray]:
    T = np.asarray(T, dtype=float)
    if T.shape != ((p + d) * r,):
        raise ValueError(f"expected a flat vector of length {(p + d) * r}, got shape {T.shape}")
    return T[: p * r].reshape(p, r), T[p * r :].reshape(d, r)


def lora_bound_constants(batch, a: np.ndarray, act: BoundedActivation) -> dict[str, float]:
    """Constants of the gradient/Laplacian norm bounds, instantiated on a dataset.

    With b_0 = ||a||_2 sqrt(p) b_sigma + b_y:
        ||grad_T z_i|| <= c_grad_z ||T||,        c_grad_z = b_sigma1 b_x ||a||_2
        ||grad_T L||   <= c_grad ||T||,          c_grad   = b_0 c_grad_z
        |lap_T L|      <= c_lap ||T||^2,         c_lap    = c_grad_z^2 + b_0 b_sigma2 ||a||_1 b_x^2
    """
    batch = list(batch)
    if not batch:
        raise ValueError("batch must be non-empty")
    a = np.asarray(a, dtype=float)
    p = a.shape[0]
    b_x = max(float(np.linalg.norm(smp.x)) for smp in batch)
    b_y = max(abs(smp.y) for smp in batch)
    a_l2 = float(np.linalg.norm(a))
    a_l1 = float(np.sum(np.abs(a)))
    b_0 = a_l2 * np.sqrt(p) * act.b_sigma + b_y
    c_grad_z = act.b_sigma1 * b_x * a_l2
    return {
        "p": float(p),
        "b_x": b_x,
        "b_y": b_y,
        "a_l2": a_l2,
        "a_l1": a_l1,
        "b_sigma": act.b_sigma,
        "b_sigma1": act.b_sigma1,
        "b_sigma2": act.b_sigma2,
        "b_0": float(b_0),
        "c_grad_z": float(c_grad_z),
        "c_grad": float(b_0 * c_grad_z),
        "c_lap": float(c_grad_z**2 + b_0 * act.b_sigma2 * a_l1 * b_x**2),
    }
