"""Factor-norm regularizers with closed-form values, gradients and Laplacians.

Two penalties over a flattened parameter vector T split into two factor blocks
(b1, b2) of sizes factor_dims:

  log-amplified (acts on the full vector, ||T||^2 = ||b1||^2 + ||b2||^2):
      R(T) = lam/2 * ||T||^2 * log(1 + ||T||^2)

  power (acts per block, exponent 2 + eps):
      R(T) = lam/2 * (||b1||^(2+eps) + ||b2||^(2+eps))

Gradients and Laplacians are exact.  The power formulas are extended by
continuity to zero blocks so no 0^0 or division by zero ever occurs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["RegularizerSpec", "reg_value", "reg_grad", "reg_laplacian", "reg_radial_lower_bound"]

_KINDS = ("none", "log", "power")


@dataclass(frozen=True)
class RegularizerSpec:
    """Penalty kind, strength and the flattened sizes of the two factor blocks."""

    kind: str
    lam: float = 0.0
    epsilon: float | None = None
    factor_dims: tuple[int, int] = (0, 0)

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"kind must be one of {_KINDS}, got {self.kind!r}")
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")
        if self.kind == "power" and not (self.epsilon is not None and self.epsilon > 0):
            raise ValueError("power regularizer needs epsilon > 0")
        if any(d < 0 for d in self.factor_dims):
            raise ValueError("factor_dims must be nonnegative")

    @property
    def dim(self) -> int:
        return self.factor_dims[0] + self.factor_dims[1]


def _blocks(T: np.ndarray, spec: RegularizerSpec):
    T = np.asarray(T, dtype=float)
    if T.shape != (spec.dim,):
        raise ValueError(f"T has shape {T.shape}, expected ({spec.dim},) per factor_dims")
    d1 = spec.factor_dims[0]
    return T, T[:d1], T[d1:]


def reg_value(T: np.ndarray, spec: RegularizerSpec) -> float:
    T, b1, b2 = _blocks(T, spec)
    if spec.kind == "none" or spec.lam == 0.0:
        return 0.0
    if spec.kind == "log":
        sq = float(T @ T)
        return 0.5 * spec.lam * sq * np.log1p(sq)
    e = spec.epsilon
    return 0.5 * spec.lam * (float(b1 @ b1) ** ((2 + e) / 2) + float(b2 @ b2) ** ((2 + e) / 2))


def reg_grad(T: np.ndarray, spec: RegularizerSpec) -> np.ndarray:
    T, b1, b2 = _blocks(T, spec)
    if spec.kind == "none" or spec.lam == 0.0:
        return np.zeros_like(T)
    if spec.kind == "log":
        sq = float(T @ T)
        return spec.lam * T * (np.log1p(sq) + sq / (1.0 + sq))
    e = spec.epsilon
    out = np.empty_like(T)
    for block, view in ((b1, out[: b1.size]), (b2, out[b1.size :])):
        nrm = np.linalg.norm(block)
        view[:] = 0.0 if nrm == 0.0 else 0.5 * spec.lam * (2 + e) * nrm**e * block
    return out


def reg_laplacian(T: np.ndarray, spec: RegularizerSpec) -> float:
    T, b1, b2 = _blocks(T, spec)
    if spec.kind == "none" or spec.lam == 0.0:
        return 0.0
    if spec.kind == "log":
        sq = float(T @ T)
        bracket = np.log1p(sq) + sq / (1.0 + sq)
        return spec.lam * (spec.dim * bracket + 2.0 * sq / (1.0 + sq) + 2.0 * sq / (1.0 + sq) ** 2)
    e = spec.epsilon
    total = 0.0
    for block in (b1, b2):
        nrm = np.linalg.norm(block)
        if nrm > 0.0:
            total += 0.5 * spec.lam * (2 + e) * (e + block.size) * nrm**e
    return total


def reg_radial_lower_bound(spec: RegularizerSpec):
    """Radial lower bound rho -> min over ||T|| = rho of reg_value, or None.

    log:   lam/2 rho^2 log(1 + rho^2) exactly (the penalty is radial).
    power: lam/2 * 2^(-eps/2) * rho^(2+eps) via the power-mean inequality on
           the two block norms.
    Used to bound Gibbs-integral tails outside a truncation box.
    """
    if spec.kind == "none" or spec.lam == 0.0:
        return None
    if spec.kind == "log":
        return lambda rho: 0.5 * spec.lam * rho**2 * np.log1p(rho**2)
    e = spec.epsilon
    return lambda rho: 0.5 * spec.lam * 2.0 ** (-e / 2.0) * rho ** (2 + e)
