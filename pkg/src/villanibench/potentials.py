"""Assembled training potentials: data term plus factor regularizer.

A Potential bundles value/gradient/Laplacian callables over a flattened
parameter vector together with the norm-bound constants of its data term.
The Laplacian uses the exact closed form where one exists (the factorized
network data term and both regularizers); otherwise the data-term part is
estimated, by coordinate finite differences up to dimension 200 and by a
Rademacher trace estimator above that.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .attention import (
    AttnParams,
    AttnSample,
    attention_bound_constants,
    empirical_risk,
    empirical_risk_grad,
    pack_qk,
    unpack_qk,
)
from .lora import (
    ACTIVATIONS,
    BoundedActivation,
    LoraParams,
    LoraSample,
    lora_bound_constants,
    lora_laplacian,
    lora_loss,
    lora_loss_grad,
    unpack_uv,
)
from .probe import fd_laplacian, hutchinson_laplacian
from .regularizers import (
    RegularizerSpec,
    reg_grad,
    reg_laplacian,
    reg_radial_lower_bound,
    reg_value,
)

__all__ = [
    "Potential",
    "attention_potential",
    "lora_potential",
    "quadratic_potential",
    "synthetic_attention_instance",
    "synthetic_lora_instance",
    "make_standard_potential",
    "STANDARD_POTENTIALS",
]

FD_LAPLACIAN_MAX_DIM = 200
HUTCHINSON_PROBES = 128


@dataclass
class Potential:
    """A scalar field over R^dim with gradient and (exact or estimated) Laplacian."""

    name: str
    dim: int
    value: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    data_value: Callable[[np.ndarray], float] | None = None
    data_laplacian: Callable[[np.ndarray], float] | None = None
    reg_spec: RegularizerSpec | None = None
    bound_constants: dict[str, float] = field(default_factory=dict)
    radial_lower_bound: Callable[[float], float] | None = None
    fd_h: float = 1e-4
    lap_est_seed: int = 0

    def _reg_laplacian(self, T: np.ndarray) -> float:
        return reg_laplacian(T, self.reg_spec) if self.reg_spec is not None else 0.0

    @property
    def laplacian_kind(self) -> str:
        if self.data_laplacian is not None:
            return "exact"
        return "fd" if self.dim <= FD_LAPLACIAN_MAX_DIM else "hutchinson"

    def laplacian_with_stderr(self, T: np.ndarray) -> tuple[float, float]:
        """Laplacian of the full potential and the estimator stderr (0 if deterministic)."""
        if self.data_laplacian is not None:
            return self.data_laplacian(T) + self._reg_laplacian(T), 0.0
        data = self.data_value if self.data_value is not None else self.value
        if self.dim <= FD_LAPLACIAN_MAX_DIM:
            return fd_laplacian(data, T, h=self.fd_h) + self._reg_laplacian(T), 0.0
        rng = np.random.default_rng(np.random.SeedSequence(self.lap_est_seed))
        est, se = hutchinson_laplacian(data, T, n_probes=HUTCHINSON_PROBES, rng=rng, h=self.fd_h)
        return est + self._reg_laplacian(T), se

    def laplacian(self, T: np.ndarray) -> float:
        return self.laplacian_with_stderr(T)[0]


def attention_potential(batch, w_v: np.ndarray, beta: float, d: int, r: int,
                        reg_spec: RegularizerSpec, name: str | None = None) -> Potential:
    """Attention regression risk plus a factor penalty, over T = (Wq, Wk) flattened.

    The data-term Laplacian has no cheap closed form here, so the Laplacian
    path estimates it (finite differences at these dimensions); the penalty
    part stays exact.
    """
    batch = list(batch)
    if reg_spec.factor_dims != (d * r, d * r):
        raise ValueError(f"reg_spec.factor_dims must be ({d * r}, {d * r})")

    def params_of(T):
        wq, wk = unpack_qk(T, d, r)
        return AttnParams(W_Q=wq, W_K=wk, W_V=w_v, beta=beta)

    def data_value(T):
        return empirical_risk(batch, params_of(T))

    def value(T):
        return data_value(T) + reg_value(T, reg_spec)

    def gradient(T):
        gq, gk = empirical_risk_grad(batch, params_of(T))
        return pack_qk(gq, gk) + reg_grad(T, reg_spec)

    return Potential(
        name=name or f"attention-{reg_spec.kind}",
        dim=2 * d * r,
        value=value,
        gradient=gradient,
        data_value=data_value,
        reg_spec=reg_spec,
        bound_constants=attention_bound_constants(batch, w_v, beta),
        radial_lower_bound=reg_radial_lower_bound(reg_spec),
    )


def lora_potential(batch, a: np.ndarray, act: BoundedActivation, p: int, d: int, r: int,
                   reg_spec: RegularizerSpec, name: str | None = None) -> Potential:
    """Factorized-network risk plus a factor penalty, over T = (U, V) flattened.

    Both the data term and the penalty have exact Laplacians.
    """
    batch = list(batch)
    if reg_spec.factor_dims != (p * r, d * r):
        raise ValueError(f"reg_spec.factor_dims must be ({p * r}, {d * r})")

    def params_of(T):
        U, V = unpack_uv(T, p, d, r)
        return LoraParams(U=U, V=V, a=a)

    def data_value(T):
        return lora_loss(batch, params_of(T), act)

    return Potential(
        name=name or f"lora-{reg_spec.kind}",
        dim=(p + d) * r,
        value=lambda T: data_value(T) + reg_value(T, reg_spec),
        gradient=lambda T: lora_loss_grad(batch, params_of(T), act) + reg_grad(T, reg_spec),
        data_value=data_value,
        data_laplacian=lambda T: lora_laplacian(batch, params_of(T), act),
        reg_spec=reg_spec,
        bound_constants=lora_bound_constants(batch, a, act),
        radial_lower_bound=reg_radial_lower_bound(reg_spec),
    )


def quadratic_potential(dim: int, center: np.ndarray | None = None, name: str = "quadratic") -> Potential:
    """V(T) = ||T - c||^2 / 2; exact everywhere.  Sanity fixture for probes and samplers."""
    c = np.zeros(dim) if center is None else np.asarray(center, dtype=float)

    return Potential(
        name=name,
        dim=dim,
        value=lambda T: 0.5 * float(np.sum((T - c) ** 2)),
        gradient=lambda T: np.asarray(T, dtype=float) - c,
        data_laplacian=lambda T: float(dim),
        radial_lower_bound=None,
    )


def synthetic_attention_instance(t=2, d=1, r=1, n=8, seed=0, x_scale=0.1, y_scale=0.05,
                                 w_v_scale=0.3, beta=1.0):
    """Seeded small attention dataset: (batch, w_v, beta).  Scales keep the data
    term gentle so the penalty controls the landscape at moderate radii."""
    rng = np.random.default_rng(np.random.SeedSequence((seed, 1)))
    batch = [
        AttnSample(X=x_scale * rng.standard_normal((t, d)), Y=y_scale * rng.standard_normal((t, d)))
        for _ in range(n)
    ]
    w_v = w_v_scale * rng.standard_normal((d, d))
    return batch, w_v, float(beta)


def synthetic_lora_instance(p=1, d=1, r=1, n=8, seed=0, x_scale=0.02, y_scale=0.02,
                            a_scale=0.1, act="tanh"):
    """Seeded small factorized-network dataset: (batch, a, activation)."""
    rng = np.random.default_rng(np.random.SeedSequence((seed, 2)))
    batch = [
        LoraSample(x=x_scale * rng.standard_normal(d), y=float(y_scale * rng.standard_normal()))
        for _ in range(n)
    ]
    a = a_scale * rng.standard_normal(p) / np.sqrt(p)
    return batch, a, ACTIVATIONS[act]


STANDARD_POTENTIALS = ("att-log", "att-power", "lora-log", "lora-power")


def make_standard_potential(kind: str, lam: float, eps: float | None = None, seed: int = 0,
                            dims: dict | None = None, **instance_kw) -> Potential:
    """Build one of the four named model/penalty combinations on a seeded dataset.

    kind is one of att-log, att-power, lora-log, lora-power.  dims may override
    the default small sizes (keys t, d, r for attention; p, d, r for the
    factorized net; n for both).
    """
    if kind not in STANDARD_POTENTIALS:
        raise ValueError(f"unknown potential kind {kind!r}; options: {STANDARD_POTENTIALS}")
    model, reg_kind = kind.split("-")
    dims = dict(dims or {})
    if model == "att":
        t = dims.get("t", 2)
        d = dims.get("d", 1)
        r = dims.get("r", 1)
        n = dims.get("n", 8)
        batch, w_v, beta = synthetic_attention_instance(t=t, d=d, r=r, n=n, seed=seed, **instance_kw)
        spec = RegularizerSpec(kind=reg_kind, lam=lam, epsilon=eps, factor_dims=(d * r, d * r))
        return attention_potential(batch, w_v, beta, d, r, spec, name=kind)
    p = dims.get("p", 1)
    d = dims.get("d", 1)
    r = dims.get("r", 1)
    n = dims.get("n", 8)
    batch, a, act = synthetic_lora_instance(p=p, d=d, r=r, n=n, seed=seed, **instance_kw)
    spec = RegularizerSpec(kind=reg_kind, lam=lam, epsilon=eps, factor_dims=(p * r, d * r))
    return lora_potential(batch, a, act, p, d, r, spec, name=kind)
