"""Numerical certification of confining / coercive-growth behaviour.

Certifies, at finite radii, the two properties an assembled potential needs
for its Gibbs measure to be well behaved:

  * confining growth: V(R u) increases along every sampled ray, and the
    truncated Gibbs integral of exp(-2 V / s) stabilises as the box grows;
  * the growth functional F(R) = ||grad V(R u)||^2 / s - lap V(R u) increases
    along every sampled ray and is positive at the largest radii.

A true limit at infinity is not machine-checkable; growth plus positivity on a
geometric radius grid is the executable stand-in.  The module also re-measures
the explicit gradient/Laplacian norm bounds of both data terms on random draws
and reports the observed slack.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "fd_laplacian",
    "hutchinson_laplacian",
    "RayScanReport",
    "ray_scan",
    "sample_directions",
    "orbit_direction",
    "write_ray_reports",
    "LemmaBoundReport",
    "verify_lemma_bounds",
    "GibbsReport",
    "gibbs_normalizability_check",
    "DEFAULT_RADII",
]

DEFAULT_RADII = (1.0, 10.0, 100.0, 1000.0, 10000.0)


def fd_laplacian(f, T: np.ndarray, h: float = 1e-4) -> float:
    """Laplacian by coordinate-wise second central differences (2*dim + 1 evaluations)."""
    T = np.asarray(T, dtype=float)
    if T.size > 5000:
        raise ValueError("fd_laplacian is limited to dimension 5000")
    if not (1e-6 <= h <= 1e-2):
        raise ValueError("step h must lie in [1e-6, 1e-2]")
    f0 = f(T)
    total = 0.0
    for k in range(T.size):
        e = np.zeros_like(T)
        e[k] = h
        total += (f(T + e) - 2.0 * f0 + f(T - e)) / (h * h)
    if not np.isfinite(total):
        raise ArithmeticError("fd_laplacian: non-finite evaluation")
    return float(total)


def hutchinson_laplacian(f, T: np.ndarray, n_probes: int, rng: np.random.Generator,
                         h: float = 1e-4) -> tuple[float, float]:
    """Stochastic Laplacian estimate: mean of v^T H v over Rademacher probes v.

    Each quadratic form is taken by a second central difference along v, so
    the estimate is exact (up to roundoff) for quadratics.  Returns
    (estimate, stderr of the probe mean).
    """
    if n_probes < 16:
        raise ValueError("need at least 16 probes")
    T = np.asarray(T, dtype=float)
    f0 = f(T)
    vals = np.empty(n_probes)
    for i in range(n_probes):
        v = rng.integers(0, 2, size=T.size) * 2.0 - 1.0
        vals[i] = (f(T + h * v) - 2.0 * f0 + f(T - h * v)) / (h * h)
    est = float(vals.mean())
    stderr = float(vals.std(ddof=1) / np.sqrt(n_probes)) if n_probes > 1 else 0.0
    return est, stderr


@dataclass(frozen=True)
class RayScanReport:
    """Growth functional and potential values along one ray R -> R * direction."""

    direction: np.ndarray
    radii: tuple[float, ...]
    villani_values: tuple[float, ...]      # F(R) = ||grad V||^2 / s - lap V
    confining_values: tuple[float, ...]    # V(R u)
    lap_stderrs: tuple[float, ...]
    flagged_radii: tuple[float, ...]       # radii where evaluation was non-finite
    s: float

    def f_strictly_increasing(self) -> bool:
        vals = [v for v, r in zip(self.villani_values, self.radii) if r not in self.flagged_radii]
        return all(b > a for a, b in zip(vals, vals[1:]))

    def f_positive_at_top(self, k: int = 2) -> bool:
        return all(np.isfinite(v) and v > 0.0 for v in self.villani_values[-k:])

    def v_strictly_increasing(self) -> bool:
        vals = [v for v, r in zip(self.confining_values, self.radii) if r not in self.flagged_radii]
        return all(b > a for a, b in zip(vals, vals[1:]))


def ray_scan(potential, direction: np.ndarray, radii=DEFAULT_RADII, s: float = 0.1) -> RayScanReport:
    """Evaluate F(R) and V(R u) along one unit direction at increasing radii.

    Uses the potential's exact Laplacian path when it has one; otherwise the
    estimated path (with its stderr).  A radius whose evaluation overflows is
    flagged and the scan continues.
    """
    u = np.asarray(direction, dtype=float)
    if abs(np.linalg.norm(u) - 1.0) > 1e-8:
        raise ValueError("direction must be a unit vector")
    if not s > 0:
        raise ValueError("temperature s must be positive")
    radii = tuple(float(r) for r in radii)
    if any(r <= 0 for r in radii) or any(b <= a for a, b in zip(radii, radii[1:])):
        raise ValueError("radii must be positive and strictly increasing")

    f_vals, v_vals, errs, flagged = [], [], [], []
    for R in radii:
        T = R * u
        try:
            g = potential.gradient(T)
            lap, se = potential.laplacian_with_stderr(T)
            fv = float(g @ g) / s - lap
            vv = potential.value(T)
        except (ArithmeticError, FloatingPointError, OverflowError):
            fv, vv, se = np.nan, np.nan, np.nan
        if not (np.isfinite(fv) and np.isfinite(vv)):
            flagged.append(R)
        f_vals.append(float(fv))
        v_vals.append(float(vv))
        errs.append(float(se))
    return RayScanReport(
        direction=u,
        radii=radii,
        villani_values=tuple(f_vals),
        confining_values=tuple(v_vals),
        lap_stderrs=tuple(errs),
        flagged_radii=tuple(flagged),
        s=float(s),
    )


def sample_directions(dim: int, n: int, rng: np.random.Generator) -> list[np.ndarray]:
    """n unit directions, uniform on the sphere."""
    out = []
    for _ in range(n):
        v = rng.standard_normal(dim)
        out.append(v / np.linalg.norm(v))
    return out


def orbit_direction(dim1: int, dim2: int, rng: np.random.Generator, block: int = 0) -> np.ndarray:
    """A unit direction supported on a single factor block.

    Rays along such directions stay inside a scaling orbit of the factorized
    loss (the other factor is zero, so the data term is constant along the
    ray); without a penalty the potential is flat there.
    """
    u = np.zeros(dim1 + dim2)
    if block == 0:
        u[:dim1] = rng.standard_normal(dim1)
    else:
        u[dim1:] = rng.standard_normal(dim2)
    return u / np.linalg.norm(u)


def write_ray_reports(path, entries):
    """CSV report: one row per (potential, direction, radius).

    entries is an iterable of (potential_name, direction_index, RayScanReport).
    """
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["potential", "direction", "radius", "f_value", "v_value", "lap_stderr"])
        for name, idx, rep in entries:
            for R, fv, vv, se in zip(rep.radii, rep.villani_values, rep.confining_values,
                                     rep.lap_stderrs):
                w.writerow([name, idx, repr(float(R)), repr(float(fv)), repr(float(vv)),
                            repr(float(se))])


@dataclass
class LemmaBoundReport:
    """Outcome of re-measuring the explicit norm bounds on random draws."""

    model: str
    trials: int
    max_grad_ratio: float = 0.0
    max_lap_ratio: float = 0.0
    violations: list[dict] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.violations


def _ratio(measured: float, bound: float) -> float:
    if bound <= 1e-300:
        return 0.0 if measured <= 1e-300 else np.inf
    return measured / bound


def verify_lemma_bounds(model: str, trials: int, seed: int = 0, dims: dict | None = None) -> LemmaBoundReport:
    """Check  ||grad data-term|| <= c_grad ||T||  and  |lap data-term| <= c_lap ||T||^2
    on random draws, with the constants instantiated from each draw's own data
    bounds.  Each trial derives its RNG stream from (seed, trial index), so the
    report does not depend on execution order.
    """
    if trials < 1:
        raise ValueError("need at least one trial")
    if model not in ("attention", "lora"):
        raise ValueError("model must be 'attention' or 'lora'")
    # local imports: this module stays import-light for the potential assembly layer
    from .attention import (AttnParams, AttnSample, attention_bound_constants,
                            empirical_risk, empirical_risk_grad, pack_qk)
    from .lora import (LoraParams, LoraSample, lora_bound_constants, lora_laplacian,
                       lora_loss, lora_loss_grad, pack_uv, unpack_uv, TANH)

    dims = dict(dims or {})
    report = LemmaBoundReport(model=model, trials=trials)
    for trial in range(trials):
        rng = np.random.default_rng(np.random.SeedSequence((seed, trial)))
        if model == "attention":
            t = dims.get("t", 2)
            d = dims.get("d", 2)
            r = dims.get("r", 2)
            n = dims.get("n", 2)
            beta = float(rng.uniform(0.3, 2.0))
            batch = [AttnSample(X=rng.standard_normal((t, d)), Y=rng.standard_normal((t, d)))
                     for _ in range(n)]
            w_v = rng.standard_normal((d, d))
            scale = 0.0 if trial == 0 else float(rng.uniform(0.1, 3.0))
            wq = scale * rng.standard_normal((d, r))
            wk = scale * rng.standard_normal((d, r))
            params = AttnParams(W_Q=wq, W_K=wk, W_V=w_v, beta=beta)
            consts = attention_bound_constants(batch, w_v, beta)
            T = pack_qk(wq, wk)
            grad = pack_qk(*empirical_risk_grad(batch, params))

            def data_value(Tv, batch=batch, w_v=w_v, beta=beta, d=d, r=r):
                from .attention import unpack_qk
                q, k = unpack_qk(Tv, d, r)
                return empirical_risk(batch, AttnParams(W_Q=q, W_K=k, W_V=w_v, beta=beta))

            lap = fd_laplacian(data_value, T, h=1e-4)
        else:
            p = dims.get("p", 2)
            d = dims.get("d", 2)
            r = dims.get("r", 2)
            n = dims.get("n", 2)
            batch = [LoraSample(x=rng.standard_normal(d), y=float(rng.standard_normal()))
                     for _ in range(n)]
            a = rng.standard_normal(p) / np.sqrt(p)
            scale = 0.0 if trial == 0 else float(rng.uniform(0.1, 3.0))
            params = LoraParams(U=scale * rng.standard_normal((p, r)),
                                V=scale * rng.standard_normal((d, r)), a=a)
            consts = lora_bound_constants(batch, a, TANH)
            T = pack_uv(params.U, params.V)
            grad = lora_loss_grad(batch, params, TANH)
            lap = lora_laplacian(batch, params, TANH)

        t_norm = float(np.linalg.norm(T))
        grad_ratio = _ratio(float(np.linalg.norm(grad)), consts["c_grad"] * t_norm)
        lap_ratio = _ratio(abs(lap), consts["c_lap"] * t_norm**2)
        report.max_grad_ratio = max(report.max_grad_ratio, grad_ratio)
        report.max_lap_ratio = max(report.max_lap_ratio, lap_ratio)
        for kind, ratio in (("gradient", grad_ratio), ("laplacian", lap_ratio)):
            if ratio > 1.0:
                report.violations.append(
                    {"trial": trial, "seed": (seed, trial), "kind": kind, "ratio": ratio}
                )
    return report


@dataclass
class GibbsReport:
    """Truncated Gibbs integrals over growing boxes, with a coercivity tail bound."""

    box_sizes: tuple[float, ...]
    integrals: tuple[float, ...]
    tail_bound: float | None     # bound on the mass outside the largest box, if available
    plateau_rel_change: float    # relative change between the last two boxes
    normalizable: bool

    @property
    def partition(self) -> float:
        return self.integrals[-1]


def _panel_axis_nodes(L: float, nodes_per_panel: int):
    """Gauss-Legendre nodes/weights on [-L, L], composite over geometric panels."""
    edges = [0.0, min(1.0, L)]
    while edges[-1] < L:
        edges.append(min(2.0 * edges[-1], L))
    x_ref, w_ref = np.polynomial.legendre.leggauss(nodes_per_panel)
    xs, ws = [], []
    for a, b in zip(edges, edges[1:]):
        half = 0.5 * (b - a)
        mid = 0.5 * (a + b)
        xs.append(mid + half * x_ref)
        ws.append(half * w_ref)
    x = np.concatenate(xs)
    w = np.concatenate(ws)
    return np.concatenate([-x[::-1], x]), np.concatenate([w[::-1], w])


def _box_integral(value_fn, dim: int, L: float, s: float, nodes_per_panel: int) -> float:
    axes = [_panel_axis_nodes(L, nodes_per_panel) for _ in range(dim)]
    grids = np.meshgrid(*[a[0] for a in axes], indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    w_total = np.ones_like(grids[0])
    for g in np.meshgrid(*[a[1] for a in axes], indexing="ij"):
        w_total = w_total * g
    w_flat = w_total.ravel()
    total = 0.0
    for i in range(pts.shape[0]):
        total += w_flat[i] * np.exp(-2.0 * value_fn(pts[i]) / s)
    return float(total)


def _sphere_surface(dim: int) -> float:
    from math import gamma, pi
    return 2.0 * pi ** (dim / 2.0) / gamma(dim / 2.0)


def _tail_bound(radial_lower, dim: int, L: float, s: float) -> float:
    """Bound on the Gibbs mass outside the ball of radius L (hence outside the box)."""
    rho = np.linspace(L, 20.0 * L, 4001)
    vals = rho ** (dim - 1) * np.exp(-2.0 * np.asarray([radial_lower(r) for r in rho]) / s)
    trapezoid = getattr(np, "trapezoid", np.trapz)
    return float(_sphere_surface(dim) * trapezoid(vals, rho))


def gibbs_normalizability_check(potential, s: float, box_sizes=(10.0, 100.0, 1000.0),
                                nodes_per_panel: int = 16, plateau_tol: float = 1e-4) -> GibbsReport:
    """Quadrature of exp(-2 V / s) over growing boxes [-L, L]^dim (dim <= 3).

    A normalizable potential plateaus as L grows; a flat-orbit (unpenalized
    factorized) potential keeps growing with the box volume and is reported as
    non-normalizable.  When the potential carries a radial lower bound from its
    penalty, the mass outside the largest box is bounded and reported.
    """
    if potential.dim > 3:
        raise ValueError("tensor-product quadrature is limited to dimension 3")
    if not s > 0:
        raise ValueError("temperature s must be positive")
    box_sizes = tuple(float(b) for b in box_sizes)
    integrals = tuple(_box_integral(potential.value, potential.dim, L, s, nodes_per_panel)
                      for L in box_sizes)
    rel_change = abs(integrals[-1] - integrals[-2]) / max(integrals[-1], 1e-300)
    tail = None
    low = getattr(potential, "radial_lower_bound", None)
    if low is not None:
        tail = _tail_bound(low, potential.dim, box_sizes[-1], s)
    normalizable = rel_change <= plateau_tol and (tail is None or tail <= plateau_tol * integrals[-1] + 1e-300)
    return GibbsReport(
        box_sizes=box_sizes,
        integrals=integrals,
        tail_bound=tail,
        plateau_rel_change=float(rel_change),
        normalizable=bool(normalizable),
    )
