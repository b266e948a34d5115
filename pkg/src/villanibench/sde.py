"""Overdamped Langevin training of a potential, and the Adam baseline.

The continuous dynamics  dT = -grad V(T) dt + sqrt(s) dB  are discretized by
explicit Euler-Maruyama:

    T' = T - h * grad V(T) + sqrt(s * h) * xi,   xi ~ N(0, I),

whose invariant law approximates the Gibbs density exp(-2 V / s).  At s = 0
the step degenerates to plain gradient descent.  Expectations over the law of
T_t are approximated by averaging independent chains; each chain owns a
counter-based RNG stream keyed by (seed, chain index), so runs reproduce
bit-for-bit regardless of how chains are scheduled.

The averaged value trajectory is summarized by fitting

    vbar(t) = v_star + asymptote + D * exp(-lambda * t)

with the asymptote profiled over a grid and (log-linear) least squares for the
rate.  v_star itself is approximated by multi-start descent and is an upper
bound on the true infimum.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass

import numpy as np

from .util import parallel_map, stream_rng

__all__ = [
    "SdeConfig",
    "DivergenceError",
    "em_step",
    "Trajectory",
    "run_sde",
    "DecayFit",
    "fit_decay",
    "estimate_v_star",
    "moving_average",
    "plateau_estimate",
    "AdamState",
    "adam_step",
    "write_trajectory_csv",
    "write_decay_json",
]

TRAJECTORY_HEADER = ["step", "time_s", "v", "grad_norm", "t_norm"]


@dataclass(frozen=True)
class SdeConfig:
    """Sampler settings: temperature s, step size h, horizon, seed, record cadence."""

    s: float
    h: float = 1e-3
    steps: int = 10000
    seed: int = 0
    record_every: int = 10

    def __post_init__(self):
        if self.s < 0:
            raise ValueError("temperature s must be nonnegative (0 = gradient flow)")
        if not self.h > 0:
            raise ValueError("step size h must be positive")
        if self.steps < 1 or self.record_every < 1:
            raise ValueError("steps and record_every must be positive")


class DivergenceError(RuntimeError):
    """Raised when a step produces non-finite state; carries the last stable point."""

    def __init__(self, message: str, last_stable: np.ndarray):
        super().__init__(message)
        self.last_stable = last_stable


def em_step(T: np.ndarray, grad: np.ndarray, config: SdeConfig, rng: np.random.Generator) -> np.ndarray:
    """One Euler-Maruyama step.  With s = 0 no noise is drawn (pure descent)."""
    T = np.asarray(T, dtype=float)
    grad = np.asarray(grad, dtype=float)
    if not np.all(np.isfinite(grad)):
        raise DivergenceError("non-finite gradient", last_stable=T)
    out = T - config.h * grad
    if config.s > 0:
        out = out + np.sqrt(config.s * config.h) * rng.standard_normal(T.shape)
    if not np.all(np.isfinite(out)):
        raise DivergenceError("non-finite state after step", last_stable=T)
    return out


@dataclass
class Trajectory:
    """Chain-averaged records.  times is the integrated SDE time step * h (not
    wall-clock), which keeps emitted artifacts reproducible under a fixed seed."""

    steps: np.ndarray
    times: np.ndarray
    v: np.ndarray
    grad_norm: np.ndarray
    t_norm: np.ndarray
    n_chains: int
    h: float
    diverged: bool = False
    diagnostic: str | None = None


def _record_steps(config: SdeConfig) -> list[int]:
    steps = list(range(0, config.steps + 1, config.record_every))
    if steps[-1] != config.steps:
        steps.append(config.steps)
    return steps


def _run_chain(potential, T0: np.ndarray, config: SdeConfig, chain: int):
    rng = stream_rng(config.seed, chain)
    record_at = set(_record_steps(config))
    T = np.array(T0, dtype=float)
    rows = []
    for step in range(config.steps + 1):
        g = potential.gradient(T)
        if step in record_at:
            v = potential.value(T)
            if not np.isfinite(v):
                raise DivergenceError(f"non-finite value at step {step}", last_stable=T)
            rows.append((v, float(np.linalg.norm(g)), float(np.linalg.norm(T))))
        if step < config.steps:
            T = em_step(T, g, config, rng)
    return np.asarray(rows)


def run_sde(potential, init, config: SdeConfig, n_chains: int = 1, threads: int = 1) -> Trajectory:
    """Integrate the sampler and record the chain-averaged trajectory.

    init is either a starting point shared by all chains or a callable
    sampler(rng) realizing the initial distribution per chain (the per-chain
    noise streams are independent either way).  On divergence the step size is
    halved and the run restarted, up to 5 times; if it still diverges the
    truncated trajectory is returned with a diagnostic.
    """
    if n_chains < 1:
        raise ValueError("need at least one chain")

    def initial_point(chain: int) -> np.ndarray:
        if callable(init):
            return np.asarray(init(stream_rng(config.seed, chain, 1)), dtype=float)
        return np.asarray(init, dtype=float)

    cfg = config
    last_error = None
    for _attempt in range(6):
        try:
            per_chain = parallel_map(
                lambda c: _run_chain(potential, initial_point(c), cfg, c),
                range(n_chains),
                threads=threads,
            )
            stacked = np.stack(per_chain)          # (chains, records, 3)
            mean = stacked.mean(axis=0)
            steps = np.asarray(_record_steps(cfg))
            traj = Trajectory(
                steps=steps,
                times=steps * cfg.h,
                v=mean[:, 0],
                grad_norm=mean[:, 1],
                t_norm=mean[:, 2],
                n_chains=n_chains,
                h=cfg.h,
            )
            _warn_if_growing(traj)
            return traj
        except DivergenceError as err:
            last_error = err
            cfg = SdeConfig(s=cfg.s, h=cfg.h / 2.0, steps=cfg.steps, seed=cfg.seed,
                            record_every=cfg.record_every)
    return Trajectory(
        steps=np.asarray([0]),
        times=np.asarray([0.0]),
        v=np.asarray([np.nan]),
        grad_norm=np.asarray([np.nan]),
        t_norm=np.asarray([np.nan]),
        n_chains=n_chains,
        h=cfg.h,
        diverged=True,
        diagnostic=f"diverged after 5 step-size halvings: {last_error}",
    )


def _warn_if_growing(traj: Trajectory, run: int = 50):
    increases = 0
    for a, b in zip(traj.v, traj.v[1:]):
        increases = increases + 1 if b > a else 0
        if increases >= run:
            warnings.warn(
                f"potential value grew for {run} consecutive records; "
                f"step size h={traj.h} may be unstable",
                RuntimeWarning,
            )
            return


@dataclass(frozen=True)
class DecayFit:
    """Exponential-decay summary of an averaged trajectory.

    lambda_hat is the rate, asymptote_hat the fitted plateau of the excess
    above v_star, r_squared the log-linear fit quality.  A fit with
    r_squared < 0.5 (or a nonpositive rate) identified no decaying segment.
    """

    lambda_hat: float
    asymptote_hat: float
    r_squared: float

    @property
    def failed(self) -> bool:
        return not (self.lambda_hat > 0.0 and self.r_squared >= 0.5)


def _linear_fit_r2(t: np.ndarray, y: np.ndarray):
    slope, intercept = np.polyfit(t, y, 1)
    resid = y - (slope * t + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot <= 0.0:
        return slope, intercept, 0.0
    return slope, intercept, 1.0 - float(np.sum(resid**2)) / ss_tot


def fit_decay(times: np.ndarray, v_mean: np.ndarray, v_star: float) -> DecayFit:
    """Fit  v_mean(t) = v_star + eps + D exp(-lambda t)  by profiling eps.

    The fit uses only the decaying segment: records whose excess sits clearly
    above the trailing-plateau noise floor.  The segment is fixed before
    profiling so the R^2 comparison across asymptote candidates is fair; noisy
    plateau records would otherwise cap the candidate range below the true
    asymptote.  For each candidate the log-excess is fit linearly in t and the
    best R^2 with a positive rate wins, with grid refinement around the
    winner.
    """
    t = np.asarray(times, dtype=float)
    v = np.asarray(v_mean, dtype=float)
    if t.shape != v.shape or t.size < 4:
        raise ValueError("need matching times/values with at least 4 records")
    excess = v - v_star
    if float(excess.min()) <= 0.0:
        raise ValueError("v_star must lie strictly below every recorded value")

    k = max(2, t.size // 4)
    tail = excess[-k:]
    floor = float(tail.mean()) + 3.0 * float(tail.std(ddof=1)) + 1e-300
    segment = excess > floor
    if segment.sum() < 4:
        return DecayFit(lambda_hat=0.0, asymptote_hat=0.0, r_squared=0.0)
    ts, es = t[segment], excess[segment]
    max_eps = float(es.min()) * (1.0 - 1e-9)

    def evaluate(eps):
        slope, _, r2 = _linear_fit_r2(ts, np.log(es - eps))
        return -slope, r2

    lo, hi = 0.0, max_eps
    best = (-np.inf, 0.0, 0.0)  # (r2, lambda, eps)
    for _ in range(5):
        grid = np.linspace(lo, hi, 120)
        for eps in grid:
            lam, r2 = evaluate(eps)
            if lam > 0.0 and r2 > best[0]:
                best = (r2, lam, eps)
        span = (hi - lo) / 119.0
        lo = max(0.0, best[2] - 2.0 * span)
        hi = min(max_eps, best[2] + 2.0 * span)
        if hi <= lo:
            break
    if best[0] == -np.inf:
        return DecayFit(lambda_hat=0.0, asymptote_hat=0.0, r_squared=0.0)
    return DecayFit(lambda_hat=float(best[1]), asymptote_hat=float(best[2]), r_squared=float(best[0]))


def estimate_v_star(potential, restarts: int = 8, budget: int = 4000,
                    rng: np.random.Generator | None = None) -> float:
    """Best value found by multi-start descent with backtracking line search.

    This is an upper bound on the true infimum; with enough restarts on the
    desk-scale potentials it is a serviceable proxy for it.
    """
    if restarts < 8:
        raise ValueError("need at least 8 restarts")
    rng = rng if rng is not None else np.random.default_rng(0)
    iters = max(10, budget // restarts)
    best = np.inf
    for start in range(restarts):
        if start == 0:
            T = np.zeros(potential.dim)
        else:
            scale = 10.0 ** rng.uniform(-1.5, 0.5)
            T = scale * rng.standard_normal(potential.dim)
        v = potential.value(T)
        best = min(best, v)
        for _ in range(iters):
            g = potential.gradient(T)
            gn2 = float(g @ g)
            if gn2 < 1e-24:
                break
            alpha = 1.0
            for _ in range(40):
                cand = T - alpha * g
                vc = potential.value(cand)
                if vc <= v - 1e-4 * alpha * gn2:
                    T, v = cand, vc
                    break
                alpha *= 0.5
            else:
                break
            best = min(best, v)
    return float(best)


def moving_average(values: np.ndarray, window: int) -> np.ndarray:
    """Centered-ish moving average used to smooth averaged trajectories."""
    v = np.asarray(values, dtype=float)
    if window <= 1:
        return v.copy()
    kernel = np.ones(window) / window
    padded = np.concatenate([np.full(window - 1, v[0]), v])
    return np.convolve(padded, kernel, mode="valid")


def plateau_estimate(traj: Trajectory, tail_frac: float = 0.25) -> tuple[float, float]:
    """Mean and stderr of the trailing records: the empirical plateau level."""
    k = max(2, int(len(traj.v) * tail_frac))
    tail = traj.v[-k:]
    return float(tail.mean()), float(tail.std(ddof=1) / np.sqrt(k))


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, dim: int) -> "AdamState":
        return cls(m=np.zeros(dim), v=np.zeros(dim), t=0)


def adam_step(T: np.ndarray, grad: np.ndarray, state: AdamState, lr: float = 1e-3,
              betas: tuple[float, float] = (0.9, 0.999), eps_hat: float = 1e-8):
    """Standard bias-corrected Adam update; returns (T', state')."""
    b1, b2 = betas
    t = state.t + 1
    m = b1 * state.m + (1.0 - b1) * grad
    v = b2 * state.v + (1.0 - b2) * grad * grad
    m_hat = m / (1.0 - b1**t)
    v_hat = v / (1.0 - b2**t)
    T_new = T - lr * m_hat / (np.sqrt(v_hat) + eps_hat)
    return T_new, AdamState(m=m, v=v, t=t)


def write_trajectory_csv(path, traj: Trajectory):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRAJECTORY_HEADER)
        for step, t, v, gn, tn in zip(traj.steps, traj.times, traj.v, traj.grad_norm, traj.t_norm):
            w.writerow([int(step), repr(float(t)), repr(float(v)), repr(float(gn)), repr(float(tn))])


def write_decay_json(path, fit: DecayFit, extra: dict | None = None):
    record = {"lambda_hat": fit.lambda_hat, "asymptote_hat": fit.asymptote_hat,
              "r2": fit.r_squared}
    if extra:
        record.update(extra)
    with open(path, "w") as fh:
        json.dump(record, fh, indent=2, sort_keys=True)
        fh.write("\n")
