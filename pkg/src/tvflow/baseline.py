"""Reference TV flow by implicit time stepping.

Each step solves ``u = argmin 1/2 ||u - psi_k||^2 + dt J(u)`` through its dual,
``u = psi_k - dt D^T z`` with ``z`` in the unit box (1D, anisotropic 2D) or in
pixelwise unit discs (isotropic 2D), by projected fixed-point iterations on
``z``, optionally with Nesterov momentum and adaptive restart. The dual
variable is warm-started across steps; between merging events it barely
moves, so most steps need one or two iterations.

This is slow on purpose: it is the correctness oracle for the exact 1D flow
and the opponent in the timing benchmark.
"""

from __future__ import annotations

import json
import platform
import time
from dataclasses import asdict, dataclass, field

import numpy as np

VARIANTS = ("1d", "2d-aniso", "2d-iso")


class InnerSolveError(RuntimeError):
    """The dual iterations did not reach the requested tolerance."""


@dataclass(frozen=True)
class BaselineConfig:
    dt: float = 1e-3
    inner_iters: int = 200_000
    inner_tol: float = 1e-8
    variant: str = "1d"
    stop_ratio: float = 1e-8
    max_time: float | None = None
    record_every: int = 1
    momentum: bool = True

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.inner_tol <= 0:
            raise ValueError("inner_tol must be positive")
        if self.inner_iters < 1:
            raise ValueError("inner_iters must be positive")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.record_every < 1:
            raise ValueError("record_every must be positive")


# coarse enough to finish a length-700 row in seconds, fine enough for 1e-7 agreement
BENCH_CONFIG = BaselineConfig(dt=1e-2, record_every=10)


@dataclass
class BaselineTrajectory:
    times: np.ndarray
    states: np.ndarray
    energies: np.ndarray
    n_steps: int
    inner_iterations: int
    extinct: bool


# -- discrete operators with Neumann boundaries ------------------------------------


def _grad1(u):
    return np.diff(u, axis=-1)


def _gradT1(z):
    zp = np.pad(z, [(0, 0)] * (z.ndim - 1) + [(1, 1)])
    return zp[..., :-1] - zp[..., 1:]


def _grad2(u):
    g = np.zeros((2,) + u.shape)
    g[0, :, :-1] = u[:, 1:] - u[:, :-1]
    g[1, :-1, :] = u[1:, :] - u[:-1, :]
    return g


def _gradT2(z):
    out = np.zeros(z.shape[1:])
    zx, zy = z[0], z[1]
    out[:, :-1] -= zx[:, :-1]
    out[:, 1:] += zx[:, :-1]
    out[:-1, :] -= zy[:-1, :]
    out[1:, :] += zy[:-1, :]
    return out


def _proj_box(z):
    return np.clip(z, -1.0, 1.0, out=z)


def _proj_disc(z):
    n = np.sqrt(z[0] ** 2 + z[1] ** 2)
    return z / np.maximum(n, 1.0)


def energy(u, variant: str) -> float:
    if variant == "1d":
        return float(np.abs(_grad1(u)).sum())
    g = _grad2(u)
    if variant == "2d-aniso":
        return float(np.abs(g).sum())
    return float(np.sqrt(g[0] ** 2 + g[1] ** 2).sum())


def _operators(variant):
    if variant == "1d":
        return _grad1, _gradT1, _proj_box, 0.25
    if variant == "2d-aniso":
        return _grad2, _gradT2, _proj_box, 0.125
    return _grad2, _gradT2, _proj_disc, 0.125


def prox_step(g: np.ndarray, z: np.ndarray, dt: float, cfg: BaselineConfig) -> tuple[np.ndarray, np.ndarray, int]:
    """One implicit step from ``g``; returns ``(u, z, iterations)``.

    Projected gradient on the dual with step ``1/||D||^2``. With
    ``cfg.momentum`` the iterate is extrapolated (FISTA) and the momentum is
    reset whenever the update direction turns against the last step.
    """
    grad, gradT, proj, step = _operators(cfg.variant)
    scale = step / dt
    res = np.inf
    y = z
    theta = 1.0
    for it in range(1, cfg.inner_iters + 1):
        u = g - dt * gradT(y)
        z_new = proj(y + scale * grad(u))
        diff = z_new - z
        res = float(np.max(np.abs(diff))) if z.size else 0.0
        if res <= cfg.inner_tol:
            return g - dt * gradT(z_new), z_new, it
        if cfg.momentum:
            if np.vdot(y - z_new, diff) > 0:  # restart
                theta = 1.0
                y = z_new
            else:
                theta_new = 0.5 * (1 + np.sqrt(1 + 4 * theta * theta))
                y = z_new + ((theta - 1) / theta_new) * diff
                theta = theta_new
        else:
            y = z_new
        z = z_new
    raise InnerSolveError(
        f"dual iterations stalled: residual {res:.3e} > tol {cfg.inner_tol:.1e} after {cfg.inner_iters} iterations"
    )


def baseline_flow(f, cfg: BaselineConfig = BaselineConfig()) -> BaselineTrajectory:
    """Implicit TV flow of ``f`` at multiples of ``cfg.dt``.

    Runs until ``J(psi) <= cfg.stop_ratio * J(f)`` or ``cfg.max_time``.
    States are recorded every ``cfg.record_every`` steps and at the end.
    """
    psi = np.asarray(f, dtype=float).copy()
    want_ndim = 1 if cfg.variant == "1d" else 2
    if psi.ndim != want_ndim:
        raise ValueError(f"variant {cfg.variant} expects a {want_ndim}D input")
    grad, _, _, _ = _operators(cfg.variant)
    z = np.zeros_like(grad(psi))
    J0 = energy(psi, cfg.variant)
    times, states, energies = [0.0], [psi.copy()], [J0]
    if J0 == 0:
        return BaselineTrajectory(np.array(times), np.array(states), np.array(energies), 0, 0, True)
    k = 0
    total_iters = 0
    extinct = False
    while True:
        psi, z, its = prox_step(psi, z, cfg.dt, cfg)
        total_iters += its
        k += 1
        t = k * cfg.dt
        J = energy(psi, cfg.variant)
        extinct = J <= cfg.stop_ratio * J0
        done = extinct or (cfg.max_time is not None and t >= cfg.max_time)
        if k % cfg.record_every == 0 or done:
            times.append(t)
            states.append(psi.copy())
            energies.append(J)
        if done:
            break
    return BaselineTrajectory(
        times=np.array(times),
        states=np.array(states),
        energies=np.array(energies),
        n_steps=k,
        inner_iterations=total_iters,
        extinct=extinct,
    )


def discrepancy(traj: BaselineTrajectory, flow) -> float:
    """``sup_t ||baseline(t) - exact(t)||_2 / ||f||_2`` over the recorded times."""
    from .tv1d import sample_many

    exact = sample_many(flow, traj.times)
    err = np.linalg.norm(traj.states - exact, axis=1)
    return float(err.max() / np.linalg.norm(np.asarray(flow.initial, dtype=float)))


@dataclass
class BenchmarkReport:
    length: int
    repeats: int
    fast_seconds: float
    baseline_seconds: float
    speedup: float
    discrepancy: float
    n_events: int
    baseline_steps: int
    baseline_inner_iterations: int
    config: dict = field(default_factory=dict)
    fast_runs: list = field(default_factory=list)
    baseline_runs: list = field(default_factory=list)
    host: str = ""

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    def table(self) -> str:
        rows = [
            ("signal length", f"{self.length}"),
            ("events", f"{self.n_events}"),
            ("fast evolve+decompose (median)", f"{self.fast_seconds:.4g} s"),
            ("baseline to extinction (median)", f"{self.baseline_seconds:.4g} s"),
            ("speedup", f"{self.speedup:.1f}x"),
            ("max rel. discrepancy", f"{self.discrepancy:.3e}"),
            ("baseline steps / inner its", f"{self.baseline_steps} / {self.baseline_inner_iterations}"),
            ("host", self.host),
        ]
        w = max(len(k) for k, _ in rows)
        return "\n".join(f"{k.ljust(w)}  {v}" for k, v in rows)


def benchmark(f, repeats: int = 5, cfg: BaselineConfig | None = None, baseline_repeats: int | None = None) -> BenchmarkReport:
    """Median wall-clock of the fast path against the baseline run to extinction.

    The baseline is run ``baseline_repeats`` times (defaults to ``repeats``).
    """
    from .spectral import decompose
    from .tv1d import evolve

    f = np.asarray(f, dtype=float)
    if f.ndim != 1 or f.size < 64:
        raise ValueError("benchmark needs a 1D signal of length >= 64")
    repeats = max(1, int(repeats))
    cfg = cfg or BENCH_CONFIG
    n_base = repeats if baseline_repeats is None else max(1, int(baseline_repeats))

    evolve(f)  # warm caches
    fast = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        flow = evolve(f)
        decompose(flow)
        fast.append(time.perf_counter() - t0)
    slow = []
    traj = None
    for _ in range(n_base):
        t0 = time.perf_counter()
        traj = baseline_flow(f, cfg)
        slow.append(time.perf_counter() - t0)
    fast_med = float(np.median(fast))
    slow_med = float(np.median(slow))
    return BenchmarkReport(
        length=int(f.size),
        repeats=repeats,
        fast_seconds=fast_med,
        baseline_seconds=slow_med,
        speedup=slow_med / fast_med,
        discrepancy=discrepancy(traj, flow),
        n_events=flow.n_events,
        baseline_steps=traj.n_steps,
        baseline_inner_iterations=traj.inner_iterations,
        config=asdict(cfg),
        fast_runs=fast,
        baseline_runs=slow,
        host=f"{platform.machine()} {platform.processor() or platform.system()}, python {platform.python_version()}, single thread",
    )
