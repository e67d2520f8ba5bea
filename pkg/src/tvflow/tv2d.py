"""Anisotropic 2D TV flow by an explicit scheme with an adaptive step.

Rows and columns are treated as independent 1D signals: the fast 1D
subgradient of every row gives ``Px`` and of every column ``Py``. The state
moves along ``Px + Py`` with step ``dt_k = delta * J_ani / ||Px + Py||^2``,
which for any ``delta`` in (0, 2) makes ``||psi_k||^2`` strictly decrease by
``(2 delta - delta^2) J_ani^2 / ||Px + Py||^2`` per step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tv1d import subgradient_rows


class StallError(RuntimeError):
    """Row and column subgradients cancel while the image is not constant."""


def as_image(img) -> np.ndarray:
    arr = np.asarray(img, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.size == 0:
        raise ValueError("image must be a non-empty 2D array")
    if not np.all(np.isfinite(arr)):
        raise ValueError("image contains non-finite values")
    return arr


def aniso_subgradients(img, tol: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise and column-wise negative TV subgradients."""
    img = as_image(img)
    Px = subgradient_rows(img, tol)
    Py = subgradient_rows(img.T, tol).T
    return Px, Py


def aniso_tv(img) -> float:
    """Anisotropic TV: sum of absolute horizontal and vertical forward differences."""
    img = as_image(img)
    return float(np.abs(np.diff(img, axis=1)).sum() + np.abs(np.diff(img, axis=0)).sum())


@dataclass(frozen=True)
class AnisoStep:
    Px: np.ndarray
    Py: np.ndarray
    J_ani: float
    lambda_tilde: float
    dt: float


def aniso_step(img, delta: float = 1.0, tol: float = 0.0) -> AnisoStep:
    """Subgradients, energy and adaptive step for the current state."""
    if not 0 < delta < 2:
        raise ValueError("delta must lie in (0, 2)")
    Px, Py = aniso_subgradients(img, tol)
    J = aniso_tv(img)
    P2 = float(np.sum((Px + Py) ** 2))
    if J == 0:
        return AnisoStep(Px, Py, 0.0, 0.0, 0.0)
    if P2 == 0:
        raise StallError("Px + Py vanishes on a non-constant image")
    lam = P2 / J
    return AnisoStep(Px, Py, J, lam, delta / lam)


@dataclass
class AnisoTrajectory:
    """Thinned snapshots plus per-step diagnostics of an anisotropic flow.

    ``times``/``images`` hold the kept snapshots (the first and last are
    always kept). ``step_*`` arrays have one entry per explicit step ``k``:
    the time, energy and squared norm of ``psi_k`` and the relative defect of
    the norm identity for the step ``k -> k+1``.
    """

    delta: float
    mean: float
    times: np.ndarray
    images: np.ndarray
    step_times: np.ndarray
    step_energy: np.ndarray
    step_norm2: np.ndarray
    identity_defect: np.ndarray
    converged: bool

    @property
    def n_steps(self) -> int:
        return int(self.identity_defect.size)

    @property
    def final(self) -> np.ndarray:
        return self.images[-1]


def aniso_flow(
    img,
    delta: float = 1.0,
    stop_ratio: float = 1e-6,
    max_steps: int = 100_000,
    thin: float = 1.05,
    keep_all: bool = False,
    tol: float = 0.0,
) -> AnisoTrajectory:
    """Explicit anisotropic TV flow until ``J_ani <= stop_ratio * J_ani(psi_0)``.

    A snapshot is stored whenever time has grown by the factor ``thin`` since
    the last stored one (every step when ``keep_all``).
    """
    if not 0 < delta < 2:
        raise ValueError("delta must lie in (0, 2)")
    psi = as_image(img).copy()
    mean = float(psi.mean())
    J0 = aniso_tv(psi)
    times, images = [0.0], [psi.copy()]
    step_t, step_J, step_n2, defects = [], [], [], []
    t = 0.0
    J = J0
    converged = J0 == 0
    k = 0
    while not converged and k < max_steps:
        st = aniso_step(psi, delta, tol)
        J = st.J_ani
        P = st.Px + st.Py
        P2 = float(np.sum(P * P))
        centered = psi - mean
        step_t.append(t)
        step_J.append(J)
        step_n2.append(float(np.sum(psi * psi)))
        incr = st.dt * P
        # ||psi_{k+1}||^2 - ||psi_k||^2 written without cancellation of the two norms
        lhs = float(np.sum(incr * (2 * centered + incr)))
        rhs = (delta**2 - 2 * delta) * J**2 / P2
        defects.append(abs(lhs - rhs) / abs(rhs))
        psi = psi + incr
        t += st.dt
        k += 1
        J = aniso_tv(psi)
        converged = J <= stop_ratio * J0
        if keep_all or t >= thin * times[-1] or converged:
            times.append(t)
            images.append(psi.copy())
    if times[-1] != t:
        times.append(t)
        images.append(psi.copy())
    return AnisoTrajectory(
        delta=delta,
        mean=mean,
        times=np.array(times),
        images=np.array(images),
        step_times=np.array(step_t),
        step_energy=np.array(step_J),
        step_norm2=np.array(step_n2),
        identity_defect=np.array(defects),
        converged=bool(converged),
    )


def resample_uniform(times, images, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Linear interpolation of stored snapshots onto ``n`` uniform times over ``[0, times[-1]]``."""
    times = np.asarray(times, dtype=float)
    images = np.asarray(images, dtype=float)
    grid = np.linspace(0.0, times[-1], n)
    idx = np.clip(np.searchsorted(times, grid, side="right") - 1, 0, len(times) - 2)
    span = times[idx + 1] - times[idx]
    w = np.where(span > 0, (grid - times[idx]) / np.where(span > 0, span, 1), 0.0)
    w = w.reshape((-1,) + (1,) * (images.ndim - 1))
    return grid, (1 - w) * images[idx] + w * images[idx + 1]


def spectral_bands_2d(trajectory: AnisoTrajectory, edges, n_grid: int = 4096) -> list[np.ndarray]:
    """Numerical TV spectrum ``t * d2psi/dt2`` integrated over time bands.

    ``edges`` is an increasing sequence of band edges; band ``i`` collects
    ``[edges[i], edges[i+1])``. The trajectory is resampled on ``n_grid``
    uniform times and differentiated with second-order central differences.
    Bands covering ``[0, inf)`` add up to ``psi_0 - psi_final``.
    """
    edges = np.asarray(edges, dtype=float)
    if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0):
        raise ValueError("band edges must be an increasing sequence of at least two values")
    if trajectory.n_steps == 0 and trajectory.converged:
        # constant input: nothing ever moves
        return [np.zeros_like(trajectory.images[0]) for _ in range(edges.size - 1)]
    if len(trajectory.times) < 3:
        raise ValueError("need at least three snapshots")
    grid, psi = resample_uniform(trajectory.times, trajectory.images, n_grid)
    h = grid[1] - grid[0]
    # interior second differences; the state is frozen after the last snapshot
    ext = np.concatenate([psi, psi[-1:]], axis=0)
    second = np.zeros_like(psi)
    second[1:] = (ext[2:] - 2 * ext[1:-1] + ext[:-2]) / h**2
    density = grid.reshape((-1,) + (1,) * (psi.ndim - 1)) * second * h
    out = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        sel = (grid >= lo) & (grid < hi)
        out.append(density[sel].sum(axis=0))
    return out


def percent_edges(trajectory: AnisoTrajectory, percents) -> np.ndarray:
    """Band edges given as percentages of the total evolved time; the last edge is open-ended."""
    T = float(trajectory.times[-1])
    edges = np.array([T * q / 100.0 for q in percents])
    edges[-1] = np.nextafter(max(edges[-1], T), np.inf)
    return edges
