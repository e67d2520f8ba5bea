"""Closed-form TV spectral decomposition of an exact 1D flow.

Between events the flow is a sum of linearly decaying components,
``psi(t) = mean + sum_i (1 + lambda_i t)^+ phi_i`` with ``lambda_i = -1/T_i``
and ``phi_i = (p_i - p_{i+1}) / lambda_i``. The spectrum is therefore a finite
set of atoms located at the transition times.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tv1d import PiecewiseFlow


@dataclass(frozen=True)
class SpectralSet:
    """Spectral components ordered by transition time (``|lambda|`` decreasing)."""

    mean: float
    lambdas: np.ndarray
    phis: np.ndarray
    times: np.ndarray | None = None

    def __post_init__(self):
        if self.times is None:
            object.__setattr__(self, "times", -1 / self.lambdas)

    @property
    def size(self) -> int:
        return int(self.phis.shape[1]) if self.phis.ndim == 2 else 0

    def __len__(self) -> int:
        return int(len(self.lambdas))

    def reconstruct(self) -> np.ndarray:
        return self.phis.sum(axis=0) + self.mean

    def at(self, t) -> np.ndarray:
        """Flow state at time ``t`` from the linear-decay form."""
        decay = np.maximum(1 + self.lambdas * t, 0)
        return decay @ self.phis + self.mean


def decompose(flow: PiecewiseFlow) -> SpectralSet:
    """Spectral components of an exact flow produced by :func:`tvflow.tv1d.evolve`."""
    L = flow.n_events
    M = flow.initial.size
    dtype = object if flow.exact else float
    if L == 0:
        return SpectralSet(mean=flow.mean, lambdas=np.zeros(0, dtype=dtype), phis=np.zeros((0, M), dtype=dtype))
    T = flow.times
    p = flow.subgradients
    p_next = np.vstack([p[1:], np.zeros((1, M), dtype=dtype)])
    # (p_i - p_{i+1}) / lambda_i with lambda_i = -1/T_i
    phis = T[:, None] * (p_next - p)
    return SpectralSet(mean=flow.mean, lambdas=-1 / T, phis=phis, times=T.copy())


def spectrum(spec: SpectralSet) -> list[tuple[float, float]]:
    """Atoms ``(T_i, |lambda_i| * ||phi_i||)`` of the TV spectrum."""
    if len(spec) == 0:
        return []
    norms = np.linalg.norm(np.asarray(spec.phis, dtype=float), axis=1)
    lam = np.asarray(spec.lambdas, dtype=float)
    T = np.asarray(spec.times, dtype=float)
    return [(float(t), float(m)) for t, m in zip(T, np.abs(lam) * norms)]


def filter_band(spec: SpectralSet, t_lo, t_hi, include_mean: bool = False) -> np.ndarray:
    """Sum of components whose transition time lies in ``[t_lo, t_hi)``."""
    if t_lo < 0 or not t_lo < t_hi:
        raise ValueError("band must satisfy 0 <= t_lo < t_hi")
    dtype = spec.phis.dtype
    out = np.zeros(spec.size, dtype=dtype)
    if len(spec):
        T = spec.times
        sel = (T >= t_lo) & (T < t_hi)
        if np.any(sel):
            out = out + spec.phis[np.asarray(sel, dtype=bool)].sum(axis=0)
    if include_mean:
        out = out + spec.mean
    return out


def band_edges_from_percent(spec: SpectralSet, percents) -> list[tuple[float, float]]:
    """Turn percent-of-extinction-time edges into absolute time bands.

    ``percents=[0, 1.5, 7.5, 20, 100]`` gives four bands; the last one is
    closed on the right so the extinction atom is included.
    """
    if len(spec) == 0:
        return []
    T_end = float(np.max(spec.times))
    edges = [T_end * q / 100.0 for q in percents]
    bands = list(zip(edges[:-1], edges[1:]))
    lo, hi = bands[-1]
    bands[-1] = (lo, np.nextafter(hi, np.inf))
    return bands
