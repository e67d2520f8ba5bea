"""Exact semi-discrete 1D total-variation flow.

The negative subgradient of the discrete TV functional is piecewise constant
in time. It only changes when two adjacent plateaus meet, so the whole flow
is described by a finite list of transition times and the constant velocity
field that is active between them. Everything here works on plain numpy
arrays; passing ``exact=True`` switches to ``fractions.Fraction`` object
arrays so small integer examples can be checked without rounding.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

MAX, MIN, MONO = "max", "min", "mono"

# two closing gaps whose predicted meeting times agree to this relative
# precision are merged in the same event
MERGE_RTOL = 1e-12


class InternalConsistencyError(RuntimeError):
    """Cluster averaging disagreed with a fresh subgradient computation."""


def as_signal(f, exact: bool = False) -> np.ndarray:
    """Validate a 1D signal and return it as a float (or Fraction) array."""
    if exact:
        arr = np.array([Fraction(v) for v in np.ravel(np.asarray(f, dtype=object))], dtype=object)
        if np.ndim(f) != 1:
            raise ValueError("signal must be one-dimensional")
    else:
        arr = np.asarray(f, dtype=float)
        if arr.ndim != 1:
            raise ValueError("signal must be one-dimensional")
        if not np.all(np.isfinite(arr)):
            raise ValueError("signal contains non-finite values")
    if arr.size < 1:
        raise ValueError("signal must have at least one sample")
    return arr


def _is_exact(arr: np.ndarray) -> bool:
    return arr.dtype == object


def _sign(d: np.ndarray, tol=0) -> np.ndarray:
    """Integer sign of differences; |d| <= tol counts as zero."""
    return (d > tol).astype(np.int64) - (d < -tol).astype(np.int64)


def _cluster_velocity(sizes: np.ndarray, steps: np.ndarray, exact: bool = False) -> np.ndarray:
    """Fast subgradient at cluster level.

    ``steps[k]`` is the sign of ``value[k+1] - value[k]``. The coefficient of
    a cluster is +1 for every neighbour it sits above and -1 for every one it
    sits below, which gives +-2 for interior extrema, +-1 for extremal
    boundary clusters and 0 for monotone runs. The velocity is -a/m.
    """
    a = np.zeros(sizes.size, dtype=np.int64)
    a[1:] += steps
    a[:-1] -= steps
    if exact:
        return np.array([Fraction(-int(ai), int(mi)) for ai, mi in zip(a, sizes)], dtype=object)
    return -a / sizes


@dataclass(frozen=True)
class PlateauPartition:
    """Maximal runs of (near-)equal samples, left to right."""

    starts: np.ndarray
    sizes: np.ndarray
    values: np.ndarray
    steps: np.ndarray
    kinds: tuple[str, ...]

    @property
    def clusters(self) -> list[range]:
        return [range(int(s), int(s + m)) for s, m in zip(self.starts, self.sizes)]

    @property
    def labels(self) -> np.ndarray:
        """Cluster index of every sample."""
        return np.repeat(np.arange(self.sizes.size), self.sizes)

    def __len__(self) -> int:
        return int(self.sizes.size)


def detect_plateaus(f, tol: float = 0.0) -> PlateauPartition:
    """Split ``f`` into maximal runs whose adjacent samples differ by at most ``tol``.

    Each run is labelled ``"max"``, ``"min"`` or ``"mono"`` by comparing it
    with its neighbours. A signal that is a single run is labelled ``"max"``.
    """
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    f = f if isinstance(f, np.ndarray) and f.dtype == object else as_signal(f)
    exact = _is_exact(f)
    d = np.diff(f)
    brk = np.abs(d) > tol
    starts = np.concatenate([[0], np.flatnonzero(brk) + 1]).astype(np.int64)
    sizes = np.diff(np.concatenate([starts, [f.size]])).astype(np.int64)
    if tol == 0:
        values = f[starts]
    else:
        values = np.add.reduceat(f, starts) / sizes
    steps = _sign(d[brk])
    a = np.zeros(sizes.size, dtype=np.int64)
    a[1:] += steps
    a[:-1] -= steps
    kinds = tuple(MAX if ai > 0 else MIN if ai < 0 else MONO for ai in a)
    if sizes.size == 1:
        kinds = (MAX,)
    if exact:
        values = np.array(values, dtype=object)
    return PlateauPartition(starts=starts, sizes=sizes, values=values, steps=steps, kinds=kinds)


def subgradient(f, tol: float = 0.0) -> np.ndarray:
    """Negative TV subgradient ``p`` of a 1D signal with Neumann boundaries.

    Every extremal plateau of ``m`` samples gets ``p = -a/m`` with ``a = +-2``
    in the interior and ``+-1`` at the ends (positive for maxima); monotone
    samples get 0. The result sums to zero.
    """
    exact = isinstance(f, np.ndarray) and f.dtype == object
    part = detect_plateaus(f, tol)
    vel = _cluster_velocity(part.sizes, part.steps, exact=exact)
    return np.repeat(vel, part.sizes)


def subgradient_rows(X: np.ndarray, tol: float = 0.0) -> np.ndarray:
    """Row-wise :func:`subgradient` of a 2D array, vectorised over rows."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError("expected a 2D array")
    R, M = X.shape
    if M == 1:
        return np.zeros_like(X)
    d = np.diff(X, axis=1)
    brk = np.abs(d) > tol
    lab = np.concatenate([np.zeros((R, 1), dtype=np.int64), np.cumsum(brk, axis=1)], axis=1)
    offsets = np.concatenate([[0], np.cumsum(lab[:, -1] + 1)[:-1]])
    glab = lab + offsets[:, None]
    n_clusters = int(lab[:, -1].sum() + R)
    sizes = np.bincount(glab.ravel(), minlength=n_clusters)
    rows, cols = np.nonzero(brk)
    s = _sign(d[rows, cols])
    left = glab[rows, cols]
    a = np.zeros(n_clusters, dtype=np.int64)
    np.add.at(a, left + 1, s)
    np.subtract.at(a, left, s)
    return (-a / sizes)[glab]


def tv(f) -> float:
    """Discrete 1D total variation ``sum |f[j+1] - f[j]|``."""
    return np.abs(np.diff(np.asarray(f))).sum()


def next_merge_time(psi, p, t_now=0.0):
    """Time of the next merging event when ``psi`` moves with velocity ``p``.

    Returns ``None`` when no adjacent pair is closing, i.e. at steady state.
    """
    psi = np.asarray(psi)
    p = np.asarray(p)
    grad = np.diff(psi)
    dp = np.diff(p)
    closing = (dp != 0) & (grad * dp < 0)
    if not np.any(closing):
        return None
    ratios = -grad[closing] / dp[closing]
    return t_now + ratios.min()


@dataclass(frozen=True)
class PiecewiseFlow:
    """Exact TV flow: ``psi(t) = psi(T_i) + (t - T_i) p_{i+1}`` on ``[T_i, T_{i+1})``.

    ``subgradients[i]`` is the velocity on ``[T_i, T_{i+1})`` with ``T_0 = 0``;
    after ``times[-1]`` the state is constant. ``partitions[i]`` holds the
    cluster start indices on the same interval.
    """

    initial: np.ndarray
    times: np.ndarray
    subgradients: np.ndarray
    knots: np.ndarray = field(repr=False)
    partitions: tuple[np.ndarray, ...] | None = field(default=None, repr=False)

    @property
    def n_events(self) -> int:
        return int(len(self.times))

    @property
    def extinction_time(self):
        return self.times[-1] if len(self.times) else 0

    @property
    def mean(self):
        return self.initial.sum() / self.initial.size

    @property
    def exact(self) -> bool:
        return _is_exact(self.initial)

    @classmethod
    def from_events(cls, initial, times, subgradients) -> "PiecewiseFlow":
        """Rebuild a flow from its event list by integrating the velocities."""
        exact = isinstance(initial, np.ndarray) and initial.dtype == object
        initial = as_signal(initial, exact=exact)
        dtype = object if exact else float
        times = np.asarray(times, dtype=dtype).reshape(-1)
        subs = np.asarray(subgradients, dtype=dtype).reshape(len(times), initial.size)
        if len(times) and not np.all(np.diff(times) > 0):
            raise ValueError("event times must be strictly increasing")
        knots = [initial]
        prev = 0
        for T, p in zip(times, subs):
            knots.append(knots[-1] + (T - prev) * p)
            prev = T
        return cls(initial=initial, times=times, subgradients=subs, knots=np.array(knots, dtype=dtype))


def evolve(f, tol: float = 0.0, exact: bool = False) -> PiecewiseFlow:
    """Run the event-driven TV flow of ``f`` to extinction.

    Plateaus are detected once, on the input, with tolerance ``tol``; after
    that clusters are tracked as an index partition. At each event every gap
    that closes at the earliest time (within ``MERGE_RTOL``) is merged. The
    size-weighted mean velocity of the merged parts must agree with a fresh
    fast-subgradient computation on the coarser partition; a mismatch raises
    :class:`InternalConsistencyError`.
    """
    f = as_signal(f, exact=exact)
    part = detect_plateaus(f, tol)
    sizes = part.sizes.copy()
    steps = part.steps.copy()
    values = part.values.copy()
    dtype = object if exact else float
    vel = _cluster_velocity(sizes, steps, exact=exact)
    rtol = 0 if exact else MERGE_RTOL

    t = Fraction(0) if exact else 0.0
    times, subs, knots, partitions = [], [], [f], []
    starts = part.starts
    while sizes.size > 1:
        gaps = np.diff(values) * steps
        rates = np.diff(vel) * steps
        closing = rates < 0
        if not np.any(closing):
            raise InternalConsistencyError("non-constant state with no closing gap")
        dts = np.full(gaps.size, np.inf, dtype=dtype)
        g = gaps[closing]
        if not exact:
            g = np.maximum(g, 0.0)
        dts[closing] = g / -rates[closing]
        dt = dts.min()
        T = t + dt
        merge = closing & (dts <= dt + rtol * T)

        values = values + dt * vel
        if dt > rtol * T:
            times.append(T)
            subs.append(np.repeat(vel, sizes))
            partitions.append(starts)
            t = T
            new_knot = True
        else:
            new_knot = False

        keep = np.concatenate([[True], ~merge])
        group_starts = np.flatnonzero(keep)
        mass = sizes * values
        momentum = sizes * vel
        sizes = np.add.reduceat(sizes, group_starts)
        values = np.add.reduceat(mass, group_starts) / sizes
        averaged = np.add.reduceat(momentum, group_starts) / sizes
        steps = steps[~merge]
        starts = starts[group_starts]
        vel = _cluster_velocity(sizes, steps, exact=exact)
        if exact:
            ok = all(a == b for a, b in zip(averaged, vel))
        else:
            ok = np.abs(averaged - vel).max() <= 1e-9
        if not ok:
            raise InternalConsistencyError(f"cluster averaging disagrees with fast subgradient at t={T}")
        knot = np.repeat(values, sizes)
        if new_knot:
            knots.append(knot)
        else:
            knots[-1] = knot

    times_arr = np.array(times, dtype=dtype)
    subs_arr = np.array(subs, dtype=dtype).reshape(len(times), f.size)
    if times:
        knots[-1] = np.full(f.size, f.sum() / f.size, dtype=dtype)
    return PiecewiseFlow(
        initial=f,
        times=times_arr,
        subgradients=subs_arr,
        knots=np.array(knots, dtype=dtype),
        partitions=tuple(partitions),
    )


def sample(flow: PiecewiseFlow, t) -> np.ndarray:
    """Evaluate the flow at time ``t >= 0``."""
    if t < 0:
        raise ValueError("time must be nonnegative")
    L = flow.n_events
    if L == 0:
        return flow.initial.copy()
    if t >= flow.times[-1]:
        return flow.knots[-1].copy()
    i = int(np.searchsorted(flow.times, t, side="right"))
    start = flow.times[i - 1] if i > 0 else 0
    return flow.knots[i] + (t - start) * flow.subgradients[i]


def sample_many(flow: PiecewiseFlow, ts) -> np.ndarray:
    """Vectorised :func:`sample` over a 1D array of times, one row per time."""
    ts = np.asarray(ts, dtype=float)
    if np.any(ts < 0):
        raise ValueError("time must be nonnegative")
    L = flow.n_events
    if L == 0:
        return np.tile(flow.initial, (ts.size, 1))
    times = np.asarray(flow.times, dtype=float)
    idx = np.minimum(np.searchsorted(times, ts, side="right"), L)
    starts = np.concatenate([[0.0], times])[idx]
    subs = np.vstack([np.asarray(flow.subgradients, dtype=float), np.zeros(flow.initial.size)])
    knots = np.asarray(flow.knots, dtype=float)
    out = knots[idx] + (ts - starts)[:, None] * subs[idx]
    out[ts >= times[-1]] = knots[-1]
    return out
