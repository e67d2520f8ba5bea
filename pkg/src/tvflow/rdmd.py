"""Time-rescaled TV flow and its dynamic mode decomposition.

Rescaling time by ``dt/dtau = -<p, psi> / ||p||^2`` turns the linear decay of
the TV flow into exponential decay. On every segment between two transition
times the rescaled flow is exactly ``xi1 + exp(-tau) xi2`` with orthogonal
``xi1`` and ``xi2``, so plain exact DMD with rank 2 fits it without error.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .spectral import SpectralSet, decompose
from .tv1d import PiecewiseFlow, evolve, sample_many

# the last segment lasts forever; stop sampling once exp(-(tau - tau_lo)) drops below this
LAST_SEGMENT_DECAY = 1e-6
DEFAULT_SAMPLES_PER_SEGMENT = 64


class SegmentSamplingError(ValueError):
    """A segment received fewer than three snapshots."""

    def __init__(self, segment: int, span: float, dt: float):
        self.segment = segment
        self.required_dt = span / 3
        super().__init__(
            f"segment {segment} spans {span:.6g} in rescaled time; dt={dt:.6g} gives fewer "
            f"than 3 snapshots, use dt < {self.required_dt:.6g}"
        )


@dataclass(frozen=True)
class Reparametrization:
    """Piecewise map ``t(tau) = a_k exp(-tau) - c_k`` between flow time and rescaled time.

    ``taus[k]`` is the rescaled image of transition time ``T_k`` (``taus[0] = 0``,
    ``taus[-1] = inf``).
    """

    lambdas: np.ndarray
    a: np.ndarray
    c: np.ndarray
    taus: np.ndarray
    times: np.ndarray

    @property
    def n_segments(self) -> int:
        return int(self.a.size)

    def segment(self, tau) -> np.ndarray:
        """Zero-based segment index for each ``tau``."""
        tau = np.asarray(tau, dtype=float)
        return np.clip(np.searchsorted(self.taus, tau, side="right") - 1, 0, self.n_segments - 1)

    def t_of_tau(self, tau):
        tau = np.asarray(tau, dtype=float)
        k = self.segment(tau)
        # anchored at the segment start to avoid overflow of a_k for large tau
        t0 = self.times[k]
        c = self.c[k]
        out = (t0 + c) * np.exp(-(tau - self.taus[k])) - c
        return out if out.ndim else float(out)

    def tau_of_t(self, t):
        t = np.asarray(t, dtype=float)
        k = np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, self.n_segments - 1)
        c = self.c[k]
        with np.errstate(divide="ignore"):
            out = self.taus[k] + np.log((self.times[k] + c) / (t + c))
        out = np.where(t >= self.times[-1], np.inf, out)
        return out if out.ndim else float(out)

    def horizon(self, decay: float = LAST_SEGMENT_DECAY) -> float:
        """Rescaled time at which the last segment is truncated."""
        return float(self.taus[-2] + math.log(1.0 / decay))


def reparametrize(spec: SpectralSet) -> Reparametrization:
    """Closed-form time map for the rescaled flow of ``spec``."""
    L = len(spec)
    if L < 1:
        raise ValueError("need at least one spectral component")
    lam = np.asarray(spec.lambdas, dtype=float)
    T = np.concatenate([[0.0], np.asarray(spec.times, dtype=float)])
    w = np.linalg.norm(np.asarray(spec.phis, dtype=float), axis=1) ** 2
    num = np.cumsum((lam * w)[::-1])[::-1]
    den = np.cumsum((lam**2 * w)[::-1])[::-1]
    c = num / den
    c[-1] = 1.0 / lam[-1]
    taus = np.zeros(L + 1)
    a = np.zeros(L)
    for k in range(L):
        start = T[k] + c[k]
        assert start < 0, "degenerate segment"
        a[k] = start * math.exp(taus[k])
        if k < L - 1:
            end = T[k + 1] + c[k]
            assert end < 0 and end > start, "degenerate segment"
            taus[k + 1] = taus[k] + math.log(start / end)
    taus[L] = np.inf
    return Reparametrization(lambdas=lam, a=a, c=c, taus=taus, times=T)


def segment_modes(spec: SpectralSet, rep: Reparametrization) -> tuple[np.ndarray, np.ndarray]:
    """Analytic ``(xi1, xi2)`` for every segment, zero-mean part only; shape ``(L, M)`` each."""
    lam = np.asarray(spec.lambdas, dtype=float)
    phis = np.asarray(spec.phis, dtype=float)
    tail = np.cumsum(phis[::-1], axis=0)[::-1]
    tail_lam = np.cumsum((lam[:, None] * phis)[::-1], axis=0)[::-1]
    xi1 = tail - rep.c[:, None] * tail_lam
    xi1[-1] = 0.0  # c_L = 1/lambda_L cancels the last component exactly
    xi2 = rep.a[:, None] * tail_lam
    return xi1, xi2


def rescaled_flow_sample(spec: SpectralSet, rep: Reparametrization, tau) -> np.ndarray:
    """State of the rescaled flow at ``tau``, evaluated by the two-mode form."""
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    k = int(rep.segment(tau))
    lam = np.asarray(spec.lambdas, dtype=float)
    phis = np.asarray(spec.phis, dtype=float)
    tail = phis[k:].sum(axis=0)
    tail_lam = lam[k:] @ phis[k:]
    t0 = rep.times[k]
    c = rep.c[k]
    decay = (t0 + c) * math.exp(-(tau - rep.taus[k]))
    return tail - c * tail_lam + decay * tail_lam + float(spec.mean)


def rescaled_flow_euler(flow: PiecewiseFlow, tau_max: float, dtau: float = 1e-4):
    """Explicit Euler integration of ``psi_tau = -(<p, psi>/||p||^2) p``.

    Used only to validate the closed-form map. The flow time is integrated
    alongside so the active subgradient can be looked up in ``flow``.
    Returns ``(taus, ts, states)``.
    """
    psi = np.asarray(flow.initial, dtype=float).copy()
    mean = psi.mean()
    times = np.asarray(flow.times, dtype=float)
    subs = np.asarray(flow.subgradients, dtype=float)
    n = int(math.ceil(tau_max / dtau))
    taus = np.arange(n + 1) * dtau
    ts = np.zeros(n + 1)
    states = np.zeros((n + 1, psi.size))
    states[0] = psi
    t = 0.0
    for j in range(n):
        i = int(np.searchsorted(times, t, side="right"))
        if i >= len(times):
            states[j + 1 :] = psi
            ts[j + 1 :] = t
            break
        p = subs[i]
        rate = -np.dot(p, psi - mean) / np.dot(p, p)
        psi = psi + dtau * rate * p
        t = t + dtau * rate
        states[j + 1] = psi
        ts[j + 1] = t
    return taus, ts, states


@dataclass(frozen=True)
class DMDResult:
    """Exact DMD triplets; ``modes`` has unit-norm columns and ``amplitudes >= 0``."""

    modes: np.ndarray
    eigenvalues: np.ndarray
    amplitudes: np.ndarray
    rank: int
    rank_deficient: bool

    def reconstruct(self, n_snapshots: int) -> np.ndarray:
        powers = self.eigenvalues[:, None] ** np.arange(n_snapshots)[None, :]
        out = self.modes @ (self.amplitudes[:, None] * powers)
        return out.real if np.isrealobj(self.modes) else out


def exact_dmd(snapshots: np.ndarray, rank: int, rtol: float = 1e-12) -> DMDResult:
    """Exact DMD of uniformly spaced column snapshots.

    The first ``N-1`` columns are compressed by a rank-``rank`` truncated SVD,
    the reduced propagator is diagonalised, modes are lifted with the shifted
    snapshots and amplitudes are fitted to the first column by least squares.
    Singular values below ``rtol`` times the largest count as zero; if fewer
    than ``rank`` survive, the achievable rank is used and flagged.
    """
    X = np.asarray(snapshots)
    if X.ndim != 2 or X.shape[1] < rank + 1:
        raise ValueError("need at least rank + 1 snapshot columns")
    X0, X1 = X[:, :-1], X[:, 1:]
    U, s, Vh = np.linalg.svd(X0, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        return DMDResult(np.zeros((X.shape[0], 0)), np.zeros(0), np.zeros(0), 0, rank > 0)
    r = int(min(rank, np.sum(s > rtol * s[0])))
    U, s, V = U[:, :r], s[:r], Vh[:r].conj().T
    B = X1 @ V / s
    Atilde = U.conj().T @ B
    mu, W = np.linalg.eig(Atilde)
    Phi = B @ W
    b = np.linalg.lstsq(Phi, X[:, 0], rcond=None)[0]

    norms = np.linalg.norm(Phi, axis=0)
    Phi = Phi / norms
    b = b * norms
    phase = np.where(np.abs(b) > 0, b / np.where(np.abs(b) > 0, np.abs(b), 1), 1)
    Phi = Phi * phase
    b = np.abs(b)
    if np.all(np.abs(mu.imag) <= 1e-12 * np.maximum(np.abs(mu), 1)) and np.all(
        np.abs(Phi.imag) <= 1e-12
    ):
        mu, Phi = mu.real, Phi.real
    return DMDResult(modes=Phi, eigenvalues=mu, amplitudes=b, rank=r, rank_deficient=r < rank)


@dataclass(frozen=True)
class SegmentModes:
    """R-DMD output of one segment ``[tau_lo, tau_hi)``.

    ``xi1`` is the constant mode, ``xi2`` the decaying mode referred to
    ``tau = 0`` (the segment's snapshot at ``tau`` is ``mean + xi1 +
    exp(-tau) xi2``). ``modes``, ``coefficients`` and ``eigenvalues`` are the
    raw DMD triplets ordered constant first, with coefficients referred to
    ``tau = 0`` as well.
    """

    index: int
    tau_lo: float
    tau_hi: float
    dt: float
    mean: float
    xi1: np.ndarray
    xi2: np.ndarray
    modes: np.ndarray
    coefficients: np.ndarray
    eigenvalues: np.ndarray
    reconstruction_error: float
    n_snapshots: int


def _segment_dmd(spec, rep, k: int, dt: float | None) -> SegmentModes:
    L = rep.n_segments
    lo = float(rep.taus[k])
    hi = float(rep.taus[k + 1]) if k < L - 1 else rep.horizon()
    span = hi - lo
    step = dt if dt is not None else span / DEFAULT_SAMPLES_PER_SEGMENT
    n = int(math.floor(span / step * (1 + 1e-12))) + 1
    if k < L - 1 and lo + (n - 1) * step >= hi:
        n -= 1
    if n < 3:
        raise SegmentSamplingError(k + 1, span, step)
    taus = lo + step * np.arange(n)
    mean = float(spec.mean)
    X = np.column_stack([rescaled_flow_sample(spec, rep, tau) for tau in taus]) - mean
    rank = 2 if k < L - 1 else 1
    res = exact_dmd(X, rank)
    err = np.linalg.norm(res.reconstruct(n) - X) / max(np.linalg.norm(X), np.finfo(float).tiny)

    order = np.argsort(-np.abs(res.eigenvalues))
    mu = res.eigenvalues[order]
    modes = res.modes[:, order]
    amps = res.amplitudes[order]
    M = X.shape[0]
    xi1 = np.zeros(M)
    xi2 = np.zeros(M)
    coeffs = amps.astype(float).copy()
    if rank == 2 and res.rank == 2:
        xi1 = np.real(amps[0] * modes[:, 0])
        coeffs[1] = amps[1] * math.exp(lo)
        xi2 = np.real(coeffs[1] * modes[:, 1])
    elif res.rank >= 1:
        # a single surviving mode is the decaying one on the last segment
        coeffs[0] = amps[0] * math.exp(lo)
        xi2 = np.real(coeffs[0] * modes[:, 0])
    return SegmentModes(
        index=k + 1,
        tau_lo=lo,
        tau_hi=float(rep.taus[k + 1]),
        dt=float(step),
        mean=mean,
        xi1=xi1,
        xi2=xi2,
        modes=modes,
        coefficients=coeffs,
        eigenvalues=mu,
        reconstruction_error=float(err),
        n_snapshots=n,
    )


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("TVFLOW_THREADS", "1")))
    except ValueError:
        return 1


def rdmd(f, dt: float | None = None, tol: float = 0.0) -> list[SegmentModes]:
    """Rescaled DMD of the TV flow of ``f``, one rank-2 fit per segment (rank 1 on the last).

    ``dt`` is the rescaled-time sampling step; by default each segment gets
    64 steps. The mean is removed before fitting.
    """
    spec = decompose(evolve(f, tol=tol))
    if len(spec) == 0:
        return []
    rep = reparametrize(spec)
    ks = range(rep.n_segments)
    threads = _threads()
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(lambda k: _segment_dmd(spec, rep, k, dt), ks))
    return [_segment_dmd(spec, rep, k, dt) for k in ks]


def recover_components(segmods: list[SegmentModes], rep: Reparametrization) -> SpectralSet:
    """Spectral components from R-DMD decaying modes.

    Projecting ``xi2`` of segment ``k`` off ``xi2`` of segment ``k+1`` leaves
    ``a_k lambda_k phi_k``; dividing by the known ``a_k lambda_k`` gives the
    component itself.
    """
    if not segmods:
        raise ValueError("no segments")
    L = len(segmods)
    xi2 = np.array([s.xi2 for s in segmods])
    phis = np.zeros_like(xi2)
    for k in range(L):
        v = xi2[k]
        if k < L - 1:
            nxt = xi2[k + 1]
            nn = np.dot(nxt, nxt)
            if nn == 0:
                raise ValueError(f"decaying mode of segment {k + 2} vanishes; cannot project")
            v = v - np.dot(v, nxt) / nn * nxt
        phis[k] = v / (rep.a[k] * rep.lambdas[k])
    return SpectralSet(mean=segmods[0].mean, lambdas=rep.lambdas.copy(), phis=phis, times=rep.times[1:].copy())


def plain_dmd(flow: PiecewiseFlow, n_samples: int, rank: int | None = None, t_max: float | None = None):
    """Exact DMD applied directly to uniformly sampled (un-rescaled) TV flow.

    Returns ``(result, relative_reconstruction_error)``. The default rank is
    ``L + 1`` and the default window twice the extinction time.
    """
    L = flow.n_events
    rank = L + 1 if rank is None else rank
    t_max = 2 * float(flow.extinction_time) if t_max is None else t_max
    ts = np.linspace(0.0, t_max, n_samples)
    X = sample_many(flow, ts).T
    res = exact_dmd(X, rank)
    err = np.linalg.norm(res.reconstruct(n_samples) - X) / np.linalg.norm(X)
    return res, float(err)


def rdmd_error(segmods: list[SegmentModes]) -> float:
    """Largest per-segment relative reconstruction error."""
    return max((s.reconstruction_error for s in segmods), default=0.0)
