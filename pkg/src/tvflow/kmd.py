"""Decay-profile mode decomposition with Koopman modes.

Snapshots of a zero-homogeneous flow are fitted as ``Psi ~ V D`` where each
row of ``D`` is a truncated-linear decay profile ``(1 + lambda t)^+`` sampled
on the snapshot grid and ``V`` is column-sparse. The surviving columns of
``V`` are Koopman modes; inverting the profiles gives the eigenfunctions.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

MAX_CONDITION = 1e10


def decay_profile(lam: float, t) -> np.ndarray:
    return np.maximum(1.0 + lam * np.asarray(t, dtype=float), 0.0)


@dataclass(frozen=True)
class ProfileDictionary:
    """Rows of ``D`` are decay profiles; row 0 is the constant (``lambda = 0``) profile."""

    lambdas: np.ndarray
    sample_times: np.ndarray
    D: np.ndarray


def build_dictionary(lambdas, dt: float, horizon: int) -> ProfileDictionary:
    """Dictionary of ``(1 + lambda t)^+`` on ``t = 0, dt, ..., (horizon-1) dt``.

    A constant row is prepended so the spatial mean has an atom of its own.
    """
    lambdas = np.asarray(lambdas, dtype=float).reshape(-1)
    if lambdas.size == 0:
        raise ValueError("empty lambda list")
    if np.any(lambdas >= 0):
        raise ValueError("decay rates must be negative")
    if dt <= 0:
        raise ValueError("dt must be positive")
    if horizon < 1:
        raise ValueError("horizon must be at least one sample")
    t = dt * np.arange(horizon)
    lam = np.concatenate([[0.0], lambdas])
    D = decay_profile(lam[:, None], t[None, :])
    return ProfileDictionary(lambdas=lam, sample_times=t, D=D)


@dataclass(frozen=True)
class DecayFit:
    active_lambdas: np.ndarray
    modes: np.ndarray
    residual: float
    atoms: np.ndarray
    residual_history: list[float] = field(default_factory=list)
    ill_conditioned: bool = False


def _lstsq_modes(Psi, Dact):
    # Psi ~ V Dact  ->  Dact^T V^T ~ Psi^T
    return np.linalg.lstsq(Dact.T, Psi.T, rcond=None)[0]


def fit(Psi: np.ndarray, dictionary: ProfileDictionary, sparsity: int, threshold: float = 1e-10) -> DecayFit:
    """Greedy column-sparse fit of ``Psi`` (space x time) to ``dictionary``.

    The constant profile is always taken first. Each further step adds the
    profile that most reduces the residual after a full least-squares refit
    (orthogonal least squares), stopping at ``sparsity``
    atoms or when the relative residual drops below ``threshold``. Modes
    with norm below ``threshold * ||Psi||`` are pruned and the rest refitted;
    the reported residual is that of the returned model.
    """
    Psi = np.asarray(Psi, dtype=float)
    D = dictionary.D
    if Psi.shape[1] != D.shape[1]:
        raise ValueError("snapshot grid does not match dictionary grid")
    if sparsity < 1:
        raise ValueError("sparsity budget must be positive")
    norm_psi = np.linalg.norm(Psi)
    if norm_psi == 0:
        return DecayFit(np.zeros(0), np.zeros((0, Psi.shape[0])), 0.0, np.zeros(0, dtype=int))

    active: list[int] = []
    Q = np.zeros((0, D.shape[1]))  # orthonormal basis of the active rows
    R = Psi.copy()
    history = [1.0]
    flagged = False
    row_norms = np.linalg.norm(D, axis=1)
    if dictionary.lambdas[0] == 0:
        # the constant atom goes in first: left to compete, the spatial mean
        # biases selection toward slowly decaying profiles
        active = [0]
        q = D[0] / row_norms[0]
        Q = q[None, :]
        R = R - np.outer(R @ q, q)
        history.append(float(np.linalg.norm(R) / norm_psi))
    while len(active) < min(sparsity, D.shape[0]):
        Dp = D - (D @ Q.T) @ Q
        pn = np.linalg.norm(Dp, axis=1)
        usable = pn > 1e-10 * np.maximum(row_norms, 1e-300)
        usable[active] = False
        if not np.any(usable):
            break
        gain = np.zeros(D.shape[0])
        gain[usable] = np.linalg.norm(R @ Dp[usable].T, axis=0) ** 2 / pn[usable] ** 2
        n = int(np.argmax(gain))  # first index wins ties
        trial = active + [n]
        if np.linalg.cond(D[trial]) > MAX_CONDITION:
            logger.warning("active set ill-conditioned after adding lambda=%g; stopping", dictionary.lambdas[n])
            flagged = True
            break
        active = trial
        q = Dp[n] / pn[n]
        Q = np.vstack([Q, q])
        R = R - np.outer(R @ q, q)
        rel = np.linalg.norm(R) / norm_psi
        history.append(float(rel))
        if rel < threshold:
            break

    idx = np.array(active, dtype=int)
    V = _lstsq_modes(Psi, D[idx])
    keep = np.linalg.norm(V, axis=1) >= threshold * norm_psi
    if not np.all(keep):
        idx = idx[keep]
        V = _lstsq_modes(Psi, D[idx]) if idx.size else np.zeros((0, Psi.shape[0]))
    order = np.argsort(dictionary.lambdas[idx])[::-1]  # constant first, then slower to faster decay
    idx, V = idx[order], V[order]
    resid = np.linalg.norm(Psi - V.T @ D[idx]) / norm_psi
    return DecayFit(
        active_lambdas=dictionary.lambdas[idx],
        modes=V,
        residual=float(resid),
        atoms=idx,
        residual_history=history,
        ill_conditioned=flagged,
    )


@dataclass(frozen=True)
class EigenfunctionValues:
    """Per decaying mode: projected coefficient, inferred time and eigenfunction value.

    Entries with ``valid == False`` (coefficient outside ``(0, 1]``) carry NaN
    time and value.
    """

    lambdas: np.ndarray
    coefficients: np.ndarray
    times: np.ndarray
    values: np.ndarray
    valid: np.ndarray


def koopman_eigenfunction(fitted: DecayFit, psi, atol: float = 1e-10) -> EigenfunctionValues:
    """Evaluate the Koopman eigenfunctions of a decay fit at state ``psi``.

    ``psi`` is projected onto the fitted modes by least squares; each
    coefficient ``rho`` is inverted through its profile, ``t = (rho - 1)/lambda``,
    and the eigenfunction value is ``exp(t)``. The constant mode is used in
    the projection but has no eigenfunction of its own. Coefficients within
    ``atol`` of zero count as extinct.
    """
    psi = np.asarray(psi, dtype=float)
    V = fitted.modes
    if V.shape[0] == 0:
        raise ValueError("fit has no modes")
    rho = np.linalg.lstsq(V.T, psi, rcond=None)[0]
    decaying = fitted.active_lambdas < 0
    lam = fitted.active_lambdas[decaying]
    rho = rho[decaying]
    valid = (rho > atol) & (rho <= 1 + atol)
    times = np.full(lam.size, np.nan)
    times[valid] = (np.minimum(rho[valid], 1.0) - 1.0) / lam[valid]
    values = np.exp(times)
    for l_, r_ in zip(lam[~valid], rho[~valid]):
        logger.info("coefficient %.6g of mode lambda=%g outside (0, 1]", r_, l_)
    return EigenfunctionValues(lambdas=lam, coefficients=rho, times=times, values=values, valid=valid)


def flow_snapshots(spec, dt: float, horizon: int) -> np.ndarray:
    """Space x time snapshot matrix of the exact flow on ``t = 0, dt, ...``."""
    t = dt * np.arange(horizon)
    return np.array([spec.at(tj) for tj in t]).T


def rate_grid(t_max: float, n: int) -> np.ndarray:
    """Candidate decay rates ``-1/T`` for ``n`` extinction times evenly spread on ``(0, t_max]``."""
    T = t_max * np.arange(1, n + 1) / n
    return -1.0 / T
