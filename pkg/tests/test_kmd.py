import numpy as np
import pytest

from conftest import piecewise_signal
from tvflow import kmd
from tvflow.kmd import (
    build_dictionary,
    decay_profile,
    fit,
    flow_snapshots,
    koopman_eigenfunction,
    rate_grid,
)
from tvflow.spectral import decompose
from tvflow.tv1d import evolve, sample


def _cos(a, b):
    return abs(a @ b) / (np.linalg.norm(a) * np.linalg.norm(b))


def test_dictionary_rows():
    d = build_dictionary([-1.0, -3.0], 0.5, 3)
    np.testing.assert_array_equal(d.D[0], [1, 1, 1])
    np.testing.assert_array_equal(d.D[1], [1, 0.5, 0])
    np.testing.assert_array_equal(d.D[2], [1, 0, 0])
    np.testing.assert_array_equal(d.lambdas, [0, -1, -3])


def test_dictionary_rows_reach_zero():
    lam = rate_grid(2.0, 7)
    d = build_dictionary(lam, 0.05, 60)
    assert np.all(np.diff(d.D, axis=1) <= 0)
    for row, l in zip(d.D[1:], lam):
        j = int(np.ceil(-1 / (l * 0.05) - 1e-12))
        assert np.all(row[j:] == 0)


@pytest.mark.parametrize("bad", [[], [-1.0, 0.0], [0.5]])
def test_dictionary_validation(bad):
    with pytest.raises(ValueError):
        build_dictionary(bad, 0.1, 5)


def test_exact_recovery_three_point():
    spec = decompose(evolve([0, 2, 1]))
    dt, H = 0.01, 111
    Psi = flow_snapshots(spec, dt, H)
    d = build_dictionary([-0.5, -1.0, -2.0, -3.0, -4.0], dt, H)
    res = fit(Psi, d, sparsity=3)
    assert set(np.round(res.active_lambdas, 12)) == {0.0, -1.0, -3.0}
    assert res.residual <= 1e-8
    by_rate = dict(zip(np.round(res.active_lambdas, 12), res.modes))
    np.testing.assert_allclose(by_rate[0.0], [1, 1, 1], atol=1e-8)
    np.testing.assert_allclose(by_rate[-3.0], spec.phis[0], atol=1e-8)
    np.testing.assert_allclose(by_rate[-1.0], spec.phis[1], atol=1e-8)


def test_constant_snapshots_use_constant_atom_only():
    d = build_dictionary([-1.0, -2.0], 0.1, 20)
    Psi = np.tile(np.array([[0.3], [0.7]]), 20)
    res = fit(Psi, d, sparsity=3)
    np.testing.assert_array_equal(res.active_lambdas, [0.0])


def test_missing_rate_picks_nearest_and_density_helps():
    spec = decompose(evolve([0, 2, 1]))
    dt, H = 0.01, 111
    Psi = flow_snapshots(spec, dt, H)
    res = fit(Psi, build_dictionary([-0.5, -1.0, -2.0, -2.8, -5.0], dt, H), sparsity=3)
    assert -2.8 in res.active_lambdas
    assert res.residual > 1e-4
    residuals = [fit(Psi, build_dictionary(rate_grid(1.1, n), dt, H), sparsity=6).residual for n in (8, 16, 32, 64, 128)]
    assert all(b < a for a, b in zip(residuals, residuals[1:]))


def test_residual_history_monotone(rng):
    f = piecewise_signal(rng, 30, 6)
    spec = decompose(evolve(f))
    T = spec.times[-1]
    dt, H = T / 150, 166
    res = fit(flow_snapshots(spec, dt, H), build_dictionary(rate_grid(1.2 * T, 60), dt, H), sparsity=10)
    h = np.array(res.residual_history)
    assert np.all(np.diff(h) <= 1e-15)
    assert res.atoms.size <= 10


def test_ill_conditioned_active_set_is_flagged(monkeypatch):
    monkeypatch.setattr(kmd, "MAX_CONDITION", 10.0)
    d = build_dictionary([-1.0, -1.05], 0.01, 120)
    Psi = np.outer([1.0, -1.0], d.D[1]) + np.outer([0.5, 2.0], d.D[2])
    res = fit(Psi, d, sparsity=3)
    assert res.ill_conditioned
    assert res.active_lambdas.size < 3


def test_koopman_eigenfunction_along_trajectory():
    f = np.array([0.0, 2.0, 1.0])
    fl = evolve(f)
    spec = decompose(fl)
    dt, H = 0.01, 111
    res = fit(flow_snapshots(spec, dt, H), build_dictionary(spec.lambdas, dt, H), sparsity=3)

    ev = koopman_eigenfunction(res, f)
    np.testing.assert_allclose(ev.times, 0, atol=1e-8)
    np.testing.assert_allclose(ev.values, 1, atol=1e-8)

    t_star = 0.2
    ev = koopman_eigenfunction(res, sample(fl, t_star))
    np.testing.assert_allclose(ev.times, t_star, atol=1e-8)
    assert np.ptp(ev.values) <= 1e-6

    t_star = 0.6  # past the fast component's extinction
    ev = koopman_eigenfunction(res, sample(fl, t_star))
    fast = np.argmin(ev.lambdas)
    assert not ev.valid[fast] and np.isnan(ev.times[fast])
    assert ev.valid[1 - fast] and ev.times[1 - fast] == pytest.approx(t_star, abs=1e-8)


def test_decay_profile_clips():
    np.testing.assert_array_equal(decay_profile(-2.0, [0, 0.25, 0.5, 1.0]), [1, 0.5, 0, 0])
