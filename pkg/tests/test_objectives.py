import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mcc import tensor as T
from mcc.datagen import GaussianPairSpec, sample_correlated_gaussians
from mcc.errors import ConfigError, ContractError, DomainError, ShapeError
from mcc.models import MCCCritic
from mcc.objectives import (LossConfig, analytic_gaussian_mi, dv_bound, dv_standard_error, energy_term,
                            firing_probability, ideal_binary_mask, loss_mi, loss_reconstruction, mask_loss,
                            mse, shuffle_marginals)
from mcc.params import adam_step
from mcc.rng import Rng

from conftest import gradcheck


def test_dv_examples():
    assert dv_bound([0.0, 0.0], [0.0, 0.0]).item() == 0.0
    assert dv_bound([1.0, 1.0], [0.0, 0.0]).item() == 1.0
    with pytest.raises(ContractError):
        dv_bound([1.0], [0.0])


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, 8, elements=st.floats(-20, 20)), arrays(np.float64, 8, elements=st.floats(-20, 20)),
       st.floats(-100, 100))
def test_dv_shift_cancellation(j, m, k):
    assert dv_bound(j + k, m + k).item() == pytest.approx(dv_bound(j, m).item(), abs=1e-10)


def test_dv_gradcheck(np_rng):
    j, m = np_rng.normal(size=6), np_rng.normal(size=6)
    assert gradcheck(lambda a, b: dv_bound(a, b), [j, m]) < 1e-6


def test_dv_standard_error_matches_bootstrap(np_rng):
    j = np_rng.normal(1.0, 1.0, 4000)
    m = np_rng.normal(0.0, 0.7, 4000)
    se = dv_standard_error(j, m)
    boot = []
    for _ in range(300):
        idx = np_rng.integers(0, 4000, 4000)
        idm = np_rng.integers(0, 4000, 4000)
        boot.append(dv_bound(j[idx], m[idm]).item())
    assert se == pytest.approx(np.std(boot), rel=0.15)


def test_shuffle_marginals():
    y = np.arange(20.0).reshape(10, 2)
    s = shuffle_marginals(y, Rng(1))
    assert sorted(map(tuple, s)) == sorted(map(tuple, y))
    assert not np.array_equal(s, y)
    assert np.array_equal(s, shuffle_marginals(y, Rng(1)))
    one = np.array([[1.0, 2.0]])
    assert np.array_equal(shuffle_marginals(one, Rng(0)), one)


def test_energy_examples():
    assert energy_term([np.zeros((3, 4))]).item() == 0.0
    assert energy_term([np.array([0.1])], 0.1).item() == pytest.approx(math.tanh(1.0), abs=1e-15)
    with pytest.raises(ContractError):
        energy_term([np.array([-0.1, 1.0])])


def test_energy_matches_hard_count_when_active_units_are_large(np_rng):
    a = np_rng.uniform(0, 1, size=(200, 30))
    a[a < 0.6] = 0.0
    a[a > 0] += 5.0  # far above tau
    hard = np.mean(a > 0)
    assert energy_term([a], 0.1).item() == pytest.approx(hard, abs=1e-12)


def test_energy_vs_firing_probability(np_rng):
    a = np.maximum(np_rng.normal(size=(500, 40)), 0.0)
    a[(a > 0) & (a < 0.01)] = 0.0
    fp = firing_probability(a).mean()
    assert abs(energy_term([a], 1e-3).item() - fp) < 0.05


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, 6, elements=st.floats(0, 5)), st.integers(0, 5), st.floats(0.01, 3))
def test_energy_monotone(a, i, bump):
    e0 = energy_term([a]).item()
    b = a.copy()
    b[i] += bump
    assert energy_term([b]).item() >= e0


def test_energy_gradcheck(np_rng):
    a = np_rng.uniform(0.01, 0.5, size=(3, 4))
    assert gradcheck(lambda x: energy_term([x, x * 2.0]), [a]) < 1e-6


def test_loss_mi_and_reconstruction():
    cfg = LossConfig(alpha=1.0, gamma=0.0)
    assert loss_mi(2.0, 0.3, cfg).item() == -2.0
    cfg_g = LossConfig(alpha=1.0, gamma=0.5)
    assert loss_mi(2.0, 0.4, cfg_g).item() > loss_mi(2.0, 0.3, cfg_g).item()
    z = np.array([0.0, 0.0])
    assert loss_reconstruction(z, np.ones(2), 0.7, LossConfig(beta=1.0, gamma=0.0)).item() == 1.0
    assert loss_reconstruction(z, z, 0.7, LossConfig(gamma=0.2)).item() == pytest.approx(0.14)
    with pytest.raises(ShapeError):
        mse(np.zeros(2), np.zeros(3))
    with pytest.raises(ConfigError):
        LossConfig(gamma=-1.0)
    with pytest.raises(ConfigError):
        LossConfig(energy_tau=0.0)


def test_ibm_examples_and_scale_invariance(np_rng):
    assert ideal_binary_mask(2.0, 1.0) == 1.0
    assert ideal_binary_mask(1.0, 2.0) == 0.0
    assert ideal_binary_mask(1.0, 1.0) == 0.0
    assert ideal_binary_mask(0.5, 0.0) == 1.0
    assert ideal_binary_mask(2.0, 1.0, threshold_db=7.0) == 0.0  # +6.02 dB
    with pytest.raises(DomainError):
        ideal_binary_mask(-1.0, 1.0)
    c, n = np_rng.uniform(0, 1, (20, 20)), np_rng.uniform(0, 1, (20, 20))
    for s in (1e-3, 0.5, 7.0, 1e4):
        assert np.array_equal(ideal_binary_mask(c * s, n * s), ideal_binary_mask(c, n))


def test_mask_loss():
    assert mask_loss(np.zeros((2, 3)), np.ones((2, 3))).item() == pytest.approx(math.log(2), abs=1e-15)
    assert mask_loss(np.full(4, 50.0), np.ones(4)).item() < 1e-20
    rng = np.random.default_rng(0)
    z, y = rng.normal(0, 3, 50), (rng.uniform(size=50) > 0.5).astype(float)
    p = 1 / (1 + np.exp(-z))
    naive = -np.mean(y * np.log(p) + (1 - y) * np.log(1 - p))
    assert mask_loss(z, y).item() == pytest.approx(naive, abs=1e-10)
    assert math.isfinite(mask_loss(np.array([800.0, -800.0]), np.array([0.0, 1.0])).item())


def test_firing_probability():
    assert np.array_equal(firing_probability(np.zeros((5, 3))), np.zeros(3))
    rec = np.zeros((4, 2))
    rec[:2, 0] = 1.0
    assert firing_probability(rec).tolist() == [0.5, 0.0]
    assert firing_probability(rec, threshold=1.0).tolist() == [0.0, 0.0]


def test_analytic_mi_examples():
    assert analytic_gaussian_mi([0.0] * 5) == 0.0
    assert analytic_gaussian_mi([0.5]) == pytest.approx(0.14384, abs=1e-5)
    assert analytic_gaussian_mi([0.5] * 20) == pytest.approx(-10 * math.log(0.75), abs=1e-12)
    assert analytic_gaussian_mi([0.5] * 20) == pytest.approx(2.8768, abs=1e-4)
    with pytest.raises(DomainError):
        analytic_gaussian_mi([1.0])


def test_analytic_mi_matches_knn_estimate():
    from sklearn.feature_selection import mutual_info_regression

    x, y = sample_correlated_gaussians(GaussianPairSpec(1, 0.5, 20000), Rng(11))
    knn = mutual_info_regression(x, y[:, 0], n_neighbors=5, random_state=0)[0]
    assert knn == pytest.approx(analytic_gaussian_mi([0.5]), abs=0.02)


def test_dv_training_approaches_analytic_from_below():
    """1-d pairs at rho=0.8: a trained two-point critic's bound nears 0.5108 nats without exceeding it."""
    truth = analytic_gaussian_mi([0.8])
    critic = MCCCritic(1, 1, hidden=16, layers=1, seed=0)
    rng = Rng(2)
    for step in range(1500):
        x, y = sample_correlated_gaussians(GaussianPairSpec(1, 0.8, 256), rng.spawn("d", step))
        ym = y[rng.spawn("p", step).permutation(256)]
        out = critic(np.concatenate([x, x]), np.concatenate([y, ym])).out
        critic.store.zero_grad()
        T.backward(-dv_bound(out[:256], out[256:]), critic.store)
        adam_step(critic.store, 3e-3)
    x, y = sample_correlated_gaussians(GaussianPairSpec(1, 0.8, 50000), Rng(99))
    with T.no_grad():
        j = critic(x, y).out.data
        m = critic(x, y[Rng(5).permutation(len(y))]).out.data
    est, se = dv_bound(j, m).item(), dv_standard_error(j, m)
    assert est <= truth + 3 * se
    assert est > 0.8 * truth
