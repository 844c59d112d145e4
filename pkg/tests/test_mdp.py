import itertools
import math

import numpy as np
import pytest

from aoi_fbl.fbl import ChannelSpec, packet_error_rate
from aoi_fbl.mdp import (
    MdpPolicy,
    MdpSpec,
    expected_reward,
    extract_policy,
    policy_value,
    train,
    transition_probs,
)
from aoi_fbl.policies import OneStepPolicy

SNRS = {
    "scenario1": (-13, -6),
    "scenario2": (-13, -3),
    "scenario3": (-10, -3),
    "scenario4": (-8, -8),
}


def spec_of(name, **kw):
    return MdpSpec(specs=tuple(ChannelSpec.from_db(s) for s in SNRS[name]), **kw)


@pytest.fixture(scope="module")
def trained():
    return {name: train(spec_of(name)) for name in SNRS}


def test_spec_validation():
    with pytest.raises(ValueError):
        spec_of("scenario1", gamma=1.0)
    with pytest.raises(ValueError):
        spec_of("scenario1", a_max=1)
    with pytest.raises(ValueError):
        spec_of("scenario1", action_grid=(10,))
    spec = spec_of("scenario1")
    assert (spec.action_grid[0], spec.action_grid[-1]) == (384, 419)
    assert spec.n_states == 64
    assert spec_of("scenario1", eps_min=1e-7).fingerprint() == spec.fingerprint()
    assert spec_of("scenario1", gamma=0.8).fingerprint() != spec.fingerprint()


def test_transition_examples():
    spec = spec_of("scenario4")
    dist = transition_probs((1, 1), 250, spec, eps=(0.1, 0.1)).as_dict()
    expected = {(2, 2): 0.01, (2, 1): 0.09, (1, 2): 0.09, (1, 1): 0.81}
    assert dist.keys() == expected.keys()
    for k, v in expected.items():
        assert dist[k] == pytest.approx(v, abs=1e-15)
    dist = transition_probs((3, 5), 250, spec, eps=(0.0, 0.4)).as_dict()
    assert sum(p for s, p in dist.items() if s[0] != 1) == 0.0
    dist = transition_probs((8, 1), 250, spec, eps=(1.0, 1.0)).as_dict()
    assert dist[(8, 2)] == 1.0
    with pytest.raises(ValueError):
        transition_probs((1, 1), 10, spec)
    with pytest.raises(ValueError):
        transition_probs((9, 1), 250, spec)


def test_transition_normalization_everywhere():
    for name in SNRS:
        spec = spec_of(name)
        for state in spec.states():
            for n1 in spec.action_grid[::7]:
                probs = transition_probs(tuple(state), n1, spec).probs
                assert abs(sum(probs) - 1.0) <= 1e-12
                assert all(0.0 <= p <= 1.0 for p in probs)


def test_expected_reward_examples():
    spec = spec_of("scenario4")
    assert expected_reward((4, 6), 250, spec, eps=(0.0, 0.0)) == -2.0
    assert expected_reward((1, 1), 250, spec, eps=(1.0, 1.0)) == -4.0
    assert expected_reward((1, 1), 250, spec, eps=(0.1, 0.1)) == pytest.approx(-2.20, abs=1e-12)
    for state in spec.states():
        r = expected_reward(tuple(state), 250, spec)
        assert -2 * spec.a_max <= r <= -2


@pytest.mark.parametrize("name", list(SNRS))
def test_training_converges_within_bound(trained, name):
    q = trained[name]
    assert q.converged
    assert q.values.shape == (64, len(q.spec.action_grid))
    # geometric bound from the reward span 2 * (a_max - 1)
    bound = math.ceil(math.log(1e-5 * 0.1 / (2 * 7)) / math.log(0.9)) + 5
    assert q.sweeps_used <= bound
    zero = train(spec_of(name, l_max=200), init="zero")
    assert zero.converged and zero.sweeps_used <= bound
    assert np.array_equal(extract_policy(zero), extract_policy(q))


@pytest.mark.parametrize("name", list(SNRS))
def test_sup_norm_contraction(name):
    q = train(spec_of(name, l_max=200), init="zero")
    d = np.array(q.deltas)
    assert q.converged
    assert np.all(d[1:] <= (0.9 + 1e-9) * d[:-1])
    # far below eps_min the ratio sits at gamma and rounding of values near 20 shows
    q = train(spec_of(name, eps_min=1e-10, l_max=400), init="zero")
    d = np.array(q.deltas)
    assert np.all(d[1:] <= (0.9 + 1e-9) * d[:-1] + 1e-13)


def test_fixed_point_and_optimality(trained):
    for q in trained.values():
        v = q.state_values()
        backed = policy_value(q.spec, np.argmax(q.values, axis=1))
        assert np.max(np.abs(v - backed)) < 1e-4


def test_symmetric_scenario(trained):
    q = trained["scenario4"]
    spec = q.spec
    grid = spec.action_grid
    for i, (a1, a2) in enumerate(spec.states()):
        k = spec.state_index((a2, a1))
        for j, n1 in enumerate(grid):
            jj = spec.action_index(spec.n_max - n1)
            assert q.values[i, j] == pytest.approx(q.values[k, jj], abs=1e-5)
    table = extract_policy(q)
    assert all(abs(table[a, a] - 250) <= 1 for a in range(8))


def test_single_action_grid_matches_linear_solve():
    spec = spec_of("scenario1", action_grid=(400,), eps_min=1e-12, l_max=1000)
    q = train(spec, init="zero")
    e1 = packet_error_rate(spec.specs[0], 400)
    e2 = packet_error_rate(spec.specs[1], 100)
    n = spec.n_states
    P = np.zeros((n, n))
    r = np.zeros(n)
    for i, (a1, a2) in enumerate(spec.states()):
        f1, f2 = min(a1 + 1, 8), min(a2 + 1, 8)
        for (s1, s2), p in (((f1, f2), e1 * e2), ((f1, 1), e1 * (1 - e2)), ((1, f2), (1 - e1) * e2), ((1, 1), (1 - e1) * (1 - e2))):
            P[i, spec.state_index((s1, s2))] += p
            r[i] -= p * (s1 + s2)
    v = np.linalg.solve(np.eye(n) - 0.9 * P, r)
    np.testing.assert_allclose(q.values[:, 0], v, atol=1e-9)


def test_miniature_mdp_equals_exhaustive_enumeration():
    grid = (384, 390, 397, 405, 414)
    spec = spec_of("scenario1", a_max=3, action_grid=grid, eps_min=1e-13, l_max=2000)
    q = train(spec, init="zero")
    table = extract_policy(q)

    states = [tuple(s) for s in spec.states()]
    n, n_act = len(states), len(grid)
    P_sa = np.zeros((n, n_act, n))
    R_sa = np.zeros((n, n_act))
    for i, st in enumerate(states):
        for j, n1 in enumerate(grid):
            dist = transition_probs(st, n1, spec)
            for succ, p in zip(dist.successors, dist.probs):
                P_sa[i, j, spec.state_index(succ)] += p
                R_sa[i, j] -= p * sum(succ)

    rows = np.arange(n)
    best_total, best_v, best_pol = -np.inf, None, None
    policies = np.array(list(itertools.product(range(n_act), repeat=n)), dtype=np.int8)
    assert len(policies) == 5**9
    eye = np.eye(n)
    for chunk in np.array_split(policies, 20):
        P = P_sa[rows, chunk]  # (B, n, n)
        r = R_sa[rows, chunk]  # (B, n)
        v = np.linalg.solve(eye - spec.gamma * P, r[..., None])[..., 0]
        k = int(np.argmax(v.sum(axis=1)))
        if v[k].sum() > best_total:
            best_total, best_v, best_pol = v[k].sum(), v[k], chunk[k]
    np.testing.assert_allclose(q.state_values(), best_v, atol=1e-9)
    oracle = np.array([grid[j] for j in best_pol]).reshape(3, 3)
    assert np.array_equal(table, oracle)


def test_policy_stationary_across_tolerances():
    base = extract_policy(train(spec_of("scenario1")))
    for eps_min in (1e-6, 1e-8, 1e-10):
        assert np.array_equal(extract_policy(train(spec_of("scenario1", eps_min=eps_min, l_max=500))), base)


def test_non_converged_table_warns():
    q = train(spec_of("scenario1", l_max=1), init="zero")
    assert not q.converged and q.sweeps_used == 1
    with pytest.warns(RuntimeWarning):
        extract_policy(q)


def test_scenario4_mdp_close_to_one_step(trained):
    table = extract_policy(trained["scenario4"])
    os = OneStepPolicy(snr_db=SNRS["scenario4"]).fit()
    os_n1 = os.predict(trained["scenario4"].spec.states())[:, 0].reshape(8, 8)
    assert np.mean(np.abs(table - os_n1) > 2) <= 0.05


@pytest.mark.xfail(strict=True, reason="long-term policy reserves slightly more for sensor 1 under this error model")
def test_grid_average_n1_not_above_one_step(trained):
    for name in ("scenario1", "scenario2", "scenario3"):
        table = extract_policy(trained[name])
        os = OneStepPolicy(snr_db=SNRS[name]).fit()
        os_n1 = os.predict(trained[name].spec.states())[:, 0]
        assert table.mean() <= os_n1.mean()


def test_mdp_policy_estimator(trained):
    q = trained["scenario1"]
    policy = MdpPolicy(snr_db=SNRS["scenario1"], q_table=q).fit()
    assert policy.q_table_ is q
    out = policy.predict([(1, 1), (8, 8), (30, 2)])
    assert (out.sum(axis=1) == 500).all()
    table = extract_policy(q)
    assert out[0, 0] == table[0, 0]
    assert out[2, 0] == table[7, 1]  # ages above a_max use the last row
    with pytest.raises(ValueError):
        MdpPolicy(snr_db=SNRS["scenario2"], q_table=q).fit()
    assert "q_table" in policy.get_params()
