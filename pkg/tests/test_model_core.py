import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gammadec.errors import InputError
from gammadec.model_core import (
    ActionDistribution,
    ActionSpace,
    Model,
    ModelClass,
    Noise,
    Trajectory,
    best_action,
    expected_gamma_regret,
    gap,
    gamma_regret_vector,
    instantaneous_gamma_regret,
    localization,
    normalization_check,
    regret_gamma_total,
    squared_info,
)
from helpers import oracle_info, oracle_regret

means = st.lists(st.floats(0, 1), min_size=1, max_size=6)
gammas = st.floats(0.01, 1.0)


def test_best_action_breaks_ties_low():
    assert best_action(Model("m", [0.2, 0.9, 0.9])) == 1
    assert best_action(Model("m", [1.0])) == 0


def test_gap_examples():
    assert gap(Model("m", [0.7, 0.3]), 1) == pytest.approx(0.4)
    assert gap(Model("m", [1, 0]), 1) == 1
    with pytest.raises(InputError):
        gap(Model("m", [1, 0]), 2)


def test_gamma_regret_examples():
    assert instantaneous_gamma_regret(Model("m", [1.0, 0.5]), 1, 0.6) == pytest.approx(0.1)
    assert instantaneous_gamma_regret(Model("m", [1.0, 0.9]), 1, 0.6) == pytest.approx(-0.3)
    with pytest.raises(InputError):
        instantaneous_gamma_regret(Model("m", [1.0]), 0, 0.0)
    with pytest.raises(InputError):
        instantaneous_gamma_regret(Model("m", [1.0]), 0, 1.5)


def test_localization_examples():
    sp = ActionSpace.range(1)
    assert localization(ModelClass(sp, (Model("a", [0.3]),))) == 0
    cls = ModelClass(sp, (Model("a", [1.0]), Model("b", [0.8]), Model("c", [0.95])))
    assert localization(cls) == pytest.approx(0.2)


def test_expected_regret_and_info_examples():
    p = ActionDistribution([0.25, 0.75])
    assert expected_gamma_regret(p, Model("m", [0.7, 0.3]), 0.5) == pytest.approx(-0.05)
    assert expected_gamma_regret(ActionDistribution.uniform(2), Model("m", [1, 0]), 1) == pytest.approx(0.5)
    assert squared_info(p, Model("m", [0.7, 0.5]), Model("r", [0.5, 0.5])) == pytest.approx(0.01)
    for q in ([1, 0], [0.3, 0.7]):
        assert squared_info(np.array(q, float), Model("a", [1, 0]), Model("b", [0, 1])) == pytest.approx(1)
    with pytest.raises(InputError):
        squared_info(ActionDistribution.uniform(3), Model("a", [1, 0]), Model("b", [0, 1]))


def test_regret_total_examples():
    m = Model("m", [1, 0.5])
    assert regret_gamma_total(Trajectory((), ()), m, 1.0) == 0
    assert regret_gamma_total([0, 0, 0], m, 1.0) == 0
    assert regret_gamma_total([1, 1], m, 0.8) == pytest.approx(0.6)


def test_normalization():
    sp = ActionSpace.range(2)
    assert normalization_check(ModelClass(sp, (Model("a", [1, 0]), Model("b", [0, 1])))).ok
    rep = normalization_check(ModelClass(sp, (Model("a", [0.9, 0]),)))
    assert not rep.ok and rep.max_of_maxima == pytest.approx(0.9)


def test_validation():
    with pytest.raises(InputError):
        Model("m", [1.2])
    with pytest.raises(InputError):
        Model("m", [math.nan])
    with pytest.raises(InputError):
        ActionSpace(("a", "a"))
    with pytest.raises(InputError):
        ModelClass(ActionSpace.range(2), (Model("a", [1, 0]), Model("a", [0, 1])))
    with pytest.raises(InputError):
        ModelClass(ActionSpace.range(2), (Model("a", [1, 0, 0]),))
    with pytest.raises(InputError):
        ActionDistribution([0.5, 0.4])
    m = Model("m", [0.5, 1 + 1e-13])
    assert m.mean[1] == 1.0
    with pytest.raises(ValueError):
        m.mean[0] = 0.0


def test_noise_variance_bounds():
    assert [n.variance_bound for n in Noise] == [1.0, 0.25, 1 / 12]


@given(means, gammas, st.data())
def test_gap_nonnegative_and_regret_identity(mu, gamma, data):
    m = Model("m", mu)
    pi = data.draw(st.integers(0, len(mu) - 1))
    assert gap(m, pi) >= 0
    assert gap(m, m.best_action) == 0
    assert instantaneous_gamma_regret(m, pi, gamma) == pytest.approx(gap(m, pi) - (1 - gamma) * m.best_value, abs=1e-12)


@given(st.integers(1, 5).flatmap(lambda n: st.tuples(*[st.lists(st.floats(0, 1), min_size=n, max_size=n)] * 3, st.lists(st.floats(0.01, 1), min_size=n, max_size=n), st.floats(0, 1))))
def test_info_is_linear_and_matches_oracle(args):
    a, b, r, raw, alpha = args
    p = np.array(raw) / sum(raw)
    q = np.roll(p, 1)
    M, R = Model("a", a), Model("r", r)
    mix = squared_info(alpha * p + (1 - alpha) * q, M, R)
    assert mix == pytest.approx(alpha * squared_info(p, M, R) + (1 - alpha) * squared_info(q, M, R), abs=1e-12)
    assert squared_info(p, M, R) == pytest.approx(oracle_info(p, a, r), abs=1e-12)
    assert expected_gamma_regret(p, Model("b", b), 0.7) == pytest.approx(oracle_regret(p, b, 0.7), abs=1e-12)


@given(means, gammas, st.lists(st.integers(0, 100), max_size=30))
def test_trajectory_regret_identity(mu, gamma, raw):
    m = Model("m", mu)
    acts = [a % len(mu) for a in raw]
    total = regret_gamma_total(acts, m, gamma)
    expect = sum(gap(m, a) for a in acts) - len(acts) * (1 - gamma) * m.best_value
    assert total == pytest.approx(expect, abs=1e-9)
    assert np.allclose(gamma_regret_vector(m, gamma)[acts].sum() if acts else 0.0, total)


@settings(max_examples=50)
@given(st.lists(st.lists(st.floats(0, 1), min_size=2, max_size=2), min_size=1, max_size=6), st.data())
def test_subclass_localization_monotone(rows, data):
    cls = ModelClass(ActionSpace.range(2), tuple(Model(f"m{i}", r) for i, r in enumerate(rows)))
    k = data.draw(st.integers(1, len(rows)))
    assert localization(cls.subclass(cls.ids[:k])) <= localization(cls) + 1e-15
