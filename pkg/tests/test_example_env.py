import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gammadec import bandit_sim as bs
from gammadec import dec_solver as ds
from gammadec import example_env as ee
from gammadec.errors import CapacityError, InputError
from gammadec.model_core import localization, normalization_check


def test_h_and_f_examples():
    w = (1, 1, 1, 1)
    assert ee.h(w, ee.BOT) == 0
    assert ee.h(w, w) == pytest.approx(1.0)
    assert ee.h(w, (1, 1, 1, -1)) == pytest.approx(0.0)  # <w, pi'> = 2 = d/2
    spec = ee.ExampleSpec(d=4, K=3, gamma=0.5, T=100)
    params = ee.ExampleParams(w, 2)
    assert ee.f_example(params, ee.ExampleAction(w, 2), spec) == pytest.approx(1.0)
    assert ee.f_example(params, ee.ExampleAction(None, 0), spec) == pytest.approx(0.5 * (1 - spec.shift))
    with pytest.raises(InputError):
        ee.f_example(params, ee.ExampleAction(None, 3), spec)


def test_reference_model():
    spec = ee.ExampleSpec(d=8, K=10, gamma=0.8, T=50)
    assert ee.reference_model(spec).value == pytest.approx(0.8 * (1 - math.sqrt(10 / 1000)))
    with pytest.raises(InputError):
        ee.reference_model(ee.ExampleSpec(d=8, K=30, gamma=1, T=1))


def _popcount_tail(d):
    # enumerate every sign pattern; independent of math.comb
    hits = sum(1 for x in range(1 << d) if 4 * bin(x).count("1") >= 3 * d)
    return Fraction(hits, 1 << d)


def test_binomial_tail():
    assert ee.binomial_tail_check(16).exact_tail == Fraction(2517, 65536)
    for d in range(1, 15):
        assert ee.binomial_tail_check(d).exact_tail == _popcount_tail(d)
    assert all(ee.binomial_tail_check(d).ok for d in range(1, 65))
    with pytest.raises(InputError):
        ee.binomial_tail_check(0)


def _random_sparse(rng, d, K, size):
    signs = rng.choice([-1, 1], size=(size, d))
    is_bot = rng.random(size) < 0.3
    arms = rng.integers(0, K, size)
    w = rng.random(size)
    return ee.SparseDistribution(signs, is_bot, arms, w / w.sum())


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10**6))
def test_tilde_w_exact_matches_enumeration(seed):
    rng = np.random.default_rng(seed)
    d, K = 6, 3
    spec = ee.ExampleSpec(d=d, K=K, gamma=0.5, T=100)
    p = _random_sparse(rng, d, K, 8)
    best = min(
        (sum(wt for s, b, wt in zip(p.signs, p.is_bot, p.weights) if not b and 2 * int(np.dot(s, w)) >= d), w)
        for w in itertools.product([-1, 1], repeat=d)
    )
    tw = ee.tilde_w(p, spec, mode="exact")
    assert tw.value == pytest.approx(best[0], abs=1e-12)
    assert tw.w == best[1]  # lexicographic first minimiser


def test_tilde_k_and_capacity():
    spec = ee.ExampleSpec(d=4, K=3, gamma=1, T=10)
    p = ee.SparseDistribution.from_arm_occupancy([0.5, 0.25, 0.25], 4)
    assert ee.tilde_k(p, spec) == (1, 0.25)
    with pytest.raises(CapacityError):
        ee.tilde_w(ee.SparseDistribution.from_arm_occupancy([1.0], 21), ee.ExampleSpec(21, 1, 1, 10), mode="exact")


def test_certificate_always_bot_matches_closed_form():
    spec = ee.ExampleSpec(d=64, K=16, gamma=1.0, T=2000)
    occ = np.random.default_rng(1).dirichlet(np.ones(16))
    c = ee.certificate_check(ee.SparseDistribution.from_arm_occupancy(occ, 64), spec, rng=0)
    k = int(np.argmin(occ))
    s = spec.shift
    assert c.k_tilde == k
    assert c.regret_value == pytest.approx(s * (1 - occ[k]), abs=1e-12)
    assert c.info_value == pytest.approx(s**2 * occ[k], abs=1e-12)
    assert c.passed and c.horizon_ok
    assert c.regret_threshold == pytest.approx(0.5 * math.sqrt(16 / 40000))


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10**6))
def test_certificate_passes_on_mixed_distributions(seed):
    rng = np.random.default_rng(seed)
    spec = ee.ExampleSpec(d=16, K=4, gamma=0.7, T=7)  # T <= exp(2)
    p = _random_sparse(rng, 16, 4, 12)
    c = ee.certificate_check(p, spec, w_mode="exact")
    assert c.passed


def test_materialized_class_properties_and_dec():
    spec = ee.ExampleSpec(d=2, K=2, gamma=1.0, T=5)
    cls = ee.materialize_class(spec)
    assert len(cls) == 8 and cls.actions.n == 10
    assert localization(cls) == pytest.approx(0.0)
    assert normalization_check(cls).ok
    ref = ee.reference_for_class(cls, spec)
    res = ds.dec_constrained(cls, ref, ds.DecQuery(1.0, spec.default_eps))
    assert res.value >= spec.regret_threshold - 1e-9
    assert res.value == pytest.approx(spec.regret_threshold, abs=1e-9)


def test_materialize_cap_and_sampling():
    spec = ee.ExampleSpec(d=8, K=4, gamma=0.5, T=100)
    with pytest.raises(CapacityError):
        ee.materialize_class(spec)
    cls = ee.materialize_class(spec, "sampled:3", rng=7)
    assert len(cls) == 12 and cls.actions.n == 16
    assert cls.actions.labels[0] == "bot|0"
    again = ee.materialize_class(spec, "sampled:3", rng=7)
    assert again.ids == cls.ids
    with pytest.raises(InputError):
        ee.materialize_class(spec, "random")


def test_always_bot_occupancies():
    spec = ee.ExampleSpec(d=8, K=4, gamma=1.0, T=50)
    arms, occ = ee.always_bot_occupancies(spec, bs.UniformPolicy(), 6, seed=0)
    assert list(arms) == [0, 1, 2, 3, 0, 1]
    assert np.allclose(occ, 0.25)
