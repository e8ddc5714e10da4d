import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gammadec import dec_solver as ds
from gammadec.errors import CapacityError, InputError
from gammadec.model_core import ActionDistribution, ActionSpace, Model, ModelClass
from helpers import oracle_dec_grid, oracle_dec_offset_grid, random_instance, two_model_class

METHODS = ("brute", "clause_enum", "lagrangian")


def q(gamma=1.0, eps=0.1, incl=True):
    return ds.DecQuery(gamma, eps, incl)


# -- inner_max ----------------------------------------------------------------


def test_inner_max_unconstrained_returns_worst_model():
    cls, ref = two_model_class()
    cls = cls.with_model(Model("bad", [1.0, 0.0]))
    mid, val = ds.inner_max(ActionDistribution.uniform(2), cls, ref, q(eps=1.0))
    assert mid == "bad" and val == pytest.approx(0.5)


def test_inner_max_falls_back_to_reference():
    a, b = Model("a", [1, 0]), Model("b", [0, 1])
    cls = ModelClass(ActionSpace.range(2), (a, b))
    for p in ([1, 0], [0.5, 0.5], [0.1, 0.9]):
        mid, val = ds.inner_max(np.array(p, float), cls, a, q(eps=0.1))
        assert mid == "a"
    mid, val = ds.inner_max(np.array([0.5, 0.5]), cls, a, q(eps=0.1, incl=False))
    assert mid == "a"  # a is in the class and feasible against itself
    mid, val = ds.inner_max(np.array([0.5, 0.5]), ModelClass(cls.actions, (b,)), a, q(eps=0.1, incl=False))
    assert mid is None and val == -math.inf


# -- closed-form instance -----------------------------------------------------


@pytest.mark.parametrize("method", METHODS)
def test_two_model_instance(method):
    cls, ref = two_model_class()
    lo = ds.dec_constrained(cls, ref, q(eps=0.1), method)
    hi = ds.dec_constrained(cls, ref, q(eps=0.25), method)
    if method == "lagrangian":
        assert lo.value >= -1e-9 and hi.value >= 0.1 - 1e-9
    else:
        assert lo.value == pytest.approx(0.0, abs=1e-9)
        assert hi.value == pytest.approx(0.1, abs=1e-4)
    if method == "clause_enum":
        assert np.allclose(hi.p_star, [0.5, 0.5], atol=1e-6)
        assert lo.bound_direction == ds.EXACT
    # independent pure-python grid oracle
    assert oracle_dec_grid([m.mean for m in cls], ref.mean, 1.0, 0.25, 1000) == pytest.approx(0.1, abs=1e-9)
    assert oracle_dec_grid([m.mean for m in cls], ref.mean, 1.0, 0.1, 1000) == pytest.approx(0.0, abs=1e-12)


def test_singleton_reference_class():
    ref = Model("ref", [0.2, 0.9, 0.4])
    cls = ModelClass(ActionSpace.range(3), (ref,))
    res = ds.dec_constrained(cls, ref, q(), "clause_enum")
    assert res.value == pytest.approx(0.0, abs=1e-9)
    assert res.p_star[1] == pytest.approx(1.0, abs=1e-6)


def test_clause_cap_and_bad_method():
    ms = tuple(Model(f"m{i}", [i / 20, 1 - i / 20]) for i in range(16))
    cls = ModelClass(ActionSpace.range(2), ms)
    with pytest.raises(CapacityError):
        ds.dec_constrained(cls, ms[0], q(), "clause_enum")
    with pytest.raises(InputError):
        ds.dec_constrained(cls, ms[0], q(), "simplex")
    small = ModelClass(cls.actions, ms[:3])
    assert ds.dec_constrained(small, ms[0], q(), "clause").method == "clause_enum"


# -- offset DEC ---------------------------------------------------------------


def test_offset_examples():
    cls, ref = two_model_class()
    single = ModelClass(cls.actions, (Model("s", [0.3, 0.8]),))
    val, p = ds.dec_offset(single, single.models[0], ds.OffsetQuery(1.0, 0.0))
    assert val == pytest.approx(0.0, abs=1e-9) and p[1] == pytest.approx(1.0, abs=1e-6)
    val, _ = ds.dec_offset(cls, ref, ds.OffsetQuery(1.0, 10.0))
    oracle = oracle_dec_offset_grid([m.mean for m in cls], ref.mean, 1.0, 10.0, 10_000)
    assert val == pytest.approx(oracle, abs=1e-4)
    assert val == pytest.approx(0.0, abs=1e-9)
    # huge penalty: the reference's own gamma-regret at its best action
    m_bar = Model("mb", [0.6, 0.2])
    other = ModelClass(cls.actions, (m_bar, Model("o", [0.9, 0.5])))
    val, p = ds.dec_offset(other, m_bar, ds.OffsetQuery(0.5, 1e6))
    assert val == pytest.approx((0.5 - 1) * 0.6, abs=1e-6)
    with pytest.raises(InputError):
        ds.OffsetQuery(1.0, math.inf)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6))
def test_offset_nonincreasing_in_lambda(seed):
    cls, ref = random_instance(np.random.default_rng(seed))
    vals = [ds.dec_offset(cls, ref, ds.OffsetQuery(1.0, lam))[0] for lam in (0, 0.5, 2, 10, 100)]
    assert all(b <= a + 1e-8 for a, b in zip(vals, vals[1:]))


# -- properties on random instances -------------------------------------------


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.sampled_from([0.5, 1.0]))
def test_method_sandwich(seed, gamma):
    cls, ref = random_instance(np.random.default_rng(seed))
    for eps in (0.05, 0.3):
        query = q(gamma, eps)
        brute = ds.dec_constrained(cls, ref, query, "brute", grid=120)
        clause = ds.dec_constrained(cls, ref, query, "clause_enum")
        lag = ds.dec_constrained(cls, ref, query, "lagrangian")
        err = brute.details["grid_error_bound"]
        assert brute.value - err - 1e-9 <= clause.value <= brute.value + 1e-9
        assert lag.value >= clause.value - 1e-6
        for res in (brute, clause, lag):
            assert ds.certify(res, cls, ref, query).passed


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_monotone_in_eps_and_class(seed):
    rng = np.random.default_rng(seed)
    cls, ref = random_instance(rng)
    vals = [ds.dec_constrained(cls, ref, q(1.0, e), "clause_enum").value for e in (0.0, 0.05, 0.1, 0.3, 1.0)]
    # a larger eps enlarges the adversary's feasible set
    assert all(b >= a - 1e-9 for a, b in zip(vals, vals[1:]))
    extra = Model("extra", rng.integers(0, 11, size=cls.actions.n) / 10)
    bigger = cls.with_model(extra) if "extra" not in cls.ids else cls
    assert ds.dec_constrained(bigger, ref, q(1.0, 0.1)).value >= ds.dec_constrained(cls, ref, q(1.0, 0.1)).value - 1e-9


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_reference_in_class_gives_nonnegative_value_and_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    cls, _ = random_instance(rng)
    ref = cls.models[0]
    v = ds.dec_constrained(cls, ref, q(1.0, 0.1)).value
    assert v >= -1e-9
    perm = ModelClass(cls.actions, tuple(reversed(cls.models)))
    assert ds.dec_constrained(perm, ref, q(1.0, 0.1)).value == pytest.approx(v, abs=1e-9)
    p = rng.dirichlet(np.ones(cls.actions.n))
    assert ds.inner_max(p, perm, ref, q(1.0, 0.1))[1] == pytest.approx(ds.inner_max(p, cls, ref, q(1.0, 0.1))[1], abs=1e-12)


# -- sup over references ------------------------------------------------------


def test_sup_reference_two_model_instance():
    cls, _ = two_model_class()
    fam = ds.ReferenceFamily.parse("constants:step=0.05")
    wide = ds.dec_sup_reference(cls, q(1.0, 0.25), fam)
    assert wide.value == pytest.approx(0.1, abs=1e-6)
    assert dict(wide.scores)["const:0.5"] == pytest.approx(wide.value, abs=1e-9)
    assert wide.bound_direction == ds.LOWER
    narrow = ds.dec_sup_reference(cls, q(1.0, 0.1), fam)
    assert narrow.reference.id == "const:0.6"
    assert narrow.value == pytest.approx(0.1, abs=1e-6)


def test_sup_reference_singleton_and_family_parsing():
    cls = ModelClass(ActionSpace.range(2), (Model("s", [0.4, 1.0]),))
    res = ds.dec_sup_reference(cls, q(1.0, 0.0), "members")
    assert res.value == pytest.approx(0.0, abs=1e-9)
    fam = ds.ReferenceFamily.parse("constants:step=0.25,members,pairs:step=0.5")
    two, _ = two_model_class()
    ids = [m.id for m in fam.candidates(two)]
    assert ids == ["const:0", "const:0.25", "const:0.5", "const:0.75", "const:1", "m1", "m2", "mix:m1:m2:0.5"]
    with pytest.raises(InputError):
        ds.ReferenceFamily.parse("gaussians")
    with pytest.raises(InputError):
        ds.dec_sup_reference(cls, q(), ds.ReferenceFamily())


# -- certificates -------------------------------------------------------------


def test_certify_detects_tampering():
    cls, ref = two_model_class()
    query = q(1.0, 0.25)
    res = ds.dec_constrained(cls, ref, query, "clause_enum")
    assert ds.certify(res, cls, ref, query).passed
    broken = dataclasses.replace(res, p_star=res.p_star * 1.1)
    rep = ds.certify(broken, cls, ref, query)
    assert not rep.passed and rep.checks["simplex"]["residual"] > 0
    # a witness sitting at eps^2 + 2 delta is infeasible
    far = Model("far", [0.5, 0.5 + math.sqrt(2 * (0.0625 + 2e-3))])
    bad = dataclasses.replace(res, witness_model_id="far", p_star=np.array([0.0, 1.0]))
    rep = ds.certify(bad, cls.with_model(far), ref, query)
    assert not rep.checks["witness_feasible"]["ok"]
