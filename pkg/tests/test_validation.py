import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import binom

from probcert.validation import (
    CertificationError,
    IndicatorVector,
    RiskSpec,
    binomial_tail,
    certify_family,
    exact_min_samples,
    generalized_max,
    min_samples,
)


def exact_tail(n, eps, k):
    eps = Fraction(eps)
    return float(sum(math.comb(n, z) * eps**z * (1 - eps) ** (n - z) for z in range(k + 1)))


@pytest.mark.parametrize("r, expected", [(1, 5), (5, 1), (3, 3)])
def test_generalized_max_examples(r, expected):
    v = [3, 1, 4, 1, 5]
    assert generalized_max(v, r) == expected
    assert v == [3, 1, 4, 1, 5]


@pytest.mark.parametrize("r", [0, 6, 2.5])
def test_generalized_max_rejects_bad_r(r):
    with pytest.raises(ValueError):
        generalized_max([3, 1, 4, 1, 5], r)


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=60), st.data())
def test_generalized_max_properties(values, data):
    n = len(values)
    assert generalized_max(values, 1) == max(values)
    assert generalized_max(values, n) == min(values)
    r = data.draw(st.integers(1, n))
    perm = data.draw(st.permutations(values))
    assert generalized_max(perm, r) == generalized_max(values, r)
    assert generalized_max(values, r) == sorted(values, reverse=True)[r - 1]
    if r < n:
        assert generalized_max(values, r) >= generalized_max(values, r + 1)


def test_binomial_tail_examples():
    assert binomial_tail(10, 0.1, 0) == pytest.approx(0.3486784401, rel=1e-12)
    assert binomial_tail(5, 0.5, 5) == 1.0
    # frozen from exact rational arithmetic
    assert binomial_tail(1388, 0.02, 3) == pytest.approx(2.793169843723034e-09, rel=1e-10)
    assert binomial_tail(1388, 0.02, 3) <= 1e-6 / 4


@pytest.mark.parametrize("eps", [0.0, 1.0, -0.1, 1.5])
def test_binomial_tail_rejects_bad_epsilon(eps):
    with pytest.raises(ValueError):
        binomial_tail(10, eps, 1)


@settings(max_examples=60)
@given(st.integers(1, 120), st.sampled_from([0.01, 0.05, 0.1, 0.3, 0.5, 0.9]), st.data())
def test_binomial_tail_matches_exact_rationals(n, eps, data):
    k = data.draw(st.integers(0, n))
    assert binomial_tail(n, eps, k) == pytest.approx(exact_tail(n, eps, k), rel=1e-10, abs=1e-300)


@given(st.integers(1, 3000), st.floats(1e-4, 0.9999), st.data())
def test_binomial_tail_monotone_in_k(n, eps, data):
    k = data.draw(st.integers(0, n - 1))
    assert binomial_tail(n, eps, n) == 1.0
    assert 0.0 <= binomial_tail(n, eps, k) <= binomial_tail(n, eps, k + 1) + 1e-15


def test_binomial_tail_large_n_agrees_with_scipy():
    for n, eps, k in [(10_000, 0.001, 5), (100_000, 0.0005, 40), (1388, 0.02, 30)]:
        assert binomial_tail(n, eps, k) == pytest.approx(binom.cdf(k, n, eps), rel=1e-9)


@pytest.mark.parametrize(
    "risk, expected",
    [
        (RiskSpec(0.02, 1e-6, 4, 4), 1388),
        (RiskSpec(0.05, 0.01, 1, 1), 93),
        (RiskSpec(0.1, 0.01, 2, 2), 96),
        (RiskSpec(0.1, 0.01, 2, 1), 87),
    ],
)
def test_min_samples_examples(risk, expected):
    assert min_samples(risk) == expected


def brute_force_min(risk):
    n = risk.r
    while binom.cdf(risk.r - 1, n, risk.epsilon) > risk.delta / risk.m:
        n += 1
    return n


@pytest.mark.parametrize(
    "risk, expected",
    [
        (RiskSpec(0.5, 0.5, 1, 1), 1),
        (RiskSpec(0.05, 0.01, 1, 1), 90),
        (RiskSpec(0.02, 1e-6, 4, 4), 1138),
        (RiskSpec(0.1, 0.01, 2, 2), 72),
    ],
)
def test_exact_min_samples_examples(risk, expected):
    assert exact_min_samples(risk) == expected == brute_force_min(risk)
    assert exact_min_samples(risk) <= min_samples(risk)


risk_specs = st.builds(
    RiskSpec,
    epsilon=st.floats(0.005, 0.3),
    delta=st.floats(1e-8, 0.1),
    r=st.integers(1, 10),
    m=st.integers(1, 32),
)


@settings(max_examples=200)
@given(risk_specs)
def test_min_samples_satisfies_binomial_inequality(risk):
    n = min_samples(risk)
    assert binomial_tail(n, risk.epsilon, risk.r - 1) <= risk.delta / risk.m
    n_exact = exact_min_samples(risk)
    assert n_exact <= n
    assert binomial_tail(n_exact, risk.epsilon, risk.r - 1) <= risk.delta / risk.m
    if n_exact > risk.r:
        assert binomial_tail(n_exact - 1, risk.epsilon, risk.r - 1) > risk.delta / risk.m


@pytest.mark.parametrize(
    "kwargs",
    [dict(epsilon=0, delta=0.1), dict(epsilon=0.1, delta=1), dict(epsilon=0.1, delta=0.1, r=0),
     dict(epsilon=0.1, delta=0.1, m=0)],
)
def test_risk_spec_validation(kwargs):
    with pytest.raises(ValueError):
        RiskSpec(**kwargs)


def test_family_union_bound_matches_single_controller_at_split_delta():
    family = RiskSpec(0.05, 0.01, 3, 8)
    single = RiskSpec(0.05, 0.01 / 8, 3, 1)
    assert min_samples(family) == min_samples(single)
    assert exact_min_samples(family) == exact_min_samples(single)


def test_certify_single_controller_discards_worst():
    values = [0.5, -1.0] + [-2.0] * 94
    risk = RiskSpec(0.1, 0.01, 2, 1)
    cert = certify_family([IndicatorVector(values, "a")], risk)
    assert cert.levels == [-1.0]
    assert cert.safe_flags == [True]
    assert cert.n_used == 96


def test_certify_family_three_violations_r4():
    rng = np.random.default_rng(3)
    risk = RiskSpec(0.02, 1e-6, 4, 4)
    vectors = []
    for i, n_viol in enumerate([728, 8, 3, 1]):
        v = -rng.uniform(0.1, 5.0, 1388)
        v[:n_viol] = rng.uniform(0.01, 3.0, n_viol)
        vectors.append(IndicatorVector(v, f"eta{2 * i}"))
    cert = certify_family(vectors, risk)
    assert cert.safe_flags == [False, False, True, True]
    assert len(cert.levels) == 4


def test_certify_rejects_unequal_lengths():
    risk = RiskSpec(0.5, 0.5, 1, 2)
    with pytest.raises(CertificationError):
        certify_family([IndicatorVector([1.0, 2.0]), IndicatorVector([1.0])], risk)


def test_certify_rejects_insufficient_samples_and_wrong_family_size():
    risk = RiskSpec(0.1, 0.01, 2, 1)
    with pytest.raises(CertificationError):
        certify_family([IndicatorVector(np.zeros(40))], risk)
    with pytest.raises(CertificationError):
        certify_family([IndicatorVector(np.zeros(100))] * 2, risk)


def test_certificate_threshold_for_cost_indicators():
    risk = RiskSpec(0.1, 0.01, 1, 1)
    cert = certify_family([IndicatorVector(np.full(90, -2.0e5))], risk, threshold=-1.5e5)
    assert cert.safe_flags == [True]


def test_indicator_vector_rejects_nan_accepts_inf():
    with pytest.raises(ValueError):
        IndicatorVector([0.0, float("nan")])
    with pytest.raises(ValueError):
        IndicatorVector([])
    v = IndicatorVector([0.0, float("inf")])
    assert generalized_max(v, 1) == math.inf


def test_certificate_roundtrip():
    risk = RiskSpec(0.5, 0.5, 1, 2)
    cert = certify_family([IndicatorVector([1.0, -1.0], "x"), IndicatorVector([-1.0, -3.0], "y")], risk)
    again = type(cert).from_dict(cert.to_dict())
    assert again == cert
