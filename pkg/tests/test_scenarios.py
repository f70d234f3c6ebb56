import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from probcert.scenarios import (
    FAMILIES,
    MEAS_STD,
    DistributionSpec,
    batch_hash,
    load_batch,
    sample_scenario,
    save_batch,
    scenario_batch,
)

N_DRAWS = 100_000


def draws(family, name, seed=0):
    return DistributionSpec.defaults(family).draw(name, np.random.default_rng(seed), N_DRAWS)


def test_uniform_row_ranges_and_means():
    for name, (lo, hi) in [("theta0", (28, 30)), ("E_0", (4, 6)), ("v_m", (7, 9))]:
        x = draws("uniform", name)
        assert x.min() >= lo and x.max() <= hi
        se = (hi - lo) / np.sqrt(12 * N_DRAWS)
        assert abs(x.mean() - (lo + hi) / 2) < 3 * se


def test_normal_moments():
    spec = DistributionSpec.defaults("normal")
    for name, (mu, sd) in spec.params.items():
        x = draws("normal", name)
        assert abs(x.mean() - mu) < 3 * sd / np.sqrt(N_DRAWS)
        assert abs(x.std() - sd) < 3 * sd / np.sqrt(2 * N_DRAWS)


def test_beta_support_and_mean():
    x = draws("beta", "theta0")
    assert x.min() >= 28.0 and x.max() <= 30.0
    sd = 2.0 * np.sqrt(2 * 5 / (7**2 * 8))
    assert abs(x.mean() - (28.0 + 2.0 * 2 / 7)) < 3 * sd / np.sqrt(N_DRAWS)
    assert 28.0 + 2.0 * 2 / 7 == pytest.approx(28.571, abs=1e-3)


def test_pareto_support_and_mean():
    x = draws("pareto", "theta0")
    assert x.min() >= 29.0
    assert x.min() < 29.001
    # tail index 5: mean 5/4 above the unit scale, variance finite
    sd = np.sqrt(5 / (4**2 * 3))
    assert abs(x.mean() - 29.25) < 4 * sd / np.sqrt(N_DRAWS)


@pytest.mark.parametrize("family", FAMILIES)
def test_support_contract(family):
    spec = DistributionSpec.defaults(family)
    for name in spec.params:
        lo, hi = spec.support(name)
        x = spec.draw(name, np.random.default_rng(1), 5000)
        assert np.all(x >= lo) and np.all(x <= hi)


def test_beta_support_inside_uniform_support():
    beta, uni = DistributionSpec.defaults("beta"), DistributionSpec.defaults("uniform")
    for name in beta.params:
        (a, b), (lo, hi) = beta.support(name), uni.support(name)
        assert lo <= a and b <= hi


@pytest.mark.parametrize(
    "family, params",
    [("uniform", {"theta0": (30, 28)}), ("normal", {"theta0": (29, 0)}), ("beta", {"theta0": (0, 28)}),
     ("pareto", {"theta0": (-1, 28)}), ("lognormal", {})],
)
def test_invalid_specs(family, params):
    base = dict(DistributionSpec.defaults("uniform").params)
    base.update(params)
    with pytest.raises(ValueError):
        DistributionSpec(family, base)


def test_spec_roundtrip():
    spec = DistributionSpec.defaults("pareto")
    assert DistributionSpec.from_dict(spec.to_dict()) == spec


def test_scenario_shapes_and_ranges():
    sc = sample_scenario(DistributionSpec(), 400, 3, 7, 0)
    assert sc.w_tb_seq.shape == (400,)
    assert sc.meas_noise_seq.shape == (1201, 3)
    assert sc.init_deltas.shape == (5,)
    assert np.radians(28) <= sc.x0[0] <= np.radians(30)
    assert 4 <= sc.E_0 <= 6 and 7 <= sc.v_m <= 9
    assert sc.u_prev0 == 0.0


def test_noise_statistics():
    batch = scenario_batch(DistributionSpec(), 400, 3, 3, 60)
    w = np.concatenate([s.w_tb_seq for s in batch])
    m = np.concatenate([s.meas_noise_seq for s in batch])
    d = np.concatenate([s.init_deltas for s in batch])
    assert abs(w.std() - 0.25) < 0.01
    assert np.allclose(m.std(axis=0), MEAS_STD, rtol=0.03)
    assert abs(d.mean() - 1.0) < 0.01 and abs(d.std() - 0.05) < 0.005


def test_batch_determinism_and_order_independence():
    spec = DistributionSpec()
    a = scenario_batch(spec, 50, 3, 42, 10)
    b = scenario_batch(spec, 50, 3, 42, 10)
    c = scenario_batch(spec, 50, 3, 42, 100)
    assert batch_hash(a) == batch_hash(b)
    assert batch_hash([a[5]]) == batch_hash([c[5]])
    assert batch_hash([sample_scenario(spec, 50, 3, 42, 5)]) == batch_hash([a[5]])
    assert batch_hash(a) != batch_hash(scenario_batch(spec, 50, 3, 43, 10))
    with pytest.raises(ValueError):
        scenario_batch(spec, 50, 3, 42, 0)


def test_noise_shared_across_families():
    a = sample_scenario(DistributionSpec.defaults("uniform"), 50, 3, 9, 4)
    b = sample_scenario(DistributionSpec.defaults("pareto"), 50, 3, 9, 4)
    assert np.array_equal(a.w_tb_seq, b.w_tb_seq)
    assert np.array_equal(a.meas_noise_seq, b.meas_noise_seq)
    assert np.array_equal(a.init_deltas, b.init_deltas)
    assert a.E_0 != b.E_0


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(0, 10_000))
def test_scenario_is_pure_function_of_seed_and_index(seed, index):
    spec = DistributionSpec()
    a = sample_scenario(spec, 20, 3, seed, index)
    b = sample_scenario(spec, 20, 3, seed, index)
    assert batch_hash([a]) == batch_hash([b]) and a.seed == b.seed


def test_batch_file_roundtrip(tmp_path):
    batch = scenario_batch(DistributionSpec.defaults("beta"), 30, 3, 5, 4)
    save_batch(batch, tmp_path / "b.json")
    again = load_batch(tmp_path / "b.json")
    assert batch_hash(again) == batch_hash(batch)
