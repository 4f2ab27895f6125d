import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import kstest

from esn_feedback.errors import UsageError
from esn_feedback.sampler import SamplerSpec, sample_esn


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**63 - 1), index=st.integers(0, 10**6), n=st.integers(1, 12),
       activation=st.sampled_from(["sigmoid", "tanh"]))
def test_constraint_holds_by_construction(seed, index, n, activation):
    p = sample_esn(SamplerSpec(n=n, activation=activation, seed=seed), index)
    assert np.linalg.svd(p.A, compute_uv=False)[0] < p.a
    assert np.all(np.abs(p.B) <= 1.0)


def test_same_seed_and_index_bit_identical():
    spec = SamplerSpec(n=6, seed=42)
    a, b = sample_esn(spec, 17), sample_esn(spec, 17)
    assert np.array_equal(a.A, b.A) and np.array_equal(a.B, b.B)
    assert not np.array_equal(a.A, sample_esn(spec, 18).A)


def test_rho_distribution_uniform():
    spec = SamplerSpec(n=100)
    rho = np.array([np.linalg.norm(sample_esn(spec, i).A, 2) / 4.0 for i in range(1000)])
    assert kstest(rho, "uniform", args=(0.1, 0.875)).statistic < 0.05


def test_spec_validation():
    with pytest.raises(UsageError):
        SamplerSpec(rho_range=(0.5, 1.0))
    with pytest.raises(UsageError):
        SamplerSpec(b_scale=0)
