import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from scorch import (
    DiagonalMetric,
    MetricError,
    ParameterError,
    PenaltySpec,
    UnsupportedPenaltyError,
    prox_group_l2_scaled,
    prox_l1_scaled,
    prox_oracle,
    prox_penalty,
    prox_sparse_group,
)

vectors = hnp.arrays(float, st.integers(1, 6), elements=st.floats(-20, 20))


def _metric(n, data):
    return data.draw(hnp.arrays(float, n, elements=st.floats(0.1, 10)))


def test_l1_unit_metric():
    np.testing.assert_allclose(prox_l1_scaled([2.0, -0.5], 1.0, [1.0, 1.0]), [1.0, 0.0])


def test_l1_scaled_metric():
    np.testing.assert_allclose(prox_l1_scaled([2.0, -0.5], 1.0, [4.0, 4.0]), [1.75, -0.25])


def test_l1_literal_threshold():
    # threshold alpha * beta * d instead of alpha * beta / d
    np.testing.assert_allclose(prox_l1_scaled([2.0, -0.5], 0.25, [4.0, 4.0], literal=True), [1.0, 0.0])


def test_l1_examples_match_brute_force():
    for d, expected in (([1.0, 1.0], [1.0, 0.0]), ([4.0, 4.0], [1.75, -0.25])):
        w = prox_oracle(np.array([2.0, -0.5]), lambda v: float(np.abs(v).sum()), d)
        np.testing.assert_allclose(w, expected, atol=1e-7)


def test_group_example():
    spec = PenaltySpec("group_l2", beta_G=1.0, groups=[[0, 1]], group_weights=[1.0])
    np.testing.assert_allclose(prox_group_l2_scaled([3.0, 4.0], spec), [2.4, 3.2])
    np.testing.assert_allclose(prox_oracle(np.array([3.0, 4.0]), spec.value), [2.4, 3.2], atol=1e-7)


def test_group_zero_and_clamp():
    spec = PenaltySpec("group_l2", beta_G=1.0, groups=[[0, 1]], group_weights=[1.0])
    np.testing.assert_array_equal(prox_group_l2_scaled([0.0, 0.0], spec), [0.0, 0.0])
    big = PenaltySpec("group_l2", beta_G=5.0, groups=[[0, 1]], group_weights=[1.0])
    np.testing.assert_array_equal(prox_group_l2_scaled([3.0, 4.0], big), [0.0, 0.0])


def test_sparse_group_example():
    spec = PenaltySpec("sparse_group", beta=1.0, beta_G=1.0, groups=[[0, 1], [2]], group_weights=[1.0, 1.0])
    np.testing.assert_allclose(prox_sparse_group([2.0, -0.5, 3.0], spec), [0.0, 0.0, 1.0], atol=1e-15)


def test_default_group_weights():
    spec = PenaltySpec("group_l2", beta_G=1.0, groups=[[0, 1, 2, 3], [4]])
    np.testing.assert_allclose(spec.group_weights, [2.0, 1.0])


def test_nonuniform_metric_group_matches_oracle():
    spec = PenaltySpec("group_l2", beta_G=0.8, groups=[[0, 1, 2]], group_weights=[1.0])
    x, d = np.array([1.5, -0.7, 2.2]), np.array([0.3, 2.0, 5.0])
    np.testing.assert_allclose(prox_group_l2_scaled(x, spec, d, 0.7), prox_oracle(x, spec.value, d, 0.7), atol=1e-7)


@pytest.mark.parametrize("kind", ["l1", "group_l2", "sparse_group"])
def test_zero_weights_are_identity(kind):
    x = np.array([2.0, -0.5, 3.0])
    spec = PenaltySpec(kind, groups=[[0, 1], [2]] if kind != "l1" else ())
    np.testing.assert_array_equal(prox_penalty(x, spec, [2.0, 3.0, 0.5]), x)


def test_all_zero_input():
    spec = PenaltySpec("sparse_group", beta=1.0, beta_G=1.0, groups=[[0, 1], [2]])
    np.testing.assert_array_equal(prox_sparse_group(np.zeros(3), spec), 0.0)


def test_small_alpha_tends_to_identity():
    x = np.array([1.0, -2.0, 0.5])
    spec = PenaltySpec("sparse_group", beta=1.0, beta_G=1.0, groups=[[0, 1], [2]])
    np.testing.assert_allclose(prox_sparse_group(x, spec, None, 1e-9), x, atol=1e-8)


def test_bad_inputs():
    with pytest.raises(MetricError):
        prox_l1_scaled([1.0, 2.0], 1.0, [1.0, 0.0])
    with pytest.raises(MetricError):
        DiagonalMetric(np.array([1.0, np.nan]))
    with pytest.raises(ParameterError):
        prox_l1_scaled([1.0], 1.0, alpha=0.0)
    with pytest.raises(UnsupportedPenaltyError):
        PenaltySpec("tv")
    with pytest.raises(UnsupportedPenaltyError):
        prox_group_l2_scaled([1.0], PenaltySpec("l1", beta=1.0))
    with pytest.raises(ParameterError):
        prox_oracle(np.zeros(5), lambda w: 0.0)


def test_metric_norm():
    assert DiagonalMetric(np.array([4.0, 1.0])).norm([1.0, 2.0]) == pytest.approx(np.sqrt(8.0))


@given(x=vectors, y=vectors, beta=st.floats(0, 5), alpha=st.floats(0.05, 2), data=st.data())
def test_l1_nonexpansive_in_metric(x, y, beta, alpha, data):
    n = min(x.size, y.size)
    x, y = x[:n], y[:n]
    d = _metric(n, data)
    px, py = prox_l1_scaled(x, beta, d, alpha), prox_l1_scaled(y, beta, d, alpha)
    m = DiagonalMetric(d)
    assert m.norm(px - py) <= m.norm(x - y) * (1 + 1e-12) + 1e-12


@given(x=vectors, beta=st.floats(0, 5), alpha=st.floats(0.05, 2), data=st.data())
def test_l1_shrinks_and_keeps_sign(x, beta, alpha, data):
    w = prox_l1_scaled(x, beta, _metric(x.size, data), alpha)
    assert np.all(np.abs(w) <= np.abs(x))
    assert np.all(w * x >= 0)


@given(x=hnp.arrays(float, 6, elements=st.floats(-20, 20)), bG=st.floats(0, 5), b=st.floats(0, 3), data=st.data())
def test_sparse_group_properties(x, bG, b, data):
    spec = PenaltySpec("sparse_group", beta=b, beta_G=bG, groups=[[0, 3], [1, 2, 5], [4]])
    d = _metric(6, data)
    w = prox_sparse_group(x, spec, d)
    assert np.all(np.abs(w) <= np.abs(x) + 1e-12)
    assert np.all(w * x >= 0)
    # shrinkage never increases the penalty
    assert spec.value(w) <= spec.value(x) + 1e-9


@given(x=hnp.arrays(float, 4, elements=st.floats(-5, 5)), y=hnp.arrays(float, 4, elements=st.floats(-5, 5)),
       bG=st.floats(0, 3))
def test_group_nonexpansive_unit_metric(x, y, bG):
    spec = PenaltySpec("group_l2", beta_G=bG, groups=[[0, 1], [2, 3]])
    px, py = prox_group_l2_scaled(x, spec), prox_group_l2_scaled(y, spec)
    assert np.linalg.norm(px - py) <= np.linalg.norm(x - y) * (1 + 1e-12) + 1e-12


@given(x=hnp.arrays(float, 3, elements=st.floats(-4, 4)), beta=st.floats(0, 2), bG=st.floats(0, 2), data=st.data())
def test_sparse_group_matches_oracle(x, beta, bG, data):
    spec = PenaltySpec("sparse_group", beta=beta, beta_G=bG, groups=[[0, 2], [1]])
    d = _metric(3, data)
    np.testing.assert_allclose(prox_sparse_group(x, spec, d, 0.5), prox_oracle(x, spec.value, d, 0.5), atol=1e-6)


def test_negligible_group_weight():
    # the secular equation root rounds to the block norm
    spec = PenaltySpec("group_l2", beta_G=2.4e-80, groups=[[0, 1]], group_weights=[1.0])
    x = np.array([0.125, 1e-3])
    np.testing.assert_allclose(prox_group_l2_scaled(x, spec, [1.5, 1.0]), x, rtol=1e-15)
    tiny = PenaltySpec("group_l2", beta_G=1e-300, groups=[[0, 1]], group_weights=[1.0])
    np.testing.assert_allclose(prox_group_l2_scaled(x, tiny, [1.5, 1.0]), x, rtol=1e-15)
    # subnormal weight: the secular function overflows at r = 0
    sub = PenaltySpec("sparse_group", beta=1.0, beta_G=2.225073858507203e-309, groups=[[0, 3], [1, 2, 5], [4]])
    w = prox_sparse_group(np.full(6, 2.0), sub, [1.0, 3, 3, 3, 3, 3])
    np.testing.assert_allclose(w, [1.0] + [5 / 3] * 5, rtol=1e-15)
