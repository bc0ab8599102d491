import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from treeinner.metrics import (
    UndefinedAUCError,
    auc,
    auc_bruteforce,
    normalize_l1,
    normalize_l2,
    risk_from_raw,
)


@pytest.mark.parametrize(
    "scores, rel, expected",
    [((0.9, 0.8, 0.1), (1, 1, 0), 1.0), ((0.1, 0.9), (1, 0), 0.0), ((0.5, 0.5, 0.2), (1, 0, 0), 0.75)],
)
def test_auc_examples(scores, rel, expected):
    assert auc(scores, rel) == expected
    assert auc_bruteforce(scores, rel) == expected


@pytest.mark.parametrize("rel", [(1, 1), (0, 0, 0)])
def test_auc_single_class(rel):
    with pytest.raises(UndefinedAUCError):
        auc(np.zeros(len(rel)), rel)


def test_auc_rejects_bad_labels():
    with pytest.raises(ValueError):
        auc([0.1, 0.2], [1, 2])


@st.composite
def auc_instances(draw):
    p = draw(st.integers(2, 64))
    # few distinct values so ties are common
    scores = draw(arrays(np.float64, p, elements=st.sampled_from([-2.0, -0.5, 0.0, 0.3, 0.3000001, 1.0, 7.5])))
    rel = draw(arrays(np.int64, p, elements=st.integers(0, 1)))
    i, j = draw(st.tuples(st.integers(0, p - 1), st.integers(0, p - 1)).filter(lambda t: t[0] != t[1]))
    rel[i], rel[j] = 1, 0
    return scores, rel


@settings(max_examples=1000, deadline=None)
@given(auc_instances())
def test_auc_matches_pair_enumeration(inst):
    scores, rel = inst
    assert auc(scores, rel) == pytest.approx(auc_bruteforce(scores, rel), abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(auc_instances(), st.floats(0.1, 5.0), st.floats(-3, 3))
def test_auc_invariant_to_increasing_transform(inst, a, b):
    scores, rel = inst
    base = auc(scores, rel)
    assert auc(a * scores + b, rel) == pytest.approx(base, abs=1e-12)
    assert auc(np.exp(scores), rel) == pytest.approx(base, abs=1e-12)


def test_normalize_examples():
    np.testing.assert_allclose(normalize_l1([2, 2]), [0.5, 0.5])
    np.testing.assert_allclose(normalize_l2([3, 4]), [0.6, 0.8])


@pytest.mark.parametrize("fn", [normalize_l1, normalize_l2])
def test_normalize_zero_vector(fn):
    with pytest.raises(ValueError):
        fn(np.zeros(3))


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, st.integers(1, 30), elements=st.floats(0, 1e6)).filter(lambda v: v.sum() > 1e-3))
def test_normalize_idempotent_and_order_preserving(v):
    for fn in (normalize_l1, normalize_l2):
        once = fn(v)
        np.testing.assert_allclose(fn(once), once, rtol=1e-12, atol=1e-15)
        # weak order: v_i < v_j implies n_i <= n_j (division can round ties together)
        lt = v[:, None] < v[None, :]
        assert np.all((once[:, None] <= once[None, :])[lt])
    assert np.argmax(normalize_l1(v)) == np.argmax(v)


def test_risk_examples():
    assert risk_from_raw([1.0, 2.0], [1.0, 2.0], "regression") == 0.0
    assert risk_from_raw([0.0, 0.0], [0.0, 2.0], "regression") == 2.0
    # sigma(0) = 0.5 resolves to class 1
    assert risk_from_raw(np.zeros(4), [1, 1, 0, 0], "classification") == 0.5
    assert risk_from_raw(np.zeros(2), [1, 1], "classification") == 0.0
