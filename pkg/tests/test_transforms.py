import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import brute_force_consensus, ransac_fixture
from wavereg.transforms import (
    KINDS,
    Correspondence,
    TransformError,
    TransformModel,
    apply,
    apply_array,
    as_affine,
    compose,
    fit_arrays,
    fit_least_squares,
    format_transform,
    invert,
    parse_transform,
    ransac_arrays,
    ransac_fit,
    read_transform,
    similarity_from_params,
    write_transform,
    _design,
)

IDENTITY_COEFFS = {
    "translation": [0, 0],
    "similarity": [1, 0, 0, 0],
    "affine": [1, 0, 0, 0, 1, 0],
    "polynomial2": [0, 1, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0],
}


def test_model_validation():
    with pytest.raises(TransformError):
        TransformModel("homography", [1, 2])
    with pytest.raises(TransformError, match="6"):
        TransformModel("affine", [1, 2, 3])
    t = TransformModel("translation", [1, 2])
    with pytest.raises(ValueError):
        t.coefficients[0] = 5


@pytest.mark.parametrize("kind", KINDS)
def test_identity_fit_for_every_kind(kind, rng):
    pts = rng.uniform(0, 50, (12, 2))
    pairs = [Correspondence(tuple(p), tuple(p)) for p in pts]
    t = fit_least_squares(pairs, kind)
    np.testing.assert_allclose(t.coefficients, IDENTITY_COEFFS[kind], atol=1e-10)


def test_affine_from_three_pairs_is_exact():
    truth = TransformModel("affine", [1.1, -0.3, 7.0, 0.2, 0.9, -4.0])
    src = np.array([[0.0, 0.0], [10.0, 2.0], [3.0, 9.0]])
    dst = np.column_stack(apply_array(truth, src[:, 0], src[:, 1]))
    pairs = [Correspondence(tuple(s), tuple(d)) for s, d in zip(src, dst)]
    np.testing.assert_allclose(fit_least_squares(pairs, "affine").coefficients, truth.coefficients, atol=1e-9)


def test_polynomial_fit_matches_normal_equation_oracle(rng):
    truth = TransformModel("polynomial2", [1.0, 1.01, 0.02, 1e-3, -2e-3, 5e-4,
                                           -2.0, -0.01, 0.99, 2e-3, 1e-3, -1e-3])
    src = rng.uniform(0, 10, (10, 2))
    x, y = apply_array(truth, src[:, 0], src[:, 1])
    dst = np.column_stack([x, y]) + rng.normal(0, 0.1, (10, 2))
    got = fit_arrays("polynomial2", src, dst)
    # independent oracle: normal equations per output axis
    terms = np.column_stack([np.ones(10), src[:, 0], src[:, 1], src[:, 0] ** 2,
                             src[:, 0] * src[:, 1], src[:, 1] ** 2])
    cx = np.linalg.solve(terms.T @ terms, terms.T @ dst[:, 0])
    cy = np.linalg.solve(terms.T @ terms, terms.T @ dst[:, 1])
    np.testing.assert_allclose(got.coefficients, np.concatenate([cx, cy]), rtol=1e-9, atol=1e-9)
    px, py = got(src[:, 0], src[:, 1])
    rmse = math.sqrt(np.mean(((px - dst[:, 0]) ** 2 + (py - dst[:, 1]) ** 2) / 2))
    assert rmse <= 0.1 * (1 + 1 / math.sqrt(10))


@pytest.mark.parametrize("kind", ["similarity", "affine"])
def test_weighted_fit_satisfies_normal_equations(kind, rng):
    src = rng.uniform(0, 100, (20, 2))
    dst = src + rng.normal(0, 2, (20, 2))
    w = rng.uniform(0.1, 2.0, 20)
    t = fit_arrays(kind, src, dst, w)
    a = _design(kind, src[:, 0], src[:, 1])
    px, py = t(src[:, 0], src[:, 1])
    r = (np.column_stack([px, py]) - dst).ravel()
    grad = a.T @ (np.repeat(w, 2) * r)
    assert np.abs(grad).max() <= 1e-8 * np.abs(a).max() * np.abs(dst).max() * w.sum()


def test_fit_errors():
    with pytest.raises(TransformError, match="at least"):
        fit_arrays("affine", np.zeros((2, 2)), np.zeros((2, 2)))
    collinear = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [3.0, 3.0]])
    with pytest.raises(TransformError, match="rank"):
        fit_arrays("affine", collinear, collinear)
    with pytest.raises(TransformError, match="rank"):
        fit_arrays("similarity", np.ones((3, 2)), np.ones((3, 2)))
    with pytest.raises(TransformError):
        fit_arrays("affine", np.eye(3, 2), np.eye(3, 2), weights=[1, -1, 1])


def test_apply_and_invert_examples():
    assert apply(TransformModel.identity("affine"), (3.5, -2.0)) == (3.5, -2.0)
    s = similarity_from_params(2.0, math.pi / 2, 1.0, 0.0)
    np.testing.assert_allclose(apply(s, (1.0, 0.0)), (1.0, 2.0), atol=1e-12)
    with pytest.raises(TransformError, match="polynomial2"):
        invert(TransformModel.identity("polynomial2"))
    with pytest.raises(TransformError):
        invert(TransformModel("affine", [1, 2, 0, 2, 4, 0]))


def test_affine_round_trip(rng):
    t = TransformModel("affine", [0.9, 0.2, 5.0, -0.15, 1.1, -3.0])
    p = rng.uniform(-100, 100, (100, 2))
    q = apply_array(invert(t), *apply_array(t, p[:, 0], p[:, 1]))
    assert np.abs(np.column_stack(q) - p).max() < 1e-9


def test_compose_order_and_promotion():
    shift = TransformModel("translation", [1.0, 0.0])
    rot = similarity_from_params(1.0, math.pi / 2, 0.0, 0.0)
    c = compose(rot, shift)  # shift first
    assert c.kind == "similarity"
    np.testing.assert_allclose(apply(c, (0.0, 0.0)), (0.0, 1.0), atol=1e-12)
    assert compose(shift, shift).kind == "translation"


def test_polynomial_reduces_to_affine():
    aff = TransformModel("affine", [1.1, 0.2, 3.0, -0.1, 0.95, 4.0])
    poly = TransformModel("polynomial2", [3.0, 1.1, 0.2, 0, 0, 0, 4.0, -0.1, 0.95, 0, 0, 0])
    pts = np.random.default_rng(0).uniform(-50, 50, (50, 2))
    a = np.column_stack(aff(pts[:, 0], pts[:, 1]))
    b = np.column_stack(poly(pts[:, 0], pts[:, 1]))
    assert np.abs(a - b).max() <= 1e-12
    assert as_affine(poly) == aff


_finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


@settings(max_examples=60, deadline=None)
@given(st.sampled_from(KINDS), st.data())
def test_text_format_round_trips_bit_exactly(kind, data):
    n = {"translation": 2, "similarity": 4, "affine": 6, "polynomial2": 12}[kind]
    coeffs = data.draw(st.lists(_finite, min_size=n, max_size=n))
    t = TransformModel(kind, coeffs)
    back = parse_transform(format_transform(t))
    assert back == t
    assert np.array_equal(back.coefficients.view(np.uint64), t.coefficients.view(np.uint64))


def test_transform_file_io(tmp_path):
    t = TransformModel("affine", [0.1, 1 / 3, 2.0, -1e-300, 1.0, 5e10])
    write_transform(tmp_path / "t.txt", t)
    text = (tmp_path / "t.txt").read_text().splitlines()
    assert text[0] == "affine" and len(text) == 3
    assert read_transform(tmp_path / "t.txt") == t
    with pytest.raises(TransformError):
        parse_transform("affine\n1 2 3\n")
    with pytest.raises(TransformError):
        parse_transform("spline\n1 2\n")


def test_ransac_all_inliers_equals_least_squares(rng):
    src = rng.uniform(0, 100, (15, 2))
    truth = TransformModel("affine", [1.0, 0.1, 2.0, -0.1, 1.0, 3.0])
    dst = np.column_stack(truth(src[:, 0], src[:, 1]))
    res = ransac_arrays(src, dst, "affine", 2.0, 100, 4)
    np.testing.assert_array_equal(res.inliers, np.arange(15))
    np.testing.assert_allclose(res.model.coefficients, fit_arrays("affine", src, dst).coefficients, atol=1e-9)


def test_ransac_recovers_inliers_of_fixture():
    src, dst, outliers = ransac_fixture()
    pairs = [Correspondence(tuple(s), tuple(d)) for s, d in zip(src, dst)]
    res = ransac_fit(pairs, "affine", inlier_tol=2.0, iterations=500, seed=0)
    expected = np.setdiff1d(np.arange(16), outliers)
    np.testing.assert_array_equal(res.inliers, expected)
    np.testing.assert_array_equal(res.inliers, brute_force_consensus(src, dst))
    np.testing.assert_allclose(res.model.coefficients, [1.02, -0.08, 4.0, 0.07, 0.97, -6.0], atol=1e-9)


def test_ransac_is_deterministic():
    src, dst, _ = ransac_fixture(9)
    a = ransac_arrays(src, dst, "similarity", 2.0, 50, 17)
    b = ransac_arrays(src, dst, "similarity", 2.0, 50, 17)
    assert a.model == b.model
    np.testing.assert_array_equal(a.inliers, b.inliers)


def test_ransac_failure_modes():
    with pytest.raises(TransformError, match="at least"):
        ransac_arrays(np.zeros((2, 2)), np.zeros((2, 2)), "affine")
    same = np.ones((5, 2))
    with pytest.raises(TransformError, match="no affine model"):
        ransac_arrays(same, same, "affine", iterations=20)
