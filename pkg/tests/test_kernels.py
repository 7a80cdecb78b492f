import numpy as np
import pytest

from dpbound.kernels import KernelFamily, KernelSpec, as_points, eval_kernel, gram


def brute_kernel(family, ls, x, y, beta=-0.5):
    r2 = sum(((a - b) / l) ** 2 for a, b, l in zip(x, y, ls))
    return np.exp(-0.5 * r2) if family == "se" else (1.0 + r2) ** beta


@pytest.mark.parametrize("family", ["se", "imq"])
def test_gram_matches_pointwise_formula(family):
    rng = np.random.default_rng(0)
    X, Y = rng.normal(size=(7, 3)), rng.normal(size=(5, 3))
    ls = [0.5, 1.5, 3.0]
    K = gram(KernelSpec(family, ls), X, Y)
    ref = np.array([[brute_kernel(family, ls, x, y) for y in Y] for x in X])
    np.testing.assert_allclose(K, ref, rtol=0, atol=1e-14)


def test_unit_diagonal_and_symmetry():
    X = np.random.default_rng(1).normal(size=(20, 2))
    for k in (KernelSpec.se(0.7), KernelSpec.imq([0.3, 2.0])):
        K = gram(k, X)
        np.testing.assert_array_equal(np.diag(K), 1.0)
        np.testing.assert_array_equal(K, K.T)
        assert np.linalg.eigvalsh(K).min() > -1e-12


def test_jitter_only_on_request():
    X = np.zeros((3, 1))
    k = KernelSpec.se(1.0)
    np.testing.assert_array_equal(gram(k, X), np.ones((3, 3)))
    np.testing.assert_allclose(np.diag(gram(k, X, add_jitter=True)), 1.0 + 1e-10)


def test_known_values():
    assert eval_kernel(KernelSpec.se(1.0), [0.0], [1.0]) == pytest.approx(np.exp(-0.5), abs=1e-15)
    assert eval_kernel(KernelSpec.imq(2.0), [0.0], [2.0]) == pytest.approx(2 ** -0.5, abs=1e-15)


def test_tiny_lengthscale_acts_as_delta_kernel():
    X = np.array([[0.0], [1e-3], [1.0]])
    K = gram(KernelSpec.se(1e-8), X)
    np.testing.assert_array_equal(K, np.eye(3))


def test_validation_errors():
    with pytest.raises(ValueError):
        KernelSpec.se(0.0)
    with pytest.raises(ValueError):
        KernelSpec.se([1.0, np.inf])
    with pytest.raises(ValueError):
        KernelSpec("matern", 1.0)
    with pytest.raises(ValueError):
        KernelSpec.se([1.0, 2.0]).scale_for(3)
    with pytest.raises(ValueError):
        gram(KernelSpec.se([1.0, 2.0]), np.zeros((2, 3)))


def test_family_aliases_and_roundtrip():
    assert KernelFamily.parse("RBF") is KernelFamily.SQUARED_EXPONENTIAL
    k = KernelSpec.imq([0.1, 5e3])
    assert KernelSpec.from_dict(k.to_dict()) == k


def test_as_points_shapes():
    assert as_points(3.0).shape == (1, 1)
    assert as_points([1.0, 2.0]).shape == (2, 1)
    with pytest.raises(ValueError):
        as_points(np.zeros((2, 2, 2)))
