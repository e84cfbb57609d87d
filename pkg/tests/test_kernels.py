import os
import subprocess
import sys

import numpy as np
import pytest

from nplb import kernels


def _triplets(nprng, n=64, d=5):
    return [nprng.normal(size=(n, d)) for _ in range(3)]


@pytest.mark.parametrize("code", [kernels.TRADITIONAL, kernels.SWAP, kernels.REGULARIZED])
@pytest.mark.parametrize("power", [2, 4])
def test_triplet_terms_implementations_agree(nprng, code, power):
    ea, ep, en = _triplets(nprng)
    a = kernels.numba_impl.triplet_terms(ea, ep, en, code, 1.0, power)
    b = kernels.numpy_impl.triplet_terms(ea, ep, en, code, 1.0, power)
    for x, y in zip(a, b):
        np.testing.assert_allclose(x, y, rtol=1e-12, atol=1e-14)


def test_triplet_terms_zero_distance_subgradient(kernel_impl):
    # every point coincides: hinge active (loss = margin) but all gradients 0
    z = np.zeros((3, 4))
    losses, ga, gp, gn = kernel_impl.triplet_terms(z, z, z, kernels.REGULARIZED, 1.0, 2)
    assert losses.tolist() == [1.0, 1.0, 1.0]
    assert not ga.any() and not gp.any() and not gn.any()


def test_pairwise_and_nearest_agree(nprng):
    x = nprng.normal(size=(70, 6))
    y = nprng.normal(size=(40, 6))
    labels = nprng.integers(0, 4, size=70)
    labels[0] = 9  # singleton class
    np.testing.assert_allclose(kernels.numba_impl.pairwise_distances(x, y),
                               kernels.numpy_impl.pairwise_distances(x, y), rtol=1e-12)
    a = kernels.numba_impl.nearest_same_label(x, labels)
    b = kernels.numpy_impl.nearest_same_label(x, labels)
    assert np.isinf(a[0]) and np.isinf(b[0])
    np.testing.assert_allclose(a[1:], b[1:], rtol=1e-12)


def test_pairwise_matches_direct_loop(kernel_impl, nprng):
    x = nprng.normal(size=(7, 3))
    y = nprng.normal(size=(5, 3))
    d = kernel_impl.pairwise_distances(x, y)
    for i in range(7):
        for j in range(5):
            assert d[i, j] == pytest.approx(np.linalg.norm(x[i] - y[j]), rel=1e-12)


def test_prelu_kernels_agree(nprng):
    z = nprng.normal(size=(30, 11))
    g = nprng.normal(size=z.shape)
    mask = (nprng.random(z.shape) > 0.1) / 0.9
    assert np.array_equal(kernels.numba_impl.prelu_forward(z, 0.3),
                          kernels.numpy_impl.prelu_forward(z, 0.3))
    for m in (None, mask):
        ga, sa = kernels.numba_impl.prelu_backward(g, z, 0.3, m)
        gb, sb = kernels.numpy_impl.prelu_backward(g, z, 0.3, m)
        np.testing.assert_allclose(ga, gb, rtol=1e-14)
        assert sa == pytest.approx(sb, rel=1e-12)


def test_prelu_slope_gradient_is_input_times_upstream(kernel_impl):
    z = np.array([[-2.0, 3.0]])
    g = np.array([[0.5, 7.0]])
    grad_in, dslope = kernel_impl.prelu_backward(g, z, 0.25)
    assert dslope == -2.0 * 0.5
    assert grad_in.tolist() == [[0.25 * 0.5, 7.0]]


@pytest.mark.parametrize("flag,expected", [("1", "numpy"), ("", "numba")])
def test_environment_flag_selects_backend(flag, expected):
    env = dict(os.environ, NPLB_DISABLE_NUMBA=flag)
    code = ("import nplb, nplb.kernels as k; "
            "print(nplb.backend_name(), k.triplet_terms is k.numpy_impl.triplet_terms)")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True,
                         check=True).stdout.split()
    assert out == [expected, str(expected == "numpy")]
