import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from diffprune import _kernels_py, kernels


def test_backend_reported():
    assert kernels.BACKEND in ("cython", "python")


@pytest.mark.skipif(kernels.BACKEND != "cython", reason="compiled extension not built")
@given(
    st.integers(1, 3), st.integers(1, 3), st.integers(3, 8), st.sampled_from([1, 3, 5]),
    st.sampled_from([1, 2]), st.integers(0, 2), st.sampled_from([np.float32, np.float64]),
)
def test_compiled_matches_fallback(n, c, size, k, stride, pad, dtype):
    if (size + 2 * pad - k) < 0 or (size + 2 * pad - k) % stride:
        return
    r = np.random.default_rng(size * 31 + k)
    x = r.normal(size=(n, c, size, size)).astype(dtype)
    cols = kernels.im2col(x, k, k, stride, pad)
    ref = _kernels_py.im2col(x, k, k, stride, pad)
    np.testing.assert_array_equal(cols, ref)
    g = r.normal(size=cols.shape).astype(dtype)
    back = kernels.col2im(g, x.shape, k, k, stride, pad)
    ref_back = _kernels_py.col2im(g, x.shape, k, k, stride, pad)
    np.testing.assert_allclose(back, ref_back, rtol=1e-5 if dtype == np.float32 else 1e-12, atol=1e-6)


def test_col2im_is_adjoint_of_im2col():
    r = np.random.default_rng(0)
    x = r.normal(size=(2, 3, 6, 6))
    cols = kernels.im2col(x, 3, 3, 1, 1)
    y = r.normal(size=cols.shape)
    lhs = np.sum(cols * y)
    rhs = np.sum(x * kernels.col2im(y, x.shape, 3, 3, 1, 1))
    assert abs(lhs - rhs) < 1e-9 * abs(lhs)
