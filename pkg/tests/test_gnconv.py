from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from gncformer.exceptions import ConfigError, ShapeError
from gncformer.gradcheck import check_gnconv
from gncformer.layers import Affine, ParamFactory, ShapeFactory
from gncformer.gnconv import (
    GnConvParams,
    dimension_schedule,
    gconv_forward,
    gnconv_forward,
    gnconv_param_count,
    identity_gnconv,
)
from gncformer.tensor import Tensor, parameter
from oracles import gconv_oracle, gnconv_oracle


@pytest.mark.parametrize("order, expected", [
    (5, [16, 16, 32, 64, 128, 256]),
    (3, [64, 64, 128, 256]),
    (7, [4, 4, 8, 16, 32, 64, 128, 256]),
    (9, [1, 1, 2, 4, 8, 16, 32, 64, 128, 256]),
])
def test_schedule_at_dim_256(order, expected):
    assert dimension_schedule(256, order) == expected


@given(dim=st.sampled_from([16, 64, 256]), order=st.integers(1, 5))
def test_schedule_sums_to_twice_dim(dim, order):
    widths = dimension_schedule(dim, order)
    assert sum(widths) == 2 * dim
    assert len(widths) == order + 1
    assert widths[-1] == dim
    params = GnConvParams.init(ShapeFactory(), dim, order, 3)
    assert params.linear_in.d_out == 2 * dim


def test_schedule_divisibility_error_names_both_values():
    with pytest.raises(ConfigError, match="order 4 .* 8.* 20"):
        dimension_schedule(20, 4)


def test_schedule_when_dim_has_just_enough_factors_of_two():
    assert dimension_schedule(24, 4) == [3, 3, 6, 12, 24]
    assert dimension_schedule(20, 3) == [5, 5, 10, 20]


def test_params_structure():
    params = GnConvParams.init(ParamFactory(0), 256, 5, 32)
    assert len(params.dwconv) == 5
    assert len(params.proj) == 4
    assert [c.kernels.shape for c in params.dwconv] == [(d, 32) for d in (16, 32, 64, 128, 256)]
    assert [(p.d_in, p.d_out) for p in params.proj] == [(16, 32), (32, 64), (64, 128), (128, 256)]


def _stacked_gconv(dim):
    """gConv whose linear_in copies x into both halves, with unit kernel and identity output."""
    params = identity_gnconv(dim)
    params.linear_in = Affine(parameter(np.concatenate([np.eye(dim), np.eye(dim)], axis=1)),
                              parameter(np.zeros(2 * dim)))
    return params


def test_gconv_with_stacked_identity_squares_input(rng):
    x = rng.normal(size=(5, 4))
    assert_allclose(gconv_forward(Tensor(x), _stacked_gconv(4)).data, x * x, atol=1e-12)


def test_gconv_of_zeros_is_output_bias(rng):
    params = GnConvParams.init(ParamFactory(1), 8, 1, 3)
    params.linear_out.bias.data[:] = rng.normal(size=8)
    out = gconv_forward(Tensor(np.zeros((4, 8))), params)
    assert_allclose(out.data, np.broadcast_to(params.linear_out.bias.data, (4, 8)), atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_gconv_matches_oracle(seed):
    params = GnConvParams.init(ParamFactory(seed), 6, 1, 3)
    x = np.random.default_rng(seed).normal(size=(5, 6))
    assert_allclose(gconv_forward(Tensor(x), params).data, gconv_oracle(x, params), rtol=1e-12, atol=1e-12)


def test_gconv_rejects_higher_order():
    with pytest.raises(ShapeError):
        gconv_forward(Tensor(np.zeros((3, 8))), GnConvParams.init(ParamFactory(0), 8, 2, 3))


def test_order_one_gnconv_is_gconv_bit_exactly(rng):
    params = GnConvParams.init(ParamFactory(3), 8, 1, 5)
    x = Tensor(rng.normal(size=(2, 6, 8)))
    assert_array_equal(gnconv_forward(x, params).data, gconv_forward(x, params).data)


@pytest.mark.parametrize("seed", range(20))
@pytest.mark.parametrize("order", [2, 3])
def test_gnconv_matches_oracle(seed, order):
    rng = np.random.default_rng(seed)
    params = GnConvParams.init(ParamFactory(seed), 8, order, int(rng.integers(1, 6)),
                               alpha=float(rng.uniform(0.5, 2.0)))
    v = rng.normal(size=(4, 8))
    assert_allclose(gnconv_forward(Tensor(v), params).data, gnconv_oracle(v, params), rtol=1e-12, atol=1e-12)


def test_gnconv_padding_flags_match_oracle(rng):
    params = GnConvParams.init(ParamFactory(2), 8, 2, 3)
    v = rng.normal(size=(5, 8))
    keep = np.array([1, 1, 1, 0, 0], dtype=bool)
    assert_allclose(gnconv_forward(Tensor(v), params, keep).data, gnconv_oracle(v, params, keep),
                    rtol=1e-12, atol=1e-12)


def test_gnconv_reference_config_shapes(rng):
    params = GnConvParams.init(ParamFactory(0), 256, 5, 7)
    v = Tensor(rng.normal(size=(4, 256)))
    assert gnconv_forward(v, params).shape == (4, 256)


@given(dim=st.sampled_from([4, 8, 16]), order=st.integers(1, 3), T=st.integers(2, 5))
def test_gnconv_preserves_shape(dim, order, T):
    params = GnConvParams.init(ParamFactory(0), dim, order, 3)
    assert gnconv_forward(Tensor(np.ones((T, dim))), params).shape == (T, dim)


def test_gnconv_stage_mismatch_names_stage(rng):
    params = GnConvParams.init(ParamFactory(0), 8, 2, 3)
    params.proj[0] = Affine.init(ParamFactory(1), 4, 5)
    with pytest.raises(ShapeError, match="stage 1"):
        gnconv_forward(Tensor(rng.normal(size=(4, 8))), params)


@pytest.mark.parametrize("order", [1, 2, 3])
def test_alpha_scales_output_by_inverse_power(order, rng):
    params = GnConvParams.init(ParamFactory(order), 8, order, 3, alpha=1.5, bias=False)
    doubled = replace(params, alpha=3.0)
    v = Tensor(rng.normal(size=(4, 8)))
    assert_allclose(gnconv_forward(v, doubled).data * 2 ** order, gnconv_forward(v, params).data,
                    rtol=1e-12, atol=1e-12)


def test_identity_gnconv_returns_input(rng):
    x = rng.normal(size=(2, 5, 8))
    for causal in (False, True):
        params = identity_gnconv(8, kernel_size=4, causal=causal)
        assert_allclose(gnconv_forward(Tensor(x), params).data, x, atol=1e-12)


def _enumerate(dim, order, kernel, bias=True):
    params = GnConvParams.init(ShapeFactory(), dim, order, kernel, bias=bias)
    return sum(t.size for t in params.parameters())


@pytest.mark.parametrize("dim", [16, 64, 256])
@pytest.mark.parametrize("order", [1, 2, 3, 4, 5])
@pytest.mark.parametrize("kernel", [1, 7, 32])
def test_param_count_closed_form_matches_enumeration(dim, order, kernel):
    assert gnconv_param_count(dim, order, kernel) == _enumerate(dim, order, kernel)
    assert gnconv_param_count(dim, order, kernel, with_bias=False) == _enumerate(dim, order, kernel, False)


def test_param_count_reference_values():
    assert gnconv_param_count(256, 5, 32) == 257_744
    assert gnconv_param_count(256, 3, 32) == 253_504
    assert gnconv_param_count(256, 9, 32) - gnconv_param_count(256, 3, 32) < 0.001 * 22_470_000


@pytest.mark.parametrize("order", [1, 2, 3])
def test_gnconv_gradients(order):
    assert check_gnconv(order).passed
