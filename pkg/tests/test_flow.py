import math

import numpy as np
import pytest

from app.core.flow import CouplingLayer, FlowModel, PermutationLayer
from app.core.layers import randomize_parameters
from app.core.selftest import random_flow
from app.core.tensor import Tensor, backward, no_grad, reduce
from app.errors import DimensionError
from app.models import FlowConfig
from app.utils.gradcheck import jacobian_logdet


def _random_coupling(rng, dim, cond_dim=3, width=8, scale=0.3):
    layer = CouplingLayer(dim, cond_dim, width, 2.0, rng)
    randomize_parameters(layer.parameters(), rng, scale)
    return layer


def test_fresh_coupling_is_identity(rng):
    layer = CouplingLayer(5, 3, 8, 2.0, rng)
    x = Tensor(rng.normal(size=(4, 5)))
    cond = Tensor(rng.normal(size=(4, 3)))
    y, logdet = layer.forward(x, cond)
    assert np.array_equal(y.values, x.values)
    assert np.array_equal(logdet.values, np.zeros((4, 1)))
    assert np.array_equal(layer.inverse(x, cond).values, x.values)


def test_split_point_is_ceiling_of_half(rng):
    assert CouplingLayer(5, 1, 4, 2.0, rng).split_point == 3
    assert CouplingLayer(4, 1, 4, 2.0, rng).split_point == 2


def test_coupling_logdet_matches_brute_force_jacobian(rng):
    layer = _random_coupling(rng, 4)
    x = rng.normal(size=(1, 4))
    cond = Tensor(rng.normal(size=(1, 3)))
    with no_grad():
        analytic = layer.forward(Tensor(x), cond)[1].item()
        brute = jacobian_logdet(lambda v: layer.forward(Tensor(v.reshape(1, -1)), cond)[0].values.ravel(), x)
    assert abs(analytic - brute) <= 1e-4


def test_condition_reaches_coupling_output(rng):
    layer = CouplingLayer(4, 2, 6, 2.0, rng)
    first = layer.shift_net.layers[0].weight
    values = np.zeros(first.shape)
    values[layer.split_point, 0] = 1.0
    first.values = values
    last = layer.shift_net.layers[-1].weight
    last.values = np.ones(last.shape)

    x = Tensor(np.ones((1, 4)))
    y_a, _ = layer.forward(x, Tensor([[0.0, 0.0]]))
    y_b, _ = layer.forward(x, Tensor([[1.0, 0.0]]))
    assert not np.array_equal(y_a.values, y_b.values)


def test_coupling_roundtrips(rng):
    layer = _random_coupling(rng, 16, scale=0.5)
    x = Tensor(rng.normal(size=(32, 16)))
    cond = Tensor(rng.normal(size=(32, 3)))
    with no_grad():
        back = layer.inverse(layer.forward(x, cond)[0], cond)
        again = layer.forward(layer.inverse(x, cond), cond)[0]
    assert np.abs(back.values - x.values).max() <= 1e-8
    assert np.abs(again.values - x.values).max() <= 1e-8


def test_coupling_rejects_mismatched_condition_rows(rng):
    layer = CouplingLayer(4, 2, 6, 2.0, rng)
    with pytest.raises(DimensionError):
        layer.forward(Tensor(np.zeros((3, 4))), Tensor(np.zeros((2, 2))))
    with pytest.raises(DimensionError):
        layer.forward(Tensor(np.zeros((3, 5))), Tensor(np.zeros((3, 2))))


def test_permutation_is_volume_preserving_bijection(rng):
    perm = PermutationLayer.random(7, rng)
    x = Tensor(rng.normal(size=(3, 7)))
    assert np.array_equal(perm.inverse(perm.forward(x)).values, x.values)
    assert np.array_equal(perm.perm[perm.inverse_perm], np.arange(7))


def test_zero_block_model_is_identity(rng):
    flow = FlowModel.build(3, 2, FlowConfig(blocks=0), rng)
    x = Tensor(rng.normal(size=(5, 3)))
    cond = Tensor(rng.normal(size=(5, 2)))
    out = flow.forward(x, cond)
    assert np.array_equal(out.z.values, x.values)
    assert np.array_equal(out.logdet.values, np.zeros((5, 1)))
    assert np.array_equal(flow.inverse(x, cond).values, x.values)


def test_identity_initialised_model_only_permutes(rng):
    flow = FlowModel.build(6, 2, FlowConfig(blocks=4, hidden_width=8), rng)
    assert flow.is_identity()
    x = Tensor(rng.normal(size=(3, 6)))
    out = flow.forward(x, Tensor(np.zeros((3, 2))))
    expected = x.values
    for perm, _ in flow.blocks:
        expected = expected[:, perm.perm]
    assert np.array_equal(out.z.values, expected)
    assert np.array_equal(out.logdet.values, np.zeros((3, 1)))


def test_flow_logdet_matches_end_to_end_jacobian(rng):
    flow = random_flow(rng, 6, 3, scale=0.3)
    x = rng.normal(size=(1, 6))
    cond = Tensor(rng.normal(size=(1, flow.cond_dim)))
    with no_grad():
        analytic = flow.forward(Tensor(x), cond).logdet.item()
        brute = jacobian_logdet(lambda v: flow.forward(Tensor(v.reshape(1, -1)), cond).z.values.ravel(), x)
    assert abs(analytic - brute) <= 1e-3


def test_flow_logdet_is_sum_of_coupling_log_scales(rng):
    flow = random_flow(rng, 5, 3, scale=0.4)
    x = Tensor(rng.normal(size=(4, 5)))
    cond = Tensor(rng.normal(size=(4, flow.cond_dim)))
    with no_grad():
        total = np.zeros((4, 1))
        h = x
        for perm, coupling in flow.blocks:
            h = perm.forward(h)
            total += coupling.log_scales(h, cond).values.sum(axis=1, keepdims=True)
            h, _ = coupling.forward(h, cond)
        np.testing.assert_allclose(flow.forward(x, cond).logdet.values, total, atol=1e-12)


@pytest.mark.parametrize("dim", [8, 64, 256])
@pytest.mark.parametrize("blocks", [1, 4, 8, 16])
def test_flow_roundtrip_in_both_directions(rng, dim, blocks):
    flow = random_flow(rng, dim, blocks, scale=0.3)
    x = Tensor(rng.normal(size=(16, dim)))
    z = Tensor(rng.normal(size=(16, dim)))
    cond = Tensor(rng.normal(size=(16, flow.cond_dim)))
    with no_grad():
        back_x = flow.inverse(flow.forward(x, cond).z, cond)
        back_z = flow.forward(flow.inverse(z, cond), cond).z
    assert np.abs(back_x.values - x.values).max() <= 1e-6
    assert np.abs(back_z.values - z.values).max() <= 1e-6


def test_log_likelihood_of_standard_normal_at_known_points(rng):
    flow = FlowModel.build(2, 1, FlowConfig(blocks=0), rng)
    cond = Tensor(np.zeros((2, 1)))
    ll = flow.log_likelihood(Tensor([[0.0, 0.0], [1.0, 1.0]]), cond).values.ravel()
    assert ll[0] == pytest.approx(-math.log(2 * math.pi), abs=1e-12)
    assert ll[0] == pytest.approx(-1.837877, abs=1e-6)
    assert ll[1] == pytest.approx(-2.837877, abs=1e-6)


def test_constant_scale_coupling_adds_exact_logdet(rng):
    flow = FlowModel.build(2, 1, FlowConfig(blocks=1, hidden_width=4, clamp=2.0), rng)
    _, coupling = flow.blocks[0]
    bias = coupling.scale_net.layers[-1].bias
    bias.values = np.full(bias.shape, 2.0 * math.atanh(0.5 / 2.0))

    x = Tensor(rng.normal(size=(3, 2)))
    cond = Tensor(np.zeros((3, 1)))
    np.testing.assert_allclose(flow.forward(x, cond).logdet.values, 0.5, atol=1e-12)


def test_log_scales_never_exceed_clamp(rng):
    layer = CouplingLayer(6, 2, 8, 1.5, rng)
    randomize_parameters(layer.parameters(), rng, 25.0)
    x = Tensor(rng.normal(scale=10.0, size=(64, 6)))
    s = layer.log_scales(x, Tensor(rng.normal(size=(64, 2))))
    assert np.abs(s.values).max() <= 1.5


def test_log_likelihood_gradient_reaches_condition(rng):
    flow = random_flow(rng, 4, 3, scale=0.3)
    cond = Tensor(rng.normal(size=(5, flow.cond_dim)), requires_grad=True)
    backward(reduce("sum", flow.log_likelihood(Tensor(rng.normal(size=(5, 4))), cond)))
    assert np.any(np.abs(cond.grad) > 0)


def test_without_conditioning_ignores_condition(rng):
    flow = random_flow(rng, 4, 2, scale=0.5)
    blind = flow.without_conditioning()
    x = Tensor(rng.normal(size=(2, 4)))
    with no_grad():
        z_a = blind.forward(x, Tensor(np.zeros((2, flow.cond_dim)))).z.values
        z_b = blind.forward(x, Tensor(rng.normal(size=(2, flow.cond_dim)))).z.values
        z_c = flow.forward(x, Tensor(np.zeros((2, flow.cond_dim)))).z.values
    assert np.array_equal(z_a, z_b)
    np.testing.assert_allclose(z_a, z_c, atol=1e-12)


def test_clone_is_independent(rng):
    flow = random_flow(rng, 4, 2)
    copy = flow.clone()
    copy.parameters()[0].values = copy.parameters()[0].values + 1.0
    assert not np.array_equal(copy.parameters()[0].values, flow.parameters()[0].values)
