import pytest
import torch

from ockd import net
from ockd.errors import ConfigurationError, ContractError
from ockd.losses import distill_loss, pixel_bce

from conftest import finite_difference, max_relative_error


def test_build_is_deterministic(tiny_arch):
    a = net.build_network(tiny_arch, seed=3)
    b = net.build_network(tiny_arch, seed=3)
    assert a.equal(b)


def test_different_seeds_differ(tiny_arch):
    a = net.build_network(tiny_arch, seed=1)
    b = net.build_network(tiny_arch, seed=2)
    assert any(not torch.equal(a.tensors[k], b.tensors[k]) for k in a.conv_weight_names())


def test_single_layer_weight_count():
    arch = (net.ConvBlockSpec((net.LayerSpec(8, 3),), downsample=1),)
    p = net.build_network(arch, seed=0, in_channels=3)
    assert p.tensors["b0.l0.weight"].numel() == 216
    assert torch.count_nonzero(p.tensors["b0.l0.bias"]) == 0


def test_init_is_fan_in_scaled():
    arch = (net.ConvBlockSpec((net.LayerSpec(256, 3),), downsample=1),)
    w = net.build_network(arch, seed=0, in_channels=16).tensors["b0.l0.weight"]
    assert abs(float(w.mean())) < 0.01
    assert float(w.std()) == pytest.approx((2 / (16 * 9)) ** 0.5, rel=0.03)


@pytest.mark.parametrize(
    "arch",
    [
        (),
        (net.ConvBlockSpec((net.LayerSpec(4, kernel=2),)),),
        (net.ConvBlockSpec((net.LayerSpec(0),)),),
        (net.ConvBlockSpec((net.LayerSpec(4),), downsample=3),),
    ],
)
def test_invalid_arch_rejected(arch):
    with pytest.raises(ConfigurationError):
        net.build_network(arch, seed=0)


def test_default_pyramid_shapes():
    p = net.build_network(net.extractor_arch(), seed=0)
    pyr = net.forward_features(p, torch.rand(2, 3, 128, 128))
    assert pyr.f1.shape == (2, 32, 64, 64)
    assert pyr.f2.shape == (2, 64, 32, 32)
    assert pyr.f3.shape == (2, 128, 16, 16)


def test_zero_input_gives_zero_features(tiny_arch):
    arch = tuple(
        net.ConvBlockSpec(tuple(net.LayerSpec(l.out_channels, norm=False) for l in b.layers)) for b in tiny_arch
    )
    p = net.build_network(arch, seed=0)
    pyr = net.forward_features(p, torch.zeros(1, 3, 128, 128))
    assert all(torch.count_nonzero(f) == 0 for f in pyr.levels)


def test_per_sample_independence(tiny_arch, images):
    p = net.build_network(tiny_arch, seed=0)
    dup = torch.cat([images[:1], images[:1], images[1:]])
    pyr = net.forward_features(p, dup)
    for f in pyr.levels:
        assert torch.equal(f[0], f[1])
    perm = net.forward_features(p, images.flip(0))
    ref = net.forward_features(p, images)
    for a, b in zip(perm.levels, ref.levels):
        assert torch.allclose(a, b.flip(0))


def test_forward_is_pure(tiny_arch, images):
    p = net.build_network(tiny_arch, seed=0)
    before = p.clone()
    a = net.forward_features(p, images)
    b = net.forward_features(p, images)
    assert p.equal(before)
    assert all(torch.equal(x, y) for x, y in zip(a.levels, b.levels))


def test_channel_mismatch_is_contract_error(tiny_arch):
    p = net.build_network(tiny_arch, seed=0)
    with pytest.raises(ContractError):
        net.forward_features(p, torch.rand(1, 4, 128, 128))


def _fcb_for(widths, seed=0):
    return net.build_network(net.fcb_arch(2), seed=seed, in_channels=sum(widths))


def test_pixel_map_range_and_shape(tiny_arch):
    p = net.build_network(tiny_arch, seed=0)
    fcb = _fcb_for((2, 3, 4))
    d = net.forward_pixel_map(fcb, net.forward_features(p, torch.rand(3, 3, 128, 128)))
    assert d.shape == (3, 1, 32, 32)
    assert bool(((d > 0) & (d < 1)).all())


def test_zero_logits_give_half(tiny_arch):
    p = net.build_network(tiny_arch, seed=0)
    fcb = _fcb_for((2, 3, 4))
    last = [k for k in fcb.tensors if k.endswith(".weight")][-1]
    fcb.tensors[last].zero_()
    d = net.forward_pixel_map(fcb, net.forward_features(p, torch.rand(2, 3, 128, 128)))
    assert torch.all(d == 0.5)


def test_fcb_channel_mismatch(tiny_arch):
    p = net.build_network(tiny_arch, seed=0)
    fcb = net.build_network(net.fcb_arch(2), seed=0, in_channels=5)
    with pytest.raises(ContractError):
        net.forward_pixel_map(fcb, net.forward_features(p, torch.rand(1, 3, 128, 128)))


def test_gradient_of_linear_loss(tiny_arch):
    p = net.build_network(tiny_arch, seed=0).trainable()
    loss = p.tensors["b1.l0.weight"].sum()
    g = net.gradients(loss, p)
    for k, v in g.items():
        expected = 1.0 if k == "b1.l0.weight" else 0.0
        assert torch.all(v == expected), k


def test_gradients_reject_untracked_loss(tiny_arch):
    p = net.build_network(tiny_arch, seed=0).trainable()
    with pytest.raises(ContractError):
        net.gradients(torch.tensor(1.0), p)


def _toy_pair():
    arch = net.extractor_arch((2, 2, 2), convs_per_block=1)
    ext = net.build_network(arch, seed=5, dtype=torch.float64)
    fcb = net.build_network(net.fcb_arch(2), seed=6, in_channels=6, dtype=torch.float64)
    return ext, fcb


def test_pixel_bce_gradient_matches_finite_differences():
    ext, fcb = _toy_pair()
    ext, fcb = ext.trainable(), fcb.trainable()
    # small frames keep central differences away from rectifier kinks
    x = torch.rand((2, 3, 32, 32), generator=torch.Generator().manual_seed(0), dtype=torch.float64)
    labels = torch.tensor([0, 1])

    def loss_fn():
        return pixel_bce(net.forward_pixel_map(fcb, net.forward_features(ext, x, train=True), train=True), labels)

    analytic = net.gradients(loss_fn(), [ext, fcb])
    named = {f"0:{k}": v for k, v in ext.tensors.items()} | {f"1:{k}": v for k, v in fcb.tensors.items()}
    numeric = finite_difference(loss_fn, named)
    assert max_relative_error(analytic, numeric, named) <= 1e-3
