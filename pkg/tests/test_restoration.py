import numpy as np
import pytest
import torch

from conftest import randomize
from vecnet.core import ModelConfig, pad_clip_boundary
from vecnet.gradcheck import module_errors
from vecnet.losses import vecnet_loss
from vecnet.restoration import (
    RCAB, ReflectanceNet, Stage1Fusion, Stage2Fusion, VECNet, analytic_param_count,
    count_parameters, instance_norm, reflectance_forward, stage1_fuse, stage2_fuse, vecnet_forward,
)

MICRO = ModelConfig(n_radius=1, base_channels=4, unet_depth=1, rcab_count=1, seed=0)


def _rand(*shape, seed=0):
    return torch.rand(*shape, generator=torch.Generator().manual_seed(seed), dtype=torch.float64)


def test_instance_norm_moments():
    x = _rand(2, 5, 16, 16) * 3 + 2
    y = instance_norm(x)
    assert y.mean(dim=(2, 3)).abs().max() < 1e-4
    assert (y.var(dim=(2, 3), unbiased=False) - 1).abs().max() < 1e-4


@pytest.mark.parametrize("a,b", [(0.5, 0.3), (2.5, -0.1)])
def test_instance_norm_affine_invariance(a, b):
    y = _rand(1, 12, 16, 16)
    assert (instance_norm(y) - instance_norm(a * y + b)).abs().max() < 1e-4


def test_instance_norm_per_channel_affine():
    y = _rand(1, 12, 16, 16)
    a = _rand(1, 12, 1, 1, seed=1) * 1.5 + 0.5
    b = _rand(1, 12, 1, 1, seed=2) - 0.5
    assert (instance_norm(y) - instance_norm(a * y + b)).abs().max() < 1e-4


def test_reflectance_pyramid_exposure_stable():
    net = randomize(ReflectanceNet(3, 4, 1).double(), seed=1)
    y = _rand(1, 3, 4, 16, 16)
    a = reflectance_forward(y, net)
    b = reflectance_forward(2.5 * y + 0.3, net)
    assert [f.shape[-1] for f in a] == [16, 8, 4]
    for fa, fb in zip(a, b):
        assert (fa - fb).abs().max() < 1e-3


def test_reflectance_shape_error():
    net = ReflectanceNet(3, 4, 1)
    with pytest.raises(RuntimeError):
        net(torch.rand(1, 2, 4, 8, 8))


def test_rcab_identity_degenerate():
    block = randomize(RCAB(4).double(), seed=2)
    with torch.no_grad():
        block.conv2.weight.zero_()
        block.conv2.bias.zero_()
    x = _rand(1, 4, 8, 8)
    assert torch.equal(block(x), x)


def _stage1():
    net = randomize(Stage1Fusion(4, 1).double(), seed=3)
    pyramid = [_rand(1, 4, 16, 16, seed=4), _rand(1, 4, 8, 8, seed=5), _rand(1, 4, 4, 4, seed=6)]
    return net, _rand(1, 4, 4, 4, seed=7), _rand(1, 4, 4, 4, seed=8), pyramid


def test_stage1_shape_and_range():
    net, z, zi, pyr = _stage1()
    out = stage1_fuse(z, zi, pyr, net)
    assert out.shape == (1, 3, 16, 16)
    assert out.min() >= 0 and out.max() <= 1


def test_stage1_depends_on_every_input():
    net, z, zi, pyr = _stage1()
    base = stage1_fuse(z, zi, pyr, net)
    variants = [
        (torch.zeros_like(z), zi, pyr),
        (z, torch.zeros_like(zi), pyr),
        (z, zi, [pyr[0], pyr[1], torch.zeros_like(pyr[2])]),
    ]
    for args in variants:
        assert (stage1_fuse(*args, net) - base).abs().max() > 1e-6


def test_stage1_spatial_mismatch():
    net, z, zi, pyr = _stage1()
    with pytest.raises(ValueError, match="coarsest"):
        stage1_fuse(_rand(1, 4, 8, 8), zi, pyr, net)


def test_stage1_gradients():
    net = randomize(Stage1Fusion(2, 1).double(), seed=9)
    pyr = [_rand(1, 2, 8, 8, seed=1), _rand(1, 2, 4, 4, seed=2), _rand(1, 2, 2, 2, seed=3)]
    z, zi = _rand(1, 2, 2, 2, seed=4), _rand(1, 2, 2, 2, seed=5)
    target = _rand(1, 3, 8, 8, seed=6)
    errs = module_errors(lambda: ((net(z, zi, pyr) - target) ** 2).mean(), net)
    assert max(errs.values()) < 1e-2, errs


def _stage2(seed=10):
    return randomize(Stage2Fusion(4).double(), scale=0.5, seed=seed)


def test_stage2_simplex_and_bound():
    net = _stage2()
    for k in range(20):
        I_u, I_o, I_mid = (_rand(2, 3, 8, 8, seed=3 * k + j) for j in range(3))
        out, w = stage2_fuse(I_u, I_o, I_mid, net), net.weight_map(I_u, I_o, I_mid)
        assert w.min() >= 0 and (w.sum(1) - 1).abs().max() < 1e-6
        stack = torch.stack([I_u, I_o, I_mid])
        assert (out >= stack.min(0).values - 1e-6).all() and (out <= stack.max(0).values + 1e-6).all()


def test_stage2_equal_inputs_pass_through():
    x = _rand(1, 3, 8, 8)
    out = stage2_fuse(x, x, x, _stage2(11))
    assert (out - x).abs().max() < 1e-12


def test_stage2_shape_mismatch():
    with pytest.raises(ValueError, match="shape mismatch"):
        stage2_fuse(_rand(1, 3, 8, 8), _rand(1, 3, 8, 8), _rand(1, 3, 8, 12), _stage2())


def test_stage2_gradients():
    net = _stage2(12)
    I_u, I_o, I_mid = (_rand(1, 3, 8, 8, seed=j) for j in range(3))
    target = _rand(1, 3, 8, 8, seed=9)
    errs = module_errors(lambda: ((net(I_u, I_o, I_mid) - target) ** 2).mean(), net)
    assert max(errs.values()) < 1e-2, errs


def _micro_model(seed=0, scale=0.5):
    torch.manual_seed(seed)
    return randomize(VECNet(MICRO).double(), scale=scale, seed=seed)


def test_vecnet_forward_contract():
    model = _micro_model()
    frames = [np.random.default_rng(i).random((8, 8, 3)) for i in range(3)]
    out = vecnet_forward(pad_clip_boundary(frames, 1, 1), model)
    assert out.output.shape == (3, 8, 8)
    assert out.output.min() >= 0 and out.output.max() <= 1
    for t in (out.L, out.L_inv, out.I_u, out.I_o, out.I_mid):
        assert t.shape == (3, 8, 8)


def test_vecnet_forward_deterministic():
    model = _micro_model(1)
    window = _rand(2, 3, 3, 16, 16)
    a, b = model(window), model(window)
    for x, y in zip(a, b):
        assert torch.equal(x, y)


def test_vecnet_window_shape_error():
    with pytest.raises(ValueError, match="expected window"):
        VECNet(MICRO)(torch.rand(1, 5, 3, 8, 8))


def test_end_to_end_gradients_micro():
    model = _micro_model(2)
    window = _rand(1, 3, 3, 8, 8, seed=3)
    gt = _rand(1, 3, 8, 8, seed=4)

    def loss():
        return vecnet_loss(model(window), gt)[0]

    loss().backward()
    for name, p in model.named_parameters():
        assert p.grad is not None and torch.isfinite(p.grad).all(), name
    groups = {"align": model.align, "illumination": model.illumination,
              "reflectance": model.reflectance, "stage1": model.stage1, "stage2": model.stage2}
    for gname, module in groups.items():
        errs = module_errors(loss, module)
        bad = {k: v for k, v in errs.items() if not v < 1e-2}
        assert not bad, (gname, bad)


@pytest.mark.parametrize("config", [
    ModelConfig(),
    MICRO,
    ModelConfig(n_radius=1, base_channels=16, rcab_count=1),
    ModelConfig(n_radius=3, base_channels=8, unet_depth=3, rcab_count=2, offset_groups=3, share_align=False),
])
def test_param_count_matches_formula(config):
    assert count_parameters(VECNet(config)) == analytic_param_count(config)
