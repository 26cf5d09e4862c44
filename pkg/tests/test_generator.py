import numpy as np
import pytest
import torch

from dipstack.errors import ConfigurationError, ShapeError
from dipstack.generator import (
    GeneratorSpec,
    NoiseField,
    build_generator,
    forward,
    make_noise,
    parameter_vector,
    perturbation_scale,
)

SMALL = GeneratorSpec.uniform(3, 8)


def test_default_spec_shape_and_range():
    g = build_generator(GeneratorSpec(), seed=0)
    z = make_noise((64, 64), seed=1)
    with torch.no_grad():
        out = forward(g, z, 0)
    assert out.shape == (1, 3, 64, 64)
    assert float(out.min()) > 0 and float(out.max()) < 1


def test_same_seed_same_parameters():
    a = parameter_vector(build_generator(SMALL, 7))
    b = parameter_vector(build_generator(SMALL, 7))
    c = parameter_vector(build_generator(SMALL, 8))
    assert torch.equal(a, b)
    assert not torch.equal(a, c)


def test_build_does_not_touch_global_rng():
    torch.manual_seed(123)
    expected = torch.rand(3)
    torch.manual_seed(123)
    build_generator(SMALL, 5)
    assert torch.equal(torch.rand(3), expected)


def test_degenerate_depth_one():
    spec = GeneratorSpec.uniform(1, 4).with_outputs(1)
    g = build_generator(spec, 0)
    with torch.no_grad():
        out = forward(g, make_noise((9, 9), 0), 0)
    assert out.shape == (1, 1, 9, 9)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(depth=2, down_channels=(4,), up_channels=(4, 4), skip_channels=(0, 0)),
        dict(depth=1, down_channels=(4,), up_channels=(4,), skip_channels=(0,), kernel_size=4),
        dict(depth=0, down_channels=(), up_channels=(), skip_channels=()),
        dict(depth=1, down_channels=(4,), up_channels=(4,), skip_channels=(0,), upsample_mode="cubic"),
        dict(depth=1, down_channels=(4,), up_channels=(4,), skip_channels=(-1,)),
    ],
)
def test_invalid_specs(kwargs):
    with pytest.raises(ConfigurationError):
        build_generator(GeneratorSpec(**kwargs), 0)


@pytest.mark.parametrize("depth", [1, 2, 3, 4, 5])
@pytest.mark.parametrize("size", [(32, 32), (33, 47), (64, 50), (101, 37), (257, 40)])
def test_output_size_matches_noise(depth, size):
    spec = GeneratorSpec.uniform(depth, 4, skip=2)
    g = build_generator(spec, 0)
    with torch.no_grad():
        out = g(torch.rand(1, spec.input_channels, *size))
    assert tuple(out.shape[-2:]) == size


def test_channel_mismatch_is_shape_error():
    g = build_generator(SMALL, 0)
    with pytest.raises(ShapeError):
        forward(g, make_noise((16, 16), 0, channels=5), 0)


def test_noise_range_and_determinism():
    z = make_noise((20, 30), seed=4)
    assert z.base.shape == (1, 32, 20, 30)
    assert float(z.base.min()) >= 0.0 and float(z.base.max()) <= 0.1
    assert torch.equal(z.base, make_noise((20, 30), seed=4).base)
    assert z.perturb_sigma == pytest.approx(0.1 / 30)


def test_zero_perturbation_is_deterministic():
    g = build_generator(SMALL, 0)
    z = make_noise((16, 16), 0, perturb_sigma=0.0)
    with torch.no_grad():
        a = forward(g, z, 1000, ramp_iterations=10)
        b = forward(g, z, 5, ramp_iterations=10)
    assert torch.equal(a, b)


def test_perturbation_schedule():
    assert perturbation_scale(0.01, 0, 2000) == 0.0
    assert perturbation_scale(0.01, 1000, 2000) == pytest.approx(0.005)
    assert perturbation_scale(0.01, 2000, 2000) == pytest.approx(0.01)
    assert perturbation_scale(0.01, 9000, 2000) == pytest.approx(0.01)
    assert perturbation_scale(0.0, 100, 10) == 0.0
    scales = [perturbation_scale(0.01, k, 2000) for k in range(0, 4001, 50)]
    assert all(b >= a for a, b in zip(scales, scales[1:]))
    assert perturbation_scale(0.01, 2000, 2000) >= perturbation_scale(0.01, 0, 2000)


def test_seeded_perturbation_replays_bit_identically():
    g = build_generator(SMALL, 0)
    z = make_noise((16, 16), 0)
    with torch.no_grad():
        a = forward(g, z, 10, 10, torch.Generator().manual_seed(3))
        b = forward(g, z, 10, 10, torch.Generator().manual_seed(3))
        c = forward(g, z, 10, 10, torch.Generator().manual_seed(4))
    assert torch.equal(a, b)
    assert not torch.equal(a, c)


def test_gradients_flow_at_init():
    g = build_generator(SMALL, 0)
    out = forward(g, make_noise((16, 16), 0), 0)
    ((out - 0.3) ** 2).mean().backward()
    grads = [p.grad for p in g.parameters() if p.requires_grad]
    assert all(gr is not None for gr in grads)
    assert float(sum(gr.abs().sum() for gr in grads)) > 0
    assert float(g.head.weight.grad.abs().sum()) > 0


def test_scaled_noise_norm():
    z = make_noise((8, 8), 0)
    d = z.scaled(0.05, seed=9)
    assert float(d.base.double().norm()) == pytest.approx(0.05 * float(z.base.double().norm()), rel=1e-5)
    assert isinstance(d, NoiseField)
