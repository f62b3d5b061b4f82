import dataclasses

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from stitchgan.nets import (PAPER_DISCRIMINATOR, PAPER_GENERATOR, TINY_DISCRIMINATOR, TINY_GENERATOR,
                            TOY_DISCRIMINATOR, TOY_GENERATOR, Discriminator, DiscriminatorSpec, Generator,
                            GeneratorSpec, count_parameters, discriminator_forward, discriminator_layers,
                            generator_forward, generator_layers, init_params, load_checkpoint, save_checkpoint)

# frozen after one count from the layer plans (see test_layer_plan_counts_match_modules)
TOY_G_PARAMS = 395_092
TOY_D_PARAMS = 174_161
PAPER_G_PARAMS = 29_244_611
PAPER_D_PARAMS = 6_956_353


def test_discriminator_sides_paper():
    assert PAPER_DISCRIMINATOR.sides() == [728, 363, 180, 89, 43, 20]
    side = 728
    for want in (363, 180, 89, 43, 20):
        side = (side - 4) // 2 + 1
        assert side == want


@pytest.mark.parametrize("gen_spec,disc_spec,g_n,d_n", [
    (TOY_GENERATOR, TOY_DISCRIMINATOR, TOY_G_PARAMS, TOY_D_PARAMS),
    (PAPER_GENERATOR, PAPER_DISCRIMINATOR, PAPER_G_PARAMS, PAPER_D_PARAMS),
])
def test_parameter_count_regression(gen_spec, disc_spec, g_n, d_n):
    g, d = Generator(gen_spec), Discriminator(disc_spec)
    assert count_parameters(g) == g_n == sum(l.n_params for l in generator_layers(gen_spec))
    assert count_parameters(d) == d_n == sum(l.n_params for l in discriminator_layers(disc_spec))


@pytest.mark.parametrize("skips", [True, False])
@pytest.mark.parametrize("input_skip", [True, False])
def test_layer_plan_counts_match_modules(skips, input_skip):
    spec = GeneratorSpec(44, 32, depth=3, base_channels=4, skip_connections=skips, input_skip=input_skip)
    assert count_parameters(Generator(spec)) == sum(l.n_params for l in generator_layers(spec))


def test_generator_shapes_and_range():
    p = init_params(TOY_GENERATOR, TOY_DISCRIMINATOR, 0)
    y = generator_forward(p.generator, torch.zeros(2, 3, 80, 80))
    assert y.shape == (2, 3, 64, 64)
    assert torch.isfinite(y).all() and y.abs().max() <= 1
    with pytest.raises(ValueError):
        p.generator(torch.zeros(1, 3, 64, 64))


@pytest.mark.slow
def test_paper_scale_shapes():
    g = Generator(PAPER_GENERATOR).eval()
    with torch.no_grad():
        assert g(torch.zeros(1, 3, 296, 296)).shape == (1, 3, 256, 256)
        realism, score = discriminator_forward(Discriminator(PAPER_DISCRIMINATOR).eval(),
                                               torch.zeros(1, 3, 728, 728), torch.zeros(1, 3, 728, 728))
    assert realism.shape == (1, 1, 20, 20) and score.shape == (1,)


@settings(max_examples=15, deadline=None)
@given(out=st.integers(4, 40), ctx=st.integers(0, 6), depth=st.integers(2, 4))
def test_generator_shape_contract(out, ctx, depth):
    spec = GeneratorSpec(out + 2 * ctx, out, depth=depth, base_channels=2)
    y = Generator(spec)(torch.rand(1, 3, out + 2 * ctx, out + 2 * ctx))
    assert y.shape == (1, 3, out, out)
    assert y.abs().max() <= 1


@settings(max_examples=15, deadline=None)
@given(side=st.integers(10, 120), blocks=st.integers(1, 3))
def test_discriminator_map_recurrence(side, blocks):
    try:
        spec = DiscriminatorSpec(side, blocks=blocks, base_channels=2)
    except ValueError:
        s = side
        for _ in range(blocks):
            s = (s - 4) // 2 + 1
        assert s < 1
        return
    with torch.no_grad():
        realism, score = discriminator_forward(Discriminator(spec).eval(), torch.rand(1, 3, side, side),
                                               torch.rand(1, 3, side, side))
    assert realism.shape[-1] == spec.map_side
    assert ((realism > 0) & (realism < 1)).all()
    assert torch.allclose(score, realism.mean())


def test_discriminator_determinism():
    p = init_params(TINY_GENERATOR, TINY_DISCRIMINATOR, 1)
    m, im = torch.rand(1, 3, 14, 14), torch.rand(1, 3, 14, 14)
    p.eval()
    assert torch.equal(discriminator_forward(p.discriminator, m, im)[1],
                       discriminator_forward(p.discriminator, m, im)[1])


def test_init_params_seeding():
    a = init_params(TOY_GENERATOR, TOY_DISCRIMINATOR, 5)
    b = init_params(TOY_GENERATOR, TOY_DISCRIMINATOR, 5)
    c = init_params(TOY_GENERATOR, TOY_DISCRIMINATOR, 6)
    for x, y in zip(a.generator.state_dict().values(), b.generator.state_dict().values()):
        assert torch.equal(x, y)
    assert any(not torch.equal(x, y) for x, y in
               zip(a.discriminator.state_dict().values(), c.discriminator.state_dict().values()))
    with pytest.raises(ValueError):
        init_params(TOY_GENERATOR, dataclasses.replace(TOY_DISCRIMINATOR, input_channels=4), 0)


def test_skip_flag_leaves_bottleneck_as_only_path():
    spec = GeneratorSpec(16, 16, depth=2, base_channels=2, skip_connections=False)
    g = init_params(spec, DiscriminatorSpec(16, blocks=1, input_channels=6), 0).generator.eval()
    # with no skips, zeroing the bottleneck activations removes all input dependence
    g.unet.down[-1].register_forward_hook(lambda m, i, o: torch.zeros_like(o))
    with torch.no_grad():
        y1 = g(torch.rand(1, 3, 16, 16))
        y2 = g(torch.rand(1, 3, 16, 16))
    assert torch.equal(y1, y2)


def test_gradient_sanity_tiny():
    torch.manual_seed(0)
    p = init_params(TINY_GENERATOR, TINY_DISCRIMINATOR, 0, dtype=torch.float64)
    p.eval()
    x = torch.rand(1, 3, 12, 12, dtype=torch.float64)
    target = torch.rand(1, 3, 8, 8, dtype=torch.float64)
    mask, image = torch.rand(2, 1, 3, 14, 14, dtype=torch.float64)
    for module, loss_fn in [
        (p.generator, lambda: (p.generator(x) - target).abs().mean()),
        (p.discriminator, lambda: discriminator_forward(p.discriminator, mask, image)[1].sum()),
    ]:
        module.zero_grad()
        loss_fn().backward()
        params = [q for q in module.parameters() if q.dim() == 4]
        rng = np.random.default_rng(0)
        for q in params[:3]:
            flat = q.data.view(-1)
            for idx in rng.choice(flat.numel(), 3, replace=False):
                old = float(flat[idx])
                h = 1e-6
                with torch.no_grad():
                    flat[idx] = old + h
                    lp = float(loss_fn())
                    flat[idx] = old - h
                    lm = float(loss_fn())
                flat[idx] = old
                fd = (lp - lm) / (2 * h)
                an = float(q.grad.view(-1)[idx])
                assert abs(fd - an) <= 1e-3 * max(abs(fd), abs(an)) + 1e-9


def test_checkpoint_round_trip(tmp_path):
    p = init_params(TINY_GENERATOR, TINY_DISCRIMINATOR, 3)
    save_checkpoint(tmp_path / "c.pt", p, overlap=2, steps=7)
    q, extra = load_checkpoint(tmp_path / "c.pt")
    assert extra["overlap"] == 2 and extra["steps"] == 7
    assert q.gen_spec == p.gen_spec and q.disc_spec == p.disc_spec
    for a, b in zip(p.generator.state_dict().values(), q.generator.state_dict().values()):
        assert torch.equal(a, b)
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path / "missing.pt")


def test_resized_discriminator_spec():
    toy = TOY_DISCRIMINATOR.resized(64)
    assert toy.blocks == 4 and toy.sides() == [64, 31, 14, 6, 2] and toy.base_channels == 16
    tiny = TINY_DISCRIMINATOR.resized(8)
    assert tiny.blocks == 1 and tiny.map_side == 3
    with pytest.raises(ValueError):
        TINY_DISCRIMINATOR.resized(3)
