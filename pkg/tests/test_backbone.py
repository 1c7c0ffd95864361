import pytest
import torch

from portraitdiff.core.backbone import Attention, build_unet, expand_conv_in, import_weights
from portraitdiff.errors import ShapeError, SiteError


@pytest.fixture
def unet(tiny_config):
    model = build_unet(tiny_config.unet, seed=0)
    model.eval()
    return model


def _inputs(n=2, channels=48, seed=0):
    gen = torch.Generator().manual_seed(seed)
    sample = torch.randn(n, channels, 8, 8, generator=gen)
    context = torch.randn(5, 32, generator=gen)
    return sample, context


def test_site_ids(unet):
    sites = [s.site_id for s in unet.attention_sites()]

    assert sites == ["down.0.0", "down.1.0", "mid.0", "up.1.0", "up.1.1", "up.0.0", "up.0.1"]
    assert unet.injectable_site_ids() == sites[2:]
    assert unet.site_module("mid.0").site.resolution == 4
    assert unet.site_module("up.0.1").site.channels == 16


def test_unknown_site(unet):
    with pytest.raises(SiteError, match="down.9.9"):
        unet.site_module("down.9.9")


def test_forward_shape(unet):
    sample, context = _inputs()
    with torch.no_grad():
        out = unet(sample, 10, context)

    assert out.shape == (2, 48, 8, 8)


def test_context_tokens_change_output(unet):
    sample, context = _inputs()
    other = torch.randn(5, 32, generator=torch.Generator().manual_seed(1))

    with torch.no_grad():
        out = unet(sample, 10, context)
        same = unet(sample, 10, context.clone())
        changed = unet(sample, 10, other)

    assert torch.equal(out, same)
    assert (out - changed).abs().max() > 1e-4


def test_context_is_routed_per_clip(unet):
    sample, context = _inputs(n=1)
    other = torch.randn(5, 32, generator=torch.Generator().manual_seed(1))

    with torch.no_grad():
        out = unet(sample.expand(2, -1, -1, -1), 10, torch.stack([context, other]), num_frames=1)
        alone = unet(sample, 10, other)

    assert (out[0] - out[1]).abs().max() > 1e-4
    torch.testing.assert_close(out[1:], alone, rtol=1e-4, atol=1e-5)


def test_forward_rejects_wrong_channels(unet):
    sample, context = _inputs(channels=47)
    with pytest.raises(ShapeError, match="48 input channels"):
        unet(sample, 10, context)


def test_forward_rejects_negative_timestep(unet):
    sample, context = _inputs()
    with pytest.raises(ValueError, match="non-negative"):
        unet(sample, -1, context)


def test_bank_on_down_site_rejected(unet):
    sample, context = _inputs()
    bank = {"down.0.0": torch.zeros(1, 64, 16)}
    with pytest.raises(SiteError, match="non-injectable"):
        unet(sample, 10, context, reference_bank=bank)


def test_capture_covers_injectable_sites(unet):
    sample, context = _inputs(n=1)
    capture = {}
    with torch.no_grad():
        unet(sample, 3, context, capture=capture)

    assert sorted(capture) == sorted(unet.injectable_site_ids())
    assert capture["mid.0"].shape == (1, 16, 32)
    assert capture["up.0.0"].shape == (1, 64, 16)


def test_build_is_seeded(tiny_config):
    a = build_unet(tiny_config.unet, seed=3)
    b = build_unet(tiny_config.unet, seed=3)
    c = build_unet(tiny_config.unet, seed=4)

    assert all(torch.equal(x, y) for x, y in zip(a.state_dict().values(), b.state_dict().values()))
    assert not torch.equal(a.conv_in.weight, c.conv_in.weight)


def test_expand_conv_in_keeps_weights(unet):
    old_weight = unet.conv_in.weight.detach().clone()
    old_bias = unet.conv_in.bias.detach().clone()

    expand_conv_in(unet, 7)

    assert unet.in_channels == 55
    assert torch.equal(unet.conv_in.weight[:, :48], old_weight)
    assert torch.equal(unet.conv_in.bias, old_bias)
    assert torch.count_nonzero(unet.conv_in.weight[:, 48:]) == 0
    assert unet.config.extra_channels == 7


def test_expanded_unet_ignores_extra_channels_at_init(tiny_config):
    base = build_unet(tiny_config.unet, seed=0).eval()
    expanded = build_unet(tiny_config.unet.model_copy(update={'extra_channels': 5}), seed=0).eval()
    sample, context = _inputs()
    extra = torch.randn(2, 5, 8, 8)

    with torch.no_grad():
        reference = base(sample, 20, context)
        out = expanded(torch.cat([sample, extra], dim=1), 20, context)

    torch.testing.assert_close(out, reference, atol=1e-6, rtol=0)


def test_expand_twice_rejected(unet):
    expand_conv_in(unet, 2)
    with pytest.raises(ValueError, match="already been expanded"):
        expand_conv_in(unet, 2)


def test_attention_reference_extends_keys():
    torch.manual_seed(0)
    attn = Attention(8, 2)
    x = torch.randn(1, 16, 8)
    reference = torch.randn(1, 3, 8)

    out = attn(x, reference=reference)

    assert out.shape == (1, 16, 8)
    assert attn.last_lengths == (16, 19)
    attn(x)
    assert attn.last_lengths == (16, 16)


def test_attention_reference_broadcast_over_frames():
    torch.manual_seed(0)
    attn = Attention(8, 2)
    x = torch.randn(4, 6, 8)
    reference = torch.randn(1, 6, 8)

    out = attn(x, reference=reference)

    single = attn(x[2:3], reference=reference)
    torch.testing.assert_close(out[2:3], single)


def test_import_weights_report(tiny_config):
    source = build_unet(tiny_config.unet, seed=1)
    target = build_unet(tiny_config.unet, seed=2)
    state = dict(source.state_dict())
    state["not.a.key"] = torch.zeros(1)
    state["conv_out.bias"] = torch.zeros(3)
    del state["conv_in.bias"]

    report = import_weights(target, state)

    assert report['unexpected'] == ["not.a.key"]
    assert report['missing'] == ["conv_in.bias"]
    assert report['mismatched'][0].startswith("conv_out.bias")
    assert torch.equal(target.conv_in.weight, source.conv_in.weight)
    assert not torch.equal(target.conv_out.bias, torch.zeros(3))
