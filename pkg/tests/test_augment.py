import numpy as np
import pytest
import torch

from portraitdiff.core.augment import (
    AugmentParams, augment_driving, draw_augment_params, mask_clip, mask_face, rescale_face,
    to_grayscale,
)
from portraitdiff.core.perturb import PLUGINS, get_plugin, perturb_identity
from portraitdiff.core.video import VideoClip
from portraitdiff.errors import PluginError, ShapeError
from portraitdiff.models.clip import FaceBox, FrameMeta
from portraitdiff.utils.hashing import tensor_hash


def make_clip(n=4, size=64, box=(8, 8, 16, 16), seed=0):
    frames = torch.rand(n, 3, size, size, generator=torch.Generator().manual_seed(seed))
    x, y, w, h = box
    meta = [FrameMeta(face_box=FaceBox(x=x, y=y, w=w, h=h), gaze=(float(i), 0.0)) for i in range(n)]
    return VideoClip(frames, tuple(meta), identity_id=0)


def test_mask_face_counts():
    frame = torch.ones(3, 64, 64)

    masked = mask_face(frame, FaceBox(x=8, y=8, w=16, h=16))

    assert torch.count_nonzero(masked[0]) == 256
    assert torch.equal(masked[:, 8:24, 8:24], frame[:, 8:24, 8:24])


def test_mask_face_full_and_empty_boxes():
    frame = torch.rand(3, 32, 32)

    assert torch.equal(mask_face(frame, FaceBox(x=0, y=0, w=32, h=32)), frame)
    assert torch.count_nonzero(mask_face(frame, FaceBox(x=0, y=0, w=0, h=0))) == 0


def test_mask_face_box_outside():
    with pytest.raises(ShapeError, match="outside"):
        mask_face(torch.rand(3, 32, 32), FaceBox(x=20, y=20, w=16, h=16))


def test_mask_clip_zeroes_outside_every_box():
    masked = mask_clip(make_clip())

    assert torch.count_nonzero(masked.frames[:, :, :8]) == 0
    assert torch.count_nonzero(masked.frames[:, :, 24:]) == 0
    assert masked.face_boxes == make_clip().face_boxes


def test_grayscale_channels_equal():
    gray = to_grayscale(torch.rand(2, 3, 8, 8))

    assert torch.equal(gray[:, 0], gray[:, 1])
    assert torch.equal(gray[:, 1], gray[:, 2])


def test_unit_scale_is_identity():
    clip = mask_clip(make_clip())
    rng = np.random.default_rng(0)

    out = augment_driving(clip, rng, params=AugmentParams(grayscale=False, scale=(1.0, 1.0)))

    assert torch.equal(out.frames, clip.frames)
    assert out.face_boxes == clip.face_boxes


def test_rescale_moves_box_and_keeps_black_outside():
    frame = mask_face(torch.rand(3, 64, 64), FaceBox(x=8, y=8, w=16, h=16))

    out, box = rescale_face(frame, FaceBox(x=8, y=8, w=16, h=16), (0.5, 0.5))

    assert box.as_tuple() == (12, 12, 8, 8)
    assert torch.equal(mask_face(out, box), out)


def test_augment_params_shared_across_frames():
    clip = mask_clip(make_clip())
    params = AugmentParams(grayscale=True, scale=(1.2, 0.9))

    out = augment_driving(clip, np.random.default_rng(0), params=params)

    assert len({m.face_box.as_tuple() for m in out.meta}) == 1
    assert torch.equal(out.frames[:, 0], out.frames[:, 2])
    for frame, box in zip(out.frames, out.face_boxes):
        assert torch.equal(mask_face(frame, box), frame)


def test_draw_params_respect_probabilities():
    rng = np.random.default_rng(0)

    never = draw_augment_params(rng, 0.0, 0.0, (0.8, 1.2))
    always = draw_augment_params(rng, 1.0, 1.0, (0.8, 1.2))

    assert never == AugmentParams(grayscale=False, scale=(1.0, 1.0))
    assert always.grayscale
    assert all(0.8 <= s <= 1.2 for s in always.scale)


def test_registered_plugins():
    assert set(PLUGINS) == {'none', 'warp_swap', 'posterize_style', 'color_match'}


def test_unknown_plugin():
    with pytest.raises(PluginError, match="Available"):
        get_plugin('deepfake')
    with pytest.raises(KeyError):
        perturb_identity(make_clip(), 'deepfake', np.random.default_rng(0))


def test_none_plugin_tags_real():
    clip = make_clip()
    out = perturb_identity(clip, 'none', np.random.default_rng(0))

    assert out.source_tag == 'real'
    assert torch.equal(out.frames, clip.frames)


def test_warp_swap_changes_pixels_not_annotations():
    clip = make_clip()
    out = perturb_identity(clip, 'warp_swap', np.random.default_rng(0), donor_seed=3)

    assert out.source_tag == 'swapped'
    assert tensor_hash(out.frames) != tensor_hash(clip.frames)
    assert out.meta == clip.meta
    # Outside the face box nothing moves
    assert torch.equal(out.frames[:, :, 30:], clip.frames[:, :, 30:])


def test_warp_swap_is_keyed_by_donor():
    clip = make_clip()
    a = perturb_identity(clip, 'warp_swap', np.random.default_rng(0), donor_seed=3)
    b = perturb_identity(clip, 'warp_swap', np.random.default_rng(1), donor_seed=3)
    c = perturb_identity(clip, 'warp_swap', np.random.default_rng(0), donor_seed=4)

    assert torch.equal(a.frames, b.frames)
    assert not torch.equal(a.frames, c.frames)


def test_posterize_levels():
    clip = make_clip(n=2)
    out = perturb_identity(clip, 'posterize_style', np.random.default_rng(0), levels=4)

    assert out.source_tag == 'stylized'
    for frame in out.frames:
        for channel in frame:
            assert torch.unique(channel).numel() <= 4


def test_color_match_keeps_tag_and_needs_reference():
    clip = make_clip().with_frames(make_clip().frames, source_tag='swapped')
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError, match="reference"):
        perturb_identity(clip, 'color_match', rng)

    reference = torch.full((3, 64, 64), 0.5)
    reference[:, 8:24, 8:24] = torch.rand(3, 16, 16) * 0.2 + 0.4
    out = perturb_identity(clip, 'color_match', rng, reference=reference,
                           reference_box=FaceBox(x=8, y=8, w=16, h=16))

    assert out.source_tag == 'swapped'
    face = out.frames[:, :, 8:24, 8:24]
    assert face.mean().item() == pytest.approx(0.5, abs=0.05)
