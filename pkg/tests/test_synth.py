import json

import numpy as np
import pytest
import torch

from portraitdiff.core.dataset import CorpusReader
from portraitdiff.core.synth import (
    MANIFEST_NAME, META_NAME, PUPIL_TRAVEL, clip_parameters, face_box_of, foreground_mask,
    gaze_from_offset, pupil_offset, render_clip, synth_clip_meta, synth_corpus,
)
from portraitdiff.core.video import VideoClip
from portraitdiff.models.clip import HeadShape


def test_render_is_deterministic():
    a, meta_a = render_clip(2, 5, 32, seed=0)
    b, meta_b = render_clip(2, 5, 32, seed=0)
    c, _ = render_clip(2, 5, 32, seed=1)

    assert a.shape == (5, 32, 32, 3)
    assert np.array_equal(a, b)
    assert meta_a == meta_b
    assert not np.array_equal(a, c)


def test_identities_look_different():
    a, _ = render_clip(0, 1, 32, seed=0)
    b, _ = render_clip(1, 1, 32, seed=0)

    assert not np.array_equal(a, b)


def test_pixels_in_unit_range():
    frames, _ = render_clip(0, 3, 32, seed=0)

    assert frames.min() >= 0.0 and frames.max() <= 1.0


@pytest.mark.parametrize("gaze", [(0.0, 0.0), (20.0, -10.0), (-35.0, 25.0)])
def test_gaze_recoverable_from_pupil(gaze):
    travel = PUPIL_TRAVEL * 12.0
    yaw, pitch = gaze_from_offset(*pupil_offset(gaze, travel), travel)

    assert yaw == pytest.approx(gaze[0], abs=0.5)
    assert pitch == pytest.approx(gaze[1], abs=0.5)


def test_gaze_within_limits():
    params = clip_parameters(0, 200, 64, seed=0)

    assert all(abs(p.gaze[0]) <= 35.0 and abs(p.gaze[1]) <= 25.0 for p in params)


def test_meta_matches_parameters():
    meta = synth_clip_meta(1, 6, 64, seed=0)

    assert len(meta.frames) == 6
    for frame in meta.frames:
        assert frame.face_box.within(64, 64)
        assert frame.face_box.w > 0 and frame.face_box.h > 0
        assert frame.gaze is not None


def test_face_box_clipped_to_frame():
    box = face_box_of(HeadShape(cx=2.0, cy=30.0, rx=8.0, ry=10.0), 32, 32)

    assert box.x == 0
    assert box.within(32, 32)


def test_foreground_mask():
    head = HeadShape(cx=16.0, cy=12.0, rx=5.0, ry=6.0)
    mask = foreground_mask(head, 32, 32)

    assert mask.shape == (1, 32, 32)
    assert set(torch.unique(mask).tolist()) == {0.0, 1.0}
    assert mask[0, 12, 16] == 1.0
    assert mask[0, 0, 0] == 0.0
    assert torch.count_nonzero(foreground_mask(None, 32, 32)) == 0


def test_synth_corpus_layout(tmp_path):
    root = tmp_path / "corpus"
    seen = []

    records = synth_corpus(root, n_videos=2, frames_per_video=3, size=32, seed=0,
                           progress=seen.append)

    assert seen == [0, 1]
    assert [r.path for r in records] == ["clip_0000", "clip_0001"]
    lines = (root / MANIFEST_NAME).read_text().splitlines()
    assert json.loads(lines[1])['identity_id'] == 1
    assert (root / "clip_0000" / META_NAME).exists()
    assert len(list((root / "clip_0001").glob("frame_*.png"))) == 3


def test_corpus_reader(corpus):
    assert len(corpus) == 3
    assert corpus.identities == [0, 1, 2]

    clip = corpus.load(0)
    assert isinstance(clip, VideoClip)
    assert clip.frames.shape == (12, 3, 32, 32)
    assert corpus.load(0) is clip
    assert len(corpus.meta(2).frames) == 12


def test_corpus_frames_survive_png(corpus, tiny_config):
    frames, _ = render_clip(0, 12, 32, seed=tiny_config.seed)
    loaded = corpus.load(0).frames.permute(0, 2, 3, 1).numpy()

    assert np.abs(loaded - frames).max() <= 0.5 / 255 + 1e-6


def test_missing_manifest(tmp_path):
    with pytest.raises(FileNotFoundError, match="manifest"):
        CorpusReader(tmp_path)
