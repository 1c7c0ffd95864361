import itertools
from collections import Counter

import numpy as np
import pytest
import torch

from portraitdiff.core.augment import mask_face
from portraitdiff.core.dataset import (
    CorpusReader, SampleBuilder, TrainingClipDataset, clip_span, filter_top_fraction,
    gaze_change_score, gaze_filtered_indices, mix_sampler, sample_clip,
)
from portraitdiff.core.synth import synth_corpus
from portraitdiff.core.video import VideoClip
from portraitdiff.errors import ClipTooShortError
from portraitdiff.models.clip import FaceBox, FrameMeta


def indexed_video(n=192, size=8):
    """Frame i is filled with i / n so selections can be read back"""
    frames = (torch.arange(n, dtype=torch.float32) / n)[:, None, None, None].expand(n, 3, size, size)
    meta = tuple(FrameMeta(face_box=FaceBox(x=0, y=0, w=size, h=size), gaze=(0.0, 0.0))
                 for _ in range(n))
    return VideoClip(frames.contiguous(), meta, identity_id=0)


def _frame_ids(clip, n=192):
    return [round(v * n) for v in clip.frames[:, 0, 0, 0].tolist()]


def test_clip_span():
    assert clip_span(16, 2) == 31
    assert clip_span(16, 12) == 181
    assert clip_span(1, 5) == 1


def test_sample_clip_indices():
    clip, ref_index = sample_clip(indexed_video(), 16, 2, np.random.default_rng(0), start=0)

    assert _frame_ids(clip) == list(range(0, 31, 2))
    assert 0 <= ref_index < 16


def test_sample_clip_random_start_fits():
    rng = np.random.default_rng(3)
    for _ in range(20):
        clip, _ = sample_clip(indexed_video(), 16, 12, rng)
        ids = _frame_ids(clip)
        assert ids[-1] - ids[0] == 180
        assert ids[-1] < 192


def test_sample_clip_too_short():
    with pytest.raises(ClipTooShortError, match="need 31"):
        sample_clip(indexed_video(n=30), 16, 2, np.random.default_rng(0))


def test_sample_clip_bad_start():
    with pytest.raises(ValueError, match="start"):
        sample_clip(indexed_video(n=40), 16, 2, np.random.default_rng(0), start=20)


def test_gaze_score_values():
    assert gaze_change_score([(5.0, 3.0)] * 4) == 0.0
    assert gaze_change_score([(0.0, 0.0), (10.0, 0.0), (12.0, 0.0)]) == pytest.approx(10.0)
    assert gaze_change_score([(0.0, 0.0), None]) is None


def test_gaze_score_on_clip():
    assert gaze_change_score(indexed_video(n=4)) == 0.0


def test_filter_matches_brute_force():
    rng = np.random.default_rng(0)
    scores = {i: float(s) for i, s in enumerate(rng.uniform(0, 30, 40))}
    scores[41] = None

    result = filter_top_fraction(scores, 0.1)

    brute = sorted((k for k in scores if scores[k] is not None), key=lambda k: -scores[k])[:4]
    assert result.selected == brute
    assert result.excluded == [41]


def test_filter_keeps_at_least_one_and_breaks_ties_by_key():
    assert filter_top_fraction({3: 1.0, 1: 1.0, 2: 0.5}, 0.01).selected == [1]
    with pytest.raises(ValueError):
        filter_top_fraction({0: 1.0}, 0.0)


def test_filter_with_no_gaze():
    result = filter_top_fraction({0: None, 1: None}, 0.5)

    assert result.selected == []
    assert result.excluded == [0, 1]


def test_mix_proportions():
    rng = np.random.default_rng(0)
    draws = itertools.islice(mix_sampler(['s'], ['y'], ['r'], (0.4, 0.1, 0.5), rng), 10_000)
    counts = Counter(tag for tag, _ in draws)

    assert counts['swapped'] / 10_000 == pytest.approx(0.4, abs=0.02)
    assert counts['stylized'] / 10_000 == pytest.approx(0.1, abs=0.02)
    assert counts['real'] / 10_000 == pytest.approx(0.5, abs=0.02)


@pytest.mark.parametrize("proportions,tag", [((0, 0, 1), 'real'), ((1, 0, 0), 'swapped')])
def test_mix_degenerate_proportions(proportions, tag):
    draws = itertools.islice(
        mix_sampler(['s'], ['y'], ['r'], proportions, np.random.default_rng(0)), 200
    )
    assert {t for t, _ in draws} == {tag}


def test_mix_empty_pool_falls_back_to_real():
    draws = list(itertools.islice(
        mix_sampler([], ['y'], ['r'], (1, 0, 0), np.random.default_rng(0)), 50
    ))

    assert draws == [('real', 'r')] * 50


def test_mix_rejects_bad_input():
    with pytest.raises(ValueError, match="sum to 1"):
        next(mix_sampler(['s'], ['y'], ['r'], (0.5, 0.5, 0.5), np.random.default_rng(0)))
    with pytest.raises(ValueError, match="real pool"):
        next(mix_sampler(['s'], ['y'], [], (1, 0, 0), np.random.default_rng(0)))


def test_gaze_filtered_indices(corpus):
    result = gaze_filtered_indices(corpus, 0.5)

    assert len(result.selected) == 2
    assert result.excluded == []


def test_clip_cache_is_bounded(corpus):
    reader = CorpusReader(corpus.root, cache_size=2)

    first = reader.load(0)
    reader.load(1)
    assert reader.load(0) is first
    reader.load(2)

    assert reader.cached == [0, 2]
    assert reader.load(0) is first
    assert reader.cached == [2, 0]
    assert torch.equal(reader.load(1).frames, corpus.load(1).frames)
    assert len(reader.cached) == 2


def test_clip_cache_disabled(corpus):
    reader = CorpusReader(corpus.root, cache_size=0)

    assert reader.load(1) is not reader.load(1)
    assert reader.cached == []


def test_gaze_filter_on_large_corpus_matches_brute_force(tmp_path):
    synth_corpus(tmp_path, 200, 16, 32, seed=3)
    reader = CorpusReader(tmp_path)

    result = gaze_filtered_indices(reader, 0.05)

    def max_change(index):
        gaze = np.radians(np.array([f.gaze for f in reader.meta(index).frames]))
        yaw, pitch = gaze[:, 0], gaze[:, 1]
        v = np.stack([np.cos(pitch) * np.sin(yaw), np.sin(pitch), np.cos(pitch) * np.cos(yaw)], 1)
        cross = np.linalg.norm(np.cross(v[:-1], v[1:]), axis=1)
        return np.degrees(np.arctan2(cross, (v[:-1] * v[1:]).sum(1))).max()

    brute = sorted(range(200), key=max_change, reverse=True)[:10]
    assert len(result.selected) == 10
    assert sorted(result.selected) == sorted(brute)
    assert result.excluded == []


def test_sample_is_pure_function_of_index(corpus, tiny_config):
    builder = SampleBuilder(corpus, tiny_config.data, tiny_config.training.stage1, seed=0)

    a, b = builder.build(5), builder.build(5)

    assert a.source_tag == b.source_tag
    assert torch.equal(a.driving.frames, b.driving.frames)
    assert torch.equal(a.target.frames, b.target.frames)


def check_samples(corpus, config, draws):
    stage = config.training.stage1
    builder = SampleBuilder(corpus, config.data, stage, seed=0)
    tags = Counter()

    for index in range(draws):
        sample = builder.build(index)
        video = corpus.load(corpus.identities.index(sample.target.identity_id))

        assert len(sample.driving) == len(sample.target) == stage.clip_length
        assert sample.target.source_tag == 'real'
        for frame in sample.target.frames:
            assert any(torch.equal(frame, f) for f in video.frames)
        assert torch.equal(sample.reference, sample.target.frames[sample.ref_index])
        assert sample.ref_mask.shape == (1, 32, 32)
        for frame, box in zip(sample.driving.frames, sample.driving.face_boxes):
            assert torch.equal(mask_face(frame, box), frame)
        tags[sample.source_tag] += 1
    return tags


def test_samples_are_consistent(corpus, tiny_config):
    check_samples(corpus, tiny_config, draws=12)


@pytest.mark.slow
def test_thousand_samples_are_consistent(corpus, tiny_config):
    tags = check_samples(corpus, tiny_config, draws=1000)

    assert sum(tags.values()) == 1000
    assert set(tags) <= {'swapped', 'stylized', 'real'}


def test_builder_rejects_short_corpus(corpus, tiny_config):
    stage = tiny_config.training.stage1.model_copy(update={'clip_length': 16, 'stride': 12})
    with pytest.raises(ClipTooShortError):
        SampleBuilder(corpus, tiny_config.data, stage)


def test_builder_restricted_to_indices(corpus, tiny_config):
    builder = SampleBuilder(corpus, tiny_config.data, tiny_config.training.gaze_ft, indices=[1])

    assert builder.eligible == [1]
    for index in range(6):
        assert builder.build(index).target.identity_id == corpus.records[1].identity_id


def test_dataset_items(corpus, tiny_config):
    builder = SampleBuilder(corpus, tiny_config.data, tiny_config.training.stage1)
    dataset = TrainingClipDataset(builder, length=3)

    item = dataset[2]

    assert len(dataset) == 3
    assert item['driving'].shape == (4, 3, 32, 32)
    assert item['target'].shape == (4, 3, 32, 32)
    assert item['reference'].shape == (3, 32, 32)
    assert item['source_tag'] in ('swapped', 'stylized', 'real')
