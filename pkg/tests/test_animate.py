import pytest
import torch

from portraitdiff.core.animate import (
    animate, beats_baseline_fraction, blend_windows, copy_reference_baseline, frame_noise,
    generate_window, plan_windows, psnr,
)
from portraitdiff.core.audit import brute_force_coverage
from portraitdiff.core.schedule import DDIMSampler, NoiseSchedule
from portraitdiff.errors import CoverageError, ShapeError
from portraitdiff.models.clip import FaceBox


@pytest.fixture
def sampler(tiny_config):
    return DDIMSampler.from_config(NoiseSchedule.from_config(tiny_config.schedule), tiny_config.sampler)


@pytest.fixture
def driving(corpus):
    return corpus.load(1)


def test_plan_regular_windows():
    plan = plan_windows(40, 16, 8)

    assert [s for s, _ in plan.windows] == [0, 8, 16, 24]
    assert plan.windows[-1] == (24, 40)


def test_plan_clamps_last_window():
    assert plan_windows(20, 16, 8).windows == ((0, 16), (4, 20))


def test_plan_short_clip_single_window():
    plan = plan_windows(10, 16, 8)

    assert plan.windows == ((0, 10),)
    assert plan.coverage() == [1] * 10


@pytest.mark.parametrize("window,overlap", [(4, 0), (4, 2), (8, 3), (16, 8)])
def test_plan_coverage_one_or_two(window, overlap):
    for total in range(1, 80):
        plan = plan_windows(total, window, overlap)
        coverage = plan.coverage()

        assert coverage == brute_force_coverage(plan.windows, total)
        assert 1 <= min(coverage) and max(coverage) <= 2
        assert all(e - s == min(window, total) for s, e in plan.windows)


@pytest.mark.parametrize("total,window,overlap", [(10, 4, 4), (10, 4, 5), (10, 0, 0), (0, 4, 2)])
def test_plan_rejects_bad_arguments(total, window, overlap):
    with pytest.raises(ValueError):
        plan_windows(total, window, overlap)


def test_blend_single_window_is_identity():
    plan = plan_windows(3, 4, 2)
    out = torch.randn(3, 2, 2)

    assert torch.equal(blend_windows(plan, [out]), out)


def test_blend_averages_overlap():
    plan = plan_windows(6, 4, 2)
    a = torch.zeros(4, 1)
    b = torch.ones(4, 1)

    blended = blend_windows(plan, [a, b])

    assert plan.windows == ((0, 4), (2, 6))
    assert blended.flatten().tolist() == [0.0, 0.0, 0.5, 0.5, 1.0, 1.0]


def test_blend_rejects_wrong_outputs():
    plan = plan_windows(6, 4, 2)
    with pytest.raises(ShapeError, match="window outputs"):
        blend_windows(plan, [torch.zeros(4, 1)])
    with pytest.raises(ShapeError, match="produced 3 frames"):
        blend_windows(plan, [torch.zeros(4, 1), torch.zeros(3, 1)])


def test_blend_detects_holes():
    plan = plan_windows(6, 4, 2)
    gapped = type(plan)(((0, 2), (4, 6)), 2, 0, 6)
    with pytest.raises(CoverageError, match="not covered"):
        blend_windows(gapped, [torch.zeros(2, 1), torch.zeros(2, 1)])


def test_frame_noise_keyed_by_absolute_index():
    full = frame_noise(range(6), (2, 3, 3), seed=5)
    window = frame_noise([3, 4, 5], (2, 3, 3), seed=5)

    assert torch.equal(full[3:], window)
    assert not torch.equal(full[0], full[1])
    assert not torch.equal(frame_noise([0], (2, 3, 3), seed=6)[0], full[0])


def test_generate_window_length_mismatch(tiny_model, reference_inputs, driving, sampler):
    reference, mask = reference_inputs
    with torch.no_grad():
        state = tiny_model.prepare_reference(reference, mask)
        bundle = tiny_model.condition(driving.frames[:3], state)
    with pytest.raises(ShapeError, match="got 3 driving frames"):
        generate_window(tiny_model, state, bundle, sampler, torch.zeros(4, 48, 8, 8))


def test_animate_outputs_every_frame(tiny_model, tiny_config, reference_inputs, driving, sampler):
    reference, mask = reference_inputs
    windows = []

    result = animate(tiny_model, reference, mask, driving, tiny_config.inference, sampler,
                     progress=windows.append)

    assert result.frames.shape == (12, 3, 32, 32)
    assert result.latents.shape == (12, 48, 8, 8)
    assert result.frames.min() >= 0 and result.frames.max() <= 1
    assert windows == list(range(len(result.plan.windows)))
    assert result.plan.windows == ((0, 4), (2, 6), (4, 8), (6, 10), (8, 12))


def test_animate_is_deterministic(tiny_model, tiny_config, reference_inputs, driving, sampler):
    reference, mask = reference_inputs
    a = animate(tiny_model, reference, mask, driving, tiny_config.inference, sampler)
    b = animate(tiny_model, reference, mask, driving, tiny_config.inference, sampler)

    assert torch.equal(a.frames, b.frames)


def test_animate_parallel_windows_match(tiny_model, tiny_config, reference_inputs, driving, sampler):
    reference, mask = reference_inputs
    serial = animate(tiny_model, reference, mask, driving, tiny_config.inference, sampler)
    parallel_config = tiny_config.inference.model_copy(update={'max_workers': 3})
    parallel = animate(tiny_model, reference, mask, driving, parallel_config, sampler)

    assert torch.equal(serial.latents, parallel.latents)


def test_animate_seed_changes_output(tiny_model, tiny_config, reference_inputs, driving, sampler):
    reference, mask = reference_inputs
    a = animate(tiny_model, reference, mask, driving, tiny_config.inference, sampler)
    other = tiny_config.inference.model_copy(update={'seed': 1})
    b = animate(tiny_model, reference, mask, driving, other, sampler)

    assert not torch.equal(a.latents, b.latents)


def test_animate_size_mismatch(tiny_model, tiny_config, driving, sampler):
    with pytest.raises(ShapeError, match="sizes differ"):
        animate(tiny_model, torch.rand(3, 16, 16), torch.zeros(1, 16, 16), driving,
                tiny_config.inference, sampler)


def test_appearance_transfer_needs_box(tiny_model, tiny_config, reference_inputs, driving, sampler):
    reference, mask = reference_inputs
    config = tiny_config.inference.model_copy(update={'appearance_transfer': True})
    with pytest.raises(ValueError, match="reference face box"):
        animate(tiny_model, reference, mask, driving, config, sampler)

    result = animate(tiny_model, reference, mask, driving, config, sampler,
                     reference_box=FaceBox(x=8, y=8, w=16, h=16))
    assert result.frames.shape[0] == len(driving)


def test_psnr():
    target = torch.zeros(2, 3, 4, 4)
    prediction = target.clone()
    prediction[1] += 0.1

    values = psnr(prediction, target)

    assert values[0].item() == pytest.approx(120.0)
    assert values[1].item() == pytest.approx(20.0, abs=1e-4)


def test_copy_reference_baseline():
    reference = torch.rand(3, 4, 4)
    baseline = copy_reference_baseline(reference, 3)

    assert baseline.shape == (3, 3, 4, 4)
    assert torch.equal(baseline[2], reference)


def test_beats_baseline_fraction():
    target = torch.rand(4, 3, 4, 4)
    reference = torch.rand(3, 4, 4)

    assert beats_baseline_fraction(target, reference, target) == 1.0
    assert beats_baseline_fraction(copy_reference_baseline(reference, 4), reference, target) == 0.0
