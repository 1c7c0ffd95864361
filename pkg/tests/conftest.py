import copy
import os

import pytest
import torch
import yaml

from portraitdiff.core.config import ConfigManager
from portraitdiff.core.dataset import CorpusReader
from portraitdiff.core.model import build_model
from portraitdiff.core.synth import synth_corpus

# 32x32 frames, lossless f=4 codec (48 latent channels on an 8x8 grid), 2-level UNet
TINY = {
    'seed': 0,
    'codec': {'codec_id': 'space_to_depth', 'factor': 4},
    'unet': {
        'base_channels': 16,
        'channel_multipliers': [1, 2],
        'levels': 2,
        'attention_heads': 2,
        'context_dim': 32,
        'latent_channels': 48,
        'norm_groups': 8,
        'sample_size': 8,
    },
    'motion': {'channels': [8, 8, 16, 16], 'modulation_hidden': 16},
    'temporal': {'attention_heads': 2, 'max_frames': 16},
    'context': {'patch_size': 8, 'width': 32, 'layers': 1, 'heads': 2, 'image_size': 32},
    'sampler': {'steps': 3},
    'data': {'image_size': 32, 'n_videos': 3, 'frames_per_video': 12, 'gaze_top_fraction': 0.5},
    'training': {
        'stage1': {'clip_length': 4, 'stride': 2, 'steps': 2, 'log_every': 1},
        'gaze_ft': {'clip_length': 4, 'stride': 3, 'steps': 2, 'log_every': 1},
        'stage2': {'clip_length': 4, 'stride': 2, 'steps': 2, 'log_every': 1},
    },
    'inference': {'window': 4, 'overlap': 2, 'seed': 0},
}


def tiny_config_dict(workdir, corpus_path) -> dict:
    """Toy preset with the TINY overrides merged in"""
    config_dict = ConfigManager._deep_merge(ConfigManager.load_preset('toy'), copy.deepcopy(TINY))
    config_dict['workdir'] = str(workdir)
    config_dict['data']['corpus_path'] = str(corpus_path)
    return config_dict


@pytest.fixture
def tiny_config(tmp_path):
    """Validated RunConfig small enough for unit tests"""
    return ConfigManager.validate(
        tiny_config_dict(tmp_path / "runs", tmp_path / "corpus"), source="tiny fixture"
    )


@pytest.fixture
def tiny_model(tiny_config):
    model = build_model(tiny_config)
    model.eval()
    return model


@pytest.fixture
def corpus(tiny_config):
    """Synthetic corpus of 3 identities x 12 frames"""
    data = tiny_config.data
    synth_corpus(data.corpus_path, data.n_videos, data.frames_per_video, data.image_size,
                 seed=tiny_config.seed)
    return CorpusReader(data.corpus_path)


@pytest.fixture
def reference_inputs(tiny_config):
    """Random reference image with a centred square foreground"""
    size = tiny_config.data.image_size
    generator = torch.Generator().manual_seed(7)
    reference = torch.rand(3, size, size, generator=generator)
    mask = torch.zeros(1, size, size)
    mask[:, size // 4: 3 * size // 4, size // 4: 3 * size // 4] = 1.0
    return reference, mask


@pytest.fixture
def project(tmp_path, monkeypatch):
    """Project directory with a tiny portraitdiff.yaml, used as cwd"""
    config_dict = copy.deepcopy(TINY)
    config_dict['workdir'] = "runs"
    config_dict['data']['corpus_path'] = "corpus"
    (tmp_path / ConfigManager.DEFAULT_CONFIG_NAME).write_text(
        yaml.safe_dump(config_dict, sort_keys=False)
    )
    monkeypatch.chdir(tmp_path)
    return tmp_path


def pytest_collection_modifyitems(config, items):
    if os.environ.get("PORTRAITDIFF_SLOW"):
        return
    skip_slow = pytest.mark.skip(reason="set PORTRAITDIFF_SLOW=1 to run desk-scale acceptance")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)
