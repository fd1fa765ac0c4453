"""Whole-subject model: mode semantics, parameter registry, checkpoints."""

import dataclasses

import numpy as np
import pytest

from sdscreen.errors import ConfigError, FormatError
from sdscreen.model import (
    ModelConfig,
    init_model,
    load_checkpoint,
    load_subject_video,
    named_parameters,
    save_checkpoint,
    subject_forward,
)
from sdscreen.synth import SynthConfig, generate

CFG = ModelConfig(input_hw=12, clip_len=4, base_channels=2, feature_dim=4,
                  hidden=(8, 4), blocks=1, sigma=4.0, init_seed=2)


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    root = tmp_path_factory.mktemp("modeldata")
    cfg = SynthConfig(n_subjects=4, fps=1, height=12, width=12,
                      disagreement_rate=0.0, time_median_s=3.0,
                      time_min_s=2.0, time_max_s=5.0, clip_len=4, seed=9)
    return generate(cfg, root)


def test_config_validation():
    CFG.validate()
    with pytest.raises(ConfigError):
        dataclasses.replace(CFG, mode="hybrid").validate()
    with pytest.raises(ConfigError):
        dataclasses.replace(CFG, input_hw=7).validate()
    with pytest.raises(ConfigError):
        dataclasses.replace(CFG, sigma=0.0).validate()


def test_parameter_registry_order_and_modes():
    names = [n for n, _ in named_parameters(init_model(CFG))]
    assert names[0].startswith("enc.")
    assert "ras.omega0" in names and "ras.psi" in names
    assert names[-1] == "fusion.b3"
    assert len(names) == len(set(names))

    slf = init_model(dataclasses.replace(CFG, mode="slf"))
    slf_names = [n for n, _ in named_parameters(slf)]
    assert "fusion2.w1" in slf_names
    assert slf.fusion_alt is not None


def test_init_is_seed_deterministic():
    a = init_model(CFG)
    b = init_model(CFG)
    for (_, ta), (_, tb) in zip(named_parameters(a), named_parameters(b)):
        assert np.array_equal(ta.data, tb.data)
    c = init_model(dataclasses.replace(CFG, init_seed=3))
    changed = any(not np.array_equal(ta.data, tc.data)
                  for (_, ta), (_, tc) in zip(named_parameters(a), named_parameters(c)))
    assert changed


def randomized(params):
    rng = np.random.default_rng(0)
    for _, t in named_parameters(params):
        t.data = t.data + rng.normal(size=t.data.shape) * 0.05
    return params


def test_full_mode_needs_video(data):
    params = init_model(CFG)
    with pytest.raises(ConfigError):
        subject_forward(params, data.subjects[0], None)


def test_mlp_mode_ignores_video(data):
    params = randomized(init_model(dataclasses.replace(CFG, mode="mlp")))
    s = data.subjects[0]
    video = load_subject_video(data, s)
    p_none = subject_forward(params, s, None).p.item()
    p_video = subject_forward(params, s, video).p.item()
    assert p_none == p_video


def test_video_mode_ignores_choices(data):
    params = randomized(init_model(dataclasses.replace(CFG, mode="video")))
    s = data.subjects[0]
    video = load_subject_video(data, s)
    flipped = dataclasses.replace(s, choices=[5 - c for c in s.choices])
    assert subject_forward(params, s, video).p.item() == \
        subject_forward(params, flipped, video).p.item()
    # The full model does react to the choices.
    full = randomized(init_model(CFG))
    assert subject_forward(full, s, video).p.item() != \
        subject_forward(full, flipped, video).p.item()


def test_time_conditioning_toggle(data):
    s = data.subjects[0]
    video = load_subject_video(data, s)
    shifted = dataclasses.replace(s, times=[t + 1.0 for t in s.times])
    no_time = randomized(init_model(dataclasses.replace(CFG, use_time=False)))
    assert subject_forward(no_time, s, video).p.item() == \
        subject_forward(no_time, shifted, video).p.item()
    with_time = randomized(init_model(CFG))
    assert subject_forward(with_time, s, video).p.item() != \
        subject_forward(with_time, shifted, video).p.item()


def test_slf_mode_averages_two_heads(data):
    cfg = dataclasses.replace(CFG, mode="slf")
    params = randomized(init_model(cfg))
    s = data.subjects[0]
    video = load_subject_video(data, s)
    pred = subject_forward(params, s, video)
    p = pred.p.item()
    assert 0.0 < p < 1.0
    # out is the log-odds of the averaged probability.
    assert pred.out.item() == pytest.approx(np.log(p / (1.0 - p)), rel=1e-9)

    # The video head ignores choices and the score head ignores frames, so
    # the average must ignore neither.
    flipped = dataclasses.replace(s, choices=[5 - c for c in s.choices])
    assert subject_forward(params, flipped, video).p.item() != p


def test_slf_needs_second_head(data):
    params = init_model(dataclasses.replace(CFG, mode="slf"))
    params.fusion_alt = None
    with pytest.raises(ConfigError):
        subject_forward(params, data.subjects[0],
                        load_subject_video(data, data.subjects[0]))


def test_checkpoint_roundtrip_and_errors(data, tmp_path):
    params = randomized(init_model(CFG))
    m = {n: np.full_like(t.data, 0.25) for n, t in named_parameters(params)}
    v = {n: np.full_like(t.data, 0.5) for n, t in named_parameters(params)}
    path = tmp_path / "weights.ckpt"
    save_checkpoint(path, params, m, v, adam_t=7, epochs_done=3)

    fresh = init_model(CFG)
    m2, v2, t2, done = load_checkpoint(path, fresh)
    assert (t2, done) == (7, 3)
    for (n, a), (_, b) in zip(named_parameters(params), named_parameters(fresh)):
        assert np.array_equal(a.data, b.data), n
        assert np.array_equal(m2[n], m[n])
        assert np.array_equal(v2[n], v[n])

    with pytest.raises(FormatError, match="missing"):
        load_checkpoint(tmp_path / "nope.ckpt", fresh)

    # A checkpoint from a different architecture must be refused.
    wider = init_model(dataclasses.replace(CFG, feature_dim=8))
    with pytest.raises(FormatError):
        load_checkpoint(path, wider)
