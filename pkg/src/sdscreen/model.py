"""Whole-subject model: encoder + attention + fusion, with mode variants.

Modes:
    full   one head on [video | score | time] per question
    video  same head with the score slots zeroed
    mlp    same head with the video slots zeroed; the encoder and attention
           are skipped entirely (their inputs cannot influence the output)
    slf    two jointly trained heads, one on [video | 0 | time] and one on
           [0 | score | time]; the subject probability is their average

Checkpoints are named-array containers holding every parameter, the optimizer
moments, and the finished-epoch counter.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .clipper import segment
from .dataset import QUESTION_COUNT, Dataset, Subject, load_question_frames
from .encoder3d import EncoderParams, build_plan, encode_question_clips, init_encoder
from .errors import ConfigError, FormatError
from .fusion import (
    SCORE_DIM,
    FusionParams,
    Prediction,
    clamp_prob,
    encode_score,
    fuse_question,
    init_fusion,
    predict_subject,
)
from .numerics import (
    Tensor,
    add,
    add_scalar,
    div,
    dump_container,
    load_container,
    log,
    mul_scalar,
)
from .ras import RasConfig, RasParams, encode_question, init_ras

__all__ = [
    "MODES",
    "ModelConfig",
    "ModelParams",
    "init_model",
    "named_parameters",
    "SubjectVideo",
    "load_subject_video",
    "subject_forward",
    "save_checkpoint",
    "load_checkpoint",
]

MODES = ("full", "video", "mlp", "slf")


@dataclass(frozen=True)
class ModelConfig:
    input_hw: int = 110
    clip_len: int = 10
    base_channels: int = 16
    feature_dim: int = 128
    hidden: tuple[int, int] = (1024, 256)
    blocks: int = 5
    sigma: float = 10.0
    use_difference: bool = True
    use_delta: bool = True
    per_block_affinity: bool = False
    use_time: bool = True
    mode: str = "full"
    init_seed: int = 0

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        self.ras_config().validate()
        build_plan(self.input_hw, self.clip_len, self.base_channels, self.feature_dim)

    def ras_config(self) -> RasConfig:
        return RasConfig(
            blocks=self.blocks,
            sigma=self.sigma,
            use_difference=self.use_difference,
            use_delta=self.use_delta,
            per_block_affinity=self.per_block_affinity,
        )


@dataclass
class ModelParams:
    config: ModelConfig
    encoder: EncoderParams
    ras: RasParams
    fusion: FusionParams
    fusion_alt: FusionParams | None = None


def init_model(config: ModelConfig) -> ModelParams:
    config.validate()
    rng = np.random.default_rng(np.random.SeedSequence((config.init_seed, 0xD0)))
    plan = build_plan(config.input_hw, config.clip_len, config.base_channels,
                      config.feature_dim)
    encoder = init_encoder(plan, rng)
    ras = init_ras(config.feature_dim, config.ras_config(), rng)
    fusion = init_fusion(config.feature_dim, config.hidden, rng)
    fusion_alt = init_fusion(config.feature_dim, config.hidden, rng) if config.mode == "slf" else None
    return ModelParams(config, encoder, ras, fusion, fusion_alt)


def named_parameters(params: ModelParams) -> list[tuple[str, Tensor]]:
    """Every learnable tensor in a fixed, stable order."""
    named = params.encoder.named_parameters()
    named += params.ras.named_parameters()
    named += params.fusion.named_parameters("fusion")
    if params.fusion_alt is not None:
        named += params.fusion_alt.named_parameters("fusion2")
    return named


@dataclass
class SubjectVideo:
    """Raw per-question frames kept in memory (uint8), segmented on demand."""

    frames: list[np.ndarray] = field(default_factory=list)


def load_subject_video(dataset: Dataset, subject: Subject) -> SubjectVideo:
    return SubjectVideo(frames=[
        load_question_frames(dataset, subject, q) for q in range(QUESTION_COUNT)
    ])


def _question_features(params: ModelParams, video: SubjectVideo) -> list[Tensor]:
    features = []
    for frames in video.frames:
        clips = segment(frames, clip_len=params.config.clip_len)
        clip_features, positions = encode_question_clips(clips, params.encoder)
        features.append(encode_question(clip_features, positions, params.ras,
                                        params.config.ras_config()))
    return features


def _zero_features(params: ModelParams) -> list[Tensor]:
    zero = Tensor(np.zeros(params.config.feature_dim))
    return [zero] * QUESTION_COUNT


def _fused(params: ModelParams, video_feats: list[Tensor], subject: Subject,
           zero_scores: bool) -> list[Tensor]:
    vectors = []
    for q in range(QUESTION_COUNT):
        score = np.zeros(SCORE_DIM) if zero_scores else encode_score(subject.choices[q])
        vectors.append(fuse_question(video_feats[q], score, subject.times[q],
                                     use_time=params.config.use_time))
    return vectors


def subject_forward(params: ModelParams, subject: Subject,
                    video: SubjectVideo | None) -> Prediction:
    """Predict one subject. ``video`` may be None only in mlp mode."""
    mode = params.config.mode
    if mode == "mlp":
        return predict_subject(_fused(params, _zero_features(params), subject,
                                      zero_scores=False), params.fusion)
    if video is None:
        raise ConfigError(f"mode {mode!r} needs video input")
    feats = _question_features(params, video)
    if mode == "full":
        return predict_subject(_fused(params, feats, subject, zero_scores=False),
                               params.fusion)
    if mode == "video":
        return predict_subject(_fused(params, feats, subject, zero_scores=True),
                               params.fusion)
    # slf: average the probabilities of a video-only and a score-only head,
    # then recover the pre-activation scalar so downstream code sees the
    # usual (out, p) pair.
    if params.fusion_alt is None:
        raise ConfigError("slf mode needs the second fusion head")
    video_head = predict_subject(_fused(params, feats, subject, zero_scores=True),
                                 params.fusion)
    score_head = predict_subject(_fused(params, _zero_features(params), subject,
                                        zero_scores=False), params.fusion_alt)
    p = mul_scalar(add(video_head.p, score_head.p), 0.5)
    pc = clamp_prob(p)
    out = log(div(pc, add_scalar(mul_scalar(pc, -1.0), 1.0)))
    return Prediction(out=out, p=p)


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path: Path | str, params: ModelParams,
                    adam_m: dict[str, np.ndarray], adam_v: dict[str, np.ndarray],
                    adam_t: int, epochs_done: int) -> None:
    entries: dict[str, np.ndarray] = {}
    for name, tensor in named_parameters(params):
        entries[f"param.{name}"] = tensor.data
        entries[f"adam.m.{name}"] = adam_m[name]
        entries[f"adam.v.{name}"] = adam_v[name]
    entries["adam.t"] = np.array(float(adam_t))
    entries["meta.epochs_done"] = np.array(float(epochs_done))
    Path(path).write_bytes(dump_container(entries))


def load_checkpoint(path: Path | str, params: ModelParams
                    ) -> tuple[dict[str, np.ndarray], dict[str, np.ndarray], int, int]:
    """Load weights into ``params`` in place; returns (m, v, t, epochs_done)."""
    path = Path(path)
    if not path.is_file():
        raise FormatError(f"checkpoint missing: {path}")
    entries = load_container(path.read_bytes())
    adam_m: dict[str, np.ndarray] = {}
    adam_v: dict[str, np.ndarray] = {}
    for name, tensor in named_parameters(params):
        for prefix, sink in (("param.", None), ("adam.m.", adam_m), ("adam.v.", adam_v)):
            key = prefix + name
            if key not in entries:
                raise FormatError(f"checkpoint lacks entry {key!r}")
            arr = entries.pop(key)
            if arr.shape != tensor.data.shape:
                raise FormatError(
                    f"checkpoint entry {key!r} has shape {arr.shape}, "
                    f"model expects {tensor.data.shape}")
            if sink is None:
                tensor.data = np.ascontiguousarray(arr)
            else:
                sink[name] = arr
    for key in ("adam.t", "meta.epochs_done"):
        if key not in entries:
            raise FormatError(f"checkpoint lacks entry {key!r}")
    adam_t = int(entries.pop("adam.t").reshape(()))
    epochs_done = int(entries.pop("meta.epochs_done").reshape(()))
    if entries:
        raise FormatError(f"checkpoint has unexpected entries: {sorted(entries)[:4]}")
    return adam_m, adam_v, adam_t, epochs_done
