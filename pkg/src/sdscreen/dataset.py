"""Screening dataset model and on-disk formats.

A dataset is a directory holding one ``manifest.txt`` plus one frames file per
(subject, question). The manifest is a deterministic ``key = value`` text
file; floats are written with ``repr`` so save -> load -> save is
byte-identical. Frames files are raw 8-bit grayscale:

    magic "RASF" | u32 frame count | u32 height | u32 width | pixels row-major
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, FormatError

__all__ = [
    "QUESTION_COUNT",
    "Subject",
    "Dataset",
    "sds_raw_sum",
    "sds_sum_classify",
    "dump_frames",
    "load_frames",
    "save_frames",
    "read_frames",
    "save_manifest",
    "load_manifest",
    "load_dataset",
    "load_question_frames",
]

QUESTION_COUNT = 20
FRAMES_MAGIC = b"RASF"
SDS_SUM_THRESHOLD = 50


@dataclass(frozen=True)
class Subject:
    """One participant: a filled questionnaire plus per-question video refs."""

    subject_id: str
    label: int
    choices: tuple[int, ...]
    times: tuple[float, ...]
    frame_files: tuple[str, ...]

    def validate(self) -> None:
        if not self.subject_id or any(c in self.subject_id for c in " ,=\n"):
            raise DataError(f"invalid subject id {self.subject_id!r}")
        if self.label not in (0, 1):
            raise DataError(f"subject {self.subject_id}: label must be 0 or 1, got {self.label}")
        for field_name, values in (("choices", self.choices), ("times", self.times),
                                   ("frames", self.frame_files)):
            if len(values) != QUESTION_COUNT:
                raise DataError(
                    f"subject {self.subject_id}: expected {QUESTION_COUNT} {field_name}, got {len(values)}"
                )
        for c in self.choices:
            if c not in (1, 2, 3, 4):
                raise DataError(f"subject {self.subject_id}: choice {c} outside 1..4")
        for t in self.times:
            if not (np.isfinite(t) and t > 0):
                raise DataError(f"subject {self.subject_id}: response time {t} must be positive")
        for name in self.frame_files:
            bad = not name or any(ch in name for ch in ",=\n")
            # Names must stay inside the dataset directory.
            if bad or Path(name).name != name:
                raise DataError(f"subject {self.subject_id}: invalid frames file name {name!r}")


@dataclass
class Dataset:
    fps: int
    height: int
    width: int
    subjects: list[Subject]
    root: Path | None = None

    def validate(self) -> None:
        if not (isinstance(self.fps, int) and self.fps > 0):
            raise DataError(f"fps must be a positive integer, got {self.fps!r}")
        if self.height < 1 or self.width < 1:
            raise DataError(f"frame extents must be positive, got {self.height}x{self.width}")
        if not self.subjects:
            raise DataError("dataset has no subjects")
        seen: set[str] = set()
        for s in self.subjects:
            s.validate()
            if s.subject_id in seen:
                raise DataError(f"duplicate subject id {s.subject_id!r}")
            seen.add(s.subject_id)

    @property
    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.subjects], dtype=np.int64)


def sds_raw_sum(choices: tuple[int, ...]) -> int:
    """Raw questionnaire score: the sum of the 20 chosen option values."""
    if len(choices) != QUESTION_COUNT:
        raise DataError(f"expected {QUESTION_COUNT} choices, got {len(choices)}")
    for c in choices:
        if c not in (1, 2, 3, 4):
            raise DataError(f"choice {c} outside 1..4")
    return int(sum(choices))


def sds_sum_classify(choices: tuple[int, ...], threshold: int = SDS_SUM_THRESHOLD) -> int:
    """Questionnaire-only baseline: positive iff the raw sum reaches threshold."""
    return 1 if sds_raw_sum(choices) >= threshold else 0


# ---------------------------------------------------------------------------
# frames files


def dump_frames(frames: np.ndarray) -> bytes:
    if frames.ndim != 3:
        raise DataError(f"frames array must be (N, H, W), got shape {frames.shape}")
    if frames.dtype != np.uint8:
        raise DataError(f"frames array must be uint8, got {frames.dtype}")
    n, h, w = frames.shape
    if n < 1 or h < 1 or w < 1:
        raise DataError(f"frames array extents must be positive, got {frames.shape}")
    header = FRAMES_MAGIC + struct.pack("<III", n, h, w)
    return header + np.ascontiguousarray(frames).tobytes(order="C")


def load_frames(blob: bytes) -> np.ndarray:
    if len(blob) < 4 or blob[:4] != FRAMES_MAGIC:
        raise FormatError("bad frames file magic at offset 0")
    if len(blob) < 16:
        raise FormatError(f"frames header truncated at offset {len(blob)}")
    n, h, w = struct.unpack("<III", blob[4:16])
    if n < 1 or h < 1 or w < 1:
        raise FormatError("frames header declares empty extents at offset 4")
    expected = 16 + n * h * w
    if len(blob) != expected:
        raise FormatError(
            f"frames payload ends at offset {len(blob)}, expected {expected} "
            f"for {n} frames of {h}x{w}"
        )
    return np.frombuffer(blob[16:], dtype=np.uint8).reshape(n, h, w).copy()


def save_frames(path: Path | str, frames: np.ndarray) -> None:
    Path(path).write_bytes(dump_frames(frames))


def read_frames(path: Path | str) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"frames file missing: {path}")
    return load_frames(path.read_bytes())


def load_question_frames(dataset: Dataset, subject: Subject, question_index: int) -> np.ndarray:
    """Read the recorded frames for one question of one subject."""
    if not 0 <= question_index < QUESTION_COUNT:
        raise DataError(f"question index {question_index} outside 0..{QUESTION_COUNT - 1}")
    if dataset.root is None:
        raise DataError("dataset has no root directory; frames are not on disk")
    return read_frames(dataset.root / subject.frame_files[question_index])


# ---------------------------------------------------------------------------
# manifest


def _format_float(x: float) -> str:
    return repr(float(x))


def save_manifest(dataset: Dataset, path: Path | str) -> None:
    dataset.validate()
    lines = [
        "format = sds-manifest",
        "version = 1",
        f"fps = {dataset.fps}",
        f"height = {dataset.height}",
        f"width = {dataset.width}",
        f"subject_count = {len(dataset.subjects)}",
        f"question_count = {QUESTION_COUNT}",
    ]
    for i, s in enumerate(dataset.subjects):
        lines.append(f"subject.{i}.id = {s.subject_id}")
        lines.append(f"subject.{i}.label = {s.label}")
        lines.append(f"subject.{i}.choices = {','.join(str(c) for c in s.choices)}")
        lines.append(f"subject.{i}.times = {','.join(_format_float(t) for t in s.times)}")
        lines.append(f"subject.{i}.frames = {','.join(s.frame_files)}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _parse_pairs(text: str) -> dict[str, str]:
    pairs: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise FormatError(f"manifest line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if not key:
            raise FormatError(f"manifest line {lineno}: empty key")
        if key in pairs:
            raise FormatError(f"manifest line {lineno}: duplicate key {key!r}")
        pairs[key] = value
    return pairs


def _pop(pairs: dict[str, str], key: str) -> str:
    if key not in pairs:
        raise FormatError(f"manifest missing key {key!r}")
    return pairs.pop(key)


def load_manifest(path: Path | str) -> Dataset:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"manifest missing: {path}")
    pairs = _parse_pairs(path.read_text(encoding="utf-8"))
    if _pop(pairs, "format") != "sds-manifest":
        raise FormatError("not a dataset manifest")
    if _pop(pairs, "version") != "1":
        raise FormatError("unsupported manifest version")
    try:
        fps = int(_pop(pairs, "fps"))
        height = int(_pop(pairs, "height"))
        width = int(_pop(pairs, "width"))
        count = int(_pop(pairs, "subject_count"))
        qcount = int(_pop(pairs, "question_count"))
    except ValueError as e:
        raise FormatError(f"manifest header: {e}") from None
    if qcount != QUESTION_COUNT:
        raise FormatError(f"manifest declares {qcount} questions, expected {QUESTION_COUNT}")
    if count < 1:
        raise FormatError("manifest declares no subjects")

    subjects: list[Subject] = []
    for i in range(count):
        prefix = f"subject.{i}."
        try:
            sid = _pop(pairs, prefix + "id")
            label = int(_pop(pairs, prefix + "label"))
            choices = tuple(int(v) for v in _pop(pairs, prefix + "choices").split(","))
            times = tuple(float(v) for v in _pop(pairs, prefix + "times").split(","))
            frames = tuple(_pop(pairs, prefix + "frames").split(","))
        except ValueError as e:
            raise FormatError(f"manifest subject {i}: {e}") from None
        subjects.append(Subject(sid, label, choices, times, frames))
    if pairs:
        raise FormatError(f"manifest has unknown keys: {sorted(pairs)}")

    dataset = Dataset(fps=fps, height=height, width=width, subjects=subjects, root=path.parent)
    dataset.validate()
    return dataset


def load_dataset(root: Path | str) -> Dataset:
    """Load a dataset directory and check every frames reference is usable.

    Each referenced file must exist and its header must declare the manifest's
    frame extents.
    """
    root = Path(root)
    dataset = load_manifest(root / "manifest.txt")
    for s in dataset.subjects:
        for name in s.frame_files:
            path = root / name
            if not path.is_file():
                raise DataError(f"subject {s.subject_id}: frames file missing: {name}")
            with open(path, "rb") as fh:
                header = fh.read(16)
            if len(header) < 16 or header[:4] != FRAMES_MAGIC:
                raise FormatError(f"{name}: bad frames file magic at offset 0")
            n, h, w = struct.unpack("<III", header[4:16])
            if (h, w) != (dataset.height, dataset.width):
                raise DataError(
                    f"subject {s.subject_id}: {name} holds {h}x{w} frames, "
                    f"manifest declares {dataset.height}x{dataset.width}"
                )
    return dataset
