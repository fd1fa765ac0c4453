"""Dataset model: manifest text format, frame files, validation, sum rule."""

import numpy as np
import pytest

from sdscreen.dataset import (
    Dataset,
    Subject,
    dump_frames,
    load_dataset,
    load_frames,
    load_manifest,
    load_question_frames,
    read_frames,
    save_frames,
    save_manifest,
    sds_raw_sum,
    sds_sum_classify,
)
from sdscreen.errors import DataError, FormatError


def make_subject(i=0, label=0, total=None):
    choices = [1] * 20
    if total is not None:
        choices = balanced_choices(total)
    return Subject(
        subject_id=f"s{i:04d}",
        label=label,
        choices=choices,
        times=[2.0] * 20,
        frame_files=[f"s{i:04d}_q{q + 1:02d}.rasf" for q in range(20)],
    )


def balanced_choices(total):
    choices = [1] * 20
    extra = total - 20
    q = 0
    while extra > 0:
        if choices[q] < 4:
            choices[q] += 1
            extra -= 1
        q = (q + 1) % 20
    return choices


def make_dataset(n=2, root=None):
    subjects = [make_subject(i, label=i % 2) for i in range(n)]
    return Dataset(fps=5, height=8, width=8, subjects=subjects, root=root)


def test_sum_threshold_boundaries():
    assert sds_raw_sum(balanced_choices(49)) == 49
    assert sds_sum_classify(balanced_choices(49)) == 0
    assert sds_sum_classify(balanced_choices(50)) == 1
    assert sds_sum_classify(balanced_choices(80)) == 1
    assert sds_sum_classify(balanced_choices(20)) == 0


def test_sum_classify_rejects_bad_choices():
    with pytest.raises(DataError):
        sds_sum_classify([1] * 19)
    with pytest.raises(DataError):
        sds_sum_classify([0] + [1] * 19)
    with pytest.raises(DataError):
        sds_sum_classify([5] + [1] * 19)


def test_subject_validation():
    s = make_subject()
    s.validate()
    bad = Subject(subject_id="s0", label=2, choices=s.choices, times=s.times,
                  frame_files=s.frame_files)
    with pytest.raises(DataError):
        bad.validate()
    bad = Subject(subject_id="s0", label=0, choices=s.choices,
                  times=[0.0] + [2.0] * 19, frame_files=s.frame_files)
    with pytest.raises(DataError):
        bad.validate()
    bad = Subject(subject_id="s0", label=0, choices=s.choices, times=s.times,
                  frame_files=["../evil.rasf"] + s.frame_files[1:])
    with pytest.raises(DataError):
        bad.validate()


def test_dataset_validation_catches_duplicate_ids():
    d = make_dataset(2)
    dupe = Dataset(fps=5, height=8, width=8,
                   subjects=[d.subjects[0], d.subjects[0]])
    with pytest.raises(DataError):
        dupe.validate()


def test_frames_roundtrip_bitexact():
    r = np.random.default_rng(3)
    frames = r.integers(0, 256, size=(12, 6, 7)).astype(np.uint8)
    back = load_frames(dump_frames(frames))
    assert back.dtype == np.uint8
    assert np.array_equal(back, frames)


def test_frames_bad_magic_names_offset():
    blob = b"BAD!" + dump_frames(np.zeros((1, 2, 2), np.uint8))[4:]
    with pytest.raises(FormatError, match="offset 0"):
        load_frames(blob)


def test_frames_truncation_names_offsets():
    blob = dump_frames(np.zeros((2, 3, 3), np.uint8))
    with pytest.raises(FormatError, match="offset"):
        load_frames(blob[:-1])


def test_frames_trailing_bytes_rejected():
    blob = dump_frames(np.zeros((1, 2, 2), np.uint8))
    with pytest.raises(FormatError):
        load_frames(blob + b"x")


def test_frames_file_roundtrip(tmp_path):
    frames = np.arange(2 * 3 * 4, dtype=np.uint8).reshape(2, 3, 4)
    path = tmp_path / "clip.rasf"
    save_frames(path, frames)
    assert np.array_equal(read_frames(path), frames)


def test_manifest_roundtrip_byte_identical(tmp_path):
    d = make_dataset(3)
    path = tmp_path / "manifest.txt"
    save_manifest(d, path)
    first = path.read_bytes()
    back = load_manifest(path)
    save_manifest(back, path)
    assert path.read_bytes() == first
    assert back.fps == d.fps
    assert [s.subject_id for s in back.subjects] == [s.subject_id for s in d.subjects]
    assert all(tuple(a.choices) == tuple(b.choices)
               for a, b in zip(back.subjects, d.subjects))
    assert all(tuple(a.times) == tuple(b.times)
               for a, b in zip(back.subjects, d.subjects))


def test_manifest_comments_and_blanks_ignored(tmp_path):
    d = make_dataset(1)
    path = tmp_path / "manifest.txt"
    save_manifest(d, path)
    text = path.read_text()
    path.write_text("# header comment\n\n" + text)
    assert load_manifest(path).subjects[0].subject_id == "s0000"


def test_manifest_duplicate_key_rejected(tmp_path):
    path = tmp_path / "manifest.txt"
    save_manifest(make_dataset(1), path)
    with path.open("a") as fh:
        fh.write("fps=9\n")
    with pytest.raises(FormatError, match="duplicate"):
        load_manifest(path)


def test_manifest_unknown_key_rejected(tmp_path):
    path = tmp_path / "manifest.txt"
    save_manifest(make_dataset(1), path)
    with path.open("a") as fh:
        fh.write("mystery=1\n")
    with pytest.raises(FormatError, match="mystery"):
        load_manifest(path)


def test_manifest_missing_key_rejected(tmp_path):
    path = tmp_path / "manifest.txt"
    save_manifest(make_dataset(1), path)
    lines = [ln for ln in path.read_text().splitlines()
             if not ln.startswith("subject.0.times")]
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(FormatError):
        load_manifest(path)


def test_load_dataset_checks_frame_files(tmp_path):
    d = make_dataset(1, root=tmp_path)
    frames = np.zeros((5, 8, 8), np.uint8)
    for name in d.subjects[0].frame_files:
        save_frames(tmp_path / name, frames)
    save_manifest(d, tmp_path / "manifest.txt")
    loaded = load_dataset(tmp_path)
    assert loaded.root == tmp_path
    got = load_question_frames(loaded, loaded.subjects[0], 0)
    assert got.shape == (5, 8, 8)

    (tmp_path / d.subjects[0].frame_files[3]).unlink()
    with pytest.raises(DataError, match="missing"):
        load_dataset(tmp_path)


def test_load_dataset_rejects_wrong_frame_geometry(tmp_path):
    d = make_dataset(1, root=tmp_path)
    for name in d.subjects[0].frame_files:
        save_frames(tmp_path / name, np.zeros((5, 8, 8), np.uint8))
    # One file with mismatched height/width.
    save_frames(tmp_path / d.subjects[0].frame_files[0],
                np.zeros((5, 9, 8), np.uint8))
    save_manifest(d, tmp_path / "manifest.txt")
    with pytest.raises(DataError):
        load_dataset(tmp_path)
