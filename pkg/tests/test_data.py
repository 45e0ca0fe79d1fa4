"""Label assignment, clip handling, splits and the sequence file format."""

import numpy as np
import pytest

from gaitrisk.data import (
    FRAME_H,
    FRAME_W,
    DatasetIndex,
    Grade,
    Group,
    SequenceFormatError,
    SequenceMeta,
    SilhouetteSequence,
    SubjectRecord,
    assign_group,
    grade_phq,
    grade_sds,
    load_index,
    pad_by_repetition,
    read_sequence,
    sample_training_clip,
    save_index,
    split_subjects,
    write_sequence,
)


def make_seq(t=8, fill=None, subject="S0001", view=1, attire="no_coat",
             direction="toward", rng=None):
    if fill is not None:
        frames = np.full((t, FRAME_H, FRAME_W), fill, dtype=np.uint8)
    else:
        frames = (rng.random((t, FRAME_H, FRAME_W)) < 0.3).astype(np.uint8)
    meta = SequenceMeta(subject_id=subject, view_id=view, attire=attire,
                        direction=direction)
    return SilhouetteSequence(frames=frames, meta=meta)


# ---------------------------------------------------------------------------
# group assignment and grading
# ---------------------------------------------------------------------------

def test_assign_group_threshold_examples():
    assert assign_group(63, 12) is Group.EXPERIMENTAL
    assert assign_group(34, 0) is Group.CONTROL
    assert assign_group(55, 5) is Group.EXCLUDED


def test_assign_group_boundaries_are_strict():
    # both conditions must hold strictly
    assert assign_group(58, 12) is Group.EXCLUDED   # sds not > 58
    assert assign_group(59, 8) is Group.EXCLUDED    # phq not > 8
    assert assign_group(59, 9) is Group.EXPERIMENTAL
    assert assign_group(47, 1) is Group.EXCLUDED    # sds not < 47
    assert assign_group(46, 2) is Group.EXCLUDED    # phq not < 2
    assert assign_group(46, 1) is Group.CONTROL


def test_assign_group_rejects_out_of_range():
    with pytest.raises(ValueError):
        assign_group(19, 5)
    with pytest.raises(ValueError):
        assign_group(81, 5)
    with pytest.raises(ValueError):
        assign_group(50, -1)
    with pytest.raises(ValueError):
        assign_group(50, 28)


def test_grade_examples():
    assert grade_sds(70) is Grade.SEVERE
    assert grade_sds(60) is Grade.MODERATE
    assert grade_sds(58) is Grade.NOT_GRADED
    assert grade_phq(15) is Grade.SEVERE
    assert grade_phq(9) is Grade.MODERATE
    assert grade_phq(8) is Grade.NOT_GRADED


def test_assign_group_partitions_in_range_scores():
    seen = set()
    for sds in range(20, 81):
        for phq in range(0, 28):
            seen.add(assign_group(sds, phq))
    assert seen == {Group.EXPERIMENTAL, Group.CONTROL, Group.EXCLUDED}


# ---------------------------------------------------------------------------
# sequences and clips
# ---------------------------------------------------------------------------

def test_sequence_validation():
    meta = SequenceMeta("s", 1, "coat", "toward")
    with pytest.raises(ValueError, match="binary"):
        SilhouetteSequence(frames=np.full((2, FRAME_H, FRAME_W), 2, np.uint8),
                           meta=meta)
    with pytest.raises(ValueError, match="normalized"):
        SilhouetteSequence(frames=np.zeros((2, 32, 22), np.uint8), meta=meta)
    with pytest.raises(ValueError):
        SequenceMeta("s", 7, "coat", "toward")
    with pytest.raises(ValueError):
        SequenceMeta("s", 1, "poncho", "toward")
    with pytest.raises(ValueError):
        SequenceMeta("s", 1, "coat", "sideways")


def test_pad_by_repetition_tiles_whole_sequence(rng):
    seq = make_seq(t=25, rng=rng)
    out = pad_by_repetition(seq, 60)
    assert out.num_frames == 60
    for i in range(60):
        np.testing.assert_array_equal(out.frames[i], seq.frames[i % 25])
    assert out.meta == seq.meta


def test_pad_by_repetition_identity_and_single_frame(rng):
    seq = make_seq(t=60, rng=rng)
    assert pad_by_repetition(seq, 60) is seq
    one = make_seq(t=1, rng=rng)
    out = pad_by_repetition(one, 60)
    assert out.num_frames == 60
    assert (out.frames == one.frames[0]).all()


def test_pad_by_repetition_rejects_shrinking(rng):
    with pytest.raises(ValueError):
        pad_by_repetition(make_seq(t=10, rng=rng), 5)


def test_sample_training_clip_start_range(rng):
    seq = make_seq(t=120, rng=rng)
    starts = set()
    for _ in range(200):
        clip = sample_training_clip(seq, 60, rng)
        assert clip.num_frames == 60
        # recover the start by matching the first frame position
        for s in range(61):
            if (clip.frames == seq.frames[s:s + 60]).all():
                starts.add(s)
                break
    assert min(starts) >= 0 and max(starts) <= 60
    assert len(starts) > 20  # actually random


def test_sample_training_clip_exact_and_short(rng):
    seq = make_seq(t=60, rng=rng)
    clip = sample_training_clip(seq, 60, rng)
    np.testing.assert_array_equal(clip.frames, seq.frames)
    short = make_seq(t=45, rng=rng)
    clip = sample_training_clip(short, 60, rng)
    assert clip.num_frames == 60
    np.testing.assert_array_equal(clip.frames[:45], short.frames)
    np.testing.assert_array_equal(clip.frames[45:], short.frames[:15])


# ---------------------------------------------------------------------------
# splits
# ---------------------------------------------------------------------------

def _index_with_subjects(n):
    subjects = []
    for i in range(n):
        sds, phq = (63, 12) if i % 2 == 0 else (34, 0)
        subjects.append(SubjectRecord.from_scores(f"S{i:04d}", sds, phq))
    return DatasetIndex(subjects=subjects, sequences=[], split={})


def test_split_subjects_reproduces_paper_counts():
    index = _index_with_subjects(1227)
    out = split_subjects(index, 831.0 / 1227.0, seed=5)
    parts = list(out.split.values())
    assert parts.count("train") == 831
    assert parts.count("test") == 396


def test_split_subjects_deterministic_and_disjoint():
    index = _index_with_subjects(40)
    a = split_subjects(index, 0.6, seed=9)
    b = split_subjects(index, 0.6, seed=9)
    assert a.split == b.split
    train = {s for s, p in a.split.items() if p == "train"}
    test = {s for s, p in a.split.items() if p == "test"}
    assert not train & test
    assert train | test == {s.subject_id for s in index.subjects}


def test_split_subjects_excludes_excluded():
    subjects = [SubjectRecord.from_scores("A", 63, 12),
                SubjectRecord.from_scores("B", 34, 0),
                SubjectRecord.from_scores("C", 55, 5)]  # excluded
    index = DatasetIndex(subjects=subjects, sequences=[], split={})
    out = split_subjects(index, 0.5, seed=1)
    assert "C" not in out.split
    assert set(out.split) == {"A", "B"}


def test_split_subjects_needs_two():
    index = _index_with_subjects(1)
    with pytest.raises(ValueError):
        split_subjects(index, 0.5, seed=0)


# ---------------------------------------------------------------------------
# sequence file format
# ---------------------------------------------------------------------------

def test_sequence_round_trip(tmp_path, rng):
    seq = make_seq(t=13, subject="S0042", view=4, attire="backpack",
                   direction="away", rng=rng)
    path = tmp_path / "seq.gseq"
    write_sequence(path, seq)
    back = read_sequence(path)
    np.testing.assert_array_equal(back.frames, seq.frames)
    assert back.meta == seq.meta


def test_sequence_file_size_arithmetic(tmp_path, rng):
    seq = make_seq(t=60, rng=rng)
    path = tmp_path / "seq.gseq"
    write_sequence(path, seq)
    raw = path.read_bytes()
    meta_len = int.from_bytes(raw[20:24], "little")
    assert len(raw) == 24 + meta_len + 60 * FRAME_H * FRAME_W


def test_sequence_bad_magic(tmp_path, rng):
    path = tmp_path / "seq.gseq"
    write_sequence(path, make_seq(rng=rng))
    raw = bytearray(path.read_bytes())
    raw[:4] = b"XSEQ"
    path.write_bytes(bytes(raw))
    with pytest.raises(SequenceFormatError, match="bad magic"):
        read_sequence(path)


def test_sequence_truncation(tmp_path, rng):
    path = tmp_path / "seq.gseq"
    write_sequence(path, make_seq(t=5, rng=rng))
    raw = path.read_bytes()
    path.write_bytes(raw[:len(raw) - 10])
    with pytest.raises(SequenceFormatError, match="truncated"):
        read_sequence(path)


def test_sequence_nonbinary_pixel(tmp_path, rng):
    path = tmp_path / "seq.gseq"
    write_sequence(path, make_seq(t=2, rng=rng))
    raw = bytearray(path.read_bytes())
    raw[-1] = 7
    path.write_bytes(bytes(raw))
    with pytest.raises(SequenceFormatError, match="non-binary"):
        read_sequence(path)


# ---------------------------------------------------------------------------
# index files
# ---------------------------------------------------------------------------

def test_index_round_trip(tmp_path, rng):
    seq = make_seq(t=4, subject="S0000", rng=rng)
    write_sequence(tmp_path / "a.gseq", seq)
    subjects = [SubjectRecord.from_scores("S0000", 63, 12),
                SubjectRecord.from_scores("S0001", 34, 0)]
    from gaitrisk.data import SequenceEntry
    entries = [SequenceEntry(meta=seq.meta, path="a.gseq", num_frames=4)]
    index = DatasetIndex(subjects=subjects, sequences=entries,
                         split={"S0000": "train", "S0001": "test"},
                         root=tmp_path)
    save_index(index, tmp_path / "index.json")
    back = load_index(tmp_path / "index.json")
    assert [s.subject_id for s in back.subjects] == ["S0000", "S0001"]
    assert back.subjects[0].group is Group.EXPERIMENTAL
    assert back.split == index.split
    assert back.sequences[0].meta == seq.meta
    assert back.sequence_path(back.sequences[0]).exists()


def test_index_validation_rejects_unknown_subject():
    meta = SequenceMeta("ghost", 1, "coat", "toward")
    from gaitrisk.data import SequenceEntry
    index = DatasetIndex(subjects=[], sequences=[
        SequenceEntry(meta=meta, path="x.gseq", num_frames=3)], split={})
    with pytest.raises(ValueError, match="unknown subject"):
        index.validate()


def test_index_validation_rejects_excluded_in_split():
    subjects = [SubjectRecord.from_scores("A", 55, 5)]
    index = DatasetIndex(subjects=subjects, sequences=[], split={"A": "train"})
    with pytest.raises(ValueError, match="excluded"):
        index.validate()
