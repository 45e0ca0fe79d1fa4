"""Silhouette sequences, subject records, risk labels, dataset indexing and
the on-disk formats.

Sequence files are little-endian binary:

    magic "GSEQ" | version u32 = 1 | T u32 | H u32 | W u32 | meta_len u32
    | meta (UTF-8 JSON: subject_id, view_id, attire, direction)
    | payload T*H*W bytes, one byte per pixel in {0, 1}, frame-major

The dataset index is a JSON document listing subjects (with scale scores)
and sequence entries; split membership maps subject_id to "train"/"test".
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

FRAME_H = 64
FRAME_W = 44

SDS_RANGE = (20, 80)
PHQ9_RANGE = (0, 27)

ATTIRES = ("coat", "no_coat", "backpack")
DIRECTIONS = ("toward", "away")
VIEW_IDS = (1, 2, 3, 4, 5, 6)

_SEQ_MAGIC = b"GSEQ"
_SEQ_VERSION = 1
_HEADER = struct.Struct("<4sIIIII")  # magic, version, T, H, W, meta_len


class Group(str, Enum):
    EXPERIMENTAL = "experimental"  # at risk
    CONTROL = "control"
    EXCLUDED = "excluded"


class Grade(str, Enum):
    SEVERE = "severe"
    MODERATE = "moderate"
    NOT_GRADED = "not_graded"


class SequenceFormatError(ValueError):
    """Raised for malformed sequence files."""


def _check_scores(sds: int, phq9: int) -> None:
    if not SDS_RANGE[0] <= sds <= SDS_RANGE[1]:
        raise ValueError(f"SDS score {sds} outside instrument range {SDS_RANGE}")
    if not PHQ9_RANGE[0] <= phq9 <= PHQ9_RANGE[1]:
        raise ValueError(f"PHQ-9 score {phq9} outside instrument range {PHQ9_RANGE}")


def assign_group(sds: int, phq9: int) -> Group:
    """Experimental iff SDS > 58 and PHQ-9 > 8; control iff SDS < 47 and
    PHQ-9 < 2; everything between is excluded from the cohorts."""
    _check_scores(sds, phq9)
    if sds > 58 and phq9 > 8:
        return Group.EXPERIMENTAL
    if sds < 47 and phq9 < 2:
        return Group.CONTROL
    return Group.EXCLUDED


def grade_sds(sds: int) -> Grade:
    """SDS >= 70 is severe risk; between 58 (exclusive) and 70 moderate."""
    _check_scores(sds, PHQ9_RANGE[0])
    if sds >= 70:
        return Grade.SEVERE
    if sds > 58:
        return Grade.MODERATE
    return Grade.NOT_GRADED


def grade_phq(phq9: int) -> Grade:
    """PHQ-9 >= 15 is severe risk; between 8 (exclusive) and 15 moderate."""
    _check_scores(SDS_RANGE[0], phq9)
    if phq9 >= 15:
        return Grade.SEVERE
    if phq9 > 8:
        return Grade.MODERATE
    return Grade.NOT_GRADED


@dataclass(frozen=True)
class SequenceMeta:
    subject_id: str
    view_id: int
    attire: str
    direction: str

    def __post_init__(self):
        if self.view_id not in VIEW_IDS:
            raise ValueError(f"view_id must be in {VIEW_IDS}, got {self.view_id}")
        if self.attire not in ATTIRES:
            raise ValueError(f"attire must be one of {ATTIRES}, got {self.attire!r}")
        if self.direction not in DIRECTIONS:
            raise ValueError(
                f"direction must be one of {DIRECTIONS}, got {self.direction!r}")


@dataclass
class SilhouetteSequence:
    """A stack of binary silhouette frames plus capture metadata."""

    frames: np.ndarray  # (T, 64, 44) uint8 in {0, 1}
    meta: SequenceMeta

    def __post_init__(self):
        f = np.asarray(self.frames)
        if f.ndim != 3 or f.shape[0] < 1:
            raise ValueError(f"frames must be (T, H, W) with T >= 1, got {f.shape}")
        if f.shape[1:] != (FRAME_H, FRAME_W):
            raise ValueError(
                f"frames must be normalized to {FRAME_H}x{FRAME_W}, got {f.shape[1:]}")
        if f.dtype == np.uint8:
            if f.max(initial=0) > 1:
                raise ValueError("frames must be strictly binary")
        else:
            if not ((f == 0) | (f == 1)).all():
                raise ValueError("frames must be strictly binary")
            f = f.astype(np.uint8)
        self.frames = f

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]


@dataclass
class SubjectRecord:
    subject_id: str
    sds: int
    phq9: int
    group: Group
    sds_grade: Grade
    phq_grade: Grade

    @classmethod
    def from_scores(cls, subject_id: str, sds: int, phq9: int) -> "SubjectRecord":
        return cls(subject_id=subject_id, sds=sds, phq9=phq9,
                   group=assign_group(sds, phq9),
                   sds_grade=grade_sds(sds), phq_grade=grade_phq(phq9))


@dataclass(frozen=True)
class SequenceEntry:
    meta: SequenceMeta
    path: str  # relative to the index file's directory
    num_frames: int


@dataclass
class DatasetIndex:
    subjects: list[SubjectRecord]
    sequences: list[SequenceEntry]
    split: dict[str, str] = field(default_factory=dict)
    root: Path = field(default_factory=Path)

    def __post_init__(self):
        self.root = Path(self.root)

    def subject_by_id(self, subject_id: str) -> SubjectRecord:
        return self._by_id()[subject_id]

    def _by_id(self) -> dict[str, SubjectRecord]:
        return {s.subject_id: s for s in self.subjects}

    def validate(self) -> None:
        by_id = self._by_id()
        if len(by_id) != len(self.subjects):
            raise ValueError("duplicate subject ids in index")
        for entry in self.sequences:
            if entry.meta.subject_id not in by_id:
                raise ValueError(
                    f"sequence {entry.path} references unknown subject "
                    f"{entry.meta.subject_id}")
        for sid, part in self.split.items():
            if part not in ("train", "test"):
                raise ValueError(f"invalid split label {part!r} for {sid}")
            if sid not in by_id:
                raise ValueError(f"split references unknown subject {sid}")
            if by_id[sid].group is Group.EXCLUDED:
                raise ValueError(
                    f"excluded subject {sid} may not appear in train/test splits")

    def sequences_for(self, part: str, view_id: int | None = None) -> list[SequenceEntry]:
        out = []
        for entry in self.sequences:
            if self.split.get(entry.meta.subject_id) != part:
                continue
            if view_id is not None and entry.meta.view_id != view_id:
                continue
            out.append(entry)
        return out

    def sequence_path(self, entry: SequenceEntry) -> Path:
        return self.root / entry.path


# ---------------------------------------------------------------------------
# clip handling
# ---------------------------------------------------------------------------

def pad_by_repetition(seq: SilhouetteSequence, target_len: int) -> SilhouetteSequence:
    """Tile the whole sequence until it reaches target_len frames."""
    t = seq.num_frames
    if target_len < t:
        raise ValueError(f"target_len {target_len} is shorter than the sequence ({t})")
    if target_len == t:
        return seq
    idx = np.arange(target_len) % t
    return SilhouetteSequence(frames=seq.frames[idx], meta=seq.meta)


def sample_training_clip(seq: SilhouetteSequence, length: int,
                         rng: np.random.Generator) -> SilhouetteSequence:
    """A uniformly placed run of `length` consecutive frames; shorter
    sequences are padded by repetition instead."""
    if length < 1:
        raise ValueError("clip length must be >= 1")
    t = seq.num_frames
    if t < length:
        return pad_by_repetition(seq, length)
    if t == length:
        return seq
    start = int(rng.integers(0, t - length + 1))
    return SilhouetteSequence(frames=seq.frames[start:start + length], meta=seq.meta)


def split_subjects(index: DatasetIndex, train_fraction: float,
                   seed: int) -> DatasetIndex:
    """Subject-level random partition into train/test; excluded subjects are
    kept in the index but barred from both splits."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    eligible = sorted(s.subject_id for s in index.subjects
                      if s.group is not Group.EXCLUDED)
    if len(eligible) < 2:
        raise ValueError("need at least 2 non-excluded subjects to split")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    order = list(rng.permutation(len(eligible)))
    n_train = int(round(train_fraction * len(eligible)))
    n_train = min(max(n_train, 1), len(eligible) - 1)
    split = {}
    for rank, pos in enumerate(order):
        split[eligible[pos]] = "train" if rank < n_train else "test"
    return DatasetIndex(subjects=index.subjects, sequences=index.sequences,
                        split=split, root=index.root)


# ---------------------------------------------------------------------------
# sequence files
# ---------------------------------------------------------------------------

def write_sequence(path: str | Path, seq: SilhouetteSequence) -> None:
    meta = {
        "subject_id": seq.meta.subject_id,
        "view_id": seq.meta.view_id,
        "attire": seq.meta.attire,
        "direction": seq.meta.direction,
    }
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    t, h, w = seq.frames.shape
    header = _HEADER.pack(_SEQ_MAGIC, _SEQ_VERSION, t, h, w, len(meta_bytes))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(meta_bytes)
        fh.write(seq.frames.tobytes())


def read_sequence(path: str | Path) -> SilhouetteSequence:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise SequenceFormatError(f"{path}: truncated header")
    magic, version, t, h, w, meta_len = _HEADER.unpack_from(raw, 0)
    if magic != _SEQ_MAGIC:
        raise SequenceFormatError(f"{path}: bad magic {magic!r}")
    if version != _SEQ_VERSION:
        raise SequenceFormatError(f"{path}: unsupported version {version}")
    off = _HEADER.size
    if len(raw) < off + meta_len + t * h * w:
        raise SequenceFormatError(f"{path}: truncated payload")
    try:
        meta_doc = json.loads(raw[off:off + meta_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise SequenceFormatError(f"{path}: bad metadata block: {exc}") from exc
    off += meta_len
    frames = np.frombuffer(raw, dtype=np.uint8, count=t * h * w,
                           offset=off).reshape(t, h, w)
    if frames.max(initial=0) > 1:
        raise SequenceFormatError(f"{path}: non-binary pixel value")
    meta = SequenceMeta(subject_id=meta_doc["subject_id"],
                        view_id=int(meta_doc["view_id"]),
                        attire=meta_doc["attire"],
                        direction=meta_doc["direction"])
    return SilhouetteSequence(frames=frames.copy(), meta=meta)


# ---------------------------------------------------------------------------
# index files
# ---------------------------------------------------------------------------

def save_index(index: DatasetIndex, path: str | Path) -> None:
    doc = {
        "version": 1,
        "subjects": [
            {"subject_id": s.subject_id, "sds": s.sds, "phq9": s.phq9}
            for s in index.subjects
        ],
        "sequences": [
            {
                "subject_id": e.meta.subject_id,
                "view_id": e.meta.view_id,
                "attire": e.meta.attire,
                "direction": e.meta.direction,
                "path": e.path,
                "num_frames": e.num_frames,
            }
            for e in index.sequences
        ],
        "split": dict(sorted(index.split.items())),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_index(path: str | Path) -> DatasetIndex:
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("version") != 1:
        raise ValueError(f"{path}: unsupported index version {doc.get('version')}")
    subjects = [SubjectRecord.from_scores(s["subject_id"], int(s["sds"]),
                                          int(s["phq9"]))
                for s in doc["subjects"]]
    sequences = [SequenceEntry(
        meta=SequenceMeta(subject_id=e["subject_id"], view_id=int(e["view_id"]),
                          attire=e["attire"], direction=e["direction"]),
        path=e["path"], num_frames=int(e["num_frames"]))
        for e in doc["sequences"]]
    index = DatasetIndex(subjects=subjects, sequences=sequences,
                         split=dict(doc.get("split", {})), root=path.parent)
    index.validate()
    return index
