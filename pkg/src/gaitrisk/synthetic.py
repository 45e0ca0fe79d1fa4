"""Parametric stick-walker simulator.

Renders multi-view, multi-attire binary silhouette sequences with
class-conditional gait dynamics: at-risk walkers move with a slower cadence,
reduced vertical head movement, smaller arm/leg swing and a more slumped
posture than controls, while body proportions are drawn from the same
distribution for both classes so static shape carries no label signal.

The walker is a 2D articulated skeleton (torso, head, two arms, two legs)
rasterized as filled capsules onto the normalized 64x44 grid after
projecting for the camera azimuth/height. A fixed left/right amplitude
asymmetry keeps the silhouette's dominant period at the full stride cycle
rather than the half cycle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields as dc_fields

import numpy as np

from .data import (
    ATTIRES,
    DIRECTIONS,
    FRAME_H,
    FRAME_W,
    DatasetIndex,
    Group,
    SequenceEntry,
    SequenceMeta,
    SilhouetteSequence,
    SubjectRecord,
    save_index,
    write_sequence,
)
from .seeds import substream

# right-side limbs swing with smaller amplitude and the hip carries a
# once-per-cycle sway on top of the twice-per-cycle bounce; both break the
# half-period mirror symmetry of the silhouette so the pixel-count
# autocovariance peaks at the full gait period, not the half cycle
ARM_ASYMMETRY = 0.75
LEG_ASYMMETRY = 0.84

_BODY_SCALE = 56.0  # pixels per body length
_CENTER_COL = (FRAME_W - 1) / 2.0
_FOOT_ROW = 61.5


@dataclass(frozen=True)
class WalkerParams:
    gait_period: float          # frames per stride cycle
    walk_speed: float           # body lengths / second
    head_bob_amplitude: float   # fraction of body height
    arm_swing_amplitude: float  # radians
    leg_swing_amplitude: float  # radians
    posture_slump: float        # radians, forward torso tilt
    torso_length: float         # proportions of body height
    leg_length: float
    arm_length: float
    head_radius: float

    def __post_init__(self):
        if self.gait_period < 8:
            raise ValueError(f"gait_period must be >= 8 frames, got {self.gait_period}")
        for name in ("walk_speed", "head_bob_amplitude", "arm_swing_amplitude",
                     "leg_swing_amplitude", "posture_slump"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        for name in ("torso_length", "leg_length", "arm_length", "head_radius"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class CameraView:
    view_id: int
    azimuth_deg: float  # 0 = frontal, 90 = full side
    height_m: float

    def __post_init__(self):
        if self.height_m not in (2.5, 3.5):
            raise ValueError(f"camera height must be 2.5 or 3.5 m, got {self.height_m}")


# three azimuth groups along the front-to-side arc, one high and one low
# camera each; odd ids are the 3.5 m cameras
CAMERA_VIEWS = (
    CameraView(1, 10.0, 3.5),
    CameraView(2, 10.0, 2.5),
    CameraView(3, 45.0, 3.5),
    CameraView(4, 45.0, 2.5),
    CameraView(5, 80.0, 3.5),
    CameraView(6, 80.0, 2.5),
)

WALK_PATH_METERS = 6.0  # length of the recorded walking path

# clamp ranges applied after the Gaussian draw, per parameter
FIELD_BOUNDS = {
    "gait_period": (8.0, 60.0),
    "walk_speed": (0.2, 2.0),
    "head_bob_amplitude": (0.0, 0.06),
    "arm_swing_amplitude": (0.0, 1.0),
    "leg_swing_amplitude": (0.0, 1.0),
    "posture_slump": (0.0, 0.45),
    "torso_length": (0.22, 0.38),
    "leg_length": (0.40, 0.56),
    "arm_length": (0.24, 0.36),
    "head_radius": (0.055, 0.090),
}

_REDUCED_IN_RISK = ("walk_speed", "head_bob_amplitude", "arm_swing_amplitude",
                    "leg_swing_amplitude")


@dataclass
class ClassDistribution:
    """Mean/stddev per walker parameter for the two classes."""

    risk: dict[str, tuple[float, float]]
    control: dict[str, tuple[float, float]]

    def __post_init__(self):
        names = {f.name for f in dc_fields(WalkerParams)}
        for label, table in (("risk", self.risk), ("control", self.control)):
            if set(table) != names:
                missing = names.symmetric_difference(table)
                raise ValueError(f"{label} distribution fields mismatch: {missing}")
            for name, (_, sigma) in table.items():
                if sigma < 0:
                    raise ValueError(f"degenerate distribution: sigma < 0 for "
                                     f"{label}.{name}")
        for name in _REDUCED_IN_RISK:
            if not self.risk[name][0] < self.control[name][0]:
                raise ValueError(f"risk mean for {name} must be below the control "
                                 f"mean")


def default_class_distribution() -> ClassDistribution:
    """Partially overlapping defaults; no single parameter separates the
    classes on its own."""
    anatomy = {
        "torso_length": (0.30, 0.015),
        "leg_length": (0.48, 0.020),
        "arm_length": (0.30, 0.015),
        "head_radius": (0.072, 0.004),
    }
    risk = {
        "gait_period": (34.0, 4.0),
        "walk_speed": (0.70, 0.15),
        "head_bob_amplitude": (0.015, 0.007),
        "arm_swing_amplitude": (0.36, 0.10),
        "leg_swing_amplitude": (0.46, 0.09),
        "posture_slump": (0.17, 0.05),
        **anatomy,
    }
    control = {
        "gait_period": (25.0, 3.0),
        "walk_speed": (1.10, 0.15),
        "head_bob_amplitude": (0.032, 0.007),
        "arm_swing_amplitude": (0.56, 0.10),
        "leg_swing_amplitude": (0.62, 0.09),
        "posture_slump": (0.05, 0.04),
        **anatomy,
    }
    return ClassDistribution(risk=risk, control=control)


def sample_walker_params(group: Group, dist: ClassDistribution,
                         rng: np.random.Generator) -> WalkerParams:
    """Clamped Gaussian draw of every walker parameter for one subject."""
    if group is Group.EXPERIMENTAL:
        table = dist.risk
    elif group is Group.CONTROL:
        table = dist.control
    else:
        raise ValueError(f"cannot sample walker params for group {group}")
    values = {}
    for f in dc_fields(WalkerParams):
        mu, sigma = table[f.name]
        lo, hi = FIELD_BOUNDS[f.name]
        draw = mu if sigma == 0 else mu + sigma * rng.standard_normal()
        values[f.name] = float(min(max(draw, lo), hi))
    return WalkerParams(**values)


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------

def _skeleton(params: WalkerParams, t: np.ndarray, phase_frames: float):
    """Per-frame joint positions in body units (x forward, y up, z lateral).

    Returns capsule segments [(ax, ay, bx, by, z, radius)] and ellipses
    [(cx, cy, z, rx, ry)] with every coordinate a (T,) array.
    """
    p = params
    tau = np.mod(t + phase_frames, p.gait_period)
    ph = 2.0 * math.pi * tau / p.gait_period

    lean = p.posture_slump + 0.04 * p.walk_speed
    bounce_amp = 0.020 * p.walk_speed
    hip_y = p.leg_length + 0.02 + bounce_amp * (
        np.sin(2.0 * ph + 0.8) + 0.55 * np.sin(ph + 0.3))
    hip_x = np.zeros_like(hip_y)

    axis_x, axis_y = math.sin(lean), math.cos(lean)
    neck_x = hip_x + p.torso_length * axis_x
    neck_y = hip_y + p.torso_length * axis_y

    head_cx = neck_x + 0.06 * axis_x + 0.25 * p.posture_slump
    head_cy = neck_y + 0.06 * axis_y + p.head_bob_amplitude * np.sin(2.0 * ph)

    thigh, shin = 0.52 * p.leg_length, 0.48 * p.leg_length
    upper, fore = 0.55 * p.arm_length, 0.45 * p.arm_length

    segments = []
    ellipses = []  # (cx, cy, z, rx_sagittal, rz_lateral, ry)

    # torso
    torso_r = 0.085
    segments.append((hip_x, hip_y, neck_x, neck_y, 0.0, torso_r))
    # head, roughly spherical
    ellipses.append((head_cx, head_cy, 0.0,
                     0.85 * p.head_radius, 0.80 * p.head_radius, p.head_radius))

    swing = np.sin(ph)
    for side, sign, asym_a, asym_l in (("left", 1.0, 1.0, 1.0),
                                       ("right", -1.0, ARM_ASYMMETRY,
                                        LEG_ASYMMETRY)):
        # legs: left swings with sin(ph), right in antiphase; the swing-phase
        # knee lift carries the same left/right asymmetry as the swing
        leg_angle = sign * asym_l * p.leg_swing_amplitude * swing
        flex = 0.10 + 0.85 * asym_l * p.leg_swing_amplitude * (
            1.0 + np.sin(sign * ph - 1.2)) / 2.0
        knee_x = hip_x + thigh * np.sin(leg_angle)
        knee_y = hip_y - thigh * np.cos(leg_angle)
        shin_angle = leg_angle - flex
        ankle_x = knee_x + shin * np.sin(shin_angle)
        ankle_y = knee_y - shin * np.cos(shin_angle)
        z_leg = 0.055 * sign
        segments.append((hip_x, hip_y, knee_x, knee_y, z_leg, 0.042))
        segments.append((knee_x, knee_y, ankle_x, ankle_y, z_leg, 0.036))
        segments.append((ankle_x, ankle_y, ankle_x + 0.065, ankle_y + 0.012,
                         z_leg, 0.024))
        # arms hang from the shoulders, antiphase with the same-side leg
        arm_angle = 0.3 * lean - sign * asym_a * p.arm_swing_amplitude * swing
        elbow_bend = 0.30 + 0.40 * asym_a * p.arm_swing_amplitude * (
            1.0 + np.sin(sign * ph + 1.1)) / 2.0
        sh_x, sh_y = neck_x, neck_y - 0.02
        el_x = sh_x + upper * np.sin(arm_angle)
        el_y = sh_y - upper * np.cos(arm_angle)
        wrist_x = el_x + fore * np.sin(arm_angle + elbow_bend)
        wrist_y = el_y - fore * np.cos(arm_angle + elbow_bend)
        z_arm = 0.105 * sign
        segments.append((sh_x, sh_y, el_x, el_y, z_arm, 0.035))
        segments.append((el_x, el_y, wrist_x, wrist_y, z_arm, 0.030))

    return segments, ellipses, (hip_x, hip_y, neck_x, neck_y, axis_x, axis_y)


def _attire_primitives(attire: str, torso):
    hip_x, hip_y, neck_x, neck_y, axis_x, axis_y = torso
    segments, ellipses = [], []
    if attire == "coat":
        # widened torso reaching below the hips
        hem_x = hip_x - 0.10 * axis_x
        hem_y = hip_y - 0.10 * axis_y
        segments.append((hem_x, hem_y, neck_x, neck_y, 0.0, 0.125))
    elif attire == "backpack":
        # posterior ellipse at mid-back; wide laterally, shallow sagittally
        cx = hip_x + 0.55 * (neck_x - hip_x) - 0.115 * axis_y
        cy = hip_y + 0.55 * (neck_y - hip_y) + 0.115 * axis_x
        ellipses.append((cx, cy, 0.0, 0.060, 0.100, 0.105))
    return segments, ellipses


def render_sequence(params: WalkerParams, view: CameraView, attire: str,
                    num_frames: int, direction: str = "toward",
                    subject_id: str = "walker",
                    phase_frames: float = 0.0) -> SilhouetteSequence:
    """Rasterize num_frames of the walker for one view/attire/direction.

    The body is scaled so the projected geometry always fits the 64x44
    canvas; walking "away" mirrors the projection horizontally.
    """
    if num_frames < 1:
        raise ValueError("num_frames must be >= 1")
    if attire not in ATTIRES:
        raise ValueError(f"attire must be one of {ATTIRES}")
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be one of {DIRECTIONS}")

    t = np.arange(num_frames, dtype=np.float64)
    segments, ellipses, torso = _skeleton(params, t, phase_frames)
    extra_seg, extra_ell = _attire_primitives(attire, torso)
    segments = segments + extra_seg
    ellipses = ellipses + extra_ell

    az = math.radians(view.azimuth_deg)
    sin_a, cos_a = math.sin(az), math.cos(az)
    squash = 1.0 - 0.03 * (view.height_m - 2.5)
    mirror = -1.0 if direction == "away" else 1.0

    # project to (u, y) image units first, then pick a scale that fits
    proj_segments = []  # (au, ay, bu, by, r)
    for ax, ay, bx, by, z, radius in segments:
        au = ax * sin_a + z * cos_a
        bu = bx * sin_a + z * cos_a
        proj_segments.append((np.broadcast_to(au, t.shape),
                              np.broadcast_to(ay, t.shape),
                              np.broadcast_to(bu, t.shape),
                              np.broadcast_to(by, t.shape), radius))
    proj_ellipses = []  # (cu, cy, ru, ry)
    for cx, cy, z, rx_sag, rz_lat, ry in ellipses:
        cu = cx * sin_a + z * cos_a
        ru = abs(rx_sag * sin_a) + abs(rz_lat * cos_a)
        proj_ellipses.append((np.broadcast_to(cu, t.shape),
                              np.broadcast_to(cy, t.shape), ru, ry))

    max_u = max(max(np.abs(s[0]).max() + s[4], np.abs(s[2]).max() + s[4])
                for s in proj_segments)
    max_u = max(max_u, max(np.abs(e[0]).max() + e[2] for e in proj_ellipses))
    max_y = max(max(s[1].max() + s[4], s[3].max() + s[4]) for s in proj_segments)
    max_y = max(max_y, max((e[1].max() + e[3]) for e in proj_ellipses))
    scale = min(_BODY_SCALE,
                (_CENTER_COL - 0.75) / max_u,
                (_FOOT_ROW - 2.0) / (squash * max_y))
    if not np.isfinite(scale) or scale <= 0:
        raise RuntimeError(
            "walker out of frame after projection; internal scaling bug")

    def px(u):
        return _CENTER_COL + scale * mirror * u

    def py(y):
        return _FOOT_ROW - scale * squash * y

    rows = np.arange(FRAME_H, dtype=np.float32)
    cols = np.arange(FRAME_W, dtype=np.float32)
    mask = np.zeros((num_frames, FRAME_H, FRAME_W), dtype=bool)

    def bbox(lo_x, hi_x, lo_y, hi_y):
        c0 = max(int(np.floor(lo_x)), 0)
        c1 = min(int(np.ceil(hi_x)) + 1, FRAME_W)
        r0 = max(int(np.floor(lo_y)), 0)
        r1 = min(int(np.ceil(hi_y)) + 1, FRAME_H)
        if c0 >= c1 or r0 >= r1:
            raise RuntimeError(
                "walker out of frame after projection; internal scaling bug")
        return r0, r1, c0, c1

    for au, ay, bu, by, radius in proj_segments:
        axp = px(au).astype(np.float32).reshape(-1, 1, 1)
        ayp = py(ay).astype(np.float32).reshape(-1, 1, 1)
        bxp = px(bu).astype(np.float32).reshape(-1, 1, 1)
        byp = py(by).astype(np.float32).reshape(-1, 1, 1)
        r_px = np.float32(radius * scale)
        r0, r1, c0, c1 = bbox(min(axp.min(), bxp.min()) - r_px,
                              max(axp.max(), bxp.max()) + r_px,
                              min(ayp.min(), byp.min()) - r_px,
                              max(ayp.max(), byp.max()) + r_px)
        sub_rows = rows[r0:r1].reshape(1, -1, 1)
        sub_cols = cols[c0:c1].reshape(1, 1, -1)
        dx, dy = bxp - axp, byp - ayp
        len2 = dx * dx + dy * dy
        len2[len2 < 1e-12] = 1e-12
        s = ((sub_cols - axp) * dx + (sub_rows - ayp) * dy) / len2
        np.clip(s, 0.0, 1.0, out=s)
        qx = axp + s * dx
        qy = ayp + s * dy
        d2 = (sub_cols - qx) ** 2 + (sub_rows - qy) ** 2
        mask[:, r0:r1, c0:c1] |= d2 <= r_px * r_px

    for cu, cy, ru, ry in proj_ellipses:
        cxp = px(cu).astype(np.float32).reshape(-1, 1, 1)
        cyp = py(cy).astype(np.float32).reshape(-1, 1, 1)
        ru_px = np.float32(max(ru * scale, 1.5))
        ry_px = np.float32(max(ry * scale * squash, 1.5))
        r0, r1, c0, c1 = bbox(cxp.min() - ru_px, cxp.max() + ru_px,
                              cyp.min() - ry_px, cyp.max() + ry_px)
        sub_rows = rows[r0:r1].reshape(1, -1, 1)
        sub_cols = cols[c0:c1].reshape(1, 1, -1)
        d = ((sub_cols - cxp) / ru_px) ** 2 + ((sub_rows - cyp) / ry_px) ** 2
        mask[:, r0:r1, c0:c1] |= d <= 1.0

    meta = SequenceMeta(subject_id=subject_id, view_id=view.view_id,
                        attire=attire, direction=direction)
    return SilhouetteSequence(frames=mask.astype(np.uint8), meta=meta)


# ---------------------------------------------------------------------------
# corpus generation
# ---------------------------------------------------------------------------

def _sample_scores(group: Group, rng: np.random.Generator) -> tuple[int, int]:
    if group is Group.EXPERIMENTAL:
        return int(rng.integers(59, 81)), int(rng.integers(9, 28))
    return int(rng.integers(20, 47)), int(rng.integers(0, 2))


def generate_dataset(n_subjects: int, dist: ClassDistribution, seed: int,
                     out_dir, frames_range: tuple[int, int] = (90, 150),
                     progress: bool = False) -> DatasetIndex:
    """Write a full synthetic corpus (sequence files + index.json).

    Per subject: 6 views x 3 attires x 2 directions = 36 sequences of
    frames_range length, deterministic for a fixed seed. Classes alternate
    so the corpus is balanced; scale scores are sampled inside the band
    that reproduces the intended group label.
    """
    from pathlib import Path

    if n_subjects < 2:
        raise ValueError("need at least 2 subjects")
    lo, hi = frames_range
    if not 1 <= lo <= hi:
        raise ValueError(f"invalid frames_range {frames_range}")

    out_dir = Path(out_dir)
    seq_dir = out_dir / "sequences"
    seq_dir.mkdir(parents=True, exist_ok=True)

    subjects: list[SubjectRecord] = []
    entries: list[SequenceEntry] = []
    for si in range(n_subjects):
        group = Group.EXPERIMENTAL if si % 2 == 0 else Group.CONTROL
        subject_id = f"S{si:04d}"
        rng_subject = substream(seed, "subject", si)
        sds, phq9 = _sample_scores(group, rng_subject)
        record = SubjectRecord.from_scores(subject_id, sds, phq9)
        assert record.group is group
        subjects.append(record)
        params = sample_walker_params(group, dist, rng_subject)

        qi = 0
        for view in CAMERA_VIEWS:
            for attire in ATTIRES:
                for direction in DIRECTIONS:
                    rng_seq = substream(seed, "sequence", si, qi)
                    num_frames = int(rng_seq.integers(lo, hi + 1))
                    phase = float(rng_seq.uniform(0.0, params.gait_period))
                    seq = render_sequence(params, view, attire, num_frames,
                                          direction=direction,
                                          subject_id=subject_id,
                                          phase_frames=phase)
                    rel = f"sequences/{subject_id}_v{view.view_id}_{attire}_{direction}.gseq"
                    write_sequence(out_dir / rel, seq)
                    entries.append(SequenceEntry(meta=seq.meta, path=rel,
                                                 num_frames=num_frames))
                    qi += 1
        if progress and (si + 1) % 10 == 0:
            print(f"  rendered {si + 1}/{n_subjects} subjects")

    index = DatasetIndex(subjects=subjects, sequences=entries, split={},
                         root=out_dir)
    index.validate()
    save_index(index, out_dir / "index.json")
    return index
