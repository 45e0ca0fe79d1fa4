"""PK-batch sampling, the optimization loop and checkpoint persistence.

Checkpoints are little-endian binary:

    magic "GCKP" | version u32 = 1 | manifest_len u32
    | manifest (UTF-8 JSON: step, configs, RNG state, Adam scalars,
      named parameter/moment entries with shape, dtype, offset, nbytes)
    | raw array payloads at the manifest offsets

The loss log is an append-only CSV with columns step, lr, ce, tri, total.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import model as mdl
from . import numerics as nm
from .data import DatasetIndex, SequenceEntry, Group, read_sequence, sample_training_clip
from .model import ModelConfig, BlockConfig
from .numerics import AdamState, Tensor, adam_step
from .seeds import substream

_CKPT_MAGIC = b"GCKP"
_CKPT_VERSION = 1
_CKPT_HEADER = struct.Struct("<4sII")


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    steps: int = 80000
    lr: float = 1e-4
    decay_step: int = 70000
    decay_factor: float = 0.1
    weight_decay: float = 5e-4
    subjects_per_batch: int = 16   # P
    clips_per_subject: int = 4     # K
    clip_len: int = 60
    margin: float = 0.2
    use_triplet: bool = True
    seed: int = 0
    checkpoint_every: int = 1000
    keep_checkpoints: int = 3

    @property
    def batch_size(self) -> int:
        return self.subjects_per_batch * self.clips_per_subject

    def validate(self) -> None:
        if self.batch_size != 64:
            raise ValueError(
                f"batch must be P x K = 64, got "
                f"{self.subjects_per_batch} x {self.clips_per_subject}")
        if self.steps > 0 and not 0 <= self.decay_step < self.steps:
            raise ValueError("decay_step must lie before steps")
        if self.subjects_per_batch < 2 or self.clips_per_subject < 2:
            raise ValueError("PK batches need >= 2 subjects and >= 2 clips each")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")


def lr_schedule(step: int, cfg: TrainConfig) -> float:
    """Constant base rate with a single decay at cfg.decay_step."""
    if not 0 <= step < max(cfg.steps, 1):
        raise ValueError(f"step {step} outside [0, {cfg.steps})")
    return cfg.lr if step < cfg.decay_step else cfg.lr * cfg.decay_factor


class SequenceStore:
    """In-memory cache of sequence frames, keyed by index entry path."""

    def __init__(self, index: DatasetIndex):
        self.index = index
        self._cache: dict[str, np.ndarray] = {}

    def frames(self, entry: SequenceEntry) -> np.ndarray:
        got = self._cache.get(entry.path)
        if got is None:
            got = read_sequence(self.index.sequence_path(entry)).frames
            self._cache[entry.path] = got
        return got

    def sequence(self, entry: SequenceEntry):
        from .data import SilhouetteSequence
        return SilhouetteSequence(frames=self.frames(entry), meta=entry.meta)

    def preload(self, part: str) -> None:
        for entry in self.index.sequences_for(part):
            self.frames(entry)


def sample_pk_batch(index: DatasetIndex, store: SequenceStore, cfg: TrainConfig,
                    rng: np.random.Generator):
    """P distinct subjects x K clips each; subjects with fewer than K
    sequences are drawn with replacement. Returns (clips, labels, subject_ids)
    with clips of shape (64, 1, clip_len, H, W) float32."""
    by_subject: dict[str, list[SequenceEntry]] = {}
    for entry in index.sequences_for("train"):
        by_subject.setdefault(entry.meta.subject_id, []).append(entry)
    subjects = sorted(by_subject)
    if len(subjects) < 2:
        raise TrainingError("need at least 2 train subjects for PK batches")
    if len(subjects) < cfg.subjects_per_batch:
        raise TrainingError(
            f"need >= {cfg.subjects_per_batch} train subjects, have {len(subjects)}")
    chosen = rng.choice(len(subjects), size=cfg.subjects_per_batch, replace=False)
    clips, labels, sids = [], [], []
    for si in chosen:
        sid = subjects[int(si)]
        entries = by_subject[sid]
        replace = len(entries) < cfg.clips_per_subject
        picks = rng.choice(len(entries), size=cfg.clips_per_subject,
                           replace=replace)
        label = (mdl.RISK_CLASS
                 if index.subject_by_id(sid).group is Group.EXPERIMENTAL
                 else mdl.CONTROL_CLASS)
        for qi in picks:
            seq = store.sequence(entries[int(qi)])
            clip = sample_training_clip(seq, cfg.clip_len, rng)
            clips.append(clip.frames)
            labels.append(label)
            sids.append(sid)
    batch = np.stack(clips).astype(np.float32)[:, None, :, :, :]
    return batch, np.asarray(labels, dtype=np.int64), np.asarray(sids)


@dataclass
class TrainResult:
    params: dict[str, Tensor]
    adam: AdamState
    log_rows: list[tuple]
    final_checkpoint: Path | None
    log_path: Path | None = None


def _loss_forward(params, model_cfg, cfg, batch, labels, sids):
    f = mdl.backbone_forward(Tensor(batch), params, model_cfg)
    logits = mdl.head_forward(f, params)
    ce = mdl.ce_loss(logits, labels)
    if cfg.use_triplet:
        tri = mdl.triplet_loss_batch(f, sids, margin=cfg.margin)
    else:
        tri = nm.as_tensor(np.zeros((), dtype=batch.dtype))
    return ce, tri, mdl.total_loss(ce, tri)


def train(cfg: TrainConfig, model_cfg: ModelConfig, index: DatasetIndex,
          out_dir, resume_from=None, log_every: int = 100,
          quiet: bool = True) -> TrainResult:
    """Run the optimization loop; deterministic for a fixed (seed, configs,
    dataset). Writes periodic checkpoints and the loss-log CSV to out_dir."""
    cfg.validate()
    model_cfg.validate()
    if model_cfg.clip_len != cfg.clip_len:
        raise ValueError(f"model clip_len {model_cfg.clip_len} != training "
                         f"clip_len {cfg.clip_len}")
    train_subjects = {sid for sid, part in index.split.items() if part == "train"}
    groups = {index.subject_by_id(s).group for s in train_subjects}
    if cfg.steps > 0 and groups != {Group.EXPERIMENTAL, Group.CONTROL}:
        raise TrainingError("train split must contain both classes")

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    store = SequenceStore(index)
    store.preload("train")

    log_path = out_dir / "loss_log.csv"
    if resume_from is not None:
        params, adam, extra = load_checkpoint(resume_from, expect_model=model_cfg)
        rng = np.random.default_rng(np.random.PCG64())
        rng.bit_generator.state = extra["rng_state"]
        start_step = int(extra["step"])
        log_mode = "a" if log_path.exists() else "w"
    else:
        params = mdl.init_parameters(model_cfg, seed=cfg.seed)
        adam = AdamState.initialize(params, weight_decay=cfg.weight_decay)
        rng = substream(cfg.seed, "train")
        start_step = 0
        log_mode = "w"

    log_rows: list[tuple] = []
    kept: list[Path] = []
    with open(log_path, log_mode, encoding="utf-8") as log:
        if log_mode == "w":
            log.write("step,lr,ce,tri,total\n")
        for step in range(start_step, cfg.steps):
            lr = lr_schedule(step, cfg)
            batch, labels, sids = sample_pk_batch(index, store, cfg, rng)
            for p in params.values():
                p.zero_grad()
            ce, tri, total = _loss_forward(params, model_cfg, cfg, batch,
                                           labels, sids)
            ce_v, tri_v, tot_v = ce.item(), tri.item(), total.item()
            if not np.isfinite(tot_v):
                raise TrainingError(
                    f"non-finite loss at step {step}: ce={ce_v} tri={tri_v}")
            total.backward()
            grads = {name: (p.grad if p.grad is not None
                            else np.zeros_like(p.data))
                     for name, p in params.items()}
            adam_step(params, grads, adam, lr)
            log_rows.append((step, lr, ce_v, tri_v, tot_v))
            log.write(f"{step},{lr!r},{ce_v!r},{tri_v!r},{tot_v!r}\n")
            if not quiet and (step + 1) % log_every == 0:
                print(f"step {step + 1}/{cfg.steps} lr={lr:g} ce={ce_v:.4f} "
                      f"tri={tri_v:.4f} total={tot_v:.4f}")
            if cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0 \
                    and (step + 1) < cfg.steps:
                ck = out_dir / f"checkpoint_{step + 1:07d}.gckp"
                save_checkpoint(ck, params, adam, cfg, model_cfg,
                                rng.bit_generator.state, step + 1)
                kept.append(ck)
                while len(kept) > cfg.keep_checkpoints:
                    old = kept.pop(0)
                    old.unlink(missing_ok=True)
    final = out_dir / "checkpoint_final.gckp"
    save_checkpoint(final, params, adam, cfg, model_cfg,
                    rng.bit_generator.state, cfg.steps)
    return TrainResult(params=params, adam=adam, log_rows=log_rows,
                       final_checkpoint=final, log_path=log_path)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def _model_cfg_doc(model_cfg: ModelConfig) -> dict:
    doc = asdict(model_cfg)
    doc["blocks"] = [asdict(b) for b in model_cfg.blocks]
    return doc


def _model_cfg_from_doc(doc: dict) -> ModelConfig:
    blocks = tuple(BlockConfig(**b) for b in doc["blocks"])
    rest = {k: v for k, v in doc.items() if k != "blocks"}
    return ModelConfig(blocks=blocks, **rest)


def save_checkpoint(path, params: dict[str, Tensor], adam: AdamState,
                    cfg: TrainConfig, model_cfg: ModelConfig,
                    rng_state: dict, step: int) -> None:
    entries = []
    payloads = []
    offset = 0

    def register(name, arr):
        nonlocal offset
        raw = np.ascontiguousarray(arr).tobytes()
        entries.append({"name": name, "shape": list(arr.shape),
                        "dtype": str(arr.dtype), "offset": offset,
                        "nbytes": len(raw)})
        payloads.append(raw)
        offset += len(raw)

    for name in sorted(params):
        register(f"param:{name}", params[name].data)
    for name in sorted(adam.m):
        register(f"adam.m:{name}", adam.m[name])
        register(f"adam.v:{name}", adam.v[name])

    manifest = {
        "version": _CKPT_VERSION,
        "step": step,
        "train_config": asdict(cfg),
        "model_config": _model_cfg_doc(model_cfg),
        "adam": {"beta1": adam.beta1, "beta2": adam.beta2,
                 "epsilon": adam.epsilon, "weight_decay": adam.weight_decay,
                 "step": adam.step},
        "rng_state": rng_state,
        "entries": entries,
    }
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_CKPT_HEADER.pack(_CKPT_MAGIC, _CKPT_VERSION, len(blob)))
        fh.write(blob)
        for raw in payloads:
            fh.write(raw)


def load_checkpoint(path, expect_model: ModelConfig | None = None):
    """Returns (params, adam_state, extras) with extras carrying step,
    rng_state and the stored configs."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _CKPT_HEADER.size:
        raise ValueError(f"{path}: truncated checkpoint header")
    magic, version, mlen = _CKPT_HEADER.unpack_from(raw, 0)
    if magic != _CKPT_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != _CKPT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    base = _CKPT_HEADER.size
    manifest = json.loads(raw[base:base + mlen].decode("utf-8"))
    payload_base = base + mlen
    stored_model = _model_cfg_from_doc(manifest["model_config"])
    if expect_model is not None and stored_model != expect_model:
        raise ValueError("checkpoint model configuration does not match the "
                         "requested configuration")

    def fetch(entry) -> np.ndarray:
        lo = payload_base + entry["offset"]
        hi = lo + entry["nbytes"]
        if hi > len(raw):
            raise ValueError(f"{path}: truncated payload for {entry['name']}")
        arr = np.frombuffer(raw[lo:hi], dtype=np.dtype(entry["dtype"]))
        return arr.reshape(entry["shape"]).copy()

    params: dict[str, Tensor] = {}
    m: dict[str, np.ndarray] = {}
    v: dict[str, np.ndarray] = {}
    for entry in manifest["entries"]:
        kind, name = entry["name"].split(":", 1)
        if kind == "param":
            params[name] = Tensor(fetch(entry), requires_grad=True)
        elif kind == "adam.m":
            m[name] = fetch(entry)
        elif kind == "adam.v":
            v[name] = fetch(entry)
    ad = manifest["adam"]
    adam = AdamState(beta1=ad["beta1"], beta2=ad["beta2"], epsilon=ad["epsilon"],
                     weight_decay=ad["weight_decay"], step=ad["step"], m=m, v=v)
    if expect_model is not None:
        reference = mdl.init_parameters(expect_model, seed=0)
        if set(reference) != set(params):
            raise ValueError("checkpoint parameter names do not match the config")
        for name, ref in reference.items():
            if params[name].data.shape != ref.data.shape:
                raise ValueError(
                    f"checkpoint shape mismatch for {name}: "
                    f"{params[name].data.shape} vs {ref.data.shape}")
    extras = {"step": manifest["step"], "rng_state": manifest["rng_state"],
              "train_config": manifest["train_config"],
              "model_config": stored_model}
    return params, adam, extras
