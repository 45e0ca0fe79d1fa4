"""Sequence-level inference and the metric/analysis suite.

Long sequences are scored through covered sliding windows (window =
training clip length, stride = half a window, final window right-aligned)
so every frame enters the fixed-shape backbone at least once; the sequence
probability is the mean of the per-window risk probabilities.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import model as mdl
from . import numerics as nm
from .data import DatasetIndex, Grade, Group, SilhouetteSequence, pad_by_repetition
from .model import ModelConfig
from .numerics import Tensor


@dataclass
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass
class MetricsReport:
    acc: float          # percentages
    prec: float
    recall: float
    f1: float
    auc: float
    roc: list[tuple[float, float]]
    threshold: float
    counts: ConfusionCounts
    per_view: dict[int, "MetricsReport"] | None = None


def window_starts(num_frames: int, window: int, stride: int) -> list[int]:
    """Start offsets covering every frame: stride-spaced plus a right-aligned
    final window."""
    if num_frames <= window:
        return [0]
    starts = list(range(0, num_frames - window + 1, stride))
    if starts[-1] != num_frames - window:
        starts.append(num_frames - window)
    return starts


def infer_sequence_probability(params: dict[str, Tensor], config: ModelConfig,
                               seq: SilhouetteSequence) -> float:
    """Risk probability for one sequence; shorter-than-window sequences are
    padded by repetition, longer ones averaged over covered windows."""
    window = config.clip_len
    if seq.num_frames < window:
        seq = pad_by_repetition(seq, window)
    starts = window_starts(seq.num_frames, window, max(window // 2, 1))
    clips = np.stack([seq.frames[s:s + window] for s in starts])
    batch = clips.astype(np.float32)[:, None, :, :, :]
    with nm.no_grad():
        f = mdl.backbone_forward(Tensor(batch), params, config)
        logits = mdl.head_forward(f, params)
    return float(mdl.risk_probability(logits).mean())


def confusion(probs, labels, threshold: float = 0.5) -> ConfusionCounts:
    """Counts with risk predicted iff p >= threshold (risk on ties)."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    if probs.size == 0:
        raise ValueError("no probabilities to threshold")
    if probs.shape != labels.shape:
        raise ValueError("probs and labels must align")
    pred = probs >= threshold
    truth = labels.astype(bool)
    return ConfusionCounts(
        tp=int(np.sum(pred & truth)),
        fp=int(np.sum(pred & ~truth)),
        tn=int(np.sum(~pred & ~truth)),
        fn=int(np.sum(~pred & truth)),
    )


def compute_metrics(c: ConfusionCounts) -> tuple[float, float, float, float]:
    """Accuracy, precision, recall and F1, all as percentages.

    Degenerate denominators follow the fixed conventions: precision is 100%
    when no positives were predicted, recall 100% when no positives exist.
    """
    total = c.total
    acc = 100.0 * (c.tp + c.tn) / total if total else 100.0
    prec = 100.0 * c.tp / (c.tp + c.fp) if (c.tp + c.fp) else 100.0
    recall = 100.0 * c.tp / (c.tp + c.fn) if (c.tp + c.fn) else 100.0
    f1 = (2.0 * prec * recall / (prec + recall)) if (prec + recall) else 0.0
    return acc, prec, recall, f1


def compute_auc(probs, labels) -> tuple[float, list[tuple[float, float]]]:
    """ROC swept over all distinct scores; AUC by the trapezoidal rule."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = int((~labels).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes present")
    order = np.argsort(-probs, kind="stable")
    sorted_labels = labels[order]
    sorted_probs = probs[order]
    roc = [(0.0, 0.0)]
    tp = fp = 0
    i = 0
    n = probs.size
    while i < n:
        j = i
        while j < n and sorted_probs[j] == sorted_probs[i]:
            j += 1
        tp += int(sorted_labels[i:j].sum())
        fp += (j - i) - int(sorted_labels[i:j].sum())
        roc.append((fp / n_neg, tp / n_pos))
        i = j
    if roc[-1] != (1.0, 1.0):
        roc.append((1.0, 1.0))
    auc = 0.0
    for (x0, y0), (x1, y1) in zip(roc[:-1], roc[1:]):
        auc += (x1 - x0) * (y0 + y1) / 2.0
    return auc, roc


def auc_pairwise(probs, labels) -> float:
    """Independent oracle: concordant-pair counting with half credit for
    ties, (#{pos > neg} + 0.5 #{ties}) / (n_pos * n_neg)."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    pos = probs[labels]
    neg = probs[~labels]
    if pos.size == 0 or neg.size == 0:
        raise ValueError("AUC needs both classes present")
    greater = (pos[:, None] > neg[None, :]).sum()
    ties = (pos[:, None] == neg[None, :]).sum()
    return (float(greater) + 0.5 * float(ties)) / (pos.size * neg.size)


# ---------------------------------------------------------------------------
# dataset-level evaluation
# ---------------------------------------------------------------------------

@dataclass
class SequenceScore:
    subject_id: str
    view_id: int
    attire: str
    direction: str
    prob: float
    label: int  # 1 = at risk


def score_split(params, config: ModelConfig, index: DatasetIndex, store,
                split: str = "test", view_id: int | None = None) -> list[SequenceScore]:
    scores = []
    for entry in index.sequences_for(split, view_id=view_id):
        seq = store.sequence(entry)
        p = infer_sequence_probability(params, config, seq)
        label = 1 if index.subject_by_id(entry.meta.subject_id).group is Group.EXPERIMENTAL else 0
        scores.append(SequenceScore(entry.meta.subject_id, entry.meta.view_id,
                                    entry.meta.attire, entry.meta.direction,
                                    p, label))
    return scores


def report_from_scores(scores: list[SequenceScore], threshold: float = 0.5,
                       with_per_view: bool = True) -> MetricsReport:
    probs = np.array([s.prob for s in scores])
    labels = np.array([s.label for s in scores])
    counts = confusion(probs, labels, threshold)
    acc, prec, recall, f1 = compute_metrics(counts)
    auc, roc = compute_auc(probs, labels)
    per_view = None
    if with_per_view:
        per_view = {}
        for view in sorted({s.view_id for s in scores}):
            sub = [s for s in scores if s.view_id == view]
            sp = np.array([s.prob for s in sub])
            sl = np.array([s.label for s in sub])
            c = confusion(sp, sl, threshold)
            a, p, r, f = compute_metrics(c)
            try:
                au, ro = compute_auc(sp, sl)
            except ValueError:
                au, ro = float("nan"), []
            per_view[view] = MetricsReport(a, p, r, f, au, ro, threshold, c)
    return MetricsReport(acc, prec, recall, f1, auc, roc, threshold, counts,
                         per_view=per_view)


def evaluate(params, config: ModelConfig, index: DatasetIndex, store=None,
             split: str = "test", threshold: float = 0.5,
             view_id: int | None = None) -> tuple[MetricsReport, list[SequenceScore]]:
    from .training import SequenceStore
    store = store or SequenceStore(index)
    scores = score_split(params, config, index, store, split, view_id=view_id)
    if not scores:
        raise ValueError(f"no sequences in split {split!r} (view {view_id})")
    return report_from_scores(scores, threshold), scores


# ---------------------------------------------------------------------------
# grading histograms
# ---------------------------------------------------------------------------

@dataclass
class GradingHistogram:
    """Counts of predicted probabilities over 10 right-open intervals
    ([0.9, 1.0] closed), for moderate/severe cohorts of each scale."""

    bins: dict[str, dict[str, list[int]]] = field(default_factory=dict)

    def cohort_size(self, scale: str, grade: str) -> int:
        return sum(self.bins[scale][grade])


def probability_bin(p: float) -> int:
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"probability {p} outside [0, 1]")
    return min(int(p * 10), 9)


def grading_histogram(scores: list[SequenceScore],
                      index: DatasetIndex) -> GradingHistogram:
    """Histogram the risk-labeled sequences' probabilities by risk grade,
    separately for the SDS and PHQ-9 scales."""
    hist = GradingHistogram(bins={
        "sds": {"moderate": [0] * 10, "severe": [0] * 10},
        "phq9": {"moderate": [0] * 10, "severe": [0] * 10},
    })
    any_risk = False
    for s in scores:
        if not s.label:
            continue
        any_risk = True
        record = index.subject_by_id(s.subject_id)
        b = probability_bin(s.prob)
        for scale, grade in (("sds", record.sds_grade), ("phq9", record.phq_grade)):
            if grade is Grade.MODERATE:
                hist.bins[scale]["moderate"][b] += 1
            elif grade is Grade.SEVERE:
                hist.bins[scale]["severe"][b] += 1
    if not any_risk:
        raise ValueError("no risk-labeled sequences to histogram")
    return hist


# ---------------------------------------------------------------------------
# experiment harnesses
# ---------------------------------------------------------------------------

def per_view_experiment(index: DatasetIndex, model_cfg: ModelConfig,
                        train_cfg, out_dir, views=None,
                        threshold: float = 0.5) -> dict[str, MetricsReport]:
    """Train and evaluate restricted to each view, then once on all views.

    Each run shares the same seed, so differences are attributable to the
    view restriction alone."""
    from .training import SequenceStore, train

    out_dir = Path(out_dir)
    views = list(views) if views is not None else [1, 2, 3, 4, 5, 6, "all"]
    reports: dict[str, MetricsReport] = {}
    for view in views:
        view_id = None if view == "all" else int(view)
        sub_index = index
        if view_id is not None:
            kept = [e for e in index.sequences if e.meta.view_id == view_id]
            if not kept:
                raise ValueError(f"no sequences for view {view_id}")
            sub_index = DatasetIndex(subjects=index.subjects, sequences=kept,
                                     split=index.split, root=index.root)
        run_dir = out_dir / f"view_{view}"
        result = train(train_cfg, model_cfg, sub_index, run_dir)
        report, _ = evaluate(result.params, model_cfg, sub_index,
                             SequenceStore(sub_index), threshold=threshold)
        reports[str(view)] = report
    return reports


@dataclass
class AblationCell:
    temporal_kernel: int
    use_triplet: bool
    seed: int
    report: MetricsReport
    log_rows: list[tuple]


def ablation_runner(index: DatasetIndex, model_cfg: ModelConfig, train_cfg,
                    out_dir, temporal_kernels=(3, 5, 7),
                    triplet_options=(True, False),
                    threshold: float = 0.5) -> list[AblationCell]:
    """Grid over temporal kernel size x triplet on/off with a shared seed."""
    from dataclasses import replace as dc_replace
    from .training import SequenceStore, train

    out_dir = Path(out_dir)
    cells = []
    for tau in temporal_kernels:
        blocks = tuple(dc_replace(b, temporal_kernel=tau)
                       for b in model_cfg.blocks)
        m_cfg = dc_replace(model_cfg, blocks=blocks)
        for use_tri in triplet_options:
            t_cfg = dc_replace(train_cfg, use_triplet=use_tri)
            run_dir = out_dir / f"tau{tau}_tri{'on' if use_tri else 'off'}"
            result = train(t_cfg, m_cfg, index, run_dir)
            report, _ = evaluate(result.params, m_cfg, index,
                                 SequenceStore(index), threshold=threshold)
            cells.append(AblationCell(temporal_kernel=tau, use_triplet=use_tri,
                                      seed=t_cfg.seed, report=report,
                                      log_rows=result.log_rows))
    return cells


# ---------------------------------------------------------------------------
# report files
# ---------------------------------------------------------------------------

_METRIC_HEADER = ["acc_pct", "prec_pct", "recall_pct", "f1_pct", "auc"]


def _metric_row(report: MetricsReport) -> list:
    return [f"{report.acc:.2f}", f"{report.prec:.2f}", f"{report.recall:.2f}",
            f"{report.f1:.2f}", f"{report.auc:.4f}"]


def write_metrics_csv(report: MetricsReport, path) -> None:
    """One row per view plus the all-view row, Table-III shaped."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["view"] + _METRIC_HEADER + ["tp", "fp", "tn", "fn"])
        if report.per_view:
            for view, sub in sorted(report.per_view.items()):
                w.writerow([view] + _metric_row(sub)
                           + [sub.counts.tp, sub.counts.fp, sub.counts.tn,
                              sub.counts.fn])
        w.writerow(["all"] + _metric_row(report)
                   + [report.counts.tp, report.counts.fp, report.counts.tn,
                      report.counts.fn])


def write_roc(report: MetricsReport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("fpr\ttpr\n")
        for fpr, tpr in report.roc:
            fh.write(f"{fpr!r}\t{tpr!r}\n")


def write_histogram(hist: GradingHistogram, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("scale\tgrade\tbin_lo\tbin_hi\tcount\tfraction\n")
        for scale, table in hist.bins.items():
            for grade, counts in table.items():
                total = sum(counts) or 1
                for b, count in enumerate(counts):
                    fh.write(f"{scale}\t{grade}\t{b / 10:.1f}\t{(b + 1) / 10:.1f}"
                             f"\t{count}\t{count / total:.4f}\n")


def write_ablation_tables(cells: list[AblationCell], tau_path, triplet_path,
                          cells_path=None) -> None:
    """Emit the temporal-kernel table and the triplet on/off table."""
    with open(tau_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["temporal_kernel"] + _METRIC_HEADER)
        for cell in cells:
            if cell.use_triplet:
                w.writerow([cell.temporal_kernel] + _metric_row(cell.report))
    with open(triplet_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["triplet"] + _METRIC_HEADER)
        for cell in cells:
            if cell.temporal_kernel == 5:
                w.writerow(["with" if cell.use_triplet else "without"]
                           + _metric_row(cell.report))
    if cells_path is not None:
        with open(cells_path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["temporal_kernel", "triplet", "seed"] + _METRIC_HEADER)
            for cell in cells:
                w.writerow([cell.temporal_kernel,
                            "on" if cell.use_triplet else "off", cell.seed]
                           + _metric_row(cell.report))
