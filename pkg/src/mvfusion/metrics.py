"""Detection decoding and the evaluation suite.

Per-cell outputs decode into rotated boxes with trajectories (greedy
rotated NMS, highest score wins). Detections match ground truth greedily
in descending score order, one match per ground truth. From pooled
matches we compute all-point average precision, pick the operating
threshold hitting a target recall, and measure displacement error at a
fixed future horizon over the true positives at that operating point.
Slices restrict both detections and ground truth to the camera FOV and
range bands. Latency timing reports per-stage medians on a monotonic
clock.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .geometry import RotatedBox2D, rotated_iou, se2_apply, se2_inverse
from .network import CellOutputs
from .scene import ActorLabel
from .views import CameraModel

IOU_THRESHOLDS = {"vehicle": 0.7, "pedestrian": 0.1, "bicyclist": 0.3}
DEFAULT_NMS_IOU = 0.3
DEFAULT_SCORE_FLOOR = 0.5
DEFAULT_RECALL_TARGET = 0.8

MIN_DECODED_SIDE = 0.05  # heads can emit nonpositive sizes; clamp for box validity


class RecallUnattainableError(RuntimeError):
    pass


@dataclass(frozen=True)
class DetBox:
    """A decoded detection: rotated box, score, and future waypoints."""

    cls: str
    score: float
    box: RotatedBox2D
    waypoints: np.ndarray  # (H, 2) absolute centers for h = 1..H
    headings: np.ndarray  # (H,)
    cell: tuple[int, int] = (0, 0)


def decode_detections(outputs: CellOutputs, score_floor: float = DEFAULT_SCORE_FLOOR,
                      nms_iou: float = DEFAULT_NMS_IOU) -> list[DetBox]:
    """Boxes from cells above the score floor, after per-class rotated NMS.

    Suppression is greedy by descending score with deterministic (row, col)
    tie-breaking; heading decodes as atan2(sin, cos).
    """
    xs, ys = outputs.grid.cell_centers()
    detections: list[DetBox] = []
    for cls in outputs.classes:
        p = outputs.prob[cls]
        rows, cols = np.nonzero(p >= score_floor)
        candidates = []
        for r, c in zip(rows.tolist(), cols.tolist()):
            offsets = outputs.centers[cls][r, c]  # (H+1, 2)
            sc = outputs.headings[cls][r, c]  # (H+1, 2)
            cell_xy = np.array([xs[r], ys[c]])
            abs_centers = cell_xy + offsets
            heading = math.atan2(sc[0, 0], sc[0, 1])
            length = max(float(outputs.size[cls][r, c, 0]), MIN_DECODED_SIDE)
            width = max(float(outputs.size[cls][r, c, 1]), MIN_DECODED_SIDE)
            box = RotatedBox2D(abs_centers[0, 0], abs_centers[0, 1], length, width, heading)
            candidates.append(DetBox(
                cls, float(p[r, c]), box,
                waypoints=abs_centers[1:].copy(),
                headings=np.arctan2(sc[1:, 0], sc[1:, 1]),
                cell=(r, c),
            ))
        candidates.sort(key=lambda d: (-d.score, d.cell))
        kept: list[DetBox] = []
        for det in candidates:
            if all(rotated_iou(det.box, k.box) < nms_iou for k in kept):
                kept.append(det)
        detections.extend(kept)
    return detections


@dataclass
class MatchResult:
    """Descending-score detections of one class matched against ground truth."""

    scores: np.ndarray  # sorted descending
    tp: np.ndarray  # bool per detection
    matched_gt: np.ndarray  # gt index per detection, -1 for false positives
    n_gt: int
    det_indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def unmatched_gt_count(self) -> int:
        return self.n_gt - int(self.tp.sum())


def match_detections(dets: Sequence[DetBox], gt_boxes: Sequence[RotatedBox2D],
                     iou_thresh: float) -> MatchResult:
    """Greedy matching: best-IoU unmatched ground truth, one match each."""
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    taken = [False] * len(gt_boxes)
    tp = np.zeros(len(dets), dtype=bool)
    matched = np.full(len(dets), -1, dtype=np.int64)
    for rank, i in enumerate(order):
        best_iou, best_j = 0.0, -1
        for j, gt in enumerate(gt_boxes):
            if taken[j]:
                continue
            iou = rotated_iou(dets[i].box, gt)
            if iou > best_iou:
                best_iou, best_j = iou, j
        if best_j >= 0 and best_iou >= iou_thresh:
            taken[best_j] = True
            tp[rank] = True
            matched[rank] = best_j
    scores = np.array([dets[i].score for i in order])
    return MatchResult(scores, tp, matched, len(gt_boxes), np.array(order, dtype=np.int64))


def _pooled(results: Sequence[MatchResult]):
    scores = np.concatenate([r.scores for r in results]) if results else np.zeros(0)
    tp = np.concatenate([r.tp for r in results]) if results else np.zeros(0, dtype=bool)
    n_gt = sum(r.n_gt for r in results)
    order = np.argsort(-scores, kind="stable")
    return scores[order], tp[order], n_gt


def average_precision(results: Sequence[MatchResult]) -> float:
    """All-point AP: area under the monotone precision envelope."""
    scores, tp, n_gt = _pooled(results)
    if n_gt == 0 or len(scores) == 0:
        return 0.0
    cum_tp = np.cumsum(tp)
    cum_fp = np.cumsum(~tp)
    recall = cum_tp / n_gt
    precision = cum_tp / (cum_tp + cum_fp)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    prev = np.concatenate([[0.0], recall[:-1]])
    return float(np.sum((recall - prev) * envelope))


def operating_threshold_for_recall(results: Sequence[MatchResult],
                                   recall_target: float = DEFAULT_RECALL_TARGET) -> float:
    """Highest score threshold whose recall is at least the target."""
    scores, tp, n_gt = _pooled(results)
    if n_gt == 0:
        raise RecallUnattainableError("no ground truth to recall")
    recall = np.cumsum(tp) / n_gt
    reached = np.nonzero(recall >= recall_target)[0]
    if reached.size == 0:
        raise RecallUnattainableError(
            f"max achievable recall {recall[-1] if len(recall) else 0.0:.3f} < target {recall_target}"
        )
    return float(scores[reached[0]])


def displacement_error(tp_pairs: Sequence[tuple[DetBox, ActorLabel]], horizon: int = 30) -> float:
    """Mean Euclidean error at the given horizon over TP pairs, in centimeters."""
    if not tp_pairs:
        raise ValueError("displacement error needs at least one matched pair")
    dists = []
    for det, label in tp_pairs:
        pred = det.waypoints[horizon - 1]
        gt = label.centers[horizon]
        dists.append(math.hypot(pred[0] - gt[0], pred[1] - gt[1]))
    return 100.0 * float(np.mean(dists))


# ---------------------------------------------------------------------------
# slicing
# ---------------------------------------------------------------------------

def in_camera_fov(box: RotatedBox2D, camera: CameraModel | None) -> bool:
    """Center-projection rule: the box center must land in a valid column.

    Consistent with the pixel projector's column arithmetic; the vertical
    crop is ignored so membership is decided purely by azimuth. A pinhole
    cannot express a full turn, so camera=None means unrestricted view and
    always passes.
    """
    if camera is None:
        return True
    inv = se2_inverse(camera.mount)
    x, y = se2_apply(inv, box.cx, box.cy)
    if x <= 1e-9:
        return False
    col = math.floor(camera.cx + camera.fx * (-y) / x)
    return 0 <= col < camera.width


def filter_camera_fov(items: Sequence, camera: CameraModel,
                      range_bands: Sequence[tuple[float, float]] = ()) -> dict[str, list]:
    """Keep items (anything with a .box) inside the FOV; partition by range.

    Returns {"fov": [...]} plus one "fov_<lo>m-<hi>m" list per band, banded
    by the box center's distance to the ego origin.
    """
    in_fov = [item for item in items if in_camera_fov(item.box, camera)]
    out: dict[str, list] = {"fov": in_fov}
    for lo, hi in range_bands:
        key = f"fov_{lo:g}m-{hi:g}m"
        out[key] = [
            item for item in in_fov
            if lo <= math.hypot(item.box.cx, item.box.cy) < hi
        ]
    return out


# ---------------------------------------------------------------------------
# frame evaluation and report
# ---------------------------------------------------------------------------

@dataclass
class MetricsReport:
    sections: dict[str, dict[str, float]]

    def to_text(self) -> str:
        lines = []
        for name in sorted(self.sections):
            lines.append(f"[{name}]")
            for key, value in self.sections[name].items():
                lines.append(f"{key} = {value!r}")
            lines.append("")
        return "\n".join(lines) + ("" if lines and lines[-1] == "" else "\n")


def evaluate_frames(
    frames: Sequence[tuple[Sequence[DetBox], Sequence[ActorLabel]]],
    iou_thresholds: dict[str, float] = IOU_THRESHOLDS,
    recall_target: float = DEFAULT_RECALL_TARGET,
    horizon: int = 30,
    camera: CameraModel | None = None,
    range_bands: Sequence[tuple[float, float]] = ((0.0, 25.0), (25.0, 50.0)),
) -> MetricsReport:
    """AP, operating threshold, and DE per class and slice over a frame set."""
    slices: dict[str, list[tuple[list, list]]] = {"full": []}
    for dets, labels in frames:
        slices["full"].append((list(dets), list(labels)))
    if camera is not None:
        for dets, labels in frames:
            det_parts = filter_camera_fov(list(dets), camera, range_bands)
            lab_parts = filter_camera_fov(list(labels), camera, range_bands)
            for key in det_parts:
                slices.setdefault(key, []).append((det_parts[key], lab_parts[key]))

    sections: dict[str, dict[str, float]] = {}
    for cls, thresh in iou_thresholds.items():
        for slice_name, frame_list in slices.items():
            per_frame = []
            for dets, labels in frame_list:
                cls_dets = [d for d in dets if d.cls == cls]
                cls_labels = [lab for lab in labels if lab.cls == cls]
                match = match_detections(cls_dets, [lab.box for lab in cls_labels], thresh)
                per_frame.append((match, cls_dets, cls_labels))
            matches = [m for m, _, _ in per_frame]
            section = {
                "ap": average_precision(matches),
                "gt_count": float(sum(m.n_gt for m in matches)),
                "det_count": float(sum(len(m.scores) for m in matches)),
                "iou_threshold": float(thresh),
            }
            try:
                threshold = operating_threshold_for_recall(matches, recall_target)
                section["operating_threshold"] = threshold
                pairs = []
                for match, cls_dets, cls_labels in per_frame:
                    for rank, det_idx in enumerate(match.det_indices.tolist()):
                        if match.tp[rank] and match.scores[rank] >= threshold:
                            pairs.append((cls_dets[det_idx], cls_labels[int(match.matched_gt[rank])]))
                if pairs and horizon <= min(len(p[0].waypoints) for p in pairs):
                    section["de_cm"] = displacement_error(pairs, horizon)
            except RecallUnattainableError:
                section["recall_unattainable"] = 1.0
            sections[f"{cls}.{slice_name}"] = section
    return MetricsReport(sections)


# ---------------------------------------------------------------------------
# latency
# ---------------------------------------------------------------------------

@dataclass
class LatencyReport:
    stages: list[tuple[str, float]]  # (name, median milliseconds)
    repeats: int

    @property
    def total_ms(self) -> float:
        return float(sum(ms for _, ms in self.stages))

    def to_text(self) -> str:
        lines = [f"repeats = {self.repeats}"]
        for name, ms in self.stages:
            lines.append(f"{name}_latency_ms = {ms:.3f}")
        lines.append(f"total_latency_ms = {self.total_ms:.3f}")
        return "\n".join(lines) + "\n"


def time_pipeline(stages: Sequence[tuple[str, Callable[[dict], dict]]], frame: dict,
                  repeats: int = 20) -> LatencyReport:
    """Median wall time per stage over repeated runs on a monotonic clock.

    Stage functions read the context dict and return new entries; the
    context passed downstream comes from a single representative run.
    """
    if repeats < 1:
        raise ValueError("repeats must be positive")
    ctx = dict(frame)
    timed: list[tuple[str, float]] = []
    for name, fn in stages:
        samples = []
        result = None
        for _ in range(repeats):
            start = time.perf_counter()
            result = fn(ctx)
            samples.append((time.perf_counter() - start) * 1000.0)
        timed.append((name, float(np.median(samples))))
        if result:
            ctx.update(result)
    return LatencyReport(timed, repeats)
