"""Mock manipulation pipeline: predicted box -> object mask -> best grasp.

A grasp is a centroid pinch: the closing line at some angle, two finger
footprints offset beyond the object's extent along that line. Candidates are
scored by how well the closing direction aligns with the mask's minor axis;
candidates whose fingers touch another object's pixels are rejected.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .world import RenderedImage, Scene, object_mask

FINGER_DEPTH_PX = 5.0  # finger footprint size along the closing direction
FINGER_CLEARANCE_PX = 1.0  # gap between the object extent and the inner finger edge
MIN_FINGER_WIDTH_PX = 3.0


@dataclass
class Mask:
    data: np.ndarray  # H x W bool

    @property
    def pixel_count(self) -> int:
        return int(self.data.sum())

    def to_rle(self) -> dict:
        """Row-major run-length encoding; runs alternate 0s/1s starting with 0s."""
        flat = self.data.reshape(-1).astype(np.int8)
        counts = []
        current, run = 0, 0
        for v in flat:
            if v == current:
                run += 1
            else:
                counts.append(run)
                current, run = v, 1
        counts.append(run)
        return {"size": [int(self.data.shape[0]), int(self.data.shape[1])], "counts": counts}

    @classmethod
    def from_rle(cls, rle: dict) -> "Mask":
        h, w = rle["size"]
        flat = np.zeros(h * w, dtype=bool)
        pos, value = 0, False
        for run in rle["counts"]:
            if value:
                flat[pos : pos + run] = True
            pos += run
            value = not value
        return cls(flat.reshape(h, w))


@dataclass(frozen=True)
class Grasp:
    center: tuple[float, float]  # normalized (x, y)
    angle: float  # closing-line angle, radians in [0, pi)
    width: float  # normalized finger opening
    score: float  # [0, 1], higher is better

    def to_dict(self) -> dict:
        return {
            "center": [self.center[0], self.center[1]],
            "angle": self.angle,
            "width": self.width,
            "score": self.score,
        }


def _bbox_pixel_rect(bbox, resolution: int) -> tuple[int, int, int, int]:
    x1, y1, x2, y2 = bbox
    px1 = max(0, int(math.floor(x1 * resolution)))
    py1 = max(0, int(math.floor(y1 * resolution)))
    px2 = min(resolution, int(math.ceil(x2 * resolution)))
    py2 = min(resolution, int(math.ceil(y2 * resolution)))
    return px1, py1, px2, py2


def _box_iou(a, b) -> float:
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if union > 0 else 0.0


def bbox_to_mask(image: RenderedImage, bbox, scene: Scene | None = None) -> Mask:
    """Segmentation stand-in for a predicted box.

    With scene ground truth, a box that IoU-matches an object above 0.5 takes
    that object's drawn pixels (clipped to the query rect); otherwise the
    filled rectangle serves as fallback.
    """
    resolution = image.height
    px1, py1, px2, py2 = _bbox_pixel_rect(bbox, resolution)
    rect = np.zeros((resolution, resolution), dtype=bool)
    rect[py1:py2, px1:px2] = True

    if scene is not None:
        best, best_iou = None, 0.5
        for obj in scene.objects:
            score = _box_iou(bbox, obj.bbox)
            if score > best_iou:
                best, best_iou = obj, score
        if best is not None:
            return Mask(object_mask(best, resolution) & rect)
    return Mask(rect)


def obstacles_for(mask: Mask, scene: Scene | None) -> np.ndarray:
    """Union of drawn pixels of every object disjoint from the query mask."""
    out = np.zeros_like(mask.data)
    if scene is None:
        return out
    resolution = mask.data.shape[0]
    for obj in scene.objects:
        pixels = object_mask(obj, resolution)
        if not (pixels & mask.data).any():
            out |= pixels
    return out


def principal_axis(mask: Mask) -> tuple[tuple[float, float], float, float, float]:
    """Centroid (pixel units), major-axis angle, and the two second moments."""
    ys, xs = np.nonzero(mask.data)
    if len(xs) == 0:
        raise ValueError("empty mask")
    px = xs + 0.5
    py = ys + 0.5
    cx, cy = float(px.mean()), float(py.mean())
    dx, dy = px - cx, py - cy
    vxx, vyy, vxy = float((dx * dx).mean()), float((dy * dy).mean()), float((dx * dy).mean())
    theta = 0.5 * math.atan2(2 * vxy, vxx - vyy) % math.pi
    mean = (vxx + vyy) / 2
    diff = math.hypot((vxx - vyy) / 2, vxy)
    lam1, lam2 = mean + diff, mean - diff
    return (cx, cy), theta, lam1, lam2


def _variance_along(mask_moments, angle: float) -> float:
    vxx, vyy, vxy = mask_moments
    c, s = math.cos(angle), math.sin(angle)
    return vxx * c * c + 2 * vxy * c * s + vyy * s * s


def _extent_along(mask: Mask, center, angle: float) -> tuple[float, float]:
    ys, xs = np.nonzero(mask.data)
    proj = (xs + 0.5 - center[0]) * math.cos(angle) + (ys + 0.5 - center[1]) * math.sin(angle)
    return float(proj.max()), float(-proj.min())


def _finger_footprint(shape, center, angle, offset_lo, offset_hi, half_width) -> np.ndarray:
    h, w = shape
    ys, xs = np.mgrid[0:h, 0:w]
    dx, dy = xs + 0.5 - center[0], ys + 0.5 - center[1]
    along = dx * math.cos(angle) + dy * math.sin(angle)
    perp = -dx * math.sin(angle) + dy * math.cos(angle)
    return (along >= offset_lo) & (along <= offset_hi) & (np.abs(perp) <= half_width)


def grasp_candidates(mask: Mask, obstacles: np.ndarray) -> list[dict]:
    """All centroid grasp candidates with score and collision flag.

    Candidate closing angles: perpendicular to the principal axis, plus the
    two image-aligned directions. Score 1 means closing along the minor axis.
    """
    center, theta, lam1, lam2 = principal_axis(mask)
    ys, xs = np.nonzero(mask.data)
    px, py = xs + 0.5, ys + 0.5
    dx, dy = px - center[0], py - center[1]
    moments = (float((dx * dx).mean()), float((dy * dy).mean()), float((dx * dy).mean()))

    angles = []
    for cand in ((theta + math.pi / 2) % math.pi, 0.0, math.pi / 2):
        if not any(abs(cand - a) < 1e-9 for a in angles):
            angles.append(cand)

    out = []
    for angle in angles:
        if lam1 - lam2 < 1e-9:
            score = 1.0
        else:
            score = 1.0 - (_variance_along(moments, angle) - lam2) / (lam1 - lam2)
            score = min(1.0, max(0.0, score))
        e_hi, e_lo = _extent_along(mask, center, angle)
        fingers = _finger_footprint(
            mask.data.shape, center, angle,
            e_hi + FINGER_CLEARANCE_PX, e_hi + FINGER_CLEARANCE_PX + FINGER_DEPTH_PX,
            _finger_half_width(mask, center, angle),
        ) | _finger_footprint(
            mask.data.shape, center, angle,
            -(e_lo + FINGER_CLEARANCE_PX + FINGER_DEPTH_PX), -(e_lo + FINGER_CLEARANCE_PX),
            _finger_half_width(mask, center, angle),
        )
        collides = bool((fingers & obstacles).any())
        out.append(
            {
                "angle": angle,
                "score": score,
                "collides": collides,
                "opening": e_hi + e_lo + 2 * FINGER_CLEARANCE_PX,
                "center": center,
            }
        )
    return out


def _finger_half_width(mask: Mask, center, angle: float) -> float:
    hi, lo = _extent_along(mask, center, angle + math.pi / 2)
    return max(MIN_FINGER_WIDTH_PX, 0.8 * (hi + lo)) / 2


def propose_and_select(mask: Mask, scene: Scene | None = None) -> Grasp | None:
    """Highest-score collision-free centroid grasp, or None when fully blocked.

    Ties resolve to the smaller angle, so selection is deterministic.
    """
    if mask.pixel_count == 0:
        raise ValueError("empty mask")
    obstacles = obstacles_for(mask, scene)
    survivors = [c for c in grasp_candidates(mask, obstacles) if not c["collides"]]
    if not survivors:
        return None
    best = min(survivors, key=lambda c: (-c["score"], c["angle"]))
    resolution = mask.data.shape[0]
    return Grasp(
        center=(best["center"][0] / resolution, best["center"][1] / resolution),
        angle=best["angle"],
        width=best["opening"] / resolution,
        score=best["score"],
    )
