"""Axis-aligned box geometry: IoU, generalized IoU (with analytic gradients
for the regression loss), and L1 distance.

Boxes are (x1, y1, x2, y2) in normalized image coordinates. The Box type
enforces the [0,1] domain invariant; the raw-array helpers below accept any
ordered coordinates so that unclipped head outputs remain differentiable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError


@dataclass(frozen=True)
class Box:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if not (self.x1 <= self.x2 and self.y1 <= self.y2):
            raise ValueError(f"degenerate box: {self}")
        for v in (self.x1, self.y1, self.x2, self.y2):
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"box coordinate {v} outside [0, 1]")

    def to_array(self) -> np.ndarray:
        return np.array([self.x1, self.y1, self.x2, self.y2], dtype=np.float64)

    @classmethod
    def from_array(cls, a) -> "Box":
        a = np.asarray(a, dtype=np.float64)
        if a.shape != (4,):
            raise ShapeError(f"box array must have 4 entries, got shape {a.shape}")
        return cls(float(a[0]), float(a[1]), float(a[2]), float(a[3]))

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)


def _coords(b) -> np.ndarray:
    if isinstance(b, Box):
        return b.to_array()
    a = np.asarray(b, dtype=np.float64)
    if a.shape != (4,):
        raise ShapeError(f"expected 4 box coordinates, got shape {a.shape}")
    return a


def iou(a, b) -> float:
    """Intersection over union; 0 when the union has zero area."""
    ax1, ay1, ax2, ay2 = _coords(a)
    bx1, by1, bx2, by2 = _coords(b)
    iw = max(min(ax2, bx2) - max(ax1, bx1), 0.0)
    ih = max(min(ay2, by2) - max(ay1, by1), 0.0)
    inter = iw * ih
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def giou(a, b) -> float:
    """Generalized IoU: IoU - (hull - union) / hull, in [-1, 1]."""
    return giou_with_grad(a, b)[0]


def giou_with_grad(a, b):
    """gIoU and its gradient w.r.t. the first box's (x1, y1, x2, y2).

    Piecewise smooth; at ties between the two boxes' edges a one-sided
    subgradient is taken (deterministically, via strict comparisons).
    """
    ca = _coords(a)
    cb = _coords(b)
    ax1, ay1, ax2, ay2 = ca
    bx1, by1, bx2, by2 = cb

    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    pos = iw > 0.0 and ih > 0.0
    inter = iw * ih if pos else 0.0

    area_a = (ax2 - ax1) * (ay2 - ay1)
    area_b = (bx2 - bx1) * (by2 - by1)
    union = area_a + area_b - inter

    hw = max(ax2, bx2) - min(ax1, bx1)
    hh = max(ay2, by2) - min(ay1, by1)
    hull = hw * hh

    if union <= 0.0 or hull <= 0.0:
        return 0.0, np.zeros(4)

    # dI/d(a coords): active only when the corresponding a-edge is the tight one
    dI = np.zeros(4)
    if pos:
        dI[0] = -ih if ax1 > bx1 else 0.0
        dI[2] = ih if ax2 < bx2 else 0.0
        dI[1] = -iw if ay1 > by1 else 0.0
        dI[3] = iw if ay2 < by2 else 0.0

    dA = np.array([-(ay2 - ay1), -(ax2 - ax1), (ay2 - ay1), (ax2 - ax1)])
    dU = dA - dI

    dH = np.zeros(4)
    dH[0] = -hh if ax1 < bx1 else 0.0
    dH[2] = hh if ax2 > bx2 else 0.0
    dH[1] = -hw if ay1 < by1 else 0.0
    dH[3] = hw if ay2 > by2 else 0.0

    iou_val = inter / union
    value = iou_val - (hull - union) / hull
    grad = (dI * union - inter * dU) / union**2 + (dU * hull - union * dH) / hull**2
    return value, grad


def l1_distance(a, b) -> float:
    """Sum of absolute coordinate differences."""
    return float(np.abs(_coords(a) - _coords(b)).sum())


def l1_grad(a, b) -> np.ndarray:
    """Subgradient of l1_distance w.r.t. the first box (0 at exact ties)."""
    return np.sign(_coords(a) - _coords(b))
