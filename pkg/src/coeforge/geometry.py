"""Rectangle arithmetic: IoU, pairwise maxima, and page clamping.

Boxes are continuous rectangles: touching edges have zero intersection
area, hence IoU 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .core import BoundingBox, PageRef
from .errors import EmptyAfterClamp


@dataclass(frozen=True)
class CropRegion:
    """A box guaranteed to lie within its page's bounds."""

    box: BoundingBox
    page: PageRef


def intersection_area(a: BoundingBox, b: BoundingBox) -> float:
    width = min(a.x2, b.x2) - max(a.x1, b.x1)
    height = min(a.y2, b.y2) - max(a.y1, b.y1)
    if width <= 0 or height <= 0:
        return 0.0
    return width * height


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union of two boxes, in [0, 1]."""
    inter = intersection_area(a, b)
    if inter == 0.0:
        return 0.0
    return inter / (a.area + b.area - inter)


def max_pairwise_iou(boxes: Sequence[BoundingBox]) -> float:
    """Maximum IoU over all unordered box pairs; 0 for fewer than two boxes."""
    best = 0.0
    for i in range(len(boxes)):
        for j in range(i + 1, len(boxes)):
            value = iou(boxes[i], boxes[j])
            if value > best:
                best = value
    return best


def clamp_to_page(box: BoundingBox, page: PageRef) -> CropRegion:
    """Clip a box into the page rectangle.

    Raises:
        EmptyAfterClamp: the box lies entirely outside the page.
    """
    x1 = min(max(box.x1, 0.0), float(page.width))
    y1 = min(max(box.y1, 0.0), float(page.height))
    x2 = min(max(box.x2, 0.0), float(page.width))
    y2 = min(max(box.y2, 0.0), float(page.height))
    if x1 >= x2 or y1 >= y2:
        raise EmptyAfterClamp(
            f"box {box.as_tuple()} has no area inside page "
            f"{page.page_id} ({page.width}x{page.height})"
        )
    return CropRegion(box=BoundingBox(x1, y1, x2, y2), page=page)
