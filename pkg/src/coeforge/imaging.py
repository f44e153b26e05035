"""Page content loading and crop materialization for the encoder.

Two page flavors exist behind one store interface:

* raster pages (PNG/JPEG files), cropped pixel-exactly into PNG bytes, and
* synthetic pages (JSON files of axis-aligned text regions), cropped into
  the weighted-text payload the mock encoder consumes.

Original resolutions are preserved: pages are never resized before
cropping.
"""

from __future__ import annotations

import io
import json
import math
import threading
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path

from PIL import Image, UnidentifiedImageError

from .core import BoundingBox, PageRef, validate_box
from .embedding import encode_synthetic_crop
from .errors import DecodeError, DegenerateBox, DimensionMismatch, NegativeCoordinate
from .geometry import CropRegion, intersection_area

SYNTHETIC_PAGE_SUFFIX = ".json"


@dataclass(frozen=True)
class PageImage:
    """Decoded 8-bit RGB raster page."""

    pixels: Image.Image
    origin: PageRef


@dataclass(frozen=True)
class TextRegion:
    """One annotated text region on a synthetic page."""

    box: BoundingBox
    text: str


@dataclass(frozen=True)
class SyntheticPage:
    """Region-annotated stand-in for a rendered document page."""

    width: int
    height: int
    regions: tuple[TextRegion, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "regions", tuple(self.regions))
        if self.width <= 0 or self.height <= 0:
            raise ValueError("synthetic page needs positive dimensions")


def load_page(ref: PageRef, base_dir: Path | str | None = None) -> PageImage:
    """Decode the raster image a page ref points at.

    Raises:
        DecodeError: the file is missing, truncated, or not an image.
        DimensionMismatch: decoded size differs from the declared size.
    """
    path = _resolve(ref.image_locator, base_dir)
    try:
        with Image.open(path) as img:
            img.load()
            decoded = img.convert("RGB")
    except FileNotFoundError as exc:
        raise DecodeError(f"page image not found: {path}") from exc
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise DecodeError(f"cannot decode page image {path}: {exc}") from exc
    if decoded.size != (ref.width, ref.height):
        raise DimensionMismatch(
            f"page {ref.page_id}: declared {ref.width}x{ref.height}, "
            f"file is {decoded.size[0]}x{decoded.size[1]}"
        )
    return PageImage(pixels=decoded, origin=ref)


def crop(img: PageImage, region: CropRegion) -> bytes:
    """Pixel-exact sub-image of a clamped region, as lossless PNG bytes.

    Fractional coordinates snap outward (floor on x1/y1, ceil on x2/y2) so a
    crop never loses content at its edges.
    """
    box = region.box
    left = max(0, math.floor(box.x1))
    upper = max(0, math.floor(box.y1))
    right = min(img.origin.width, math.ceil(box.x2))
    lower = min(img.origin.height, math.ceil(box.y2))
    piece = img.pixels.crop((left, upper, right, lower))
    buffer = io.BytesIO()
    piece.save(buffer, format="PNG")
    return buffer.getvalue()


def load_synthetic_page(path: Path | str) -> SyntheticPage:
    """Load a synthetic page description from its JSON file."""
    try:
        with open(path, "r", encoding="utf-8") as handle:
            payload = json.load(handle)
    except FileNotFoundError as exc:
        raise DecodeError(f"synthetic page not found: {path}") from exc
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise DecodeError(f"cannot decode synthetic page {path}: {exc}") from exc
    return synthetic_page_from_mapping(payload, source=str(path))


def synthetic_page_from_mapping(payload: dict, source: str = "<memory>") -> SyntheticPage:
    try:
        regions = tuple(
            TextRegion(box=validate_box(*entry["box"]), text=str(entry["text"]))
            for entry in payload["regions"]
        )
        return SyntheticPage(
            width=int(payload["width"]),
            height=int(payload["height"]),
            regions=regions,
        )
    except (KeyError, TypeError, ValueError, DegenerateBox, NegativeCoordinate) as exc:
        raise DecodeError(f"malformed synthetic page {source}: {exc}") from exc


def synthetic_page_to_mapping(page: SyntheticPage) -> dict:
    return {
        "width": page.width,
        "height": page.height,
        "regions": [
            {"box": list(region.box.as_tuple()), "text": region.text}
            for region in page.regions
        ],
    }


def synthetic_crop_parts(
    page: SyntheticPage, box: BoundingBox
) -> list[tuple[str, float]]:
    """Region texts under a crop, weighted by fractional area overlap."""
    parts = []
    for region in page.regions:
        overlap = intersection_area(box, region.box)
        if overlap > 0:
            parts.append((region.text, overlap / region.box.area))
    return parts


def _resolve(locator: str, base_dir: Path | str | None) -> Path:
    path = Path(locator)
    if not path.is_absolute() and base_dir is not None:
        path = Path(base_dir) / path
    return path


class _LruCache:
    """Small thread-safe LRU keyed by locator string."""

    def __init__(self, capacity: int):
        self._capacity = capacity
        self._items: OrderedDict[str, object] = OrderedDict()
        self._lock = threading.Lock()

    def get(self, key: str):
        with self._lock:
            if key not in self._items:
                return None
            self._items.move_to_end(key)
            return self._items[key]

    def put(self, key: str, value: object) -> None:
        with self._lock:
            self._items[key] = value
            self._items.move_to_end(key)
            while len(self._items) > self._capacity:
                self._items.popitem(last=False)


class PageStore:
    """Loads page content on demand and materializes crop bytes.

    File-backed by default: ``.json`` locators are synthetic pages, anything
    else is decoded as a raster image.  Decoded pages sit in a bounded LRU
    cache shared safely across threads.
    """

    def __init__(self, base_dir: Path | str | None = None, cache_size: int = 64):
        self._base_dir = base_dir
        self._cache = _LruCache(cache_size)

    def _load(self, ref: PageRef):
        cached = self._cache.get(ref.image_locator)
        if cached is not None:
            return cached
        if ref.image_locator.endswith(SYNTHETIC_PAGE_SUFFIX):
            page = load_synthetic_page(_resolve(ref.image_locator, self._base_dir))
            if (page.width, page.height) != (ref.width, ref.height):
                raise DimensionMismatch(
                    f"page {ref.page_id}: declared {ref.width}x{ref.height}, "
                    f"content is {page.width}x{page.height}"
                )
            loaded: object = page
        else:
            loaded = load_page(ref, self._base_dir)
        self._cache.put(ref.image_locator, loaded)
        return loaded

    def crop_bytes(self, ref: PageRef, region: CropRegion) -> bytes:
        """Crop content for the encoder: PNG for raster, payload for synthetic."""
        content = self._load(ref)
        if isinstance(content, SyntheticPage):
            return encode_synthetic_crop(synthetic_crop_parts(content, region.box))
        return crop(content, region)


class InMemoryPageStore:
    """Page store over already-constructed synthetic pages (no files)."""

    def __init__(self, pages: dict[str, SyntheticPage]):
        self._pages = dict(pages)

    def crop_bytes(self, ref: PageRef, region: CropRegion) -> bytes:
        try:
            page = self._pages[ref.image_locator]
        except KeyError as exc:
            raise DecodeError(f"unknown in-memory page {ref.image_locator}") from exc
        return encode_synthetic_crop(synthetic_crop_parts(page, region.box))
