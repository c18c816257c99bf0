"""Localization protocols for attention maps.

* Pointing game: is the map's maximum on an instance of the cued category
  (with a pixel tolerance)?
* Dominant-object localization: threshold the map at ``alpha`` times its
  mean and take the tightest box around the surviving pixels.
* Proposal re-scoring: rank segments by attention mass over area**gamma,
  suppress duplicates, measure recall@k.

Boxes are ``(x0, y0, x1, y1)`` with inclusive pixel coordinates.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import EmptyAttention, EmptyCategory, EmptyProposal, ParseError, ShapeMismatch
from .imageio import image_size, read_mask

Box = Tuple[int, int, int, int]


@dataclass(frozen=True)
class GroundTruthRegion:
    category: str
    bbox: Optional[Box] = None
    mask: Optional[np.ndarray] = None

    def __post_init__(self):
        if (self.bbox is None) == (self.mask is None):
            raise ValueError("a region needs exactly one of bbox or mask")
        if self.bbox is not None:
            b = tuple(int(v) for v in self.bbox)
            if len(b) != 4 or b[0] > b[2] or b[1] > b[3]:
                raise ValueError(f"bbox corners out of order: {self.bbox}")
            object.__setattr__(self, "bbox", b)
        else:
            object.__setattr__(self, "mask", np.asarray(self.mask, dtype=bool))

    def raster(self, size) -> np.ndarray:
        h, w = size
        if self.mask is not None:
            if self.mask.shape != (h, w):
                raise ShapeMismatch(f"mask {self.mask.shape} vs image {(h, w)}")
            return self.mask
        out = np.zeros((h, w), dtype=bool)
        x0, y0, x1, y1 = self.bbox
        out[max(y0, 0):y1 + 1, max(x0, 0):x1 + 1] = True
        return out


@dataclass
class DatasetEntry:
    image: str
    regions: List[GroundTruthRegion]
    labels: frozenset = frozenset()
    size: Optional[Tuple[int, int]] = None
    targets: Optional[List[str]] = None
    extra: dict = field(default_factory=dict)

    @property
    def categories(self) -> frozenset:
        return frozenset(r.category for r in self.regions) | self.labels

    @property
    def target_categories(self) -> List[str]:
        return sorted(self.categories) if self.targets is None else list(self.targets)

    def regions_of(self, category: str) -> List[GroundTruthRegion]:
        return [r for r in self.regions if r.category == category]

    def image_size(self) -> Tuple[int, int]:
        if self.size is None:
            self.size = image_size(self.image)
        return self.size


@dataclass
class DatasetManifest:
    entries: List[DatasetEntry]
    categories: List[str]

    def __post_init__(self):
        known = set(self.categories)
        for i, e in enumerate(self.entries):
            missing = e.categories - known
            if missing:
                raise ParseError(f"entry {i}: categories {sorted(missing)} not in category list")


@dataclass(frozen=True)
class ScoredBox:
    bbox: Box
    score: float

    def __post_init__(self):
        if not np.isfinite(self.score):
            raise ValueError(f"score must be finite, got {self.score}")


def _resolve(base: Path, p: str) -> str:
    q = Path(p)
    return str(q if q.is_absolute() else base / q)


def parse_entry(obj: dict, base: Path) -> DatasetEntry:
    regions = []
    for r in obj.get("regions", []):
        if "bbox" in r:
            regions.append(GroundTruthRegion(str(r["category"]), bbox=tuple(r["bbox"])))
        elif "mask_path" in r:
            regions.append(GroundTruthRegion(str(r["category"]),
                                             mask=read_mask(_resolve(base, r["mask_path"]))))
        else:
            raise ParseError(f"region {r!r} needs a bbox or mask_path")
    extra = {k: v for k, v in obj.items()
             if k not in ("image", "regions", "labels", "size", "targets")}
    for key in ("map",):
        if key in extra:
            extra[key] = _resolve(base, extra[key])
    if "maps" in extra:
        extra["maps"] = {k: _resolve(base, v) for k, v in extra["maps"].items()}
    size = tuple(obj["size"]) if "size" in obj else None
    return DatasetEntry(_resolve(base, obj["image"]), regions, frozenset(obj.get("labels", ())),
                        size, obj.get("targets"), extra)


def load_manifest(path, categories: Optional[Sequence[str]] = None) -> DatasetManifest:
    """Read a JSON-lines manifest; paths inside are relative to the file."""
    path = Path(path)
    base = path.parent
    entries = []
    for lineno, line in enumerate(path.read_text().splitlines()):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            entries.append(parse_entry(obj, base))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"{path}: entry {len(entries)} (line {lineno + 1}): {exc}") from None
    if categories is None:
        categories = sorted(set().union(*(e.categories for e in entries))) if entries else []
    return DatasetManifest(entries, list(categories))


def load_proposals(path) -> Dict[str, list]:
    """Proposals keyed by image path: each a bbox tuple or a boolean mask."""
    path = Path(path)
    out = {}
    for i, line in enumerate(path.read_text().splitlines()):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            segs = []
            for s in obj["segments"]:
                if isinstance(s, str):
                    segs.append(read_mask(_resolve(path.parent, s)))
                elif isinstance(s, dict) and "mask_path" in s:
                    segs.append(read_mask(_resolve(path.parent, s["mask_path"])))
                else:
                    segs.append(tuple(int(v) for v in (s["bbox"] if isinstance(s, dict) else s)))
            out[_resolve(path.parent, obj["image"])] = segs
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"{path}: proposal entry {i}: {exc}") from None
    return out


# -- pointing game -------------------------------------------------------------

def _as_image(m) -> np.ndarray:
    v = getattr(m, "values", m)
    v = np.asarray(v, dtype=np.float64)
    if v.ndim == 3 and v.shape[0] == 1:
        v = v[0]
    if v.ndim != 2:
        raise ShapeMismatch(f"expected a 2-D map, got shape {v.shape}")
    return v


def argmax_point(m) -> Tuple[int, int]:
    """(y, x) of the maximum; ties go to the lowest flat index."""
    img = _as_image(m)
    y, x = divmod(int(np.argmax(img)), img.shape[1])
    return y, x


def pointing_hit(m, regions: Iterable[GroundTruthRegion], margin_px: int = 15) -> bool:
    img = _as_image(m)
    h, w = img.shape
    y, x = argmax_point(img)
    for r in regions:
        if r.mask is not None:
            if r.mask.shape != (h, w):
                raise ShapeMismatch(f"mask {r.mask.shape} vs map {(h, w)}")
            win = r.mask[max(y - margin_px, 0):y + margin_px + 1,
                         max(x - margin_px, 0):x + margin_px + 1]
            if win.any():
                return True
        else:
            x0, y0, x1, y1 = r.bbox
            if (max(x0 - margin_px, 0) <= x <= min(x1 + margin_px, w - 1)
                    and max(y0 - margin_px, 0) <= y <= min(y1 + margin_px, h - 1)):
                return True
    return False


def pointing_game(results: Iterable[Tuple[str, bool]],
                  categories: Optional[Sequence[str]] = None) -> dict:
    """Per-category accuracy hits / (hits + misses) and their unweighted mean."""
    hits: Dict[str, int] = {}
    tests: Dict[str, int] = {}
    for cat, hit in results:
        tests[cat] = tests.get(cat, 0) + 1
        hits[cat] = hits.get(cat, 0) + bool(hit)
    cats = list(categories) if categories is not None else sorted(tests)
    empty = [c for c in cats if tests.get(c, 0) == 0]
    if empty or not cats:
        raise EmptyCategory(f"no pointing tests for categories {empty}")
    acc = {c: hits[c] / tests[c] for c in cats}
    return {"per_category": acc,
            "hits": {c: hits[c] for c in cats},
            "tests": {c: tests[c] for c in cats},
            "mean_accuracy": float(np.mean([acc[c] for c in cats]))}


def category_area(entry: DatasetEntry, category: str) -> int:
    """Union area of a category's boxes; pixel count for masks."""
    regions = entry.regions_of(category)
    if not regions:
        return 0
    h, w = entry.image_size()
    union = np.zeros((h, w), dtype=bool)
    for r in regions:
        union |= r.raster((h, w))
    return int(union.sum())


def is_difficult(entry: DatasetEntry, category: str) -> bool:
    h, w = entry.image_size()
    small = category_area(entry, category) < (h * w) / 4
    distracter = bool(entry.categories - {category})
    return small and distracter


def filter_difficult(manifest: DatasetManifest) -> DatasetManifest:
    """Keep (image, category) pairs with a small target and a distracter category."""
    kept = []
    for e in manifest.entries:
        targets = [c for c in e.target_categories if is_difficult(e, c)]
        if targets:
            kept.append(replace(e, targets=targets))
    return DatasetManifest(kept, list(manifest.categories))


# -- boxes -----------------------------------------------------------------------

def box_area(b: Box) -> int:
    return max(b[2] - b[0] + 1, 0) * max(b[3] - b[1] + 1, 0)


def iou(a: Box, b: Box) -> float:
    ix = min(a[2], b[2]) - max(a[0], b[0]) + 1
    iy = min(a[3], b[3]) - max(a[1], b[1]) + 1
    inter = max(ix, 0) * max(iy, 0)
    if inter == 0:
        return 0.0
    return inter / (box_area(a) + box_area(b) - inter)


def mask_bbox(mask) -> Box:
    ys, xs = np.nonzero(np.asarray(mask))
    if ys.size == 0:
        raise EmptyProposal("mask is empty")
    return int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max())


def extract_bbox(m, alpha: float) -> Box:
    """Tightest box around pixels >= alpha * mean(map) (positive pixels only)."""
    img = _as_image(m)
    tau = alpha * img.mean()
    white = (img >= tau) & (img > 0)
    if not white.any():
        raise EmptyAttention("no pixel reaches the threshold")
    return mask_bbox(white)


def localization_error(boxes: Sequence[Optional[Box]], gts: Sequence[Sequence[Box]],
                       threshold: float = 0.5) -> float:
    """Fraction of images whose box misses every ground truth at ``threshold``.

    A ``None`` box (no attention) counts as an error.
    """
    if not boxes:
        raise ValueError("no boxes to evaluate")
    errors = 0
    for b, g in zip(boxes, gts):
        if b is None or not any(iou(b, t) >= threshold for t in g):
            errors += 1
    return errors / len(boxes)


# -- proposal scoring ------------------------------------------------------------

def score_segments(m, proposals, gamma: float) -> List[ScoredBox]:
    """f(R) = attention mass in R / area(R)**gamma, best first.

    Proposals are boxes or boolean masks; masks are reported by their
    tight bounding box. Equal scores keep input order.
    """
    img = _as_image(m)
    h, w = img.shape
    scored = []
    for p in proposals:
        if isinstance(p, np.ndarray) and p.ndim == 2:
            if p.shape != (h, w):
                raise ShapeMismatch(f"proposal mask {p.shape} vs map {(h, w)}")
            mask = p.astype(bool)
            area = int(mask.sum())
            if area == 0:
                raise EmptyProposal("proposal mask is empty")
            mass = float(img[mask].sum())
            box = mask_bbox(mask)
        else:
            box = tuple(int(v) for v in p)
            x0, y0, x1, y1 = box
            if x0 > x1 or y0 > y1:
                raise EmptyProposal(f"proposal box {box} has no area")
            if x0 < 0 or y0 < 0 or x1 >= w or y1 >= h:
                raise ShapeMismatch(f"proposal box {box} leaves the {w}x{h} map")
            area = box_area(box)
            mass = float(img[y0:y1 + 1, x0:x1 + 1].sum())
        scored.append(ScoredBox(box, mass / area ** gamma))
    order = sorted(range(len(scored)), key=lambda i: -scored[i].score)
    return [scored[i] for i in order]


def nms(boxes: Sequence[ScoredBox], iou_threshold: float = 0.7) -> List[ScoredBox]:
    """Greedy suppression of boxes overlapping a better one at >= threshold."""
    order = sorted(range(len(boxes)), key=lambda i: -boxes[i].score)
    kept: List[ScoredBox] = []
    for i in order:
        b = boxes[i]
        if all(iou(b.bbox, k.bbox) < iou_threshold for k in kept):
            kept.append(b)
    return kept


def recall_at_k(scored: Sequence[ScoredBox], gt: Sequence[Box], k: int,
                iou_threshold: float = 0.5) -> int:
    if k < 1:
        raise ValueError("k must be >= 1")
    return int(any(iou(s.bbox, g) >= iou_threshold for s in scored[:k] for g in gt))
