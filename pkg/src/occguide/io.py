"""Reading and writing annotations, scenes, maps, regions, detections and reports."""

from __future__ import annotations

import csv
import json
import math
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .evaluation import EvalReport
from .exceptions import FormatError, InvalidArgumentError
from .geometry import Annotation, BBox, Detection
from .occlusion_map import OcclusionMap
from .region_select import Region
from .scenes import SceneObject, SceneSpec

__all__ = [
    "ImageAnnotations",
    "DatasetManifest",
    "VISDRONE_CATEGORIES",
    "VISDRONE_OCCLUSION_RATIOS",
    "load_annotations",
    "save_annotations",
    "dataset_to_scenes",
    "scenes_to_dataset",
    "load_scenes",
    "save_scenes",
    "save_map",
    "load_map",
    "save_regions",
    "load_regions",
    "save_detections",
    "load_detections",
    "save_report",
    "load_report",
    "save_report_csv",
    "EVAL_REPORT_SCHEMA",
]

PathLike = Union[str, os.PathLike]

VISDRONE_CATEGORIES = {
    0: "ignored regions",
    1: "pedestrian",
    2: "people",
    3: "bicycle",
    4: "car",
    5: "van",
    6: "truck",
    7: "tricycle",
    8: "awning-tricycle",
    9: "bus",
    10: "motor",
    11: "others",
}
# Occlusion levels are "none", "1-50%" and "50-100%"; each maps to its bin midpoint.
VISDRONE_OCCLUSION_RATIOS = {0: 0.0, 1: 0.25, 2: 0.75}


@dataclass
class ImageAnnotations:
    id: str
    width: Optional[float]
    height: Optional[float]
    annotations: List[Annotation] = field(default_factory=list)


@dataclass
class DatasetManifest:
    images: List[ImageAnnotations]
    categories: Dict[int, str] = field(default_factory=dict)

    def __post_init__(self):
        seen = set()
        for img in self.images:
            if img.id in seen:
                raise InvalidArgumentError(f"duplicate image id {img.id!r}")
            seen.add(img.id)
            for dim in (img.width, img.height):
                if dim is not None and not dim > 0:
                    raise InvalidArgumentError(f"image {img.id!r}: dims must be positive")

    def __len__(self):
        return len(self.images)

    def __iter__(self):
        return iter(self.images)

    def __getitem__(self, i):
        return self.images[i]

    @property
    def annotations(self) -> List[List[Annotation]]:
        return [img.annotations for img in self.images]


# --------------------------------------------------------------------------
# annotations

def _num(value, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise FormatError(f"{where}: expected a finite number, got {value!r}")
    return float(value)


def _parse_annotation(raw, where: str, categories: Mapping[int, str]) -> Annotation:
    if not isinstance(raw, dict):
        raise FormatError(f"{where}: expected an object")
    bbox = raw.get("bbox")
    if not isinstance(bbox, list) or len(bbox) != 4:
        raise FormatError(f"{where}.bbox: expected [x, y, w, h]")
    category = raw.get("category")
    if isinstance(category, bool) or not isinstance(category, int):
        raise FormatError(f"{where}.category: expected an integer id, got {category!r}")
    if categories and category not in categories:
        raise FormatError(
            f"{where}.category: unknown id {category}; valid ids are {sorted(categories)}"
        )
    ratio = raw.get("occlusion_ratio")
    try:
        return Annotation(
            BBox(*(_num(v, f"{where}.bbox") for v in bbox)),
            category,
            None if ratio is None else _num(ratio, f"{where}.occlusion_ratio"),
        )
    except InvalidArgumentError as exc:
        raise FormatError(f"{where}: {exc}") from None


def _load_native(path: Path) -> DatasetManifest:
    text = path.read_text(encoding="utf-8")
    if not text.strip():
        return DatasetManifest([])
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict) or not isinstance(doc.get("images"), list):
        raise FormatError(f"{path}: expected an object with an 'images' array")
    raw_cats = doc.get("categories") or {}
    try:
        categories = {int(k): str(v) for k, v in raw_cats.items()}
    except (AttributeError, ValueError):
        raise FormatError(f"{path}: 'categories' must map integer ids to names") from None
    images = []
    for i, raw in enumerate(doc["images"]):
        where = f"{path}: images[{i}]"
        if not isinstance(raw, dict) or "id" not in raw:
            raise FormatError(f"{where}: expected an object with an 'id'")
        width = raw.get("width")
        height = raw.get("height")
        width = None if width is None else _num(width, f"{where}.width")
        height = None if height is None else _num(height, f"{where}.height")
        if (width is not None and width <= 0) or (height is not None and height <= 0):
            raise FormatError(f"{where}: width and height must be positive")
        anns = [
            _parse_annotation(a, f"{where}.annotations[{j}]", categories)
            for j, a in enumerate(raw.get("annotations", []))
        ]
        images.append(ImageAnnotations(str(raw["id"]), width, height, anns))
    try:
        return DatasetManifest(images, categories)
    except InvalidArgumentError as exc:
        raise FormatError(f"{path}: {exc}") from None


def _parse_visdrone_file(
    path: Path,
    categories: Mapping[int, str],
    occlusion_table: Mapping[int, float],
) -> List[Annotation]:
    anns = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip().rstrip(",")
            if not line:
                continue
            parts = line.split(",")
            if len(parts) < 8:
                raise FormatError(f"{path}:{lineno}: expected 8 comma-separated fields, got {len(parts)}")
            try:
                x, y, w, h = (float(p) for p in parts[:4])
                category = int(parts[5])
                occlusion = int(parts[7])
            except ValueError:
                raise FormatError(f"{path}:{lineno}: non-numeric field in {line!r}") from None
            if category == 0:
                # ignored region, not an object
                continue
            if category not in categories:
                raise FormatError(
                    f"{path}:{lineno}: unknown category id {category}; valid ids are {sorted(categories)}"
                )
            if occlusion not in occlusion_table:
                raise FormatError(
                    f"{path}:{lineno}: unknown occlusion level {occlusion}; valid levels are {sorted(occlusion_table)}"
                )
            try:
                anns.append(Annotation(BBox(x, y, w, h), category, occlusion_table[occlusion]))
            except InvalidArgumentError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
    return anns


def load_annotations(
    path: PathLike,
    format: str = "native_json",
    image_size: Optional[Tuple[float, float]] = None,
    categories: Optional[Mapping[int, str]] = None,
    occlusion_table: Mapping[int, float] = VISDRONE_OCCLUSION_RATIOS,
) -> DatasetManifest:
    """Load annotations as a :class:`DatasetManifest`.

    ``native_json`` reads this package's JSON schema. ``visdrone_txt`` reads
    one VisDrone-DET text file, or a directory of them (one image per file,
    id taken from the file stem). VisDrone files carry no image size, so
    ``image_size`` supplies it when known.
    """
    path = Path(path)
    if not path.exists():
        raise FormatError(f"{path}: no such file")
    if format == "native_json":
        return _load_native(path)
    if format != "visdrone_txt":
        raise InvalidArgumentError(f"unknown annotation format {format!r}")
    cats = dict(categories or {k: v for k, v in VISDRONE_CATEGORIES.items() if k})
    files = sorted(path.glob("*.txt")) if path.is_dir() else [path]
    width, height = image_size if image_size else (None, None)
    images = [
        ImageAnnotations(f.stem, width, height, _parse_visdrone_file(f, cats, occlusion_table))
        for f in files
    ]
    return DatasetManifest(images, cats)


def _num_out(v):
    """Canonical JSON number: integral values as ints, so save/load/save is byte-stable."""
    if v is None:
        return None
    v = float(v)
    return int(v) if v.is_integer() and abs(v) < 2 ** 53 else v


def _fmt_bbox(b: BBox) -> list:
    return [_num_out(v) for v in (b.x, b.y, b.w, b.h)]


def _manifest_doc(manifest: DatasetManifest) -> dict:
    doc: dict = {}
    if manifest.categories:
        doc["categories"] = {str(k): v for k, v in sorted(manifest.categories.items())}
    doc["images"] = [
        {
            "id": img.id,
            "width": _num_out(img.width),
            "height": _num_out(img.height),
            "annotations": [
                {"bbox": _fmt_bbox(a.bbox), "category": a.category, "occlusion_ratio": _num_out(a.occlusion_ratio)}
                for a in img.annotations
            ],
        }
        for img in manifest.images
    ]
    return doc


def _write_json(path: PathLike, doc) -> None:
    Path(path).write_text(json.dumps(doc, indent=1, allow_nan=False) + "\n", encoding="utf-8")


def save_annotations(path: PathLike, manifest: DatasetManifest) -> None:
    _write_json(path, _manifest_doc(manifest))


# --------------------------------------------------------------------------
# scenes (same schema as native annotations; list order is draw order)

def scenes_to_dataset(scenes: Sequence[SceneSpec]) -> DatasetManifest:
    images = [
        ImageAnnotations(s.image_id if s.image_id is not None else str(i), s.img_w, s.img_h, s.annotations())
        for i, s in enumerate(scenes)
    ]
    return DatasetManifest(images)


def dataset_to_scenes(manifest: DatasetManifest, check_ratios: bool = True) -> List[SceneSpec]:
    """Rebuild scenes; annotation order is taken as draw order."""
    scenes = []
    for img in manifest.images:
        if img.width is None or img.height is None:
            raise FormatError(f"image {img.id!r}: width and height are required for a scene")
        scene = SceneSpec(
            img.width,
            img.height,
            tuple(SceneObject(a.bbox, a.category) for a in img.annotations),
            image_id=img.id,
        )
        if check_ratios:
            for j, (a, r) in enumerate(zip(img.annotations, scene.occlusion_ratios)):
                if a.occlusion_ratio is not None and abs(a.occlusion_ratio - r) > 1e-9:
                    raise FormatError(
                        f"image {img.id!r}, annotation {j}: occlusion_ratio {a.occlusion_ratio} "
                        f"disagrees with the geometry ({r})"
                    )
        scenes.append(scene)
    return scenes


def save_scenes(path: PathLike, scenes: Sequence[SceneSpec]) -> None:
    save_annotations(path, scenes_to_dataset(scenes))


def load_scenes(path: PathLike) -> List[SceneSpec]:
    return dataset_to_scenes(load_annotations(path))


# --------------------------------------------------------------------------
# occlusion maps: "OMAP1\n", "img_w img_h stride\n", row-major float32 LE

OMAP_MAGIC = b"OMAP1\n"


def encode_map(occ: OcclusionMap) -> bytes:
    header = f"{occ.img_w} {occ.img_h} {occ.stride}\n".encode("ascii")
    return OMAP_MAGIC + header + np.ascontiguousarray(occ.values, dtype="<f4").tobytes()


def decode_map(data: bytes, source: str = "<bytes>") -> OcclusionMap:
    if not data.startswith(OMAP_MAGIC):
        raise FormatError(f"{source}: bad magic, expected {OMAP_MAGIC!r}")
    end = data.find(b"\n", len(OMAP_MAGIC))
    if end < 0:
        raise FormatError(f"{source}: truncated header")
    try:
        img_w, img_h, stride = (int(t) for t in data[len(OMAP_MAGIC):end].decode("ascii").split())
    except (ValueError, UnicodeDecodeError):
        raise FormatError(f"{source}: malformed header {data[len(OMAP_MAGIC):end]!r}") from None
    if img_w <= 0 or img_h <= 0 or stride <= 0:
        raise FormatError(f"{source}: header values must be positive")
    rows, cols = OcclusionMap.grid_shape(img_w, img_h, stride)
    payload = data[end + 1:]
    if len(payload) != 4 * rows * cols:
        raise FormatError(f"{source}: expected {4 * rows * cols} payload bytes, found {len(payload)}")
    values = np.frombuffer(payload, dtype="<f4").reshape(rows, cols).astype(np.float64)
    try:
        return OcclusionMap(img_w, img_h, stride, values)
    except InvalidArgumentError as exc:
        raise FormatError(f"{source}: {exc}") from None


def save_map(path: PathLike, occ: OcclusionMap) -> None:
    Path(path).write_bytes(encode_map(occ))


def load_map(path: PathLike) -> OcclusionMap:
    try:
        data = Path(path).read_bytes()
    except FileNotFoundError:
        raise FormatError(f"{path}: no such file") from None
    return decode_map(data, str(path))


# --------------------------------------------------------------------------
# regions, detections, reports

def save_regions(path: PathLike, regions: Sequence[Region]) -> None:
    doc = [dict(zip("xywh", _fmt_bbox(r.rect))) for r in regions]
    Path(path).write_text(json.dumps(doc) + "\n", encoding="utf-8")


def load_regions(path: PathLike) -> List[Region]:
    doc = _read_json(path)
    if not isinstance(doc, list):
        raise FormatError(f"{path}: expected a JSON array of regions")
    out = []
    for i, r in enumerate(doc):
        where = f"{path}: [{i}]"
        try:
            out.append(Region(BBox(*(_num(r[k], where) for k in ("x", "y", "w", "h")))))
        except (KeyError, TypeError):
            raise FormatError(f"{where}: expected an object with x, y, w, h") from None
        except InvalidArgumentError as exc:
            raise FormatError(f"{where}: {exc}") from None
    return out


def _read_json(path: PathLike):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    except FileNotFoundError:
        raise FormatError(f"{path}: no such file") from None


def _det_doc(d: Detection) -> dict:
    return {**dict(zip("xywh", _fmt_bbox(d.bbox))), "category": d.category, "score": _num_out(d.score)}


def save_detections(path: PathLike, per_image: Sequence[Sequence[Detection]], image_ids: Optional[Sequence[str]] = None) -> None:
    """Write ``[{"image_id": id, "detections": [{x, y, w, h, category, score}, ...]}, ...]``."""
    ids = list(image_ids) if image_ids is not None else [str(i) for i in range(len(per_image))]
    if len(ids) != len(per_image):
        raise InvalidArgumentError("need one image id per detection list")
    doc = [{"image_id": i, "detections": [_det_doc(d) for d in dets]} for i, dets in zip(ids, per_image)]
    _write_json(path, doc)


def load_detections(path: PathLike) -> Tuple[List[str], List[List[Detection]]]:
    doc = _read_json(path)
    if not isinstance(doc, list):
        raise FormatError(f"{path}: expected a JSON array of per-image entries")
    ids, out = [], []
    for i, entry in enumerate(doc):
        where = f"{path}: [{i}]"
        if not isinstance(entry, dict) or "image_id" not in entry or not isinstance(entry.get("detections"), list):
            raise FormatError(f"{where}: expected {{image_id, detections}}")
        dets = []
        for j, d in enumerate(entry["detections"]):
            w = f"{where}.detections[{j}]"
            try:
                box = BBox(*(_num(d[k], w) for k in ("x", "y", "w", "h")))
                cat = d["category"]
                if isinstance(cat, bool) or not isinstance(cat, int):
                    raise FormatError(f"{w}.category: expected an integer id")
                dets.append(Detection(box, cat, _num(d["score"], w)))
            except (KeyError, TypeError):
                raise FormatError(f"{w}: expected x, y, w, h, category, score") from None
            except InvalidArgumentError as exc:
                raise FormatError(f"{w}: {exc}") from None
        ids.append(str(entry["image_id"]))
        out.append(dets)
    return ids, out


_METRIC = {"type": ["number", "null"], "minimum": 0, "maximum": 1}

EVAL_REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "EvalReport",
    "type": "object",
    "required": [
        "ap", "ap50", "ap75", "ap_s", "ap_m", "ap_l", "ar_s", "ar_m", "ar_l",
        "ar_occ", "objects_per_image", "overlaps_per_image",
    ],
    "properties": {
        **{k: _METRIC for k in ("ap", "ap50", "ap75", "ap_s", "ap_m", "ap_l", "ar_s", "ar_m", "ar_l")},
        "ar_occ": {
            "type": "object",
            "required": ["none", "partial", "heavy"],
            "properties": {k: _METRIC for k in ("none", "partial", "heavy")},
            "additionalProperties": False,
        },
        "objects_per_image": {"type": "number", "minimum": 0},
        "overlaps_per_image": {"type": "number", "minimum": 0},
        "n_images": {"type": "integer", "minimum": 0},
        "per_class_ap50": {"type": "object", "additionalProperties": _METRIC},
    },
    "additionalProperties": False,
}


def save_report(path: PathLike, report: EvalReport) -> None:
    _write_json(path, report.to_dict())


def load_report(path: PathLike) -> EvalReport:
    import jsonschema

    doc = _read_json(path)
    try:
        jsonschema.validate(doc, EVAL_REPORT_SCHEMA)
    except jsonschema.ValidationError as exc:
        loc = "/".join(str(p) for p in exc.absolute_path)
        raise FormatError(f"{path}: {loc}: {exc.message}") from None
    return EvalReport.from_dict(doc)


def _flatten(prefix: str, value, out: Dict[str, object]) -> None:
    if isinstance(value, dict):
        for k, v in value.items():
            _flatten(f"{prefix}.{k}" if prefix else k, v, out)
    else:
        out[prefix] = value


def save_report_csv(path: PathLike, report: EvalReport) -> None:
    """One ``metric,value`` row per scalar; nested keys are dotted (``ar_occ.heavy``)."""
    flat: Dict[str, object] = {}
    _flatten("", report.to_dict(), flat)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "value"])
        for k, v in flat.items():
            writer.writerow([k, "" if v is None else repr(v) if isinstance(v, float) else v])
