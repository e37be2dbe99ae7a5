"""On-disk formats: binary PPM/PGM images and versioned JSON documents.

Every JSON document carries ``"format_version": 1``. Slot coordinates are
stored in vehicle-frame meters, eight numbers in slot order.
"""

from __future__ import annotations

import dataclasses
import json
import os
import tempfile
from pathlib import Path
from typing import Any, Iterable, List, Tuple, Union

import numpy as np

from .camera import CAMERA_LABELS, CameraExtrinsics, CameraRig, FisheyeCamera, FisheyeIntrinsics
from .detector import DetectorConfig
from .errors import FormatError, SurroundSlotError
from .geometry import Detection, SlotClass, SlotPolygon, validate_slot

FORMAT_VERSION = 1
PathLike = Union[str, os.PathLike]


# ---------------------------------------------------------------------------
# Atomic writes
# ---------------------------------------------------------------------------


# mkstemp creates 0600 files; published outputs follow the process umask.
_UMASK = os.umask(0)
os.umask(_UMASK)


def atomic_write_bytes(path: PathLike, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.chmod(tmp, 0o666 & ~_UMASK)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: PathLike, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def write_json(path: PathLike, doc: Any) -> None:
    atomic_write_text(path, json.dumps(doc, indent=2) + "\n")


def read_json(path: PathLike) -> Any:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise FormatError(f"{path}: cannot read ({exc.strerror})") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise FormatError(f"{path}: top level must be a JSON object")
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: format_version must be {FORMAT_VERSION}, got {version!r}")
    return doc


# ---------------------------------------------------------------------------
# Netpbm
# ---------------------------------------------------------------------------


def encode_pnm(image: np.ndarray) -> bytes:
    img = np.asarray(image)
    if img.dtype != np.uint8:
        raise ValueError(f"images must be uint8, got {img.dtype}")
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[:, :, 0]
    if img.ndim == 2:
        magic = b"P5"
    elif img.ndim == 3 and img.shape[2] == 3:
        magic = b"P6"
    else:
        raise ValueError(f"unsupported image shape {img.shape}")
    h, w = img.shape[:2]
    return magic + b"\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(img).tobytes()


def decode_pnm(data: bytes, name: str = "<bytes>") -> np.ndarray:
    tokens: List[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"{name}: truncated header")
        tokens.append(data[start:pos])
    pos += 1  # single whitespace byte before the raster
    magic = tokens[0]
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"{name}: unsupported magic {magic!r}, expected P5 or P6")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise FormatError(f"{name}: non-integer header field") from exc
    if maxval != 255:
        raise FormatError(f"{name}: max value must be 255, got {maxval}")
    c = 3 if magic == b"P6" else 1
    n = w * h * c
    raster = data[pos:pos + n]
    if len(raster) != n:
        raise FormatError(f"{name}: expected {n} raster bytes, found {len(raster)}")
    arr = np.frombuffer(raster, dtype=np.uint8)
    return arr.reshape(h, w, 3).copy() if c == 3 else arr.reshape(h, w).copy()


def write_pnm(path: PathLike, image: np.ndarray) -> None:
    atomic_write_bytes(path, encode_pnm(image))


def read_pnm(path: PathLike) -> np.ndarray:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise FormatError(f"{path}: cannot read ({exc.strerror})") from exc
    return decode_pnm(data, str(path))


def read_color_image(path: PathLike) -> np.ndarray:
    img = read_pnm(path)
    if img.ndim != 3:
        raise FormatError(f"{path}: expected a color (P6) image")
    return img


# ---------------------------------------------------------------------------
# Field helpers
# ---------------------------------------------------------------------------


def _field(doc: dict, key: str, where: str):
    if not isinstance(doc, dict) or key not in doc:
        raise FormatError(f"{where}: missing field {key!r}")
    return doc[key]


def _numbers(value, n: int, where: str) -> List[float]:
    if not isinstance(value, list) or len(value) != n:
        raise FormatError(f"{where}: expected a list of {n} numbers")
    if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
        raise FormatError(f"{where}: expected numbers only")
    return [float(v) for v in value]


def _number(value, where: str) -> float:
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        raise FormatError(f"{where}: expected a number, got {value!r}")
    return float(value)


# ---------------------------------------------------------------------------
# Rig
# ---------------------------------------------------------------------------


def camera_to_dict(cam: FisheyeCamera) -> dict:
    intr = cam.intrinsics
    return {
        "focal_px": intr.focal_px,
        "cx": intr.principal_point[0],
        "cy": intr.principal_point[1],
        "k1": intr.k1,
        "k2": intr.k2,
        "width": intr.image_size[0],
        "height": intr.image_size[1],
        "fov_max_rad": intr.fov_max_rad,
        "rotation": [float(v) for v in cam.rotation.reshape(-1)],
        "translation": [float(v) for v in cam.position],
    }


def camera_from_dict(d: dict, label: str, where: str) -> FisheyeCamera:
    def num(key):
        return _number(_field(d, key, where), f"{where}.{key}")

    def count(key):
        v = _field(d, key, where)
        if not isinstance(v, int) or isinstance(v, bool):
            raise FormatError(f"{where}.{key}: expected an integer, got {v!r}")
        return v

    try:
        intr = FisheyeIntrinsics(
            focal_px=num("focal_px"),
            principal_point=(num("cx"), num("cy")),
            distortion=(num("k1"), num("k2")),
            image_size=(count("width"), count("height")),
            fov_max_rad=num("fov_max_rad"),
        )
        extr = CameraExtrinsics(
            rotation=np.array(_numbers(_field(d, "rotation", where), 9, f"{where}.rotation")).reshape(3, 3),
            translation=_numbers(_field(d, "translation", where), 3, f"{where}.translation"),
        )
    except SurroundSlotError as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"{where}: {exc}") from exc
    return FisheyeCamera(intrinsics=intr, extrinsics=extr, label=label)


def rig_to_dict(rig: CameraRig) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "cameras": {label: camera_to_dict(cam) for label, cam in rig.items()},
    }


def rig_from_dict(doc: dict, name: str = "rig") -> CameraRig:
    cams = _field(doc, "cameras", name)
    if not isinstance(cams, dict):
        raise FormatError(f"{name}.cameras: expected an object")
    missing = [l for l in CAMERA_LABELS if l not in cams]
    extra = [l for l in cams if l not in CAMERA_LABELS]
    if missing or extra:
        raise FormatError(f"{name}.cameras: need exactly {list(CAMERA_LABELS)}; missing {missing}, unexpected {extra}")
    return CameraRig({l: camera_from_dict(cams[l], l, f"{name}.cameras.{l}") for l in CAMERA_LABELS})


def write_rig(path: PathLike, rig: CameraRig) -> None:
    write_json(path, rig_to_dict(rig))


def read_rig(path: PathLike) -> CameraRig:
    return rig_from_dict(read_json(path), str(path))


# ---------------------------------------------------------------------------
# Labels and detections
# ---------------------------------------------------------------------------

Label = Tuple[SlotPolygon, SlotClass]


def _record(poly: SlotPolygon, cls: SlotClass) -> dict:
    if poly.unit != "vehicle_m":
        raise ValueError(f"labels persist in vehicle meters, got unit {poly.unit!r}")
    return {"class": cls.value, "corners_m": poly.flat(), "unit": "vehicle_m"}


def labels_to_dict(labels: Iterable[Label]) -> dict:
    return {"format_version": FORMAT_VERSION, "records": [_record(p, c) for p, c in labels]}


def detections_to_dict(dets: Iterable[Detection]) -> dict:
    records = []
    for d in dets:
        rec = _record(d.polygon, d.slot_class)
        rec["confidence"] = d.confidence
        records.append(rec)
    return {"format_version": FORMAT_VERSION, "records": records}


def _parse_record(rec, where: str) -> Tuple[SlotPolygon, SlotClass]:
    if not isinstance(rec, dict):
        raise FormatError(f"{where}: expected an object")
    name = _field(rec, "class", where)
    try:
        cls = SlotClass.parse(name) if isinstance(name, str) else None
    except ValueError:
        cls = None
    if cls is None:
        raise FormatError(f"{where}.class: expected one of regular/handicapped/ev, got {name!r}")
    unit = rec.get("unit", "vehicle_m")
    if unit != "vehicle_m":
        raise FormatError(f"{where}.unit: only 'vehicle_m' is supported, got {unit!r}")
    corners = _numbers(_field(rec, "corners_m", where), 8, f"{where}.corners_m")
    try:
        poly = validate_slot(np.array(corners).reshape(4, 2))
    except SurroundSlotError as exc:
        raise FormatError(f"{where}.corners_m: {exc}") from exc
    return poly, cls


def _records(doc: dict, name: str) -> list:
    recs = _field(doc, "records", name)
    if not isinstance(recs, list):
        raise FormatError(f"{name}.records: expected a list")
    return recs


def labels_from_dict(doc: dict, name: str = "labels") -> List[Label]:
    return [_parse_record(r, f"{name}.records[{i}]") for i, r in enumerate(_records(doc, name))]


def detections_from_dict(doc: dict, name: str = "detections") -> List[Detection]:
    out = []
    for i, rec in enumerate(_records(doc, name)):
        where = f"{name}.records[{i}]"
        poly, cls = _parse_record(rec, where)
        conf = _number(_field(rec, "confidence", where), f"{where}.confidence")
        if not 0.0 <= conf <= 1.0:
            raise FormatError(f"{where}.confidence: {conf} outside [0, 1]")
        out.append(Detection(poly, cls, conf))
    return out


def read_labels(path: PathLike) -> List[Label]:
    return labels_from_dict(read_json(path), str(path))


def read_detections(path: PathLike) -> List[Detection]:
    return detections_from_dict(read_json(path), str(path))


# ---------------------------------------------------------------------------
# Detector configuration
# ---------------------------------------------------------------------------


def detector_config_to_dict(cfg: DetectorConfig) -> dict:
    doc = {"format_version": FORMAT_VERSION}
    doc.update(dataclasses.asdict(cfg))
    return doc


def detector_config_from_dict(doc: dict, name: str = "config") -> DetectorConfig:
    """Partial documents are fine: missing fields keep their defaults."""
    if not isinstance(doc, dict):
        raise FormatError(f"{name}: expected an object")
    known = {f.name: f for f in dataclasses.fields(DetectorConfig)}
    kwargs = {}
    for key, value in doc.items():
        if key == "format_version":
            continue
        if key not in known:
            raise FormatError(f"{name}.{key}: unknown detector setting")
        kwargs[key] = _number(value, f"{name}.{key}")
        if known[key].type in ("int", int):
            if kwargs[key] != int(kwargs[key]):
                raise FormatError(f"{name}.{key}: expected an integer, got {value!r}")
            kwargs[key] = int(kwargs[key])
    try:
        return DetectorConfig(**kwargs)
    except ValueError as exc:
        raise FormatError(f"{name}: {exc}") from exc


def read_detector_config(path: PathLike) -> DetectorConfig:
    return detector_config_from_dict(read_json(path), str(path))
