"""File formats.

AFHM heatmap (little-endian)::

    b"AFHM" | u32 version=1 | u32 width | u32 height | f32[width*height] row-major

AHDP decoder checkpoint (little-endian)::

    b"AHDP" | u32 version | u32 C | u32 C_m | u32 k | u32 s
            | (version 2 only) u32 decoder kind code
            | per tensor: u32 rank | u32 dims[rank] | f32 values

Version 1 holds the adaptive decoder, tensors in the order cap_w, cap_b,
comp_w, comp_b, exp_w, exp_b. Version 2 holds a baseline decoder; the kind
code indexes ``DECODER_KINDS`` and C_m/k are written as 0 where unused.

Annotation JSON is an array of records::

    {"id": "r1", "instruction": "...", "width": 224, "height": 224,
     "supervision": {"type": "points", "points": [[x, y], ...], "sigma": 2.0}}

with box payloads ``{"type": "box", "center": [cx, cy], "size": [w, h],
"alpha": a}`` (or ``"bbox": [x0, y0, x1, y1]``) and mask payloads
``{"type": "mask", "rle": [[start, length], ...], "sigma": s}``. RLE runs index
the row-major flattened grid. The payload keys may also sit directly on the
record instead of under ``"supervision"``.
"""

from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np

from affordmap.decoder import DECODER_KINDS, AHDParams, BilinearParams, DeconvParams, PixelShuffleParams
from affordmap.errors import AffordmapError, FormatError, ValidationError
from affordmap.grid import BinaryMask, Heatmap
from affordmap.synthesis import (
    DEFAULT_ALPHA,
    AnnotationRecord,
    BoxSupervision,
    MaskSupervision,
    PointSupervision,
    default_sigma,
)

AFHM_MAGIC = b"AFHM"
AFHM_VERSION = 1
AHDP_MAGIC = b"AHDP"

# --------------------------------------------------------------------------- RLE


def encode_rle(bits) -> list[list[int]]:
    """Foreground runs of the row-major flattened mask as ``[start, length]`` pairs."""
    flat = np.asarray(bits, dtype=bool).ravel()
    padded = np.concatenate([[False], flat, [False]])
    edges = np.flatnonzero(padded[1:] != padded[:-1])
    starts, ends = edges[0::2], edges[1::2]
    return [[int(s), int(e - s)] for s, e in zip(starts, ends)]


def decode_rle(runs, width: int, height: int) -> np.ndarray:
    n = width * height
    flat = np.zeros(n, dtype=bool)
    for i, run in enumerate(runs):
        try:
            start, length = (int(v) for v in run)
        except (TypeError, ValueError):
            raise ValidationError(f"RLE run {i} is not a [start, length] pair: {run!r}") from None
        if start < 0 or length < 0 or start + length > n:
            raise ValidationError(f"RLE run {i} ({start}, {length}) exceeds the {width}x{height} grid")
        flat[start:start + length] = True
    return flat.reshape(height, width)


# ------------------------------------------------------------------ annotations


def _record_from_json(obj, index, sigma=None, alpha=None) -> AnnotationRecord:
    if not isinstance(obj, dict):
        raise ValidationError(f"record {index}: expected an object, got {type(obj).__name__}")
    rid = str(obj.get("id", f"#{index}"))
    where = f"record {index} (id {rid!r})"
    try:
        width, height = int(obj["width"]), int(obj["height"])
    except (KeyError, TypeError, ValueError):
        raise ValidationError(f"{where}: integer 'width' and 'height' are required") from None
    payload = obj.get("supervision", obj)
    if not isinstance(payload, dict):
        raise ValidationError(f"{where}: 'supervision' must be an object")
    kind = payload.get("type")
    fallback_sigma = sigma if sigma is not None else default_sigma(width, height)
    try:
        if kind == "points":
            sup = PointSupervision(tuple(tuple(p) for p in payload["points"]),
                                   float(payload.get("sigma", fallback_sigma)))
            for x, y in sup.points:
                if not (0 <= x < width and 0 <= y < height):
                    raise ValidationError(
                        f"{where}: point ({x:g}, {y:g}) out of bounds for {width}x{height}")
        elif kind == "box":
            if "bbox" in payload:
                x0, y0, x1, y1 = (float(v) for v in payload["bbox"])
                center, size = ((x0 + x1) / 2, (y0 + y1) / 2), (x1 - x0, y1 - y0)
            else:
                center, size = payload["center"], payload["size"]
            a = float(payload.get("alpha", alpha if alpha is not None else DEFAULT_ALPHA))
            sup = BoxSupervision(tuple(center), float(size[0]), float(size[1]), a)
        elif kind == "mask":
            bits = decode_rle(payload["rle"], width, height)
            if not bits.any():
                raise ValidationError(f"{where}: mask has no foreground pixels")
            sup = MaskSupervision(BinaryMask(bits), float(payload.get("sigma", fallback_sigma)))
        else:
            raise ValidationError(f"{where}: unknown supervision type {kind!r}")
        return AnnotationRecord(rid, str(obj.get("instruction", "")), width, height, sup)
    except ValidationError as exc:
        msg = str(exc)
        raise ValidationError(msg if msg.startswith("record") else f"{where}: {msg}") from None
    except (KeyError, TypeError, ValueError, AffordmapError) as exc:
        raise ValidationError(f"{where}: {exc.__class__.__name__}: {exc}") from None


def parse_annotations(path, sigma: float | None = None, alpha: float | None = None) -> list[AnnotationRecord]:
    """Load and validate an annotation file.

    ``sigma`` and ``alpha`` fill in records that do not carry their own.
    """
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: malformed JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(data, list):
        raise ValidationError(f"{path}: top level must be a JSON array of records")
    return [_record_from_json(obj, i, sigma, alpha) for i, obj in enumerate(data)]


def record_to_json(record: AnnotationRecord) -> dict:
    s = record.supervision
    if isinstance(s, PointSupervision):
        sup = {"type": "points", "points": [list(p) for p in s.points], "sigma": s.sigma}
    elif isinstance(s, BoxSupervision):
        sup = {"type": "box", "center": list(s.center), "size": [s.box_width, s.box_height], "alpha": s.alpha}
    else:
        sup = {"type": "mask", "rle": encode_rle(s.mask.bits), "sigma": s.sigma}
    return {"id": record.id, "instruction": record.instruction, "width": record.width,
            "height": record.height, "supervision": sup}


def write_annotations(path, records) -> None:
    Path(path).write_text(json.dumps([record_to_json(r) for r in records], indent=2) + "\n")


# ------------------------------------------------------------------------- AFHM


def heatmap_bytes(m: Heatmap) -> bytes:
    header = struct.pack("<4sIII", AFHM_MAGIC, AFHM_VERSION, m.width, m.height)
    return header + m.values.astype("<f4").tobytes()


def write_heatmap(path, m: Heatmap) -> None:
    Path(path).write_bytes(heatmap_bytes(m))


def read_heatmap(path) -> Heatmap:
    """Values come back as the float64 image of the stored f32 payload."""
    data = Path(path).read_bytes()
    if len(data) < 16:
        raise FormatError(f"{path}: truncated header ({len(data)} bytes, need 16)")
    magic, version, width, height = struct.unpack_from("<4sIII", data)
    if magic != AFHM_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r} at byte 0, expected {AFHM_MAGIC!r}")
    if version != AFHM_VERSION:
        raise FormatError(f"{path}: unsupported version {version} at byte 4")
    if width < 1 or height < 1:
        raise FormatError(f"{path}: empty grid {width}x{height} at byte 8")
    need = 16 + 4 * width * height
    if len(data) < need:
        raise FormatError(f"{path}: truncated payload, {len(data)} bytes of {need}")
    if len(data) > need:
        raise FormatError(f"{path}: {len(data) - need} trailing bytes after offset {need}")
    values = np.frombuffer(data, dtype="<f4", count=width * height, offset=16).astype(np.float64)
    bad = np.flatnonzero(~((values >= 0) & (values <= 1)))
    if bad.size:
        raise FormatError(f"{path}: value outside [0, 1] at byte {16 + 4 * int(bad[0])}")
    return Heatmap(values.reshape(height, width))


def export_pgm(m: Heatmap, path) -> None:
    """16-bit binary PGM; each value maps to ``floor(v * 65535 + 0.5)``."""
    levels = np.floor(m.values * 65535.0 + 0.5).astype(">u2")
    header = f"P5\n{m.width} {m.height}\n65535\n".encode("ascii")
    Path(path).write_bytes(header + levels.tobytes())


# ------------------------------------------------------------------ checkpoints


def checkpoint_bytes(params) -> bytes:
    kind = params.kind
    c = params.channels
    if kind == "ahd":
        head = struct.pack("<4sIIIII", AHDP_MAGIC, 1, c, params.c_m, params.k, params.s)
    else:
        head = struct.pack("<4sIIIIII", AHDP_MAGIC, 2, c, 0, 0, params.s, DECODER_KINDS.index(kind))
    parts = [head]
    for t in params.tensors().values():
        parts.append(struct.pack(f"<I{t.ndim}I", t.ndim, *t.shape))
        parts.append(np.ascontiguousarray(t, dtype="<f4").tobytes())
    return b"".join(parts)


def save_checkpoint(path, params) -> None:
    Path(path).write_bytes(checkpoint_bytes(params))


_PARAM_TYPES = {"ahd": AHDParams, "bilinear": BilinearParams, "deconv": DeconvParams,
                "pixelshuffle": PixelShuffleParams}


def load_checkpoint(path):
    data = Path(path).read_bytes()
    if len(data) < 24 or data[:4] != AHDP_MAGIC:
        raise FormatError(f"{path}: not an AHDP checkpoint (bad magic or short header)")
    version, c, c_m, k, s = struct.unpack_from("<5I", data, 4)
    off = 24
    if version == 1:
        kind = "ahd"
    elif version == 2:
        if len(data) < 28:
            raise FormatError(f"{path}: truncated header")
        code, = struct.unpack_from("<I", data, 24)
        off = 28
        if code >= len(DECODER_KINDS) or DECODER_KINDS[code] == "ahd":
            raise FormatError(f"{path}: bad decoder kind code {code} at byte 24")
        kind = DECODER_KINDS[code]
    else:
        raise FormatError(f"{path}: unsupported checkpoint version {version} at byte 4")
    cls = _PARAM_TYPES[kind]
    tensors = {}
    for name in cls.tensor_names:
        if off + 4 > len(data):
            raise FormatError(f"{path}: truncated before tensor {name!r} at byte {off}")
        rank, = struct.unpack_from("<I", data, off)
        if rank > 8 or off + 4 + 4 * rank > len(data):
            raise FormatError(f"{path}: bad rank {rank} for tensor {name!r} at byte {off}")
        dims = struct.unpack_from(f"<{rank}I", data, off + 4)
        off += 4 + 4 * rank
        n = int(np.prod(dims)) if rank else 1
        if off + 4 * n > len(data):
            raise FormatError(f"{path}: truncated data for tensor {name!r} at byte {off}")
        tensors[name] = np.frombuffer(data, dtype="<f4", count=n, offset=off).astype(np.float64).reshape(dims)
        off += 4 * n
    if off != len(data):
        raise FormatError(f"{path}: {len(data) - off} trailing bytes after offset {off}")
    try:
        if kind == "ahd":
            p = cls(**tensors, k=k, s=s)
        else:
            p = cls(**tensors, s=s)
    except AffordmapError as exc:
        raise FormatError(f"{path}: inconsistent tensor shapes: {exc}") from None
    if p.channels != c:
        raise FormatError(f"{path}: header says C={c}, tensors say C={p.channels}")
    return p


# ----------------------------------------------------------------- CSV / JSON


def _num(x: float) -> str:
    return repr(float(x))


def write_loss_csv(path, curve) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "lr", "train_bce", "eval_bce"])
        for pt in curve:
            w.writerow([pt.step, _num(pt.lr), _num(pt.train_bce), _num(pt.eval_bce)])


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_ablation_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["kind", "seed", "accuracy", "eval_bce", "median_latency_us"])
        for r in rows:
            w.writerow([r.kind, r.seed, _num(r.accuracy), _num(r.eval_bce), _num(r.median_latency_us)])
