"""Image, depth and checkpoint files.

Byte layouts
------------
PPM (``P6``)
    ``P6 <W> <H> 255`` header, single whitespace, then ``H*W*3`` bytes in
    raster order. Floats in [0, 1] are stored as ``round(255 * x)``.
PGM depth (``P5``, 16 bit)
    ``P5\\n# scale_mm_per_unit=<v>\\n<W> <H>\\n65535\\n`` then big-endian
    ``uint16`` samples; depth = sample * v. Sample 0 marks an invalid pixel.
PGM visualisation (``P5``, 8 bit)
    ``maxval 255``; each map normalised to [0, 255] on its own.
PFM
    ``Pf`` (grey) or ``PF`` (RGB) line, ``<W> <H>`` line, scale line whose sign
    gives byte order (negative = little-endian), then 32-bit floats with rows
    stored bottom-up. Written little-endian; invalid depth is stored as 0.0.
Checkpoint
    ``<name>.json`` manifest plus ``<name>.bin`` blob. The manifest lists
    ``{"name", "shape", "role", "offset", "nbytes"}`` per tensor; the blob is
    the concatenation of little-endian float64 arrays in row-major order.
"""
from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .autodiff import bilinear_resize, constant
from .datagen import Sample
from .depthmap import DepthMap, as_depthmap
from .errors import DataError, ParseError

PGM16_SCALE_MM = 0.01
CHECKPOINT_FORMAT = "surgidepth-checkpoint"
CHECKPOINT_VERSION = 1
ROLES = ("frozen", "trainable")


# ---------------------------------------------------------------- netpbm


def _pnm_header(buf: bytes, n_fields: int) -> tuple[list[bytes], list[str], int]:
    """Magic plus ``n_fields`` integer tokens; returns (tokens, comments, raster offset)."""
    tokens, comments = [], []
    pos = 0
    while len(tokens) < n_fields + 1:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if pos >= len(buf):
            raise ParseError("truncated header", pos)
        if buf[pos:pos + 1] == b"#":
            end = buf.find(b"\n", pos)
            end = len(buf) if end < 0 else end
            comments.append(buf[pos + 1:end].decode("ascii", "replace").strip())
            pos = end
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
            pos += 1
        tokens.append(buf[start:pos])
    if pos >= len(buf) or not buf[pos:pos + 1].isspace():
        raise ParseError("missing whitespace after header", pos)
    return tokens, comments, pos + 1


def _header_ints(tokens: list[bytes], offset: int) -> list[int]:
    try:
        return [int(t) for t in tokens[1:]]
    except ValueError:
        raise ParseError(f"non-integer header field in {tokens!r}", offset) from None


def _raster(buf: bytes, offset: int, nbytes: int) -> bytes:
    if len(buf) - offset < nbytes:
        raise ParseError(f"truncated raster: need {nbytes} bytes, have {len(buf) - offset}",
                         len(buf))
    return buf[offset:offset + nbytes]


def write_ppm(path, image: np.ndarray) -> None:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise DataError(f"PPM needs an HxWx3 image, got {image.shape}")
    h, w, _ = image.shape
    raw = np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(raw.tobytes())


def read_ppm(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    tokens, _, offset = _pnm_header(buf, 3)
    if tokens[0] != b"P6":
        raise ParseError(f"expected P6 magic, found {tokens[0]!r}", 0)
    w, h, maxval = _header_ints(tokens, 0)
    if w < 1 or h < 1 or maxval != 255:
        raise ParseError(f"unsupported PPM geometry {w}x{h} maxval {maxval}", offset)
    raw = np.frombuffer(_raster(buf, offset, w * h * 3), dtype=np.uint8)
    return raw.reshape(h, w, 3).astype(np.float64) / 255.0


def write_pgm16(path, depth, scale: float = PGM16_SCALE_MM) -> None:
    depth = as_depthmap(depth)
    units = np.zeros(depth.shape, dtype=np.int64)
    units[depth.mask] = np.round(depth.values[depth.mask] / scale).astype(np.int64)
    if units.max(initial=0) > 65535:
        raise DataError(f"depth {depth.values[depth.mask].max()} mm exceeds 16-bit range at scale {scale}")
    h, w = depth.shape
    with open(path, "wb") as f:
        f.write(f"P5\n# scale_mm_per_unit={scale!r}\n{w} {h}\n65535\n".encode("ascii"))
        f.write(units.astype(">u2").tobytes())


def read_pgm16(path) -> DepthMap:
    buf = Path(path).read_bytes()
    tokens, comments, offset = _pnm_header(buf, 3)
    if tokens[0] != b"P5":
        raise ParseError(f"expected P5 magic, found {tokens[0]!r}", 0)
    w, h, maxval = _header_ints(tokens, 0)
    if w < 1 or h < 1 or maxval != 65535:
        raise ParseError(f"expected a 16-bit PGM, got {w}x{h} maxval {maxval}", offset)
    scale = PGM16_SCALE_MM
    for c in comments:
        if c.startswith("scale_mm_per_unit="):
            try:
                scale = float(c.split("=", 1)[1])
            except ValueError:
                raise ParseError(f"bad scale comment {c!r}", 0) from None
    units = np.frombuffer(_raster(buf, offset, w * h * 2), dtype=">u2").reshape(h, w)
    values = units.astype(np.float64) * scale
    return DepthMap(values, units > 0)


def write_pgm8(path, values: np.ndarray) -> None:
    """Visualisation: values normalised to [0, 255]; a constant map becomes mid-grey."""
    values = np.asarray(values, dtype=np.float64)
    lo, hi = float(values.min()), float(values.max())
    if hi > lo:
        raw = np.round((values - lo) / (hi - lo) * 255.0)
    else:
        raw = np.full(values.shape, 128.0)
    h, w = values.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(raw.astype(np.uint8).tobytes())


def read_pgm8(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    tokens, _, offset = _pnm_header(buf, 3)
    if tokens[0] != b"P5":
        raise ParseError(f"expected P5 magic, found {tokens[0]!r}", 0)
    w, h, maxval = _header_ints(tokens, 0)
    if maxval != 255:
        raise ParseError(f"expected maxval 255, got {maxval}", offset)
    return np.frombuffer(_raster(buf, offset, w * h), dtype=np.uint8).reshape(h, w).copy()


# ---------------------------------------------------------------- PFM


def write_pfm(path, values: np.ndarray) -> None:
    """Little-endian PFM, ``Pf`` for HxW and ``PF`` for HxWx3 arrays."""
    values = np.asarray(values, dtype=np.float32)
    if values.ndim == 2:
        magic = "Pf"
    elif values.ndim == 3 and values.shape[2] == 3:
        magic = "PF"
    else:
        raise DataError(f"PFM needs HxW or HxWx3, got {values.shape}")
    h, w = values.shape[:2]
    with open(path, "wb") as f:
        f.write(f"{magic}\n{w} {h}\n-1.0\n".encode("ascii"))
        f.write(np.ascontiguousarray(values[::-1]).astype("<f4").tobytes())


def read_pfm(path) -> np.ndarray:
    """Returns float32 data, top row first."""
    buf = Path(path).read_bytes()
    pos = 0
    lines = []
    for _ in range(3):
        end = buf.find(b"\n", pos)
        if end < 0:
            raise ParseError("truncated PFM header", len(buf))
        lines.append((pos, buf[pos:end].strip()))
        pos = end + 1
    (o0, magic), (o1, dims), (o2, scale_line) = lines
    if magic not in (b"Pf", b"PF"):
        raise ParseError(f"expected Pf/PF magic, found {magic!r}", o0)
    channels = 1 if magic == b"Pf" else 3
    try:
        w, h = (int(t) for t in dims.split())
    except ValueError:
        raise ParseError(f"bad PFM dimensions {dims!r}", o1) from None
    try:
        scale = float(scale_line)
    except ValueError:
        raise ParseError(f"bad PFM scale {scale_line!r}", o2) from None
    if w < 1 or h < 1 or scale == 0.0:
        raise ParseError(f"invalid PFM geometry {w}x{h} scale {scale}", o1)
    dtype = "<f4" if scale < 0 else ">f4"
    raw = np.frombuffer(_raster(buf, pos, w * h * channels * 4), dtype=dtype)
    shape = (h, w) if channels == 1 else (h, w, 3)
    return raw.reshape(shape)[::-1].astype(np.float32)


def write_depth_pfm(path, depth) -> None:
    depth = as_depthmap(depth)
    write_pfm(path, np.where(depth.mask, depth.values, 0.0))


def read_depth_pfm(path) -> DepthMap:
    values = read_pfm(path)
    if values.ndim != 2:
        raise DataError(f"{path}: depth PFM must be single-channel")
    return DepthMap.from_values(values.astype(np.float64))


def read_depth(path) -> DepthMap:
    suffix = Path(path).suffix.lower()
    if suffix == ".pfm":
        return read_depth_pfm(path)
    if suffix == ".pgm":
        return read_pgm16(path)
    raise DataError(f"unknown depth file type: {path}")


def write_depth(path, depth, scale: float = PGM16_SCALE_MM) -> None:
    suffix = Path(path).suffix.lower()
    if suffix == ".pfm":
        write_depth_pfm(path, depth)
    elif suffix == ".pgm":
        write_pgm16(path, depth, scale)
    else:
        raise DataError(f"unknown depth file type: {path}")


# ---------------------------------------------------------------- samples


def resize_image(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    return bilinear_resize(constant(image), out_h, out_w).data.copy()


def nearest_indices(n_in: int, n_out: int) -> np.ndarray:
    return np.minimum(((np.arange(n_out) + 0.5) * n_in / n_out).astype(np.int64), n_in - 1)


def resize_depth(depth: DepthMap, out_h: int, out_w: int) -> DepthMap:
    """Nearest-neighbour resize; never creates depth values that were not there."""
    rows = nearest_indices(depth.shape[0], out_h)
    cols = nearest_indices(depth.shape[1], out_w)
    return DepthMap(depth.values[np.ix_(rows, cols)], depth.mask[np.ix_(rows, cols)])


def load_sample(image_path, depth_path, model_h: int, model_w: int) -> Sample:
    if model_h < 1 or model_w < 1:
        raise DataError(f"model size must be positive, got {model_h}x{model_w}")
    image = read_ppm(image_path)
    depth = read_depth(depth_path)
    if image.shape[:2] != depth.shape:
        raise DataError(f"{image_path} is {image.shape[:2]} but {depth_path} is {depth.shape}")
    return Sample(resize_image(image, model_h, model_w), resize_depth(depth, model_h, model_w))


# ---------------------------------------------------------------- checkpoints


def save_checkpoint(path, tensors: Iterable[tuple[str, np.ndarray, str]],
                    metadata: Optional[dict] = None) -> None:
    """Write ``path`` (JSON manifest) and its sibling ``.bin`` blob."""
    path = Path(path)
    blob_path = path.with_suffix(".bin")
    entries, chunks, offset, seen = [], [], 0, set()
    for name, array, role in tensors:
        if name in seen:
            raise DataError(f"duplicate tensor name {name!r}")
        if role not in ROLES:
            raise DataError(f"tensor {name!r}: role must be one of {ROLES}, got {role!r}")
        seen.add(name)
        raw = np.ascontiguousarray(array, dtype="<f8").tobytes()
        entries.append({"name": name, "shape": list(np.shape(array)), "role": role,
                        "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "blob": blob_path.name,
        "metadata": metadata or {},
        "tensors": entries,
    }
    with open(blob_path, "wb") as f:
        for c in chunks:
            f.write(c)
    with open(path, "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
        f.write("\n")


def load_checkpoint(path) -> tuple[dict[str, tuple[np.ndarray, str]], dict]:
    """``({name: (array, role)}, metadata)``."""
    path = Path(path)
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid manifest JSON ({exc.msg})", exc.pos) from None
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise ParseError(f"{path}: not a checkpoint manifest", 0)
    blob = (path.parent / manifest["blob"]).read_bytes()
    out = {}
    for e in manifest["tensors"]:
        name, shape, off, nbytes = e["name"], tuple(e["shape"]), e["offset"], e["nbytes"]
        if name in out:
            raise ParseError(f"duplicate tensor {name!r} in manifest", 0)
        if nbytes != 8 * int(np.prod(shape, dtype=np.int64)):
            raise ParseError(f"tensor {name!r}: {nbytes} bytes do not match shape {shape}", off)
        if off + nbytes > len(blob):
            raise ParseError(f"tensor {name!r} runs past the end of the blob", len(blob))
        arr = np.frombuffer(blob, dtype="<f8", count=nbytes // 8, offset=off).reshape(shape)
        out[name] = (arr.astype(np.float64), e["role"])
    return out, manifest.get("metadata", {})


def sample_paths(directory) -> list[tuple[str, Path, Path]]:
    """``(stem, image, depth)`` triples from a ``gen-data`` style directory."""
    directory = Path(directory)
    out = []
    for img in sorted(directory.glob("*.ppm")):
        stem = img.stem
        depth = next((directory / f"{stem}.depth{ext}" for ext in (".pfm", ".pgm")
                      if (directory / f"{stem}.depth{ext}").exists()), None)
        if depth is None:
            raise DataError(f"no depth file for {img}")
        out.append((stem, img, depth))
    return out


def ensure_dir(path) -> Path:
    path = Path(path)
    os.makedirs(path, exist_ok=True)
    return path
