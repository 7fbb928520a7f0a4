"""On-disk formats: binary PGM images, raw float32 UV rasters, key=value
metadata files, and the tensor checkpoint container.

Conventions, fixed so files are bit-reproducible across platforms:
  * PGM (P5): sample values big-endian, as the format requires. Images are
    written with maxval 65535, masks with maxval 255 (0 background,
    255 foreground).
  * UV raster: 16-byte header (magic ``CGUV``, then height, width, reserved
    as little-endian u32) followed by row-major float32 little-endian data.
  * Checkpoint: magic ``CGSR``, little-endian integers, float32
    little-endian tensor payloads, then a plain-text config echo running to
    the end of the file.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import CheckpointFormatError

UV_MAGIC = b"CGUV"
CKPT_MAGIC = b"CGSR"
CKPT_VERSION = 1
_DTYPE_F32LE = 0


# ---------------------------------------------------------------------------
# PGM
# ---------------------------------------------------------------------------

def write_pgm(path, image, maxval=65535):
    """Write a float array in [0, 1] as a binary PGM (P5).

    maxval 65535 gives 16-bit big-endian samples; maxval <= 255 gives 8-bit.
    Values are clipped to [0, 1] before quantization.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ValueError(f"PGM image must be 2-D, got shape {image.shape}")
    quant = np.rint(np.clip(image, 0.0, 1.0) * maxval)
    if maxval > 255:
        payload = quant.astype(">u2").tobytes()
    else:
        payload = quant.astype(np.uint8).tobytes()
    h, w = image.shape
    header = f"P5\n{w} {h}\n{maxval}\n".encode("ascii")
    with open(path, "wb") as f:
        f.write(header + payload)


def read_pgm(path):
    """Read a binary PGM. Returns (image float64 in [0, 1], maxval)."""
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:2] != b"P5":
        raise ValueError(f"{path}: not a binary PGM (bad magic {raw[:2]!r})")
    # Header is ASCII tokens (width, height, maxval), '#' comments allowed.
    pos = 2
    tokens = []
    while len(tokens) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    pos += 1  # single whitespace byte after maxval
    w, h, maxval = (int(t) for t in tokens)
    n = h * w
    if maxval > 255:
        data = np.frombuffer(raw, dtype=">u2", count=n, offset=pos)
    else:
        data = np.frombuffer(raw, dtype=np.uint8, count=n, offset=pos)
    image = data.reshape(h, w).astype(np.float64) / maxval
    return image, maxval


def write_mask_pgm(path, mask):
    """Write a binary mask as an 8-bit PGM with {0, 255} values."""
    mask = np.asarray(mask)
    write_pgm(path, (mask != 0).astype(np.float64), maxval=255)


def read_mask_pgm(path):
    image, _ = read_pgm(path)
    return (image > 0.5).astype(np.uint8)


# ---------------------------------------------------------------------------
# UV raster
# ---------------------------------------------------------------------------

def write_uv_raster(path, field):
    """Write a 2-D float field as CGUV: 16-byte header + float32 LE data."""
    field = np.ascontiguousarray(np.asarray(field, dtype=np.float32))
    if field.ndim != 2:
        raise ValueError(f"UV raster must be 2-D, got shape {field.shape}")
    h, w = field.shape
    header = UV_MAGIC + struct.pack("<III", h, w, 0)
    with open(path, "wb") as f:
        f.write(header)
        f.write(field.astype("<f4").tobytes())


def read_uv_raster(path):
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != UV_MAGIC:
        raise ValueError(f"{path}: bad UV raster magic {raw[:4]!r}")
    h, w, _reserved = struct.unpack("<III", raw[4:16])
    n = h * w
    data = np.frombuffer(raw, dtype="<f4", count=n, offset=16)
    if data.size != n:
        raise ValueError(f"{path}: truncated UV raster ({data.size} of {n} values)")
    return data.reshape(h, w).astype(np.float32)


# ---------------------------------------------------------------------------
# key=value metadata
# ---------------------------------------------------------------------------

def write_kv(path, mapping):
    """Write a mapping as sorted ``key=value`` lines ('#' starts a comment)."""
    lines = [f"{k}={mapping[k]}" for k in sorted(mapping)]
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


def read_kv(path):
    out = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def parse_kv_text(text):
    out = {}
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if not line or "=" not in line:
            continue
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def format_kv_text(mapping):
    return "\n".join(f"{k}={mapping[k]}" for k in sorted(mapping)) + "\n"


# ---------------------------------------------------------------------------
# checkpoint container
# ---------------------------------------------------------------------------

def save_checkpoint(path, tensors, config_echo=""):
    """Save named float32 tensors plus a trailing plain-text config echo.

    Tensor order follows the iteration order of ``tensors`` so that saving
    the same state twice is byte-identical.
    """
    blob = bytearray()
    blob += CKPT_MAGIC
    blob += struct.pack("<HI", CKPT_VERSION, len(tensors))
    for name, array in tensors.items():
        array = np.ascontiguousarray(np.asarray(array, dtype=np.float32))
        name_bytes = name.encode("utf-8")
        if len(name_bytes) > 0xFFFF:
            raise ValueError(f"tensor name too long: {name!r}")
        if array.ndim > 0xFF:
            raise ValueError(f"tensor rank too large: {array.ndim}")
        blob += struct.pack("<H", len(name_bytes))
        blob += name_bytes
        blob += struct.pack("<BB", _DTYPE_F32LE, array.ndim)
        blob += struct.pack(f"<{array.ndim}I", *array.shape)
        blob += array.astype("<f4").tobytes()
    blob += config_echo.encode("utf-8")
    with open(path, "wb") as f:
        f.write(bytes(blob))


def load_checkpoint(path):
    """Load a checkpoint. Returns (tensors dict, config echo string)."""
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != CKPT_MAGIC:
        raise CheckpointFormatError(
            f"{path}: bad checkpoint magic {raw[:4]!r} (expected {CKPT_MAGIC!r})"
        )
    if len(raw) < 10:
        raise CheckpointFormatError(f"{path}: truncated checkpoint header")
    version, count = struct.unpack("<HI", raw[4:10])
    if version != CKPT_VERSION:
        raise CheckpointFormatError(f"{path}: unsupported checkpoint version {version}")
    pos = 10
    tensors = {}
    for _ in range(count):
        try:
            (name_len,) = struct.unpack("<H", raw[pos : pos + 2])
            pos += 2
            name = raw[pos : pos + name_len].decode("utf-8")
            pos += name_len
            dtype_code, rank = struct.unpack("<BB", raw[pos : pos + 2])
            pos += 2
            shape = struct.unpack(f"<{rank}I", raw[pos : pos + 4 * rank])
            pos += 4 * rank
        except struct.error as exc:
            raise CheckpointFormatError(f"{path}: truncated tensor record") from exc
        if dtype_code != _DTYPE_F32LE:
            raise CheckpointFormatError(f"{path}: unknown dtype code {dtype_code}")
        n = int(np.prod(shape, dtype=np.int64)) if rank else 1
        data = np.frombuffer(raw, dtype="<f4", count=n, offset=pos)
        if data.size != n:
            raise CheckpointFormatError(f"{path}: truncated tensor data for {name!r}")
        pos += 4 * n
        if name in tensors:
            raise CheckpointFormatError(f"{path}: duplicate tensor name {name!r}")
        tensors[name] = data.reshape(shape).astype(np.float32)
    config_echo = raw[pos:].decode("utf-8")
    return tensors, config_echo
