"""Portable image IO: netpbm (PGM/PPM) images and attention-map dumps.

Attention maps are written either as 16-bit binary PGM (scaled so the
maximum is 65535, with the true maximum kept in a ``# max`` comment) or as
raw little-endian float64 after a one-line ``EBMAP <H> <W>`` header.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import ParseError

_MAGIC = {b"P2": (1, False), b"P3": (3, False), b"P5": (1, True), b"P6": (3, True)}


def _tokens(data: bytes, count: int, pos: int):
    """Read ``count`` whitespace-separated header tokens, skipping comments."""
    out = []
    comments = []
    n = len(data)
    while len(out) < count:
        while pos < n and data[pos:pos + 1].isspace():
            pos += 1
        if pos >= n:
            raise ParseError("truncated netpbm header")
        if data[pos:pos + 1] == b"#":
            end = data.find(b"\n", pos)
            end = n if end < 0 else end
            comments.append(data[pos + 1:end].decode("latin-1").strip())
            pos = end
            continue
        start = pos
        while pos < n and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        out.append(data[start:pos])
    return out, comments, pos


def decode_netpbm(data: bytes):
    """Decode PGM/PPM bytes to (uint array H x W x C, maxval, header comments)."""
    magic = data[:2]
    if magic not in _MAGIC:
        raise ParseError(f"unsupported netpbm magic {magic!r}")
    channels, binary = _MAGIC[magic]
    toks, comments, pos = _tokens(data, 3, 2)
    try:
        w, h, maxval = (int(t) for t in toks)
    except ValueError:
        raise ParseError(f"bad netpbm header {toks!r}") from None
    if w < 1 or h < 1 or not 0 < maxval < 65536:
        raise ParseError(f"bad netpbm geometry {w}x{h} maxval {maxval}")
    count = w * h * channels
    if binary:
        pos += 1  # single whitespace byte ends the header
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        raw = data[pos:pos + count * dtype.itemsize]
        if len(raw) != count * dtype.itemsize:
            raise ParseError("truncated netpbm raster")
        arr = np.frombuffer(raw, dtype=dtype).astype(np.int64)
    else:
        body = b" ".join(line.split(b"#")[0] for line in data[pos:].splitlines())
        vals = body.split()
        if len(vals) < count:
            raise ParseError("truncated netpbm raster")
        arr = np.array([int(v) for v in vals[:count]], dtype=np.int64)
    if arr.max(initial=0) > maxval:
        raise ParseError("netpbm sample exceeds maxval")
    return arr.reshape(h, w, channels), maxval, comments


def read_image(path) -> np.ndarray:
    """Read a PGM/PPM file as a float64 C x H x W tensor scaled to [0, 1]."""
    arr, maxval, _ = decode_netpbm(Path(path).read_bytes())
    return np.ascontiguousarray(arr.transpose(2, 0, 1), dtype=np.float64) / maxval


def read_mask(path) -> np.ndarray:
    """Binary mask from a PGM: every non-zero sample is foreground."""
    arr, _, _ = decode_netpbm(Path(path).read_bytes())
    return arr[..., 0] > 0


def image_size(path):
    """(H, W) from a netpbm header without decoding the raster."""
    data = Path(path).read_bytes()
    if data[:2] not in _MAGIC:
        raise ParseError(f"{path}: unsupported netpbm magic {data[:2]!r}")
    toks, _, _ = _tokens(data, 2, 2)
    return int(toks[1]), int(toks[0])


def encode_netpbm(arr, maxval: int = 255, comments=()) -> bytes:
    """Binary PGM (H x W or H x W x 1) or PPM (H x W x 3) from integer samples."""
    a = np.asarray(arr)
    if a.ndim == 2:
        a = a[..., None]
    h, w, c = a.shape
    magic = {1: b"P5", 3: b"P6"}.get(c)
    if magic is None:
        raise ValueError(f"netpbm needs 1 or 3 channels, got {c}")
    head = magic + b"\n" + b"".join(f"# {t}\n".encode() for t in comments)
    head += f"{w} {h}\n{maxval}\n".encode()
    dtype = ">u2" if maxval > 255 else "u1"
    return head + np.clip(a, 0, maxval).astype(dtype).tobytes()


def write_image(path, image) -> None:
    """Write a C x H x W tensor in [0, 1] as 8-bit PGM/PPM."""
    x = np.asarray(image, dtype=np.float64)
    samples = np.rint(np.clip(x, 0.0, 1.0) * 255).astype(np.int64).transpose(1, 2, 0)
    Path(path).write_bytes(encode_netpbm(samples, 255))


def write_mask(path, mask) -> None:
    Path(path).write_bytes(encode_netpbm(np.asarray(mask, dtype=np.int64) * 255, 255))


def encode_pgm16(values) -> bytes:
    v = np.asarray(values, dtype=np.float64)
    v = v.reshape(v.shape[-2:])
    vmax = float(v.max(initial=0.0))
    scaled = np.zeros(v.shape) if vmax <= 0 else np.clip(v, 0, None) / vmax * 65535
    return encode_netpbm(np.rint(scaled).astype(np.int64), 65535,
                         comments=[f"max {vmax!r}"])


def decode_pgm16(data: bytes) -> np.ndarray:
    """Invert :func:`encode_pgm16` up to 16-bit quantization."""
    arr, maxval, comments = decode_netpbm(data)
    vmax = 1.0
    for c in comments:
        if c.startswith("max "):
            vmax = float(c[4:])
    return arr[..., 0].astype(np.float64) / maxval * vmax


def encode_ebmap(values) -> bytes:
    v = np.asarray(values, dtype=np.float64)
    v = v.reshape(v.shape[-2:])
    h, w = v.shape
    return f"EBMAP {h} {w}\n".encode() + v.astype("<f8").tobytes()


def decode_ebmap(data: bytes) -> np.ndarray:
    end = data.find(b"\n")
    parts = data[:end].split() if end > 0 else []
    if len(parts) != 3 or parts[0] != b"EBMAP":
        raise ParseError("missing EBMAP header")
    h, w = int(parts[1]), int(parts[2])
    raw = data[end + 1:]
    if len(raw) != h * w * 8:
        raise ParseError(f"EBMAP body has {len(raw)} bytes, expected {h * w * 8}")
    return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(h, w)


def save_map(path, values) -> Path:
    """Write a 2-D map; ``.pgm`` selects 16-bit PGM, anything else EBMAP."""
    path = Path(path)
    data = encode_pgm16(values) if path.suffix.lower() == ".pgm" else encode_ebmap(values)
    path.write_bytes(data)
    return path


def load_map(path) -> np.ndarray:
    data = Path(path).read_bytes()
    return decode_ebmap(data) if data.startswith(b"EBMAP") else decode_pgm16(data)
