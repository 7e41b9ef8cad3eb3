"""Synthetic compositing samples, NetPBM I/O and checkpoint files."""
from __future__ import annotations

import os
import struct
import zlib
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import binary_dilation, binary_erosion

from .errors import ChecksumError, DomainError, FormatError
from .numerics import SeededRng

# -- synthetic samples -----------------------------------------------------------


@dataclass
class SyntheticSample:
    sample_id: str
    image: np.ndarray        # 3 x H x W in [0, 1]
    alpha: np.ndarray        # H x W in [0, 1]
    coarse_mask: np.ndarray  # H x W uint8 {0, 1}
    foreground: np.ndarray   # 3 x H x W, 8-bit levels / 255
    background: np.ndarray   # 3 x H x W, 8-bit levels / 255


def _smoothstep(x):
    x = np.clip(x, 0.0, 1.0)
    return x * x * (3.0 - 2.0 * x)


def _ellipse_alpha(rng, size, yy, xx):
    cy, cx = rng.uniform(0.3, 0.7, 2) * size
    ry, rx = rng.uniform(0.12, 0.28, 2) * size
    theta = rng.uniform(0.0, np.pi)
    feather = rng.uniform(1.0, 4.0)
    dy, dx = yy - cy, xx - cx
    u = dx * np.cos(theta) + dy * np.sin(theta)
    v = -dx * np.sin(theta) + dy * np.cos(theta)
    rho = np.sqrt((u / rx) ** 2 + (v / ry) ** 2)
    # signed distance, approximated by radial scaling with the minor radius
    dist = (rho - 1.0) * min(rx, ry)
    return 1.0 - _smoothstep(dist / feather + 0.5)


def _smooth_color_field(rng, size, yy, xx):
    c0, c1 = rng.uniform(0.05, 0.95, (2, 3))
    angle = rng.uniform(0.0, 2 * np.pi)
    ramp = (np.cos(angle) * xx + np.sin(angle) * yy) / size
    ramp = (ramp - ramp.min()) / max(ramp.max() - ramp.min(), 1e-12)
    field = c0[:, None, None] + (c1 - c0)[:, None, None] * ramp[None]
    field = field + rng.normal(0.0, 0.02, (3, size, size))
    # store at 8-bit precision so files reproduce the composite exactly
    return np.round(np.clip(field, 0.0, 1.0) * 255.0) / 255.0


_CROSS = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


def _boundary(mask):
    m = mask.astype(bool)
    inner = binary_erosion(m, structure=_CROSS, border_value=1)
    outer = binary_dilation(m, structure=_CROSS)
    # pixels with an opposite-valued 4-neighbour
    return (m & ~inner) | (~m & outer)


def _disk(radius):
    yy, xx = np.mgrid[-radius:radius + 1, -radius:radius + 1]
    return yy ** 2 + xx ** 2 <= radius ** 2


def _corrupt_mask(rng, alpha):
    mask = alpha >= 0.5
    radius = int(rng.integers(0, 4))
    if radius:
        # a Euclidean disk keeps every changed pixel within ``radius`` of the
        # level set; the 4-neighbour flip below adds at most one more pixel
        disk = _disk(radius)
        if rng.random() < 0.5:
            mask = binary_dilation(mask, structure=disk)
        else:
            mask = binary_erosion(mask, structure=disk, border_value=1)
    flip = _boundary(mask) & (rng.random(mask.shape) < 0.1)
    return (mask ^ flip).astype(np.uint8)


def generate_sample(seed, index, size):
    if size % 8 or size < 8:
        raise DomainError(f"size {size} must be a positive multiple of 8")
    rng = SeededRng(seed, index)
    yy, xx = np.mgrid[0:size, 0:size].astype(float) + 0.5
    n_shapes = int(rng.integers(1, 4))
    keep = np.ones((size, size))
    for _ in range(n_shapes):
        keep *= 1.0 - _ellipse_alpha(rng, size, yy, xx)
    alpha = 1.0 - keep
    # quantize so the 8-bit file is the ground truth exactly
    alpha = np.round(alpha * 255.0) / 255.0
    fg = _smooth_color_field(rng, size, yy, xx)
    bg = _smooth_color_field(rng, size, yy, xx)
    image = alpha[None] * fg + (1.0 - alpha[None]) * bg
    mask = _corrupt_mask(rng, alpha)
    return SyntheticSample(f"{index:05d}", image, alpha, mask, fg, bg)


def synth_generate(count, size, seed, out_dir=None):
    """Generate ``count`` samples; write them under ``out_dir`` when given."""
    if count < 1:
        raise DomainError("count must be >= 1")
    samples = [generate_sample(seed, i, size) for i in range(count)]
    if out_dir is not None:
        write_dataset(out_dir, samples)
    return samples


def write_dataset(out_dir, samples):
    os.makedirs(out_dir, exist_ok=True)
    for s in samples:
        base = os.path.join(out_dir, s.sample_id)
        pnm_write(base + "_img.ppm", s.image)
        pnm_write(base + "_alpha.pgm", s.alpha)
        pnm_write(base + "_mask.pgm", s.coarse_mask.astype(float))
        pnm_write(base + "_fg.ppm", s.foreground)
        pnm_write(base + "_bg.ppm", s.background)
    with open(os.path.join(out_dir, "manifest.txt"), "w", newline="\n") as fh:
        fh.writelines(s.sample_id + "\n" for s in samples)


def read_manifest(data_dir):
    path = os.path.join(data_dir, "manifest.txt")
    with open(path) as fh:
        return [line.strip() for line in fh if line.strip()]


def load_sample(data_dir, sample_id):
    base = os.path.join(data_dir, sample_id)
    image = pnm_read(base + "_img.ppm")
    alpha = pnm_read(base + "_alpha.pgm")
    mask = (pnm_read(base + "_mask.pgm") >= 0.5).astype(np.uint8)
    return image, alpha, mask


# -- NetPBM ----------------------------------------------------------------------

_WS = b" \t\n\r\v\f"


def _read_token(buf, pos):
    start = pos
    while pos < len(buf) and buf[pos] not in _WS:
        pos += 1
    if pos == start:
        raise FormatError("expected a header field", start)
    return buf[start:pos], pos


def _skip_ws(buf, pos):
    start = pos
    while pos < len(buf) and buf[pos] in _WS:
        pos += 1
    if pos == start:
        raise FormatError("expected whitespace", pos)
    return pos


def pnm_decode(buf):
    """Decode binary P5/P6 bytes to an H x W or 3 x H x W array in [0, 1]."""
    if len(buf) < 2:
        raise FormatError("file too short for a magic number", 0)
    magic = bytes(buf[:2])
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"unsupported magic {magic!r}", 0)
    pos = _skip_ws(buf, 2)
    fields, starts = [], []
    for i in range(3):
        starts.append(pos)
        token, end = _read_token(buf, pos)
        if not token.isdigit():
            raise FormatError(f"non-numeric header field {token!r}", pos)
        fields.append(int(token))
        if i < 2:
            pos = _skip_ws(buf, end)
        else:
            pos = end
    width, height, maxval = fields
    if maxval != 255:
        raise FormatError(f"maxval {maxval} is not 255", starts[2])
    if width < 1 or height < 1:
        raise FormatError("zero image dimension", starts[0])
    if pos >= len(buf) or buf[pos] not in _WS:
        raise FormatError("missing whitespace byte after maxval", pos)
    pos += 1
    channels = 1 if magic == b"P5" else 3
    need = width * height * channels
    if len(buf) - pos < need:
        raise FormatError(f"payload truncated: need {need} bytes, have {len(buf) - pos}", len(buf))
    raw = np.frombuffer(bytes(buf[pos:pos + need]), dtype=np.uint8).astype(float) / 255.0
    if channels == 1:
        return raw.reshape(height, width)
    return raw.reshape(height, width, 3).transpose(2, 0, 1).copy()


def pnm_encode(array):
    a = np.asarray(array, dtype=float)
    q = np.clip(np.round(a * 255.0), 0, 255).astype(np.uint8)
    if a.ndim == 2:
        magic, (h, w), payload = b"P5", a.shape, q
    elif a.ndim == 3 and a.shape[0] == 3:
        magic, (h, w), payload = b"P6", a.shape[1:], q.transpose(1, 2, 0)
    else:
        raise FormatError(f"cannot encode array of shape {a.shape}")
    return magic + f"\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(payload).tobytes()


def pnm_read(path):
    with open(path, "rb") as fh:
        return pnm_decode(fh.read())


def pnm_write(path, array):
    with open(path, "wb") as fh:
        fh.write(pnm_encode(array))


# -- checkpoints -------------------------------------------------------------------
#
# little-endian:
#   b"M2AK" | u32 version | u32 count
#   count x ( u32 name_len | name utf-8 | u32 rank | rank x u32 dim | float32 payload )
#   u32 crc32 of every byte between the header and this trailer

MAGIC = b"M2AK"
VERSION = 1


def crc32(data):
    return zlib.crc32(data) & 0xFFFFFFFF


def checkpoint_save(tensors):
    """Serialize a name -> array mapping, a ParamSet, or a sequence of (name, array) pairs."""
    items = tensors.items() if hasattr(tensors, "items") else tensors
    body = bytearray()
    seen = set()
    for name, value in items:
        if name in seen:
            raise ValueError(f"duplicate tensor name {name!r}")
        seen.add(name)
        arr = np.asarray(getattr(value, "data", value), dtype="<f4")
        encoded = name.encode("utf-8")
        body += struct.pack("<I", len(encoded)) + encoded
        body += struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
        body += np.ascontiguousarray(arr).tobytes()
    header = MAGIC + struct.pack("<II", VERSION, len(seen))
    return bytes(header + body + struct.pack("<I", crc32(bytes(body))))


@dataclass
class Checkpoint:
    tensors: dict
    crc_ok: bool
    stored_crc: int
    computed_crc: int


def checkpoint_load(data, strict=True):
    """Parse checkpoint bytes.

    Structural problems always raise :class:`FormatError`.  A CRC mismatch
    raises :class:`ChecksumError` when ``strict``; otherwise it is reported
    through :attr:`Checkpoint.crc_ok`.
    """
    buf = memoryview(data)

    def need(pos, n, what):
        if pos + n > len(buf):
            raise FormatError(f"truncated {what}", pos)

    need(0, 12, "header")
    if bytes(buf[:4]) != MAGIC:
        raise FormatError(f"bad magic {bytes(buf[:4])!r}", 0)
    version, count = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    pos = 12
    tensors = {}
    for _ in range(count):
        need(pos, 4, "name length")
        (n,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        need(pos, n, "name")
        try:
            name = bytes(buf[pos:pos + n]).decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError("tensor name is not UTF-8", pos) from None
        pos += n
        need(pos, 4, "rank")
        (rank,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        need(pos, 4 * rank, "dims")
        dims = struct.unpack_from(f"<{rank}I", buf, pos)
        pos += 4 * rank
        size = int(np.prod(dims, dtype=np.int64)) * 4
        need(pos, size, f"payload of {name!r}")
        tensors[name] = np.frombuffer(bytes(buf[pos:pos + size]), dtype="<f4").reshape(dims).copy()
        pos += size
    need(pos, 4, "checksum")
    (stored,) = struct.unpack_from("<I", buf, pos)
    if pos + 4 != len(buf):
        raise FormatError("trailing bytes after checksum", pos + 4)
    computed = crc32(bytes(buf[12:pos]))
    ck = Checkpoint(tensors, stored == computed, stored, computed)
    if strict and not ck.crc_ok:
        raise ChecksumError(f"checksum mismatch: stored {stored:08x}, computed {computed:08x}", pos)
    return ck
