"""Discrete tomography: projections of a gray image along lattice directions.

Each direction ``(v1, v2)`` groups pixels by the line invariant of
:func:`ieppa.constraints.line_invariants`; its line sums form one constraint
block.  Lines with zero sum force their pixels to zero, which is recorded as
the instance's ``zero_mask`` instead of a zero right-hand side.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .constraints import UNCOVERED, Instance, PartitionBlock, apply_block, check_direction, tomo_block
from .eppa import EppaParams, solve_ieppa
from .errors import DimensionError, DomainError, InstanceFormatError, InvalidDirectionError

COST_KINDS = ("squared_index_distance",)


@dataclass
class GrayImage:
    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim == 3 and px.shape[2] == 1:
            px = px[:, :, 0]
        if px.ndim != 2 or px.shape[0] != px.shape[1] or px.shape[0] < 1:
            raise DimensionError(f"expected a square image, got shape {px.shape}")
        if not np.isfinite(px).all() or np.any(px < 0):
            raise DomainError("pixels must be finite and nonnegative")
        self.pixels = px

    @property
    def n(self) -> int:
        return self.pixels.shape[0]

    def as_tensor(self) -> np.ndarray:
        return self.pixels[:, :, None]


# ------------------------------------------------------------------ PGM I/O

_PGM_TOKEN = re.compile(rb"#[^\n\r]*[\n\r]?|\s+")


def _pgm_header(data: bytes):
    """Magic, width, height, maxval and the offset just past the header."""
    tokens, pos = [], 0
    while len(tokens) < 4:
        m = _PGM_TOKEN.match(data, pos)
        if m:
            pos = m.end()
            continue
        end = pos
        while end < len(data) and not data[end:end + 1].isspace() and data[end:end + 1] != b"#":
            end += 1
        if end == pos:
            raise InstanceFormatError("truncated PGM header")
        tokens.append(data[pos:end])
        pos = end
    magic = tokens[0]
    if magic not in (b"P2", b"P5"):
        raise InstanceFormatError(f"unsupported PGM magic {magic!r}")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise InstanceFormatError("malformed PGM header") from None
    if w < 1 or h < 1 or not 0 < maxval < 65536:
        raise InstanceFormatError("PGM dimensions or maxval out of range")
    return magic, w, h, maxval, pos


def read_pgm(path) -> GrayImage:
    """Read a P2 or P5 PGM and scale pixel values to [0, 1]."""
    data = Path(path).read_bytes()
    magic, w, h, maxval, pos = _pgm_header(data)
    if magic == b"P2":
        body = _PGM_TOKEN.sub(b" ", data[pos:]).split()
        try:
            vals = np.array([int(t) for t in body[: w * h]], dtype=np.float64)
        except ValueError:
            raise InstanceFormatError("non-integer PGM sample") from None
    else:
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        raw = data[pos + 1:]  # one whitespace byte ends the header
        vals = np.frombuffer(raw, dtype=dtype, count=min(w * h, len(raw) // dtype.itemsize))
        vals = vals.astype(np.float64)
    if vals.size != w * h:
        raise InstanceFormatError(f"PGM has {vals.size} samples, expected {w * h}")
    if np.any(vals > maxval):
        raise InstanceFormatError("PGM sample exceeds maxval")
    return GrayImage(vals.reshape(h, w) / maxval)


def write_pgm(path, img: GrayImage, binary: bool = True, maxval: int = 255) -> None:
    """Write pixels clipped to [0, 1] and quantized to ``maxval`` levels."""
    q = np.rint(np.clip(img.pixels, 0.0, 1.0) * maxval).astype(np.int64)
    head = f"{'P5' if binary else 'P2'}\n{img.n} {img.n}\n{maxval}\n".encode()
    if binary:
        dtype = ">u2" if maxval > 255 else "u1"
        Path(path).write_bytes(head + q.astype(dtype).tobytes())
    else:
        rows = "\n".join(" ".join(str(v) for v in row) for row in q)
        Path(path).write_bytes(head + rows.encode() + b"\n")


# -------------------------------------------------------------- directions

def parse_directions(text: str) -> list[tuple[int, int]]:
    """Parse ``"v1,v2;v1,v2;..."``."""
    dirs = []
    for part in text.split(";"):
        part = part.strip()
        if not part:
            continue
        fields = part.split(",")
        if len(fields) != 2:
            raise InvalidDirectionError(f"bad direction {part!r}; expected 'v1,v2'")
        try:
            dirs.append(check_direction((int(fields[0]), int(fields[1]))))
        except ValueError:
            raise InvalidDirectionError(f"bad direction {part!r}") from None
    return validate_directions(dirs)


def validate_directions(dirs) -> list[tuple[int, int]]:
    out = [check_direction(d) for d in dirs]
    if not out:
        raise InvalidDirectionError("at least one direction is required")
    if len(set(out)) != len(out):
        raise InvalidDirectionError("directions must be pairwise distinct")
    return out


def canonical_directions(count: int) -> list[tuple[int, int]]:
    """First ``count`` directions of the fixed enumeration.

    ``(1,0), (0,1), (1,1), (1,-1)``, then for p = 2, 3, ...:
    ``(1,p), (1,-p), (p,1), (p,-1)``.
    """
    if count < 1:
        raise ValueError("count must be positive")
    dirs = [(1, 0), (0, 1), (1, 1), (1, -1)]
    p = 2
    while len(dirs) < count:
        dirs += [(1, p), (1, -p), (p, 1), (p, -1)]
        p += 1
    return dirs[:count]


# ---------------------------------------------------------------- assembly

def squared_index_cost(n: int) -> np.ndarray:
    r = np.arange(n, dtype=np.float64)
    C = (r[:, None] - r[None, :]) ** 2
    top = C.max()
    return (C / top if top > 0 else C)[:, :, None]


def _drop_rows(block: PartitionBlock, keep: np.ndarray) -> PartitionBlock:
    remap = np.full(block.m, UNCOVERED, dtype=np.int64)
    remap[keep] = np.arange(int(keep.sum()))
    labels = np.where(block.covered, remap[np.maximum(block.labels, 0)], UNCOVERED)
    return PartitionBlock(int(keep.sum()), labels, block.dims)


def project_image(img: GrayImage, dirs, cost_kind: str = "squared_index_distance") -> Instance:
    """LP whose feasible set is every image with the same line sums as ``img``."""
    if cost_kind not in COST_KINDS:
        raise ValueError(f"unknown cost kind {cost_kind!r}")
    dirs = validate_directions(dirs)
    if not np.any(img.pixels > 0):
        raise DomainError("the image is all zero")
    X = img.as_tensor()
    full = [tomo_block(img.n, d) for d in dirs]
    sums = [apply_block(blk, X) for blk in full]
    mask = np.zeros(X.size, dtype=bool)
    for blk, s in zip(full, sums):
        zero_rows = s == 0
        if zero_rows.any():
            mask |= blk.covered & zero_rows[np.maximum(blk.labels, 0)]
    blocks, rhs = [], []
    for blk, s in zip(full, sums):
        keep = s > 0
        blocks.append(blk if keep.all() else _drop_rows(blk, keep))
        rhs.append(s[keep])
    return Instance(squared_index_cost(img.n), blocks, rhs, None, mask.reshape(X.shape))


def reconstruct(inst: Instance, params: EppaParams | None = None,
                return_report: bool = False):
    """Solve the projection LP; pixels pinned by the zero mask come back as 0."""
    X, _, _, report = solve_ieppa(inst, params)
    px = X[:, :, 0].copy()
    if inst.zero_mask is not None:
        px[inst.zero_mask[:, :, 0]] = 0.0
    img = GrayImage(np.maximum(px, 0.0))
    return (img, report) if return_report else img


def psnr(recon: GrayImage, truth: GrayImage) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` for an exact reconstruction."""
    if recon.n != truth.n:
        raise DimensionError("images differ in size")
    peak = float(truth.pixels.max())
    if peak == 0:
        raise DomainError("truth image is all zero")
    err = float(np.sum(((recon.pixels - truth.pixels) ** 2).ravel()))
    if err == 0:
        return math.inf
    return 10.0 * math.log10(truth.n ** 2 * peak ** 2 / err)


def phantom(n: int = 16) -> GrayImage:
    """Deterministic test image: two ellipses and a bar inside a blank border."""
    y, x = np.mgrid[0:n, 0:n] / max(n - 1, 1)
    img = np.zeros((n, n))
    outer = ((x - 0.5) / 0.36) ** 2 + ((y - 0.5) / 0.42) ** 2 <= 1
    img[outer] = 0.5
    inner = ((x - 0.4) / 0.14) ** 2 + ((y - 0.42) / 0.2) ** 2 <= 1
    img[inner] = 1.0
    bar = (x > 0.55) & (x < 0.7) & (y > 0.55) & (y < 0.75)
    img[bar] = 0.8
    border = max(1, n // 8)
    img[:border, :] = img[-border:, :] = 0.0
    img[:, :border] = img[:, -border:] = 0.0
    return GrayImage(np.rint(img * 255) / 255)  # 8-bit levels, as stored on disk


def bundled_phantom() -> GrayImage:
    """The 16x16 test image shipped with the package."""
    return read_pgm(Path(__file__).with_name("data") / "phantom16.pgm")
