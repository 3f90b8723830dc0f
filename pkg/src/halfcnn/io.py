"""On-disk formats: PGM/PPM images, raw maps, checkpoints, network specs, manifests.

Binary layouts are little-endian regardless of platform.

Raw map (``.map``)::

    u32 height, u32 width, float64[height * width] row-major

Checkpoint (``.ckpt``)::

    b"HCNR", u32 version (= 1)
    u32 input_channels, u32 n_blocks
    n_blocks x (u32 num_filters, u32 filter_size, u32 pool, u32 lrn, u32 upsample)
    u32 combiner (0 = linear, 1 = channel_max), u32 target_factor
    u32 lrn_n, float64 lrn_k, float64 lrn_alpha, float64 lrn_beta
    u64 init_seed, u64 param_count
    float64[param_count] parameters in flatten_params order
"""
from __future__ import annotations

import logging
import os
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import layers
from . import network as nw
from .errors import BadMagicError, BadVersionError, FormatError, InputError, LengthMismatchError
from .groundtruth import Window
from .tensor import as_tensor

log = logging.getLogger(__name__)

MAGIC = b"HCNR"
VERSION = 1
_COMBINER_CODES = {layers.LINEAR: 0, layers.CHANNEL_MAX: 1}

# -- PGM / PPM -----------------------------------------------------------------

_PNM_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n?)*(\S+)")


def read_image(path) -> np.ndarray:
    """Load an 8-bit binary PGM (P5) or PPM (P6) as a float tensor in [0, 1]."""
    data = Path(path).read_bytes()
    magic = data[:2]
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"{path}: unsupported image format, header bytes {data[:8]!r}")
    pos, fields = 2, []
    for _ in range(3):
        m = _PNM_TOKEN.match(data, pos)
        if not m:
            raise FormatError(f"{path}: truncated PNM header {data[:32]!r}")
        fields.append(m.group(1))
        pos = m.end()
    try:
        width, height, maxval = (int(f) for f in fields)
    except ValueError:
        raise FormatError(f"{path}: malformed PNM header {data[:32]!r}") from None
    if not 0 < maxval < 256:
        raise FormatError(f"{path}: only 8-bit images are supported (maxval {maxval})")
    pos += 1  # single whitespace byte before the raster
    channels = 1 if magic == b"P5" else 3
    n = width * height * channels
    raster = np.frombuffer(data, dtype=np.uint8, count=n, offset=pos) if len(data) >= pos + n else None
    if raster is None:
        raise FormatError(f"{path}: expected {n} raster bytes, file is too short")
    img = raster.reshape(height, width, channels).transpose(2, 0, 1)
    return img.astype(np.float64) / maxval


def _quantize(t: np.ndarray) -> tuple[np.ndarray, bool]:
    clipped = np.clip(t, 0.0, 1.0)
    changed = bool(np.any(clipped != t))
    # round half up
    return np.floor(255.0 * clipped + 0.5).astype(np.uint8), changed


def write_image(t, path) -> bool:
    """Write a 1-channel tensor as P5 or a 3-channel one as P6.

    Values are clamped to [0, 1]; returns True if clamping was needed.
    """
    t = as_tensor(t)
    if t.shape[0] not in (1, 3):
        raise InputError(f"can only write 1- or 3-channel images, got {t.shape[0]}")
    q, clamped = _quantize(t)
    c, h, w = t.shape
    header = f"{'P5' if c == 1 else 'P6'}\n{w} {h}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(q.transpose(1, 2, 0).tobytes())
    if clamped:
        log.warning("%s: values outside [0, 1] were clamped", path)
    return clamped


def write_map(m, path) -> bool:
    """PGM preview of a single-channel map (``v -> round(255 v)``)."""
    m = as_tensor(m)
    if m.shape[0] != 1:
        raise InputError(f"maps are single-channel, got {m.shape[0]} channels")
    return write_image(m, path)


def write_raw_map(m, path) -> None:
    m = as_tensor(m)
    if m.shape[0] != 1:
        raise InputError(f"maps are single-channel, got {m.shape[0]} channels")
    _, h, w = m.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack("<II", h, w))
        fh.write(m.astype("<f8").tobytes())


def read_raw_map(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 8:
        raise FormatError(f"{path}: raw map header truncated")
    h, w = struct.unpack_from("<II", data)
    if len(data) != 8 + 8 * h * w:
        raise FormatError(f"{path}: raw map of {h}x{w} needs {8 + 8 * h * w} bytes, got {len(data)}")
    return np.frombuffer(data, dtype="<f8", offset=8).astype(np.float64).reshape(1, h, w)


def read_map(path) -> np.ndarray:
    """Read a target map from a raw ``.map`` file or a grayscale PGM."""
    with open(path, "rb") as fh:
        head = fh.read(2)
    if head == b"P5":
        return read_image(path)
    return read_raw_map(path)


# -- checkpoints ---------------------------------------------------------------

def _spec_header(spec: nw.NetworkSpec, seed: int, count: int) -> bytes:
    parts = [MAGIC, struct.pack("<III", VERSION, spec.input_channels, len(spec.blocks))]
    for b in spec.blocks:
        parts.append(struct.pack("<5I", b.num_filters, b.filter_size, b.pool, b.lrn, b.upsample))
    lrn = spec.lrn
    parts.append(struct.pack("<III", _COMBINER_CODES[spec.combiner], spec.target_factor, lrn.n))
    parts.append(struct.pack("<ddd", lrn.k, lrn.alpha, lrn.beta))
    parts.append(struct.pack("<QQ", seed, count))
    return b"".join(parts)


def checkpoint_bytes(net: nw.Network) -> bytes:
    params = nw.flatten_params(net)
    return _spec_header(net.spec, net.seed, params.size) + params.astype("<f8").tobytes()


def save_checkpoint(net: nw.Network, path) -> None:
    Path(path).write_bytes(checkpoint_bytes(net))


def _unpack(fmt, data, pos):
    size = struct.calcsize(fmt)
    if len(data) < pos + size:
        raise LengthMismatchError(f"checkpoint truncated at byte {pos} (need {size} more)")
    return struct.unpack_from(fmt, data, pos), pos + size


def parse_checkpoint(data: bytes) -> nw.Network:
    if data[:4] != MAGIC:
        raise BadMagicError(f"bad checkpoint magic {data[:4]!r}")
    (version, in_ch, n_blocks), pos = _unpack("<III", data, 4)
    if version != VERSION:
        raise BadVersionError(f"unsupported checkpoint version {version}")
    blocks = []
    for _ in range(n_blocks):
        (nf, fs, pool, lrn, up), pos = _unpack("<5I", data, pos)
        blocks.append(nw.BlockSpec(nf, fs, bool(pool), bool(lrn), bool(up)))
    (comb, factor, lrn_n), pos = _unpack("<III", data, pos)
    (k, alpha, beta), pos = _unpack("<ddd", data, pos)
    (seed, count), pos = _unpack("<QQ", data, pos)
    modes = {v: m for m, v in _COMBINER_CODES.items()}
    if comb not in modes:
        raise FormatError(f"unknown combiner code {comb}")
    spec = nw.NetworkSpec(in_ch, tuple(blocks), modes[comb], factor, layers.LrnParams(k, alpha, beta, lrn_n))
    if count != spec.param_count:
        raise LengthMismatchError(f"header declares {count} parameters, spec implies {spec.param_count}")
    if len(data) != pos + 8 * count:
        raise LengthMismatchError(f"expected {pos + 8 * count} bytes, got {len(data)}")
    net = nw.build(spec, seed)
    nw.unflatten_params(net, np.frombuffer(data, dtype="<f8", offset=pos).astype(np.float64))
    return net


def load_checkpoint(path) -> nw.Network:
    return parse_checkpoint(Path(path).read_bytes())


# -- network spec text files ---------------------------------------------------

CONFIG_DIR = Path(__file__).with_name("configs")


def parse_spec_text(text: str) -> nw.NetworkSpec:
    """Parse the line-oriented network description.

    ::

        input_channels 3
        target_factor 4            # optional, checked against the blocks
        lrn 2 1e-4 0.75 5          # optional: k alpha beta n
        5 11 1 1 0                 # filters size pool lrn upsample
        5 7 1 1 0
        5 5 1 0 1
        combiner linear
    """
    in_ch, factor, lrn, combiner, blocks = 1, None, layers.LrnParams(), layers.LINEAR, []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        try:
            if tok[0] == "input_channels":
                in_ch = int(tok[1])
            elif tok[0] == "target_factor":
                factor = int(tok[1])
            elif tok[0] == "lrn":
                lrn = layers.LrnParams(float(tok[1]), float(tok[2]), float(tok[3]), int(tok[4]))
            elif tok[0] == "combiner":
                combiner = tok[1]
            elif tok[0].isdigit():
                nf, fs, pool, use_lrn, up = (int(v) for v in tok[:5])
                if len(tok) != 5:
                    raise ValueError("expected 5 fields")
                blocks.append(nw.BlockSpec(nf, fs, bool(pool), bool(use_lrn), bool(up)))
            else:
                raise ValueError(f"unknown keyword {tok[0]!r}")
        except (ValueError, IndexError) as exc:
            raise FormatError(f"network spec line {lineno}: {raw.strip()!r}: {exc}") from None
    return nw.NetworkSpec(in_ch, tuple(blocks), combiner, factor, lrn)


def format_spec_text(spec: nw.NetworkSpec) -> str:
    lines = [f"input_channels {spec.input_channels}", f"target_factor {spec.target_factor}"]
    lrn = spec.lrn
    lines.append(f"lrn {lrn.k!r} {lrn.alpha!r} {lrn.beta!r} {lrn.n}")
    for b in spec.blocks:
        lines.append(f"{b.num_filters} {b.filter_size} {int(b.pool)} {int(b.lrn)} {int(b.upsample)}")
    lines.append(f"combiner {spec.combiner}")
    return "\n".join(lines) + "\n"


def load_spec(name_or_path) -> nw.NetworkSpec:
    """Read a spec file, or a bundled one by name (``face``, ``saliency``, ``toy``, ...)."""
    p = Path(name_or_path)
    if not p.exists():
        bundled = CONFIG_DIR / f"{name_or_path}.net"
        if not bundled.exists():
            raise FormatError(f"no network spec file {name_or_path!r}")
        p = bundled
    return parse_spec_text(p.read_text())


# -- manifests -----------------------------------------------------------------

KINDS = ("windows", "map", "fixations")


@dataclass
class Record:
    image_path: Path
    kind: str
    windows: list[Window] = field(default_factory=list)
    map_path: Path | None = None
    fixations: np.ndarray | None = None

    @property
    def image_id(self) -> str:
        return self.image_path.stem


def _parse_numbers(chunk: str, n: int, lineno: int) -> list[float]:
    vals = chunk.split(",")
    if len(vals) != n:
        raise FormatError(f"manifest line {lineno}: expected {n} comma-separated numbers in {chunk!r}")
    try:
        return [float(v) for v in vals]
    except ValueError:
        raise FormatError(f"manifest line {lineno}: bad number in {chunk!r}") from None


def parse_manifest(text: str, base: Path | str = ".", check_paths: bool = True) -> list[Record]:
    base = Path(base)
    records = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        if not raw.strip() or raw.lstrip().startswith("#"):
            continue
        cols = raw.rstrip("\r\n").split("\t")
        if len(cols) == 2:
            cols.append("")
        if len(cols) != 3:
            raise FormatError(f"manifest line {lineno}: expected 3 tab-separated fields")
        img, kind, payload = cols[0].strip(), cols[1].strip(), cols[2].strip()
        if kind not in KINDS:
            raise FormatError(f"manifest line {lineno}: unknown kind {kind!r}")
        rec = Record(base / img, kind)
        chunks = [c for c in payload.split(";") if c.strip()]
        if kind == "windows":
            rec.windows = [Window(*_parse_numbers(c, 4, lineno)) for c in chunks]
        elif kind == "fixations":
            pts = [_parse_numbers(c, 2, lineno) for c in chunks]
            rec.fixations = np.array(pts, dtype=np.int64).reshape(-1, 2)
        else:
            if not payload:
                raise FormatError(f"manifest line {lineno}: map record needs a map path")
            rec.map_path = base / payload
        if check_paths:
            for p in (rec.image_path, rec.map_path):
                if p is not None and not p.exists():
                    raise FormatError(f"manifest line {lineno}: {p} does not exist")
        records.append(rec)
    return records


def read_manifest(path, check_paths: bool = True) -> list[Record]:
    path = Path(path)
    records = parse_manifest(path.read_text(), path.parent, check_paths)
    if not records:
        raise FormatError(f"{path}: manifest has no records")
    return records


def _fmt(v: float) -> str:
    return f"{v:g}" if float(v).is_integer() else repr(float(v))


def format_record(rec: Record, base: Path | str = ".") -> str:
    img = os.path.relpath(rec.image_path, base)
    if rec.kind == "windows":
        payload = ";".join(",".join(_fmt(v) for v in (w.cx, w.cy, w.w, w.h)) for w in rec.windows)
    elif rec.kind == "fixations":
        payload = ";".join(f"{x},{y}" for x, y in np.asarray(rec.fixations).reshape(-1, 2))
    else:
        payload = os.path.relpath(rec.map_path, base)
    return f"{img}\t{rec.kind}\t{payload}"


def write_manifest(records: Sequence[Record], path) -> None:
    path = Path(path)
    lines = [format_record(r, path.parent) for r in records]
    path.write_text("".join(line + "\n" for line in lines))


# -- synthetic detection data --------------------------------------------------

def _place_windows(rng, canvas, count, size_range, gap, attempts=200):
    lo, hi = size_range
    placed = []
    for _ in range(attempts):
        if len(placed) == count:
            break
        w, h = (int(v) for v in rng.integers(lo, hi + 1, size=2))
        x0 = int(rng.integers(0, canvas - w + 1))
        y0 = int(rng.integers(0, canvas - h + 1))
        box = (x0, y0, x0 + w, y0 + h)
        if all(box[0] >= b[2] + gap or b[0] >= box[2] + gap or box[1] >= b[3] + gap or b[1] >= box[3] + gap
               for b in placed):
            placed.append(box)
    return [Window((b[0] + b[2] - 1) / 2, (b[1] + b[3] - 1) / 2, b[2] - b[0], b[3] - b[1]) for b in placed]


def synth_image(rng, canvas: int, windows: Sequence[Window]) -> np.ndarray:
    """Dark noisy texture with one bright filled ellipse per window."""
    coarse = rng.uniform(0.0, 0.25, size=(canvas // 8 + 1, canvas // 8 + 1))
    texture = np.kron(coarse, np.ones((8, 8)))[:canvas, :canvas]
    img = 0.05 + texture + rng.uniform(0.0, 0.1, size=(canvas, canvas))
    ys = np.arange(canvas)[:, None]
    xs = np.arange(canvas)[None, :]
    for win in windows:
        inside = ((xs - win.cx) / (win.w / 2)) ** 2 + ((ys - win.cy) / (win.h / 2)) ** 2 <= 1.0
        level = rng.uniform(0.75, 0.95)
        img = np.where(inside, level + rng.uniform(-0.05, 0.05, size=img.shape), img)
    return np.clip(img, 0.0, 1.0)[None]


def synth_dataset(n: int, canvas: int, factor: int, windows_per_image=(1, 2), seed: int = 0,
                  out_dir=".", size_range=None, prefix: str = "img",
                  manifest_name: str = "manifest.tsv") -> list[Record]:
    """Write ``n`` synthetic detection images plus a windows manifest.

    Windows are whole-pixel boxes fully inside the canvas and separated by at
    least ``factor`` pixels; each image gets a count drawn uniformly from
    ``windows_per_image`` (inclusive).
    """
    if canvas % factor:
        raise InputError(f"canvas {canvas} is not divisible by factor {factor}")
    lo, hi = size_range or (canvas // 4, canvas // 2)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    records = []
    for i in range(n):
        count = int(rng.integers(windows_per_image[0], windows_per_image[1] + 1))
        wins = _place_windows(rng, canvas, count, (lo, hi), factor)
        path = out / f"{prefix}{i:05d}.pgm"
        write_image(synth_image(rng, canvas, wins), path)
        records.append(Record(path, "windows", wins))
    write_manifest(records, out / manifest_name)
    return records
