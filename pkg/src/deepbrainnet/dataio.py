"""Image I/O, dataset manifests, deterministic splits, and synthetic data.

Only Netpbm PGM files are read and written (P5 binary and P2 ASCII, maxval up
to 255). Datasets are plain directories with one subdirectory per class;
manifests are derived by scanning and exported as CSV. Conversion from other
formats is left to external tools.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .rng import Prng, derive_seed


class PgmError(ValueError):
    """A PGM file could not be decoded; the message names the byte offset."""


class MalformedHeaderError(PgmError):
    pass


class UnsupportedMaxvalError(PgmError):
    pass


class TruncatedPayloadError(PgmError):
    pass


class DatasetError(ValueError):
    """A dataset directory violates the expected class-per-directory layout."""


class GrayImage:
    """8-bit single-channel raster stored row-major as a uint8 (height, width) array.

    Instances are treated as immutable after construction; the pixel buffer is
    copied in and marked read-only.
    """

    __slots__ = ("width", "height", "data")

    def __init__(self, width: int, height: int, data):
        width = int(width)
        height = int(height)
        if width < 1 or height < 1:
            raise ValueError(f"image dimensions must be positive, got {width}x{height}")
        arr = np.asarray(data)
        if arr.size != width * height:
            raise ValueError(f"data length {arr.size} != width*height = {width * height}")
        if arr.dtype != np.uint8:
            if arr.size and (arr.min() < 0 or arr.max() > 255):
                raise ValueError("pixel values must lie in [0, 255]")
            arr = arr.astype(np.uint8)
        arr = np.array(arr, dtype=np.uint8, copy=True).reshape(height, width)
        arr.flags.writeable = False
        object.__setattr__(self, "width", width)
        object.__setattr__(self, "height", height)
        object.__setattr__(self, "data", arr)

    def __setattr__(self, name, value):
        raise AttributeError("GrayImage is immutable")

    def __eq__(self, other):
        return (
            isinstance(other, GrayImage)
            and self.width == other.width
            and self.height == other.height
            and np.array_equal(self.data, other.data)
        )

    def __repr__(self):
        return f"GrayImage({self.width}x{self.height})"

    def tobytes(self) -> bytes:
        return self.data.tobytes()


class RgbImage:
    """8-bit interleaved RGB raster, uint8 array of shape (height, width, 3)."""

    __slots__ = ("width", "height", "data")

    def __init__(self, width: int, height: int, data):
        width = int(width)
        height = int(height)
        if width < 1 or height < 1:
            raise ValueError(f"image dimensions must be positive, got {width}x{height}")
        arr = np.asarray(data)
        if arr.size != 3 * width * height:
            raise ValueError(f"data length {arr.size} != 3*width*height = {3 * width * height}")
        arr = np.array(arr, dtype=np.uint8, copy=True).reshape(height, width, 3)
        arr.flags.writeable = False
        object.__setattr__(self, "width", width)
        object.__setattr__(self, "height", height)
        object.__setattr__(self, "data", arr)

    def __setattr__(self, name, value):
        raise AttributeError("RgbImage is immutable")

    def __eq__(self, other):
        return (
            isinstance(other, RgbImage)
            and self.width == other.width
            and self.height == other.height
            and np.array_equal(self.data, other.data)
        )

    def __repr__(self):
        return f"RgbImage({self.width}x{self.height})"


# ---------------------------------------------------------------------------
# PGM reading / writing
# ---------------------------------------------------------------------------

_WHITESPACE = b" \t\r\n\x0b\x0c"


def _next_token(blob: bytes, pos: int) -> tuple[bytes, int, int]:
    """Next header token, skipping whitespace and '#' comments.

    Returns (token, token_start_offset, offset_past_token).
    """
    n = len(blob)
    while pos < n:
        ch = blob[pos : pos + 1]
        if ch in _WHITESPACE:
            pos += 1
        elif ch == b"#":
            while pos < n and blob[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        else:
            break
    if pos >= n:
        raise MalformedHeaderError(f"unexpected end of header at byte {pos}")
    start = pos
    while pos < n and blob[pos : pos + 1] not in _WHITESPACE and blob[pos : pos + 1] != b"#":
        pos += 1
    return blob[start:pos], start, pos


def _header_int(blob: bytes, pos: int, what: str) -> tuple[int, int, int]:
    token, start, end = _next_token(blob, pos)
    if not token.isdigit():
        raise MalformedHeaderError(f"non-numeric {what} {token!r} at byte {start}")
    return int(token), start, end


def load_pgm(path) -> GrayImage:
    """Decode a PGM (P5 binary or P2 ASCII) file with maxval <= 255.

    Pixel values are taken verbatim; no maxval rescaling is applied. Raises
    MalformedHeaderError, UnsupportedMaxvalError, or TruncatedPayloadError
    with the offending byte offset in the message.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    magic, start, pos = _next_token(blob, 0)
    if magic not in (b"P5", b"P2"):
        raise MalformedHeaderError(f"unsupported magic {magic!r} at byte {start}")
    width, wstart, pos = _header_int(blob, pos, "width")
    if width == 0:
        raise MalformedHeaderError(f"zero width at byte {wstart}")
    height, hstart, pos = _header_int(blob, pos, "height")
    if height == 0:
        raise MalformedHeaderError(f"zero height at byte {hstart}")
    maxval, mstart, pos = _header_int(blob, pos, "maxval")
    if maxval > 255:
        raise UnsupportedMaxvalError(f"maxval {maxval} > 255 at byte {mstart}")
    if maxval == 0:
        raise MalformedHeaderError(f"zero maxval at byte {mstart}")
    count = width * height

    if magic == b"P5":
        if pos >= len(blob) or blob[pos : pos + 1] not in _WHITESPACE:
            raise MalformedHeaderError(f"missing raster separator at byte {pos}")
        pos += 1  # exactly one whitespace byte before the raster
        raster = blob[pos : pos + count]
        if len(raster) < count:
            raise TruncatedPayloadError(
                f"raster needs {count} bytes, file ends at byte {len(blob)}"
            )
        data = np.frombuffer(raster, dtype=np.uint8)
    else:
        values = np.empty(count, dtype=np.uint8)
        for i in range(count):
            try:
                value, vstart, pos = _header_int(blob, pos, "sample")
            except MalformedHeaderError as exc:
                raise TruncatedPayloadError(
                    f"raster needs {count} samples, got {i}: {exc}"
                ) from None
            if value > maxval:
                raise PgmError(f"sample {value} exceeds maxval {maxval} at byte {vstart}")
            values[i] = value
        data = values
    return GrayImage(width, height, data)


def save_pgm(image: GrayImage, path) -> None:
    """Write a binary P5 file with maxval 255; load_pgm round-trips it exactly."""
    header = f"P5\n{image.width} {image.height}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(image.tobytes())


def stack_to_rgb(image: GrayImage) -> RgbImage:
    """Replicate the single gray channel into three identical RGB channels."""
    stacked = np.repeat(image.data[:, :, None], 3, axis=2)
    return RgbImage(image.width, image.height, stacked)


# ---------------------------------------------------------------------------
# Dataset manifests
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DatasetManifest:
    """Scanned class-per-directory dataset: relative paths plus class indices.

    `entries` is sorted by path (plain codepoint comparison, locale
    independent); `class_names` is the sorted list of class directory names.
    """

    root: str
    entries: tuple[tuple[str, int], ...]
    class_names: tuple[str, ...]

    def __post_init__(self):
        k = len(self.class_names)
        if k < 2:
            raise DatasetError(f"need at least 2 classes, got {k}")
        paths = [p for p, _ in self.entries]
        if len(set(paths)) != len(paths):
            raise DatasetError("duplicate paths in manifest")
        for path, idx in self.entries:
            if not 0 <= idx < k:
                raise DatasetError(f"class index {idx} out of range for {path}")

    def __len__(self):
        return len(self.entries)

    def full_path(self, rel_path: str) -> str:
        return os.path.join(self.root, rel_path)

    def per_class_counts(self) -> list[int]:
        counts = [0] * len(self.class_names)
        for _, idx in self.entries:
            counts[idx] += 1
        return counts


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError(f"train_fraction must be in (0, 1), got {self.train_fraction}")


def scan_dataset(root_dir) -> DatasetManifest:
    """Build a manifest from root/<class>/<image>.pgm, classes sorted by name."""
    root_dir = os.fspath(root_dir)
    if not os.path.isdir(root_dir):
        raise DatasetError(f"dataset root {root_dir!r} is not a directory")
    class_names = sorted(
        name for name in os.listdir(root_dir) if os.path.isdir(os.path.join(root_dir, name))
    )
    if len(class_names) < 2:
        raise DatasetError(f"need at least 2 class directories under {root_dir!r}, got {len(class_names)}")
    entries = []
    for idx, name in enumerate(class_names):
        files = sorted(
            f for f in os.listdir(os.path.join(root_dir, name)) if f.endswith(".pgm")
        )
        if not files:
            raise DatasetError(f"class directory {name!r} contains no .pgm files")
        entries.extend((f"{name}/{f}", idx) for f in files)
    entries.sort(key=lambda e: e[0])
    return DatasetManifest(root_dir, tuple(entries), tuple(class_names))


def split_manifest(
    manifest: DatasetManifest, spec: SplitSpec
) -> tuple[DatasetManifest, DatasetManifest]:
    """Stratified deterministic split into (train, val) manifests.

    Each class is shuffled with its own xorshift64* stream derived from
    (seed, class index); the first round(fraction * n) entries (clamped so
    both sides stay nonempty) go to train. Entries in both outputs keep the
    sorted-by-path manifest order.
    """
    per_class: dict[int, list[tuple[str, int]]] = {}
    for entry in manifest.entries:
        per_class.setdefault(entry[1], []).append(entry)
    train_entries: list[tuple[str, int]] = []
    val_entries: list[tuple[str, int]] = []
    for idx in range(len(manifest.class_names)):
        group = per_class.get(idx, [])
        n = len(group)
        if n < 2:
            raise DatasetError(
                f"class {manifest.class_names[idx]!r} has {n} entries; need >= 2 to stratify"
            )
        rng = Prng(derive_seed(spec.seed, idx))
        shuffled = list(group)
        rng.shuffle(shuffled)
        n_train = int(np.floor(spec.train_fraction * n + 0.5))
        n_train = min(max(n_train, 1), n - 1)
        train_entries.extend(shuffled[:n_train])
        val_entries.extend(shuffled[n_train:])
    train_entries.sort(key=lambda e: e[0])
    val_entries.sort(key=lambda e: e[0])
    return (
        DatasetManifest(manifest.root, tuple(train_entries), manifest.class_names),
        DatasetManifest(manifest.root, tuple(val_entries), manifest.class_names),
    )


def manifest_to_csv(manifest: DatasetManifest, path) -> None:
    """Export as CSV with header path,class_index,class_name (LF endings, UTF-8)."""
    lines = ["path,class_index,class_name"]
    for rel_path, idx in manifest.entries:
        lines.append(f"{rel_path},{idx},{manifest.class_names[idx]}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def manifest_from_csv(path, root: str) -> DatasetManifest:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [line.rstrip("\n") for line in fh if line.strip()]
    if not lines or lines[0] != "path,class_index,class_name":
        raise DatasetError(f"bad manifest header in {path!r}")
    entries = []
    names: dict[int, str] = {}
    for line in lines[1:]:
        rel_path, idx_s, name = line.split(",", 2)
        idx = int(idx_s)
        entries.append((rel_path, idx))
        names[idx] = name
    class_names = tuple(names[i] for i in sorted(names))
    return DatasetManifest(root, tuple(sorted(entries)), class_names)


# ---------------------------------------------------------------------------
# Synthetic dataset
# ---------------------------------------------------------------------------

SYNTHETIC_CLASSES = ("blank", "blob", "ring", "stripe")


def _texture(class_name: str, size: int, rng: Prng) -> GrayImage:
    pixels = np.zeros((size, size), dtype=np.uint8)
    if class_name == "blank":
        for y in range(size):
            for x in range(size):
                pixels[y, x] = rng.below(61)
        return GrayImage(size, size, pixels)

    if class_name == "stripe":
        period = max(4, size // 8)
        phase = rng.below(period)
        for y in range(size):
            for x in range(size):
                if (x + phase) % period < period // 2:
                    pixels[y, x] = 200 + rng.below(56)
                else:
                    pixels[y, x] = rng.below(31)
        return GrayImage(size, size, pixels)

    # blob and ring share a center/radius jitter scheme
    jitter = size // 8
    cx = size / 2 + rng.below(2 * jitter + 1) - jitter
    cy = size / 2 + rng.below(2 * jitter + 1) - jitter
    if class_name == "blob":
        radius = size / 4 + rng.below(size // 8 + 1) - size // 16
        r2_outer, r2_inner = radius * radius, -1.0
        lo, span = 170, 71
    else:  # ring
        outer = size / 3 + rng.below(size // 8 + 1) - size // 16
        inner = 0.55 * outer
        r2_outer, r2_inner = outer * outer, inner * inner
        lo, span = 120, 61
    for y in range(size):
        for x in range(size):
            d2 = (x - cx) ** 2 + (y - cy) ** 2
            if r2_inner < d2 <= r2_outer:
                pixels[y, x] = lo + rng.below(span)
            else:
                pixels[y, x] = rng.below(31)
    return GrayImage(size, size, pixels)


def generate_synthetic_dataset(
    root_dir, n_per_class: int, image_size: int, seed: int
) -> DatasetManifest:
    """Write a 4-class textured PGM dataset under root_dir and scan it.

    Classes (blank noise, bright blob, bright ring, vertical stripes) occupy
    distinct intensity bands and spatial patterns, so a small classifier can
    separate them. Identical seeds give bit-identical files.
    """
    if n_per_class < 2:
        raise ValueError(f"n_per_class must be >= 2, got {n_per_class}")
    if image_size < 16:
        raise ValueError(f"image_size must be >= 16, got {image_size}")
    root_dir = os.fspath(root_dir)
    for class_idx, name in enumerate(SYNTHETIC_CLASSES):
        class_dir = os.path.join(root_dir, name)
        os.makedirs(class_dir, exist_ok=True)
        for i in range(n_per_class):
            rng = Prng(derive_seed(seed, class_idx, i))
            image = _texture(name, image_size, rng)
            save_pgm(image, os.path.join(class_dir, f"{name}_{i:03d}.pgm"))
    return scan_dataset(root_dir)
