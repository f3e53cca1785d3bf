"""MNIST IDX loading and lossless composite image files."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .pipeline import SIDE

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801
MNIST_SIDE = 28


class MnistError(ValueError):
    pass


class MagicError(MnistError):
    pass


class TruncatedError(MnistError):
    pass


class CountMismatchError(MnistError):
    pass


class ImageFormatError(ValueError):
    pass


def _read_bytes(path) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        try:
            raw = gzip.decompress(raw)
        except (OSError, EOFError) as exc:
            raise TruncatedError(f"{path}: damaged gzip stream ({exc})") from None
    return raw


def read_idx(path, magic: int) -> np.ndarray:
    """One big-endian IDX file of unsigned bytes, checked against ``magic``."""
    raw = _read_bytes(path)
    if len(raw) < 4:
        raise TruncatedError(f"{path}: file too short for an IDX header")
    (found,) = struct.unpack(">I", raw[:4])
    if found != magic:
        raise MagicError(f"{path}: magic 0x{found:08x}, expected 0x{magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise TruncatedError(f"{path}: header cut short")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    size = int(np.prod(dims, dtype=np.int64))
    if len(raw) - header < size:
        raise TruncatedError(f"{path}: {len(raw) - header} data bytes, header declares {size}")
    if len(raw) - header > size:
        raise MnistError(f"{path}: {len(raw) - header - size} trailing bytes after the data")
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=header).reshape(dims)


@dataclass
class MnistDataset:
    """Raw 8-bit images ``[N, 28, 28]`` and labels; ``images`` is the normalized view."""

    pixels: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if len(self.pixels) != len(self.labels):
            raise CountMismatchError(f"{len(self.pixels)} images but {len(self.labels)} labels")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def images(self) -> np.ndarray:
        """``[N, 1, 28, 28]`` float32 in [-1, 1]: p / 127.5 - 1."""
        return (self.pixels[:, None].astype(np.float32) / np.float32(127.5)) - np.float32(1.0)

    def head(self, n: int) -> "MnistDataset":
        return MnistDataset(self.pixels[:n], self.labels[:n])


def load_mnist(images_path, labels_path) -> MnistDataset:
    images = read_idx(images_path, IMAGES_MAGIC)
    labels = read_idx(labels_path, LABELS_MAGIC)
    if images.shape[1:] != (MNIST_SIDE, MNIST_SIDE):
        raise MnistError(f"{images_path}: images are {images.shape[1:]}, expected 28 x 28")
    if labels.size and labels.max() > 9:
        raise MnistError(f"{labels_path}: label {labels.max()} outside 0..9")
    if len(images) != len(labels):
        raise CountMismatchError(f"{len(images)} images but {len(labels)} labels")
    return MnistDataset(images, labels.astype(np.int64))


def write_idx(path, array: np.ndarray) -> None:
    """Write uint8 ``array`` as IDX (gzip when the name ends in .gz)."""
    array = np.ascontiguousarray(array, dtype=np.uint8)
    header = struct.pack(">I", 0x0800 | array.ndim) + struct.pack(f">{array.ndim}I", *array.shape)
    data = header + array.tobytes()
    if str(path).endswith(".gz"):
        data = gzip.compress(data, mtime=0)
    Path(path).write_bytes(data)


def write_composite(path, image: np.ndarray) -> None:
    img = np.asarray(image)
    if img.shape != (SIDE, SIDE) or img.dtype != np.uint8:
        raise ImageFormatError(f"composite must be {SIDE} x {SIDE} uint8, got {img.shape} {img.dtype}")
    # no text chunks or timestamps, so equal pixels give equal bytes
    Image.fromarray(img, mode="L").save(path, format="PNG", optimize=False, compress_level=6)


def read_composite(path) -> np.ndarray:
    with Image.open(path) as im:
        if im.format != "PNG":
            raise ImageFormatError(f"{path}: {im.format} is not a lossless PNG")
        if im.mode != "L":
            raise ImageFormatError(f"{path}: mode {im.mode}, need 8-bit grayscale")
        if im.size != (SIDE, SIDE):
            raise ImageFormatError(f"{path}: {im.size[0]} x {im.size[1]}, need {SIDE} x {SIDE}")
        return np.array(im, dtype=np.uint8)
