"""Image files and pixel-range conversion.

Binary PPM (P6) and PGM (P5) are decoded and encoded natively and are the
bit-exact reference formats. PNG and JPEG are accepted opportunistically
through Pillow when it happens to be installed; nothing in the package
requires it.
"""

from __future__ import annotations

import numpy as np


class ImageFormatError(ValueError):
    """File is not a readable image in a supported format."""


def _read_pnm_tokens(raw: bytes, count: int, pos: int):
    """Read whitespace-separated ASCII tokens, honouring # comments."""
    tokens = []
    while len(tokens) < count:
        if pos >= len(raw):
            raise ImageFormatError("truncated header")
        ch = raw[pos : pos + 1]
        if ch == b"#":
            while pos < len(raw) and raw[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif ch.isspace():
            pos += 1
        else:
            start = pos
            while pos < len(raw) and not raw[pos : pos + 1].isspace():
                pos += 1
            tokens.append(raw[start:pos])
    return tokens, pos


def _read_pnm(path, magic: bytes, channels: int) -> np.ndarray:
    with open(path, "rb") as f:
        raw = f.read()
    if not raw.startswith(magic):
        raise ImageFormatError(f"{path}: expected {magic.decode()} data")
    try:
        (width_b, height_b, maxval_b), pos = _read_pnm_tokens(raw, 3, len(magic))
        width, height, maxval = int(width_b), int(height_b), int(maxval_b)
    except (ValueError, ImageFormatError) as err:
        raise ImageFormatError(f"{path}: bad header ({err})") from None
    if not (0 < maxval < 256):
        raise ImageFormatError(f"{path}: unsupported max value {maxval}")
    pos += 1  # single whitespace byte after the header
    need = width * height * channels
    data = np.frombuffer(raw, dtype=np.uint8, count=need, offset=pos) if len(raw) - pos >= need else None
    if data is None:
        raise ImageFormatError(f"{path}: pixel data truncated")
    img = data.reshape(height, width, channels) if channels > 1 else data.reshape(height, width)
    if maxval != 255:
        img = (img.astype(np.float64) * (255.0 / maxval)).round().astype(np.uint8)
    return img.copy()


def read_ppm(path) -> np.ndarray:
    """(H, W, 3) uint8 from a binary P6 file."""
    return _read_pnm(path, b"P6", 3)


def read_pgm(path) -> np.ndarray:
    """(H, W) uint8 from a binary P5 file."""
    return _read_pnm(path, b"P5", 1)


def write_ppm(path, img: np.ndarray) -> None:
    img = np.asarray(img, dtype=np.uint8)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ImageFormatError(f"write_ppm: expected (H, W, 3), got {img.shape}")
    with open(path, "wb") as f:
        f.write(f"P6\n{img.shape[1]} {img.shape[0]}\n255\n".encode())
        f.write(img.tobytes())


def write_pgm(path, img: np.ndarray) -> None:
    img = np.asarray(img, dtype=np.uint8)
    if img.ndim != 2:
        raise ImageFormatError(f"write_pgm: expected (H, W), got {img.shape}")
    with open(path, "wb") as f:
        f.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode())
        f.write(img.tobytes())


def read_image(path) -> np.ndarray:
    """(H, W, 3) uint8 from PPM natively, or PNG/JPEG via Pillow if present."""
    name = str(path).lower()
    if name.endswith(".ppm"):
        return read_ppm(path)
    if name.endswith((".png", ".jpg", ".jpeg")):
        try:
            from PIL import Image
        except ImportError:
            raise ImageFormatError(
                f"{path}: reading this format needs Pillow; convert to .ppm instead"
            ) from None
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.uint8)
    raise ImageFormatError(f"{path}: unsupported image extension")


def img_to_float(img: np.ndarray) -> np.ndarray:
    """uint8 [0, 255] -> float64 [-1, 1]."""
    return np.asarray(img, dtype=np.float64) / 127.5 - 1.0


def float_to_img(arr: np.ndarray) -> np.ndarray:
    """float [-1, 1] -> uint8 [0, 255], clipping out-of-range values."""
    scaled = (np.clip(np.asarray(arr, dtype=np.float64), -1.0, 1.0) + 1.0) * 127.5
    return np.rint(scaled).astype(np.uint8)


def resize_nearest(img: np.ndarray, height: int, width: int) -> np.ndarray:
    h, w = img.shape[0], img.shape[1]
    rows = np.minimum((np.arange(height) * h) // height, h - 1)
    cols = np.minimum((np.arange(width) * w) // width, w - 1)
    return img[rows[:, None], cols[None, :]]


def pad_to_multiple(arr: np.ndarray, multiple: int):
    """Edge-replicate on the bottom/right until extents divide; returns the
    padded array and the original extents for cropping back."""
    h, w = arr.shape[0], arr.shape[1]
    pb = (-h) % multiple
    pr = (-w) % multiple
    if pb == 0 and pr == 0:
        return arr, (h, w)
    rows = np.minimum(np.arange(h + pb), h - 1)
    cols = np.minimum(np.arange(w + pr), w - 1)
    return arr[rows[:, None], cols[None, :]], (h, w)
