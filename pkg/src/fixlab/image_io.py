"""Raster file I/O (binary PGM, optional 8-bit grayscale PNG) and sparse-fixation JSON."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .raster import Center, GrayImage, SparseFixation, image_data

try:  # PNG support is a feature toggle: present when Pillow is installed.
    from PIL import Image as _PILImage

    PNG_ENABLED = True
except ImportError:  # pragma: no cover - depends on environment
    _PILImage = None
    PNG_ENABLED = False


def read_pgm(path) -> GrayImage:
    """Read a binary (P5) PGM file with maxval <= 255."""
    raw = Path(path).read_bytes()
    pos = 0

    def next_token() -> bytes:
        nonlocal pos
        while pos < len(raw):
            if raw[pos : pos + 1].isspace():
                pos += 1
            elif raw[pos : pos + 1] == b"#":
                while pos < len(raw) and raw[pos : pos + 1] not in (b"\n", b"\r"):
                    pos += 1
            else:
                break
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError(f"{path}: truncated PGM header")
        return raw[start:pos]

    magic = next_token()
    if magic != b"P5":
        raise ValueError(f"{path}: not a binary PGM (magic {magic!r})")
    width = int(next_token())
    height = int(next_token())
    maxval = int(next_token())
    if width <= 0 or height <= 0:
        raise ValueError(f"{path}: bad dimensions {width}x{height}")
    if not (0 < maxval <= 255):
        raise ValueError(f"{path}: unsupported maxval {maxval} (only 8-bit PGM)")
    pos += 1  # single whitespace byte after maxval
    pixels = np.frombuffer(raw, dtype=np.uint8, count=width * height, offset=pos)
    if pixels.size != width * height:
        raise ValueError(f"{path}: truncated pixel data")
    return GrayImage(pixels.reshape(height, width).astype(np.float64))


def _quantize(img, rescale: bool) -> np.ndarray:
    arr = image_data(img)
    if rescale:
        peak = arr.max()
        arr = arr * (255.0 / peak) if peak > 0 else arr
    return np.clip(np.rint(arr), 0, 255).astype(np.uint8)


def write_pgm(img, path, rescale: bool = False) -> None:
    """Write a binary (P5) PGM, maxval 255.

    With ``rescale`` the raster is scaled so its peak maps to 255 (useful for
    blurred or normalized maps whose values are far below 1 intensity unit);
    otherwise values are rounded and clipped to [0, 255].
    """
    pixels = _quantize(img, rescale)
    header = f"P5\n{pixels.shape[1]} {pixels.shape[0]}\n255\n".encode("ascii")
    Path(path).write_bytes(header + pixels.tobytes())


def read_png(path) -> GrayImage:
    if not PNG_ENABLED:
        raise RuntimeError("PNG support requires Pillow (install the 'png' extra)")
    with _PILImage.open(path) as im:
        gray = im.convert("L")
        return GrayImage(np.asarray(gray, dtype=np.float64))


def write_png(img, path, rescale: bool = False) -> None:
    if not PNG_ENABLED:
        raise RuntimeError("PNG support requires Pillow (install the 'png' extra)")
    _PILImage.fromarray(_quantize(img, rescale), mode="L").save(path)


def read_image(path) -> GrayImage:
    """Dispatch on file suffix: .pgm always, .png when Pillow is available."""
    suffix = Path(path).suffix.lower()
    if suffix == ".pgm":
        return read_pgm(path)
    if suffix == ".png":
        return read_png(path)
    raise ValueError(f"{path}: unsupported raster format {suffix!r}")


def write_image(img, path, rescale: bool = False) -> None:
    suffix = Path(path).suffix.lower()
    if suffix == ".pgm":
        write_pgm(img, path, rescale=rescale)
    elif suffix == ".png":
        write_png(img, path, rescale=rescale)
    else:
        raise ValueError(f"{path}: unsupported raster format {suffix!r}")


def sparse_to_json(sf: SparseFixation) -> str:
    """Serialize with the exact field names width/height/centers/x/y/weight."""
    payload = {
        "width": sf.width,
        "height": sf.height,
        "centers": [{"x": c.x, "y": c.y, "weight": c.weight} for c in sf.centers],
    }
    return json.dumps(payload)


def sparse_from_json(text: str) -> SparseFixation:
    payload = json.loads(text)
    centers = tuple(
        Center(float(c["x"]), float(c["y"]), int(c["weight"])) for c in payload["centers"]
    )
    return SparseFixation(int(payload["width"]), int(payload["height"]), centers)


def save_sparse_json(sf: SparseFixation, path) -> None:
    Path(path).write_text(sparse_to_json(sf) + "\n", encoding="ascii")


def load_sparse_json(path) -> SparseFixation:
    return sparse_from_json(Path(path).read_text(encoding="ascii"))
