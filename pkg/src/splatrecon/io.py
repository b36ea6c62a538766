"""Image and flat-binary I/O shared by the scene, renderer and harness."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_rgb_png(path, rgb: np.ndarray) -> None:
    Image.fromarray(to_uint8(rgb), mode="RGB").save(path)


def save_gray_png(path, gray: np.ndarray) -> None:
    Image.fromarray(to_uint8(gray), mode="L").save(path)


def save_mask_png(path, mask: np.ndarray) -> None:
    # 8-bit 0/255 rather than mode "1": fromarray mis-packs bool arrays into 1-bit images
    Image.fromarray(np.asarray(mask, dtype=bool).astype(np.uint8) * 255, mode="L").save(path)


def load_png(path) -> np.ndarray:
    """Load a PNG as float64 in [0, 1]; RGB images come back ``(H, W, 3)``, others ``(H, W)``."""
    with Image.open(path) as im:
        if im.mode in ("1", "L", "I;16", "I"):
            arr = np.asarray(im.convert("L"), dtype=np.float64) / 255.0
        else:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return arr


def write_flat(path, array: np.ndarray, **header) -> None:
    """Raw little-endian array in ``path`` with a JSON header next to it (``path + '.json'``)."""
    path = Path(path)
    arr = np.ascontiguousarray(array)
    dtype = arr.dtype.newbyteorder("<")
    arr.astype(dtype, copy=False).tofile(path)
    meta = {"shape": list(arr.shape), "dtype": dtype.str, **header}
    path.with_name(path.name + ".json").write_text(json.dumps(meta, indent=2))


def read_flat(path) -> tuple[np.ndarray, dict]:
    path = Path(path)
    meta = json.loads(path.with_name(path.name + ".json").read_text())
    arr = np.fromfile(path, dtype=np.dtype(meta["dtype"]))
    expected = int(np.prod(meta["shape"]))
    if arr.size != expected:
        raise ValueError(f"{path}: expected {expected} values from header, found {arr.size}")
    return arr.reshape(meta["shape"]), meta
